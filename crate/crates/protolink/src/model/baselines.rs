//! Description-only baselines. None of them see the header field.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Sample;
use crate::encoder::{EncodedInput, EncoderConfig, Vocab};
use crate::model::domain::{self, conv3, gru_direction, CONV_CHANNELS};
use crate::model::{classify_logits, cross_entropy, softmax_probs, Classifier, ModelError};
use crate::numerics::{Graph, NodeId, NumericsError, ParamStore, Scalar, Tensor};

fn init_embedding_tables<S: Scalar>(
    params: &mut ParamStore<S>,
    cfg: &EncoderConfig,
    rng: &mut ChaCha8Rng,
) {
    params.insert_embedding("embed.token", cfg.vocab_size, cfg.hidden_size, rng);
}

/// Mean-pooled token embedding of a description, computed outside any graph.
fn pooled_embedding<S: Scalar>(
    params: &ParamStore<S>,
    vocab: &Vocab,
    cfg: &EncoderConfig,
    text: &str,
) -> Result<Vec<S>, NumericsError> {
    let input = EncodedInput::description(vocab, text, cfg);
    let table = params.get("embed.token")?;
    let h = cfg.hidden_size;
    let mut out = vec![S::zero(); h];
    for &id in &input.token_ids {
        for (o, v) in out.iter_mut().zip(table.row(id)) {
            *o = *o + *v;
        }
    }
    let n = S::from_f64(input.token_ids.len() as f64);
    for o in out.iter_mut() {
        *o = *o / n;
    }
    Ok(out)
}

/// One-vs-rest linear hinge classifier over mean-pooled embeddings, trained
/// by stochastic gradient descent with L2 regularization and margin 1.0.
/// The embedding table is a fixed random featurizer; only `svm.w`/`svm.b`
/// receive gradients.
pub struct SvmModel<S: Scalar> {
    pub config: EncoderConfig,
    pub vocab: Vocab,
    pub classes: Vec<String>,
    pub params: ParamStore<S>,
    pub l2: f64,
}

pub const SVM_MARGIN: f64 = 1.0;

impl<S: Scalar> SvmModel<S> {
    pub fn new(
        config: EncoderConfig,
        vocab: Vocab,
        classes: Vec<String>,
        seed: u64,
        l2: f64,
    ) -> Self {
        let mut params = ParamStore::new(seed);
        let mut rng = params.init_rng();
        init_embedding_tables(&mut params, &config, &mut rng);
        params.insert_weight("svm.w", config.hidden_size, classes.len(), &mut rng);
        params.insert_zeros("svm.b", 1, classes.len());
        SvmModel { config, vocab, classes, params, l2 }
    }

    fn scores_of(&self, x: &[S]) -> Result<Vec<S>, NumericsError> {
        let w = self.params.get("svm.w")?;
        let b = self.params.get("svm.b")?;
        let c = self.classes.len();
        let mut scores = vec![S::zero(); c];
        for (j, s) in scores.iter_mut().enumerate() {
            let mut acc = b.data[j];
            for (k, xv) in x.iter().enumerate() {
                acc = acc + *xv * w.at(k, j);
            }
            *s = acc;
        }
        Ok(scores)
    }

    pub fn scores(&self, description: &str) -> Result<Vec<S>, ModelError> {
        let x = pooled_embedding(&self.params, &self.vocab, &self.config, description)?;
        Ok(self.scores_of(&x)?)
    }

    /// Hinge subgradient step material for one sample. Returns the
    /// regularized hinge loss summed over classes.
    fn hinge_grads(&mut self, x: &[S], class: usize) -> Result<S, NumericsError> {
        let scores = self.scores_of(x)?;
        let c = self.classes.len();
        let h = self.config.hidden_size;
        let margin = S::from_f64(SVM_MARGIN);
        let l2 = S::from_f64(self.l2);
        let mut gw = vec![S::zero(); h * c];
        let mut gb = vec![S::zero(); c];
        let mut loss = S::zero();
        {
            let w = self.params.get("svm.w")?;
            for j in 0..c {
                let y = if j == class { S::one() } else { -S::one() };
                let m = margin - y * scores[j];
                if m > S::zero() {
                    loss = loss + m;
                    for k in 0..h {
                        gw[k * c + j] = gw[k * c + j] - y * x[k];
                    }
                    gb[j] = gb[j] - y;
                }
                for k in 0..h {
                    let wv = w.at(k, j);
                    gw[k * c + j] = gw[k * c + j] + l2 * wv;
                    loss = loss + S::from_f64(0.5) * l2 * wv * wv;
                }
            }
        }
        let wt = self.params.get_mut("svm.w")?;
        match &mut wt.grad {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(&gw) {
                    *a = *a + *b;
                }
            }
            None => wt.grad = Some(gw),
        }
        let bt = self.params.get_mut("svm.b")?;
        match &mut bt.grad {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(&gb) {
                    *a = *a + *b;
                }
            }
            None => bt.grad = Some(gb),
        }
        Ok(loss)
    }
}

impl<S: Scalar> Classifier<S> for SvmModel<S> {
    fn classes(&self) -> &[String] {
        &self.classes
    }

    fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    fn predict_probs(&self, _field: &str, description: &str) -> Result<Vec<S>, ModelError> {
        // margin scores squashed through softmax for a uniform interface
        let scores = self.scores(description)?;
        let mut g = Graph::new();
        let z = g.input(Tensor::from_vec(1, scores.len(), scores));
        Ok(softmax_probs(&mut g, z))
    }

    fn accumulate_grads(&mut self, sample: &Sample) -> Result<S, ModelError> {
        let class = self.class_index(&sample.label)?;
        let x = pooled_embedding(&self.params, &self.vocab, &self.config, &sample.description)?;
        Ok(self.hinge_grads(&x, class)?)
    }
}

fn dropout_node<S: Scalar>(
    g: &mut Graph<S>,
    x: NodeId,
    p: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<NodeId, NumericsError> {
    let rng = match rng {
        Some(r) if p > 0.0 => r,
        _ => return Ok(x),
    };
    let (rows, cols) = g.value(x).shape();
    let keep = 1.0 / (1.0 - p);
    let data: Vec<S> = (0..rows * cols)
        .map(|_| {
            if rand::Rng::gen_range(&mut *rng, 0.0..1.0) < p {
                S::zero()
            } else {
                S::from_f64(keep)
            }
        })
        .collect();
    g.dropout_mask(x, Tensor::from_vec(rows, cols, data))
}

macro_rules! impl_graph_baseline_classifier {
    ($ty:ident) => {
        impl<S: Scalar> Classifier<S> for $ty<S> {
            fn classes(&self) -> &[String] {
                &self.classes
            }

            fn params(&self) -> &ParamStore<S> {
                &self.params
            }

            fn params_mut(&mut self) -> &mut ParamStore<S> {
                &mut self.params
            }

            fn predict_probs(&self, _field: &str, description: &str) -> Result<Vec<S>, ModelError> {
                let mut g = Graph::new();
                let z = self.build_logits(&mut g, &self.params, description, None)?;
                Ok(softmax_probs(&mut g, z))
            }

            fn accumulate_grads(&mut self, sample: &Sample) -> Result<S, ModelError> {
                let class = self.class_index(&sample.label)?;
                let mut g = Graph::new();
                let mut rng = self.dropout_rng.clone();
                let z = self.build_logits(&mut g, &self.params, &sample.description, Some(&mut rng))?;
                self.dropout_rng = rng;
                let loss = cross_entropy(&mut g, z, class)?;
                g.backward(loss)?;
                g.write_grads(&mut self.params)?;
                Ok(g.scalar(loss))
            }
        }
    };
}

pub const BASELINE_DROPOUT: f64 = 0.1;

/// Mean-pooled embeddings through a hidden ReLU layer and the softmax head.
pub struct BpnnBaseline<S: Scalar> {
    pub config: EncoderConfig,
    pub vocab: Vocab,
    pub classes: Vec<String>,
    pub params: ParamStore<S>,
    dropout_rng: ChaCha8Rng,
}

impl<S: Scalar> BpnnBaseline<S> {
    pub fn new(
        config: EncoderConfig,
        vocab: Vocab,
        classes: Vec<String>,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let mut params = ParamStore::new(seed);
        let mut rng = params.init_rng();
        let h = config.hidden_size;
        init_embedding_tables(&mut params, &config, &mut rng);
        params.insert_weight("bpnn.w1", h, h, &mut rng);
        params.insert_zeros("bpnn.b1", 1, h);
        params.insert_weight("clf.w", h, classes.len(), &mut rng);
        params.insert_zeros("clf.b", 1, classes.len());
        Ok(BpnnBaseline {
            config,
            vocab,
            classes,
            params,
            dropout_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x6472_6f70),
        })
    }

    fn build_logits(
        &self,
        g: &mut Graph<S>,
        params: &ParamStore<S>,
        description: &str,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId, ModelError> {
        let input = EncodedInput::description(&self.vocab, description, &self.config);
        let table = g.param(params, "embed.token")?;
        let e = g.gather_rows(table, &input.token_ids)?;
        let pooled = g.mean_rows(e)?;
        let w1 = g.param(params, "bpnn.w1")?;
        let b1 = g.param(params, "bpnn.b1")?;
        let h1 = g.matmul(pooled, w1)?;
        let h1 = g.add_bias(h1, b1)?;
        let h1 = g.relu(h1);
        let h1 = dropout_node(g, h1, BASELINE_DROPOUT, dropout_rng)?;
        let u = g.param(params, "clf.w")?;
        let c = g.param(params, "clf.b")?;
        Ok(classify_logits(g, h1, u, c)?)
    }
}

impl_graph_baseline_classifier!(BpnnBaseline);

/// Width-3 convolution with three kernels over the padded description,
/// 2×2 max pooling, then a linear layer and softmax.
pub struct CnnBaseline<S: Scalar> {
    pub config: EncoderConfig,
    pub vocab: Vocab,
    pub classes: Vec<String>,
    pub params: ParamStore<S>,
    dropout_rng: ChaCha8Rng,
}

impl<S: Scalar> CnnBaseline<S> {
    pub fn new(
        config: EncoderConfig,
        vocab: Vocab,
        classes: Vec<String>,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let mut params = ParamStore::new(seed);
        let mut rng = params.init_rng();
        init_embedding_tables(&mut params, &config, &mut rng);
        domain::init_conv_params(&mut params, config.hidden_size, "cnnb", &mut rng);
        let flat = config.max_desc_len.div_ceil(2) * CONV_CHANNELS.div_ceil(2);
        params.insert_weight("clf.w", flat, classes.len(), &mut rng);
        params.insert_zeros("clf.b", 1, classes.len());
        Ok(CnnBaseline {
            config,
            vocab,
            classes,
            params,
            dropout_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x6472_6f70),
        })
    }

    fn build_logits(
        &self,
        g: &mut Graph<S>,
        params: &ParamStore<S>,
        description: &str,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId, ModelError> {
        let input = EncodedInput::description_padded(&self.vocab, description, &self.config);
        let table = g.param(params, "embed.token")?;
        let e = g.gather_rows(table, &input.token_ids)?;
        let c = conv3(g, params, "cnnb", e)?;
        let c = g.relu(c);
        let p = g.max_pool_2x2(c)?;
        let (pr, pc) = g.value(p).shape();
        let flat = g.reshape(p, 1, pr * pc)?;
        let flat = dropout_node(g, flat, BASELINE_DROPOUT, dropout_rng)?;
        let u = g.param(params, "clf.w")?;
        let cb = g.param(params, "clf.b")?;
        Ok(classify_logits(g, flat, u, cb)?)
    }
}

impl_graph_baseline_classifier!(CnnBaseline);

/// Bidirectional gated recurrence over the padded description; the two final
/// states are concatenated into the linear + softmax head.
pub struct BigruBaseline<S: Scalar> {
    pub config: EncoderConfig,
    pub vocab: Vocab,
    pub classes: Vec<String>,
    pub params: ParamStore<S>,
    dropout_rng: ChaCha8Rng,
}

impl<S: Scalar> BigruBaseline<S> {
    pub fn new(
        config: EncoderConfig,
        vocab: Vocab,
        classes: Vec<String>,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let mut params = ParamStore::new(seed);
        let mut rng = params.init_rng();
        let h = config.hidden_size;
        init_embedding_tables(&mut params, &config, &mut rng);
        domain::init_gru_direction_params(&mut params, h, "grub.fw", &mut rng);
        domain::init_gru_direction_params(&mut params, h, "grub.bw", &mut rng);
        params.insert_weight("clf.w", 2 * h, classes.len(), &mut rng);
        params.insert_zeros("clf.b", 1, classes.len());
        Ok(BigruBaseline {
            config,
            vocab,
            classes,
            params,
            dropout_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x6472_6f70),
        })
    }

    fn build_logits(
        &self,
        g: &mut Graph<S>,
        params: &ParamStore<S>,
        description: &str,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId, ModelError> {
        let input = EncodedInput::description_padded(&self.vocab, description, &self.config);
        let table = g.param(params, "embed.token")?;
        let e = g.gather_rows(table, &input.token_ids)?;
        let m = input.len();
        let fw = gru_direction(g, params, "grub.fw", e, false)?;
        let bw = gru_direction(g, params, "grub.bw", e, true)?;
        let cat = g.concat_cols(fw[m - 1], bw[0])?;
        let cat = dropout_node(g, cat, BASELINE_DROPOUT, dropout_rng)?;
        let u = g.param(params, "clf.w")?;
        let c = g.param(params, "clf.b")?;
        Ok(classify_logits(g, cat, u, c)?)
    }
}

impl_graph_baseline_classifier!(BigruBaseline);

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig {
            num_blocks: 1,
            hidden_size: 8,
            num_heads: 2,
            max_desc_len: 6,
            max_field_len: 4,
            vocab_size: 32,
            dropout: 0.0,
            ff_activation: crate::encoder::FfActivation::Gelu,
        }
    }

    fn classes2() -> Vec<String> {
        vec!["a".into(), "b".into()]
    }

    fn sample(desc: &str, label: &str) -> Sample {
        Sample {
            rfc: 1,
            diagram: 0,
            offset: 0,
            field: "x".into(),
            description: desc.into(),
            label: label.into(),
        }
    }

    #[test]
    fn baselines_produce_probability_vectors() {
        let cfg = tiny_cfg();
        let vocab = Vocab::build(["length of the header in words"].iter().copied(), 32);
        let models: Vec<Box<dyn Classifier<f64>>> = vec![
            Box::new(SvmModel::new(cfg.clone(), vocab.clone(), classes2(), 1, 1e-4)),
            Box::new(BpnnBaseline::new(cfg.clone(), vocab.clone(), classes2(), 1).unwrap()),
            Box::new(CnnBaseline::new(cfg.clone(), vocab.clone(), classes2(), 1).unwrap()),
            Box::new(BigruBaseline::new(cfg.clone(), vocab.clone(), classes2(), 1).unwrap()),
        ];
        for m in &models {
            let probs = m.predict_probs("ignored", "length of the header").unwrap();
            assert_eq!(probs.len(), 2);
            let sum: f64 = probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn baseline_grads_flow_into_params() {
        let cfg = tiny_cfg();
        let vocab = Vocab::build(["some words here"].iter().copied(), 32);
        let mut m = BpnnBaseline::<f64>::new(cfg, vocab, classes2(), 2).unwrap();
        let loss = m.accumulate_grads(&sample("some words", "a")).unwrap();
        assert!(loss > 0.0);
        assert!(m.params.get("bpnn.w1").unwrap().grad.is_some());
        assert!(m.params.get("embed.token").unwrap().grad.is_some());
    }
}
