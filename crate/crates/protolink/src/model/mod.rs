//! The joint classifier: encoder branch over descriptions, domain branch
//! over header fields, fused by `relu(W·T_A + b) + T_CLS` and a softmax head.

pub mod baselines;
pub mod domain;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::Sample;
use crate::encoder::{
    cls_vector, embed, encode, init_encoder_params, EncodedInput, EncoderConfig, Vocab,
};
use crate::numerics::{Graph, NodeId, NumericsError, ParamStore, Scalar};

pub use baselines::{BigruBaseline, BpnnBaseline, CnnBaseline, SvmModel};
pub use domain::{aggregate, domain_forward, init_domain_params, DomainModelKind};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("label {0:?} is not in the active class list")]
    UnknownLabel(String),
    #[error("unknown model kind {0:?}")]
    UnknownKind(String),
}

/// Every trainable classifier in the suite: forward to class probabilities,
/// and backward accumulating gradients into its parameter store.
pub trait Classifier<S: Scalar> {
    fn classes(&self) -> &[String];
    fn params(&self) -> &ParamStore<S>;
    fn params_mut(&mut self) -> &mut ParamStore<S>;
    /// Probabilities over the active classes for one (field, description) pair.
    fn predict_probs(&self, field: &str, description: &str) -> Result<Vec<S>, ModelError>;
    /// Forward + backward on one sample in training mode; gradients
    /// accumulate in the store, the sample loss is returned.
    fn accumulate_grads(&mut self, sample: &Sample) -> Result<S, ModelError>;

    fn num_classes(&self) -> usize {
        self.classes().len()
    }

    fn class_index(&self, label: &str) -> Result<usize, ModelError> {
        self.classes()
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| ModelError::UnknownLabel(label.to_string()))
    }

    fn predict_class(&self, field: &str, description: &str) -> Result<usize, ModelError> {
        let probs = self.predict_probs(field, description)?;
        let mut best = 0;
        for (i, p) in probs.iter().enumerate() {
            if *p > probs[best] {
                best = i;
            }
        }
        Ok(best)
    }
}

/// O_A = relu(T_A · W + b) + T_CLS (row-vector convention).
pub fn fuse<S: Scalar>(
    g: &mut Graph<S>,
    t_a: NodeId,
    t_cls: NodeId,
    w: NodeId,
    b: NodeId,
) -> Result<NodeId, NumericsError> {
    let wt = g.matmul(t_a, w)?;
    let pre = g.add_bias(wt, b)?;
    let act = g.relu(pre);
    g.add(act, t_cls)
}

/// Class logits: z = x · U + c.
pub fn classify_logits<S: Scalar>(
    g: &mut Graph<S>,
    x: NodeId,
    u: NodeId,
    c: NodeId,
) -> Result<NodeId, NumericsError> {
    let z = g.matmul(x, u)?;
    g.add_bias(z, c)
}

/// Softmax cross-entropy for one sample: −z_t + log Σ_j e^{z_j}.
pub fn cross_entropy<S: Scalar>(
    g: &mut Graph<S>,
    logits: NodeId,
    target: usize,
) -> Result<NodeId, NumericsError> {
    let c = g.value(logits).cols;
    if target >= c {
        return Err(NumericsError::ClassOutOfRange { class: target, num_classes: c });
    }
    let zt = g.slice(logits, 0, 1, target, target + 1)?;
    let lse = g.log_sum_exp(logits);
    let neg = g.affine(zt, -S::one(), S::zero());
    g.add(neg, lse)
}

/// Softmax probabilities of a 1×C logits node, extracted as plain values.
pub fn softmax_probs<S: Scalar>(g: &mut Graph<S>, logits: NodeId) -> Vec<S> {
    let sm = g.softmax_row(logits);
    g.value(sm).data.clone()
}

/// Joint model: encoder path always on; the domain branch is present when
/// `kind` is set, otherwise the model is the encoder-only classifier (the
/// sentence-classifier baseline shape).
pub struct JointModel<S: Scalar> {
    pub config: EncoderConfig,
    pub kind: Option<DomainModelKind>,
    pub vocab: Vocab,
    pub classes: Vec<String>,
    pub params: ParamStore<S>,
    dropout_rng: ChaCha8Rng,
}

impl<S: Scalar> JointModel<S> {
    pub fn new(
        config: EncoderConfig,
        kind: Option<DomainModelKind>,
        vocab: Vocab,
        classes: Vec<String>,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let mut params = ParamStore::new(seed);
        let mut rng = params.init_rng();
        let h = config.hidden_size;
        init_encoder_params(&mut params, &config, &mut rng);
        if let Some(kind) = kind {
            init_domain_params(&mut params, kind, h, "domain", &mut rng);
            domain::init_aggregate_params(&mut params, config.max_field_len, h, &mut rng);
            params.insert_weight("fuse.w", h, h, &mut rng);
            params.insert_zeros("fuse.b", 1, h);
        }
        params.insert_weight("clf.w", h, classes.len(), &mut rng);
        params.insert_zeros("clf.b", 1, classes.len());
        Ok(JointModel {
            config,
            kind,
            vocab,
            classes,
            params,
            dropout_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x6472_6f70),
        })
    }

    /// Builds the logits for one input on an explicit parameter store (the
    /// store may be a perturbed copy during gradient checking).
    pub fn build_logits(
        &self,
        g: &mut Graph<S>,
        params: &ParamStore<S>,
        field: &str,
        description: &str,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId, ModelError> {
        let desc = EncodedInput::description(&self.vocab, description, &self.config);
        let e = embed(g, params, &desc)?;
        let hs = encode(g, params, &self.config, e, dropout_rng.as_deref_mut())?;
        let t_cls = cls_vector(g, hs)?;
        let o_a = match self.kind {
            Some(kind) => {
                let f = EncodedInput::field(&self.vocab, field, &self.config);
                let fe = embed(g, params, &f)?;
                let hs_f = domain_forward(g, params, kind, "domain", fe)?;
                let t_a = aggregate(g, params, hs_f)?;
                let w = g.param(params, "fuse.w")?;
                let b = g.param(params, "fuse.b")?;
                fuse(g, t_a, t_cls, w, b)?
            }
            None => t_cls,
        };
        let u = g.param(params, "clf.w")?;
        let c = g.param(params, "clf.b")?;
        Ok(classify_logits(g, o_a, u, c)?)
    }

    pub fn build_loss(
        &self,
        g: &mut Graph<S>,
        params: &ParamStore<S>,
        field: &str,
        description: &str,
        class: usize,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId, ModelError> {
        let logits = self.build_logits(g, params, field, description, dropout_rng)?;
        Ok(cross_entropy(g, logits, class)?)
    }

    /// Evaluation-mode logits (dropout off).
    pub fn logits(&self, field: &str, description: &str) -> Result<Vec<S>, ModelError> {
        let mut g = Graph::new();
        let z = self.build_logits(&mut g, &self.params, field, description, None)?;
        Ok(g.value(z).data.clone())
    }
}

impl<S: Scalar> Classifier<S> for JointModel<S> {
    fn classes(&self) -> &[String] {
        &self.classes
    }

    fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    fn predict_probs(&self, field: &str, description: &str) -> Result<Vec<S>, ModelError> {
        let mut g = Graph::new();
        let z = self.build_logits(&mut g, &self.params, field, description, None)?;
        Ok(softmax_probs(&mut g, z))
    }

    fn accumulate_grads(&mut self, sample: &Sample) -> Result<S, ModelError> {
        let class = self.class_index(&sample.label)?;
        let mut g = Graph::new();
        let mut rng = self.dropout_rng.clone();
        let loss = self.build_loss(
            &mut g,
            &self.params,
            &sample.field,
            &sample.description,
            class,
            Some(&mut rng),
        )?;
        self.dropout_rng = rng;
        g.backward(loss)?;
        g.write_grads(&mut self.params)?;
        Ok(g.scalar(loss))
    }
}

/// Domain-branch-only classifier: the non-linear layer plus linear
/// aggregation applied to description embeddings, then the softmax head.
pub struct DomainOnlyModel<S: Scalar> {
    pub config: EncoderConfig,
    pub kind: DomainModelKind,
    pub vocab: Vocab,
    pub classes: Vec<String>,
    pub params: ParamStore<S>,
}

impl<S: Scalar> DomainOnlyModel<S> {
    pub fn new(
        config: EncoderConfig,
        kind: DomainModelKind,
        vocab: Vocab,
        classes: Vec<String>,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let mut params = ParamStore::new(seed);
        let mut rng = params.init_rng();
        let h = config.hidden_size;
        params.insert_embedding("embed.token", config.vocab_size, h, &mut rng);
        params.insert_embedding("embed.segment", 2, h, &mut rng);
        params.insert_embedding("embed.position", config.max_position(), h, &mut rng);
        init_domain_params(&mut params, kind, h, "domain", &mut rng);
        domain::init_aggregate_params(&mut params, config.max_desc_len, h, &mut rng);
        params.insert_weight("clf.w", h, classes.len(), &mut rng);
        params.insert_zeros("clf.b", 1, classes.len());
        Ok(DomainOnlyModel { config, kind, vocab, classes, params })
    }

    pub fn build_logits(
        &self,
        g: &mut Graph<S>,
        params: &ParamStore<S>,
        description: &str,
    ) -> Result<NodeId, ModelError> {
        let input = EncodedInput::description_padded(&self.vocab, description, &self.config);
        let e = embed(g, params, &input)?;
        let hs = domain_forward(g, params, self.kind, "domain", e)?;
        let t_a = aggregate(g, params, hs)?;
        let u = g.param(params, "clf.w")?;
        let c = g.param(params, "clf.b")?;
        Ok(classify_logits(g, t_a, u, c)?)
    }
}

impl<S: Scalar> Classifier<S> for DomainOnlyModel<S> {
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
        let z = self.build_logits(&mut g, &self.params, description)?;
        Ok(softmax_probs(&mut g, z))
    }

    fn accumulate_grads(&mut self, sample: &Sample) -> Result<S, ModelError> {
        let class = self.class_index(&sample.label)?;
        let mut g = Graph::new();
        let z = self.build_logits(&mut g, &self.params, &sample.description)?;
        let loss = cross_entropy(&mut g, z, class)?;
        g.backward(loss)?;
        g.write_grads(&mut self.params)?;
        Ok(g.scalar(loss))
    }
}

/// Every trainable configuration reachable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    JointA,
    JointB,
    JointC,
    EncoderOnly,
    DomainOnly(DomainModelKind),
    Svm,
    Bpnn,
    Cnn,
    Bigru,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self, ModelError> {
        Ok(match s {
            "joint-a" => ModelKind::JointA,
            "joint-b" => ModelKind::JointB,
            "joint-c" => ModelKind::JointC,
            "encoder-only" => ModelKind::EncoderOnly,
            "domain-only" | "domain-only-bigru" => {
                ModelKind::DomainOnly(DomainModelKind::BidirectionalGated)
            }
            "domain-only-bpnn" => ModelKind::DomainOnly(DomainModelKind::Feedforward),
            "domain-only-cnn" => ModelKind::DomainOnly(DomainModelKind::Convolutional),
            "svm" => ModelKind::Svm,
            "bpnn" => ModelKind::Bpnn,
            "cnn" => ModelKind::Cnn,
            "bigru" => ModelKind::Bigru,
            other => return Err(ModelError::UnknownKind(other.to_string())),
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::JointA => "joint-a",
            ModelKind::JointB => "joint-b",
            ModelKind::JointC => "joint-c",
            ModelKind::EncoderOnly => "encoder-only",
            ModelKind::DomainOnly(DomainModelKind::Feedforward) => "domain-only-bpnn",
            ModelKind::DomainOnly(DomainModelKind::Convolutional) => "domain-only-cnn",
            ModelKind::DomainOnly(DomainModelKind::BidirectionalGated) => "domain-only-bigru",
            ModelKind::Svm => "svm",
            ModelKind::Bpnn => "bpnn",
            ModelKind::Cnn => "cnn",
            ModelKind::Bigru => "bigru",
        }
    }

    /// Uses the fine-tuning learning-rate regime (vs. the classic 2e-2 one).
    pub fn is_encoder_family(&self) -> bool {
        matches!(
            self,
            ModelKind::JointA
                | ModelKind::JointB
                | ModelKind::JointC
                | ModelKind::EncoderOnly
                | ModelKind::DomainOnly(_)
        )
    }
}

/// Instantiates a model for the given kind. `svm_l2` only affects the SVM.
pub fn build_model<S: Scalar>(
    kind: ModelKind,
    config: &EncoderConfig,
    vocab: Vocab,
    classes: Vec<String>,
    seed: u64,
    svm_l2: f64,
) -> Result<Box<dyn Classifier<S>>, ModelError> {
    let cfg = config.clone();
    Ok(match kind {
        ModelKind::JointA => Box::new(JointModel::new(
            cfg,
            Some(DomainModelKind::Feedforward),
            vocab,
            classes,
            seed,
        )?),
        ModelKind::JointB => Box::new(JointModel::new(
            cfg,
            Some(DomainModelKind::Convolutional),
            vocab,
            classes,
            seed,
        )?),
        ModelKind::JointC => Box::new(JointModel::new(
            cfg,
            Some(DomainModelKind::BidirectionalGated),
            vocab,
            classes,
            seed,
        )?),
        ModelKind::EncoderOnly => Box::new(JointModel::new(cfg, None, vocab, classes, seed)?),
        ModelKind::DomainOnly(k) => {
            Box::new(DomainOnlyModel::new(cfg, k, vocab, classes, seed)?)
        }
        ModelKind::Svm => Box::new(SvmModel::new(cfg, vocab, classes, seed, svm_l2)),
        ModelKind::Bpnn => Box::new(BpnnBaseline::new(cfg, vocab, classes, seed)?),
        ModelKind::Cnn => Box::new(CnnBaseline::new(cfg, vocab, classes, seed)?),
        ModelKind::Bigru => Box::new(BigruBaseline::new(cfg, vocab, classes, seed)?),
    })
}
