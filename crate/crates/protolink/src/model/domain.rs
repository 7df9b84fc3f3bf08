//! The domain branch: a non-linear layer over token embeddings followed by
//! linear aggregation into a single hidden vector.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{Graph, NodeId, NumericsError, ParamStore, Scalar, Tensor};

/// Non-linear layer choices for the domain branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainModelKind {
    Feedforward,
    Convolutional,
    BidirectionalGated,
}

impl DomainModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DomainModelKind::Feedforward => "bpnn",
            DomainModelKind::Convolutional => "cnn",
            DomainModelKind::BidirectionalGated => "bigru",
        }
    }
}

/// Number of convolution kernels in the convolutional branch.
pub const CONV_CHANNELS: usize = 3;

pub fn init_domain_params<S: Scalar>(
    store: &mut ParamStore<S>,
    kind: DomainModelKind,
    hidden: usize,
    prefix: &str,
    rng: &mut ChaCha8Rng,
) {
    match kind {
        DomainModelKind::Feedforward => {
            store.insert_weight(&format!("{prefix}.ff.w1"), hidden, hidden, rng);
            store.insert_zeros(&format!("{prefix}.ff.b1"), 1, hidden);
            store.insert_weight(&format!("{prefix}.ff.w2"), hidden, hidden, rng);
            store.insert_zeros(&format!("{prefix}.ff.b2"), 1, hidden);
        }
        DomainModelKind::Convolutional => {
            init_conv_params(store, hidden, prefix, rng);
            store.insert_weight(&format!("{prefix}.conv.proj"), CONV_CHANNELS, hidden, rng);
            store.insert_zeros(&format!("{prefix}.conv.proj_b"), 1, hidden);
        }
        DomainModelKind::BidirectionalGated => {
            for dir in ["fw", "bw"] {
                init_gru_direction_params(store, hidden, &format!("{prefix}.gru.{dir}"), rng);
            }
            store.insert_weight(&format!("{prefix}.gru.proj"), 2 * hidden, hidden, rng);
        }
    }
}

/// Three kernels of height 3 spanning the full hidden width, stored as the
/// per-tap weight matrices of a same-padded 1-D convolution.
pub fn init_conv_params<S: Scalar>(
    store: &mut ParamStore<S>,
    hidden: usize,
    prefix: &str,
    rng: &mut ChaCha8Rng,
) {
    for tap in ["prev", "mid", "next"] {
        store.insert_weight(&format!("{prefix}.conv.k_{tap}"), hidden, CONV_CHANNELS, rng);
    }
    store.insert_zeros(&format!("{prefix}.conv.b"), 1, CONV_CHANNELS);
}

pub fn init_gru_direction_params<S: Scalar>(
    store: &mut ParamStore<S>,
    hidden: usize,
    prefix: &str,
    rng: &mut ChaCha8Rng,
) {
    for gate in ["z", "r", "n"] {
        store.insert_weight(&format!("{prefix}.w{gate}"), hidden, hidden, rng);
        store.insert_weight(&format!("{prefix}.u{gate}"), hidden, hidden, rng);
        store.insert_zeros(&format!("{prefix}.b{gate}"), 1, hidden);
    }
}

/// Shifts the rows of an m×h node by one position, zero-padding the edge.
fn shift_rows<S: Scalar>(
    g: &mut Graph<S>,
    x: NodeId,
    up: bool,
) -> Result<NodeId, NumericsError> {
    let (m, h) = g.value(x).shape();
    let zero = g.input(Tensor::zeros(1, h));
    if m == 1 {
        return Ok(zero);
    }
    if up {
        // row i takes old row i+1
        let body = g.slice(x, 1, m, 0, h)?;
        g.concat_rows(body, zero)
    } else {
        // row i takes old row i-1
        let body = g.slice(x, 0, m - 1, 0, h)?;
        g.concat_rows(zero, body)
    }
}

/// Same-padded width-3 convolution over positions: m×h -> m×CONV_CHANNELS,
/// pre-activation (bias included).
pub fn conv3<S: Scalar>(
    g: &mut Graph<S>,
    params: &ParamStore<S>,
    prefix: &str,
    x: NodeId,
) -> Result<NodeId, NumericsError> {
    let prev = shift_rows(g, x, false)?;
    let next = shift_rows(g, x, true)?;
    let kp = g.param(params, &format!("{prefix}.conv.k_prev"))?;
    let km = g.param(params, &format!("{prefix}.conv.k_mid"))?;
    let kn = g.param(params, &format!("{prefix}.conv.k_next"))?;
    let b = g.param(params, &format!("{prefix}.conv.b"))?;
    let cp = g.matmul(prev, kp)?;
    let cm = g.matmul(x, km)?;
    let cn = g.matmul(next, kn)?;
    let s1 = g.add(cp, cm)?;
    let s2 = g.add(s1, cn)?;
    g.add_bias(s2, b)
}

/// One GRU direction; returns the hidden state after each step in input
/// order (the reverse direction is given the rows back-to-front and its
/// outputs are re-reversed).
pub fn gru_direction<S: Scalar>(
    g: &mut Graph<S>,
    params: &ParamStore<S>,
    prefix: &str,
    x: NodeId,
    reverse: bool,
) -> Result<Vec<NodeId>, NumericsError> {
    let (m, h) = g.value(x).shape();
    let wz = g.param(params, &format!("{prefix}.wz"))?;
    let uz = g.param(params, &format!("{prefix}.uz"))?;
    let bz = g.param(params, &format!("{prefix}.bz"))?;
    let wr = g.param(params, &format!("{prefix}.wr"))?;
    let ur = g.param(params, &format!("{prefix}.ur"))?;
    let br = g.param(params, &format!("{prefix}.br"))?;
    let wn = g.param(params, &format!("{prefix}.wn"))?;
    let un = g.param(params, &format!("{prefix}.un"))?;
    let bn = g.param(params, &format!("{prefix}.bn"))?;

    let mut h_prev = g.input(Tensor::zeros(1, h));
    let mut states = vec![h_prev; m];
    let order: Vec<usize> = if reverse { (0..m).rev().collect() } else { (0..m).collect() };
    for t in order {
        let xt = g.slice(x, t, t + 1, 0, h)?;
        // update gate
        let z1 = g.matmul(xt, wz)?;
        let z2 = g.matmul(h_prev, uz)?;
        let z3 = g.add(z1, z2)?;
        let z4 = g.add_bias(z3, bz)?;
        let z = g.sigmoid(z4);
        // reset gate
        let r1 = g.matmul(xt, wr)?;
        let r2 = g.matmul(h_prev, ur)?;
        let r3 = g.add(r1, r2)?;
        let r4 = g.add_bias(r3, br)?;
        let r = g.sigmoid(r4);
        // candidate
        let rh = g.mul(r, h_prev)?;
        let n1 = g.matmul(xt, wn)?;
        let n2 = g.matmul(rh, un)?;
        let n3 = g.add(n1, n2)?;
        let n4 = g.add_bias(n3, bn)?;
        let n = g.tanh(n4);
        // h = (1 - z) ⊙ n + z ⊙ h_prev
        let one_minus_z = g.affine(z, -S::one(), S::one());
        let a = g.mul(one_minus_z, n)?;
        let b = g.mul(z, h_prev)?;
        let ht = g.add(a, b)?;
        states[t] = ht;
        h_prev = ht;
    }
    Ok(states)
}

fn stack_rows<S: Scalar>(g: &mut Graph<S>, rows: &[NodeId]) -> Result<NodeId, NumericsError> {
    let mut out = rows[0];
    for r in &rows[1..] {
        out = g.concat_rows(out, *r)?;
    }
    Ok(out)
}

/// Non-linear layer over token embeddings, m×h -> m×h.
pub fn domain_forward<S: Scalar>(
    g: &mut Graph<S>,
    params: &ParamStore<S>,
    kind: DomainModelKind,
    prefix: &str,
    x: NodeId,
) -> Result<NodeId, NumericsError> {
    match kind {
        DomainModelKind::Feedforward => {
            let w1 = g.param(params, &format!("{prefix}.ff.w1"))?;
            let b1 = g.param(params, &format!("{prefix}.ff.b1"))?;
            let w2 = g.param(params, &format!("{prefix}.ff.w2"))?;
            let b2 = g.param(params, &format!("{prefix}.ff.b2"))?;
            let h1 = g.matmul(x, w1)?;
            let h1 = g.add_bias(h1, b1)?;
            let h1 = g.relu(h1);
            let h2 = g.matmul(h1, w2)?;
            g.add_bias(h2, b2)
        }
        DomainModelKind::Convolutional => {
            let c = conv3(g, params, prefix, x)?;
            let c = g.relu(c);
            let proj = g.param(params, &format!("{prefix}.conv.proj"))?;
            let pb = g.param(params, &format!("{prefix}.conv.proj_b"))?;
            let p = g.matmul(c, proj)?;
            g.add_bias(p, pb)
        }
        DomainModelKind::BidirectionalGated => {
            let fw = gru_direction(g, params, &format!("{prefix}.gru.fw"), x, false)?;
            let bw = gru_direction(g, params, &format!("{prefix}.gru.bw"), x, true)?;
            let per_step: Vec<NodeId> = fw
                .iter()
                .zip(&bw)
                .map(|(f, b)| g.concat_cols(*f, *b))
                .collect::<Result<_, _>>()?;
            let cat = stack_rows(g, &per_step)?; // m × 2h
            let proj = g.param(params, &format!("{prefix}.gru.proj"))?;
            g.matmul(cat, proj)
        }
    }
}

/// Learned linear aggregation: concatenates the m hidden states and maps
/// m·h -> h. Padding positions contribute through the learned weights.
pub fn init_aggregate_params<S: Scalar>(
    store: &mut ParamStore<S>,
    m: usize,
    hidden: usize,
    rng: &mut ChaCha8Rng,
) {
    store.insert_weight("agg.w", m * hidden, hidden, rng);
}

pub fn aggregate<S: Scalar>(
    g: &mut Graph<S>,
    params: &ParamStore<S>,
    hs: NodeId,
) -> Result<NodeId, NumericsError> {
    let (m, h) = g.value(hs).shape();
    let flat = g.reshape(hs, 1, m * h)?;
    let w = g.param(params, "agg.w")?;
    g.matmul(flat, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    fn store_for(kind: DomainModelKind, hidden: usize, seed: u64) -> ParamStore<f64> {
        let mut store = ParamStore::new(seed);
        let mut rng = store.init_rng();
        init_domain_params(&mut store, kind, hidden, "domain", &mut rng);
        store
    }

    fn random_input(m: usize, h: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..m * h).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
        Tensor::from_vec(m, h, data)
    }

    #[test]
    fn output_shape_is_m_by_hidden_for_every_kind() {
        for kind in [
            DomainModelKind::Feedforward,
            DomainModelKind::Convolutional,
            DomainModelKind::BidirectionalGated,
        ] {
            let store = store_for(kind, 6, 5);
            let mut g = Graph::new();
            let x = g.input(random_input(4, 6, 1));
            let hs = domain_forward(&mut g, &store, kind, "domain", x).unwrap();
            assert_eq!(g.value(hs).shape(), (4, 6), "{kind:?}");
        }
    }

    #[test]
    fn feedforward_with_zero_params_is_zero() {
        let mut store: ParamStore<f64> = ParamStore::new(0);
        store.insert_zeros("domain.ff.w1", 6, 6);
        store.insert_zeros("domain.ff.b1", 1, 6);
        store.insert_zeros("domain.ff.w2", 6, 6);
        store.insert_zeros("domain.ff.b2", 1, 6);
        let mut g = Graph::new();
        let x = g.input(random_input(3, 6, 2));
        let hs =
            domain_forward(&mut g, &store, DomainModelKind::Feedforward, "domain", x).unwrap();
        assert!(g.value(hs).data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn bigru_mirrored_params_reverse_the_output() {
        // Swapping the two direction parameter sets and the two halves of the
        // projection, then feeding the input reversed, reverses the output.
        let h = 5;
        let m = 3;
        let store = store_for(DomainModelKind::BidirectionalGated, h, 12);
        let mut mirrored = store.clone();
        for gate in ["z", "r", "n"] {
            for kind in ["w", "u", "b"] {
                let fw = store.get(&format!("domain.gru.fw.{kind}{gate}")).unwrap().clone();
                let bw = store.get(&format!("domain.gru.bw.{kind}{gate}")).unwrap().clone();
                *mirrored.get_mut(&format!("domain.gru.fw.{kind}{gate}")).unwrap() = bw;
                *mirrored.get_mut(&format!("domain.gru.bw.{kind}{gate}")).unwrap() = fw;
            }
        }
        let proj = store.get("domain.gru.proj").unwrap().clone();
        let mut swapped = Tensor::zeros(2 * h, h);
        for r in 0..h {
            for c in 0..h {
                swapped.set(r, c, proj.at(r + h, c));
                swapped.set(r + h, c, proj.at(r, c));
            }
        }
        *mirrored.get_mut("domain.gru.proj").unwrap() = swapped;

        let x = random_input(m, h, 3);
        let mut xrev = Tensor::zeros(m, h);
        for r in 0..m {
            for c in 0..h {
                xrev.set(r, c, x.at(m - 1 - r, c));
            }
        }

        let run = |params: &ParamStore<f64>, input: Tensor<f64>| {
            let mut g = Graph::new();
            let xx = g.input(input);
            let hs = domain_forward(&mut g, params, DomainModelKind::BidirectionalGated, "domain", xx)
                .unwrap();
            g.value(hs).clone()
        };
        let normal = run(&store, x);
        let reversed = run(&mirrored, xrev);
        for r in 0..m {
            for c in 0..h {
                assert!(
                    (normal.at(r, c) - reversed.at(m - 1 - r, c)).abs() < 1e-9,
                    "row {r} col {c}"
                );
            }
        }
    }

    #[test]
    fn aggregate_with_one_position_is_a_plain_linear_map() {
        let h = 4;
        let mut store: ParamStore<f64> = ParamStore::new(8);
        let mut rng = store.init_rng();
        init_aggregate_params(&mut store, 1, h, &mut rng);
        let x = random_input(1, h, 9);
        let mut g = Graph::new();
        let xx = g.input(x.clone());
        let t_a = aggregate(&mut g, &store, xx).unwrap();
        let w = store.get("agg.w").unwrap();
        for c in 0..h {
            let mut expect = 0.0;
            for k in 0..h {
                expect += x.at(0, k) * w.at(k, c);
            }
            assert!((g.value(t_a).at(0, c) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_with_zero_weights_is_zero() {
        let h = 4;
        let mut store: ParamStore<f64> = ParamStore::new(0);
        store.insert_zeros("agg.w", 2 * h, h);
        let mut g = Graph::new();
        let x = g.input(random_input(2, h, 1));
        let t_a = aggregate(&mut g, &store, x).unwrap();
        assert!(g.value(t_a).data.iter().all(|v| *v == 0.0));
    }
}
