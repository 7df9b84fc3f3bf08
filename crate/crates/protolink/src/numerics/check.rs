//! Central-difference gradient checking.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId};
use super::tensor::{ParamStore, Scalar};
use super::NumericsError;

/// A deterministic scalar-valued computation over a parameter store.
pub type BuildFn<'a, S> =
    dyn Fn(&mut Graph<S>, &ParamStore<S>) -> Result<NodeId, NumericsError> + 'a;

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn failures(&self) -> Vec<&GradCheckEntry> {
        self.entries.iter().filter(|e| e.rel_err > self.tol).collect()
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

/// rel = |a−b| / max(1e-12, |a|+|b|)
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1e-12, a.abs() + b.abs())
}

fn eval<S: Scalar>(build: &BuildFn<S>, params: &ParamStore<S>) -> Result<f64, NumericsError> {
    let mut g = Graph::new();
    let loss = build(&mut g, params)?;
    Ok(g.scalar(loss).to_f64())
}

/// Runs backward once and returns all parameter gradients as f64.
/// Parameters the computation never touches get no entry.
pub fn collect_grads<S: Scalar>(
    build: &BuildFn<S>,
    params: &ParamStore<S>,
) -> Result<BTreeMap<String, Vec<f64>>, NumericsError> {
    let mut store = params.clone();
    store.clear_grads();
    let mut g = Graph::new();
    let loss = build(&mut g, &store)?;
    g.backward(loss)?;
    g.write_grads(&mut store)?;
    let mut out = BTreeMap::new();
    for (name, t) in store.iter() {
        if let Some(grad) = &t.grad {
            out.insert(name.to_string(), grad.iter().map(|v| v.to_f64()).collect());
        }
    }
    Ok(out)
}

/// Compares precomputed analytic gradients against central differences of
/// `build` evaluated on `params`. At most `max_entries` entries are probed:
/// one per parameter first, the rest sampled uniformly with a seeded PRNG.
pub fn compare_gradients<S: Scalar>(
    analytic: &BTreeMap<String, Vec<f64>>,
    build: &BuildFn<S>,
    params: &ParamStore<S>,
    step: f64,
    tol: f64,
    max_entries: usize,
    seed: u64,
) -> Result<GradCheckReport, NumericsError> {
    let mut all: Vec<(String, usize)> = Vec::new();
    let mut per_param: Vec<(String, usize)> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, t) in params.iter() {
        let len = t.len();
        if len == 0 {
            continue;
        }
        per_param.push((name.to_string(), rand::Rng::gen_range(&mut rng, 0..len)));
        for i in 0..len {
            all.push((name.to_string(), i));
        }
    }
    let mut picked: Vec<(String, usize)> = Vec::new();
    if all.len() <= max_entries {
        picked = all;
    } else {
        picked.extend(per_param.iter().cloned());
        let extra = max_entries.saturating_sub(picked.len());
        if extra > 0 {
            for idx in sample(&mut rng, all.len(), extra.min(all.len())) {
                picked.push(all[idx].clone());
            }
        }
    }
    picked.sort();
    picked.dedup();

    let mut entries = Vec::with_capacity(picked.len());
    let mut max_rel = 0.0f64;
    let mut work = params.clone();
    for (name, idx) in picked {
        let orig = work.get(&name)?.data[idx];
        work.get_mut(&name)?.data[idx] = S::from_f64(orig.to_f64() + step);
        let fp = eval(build, &work)?;
        work.get_mut(&name)?.data[idx] = S::from_f64(orig.to_f64() - step);
        let fm = eval(build, &work)?;
        work.get_mut(&name)?.data[idx] = orig;
        let numeric = (fp - fm) / (2.0 * step);
        let a = analytic.get(&name).map(|g| g[idx]).unwrap_or(0.0);
        let e = rel_err(a, numeric);
        max_rel = max_rel.max(e);
        entries.push(GradCheckEntry { param: name, index: idx, analytic: a, numeric, rel_err: e });
    }
    Ok(GradCheckReport { entries, max_rel_err: max_rel, tol })
}

/// Checks the backward pass of `build` against central differences in the
/// same precision. Intended for 64-bit stores.
pub fn grad_check<S: Scalar>(
    build: &BuildFn<S>,
    params: &ParamStore<S>,
    step: f64,
    tol: f64,
    max_entries: usize,
    seed: u64,
) -> Result<GradCheckReport, NumericsError> {
    let analytic = collect_grads(build, params)?;
    compare_gradients(&analytic, build, params, step, tol, max_entries, seed)
}

/// Checks a 32-bit backward pass against 64-bit central differences. The two
/// stores must hold the same values (build both from one seed); the reference
/// differences are then free of `f32` cancellation error.
pub fn grad_check_mixed(
    build32: &BuildFn<f32>,
    params32: &ParamStore<f32>,
    build64: &BuildFn<f64>,
    params64: &ParamStore<f64>,
    step: f64,
    tol: f64,
    max_entries: usize,
    seed: u64,
) -> Result<GradCheckReport, NumericsError> {
    let analytic = collect_grads(build32, params32)?;
    compare_gradients(&analytic, build64, params64, step, tol, max_entries, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Tensor;

    /// linear layer + softmax cross-entropy on a fixed input, true class 1
    fn build_linear_ce(g: &mut Graph<f64>, p: &ParamStore<f64>) -> Result<NodeId, NumericsError> {
        let x = g.input(Tensor::from_vec(1, 3, vec![0.3, -1.1, 0.7]));
        let w = g.param(p, "w")?;
        let b = g.param(p, "b")?;
        let z0 = g.matmul(x, w)?;
        let z = g.add_bias(z0, b)?;
        let zt = g.slice(z, 0, 1, 1, 2)?;
        let lse = g.log_sum_exp(z);
        let neg = g.affine(zt, -1.0, 0.0);
        g.add(neg, lse)
    }

    fn linear_params(seed: u64) -> ParamStore<f64> {
        let mut p = ParamStore::new(seed);
        let mut rng = p.init_rng();
        p.insert_weight("w", 3, 4, &mut rng);
        p.insert_weight("b", 1, 4, &mut rng);
        p
    }

    #[test]
    fn linear_softmax_ce_gradients_match_central_differences() {
        let p = linear_params(11);
        let report = grad_check(&build_linear_ce, &p, 1e-5, 1e-6, 100, 0).unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
        assert!(report.entries.len() >= 16);
    }

    #[test]
    fn constant_function_has_zero_gradients_and_differences() {
        let p = linear_params(3);
        let build = |g: &mut Graph<f64>, _p: &ParamStore<f64>| {
            Ok(g.input(Tensor::from_vec(1, 1, vec![4.25])))
        };
        let report = grad_check(&build, &p, 1e-5, 1e-6, 100, 0).unwrap();
        assert_eq!(report.max_rel_err, 0.0);
        for e in &report.entries {
            assert_eq!(e.analytic, 0.0);
            assert_eq!(e.numeric, 0.0);
        }
    }

    #[test]
    fn corrupted_gradient_is_flagged_on_the_right_parameter() {
        let p = linear_params(5);
        let mut analytic = collect_grads(&build_linear_ce, &p).unwrap();
        for v in analytic.get_mut("b").unwrap().iter_mut() {
            *v += 0.5;
        }
        let report = compare_gradients(&analytic, &build_linear_ce, &p, 1e-5, 1e-6, 100, 0).unwrap();
        assert!(!report.passed());
        let failures = report.failures();
        assert!(!failures.is_empty());
        assert!(failures.iter().all(|e| e.param == "b"));
    }

    #[test]
    fn matmul_backward_matches_finite_differences() {
        // random 3×4 · 4×2, loss = mean of entries
        let mut p = ParamStore::new(21);
        let mut rng = p.init_rng();
        p.insert_weight("a", 3, 4, &mut rng);
        p.insert_weight("b", 4, 2, &mut rng);
        let build = |g: &mut Graph<f64>, p: &ParamStore<f64>| {
            let a = g.param(p, "a")?;
            let b = g.param(p, "b")?;
            let c = g.matmul(a, b)?;
            g.mean(c)
        };
        let report = grad_check(&build, &p, 1e-5, 1e-6, 200, 1).unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
    }
}
