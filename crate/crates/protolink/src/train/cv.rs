//! Stratified k-fold cross-validation over classifier factories.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dataset::{make_folds, DatasetError, Sample};
use crate::model::{Classifier, ModelError};
use crate::numerics::Scalar;
use crate::train::metrics::{compute_metrics, update_confusion, Confusion, Metrics, MetricsError};
use crate::train::{train, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum CvError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub seed: u64,
    pub metrics: Metrics,
    pub confusion: Confusion,
}

#[derive(Debug, Clone)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    /// Metrics of the confusion matrix summed over all folds.
    pub pooled: Metrics,
    /// Plain mean of the per-fold metric values.
    pub mean: Metrics,
}

fn mean_of(folds: &[FoldResult]) -> Metrics {
    let n = folds.len() as f64;
    Metrics {
        acc: folds.iter().map(|f| f.metrics.acc).sum::<f64>() / n,
        avg_p: folds.iter().map(|f| f.metrics.avg_p).sum::<f64>() / n,
        avg_r: folds.iter().map(|f| f.metrics.avg_r).sum::<f64>() / n,
        avg_f: folds.iter().map(|f| f.metrics.avg_f).sum::<f64>() / n,
    }
}

/// Builds a fresh classifier from the fold's training samples and a derived
/// seed; vocabulary construction happens inside the factory so held-out text
/// never leaks into it.
pub type ModelFactory<'a, S> =
    dyn Fn(&[Sample], u64) -> Result<Box<dyn Classifier<S>>, ModelError> + Sync + 'a;

/// Trains on k−1 folds and evaluates on the held-out fold, for each fold.
/// Fold seeds derive as `seed + fold_index`; folds run in parallel and the
/// result is deterministic for a given seed.
pub fn cross_validate<S: Scalar>(
    factory: &ModelFactory<'_, S>,
    samples: &[Sample],
    k: usize,
    seed: u64,
    config: &TrainConfig,
) -> Result<CvReport, CvError> {
    let labels: Vec<String> = samples.iter().map(|s| s.label.clone()).collect();
    let split = make_folds(samples.len(), k, seed, &labels)?;
    let folds: Vec<FoldResult> = split
        .folds
        .par_iter()
        .enumerate()
        .map(|(fold, held_out)| -> Result<FoldResult, CvError> {
            let fold_seed = seed + fold as u64;
            let held: Vec<&Sample> = held_out.iter().map(|&i| &samples[i]).collect();
            let train_set: Vec<Sample> = split
                .folds
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != fold)
                .flat_map(|(_, idxs)| idxs.iter().map(|&i| samples[i].clone()))
                .collect();
            let mut model = factory(&train_set, fold_seed)?;
            let fold_cfg = TrainConfig { seed: fold_seed, ..config.clone() };
            train(model.as_mut(), &train_set, &fold_cfg)?;
            let mut confusion = Confusion::new(model.num_classes());
            for s in &held {
                let predicted = model.predict_class(&s.field, &s.description)?;
                let actual = model.class_index(&s.label)?;
                update_confusion(&mut confusion, predicted, actual)?;
            }
            let metrics = compute_metrics(&confusion, confusion.n)?;
            Ok(FoldResult { fold, seed, metrics, confusion })
        })
        .collect::<Result<_, _>>()?;

    let mut pooled_confusion = Confusion::new(folds[0].confusion.num_classes());
    for f in &folds {
        pooled_confusion.merge(&f.confusion);
    }
    let pooled = compute_metrics(&pooled_confusion, pooled_confusion.n)?;
    let mean = mean_of(&folds);
    Ok(CvReport { folds, pooled, mean })
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub report: CvReport,
}

pub fn cross_validate_seeds<S: Scalar>(
    factory: &ModelFactory<'_, S>,
    samples: &[Sample],
    k: usize,
    seeds: &[u64],
    config: &TrainConfig,
) -> Result<Vec<SeedRun>, CvError> {
    seeds
        .iter()
        .map(|&seed| {
            Ok(SeedRun { seed, report: cross_validate(factory, samples, k, seed, config)? })
        })
        .collect()
}

/// Mean pooled accuracy across seed runs.
pub fn mean_pooled_acc(runs: &[SeedRun]) -> f64 {
    runs.iter().map(|r| r.report.pooled.acc).sum::<f64>() / runs.len() as f64
}

#[derive(Serialize)]
struct FoldRecord<'a> {
    record: &'static str,
    config: &'a str,
    model: &'a str,
    seed: u64,
    fold: usize,
    acc: f64,
    avg_p: f64,
    avg_r: f64,
    avg_f: f64,
}

#[derive(Serialize)]
struct SummaryRecord<'a> {
    record: &'static str,
    config: &'a str,
    model: &'a str,
    seeds: Vec<u64>,
    folds: usize,
    pooled_acc: f64,
    pooled_avg_p: f64,
    pooled_avg_r: f64,
    pooled_avg_f: f64,
    mean_acc: f64,
    mean_avg_p: f64,
    mean_avg_r: f64,
    mean_avg_f: f64,
}

/// One line-delimited record per fold plus a summary record. Output is
/// byte-identical across runs with the same inputs.
pub fn render_results(config_hash: &str, model: &str, k: usize, runs: &[SeedRun]) -> String {
    let mut out = String::new();
    for run in runs {
        for f in &run.report.folds {
            let rec = FoldRecord {
                record: "fold",
                config: config_hash,
                model,
                seed: run.seed,
                fold: f.fold,
                acc: round6(f.metrics.acc),
                avg_p: round6(f.metrics.avg_p),
                avg_r: round6(f.metrics.avg_r),
                avg_f: round6(f.metrics.avg_f),
            };
            out.push_str(&serde_json::to_string(&rec).expect("fold record"));
            out.push('\n');
        }
    }
    let n = runs.len() as f64;
    let avg = |f: &dyn Fn(&CvReport) -> f64| runs.iter().map(|r| f(&r.report)).sum::<f64>() / n;
    let rec = SummaryRecord {
        record: "summary",
        config: config_hash,
        model,
        seeds: runs.iter().map(|r| r.seed).collect(),
        folds: k,
        pooled_acc: round6(avg(&|r| r.pooled.acc)),
        pooled_avg_p: round6(avg(&|r| r.pooled.avg_p)),
        pooled_avg_r: round6(avg(&|r| r.pooled.avg_r)),
        pooled_avg_f: round6(avg(&|r| r.pooled.avg_f)),
        mean_acc: round6(avg(&|r| r.mean.acc)),
        mean_avg_p: round6(avg(&|r| r.mean.avg_p)),
        mean_avg_r: round6(avg(&|r| r.mean.avg_r)),
        mean_avg_f: round6(avg(&|r| r.mean.avg_f)),
    };
    out.push_str(&serde_json::to_string(&rec).expect("summary record"));
    out.push('\n');
    out
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// Short hex digest of a canonical config rendering.
pub fn config_hash(canonical: &str) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Sample;
    use crate::numerics::ParamStore;

    /// Predicts a constant class; enough to exercise the harness.
    struct ConstModel {
        classes: Vec<String>,
        params: ParamStore<f64>,
        pick: usize,
    }

    impl Classifier<f64> for ConstModel {
        fn classes(&self) -> &[String] {
            &self.classes
        }
        fn params(&self) -> &ParamStore<f64> {
            &self.params
        }
        fn params_mut(&mut self) -> &mut ParamStore<f64> {
            &mut self.params
        }
        fn predict_probs(&self, _f: &str, _d: &str) -> Result<Vec<f64>, ModelError> {
            let mut p = vec![0.0; self.classes.len()];
            p[self.pick] = 1.0;
            Ok(p)
        }
        fn accumulate_grads(&mut self, _s: &Sample) -> Result<f64, ModelError> {
            Ok(0.0)
        }
    }

    fn mk(label: &str) -> Sample {
        Sample {
            rfc: 1,
            diagram: 0,
            offset: 0,
            field: "f".into(),
            description: "d".into(),
            label: label.into(),
        }
    }

    fn const_factory(pick: usize) -> impl Fn(&[Sample], u64) -> Result<Box<dyn Classifier<f64>>, ModelError> + Sync {
        move |_train, _seed| {
            Ok(Box::new(ConstModel {
                classes: vec!["a".into(), "b".into()],
                params: ParamStore::new(0),
                pick,
            }) as Box<dyn Classifier<f64>>)
        }
    }

    #[test]
    fn constant_predictor_on_balanced_set_scores_half() {
        let mut samples: Vec<Sample> = (0..10).map(|_| mk("a")).collect();
        samples.extend((0..10).map(|_| mk("b")));
        let factory = const_factory(0);
        let report =
            cross_validate(&factory, &samples, 10, 7, &TrainConfig::default()).unwrap();
        assert!((report.pooled.acc - 0.5).abs() < 1e-12);
        assert_eq!(report.folds.len(), 10);
    }

    #[test]
    fn leave_one_out_has_singleton_folds() {
        let samples: Vec<Sample> = (0..10).map(|i| mk(if i % 2 == 0 { "a" } else { "b" })).collect();
        let factory = const_factory(0);
        let report =
            cross_validate(&factory, &samples, 10, 3, &TrainConfig::default()).unwrap();
        for f in &report.folds {
            assert_eq!(f.confusion.n, 1);
        }
    }

    #[test]
    fn same_seed_gives_identical_results() {
        let samples: Vec<Sample> =
            (0..12).map(|i| mk(if i % 3 == 0 { "a" } else { "b" })).collect();
        let factory = const_factory(1);
        let a = cross_validate(&factory, &samples, 4, 9, &TrainConfig::default()).unwrap();
        let b = cross_validate(&factory, &samples, 4, 9, &TrainConfig::default()).unwrap();
        for (x, y) in a.folds.iter().zip(&b.folds) {
            assert_eq!(x.metrics, y.metrics);
            assert_eq!(x.confusion, y.confusion);
        }
    }

    #[test]
    fn pooled_accuracy_is_total_correct_over_total() {
        let mut samples: Vec<Sample> = (0..15).map(|_| mk("a")).collect();
        samples.extend((0..5).map(|_| mk("b")));
        let factory = const_factory(0);
        let report =
            cross_validate(&factory, &samples, 5, 1, &TrainConfig::default()).unwrap();
        assert!((report.pooled.acc - 0.75).abs() < 1e-12);
    }

    #[test]
    fn results_rendering_is_stable() {
        let samples: Vec<Sample> =
            (0..10).map(|i| mk(if i % 2 == 0 { "a" } else { "b" })).collect();
        let factory = const_factory(0);
        let runs =
            cross_validate_seeds(&factory, &samples, 5, &[1, 2], &TrainConfig::default()).unwrap();
        let a = render_results("deadbeef", "toy", 5, &runs);
        let b = render_results("deadbeef", "toy", 5, &runs);
        assert_eq!(a, b);
        assert_eq!(a.lines().count(), 11); // 2 seeds × 5 folds + summary
        assert!(a.lines().last().unwrap().contains("\"record\":\"summary\""));
    }
}
