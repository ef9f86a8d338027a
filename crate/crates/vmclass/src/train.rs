//! Training loop, evaluation and the repeated-run protocol.
//!
//! A run trains one seeded model with Adam on the Train split, records
//! eval-mode loss/accuracy per epoch on Train and Val, and measures final
//! metrics on Val and Test. `multi_run` repeats that over consecutive seeds
//! and summarizes the test metrics with min/mean/std/max.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::balance::BalanceMethod;
use crate::dataset::{Dataset, SplitTag};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, EvalMetrics};
use crate::nn::loss::cross_entropy;
use crate::nn::{Adam, Architecture, Grid, Model, Phase};

/// Keeps the training RNG stream distinct from the init stream, which is
/// seeded with the run seed directly.
const TRAIN_STREAM_SALT: u64 = 0x7472_6169_6e5f_7631;

/// Rows per forward pass during evaluation.
const EVAL_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub dropout: f64,
    pub seed: u64,
    /// Rebalancing applied by the data pipeline ahead of training; recorded
    /// here so one struct describes the whole run.
    pub balance: BalanceMethod,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 100,
            lr: 0.01,
            dropout: 0.4,
            seed: 42,
            balance: BalanceMethod::Smote {
                k: BalanceMethod::DEFAULT_SMOTE_K,
            },
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive and finite, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::BadDropoutRate(self.dropout));
        }
        Ok(())
    }
}

/// Eval-mode loss and accuracy on Train and Val after one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStat {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

/// Feature matrix [rows.len(), n_cols] for the given dataset rows.
pub fn features_grid(ds: &Dataset, rows: &[usize]) -> Grid {
    let mut data = Vec::with_capacity(rows.len() * ds.n_cols);
    for &i in rows {
        data.extend_from_slice(ds.row(i));
    }
    Grid::from_vec(&[rows.len(), ds.n_cols], data).expect("row-major copy always fits")
}

fn labels_of(ds: &Dataset, rows: &[usize]) -> Vec<u8> {
    rows.iter().map(|&i| ds.labels[i]).collect()
}

/// Eval-mode (mean cross-entropy, accuracy) over the given rows, evaluated
/// in chunks so memory stays bounded.
pub fn eval_stats(model: &Model, ds: &Dataset, rows: &[usize]) -> Result<(f64, f64)> {
    if rows.is_empty() {
        return Err(Error::TooFewRows { needed: 1, got: 0 });
    }
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for chunk in rows.chunks(EVAL_CHUNK) {
        let x = features_grid(ds, chunk);
        let labels = labels_of(ds, chunk);
        let probs = model.predict_proba(&x)?;
        loss_sum += cross_entropy(&probs, &labels)? * chunk.len() as f64;
        for (b, &label) in labels.iter().enumerate() {
            if crate::nn::argmax_row(probs.row(b)) as u8 == label {
                correct += 1;
            }
        }
    }
    Ok((
        loss_sum / rows.len() as f64,
        correct as f64 / rows.len() as f64,
    ))
}

/// Hard predictions for the given rows, in chunks.
pub fn predict_rows(model: &Model, ds: &Dataset, rows: &[usize]) -> Result<Vec<u8>> {
    let mut preds = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(EVAL_CHUNK) {
        let x = features_grid(ds, chunk);
        preds.extend(model.predict(&x)?);
    }
    Ok(preds)
}

/// Train in place on the Train split: seeded shuffle each epoch, mini-batches
/// (final partial batch included), Adam updates, and an eval-mode Train/Val
/// stat line per epoch. Returns the history and the optimizer state.
pub fn train(model: &mut Model, ds: &Dataset, hp: &HyperParams) -> Result<(Vec<EpochStat>, Adam)> {
    hp.validate()?;
    if ds.n_cols != model.arch.input_len {
        return Err(Error::ShapeMismatch {
            op: "train",
            expected: format!("{} feature columns", model.arch.input_len),
            got: format!("{}", ds.n_cols),
        });
    }
    let train_rows = ds.split_indices(SplitTag::Train);
    if train_rows.is_empty() {
        return Err(Error::EmptySplit {
            split: "train".into(),
        });
    }
    let val_rows = ds.split_indices(SplitTag::Val);

    let shapes: Vec<Vec<usize>> = model
        .params
        .grids()
        .iter()
        .map(|(_, g)| g.shape().to_vec())
        .collect();
    let shape_refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
    let mut opt = Adam::new(hp.lr, &shape_refs);

    let mut history = Vec::with_capacity(hp.epochs);
    if hp.epochs == 0 {
        return Ok((history, opt));
    }
    if val_rows.is_empty() {
        return Err(Error::EmptySplit {
            split: "val".into(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed ^ TRAIN_STREAM_SALT);
    let mut order = train_rows.clone();
    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(hp.batch_size) {
            let x = features_grid(ds, batch);
            let labels = labels_of(ds, batch);
            let (_, grads) = model.loss_and_grads(&x, &labels, Phase::Train(&mut rng))?;
            let grad_grids: Vec<&Grid> = grads.grids().iter().map(|(_, g)| *g).collect();
            let mut param_grids: Vec<&mut Grid> = model
                .params
                .grids_mut()
                .into_iter()
                .map(|(_, g)| g)
                .collect();
            opt.step(&mut param_grids, &grad_grids)?;
        }
        let (train_loss, train_acc) = eval_stats(model, ds, &train_rows)?;
        let (val_loss, val_acc) = eval_stats(model, ds, &val_rows)?;
        history.push(EpochStat {
            epoch,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
        });
    }
    Ok((history, opt))
}

/// Full metrics of the model on one split of the dataset.
pub fn evaluate(model: &Model, ds: &Dataset, tag: SplitTag) -> Result<EvalMetrics> {
    let rows = ds.split_indices(tag);
    if rows.is_empty() {
        return Err(Error::EmptySplit {
            split: tag.as_str().into(),
        });
    }
    let preds = predict_rows(model, ds, &rows)?;
    compute_metrics(&preds, &labels_of(ds, &rows))
}

#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub seed: u64,
    pub history: Vec<EpochStat>,
    pub val: EvalMetrics,
    pub test: EvalMetrics,
    /// Wall-clock training time; belongs in the manifest only, never in
    /// deterministic report files.
    pub train_seconds: f64,
}

pub struct RunOutput {
    pub model: Model,
    pub optimizer: Adam,
    pub metrics: RunMetrics,
}

/// One seeded end-to-end run on an already prepared (balanced, normalized,
/// split) dataset. The seed drives both parameter init and the training
/// stream; `hp.seed` is ignored in favor of `seed`.
pub fn run_once(ds: &Dataset, hp: &HyperParams, seed: u64) -> Result<RunOutput> {
    let arch = Architecture {
        input_len: ds.n_cols,
        dropout: hp.dropout,
        ..Architecture::default()
    };
    let mut model = Model::new(arch, seed)?;
    let run_hp = HyperParams {
        seed,
        ..hp.clone()
    };
    let started = Instant::now();
    let (history, optimizer) = train(&mut model, ds, &run_hp)?;
    let train_seconds = started.elapsed().as_secs_f64();
    let val = evaluate(&model, ds, SplitTag::Val)?;
    let test = evaluate(&model, ds, SplitTag::Test)?;
    Ok(RunOutput {
        model,
        optimizer,
        metrics: RunMetrics {
            seed,
            history,
            val,
            test,
            train_seconds,
        },
    })
}

/// Min / mean / population-std / max of one metric across runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatLine {
    pub min: f64,
    pub mean: f64,
    pub std: f64,
    pub max: f64,
}

pub fn summarize(values: &[f64]) -> Result<StatLine> {
    if values.is_empty() {
        return Err(Error::TooFewRows { needed: 1, got: 0 });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(StatLine {
        min: values.iter().cloned().fold(f64::INFINITY, f64::min),
        mean,
        std: var.sqrt(),
        max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    })
}

#[derive(Debug, Clone)]
pub struct MultiRunSummary {
    pub n_runs: usize,
    /// (metric name, stats) over the Test split, in report order.
    pub rows: Vec<(String, StatLine)>,
}

/// Cross-run summary of per-run Test metrics, in report row order.
pub fn summary_from_test_metrics(tests: &[EvalMetrics]) -> Result<MultiRunSummary> {
    let collect = |f: &dyn Fn(&EvalMetrics) -> f64| -> Vec<f64> { tests.iter().map(f).collect() };
    let rows = vec![
        (
            "test_accuracy".to_string(),
            summarize(&collect(&|m| m.accuracy))?,
        ),
        (
            "test_precision_interactive".to_string(),
            summarize(&collect(&|m| m.per_class[1].precision))?,
        ),
        (
            "test_recall_interactive".to_string(),
            summarize(&collect(&|m| m.per_class[1].recall))?,
        ),
        (
            "test_precision_delay_insensitive".to_string(),
            summarize(&collect(&|m| m.per_class[0].precision))?,
        ),
        (
            "test_recall_delay_insensitive".to_string(),
            summarize(&collect(&|m| m.per_class[0].recall))?,
        ),
    ];
    Ok(MultiRunSummary {
        n_runs: tests.len(),
        rows,
    })
}

/// Repeat `run_once` with seeds `base_seed..base_seed + n_runs` and
/// summarize the test metrics across runs.
pub fn multi_run(
    ds: &Dataset,
    hp: &HyperParams,
    n_runs: usize,
    base_seed: u64,
) -> Result<(Vec<RunOutput>, MultiRunSummary)> {
    if n_runs == 0 {
        return Err(Error::Config("n_runs must be at least 1".into()));
    }
    let mut runs = Vec::with_capacity(n_runs);
    for i in 0..n_runs {
        runs.push(run_once(ds, hp, base_seed + i as u64)?);
    }
    let tests: Vec<EvalMetrics> = runs.iter().map(|r| r.metrics.test).collect();
    Ok((runs, summary_from_test_metrics(&tests)?))
}
