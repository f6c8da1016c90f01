//! Evaluation protocol: hide a fresh subset of observed cells, impute,
//! and score predictions on exactly the hidden cells, pooled across
//! windows. Includes the reference baselines every run is compared to.

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterPartition;
use crate::config::{Config, MetricsScale};
use crate::data::{self, TimeSeriesWindow};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::Model;
use crate::train;

/// Pooled squared and absolute error over the cells where `weight` is 1.
pub fn mse_mae(pred: &Matrix, target: &Matrix, weight: &Matrix) -> Result<(f64, f64)> {
    let mse = train::masked_mse(pred, target, weight)?;
    let mut acc = 0.0;
    let mut count = 0.0;
    let (p, g, w) = (pred.as_slice(), target.as_slice(), weight.as_slice());
    for i in 0..p.len() {
        if w[i] != 0.0 {
            acc += w[i] * (p[i] - g[i]).abs();
            count += w[i];
        }
    }
    Ok((mse, acc / count))
}

/// Per-variable mean of the observed cells, broadcast over the window.
/// Variables with no observed cells fall back to 0 and are reported.
pub fn baseline_mean(w: &TimeSeriesWindow) -> (Matrix, Vec<usize>) {
    let mut empty = Vec::new();
    let mut means = vec![0.0; w.n_vars()];
    for (var, mean) in means.iter_mut().enumerate() {
        let mut acc = 0.0;
        let mut n = 0.0;
        for t in 0..w.len() {
            if w.mask.get(var, t) == 1.0 {
                acc += w.values.get(var, t);
                n += 1.0;
            }
        }
        if n > 0.0 {
            *mean = acc / n;
        } else {
            empty.push(var);
        }
    }
    (
        Matrix::from_fn(w.n_vars(), w.len(), |var, _| means[var]),
        empty,
    )
}

/// The trivial all-zeros prediction, in the same units as the window.
pub fn baseline_zero(w: &TimeSeriesWindow) -> Matrix {
    Matrix::zeros(w.n_vars(), w.len())
}

/// Error pair for one method.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub mse: f64,
    pub mae: f64,
}

/// One (mask rate, seed) evaluation: the model against both baselines.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchmarkCell {
    pub mask_rate: f64,
    pub seed: u64,
    pub model: MethodMetrics,
    pub mean_baseline: MethodMetrics,
    pub zero_baseline: MethodMetrics,
    pub scored_cells: usize,
}

/// Full benchmark output: config echo, grid cells sorted by
/// (mask rate, seed), and any warnings gathered along the way.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: Config,
    pub metrics_scale: MetricsScale,
    pub cells: Vec<BenchmarkCell>,
    pub warnings: Vec<String>,
    pub wall_seconds: f64,
}

/// Running error sums for one method.
#[derive(Default, Clone, Copy)]
struct ErrorAcc {
    sq: f64,
    abs: f64,
    n: f64,
}

impl ErrorAcc {
    fn add(&mut self, pred: f64, gt: f64) {
        let d = pred - gt;
        self.sq += d * d;
        self.abs += d.abs();
        self.n += 1.0;
    }

    fn metrics(&self) -> MethodMetrics {
        MethodMetrics {
            mse: self.sq / self.n,
            mae: self.abs / self.n,
        }
    }
}

/// Evaluate a trained model on a series at one mask rate. Every window
/// gets a deterministic evaluation mask derived from `seed`; predictions
/// are scored on the hidden cells only, pooled across windows.
pub fn evaluate(
    model: &Model,
    series: &TimeSeriesWindow,
    rate: f64,
    seed: u64,
    scale: MetricsScale,
) -> Result<(BenchmarkCell, Vec<String>)> {
    let windows = data::make_windows(series, model.cfg.window, model.cfg.stride)?;
    let mut acc_model = ErrorAcc::default();
    let mut acc_mean = ErrorAcc::default();
    let mut acc_zero = ErrorAcc::default();
    let mut warnings = Vec::new();

    for (widx, w) in windows.iter().enumerate() {
        let mask_seed = seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(widx as u64);
        let (hidden_w, score) = data::apply_random_mask(w, rate, mask_seed);
        if score.as_slice().iter().sum::<f64>() == 0.0 {
            warnings.push(format!("window {widx}: empty evaluation set"));
            continue;
        }
        let out = model.impute_window(&hidden_w)?;
        let (mean_pred, empty_vars) = baseline_mean(&hidden_w);
        for var in empty_vars {
            warnings.push(format!(
                "window {widx}: variable {var} fully missing, mean baseline uses 0"
            ));
        }
        let zero_pred = baseline_zero(&hidden_w);

        for var in 0..w.n_vars() {
            for t in 0..w.len() {
                if score.get(var, t) != 1.0 {
                    continue;
                }
                let gt_raw = w.values.get(var, t);
                match scale {
                    MetricsScale::Raw => {
                        acc_model.add(out.filled.get(var, t), gt_raw);
                        acc_mean.add(mean_pred.get(var, t), gt_raw);
                        acc_zero.add(zero_pred.get(var, t), gt_raw);
                    }
                    MetricsScale::Standardized => {
                        let z = |v: f64| (v - out.stats.mean[var]) / out.stats.std[var];
                        acc_model.add(out.pred_std.get(var, t), z(gt_raw));
                        acc_mean.add(z(mean_pred.get(var, t)), z(gt_raw));
                        acc_zero.add(z(zero_pred.get(var, t)), z(gt_raw));
                    }
                }
            }
        }
    }

    if acc_model.n == 0.0 {
        return Err(Error::EmptyMaskSet);
    }
    Ok((
        BenchmarkCell {
            mask_rate: rate,
            seed,
            model: acc_model.metrics(),
            mean_baseline: acc_mean.metrics(),
            zero_baseline: acc_zero.metrics(),
            scored_cells: acc_model.n as usize,
        },
        warnings,
    ))
}

/// Train one model per seed and evaluate it at every mask rate. Cells
/// come back sorted by (mask rate, seed) regardless of train order.
pub fn run_benchmark(
    cfg: &Config,
    series: &TimeSeriesWindow,
    rates: &[f64],
    seeds: &[u64],
) -> Result<BenchmarkReport> {
    let start = std::time::Instant::now();
    let mut cells = Vec::new();
    let mut warnings = Vec::new();
    for &seed in seeds {
        let mut run_cfg = cfg.clone();
        run_cfg.seed = seed;
        let (model, _) = train::train(&run_cfg, series)?;
        for &rate in rates {
            let (cell, mut warns) = evaluate(&model, series, rate, seed, cfg.metrics_scale)?;
            cells.push(cell);
            warnings.append(&mut warns);
        }
    }
    cells.sort_by(|a, b| {
        a.mask_rate
            .total_cmp(&b.mask_rate)
            .then(a.seed.cmp(&b.seed))
    });
    Ok(BenchmarkReport {
        config: cfg.clone(),
        metrics_scale: cfg.metrics_scale,
        cells,
        warnings,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Results table: one row per mask rate, methods as columns, metrics
/// averaged over seeds.
pub fn benchmark_csv(report: &BenchmarkReport) -> String {
    let mut rates: Vec<f64> = report.cells.iter().map(|c| c.mask_rate).collect();
    rates.dedup();
    let mut out = String::from(
        "mask_rate,model_mse,model_mae,mean_mse,mean_mae,zero_mse,zero_mae,seeds\n",
    );
    for rate in rates {
        let group: Vec<&BenchmarkCell> = report
            .cells
            .iter()
            .filter(|c| c.mask_rate == rate)
            .collect();
        let n = group.len() as f64;
        let avg = |f: &dyn Fn(&BenchmarkCell) -> f64| group.iter().map(|c| f(c)).sum::<f64>() / n;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            rate,
            avg(&|c| c.model.mse),
            avg(&|c| c.model.mae),
            avg(&|c| c.mean_baseline.mse),
            avg(&|c| c.mean_baseline.mae),
            avg(&|c| c.zero_baseline.mse),
            avg(&|c| c.zero_baseline.mae),
            group.len(),
        ));
    }
    out
}

/// Sidecar report for a single imputation run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImputationReport {
    pub config: Config,
    pub n_vars: usize,
    pub n_timesteps: usize,
    pub n_windows: usize,
    pub variable_names: Vec<String>,
    pub partition: ClusterPartition,
    pub filled_per_variable: Vec<usize>,
    pub wall_seconds: f64,
}
