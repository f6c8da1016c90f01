//! Time-series containers and the surrounding plumbing: CSV loading,
//! sliding windows, per-variable standardization, seeded evaluation
//! masking, and observation-preserving merges.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// One multivariate segment: an `N x T` value grid (variable-major), the
/// matching observation mask (1 = observed), variable names, and the
/// normalized timestamps the INR function is queried at.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesWindow {
    pub values: Matrix,
    pub mask: Matrix,
    pub variable_names: Vec<String>,
    pub t_grid: Vec<f64>,
}

impl TimeSeriesWindow {
    pub fn new(values: Matrix, mask: Matrix, variable_names: Vec<String>) -> Self {
        assert_eq!(values.shape(), mask.shape(), "values/mask shape");
        assert_eq!(values.rows(), variable_names.len(), "name count");
        let t_grid = normalized_grid(values.cols());
        TimeSeriesWindow {
            values,
            mask,
            variable_names,
            t_grid,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.values.rows()
    }

    pub fn len(&self) -> usize {
        self.values.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.cols() == 0
    }

    pub fn observed_count(&self) -> usize {
        self.mask.as_slice().iter().filter(|&&m| m == 1.0).count()
    }
}

/// Per-variable mean and standard deviation of the observed entries,
/// retained so predictions can be mapped back to original units.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Evenly spaced timestamps over [0,1].
pub fn normalized_grid(t: usize) -> Vec<f64> {
    if t <= 1 {
        return vec![0.0; t];
    }
    (0..t).map(|j| j as f64 / (t - 1) as f64).collect()
}

/// Load a header-first CSV where rows are timestamps and columns are
/// variables. Empty cells and the literal `NaN` mark missing values.
pub fn load_csv(path: &Path) -> Result<TimeSeriesWindow> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;
    let variable_names: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            message: e.to_string(),
        })?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let n = variable_names.len();
    if n == 0 {
        return Err(Error::EmptyData("no variables in header".into()));
    }

    // Collected timestamp-major, transposed below.
    let mut columns: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        if record.len() != n {
            return Err(Error::Parse {
                row,
                message: format!("expected {n} fields, found {}", record.len()),
            });
        }
        let mut values = Vec::with_capacity(n);
        let mut mask = Vec::with_capacity(n);
        for field in record.iter() {
            if field.is_empty() || field.eq_ignore_ascii_case("nan") {
                values.push(0.0);
                mask.push(0.0);
            } else {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    row,
                    message: format!("not a number: {field:?}"),
                })?;
                values.push(v);
                mask.push(1.0);
            }
        }
        columns.push((values, mask));
    }
    let t_full = columns.len();
    if t_full == 0 {
        return Err(Error::EmptyData("no data rows".into()));
    }

    let values = Matrix::from_fn(n, t_full, |var, t| columns[t].0[var]);
    let mask = Matrix::from_fn(n, t_full, |var, t| columns[t].1[var]);
    Ok(TimeSeriesWindow::new(values, mask, variable_names))
}

/// Write a grid as CSV (rows = timestamps). Cells where `mask` is 0 are
/// left empty; pass `None` to emit every cell.
pub fn write_csv(
    path: &Path,
    names: &[String],
    values: &Matrix,
    mask: Option<&Matrix>,
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(names)?;
    for t in 0..values.cols() {
        let record: Vec<String> = (0..values.rows())
            .map(|n| match mask {
                Some(m) if m.get(n, t) == 0.0 => String::new(),
                _ => format!("{}", values.get(n, t)),
            })
            .collect();
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Write a 0/1 mask grid as CSV with the same orientation as `write_csv`.
pub fn write_mask_csv(path: &Path, names: &[String], mask: &Matrix) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(names)?;
    for t in 0..mask.cols() {
        let record: Vec<String> = (0..mask.rows())
            .map(|n| format!("{}", mask.get(n, t) as u8))
            .collect();
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Slice a full series into fixed-length windows at the given stride,
/// dropping any trailing remainder shorter than `window`.
pub fn make_windows(
    series: &TimeSeriesWindow,
    window: usize,
    stride: usize,
) -> Result<Vec<TimeSeriesWindow>> {
    assert!(window > 0 && stride > 0, "window and stride must be positive");
    let t_full = series.len();
    if window > t_full {
        return Err(Error::WindowTooLarge {
            window,
            series_len: t_full,
        });
    }
    let count = (t_full - window) / stride + 1;
    let mut out = Vec::with_capacity(count);
    for w in 0..count {
        let start = w * stride;
        let n = series.n_vars();
        let values = Matrix::from_fn(n, window, |var, t| series.values.get(var, start + t));
        let mask = Matrix::from_fn(n, window, |var, t| series.mask.get(var, start + t));
        out.push(TimeSeriesWindow::new(
            values,
            mask,
            series.variable_names.clone(),
        ));
    }
    Ok(out)
}

/// Z-score each variable using the mean and population standard deviation
/// of its observed entries; missing entries become 0 (the scaled mean).
/// Degenerate variables (constant or fully missing) get std 1.
pub fn standardize(w: &TimeSeriesWindow) -> (TimeSeriesWindow, StandardizationStats) {
    let n = w.n_vars();
    let t = w.len();
    let mut mean = vec![0.0; n];
    let mut std = vec![1.0; n];
    let mut values = Matrix::zeros(n, t);
    for var in 0..n {
        let observed: Vec<f64> = (0..t)
            .filter(|&j| w.mask.get(var, j) == 1.0)
            .map(|j| w.values.get(var, j))
            .collect();
        if !observed.is_empty() {
            let m = observed.iter().sum::<f64>() / observed.len() as f64;
            let var_pop =
                observed.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / observed.len() as f64;
            mean[var] = m;
            if var_pop > 0.0 {
                std[var] = var_pop.sqrt();
            }
        }
        for j in 0..t {
            if w.mask.get(var, j) == 1.0 {
                values.set(var, j, (w.values.get(var, j) - mean[var]) / std[var]);
            }
        }
    }
    let out = TimeSeriesWindow {
        values,
        mask: w.mask.clone(),
        variable_names: w.variable_names.clone(),
        t_grid: w.t_grid.clone(),
    };
    (out, StandardizationStats { mean, std })
}

/// Map a grid in standardized units back to original units.
pub fn destandardize(grid: &Matrix, stats: &StandardizationStats) -> Matrix {
    assert_eq!(grid.rows(), stats.mean.len(), "stats length");
    Matrix::from_fn(grid.rows(), grid.cols(), |var, t| {
        grid.get(var, t) * stats.std[var] + stats.mean[var]
    })
}

/// Hide `round(r * observed_count)` observed entries, chosen uniformly
/// without replacement under the seed. Returns the masked window and an
/// eval mask that is 1 exactly at the newly hidden positions.
pub fn apply_random_mask(
    w: &TimeSeriesWindow,
    r: f64,
    seed: u64,
) -> (TimeSeriesWindow, Matrix) {
    assert!((0.0..=1.0).contains(&r), "mask rate must lie in [0,1]");
    let mut observed: Vec<(usize, usize)> = Vec::with_capacity(w.observed_count());
    for var in 0..w.n_vars() {
        for t in 0..w.len() {
            if w.mask.get(var, t) == 1.0 {
                observed.push((var, t));
            }
        }
    }
    let k = (r * observed.len() as f64).round() as usize;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for i in 0..k.min(observed.len()) {
        let j = rng.random_range(i..observed.len());
        observed.swap(i, j);
    }

    let mut masked = w.clone();
    let mut eval_mask = Matrix::zeros(w.n_vars(), w.len());
    for &(var, t) in observed.iter().take(k) {
        masked.mask.set(var, t, 0.0);
        eval_mask.set(var, t, 1.0);
    }
    (masked, eval_mask)
}

/// Keep observed values bit-exactly, take predictions elsewhere.
pub fn merge_imputed(original: &TimeSeriesWindow, predicted: &Matrix) -> Result<Matrix> {
    if predicted.shape() != original.values.shape() {
        return Err(Error::Shape(format!(
            "merge_imputed: prediction {:?} vs window {:?}",
            predicted.shape(),
            original.values.shape()
        )));
    }
    Ok(Matrix::from_fn(
        predicted.rows(),
        predicted.cols(),
        |var, t| {
            if original.mask.get(var, t) == 1.0 {
                original.values.get(var, t)
            } else {
                predicted.get(var, t)
            }
        },
    ))
}
