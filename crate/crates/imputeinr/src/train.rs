//! Masked-reconstruction training: per epoch, every window gets a fresh
//! random mask over its observed cells, the model sees only the remaining
//! values, and the loss scores the hidden ones. Gradients are averaged
//! over mini-batches, clipped by global norm, and applied with ADAM.

use rayon::prelude::*;

use crate::adam::{self, AdamHyper, AdamState};
use crate::cluster;
use crate::config::Config;
use crate::data::{self, TimeSeriesWindow};
use crate::error::{Error, Result};
use crate::inr::{InrParams, InrShape};
use crate::matrix::Matrix;
use crate::model::{effective_partition, Model};
use crate::tape::Tape;

/// Masked mean squared error over the cells where `weight` is 1.
/// Fails if the scoring set is empty.
pub fn masked_mse(pred: &Matrix, target: &Matrix, weight: &Matrix) -> Result<f64> {
    if pred.shape() != target.shape() || pred.shape() != weight.shape() {
        return Err(Error::Shape(format!(
            "masked_mse shapes {:?} / {:?} / {:?}",
            pred.shape(),
            target.shape(),
            weight.shape()
        )));
    }
    let mut acc = 0.0;
    let mut count = 0.0;
    let (p, g, w) = (pred.as_slice(), target.as_slice(), weight.as_slice());
    for i in 0..p.len() {
        if w[i] != 0.0 {
            let d = p[i] - g[i];
            acc += w[i] * d * d;
            count += w[i];
        }
    }
    if count == 0.0 {
        return Err(Error::EmptyMaskSet);
    }
    Ok(acc / count)
}

/// Loss and gradient statistics for one epoch.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_grad_norm: f64,
}

/// Everything the training loop produces besides the model itself.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub curve: Vec<EpochStats>,
    pub n_windows: usize,
}

/// Mask seed for a specific (run seed, epoch, window) triple. Splitting
/// the stream this way keeps every mask independent yet reproducible.
fn mask_seed(seed: u64, epoch: usize, window_idx: usize) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for x in [epoch as u64, window_idx as u64] {
        h ^= x.wrapping_add(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(h << 6)
            .wrapping_add(h >> 2);
        h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    }
    h
}

/// One training example: the window the model sees (hidden cells zeroed
/// out of the mask), the standardized ground truth, and the scoring mask.
struct Example {
    input: TimeSeriesWindow,
    target: Matrix,
    score: Matrix,
}

/// Hide a fresh random subset of the observed cells, then standardize
/// using only what remains visible, exactly as at inference time. The
/// target grid holds the true values in the same standardized units.
fn build_example(w: &TimeSeriesWindow, rate: f64, seed: u64) -> Option<Example> {
    let (hidden_w, score) = data::apply_random_mask(w, rate, seed);
    if score.as_slice().iter().sum::<f64>() == 0.0 {
        return None;
    }
    let (input, stats) = data::standardize(&hidden_w);
    let target = Matrix::from_fn(w.n_vars(), w.len(), |var, t| {
        (w.values.get(var, t) - stats.mean[var]) / stats.std[var]
    });
    Some(Example {
        input,
        target,
        score,
    })
}

/// Forward plus backward for one example. Returns the loss and one
/// gradient matrix per model tensor, in registration order.
fn example_grads(model: &Model, ex: &Example) -> Result<(f64, Vec<Matrix>)> {
    let mut fwd = model.forward(&ex.input)?;
    let loss = fwd.tape.masked_mse(fwd.pred, &ex.target, &ex.score);
    let loss_val = fwd.tape.value(loss).get(0, 0);
    if !loss_val.is_finite() {
        return Err(Error::Numerics("non-finite loss".into()));
    }
    let store = fwd.tape.backward(loss);
    let grads: Vec<Matrix> = fwd
        .param_vars
        .iter()
        .map(|&v| store.grad(v).clone())
        .collect();
    if !store.all_finite() {
        return Err(Error::Numerics("non-finite gradient".into()));
    }
    Ok((loss_val, grads))
}

/// Train a fresh model on the series. The partition is resolved once from
/// the full series, windows are cut with the configured stride, and the
/// loop runs `cfg.epochs` passes. Deterministic for a fixed config.
pub fn train(cfg: &Config, series: &TimeSeriesWindow) -> Result<(Model, TrainReport)> {
    let partition = effective_partition(cfg, series);
    let mut model = Model::new(cfg, series.n_vars(), partition)?;
    let windows = data::make_windows(series, cfg.window, cfg.stride)?;
    let reordered: Vec<TimeSeriesWindow> = windows
        .iter()
        .map(|w| cluster::reorder(w, &model.partition))
        .collect();

    let hyper = AdamHyper {
        lr: cfg.lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.adam_eps,
    };
    let mut opt = AdamState::new(model.params.tensors());
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        let mut epoch_norm = 0.0;
        let mut scored = 0usize;
        let mut batches = 0usize;

        for (batch_idx, chunk) in reordered.chunks(cfg.batch_size).enumerate() {
            let base = batch_idx * cfg.batch_size;
            let examples: Vec<(usize, Example)> = chunk
                .iter()
                .enumerate()
                .filter_map(|(i, w)| {
                    let seed = mask_seed(cfg.seed, epoch, base + i);
                    build_example(w, cfg.mask_rate, seed).map(|ex| (base + i, ex))
                })
                .collect();
            if examples.is_empty() {
                continue;
            }

            let results: Vec<Result<(f64, Vec<Matrix>)>> = examples
                .par_iter()
                .map(|(_, ex)| example_grads(&model, ex))
                .collect();

            let mut batch_loss = 0.0;
            let mut grads: Option<Vec<Matrix>> = None;
            for (res, (widx, _)) in results.into_iter().zip(&examples) {
                let (loss, g) = res.map_err(|e| {
                    Error::Numerics(format!("epoch {epoch}, window {widx}: {e}"))
                })?;
                batch_loss += loss;
                match &mut grads {
                    None => grads = Some(g),
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            a.axpy(b, 1.0);
                        }
                    }
                }
            }
            let mut grads = grads.expect("nonempty batch");
            let inv = 1.0 / examples.len() as f64;
            for g in &mut grads {
                for x in g.as_mut_slice() {
                    *x *= inv;
                }
            }

            let norm = adam::clip_global_norm(&mut grads, cfg.grad_clip);
            opt.step(model.params.tensors_mut(), &grads, hyper);

            epoch_loss += batch_loss;
            epoch_norm += norm;
            scored += examples.len();
            batches += 1;
        }

        if scored == 0 {
            return Err(Error::EmptyMaskSet);
        }
        curve.push(EpochStats {
            epoch,
            mean_loss: epoch_loss / scored as f64,
            mean_grad_norm: epoch_norm / batches as f64,
        });
    }

    Ok((
        model,
        TrainReport {
            curve,
            n_windows: windows.len(),
        },
    ))
}

/// Fit an INR's parameters directly to one window by full-batch gradient
/// descent on the observed cells, bypassing the hypernetwork. Returns the
/// fitted parameters and the loss trace.
pub fn fit_direct(
    shape: &InrShape,
    cfg: &Config,
    w: &TimeSeriesWindow,
    steps: usize,
    lr: f64,
    seed: u64,
) -> Result<(InrParams, Vec<f64>)> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let h = shape.hidden as f64;
    let blocks: Vec<Matrix> = shape
        .block_specs()
        .iter()
        .map(|spec| {
            use crate::inr::BlockKind;
            let bound = match spec.kind {
                BlockKind::Trend | BlockKind::Seasonal => 0.0,
                BlockKind::GlobalW(0) => 1.0,
                BlockKind::GlobalW(_) => (6.0 / h).sqrt(),
                BlockKind::GroupW(_, l) if l + 1 == shape.group_layers => 1.0 / h.sqrt(),
                BlockKind::GroupW(_, _) => (6.0 / h).sqrt(),
                BlockKind::GlobalB(_) | BlockKind::GroupB(_, _) => 0.0,
            };
            if bound == 0.0 {
                Matrix::zeros(spec.rows, spec.cols)
            } else {
                Matrix::from_fn(spec.rows, spec.cols, |_, _| rng.random_range(-bound..bound))
            }
        })
        .collect();
    let mut params = InrParams::from_blocks(shape.clone(), blocks);

    let hyper = AdamHyper {
        lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.adam_eps,
    };
    let mut opt = AdamState::new(&params.blocks);
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut tape = Tape::new();
        let vars: Vec<_> = params.blocks.iter().map(|b| tape.leaf(b.clone())).collect();
        let pred = crate::inr::inr_batch_forward(
            &mut tape,
            &vars,
            shape,
            cfg.activation,
            cfg.omega_first,
            &w.t_grid,
        );
        let loss = tape.masked_mse(pred, &w.values, &w.mask);
        let loss_val = tape.value(loss).get(0, 0);
        if !loss_val.is_finite() {
            return Err(Error::Numerics(format!("direct fit diverged at step {step}")));
        }
        losses.push(loss_val);
        let store = tape.backward(loss);
        let mut grads: Vec<Matrix> = vars.iter().map(|&v| store.grad(v).clone()).collect();
        adam::clip_global_norm(&mut grads, cfg.grad_clip);
        opt.step(&mut params.blocks, &grads, hyper);
    }
    Ok((params, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::ClusterPartition;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn tiny_config() -> Config {
        Config {
            window: 16,
            stride: 16,
            kernel_sizes: vec![3],
            conv_channels: 2,
            patch_len: 4,
            d_model: 8,
            n_blocks: 1,
            n_heads: 2,
            ff_mult: 2,
            trend_degree: 1,
            fourier_terms: 1,
            hidden: 4,
            global_layers: 1,
            group_layers: 1,
            epochs: 2,
            batch_size: 2,
            mask_rate: 0.3,
            grouping: false,
            ..Config::default()
        }
    }

    fn smooth_series(n: usize, t: usize, seed: u64) -> TimeSeriesWindow {
        use std::f64::consts::TAU;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let phases: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..TAU)).collect();
        TimeSeriesWindow::new(
            Matrix::from_fn(n, t, |v, i| {
                let x = i as f64 / t as f64;
                (TAU * 2.0 * x + phases[v]).sin() + 0.1 * v as f64
            }),
            Matrix::filled(n, t, 1.0),
            (0..n).map(|i| format!("v{i}")).collect(),
        )
    }

    #[test]
    fn masked_mse_matches_the_hand_example() {
        // Two scored cells with errors -2 and 3: (4 + 9) / 2 = 6.5.
        let pred = Matrix::from_vec(1, 3, vec![1.0, 5.0, 100.0]);
        let gt = Matrix::from_vec(1, 3, vec![3.0, 2.0, 0.0]);
        let w = Matrix::from_vec(1, 3, vec![1.0, 1.0, 0.0]);
        assert_eq!(masked_mse(&pred, &gt, &w).unwrap(), 6.5);
    }

    #[test]
    fn masked_mse_rejects_an_empty_scoring_set() {
        let pred = Matrix::zeros(2, 2);
        let gt = Matrix::zeros(2, 2);
        let w = Matrix::zeros(2, 2);
        assert!(matches!(
            masked_mse(&pred, &gt, &w),
            Err(Error::EmptyMaskSet)
        ));
    }

    #[test]
    fn masked_mse_ignores_unscored_cells() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let pred = Matrix::from_fn(3, 5, |_, _| rng.random_range(-1.0..1.0));
        let gt = Matrix::from_fn(3, 5, |_, _| rng.random_range(-1.0..1.0));
        let w = Matrix::from_fn(3, 5, |r, c| ((r + c) % 2) as f64);
        let base = masked_mse(&pred, &gt, &w).unwrap();
        let mut spiked = pred.clone();
        for r in 0..3 {
            for c in 0..5 {
                if w.get(r, c) == 0.0 {
                    spiked.set(r, c, 1e9);
                }
            }
        }
        assert_eq!(masked_mse(&spiked, &gt, &w).unwrap(), base);
    }

    #[test]
    fn mask_seeds_differ_across_epochs_and_windows() {
        let mut seen = std::collections::HashSet::new();
        for epoch in 0..10 {
            for widx in 0..10 {
                assert!(seen.insert(mask_seed(42, epoch, widx)));
            }
        }
    }

    #[test]
    fn training_is_deterministic_for_a_fixed_seed() {
        let cfg = tiny_config();
        let series = smooth_series(3, 32, 7);
        let (m1, r1) = train(&cfg, &series).unwrap();
        let (m2, r2) = train(&cfg, &series).unwrap();
        assert_eq!(m1.params, m2.params);
        assert_eq!(r1.curve.len(), r2.curve.len());
        for (a, b) in r1.curve.iter().zip(&r2.curve) {
            assert_eq!(a.mean_loss, b.mean_loss);
            assert_eq!(a.mean_grad_norm, b.mean_grad_norm);
        }
    }

    #[test]
    fn zero_epochs_returns_the_initialized_model() {
        let mut cfg = tiny_config();
        cfg.epochs = 0;
        let series = smooth_series(3, 32, 8);
        let (trained, report) = train(&cfg, &series).unwrap();
        let partition = effective_partition(&cfg, &series);
        let fresh = Model::new(&cfg, 3, partition).unwrap();
        assert_eq!(trained.params, fresh.params);
        assert!(report.curve.is_empty());
    }

    #[test]
    fn a_few_epochs_reduce_the_training_loss() {
        let mut cfg = tiny_config();
        cfg.epochs = 30;
        let series = smooth_series(3, 64, 9);
        let (_, report) = train(&cfg, &series).unwrap();
        let first = report.curve.first().unwrap().mean_loss;
        let last = report.curve.last().unwrap().mean_loss;
        assert!(
            last < first,
            "loss should drop: first {first}, last {last}"
        );
    }

    #[test]
    fn direct_fit_drives_the_observed_loss_down() {
        let shape = InrShape {
            n_vars: 2,
            trend_degree: 2,
            fourier_terms: 2,
            hidden: 8,
            global_layers: 1,
            group_layers: 2,
            group_sizes: vec![2],
        };
        let cfg = Config::default();
        let series = smooth_series(2, 64, 10);
        let (std_w, _) = data::standardize(&series);
        let (params, losses) = fit_direct(&shape, &cfg, &std_w, 200, 1e-2, 3).unwrap();
        assert!(losses.last().unwrap() < &(losses[0] * 0.5), "curve {losses:?}");
        assert_eq!(params.blocks.len(), shape.n_blocks());
    }

    #[test]
    fn grouping_off_uses_one_group() {
        let cfg = tiny_config();
        let series = smooth_series(4, 32, 11);
        let p = effective_partition(&cfg, &series);
        assert_eq!(p, ClusterPartition::single_group(4));
    }

    #[test]
    fn training_gradient_matches_the_bias_closed_form() {
        // Freeze everything except one projection bias entry b. The INR
        // trend constant for variable 0 shifts every prediction of that
        // variable equally, so dL/db = sum over scored cells of
        // 2 (pred - gt) / |M| restricted to variable 0.
        let cfg = tiny_config();
        let series = smooth_series(2, 16, 12);
        let partition = effective_partition(&cfg, &series);
        let model = Model::new(&cfg, 2, partition).unwrap();
        let ex = build_example(&cluster::reorder(&series, &model.partition), 0.4, 5).unwrap();

        let mut fwd = model.forward(&ex.input).unwrap();
        let loss = fwd.tape.masked_mse(fwd.pred, &ex.target, &ex.score);
        let store = fwd.tape.backward(loss);

        // proj0 is the trend block (rows = vars). Bias column 0 is the
        // constant coefficient of variable 0 (row-major flattening).
        let bias_idx = fwd.param_vars[model.params.len() - 2 * model.n_inr_tokens() + 1];
        let g = store.grad(bias_idx);

        let pred = fwd.tape.value(fwd.pred);
        let m: f64 = ex.score.as_slice().iter().sum();
        let mut expect = 0.0;
        for t in 0..16 {
            if ex.score.get(0, t) == 1.0 {
                expect += 2.0 * (pred.get(0, t) - ex.target.get(0, t)) / m;
            }
        }
        assert!(
            (g.get(0, 0) - expect).abs() < 1e-10,
            "got {}, expected {expect}",
            g.get(0, 0)
        );
    }
}
