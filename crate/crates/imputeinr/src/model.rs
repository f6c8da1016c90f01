//! The full hypernetwork model: multi-scale encoder, transformer over
//! data and INR tokens, and per-token projections into the INR parameter
//! blocks. Owns every learnable tensor and the forward pass that turns a
//! preprocessed window into an `N x T` prediction.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::cluster::{self, ClusterPartition};
use crate::config::Config;
use crate::data::{self, StandardizationStats, TimeSeriesWindow};
use crate::encoder;
use crate::error::{Error, Result};
use crate::inr::{self, BlockKind, InrParams, InrShape};
use crate::matrix::Matrix;
use crate::tape::{Tape, Var};
use crate::transformer::{self, BlockVars};

/// Named learnable tensors in registration order. The order is the
/// checkpoint layout, the gradient layout, and the optimizer layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Matrix>,
}

impl ParamSet {
    fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    fn push(&mut self, name: String, tensor: Matrix) -> usize {
        self.names.push(name);
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn tensor(&self, i: usize) -> &Matrix {
        &self.tensors[i]
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix] {
        &mut self.tensors
    }

    pub fn total_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.rows() * t.cols()).sum()
    }
}

#[derive(Debug)]
struct BlockIdx {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug)]
struct ModelIndex {
    conv: Vec<(usize, usize)>,
    embed: (usize, usize),
    blocks: Vec<BlockIdx>,
    token_bank: usize,
    proj: Vec<(usize, usize)>,
}

/// Hypernetwork model bound to a variable count and a cluster partition.
#[derive(Debug)]
pub struct Model {
    pub cfg: Config,
    pub n_vars: usize,
    pub partition: ClusterPartition,
    pub inr_shape: InrShape,
    pub params: ParamSet,
    idx: ModelIndex,
}

/// A completed forward pass: the tape, the leaf handle of every learnable
/// tensor, the assembled INR parameter blocks, the `N x T` prediction, and
/// the attention probability nodes.
pub struct Forward {
    pub tape: Tape,
    pub param_vars: Vec<Var>,
    pub inr_blocks: Vec<Var>,
    pub pred: Var,
    pub probs: Vec<Var>,
}

/// One window imputed: the filled grid in original units and order, plus
/// the standardized prediction and the stats that link the two.
pub struct ImputedWindow {
    pub filled: Matrix,
    pub pred_std: Matrix,
    pub stats: StandardizationStats,
}

/// Resolve the partition the model should use given the ablation flags:
/// learned clusters, contiguous fallback groups, or one big group.
pub fn effective_partition(cfg: &Config, series: &TimeSeriesWindow) -> ClusterPartition {
    let n = series.n_vars();
    if !cfg.grouping {
        return ClusterPartition::single_group(n);
    }
    if !cfg.clustering {
        return ClusterPartition::contiguous(n, cfg.fallback_groups);
    }
    let (std_series, _) = data::standardize(series);
    let s = cluster::similarity_matrix(&std_series);
    cluster::agglomerate(&s, cfg.epsilon)
}

impl Model {
    /// Initialize all weights from the config seed. The same config,
    /// variable count, and partition always produce identical tensors.
    pub fn new(cfg: &Config, n_vars: usize, partition: ClusterPartition) -> Result<Model> {
        cfg.validate()?;
        if n_vars == 0 {
            return Err(Error::EmptyData("model needs at least one variable".into()));
        }
        if partition.n_vars() != n_vars {
            return Err(Error::Shape(format!(
                "partition covers {} variables, window has {n_vars}",
                partition.n_vars()
            )));
        }
        let inr_shape = InrShape {
            n_vars,
            trend_degree: cfg.trend_degree,
            fourier_terms: cfg.fourier_terms,
            hidden: cfg.hidden,
            global_layers: cfg.global_layers,
            group_layers: cfg.group_layers,
            group_sizes: partition.group_sizes(),
        };
        inr_shape.validate();

        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        let mut params = ParamSet::new();
        let uniform = |rng: &mut ChaCha12Rng, rows: usize, cols: usize, bound: f64| {
            Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
        };

        let in_channels = 2 * n_vars;
        let mut conv = Vec::new();
        if cfg.multi_scale {
            for &k in &cfg.kernel_sizes {
                let fan_in = (in_channels * k) as f64;
                let w = uniform(&mut rng, cfg.conv_channels, in_channels * k, 1.0 / fan_in.sqrt());
                let wi = params.push(format!("conv{k}.w"), w);
                let bi = params.push(format!("conv{k}.b"), Matrix::zeros(1, cfg.conv_channels));
                conv.push((wi, bi));
            }
        }
        let feature_channels = if cfg.multi_scale {
            cfg.conv_channels * cfg.kernel_sizes.len()
        } else {
            in_channels
        };
        let patch_dim = feature_channels * cfg.patch_len;
        let embed_w = uniform(&mut rng, cfg.d_model, patch_dim, 1.0 / (patch_dim as f64).sqrt());
        let embed = (
            params.push("embed.w".into(), embed_w),
            params.push("embed.b".into(), Matrix::zeros(1, cfg.d_model)),
        );

        let d = cfg.d_model;
        let ff = cfg.ff_mult * d;
        let db = 1.0 / (d as f64).sqrt();
        let mut blocks = Vec::new();
        for b in 0..cfg.n_blocks {
            let idx = BlockIdx {
                ln1_g: params.push(format!("block{b}.ln1.g"), Matrix::filled(1, d, 1.0)),
                ln1_b: params.push(format!("block{b}.ln1.b"), Matrix::zeros(1, d)),
                wq: params.push(format!("block{b}.attn.wq"), uniform(&mut rng, d, d, db)),
                bq: params.push(format!("block{b}.attn.bq"), Matrix::zeros(1, d)),
                wk: params.push(format!("block{b}.attn.wk"), uniform(&mut rng, d, d, db)),
                bk: params.push(format!("block{b}.attn.bk"), Matrix::zeros(1, d)),
                wv: params.push(format!("block{b}.attn.wv"), uniform(&mut rng, d, d, db)),
                bv: params.push(format!("block{b}.attn.bv"), Matrix::zeros(1, d)),
                wo: params.push(format!("block{b}.attn.wo"), uniform(&mut rng, d, d, db)),
                bo: params.push(format!("block{b}.attn.bo"), Matrix::zeros(1, d)),
                ln2_g: params.push(format!("block{b}.ln2.g"), Matrix::filled(1, d, 1.0)),
                ln2_b: params.push(format!("block{b}.ln2.b"), Matrix::zeros(1, d)),
                w1: params.push(format!("block{b}.ff.w1"), uniform(&mut rng, ff, d, db)),
                b1: params.push(format!("block{b}.ff.b1"), Matrix::zeros(1, ff)),
                w2: params.push(
                    format!("block{b}.ff.w2"),
                    uniform(&mut rng, d, ff, 1.0 / (ff as f64).sqrt()),
                ),
                b2: params.push(format!("block{b}.ff.b2"), Matrix::zeros(1, d)),
            };
            blocks.push(idx);
        }

        let specs = inr_shape.block_specs();
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let bank = Matrix::from_fn(specs.len(), d, |_, _| normal.sample(&mut rng));
        let token_bank = params.push("inr.token_bank".into(), bank);

        let mut proj = Vec::new();
        let h = cfg.hidden as f64;
        for (i, spec) in specs.iter().enumerate() {
            let len = spec.len();
            let w = uniform(&mut rng, len, d, db);
            let wi = params.push(format!("proj{i}.w"), w);
            // The projection bias is the INR parameter block the model
            // starts from, so it carries the sine-network initialization.
            let bound = match spec.kind {
                BlockKind::Trend | BlockKind::Seasonal => 0.0,
                BlockKind::GlobalW(0) => 1.0,
                BlockKind::GlobalW(_) => (6.0 / h).sqrt(),
                BlockKind::GroupW(_, l) if l + 1 == cfg.group_layers => 1.0 / h.sqrt(),
                BlockKind::GroupW(_, _) => (6.0 / h).sqrt(),
                BlockKind::GlobalB(_) | BlockKind::GroupB(_, _) => 0.0,
            };
            let b = if bound == 0.0 {
                Matrix::zeros(1, len)
            } else {
                uniform(&mut rng, 1, len, bound)
            };
            let bi = params.push(format!("proj{i}.b"), b);
            proj.push((wi, bi));
        }

        Ok(Model {
            cfg: cfg.clone(),
            n_vars,
            partition,
            inr_shape,
            params,
            idx: ModelIndex {
                conv,
                embed,
                blocks,
                token_bank,
                proj,
            },
        })
    }

    /// Stack masked values and the mask itself into the `2N x T` encoder
    /// input. Values are zeroed wherever the mask is 0 so hidden cells
    /// cannot leak through the conditioning path.
    fn encoder_input(&self, w: &TimeSeriesWindow) -> Matrix {
        let n = w.n_vars();
        let t = w.len();
        Matrix::from_fn(2 * n, t, |r, c| {
            if r < n {
                w.values.get(r, c) * w.mask.get(r, c)
            } else {
                w.mask.get(r - n, c)
            }
        })
    }

    /// Forward pass on the model's own tensors.
    pub fn forward(&self, w: &TimeSeriesWindow) -> Result<Forward> {
        self.forward_with_tensors(self.params.tensors(), w)
    }

    /// Forward pass on explicit tensors (the gradient checker perturbs
    /// copies). `tensors` must match the registration layout.
    pub fn forward_with_tensors(
        &self,
        tensors: &[Matrix],
        w: &TimeSeriesWindow,
    ) -> Result<Forward> {
        assert_eq!(tensors.len(), self.params.len(), "tensor layout");
        let cfg = &self.cfg;
        if w.n_vars() != self.n_vars {
            return Err(Error::Shape(format!(
                "window has {} variables, model expects {}",
                w.n_vars(),
                self.n_vars
            )));
        }
        if !w.len().is_multiple_of(cfg.patch_len) {
            return Err(Error::Patch {
                patch_len: cfg.patch_len,
                len: w.len(),
            });
        }

        let mut tape = Tape::new();
        let param_vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let x_in = self.encoder_input(w);

        let features = if cfg.multi_scale {
            let mut acc: Option<Var> = None;
            for (scale, &(wi, bi)) in self.idx.conv.iter().enumerate() {
                let k = cfg.kernel_sizes[scale];
                let col = tape.leaf(encoder::im2col(&x_in, k));
                let out = encoder::conv_forward(&mut tape, param_vars[wi], param_vars[bi], col);
                acc = Some(match acc {
                    None => out,
                    Some(prev) => tape.concat_rows(prev, out),
                });
            }
            acc.expect("at least one scale")
        } else {
            tape.leaf(x_in)
        };

        let (ewi, ebi) = self.idx.embed;
        let tokens = encoder::patchify_embed(
            &mut tape,
            features,
            cfg.patch_len,
            param_vars[ewi],
            param_vars[ebi],
        );
        let m = w.len() / cfg.patch_len;
        let pe = encoder::sinusoidal_pe(m, cfg.d_model);
        let tokens = tape.add_const(tokens, &pe);

        let mut seq = tape.concat_rows(tokens, param_vars[self.idx.token_bank]);
        let mut probs = Vec::new();
        for idx in &self.idx.blocks {
            let vars = BlockVars {
                ln1_g: param_vars[idx.ln1_g],
                ln1_b: param_vars[idx.ln1_b],
                wq: param_vars[idx.wq],
                bq: param_vars[idx.bq],
                wk: param_vars[idx.wk],
                bk: param_vars[idx.bk],
                wv: param_vars[idx.wv],
                bv: param_vars[idx.bv],
                wo: param_vars[idx.wo],
                bo: param_vars[idx.bo],
                ln2_g: param_vars[idx.ln2_g],
                ln2_b: param_vars[idx.ln2_b],
                w1: param_vars[idx.w1],
                b1: param_vars[idx.b1],
                w2: param_vars[idx.w2],
                b2: param_vars[idx.b2],
            };
            seq = transformer::block_forward(&mut tape, seq, &vars, cfg.n_heads, &mut probs);
        }

        let specs = self.inr_shape.block_specs();
        let inr_slice = tape.slice_rows(seq, m, specs.len());
        let mut inr_blocks = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let (wi, bi) = self.idx.proj[i];
            let token = tape.slice_rows(inr_slice, i, 1);
            let flat = tape.matmul_nt(token, param_vars[wi]);
            let flat = tape.add_row_vec(flat, param_vars[bi]);
            inr_blocks.push(tape.reshape(flat, spec.rows, spec.cols));
        }

        let pred = inr::inr_batch_forward(
            &mut tape,
            &inr_blocks,
            &self.inr_shape,
            cfg.activation,
            cfg.omega_first,
            &w.t_grid,
        );
        if !tape.value(pred).all_finite() {
            return Err(Error::Numerics("non-finite prediction".into()));
        }

        Ok(Forward {
            tape,
            param_vars,
            inr_blocks,
            pred,
            probs,
        })
    }

    /// Predict the INR parameter bundle for one preprocessed window.
    pub fn predict_inr_params(&self, w: &TimeSeriesWindow) -> Result<InrParams> {
        let fwd = self.forward(w)?;
        let blocks = fwd
            .inr_blocks
            .iter()
            .map(|&v| fwd.tape.value(v).clone())
            .collect();
        Ok(InrParams::from_blocks(self.inr_shape.clone(), blocks))
    }

    /// Impute one window given in original units and original variable
    /// order: reorder, standardize, predict, query the INR function on the
    /// window's own grid, then map back. Observed cells are retained
    /// bit-exactly in `filled`.
    pub fn impute_window(&self, w: &TimeSeriesWindow) -> Result<ImputedWindow> {
        let reordered = cluster::reorder(w, &self.partition);
        let (std_w, stats) = data::standardize(&reordered);
        let params = self.predict_inr_params(&std_w)?;
        let pred = inr::query_series(
            &params,
            self.cfg.activation,
            self.cfg.omega_first,
            &std_w.t_grid,
        );
        if !pred.all_finite() {
            return Err(Error::Numerics("non-finite imputation".into()));
        }
        let pred_raw = data::destandardize(&pred, &stats);
        let merged = data::merge_imputed(&reordered, &pred_raw)?;

        let filled = cluster::inverse_reorder_grid(&merged, &self.partition);
        let pred_std = cluster::inverse_reorder_grid(&pred, &self.partition);
        let mut mean = vec![0.0; self.n_vars];
        let mut std = vec![1.0; self.n_vars];
        for j in 0..self.n_vars {
            mean[self.partition.pi[j]] = stats.mean[j];
            std[self.partition.pi[j]] = stats.std[j];
        }
        Ok(ImputedWindow {
            filled,
            pred_std,
            stats: StandardizationStats { mean, std },
        })
    }

    /// Number of INR tokens (one per parameter block).
    pub fn n_inr_tokens(&self) -> usize {
        self.inr_shape.n_blocks()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> Config {
        Config {
            window: 16,
            stride: 16,
            kernel_sizes: vec![3, 5],
            conv_channels: 3,
            patch_len: 4,
            d_model: 8,
            n_blocks: 2,
            n_heads: 2,
            ff_mult: 2,
            trend_degree: 2,
            fourier_terms: 2,
            hidden: 6,
            global_layers: 1,
            group_layers: 1,
            epochs: 1,
            ..Config::default()
        }
    }

    fn sample_window(n: usize, t: usize, seed: u64) -> TimeSeriesWindow {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        TimeSeriesWindow::new(
            Matrix::from_fn(n, t, |_, _| rng.random_range(-1.0..1.0)),
            Matrix::from_fn(n, t, |_, _| if rng.random_range(0.0..1.0) < 0.2 { 0.0 } else { 1.0 }),
            (0..n).map(|i| format!("v{i}")).collect(),
        )
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = tiny_config();
        let p = ClusterPartition::contiguous(4, 2);
        let a = Model::new(&cfg, 4, p.clone()).unwrap();
        let b = Model::new(&cfg, 4, p).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn projection_sizes_cover_the_parameter_census() {
        let cfg = Config::default();
        let partition = ClusterPartition::from_assignment(&[0, 0, 0, 1, 1, 2, 2]);
        let model = Model::new(&cfg, 7, partition).unwrap();
        let specs = model.inr_shape.block_specs();
        assert_eq!(model.n_inr_tokens(), specs.len());
        let proj_out: usize = (0..specs.len())
            .map(|i| {
                let name = format!("proj{i}.b");
                let idx = (0..model.params.len())
                    .find(|&j| model.params.name(j) == name)
                    .unwrap();
                model.params.tensor(idx).cols()
            })
            .sum();
        assert_eq!(proj_out, model.inr_shape.total_len());
    }

    #[test]
    fn forward_is_deterministic_and_finite() {
        let cfg = tiny_config();
        let w = sample_window(4, 16, 3);
        let reordered = cluster::reorder(&w, &ClusterPartition::contiguous(4, 2));
        let (std_w, _) = data::standardize(&reordered);
        let model = Model::new(&cfg, 4, ClusterPartition::contiguous(4, 2)).unwrap();
        let a = model.predict_inr_params(&std_w).unwrap();
        let b = model.predict_inr_params(&std_w).unwrap();
        assert_eq!(a, b);
        for blk in &a.blocks {
            assert!(blk.all_finite());
        }

        let other = sample_window(4, 16, 4);
        let (other_std, _) = data::standardize(&other);
        let c = model.predict_inr_params(&other_std).unwrap();
        assert_ne!(a, c, "different windows should condition differently");
    }

    #[test]
    fn zero_block_weights_sever_conditioning() {
        let cfg = tiny_config();
        let partition = ClusterPartition::contiguous(4, 2);
        let mut model = Model::new(&cfg, 4, partition).unwrap();
        for i in 0..model.params.len() {
            if model.params.name(i).starts_with("block") {
                let shape = model.params.tensor(i).shape();
                model.params.tensors_mut()[i] = Matrix::zeros(shape.0, shape.1);
            }
        }
        let (w1, _) = data::standardize(&sample_window(4, 16, 5));
        let (w2, _) = data::standardize(&sample_window(4, 16, 6));
        let a = model.predict_inr_params(&w1).unwrap();
        let b = model.predict_inr_params(&w2).unwrap();
        assert_eq!(a, b, "with zero blocks the data path must be severed");

        // And the blocks must equal the projected token bank rows.
        let bank = model.params.tensor(model.idx.token_bank).clone();
        for (i, spec) in model.inr_shape.block_specs().iter().enumerate() {
            let (wi, bi) = model.idx.proj[i];
            let w = model.params.tensor(wi);
            let bv = model.params.tensor(bi);
            let mut expect = Matrix::zeros(1, spec.len());
            for c in 0..spec.len() {
                let mut acc = bv.get(0, c);
                for j in 0..cfg.d_model {
                    acc += w.get(c, j) * bank.get(i, j);
                }
                expect.set(0, c, acc);
            }
            let got = &a.blocks[i];
            let flat = Matrix::from_vec(1, spec.len(), got.as_slice().to_vec());
            assert!(flat.max_abs_diff(&expect) < 1e-12, "block {i}");
        }
    }

    #[test]
    fn hidden_values_cannot_leak_into_predictions() {
        let cfg = tiny_config();
        let partition = ClusterPartition::single_group(3);
        let model = Model::new(&cfg, 3, partition).unwrap();

        let mut w = sample_window(3, 16, 9);
        w.mask.set(1, 7, 0.0);
        w.values.set(1, 7, 0.0);
        let a = model.predict_inr_params(&w).unwrap();

        w.values.set(1, 7, 999.0);
        let b = model.predict_inr_params(&w).unwrap();
        assert_eq!(a, b, "masked cell value must not influence the forward pass");
    }

    #[test]
    fn positional_encoding_orders_tokens() {
        let cfg = tiny_config();
        let model = Model::new(&cfg, 4, ClusterPartition::single_group(4)).unwrap();
        let (w, _) = data::standardize(&sample_window(4, 16, 10));

        // Swap two whole patches in time: same multiset of tokens,
        // different order. With positional codes the output must change.
        let mut swapped = w.clone();
        for var in 0..4 {
            for j in 0..cfg.patch_len {
                let a = w.values.get(var, j);
                let b = w.values.get(var, 8 + j);
                swapped.values.set(var, j, b);
                swapped.values.set(var, 8 + j, a);
                let am = w.mask.get(var, j);
                let bm = w.mask.get(var, 8 + j);
                swapped.mask.set(var, j, bm);
                swapped.mask.set(var, 8 + j, am);
            }
        }
        let a = model.predict_inr_params(&w).unwrap();
        let b = model.predict_inr_params(&swapped).unwrap();
        assert_ne!(a, b, "patch order must matter");
    }

    #[test]
    fn attention_probabilities_normalized_in_full_model() {
        let cfg = tiny_config();
        let model = Model::new(&cfg, 4, ClusterPartition::contiguous(4, 2)).unwrap();
        let (w, _) = data::standardize(&sample_window(4, 16, 11));
        let fwd = model.forward(&w).unwrap();
        assert_eq!(fwd.probs.len(), cfg.n_blocks * cfg.n_heads);
        for p in &fwd.probs {
            let m = fwd.tape.value(*p);
            for r in 0..m.rows() {
                let sum: f64 = m.row(r).iter().sum();
                assert!((sum - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn no_multiscale_patchifies_raw_channels() {
        let mut cfg = tiny_config();
        cfg.multi_scale = false;
        let model = Model::new(&cfg, 4, ClusterPartition::single_group(4)).unwrap();
        assert!(model.idx.conv.is_empty());
        // embed weight consumes 2N * patch_len inputs
        let (ewi, _) = model.idx.embed;
        assert_eq!(model.params.tensor(ewi).cols(), 8 * cfg.patch_len);
        let (w, _) = data::standardize(&sample_window(4, 16, 12));
        model.forward(&w).unwrap();
    }

    #[test]
    fn impute_window_retains_observations() {
        let cfg = tiny_config();
        let w = sample_window(4, 16, 13);
        let partition = effective_partition(&cfg, &w);
        let model = Model::new(&cfg, 4, partition).unwrap();
        let out = model.impute_window(&w).unwrap();
        assert!(out.filled.all_finite());
        for var in 0..4 {
            for t in 0..16 {
                if w.mask.get(var, t) == 1.0 {
                    assert_eq!(out.filled.get(var, t), w.values.get(var, t));
                }
            }
        }
    }
}
