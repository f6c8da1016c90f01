//! The continuous imputation function: per-variable polynomial trend,
//! per-variable Fourier seasonal part, and the adaptive group-based
//! residual MLP. One [`InrParams`] bundle describes the function for a
//! single window, in reordered variable space.

use serde::{Deserialize, Serialize};

use crate::config::Activation;
use crate::matrix::Matrix;
use crate::tape::{Tape, Var};

use std::f64::consts::TAU;

/// Structural description of one window's INR function. The parameter
/// blocks of [`InrParams`] are fully determined by this.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InrShape {
    pub n_vars: usize,
    pub trend_degree: usize,
    pub fourier_terms: usize,
    pub hidden: usize,
    pub global_layers: usize,
    pub group_layers: usize,
    /// Sizes of the variable groups in reordered order; sums to `n_vars`.
    pub group_sizes: Vec<usize>,
}

/// One named parameter block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BlockKind {
    /// `N x (m+1)` polynomial coefficients, constant term first.
    Trend,
    /// `N x 2F`: sine coefficients in columns `0..F`, cosine in `F..2F`.
    Seasonal,
    /// Weight of global layer `l`: `h x 1` for the first layer, `h x h` after.
    GlobalW(usize),
    /// Bias of global layer `l`: `1 x h`.
    GlobalB(usize),
    /// Weight of layer `l` in group `k`: `h x h`, last layer `|C_k| x h`.
    GroupW(usize, usize),
    /// Bias of layer `l` in group `k`.
    GroupB(usize, usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub rows: usize,
    pub cols: usize,
}

impl BlockSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl InrShape {
    pub fn validate(&self) {
        assert!(self.n_vars > 0, "INR needs at least one variable");
        assert!(self.hidden > 0, "hidden width must be positive");
        assert!(self.global_layers > 0, "need at least one global layer");
        assert!(self.group_layers > 0, "need at least one group layer");
        assert!(!self.group_sizes.is_empty(), "need at least one group");
        assert!(self.group_sizes.iter().all(|&s| s > 0), "empty group");
        assert_eq!(
            self.group_sizes.iter().sum::<usize>(),
            self.n_vars,
            "group sizes must cover all variables"
        );
    }

    /// The ordered parameter-block layout of this shape. Block order is the
    /// contract shared by the hypernetwork projections, checkpointing, and
    /// parameter assembly.
    pub fn block_specs(&self) -> Vec<BlockSpec> {
        self.validate();
        let n = self.n_vars;
        let h = self.hidden;
        let mut specs = vec![BlockSpec {
            kind: BlockKind::Trend,
            rows: n,
            cols: self.trend_degree + 1,
        }];
        if self.fourier_terms > 0 {
            specs.push(BlockSpec {
                kind: BlockKind::Seasonal,
                rows: n,
                cols: 2 * self.fourier_terms,
            });
        }
        for l in 0..self.global_layers {
            let input = if l == 0 { 1 } else { h };
            specs.push(BlockSpec {
                kind: BlockKind::GlobalW(l),
                rows: h,
                cols: input,
            });
            specs.push(BlockSpec {
                kind: BlockKind::GlobalB(l),
                rows: 1,
                cols: h,
            });
        }
        for (k, &size) in self.group_sizes.iter().enumerate() {
            for l in 0..self.group_layers {
                let out = if l + 1 == self.group_layers { size } else { h };
                specs.push(BlockSpec {
                    kind: BlockKind::GroupW(k, l),
                    rows: out,
                    cols: h,
                });
                specs.push(BlockSpec {
                    kind: BlockKind::GroupB(k, l),
                    rows: 1,
                    cols: out,
                });
            }
        }
        specs
    }

    /// Total scalar parameter count across all blocks.
    pub fn total_len(&self) -> usize {
        self.block_specs().iter().map(BlockSpec::len).sum()
    }

    pub fn n_blocks(&self) -> usize {
        self.block_specs().len()
    }

    fn seasonal_present(&self) -> usize {
        usize::from(self.fourier_terms > 0)
    }

    pub fn trend_index(&self) -> usize {
        0
    }

    pub fn seasonal_index(&self) -> Option<usize> {
        (self.fourier_terms > 0).then_some(1)
    }

    pub fn global_w_index(&self, l: usize) -> usize {
        1 + self.seasonal_present() + 2 * l
    }

    pub fn global_b_index(&self, l: usize) -> usize {
        self.global_w_index(l) + 1
    }

    pub fn group_w_index(&self, k: usize, l: usize) -> usize {
        1 + self.seasonal_present()
            + 2 * self.global_layers
            + 2 * (k * self.group_layers + l)
    }

    pub fn group_b_index(&self, k: usize, l: usize) -> usize {
        self.group_w_index(k, l) + 1
    }
}

/// Parameter bundle for one window's INR function, blocks ordered per
/// [`InrShape::block_specs`].
#[derive(Clone, Debug, PartialEq)]
pub struct InrParams {
    pub shape: InrShape,
    pub blocks: Vec<Matrix>,
}

impl InrParams {
    pub fn zeros(shape: InrShape) -> Self {
        let blocks = shape
            .block_specs()
            .iter()
            .map(|s| Matrix::zeros(s.rows, s.cols))
            .collect();
        InrParams { shape, blocks }
    }

    pub fn from_blocks(shape: InrShape, blocks: Vec<Matrix>) -> Self {
        let specs = shape.block_specs();
        assert_eq!(blocks.len(), specs.len(), "block count");
        for (b, s) in blocks.iter().zip(&specs) {
            assert_eq!(b.shape(), (s.rows, s.cols), "block shape for {:?}", s.kind);
        }
        InrParams { shape, blocks }
    }

    pub fn trend(&self) -> &Matrix {
        &self.blocks[self.shape.trend_index()]
    }

    pub fn seasonal(&self) -> Option<&Matrix> {
        self.shape.seasonal_index().map(|i| &self.blocks[i])
    }

    pub fn global_w(&self, l: usize) -> &Matrix {
        &self.blocks[self.shape.global_w_index(l)]
    }

    pub fn global_b(&self, l: usize) -> &Matrix {
        &self.blocks[self.shape.global_b_index(l)]
    }

    pub fn group_w(&self, k: usize, l: usize) -> &Matrix {
        &self.blocks[self.shape.group_w_index(k, l)]
    }

    pub fn group_b(&self, k: usize, l: usize) -> &Matrix {
        &self.blocks[self.shape.group_b_index(k, l)]
    }

    pub fn total_len(&self) -> usize {
        self.blocks.iter().map(|b| b.rows() * b.cols()).sum()
    }
}

/// Polynomial trend at `t` via Horner evaluation; `coeffs[0]` is the
/// constant term.
pub fn trend_eval(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

/// Fourier seasonal part at `t` with integer frequencies `1..=F`.
pub fn seasonal_eval(sin_c: &[f64], cos_c: &[f64], t: f64) -> f64 {
    assert_eq!(sin_c.len(), cos_c.len(), "coefficient banks must align");
    let mut acc = 0.0;
    for (i, (s, c)) in sin_c.iter().zip(cos_c).enumerate() {
        let angle = TAU * (i + 1) as f64 * t;
        acc += s * angle.sin() + c * angle.cos();
    }
    acc
}

fn activate_scalar(x: f64, activation: Activation, omega: f64) -> f64 {
    match activation {
        Activation::Sine => (omega * x).sin(),
        Activation::Relu => x.max(0.0),
    }
}

fn affine(w: &Matrix, b: &Matrix, x: &[f64]) -> Vec<f64> {
    assert_eq!(w.cols(), x.len(), "affine input width");
    assert_eq!(b.shape(), (1, w.rows()), "affine bias shape");
    (0..w.rows())
        .map(|r| {
            w.row(r)
                .iter()
                .zip(x)
                .map(|(wv, xv)| wv * xv)
                .sum::<f64>()
                + b.get(0, r)
        })
        .collect()
}

/// Residual MLP at a single timestamp: the shared global layers followed by
/// each group's own layers, group outputs concatenated in group order. The
/// final layer of each group is linear; every other layer is activated.
pub fn residual_forward(
    params: &InrParams,
    activation: Activation,
    omega_first: f64,
    t: f64,
) -> Vec<f64> {
    let shape = &params.shape;
    let mut h = vec![t];
    for l in 0..shape.global_layers {
        let omega = if l == 0 { omega_first } else { 1.0 };
        h = affine(params.global_w(l), params.global_b(l), &h)
            .into_iter()
            .map(|x| activate_scalar(x, activation, omega))
            .collect();
    }
    let mut out = Vec::with_capacity(shape.n_vars);
    for k in 0..shape.group_sizes.len() {
        let mut g = h.clone();
        for l in 0..shape.group_layers {
            g = affine(params.group_w(k, l), params.group_b(k, l), &g);
            if l + 1 < shape.group_layers {
                g = g
                    .into_iter()
                    .map(|x| activate_scalar(x, activation, 1.0))
                    .collect();
            }
        }
        out.extend(g);
    }
    out
}

/// Full INR function at one timestamp: trend + seasonal + residual, per
/// variable, in reordered order.
pub fn inr_eval(
    params: &InrParams,
    activation: Activation,
    omega_first: f64,
    t: f64,
) -> Vec<f64> {
    let shape = &params.shape;
    let res = residual_forward(params, activation, omega_first, t);
    let f = shape.fourier_terms;
    (0..shape.n_vars)
        .map(|var| {
            let mut v = trend_eval(params.trend().row(var), t) + res[var];
            if let Some(sea) = params.seasonal() {
                v += seasonal_eval(&sea.row(var)[..f], &sea.row(var)[f..], t);
            }
            v
        })
        .collect()
}

/// Vandermonde-style basis: row `i` holds `t^i` for every timestamp.
pub fn powers_matrix(t_grid: &[f64], degree: usize) -> Matrix {
    let mut m = Matrix::zeros(degree + 1, t_grid.len());
    for (j, &t) in t_grid.iter().enumerate() {
        let mut p = 1.0;
        for i in 0..=degree {
            m.set(i, j, p);
            p *= t;
        }
    }
    m
}

/// Fourier basis: rows `0..F` hold `sin(2 pi i t)`, rows `F..2F` hold
/// `cos(2 pi i t)`, frequencies `i = 1..=F`.
pub fn fourier_basis(t_grid: &[f64], f: usize) -> Matrix {
    let mut m = Matrix::zeros(2 * f, t_grid.len());
    for (j, &t) in t_grid.iter().enumerate() {
        for i in 0..f {
            let angle = TAU * (i + 1) as f64 * t;
            m.set(i, j, angle.sin());
            m.set(f + i, j, angle.cos());
        }
    }
    m
}

fn activate_var(tape: &mut Tape, v: Var, activation: Activation, omega: f64) -> Var {
    match activation {
        Activation::Sine => tape.sine(v, omega),
        Activation::Relu => tape.relu(v),
    }
}

/// Differentiable batched INR evaluation on a tape: blocks are tape nodes
/// (ordered per [`InrShape::block_specs`]) and the result is the `N x T`
/// prediction over `t_grid`. This single implementation backs training,
/// imputation, and the direct-fit experiments.
pub fn inr_batch_forward(
    tape: &mut Tape,
    blocks: &[Var],
    shape: &InrShape,
    activation: Activation,
    omega_first: f64,
    t_grid: &[f64],
) -> Var {
    assert_eq!(blocks.len(), shape.n_blocks(), "block count");
    let powers = tape.leaf(powers_matrix(t_grid, shape.trend_degree));
    let mut acc = tape.matmul(blocks[shape.trend_index()], powers);
    if let Some(si) = shape.seasonal_index() {
        let basis = tape.leaf(fourier_basis(t_grid, shape.fourier_terms));
        let sea = tape.matmul(blocks[si], basis);
        acc = tape.add(acc, sea);
    }

    let mut h = tape.leaf(Matrix::from_vec(1, t_grid.len(), t_grid.to_vec()));
    for l in 0..shape.global_layers {
        let wx = tape.matmul(blocks[shape.global_w_index(l)], h);
        let z = tape.add_col_vec(wx, blocks[shape.global_b_index(l)]);
        let omega = if l == 0 { omega_first } else { 1.0 };
        h = activate_var(tape, z, activation, omega);
    }
    let mut residual: Option<Var> = None;
    for k in 0..shape.group_sizes.len() {
        let mut g = h;
        for l in 0..shape.group_layers {
            let wx = tape.matmul(blocks[shape.group_w_index(k, l)], g);
            g = tape.add_col_vec(wx, blocks[shape.group_b_index(k, l)]);
            if l + 1 < shape.group_layers {
                g = activate_var(tape, g, activation, 1.0);
            }
        }
        residual = Some(match residual {
            None => g,
            Some(r) => tape.concat_rows(r, g),
        });
    }
    let res = residual.expect("at least one group");
    tape.add(acc, res)
}

/// Query the INR function at arbitrary timestamps; column `j` of the
/// result is the function value at `t_grid[j]`.
pub fn query_series(
    params: &InrParams,
    activation: Activation,
    omega_first: f64,
    t_grid: &[f64],
) -> Matrix {
    let mut tape = Tape::new();
    let blocks: Vec<Var> = params.blocks.iter().map(|b| tape.leaf(b.clone())).collect();
    let out = inr_batch_forward(
        &mut tape,
        &blocks,
        &params.shape,
        activation,
        omega_first,
        t_grid,
    );
    tape.value(out).clone()
}
