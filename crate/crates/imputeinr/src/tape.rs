//! Reverse-mode automatic differentiation over matrix-valued operations.
//!
//! A [`Tape`] records each forward operation together with a closure that
//! propagates the output adjoint back to the operands. Calling
//! [`Tape::backward`] on a scalar node walks the record in reverse and
//! returns the gradient of that scalar with respect to every node, so the
//! training loop can read off gradients for the leaves it registered as
//! parameters.
//!
//! The operation set is exactly what the imputation pipeline needs: affine
//! maps, attention primitives (softmax, layer norm, slicing/concatenation
//! for heads), the activations, patch extraction, and the masked
//! reconstruction loss.

use crate::matrix::Matrix;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Gradients for every tape node, indexed by [`Var`].
pub struct GradStore {
    grads: Vec<Matrix>,
    touched: Vec<bool>,
}

impl GradStore {
    fn new(shapes: &[(usize, usize)]) -> Self {
        GradStore {
            grads: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            touched: vec![false; shapes.len()],
        }
    }

    fn accumulate(&mut self, idx: usize, delta: &Matrix) {
        self.grads[idx].axpy(delta, 1.0);
        self.touched[idx] = true;
    }

    fn seed(&mut self, idx: usize) {
        self.grads[idx] = Matrix::filled(1, 1, 1.0);
        self.touched[idx] = true;
    }

    pub fn grad(&self, v: Var) -> &Matrix {
        &self.grads[v.0]
    }

    pub fn all_finite(&self) -> bool {
        self.grads
            .iter()
            .zip(&self.touched)
            .all(|(g, &t)| !t || g.all_finite())
    }
}

type BackFn = Box<dyn Fn(&Matrix, &[Matrix], &mut GradStore)>;

/// Recorded computation graph.
#[derive(Default)]
pub struct Tape {
    values: Vec<Matrix>,
    backs: Vec<BackFn>,
}

const LN_EPS: f64 = 1e-5;

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.values[v.0]
    }

    fn push(&mut self, value: Matrix, back: BackFn) -> Var {
        self.values.push(value);
        self.backs.push(back);
        Var(self.values.len() - 1)
    }

    /// Register an input. Leaves receive gradients; use this for parameters
    /// and for constants alike (constant gradients are simply never read).
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Box::new(|_, _, _| {}))
    }

    /// `a @ b`
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.values[a.0].matmul(&self.values[b.0]);
        self.push(
            value,
            Box::new(move |dy, vals, gs| {
                gs.accumulate(a.0, &dy.matmul_nt(&vals[b.0]));
                gs.accumulate(b.0, &vals[a.0].matmul_tn(dy));
            }),
        )
    }

    /// `a @ b^T`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = self.values[a.0].matmul_nt(&self.values[b.0]);
        self.push(
            value,
            Box::new(move |dy, vals, gs| {
                gs.accumulate(a.0, &dy.matmul(&vals[b.0]));
                gs.accumulate(b.0, &dy.matmul_tn(&vals[a.0]));
            }),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.values[a.0].add(&self.values[b.0]);
        self.push(
            value,
            Box::new(move |dy, _, gs| {
                gs.accumulate(a.0, dy);
                gs.accumulate(b.0, dy);
            }),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.values[a.0].sub(&self.values[b.0]);
        self.push(
            value,
            Box::new(move |dy, _, gs| {
                gs.accumulate(a.0, dy);
                gs.accumulate(b.0, &dy.scale(-1.0));
            }),
        )
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.values[a.0].scale(s);
        self.push(
            value,
            Box::new(move |dy, _, gs| {
                gs.accumulate(a.0, &dy.scale(s));
            }),
        )
    }

    /// Add a fixed matrix (e.g. a positional encoding) that needs no gradient.
    pub fn add_const(&mut self, a: Var, m: &Matrix) -> Var {
        let value = self.values[a.0].add(m);
        self.push(
            value,
            Box::new(move |dy, _, gs| {
                gs.accumulate(a.0, dy);
            }),
        )
    }

    /// Broadcast a `1 x cols` bias over every row of `a`.
    pub fn add_row_vec(&mut self, a: Var, b: Var) -> Var {
        let (rows, cols) = self.values[a.0].shape();
        assert_eq!(self.values[b.0].shape(), (1, cols), "row bias shape");
        let bias = self.values[b.0].row(0).to_vec();
        let mut value = self.values[a.0].clone();
        for r in 0..rows {
            for (v, bv) in value.row_mut(r).iter_mut().zip(&bias) {
                *v += bv;
            }
        }
        self.push(
            value,
            Box::new(move |dy, _, gs| {
                gs.accumulate(a.0, dy);
                let mut db = Matrix::zeros(1, cols);
                for r in 0..dy.rows() {
                    for c in 0..cols {
                        db.set(0, c, db.get(0, c) + dy.get(r, c));
                    }
                }
                gs.accumulate(b.0, &db);
            }),
        )
    }

    /// Broadcast a `1 x rows` bias down every column of `a` (entry `r` is
    /// added to all of row `r`).
    pub fn add_col_vec(&mut self, a: Var, b: Var) -> Var {
        let rows = self.values[a.0].rows();
        assert_eq!(self.values[b.0].shape(), (1, rows), "col bias shape");
        let mut value = self.values[a.0].clone();
        for r in 0..rows {
            let bias = self.values[b.0].get(0, r);
            for v in value.row_mut(r) {
                *v += bias;
            }
        }
        self.push(
            value,
            Box::new(move |dy, _, gs| {
                gs.accumulate(a.0, dy);
                let mut db = Matrix::zeros(1, rows);
                for r in 0..rows {
                    db.set(0, r, dy.row(r).iter().sum());
                }
                gs.accumulate(b.0, &db);
            }),
        )
    }

    /// Multiply every row of `a` elementwise by a `1 x cols` vector.
    pub fn mul_row_vec(&mut self, a: Var, g: Var) -> Var {
        let (rows, cols) = self.values[a.0].shape();
        assert_eq!(self.values[g.0].shape(), (1, cols), "row scale shape");
        let gains = self.values[g.0].row(0).to_vec();
        let mut value = self.values[a.0].clone();
        for r in 0..rows {
            for (v, s) in value.row_mut(r).iter_mut().zip(&gains) {
                *v *= s;
            }
        }
        self.push(
            value,
            Box::new(move |dy, vals, gs| {
                let av = &vals[a.0];
                let gv = &vals[g.0];
                let mut da = Matrix::zeros(rows, cols);
                let mut dg = Matrix::zeros(1, cols);
                for r in 0..rows {
                    for c in 0..cols {
                        da.set(r, c, dy.get(r, c) * gv.get(0, c));
                        dg.set(0, c, dg.get(0, c) + dy.get(r, c) * av.get(r, c));
                    }
                }
                gs.accumulate(a.0, &da);
                gs.accumulate(g.0, &dg);
            }),
        )
    }

    /// `sin(omega * a)` elementwise.
    pub fn sine(&mut self, a: Var, omega: f64) -> Var {
        let value = self.values[a.0].map(|x| (omega * x).sin());
        self.push(
            value,
            Box::new(move |dy, vals, gs| {
                let av = &vals[a.0];
                let mut da = Matrix::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    for c in 0..av.cols() {
                        da.set(r, c, dy.get(r, c) * omega * (omega * av.get(r, c)).cos());
                    }
                }
                gs.accumulate(a.0, &da);
            }),
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.values[a.0].map(|x| x.max(0.0));
        self.push(
            value,
            Box::new(move |dy, vals, gs| {
                let av = &vals[a.0];
                let mut da = Matrix::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    for c in 0..av.cols() {
                        if av.get(r, c) > 0.0 {
                            da.set(r, c, dy.get(r, c));
                        }
                    }
                }
                gs.accumulate(a.0, &da);
            }),
        )
    }

    /// GELU via the tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.values[a.0].map(gelu_fwd);
        self.push(
            value,
            Box::new(move |dy, vals, gs| {
                let av = &vals[a.0];
                let mut da = Matrix::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    for c in 0..av.cols() {
                        da.set(r, c, dy.get(r, c) * gelu_grad(av.get(r, c)));
                    }
                }
                gs.accumulate(a.0, &da);
            }),
        )
    }

    /// Row-wise softmax (numerically stabilized).
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = &self.values[a.0];
        let (rows, cols) = av.shape();
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let row = av.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (c, &x) in row.iter().enumerate() {
                let e = (x - max).exp();
                value.set(r, c, e);
                sum += e;
            }
            for c in 0..cols {
                value.set(r, c, value.get(r, c) / sum);
            }
        }
        let y_cache = value.clone();
        self.push(
            value,
            Box::new(move |dy, _, gs| {
                let mut da = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    let y = y_cache.row(r);
                    let d = dy.row(r);
                    let dot: f64 = y.iter().zip(d).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        da.set(r, c, y[c] * (d[c] - dot));
                    }
                }
                gs.accumulate(a.0, &da);
            }),
        )
    }

    /// Row-wise layer normalization (no affine part).
    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        let av = &self.values[a.0];
        let (rows, cols) = av.shape();
        let mut value = Matrix::zeros(rows, cols);
        let mut sigmas = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = av.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cols as f64;
            let sigma = (var + LN_EPS).sqrt();
            sigmas.push(sigma);
            for (c, &x) in row.iter().enumerate() {
                value.set(r, c, (x - mean) / sigma);
            }
        }
        let y_cache = value.clone();
        self.push(
            value,
            Box::new(move |dy, _, gs| {
                let mut da = Matrix::zeros(rows, cols);
                for (r, &sigma) in sigmas.iter().enumerate() {
                    let y = y_cache.row(r);
                    let d = dy.row(r);
                    let mean_dy = d.iter().sum::<f64>() / cols as f64;
                    let mean_dyy = d.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                    for c in 0..cols {
                        da.set(r, c, (d[c] - mean_dy - y[c] * mean_dyy) / sigma);
                    }
                }
                gs.accumulate(a.0, &da);
            }),
        )
    }

    /// Vertical concatenation `[a; b]`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let (ar, cols) = self.values[a.0].shape();
        let (br, bcols) = self.values[b.0].shape();
        assert_eq!(cols, bcols, "concat_rows widths");
        let mut data = Vec::with_capacity((ar + br) * cols);
        data.extend_from_slice(self.values[a.0].as_slice());
        data.extend_from_slice(self.values[b.0].as_slice());
        let value = Matrix::from_vec(ar + br, cols, data);
        self.push(
            value,
            Box::new(move |dy, _, gs| {
                let mut da = Matrix::zeros(ar, cols);
                let mut db = Matrix::zeros(br, cols);
                for r in 0..ar {
                    da.row_mut(r).copy_from_slice(dy.row(r));
                }
                for r in 0..br {
                    db.row_mut(r).copy_from_slice(dy.row(ar + r));
                }
                gs.accumulate(a.0, &da);
                gs.accumulate(b.0, &db);
            }),
        )
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (rows, cols) = self.values[a.0].shape();
        assert!(start + len <= rows, "slice_rows range");
        let mut value = Matrix::zeros(len, cols);
        for r in 0..len {
            value.row_mut(r).copy_from_slice(self.values[a.0].row(start + r));
        }
        self.push(
            value,
            Box::new(move |dy, _, gs| {
                let mut da = Matrix::zeros(rows, cols);
                for r in 0..len {
                    da.row_mut(start + r).copy_from_slice(dy.row(r));
                }
                gs.accumulate(a.0, &da);
            }),
        )
    }

    /// Horizontal concatenation `[a, b]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (rows, ac) = self.values[a.0].shape();
        let (brows, bc) = self.values[b.0].shape();
        assert_eq!(rows, brows, "concat_cols heights");
        let mut value = Matrix::zeros(rows, ac + bc);
        for r in 0..rows {
            value.row_mut(r)[..ac].copy_from_slice(self.values[a.0].row(r));
            value.row_mut(r)[ac..].copy_from_slice(self.values[b.0].row(r));
        }
        self.push(
            value,
            Box::new(move |dy, _, gs| {
                let mut da = Matrix::zeros(rows, ac);
                let mut db = Matrix::zeros(rows, bc);
                for r in 0..rows {
                    da.row_mut(r).copy_from_slice(&dy.row(r)[..ac]);
                    db.row_mut(r).copy_from_slice(&dy.row(r)[ac..]);
                }
                gs.accumulate(a.0, &da);
                gs.accumulate(b.0, &db);
            }),
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (rows, cols) = self.values[a.0].shape();
        assert!(start + len <= cols, "slice_cols range");
        let mut value = Matrix::zeros(rows, len);
        for r in 0..rows {
            value
                .row_mut(r)
                .copy_from_slice(&self.values[a.0].row(r)[start..start + len]);
        }
        self.push(
            value,
            Box::new(move |dy, _, gs| {
                let mut da = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    da.row_mut(r)[start..start + len].copy_from_slice(dy.row(r));
                }
                gs.accumulate(a.0, &da);
            }),
        )
    }

    /// Split a `C x T` feature grid into `T / patch_len` tokens, each the
    /// flattened `C x patch_len` block (channel-major within a token).
    pub fn patchify(&mut self, a: Var, patch_len: usize) -> Var {
        let (ch, t) = self.values[a.0].shape();
        assert!(patch_len > 0 && t % patch_len == 0, "patchify divisibility");
        let m = t / patch_len;
        let mut value = Matrix::zeros(m, ch * patch_len);
        for p in 0..m {
            for c in 0..ch {
                for j in 0..patch_len {
                    value.set(p, c * patch_len + j, self.values[a.0].get(c, p * patch_len + j));
                }
            }
        }
        self.push(
            value,
            Box::new(move |dy, _, gs| {
                let mut da = Matrix::zeros(ch, t);
                for p in 0..m {
                    for c in 0..ch {
                        for j in 0..patch_len {
                            da.set(c, p * patch_len + j, dy.get(p, c * patch_len + j));
                        }
                    }
                }
                gs.accumulate(a.0, &da);
            }),
        )
    }

    /// Reinterpret the row-major data with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let (ar, ac) = self.values[a.0].shape();
        assert_eq!(ar * ac, rows * cols, "reshape size");
        let value = Matrix::from_vec(rows, cols, self.values[a.0].as_slice().to_vec());
        self.push(
            value,
            Box::new(move |dy, _, gs| {
                let da = Matrix::from_vec(ar, ac, dy.as_slice().to_vec());
                gs.accumulate(a.0, &da);
            }),
        )
    }

    /// Mean squared error over the cells where `weight` is nonzero:
    /// `sum(weight * (pred - target)^2) / sum(weight)`. Returns a scalar node.
    pub fn masked_mse(&mut self, pred: Var, target: &Matrix, weight: &Matrix) -> Var {
        let pv = &self.values[pred.0];
        assert_eq!(pv.shape(), target.shape(), "masked_mse target shape");
        assert_eq!(pv.shape(), weight.shape(), "masked_mse weight shape");
        let count: f64 = weight.as_slice().iter().sum();
        assert!(count > 0.0, "masked_mse needs a nonempty scoring set");
        let mut acc = 0.0;
        for ((p, t), w) in pv
            .as_slice()
            .iter()
            .zip(target.as_slice())
            .zip(weight.as_slice())
        {
            let e = p - t;
            acc += w * e * e;
        }
        let value = Matrix::filled(1, 1, acc / count);
        let target = target.clone();
        let weight = weight.clone();
        self.push(
            value,
            Box::new(move |dy, vals, gs| {
                let g = dy.get(0, 0);
                let pv = &vals[pred.0];
                let mut dp = Matrix::zeros(pv.rows(), pv.cols());
                for r in 0..pv.rows() {
                    for c in 0..pv.cols() {
                        dp.set(
                            r,
                            c,
                            g * 2.0 * weight.get(r, c) * (pv.get(r, c) - target.get(r, c)) / count,
                        );
                    }
                }
                gs.accumulate(pred.0, &dp);
            }),
        )
    }

    /// Gradient of the scalar `root` with respect to every node.
    pub fn backward(&self, root: Var) -> GradStore {
        assert_eq!(self.values[root.0].shape(), (1, 1), "backward root must be scalar");
        let shapes: Vec<(usize, usize)> = self.values.iter().map(|v| v.shape()).collect();
        let mut gs = GradStore::new(&shapes);
        gs.seed(root.0);
        for i in (0..=root.0).rev() {
            if !gs.touched[i] {
                continue;
            }
            let g = gs.grads[i].clone();
            (self.backs[i])(&g, &self.values, &mut gs);
        }
        gs
    }
}

fn gelu_fwd(x: f64) -> f64 {
    const C1: f64 = 0.7978845608028654; // sqrt(2/pi)
    const C2: f64 = 0.044715;
    0.5 * x * (1.0 + (C1 * (x + C2 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C1: f64 = 0.7978845608028654;
    const C2: f64 = 0.044715;
    let u = C1 * (x + C2 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C1 * (1.0 + 3.0 * C2 * x * x)
}
