//! Multi-scale feature extraction: parallel 1-D convolutions over the
//! mask-augmented window, channel concatenation, then non-overlapping
//! patching with a learned linear embedding.
//!
//! Convolutions are evaluated as a matrix product against an im2col
//! expansion of the input. The input window is constant during training
//! (only weights receive gradients), so the expansion itself never needs a
//! backward pass.

use crate::matrix::Matrix;
use crate::tape::{Tape, Var};

/// Expand a `C x T` grid into a `(C*k) x T` matrix whose column `t` holds
/// the zero-padded receptive field of a centered kernel of odd width `k`:
/// row `c*k + j` is input channel `c` at offset `j - (k-1)/2`.
pub fn im2col(x: &Matrix, k: usize) -> Matrix {
    assert!(k % 2 == 1, "kernel width must be odd");
    let (c, t) = x.shape();
    let pad = (k - 1) / 2;
    Matrix::from_fn(c * k, t, |row, col| {
        let ch = row / k;
        let j = row % k;
        let src = col + j;
        if src < pad || src - pad >= t {
            0.0
        } else {
            x.get(ch, src - pad)
        }
    })
}

/// One convolution scale on the tape: `w` is `c_out x (C*k)`, `b` is
/// `1 x c_out`, and `col` is the im2col expansion registered as a leaf.
/// Output is `c_out x T`.
pub fn conv_forward(tape: &mut Tape, w: Var, b: Var, col: Var) -> Var {
    let wx = tape.matmul(w, col);
    tape.add_col_vec(wx, b)
}

/// Reference convolution by direct summation, for testing the im2col path.
pub fn conv_direct(x: &Matrix, w: &Matrix, b: &Matrix, k: usize) -> Matrix {
    let (c_in, t) = x.shape();
    let c_out = w.rows();
    assert_eq!(w.cols(), c_in * k, "kernel shape");
    assert_eq!(b.shape(), (1, c_out), "bias shape");
    let pad = (k - 1) / 2;
    Matrix::from_fn(c_out, t, |o, col| {
        let mut acc = b.get(0, o);
        for ch in 0..c_in {
            for j in 0..k {
                let src = col + j;
                if src >= pad && src - pad < t {
                    acc += w.get(o, ch * k + j) * x.get(ch, src - pad);
                }
            }
        }
        acc
    })
}

/// The standard sinusoidal positional code for `m` positions of width `d`.
pub fn sinusoidal_pe(m: usize, d: usize) -> Matrix {
    Matrix::from_fn(m, d, |pos, i| {
        let exponent = 2.0 * (i / 2) as f64 / d as f64;
        let angle = pos as f64 / 10000f64.powf(exponent);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Patch the feature grid along time and embed each flattened patch:
/// `features` is `C x T`, `e` is `d_model x (C*patch_len)`, `eb` is
/// `1 x d_model`; the result is `(T/patch_len) x d_model` tokens in time
/// order.
pub fn patchify_embed(tape: &mut Tape, features: Var, patch_len: usize, e: Var, eb: Var) -> Var {
    let patches = tape.patchify(features, patch_len);
    let tokens = tape.matmul_nt(patches, e);
    tape.add_row_vec(tokens, eb)
}
