//! Pre-norm transformer encoder blocks operating on a recorded tape.
//! Weight tensors live in the model's parameter set; this module only
//! wires tape operations given their [`Var`] handles.

use crate::tape::{Tape, Var};

/// Handles to one encoder block's weights.
///
/// Projection weights are stored output-major (`d x d`, applied as
/// `x @ W^T`), feed-forward weights as `(ff) x d` and `d x (ff)`.
#[derive(Clone, Copy, Debug)]
pub struct BlockVars {
    pub ln1_g: Var,
    pub ln1_b: Var,
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub ln2_g: Var,
    pub ln2_b: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Layer norm with learned gain and shift.
pub fn layer_norm_affine(tape: &mut Tape, x: Var, g: Var, b: Var) -> Var {
    let n = tape.layer_norm_rows(x);
    let scaled = tape.mul_row_vec(n, g);
    tape.add_row_vec(scaled, b)
}

fn affine_nt(tape: &mut Tape, x: Var, w: Var, b: Var) -> Var {
    let y = tape.matmul_nt(x, w);
    tape.add_row_vec(y, b)
}

/// Multi-head self-attention over the (already normalized) sequence.
/// Each head's probability matrix is appended to `probs_out` so callers
/// can assert the softmax normalization invariant.
pub fn attention(
    tape: &mut Tape,
    x_norm: Var,
    vars: &BlockVars,
    n_heads: usize,
    probs_out: &mut Vec<Var>,
) -> Var {
    let d = tape.value(x_norm).cols();
    assert!(
        n_heads > 0 && d.is_multiple_of(n_heads),
        "head count must divide d_model"
    );
    let dh = d / n_heads;
    let q = affine_nt(tape, x_norm, vars.wq, vars.bq);
    let k = affine_nt(tape, x_norm, vars.wk, vars.bk);
    let v = affine_nt(tape, x_norm, vars.wv, vars.bv);

    let mut ctx: Option<Var> = None;
    for h in 0..n_heads {
        let qh = tape.slice_cols(q, h * dh, dh);
        let kh = tape.slice_cols(k, h * dh, dh);
        let vh = tape.slice_cols(v, h * dh, dh);
        let scores = tape.matmul_nt(qh, kh);
        let scaled = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        let probs = tape.softmax_rows(scaled);
        probs_out.push(probs);
        let head = tape.matmul(probs, vh);
        ctx = Some(match ctx {
            None => head,
            Some(c) => tape.concat_cols(c, head),
        });
    }
    affine_nt(tape, ctx.expect("at least one head"), vars.wo, vars.bo)
}

/// One pre-norm encoder block: attention and feed-forward sublayers, each
/// behind a residual connection.
pub fn block_forward(
    tape: &mut Tape,
    x: Var,
    vars: &BlockVars,
    n_heads: usize,
    probs_out: &mut Vec<Var>,
) -> Var {
    let n1 = layer_norm_affine(tape, x, vars.ln1_g, vars.ln1_b);
    let attn = attention(tape, n1, vars, n_heads, probs_out);
    let x = tape.add(x, attn);

    let n2 = layer_norm_affine(tape, x, vars.ln2_g, vars.ln2_b);
    let f1 = affine_nt(tape, n2, vars.w1, vars.b1);
    let g = tape.gelu(f1);
    let f2 = affine_nt(tape, g, vars.w2, vars.b2);
    tape.add(x, f2)
}
