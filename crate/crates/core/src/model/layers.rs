//! Tape-level building blocks. Row vectors throughout: a batch of inputs is
//! `[rows, features]` and weights are `[in, out]`.

use super::{Bound, GatActivation};
use crate::tensor::{Result, Tape, TensorError, Var};

/// `e = (x · w_n + b_n) · active`, with `x`, `active` as `[R, N, 1]` and
/// `w`, `b` as `[N, E]`. Inactive nodes embed to the zero vector.
pub fn embed(tape: &mut Tape, x: Var, active: Var, w: Var, b: Var) -> Result<Var> {
    let xw = tape.mul(x, w)?;
    let e = tape.add(xw, b)?;
    tape.mul(e, active)
}

/// One head's parameters: `w` is `[in, E′]`, `a_src`/`a_dst` are `[E′, 1]`
/// (the receiving and sending halves of the attention vector).
#[derive(Clone, Copy, Debug)]
pub struct GatHead {
    pub w: Var,
    pub a_src: Var,
    pub a_dst: Var,
}

impl GatHead {
    pub fn bind(p: &Bound, layer: usize, head: usize) -> Result<Self> {
        Ok(Self {
            w: p.get(&format!("gat.{layer}.{head}.w"))?,
            a_src: p.get(&format!("gat.{layer}.{head}.a_src"))?,
            a_dst: p.get(&format!("gat.{layer}.{head}.a_dst"))?,
        })
    }
}

/// Multi-head graph attention over `R` independent graphs.
///
/// `input` is `[R, N, D]`, `active` is `[R, N, 1]` and `adjacency` holds
/// `R·N·N` flags (`[r, i, j]` true iff `i` and `j` are both active). Node `i`
/// attends over its active neighbours `j` with scores
/// `LeakyReLU(a_srcᵀ W e_i + a_dstᵀ W e_j)`; head outputs are averaged, then
/// the activation is applied and inactive nodes are zeroed.
///
/// Returns `[R, N, E′]` and the per-head attention tensors `[R, N, N]`.
pub fn gat_layer(
    tape: &mut Tape,
    input: Var,
    active: Var,
    adjacency: &[bool],
    heads: &[GatHead],
    activation: GatActivation,
    slope: f64,
) -> Result<(Var, Vec<Var>)> {
    let shape = tape.shape(input).to_vec();
    if shape.len() != 3 || heads.is_empty() {
        return Err(TensorError::Shape {
            op: "gat_layer",
            shapes: vec![shape],
        });
    }
    let (r, n, d) = (shape[0], shape[1], shape[2]);
    let flat = tape.reshape(input, &[r * n, d])?;
    let mut total = None;
    let mut alphas = Vec::with_capacity(heads.len());
    for head in heads {
        let wh = tape.matmul(flat, head.w)?;
        let out_dim = tape.shape(wh)[1];
        let src = tape.matmul(wh, head.a_src)?;
        let src = tape.reshape(src, &[r, n, 1])?;
        let dst = tape.matmul(wh, head.a_dst)?;
        let dst = tape.reshape(dst, &[r, 1, n])?;
        let scores = tape.add(src, dst)?;
        let scores = tape.leaky_relu(scores, slope);
        let alpha = tape.masked_softmax(scores, adjacency)?;
        let messages = tape.reshape(wh, &[r, n, out_dim])?;
        let agg = tape.bmm(alpha, messages)?;
        total = Some(match total {
            None => agg,
            Some(acc) => tape.add(acc, agg)?,
        });
        alphas.push(alpha);
    }
    let mut g = total.expect("at least one head");
    if heads.len() > 1 {
        g = tape.scale(g, 1.0 / heads.len() as f64);
    }
    let g = match activation {
        GatActivation::Elu => tape.elu(g, 1.0),
        GatActivation::Sigmoid => tape.sigmoid(g),
    };
    let g = tape.mul(g, active)?;
    Ok((g, alphas))
}

/// `W_1..W_6` (`[in, H]` for odd, `[H, H]` for even) and `b_1..b_6`.
#[derive(Clone, Copy, Debug)]
pub struct GruParams {
    pub w: [Var; 6],
    pub b: [Var; 6],
}

impl GruParams {
    pub fn bind(p: &Bound, prefix: &str) -> Result<Self> {
        let mut w = Vec::with_capacity(6);
        let mut b = Vec::with_capacity(6);
        for k in 1..=6 {
            w.push(p.get(&format!("{prefix}.w{k}"))?);
            b.push(p.get(&format!("{prefix}.b{k}"))?);
        }
        Ok(Self {
            w: w.try_into().expect("six"),
            b: b.try_into().expect("six"),
        })
    }
}

fn affine(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    tape.add(xw, b)
}

/// One GRU cell update from precomputed input projections
/// `x·W_1 + b_1`, `x·W_3 + b_3`, `x·W_5 + b_5`:
///
/// ```text
/// r = σ(x·W1 + b1 + h·W2 + b2)
/// z = σ(x·W3 + b3 + h·W4 + b4)
/// q = tanh(x·W5 + b5 + r ∗ (h·W6 + b6))
/// h′ = (1 − z) ∗ q + z ∗ h
/// ```
pub fn gru_cell(tape: &mut Tape, proj: [Var; 3], h: Var, p: &GruParams) -> Result<Var> {
    let hr = affine(tape, h, p.w[1], p.b[1])?;
    let r = tape.add(proj[0], hr)?;
    let r = tape.sigmoid(r);
    let hz = affine(tape, h, p.w[3], p.b[3])?;
    let z = tape.add(proj[1], hz)?;
    let z = tape.sigmoid(z);
    let hq = affine(tape, h, p.w[5], p.b[5])?;
    let rq = tape.mul(r, hq)?;
    let q = tape.add(proj[2], rq)?;
    let q = tape.tanh(q);
    let keep = tape.one_minus(z);
    let new = tape.mul(keep, q)?;
    let old = tape.mul(z, h)?;
    tape.add(new, old)
}

/// One GRU step on input `x` (`[B, in]`) and state `h` (`[B, H]`).
pub fn gru_step(tape: &mut Tape, x: Var, h: Var, p: &GruParams) -> Result<Var> {
    let proj = [
        affine(tape, x, p.w[0], p.b[0])?,
        affine(tape, x, p.w[2], p.b[2])?,
        affine(tape, x, p.w[4], p.b[4])?,
    ];
    gru_cell(tape, proj, h, p)
}

/// Splits `[B·T, F]` (row `b·T + t`) into `T` tensors `[B, F]`.
fn per_step(tape: &mut Tape, x: Var, b: usize, t: usize) -> Result<Vec<Var>> {
    let f = tape.shape(x)[1];
    let x = tape.reshape(x, &[b, t, f])?;
    (0..t)
        .map(|ti| {
            let s = tape.slice(x, 1, ti, 1)?;
            tape.reshape(s, &[b, f])
        })
        .collect()
}

fn hidden_of(tape: &Tape, w: Var) -> usize {
    tape.shape(w)[1]
}

/// Runs the GRU over `x` (`[B·T, in]`, row `b·T + t`) from `h_0 = 0` and
/// returns `h_1..h_T`.
pub fn gru_sequence(tape: &mut Tape, x: Var, b: usize, t: usize, p: &GruParams) -> Result<Vec<Var>> {
    let h_dim = hidden_of(tape, p.w[1]);
    let mut proj = Vec::with_capacity(3);
    for k in [0, 2, 4] {
        let a = affine(tape, x, p.w[k], p.b[k])?;
        proj.push(per_step(tape, a, b, t)?);
    }
    let mut h = tape.constant(crate::tensor::Tensor::zeros(vec![b, h_dim]));
    let mut hs = Vec::with_capacity(t);
    for ((&r, &z), &q) in proj[0].iter().zip(&proj[1]).zip(&proj[2]) {
        h = gru_cell(tape, [r, z, q], h, p)?;
        hs.push(h);
    }
    Ok(hs)
}

/// Gate weights in `i, f, j, o` order.
#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    pub wx: [Var; 4],
    pub bx: [Var; 4],
    pub wh: [Var; 4],
    pub bh: [Var; 4],
}

impl LstmParams {
    pub fn bind(p: &Bound) -> Result<Self> {
        let get = |kind: &str| -> Result<[Var; 4]> {
            let v = ["i", "f", "j", "o"]
                .iter()
                .map(|g| p.get(&format!("lstm.{kind}{g}")))
                .collect::<Result<Vec<_>>>()?;
            Ok(v.try_into().expect("four"))
        };
        Ok(Self {
            wx: get("w_x")?,
            bx: get("b_x")?,
            wh: get("w_h")?,
            bh: get("b_h")?,
        })
    }
}

/// One LSTM update from precomputed input projections `x·W_x· + b_x·`:
///
/// ```text
/// i, f, o = σ(proj + h·W_h· + b_h·),  j = tanh(proj_j + h·W_hj + b_hj)
/// c′ = f ∗ c + i ∗ j,  h′ = o ∗ tanh(c′)
/// ```
pub fn lstm_cell(tape: &mut Tape, proj: [Var; 4], h: Var, c: Var, p: &LstmParams) -> Result<(Var, Var)> {
    let mut gates = Vec::with_capacity(4);
    for (k, &pk) in proj.iter().enumerate() {
        let hk = affine(tape, h, p.wh[k], p.bh[k])?;
        let pre = tape.add(pk, hk)?;
        gates.push(if k == 2 { tape.tanh(pre) } else { tape.sigmoid(pre) });
    }
    let (i, f, j, o) = (gates[0], gates[1], gates[2], gates[3]);
    let kept = tape.mul(f, c)?;
    let fresh = tape.mul(i, j)?;
    let c = tape.add(kept, fresh)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// One LSTM step on input `x` (`[B, N]`).
pub fn lstm_step(tape: &mut Tape, x: Var, h: Var, c: Var, p: &LstmParams) -> Result<(Var, Var)> {
    let mut proj = Vec::with_capacity(4);
    for k in 0..4 {
        proj.push(affine(tape, x, p.wx[k], p.bx[k])?);
    }
    lstm_cell(tape, proj.try_into().expect("four"), h, c, p)
}

/// Runs the LSTM over `x` (`[B·T, N]`) from zero state; returns `h_1..h_T`.
pub fn lstm_sequence(tape: &mut Tape, x: Var, b: usize, t: usize, p: &LstmParams) -> Result<Vec<Var>> {
    let h_dim = hidden_of(tape, p.wh[0]);
    let mut proj = Vec::with_capacity(4);
    for k in 0..4 {
        let a = affine(tape, x, p.wx[k], p.bx[k])?;
        proj.push(per_step(tape, a, b, t)?);
    }
    let mut h = tape.constant(crate::tensor::Tensor::zeros(vec![b, h_dim]));
    let mut c = h;
    let mut hs = Vec::with_capacity(t);
    for (((&i, &f), &j), &o) in proj[0].iter().zip(&proj[1]).zip(&proj[2]).zip(&proj[3]) {
        (h, c) = lstm_cell(tape, [i, f, j, o], h, c, p)?;
        hs.push(h);
    }
    Ok(hs)
}

/// `f_time(d) = d · time_w + time_b` (`[E′]` each) and the bilinear `W_TA`.
#[derive(Clone, Copy, Debug)]
pub struct TimeAwareParams {
    pub time_w: Var,
    pub time_b: Var,
    pub w: Var,
}

impl TimeAwareParams {
    pub fn bind(p: &Bound) -> Result<Self> {
        Ok(Self {
            time_w: p.get("ta.time_w")?,
            time_b: p.get("ta.time_b")?,
            w: p.get("ta.w")?,
        })
    }
}

/// `β_t = softmax_t(f_time(d_t)ᵀ W_TA f_time(d_target))`, `h′ = Σ_t β_t h_t`.
///
/// `hs` are `T` states `[B, H]`; `d` is `[B, T, 1]` and `d_target` is
/// `[B, 1, 1]`. Returns `h′` (`[B, H]`) and `β` (`[B, T]`).
pub fn time_aware_head(
    tape: &mut Tape,
    hs: &[Var],
    d: Var,
    d_target: Var,
    p: &TimeAwareParams,
) -> Result<(Var, Var)> {
    let ds = tape.shape(d).to_vec();
    let hshape = hs.first().map(|h| tape.shape(*h).to_vec()).unwrap_or_default();
    if ds.len() != 3 || ds[1] != hs.len() || hshape.len() != 2 || hshape[0] != ds[0] {
        return Err(TensorError::Shape {
            op: "time_aware_head",
            shapes: vec![ds, hshape],
        });
    }
    let (b, t, h_dim) = (ds[0], ds[1], hshape[1]);
    let ep = tape.shape(p.time_w)[0];
    let ft = tape.mul(d, p.time_w)?;
    let ft = tape.add(ft, p.time_b)?;
    let fq = tape.mul(d_target, p.time_w)?;
    let fq = tape.add(fq, p.time_b)?;
    let fq = tape.reshape(fq, &[b, ep])?;
    let wt = tape.transpose(p.w)?;
    let v = tape.matmul(fq, wt)?;
    let v = tape.reshape(v, &[b, ep, 1])?;
    let scores = tape.bmm(ft, v)?;
    let scores = tape.reshape(scores, &[b, t])?;
    let beta = tape.masked_softmax(scores, &vec![true; b * t])?;
    let stacked = hs
        .iter()
        .map(|h| tape.reshape(*h, &[b, 1, h_dim]))
        .collect::<Result<Vec<_>>>()?;
    let stacked = tape.concat(&stacked, 1)?;
    let weights = tape.reshape(beta, &[b, 1, t])?;
    let summary = tape.bmm(weights, stacked)?;
    let summary = tape.reshape(summary, &[b, h_dim])?;
    Ok((summary, beta))
}

/// `mean((pred − y)²)`.
pub fn mse(tape: &mut Tape, pred: Var, y: Var) -> Result<Var> {
    if tape.shape(pred) != tape.shape(y) || tape.value(pred).is_empty() {
        return Err(TensorError::Contract(format!(
            "mse needs equal non-empty shapes, got {:?} and {:?}",
            tape.shape(pred),
            tape.shape(y)
        )));
    }
    let diff = tape.sub(pred, y)?;
    let sq = tape.mul(diff, diff)?;
    tape.mean(sq)
}
