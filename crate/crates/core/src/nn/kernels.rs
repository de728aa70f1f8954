//! Batched forward/backward kernels over row-major slices.
//!
//! Rows are batch items; every function documents its slice shapes as
//! `[rows, cols]`.

use crate::scalar::Scalar;

#[inline]
pub(crate) fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// `y[n, out] = x[n, in] @ w[out, in]^T + b[out]`.
pub(crate) fn linear_fwd<F: Scalar>(
    x: &[F],
    n: usize,
    in_dim: usize,
    w: &[F],
    out_dim: usize,
    b: Option<&[F]>,
) -> Vec<F> {
    let mut y = vec![F::zero(); n * out_dim];
    let beta = match b {
        Some(b) => {
            for row in y.chunks_exact_mut(out_dim) {
                row.copy_from_slice(b);
            }
            F::one()
        }
        None => F::zero(),
    };
    F::gemm(
        n,
        in_dim,
        out_dim,
        F::one(),
        x,
        in_dim as isize,
        1,
        w,
        1,
        in_dim as isize,
        beta,
        &mut y,
        out_dim as isize,
        1,
    );
    y
}

/// Accumulates gradients of [`linear_fwd`] given `dy[n, out]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_bwd<F: Scalar>(
    x: &[F],
    n: usize,
    in_dim: usize,
    w: &[F],
    out_dim: usize,
    dy: &[F],
    dx: Option<&mut [F]>,
    dw: &mut [F],
    db: Option<&mut [F]>,
) {
    if let Some(dx) = dx {
        F::gemm(
            n,
            out_dim,
            in_dim,
            F::one(),
            dy,
            out_dim as isize,
            1,
            w,
            in_dim as isize,
            1,
            F::one(),
            dx,
            in_dim as isize,
            1,
        );
    }
    F::gemm(
        out_dim,
        n,
        in_dim,
        F::one(),
        dy,
        1,
        out_dim as isize,
        x,
        in_dim as isize,
        1,
        F::one(),
        dw,
        in_dim as isize,
        1,
    );
    if let Some(db) = db {
        for row in dy.chunks_exact(out_dim) {
            for (acc, &g) in db.iter_mut().zip(row) {
                *acc += g;
            }
        }
    }
}

/// Activations saved by [`lstm_fwd`] for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct LstmCache<F> {
    pub batch: usize,
    pub steps: usize,
    pub hidden: usize,
    /// Post-activation gates `[steps * batch, 4 * hidden]` in (i, f, g, o) order.
    pub gates: Vec<F>,
    pub cells: Vec<F>,
    pub tanh_cells: Vec<F>,
    pub h0: Vec<F>,
    pub c0: Vec<F>,
}

/// Unrolls an LSTM over a time-major input `x[steps * batch, in]`.
///
/// Returns hidden outputs `[steps * batch, hidden]`, the cache, and the
/// final cell state `[batch, hidden]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn lstm_fwd<F: Scalar>(
    x: &[F],
    batch: usize,
    steps: usize,
    in_dim: usize,
    w_ih: &[F],
    w_hh: &[F],
    bias: &[F],
    hidden: usize,
    h0: &[F],
    c0: &[F],
) -> (Vec<F>, LstmCache<F>) {
    let g4 = 4 * hidden;
    let mut gates = linear_fwd(x, steps * batch, in_dim, w_ih, g4, Some(bias));
    let mut out = vec![F::zero(); steps * batch * hidden];
    let mut cells = vec![F::zero(); steps * batch * hidden];
    let mut tanh_cells = vec![F::zero(); steps * batch * hidden];
    let bh = batch * hidden;
    for t in 0..steps {
        let (done, rest) = out.split_at_mut(t * bh);
        let h_prev: &[F] = if t == 0 { h0 } else { &done[(t - 1) * bh..] };
        let gate_t = &mut gates[t * batch * g4..(t + 1) * batch * g4];
        F::gemm(
            batch,
            hidden,
            g4,
            F::one(),
            h_prev,
            hidden as isize,
            1,
            w_hh,
            1,
            hidden as isize,
            F::one(),
            gate_t,
            g4 as isize,
            1,
        );
        let h_t = &mut rest[..bh];
        let (c_done, c_rest) = cells.split_at_mut(t * bh);
        let c_prev: &[F] = if t == 0 { c0 } else { &c_done[(t - 1) * bh..] };
        let c_t = &mut c_rest[..bh];
        let tc_t = &mut tanh_cells[t * bh..(t + 1) * bh];
        for b in 0..batch {
            let g = &mut gate_t[b * g4..(b + 1) * g4];
            for j in 0..hidden {
                let i = sigmoid(g[j]);
                let f = sigmoid(g[hidden + j]);
                let cand = g[2 * hidden + j].tanh();
                let o = sigmoid(g[3 * hidden + j]);
                g[j] = i;
                g[hidden + j] = f;
                g[2 * hidden + j] = cand;
                g[3 * hidden + j] = o;
                let c = f * c_prev[b * hidden + j] + i * cand;
                let tc = c.tanh();
                c_t[b * hidden + j] = c;
                tc_t[b * hidden + j] = tc;
                h_t[b * hidden + j] = o * tc;
            }
        }
    }
    let cache = LstmCache {
        batch,
        steps,
        hidden,
        gates,
        cells,
        tanh_cells,
        h0: h0.to_vec(),
        c0: c0.to_vec(),
    };
    (out, cache)
}

/// Backpropagation through time for [`lstm_fwd`].
///
/// `dout` is the gradient w.r.t. every hidden output. The initial state is
/// treated as a constant.
#[allow(clippy::too_many_arguments)]
pub(crate) fn lstm_bwd<F: Scalar>(
    cache: &LstmCache<F>,
    x: &[F],
    in_dim: usize,
    out: &[F],
    w_ih: &[F],
    w_hh: &[F],
    dout: &[F],
    dx: Option<&mut [F]>,
    dw_ih: &mut [F],
    dw_hh: &mut [F],
    dbias: &mut [F],
) {
    let LstmCache {
        batch,
        steps,
        hidden,
        ..
    } = *cache;
    let g4 = 4 * hidden;
    let bh = batch * hidden;
    let one = F::one();
    let mut dgates = vec![F::zero(); steps * batch * g4];
    let mut dh_next = vec![F::zero(); bh];
    let mut dc_next = vec![F::zero(); bh];
    for t in (0..steps).rev() {
        let gate_t = &cache.gates[t * batch * g4..(t + 1) * batch * g4];
        let c_prev: &[F] = if t == 0 {
            &cache.c0
        } else {
            &cache.cells[(t - 1) * bh..t * bh]
        };
        let tc_t = &cache.tanh_cells[t * bh..(t + 1) * bh];
        let dg_t = &mut dgates[t * batch * g4..(t + 1) * batch * g4];
        for b in 0..batch {
            let g = &gate_t[b * g4..(b + 1) * g4];
            let dg = &mut dg_t[b * g4..(b + 1) * g4];
            for j in 0..hidden {
                let k = b * hidden + j;
                let (i, f, cand, o) = (g[j], g[hidden + j], g[2 * hidden + j], g[3 * hidden + j]);
                let tc = tc_t[k];
                let dh = dout[t * bh + k] + dh_next[k];
                let d_o = dh * tc;
                let dc = dh * o * (one - tc * tc) + dc_next[k];
                let di = dc * cand;
                let dcand = dc * i;
                let df = dc * c_prev[k];
                dc_next[k] = dc * f;
                dg[j] = di * i * (one - i);
                dg[hidden + j] = df * f * (one - f);
                dg[2 * hidden + j] = dcand * (one - cand * cand);
                dg[3 * hidden + j] = d_o * o * (one - o);
            }
        }
        let h_prev: &[F] = if t == 0 {
            &cache.h0
        } else {
            &out[(t - 1) * bh..t * bh]
        };
        F::gemm(
            g4,
            batch,
            hidden,
            one,
            dg_t,
            1,
            g4 as isize,
            h_prev,
            hidden as isize,
            1,
            one,
            dw_hh,
            hidden as isize,
            1,
        );
        if t > 0 {
            F::gemm(
                batch,
                g4,
                hidden,
                one,
                dg_t,
                g4 as isize,
                1,
                w_hh,
                hidden as isize,
                1,
                F::zero(),
                &mut dh_next,
                hidden as isize,
                1,
            );
        }
    }
    linear_bwd(
        x,
        steps * batch,
        in_dim,
        w_ih,
        g4,
        &dgates,
        dx,
        dw_ih,
        Some(dbias),
    );
}

/// Row-wise numerically stable softmax of `x[n, c]`.
pub(crate) fn softmax_rows<F: Scalar>(x: &[F], cols: usize) -> Vec<F> {
    let mut out = x.to_vec();
    for row in out.chunks_exact_mut(cols) {
        let m = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut s = F::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}

/// Row-wise log-softmax of `x[n, c]`.
pub(crate) fn log_softmax_rows<F: Scalar>(x: &[F], cols: usize) -> Vec<F> {
    let mut out = x.to_vec();
    for row in out.chunks_exact_mut(cols) {
        let m = row.iter().copied().fold(F::neg_infinity(), F::max);
        let s: F = row.iter().map(|&v| (v - m).exp()).sum();
        let lse = m + s.ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}
