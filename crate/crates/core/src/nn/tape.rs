//! Computation record for reverse-mode differentiation.
//!
//! A [`Tape`] borrows a [`ParameterSet`], records each forward operation
//! together with the activations it needs, and walks the record backwards in
//! [`Tape::backward`] to produce [`Gradients`].

use crate::error::{Error, Result};
use crate::nn::kernels::{self, LstmCache};
use crate::nn::layers::{Embedding, Linear, Lstm};
use crate::nn::{Gradients, ParamId, ParameterSet, Tensor};
use crate::scalar::Scalar;

/// Handle to a node recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    index: usize,
    tape_id: u64,
}

#[derive(Debug)]
enum Op<F> {
    Input,
    Linear {
        x: Var,
        w: ParamId,
        b: ParamId,
    },
    Relu(Var),
    Embed {
        table: ParamId,
        idx: Vec<usize>,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    Concat(Vec<Var>),
    Lstm {
        x: Var,
        w_ih: ParamId,
        w_hh: ParamId,
        b: ParamId,
        cache: Box<LstmCache<F>>,
    },
    Dueling {
        value: Var,
        advantage: Var,
    },
    PickCols {
        x: Var,
        cols: Vec<usize>,
    },
    SoftmaxXent {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<F>,
    },
    WeightedSquaredError {
        pred: Var,
        targets: Vec<F>,
        weights: Vec<F>,
    },
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
}

/// Forward record over one parameter set.
pub struct Tape<'p, F: Scalar> {
    params: &'p ParameterSet<F>,
    nodes: Vec<Node<F>>,
    id: u64,
}

fn next_tape_id() -> u64 {
    use std::sync::atomic::{AtomicU64, Ordering};
    static NEXT: AtomicU64 = AtomicU64::new(1);
    NEXT.fetch_add(1, Ordering::Relaxed)
}

impl<'p, F: Scalar> Tape<'p, F> {
    pub fn new(params: &'p ParameterSet<F>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            id: next_tape_id(),
        }
    }

    pub fn params(&self) -> &'p ParameterSet<F> {
        self.params
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            index: self.nodes.len() - 1,
            tape_id: self.id,
        }
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape_id != self.id || v.index >= self.nodes.len() {
            return Err(Error::Usage(format!(
                "node {} was not recorded on this tape",
                v.index
            )));
        }
        Ok(())
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        assert_eq!(v.tape_id, self.id, "node from another tape");
        &self.nodes[v.index].value
    }

    /// Records a constant `[rows, cols]` input.
    pub fn input(&mut self, value: Tensor<F>) -> Var {
        let value = if value.shape().len() == 1 {
            Tensor::from_parts_unchecked(1, value.len(), value.into_data())
        } else {
            value
        };
        self.push(value, Op::Input)
    }

    pub fn linear(&mut self, layer: &Linear, x: Var) -> Result<Var> {
        self.check(x)?;
        let xv = &self.nodes[x.index].value;
        if xv.cols() != layer.in_dim() {
            return Err(Error::Config(format!(
                "linear layer expects width {}, got {}",
                layer.in_dim(),
                xv.cols()
            )));
        }
        let n = xv.rows();
        let w = self.params.get(layer.weight());
        let b = self.params.get(layer.bias());
        let y = kernels::linear_fwd(xv.data(), n, layer.in_dim(), w.data(), layer.out_dim(), Some(b.data()));
        Ok(self.push(
            Tensor::from_parts_unchecked(n, layer.out_dim(), y),
            Op::Linear {
                x,
                w: layer.weight(),
                b: layer.bias(),
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let xv = &self.nodes[x.index].value;
        let data = xv.data().iter().map(|&v| v.max(F::zero())).collect();
        let value = Tensor::from_parts_unchecked(xv.rows(), xv.cols(), data);
        Ok(self.push(value, Op::Relu(x)))
    }

    pub fn embed(&mut self, layer: &Embedding, idx: Vec<usize>) -> Result<Var> {
        let table = self.params.get(layer.table());
        let dim = layer.dim();
        let mut data = Vec::with_capacity(idx.len() * dim);
        for &i in &idx {
            if i >= layer.rows() {
                return Err(Error::Input(format!(
                    "embedding index {i} out of range for {} rows",
                    layer.rows()
                )));
            }
            data.extend_from_slice(table.row(i));
        }
        if idx.is_empty() {
            return Err(Error::Input("empty embedding lookup".into()));
        }
        Ok(self.push(
            Tensor::from_parts_unchecked(idx.len(), dim, data),
            Op::Embed {
                table: layer.table(),
                idx,
            },
        ))
    }

    /// Selects rows of `x` (rows may repeat).
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        self.check(x)?;
        let xv = &self.nodes[x.index].value;
        let cols = xv.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in &idx {
            if i >= xv.rows() {
                return Err(Error::Input(format!("row {i} out of range")));
            }
            data.extend_from_slice(xv.row(i));
        }
        Ok(self.push(
            Tensor::from_parts_unchecked(idx.len(), cols, data),
            Op::GatherRows { x, idx },
        ))
    }

    /// Column-wise concatenation of equally tall inputs.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        for &p in parts {
            self.check(p)?;
        }
        let rows = self.nodes[parts[0].index].value.rows();
        if parts.iter().any(|p| self.nodes[p.index].value.rows() != rows) {
            return Err(Error::Config("concat inputs differ in row count".into()));
        }
        let cols: usize = parts.iter().map(|p| self.nodes[p.index].value.cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.nodes[p.index].value.row(r));
            }
        }
        Ok(self.push(
            Tensor::from_parts_unchecked(rows, cols, data),
            Op::Concat(parts.to_vec()),
        ))
    }

    /// Runs `layer` over a time-major sequence `x[steps * batch, in]`.
    ///
    /// `init` is the `(hidden, cell)` state per batch row, zeros when `None`.
    /// Returns the hidden output at every step and the final `(hidden, cell)`.
    pub fn lstm(
        &mut self,
        layer: &Lstm,
        x: Var,
        batch: usize,
        init: Option<(&[F], &[F])>,
    ) -> Result<(Var, Vec<F>, Vec<F>)> {
        self.check(x)?;
        let xv = &self.nodes[x.index].value;
        if xv.cols() != layer.input_dim() {
            return Err(Error::Config(format!(
                "lstm expects width {}, got {}",
                layer.input_dim(),
                xv.cols()
            )));
        }
        if batch == 0 || xv.rows() % batch != 0 {
            return Err(Error::Config("lstm input rows not a multiple of batch".into()));
        }
        let steps = xv.rows() / batch;
        let h = layer.hidden();
        let zeros = vec![F::zero(); batch * h];
        let (h0, c0) = init.unwrap_or((&zeros, &zeros));
        if h0.len() != batch * h || c0.len() != batch * h {
            return Err(Error::Config("lstm initial state has wrong size".into()));
        }
        let (out, cache) = kernels::lstm_fwd(
            xv.data(),
            batch,
            steps,
            layer.input_dim(),
            self.params.get(layer.w_ih()).data(),
            self.params.get(layer.w_hh()).data(),
            self.params.get(layer.bias()).data(),
            h,
            h0,
            c0,
        );
        if !out.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite LSTM state".into()));
        }
        let last = (steps - 1) * batch * h;
        let h_final = out[last..].to_vec();
        let c_final = cache.cells[last..].to_vec();
        let var = self.push(
            Tensor::from_parts_unchecked(steps * batch, h, out),
            Op::Lstm {
                x,
                w_ih: layer.w_ih(),
                w_hh: layer.w_hh(),
                b: layer.bias(),
                cache: Box::new(cache),
            },
        );
        Ok((var, h_final, c_final))
    }

    /// `Q = V + A - mean(A)` row-wise; `value` is `[n, 1]`, `advantage` `[n, A]`.
    pub fn dueling(&mut self, value: Var, advantage: Var) -> Result<Var> {
        self.check(value)?;
        self.check(advantage)?;
        let v = &self.nodes[value.index].value;
        let a = &self.nodes[advantage.index].value;
        if v.cols() != 1 || v.rows() != a.rows() {
            return Err(Error::Config("dueling heads have incompatible shapes".into()));
        }
        let na = a.cols();
        let inv = F::one() / F::of(na as f64);
        let mut data = Vec::with_capacity(a.len());
        for r in 0..a.rows() {
            let row = a.row(r);
            let mean = row.iter().copied().sum::<F>() * inv;
            data.extend(row.iter().map(|&x| v.data()[r] + x - mean));
        }
        Ok(self.push(
            Tensor::from_parts_unchecked(a.rows(), na, data),
            Op::Dueling { value, advantage },
        ))
    }

    /// Picks one column per row: `out[r] = x[r, cols[r]]`.
    pub fn pick_cols(&mut self, x: Var, cols: Vec<usize>) -> Result<Var> {
        self.check(x)?;
        let xv = &self.nodes[x.index].value;
        if cols.len() != xv.rows() || cols.iter().any(|&c| c >= xv.cols()) {
            return Err(Error::Input("pick_cols index mismatch".into()));
        }
        let data = cols.iter().enumerate().map(|(r, &c)| xv.at(r, c)).collect();
        Ok(self.push(
            Tensor::from_parts_unchecked(cols.len(), 1, data),
            Op::PickCols { x, cols },
        ))
    }

    /// Scalar `sum_r weights[r] * -log softmax(logits[r])[targets[r]]`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<F>,
    ) -> Result<Var> {
        self.check(logits)?;
        let lv = &self.nodes[logits.index].value;
        let c = lv.cols();
        if targets.len() != lv.rows() || weights.len() != lv.rows() {
            return Err(Error::Config("cross-entropy targets/weights length mismatch".into()));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Input(format!("target class {t} out of range for {c} logits")));
        }
        let logp = kernels::log_softmax_rows(lv.data(), c);
        let loss: F = targets
            .iter()
            .zip(&weights)
            .enumerate()
            .map(|(r, (&t, &w))| -w * logp[r * c + t])
            .sum();
        Ok(self.push(
            Tensor::vector(vec![loss]),
            Op::SoftmaxXent {
                logits,
                targets,
                weights,
            },
        ))
    }

    /// Scalar `sum_r weights[r] * (pred[r] - targets[r])^2` for `pred[n, 1]`.
    pub fn weighted_squared_error(
        &mut self,
        pred: Var,
        targets: Vec<F>,
        weights: Vec<F>,
    ) -> Result<Var> {
        self.check(pred)?;
        let pv = &self.nodes[pred.index].value;
        if pv.cols() != 1 || targets.len() != pv.rows() || weights.len() != pv.rows() {
            return Err(Error::Config("squared error shape mismatch".into()));
        }
        let loss = pv
            .data()
            .iter()
            .zip(&targets)
            .zip(&weights)
            .map(|((&p, &t), &w)| w * (p - t) * (p - t))
            .sum();
        Ok(self.push(
            Tensor::vector(vec![loss]),
            Op::WeightedSquaredError {
                pred,
                targets,
                weights,
            },
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        self.check(loss)?;
        if self.nodes[loss.index].value.len() != 1 {
            return Err(Error::Usage("backward requires a scalar loss".into()));
        }
        let mut grads = self.params.zero_grads();
        let mut adj: Vec<Option<Vec<F>>> = (0..=loss.index).map(|_| None).collect();
        adj[loss.index] = Some(vec![F::one()]);
        for idx in (0..=loss.index).rev() {
            let Some(dy) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Linear { x, w, b } => {
                    let xv = &self.nodes[x.index].value;
                    let wv = self.params.get(*w);
                    let (out_dim, in_dim) = (wv.rows(), wv.cols());
                    let mut dx = take_or_zero(&mut adj, *x, xv.len());
                    let (dw, db) = two_mut(&mut grads, *w, *b);
                    kernels::linear_bwd(
                        xv.data(),
                        xv.rows(),
                        in_dim,
                        wv.data(),
                        out_dim,
                        &dy,
                        Some(&mut dx),
                        dw,
                        Some(db),
                    );
                    adj[x.index] = Some(dx);
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[x.index].value;
                    let mut dx = take_or_zero(&mut adj, *x, xv.len());
                    for ((d, &g), &v) in dx.iter_mut().zip(&dy).zip(xv.data()) {
                        if v > F::zero() {
                            *d += g;
                        }
                    }
                    adj[x.index] = Some(dx);
                }
                Op::Embed { table, idx } => {
                    let dt = grads.get_mut(*table);
                    let dim = dt.cols();
                    let data = dt.data_mut();
                    for (r, &i) in idx.iter().enumerate() {
                        for (acc, &g) in data[i * dim..(i + 1) * dim]
                            .iter_mut()
                            .zip(&dy[r * dim..(r + 1) * dim])
                        {
                            *acc += g;
                        }
                    }
                }
                Op::GatherRows { x, idx } => {
                    let xv = &self.nodes[x.index].value;
                    let cols = xv.cols();
                    let mut dx = take_or_zero(&mut adj, *x, xv.len());
                    for (r, &i) in idx.iter().enumerate() {
                        for (acc, &g) in dx[i * cols..(i + 1) * cols]
                            .iter_mut()
                            .zip(&dy[r * cols..(r + 1) * cols])
                        {
                            *acc += g;
                        }
                    }
                    adj[x.index] = Some(dx);
                }
                Op::Concat(parts) => {
                    let rows = node.value.rows();
                    let total = node.value.cols();
                    let mut offset = 0;
                    for p in parts {
                        let pv = &self.nodes[p.index].value;
                        let pc = pv.cols();
                        let mut dp = take_or_zero(&mut adj, *p, pv.len());
                        for r in 0..rows {
                            for (acc, &g) in dp[r * pc..(r + 1) * pc]
                                .iter_mut()
                                .zip(&dy[r * total + offset..r * total + offset + pc])
                            {
                                *acc += g;
                            }
                        }
                        adj[p.index] = Some(dp);
                        offset += pc;
                    }
                }
                Op::Lstm {
                    x,
                    w_ih,
                    w_hh,
                    b,
                    cache,
                } => {
                    let xv = &self.nodes[x.index].value;
                    let mut dx = take_or_zero(&mut adj, *x, xv.len());
                    let mut dw_ih = grads.get(*w_ih).clone();
                    let mut dw_hh = grads.get(*w_hh).clone();
                    let mut db = grads.get(*b).clone();
                    kernels::lstm_bwd(
                        cache,
                        xv.data(),
                        xv.cols(),
                        node.value.data(),
                        self.params.get(*w_ih).data(),
                        self.params.get(*w_hh).data(),
                        &dy,
                        Some(&mut dx),
                        dw_ih.data_mut(),
                        dw_hh.data_mut(),
                        db.data_mut(),
                    );
                    *grads.get_mut(*w_ih) = dw_ih;
                    *grads.get_mut(*w_hh) = dw_hh;
                    *grads.get_mut(*b) = db;
                    adj[x.index] = Some(dx);
                }
                Op::Dueling { value, advantage } => {
                    let na = node.value.cols();
                    let rows = node.value.rows();
                    let inv = F::one() / F::of(na as f64);
                    let mut dv = take_or_zero(&mut adj, *value, rows);
                    let mut da = take_or_zero(&mut adj, *advantage, rows * na);
                    for r in 0..rows {
                        let row = &dy[r * na..(r + 1) * na];
                        let total: F = row.iter().copied().sum();
                        dv[r] += total;
                        for (c, &g) in row.iter().enumerate() {
                            da[r * na + c] += g - total * inv;
                        }
                    }
                    adj[value.index] = Some(dv);
                    adj[advantage.index] = Some(da);
                }
                Op::PickCols { x, cols } => {
                    let xv = &self.nodes[x.index].value;
                    let c = xv.cols();
                    let mut dx = take_or_zero(&mut adj, *x, xv.len());
                    for (r, &col) in cols.iter().enumerate() {
                        dx[r * c + col] += dy[r];
                    }
                    adj[x.index] = Some(dx);
                }
                Op::SoftmaxXent {
                    logits,
                    targets,
                    weights,
                } => {
                    let lv = &self.nodes[logits.index].value;
                    let c = lv.cols();
                    let probs = kernels::softmax_rows(lv.data(), c);
                    let mut dl = take_or_zero(&mut adj, *logits, lv.len());
                    for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        let scale = dy[0] * w;
                        for k in 0..c {
                            let onehot = if k == t { F::one() } else { F::zero() };
                            dl[r * c + k] += scale * (probs[r * c + k] - onehot);
                        }
                    }
                    adj[logits.index] = Some(dl);
                }
                Op::WeightedSquaredError {
                    pred,
                    targets,
                    weights,
                } => {
                    let pv = &self.nodes[pred.index].value;
                    let mut dp = take_or_zero(&mut adj, *pred, pv.len());
                    let two = F::of(2.0);
                    for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        dp[r] += dy[0] * two * w * (pv.data()[r] - t);
                    }
                    adj[pred.index] = Some(dp);
                }
            }
        }
        Ok(grads)
    }
}

fn take_or_zero<F: Scalar>(adj: &mut [Option<Vec<F>>], v: Var, len: usize) -> Vec<F> {
    adj[v.index].take().unwrap_or_else(|| vec![F::zero(); len])
}

fn two_mut<F: Scalar>(grads: &mut Gradients<F>, a: ParamId, b: ParamId) -> (&mut [F], &mut [F]) {
    assert_ne!(a, b);
    // Split borrow through raw indices into the aligned vector.
    let (lo, hi, swap) = if a.0 < b.0 { (a.0, b.0, false) } else { (b.0, a.0, true) };
    let tensors = grads.tensors_mut();
    let (left, right) = tensors.split_at_mut(hi);
    let (x, y) = (left[lo].data_mut(), right[0].data_mut());
    if swap {
        (y, x)
    } else {
        (x, y)
    }
}
