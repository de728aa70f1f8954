use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::kernels;
use crate::nn::params::{init_embedding, init_uniform};
use crate::nn::{ParamId, ParameterSet, Tensor};
use crate::scalar::Scalar;

/// Affine layer `y = W x + b` with `W: [out, in]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    weight: ParamId,
    bias: ParamId,
    in_dim: usize,
    out_dim: usize,
}

impl Linear {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        params: &mut ParameterSet<F>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let weight = params.add(format!("{name}.weight"), init_uniform(rng, out_dim, in_dim));
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }
    pub fn bias(&self) -> ParamId {
        self.bias
    }
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }
}

/// Lookup table mapping an integer index to a learned row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Embedding {
    table: ParamId,
    rows: usize,
    dim: usize,
}

impl Embedding {
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        params: &mut ParameterSet<F>,
        name: &str,
        rows: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let table = params.add(format!("{name}.table"), init_embedding(rng, rows, dim));
        Self { table, rows, dim }
    }

    pub fn table(&self) -> ParamId {
        self.table
    }
    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Single-layer LSTM with gates stacked as (input, forget, candidate, output).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lstm {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
    input_dim: usize,
    hidden: usize,
}

impl Lstm {
    /// `forget_bias` seeds the forget-gate slice of the bias vector.
    pub fn new<F: Scalar, R: Rng + ?Sized>(
        params: &mut ParameterSet<F>,
        name: &str,
        input_dim: usize,
        hidden: usize,
        forget_bias: f64,
        rng: &mut R,
    ) -> Self {
        let w_ih = params.add(format!("{name}.w_ih"), init_uniform(rng, 4 * hidden, input_dim));
        let w_hh = params.add(format!("{name}.w_hh"), init_uniform(rng, 4 * hidden, hidden));
        let mut b = Tensor::zeros(&[4 * hidden]);
        for v in &mut b.data_mut()[hidden..2 * hidden] {
            *v = F::of(forget_bias);
        }
        let bias = params.add(format!("{name}.bias"), b);
        Self {
            w_ih,
            w_hh,
            bias,
            input_dim,
            hidden,
        }
    }

    pub fn w_ih(&self) -> ParamId {
        self.w_ih
    }
    pub fn w_hh(&self) -> ParamId {
        self.w_hh
    }
    pub fn bias(&self) -> ParamId {
        self.bias
    }
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
    pub fn hidden(&self) -> usize {
        self.hidden
    }
}

/// Recurrent `(hidden, cell)` state of one LSTM sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<F> {
    pub hidden: Vec<F>,
    pub cell: Vec<F>,
}

impl<F: Scalar> LstmState<F> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            hidden: vec![F::zero(); dim],
            cell: vec![F::zero(); dim],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.hidden.iter().chain(&self.cell).all(|v| v.is_finite())
    }
}

/// `weight · input + bias` for a single vector.
pub fn linear_forward<F: Scalar>(params: &ParameterSet<F>, layer: &Linear, input: &[F]) -> Result<Vec<F>> {
    if input.len() != layer.in_dim {
        return Err(Error::Config(format!(
            "linear layer expects {} inputs, got {}",
            layer.in_dim,
            input.len()
        )));
    }
    Ok(kernels::linear_fwd(
        input,
        1,
        layer.in_dim,
        params.get(layer.weight).data(),
        layer.out_dim,
        Some(params.get(layer.bias).data()),
    ))
}

/// Row `index` of an embedding table.
pub fn embed_lookup<F: Scalar>(table: &Tensor<F>, index: usize) -> Result<Vec<F>> {
    if index >= table.rows() {
        return Err(Error::Input(format!(
            "embedding index {index} out of range for {} rows",
            table.rows()
        )));
    }
    Ok(table.row(index).to_vec())
}

/// One LSTM step; returns the new hidden vector (also stored in the new state).
pub fn lstm_step<F: Scalar>(
    params: &ParameterSet<F>,
    layer: &Lstm,
    input: &[F],
    state: &LstmState<F>,
) -> Result<(Vec<F>, LstmState<F>)> {
    if input.len() != layer.input_dim {
        return Err(Error::Config(format!(
            "lstm expects {} inputs, got {}",
            layer.input_dim,
            input.len()
        )));
    }
    if !state.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite LSTM state entering step: hidden={:?} cell={:?}",
            state.hidden, state.cell
        )));
    }
    let (out, cache) = kernels::lstm_fwd(
        input,
        1,
        1,
        layer.input_dim,
        params.get(layer.w_ih).data(),
        params.get(layer.w_hh).data(),
        params.get(layer.bias).data(),
        layer.hidden,
        &state.hidden,
        &state.cell,
    );
    let next = LstmState {
        hidden: out.clone(),
        cell: cache.cells,
    };
    if !next.is_finite() {
        return Err(Error::Numeric("non-finite LSTM state after step".into()));
    }
    Ok((out, next))
}

/// Stable softmax plus `-ln p[target]`.
pub fn softmax_cross_entropy<F: Scalar>(logits: &[F], target: usize) -> Result<(F, Vec<F>)> {
    if target >= logits.len() {
        return Err(Error::Input(format!(
            "target {target} out of range for {} logits",
            logits.len()
        )));
    }
    let probs = kernels::softmax_rows(logits, logits.len());
    let logp = kernels::log_softmax_rows(logits, logits.len());
    Ok((-logp[target], probs))
}

/// Row-wise softmax over a `[rows, cols]` slice.
pub fn softmax<F: Scalar>(logits: &[F], cols: usize) -> Vec<F> {
    kernels::softmax_rows(logits, cols)
}

/// Row-wise log-softmax over a `[rows, cols]` slice.
pub fn log_softmax<F: Scalar>(logits: &[F], cols: usize) -> Vec<F> {
    kernels::log_softmax_rows(logits, cols)
}
