use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::Scalar;

/// Handle to one tensor inside a [`ParameterSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors plus the Adam moment estimates for each of them.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<F> {
    names: Vec<String>,
    values: Vec<Tensor<F>>,
    first_moment: Vec<Tensor<F>>,
    second_moment: Vec<Tensor<F>>,
    step: u64,
}

impl<F: Scalar> Default for ParameterSet<F> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step: 0,
        }
    }
}

impl<F: Scalar> ParameterSet<F> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Names must be unique within the set.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.first_moment.push(Tensor::zeros(value.shape()));
        self.second_moment.push(Tensor::zeros(value.shape()));
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Zero gradients aligned with this set.
    pub fn zero_grads(&self) -> Gradients<F> {
        Gradients {
            grads: self.values.iter().map(|v| Tensor::zeros(v.shape())).collect(),
        }
    }

    /// Overwrites values with those of `other`; optimizer state is left alone.
    pub fn copy_values_from(&mut self, other: &ParameterSet<F>) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Config("parameter sets have different layouts".into()));
        }
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            if dst.shape() != src.shape() {
                return Err(Error::Config("parameter shape mismatch".into()));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    pub(crate) fn adam_parts(
        &mut self,
    ) -> (
        &mut [Tensor<F>],
        &mut [Tensor<F>],
        &mut [Tensor<F>],
        &mut u64,
    ) {
        (
            &mut self.values,
            &mut self.first_moment,
            &mut self.second_moment,
            &mut self.step,
        )
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Tensor::is_finite)
    }
}

/// Gradient tensors aligned index-for-index with a [`ParameterSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    grads: Vec<Tensor<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.grads[id.0]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor<F>> {
        self.grads.iter()
    }

    /// Global L2 norm over every gradient entry.
    pub fn global_norm(&self) -> F {
        self.grads.iter().map(Tensor::sum_squares).sum::<F>().sqrt()
    }

    pub fn scale(&mut self, s: F) {
        self.grads.iter_mut().for_each(|g| g.scale(s));
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(Tensor::is_finite)
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor<F>] {
        &mut self.grads
    }
}

/// Weight matrix `[out, in]` drawn from `U(-1/sqrt(in), 1/sqrt(in))`.
pub fn init_uniform<F: Scalar, R: Rng + ?Sized>(rng: &mut R, out_dim: usize, in_dim: usize) -> Tensor<F> {
    let bound = 1.0 / (in_dim as f64).sqrt();
    let data = (0..out_dim * in_dim)
        .map(|_| F::of(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::from_parts_unchecked(out_dim, in_dim, data)
}

/// Embedding table with rows drawn from `N(0, 1) / sqrt(dim)`.
pub fn init_embedding<F: Scalar, R: Rng + ?Sized>(rng: &mut R, rows: usize, dim: usize) -> Tensor<F> {
    let scale = 1.0 / (dim as f64).sqrt();
    let data = (0..rows * dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            F::of(z * scale)
        })
        .collect();
    Tensor::from_parts_unchecked(rows, dim, data)
}
