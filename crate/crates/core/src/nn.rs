//! Parameter storage shared by the SR model and the weight predictors.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

/// Named parameter tensors in declaration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

/// Tape handles for every parameter of a store, valid for one tape.
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn get(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces every tensor, keeping names. Shapes must match.
    pub fn replace_all(&mut self, tensors: Vec<Tensor<T>>) -> Result<()> {
        if tensors.len() != self.tensors.len() {
            return Err(Error::ShapeMismatch {
                op: "load parameters",
                dim: "tensor count",
                expected: self.tensors.len(),
                actual: tensors.len(),
            });
        }
        for (name, (old, new)) in self.names.iter().zip(self.tensors.iter().zip(&tensors)) {
            if old.shape() != new.shape() {
                return Err(Error::invalid(
                    "load parameters",
                    format!("{name}: shape {:?} does not match {:?}", new.shape(), old.shape()),
                ));
            }
        }
        self.tensors = tensors;
        Ok(())
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        Bound(
            self.tensors
                .iter()
                .map(|t| tape.leaf(t.clone().with_requires_grad(trainable)))
                .collect(),
        )
    }

    /// Gradients for each parameter after `tape.backward`; zeros where none flowed.
    pub fn grads(&self, tape: &Tape<T>, bound: &Bound) -> Vec<Vec<T>> {
        self.tensors
            .iter()
            .zip(&bound.0)
            .map(|(t, &v)| tape.grad(v).map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); t.len()]))
            .collect()
    }

    /// Detached copy in another precision.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast::<U>().with_requires_grad(false)).collect(),
        }
    }
}

/// Uniform `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, the default init.
pub fn fan_in_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| T::of(rng.random_range(-bound..bound)))
}
