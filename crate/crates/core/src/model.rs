use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// Weight and optional bias of one parametric layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T: Scalar = f64> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Scalar> Params<T> {
    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Tensor::zeros(self.weight.shape()),
            bias: self.bias.as_ref().map(|b| Tensor::zeros(b.shape())),
        }
    }

    pub fn count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Tensor::len)
    }

    pub fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.as_ref().is_none_or(Tensor::is_finite)
    }
}

/// Per-layer gradients, indexed like the model's layer list; `None` for
/// layers without parameters.
#[derive(Debug, Clone)]
pub struct Gradients<T: Scalar = f64> {
    pub layers: Vec<Option<Params<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, layer: usize) -> Option<&Params<T>> {
        self.layers.get(layer).and_then(Option::as_ref)
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().flatten().all(Params::is_finite)
    }
}

/// Anything the optimizers can train: a differentiable loss over batches
/// plus addressable parameter slots.
pub trait Model<T: Scalar>: Clone {
    type Batch;

    /// Mean loss over `batch` and its exact gradient.
    fn loss_and_grad(&mut self, batch: &Self::Batch) -> Result<(f64, Gradients<T>)>;

    /// Mean loss over `batch`.
    fn loss(&mut self, batch: &Self::Batch) -> Result<f64> {
        Ok(self.loss_and_grad(batch)?.0)
    }

    fn params(&self, layer: usize) -> Option<&Params<T>>;

    fn params_mut(&mut self, layer: usize) -> Option<&mut Params<T>>;

    /// Indices of the layers that carry parameters, in order.
    fn param_layers(&self) -> Vec<usize>;

    fn layer_name(&self, layer: usize) -> String;
}
