//! Single linear layer under squared loss, the setting in which the
//! stochastic iteration reduces to plain Split LBI.

use crate::error::{dim_err, Error, Result};
use crate::model::{Gradients, Model, Params};
use crate::slbi::Samples;
use crate::tensor::{dot, Tensor};

/// `y ≈ X w` with `w` stored as a `[1, p]` weight and no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    params: Params<f64>,
}

impl LinearModel {
    pub fn zeros(p: usize) -> Self {
        Self {
            params: Params {
                weight: Tensor::zeros(&[1, p]),
                bias: None,
            },
        }
    }

    pub fn weight(&self) -> &Tensor {
        &self.params.weight
    }

    pub fn dim(&self) -> usize {
        self.params.weight.len()
    }
}

#[derive(Debug, Clone)]
pub struct LinearBatch {
    /// `[n, p]`.
    pub x: Tensor,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LinearData {
    x: Tensor,
    y: Vec<f64>,
}

impl LinearData {
    pub fn new(x: Tensor, y: Vec<f64>) -> Result<Self> {
        if x.shape().len() != 2 || x.shape()[0] != y.len() {
            return dim_err(format!("design {:?} with {} responses", x.shape(), y.len()));
        }
        Ok(Self { x, y })
    }

    /// The full data set as one batch.
    pub fn all(&self) -> LinearBatch {
        LinearBatch {
            x: self.x.clone(),
            y: self.y.clone(),
        }
    }
}

impl Samples for LinearData {
    type Batch = LinearBatch;

    fn len(&self) -> usize {
        self.y.len()
    }

    fn gather(&self, indices: &[usize]) -> Result<LinearBatch> {
        let p = self.x.shape()[1];
        let mut x = Vec::with_capacity(indices.len() * p);
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.y.len() {
                return Err(Error::Index(format!("sample {i} of {}", self.y.len())));
            }
            x.extend_from_slice(&self.x.data()[i * p..(i + 1) * p]);
            y.push(self.y[i]);
        }
        Ok(LinearBatch {
            x: Tensor::new(vec![indices.len(), p], x)?,
            y,
        })
    }
}

impl Model<f64> for LinearModel {
    type Batch = LinearBatch;

    /// `(1/2n) ‖y − X w‖²` and its gradient `−(1/n) Xᵀ (y − X w)`.
    fn loss_and_grad(&mut self, batch: &LinearBatch) -> Result<(f64, Gradients<f64>)> {
        let p = self.dim();
        if batch.x.shape()[1] != p {
            return dim_err(format!("batch has {} features, model {p}", batch.x.shape()[1]));
        }
        let n = batch.y.len();
        let w = self.params.weight.data();
        let mut grad = vec![0.0; p];
        let mut loss = 0.0;
        for (row, &y) in batch.x.data().chunks_exact(p).zip(&batch.y) {
            let r = y - dot(row, w);
            loss += r * r;
            for (g, &x) in grad.iter_mut().zip(row) {
                *g -= r * x;
            }
        }
        let inv = 1.0 / n as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        let grads = Gradients {
            layers: vec![Some(Params {
                weight: Tensor::new(vec![1, p], grad)?,
                bias: None,
            })],
        };
        Ok((0.5 * loss * inv, grads))
    }

    fn params(&self, layer: usize) -> Option<&Params<f64>> {
        (layer == 0).then_some(&self.params)
    }

    fn params_mut(&mut self, layer: usize) -> Option<&mut Params<f64>> {
        (layer == 0).then_some(&mut self.params)
    }

    fn param_layers(&self) -> Vec<usize> {
        vec![0]
    }

    fn layer_name(&self, _layer: usize) -> String {
        "linear".into()
    }
}

/// Area under the ROC curve of `scores` against binary `truth`, via the
/// rank-sum statistic with average ranks for ties.
pub fn auc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    if scores.len() != truth.len() {
        return dim_err("scores and labels differ in length");
    }
    let pos = truth.iter().filter(|&&t| t).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Argument("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let rank_sum: f64 = ranks.iter().zip(truth).filter(|(_, &t)| t).map(|(r, _)| r).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}
