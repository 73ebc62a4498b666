//! Competitor optimizers and the random pruning criterion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Gradients, Model};
use crate::network::Network;
use crate::penalty::{shrink_in_place, PenaltyKind, PenaltySpec};
use crate::rng::SeededRng;
use crate::selection::prune_by_rank;
use crate::slbi::Samples;
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineKind {
    Sgd,
    SgdL2 { coef: f64 },
    SgdL1Prox { coef: f64 },
    SgdGroupLassoProx { coef: f64 },
    FsEps { epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub kind: BaselineKind,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl BaselineSpec {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            BaselineKind::SgdL2 { coef } | BaselineKind::SgdL1Prox { coef } | BaselineKind::SgdGroupLassoProx { coef }
                if !(coef >= 0.0) =>
            {
                Err(Error::Argument(format!("penalty coefficient {coef} must be non-negative")))
            }
            BaselineKind::FsEps { epsilon } if !(epsilon > 0.0 && epsilon < 1.0) => {
                Err(Error::Argument(format!("epsilon {epsilon} not in (0, 1)")))
            }
            _ if !(self.lr >= 0.0) => Err(Error::Argument(format!("learning rate {} must be non-negative", self.lr))),
            _ if self.batch_size == 0 => Err(Error::Argument("batch_size must be at least 1".into())),
            _ => Ok(()),
        }
    }
}

fn checked_grad<T: Scalar, M: Model<T>>(model: &mut M, batch: &M::Batch) -> Result<(f64, Gradients<T>)> {
    let (loss, grads) = model.loss_and_grad(batch)?;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::Divergence {
            step: 0,
            reason: "non-finite loss or gradient".into(),
        });
    }
    Ok((loss, grads))
}

fn apply_sgd<T: Scalar, M: Model<T>>(model: &mut M, grads: &Gradients<T>, lr: T) -> Result<()> {
    for layer in model.param_layers() {
        let g = grads
            .get(layer)
            .ok_or_else(|| Error::State(format!("no gradient for layer {layer}")))?;
        let p = model.params_mut(layer).expect("listed by param_layers");
        p.weight.axpy(-lr, &g.weight)?;
        if let (Some(b), Some(gb)) = (&mut p.bias, &g.bias) {
            b.axpy(-lr, gb)?;
        }
    }
    Ok(())
}

/// `Θ ← Θ − lr·∇L`; returns the batch loss.
pub fn sgd_step<T: Scalar, M: Model<T>>(model: &mut M, batch: &M::Batch, lr: f64) -> Result<f64> {
    let (loss, grads) = checked_grad(model, batch)?;
    apply_sgd(model, &grads, T::of(lr))?;
    Ok(loss)
}

/// SGD on `L`, then weight decay (L2) or a proximal shrink with threshold
/// `lr·coef` (L1 / group lasso) on the weights of `layers`.
pub fn penalized_sgd_step<T: Scalar, M: Model<T>>(
    model: &mut M,
    batch: &M::Batch,
    spec: &BaselineSpec,
    layers: &[usize],
) -> Result<f64> {
    match spec.kind {
        BaselineKind::FsEps { epsilon } => return fs_eps_step(model, batch, epsilon, layers),
        BaselineKind::SgdL2 { coef } => {
            let (loss, mut grads) = checked_grad(model, batch)?;
            for &l in layers {
                let w = model
                    .params(l)
                    .ok_or_else(|| Error::Index(format!("layer {l} has no parameters")))?
                    .weight
                    .clone();
                let g = grads.layers[l].as_mut().expect("parametric layer has a gradient");
                g.weight.axpy(T::of(coef), &w)?;
            }
            apply_sgd(model, &grads, T::of(spec.lr))?;
            return Ok(loss);
        }
        _ => {}
    }
    let loss = sgd_step(model, batch, spec.lr)?;
    let (kind, coef) = match spec.kind {
        BaselineKind::SgdL1Prox { coef } => (PenaltyKind::Lasso, coef),
        BaselineKind::SgdGroupLassoProx { coef } => (PenaltyKind::GroupLasso, coef),
        _ => return Ok(loss),
    };
    let threshold = T::of(spec.lr * coef);
    for &l in layers {
        let p = model
            .params_mut(l)
            .ok_or_else(|| Error::Index(format!("layer {l} has no parameters")))?;
        let pspec = PenaltySpec::for_weight(kind, p.weight.shape());
        shrink_in_place(p.weight.data_mut(), threshold, T::one(), &pspec);
    }
    Ok(loss)
}

/// Moves only the weight coordinate with the largest `|g|` across `layers`
/// by `ε` against its gradient sign. Ties go to the lowest (layer, flat
/// index); an all-zero gradient is a no-op.
pub fn fs_eps_step<T: Scalar, M: Model<T>>(model: &mut M, batch: &M::Batch, epsilon: f64, layers: &[usize]) -> Result<f64> {
    let (loss, grads) = checked_grad(model, batch)?;
    let mut best: Option<(usize, usize, T)> = None;
    let mut sorted = layers.to_vec();
    sorted.sort_unstable();
    for &l in &sorted {
        let g = grads
            .get(l)
            .ok_or_else(|| Error::Index(format!("layer {l} has no gradient")))?;
        for (i, &v) in g.weight.data().iter().enumerate() {
            if best.is_none_or(|(_, _, b)| v.abs() > b.abs()) {
                best = Some((l, i, v));
            }
        }
    }
    if let Some((l, i, v)) = best {
        if !v.is_zero() {
            let w = model.params_mut(l).expect("has gradient").weight.data_mut();
            w[i] -= T::of(epsilon) * v.signum();
        }
    }
    Ok(loss)
}

/// Zeroes a uniformly random `⌊rate·G⌋` groups of `layer`.
pub fn random_prune<T: Scalar>(net: &Network<T>, layer: usize, spec: &PenaltySpec, rate: f64, rng: &mut SeededRng) -> Result<Network<T>> {
    let order = rng.permutation(spec.num_groups());
    prune_by_rank(net, layer, spec, &order, rate)
}

/// Epoch loop for a baseline optimizer with the same shuffling scheme as
/// the split iteration, so equal seeds give paired batch streams.
pub fn train_baseline<T, M, D>(model: &mut M, spec: &BaselineSpec, layers: &[usize], data: &D, rng: &mut SeededRng) -> Result<Vec<f64>>
where
    T: Scalar,
    M: Model<T>,
    D: Samples<Batch = M::Batch>,
{
    spec.validate()?;
    let mut losses = Vec::with_capacity(spec.epochs);
    for _ in 0..spec.epochs {
        let order = rng.permutation(data.len());
        let mut sum = 0.0;
        for chunk in order.chunks(spec.batch_size) {
            let batch = data.gather(chunk)?;
            let loss = match spec.kind {
                BaselineKind::Sgd => sgd_step(model, &batch, spec.lr)?,
                _ => penalized_sgd_step(model, &batch, spec, layers)?,
            };
            sum += loss * chunk.len() as f64;
        }
        losses.push(sum / data.len() as f64);
    }
    Ok(losses)
}
