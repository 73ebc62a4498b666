//! The stochastic split linearized Bregman iteration and its training loop.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::network::Batch;
use crate::path::SolutionPath;
use crate::penalty::{proj_support, shrink_in_place, PenaltyKind, PenaltySpec};
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlbiHyper {
    pub kappa: f64,
    pub nu: f64,
    pub alpha: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: Option<usize>,
}

impl Default for SlbiHyper {
    fn default() -> Self {
        Self::new(1.0, 10.0)
    }
}

impl SlbiHyper {
    /// Step size follows `alpha = 0.01 / kappa`.
    pub fn new(kappa: f64, nu: f64) -> Self {
        Self {
            kappa,
            nu,
            alpha: 0.01 / kappa,
            batch_size: 64,
            epochs: 20,
            patience: Some(10),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Argument(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("kappa", self.kappa)?;
        positive("nu", self.nu)?;
        positive("alpha", self.alpha)?;
        if self.batch_size == 0 {
            return Err(Error::Argument("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Auxiliary `Z` and sparse estimator `Γ` for one penalized weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SlbiLayerState<T: Scalar = f64> {
    pub layer_index: usize,
    pub z: Tensor<T>,
    pub gamma: Tensor<T>,
    pub spec: PenaltySpec,
}

impl<T: Scalar> SlbiLayerState<T> {
    /// Null start: `Z = Γ = 0`.
    pub fn new(layer_index: usize, weight_shape: &[usize], kind: PenaltyKind) -> Self {
        Self {
            layer_index,
            z: Tensor::zeros(weight_shape),
            gamma: Tensor::zeros(weight_shape),
            spec: PenaltySpec::for_weight(kind, weight_shape),
        }
    }

    pub fn kind(&self) -> PenaltyKind {
        self.spec.kind
    }

    /// `W̃ = Proj_supp(Γ)(W)`.
    pub fn sparse_weight(&self, w: &Tensor<T>) -> Result<Tensor<T>> {
        proj_support(w, &self.gamma, &self.spec)
    }
}

/// Optimizer over a model with any number of penalized layers.
#[derive(Debug, Clone)]
pub struct SplitLbi<T: Scalar = f64> {
    pub hyper: SlbiHyper,
    pub states: Vec<SlbiLayerState<T>>,
    steps: usize,
}

impl<T: Scalar> SplitLbi<T> {
    pub fn new(hyper: SlbiHyper, states: Vec<SlbiLayerState<T>>) -> Result<Self> {
        hyper.validate()?;
        let mut seen: Vec<usize> = states.iter().map(|s| s.layer_index).collect();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Argument("a layer is penalized twice".into()));
        }
        Ok(Self {
            hyper,
            states,
            steps: 0,
        })
    }

    /// Null-start states for the given `(layer, kind)` pairs of `model`.
    pub fn for_model<M: Model<T>>(hyper: SlbiHyper, model: &M, penalized: &[(usize, PenaltyKind)]) -> Result<Self> {
        let states = penalized
            .iter()
            .map(|&(layer, kind)| {
                let p = model
                    .params(layer)
                    .ok_or_else(|| Error::Index(format!("layer {layer} has no parameters")))?;
                Ok(SlbiLayerState::new(layer, p.weight.shape(), kind))
            })
            .collect::<Result<_>>()?;
        Self::new(hyper, states)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn state_for(&self, layer: usize) -> Option<&SlbiLayerState<T>> {
        self.states.iter().find(|s| s.layer_index == layer)
    }

    pub fn state_for_mut(&mut self, layer: usize) -> Option<&mut SlbiLayerState<T>> {
        self.states.iter_mut().find(|s| s.layer_index == layer)
    }

    /// One iteration on `batch`; returns the mini-batch loss `L`.
    ///
    /// All gradients are taken at the current iterate before any update,
    /// and the `Z` update uses the pre-update `W`.
    pub fn step<M: Model<T>>(&mut self, model: &mut M, batch: &M::Batch) -> Result<f64> {
        let (loss, grads) = model.loss_and_grad(batch)?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::Divergence {
                step: self.steps,
                reason: "non-finite loss or gradient".into(),
            });
        }
        let kappa = T::of(self.hyper.kappa);
        let alpha = T::of(self.hyper.alpha);
        let inv_nu = T::of(1.0 / self.hyper.nu);
        let kappa_alpha = T::of(self.hyper.kappa * self.hyper.alpha);

        for layer in model.param_layers() {
            let g = grads
                .get(layer)
                .ok_or_else(|| Error::State(format!("no gradient for layer {layer}")))?;
            let state = self.states.iter_mut().find(|s| s.layer_index == layer);
            let p = model.params_mut(layer).expect("listed by param_layers");
            if let (Some(b), Some(gb)) = (&mut p.bias, &g.bias) {
                b.axpy(-alpha, gb)?;
            }
            match state {
                None => p.weight.axpy(-alpha, &g.weight)?,
                Some(s) => {
                    s.spec.check(&p.weight)?;
                    g.weight.same_shape(&p.weight)?;
                    let w = p.weight.data_mut();
                    let z = s.z.data_mut();
                    let gamma = s.gamma.data();
                    for (i, wi) in w.iter_mut().enumerate() {
                        let w_old = *wi;
                        let gap = (gamma[i] - w_old) * inv_nu;
                        z[i] -= alpha * gap;
                        *wi = w_old - kappa_alpha * (g.weight.data()[i] - gap);
                    }
                    let mut gamma = s.z.clone();
                    shrink_in_place(gamma.data_mut(), T::one(), kappa, &s.spec);
                    s.gamma = gamma;
                }
            }
        }
        self.steps += 1;
        Ok(loss)
    }

    /// Copy of `model` with every penalized weight replaced by `W̃`.
    pub fn sparse_model<M: Model<T>>(&self, model: &M) -> Result<M> {
        let mut out = model.clone();
        for s in &self.states {
            let p = out
                .params_mut(s.layer_index)
                .ok_or_else(|| Error::Index(format!("layer {} has no parameters", s.layer_index)))?;
            p.weight = s.sparse_weight(&p.weight)?;
        }
        Ok(out)
    }
}

/// `L(Θ) + Σ_l ‖Γ^l − W^l‖² / (2ν)` over the penalized layers.
pub fn split_loss<T: Scalar, M: Model<T>>(model: &mut M, batch: &M::Batch, states: &[SlbiLayerState<T>], nu: f64) -> Result<f64> {
    let mut total = model.loss(batch)?;
    for s in states {
        let w = &model
            .params(s.layer_index)
            .ok_or_else(|| Error::Index(format!("layer {} has no parameters", s.layer_index)))?
            .weight;
        s.gamma.same_shape(w)?;
        let gap: f64 = s
            .gamma
            .data()
            .iter()
            .zip(w.data())
            .map(|(g, w)| {
                let d = (*g - *w).as_f64();
                d * d
            })
            .sum();
        total += gap / (2.0 * nu);
    }
    Ok(total)
}

/// Something that can be cut into mini-batches by sample index.
pub trait Samples {
    type Batch;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn gather(&self, indices: &[usize]) -> Result<Self::Batch>;
}

impl<T: Scalar> Samples for Dataset<T> {
    type Batch = Batch<T>;

    fn len(&self) -> usize {
        Dataset::len(self)
    }

    fn gather(&self, indices: &[usize]) -> Result<Batch<T>> {
        Dataset::gather(self, indices)
    }
}

/// Runs after each epoch's path row is recorded. Returns whether the model
/// structure changed.
pub trait EpochHook<T: Scalar, M: Model<T>> {
    fn after_epoch(
        &mut self,
        epoch: usize,
        model: &mut M,
        opt: &mut SplitLbi<T>,
        path: &mut SolutionPath,
        rng: &mut SeededRng,
    ) -> Result<bool>;
}

pub type Validator<'a, M> = dyn FnMut(&M) -> Result<f64> + 'a;

#[derive(Debug, Clone)]
pub struct Best<T: Scalar, M> {
    pub epoch: usize,
    pub score: f64,
    pub model: M,
    pub states: Vec<SlbiLayerState<T>>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Scalar, M> {
    pub path: SolutionPath,
    /// Mean mini-batch loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub val_scores: Vec<f64>,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub best: Option<Best<T, M>>,
}

/// Consecutive epochs above the loss ceiling before aborting.
const DIVERGENCE_EPOCHS: usize = 3;
const DIVERGENCE_FACTOR: f64 = 10.0;

/// Epoch loop: seeded shuffle, mini-batch steps, one path record per epoch
/// (1-based), validation with best-model retention, hooks, then patience.
pub fn run_training<T, M, D>(
    model: &mut M,
    opt: &mut SplitLbi<T>,
    data: &D,
    rng: &mut SeededRng,
    mut validate: Option<&mut Validator<'_, M>>,
    hooks: &mut [&mut dyn EpochHook<T, M>],
) -> Result<TrainOutcome<T, M>>
where
    T: Scalar,
    M: Model<T>,
    D: Samples<Batch = M::Batch>,
{
    opt.hyper.validate()?;
    if data.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    let mut out = TrainOutcome {
        path: SolutionPath::default(),
        epoch_losses: Vec::new(),
        val_scores: Vec::new(),
        epochs_run: 0,
        stopped_early: false,
        best: None,
    };
    let mut first_loss: Option<f64> = None;
    let mut above = 0;
    let mut stale = 0;
    let bs = opt.hyper.batch_size;
    for epoch in 1..=opt.hyper.epochs {
        let order = rng.permutation(data.len());
        let mut sum = 0.0;
        let mut count = 0;
        for chunk in order.chunks(bs) {
            let batch = data.gather(chunk)?;
            let loss = opt.step(model, &batch)?;
            first_loss.get_or_insert(loss);
            sum += loss * chunk.len() as f64;
            count += chunk.len();
        }
        let mean = sum / count as f64;
        out.epoch_losses.push(mean);
        out.epochs_run = epoch;
        out.path.record(epoch, model, &opt.states)?;

        if mean > DIVERGENCE_FACTOR * first_loss.unwrap_or(f64::INFINITY) {
            above += 1;
            if above >= DIVERGENCE_EPOCHS {
                return Err(Error::Divergence {
                    step: opt.steps(),
                    reason: format!("loss {mean} above {DIVERGENCE_FACTOR}x its initial value for {above} epochs"),
                });
            }
        } else {
            above = 0;
        }

        if let Some(v) = validate.as_mut() {
            let score = v(model)?;
            out.val_scores.push(score);
            if out.best.as_ref().is_none_or(|b| score > b.score) {
                out.best = Some(Best {
                    epoch,
                    score,
                    model: model.clone(),
                    states: opt.states.clone(),
                });
                stale = 0;
            } else {
                stale += 1;
            }
        }

        let mut changed = false;
        for hook in hooks.iter_mut() {
            changed |= hook.after_epoch(epoch, model, opt, &mut out.path, rng)?;
        }
        // a snapshot from before a structural change no longer matches the path
        if changed {
            stale = 0;
            out.best = None;
        }
        if let Some(p) = opt.hyper.patience {
            if validate.is_some() && stale >= p {
                out.stopped_early = true;
                break;
            }
        }
    }
    Ok(out)
}
