//! Forward selection (growing conv layers along the path) and backward
//! selection (retraining-free pruning ranked by the importance score).

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::network::{append_rows, widen_rows, LayerSpec, Network};
use crate::path::{PathSummary, SolutionPath};
use crate::penalty::{support, PenaltyKind, PenaltySpec};
use crate::rng::SeededRng;
use crate::slbi::{EpochHook, SlbiLayerState, SplitLbi};
use crate::tensor::{group_l2_norm, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForwardPolicy {
    pub threshold: f64,
    pub filters_per_expansion: usize,
    pub max_filters: usize,
    pub cooldown: usize,
}

impl Default for ForwardPolicy {
    fn default() -> Self {
        Self {
            threshold: 0.8,
            filters_per_expansion: 2,
            max_filters: 64,
            cooldown: 1,
        }
    }
}

impl ForwardPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::Argument(format!("threshold {} not in (0, 1]", self.threshold)));
        }
        if self.filters_per_expansion == 0 {
            return Err(Error::Argument("filters_per_expansion must be at least 1".into()));
        }
        Ok(())
    }
}

/// Fraction of groups with a nonzero `Γ` group.
pub fn selection_ratio<T: Scalar>(state: &SlbiLayerState<T>) -> Result<f64> {
    if state.spec.kind != PenaltyKind::GroupLasso {
        return Err(Error::UnsupportedKind(
            "selection ratio is defined for group-lasso layers".into(),
        ));
    }
    let s = support(&state.gamma, &state.spec)?;
    Ok(s.iter().filter(|&&a| a).count() as f64 / s.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionEvent {
    pub epoch: usize,
    pub layer: String,
    pub old_filters: usize,
    pub new_filters: usize,
    pub ratio: f64,
}

/// Grows conv layer `layer` by `m` filters, keeping optimizer state and the
/// recorded path aligned. New `Z`/`Γ` entries are exact zeros.
pub fn expand_layer<T: Scalar>(
    net: &mut Network<T>,
    opt: &mut SplitLbi<T>,
    path: &mut SolutionPath,
    layer: usize,
    m: usize,
    rng: &mut SeededRng,
) -> Result<(usize, usize)> {
    let name = net.name_of(layer);
    let old_out = net.weight(layer)?.shape()[0];
    let resize = net.resize_layer(layer, old_out + m, rng)?;
    if let Some(s) = opt.state_for_mut(layer) {
        let kind = s.kind();
        s.z = append_rows(&s.z, m)?;
        s.gamma = append_rows(&s.gamma, m)?;
        s.spec = PenaltySpec::for_weight(kind, s.z.shape());
        let new_groups = s.spec.num_groups();
        let old_groups = path.first_entry(&name).map_or(0, <[_]>::len);
        path.extend_groups(&name, new_groups.saturating_sub(old_groups));
    }
    if let Some(d) = resize.downstream {
        let dname = net.name_of(d.layer);
        if let Some(s) = opt.state_for_mut(d.layer) {
            let kind = s.kind();
            s.z = widen_rows(&s.z, d.new_row_len, T::zero())?;
            s.gamma = widen_rows(&s.gamma, d.new_row_len, T::zero())?;
            s.spec = PenaltySpec::for_weight(kind, s.z.shape());
            if kind == PenaltyKind::Lasso {
                let (old, new) = (d.old_row_len, d.new_row_len);
                path.remap_groups(&dname, s.spec.num_groups(), |g| (g / old) * new + g % old)?;
            }
        }
    }
    Ok((resize.old_out, resize.new_out))
}

/// Epoch hook implementing forward selection on one conv layer.
#[derive(Debug, Clone)]
pub struct ForwardSelector {
    pub policy: ForwardPolicy,
    pub layer: usize,
    pub events: Vec<ExpansionEvent>,
    next_allowed: usize,
}

impl ForwardSelector {
    pub fn new(policy: ForwardPolicy, layer: usize) -> Result<Self> {
        policy.validate()?;
        Ok(Self {
            policy,
            layer,
            events: Vec::new(),
            next_allowed: 0,
        })
    }

    /// Expansion log as JSON lines.
    pub fn log_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }
}

impl<T: Scalar> EpochHook<T, Network<T>> for ForwardSelector {
    fn after_epoch(
        &mut self,
        epoch: usize,
        model: &mut Network<T>,
        opt: &mut SplitLbi<T>,
        path: &mut SolutionPath,
        rng: &mut SeededRng,
    ) -> Result<bool> {
        if epoch < self.next_allowed {
            return Ok(false);
        }
        let state = opt
            .state_for(self.layer)
            .ok_or_else(|| Error::State(format!("layer {} is not penalized", self.layer)))?;
        let ratio = selection_ratio(state)?;
        let current = model.weight(self.layer)?.shape()[0];
        let m = self.policy.filters_per_expansion;
        if ratio < self.policy.threshold || current + m > self.policy.max_filters {
            return Ok(false);
        }
        let (old, new) = expand_layer(model, opt, path, self.layer, m, rng)?;
        self.events.push(ExpansionEvent {
            epoch,
            layer: model.name_of(self.layer),
            old_filters: old,
            new_filters: new,
            ratio,
        });
        self.next_allowed = epoch + self.policy.cooldown + 1;
        Ok(true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImportanceWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Min-max normalize `M` and `E` per layer before weighting.
    pub normalize: bool,
}

impl Default for ImportanceWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            normalize: true,
        }
    }
}

impl ImportanceWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || self.lambda1 + self.lambda2 == 0.0 {
            return Err(Error::Argument("importance weights must be non-negative and not both zero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub layer: String,
    pub layer_index: usize,
    pub group: usize,
    /// Group L2 norm of the final dense weight.
    pub m: f64,
    /// First-entry epoch; never-selected groups get `total_epochs + 1`.
    pub e: usize,
    pub sc: f64,
}

fn min_max(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        v.iter().map(|x| (x - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// Scores every group of every penalized layer, `Sc = λ₁·M − λ₂·E`.
pub fn compute_importance<T: Scalar, M: Model<T>>(
    path: &PathSummary,
    model: &M,
    states: &[SlbiLayerState<T>],
    weights: ImportanceWeights,
) -> Result<Vec<Importance>> {
    weights.validate()?;
    if path.total_epochs == 0 {
        return Err(Error::State("importance needs a recorded solution path".into()));
    }
    let never = path.total_epochs + 1;
    let mut out = Vec::new();
    for s in states {
        let name = model.layer_name(s.layer_index);
        let w = &model
            .params(s.layer_index)
            .ok_or_else(|| Error::Index(format!("layer {} has no parameters", s.layer_index)))?
            .weight;
        let m = group_l2_norm(w, &s.spec.groups)?.to_f64_vec();
        let entries = path.first_entry.get(&name).map_or(&[][..], Vec::as_slice);
        let e: Vec<usize> = (0..m.len()).map(|g| entries.get(g).copied().flatten().unwrap_or(never)).collect();
        let ef: Vec<f64> = e.iter().map(|&v| v as f64).collect();
        let (mn, en) = if weights.normalize {
            (min_max(&m), min_max(&ef))
        } else {
            (m.clone(), ef)
        };
        for g in 0..m.len() {
            out.push(Importance {
                layer: name.clone(),
                layer_index: s.layer_index,
                group: g,
                m: m[g],
                e: e[g],
                sc: weights.lambda1 * mn[g] - weights.lambda2 * en[g],
            });
        }
    }
    Ok(out)
}

/// Most important first: descending `Sc`, then smaller `E`, then smaller
/// group index.
pub fn rank(items: &mut [Importance]) {
    items.sort_by(|a, b| {
        b.sc.total_cmp(&a.sc)
            .then(a.e.cmp(&b.e))
            .then(a.layer_index.cmp(&b.layer_index))
            .then(a.group.cmp(&b.group))
    });
}

/// Ordering rule used to decide which groups are removed first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Score,
    Magnitude,
    FirstEntry,
    Random,
}

impl Criterion {
    pub fn name(&self) -> &'static str {
        match self {
            Criterion::Score => "sc",
            Criterion::Magnitude => "m",
            Criterion::FirstEntry => "e",
            Criterion::Random => "random",
        }
    }
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sc" => Ok(Self::Score),
            "m" => Ok(Self::Magnitude),
            "e" => Ok(Self::FirstEntry),
            "random" => Ok(Self::Random),
            other => Err(Error::Argument(format!("unknown pruning criterion `{other}`"))),
        }
    }
}

/// Groups of one layer, most important first, under `criterion`.
pub fn layer_order(importance: &[Importance], layer_index: usize, criterion: Criterion, weights: ImportanceWeights, rng: &mut SeededRng) -> Vec<usize> {
    let mut items: Vec<Importance> = importance.iter().filter(|i| i.layer_index == layer_index).cloned().collect();
    match criterion {
        Criterion::Random => {
            let perm = rng.permutation(items.len());
            return perm.into_iter().map(|k| items[k].group).collect();
        }
        Criterion::Score => {}
        Criterion::Magnitude | Criterion::FirstEntry => {
            let w = if criterion == Criterion::Magnitude {
                ImportanceWeights { lambda2: 0.0, ..weights }
            } else {
                ImportanceWeights { lambda1: 0.0, ..weights }
            };
            let m: Vec<f64> = items.iter().map(|i| i.m).collect();
            let e: Vec<f64> = items.iter().map(|i| i.e as f64).collect();
            let (mn, en) = if w.normalize { (min_max(&m), min_max(&e)) } else { (m, e) };
            for (k, it) in items.iter_mut().enumerate() {
                it.sc = w.lambda1 * mn[k] - w.lambda2 * en[k];
            }
        }
    }
    rank(&mut items);
    items.into_iter().map(|i| i.group).collect()
}

/// Number of groups removed at `rate` out of `groups`.
pub fn removal_count(rate: f64, groups: usize) -> usize {
    ((rate * groups as f64) + 1e-9).floor() as usize
}

/// Zeroes group `g` of penalized layer `layer`. Row groups (conv filters,
/// dense rows) also lose their bias and the consumer's matching inputs.
pub fn zero_group<T: Scalar>(net: &mut Network<T>, layer: usize, spec: &PenaltySpec, g: usize) -> Result<()> {
    let rows = net.weight(layer)?.shape()[0];
    let row_groups = spec.kind == PenaltyKind::GroupLasso && spec.num_groups() == rows;
    {
        let p = net
            .params_mut(layer)
            .ok_or_else(|| Error::Index(format!("layer {layer} has no parameters")))?;
        spec.check(&p.weight)?;
        let w = p.weight.data_mut();
        for i in spec.groups.members(g) {
            w[i] = T::zero();
        }
        if row_groups {
            if let Some(b) = &mut p.bias {
                b.data_mut()[g] = T::zero();
            }
        }
    }
    if row_groups {
        if let Some(j) = net.next_parametric(layer) {
            let per_unit = match net.layers()[j].spec {
                LayerSpec::Conv { kernel_h, kernel_w, .. } => kernel_h * kernel_w,
                LayerSpec::Dense { in_dim, .. } => in_dim / rows,
                _ => unreachable!(),
            };
            let p = net.params_mut(j).expect("parametric");
            let row_len = p.weight.row_len();
            let w = p.weight.data_mut();
            for row in w.chunks_exact_mut(row_len) {
                row[g * per_unit..(g + 1) * per_unit].fill(T::zero());
            }
        }
    }
    Ok(())
}

/// Zeroes the lowest `⌊rate·G⌋` groups of `layer` given its importance
/// order (most important first). No retraining.
pub fn prune_by_rank<T: Scalar>(net: &Network<T>, layer: usize, spec: &PenaltySpec, order: &[usize], rate: f64) -> Result<Network<T>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Argument(format!("removal rate {rate} not in [0, 1)")));
    }
    if order.len() != spec.num_groups() {
        return Err(Error::Dimension(format!("order has {} groups, layer {}", order.len(), spec.num_groups())));
    }
    let k = removal_count(rate, order.len());
    let mut out = net.clone();
    for &g in order.iter().rev().take(k) {
        zero_group(&mut out, layer, spec, g)?;
    }
    Ok(out)
}

/// Jointly ranks the groups of several layers by `Sc` and removes the
/// lowest-ranked ones until at most `target` of all parameters is nonzero.
/// Returns the pruned copy and the achieved nonzero fraction.
pub fn prune_to_budget<T: Scalar>(
    net: &Network<T>,
    importance: &[Importance],
    specs: &[(usize, PenaltySpec)],
    target: f64,
) -> Result<(Network<T>, f64)> {
    let mut items: Vec<Importance> = importance
        .iter()
        .filter(|i| specs.iter().any(|(l, _)| *l == i.layer_index))
        .cloned()
        .collect();
    rank(&mut items);
    let total = net.param_count() as f64;
    let apply = |k: usize| -> Result<Network<T>> {
        let mut out = net.clone();
        for it in items.iter().rev().take(k) {
            let spec = &specs.iter().find(|(l, _)| *l == it.layer_index).expect("filtered").1;
            zero_group(&mut out, it.layer_index, spec, it.group)?;
        }
        Ok(out)
    };
    let frac = |n: &Network<T>| n.nonzero_param_count() as f64 / total;
    let (mut lo, mut hi) = (0, items.len());
    if frac(&apply(hi)?) > target {
        let all = apply(hi)?;
        let f = frac(&all);
        return Ok((all, f));
    }
    // smallest k meeting the budget; nonzero count is monotone in k
    while lo < hi {
        let mid = (lo + hi) / 2;
        if frac(&apply(mid)?) <= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let out = apply(lo)?;
    let f = frac(&out);
    Ok((out, f))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub rate: f64,
    pub accuracy: f64,
    pub criterion: String,
}

/// Accuracy after pruning every listed layer at each rate (fresh copy per
/// rate).
pub fn prune_curve<T: Scalar>(
    net: &Network<T>,
    layers: &[(usize, PenaltySpec, Vec<usize>)],
    rates: &[f64],
    test: &Dataset<T>,
    criterion: &str,
) -> Result<Vec<CurvePoint>> {
    rates
        .iter()
        .map(|&rate| {
            let mut pruned = net.clone();
            for (layer, spec, order) in layers {
                pruned = prune_by_rank(&pruned, *layer, spec, order, rate)?;
            }
            Ok(CurvePoint {
                rate,
                accuracy: pruned.accuracy(test)?,
                criterion: criterion.to_string(),
            })
        })
        .collect()
}

/// Ranked importance table plus accuracy curves.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PruneReport {
    pub ranking: Vec<Importance>,
    pub curve: Vec<CurvePoint>,
}

impl PruneReport {
    /// `layer,group,M,E,Sc,rank` with `rank` 1-based within each layer.
    pub fn ranking_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["layer", "group", "M", "E", "Sc", "rank"]).map_err(csv_err)?;
        let mut items = self.ranking.clone();
        rank(&mut items);
        items.sort_by_key(|i| i.layer_index);
        let mut current = usize::MAX;
        let mut r = 0;
        for it in &items {
            if it.layer_index != current {
                current = it.layer_index;
                r = 0;
            }
            r += 1;
            w.write_record([
                it.layer.clone(),
                it.group.to_string(),
                it.m.to_string(),
                it.e.to_string(),
                it.sc.to_string(),
                r.to_string(),
            ])
            .map_err(csv_err)?;
        }
        into_string(w)
    }

    /// `rate,accuracy,criterion`.
    pub fn curve_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["rate", "accuracy", "criterion"]).map_err(csv_err)?;
        for p in &self.curve {
            w.write_record([p.rate.to_string(), p.accuracy.to_string(), p.criterion.clone()])
                .map_err(csv_err)?;
        }
        into_string(w)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format {
        offset: 0,
        msg: e.to_string(),
    }
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Nonzero fraction of a weight tensor.
pub fn density<T: Scalar>(t: &Tensor<T>) -> f64 {
    t.count_nonzero() as f64 / t.len() as f64
}
