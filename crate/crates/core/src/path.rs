//! Per-epoch solution path of the penalized layers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::slbi::SlbiLayerState;
use crate::tensor::{group_l2_norm, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    pub layer: String,
    pub gamma_norm: Vec<f64>,
    pub w_norm: Vec<f64>,
    /// First-entry epochs as known when this record was taken.
    pub first_entry: Vec<Option<usize>>,
}

impl LayerRecord {
    pub fn support(&self) -> impl Iterator<Item = bool> + '_ {
        self.gamma_norm.iter().map(|&g| g > 0.0)
    }

    pub fn support_size(&self) -> usize {
        self.support().filter(|&s| s).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub layers: Vec<LayerRecord>,
}

impl EpochRecord {
    pub fn layer(&self, name: &str) -> Option<&LayerRecord> {
        self.layers.iter().find(|l| l.layer == name)
    }
}

/// One row of the exported CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRow {
    pub epoch: usize,
    pub layer: String,
    pub group: usize,
    pub gamma_norm: f64,
    pub w_norm: f64,
    pub support: u8,
    /// First-entry epoch as known at `epoch`.
    pub first_entry_epoch: Option<usize>,
}

pub const PATH_CSV_HEADER: &str = "epoch,layer,group,gamma_norm,w_norm,support,first_entry_epoch";

/// What importance scoring needs from a path: its length and the
/// first-entry epoch of every group.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    pub total_epochs: usize,
    pub first_entry: BTreeMap<String, Vec<Option<usize>>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolutionPath {
    records: Vec<EpochRecord>,
    first_entry: BTreeMap<String, Vec<Option<usize>>>,
}

impl SolutionPath {
    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    /// Last recorded epoch (0 when empty).
    pub fn num_epochs(&self) -> usize {
        self.records.last().map_or(0, |r| r.epoch)
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn layers(&self) -> impl Iterator<Item = &str> {
        self.first_entry.keys().map(String::as_str)
    }

    /// First-entry epoch of every group of `layer`, `None` if never active.
    pub fn first_entry(&self, layer: &str) -> Option<&[Option<usize>]> {
        self.first_entry.get(layer).map(Vec::as_slice)
    }

    pub fn summary(&self) -> PathSummary {
        PathSummary {
            total_epochs: self.num_epochs(),
            first_entry: self.first_entry.clone(),
        }
    }

    /// Appends an epoch row for every state.
    pub fn record<T: Scalar, M: Model<T>>(&mut self, epoch: usize, model: &M, states: &[SlbiLayerState<T>]) -> Result<()> {
        if epoch <= self.num_epochs() && !self.is_empty() {
            return Err(Error::Argument(format!("epoch {epoch} recorded out of order")));
        }
        let mut layers = Vec::with_capacity(states.len());
        for s in states {
            let w = &model
                .params(s.layer_index)
                .ok_or_else(|| Error::Index(format!("layer {} has no parameters", s.layer_index)))?
                .weight;
            let name = model.layer_name(s.layer_index);
            let gamma_norm = group_l2_norm(&s.gamma, &s.spec.groups)?.to_f64_vec();
            let w_norm = group_l2_norm(w, &s.spec.groups)?.to_f64_vec();
            let entries = self.first_entry.entry(name.clone()).or_default();
            entries.resize(gamma_norm.len().max(entries.len()), None);
            for (e, &g) in entries.iter_mut().zip(&gamma_norm) {
                if g > 0.0 && e.is_none() {
                    *e = Some(epoch);
                }
            }
            layers.push(LayerRecord {
                layer: name,
                first_entry: entries[..gamma_norm.len()].to_vec(),
                gamma_norm,
                w_norm,
            });
        }
        self.records.push(EpochRecord { epoch, layers });
        Ok(())
    }

    /// Registers `extra` new groups (never active yet) at the end of `layer`.
    pub fn extend_groups(&mut self, layer: &str, extra: usize) {
        let entries = self.first_entry.entry(layer.to_string()).or_default();
        entries.resize(entries.len() + extra, None);
    }

    /// Moves group `g` to `map(g)` in a layer that now has `new_len` groups.
    pub fn remap_groups(&mut self, layer: &str, new_len: usize, map: impl Fn(usize) -> usize) -> Result<()> {
        if let Some(entries) = self.first_entry.get_mut(layer) {
            let mut next = vec![None; new_len];
            for (g, e) in entries.iter().enumerate() {
                let to = map(g);
                if to >= new_len {
                    return Err(Error::Index(format!("group {g} mapped to {to} of {new_len}")));
                }
                next[to] = *e;
            }
            *entries = next;
        }
        Ok(())
    }

    pub fn rows(&self) -> impl Iterator<Item = PathRow> + '_ {
        self.records.iter().flat_map(|rec| {
            rec.layers.iter().flat_map(move |l| {
                (0..l.gamma_norm.len()).map(move |g| PathRow {
                    epoch: rec.epoch,
                    layer: l.layer.clone(),
                    group: g,
                    gamma_norm: l.gamma_norm[g],
                    w_norm: l.w_norm[g],
                    support: u8::from(l.gamma_norm[g] > 0.0),
                    first_entry_epoch: l.first_entry[g],
                })
            })
        })
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in self.rows() {
            w.serialize(row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        let mut out = String::from_utf8(bytes).expect("csv output is utf-8");
        if out.is_empty() {
            out = format!("{PATH_CSV_HEADER}\n");
        }
        Ok(out)
    }

    /// Rebuilds a path from [`SolutionPath::to_csv`] output.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header = reader.headers().map_err(csv_err)?.iter().collect::<Vec<_>>().join(",");
        if header != PATH_CSV_HEADER {
            return Err(Error::Format {
                offset: 0,
                msg: format!("unexpected path header `{header}`"),
            });
        }
        let mut path = SolutionPath::default();
        for row in reader.deserialize::<PathRow>() {
            let row = row.map_err(csv_err)?;
            if path.records.last().is_none_or(|r| r.epoch != row.epoch) {
                if row.epoch <= path.num_epochs() {
                    return Err(Error::Format {
                        offset: 0,
                        msg: format!("epoch {} out of order", row.epoch),
                    });
                }
                path.records.push(EpochRecord {
                    epoch: row.epoch,
                    layers: Vec::new(),
                });
            }
            let rec = path.records.last_mut().expect("pushed above");
            if rec.layers.last().is_none_or(|l| l.layer != row.layer) {
                rec.layers.push(LayerRecord {
                    layer: row.layer.clone(),
                    gamma_norm: Vec::new(),
                    w_norm: Vec::new(),
                    first_entry: Vec::new(),
                });
            }
            let l = rec.layers.last_mut().expect("pushed above");
            if row.group != l.gamma_norm.len() {
                return Err(Error::Format {
                    offset: 0,
                    msg: format!("group {} of {} out of order", row.group, row.layer),
                });
            }
            l.gamma_norm.push(row.gamma_norm);
            l.w_norm.push(row.w_norm);
            l.first_entry.push(row.first_entry_epoch);
        }
        // the latest record of each layer carries its current first entries
        for rec in &path.records {
            for l in &rec.layers {
                path.first_entry.insert(l.layer.clone(), l.first_entry.clone());
            }
        }
        Ok(path)
    }
}

fn csv_err(e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte() as usize);
    Error::Format {
        offset,
        msg: e.to_string(),
    }
}
