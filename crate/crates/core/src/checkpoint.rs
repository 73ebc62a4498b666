//! JSON checkpoints: architecture, parameters, optional optimizer state and
//! path summary, and run metadata. Values are stored as `f64`, so `f32` and
//! `f64` networks both round-trip losslessly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Params;
use crate::network::{format_arch, Layer, LayerSpec, Network};
use crate::path::PathSummary;
use crate::penalty::{PenaltyKind, PenaltySpec};
use crate::slbi::SlbiLayerState;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl TensorRecord {
    pub fn of<T: Scalar>(t: &Tensor<T>) -> Self {
        Self {
            shape: t.shape().to_vec(),
            values: t.to_f64_vec(),
        }
    }

    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        Tensor::new(self.shape.clone(), self.values.iter().map(|&v| T::of(v)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub layer: usize,
    pub name: String,
    pub weight: TensorRecord,
    pub bias: Option<TensorRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    pub layer: usize,
    pub kind: PenaltyKind,
    pub z: TensorRecord,
    pub gamma: TensorRecord,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub epoch: usize,
    pub seed: u64,
    pub hyperparams: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub arch: String,
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub params: Vec<ParamRecord>,
    pub slbi_state: Option<Vec<StateRecord>>,
    pub path: Option<PathSummary>,
    pub meta: Meta,
}

impl Checkpoint {
    pub fn new<T: Scalar>(net: &Network<T>, meta: Meta) -> Self {
        let params = net
            .layers()
            .iter()
            .enumerate()
            .filter_map(|(i, l)| {
                l.params.as_ref().map(|p| ParamRecord {
                    layer: i,
                    name: net.name_of(i),
                    weight: TensorRecord::of(&p.weight),
                    bias: p.bias.as_ref().map(TensorRecord::of),
                })
            })
            .collect();
        let layers = net.specs();
        Self {
            arch: format_arch(&layers),
            input_shape: net.input_shape(),
            layers,
            params,
            slbi_state: None,
            path: None,
            meta,
        }
    }

    pub fn with_states<T: Scalar>(mut self, states: &[SlbiLayerState<T>]) -> Self {
        self.slbi_state = Some(
            states
                .iter()
                .map(|s| StateRecord {
                    layer: s.layer_index,
                    kind: s.spec.kind,
                    z: TensorRecord::of(&s.z),
                    gamma: TensorRecord::of(&s.gamma),
                })
                .collect(),
        );
        self
    }

    pub fn with_path(mut self, path: PathSummary) -> Self {
        self.path = Some(path);
        self
    }

    pub fn network<T: Scalar>(&self) -> Result<Network<T>> {
        let mut layers: Vec<Layer<T>> = self
            .layers
            .iter()
            .map(|&spec| Layer { spec, params: None })
            .collect();
        for p in &self.params {
            let slot = layers
                .get_mut(p.layer)
                .ok_or_else(|| Error::Index(format!("checkpoint parameters for missing layer {}", p.layer)))?;
            slot.params = Some(Params {
                weight: p.weight.to_tensor()?,
                bias: p.bias.as_ref().map(TensorRecord::to_tensor).transpose()?,
            });
        }
        Network::from_layers(self.input_shape, layers)
    }

    /// Optimizer states; a state error when the checkpoint has none.
    pub fn states<T: Scalar>(&self) -> Result<Vec<SlbiLayerState<T>>> {
        let records = self
            .slbi_state
            .as_ref()
            .ok_or_else(|| Error::State("checkpoint has no optimizer state (Z, Γ)".into()))?;
        records
            .iter()
            .map(|r| {
                let z = r.z.to_tensor()?;
                let gamma = r.gamma.to_tensor()?;
                z.same_shape(&gamma)?;
                Ok(SlbiLayerState {
                    layer_index: r.layer,
                    spec: PenaltySpec::for_weight(r.kind, z.shape()),
                    z,
                    gamma,
                })
            })
            .collect()
    }

    pub fn path_summary(&self) -> Result<&PathSummary> {
        self.path
            .as_ref()
            .ok_or_else(|| Error::State("checkpoint has no solution path".into()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
