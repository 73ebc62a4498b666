//! Stochastic split linearized Bregman iteration for sparse training and
//! structure selection in small convolutional networks.

pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod linear;
pub mod model;
pub mod network;
pub mod path;
pub mod penalty;
pub mod rng;
pub mod selection;
pub mod slbi;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{Gradients, Model, Params};
pub use network::{Batch, LayerSpec, Network};
pub use penalty::{GroupIndex, PenaltyKind, PenaltySpec};
pub use rng::SeededRng;
pub use tensor::{Scalar, Tensor};
pub use path::SolutionPath;
pub use slbi::{SlbiHyper, SlbiLayerState, SplitLbi};
