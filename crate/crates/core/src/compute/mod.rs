//! Tensor arithmetic, layer stacks, reverse-mode gradients and Adam.

mod graph;
mod layers;
mod optim;
mod params;
mod tensor;

pub use graph::{ConvGeom, Gradients, Graph, NormStats, StatUpdate, Var};
pub use layers::{LayerSpec, Mode, Network, DEFAULT_BN_EPS, DEFAULT_BN_MOMENTUM};
pub use optim::Adam;
pub use params::{GradMap, Param, ParamSet};
pub use tensor::{argmax, Tensor};

