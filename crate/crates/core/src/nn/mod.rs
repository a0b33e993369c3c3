//! A small CPU tensor engine: differentiable layers on a tape, parameter
//! storage, and the Adam optimizer.

pub mod conv;
mod graph;
pub mod norm;
mod optim;
mod params;
pub mod pool;
pub mod resize;

pub use conv::ConvGeom;
pub use graph::{softmax_channels, Gradients, Graph, Var};
pub use optim::{Adam, ADAM_EPS};
pub use params::{ParamEntry, ParamId, ParamSet};
