//! Differentiable tensor computation: the substrate for every network here.
//!
//! The design is a flat tape (`graph::Graph`): forward ops append nodes that
//! remember their inputs, `Graph::backward` walks the tape in reverse and
//! accumulates gradients. Parameters live outside the tape in a
//! [`params::Parameters`] arena so they persist across steps; a tape node
//! created with [`graph::Graph::param`] ties a leaf back to its parameter for
//! gradient accumulation.
//!
//! Training runs in `f32`; gradient verification instantiates the same code
//! at `f64` (the [`tensor::Scalar`] bound covers both).

pub mod adam;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod params;
pub mod rng;
pub mod tensor;

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use graph::{Graph, NodeId, NormKind};
pub use params::{ParamId, Parameter, Parameters};
pub use rng::SeededRng;
pub use tensor::{Scalar, Tensor};
