//! Two-stage kin-face synthesis pipeline.
//!
//! Stage one is a conditional adversarial autoencoder (`caae`) that maps face
//! images to bounded feature vectors and back, conditioned on age and gender.
//! Stage two (`dnanet`) maps features to gene vectors, recombines the genes of
//! two parents with a selection operator, and decodes the result into a child
//! feature vector that the autoencoder can render.
//!
//! Everything runs on the `numerics` layer: a small reverse-mode tensor tape
//! with the op set these networks need, Adam, and a portable seeded RNG.
//! `data` covers dataset ingestion, a synthetic genetic world with known
//! ground-truth genes, and bit-exact checkpoints. `eval` holds verification
//! metrics (ROC/AUC, cosine similarity), Hu-moment heritability maps, and a
//! 2-D feature projection.

pub mod caae;
pub mod data;
pub mod dnanet;
pub mod error;
pub mod eval;
pub mod numerics;

pub use error::{Error, Result};
pub use numerics::rng::SeededRng;
pub use numerics::tensor::{Scalar, Tensor};
