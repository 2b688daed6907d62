//! IDVAE: a hybrid VAE/GAN in which the variational encoder doubles as the
//! adversarial discriminator through a shared trunk.
//!
//! The crate bundles everything needed to study the model family at desk
//! scale on a CPU: a small tape-based autodiff engine, the shared-trunk
//! networks and their four-way parameter partition, the loss terms, the
//! phase-split training schedule with deterministic checkpointing, dataset
//! providers (2-D Gaussian ring, IDX image files), and an evaluation harness
//! built around Fréchet distances over an ensemble of feature experts.
//!
//! Start with the runnable programs under `examples/`; each one demonstrates
//! a single capability end to end.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod kernels;
pub mod losses;
pub mod nets;
pub mod optim;
pub mod proptests;
pub mod rng;
pub mod tensor;
pub mod trainer;
pub mod viz;

pub use error::{Error, Result};
pub use graph::Graph;
pub use rng::Rng;
pub use tensor::Tensor;
