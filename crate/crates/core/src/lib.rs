//! Probabilistic quadtree features and deep belief networks.
//!
//! The crate is organised around the experiment pipeline:
//!
//! * [`ingest`] reads and writes MNIST IDX files and manages labeled datasets.
//! * [`noise`] synthesizes the noisy digit variants (AWGN, motion blur,
//!   AWGN with reduced contrast).
//! * [`quadtree`] learns one quadtree partition shared by a whole dataset and
//!   linearizes images into leaf-mean feature vectors.
//! * [`rbm`] implements Bernoulli restricted Boltzmann machines trained with
//!   contrastive divergence.
//! * [`dbn`] stacks RBMs, transfers them into a sigmoid feedforward
//!   classifier and fine-tunes it with backpropagation.
//! * [`harness`] runs experiments end to end and drives the `pqdbn` CLI.

pub mod codec;
pub mod dbn;
pub mod error;
pub mod harness;
pub mod image;
pub mod ingest;
pub mod noise;
pub mod quadtree;
pub mod rbm;
pub mod rng;

pub use error::{Error, Result};
pub use image::ImageGrid;
pub use ingest::LabeledDataset;
