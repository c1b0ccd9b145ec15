//! Stress-induced evolutionary synthesis of compact convolutional networks.
//!
//! A network is trained while an epoch-level stress operator stochastically
//! weakens its weaker synapses ([`stress`]). The trained weights are encoded
//! into a probabilistic genetic model from which a smaller offspring is
//! sampled and materialized ([`dna`]). [`evolution`] runs the generational
//! loop; [`analysis`] measures sparsity, model size and feature quality.

pub mod analysis;
pub mod arch;
pub mod data;
pub mod dna;
pub mod error;
pub mod evolution;
pub mod io;
pub mod nn;
pub mod optim;
pub mod params;
pub mod rng;
pub mod stress;
pub mod tensor;

pub use arch::{ActShape, Conv2dSpec, LayerSpec, NetworkArchitecture};
pub use data::LabeledDataset;
pub use error::{Error, Result};
pub use evolution::{evolve, EvolutionConfig, Lineage};
pub use params::{LayerParams, ParameterSet};
pub use tensor::{Scalar, Tensor};
