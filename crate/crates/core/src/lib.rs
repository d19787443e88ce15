//! Izhikevich spiking networks with STDP that learn to suppress predictable
//! stimuli.

pub mod cli;
pub mod error;
pub mod experiments;
pub mod network;
pub mod neuron;
pub mod plasticity;
pub mod recorder;
pub mod stimulus;

pub use error::{Error, Result};
