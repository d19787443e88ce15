use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// The membrane equations produced a NaN or infinity.
    #[error("non-finite neuron state at t={t} ms (neuron {neuron}): v={v}, u={u}, input={input}")]
    NonFinite {
        neuron: usize,
        t: u64,
        v: f64,
        u: f64,
        input: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid stimulus specification: {0}")]
    InvalidStimulus(String),

    #[error("unknown group tag `{0}`")]
    UnknownGroup(String),

    #[error("no synapses from {from} to {to}")]
    NoSynapses { from: String, to: String },

    #[error("no stimuli delivered to group {0}")]
    NoStimuli(String),

    #[error("group {0} has no neurons")]
    EmptyGroup(String),

    #[error("unknown experiment `{name}`; valid names are: {valid}")]
    UnknownExperiment { name: String, valid: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("cannot aggregate runs: {0}")]
    Aggregate(String),

    #[error("run with seed {seed} failed: {source}")]
    RunFailed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {msg}")]
    Data { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn data(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
