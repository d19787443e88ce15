//! Pair-based STDP with exponential decay in integer milliseconds.
//!
//! For `dt = t_post - t_pre`, the weight change is `A * (1 - 1/tau)^dt` when
//! the presynaptic spike leads and `-A * (1 - 1/tau)^-dt` when it lags.
//! Inhibitory synapses use the same kernel with a negative amplitude, which
//! mirrors the curve: a leading inhibitory spike makes the weight more
//! negative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuron::NeuronKind;

/// Which spike time of the presynaptic neuron enters `dt` on a delayed synapse.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StdpTiming {
    /// Presynaptic emission time.
    #[default]
    Emission,
    /// Emission time plus the synaptic delay.
    Arrival,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StdpConfig {
    pub amplitude: f64,
    pub tau: f64,
    pub w_min: f64,
    pub w_max: f64,
    /// Pairings with `|dt|` above this many ms are ignored.
    pub pairing_window: u32,
}

impl StdpConfig {
    pub const DEFAULT_WINDOW: u32 = 100;

    pub fn excitatory() -> Self {
        Self {
            amplitude: 0.1,
            tau: 20.0,
            w_min: 0.0,
            w_max: 80.0,
            pairing_window: Self::DEFAULT_WINDOW,
        }
    }

    pub fn inhibitory() -> Self {
        Self {
            amplitude: -0.1,
            tau: 20.0,
            w_min: -80.0,
            w_max: 0.0,
            pairing_window: Self::DEFAULT_WINDOW,
        }
    }

    pub fn preset(kind: NeuronKind) -> Self {
        match kind {
            NeuronKind::Excitatory => Self::excitatory(),
            NeuronKind::Inhibitory => Self::inhibitory(),
        }
    }

    pub fn with_window(mut self, pairing_window: u32) -> Self {
        self.pairing_window = pairing_window;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "STDP tau must exceed 1 ms, got {}",
                self.tau
            )));
        }
        if !(self.w_min <= self.w_max) || !self.amplitude.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "STDP bounds must satisfy w_min <= w_max, got [{}, {}]",
                self.w_min, self.w_max
            )));
        }
        Ok(())
    }

    /// Weight change for `dt = t_post - t_pre` in ms.
    pub fn delta(&self, dt: i64) -> f64 {
        if dt == 0 || dt.unsigned_abs() > u64::from(self.pairing_window) {
            return 0.0;
        }
        let decay = (1.0 - 1.0 / self.tau).powi(dt.unsigned_abs() as i32);
        if dt > 0 {
            self.amplitude * decay
        } else {
            -self.amplitude * decay
        }
    }

    pub fn apply(&self, w: f64, dw: f64) -> f64 {
        (w + dw).clamp(self.w_min, self.w_max)
    }

    pub fn contains(&self, w: f64) -> bool {
        w >= self.w_min && w <= self.w_max
    }
}

/// Precomputed kernel used inside the simulation loop.
#[derive(Debug, Clone)]
pub struct StdpKernel {
    cfg: StdpConfig,
    /// `ltp[k] = delta(k)` for `k` in `0..=window`.
    ltp: Vec<f64>,
}

impl StdpKernel {
    pub fn new(cfg: StdpConfig) -> Result<Self> {
        cfg.validate()?;
        let ltp = (0..=i64::from(cfg.pairing_window))
            .map(|k| cfg.delta(k))
            .collect();
        Ok(Self { cfg, ltp })
    }

    pub fn config(&self) -> &StdpConfig {
        &self.cfg
    }

    #[inline]
    pub fn delta(&self, dt: i64) -> f64 {
        match self.ltp.get(dt.unsigned_abs() as usize) {
            Some(&d) if dt >= 0 => d,
            Some(&d) => -d,
            None => 0.0,
        }
    }

    #[inline]
    pub fn apply(&self, w: f64, dw: f64) -> f64 {
        self.cfg.apply(w, dw)
    }
}
