//! Izhikevich point neuron advanced in 1 ms steps.
//!
//! The membrane follows `dv/dt = 0.04 v^2 + 5 v + 140 - u + I` and
//! `du/dt = a (b v - u)`; when `v` reaches the 30 mV peak it is reset to `c`
//! and `u` is incremented by `d` within the same step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spike peak; a step that ends at or above this value fires.
pub const V_PEAK: f64 = 30.0;

/// Simulation time, in whole milliseconds.
pub type Millis = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeuronKind {
    Excitatory,
    Inhibitory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IzhikevichParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl IzhikevichParams {
    /// Regular-spiking cell.
    pub const EXCITATORY: Self = Self {
        a: 0.02,
        b: 0.2,
        c: -65.0,
        d: 8.0,
    };

    /// Fast-spiking cell.
    pub const INHIBITORY: Self = Self {
        a: 0.1,
        b: 0.2,
        c: -65.0,
        d: 2.0,
    };

    pub fn preset(kind: NeuronKind) -> Self {
        match kind {
            NeuronKind::Excitatory => Self::EXCITATORY,
            NeuronKind::Inhibitory => Self::INHIBITORY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) || ![self.b, self.c, self.d].iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "Izhikevich parameters must be finite with a > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// How one 1 ms step is integrated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integration {
    /// One forward-Euler step of 1 ms for both variables.
    #[default]
    Euler,
    /// Two 0.5 ms Euler substeps for `v`, then one 1 ms step for `u` using
    /// the updated `v`.
    HalfStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronState {
    pub v: f64,
    pub u: f64,
    pub last_spike: Option<Millis>,
}

impl NeuronState {
    /// Resting state: `v = c`, `u = b * v`.
    pub fn at_rest(params: &IzhikevichParams) -> Self {
        Self {
            v: params.c,
            u: params.b * params.c,
            last_spike: None,
        }
    }

    /// Advances the neuron by one 1 ms step under constant `input` (mV) and
    /// returns whether it fired at time `t`.
    pub fn step(
        &mut self,
        params: &IzhikevichParams,
        input: f64,
        t: Millis,
        integration: Integration,
    ) -> Result<bool> {
        let (v0, u0) = (self.v, self.u);
        if v0 >= V_PEAK {
            // A state already at the peak fires without being integrated.
            self.v = params.c;
            self.u = u0 + params.d;
            self.last_spike = Some(t);
            return Ok(true);
        }
        let (v, u, fired) = match integration {
            Integration::Euler => {
                let v = v0 + membrane_rate(v0, u0, input);
                let u = u0 + params.a * (params.b * v0 - u0);
                (v, u, v >= V_PEAK)
            }
            Integration::HalfStep => {
                let mut v = v0 + 0.5 * membrane_rate(v0, u0, input);
                if v < V_PEAK {
                    v += 0.5 * membrane_rate(v, u0, input);
                }
                let u = u0 + params.a * (params.b * v.min(V_PEAK) - u0);
                (v, u, v >= V_PEAK)
            }
        };
        if !(v.is_finite() && u.is_finite() && input.is_finite()) {
            return Err(Error::NonFinite {
                neuron: usize::MAX,
                t,
                v,
                u,
                input,
            });
        }
        if fired {
            self.v = params.c;
            self.u = u + params.d;
            self.last_spike = Some(t);
        } else {
            self.v = v;
            self.u = u;
        }
        Ok(fired)
    }
}

#[inline]
fn membrane_rate(v: f64, u: f64, input: f64) -> f64 {
    0.04 * v * v + 5.0 * v + 140.0 - u + input
}
