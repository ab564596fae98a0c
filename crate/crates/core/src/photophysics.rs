//! Three-level emitter model: singlet ground state S0, excited singlet S1,
//! and the metastable triplet T1, plus an absorbing bleached state.
//!
//! The laser gate only controls excitation (S0 -> S1) and the bleach hazard,
//! which is active while the molecule sits in T1 under illumination. S1 decays
//! and triplet relaxation do not depend on the gate.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ParamError, SimError};
use crate::Warning;

/// Rate constants (per second) and detection efficiency of one emitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotophysicsParams {
    /// S0 -> S1 excitation rate with the gate on.
    pub k_exc: f64,
    /// S1 -> S0 decay rate.
    pub k_fl: f64,
    /// S1 -> T1 intersystem-crossing rate.
    pub k_isc: f64,
    /// Triplet lifetime in seconds; T1 -> S0 at rate `1 / tau_t`.
    pub tau_t: f64,
    /// Probability that an S1 -> S0 decay is detected.
    pub eta: f64,
    /// Bleach hazard while in T1 with the gate on.
    pub k_bleach: f64,
    /// Detector false-count rate. These counts reach the controller.
    #[serde(default)]
    pub dark_rate: f64,
}

impl PhotophysicsParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        let rates = [
            ("k_exc", self.k_exc),
            ("k_fl", self.k_fl),
            ("k_isc", self.k_isc),
            ("k_bleach", self.k_bleach),
            ("dark_rate", self.dark_rate),
        ];
        for (name, value) in rates {
            if !(value.is_finite() && value >= 0.0) {
                return Err(ParamError::new(
                    name,
                    format!("must be finite and >= 0, got {value}"),
                ));
            }
        }
        if !(self.tau_t.is_finite() && self.tau_t > 0.0) {
            return Err(ParamError::new(
                "tau_t",
                format!("must be > 0, got {}", self.tau_t),
            ));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(ParamError::new(
                "eta",
                format!("must lie in [0, 1], got {}", self.eta),
            ));
        }
        Ok(())
    }

    /// Non-fatal plausibility checks.
    pub fn warnings(&self) -> Vec<Warning> {
        let mut out = Vec::new();
        if self.k_fl <= 1.0 / self.tau_t {
            out.push(Warning::new(format!(
                "k_fl = {:e}/s does not exceed the triplet relaxation rate {:e}/s; the triplet should be far longer-lived than S1",
                self.k_fl,
                1.0 / self.tau_t
            )));
        }
        out
    }

    pub fn with_tau_t(mut self, tau_t: f64) -> Self {
        self.tau_t = tau_t;
        self
    }

    /// Singlet excited fraction while cycling with the gate on and the triplet
    /// ignored: `k_exc / (k_exc + k_fl)`.
    pub fn cycling_excited_fraction(&self) -> f64 {
        let total = self.k_exc + self.k_fl;
        if total > 0.0 {
            self.k_exc / total
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EmitterState {
    S0,
    S1,
    T1,
    Bleached,
}

impl EmitterState {
    pub(crate) fn index(self) -> usize {
        match self {
            EmitterState::S0 => 0,
            EmitterState::S1 => 1,
            EmitterState::T1 => 2,
            EmitterState::Bleached => 3,
        }
    }
}

/// Laser gate level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gate {
    On,
    Off,
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gate::On => "ON",
            Gate::Off => "OFF",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Transition {
    Excite,
    Decay,
    Isc,
    Relax,
    Bleach,
}

impl Transition {
    pub fn target(self) -> EmitterState {
        match self {
            Transition::Excite => EmitterState::S1,
            Transition::Decay | Transition::Relax => EmitterState::S0,
            Transition::Isc => EmitterState::T1,
            Transition::Bleach => EmitterState::Bleached,
        }
    }
}

/// Up to two enabled channels; no state has more.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Channels {
    items: [(Option<Transition>, f64); 2],
    len: usize,
}

impl Channels {
    fn push(&mut self, transition: Transition, rate: f64) {
        self.items[self.len] = (Some(transition), rate);
        self.len += 1;
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (Transition, f64)> + '_ {
        self.items[..self.len]
            .iter()
            .filter_map(|&(t, r)| t.map(|t| (t, r)))
    }

    pub fn total_rate(&self) -> f64 {
        self.iter().map(|(_, r)| r).sum()
    }

    pub fn rate_of(&self, transition: Transition) -> Option<f64> {
        self.iter().find(|&(t, _)| t == transition).map(|(_, r)| r)
    }
}

/// Enabled transitions out of `state` under gate level `gate`.
pub fn active_channels(
    state: EmitterState,
    gate: Gate,
    params: &PhotophysicsParams,
) -> Result<Channels, SimError> {
    let mut ch = Channels::default();
    match (state, gate) {
        (EmitterState::Bleached, _) => return Err(SimError::Bleached),
        (EmitterState::S0, Gate::On) => ch.push(Transition::Excite, params.k_exc),
        (EmitterState::S0, Gate::Off) => {}
        (EmitterState::S1, _) => {
            ch.push(Transition::Decay, params.k_fl);
            ch.push(Transition::Isc, params.k_isc);
        }
        (EmitterState::T1, Gate::On) => {
            ch.push(Transition::Relax, 1.0 / params.tau_t);
            ch.push(Transition::Bleach, params.k_bleach);
        }
        (EmitterState::T1, Gate::Off) => ch.push(Transition::Relax, 1.0 / params.tau_t),
    }
    Ok(ch)
}

/// Stationary occupancies `(p0, p1, pT)` with the gate permanently on and no
/// bleaching.
pub fn steady_state_occupancy(params: &PhotophysicsParams) -> (f64, f64, f64) {
    if params.k_exc <= 0.0 {
        return (1.0, 0.0, 0.0);
    }
    // Balance: k_exc p0 = (k_fl + k_isc) p1, pT = k_isc tau_t p1.
    // Scaled by k_exc to keep every weight finite.
    let w0 = params.k_fl + params.k_isc;
    let w1 = params.k_exc;
    let wt = params.k_isc * params.tau_t * params.k_exc;
    let total = w0 + w1 + wt;
    (w0 / total, w1 / total, wt / total)
}

/// Long-run detected photon rate with the gate on, `eta * k_fl * p1`.
pub fn detected_photon_rate(params: &PhotophysicsParams) -> f64 {
    let (_, p1, _) = steady_state_occupancy(params);
    params.eta * params.k_fl * p1
}
