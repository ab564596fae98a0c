//! Single-molecule photostability under quantum-jump feedback.
//!
//! A three-level emitter (S0, S1, T1) is simulated under a laser gate driven
//! by a feedback controller that switches the excitation off whenever no
//! photon has been detected for a decision window, on the assumption that
//! the molecule has jumped into its dark triplet state. Bleaching can only
//! happen from the illuminated triplet, so shortening that illumination
//! lengthens the molecule's photon budget.
//!
//! Modules:
//! - [`photophysics`]: the emitter model and analytic occupancies.
//! - [`controller`]: the feedback state machine and offline replay.
//! - [`simulate`]: exact and aggregated trajectory simulation.
//! - [`ensemble`]: reproducible paired ensembles and window sweeps.
//! - [`stats`]: survival curves, median-ratio gain, KS tests.
//! - [`config`], [`io`]: configuration parsing and artifact output.

pub mod config;
pub mod controller;
pub mod ensemble;
pub mod error;
pub mod io;
pub mod photophysics;
pub mod presets;
pub mod simulate;
pub mod stats;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use controller::{replay, FeedbackConfig, FeedbackController, GateCommand, GatePolicy, Phase};
pub use ensemble::{
    run_ensemble, sample_triplet_lifetime, sweep_tau_d, Arm, EnsembleConfig, GainRow, GainTable,
    LifetimeDistribution, SimPath, TrialResult,
};
pub use error::{ControllerError, EnsembleError, ParamError, SimError, StatsError};
pub use photophysics::{
    active_channels, detected_photon_rate, steady_state_occupancy, EmitterState, Gate,
    PhotophysicsParams, Transition,
};
pub use simulate::{
    simulate_aggregated, simulate_exact, simulate_trajectory_aggregated, simulate_trajectory_exact,
    Record, SimOptions, Trajectory,
};
pub use stats::{
    gain_estimate, ks_two_sample, median, predicted_gain, survival_curve, GainEstimate, KsResult,
    SurvivalCurve,
};

/// A non-fatal validation finding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub message: String,
}

impl Warning {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
        }
    }
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "warning: {}", self.message)
    }
}
