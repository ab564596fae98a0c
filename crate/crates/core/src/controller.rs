//! Quantum-jump feedback controller.
//!
//! An online state machine fed with detection timestamps. While monitoring,
//! every detection restarts a window of length `tau_d`. If the window expires
//! the controller decides the molecule has shelved into the triplet and
//! commands the gate off; `tau_off` after the off edge is actuated it commands
//! the gate back on and the window restarts. Both commands take effect
//! `latency` after the decision.

use serde::{Deserialize, Serialize};

use crate::error::{ControllerError, ParamError};
use crate::photophysics::Gate;
use crate::Warning;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackConfig {
    /// No-detection window, seconds.
    pub tau_d: f64,
    /// Blanking duration, seconds.
    pub tau_off: f64,
    /// Actuator delay applied to both gate edges, seconds.
    pub latency: f64,
    pub enabled: bool,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        Self {
            tau_d: 70e-6,
            tau_off: 400e-6,
            latency: 600e-9,
            enabled: true,
        }
    }
}

impl FeedbackConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn with_tau_d(mut self, tau_d: f64) -> Self {
        self.tau_d = tau_d;
        self
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if !(self.tau_d.is_finite() && self.tau_d > 0.0) {
            return Err(ParamError::new(
                "tau_d",
                format!("must be > 0, got {}", self.tau_d),
            ));
        }
        if !(self.tau_off.is_finite() && self.tau_off > 0.0) {
            return Err(ParamError::new(
                "tau_off",
                format!("must be > 0, got {}", self.tau_off),
            ));
        }
        if !(self.latency.is_finite() && self.latency >= 0.0) {
            return Err(ParamError::new(
                "latency",
                format!("must be >= 0, got {}", self.latency),
            ));
        }
        Ok(())
    }

    /// Checks the window against the emitter's mean detection interval and the
    /// blanking time against its triplet lifetime.
    pub fn warnings(&self, tau_fluo: f64, tau_t: f64) -> Vec<Warning> {
        let mut out = Vec::new();
        if !self.enabled {
            return out;
        }
        if self.tau_d <= tau_fluo {
            out.push(Warning::new(format!(
                "tau_d = {:e} s does not exceed the mean detection interval {:e} s; the gate will switch off during normal emission",
                self.tau_d, tau_fluo
            )));
        }
        if self.tau_off <= tau_t {
            out.push(Warning::new(format!(
                "tau_off = {:e} s does not exceed the triplet lifetime {:e} s",
                self.tau_off, tau_t
            )));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Monitoring,
    Blanked,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateCommand {
    /// Time the decision was taken (the expired deadline).
    pub decided_at: f64,
    pub actuate_at: f64,
    pub level: Gate,
}

/// Anything that can drive the laser gate from a detection stream.
pub trait GatePolicy {
    /// Earliest pending decision time, if any.
    fn next_deadline(&self) -> Option<f64>;

    /// Delivers a detection at `t`. Deadlines strictly before `t` fire first.
    fn observe_photon(&mut self, t: f64, out: &mut Vec<GateCommand>)
        -> Result<(), ControllerError>;

    /// Fires every deadline `<= t`.
    fn advance_to(&mut self, t: f64, out: &mut Vec<GateCommand>) -> Result<(), ControllerError>;

    /// True when detections can never change the gate.
    fn is_passive(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackController {
    config: FeedbackConfig,
    phase: Phase,
    deadline: Option<f64>,
    last_command: Gate,
    last_time: f64,
    /// Start of the current window: `t0` or the latest restoration.
    armed_at: f64,
    ignored_photons: u64,
}

impl FeedbackController {
    /// Starts monitoring at `t0` with the gate on.
    pub fn new(config: FeedbackConfig, t0: f64) -> Result<Self, ControllerError> {
        config.validate()?;
        Ok(Self {
            config,
            phase: Phase::Monitoring,
            deadline: config.enabled.then_some(t0 + config.tau_d),
            last_command: Gate::On,
            last_time: t0,
            armed_at: t0,
            ignored_photons: 0,
        })
    }

    pub fn config(&self) -> &FeedbackConfig {
        &self.config
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn deadline(&self) -> Option<f64> {
        self.deadline
    }

    pub fn last_command(&self) -> Gate {
        self.last_command
    }

    /// Detections delivered while blanked or before the gate was restored.
    pub fn ignored_photons(&self) -> u64 {
        self.ignored_photons
    }

    fn check_order(&self, t: f64) -> Result<(), ControllerError> {
        if t < self.last_time || t.is_nan() {
            return Err(ControllerError::OutOfOrder {
                t,
                last: self.last_time,
            });
        }
        Ok(())
    }

    fn fire(&mut self, deadline: f64, out: &mut Vec<GateCommand>) {
        let actuate_at = deadline + self.config.latency;
        match self.phase {
            Phase::Monitoring => {
                out.push(GateCommand {
                    decided_at: deadline,
                    actuate_at,
                    level: Gate::Off,
                });
                self.phase = Phase::Blanked;
                self.last_command = Gate::Off;
                self.deadline = Some(actuate_at + self.config.tau_off);
            }
            Phase::Blanked => {
                out.push(GateCommand {
                    decided_at: deadline,
                    actuate_at,
                    level: Gate::On,
                });
                self.phase = Phase::Monitoring;
                self.last_command = Gate::On;
                self.armed_at = actuate_at;
                self.deadline = Some(actuate_at + self.config.tau_d);
            }
        }
    }

    fn fire_until(&mut self, t: f64, inclusive: bool, out: &mut Vec<GateCommand>) {
        while let Some(d) = self.deadline {
            if d < t || (inclusive && d == t) {
                self.fire(d, out);
            } else {
                break;
            }
        }
    }
}

impl GatePolicy for FeedbackController {
    fn next_deadline(&self) -> Option<f64> {
        self.deadline
    }

    fn is_passive(&self) -> bool {
        !self.config.enabled
    }

    fn observe_photon(
        &mut self,
        t: f64,
        out: &mut Vec<GateCommand>,
    ) -> Result<(), ControllerError> {
        self.check_order(t)?;
        // A deadline equal to t loses to the photon.
        self.fire_until(t, false, out);
        self.last_time = t;
        if !self.config.enabled {
            return Ok(());
        }
        match self.phase {
            // Until the restoring command actuates the gate is still off.
            Phase::Monitoring if t >= self.armed_at => self.deadline = Some(t + self.config.tau_d),
            _ => self.ignored_photons += 1,
        }
        Ok(())
    }

    fn advance_to(&mut self, t: f64, out: &mut Vec<GateCommand>) -> Result<(), ControllerError> {
        self.check_order(t)?;
        self.fire_until(t, true, out);
        self.last_time = t;
        Ok(())
    }
}

/// Runs the controller over a recorded detection stream and returns the full
/// command schedule up to `horizon`. Detections after `horizon` are ignored.
pub fn replay(
    config: FeedbackConfig,
    photon_times: &[f64],
    horizon: f64,
) -> Result<Vec<GateCommand>, ControllerError> {
    if let Some(index) = photon_times
        .windows(2)
        .position(|w| !(w[0] <= w[1]))
        .map(|i| i + 1)
    {
        return Err(ControllerError::Unsorted { index });
    }
    let mut controller = FeedbackController::new(config, 0.0)?;
    let mut out = Vec::new();
    for &t in photon_times.iter().take_while(|&&t| t <= horizon) {
        controller.observe_photon(t, &mut out)?;
    }
    controller.advance_to(horizon, &mut out)?;
    Ok(out)
}
