//! Single-molecule trajectories under a gate policy.
//!
//! Both paths are event driven. Between events all rates are constant, so the
//! next stochastic event is drawn from exponential clocks; deterministic
//! controller deadlines and gate actuations are interleaved exactly and any
//! clock whose rate changed is redrawn (memorylessness makes this exact).
//!
//! The exact path follows every S0 -> S1 -> S0 cycle. The aggregated path
//! treats the singlet manifold as one fluorescent macro-state that emits
//! detected photons and triplet jumps as Poisson processes, which is valid
//! when singlet cycling is much faster than intersystem crossing.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use serde::{Deserialize, Serialize};

use crate::controller::{GateCommand, GatePolicy};
use crate::error::SimError;
use crate::photophysics::{active_channels, EmitterState, Gate, PhotophysicsParams, Transition};

/// What a run keeps besides the scalar tallies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Record {
    /// Counters only. Photon, gate and transition lists stay empty.
    #[default]
    Counts,
    /// Photon, dark-count and gate timestamps.
    Events,
    /// Events plus every molecular transition.
    Transitions,
}

impl Record {
    fn events(self) -> bool {
        !matches!(self, Record::Counts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// Simulated time limit, seconds. May be infinite.
    pub horizon: f64,
    pub record: Record,
    /// Stop once this many triplet visits have ended.
    pub max_triplet_visits: Option<u64>,
    /// Integrated bleach hazard at which the molecule bleaches (aggregated
    /// path only). Drawn from the run's own stream when `None`.
    pub bleach_budget: Option<f64>,
}

impl SimOptions {
    pub fn new(horizon: f64) -> Self {
        Self {
            horizon,
            record: Record::Counts,
            max_triplet_visits: None,
            bleach_budget: None,
        }
    }

    pub fn record(mut self, record: Record) -> Self {
        self.record = record;
        self
    }

    pub fn max_triplet_visits(mut self, visits: u64) -> Self {
        self.max_triplet_visits = Some(visits);
        self
    }

    pub fn bleach_budget(mut self, budget: f64) -> Self {
        self.bleach_budget = Some(budget);
        self
    }
}

/// One molecule's life until bleaching or the horizon.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    /// Detected molecular photons, increasing. Empty under [`Record::Counts`].
    pub photon_times: Vec<f64>,
    /// Detector false counts. Empty under [`Record::Counts`].
    pub dark_times: Vec<f64>,
    /// Gate edges as actuated, starting with `(0, On)`.
    pub gate_events: Vec<(f64, Gate)>,
    pub bleach_time: Option<f64>,
    pub end_time: f64,
    /// Time spent in T1 with the gate on.
    pub illuminated_triplet_time: f64,
    pub n_photons: u64,
    pub n_dark: u64,
    /// Number of S1 -> T1 jumps.
    pub triplet_visits: u64,
    /// Time spent in S0, S1 and T1.
    pub state_time: [f64; 3],
    pub gate_on_time: f64,
    /// Molecular transitions plus dark counts plus gate edges processed.
    pub n_events: u64,
    pub transitions: Vec<(f64, Transition)>,
}

impl Trajectory {
    pub fn bleached(&self) -> bool {
        self.bleach_time.is_some()
    }
}

/// Exact path with the event lists recorded.
pub fn simulate_trajectory_exact<P: GatePolicy, R: Rng + ?Sized>(
    params: &PhotophysicsParams,
    controller: &mut P,
    rng: &mut R,
    horizon: f64,
) -> Result<Trajectory, SimError> {
    simulate_exact(
        params,
        controller,
        rng,
        &SimOptions::new(horizon).record(Record::Events),
    )
}

/// Aggregated path with the event lists recorded.
pub fn simulate_trajectory_aggregated<P: GatePolicy, R: Rng + ?Sized>(
    params: &PhotophysicsParams,
    controller: &mut P,
    rng: &mut R,
    horizon: f64,
) -> Result<Trajectory, SimError> {
    simulate_aggregated(
        params,
        controller,
        rng,
        &SimOptions::new(horizon).record(Record::Events),
    )
}

/// Validity guard for the aggregated path.
pub fn check_aggregation(params: &PhotophysicsParams) -> Result<(), SimError> {
    let sum = params.k_exc + params.k_fl;
    if params.k_isc < 0.01 * sum {
        Ok(())
    } else {
        Err(SimError::AggregationGuard {
            k_isc: params.k_isc,
            sum,
        })
    }
}

#[inline]
fn exp_after<R: Rng + ?Sized>(rng: &mut R, t: f64, rate: f64) -> f64 {
    if rate > 0.0 {
        let e: f64 = Exp1.sample(rng);
        t + e / rate
    } else {
        f64::INFINITY
    }
}

/// Controller, actuator queue, gate level and recording shared by both paths.
struct Loop<'a, P: GatePolicy> {
    policy: &'a mut P,
    pending: VecDeque<GateCommand>,
    scratch: Vec<GateCommand>,
    gate: Gate,
    record: Record,
    traj: Trajectory,
}

impl<'a, P: GatePolicy> Loop<'a, P> {
    fn new(policy: &'a mut P, record: Record) -> Self {
        let mut traj = Trajectory::default();
        if record.events() {
            traj.gate_events.push((0.0, Gate::On));
        }
        Self {
            policy,
            pending: VecDeque::new(),
            scratch: Vec::new(),
            gate: Gate::On,
            record,
            traj,
        }
    }

    fn next_control(&self) -> f64 {
        let act = self.pending.front().map_or(f64::INFINITY, |c| c.actuate_at);
        let dl = self.policy.next_deadline().unwrap_or(f64::INFINITY);
        act.min(dl)
    }

    fn queue(&mut self) {
        self.pending.extend(self.scratch.drain(..));
    }

    fn photon(&mut self, t: f64) -> Result<(), SimError> {
        self.traj.n_photons += 1;
        if self.record.events() {
            self.traj.photon_times.push(t);
        }
        self.policy.observe_photon(t, &mut self.scratch)?;
        self.queue();
        Ok(())
    }

    fn dark(&mut self, t: f64) -> Result<(), SimError> {
        self.traj.n_dark += 1;
        self.traj.n_events += 1;
        if self.record.events() {
            self.traj.dark_times.push(t);
        }
        self.policy.observe_photon(t, &mut self.scratch)?;
        self.queue();
        Ok(())
    }

    /// Handles the control event at `t`; true when the gate level changed.
    fn control(&mut self, t: f64) -> Result<bool, SimError> {
        if let Some(cmd) = self.pending.front().copied() {
            if cmd.actuate_at <= t {
                self.pending.pop_front();
                if cmd.level != self.gate {
                    self.gate = cmd.level;
                    self.traj.n_events += 1;
                    if self.record.events() {
                        self.traj.gate_events.push((cmd.actuate_at, cmd.level));
                    }
                    return Ok(true);
                }
                return Ok(false);
            }
        }
        self.policy.advance_to(t, &mut self.scratch)?;
        self.queue();
        Ok(false)
    }

    fn transition(&mut self, t: f64, tr: Transition) {
        self.traj.n_events += 1;
        if matches!(self.record, Record::Transitions) {
            self.traj.transitions.push((t, tr));
        }
    }
}

fn check_common(params: &PhotophysicsParams, opts: &SimOptions) -> Result<(), SimError> {
    params.validate()?;
    if !(opts.horizon > 0.0) {
        return Err(SimError::BadHorizon(opts.horizon));
    }
    Ok(())
}

/// Event-by-event simulation of every singlet cycle.
pub fn simulate_exact<P: GatePolicy, R: Rng + ?Sized>(
    params: &PhotophysicsParams,
    policy: &mut P,
    rng: &mut R,
    opts: &SimOptions,
) -> Result<Trajectory, SimError> {
    check_common(params, opts)?;
    let mut lp = Loop::new(policy, opts.record);
    let mut state = EmitterState::S0;
    let mut t = 0.0;

    let mut channels = active_channels(state, lp.gate, params)?;
    let mut t_mol = exp_after(rng, t, channels.total_rate());
    let mut t_dark = exp_after(rng, t, params.dark_rate);

    loop {
        let t_ctrl = lp.next_control();
        let next = t_mol.min(t_dark).min(t_ctrl);
        if next >= opts.horizon {
            if next.is_infinite() && opts.horizon.is_infinite() {
                return Err(SimError::Stalled { t });
            }
            accumulate(&mut lp.traj, state, lp.gate, opts.horizon - t);
            t = opts.horizon;
            break;
        }
        accumulate(&mut lp.traj, state, lp.gate, next - t);
        t = next;

        if t_mol <= t_dark && t_mol <= t_ctrl {
            let total = channels.total_rate();
            let mut pick = rng.gen::<f64>() * total;
            let mut chosen = None;
            for (tr, rate) in channels.iter().filter(|&(_, r)| r > 0.0) {
                chosen = Some(tr);
                if pick < rate {
                    break;
                }
                pick -= rate;
            }
            let tr = chosen.expect("a scheduled event implies an enabled channel");
            lp.transition(t, tr);
            state = tr.target();
            match tr {
                Transition::Decay => {
                    if params.eta > 0.0 && rng.gen::<f64>() < params.eta {
                        lp.photon(t)?;
                    }
                }
                Transition::Isc => lp.traj.triplet_visits += 1,
                Transition::Bleach => {
                    lp.traj.bleach_time = Some(t);
                    break;
                }
                Transition::Relax => {
                    if opts
                        .max_triplet_visits
                        .is_some_and(|m| lp.traj.triplet_visits >= m)
                    {
                        break;
                    }
                }
                Transition::Excite => {}
            }
            channels = active_channels(state, lp.gate, params)?;
            t_mol = exp_after(rng, t, channels.total_rate());
        } else if t_dark <= t_ctrl {
            lp.dark(t)?;
            t_dark = exp_after(rng, t, params.dark_rate);
        } else if lp.control(t)? {
            channels = active_channels(state, lp.gate, params)?;
            t_mol = exp_after(rng, t, channels.total_rate());
        }
    }
    lp.traj.end_time = t;
    Ok(lp.traj)
}

#[inline]
fn accumulate(traj: &mut Trajectory, state: EmitterState, gate: Gate, dt: f64) {
    let i = state.index();
    if i < 3 {
        traj.state_time[i] += dt;
    }
    if gate == Gate::On {
        traj.gate_on_time += dt;
        if state == EmitterState::T1 {
            traj.illuminated_triplet_time += dt;
        }
    }
}

/// Quasi-steady-state simulation of the singlet manifold.
///
/// Bleaching is realized through the integrated hazard: the molecule bleaches
/// when `k_bleach` times the accumulated illuminated triplet time reaches an
/// Exp(1) budget. This is the same law as a constant-hazard clock and lets
/// paired runs share the budget.
pub fn simulate_aggregated<P: GatePolicy, R: Rng + ?Sized>(
    params: &PhotophysicsParams,
    policy: &mut P,
    rng: &mut R,
    opts: &SimOptions,
) -> Result<Trajectory, SimError> {
    check_common(params, opts)?;
    check_aggregation(params)?;

    let p1 = params.cycling_excited_fraction();
    let photon_rate = params.eta * params.k_fl * p1;
    let isc_rate = params.k_isc * p1;
    let relax_rate = 1.0 / params.tau_t;
    // Photons can be counted in bulk when nobody needs their timestamps.
    let bulk = !opts.record.events() && policy.is_passive();

    let mut budget = match opts.bleach_budget {
        Some(b) => b,
        None => Exp1.sample(rng),
    };

    let mut lp = Loop::new(policy, opts.record);
    let mut triplet = false;
    let mut t = 0.0;

    let mut t_photon: f64;
    let mut t_isc: f64;
    let mut t_relax = f64::INFINITY;
    let mut t_bleach: f64;
    let mut t_dark = exp_after(rng, t, params.dark_rate);

    macro_rules! reschedule {
        () => {{
            let on = lp.gate == Gate::On;
            if triplet {
                t_photon = f64::INFINITY;
                t_isc = f64::INFINITY;
                t_bleach = if on && params.k_bleach > 0.0 {
                    t + budget / params.k_bleach
                } else {
                    f64::INFINITY
                };
            } else {
                t_relax = f64::INFINITY;
                t_bleach = f64::INFINITY;
                if on {
                    t_photon = if bulk {
                        f64::INFINITY
                    } else {
                        exp_after(rng, t, photon_rate)
                    };
                    t_isc = exp_after(rng, t, isc_rate);
                } else {
                    t_photon = f64::INFINITY;
                    t_isc = f64::INFINITY;
                }
            }
        }};
    }
    reschedule!();

    loop {
        let t_ctrl = lp.next_control();
        let next = t_photon
            .min(t_isc)
            .min(t_relax)
            .min(t_bleach)
            .min(t_dark)
            .min(t_ctrl);
        let stop = next >= opts.horizon;
        if next.is_infinite() && opts.horizon.is_infinite() {
            return Err(SimError::Stalled { t });
        }
        let upto = if stop { opts.horizon } else { next };
        let dt = upto - t;
        let on = lp.gate == Gate::On;
        if triplet {
            lp.traj.state_time[2] += dt;
            if on {
                lp.traj.illuminated_triplet_time += dt;
                budget -= params.k_bleach * dt;
            }
        } else if on {
            lp.traj.state_time[0] += dt * (1.0 - p1);
            lp.traj.state_time[1] += dt * p1;
            if bulk && dt > 0.0 {
                let mean = photon_rate * dt;
                if mean > 0.0 {
                    let n: f64 = Poisson::new(mean)
                        .expect("finite positive Poisson mean")
                        .sample(rng);
                    lp.traj.n_photons += n as u64;
                }
            }
        } else {
            lp.traj.state_time[0] += dt;
        }
        if on {
            lp.traj.gate_on_time += dt;
        }
        t = upto;
        if stop {
            break;
        }

        if t_photon == next {
            lp.photon(t)?;
            t_photon = exp_after(rng, t, photon_rate);
        } else if t_isc == next {
            lp.transition(t, Transition::Isc);
            lp.traj.triplet_visits += 1;
            triplet = true;
            t_relax = exp_after(rng, t, relax_rate);
            reschedule!();
        } else if t_relax == next {
            lp.transition(t, Transition::Relax);
            triplet = false;
            if opts
                .max_triplet_visits
                .is_some_and(|m| lp.traj.triplet_visits >= m)
            {
                break;
            }
            reschedule!();
        } else if t_bleach == next {
            lp.transition(t, Transition::Bleach);
            lp.traj.bleach_time = Some(t);
            break;
        } else if t_dark == next {
            lp.dark(t)?;
            t_dark = exp_after(rng, t, params.dark_rate);
        } else if lp.control(t)? {
            // The relaxation clock does not depend on the gate.
            reschedule!();
        }
    }
    lp.traj.end_time = t;
    Ok(lp.traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::{FeedbackConfig, FeedbackController};
    use rand::SeedableRng;
    use rand_pcg::Pcg64Mcg;

    fn base() -> PhotophysicsParams {
        PhotophysicsParams {
            k_exc: 1e7,
            k_fl: 1e7,
            k_isc: 1e4,
            tau_t: 200e-6,
            eta: 0.01,
            k_bleach: 100.0,
            dark_rate: 0.0,
        }
    }

    fn always_on() -> FeedbackController {
        FeedbackController::new(FeedbackConfig::disabled(), 0.0).unwrap()
    }

    fn paper_fb() -> FeedbackController {
        FeedbackController::new(FeedbackConfig::default(), 0.0).unwrap()
    }

    #[test]
    fn disabled_controller_leaves_gate_on() {
        let mut rng = Pcg64Mcg::seed_from_u64(1);
        let traj = simulate_trajectory_exact(&base(), &mut always_on(), &mut rng, 0.05).unwrap();
        assert_eq!(traj.gate_events, vec![(0.0, Gate::On)]);
        let traj =
            simulate_trajectory_aggregated(&base(), &mut always_on(), &mut rng, 0.05).unwrap();
        assert_eq!(traj.gate_events, vec![(0.0, Gate::On)]);
    }

    #[test]
    fn trajectory_invariants_hold_under_feedback() {
        for seed in 0..20 {
            for exact in [true, false] {
                let mut rng = Pcg64Mcg::seed_from_u64(seed);
                let mut ctl = paper_fb();
                let opts = SimOptions::new(0.2).record(Record::Transitions);
                let traj = if exact {
                    simulate_exact(&base(), &mut ctl, &mut rng, &opts).unwrap()
                } else {
                    simulate_aggregated(&base(), &mut ctl, &mut rng, &opts).unwrap()
                };
                check_invariants(&traj, exact);
            }
        }
    }

    fn off_intervals(traj: &Trajectory) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for (i, &(t, g)) in traj.gate_events.iter().enumerate() {
            if g == Gate::Off {
                let end = traj.gate_events.get(i + 1).map_or(traj.end_time, |e| e.0);
                out.push((t, end));
            }
        }
        out
    }

    fn check_invariants(traj: &Trajectory, exact: bool) {
        assert!(traj.photon_times.windows(2).all(|w| w[0] < w[1]));
        assert!(traj
            .gate_events
            .windows(2)
            .all(|w| w[0].0 < w[1].0 && w[0].1 != w[1].1));
        assert_eq!(traj.n_photons as usize, traj.photon_times.len());
        if let Some(b) = traj.bleach_time {
            assert_eq!(b, traj.end_time);
        }
        let off = off_intervals(traj);
        let inside = |t: f64| off.iter().any(|&(a, b)| t > a && t < b);
        for &(t, tr) in &traj.transitions {
            if matches!(tr, Transition::Excite | Transition::Bleach) {
                assert!(!inside(t), "{tr:?} at {t} inside a gate-off interval");
            }
        }
        for &(a, b) in &off {
            let n = traj
                .photon_times
                .iter()
                .filter(|&&t| t > a && t < b)
                .count();
            // Only an excitation from before the off edge can still decay.
            if exact {
                assert!(n <= 1);
            } else {
                assert_eq!(n, 0);
            }
        }
    }

    #[test]
    fn determinism() {
        for exact in [true, false] {
            let run = || {
                let mut rng = Pcg64Mcg::seed_from_u64(42);
                let opts = SimOptions::new(0.1).record(Record::Transitions);
                if exact {
                    simulate_exact(&base(), &mut paper_fb(), &mut rng, &opts).unwrap()
                } else {
                    simulate_aggregated(&base(), &mut paper_fb(), &mut rng, &opts).unwrap()
                }
            };
            assert_eq!(run(), run());
        }
    }

    #[test]
    fn stalls_without_excitation_and_infinite_horizon() {
        let p = PhotophysicsParams {
            k_exc: 0.0,
            ..base()
        };
        let mut rng = Pcg64Mcg::seed_from_u64(3);
        let err = simulate_exact(
            &p,
            &mut always_on(),
            &mut rng,
            &SimOptions::new(f64::INFINITY),
        )
        .unwrap_err();
        assert!(matches!(err, SimError::Stalled { .. }));
    }

    #[test]
    fn zero_excitation_with_finite_horizon_ends_cleanly() {
        let p = PhotophysicsParams {
            k_exc: 0.0,
            ..base()
        };
        let mut rng = Pcg64Mcg::seed_from_u64(3);
        let traj = simulate_trajectory_exact(&p, &mut always_on(), &mut rng, 1.0).unwrap();
        assert_eq!(traj.n_photons, 0);
        assert_eq!(traj.end_time, 1.0);
    }

    #[test]
    fn aggregation_guard() {
        let p = PhotophysicsParams {
            k_isc: 1e6,
            ..base()
        };
        let mut rng = Pcg64Mcg::seed_from_u64(3);
        let err = simulate_trajectory_aggregated(&p, &mut always_on(), &mut rng, 1.0).unwrap_err();
        assert!(matches!(err, SimError::AggregationGuard { .. }));
    }

    #[test]
    fn bad_horizon_rejected() {
        let mut rng = Pcg64Mcg::seed_from_u64(3);
        assert!(matches!(
            simulate_trajectory_exact(&base(), &mut always_on(), &mut rng, 0.0),
            Err(SimError::BadHorizon(_))
        ));
    }

    #[test]
    fn no_bleaching_without_illuminated_triplet() {
        // Gate permanently blanked after the first window: the molecule can
        // never be excited again, hence never bleaches.
        let cfg = FeedbackConfig {
            tau_d: 1e-9,
            tau_off: 10.0,
            latency: 0.0,
            enabled: true,
        };
        let p = PhotophysicsParams {
            k_bleach: 1e9,
            ..base()
        };
        let mut rng = Pcg64Mcg::seed_from_u64(5);
        let mut ctl = FeedbackController::new(cfg, 0.0).unwrap();
        let traj = simulate_trajectory_aggregated(&p, &mut ctl, &mut rng, 5.0).unwrap();
        assert!(!traj.bleached());
    }

    #[test]
    fn dark_counts_feed_controller() {
        let p = PhotophysicsParams {
            k_exc: 0.0,
            dark_rate: 1e6,
            ..base()
        };
        // Dense dark counts keep the window open forever.
        let mut rng = Pcg64Mcg::seed_from_u64(9);
        let traj = simulate_trajectory_exact(&p, &mut paper_fb(), &mut rng, 0.01).unwrap();
        assert!(traj.n_dark > 5000);
        assert_eq!(traj.gate_events.len(), 1);
        assert_eq!(traj.n_photons, 0);
    }

    #[test]
    fn bulk_and_per_photon_counting_agree_in_mean() {
        let p = PhotophysicsParams {
            k_bleach: 0.0,
            ..base()
        };
        let mut rng = Pcg64Mcg::seed_from_u64(11);
        let bulk = simulate_aggregated(&p, &mut always_on(), &mut rng, &SimOptions::new(20.0))
            .unwrap()
            .n_photons as f64;
        let each = simulate_aggregated(
            &p,
            &mut always_on(),
            &mut rng,
            &SimOptions::new(20.0).record(Record::Events),
        )
        .unwrap()
        .n_photons as f64;
        let (_, p1, _) = crate::photophysics::steady_state_occupancy(&p);
        let mean = p.eta * p.k_fl * p1 * 20.0;
        // Triplet blinking inflates the variance well above Poisson; 2% is
        // still many standard deviations at these counts.
        assert!((bulk / mean - 1.0).abs() < 0.02, "{bulk} vs {mean}");
        assert!((each / mean - 1.0).abs() < 0.02, "{each} vs {mean}");
    }
}
