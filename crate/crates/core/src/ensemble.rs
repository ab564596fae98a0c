//! Seeded ensembles of molecules with heterogeneous triplet lifetimes, run
//! with and without feedback, and sweeps of the decision window.
//!
//! Every molecule derives its random streams from `(master_seed, index)`
//! alone, so results do not depend on scheduling or thread count. Paired arms
//! share the molecule's triplet lifetime and, on the aggregated path, its
//! bleach budget; only the photon/triplet dynamics stream is arm specific.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Exp1, StandardNormal};
use rand_pcg::Pcg64Mcg;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{FeedbackConfig, FeedbackController};
use crate::error::EnsembleError;
use crate::photophysics::{detected_photon_rate, PhotophysicsParams};
use crate::simulate::{simulate_aggregated, simulate_exact, Record, SimOptions, Trajectory};
use crate::stats::{gain_estimate, predicted_gain};
use crate::Warning;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LifetimeDistribution {
    Fixed(f64),
    /// `ln(tau)` is normal with mean `mu_log` and standard deviation `sigma_log`.
    LogNormal {
        mu_log: f64,
        sigma_log: f64,
    },
    /// Uniform draw from a list.
    Empirical(Vec<f64>),
}

impl LifetimeDistribution {
    pub fn lognormal_median(median: f64, sigma_log: f64) -> Self {
        LifetimeDistribution::LogNormal {
            mu_log: median.ln(),
            sigma_log,
        }
    }

    pub fn validate(&self) -> Result<(), EnsembleError> {
        let bad = |m: String| Err(EnsembleError::Lifetime(m));
        match self {
            LifetimeDistribution::Fixed(t) if !(t.is_finite() && *t > 0.0) => {
                bad(format!("fixed lifetime must be > 0, got {t}"))
            }
            LifetimeDistribution::LogNormal { mu_log, sigma_log }
                if !(mu_log.is_finite() && sigma_log.is_finite() && *sigma_log >= 0.0) =>
            {
                bad(format!(
                    "lognormal needs finite mu and sigma >= 0, got ({mu_log}, {sigma_log})"
                ))
            }
            LifetimeDistribution::Empirical(v) if v.is_empty() => bad("empty lifetime list".into()),
            LifetimeDistribution::Empirical(v)
                if v.iter().any(|t| !(t.is_finite() && *t > 0.0)) =>
            {
                bad("lifetimes must be > 0".into())
            }
            _ => Ok(()),
        }
    }

    /// The central lifetime used by the ratio-law prediction: the fixed value,
    /// the lognormal median, or the empirical mean.
    pub fn nominal(&self) -> f64 {
        match self {
            LifetimeDistribution::Fixed(t) => *t,
            LifetimeDistribution::LogNormal { mu_log, .. } => mu_log.exp(),
            LifetimeDistribution::Empirical(v) => v.iter().sum::<f64>() / v.len() as f64,
        }
    }
}

pub fn sample_triplet_lifetime<R: Rng + ?Sized>(dist: &LifetimeDistribution, rng: &mut R) -> f64 {
    match dist {
        LifetimeDistribution::Fixed(t) => *t,
        LifetimeDistribution::LogNormal { mu_log, sigma_log } => {
            let z: f64 = StandardNormal.sample(rng);
            (mu_log + sigma_log * z).exp()
        }
        LifetimeDistribution::Empirical(v) => v[rng.gen_range(0..v.len())],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SimPath {
    Exact,
    #[default]
    Aggregated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    With,
    Without,
}

impl Arm {
    pub fn label(self) -> &'static str {
        match self {
            Arm::With => "with",
            Arm::Without => "without",
        }
    }

    pub fn parse(s: &str) -> Option<Arm> {
        match s {
            "with" => Some(Arm::With),
            "without" => Some(Arm::Without),
            _ => None,
        }
    }

    fn stream(self) -> u64 {
        match self {
            Arm::With => 3,
            Arm::Without => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub n_molecules: usize,
    /// `tau_t` is replaced per molecule by a draw from `lifetime`.
    pub params: PhotophysicsParams,
    pub lifetime: LifetimeDistribution,
    pub feedback: FeedbackConfig,
    pub horizon: f64,
    pub master_seed: u64,
    pub path: SimPath,
    /// Admission rule: drop molecules whose detected rate falls below this.
    pub min_detected_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub molecule_index: usize,
    pub arm: Arm,
    pub n_photons: u64,
    /// Wall-clock time from 0 to bleaching (or the horizon), gate-off time
    /// included.
    pub survival_time: f64,
    pub bleached: bool,
    pub tau_t_used: f64,
    pub illuminated_triplet_time: f64,
    /// Total gate-on time; survival measured on the illuminated clock.
    pub illuminated_time: f64,
    pub triplet_visits: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRun {
    pub trials: Vec<TrialResult>,
    pub warnings: Vec<Warning>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-independent seed derivation.
pub fn stable_hash(a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(a) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

fn stream(seed: u64, tag: u64) -> Pcg64Mcg {
    Pcg64Mcg::seed_from_u64(stable_hash(seed, tag))
}

/// Per-molecule draws shared between arms.
fn molecule_draws(config: &EnsembleConfig, index: usize) -> (u64, f64, f64) {
    let seed = stable_hash(config.master_seed, index as u64);
    let tau_t = sample_triplet_lifetime(&config.lifetime, &mut stream(seed, 1));
    let budget: f64 = Exp1.sample(&mut stream(seed, 2));
    (seed, tau_t, budget)
}

/// Simulates one molecule of one arm.
pub fn run_molecule(
    config: &EnsembleConfig,
    arm: Arm,
    index: usize,
) -> Result<Option<TrialResult>, EnsembleError> {
    let Some((tau_t, traj)) = molecule_trajectory(config, arm, index, Record::Counts)? else {
        return Ok(None);
    };
    Ok(Some(TrialResult {
        molecule_index: index,
        arm,
        n_photons: traj.n_photons,
        survival_time: traj.end_time,
        bleached: traj.bleached(),
        tau_t_used: tau_t,
        illuminated_triplet_time: traj.illuminated_triplet_time,
        illuminated_time: traj.gate_on_time,
        triplet_visits: traj.triplet_visits,
    }))
}

/// The trajectory behind [`run_molecule`], with its triplet lifetime.
/// `None` when the molecule fails the admission filter.
pub fn molecule_trajectory(
    config: &EnsembleConfig,
    arm: Arm,
    index: usize,
    record: Record,
) -> Result<Option<(f64, Trajectory)>, EnsembleError> {
    let (seed, tau_t, budget) = molecule_draws(config, index);
    let params = config.params.with_tau_t(tau_t);
    if let Some(min) = config.min_detected_rate {
        if detected_photon_rate(&params) < min {
            return Ok(None);
        }
    }
    let sim_err = |source| EnsembleError::Simulation { index, source };
    let feedback = match arm {
        Arm::With => config.feedback,
        Arm::Without => FeedbackConfig {
            enabled: false,
            ..config.feedback
        },
    };
    let mut controller = FeedbackController::new(feedback, 0.0)?;
    let mut rng = stream(seed, arm.stream());
    let opts = SimOptions::new(config.horizon)
        .bleach_budget(budget)
        .record(record);
    let traj = match config.path {
        SimPath::Exact => simulate_exact(&params, &mut controller, &mut rng, &opts),
        SimPath::Aggregated => simulate_aggregated(&params, &mut controller, &mut rng, &opts),
    }
    .map_err(sim_err)?;
    Ok(Some((tau_t, traj)))
}

fn config_warnings(config: &EnsembleConfig) -> Vec<Warning> {
    let nominal = config.params.with_tau_t(config.lifetime.nominal());
    let mut out = nominal.warnings();
    let rate = detected_photon_rate(&nominal);
    let tau_fluo = if rate > 0.0 {
        1.0 / rate
    } else {
        f64::INFINITY
    };
    out.extend(config.feedback.warnings(tau_fluo, nominal.tau_t));
    out
}

fn validate(config: &EnsembleConfig) -> Result<(), EnsembleError> {
    if config.n_molecules == 0 {
        return Err(EnsembleError::NoMolecules);
    }
    config.lifetime.validate()?;
    config
        .params
        .validate()
        .map_err(|e| EnsembleError::Simulation {
            index: 0,
            source: e.into(),
        })?;
    config
        .feedback
        .validate()
        .map_err(|e| EnsembleError::Controller(e.into()))?;
    Ok(())
}

/// Runs one arm over all molecules. Output is ordered by molecule index.
pub fn run_arm(config: &EnsembleConfig, arm: Arm) -> Result<EnsembleRun, EnsembleError> {
    validate(config)?;
    let trials: Vec<TrialResult> = (0..config.n_molecules)
        .into_par_iter()
        .map(|i| run_molecule(config, arm, i))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    let mut warnings = config_warnings(config);
    let censored = trials.iter().filter(|t| !t.bleached).count();
    if 2 * censored > trials.len() {
        warnings.push(Warning::new(format!(
            "{censored} of {} molecules reached the horizon unbleached; medians are biased",
            trials.len()
        )));
    }
    Ok(EnsembleRun { trials, warnings })
}

/// Runs the arm implied by `config.feedback.enabled`.
pub fn run_ensemble(config: &EnsembleConfig) -> Result<EnsembleRun, EnsembleError> {
    let arm = if config.feedback.enabled {
        Arm::With
    } else {
        Arm::Without
    };
    run_arm(config, arm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub tau_d: f64,
    pub g_measured: f64,
    pub g_predicted: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_with: usize,
    pub n_without: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainTable {
    pub rows: Vec<GainRow>,
    /// Rows that could not be computed, with their window.
    pub failures: Vec<(f64, EnsembleError)>,
    pub warnings: Vec<Warning>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub table: GainTable,
    pub without: Vec<TrialResult>,
    /// One entry per requested window, in input order.
    pub with: Vec<(f64, Vec<TrialResult>)>,
}

pub const DEFAULT_BOOTSTRAP: usize = 2000;

/// Photon counts of bleached molecules.
pub fn bleached_counts(trials: &[TrialResult]) -> Vec<f64> {
    trials
        .iter()
        .filter(|t| t.bleached)
        .map(|t| t.n_photons as f64)
        .collect()
}

/// Paired with/without runs for each window. The without arm does not depend
/// on the window and is simulated once.
pub fn sweep_tau_d(
    base: &EnsembleConfig,
    tau_d_values: &[f64],
    n_boot: usize,
) -> Result<Sweep, EnsembleError> {
    if tau_d_values.is_empty() {
        return Err(EnsembleError::Lifetime("no tau_d values".into()));
    }
    let without = run_arm(base, Arm::Without)?;
    let mut warnings = without.warnings.clone();
    let without_counts = bleached_counts(&without.trials);
    let censored_without = without.trials.len() - without_counts.len();
    if censored_without > 0 {
        warnings.push(Warning::new(format!(
            "{censored_without} censored molecules excluded from the without arm"
        )));
    }

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut with_trials = Vec::new();
    for (row, &tau_d) in tau_d_values.iter().enumerate() {
        let config = EnsembleConfig {
            feedback: base.feedback.with_tau_d(tau_d),
            ..base.clone()
        };
        let result = run_arm(&config, Arm::With).and_then(|run| {
            let counts = bleached_counts(&run.trials);
            let est = gain_estimate(
                &counts,
                &without_counts,
                n_boot,
                stable_hash(base.master_seed, 0xB007_0000 + row as u64),
            )?;
            let predicted = predicted_gain(base.lifetime.nominal(), tau_d)?;
            Ok((run, est, predicted))
        });
        match result {
            Ok((run, est, predicted)) => {
                for w in run.warnings {
                    if !warnings.contains(&w) {
                        warnings.push(w);
                    }
                }
                rows.push(GainRow {
                    tau_d,
                    g_measured: est.g,
                    g_predicted: predicted,
                    ci_low: est.ci_low,
                    ci_high: est.ci_high,
                    n_with: est.n_with,
                    n_without: est.n_without,
                });
                with_trials.push((tau_d, run.trials));
            }
            Err(e) => {
                failures.push((tau_d, e));
                with_trials.push((tau_d, Vec::new()));
            }
        }
    }
    Ok(Sweep {
        table: GainTable {
            rows,
            failures,
            warnings,
        },
        without: without.trials,
        with: with_trials,
    })
}
