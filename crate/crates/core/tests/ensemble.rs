use photostab::config::RunConfig;
use photostab::ensemble::{bleached_counts, run_arm, sweep_tau_d};
use photostab::{predicted_gain, Arm, EnsembleConfig, LifetimeDistribution, SimPath};

const US: f64 = 1e-6;

/// Preset with a fast bleach hazard so small ensembles run quickly.
fn quick(n: usize, seed: u64) -> EnsembleConfig {
    let mut cfg = RunConfig::from_preset("dii").unwrap().ensemble();
    cfg.params.k_bleach = 50.0;
    cfg.n_molecules = n;
    cfg.master_seed = seed;
    cfg
}

#[test]
fn prediction_column_follows_the_ratio_law() {
    let sweep = sweep_tau_d(&quick(16, 1), &[70.0 * US], 200).unwrap();
    let row = sweep.table.rows[0];
    assert!((row.g_predicted - 3.43).abs() < 5e-3);
    let exact = predicted_gain(240.0 * US, 70.0 * US).unwrap();
    assert!((row.g_predicted / exact - 1.0).abs() < 1e-12);

    let mut fixed = quick(16, 1);
    fixed.lifetime = LifetimeDistribution::Fixed(240.0 * US);
    let sweep = sweep_tau_d(&fixed, &[240.0 * US], 200).unwrap();
    assert_eq!(sweep.table.rows[0].g_predicted, 1.0);
}

#[test]
fn sweep_rows_pair_with_a_shared_baseline() {
    let values = [40.0 * US, 100.0 * US, 200.0 * US];
    let sweep = sweep_tau_d(&quick(24, 2), &values, 200).unwrap();
    assert_eq!(sweep.table.rows.len(), 3);
    assert_eq!(sweep.with.len(), 3);
    for ((tau_d, trials), row) in sweep.with.iter().zip(&sweep.table.rows) {
        assert_eq!(*tau_d, row.tau_d);
        assert!(row.ci_low <= row.g_measured && row.g_measured <= row.ci_high);
        for (w, wo) in trials.iter().zip(&sweep.without) {
            assert_eq!(w.molecule_index, wo.molecule_index);
            assert_eq!(w.tau_t_used, wo.tau_t_used);
            assert_eq!(w.arm, Arm::With);
            assert_eq!(wo.arm, Arm::Without);
        }
    }
    // The shortest window helps most.
    assert!(sweep.table.rows[0].g_measured > sweep.table.rows[2].g_measured);
}

#[test]
fn feedback_lengthens_survival_and_illuminates_less() {
    let cfg = quick(40, 3);
    let with = run_arm(&cfg, Arm::With).unwrap().trials;
    let without = run_arm(&cfg, Arm::Without).unwrap().trials;
    let sum = |v: Vec<f64>| v.iter().sum::<f64>();
    assert!(sum(bleached_counts(&with)) > 2.0 * sum(bleached_counts(&without)));
    for (w, wo) in with.iter().zip(&without) {
        // Gate-off periods count toward the survival time.
        assert!(w.illuminated_time <= w.survival_time);
        assert_eq!(wo.illuminated_time, wo.survival_time);
        assert!(w.illuminated_triplet_time <= w.illuminated_time);
    }
}

#[test]
fn exact_and_aggregated_paths_share_the_draws() {
    let mut exact = quick(4, 9);
    exact.params.k_bleach = 2e3;
    exact.path = SimPath::Exact;
    let aggregated = EnsembleConfig {
        path: SimPath::Aggregated,
        ..exact.clone()
    };
    let e = run_arm(&exact, Arm::With).unwrap().trials;
    let a = run_arm(&aggregated, Arm::With).unwrap().trials;
    for (x, y) in e.iter().zip(&a) {
        assert_eq!(x.tau_t_used, y.tau_t_used);
        assert!(x.bleached && y.bleached);
    }
}
