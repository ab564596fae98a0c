//! Survival curves, median-ratio gain with bootstrap intervals, the
//! two-sample Kolmogorov-Smirnov test and the ratio-law gain prediction.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64Mcg;
use serde::{Deserialize, Serialize};

use crate::error::StatsError;

/// Complement ECDF: `probability[i]` is the fraction of samples `>= support[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub support: Vec<f64>,
    pub probability: Vec<f64>,
    pub n: usize,
}

impl SurvivalCurve {
    /// Fraction of samples `>= v`, for any `v`.
    pub fn eval(&self, v: f64) -> f64 {
        let idx = self.support.partition_point(|&s| s < v);
        if idx == self.support.len() {
            0.0
        } else {
            self.probability[idx]
        }
    }

    /// Fraction of samples strictly greater than `v`.
    pub fn eval_above(&self, v: f64) -> f64 {
        let idx = self.support.partition_point(|&s| s <= v);
        if idx == self.support.len() {
            0.0
        } else {
            self.probability[idx]
        }
    }
}

fn sorted_checked(samples: &[f64]) -> Result<Vec<f64>, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::Empty);
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::InvalidValue);
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

pub fn survival_curve(samples: &[f64]) -> Result<SurvivalCurve, StatsError> {
    let sorted = sorted_checked(samples)?;
    if sorted[0] < 0.0 {
        return Err(StatsError::InvalidValue);
    }
    let n = sorted.len();
    let mut support = Vec::new();
    let mut probability = Vec::new();
    let mut i = 0;
    while i < n {
        let v = sorted[i];
        support.push(v);
        probability.push((n - i) as f64 / n as f64);
        while i < n && sorted[i] == v {
            i += 1;
        }
    }
    Ok(SurvivalCurve {
        support,
        probability,
        n,
    })
}

/// Median; the mean of the two central order statistics for even sizes.
pub fn median(samples: &[f64]) -> Result<f64, StatsError> {
    let sorted = sorted_checked(samples)?;
    Ok(median_sorted(&sorted))
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (lower, upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower_max = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower_max + upper)
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainEstimate {
    pub g: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_with: usize,
    pub n_without: usize,
}

/// Ratio of medians with a 95% percentile-bootstrap interval. Each arm is
/// resampled independently.
pub fn gain_estimate(
    with_fb: &[f64],
    without_fb: &[f64],
    n_boot: usize,
    seed: u64,
) -> Result<GainEstimate, StatsError> {
    let with_sorted = sorted_checked(with_fb)?;
    let without_sorted = sorted_checked(without_fb)?;
    let denom = median_sorted(&without_sorted);
    if denom == 0.0 {
        return Err(StatsError::ZeroMedian);
    }
    let g = median_sorted(&with_sorted) / denom;
    if n_boot == 0 {
        return Err(StatsError::NonPositive("n_boot"));
    }

    let mut rng = Pcg64Mcg::seed_from_u64(seed);
    let mut buf_with = vec![0.0; with_fb.len()];
    let mut buf_without = vec![0.0; without_fb.len()];
    let mut ratios = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        for x in buf_with.iter_mut() {
            *x = with_fb[rng.gen_range(0..with_fb.len())];
        }
        for x in buf_without.iter_mut() {
            *x = without_fb[rng.gen_range(0..without_fb.len())];
        }
        let num = median_in_place(&mut buf_with);
        let den = median_in_place(&mut buf_without);
        ratios.push(if den > 0.0 { num / den } else { f64::INFINITY });
    }
    ratios.sort_by(f64::total_cmp);
    // Percentile intervals need not contain the point estimate; widen to it.
    let ci_low = quantile_sorted(&ratios, 0.025).min(g);
    let ci_high = quantile_sorted(&ratios, 0.975).max(g);
    Ok(GainEstimate {
        g,
        ci_low,
        ci_high,
        n_with: with_fb.len(),
        n_without: without_fb.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d: f64,
    pub p: f64,
}

/// Kolmogorov distribution tail `Q(lambda) = 2 sum (-1)^(j-1) exp(-2 j^2 lambda^2)`.
///
/// Below `lambda = 1` the alternating series cancels badly, so the equivalent
/// theta-function form `1 - sqrt(2 pi)/lambda sum exp(-(2j-1)^2 pi^2 / (8 lambda^2))`
/// is summed instead. Returns 1 when the series has not converged after 100
/// terms.
pub fn q_ks(lambda: f64) -> f64 {
    if !(lambda > 0.0) {
        return 1.0;
    }
    if lambda < 1.0 {
        let c = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let mut sum = 0.0;
        for j in 1..=100 {
            let k = (2 * j - 1) as f64;
            let term = (c * k * k).exp();
            sum += term;
            if term < 1e-17 * sum.max(f64::MIN_POSITIVE) || term == 0.0 {
                break;
            }
        }
        let q = 1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * sum;
        return q.clamp(f64::MIN_POSITIVE, 1.0);
    }
    let a2 = -2.0 * lambda * lambda;
    let mut fac = 2.0;
    let mut sum = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = fac * (a2 * jf * jf).exp();
        sum += term;
        if term.abs() < 1e-12 {
            return sum.clamp(f64::MIN_POSITIVE, 1.0);
        }
        fac = -fac;
    }
    1.0
}

fn ks_p_value(d: f64, n_eff: f64) -> f64 {
    let root = n_eff.sqrt();
    q_ks((root + 0.12 + 0.11 / root) * d)
}

/// Largest ECDF gap between two sorted samples. Tied values are consumed
/// together so duplicates carry their full weight.
fn ks_statistic_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] == v {
            i += 1;
        }
        while j < b.len() && b[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    Ok(ks_statistic_sorted(
        &sorted_checked(a)?,
        &sorted_checked(b)?,
    ))
}

/// Two-sample KS test with the asymptotic p-value and the small-sample
/// correction `sqrt(n_e) + 0.12 + 0.11 / sqrt(n_e)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult, StatsError> {
    if a.len() < 4 || b.len() < 4 {
        return Err(StatsError::TooFewForKs {
            a: a.len(),
            b: b.len(),
        });
    }
    let d = ks_statistic(a, b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    Ok(KsResult {
        d,
        p: ks_p_value(d, na * nb / (na + nb)),
    })
}

/// Permutation p-value for the two-sample statistic, for cross-checking the
/// asymptotic formula on small samples.
pub fn ks_permutation(
    a: &[f64],
    b: &[f64],
    n_shuffles: usize,
    seed: u64,
) -> Result<KsResult, StatsError> {
    if a.len() < 4 || b.len() < 4 {
        return Err(StatsError::TooFewForKs {
            a: a.len(),
            b: b.len(),
        });
    }
    let d = ks_statistic(a, b)?;
    let mut pool: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut rng = Pcg64Mcg::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..n_shuffles {
        pool.shuffle(&mut rng);
        let (x, y) = pool.split_at_mut(a.len());
        x.sort_by(f64::total_cmp);
        y.sort_by(f64::total_cmp);
        if ks_statistic_sorted(x, y) >= d - 1e-12 {
            hits += 1;
        }
    }
    Ok(KsResult {
        d,
        p: (hits + 1) as f64 / (n_shuffles + 1) as f64,
    })
}

/// One-sample KS test against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<KsResult, StatsError> {
    let sorted = sorted_checked(samples)?;
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    Ok(KsResult {
        d,
        p: ks_p_value(d, n),
    })
}

/// Ratio-law enhancement `mean_tau_t / tau_d`, unclamped.
pub fn predicted_gain(mean_tau_t: f64, tau_d: f64) -> Result<f64, StatsError> {
    if !(mean_tau_t > 0.0 && mean_tau_t.is_finite()) {
        return Err(StatsError::NonPositive("mean_tau_t"));
    }
    if !(tau_d > 0.0 && tau_d.is_finite()) {
        return Err(StatsError::NonPositive("tau_d"));
    }
    Ok(mean_tau_t / tau_d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn survival_counting() {
        let c = survival_curve(&[10.0, 20.0, 30.0]).unwrap();
        assert_eq!(c.support, vec![10.0, 20.0, 30.0]);
        assert_eq!(c.probability, vec![1.0, 2.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn survival_all_equal() {
        let c = survival_curve(&[5.0, 5.0, 5.0]).unwrap();
        assert_eq!(c.support, vec![5.0]);
        assert_eq!(c.probability, vec![1.0]);
    }

    #[test]
    fn survival_rejects_bad_input() {
        assert_eq!(survival_curve(&[]), Err(StatsError::Empty));
        assert_eq!(survival_curve(&[1.0, -1.0]), Err(StatsError::InvalidValue));
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median(&[1.0, 2.0, 3.0, 100.0]).unwrap(), 2.5);
        assert_eq!(median(&[7.0]).unwrap(), 7.0);
        assert_eq!(median(&[]), Err(StatsError::Empty));
    }

    #[test]
    fn gain_examples() {
        let g = gain_estimate(&[10.0, 20.0, 30.0], &[5.0, 10.0, 15.0], 1000, 1).unwrap();
        assert_eq!(g.g, 2.0);
        assert!(g.ci_low <= g.g && g.g <= g.ci_high);

        let arm: Vec<f64> = (1..=56).map(|k| (k * k) as f64).collect();
        let g = gain_estimate(&arm, &arm, 2000, 7).unwrap();
        assert_eq!(g.g, 1.0);
        assert!(g.ci_low < 1.0 && g.ci_high > 1.0);
    }

    #[test]
    fn gain_zero_median() {
        assert_eq!(
            gain_estimate(&[1.0, 2.0, 3.0], &[0.0, 0.0, 1.0], 100, 1),
            Err(StatsError::ZeroMedian)
        );
    }

    #[test]
    fn ks_examples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!(r.d, 0.0);
        assert_eq!(r.p, 1.0);

        let r = ks_two_sample(&[0.0; 4], &[1.0; 4]).unwrap();
        assert_eq!(r.d, 1.0);

        let r = ks_two_sample(&a, &[1.5, 2.5, 3.5, 4.5]).unwrap();
        assert_eq!(r.d, 0.25);
    }

    #[test]
    fn ks_size_floor() {
        assert!(matches!(
            ks_two_sample(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]),
            Err(StatsError::TooFewForKs { .. })
        ));
    }

    #[test]
    fn ks_ties_weighted() {
        // ECDFs: a jumps to 3/4 at 1; b to 1/4 at 1, then 1 at 2.
        let a = [1.0, 1.0, 1.0, 2.0];
        let b = [1.0, 2.0, 2.0, 2.0];
        assert_eq!(ks_statistic(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn q_ks_reference_values() {
        // Kolmogorov tail at its classic critical points.
        assert!((q_ks(1.358_098_639) - 0.05).abs() < 1e-9);
        assert!((q_ks(1.627_623_612) - 0.01).abs() < 1e-9);
        assert_eq!(q_ks(0.0), 1.0);
        assert_eq!(q_ks(1e-3), 1.0);
        for (x, want) in [
            (0.3, 0.9999906941986655),
            (0.5, 0.9639452436648751),
            (0.9, 0.3927307079406543),
            (0.999999, 0.27000074362745646),
            (1.0, 0.26999967167735456),
            (1.2, 0.11224966667072497),
        ] {
            assert!((q_ks(x) - want).abs() < 1e-12, "{x}: {}", q_ks(x));
        }
        assert!(q_ks(40.0) > 0.0);
    }

    #[test]
    fn permutation_agrees_with_asymptotic_roughly() {
        let a: Vec<f64> = (0..30).map(|k| k as f64).collect();
        let b: Vec<f64> = (0..30).map(|k| k as f64 + 8.5).collect();
        let asym = ks_two_sample(&a, &b).unwrap();
        let perm = ks_permutation(&a, &b, 4000, 3).unwrap();
        assert_eq!(asym.d, perm.d);
        assert!((asym.p.ln() - perm.p.ln()).abs() < 1.0, "{asym:?} {perm:?}");
    }

    #[test]
    fn predicted_gain_examples() {
        assert!((predicted_gain(240e-6, 70e-6).unwrap() - 3.4286).abs() < 1e-4);
        assert_eq!(predicted_gain(3e-4, 3e-4).unwrap(), 1.0);
        assert!((predicted_gain(217e-6, 70e-6).unwrap() - 3.1).abs() < 1e-12);
        assert!(predicted_gain(0.0, 1.0).is_err());
        assert!(predicted_gain(1.0, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn ks_invariant_under_monotone_transform(
            a in prop::collection::vec(0.0f64..100.0, 4..40),
            b in prop::collection::vec(0.0f64..100.0, 4..40),
        ) {
            let d = ks_statistic(&a, &b).unwrap();
            let f = |x: &f64| (x * 0.3).exp() + x;
            let ta: Vec<f64> = a.iter().map(f).collect();
            let tb: Vec<f64> = b.iter().map(f).collect();
            prop_assert_eq!(d, ks_statistic(&ta, &tb).unwrap());
        }

        #[test]
        fn ks_p_decreases_with_d(d1 in 0.0f64..1.0, d2 in 0.0f64..1.0) {
            let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
            prop_assert!(ks_p_value(hi, 28.0) <= ks_p_value(lo, 28.0));
        }

        #[test]
        fn gain_scale_equivariance(
            with in prop::collection::vec(1.0f64..1e6, 1..30),
            without in prop::collection::vec(1.0f64..1e6, 1..30),
            c in 0.01f64..100.0,
        ) {
            let g = gain_estimate(&with, &without, 10, 1).unwrap().g;
            let both_with: Vec<f64> = with.iter().map(|x| x * c).collect();
            let both_without: Vec<f64> = without.iter().map(|x| x * c).collect();
            let g_both = gain_estimate(&both_with, &both_without, 10, 1).unwrap().g;
            prop_assert!((g_both / g - 1.0).abs() < 1e-12);
            let g_with = gain_estimate(&both_with, &without, 10, 1).unwrap().g;
            prop_assert!((g_with / (g * c) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn survival_consistent_with_median(samples in prop::collection::vec(0.0f64..1e3, 1..60)) {
            let c = survival_curve(&samples).unwrap();
            let m = median(&samples).unwrap();
            prop_assert!(c.eval(m) >= 0.5);
            prop_assert!(c.eval_above(m) <= 0.5);
            prop_assert!(c.probability.windows(2).all(|w| w[0] > w[1]));
            prop_assert!(c.support.windows(2).all(|w| w[0] < w[1]));
            prop_assert!((c.probability.last().unwrap() * samples.len() as f64) >= 1.0 - 1e-12);
        }

        #[test]
        fn gain_ci_contains_point(
            with in prop::collection::vec(1.0f64..1e3, 1..20),
            without in prop::collection::vec(1.0f64..1e3, 1..20),
        ) {
            let g = gain_estimate(&with, &without, 50, 9).unwrap();
            prop_assert!(g.ci_low <= g.g && g.g <= g.ci_high);
        }
    }
}
