//! Monte Carlo left-tail estimation, rate regression, Kolmogorov–Smirnov
//! distances, and an exact small-horizon distribution used as an oracle.

use std::io::{self, Write};

use statrs::function::beta::beta_reg;

use crate::asymptotics::{fmt17, Regime, RegimeReport, TailShape, Variant};
use crate::distributions::{ImmigrationSpec, OffspringSpec};
use crate::error::{Error, Result};
use crate::regression::polyfit;

/// Two-sided confidence level of the tail intervals.
pub const CONFIDENCE: f64 = 0.95;
/// Grid points whose interval spans more than this factor are not fitted.
pub const MAX_CI_RATIO: f64 = 2.0;
pub const MIN_FIT_POINTS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct TailCurve {
    /// Decreasing.
    pub epsilons: Vec<f64>,
    pub probs: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
}

/// Exact Clopper–Pearson interval for `successes` out of `trials`.
pub fn clopper_pearson(successes: u64, trials: u64, confidence: f64) -> (f64, f64) {
    assert!(successes <= trials && trials > 0);
    let alpha = 1.0 - confidence;
    let (x, n) = (successes as f64, trials as f64);
    let low = if successes == 0 {
        0.0
    } else {
        beta_quantile(alpha / 2.0, x, n - x + 1.0)
    };
    let high = if successes == trials {
        1.0
    } else if successes == 0 {
        1.0 - (alpha / 2.0).powf(1.0 / n)
    } else {
        beta_quantile(1.0 - alpha / 2.0, x + 1.0, n - x)
    };
    (low, high)
}

/// Inverse of the regularized incomplete beta function by bisection.
fn beta_quantile(q: f64, a: f64, b: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-15 * hi {
            break;
        }
        if beta_reg(a, b, mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Empirical `P(V <= eps)` on a grid with Clopper–Pearson intervals. The grid
/// is sorted decreasing; one pass over the sorted samples.
pub fn mc_tail(samples: &[f64], epsilons: &[f64], seed: u64) -> Result<TailCurve> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples".into()));
    }
    if epsilons.is_empty() {
        return Err(Error::InsufficientData("empty threshold grid".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let mut eps = epsilons.to_vec();
    eps.sort_unstable_by(|a, b| b.total_cmp(a));
    eps.dedup();

    let n = sorted.len() as u64;
    let mut curve = TailCurve {
        epsilons: Vec::with_capacity(eps.len()),
        probs: Vec::with_capacity(eps.len()),
        ci_low: Vec::with_capacity(eps.len()),
        ci_high: Vec::with_capacity(eps.len()),
        replicates: sorted.len(),
        seed,
    };
    let mut end = sorted.len();
    for e in eps {
        end = sorted[..end].partition_point(|&x| x <= e);
        let (lo, hi) = clopper_pearson(end as u64, n, CONFIDENCE);
        curve.epsilons.push(e);
        curve.probs.push(end as f64 / n as f64);
        curve.ci_low.push(lo);
        curve.ci_high.push(hi);
    }
    Ok(curve)
}

impl TailCurve {
    /// CSV with columns `epsilon,prob,ci_low,ci_high,replicates,seed`.
    pub fn write_csv<W: Write>(&self, mut out: W, header: &[String]) -> io::Result<()> {
        for line in header {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "epsilon,prob,ci_low,ci_high,replicates,seed")?;
        for i in 0..self.epsilons.len() {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                fmt17(self.epsilons[i]),
                fmt17(self.probs[i]),
                fmt17(self.ci_low[i]),
                fmt17(self.ci_high[i]),
                self.replicates,
                self.seed
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailFit {
    pub fitted_rate: f64,
    pub r2: f64,
    pub points_used: usize,
}

/// Fits the tail model of `shape` to the usable grid points: positive
/// probability and an interval no wider than a factor [`MAX_CI_RATIO`].
///
/// * power: slope of `log P` against `log eps`;
/// * log-squared: `c` in `log P ≈ a + b |log eps| - c |log eps|²`;
/// * stretched: minus the slope of `log(-log P)` against `log eps`.
pub fn fit_tail_shape(curve: &TailCurve, shape: TailShape) -> Result<TailFit> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..curve.epsilons.len() {
        let p = curve.probs[i];
        if p <= 0.0 || curve.ci_high[i] > MAX_CI_RATIO * curve.ci_low[i] {
            continue;
        }
        if shape == TailShape::Stretched && p >= 1.0 {
            continue;
        }
        let le = curve.epsilons[i].ln();
        match shape {
            TailShape::Power => {
                x.push(le);
                y.push(p.ln());
            }
            TailShape::LogSquared => {
                x.push(le.abs());
                y.push(p.ln());
            }
            TailShape::Stretched => {
                x.push(le);
                y.push((-p.ln()).ln());
            }
        }
    }
    if x.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientData(format!(
            "{} usable grid points with positive probability, need {MIN_FIT_POINTS}",
            x.len()
        )));
    }
    let (rate, r2) = match shape {
        TailShape::Power => {
            let f = polyfit(&x, &y, 1)?;
            (f.coefficients[1], f.r2)
        }
        TailShape::LogSquared => {
            let f = polyfit(&x, &y, 2)?;
            (-f.coefficients[2], f.r2)
        }
        TailShape::Stretched => {
            let f = polyfit(&x, &y, 1)?;
            (-f.coefficients[1], f.r2)
        }
    };
    Ok(TailFit {
        fitted_rate: rate,
        r2,
        points_used: x.len(),
    })
}

/// Fits the model dictated by `regime`. Refuses degenerate regimes and the
/// no-immigration limit with an atom at zero (check that with
/// [`zero_fraction`] instead).
pub fn fit_tail(curve: &TailCurve, regime: &RegimeReport) -> Result<TailFit> {
    if regime.regime == Regime::Degenerate {
        return Err(Error::Degenerate("no tail to fit".into()));
    }
    if regime.variant == Variant::WOnly && regime.rho > 0.0 {
        return Err(Error::RegimeMismatch(
            "W has an atom at zero; compare its frequency with rho instead".into(),
        ));
    }
    fit_tail_shape(curve, regime.regime.shape().unwrap())
}

pub fn zero_fraction(samples: &[f64]) -> f64 {
    samples.iter().filter(|&&x| x == 0.0).count() as f64 / samples.len() as f64
}

/// Two-sample Kolmogorov–Smirnov distance `sup |F_a - F_b|`.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    assert!(
        !a.is_empty() && !b.is_empty(),
        "KS distance of an empty sample"
    );
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable_by(f64::total_cmp);
    b.sort_unstable_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// One-sample Kolmogorov–Smirnov distance to a continuous CDF.
pub fn ks_distance_to<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut s = samples.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max((f - i as f64 / n).abs())
            .max(((i + 1) as f64 / n - f).abs())
    })
}

/// Exact law of `𝒵_n` (immigrant start) below a size cap.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactDist {
    pub horizon: u32,
    /// `masses[z] = P(𝒵_n = z)` for `z <= cap`.
    pub masses: Vec<f64>,
    /// `P(𝒵_n > cap)`
    pub spill: f64,
}

impl ExactDist {
    pub fn prob(&self, z: u64) -> f64 {
        self.masses.get(z as usize).copied().unwrap_or(0.0)
    }
}

fn convolve_capped(dist: &[f64], atoms: &[(u64, f64)], cap: usize) -> (Vec<f64>, f64) {
    let mut out = vec![0.0; cap + 1];
    let mut lost = 0.0;
    for (z, &p) in dist.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for &(k, q) in atoms {
            let t = z + k as usize;
            if t <= cap {
                out[t] += p * q;
            } else {
                lost += p * q;
            }
        }
    }
    (out, lost)
}

/// Exact distribution of `𝒵_n` by iterated convolution, truncated at `cap`.
pub fn exact_dist_dp(
    off: &OffspringSpec,
    imm: &ImmigrationSpec,
    n: u32,
    cap: u64,
) -> Result<ExactDist> {
    let unsupported =
        || Error::InvalidDistribution("exact distribution needs finite-support laws".into());
    let off_atoms = off.pmf().atoms().ok_or_else(unsupported)?;
    let imm_atoms = imm.pmf().atoms().ok_or_else(unsupported)?;

    let mut smallest = imm.k_min() as u128;
    for _ in 0..n {
        smallest = smallest * off.gamma() as u128 + imm.k_min() as u128;
    }
    if smallest > cap as u128 {
        return Err(Error::Domain {
            name: "cap",
            value: cap as f64,
            reason: "smaller than the minimal population at the horizon",
        });
    }
    let cap = cap as usize;

    let (mut dist, mut spill) = convolve_capped(&[1.0], &imm_atoms, cap);
    for _ in 0..n {
        let mut next = vec![0.0; cap + 1];
        // law of the sum of z offspring, truncated at cap
        let mut power = vec![1.0];
        let top = dist.iter().rposition(|&p| p > 0.0).unwrap_or(0);
        for (z, &pz) in dist.iter().enumerate().take(top + 1) {
            if z > 0 {
                power = convolve_capped(&power, &off_atoms, cap).0;
            }
            if pz == 0.0 {
                continue;
            }
            let kept: f64 = power.iter().sum();
            for (t, &q) in power.iter().enumerate() {
                next[t] += pz * q;
            }
            spill += pz * (1.0 - kept);
        }
        let (with_imm, lost) = convolve_capped(&next, &imm_atoms, cap);
        dist = with_imm;
        spill += lost;
    }
    Ok(ExactDist {
        horizon: n,
        masses: dist,
        spill,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotics::{classify, minimal_tree};
    use crate::parallel::stream_rng;
    use rand::Rng;
    use rand_distr::{Distribution, Exp};

    fn off(s: &str) -> OffspringSpec {
        s.parse().unwrap()
    }
    fn imm(s: &str) -> ImmigrationSpec {
        s.parse().unwrap()
    }
    fn exp_samples(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream_rng(seed, 0);
        (0..n)
            .map(|_| Exp::new(1.0).unwrap().sample(&mut rng))
            .collect()
    }

    #[test]
    fn zero_successes_interval() {
        let n = 1000;
        let c = mc_tail(&vec![1.0; n], &[0.5], 0).unwrap();
        assert_eq!(c.probs[0], 0.0);
        assert_eq!(c.ci_low[0], 0.0);
        assert!(c.ci_high[0] < 3.7 / n as f64);
        assert!(c.ci_high[0] > 3.6 / n as f64);
    }

    #[test]
    fn clopper_pearson_reference_values() {
        // R: binom.test(5, 20)$conf.int
        let (lo, hi) = clopper_pearson(5, 20, 0.95);
        assert!((lo - 0.08657147).abs() < 1e-7, "{lo}");
        assert!((hi - 0.49104587).abs() < 1e-7, "{hi}");
        let (lo, hi) = clopper_pearson(20, 20, 0.95);
        assert_eq!(hi, 1.0);
        assert!((lo - 0.8315665).abs() < 1e-6);
    }

    #[test]
    fn clopper_pearson_coverage() {
        let mut rng = stream_rng(11, 0);
        for &p in &[0.01, 0.1, 0.5] {
            let mut covered = 0;
            for _ in 0..1000 {
                let x = (0..200).filter(|_| rng.random::<f64>() < p).count() as u64;
                let (lo, hi) = clopper_pearson(x, 200, 0.95);
                if lo <= p && p <= hi {
                    covered += 1;
                }
            }
            assert!(covered >= 930, "p = {p}: {covered}");
        }
    }

    #[test]
    fn exponential_tail_estimate() {
        let xs = exp_samples(1_000_000, 3);
        let c = mc_tail(&xs, &[0.01], 3).unwrap();
        let exact = -(-0.01f64).exp_m1();
        assert!(c.ci_low[0] <= exact && exact <= c.ci_high[0], "{c:?}");
        assert!((c.probs[0] - 0.00995).abs() < 5e-4);
    }

    #[test]
    fn atom_plateau() {
        let xs: Vec<f64> = (0..30_000)
            .map(|i| if i % 3 == 0 { 0.0 } else { 1.0 + i as f64 })
            .collect();
        let c = mc_tail(&xs, &[1e-1, 1e-3, 1e-6, 1e-9], 0).unwrap();
        assert!(c.probs.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn curve_is_monotone_and_bracketed() {
        let xs = exp_samples(20_000, 5);
        let grid: Vec<f64> = (0..30).map(|i| 10f64.powf(-3.0 + 0.1 * i as f64)).collect();
        let c = mc_tail(&xs, &grid, 5).unwrap();
        assert!(c.epsilons.windows(2).all(|w| w[1] < w[0]));
        assert!(c.probs.windows(2).all(|w| w[1] <= w[0]));
        for i in 0..c.probs.len() {
            assert!(c.ci_low[i] <= c.probs[i] && c.probs[i] <= c.ci_high[i]);
        }
        assert!(mc_tail(&xs, &[], 0).is_err());
        assert!(mc_tail(&[], &[0.1], 0).is_err());
    }

    #[test]
    fn exponential_power_slope() {
        let xs = exp_samples(1_000_000, 9);
        let grid: Vec<f64> = (0..10)
            .map(|i| 10f64.powf(-3.0 + 2.0 * i as f64 / 9.0))
            .collect();
        let c = mc_tail(&xs, &grid, 9).unwrap();
        let fit = fit_tail_shape(&c, TailShape::Power).unwrap();
        assert!((fit.fitted_rate - 1.0).abs() < 0.05, "{fit:?}");
    }

    fn synthetic(grid: &[f64], f: impl Fn(f64) -> f64) -> TailCurve {
        let probs: Vec<f64> = grid.iter().map(|&e| f(e)).collect();
        TailCurve {
            epsilons: grid.to_vec(),
            ci_low: probs.clone(),
            ci_high: probs.clone(),
            probs,
            replicates: 0,
            seed: 0,
        }
    }

    #[test]
    fn exact_models_are_recovered() {
        let grid: Vec<f64> = (0..12)
            .map(|i| 10f64.powf(-0.5 - 0.25 * i as f64))
            .collect();
        let c = synthetic(&grid, |e| 0.3 * e.powf(1.7095));
        assert!((fit_tail_shape(&c, TailShape::Power).unwrap().fitted_rate - 1.7095).abs() < 1e-6);
        let c = synthetic(&grid, |e| {
            (-0.4 + 0.7 * e.ln().abs() - 2.108 * e.ln().powi(2)).exp()
        });
        assert!(
            (fit_tail_shape(&c, TailShape::LogSquared)
                .unwrap()
                .fitted_rate
                - 2.108)
                .abs()
                < 1e-6
        );
        let grid: Vec<f64> = (0..12)
            .map(|i| 10f64.powf(-0.1 - 0.05 * i as f64))
            .collect();
        let c = synthetic(&grid, |e| (-0.02 * e.powf(-3.1063)).exp());
        assert!(
            (fit_tail_shape(&c, TailShape::Stretched)
                .unwrap()
                .fitted_rate
                - 3.1063)
                .abs()
                < 1e-6
        );
    }

    #[test]
    fn fit_refusals() {
        let grid: Vec<f64> = (0..8).map(|i| 10f64.powf(-1.0 - 0.25 * i as f64)).collect();
        let c = mc_tail(&vec![1.0; 1000], &grid, 0).unwrap();
        let r = classify(&off("fl(m=2)"), None, Variant::WOnly).unwrap();
        assert!(matches!(fit_tail(&c, &r), Err(Error::InsufficientData(_))));
        let r = classify(&off("{1:.5,2:.5}"), Some(&imm("{0:1}")), Variant::CurlyW).unwrap();
        assert!(matches!(fit_tail(&c, &r), Err(Error::Degenerate(_))));
        let r = classify(&off("{0:.25,2:.75}"), None, Variant::WOnly).unwrap();
        assert!(matches!(fit_tail(&c, &r), Err(Error::RegimeMismatch(_))));
    }

    #[test]
    fn ks_examples() {
        let a = exp_samples(1000, 1);
        assert_eq!(ks_distance(&a, &a), 0.0);
        assert_eq!(ks_distance(&[0.0; 50], &[1.0; 70]), 1.0);
        let b = exp_samples(100_000, 2);
        let c = exp_samples(100_000, 3);
        assert!(ks_distance(&b, &c) < 0.01);
        assert!(ks_distance_to(&b, |x| -(-x).exp_m1()) < 0.01);
        // hand-checked: F_a - F_b peaks at 0.5 after {1, 2}
        assert!((ks_distance(&[1.0, 2.0, 3.0, 4.0], &[2.5, 3.5]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn exact_dist_examples() {
        let o = off("{2:.6,3:.4}");
        let i = imm("{1:.7,2:.3}");
        let d = exact_dist_dp(&o, &i, 1, 100).unwrap();
        assert!((d.prob(3) - 0.294).abs() < 1e-15);
        let d = exact_dist_dp(&o, &i, 2, 200).unwrap();
        let want = 0.6f64.powi(4) * 0.7f64.powi(3);
        assert!((d.prob(7) - want).abs() < 1e-15);
        assert!((d.prob(7) - 0.044453).abs() < 1e-6);
        let total: f64 = d.masses.iter().sum::<f64>() + d.spill;
        assert!((total - 1.0).abs() < 1e-12);
        assert!(exact_dist_dp(&o, &i, 2, 6).is_err());
        let d = exact_dist_dp(&o, &i, 3, 20).unwrap();
        assert!(d.spill > 0.0);
        assert!((d.masses.iter().sum::<f64>() + d.spill - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_dist_deterministic() {
        // 1 -> 2*1 + 1 = 3 -> 2*3 + 1 = 7
        let d = exact_dist_dp(&off("{2:1}"), &imm("{1:1}"), 2, 10).unwrap();
        assert_eq!(d.prob(7), 1.0);
    }

    #[test]
    fn exact_dist_matches_minimal_tree() {
        let o = off("{2:.45,3:.25,5:.3}");
        let i = imm("{2:.6,3:.4}");
        for n in 0..=3 {
            let t = minimal_tree(&o, &i, n).unwrap();
            let d = exact_dist_dp(&o, &i, n, t.b_n as u64 + 5).unwrap();
            assert!((d.prob(t.b_n as u64) - t.prob()).abs() < 1e-12);
        }
    }
}
