//! Pipelines and checks for one experiment spec, and their artifacts.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use branchtail::asymptotics::{fmt17, minimal_tree, RegimeReport};
use branchtail::distributions::harris_sevastyanov;
use branchtail::estimate::{
    exact_dist_dp, fit_tail, ks_distance, ks_distance_to, mc_tail, zero_fraction,
};
use branchtail::laplace::{
    fit_lt_rate, laplace_curve, log_grid, phi_w, power_bound_sup, tauberian_convert, LaplaceCurve,
    PhiOptions, TauberianRate, Transform, DEFAULT_BASE_LAMBDA, DEFAULT_DEPTH_CAP,
};
use branchtail::parallel::stream_rng;
use branchtail::simulate::{
    sample_curly_w_decomposition, sample_gwi_limits, sample_tilde_w, sample_w, write_samples,
    StartMode,
};
use branchtail::{
    classify, Error, ImmigrationSpec, OffspringSpec, Pmf, Regime, SimConfig, TailShape, Variant,
};
use rand::Rng;

use crate::spec::{Check, ExperimentSpec};

pub const VERSION: &str = concat!("branchtail ", env!("CARGO_PKG_VERSION"));

/// Exit codes of the command-line contract.
pub mod exit {
    pub const OK: u8 = 0;
    pub const CHECK_FAILED: u8 = 1;
    pub const PARSE: u8 = 2;
    pub const DEGENERATE: u8 = 3;
    pub const NUMERICAL: u8 = 4;
}

/// Maps a library error onto the exit-code contract.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<crate::spec::SpecError>().is_some() {
        return exit::PARSE;
    }
    match e.downcast_ref::<Error>() {
        Some(
            Error::Parse { .. } | Error::InvalidDistribution(_) | Error::NotSupercritical { .. },
        ) => exit::PARSE,
        Some(Error::Degenerate(_) | Error::RegimeMismatch(_)) => exit::DEGENERATE,
        Some(_) => exit::NUMERICAL,
        None => exit::NUMERICAL,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub check: Check,
    pub predicted: f64,
    pub observed: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Further `key = value` lines for the report.
    pub details: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub regime: RegimeReport,
    pub checks: Vec<CheckOutcome>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn header(spec: &ExperimentSpec) -> Vec<String> {
    let mut lines = vec![VERSION.to_string()];
    lines.extend(spec.echo.iter().cloned());
    lines.push(format!("effective seed = {}", spec.seed));
    lines.push(format!("effective replicates = {}", spec.replicates));
    lines
}

fn sim_config(spec: &ExperimentSpec, seed: u64) -> anyhow::Result<SimConfig> {
    Ok(SimConfig::new(spec.generations, spec.replicates, seed)?.with_draw_mode(spec.draw_mode))
}

/// Samples of the limit selected by the spec's variant.
pub fn sample_limit(spec: &ExperimentSpec, seed: u64) -> anyhow::Result<Vec<f64>> {
    let cfg = sim_config(spec, seed)?;
    Ok(match (spec.variant, &spec.immigration) {
        (Variant::WOnly, _) | (_, None) => sample_w(&spec.offspring, &cfg)?,
        (Variant::CurlyW, Some(i)) => {
            sample_gwi_limits(&spec.offspring, i, &cfg, StartMode::ImmigrantStart)?
        }
        (Variant::TildeW, Some(i)) => {
            sample_gwi_limits(&spec.offspring, i, &cfg, StartMode::SingleAncestor)?
        }
    })
}

fn transform(variant: Variant) -> Transform {
    match variant {
        Variant::WOnly => Transform::W,
        Variant::CurlyW => Transform::CurlyW,
        Variant::TildeW => Transform::TildeW,
    }
}

fn relative_outcome(check: Check, predicted: f64, observed: f64, tolerance: f64) -> CheckOutcome {
    CheckOutcome {
        check,
        predicted,
        observed,
        tolerance,
        pass: (observed - predicted).abs() <= tolerance * predicted.abs(),
        details: Vec::new(),
    }
}

fn predicted_rate(regime: &RegimeReport, laplace: bool) -> anyhow::Result<f64> {
    let rate = if laplace {
        regime.laplace_rate()
    } else {
        regime.tail_rate()
    };
    rate.ok_or_else(|| Error::Degenerate("no predicted rate for a degenerate regime".into()).into())
}

fn tail_check(
    spec: &ExperimentSpec,
    regime: &RegimeReport,
    out: &Path,
) -> anyhow::Result<CheckOutcome> {
    let predicted = predicted_rate(regime, false)?;
    let samples = sample_limit(spec, spec.seed)?;
    let grid = spec.epsilons.expect("validated").values();
    let curve = mc_tail(&samples, &grid, spec.seed)?;
    let mut file = BufWriter::new(File::create(out.join("tail.csv"))?);
    curve.write_csv(&mut file, &header(spec))?;
    file.flush()?;
    let fit = fit_tail(&curve, regime)?;
    let mut outcome = relative_outcome(Check::Tail, predicted, fit.fitted_rate, spec.tolerance);
    outcome.details.push(("r2".into(), fmt17(fit.r2)));
    outcome
        .details
        .push(("points_used".into(), fit.points_used.to_string()));
    Ok(outcome)
}

fn laplace_data(spec: &ExperimentSpec) -> anyhow::Result<LaplaceCurve> {
    let grid = spec.lambdas.expect("validated").values();
    Ok(laplace_curve(
        transform(spec.variant),
        &spec.offspring,
        spec.immigration.as_ref(),
        &grid,
        &PhiOptions::default(),
    )?)
}

fn laplace_check(
    spec: &ExperimentSpec,
    regime: &RegimeReport,
    out: &Path,
) -> anyhow::Result<CheckOutcome> {
    let predicted = predicted_rate(regime, true)?;
    let curve = laplace_data(spec)?;
    let mut file = BufWriter::new(File::create(out.join("laplace.csv"))?);
    curve.write_csv(&mut file, &header(spec))?;
    file.flush()?;
    let shape = regime.regime.shape().expect("non-degenerate");
    let fit = fit_lt_rate(&curve, shape)?;
    let observed = match shape {
        TailShape::Power => -fit.exponent,
        TailShape::LogSquared => fit.coefficient,
        TailShape::Stretched => fit.exponent,
    };
    let mut outcome = relative_outcome(Check::Laplace, predicted, observed, spec.tolerance);
    outcome.details.push(("r2".into(), fmt17(fit.r2)));

    // When the plain limit W shares the predicted exponent (the p1 = 0
    // case), its transform is checked against the same rate.
    let plain = classify(&spec.offspring, None, Variant::WOnly)?;
    if spec.variant != Variant::WOnly
        && plain.regime.shape() == Some(shape)
        && plain
            .laplace_rate()
            .is_some_and(|r| (r - predicted).abs() <= 1e-12 * predicted.abs())
    {
        let grid = spec.lambdas.expect("validated").values();
        let w = laplace_curve(
            Transform::W,
            &spec.offspring,
            None,
            &grid,
            &PhiOptions::default(),
        )?;
        let w_fit = fit_lt_rate(&w, shape)?;
        let w_observed = match shape {
            TailShape::Power => -w_fit.exponent,
            TailShape::LogSquared => w_fit.coefficient,
            TailShape::Stretched => w_fit.exponent,
        };
        outcome.pass &= (w_observed - predicted).abs() <= spec.tolerance * predicted.abs();
        outcome
            .details
            .push(("w_observed".into(), fmt17(w_observed)));
    }
    Ok(outcome)
}

fn absolute_outcome(check: Check, predicted: f64, observed: f64, tolerance: f64) -> CheckOutcome {
    CheckOutcome {
        check,
        predicted,
        observed,
        tolerance,
        pass: (observed - predicted).abs() <= tolerance,
        details: Vec::new(),
    }
}

fn exp_ks_check(spec: &ExperimentSpec) -> anyhow::Result<CheckOutcome> {
    if !matches!(spec.offspring.pmf(), Pmf::FractionalLinear { .. }) {
        return Err(Error::RegimeMismatch(
            "W is Exp(1) only for fractional-linear offspring".into(),
        )
        .into());
    }
    let w = sample_w(&spec.offspring, &sim_config(spec, spec.seed)?)?;
    let ks = ks_distance_to(&w, |x| -(-x).exp_m1());
    Ok(absolute_outcome(Check::ExpKs, 0.0, ks, spec.abs_tolerance))
}

fn zero_fraction_check(
    spec: &ExperimentSpec,
    regime: &RegimeReport,
) -> anyhow::Result<CheckOutcome> {
    let w = sample_w(&spec.offspring, &sim_config(spec, spec.seed)?)?;
    Ok(absolute_outcome(
        Check::ZeroFraction,
        regime.rho,
        zero_fraction(&w),
        spec.abs_tolerance,
    ))
}

fn random_case_c(rng: &mut impl Rng) -> anyhow::Result<(OffspringSpec, ImmigrationSpec)> {
    let gamma = rng.random_range(2..=3u64);
    let mut atoms = vec![(gamma, rng.random_range(0.1..1.0))];
    for j in 0..rng.random_range(0..=2u64) {
        atoms.push((
            gamma + 1 + 2 * j + rng.random_range(0..2u64),
            rng.random_range(0.1..1.0),
        ));
    }
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    let off = OffspringSpec::new(Pmf::finite(atoms.iter().map(|&(k, p)| (k, p / total)))?)?;
    let k = rng.random_range(1..=2u64);
    let q = rng.random_range(0.2..1.0);
    Ok((
        off,
        ImmigrationSpec::new(Pmf::finite([(k, q), (k + 1, 1.0 - q)])?),
    ))
}

fn minimal_tree_check(spec: &ExperimentSpec) -> anyhow::Result<CheckOutcome> {
    let mut models = vec![(
        spec.offspring.clone(),
        spec.immigration.clone().expect("validated"),
    )];
    let mut rng = stream_rng(spec.seed, 0);
    for _ in 0..spec.random_configs {
        models.push(random_case_c(&mut rng)?);
    }
    let mut worst: f64 = 0.0;
    for (off, imm) in &models {
        for n in 0..=3 {
            let tree = minimal_tree(off, imm, n)?;
            let dist = exact_dist_dp(off, imm, n, tree.b_n as u64)?;
            let closed = off.p_gamma().powf(tree.big_b_n as f64) * imm.q_k().powi(n as i32 + 1);
            worst = worst.max((dist.prob(tree.b_n as u64) - closed).abs());
        }
    }
    // b(n+1) = γ b(n) + K and B(n+1) = B(n) + b(n), exactly
    let (off, imm) = &models[0];
    let mut prev = minimal_tree(off, imm, 0)?;
    let mut recurrences = true;
    for n in 1..=30 {
        let t = minimal_tree(off, imm, n)?;
        recurrences &= t.b_n == off.gamma() as u128 * prev.b_n + imm.k_min() as u128;
        recurrences &= t.big_b_n == prev.big_b_n + prev.b_n;
        prev = t;
    }
    let mut outcome = absolute_outcome(Check::MinimalTree, 0.0, worst, 1e-12);
    outcome.pass &= recurrences;
    outcome
        .details
        .push(("models".into(), models.len().to_string()));
    outcome
        .details
        .push(("recurrences_exact".into(), recurrences.to_string()));
    Ok(outcome)
}

fn identities_check(spec: &ExperimentSpec) -> anyhow::Result<CheckOutcome> {
    let off = &spec.offspring;
    let imm = spec.immigration.as_ref().expect("validated");
    let seed = |k: u64| spec.seed.wrapping_add(k);
    let direct = sample_gwi_limits(
        off,
        imm,
        &sim_config(spec, seed(1))?,
        StartMode::ImmigrantStart,
    )?;
    let series = sample_curly_w_decomposition(off, imm, &sim_config(spec, seed(2))?, None)?;
    let ks_series = ks_distance(&direct, &series);
    let single = sample_gwi_limits(
        off,
        imm,
        &sim_config(spec, seed(3))?,
        StartMode::SingleAncestor,
    )?;
    let summed = sample_tilde_w(off, imm, &sim_config(spec, seed(4))?)?;
    let ks_single = ks_distance(&single, &summed);

    let hs = harris_sevastyanov(off)?;
    let w = sample_w(off, &sim_config(spec, seed(5))?)?;
    let tilde = sample_w(&hs.transformed, &sim_config(spec, seed(6))?)?;
    let mut rng = stream_rng(seed(7), 0);
    let product: Vec<f64> = tilde
        .iter()
        .map(|&x| {
            if rng.random::<f64>() < hs.rho {
                0.0
            } else {
                hs.w0_atom * x
            }
        })
        .collect();
    let ks_hs = ks_distance(&w, &product);

    let worst = ks_series.max(ks_single).max(ks_hs);
    let mut outcome = absolute_outcome(Check::Identities, 0.0, worst, spec.abs_tolerance);
    outcome
        .details
        .push(("ks_decomposition".into(), fmt17(ks_series)));
    outcome
        .details
        .push(("ks_single_ancestor".into(), fmt17(ks_single)));
    outcome
        .details
        .push(("ks_harris_sevastyanov".into(), fmt17(ks_hs)));
    Ok(outcome)
}

fn functional_check(spec: &ExperimentSpec, regime: &RegimeReport) -> anyhow::Result<CheckOutcome> {
    let off = &spec.offspring;
    let opts = PhiOptions::default();
    let grid = spec.lambdas.expect("validated");
    let lambdas = grid.values();
    let curve = laplace_curve(Transform::W, off, None, &lambdas, &opts)?;
    let mut residual: f64 = 0.0;
    for (k, &l) in lambdas.iter().enumerate() {
        let inner = phi_w(off, l / off.mean(), DEFAULT_BASE_LAMBDA, DEFAULT_DEPTH_CAP)?;
        let r = (curve.log_values[k] - off.pmf().log_pgf_of_log(inner)).abs();
        residual = residual.max(r / curve.log_values[k].abs().max(1.0));
    }
    let mut pass = residual < 1e-10;
    let mut details = vec![("residual".to_string(), fmt17(residual))];

    if off.p1() > 0.0 {
        let coarse = power_bound_sup(off, &lambdas, &opts)?;
        let fine = power_bound_sup(
            off,
            &log_grid(grid.min, grid.max, 4 * grid.points - 3)?,
            &opts,
        )?;
        let drift = (fine - coarse).abs() / fine.abs().max(1.0);
        pass &= drift < 0.01;
        details.push(("bound_sup".into(), fmt17(fine)));
        details.push(("bound_refinement_drift".into(), fmt17(drift)));
    }

    if let Some(rate) = regime.tail_rate() {
        let (alpha, theta) = match regime.regime.shape() {
            Some(TailShape::LogSquared) => (0.0, 2.0),
            Some(TailShape::Stretched) => (rate, 0.0),
            _ => (0.0, 1.0),
        };
        let r = tauberian_convert(alpha, theta)?;
        let back = TauberianRate::from_laplace(r.lt_alpha, r.lt_theta)?;
        let gap = (back.alpha - alpha).abs().max((back.theta - theta).abs());
        pass &= gap < 1e-12;
        details.push(("tauberian_round_trip".into(), fmt17(gap)));
    }

    if let Some(imm) = &spec.immigration {
        if off.p0() == 0.0 && off.p1() > 0.0 && imm.q0() > 0.0 {
            let tilde = classify(off, Some(imm), Variant::TildeW)?;
            let lhs = tilde.power_exponent.expect("p1 q0 > 0").numerator;
            let gap = (lhs - (off.p1().ln().abs() + imm.q0().ln().abs())).abs();
            pass &= gap < 1e-12;
            details.push(("exponent_additivity".into(), fmt17(gap)));
        }
    }

    Ok(CheckOutcome {
        check: Check::Functional,
        predicted: 0.0,
        observed: residual,
        tolerance: 1e-10,
        pass,
        details,
    })
}

/// Runs `spec`, writing `regime.txt`, pipeline CSVs and `report.txt` under
/// `out`. Errors carry the library error for [`exit_code`].
pub fn run(spec: &ExperimentSpec, out: &Path) -> anyhow::Result<RunOutcome> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let regime = classify(&spec.offspring, spec.immigration.as_ref(), spec.variant)?;
    let mut text = String::new();
    for line in header(spec) {
        text.push_str(&format!("# {line}\n"));
    }
    text.push_str(&regime.to_kv());
    fs::write(out.join("regime.txt"), text)?;

    let checks = spec.effective_checks();
    let needs_rate = checks
        .iter()
        .any(|c| matches!(c, Check::Tail | Check::Laplace));
    if regime.regime == Regime::Degenerate && (checks.is_empty() || needs_rate) {
        return Err(
            Error::Degenerate(format!("{} has no small-value tail", regime.variant)).into(),
        );
    }

    let mut outcomes = Vec::new();
    for check in checks {
        let outcome = match check {
            Check::Tail => tail_check(spec, &regime, out),
            Check::Laplace => laplace_check(spec, &regime, out),
            Check::ExpKs => exp_ks_check(spec),
            Check::ZeroFraction => zero_fraction_check(spec, &regime),
            Check::MinimalTree => minimal_tree_check(spec),
            Check::Identities => identities_check(spec),
            Check::Functional => functional_check(spec, &regime),
        }
        .with_context(|| format!("{check} check"))?;
        outcomes.push(outcome);
    }

    let outcome = RunOutcome {
        regime,
        checks: outcomes,
    };
    write_report(spec, &outcome, out)?;
    Ok(outcome)
}

fn write_report(spec: &ExperimentSpec, outcome: &RunOutcome, out: &Path) -> anyhow::Result<()> {
    let mut f = BufWriter::new(File::create(out.join("report.txt"))?);
    for line in header(spec) {
        writeln!(f, "# {line}")?;
    }
    writeln!(f, "case = {}", outcome.regime.regime.label())?;
    for c in &outcome.checks {
        writeln!(f)?;
        writeln!(f, "[{}]", c.check)?;
        writeln!(f, "predicted = {}", fmt17(c.predicted))?;
        writeln!(f, "observed = {}", fmt17(c.observed))?;
        writeln!(f, "tolerance = {}", fmt17(c.tolerance))?;
        for (k, v) in &c.details {
            writeln!(f, "{k} = {v}")?;
        }
        writeln!(f, "status = {}", if c.pass { "PASS" } else { "FAIL" })?;
    }
    writeln!(f)?;
    writeln!(
        f,
        "overall = {}",
        if outcome.passed() { "PASS" } else { "FAIL" }
    )?;
    f.flush()?;
    Ok(())
}

/// Writes raw samples of the spec's limit to `samples.txt`.
pub fn dump_samples(spec: &ExperimentSpec, out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out)?;
    let samples = sample_limit(spec, spec.seed)?;
    let mut f = BufWriter::new(File::create(out.join("samples.txt"))?);
    write_samples(&mut f, &header(spec), &samples)?;
    f.flush()?;
    Ok(())
}
