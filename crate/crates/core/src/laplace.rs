//! Laplace transforms `φ(λ) = E e^{-λW}` and `Φ(λ) = E e^{-λ𝒲}` in log domain.
//!
//! `φ` solves `φ(λ) = f(φ(λ/m))`. It is computed by pulling `λ` down to a
//! small base point `λ/m^n <= λ₀`, seeding with the second-order expansion
//! `1 - λ' + E[W²] λ'²/2`, and applying `n` compositions of `f` to the log of
//! the value. In the log domain the value stays representable even when `φ`
//! is doubly exponentially small (`p1 = 0`).
//!
//! `Φ` factorizes over generations: `Φ(λ) = Π_i h(φ(λ m^{-i}))`.

use std::io::{self, Write};

use crate::asymptotics::{fmt17, TailShape};
use crate::distributions::{ImmigrationSpec, OffspringSpec};
use crate::error::{Error, Result};
use crate::regression::polyfit;

pub const DEFAULT_BASE_LAMBDA: f64 = 1e-6;
pub const DEFAULT_DEPTH_CAP: u32 = 10_000;
pub const DEFAULT_PRODUCT_TOL: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiOptions {
    pub base_lambda: f64,
    pub depth_cap: u32,
    /// Product truncation: stop once `1 - h(φ(λ m^{-N})) < tol`.
    pub tol: f64,
}

impl Default for PhiOptions {
    fn default() -> Self {
        PhiOptions {
            base_lambda: DEFAULT_BASE_LAMBDA,
            depth_cap: DEFAULT_DEPTH_CAP,
            tol: DEFAULT_PRODUCT_TOL,
        }
    }
}

/// `log φ` at `λ m^{-i}` for `i = 0..=depth`; the last entry is the base point.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiTrajectory {
    pub lambda: f64,
    pub log_values: Vec<f64>,
    /// First-order base expansion was used (infinite offspring variance).
    pub first_order_base: bool,
}

impl PhiTrajectory {
    pub fn log_phi(&self) -> f64 {
        self.log_values[0]
    }
    pub fn depth(&self) -> u32 {
        self.log_values.len() as u32 - 1
    }
}

fn base_log_phi(off: &OffspringSpec, lambda: f64) -> f64 {
    if off.variance().is_finite() {
        (-lambda + 0.5 * off.w_second_moment() * lambda * lambda).ln_1p()
    } else {
        (-lambda).ln_1p()
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            name: "lambda",
            value: lambda,
            reason: "must be positive and finite",
        })
    }
}

/// Number of halvings by `m` needed to bring `lambda` to at most `base`.
fn depth_for(lambda: f64, m: f64, base: f64) -> u32 {
    if lambda <= base {
        return 0;
    }
    let mut n = ((lambda / base).ln() / m.ln()).ceil().max(0.0) as u32;
    while n > 0 && lambda / m.powi(n as i32 - 1) <= base {
        n -= 1;
    }
    while lambda / m.powi(n as i32) > base {
        n += 1;
    }
    n
}

pub fn phi_w_trajectory(
    off: &OffspringSpec,
    lambda: f64,
    opts: &PhiOptions,
) -> Result<PhiTrajectory> {
    check_lambda(lambda)?;
    check_lambda(opts.base_lambda)?;
    let m = off.mean();
    let depth = depth_for(lambda, m, opts.base_lambda);
    if depth > opts.depth_cap {
        return Err(Error::DepthCap {
            needed: depth,
            cap: opts.depth_cap,
        });
    }
    let mut values = vec![0.0; depth as usize + 1];
    let mut l = base_log_phi(off, lambda / m.powi(depth as i32));
    values[depth as usize] = l;
    for i in (0..depth as usize).rev() {
        l = off.pmf().log_pgf_of_log(l);
        values[i] = l;
    }
    Ok(PhiTrajectory {
        lambda,
        log_values: values,
        first_order_base: !off.variance().is_finite(),
    })
}

/// `log E e^{-λW}`.
pub fn phi_w(off: &OffspringSpec, lambda: f64, base_lambda: f64, depth_cap: u32) -> Result<f64> {
    let opts = PhiOptions {
        base_lambda,
        depth_cap,
        ..PhiOptions::default()
    };
    Ok(phi_w_trajectory(off, lambda, &opts)?.log_phi())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurlyEval {
    pub log_value: f64,
    /// Depth of the `φ(λ)` iteration.
    pub depth: u32,
    /// Number of product factors kept.
    pub terms: u32,
}

/// `log E e^{-λ𝒲}` as `Σ_{i=0}^{N} log h(φ(λ m^{-i}))`.
pub fn phi_curly_w_eval(
    off: &OffspringSpec,
    imm: &ImmigrationSpec,
    lambda: f64,
    opts: &PhiOptions,
) -> Result<CurlyEval> {
    if imm.q0() == 1.0 {
        return Err(Error::Degenerate(
            "q0 = 1: the limit is identically zero".into(),
        ));
    }
    let traj = phi_w_trajectory(off, lambda, opts)?;
    let m = off.mean();
    let h = imm.pmf();
    let mut total = 0.0;
    let mut i = 0usize;
    loop {
        let l = match traj.log_values.get(i) {
            Some(&l) => l,
            None => base_log_phi(off, lambda / m.powi(i as i32)),
        };
        total += h.log_pgf_of_log(l);
        // 1 - h(e^l) <= -log h(e^l); both vanish together
        let gap = one_minus_pgf_of_log(h, l);
        i += 1;
        if gap < opts.tol {
            break;
        }
        if i as u32 > opts.depth_cap + traj.depth() {
            return Err(Error::DepthCap {
                needed: i as u32,
                cap: opts.depth_cap + traj.depth(),
            });
        }
    }
    Ok(CurlyEval {
        log_value: total,
        depth: traj.depth(),
        terms: i as u32,
    })
}

fn one_minus_pgf_of_log(pmf: &crate::Pmf, l: f64) -> f64 {
    -pmf.log_pgf_of_log(l).exp_m1()
}

pub fn phi_curly_w(
    off: &OffspringSpec,
    imm: &ImmigrationSpec,
    lambda: f64,
    tol: f64,
) -> Result<f64> {
    let opts = PhiOptions {
        tol,
        ..PhiOptions::default()
    };
    Ok(phi_curly_w_eval(off, imm, lambda, &opts)?.log_value)
}

/// `log E e^{-λ𝒲~} = log φ(λ) + log Φ(λ/m)`.
pub fn phi_tilde_w(
    off: &OffspringSpec,
    imm: &ImmigrationSpec,
    lambda: f64,
    opts: &PhiOptions,
) -> Result<f64> {
    let w = phi_w_trajectory(off, lambda, opts)?.log_phi();
    if imm.q0() == 1.0 {
        return Ok(w);
    }
    Ok(w + phi_curly_w_eval(off, imm, lambda / off.mean(), opts)?.log_value)
}

/// Which transform a curve holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    W,
    CurlyW,
    TildeW,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceCurve {
    pub transform: Transform,
    pub lambdas: Vec<f64>,
    pub log_values: Vec<f64>,
    pub depths: Vec<u32>,
    pub terms: Vec<u32>,
    pub options: PhiOptions,
}

/// `points` log-uniform values from `min` to `max` inclusive.
pub fn log_grid(min: f64, max: f64, points: usize) -> Result<Vec<f64>> {
    if !(min > 0.0 && max > min && points >= 2) {
        return Err(Error::Domain {
            name: "grid",
            value: min,
            reason: "need 0 < min < max and at least two points",
        });
    }
    let (a, b) = (min.ln(), max.ln());
    Ok((0..points)
        .map(|i| {
            if i + 1 == points {
                max
            } else {
                (a + (b - a) * i as f64 / (points - 1) as f64).exp()
            }
        })
        .collect())
}

pub fn laplace_curve(
    transform: Transform,
    off: &OffspringSpec,
    imm: Option<&ImmigrationSpec>,
    lambdas: &[f64],
    opts: &PhiOptions,
) -> Result<LaplaceCurve> {
    let need_imm = || {
        imm.ok_or_else(|| {
            Error::RegimeMismatch("this transform requires an immigration law".into())
        })
    };
    let mut curve = LaplaceCurve {
        transform,
        lambdas: lambdas.to_vec(),
        log_values: Vec::with_capacity(lambdas.len()),
        depths: Vec::with_capacity(lambdas.len()),
        terms: Vec::with_capacity(lambdas.len()),
        options: *opts,
    };
    for &lambda in lambdas {
        let (v, d, t) = match transform {
            Transform::W => {
                let tr = phi_w_trajectory(off, lambda, opts)?;
                (tr.log_phi(), tr.depth(), 0)
            }
            Transform::CurlyW => {
                let e = phi_curly_w_eval(off, need_imm()?, lambda, opts)?;
                (e.log_value, e.depth, e.terms)
            }
            Transform::TildeW => {
                let imm = need_imm()?;
                let tr = phi_w_trajectory(off, lambda, opts)?;
                if imm.q0() == 1.0 {
                    (tr.log_phi(), tr.depth(), 0)
                } else {
                    let e = phi_curly_w_eval(off, imm, lambda / off.mean(), opts)?;
                    (tr.log_phi() + e.log_value, tr.depth(), e.terms)
                }
            }
        };
        curve.log_values.push(v);
        curve.depths.push(d);
        curve.terms.push(t);
    }
    Ok(curve)
}

impl LaplaceCurve {
    /// CSV with columns `lambda,log_value,depth,terms` after `#` header lines.
    pub fn write_csv<W: Write>(&self, mut out: W, header: &[String]) -> io::Result<()> {
        for line in header {
            writeln!(out, "# {line}")?;
        }
        writeln!(
            out,
            "# base_lambda = {}, tolerance = {}",
            fmt17(self.options.base_lambda),
            fmt17(self.options.tol)
        )?;
        writeln!(out, "lambda,log_value,depth,terms")?;
        for i in 0..self.lambdas.len() {
            writeln!(
                out,
                "{},{},{},{}",
                fmt17(self.lambdas[i]),
                fmt17(self.log_values[i]),
                self.depths[i],
                self.terms[i]
            )?;
        }
        Ok(())
    }
}

/// Tail rate `log P(V <= t) <= -C t^{-α} |log t|^θ` and the matching
/// Laplace rate `log E e^{-λV} <= -C' λ^{α/(1+α)} (log λ)^{θ/(1+α)}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauberianRate {
    pub alpha: f64,
    pub theta: f64,
    pub lt_alpha: f64,
    pub lt_theta: f64,
}

fn admissible(alpha: f64, theta: f64) -> bool {
    alpha.is_finite() && theta.is_finite() && (alpha > 0.0 || (alpha == 0.0 && theta > 0.0))
}

pub fn tauberian_convert(alpha: f64, theta: f64) -> Result<TauberianRate> {
    if !admissible(alpha, theta) {
        return Err(Error::Domain {
            name: "alpha",
            value: alpha,
            reason: "need alpha > 0, or alpha = 0 with theta > 0",
        });
    }
    Ok(TauberianRate {
        alpha,
        theta,
        lt_alpha: alpha / (1.0 + alpha),
        lt_theta: theta / (1.0 + alpha),
    })
}

impl TauberianRate {
    /// Inverse of [`tauberian_convert`], from the Laplace-side exponents.
    pub fn from_laplace(lt_alpha: f64, lt_theta: f64) -> Result<TauberianRate> {
        if !(0.0..1.0).contains(&lt_alpha) {
            return Err(Error::Domain {
                name: "lt_alpha",
                value: lt_alpha,
                reason: "must lie in [0, 1)",
            });
        }
        let alpha = lt_alpha / (1.0 - lt_alpha);
        tauberian_convert(alpha, lt_theta * (1.0 + alpha))
    }
}

/// Result of a Laplace-curve regression.
///
/// * power: `exponent` is the slope of `log φ` against `log λ`,
///   `coefficient` the intercept;
/// * log-squared: `coefficient` is `c` in `log Φ ≈ -c (log λ)² + b log λ + a`,
///   `exponent` is `b`;
/// * stretched: `exponent` is the slope of `log(-log φ)` against `log λ`,
///   `coefficient` is `exp` of the intercept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LtFit {
    pub coefficient: f64,
    pub exponent: f64,
    pub r2: f64,
}

pub fn fit_lt_rate(curve: &LaplaceCurve, model: TailShape) -> Result<LtFit> {
    let (lo, hi) = curve
        .lambdas
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &l| {
            (lo.min(l), hi.max(l))
        });
    if curve.lambdas.len() < 3 || (hi / lo).log10() < 3.0 - 1e-9 {
        return Err(Error::InsufficientData(
            "Laplace curve must span at least three decades".into(),
        ));
    }
    if curve.log_values.iter().all(|&v| v == 0.0) {
        return Err(Error::InsufficientData(
            "Laplace curve is identically zero".into(),
        ));
    }
    let x: Vec<f64> = curve.lambdas.iter().map(|l| l.ln()).collect();
    match model {
        TailShape::Power => {
            let fit = polyfit(&x, &curve.log_values, 1)?;
            Ok(LtFit {
                coefficient: fit.coefficients[0],
                exponent: fit.coefficients[1],
                r2: fit.r2,
            })
        }
        TailShape::LogSquared => {
            let fit = polyfit(&x, &curve.log_values, 2)?;
            Ok(LtFit {
                coefficient: -fit.coefficients[2],
                exponent: fit.coefficients[1],
                r2: fit.r2,
            })
        }
        TailShape::Stretched => {
            if curve.log_values.iter().any(|&v| v >= 0.0) {
                return Err(Error::InsufficientData(
                    "stretched fit needs log values strictly below zero".into(),
                ));
            }
            let y: Vec<f64> = curve.log_values.iter().map(|v| (-v).ln()).collect();
            let fit = polyfit(&x, &y, 1)?;
            Ok(LtFit {
                coefficient: fit.coefficients[0].exp(),
                exponent: fit.coefficients[1],
                r2: fit.r2,
            })
        }
    }
}

/// Supremum over the grid of `log φ(λ) + (|log p1|/log m) log λ`, which
/// stays bounded when `p1 > 0`.
pub fn power_bound_sup(off: &OffspringSpec, lambdas: &[f64], opts: &PhiOptions) -> Result<f64> {
    if off.p1() == 0.0 {
        return Err(Error::RegimeMismatch("power bound needs p1 > 0".into()));
    }
    let alpha = off.p1().ln().abs() / off.mean().ln();
    let mut sup = f64::NEG_INFINITY;
    for &l in lambdas {
        let v = phi_w_trajectory(off, l, opts)?.log_phi() + alpha * l.ln();
        sup = sup.max(v);
    }
    Ok(sup)
}
