//! Offspring and immigration laws.
//!
//! A [`Pmf`] is either a finite-support table or the fractional-linear family
//! `p_k = (1/m)((m-1)/m)^(k-1)`, `k >= 1`, whose martingale limit is exactly
//! `Exp(1)`. Both have closed-form generating functions, moments and samplers.

use std::fmt;
use std::str::FromStr;

use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};

/// Largest value accepted as a key of a finite table.
pub const MAX_SUPPORT: u64 = 1 << 20;

const MASS_SUM_TOL: f64 = 1e-12;
const PRUNE_BELOW: f64 = 1e-15;

/// Probability mass function on the nonnegative integers.
#[derive(Debug, Clone, PartialEq)]
pub enum Pmf {
    /// `masses[k] = P(X = k)`; the last entry is positive.
    Finite { masses: Vec<f64> },
    /// Geometric law on `{1, 2, ...}` with mean `m`.
    FractionalLinear { m: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
}

impl Pmf {
    pub fn finite<I>(entries: I) -> Result<Pmf>
    where
        I: IntoIterator<Item = (u64, f64)>,
    {
        let mut masses: Vec<f64> = Vec::new();
        let mut seen: Vec<bool> = Vec::new();
        for (k, p) in entries {
            if k > MAX_SUPPORT {
                return Err(Error::InvalidDistribution(format!(
                    "value {k} exceeds the supported maximum {MAX_SUPPORT}"
                )));
            }
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidDistribution(format!(
                    "mass {p} at {k} is not in [0, 1]"
                )));
            }
            let k = k as usize;
            if masses.len() <= k {
                masses.resize(k + 1, 0.0);
                seen.resize(k + 1, false);
            }
            if seen[k] {
                return Err(Error::InvalidDistribution(format!("duplicate value {k}")));
            }
            seen[k] = true;
            masses[k] = p;
        }
        while masses.last() == Some(&0.0) {
            masses.pop();
        }
        if masses.is_empty() {
            return Err(Error::InvalidDistribution("no positive mass".into()));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_SUM_TOL {
            return Err(Error::InvalidDistribution(format!(
                "masses sum to {total}, not 1"
            )));
        }
        Ok(Pmf::Finite { masses })
    }

    pub fn point(k: u64) -> Result<Pmf> {
        Pmf::finite([(k, 1.0)])
    }

    pub fn fractional_linear(m: f64) -> Result<Pmf> {
        if !(m.is_finite() && m > 1.0) {
            return Err(Error::InvalidDistribution(format!(
                "fractional-linear law needs m > 1, got {m}"
            )));
        }
        Ok(Pmf::FractionalLinear { m })
    }

    pub fn mass(&self, k: u64) -> f64 {
        match self {
            Pmf::Finite { masses } => masses.get(k as usize).copied().unwrap_or(0.0),
            Pmf::FractionalLinear { m } => {
                if k == 0 {
                    0.0
                } else {
                    ((k - 1) as f64 * ((m - 1.0) / m).ln()).exp() / m
                }
            }
        }
    }

    /// Smallest value carrying positive mass.
    pub fn min_support(&self) -> u64 {
        match self {
            Pmf::Finite { masses } => masses.iter().position(|&p| p > 0.0).unwrap() as u64,
            Pmf::FractionalLinear { .. } => 1,
        }
    }

    /// Largest value carrying positive mass, `None` for infinite support.
    pub fn max_support(&self) -> Option<u64> {
        match self {
            Pmf::Finite { masses } => Some(masses.len() as u64 - 1),
            Pmf::FractionalLinear { .. } => None,
        }
    }

    /// `(value, mass)` pairs with positive mass; `None` for infinite support.
    pub fn atoms(&self) -> Option<Vec<(u64, f64)>> {
        match self {
            Pmf::Finite { masses } => Some(
                masses
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(k, &p)| (k as u64, p))
                    .collect(),
            ),
            Pmf::FractionalLinear { .. } => None,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        match self {
            Pmf::Finite { masses } => masses.contains(&1.0),
            Pmf::FractionalLinear { .. } => false,
        }
    }

    /// Generating function `E s^X` for `s` in `[0, 1]`.
    pub fn pgf(&self, s: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Domain {
                name: "s",
                value: s,
                reason: "generating function argument must lie in [0, 1]",
            });
        }
        Ok(self.pgf_unchecked(s))
    }

    pub(crate) fn pgf_unchecked(&self, s: f64) -> f64 {
        match self {
            Pmf::Finite { masses } => masses.iter().rev().fold(0.0, |acc, &p| acc * s + p),
            Pmf::FractionalLinear { m } => s / (m - (m - 1.0) * s),
        }
    }

    /// `f'(s)` on `[0, 1]`.
    pub fn pgf_derivative(&self, s: f64) -> f64 {
        match self {
            Pmf::Finite { masses } => masses
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, &p)| acc * s + k as f64 * p),
            Pmf::FractionalLinear { m } => {
                let d = m - (m - 1.0) * s;
                m / (d * d)
            }
        }
    }

    /// `log f(e^l)` for `l <= 0`, accurate both near `l = 0` and for very
    /// negative `l` where `f(e^l)` underflows.
    pub fn log_pgf_of_log(&self, l: f64) -> f64 {
        debug_assert!(l <= 0.0);
        match self {
            Pmf::FractionalLinear { m } => l - (-(m - 1.0) * l.exp_m1()).ln_1p(),
            Pmf::Finite { masses } => {
                if l > -1.0 {
                    // 1 - f(e^l) as a sum of positive terms
                    let gap: f64 = masses
                        .iter()
                        .enumerate()
                        .skip(1)
                        .map(|(k, &p)| p * -(k as f64 * l).exp_m1())
                        .sum();
                    (-gap).ln_1p()
                } else {
                    let lo = self.min_support() as usize;
                    let tail: f64 = masses[lo..]
                        .iter()
                        .enumerate()
                        .map(|(j, &p)| p * (j as f64 * l).exp())
                        .sum();
                    lo as f64 * l + tail.ln()
                }
            }
        }
    }

    pub fn moments(&self) -> Moments {
        match self {
            Pmf::Finite { masses } => {
                let (mut mean, mut second) = (0.0, 0.0);
                for (k, &p) in masses.iter().enumerate() {
                    let k = k as f64;
                    mean += k * p;
                    second += k * k * p;
                }
                Moments {
                    mean,
                    variance: (second - mean * mean).max(0.0),
                }
            }
            Pmf::FractionalLinear { m } => Moments {
                mean: *m,
                variance: m * (m - 1.0),
            },
        }
    }

    /// `E g(X)`. Infinite supports are summed until the remaining mass is
    /// below `1e-18`.
    pub fn expect<G: Fn(f64) -> f64>(&self, g: G) -> f64 {
        match self {
            Pmf::Finite { masses } => masses
                .iter()
                .enumerate()
                .map(|(k, &p)| if p > 0.0 { p * g(k as f64) } else { 0.0 })
                .sum(),
            Pmf::FractionalLinear { m } => {
                let ratio = (m - 1.0) / m;
                let mut p = 1.0 / m;
                let mut remaining = 1.0;
                let mut total = 0.0;
                let mut k = 1.0;
                while remaining > 1e-18 && p > 0.0 {
                    total += p * g(k);
                    remaining -= p;
                    p *= ratio;
                    k += 1.0;
                }
                total
            }
        }
    }
}

impl fmt::Display for Pmf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pmf::FractionalLinear { m } => write!(f, "fl(m={m})"),
            Pmf::Finite { .. } => {
                f.write_str("{")?;
                for (i, (k, p)) in self.atoms().unwrap().into_iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{k}:{p}")?;
                }
                f.write_str("}")
            }
        }
    }
}

impl FromStr for Pmf {
    type Err = Error;

    /// Parses `{k:mass, k:mass, ...}` or `fl(m=2.0)`. Columns in errors are
    /// 1-based offsets into `s`.
    fn from_str(s: &str) -> Result<Pmf> {
        parse_literal(s)
    }
}

fn parse_err(column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        column,
        message: message.into(),
    }
}

fn parse_literal(src: &str) -> Result<Pmf> {
    let lead = src.len() - src.trim_start().len();
    let body = src.trim();
    if let Some(rest) = body.strip_prefix("fl(") {
        let inner = rest
            .strip_suffix(')')
            .ok_or_else(|| parse_err(lead + body.len(), "expected ')'"))?;
        let value = inner
            .trim()
            .strip_prefix("m")
            .map(str::trim_start)
            .and_then(|v| v.strip_prefix('='))
            .ok_or_else(|| parse_err(lead + 4, "expected 'm='"))?;
        let m: f64 = value
            .trim()
            .parse()
            .map_err(|_| parse_err(lead + 4, format!("bad number '{}'", value.trim())))?;
        return Pmf::fractional_linear(m);
    }

    let bytes = body.as_bytes();
    if bytes.first() != Some(&b'{') {
        return Err(parse_err(lead + 1, "expected '{' or 'fl('"));
    }
    if bytes.last() != Some(&b'}') {
        return Err(parse_err(lead + body.len(), "expected '}'"));
    }
    let inner = &body[1..body.len() - 1];
    let mut entries = Vec::new();
    let mut offset = lead + 2;
    if !inner.trim().is_empty() {
        for item in inner.split(',') {
            let col = offset + (item.len() - item.trim_start().len());
            let (k, p) = item.split_once(':').ok_or_else(|| {
                parse_err(col, format!("expected 'k:mass', got '{}'", item.trim()))
            })?;
            let key: u64 = k
                .trim()
                .parse()
                .map_err(|_| parse_err(col, format!("bad integer key '{}'", k.trim())))?;
            let pcol = offset + k.len() + 1;
            let p_trim = p.trim();
            if p_trim.contains(char::is_whitespace) {
                return Err(parse_err(
                    pcol,
                    format!("expected ',' between entries in '{p_trim}'"),
                ));
            }
            let mass: f64 = p_trim
                .parse()
                .map_err(|_| parse_err(pcol, format!("bad mass '{p_trim}'")))?;
            entries.push((key, mass));
            offset += item.len() + 1;
        }
    }
    Pmf::finite(entries)
}

fn check_supercritical(pmf: &Pmf) -> Result<f64> {
    let mean = pmf.moments().mean;
    if mean > 1.0 {
        Ok(mean)
    } else {
        Err(Error::NotSupercritical { mean })
    }
}

/// Supercritical offspring law with its derived constants.
#[derive(Debug, Clone, PartialEq)]
pub struct OffspringSpec {
    pmf: Pmf,
    mean: f64,
    variance: f64,
    gamma: u64,
    p0: f64,
    p1: f64,
}

impl OffspringSpec {
    pub fn new(pmf: Pmf) -> Result<Self> {
        let mean = check_supercritical(&pmf)?;
        let variance = pmf.moments().variance;
        Ok(OffspringSpec {
            gamma: pmf.min_support(),
            p0: pmf.mass(0),
            p1: pmf.mass(1),
            mean,
            variance,
            pmf,
        })
    }

    pub fn pmf(&self) -> &Pmf {
        &self.pmf
    }
    pub fn mean(&self) -> f64 {
        self.mean
    }
    pub fn variance(&self) -> f64 {
        self.variance
    }
    pub fn gamma(&self) -> u64 {
        self.gamma
    }
    pub fn p0(&self) -> f64 {
        self.p0
    }
    pub fn p1(&self) -> f64 {
        self.p1
    }

    /// Mass at the minimal support point.
    pub fn p_gamma(&self) -> f64 {
        self.pmf.mass(self.gamma)
    }

    /// `E W^2 = 1 + sigma^2 / (m^2 - m)`.
    pub fn w_second_moment(&self) -> f64 {
        1.0 + self.variance / (self.mean * self.mean - self.mean)
    }

    pub fn w_variance(&self) -> f64 {
        self.variance / (self.mean * self.mean - self.mean)
    }
}

impl FromStr for OffspringSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        OffspringSpec::new(s.parse()?)
    }
}

/// Immigration law with its derived constants.
#[derive(Debug, Clone, PartialEq)]
pub struct ImmigrationSpec {
    pmf: Pmf,
    k_min: u64,
    q0: f64,
    mean: f64,
}

impl ImmigrationSpec {
    pub fn new(pmf: Pmf) -> Self {
        ImmigrationSpec {
            k_min: pmf.min_support(),
            q0: pmf.mass(0),
            mean: pmf.moments().mean,
            pmf,
        }
    }

    /// No immigration at all, `Y = 0`.
    pub fn none() -> Self {
        ImmigrationSpec::new(Pmf::point(0).unwrap())
    }

    pub fn pmf(&self) -> &Pmf {
        &self.pmf
    }
    /// `K`, the smallest immigration count with positive mass.
    pub fn k_min(&self) -> u64 {
        self.k_min
    }
    pub fn q0(&self) -> f64 {
        self.q0
    }
    pub fn q_k(&self) -> f64 {
        self.pmf.mass(self.k_min)
    }
    pub fn mean(&self) -> f64 {
        self.mean
    }
}

impl FromStr for ImmigrationSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(ImmigrationSpec::new(s.parse()?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogMomentReport {
    /// `E[X log+ X]`
    pub x_log_x: f64,
    /// `E[log+ Y]`
    pub log_y: f64,
}

fn log_plus(x: f64) -> f64 {
    x.max(1.0).ln()
}

/// Checks supercriticality and the two logarithmic moment conditions that
/// make `Z_n / m^n` converge to a finite nondegenerate limit.
pub fn validate_log_moments(offspring: &Pmf, immigration: &Pmf) -> Result<LogMomentReport> {
    check_supercritical(offspring)?;
    let x_log_x = offspring.expect(|x| x * log_plus(x));
    let log_y = immigration.expect(log_plus);
    if !x_log_x.is_finite() || !log_y.is_finite() {
        return Err(Error::InvalidDistribution(format!(
            "logarithmic moments are not finite: E[X log+ X] = {x_log_x}, E[log+ Y] = {log_y}"
        )));
    }
    Ok(LogMomentReport { x_log_x, log_y })
}

/// Extinction probability: the root of `f(s) = s` in `[0, 1)`.
pub fn extinction_root(off: &OffspringSpec) -> f64 {
    if off.p0() == 0.0 {
        return 0.0;
    }
    let f = |s: f64| off.pmf().pgf_unchecked(s);
    // f(s) - s changes sign exactly once on (0, 1) for convex supercritical f
    let mut hi = 0.5;
    let mut step = 0.5;
    while f(hi) >= hi {
        step *= 0.5;
        hi = 1.0 - step;
        if step < f64::EPSILON {
            break;
        }
    }
    let mut lo = 0.0;
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > mid {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (f(lo) - lo).abs() <= (f(hi) - hi).abs() {
        lo
    } else {
        hi
    }
}

/// Result of conjugating `f` by its extinction root.
#[derive(Debug, Clone, PartialEq)]
pub struct HsTransform {
    pub rho: f64,
    pub transformed: OffspringSpec,
    /// `f'(rho)`, the mass at one of the transformed law.
    pub p1_tilde: f64,
    /// `|log p1_tilde| / log m`
    pub tau: f64,
    /// Value of `W_0` on non-extinction, `1 / (1 - rho)`.
    pub w0_atom: f64,
}

/// Harris–Sevastyanov transform `f~(s) = (f((1-rho)s + rho) - rho) / (1 - rho)`.
///
/// The transformed law has no mass at zero, the same mean, and
/// `W = W_0 * W~` in distribution with `P(W_0 = 1/(1-rho)) = 1 - rho`.
pub fn harris_sevastyanov(off: &OffspringSpec) -> Result<HsTransform> {
    let m = off.mean();
    let rho = extinction_root(off);
    if rho == 0.0 {
        let p1 = off.p1();
        return Ok(HsTransform {
            rho,
            transformed: off.clone(),
            p1_tilde: p1,
            tau: p1.ln().abs() / m.ln(),
            w0_atom: 1.0,
        });
    }
    let atoms = off.pmf().atoms().ok_or_else(|| {
        Error::InvalidDistribution("transform requires a finite-support law".into())
    })?;
    let keep = 1.0 - rho;
    let top = off.pmf().max_support().unwrap() as usize;
    let mut coef = vec![0.0; top + 1];
    let (ln_keep, ln_rho) = (keep.ln(), rho.ln());
    for &(k, p) in &atoms {
        for j in 0..=k {
            let ln_term = ln_binomial(k, j) + j as f64 * ln_keep + (k - j) as f64 * ln_rho;
            coef[j as usize] += p * ln_term.exp();
        }
    }
    let mut masses: Vec<f64> = coef.iter().map(|c| c / keep).collect();
    masses[0] = 0.0;
    for p in masses.iter_mut() {
        if *p < PRUNE_BELOW {
            *p = 0.0;
        }
    }
    let total: f64 = masses.iter().sum();
    let pmf = Pmf::finite(
        masses
            .iter()
            .enumerate()
            .map(|(k, &p)| (k as u64, p / total)),
    )?;
    let transformed = OffspringSpec::new(pmf)?;
    let p1_tilde = off.pmf().pgf_derivative(rho);
    Ok(HsTransform {
        rho,
        transformed,
        p1_tilde,
        tau: p1_tilde.ln().abs() / m.ln(),
        w0_atom: 1.0 / keep,
    })
}
