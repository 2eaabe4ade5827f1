//! Regime classification and closed-form small-value rates.

use std::fmt;

use crate::distributions::{extinction_root, harris_sevastyanov, ImmigrationSpec, OffspringSpec};
use crate::error::{Error, Result};

/// Which limit is being classified.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// `𝒲`, immigrant start.
    CurlyW,
    /// `𝒲~`, single ancestor plus immigration.
    TildeW,
    /// `W`, no immigration.
    WOnly,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::CurlyW => "curlyW",
            Variant::TildeW => "tildeW",
            Variant::WOnly => "W_only",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "curlyW" => Ok(Variant::CurlyW),
            "tildeW" => Ok(Variant::TildeW),
            "W_only" => Ok(Variant::WOnly),
            other => Err(Error::Parse {
                column: 1,
                message: format!("unknown variant '{other}'"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    CaseA,
    CaseB,
    CaseC,
    CaseD,
    DubucA,
    DubucB,
    Thm3A,
    Thm3B,
    Thm3C,
    Thm3D,
    /// `𝒲 = 0` almost surely (`q0 = 1`).
    Degenerate,
}

/// Shape of the left tail, which decides the regression model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailShape {
    /// `P(V <= eps) ≍ eps^a`
    Power,
    /// `log P(V <= eps) ~ -c |log eps|^2`
    LogSquared,
    /// `-log P(V <= eps) ≍ eps^(-beta/(1-beta))`
    Stretched,
}

impl Regime {
    pub fn label(&self) -> &'static str {
        match self {
            Regime::CaseA => "A",
            Regime::CaseB => "B",
            Regime::CaseC => "C",
            Regime::CaseD => "D",
            Regime::DubucA => "Dubuc-a",
            Regime::DubucB => "Dubuc-b",
            Regime::Thm3A => "Thm3-a",
            Regime::Thm3B => "Thm3-b",
            Regime::Thm3C => "Thm3-c",
            Regime::Thm3D => "Thm3-d",
            Regime::Degenerate => "Degenerate",
        }
    }

    pub fn shape(&self) -> Option<TailShape> {
        match self {
            Regime::CaseA | Regime::CaseD | Regime::DubucA | Regime::Thm3A | Regime::Thm3D => {
                Some(TailShape::Power)
            }
            Regime::CaseB | Regime::Thm3B => Some(TailShape::LogSquared),
            Regime::CaseC | Regime::DubucB | Regime::Thm3C => Some(TailShape::Stretched),
            Regime::Degenerate => None,
        }
    }
}

/// A rate `numerator / denominator` with both parts kept, so that identities
/// between rates can be checked on the numerators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratio {
    pub numerator: f64,
    pub denominator: f64,
}

impl Ratio {
    pub fn value(&self) -> f64 {
        self.numerator / self.denominator
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeReport {
    pub regime: Regime,
    pub variant: Variant,
    pub power_exponent: Option<Ratio>,
    pub logsq_coefficient: Option<Ratio>,
    pub beta: Option<Ratio>,
    pub rho: f64,
    pub h_rho: Option<f64>,
    pub tau: Option<f64>,
    pub warnings: Vec<String>,
}

impl RegimeReport {
    fn new(regime: Regime, variant: Variant, rho: f64) -> Self {
        RegimeReport {
            regime,
            variant,
            power_exponent: None,
            logsq_coefficient: None,
            beta: None,
            rho,
            h_rho: None,
            tau: None,
            warnings: Vec::new(),
        }
    }

    /// `beta / (1 - beta)`, the exponent of `eps` in `-log P(V <= eps)`.
    pub fn stretched_exponent(&self) -> Option<f64> {
        self.beta.map(|b| {
            let b = b.value();
            b / (1.0 - b)
        })
    }

    /// The rate a tail regression should recover: the power exponent, the
    /// log-squared coefficient, or the stretched exponent.
    pub fn tail_rate(&self) -> Option<f64> {
        match self.regime.shape()? {
            TailShape::Power => self.power_exponent.map(|r| r.value()),
            TailShape::LogSquared => self.logsq_coefficient.map(|r| r.value()),
            TailShape::Stretched => self.stretched_exponent(),
        }
    }

    /// The rate a Laplace-transform regression should recover. Equal to the
    /// tail rate except in the stretched case, where it is `beta`.
    pub fn laplace_rate(&self) -> Option<f64> {
        match self.regime.shape()? {
            TailShape::Stretched => self.beta.map(|b| b.value()),
            _ => self.tail_rate(),
        }
    }

    /// Flat `key = value` block, one entry per line.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        put("case", self.regime.label().to_string());
        put("variant", self.variant.to_string());
        if let Some(r) = self.power_exponent {
            put("power_exponent", fmt17(r.value()));
            put("power_exponent_numerator", fmt17(r.numerator));
            put("power_exponent_denominator", fmt17(r.denominator));
        }
        if let Some(r) = self.logsq_coefficient {
            put("logsq_coefficient", fmt17(r.value()));
            put("logsq_coefficient_numerator", fmt17(r.numerator));
            put("logsq_coefficient_denominator", fmt17(r.denominator));
        }
        if let Some(r) = self.beta {
            put("beta", fmt17(r.value()));
            put(
                "stretched_exponent",
                fmt17(self.stretched_exponent().unwrap()),
            );
        }
        put("rho", fmt17(self.rho));
        if let Some(h) = self.h_rho {
            put("h_rho", fmt17(h));
        }
        if let Some(t) = self.tau {
            put("tau", fmt17(t));
        }
        for w in &self.warnings {
            put("warning", w.clone());
        }
        out
    }
}

/// Formats with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn log_ratio(p: f64, m: f64) -> Ratio {
    Ratio {
        numerator: p.ln().abs(),
        denominator: m.ln(),
    }
}

/// Classifies `(off, imm)` for the chosen limit and fills in its predicted
/// small-value rate.
pub fn classify(
    off: &OffspringSpec,
    imm: Option<&ImmigrationSpec>,
    variant: Variant,
) -> Result<RegimeReport> {
    let m = off.mean();
    let rho = extinction_root(off);
    let mut warnings = Vec::new();
    if off.pmf().is_deterministic() {
        warnings.push("deterministic offspring law; rates are not predicted for it".to_string());
    }

    let imm = match (variant, imm) {
        (Variant::WOnly, _) => None,
        (_, Some(i)) => Some(i),
        (_, None) => {
            return Err(Error::RegimeMismatch(format!(
                "variant {variant} requires an immigration law"
            )))
        }
    };

    let mut report = match (variant, imm) {
        (Variant::WOnly, _) => classify_w(off, rho)?,
        (Variant::TildeW, Some(i)) if i.q0() == 1.0 => {
            let mut r = classify_w(off, rho)?;
            r.variant = Variant::TildeW;
            r.warnings
                .push("q0 = 1: no immigration, the single-ancestor limit is W".to_string());
            r
        }
        (Variant::CurlyW, Some(i)) => classify_curly(off, i, rho, m),
        (Variant::TildeW, Some(i)) => classify_tilde(off, i, rho, m),
        _ => unreachable!(),
    };
    if let Some(i) = imm {
        if i.pmf().is_deterministic() && i.q0() < 1.0 {
            warnings.push("deterministic immigration law".to_string());
        }
    }
    report.warnings.splice(0..0, warnings);
    Ok(report)
}

fn classify_w(off: &OffspringSpec, rho: f64) -> Result<RegimeReport> {
    let m = off.mean();
    if off.p0() > 0.0 {
        // rate of P(0 < W <= eps) after removing the atom at zero
        let hs = harris_sevastyanov(off)?;
        let mut r = RegimeReport::new(Regime::DubucA, Variant::WOnly, rho);
        r.power_exponent = Some(log_ratio(hs.p1_tilde, m));
        r.tau = Some(hs.tau);
        r.warnings.push(format!(
            "W has an atom of mass rho = {} at zero; the exponent describes P(0 < W <= eps)",
            fmt17(rho)
        ));
        return Ok(r);
    }
    if off.p1() > 0.0 {
        let mut r = RegimeReport::new(Regime::DubucA, Variant::WOnly, rho);
        r.power_exponent = Some(log_ratio(off.p1(), m));
        Ok(r)
    } else {
        let mut r = RegimeReport::new(Regime::DubucB, Variant::WOnly, rho);
        r.beta = Some(beta_ratio(off.gamma(), m));
        Ok(r)
    }
}

fn beta_ratio(gamma: u64, m: f64) -> Ratio {
    Ratio {
        numerator: (gamma as f64).ln(),
        denominator: m.ln(),
    }
}

fn logsq(k: u64, p1: f64, m: f64) -> Ratio {
    Ratio {
        numerator: k as f64 * p1.ln().abs(),
        denominator: 2.0 * m.ln() * m.ln(),
    }
}

fn with_extinction(
    mut r: RegimeReport,
    off: &OffspringSpec,
    imm: &ImmigrationSpec,
    m: f64,
) -> RegimeReport {
    let h = imm.pmf().pgf_unchecked(r.rho);
    r.h_rho = Some(h);
    r.power_exponent = Some(log_ratio(h, m));
    r.tau = harris_sevastyanov(off).ok().map(|hs| hs.tau);
    r
}

fn classify_curly(off: &OffspringSpec, imm: &ImmigrationSpec, rho: f64, m: f64) -> RegimeReport {
    let q0 = imm.q0();
    if q0 == 1.0 {
        let mut r = RegimeReport::new(Regime::Degenerate, Variant::CurlyW, rho);
        r.warnings
            .push("q0 = 1: the limit is identically zero".to_string());
        return r;
    }
    if off.p0() > 0.0 {
        return with_extinction(
            RegimeReport::new(Regime::CaseD, Variant::CurlyW, rho),
            off,
            imm,
            m,
        );
    }
    if q0 > 0.0 {
        let mut r = RegimeReport::new(Regime::CaseA, Variant::CurlyW, rho);
        r.power_exponent = Some(log_ratio(q0, m));
        return r;
    }
    if off.p1() > 0.0 {
        let mut r = RegimeReport::new(Regime::CaseB, Variant::CurlyW, rho);
        r.logsq_coefficient = Some(logsq(imm.k_min(), off.p1(), m));
        r
    } else {
        let mut r = RegimeReport::new(Regime::CaseC, Variant::CurlyW, rho);
        r.beta = Some(beta_ratio(off.gamma(), m));
        r
    }
}

fn classify_tilde(off: &OffspringSpec, imm: &ImmigrationSpec, rho: f64, m: f64) -> RegimeReport {
    let q0 = imm.q0();
    if off.p0() > 0.0 {
        return with_extinction(
            RegimeReport::new(Regime::Thm3D, Variant::TildeW, rho),
            off,
            imm,
            m,
        );
    }
    let p1 = off.p1();
    if p1 == 0.0 {
        let mut r = RegimeReport::new(Regime::Thm3C, Variant::TildeW, rho);
        r.beta = Some(beta_ratio(off.gamma(), m));
        return r;
    }
    if q0 > 0.0 {
        let mut r = RegimeReport::new(Regime::Thm3A, Variant::TildeW, rho);
        r.power_exponent = Some(Ratio {
            numerator: p1.ln().abs() + q0.ln().abs(),
            denominator: m.ln(),
        });
        r
    } else {
        let mut r = RegimeReport::new(Regime::Thm3B, Variant::TildeW, rho);
        r.logsq_coefficient = Some(logsq(imm.k_min(), p1, m));
        r
    }
}

/// Minimal population in the `p0 = q0 = 0` setting and the probability of
/// the unique path attaining it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimalTree {
    pub n: u32,
    /// `b(n) = K (gamma^(n+1) - 1) / (gamma - 1)`
    pub b_n: u128,
    /// `B(n) = b(0) + ... + b(n-1)`
    pub big_b_n: u128,
    pub log_prob: f64,
}

impl MinimalTree {
    pub fn prob(&self) -> f64 {
        self.log_prob.exp()
    }
}

pub fn minimal_tree(off: &OffspringSpec, imm: &ImmigrationSpec, n: u32) -> Result<MinimalTree> {
    if off.p0() > 0.0 || imm.q0() > 0.0 {
        return Err(Error::RegimeMismatch(
            "minimal tree needs p0 = 0 and q0 = 0".to_string(),
        ));
    }
    let gamma = off.gamma() as u128;
    let k = imm.k_min() as u128;
    let overflow = || Error::Numerical(format!("minimal tree sizes overflow at n = {n}"));
    let (b_n, big_b_n) = if gamma == 1 {
        let n = n as u128;
        (k * (n + 1), k * n * (n + 1) / 2)
    } else {
        let g_pow = gamma.checked_pow(n + 1).ok_or_else(overflow)?;
        let b = k.checked_mul(g_pow - 1).ok_or_else(overflow)? / (gamma - 1);
        let num = g_pow + n as u128 - (n as u128 + 1) * gamma;
        let big_b = k.checked_mul(num).ok_or_else(overflow)? / ((gamma - 1) * (gamma - 1));
        (b, big_b)
    };
    let log_prob = big_b_n as f64 * off.p_gamma().ln() + (n as f64 + 1.0) * imm.q_k().ln();
    Ok(MinimalTree {
        n,
        b_n,
        big_b_n,
        log_prob,
    })
}

/// `k = ceil(|log eps| / log m)`, or `ceil(|log eps| / log(m / gamma))` when
/// `gamma` is given, adjusted so that `r^k <= eps < r^(k-1)` holds in floating
/// point for `r = 1/m` (resp. `gamma/m`).
pub fn cutoff_index(epsilon: f64, m: f64, gamma: Option<u64>) -> Result<u32> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Domain {
            name: "epsilon",
            value: epsilon,
            reason: "must lie in (0, 1)",
        });
    }
    if !(m > 1.0 && m.is_finite()) {
        return Err(Error::Domain {
            name: "m",
            value: m,
            reason: "must exceed 1",
        });
    }
    let growth = match gamma {
        None => m,
        Some(g) if m > g as f64 => m / g as f64,
        Some(_) => {
            return Err(Error::Domain {
                name: "m",
                value: m,
                reason: "must exceed gamma in gamma mode",
            })
        }
    };
    let shrink = 1.0 / growth;
    let pow = |k: i64| shrink.powi(k as i32);
    let mut k = (epsilon.ln().abs() / growth.ln()).ceil() as i64;
    while pow(k) > epsilon {
        k += 1;
    }
    while k > 1 && pow(k - 1) <= epsilon {
        k -= 1;
    }
    Ok(k.max(1) as u32)
}

/// Smallest `l >= 0` with `sum_{i > l} P(log+ Y >= delta i) <= 1/2`.
pub fn truncation_level(imm: &ImmigrationSpec, delta: f64) -> Result<u32> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Domain {
            name: "delta",
            value: delta,
            reason: "must be positive",
        });
    }
    let atoms = imm.pmf().atoms().ok_or_else(|| {
        Error::InvalidDistribution("truncation level needs a finite-support law".into())
    })?;
    let log_max = (imm.pmf().max_support().unwrap().max(1) as f64).ln();
    let last = (log_max / delta).floor() as u32 + 1;
    // terms[i - 1] = P(log+ Y >= delta i), zero beyond `last`
    let terms: Vec<f64> = (1..=last)
        .map(|i| {
            atoms
                .iter()
                .filter(|(y, _)| (*y as f64).max(1.0).ln() >= delta * i as f64)
                .map(|(_, p)| p)
                .sum()
        })
        .collect();
    let mut tail = 0.0;
    let mut level = terms.len();
    for (idx, t) in terms.iter().enumerate().rev() {
        if tail + t > 0.5 {
            break;
        }
        tail += t;
        level = idx;
    }
    Ok(level as u32)
}
