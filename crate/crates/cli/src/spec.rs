//! Line-based experiment files: `key = value`, `#` starts a comment.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use branchtail::laplace::log_grid;
use branchtail::{DrawMode, Error, ImmigrationSpec, OffspringSpec, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pipeline {
    Classify,
    Tail,
    Laplace,
    Verify,
}

impl FromStr for Pipeline {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "classify" => Ok(Pipeline::Classify),
            "tail" => Ok(Pipeline::Tail),
            "laplace" => Ok(Pipeline::Laplace),
            "verify" => Ok(Pipeline::Verify),
            _ => Err(format!("unknown pipeline '{s}'")),
        }
    }
}

/// Checks a `verify` run can declare.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Check {
    /// Monte Carlo tail regression against the predicted rate.
    Tail,
    /// Laplace-transform regression against the predicted rate.
    Laplace,
    /// KS distance of sampled `W` to Exp(1).
    ExpKs,
    /// Frequency of `W = 0` against the extinction root.
    ZeroFraction,
    /// Exact small-horizon law against the minimal-tree formula.
    MinimalTree,
    /// Decomposition, single-ancestor and Harris–Sevastyanov identities in law.
    Identities,
    /// Functional-equation residual, bound stability and rate conversions.
    Functional,
}

impl FromStr for Check {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "tail" => Check::Tail,
            "laplace" => Check::Laplace,
            "exp_ks" => Check::ExpKs,
            "zero_fraction" => Check::ZeroFraction,
            "minimal_tree" => Check::MinimalTree,
            "identities" => Check::Identities,
            "functional" => Check::Functional,
            _ => return Err(format!("unknown check '{s}'")),
        })
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Check::Tail => "tail",
            Check::Laplace => "laplace",
            Check::ExpKs => "exp_ks",
            Check::ZeroFraction => "zero_fraction",
            Check::MinimalTree => "minimal_tree",
            Check::Identities => "identities",
            Check::Functional => "functional",
        })
    }
}

/// Log-spaced grid `min, max, points`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn values(&self) -> Vec<f64> {
        log_grid(self.min, self.max, self.points).expect("validated at parse time")
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub offspring: OffspringSpec,
    pub immigration: Option<ImmigrationSpec>,
    pub variant: Variant,
    pub pipeline: Pipeline,
    pub checks: Vec<Check>,
    pub epsilons: Option<GridSpec>,
    pub lambdas: Option<GridSpec>,
    pub replicates: usize,
    pub generations: u32,
    pub seed: u64,
    /// Relative tolerance on fitted rates.
    pub tolerance: f64,
    /// Absolute tolerance on KS distances and atom frequencies.
    pub abs_tolerance: f64,
    pub draw_mode: DrawMode,
    /// Extra random configurations for the minimal-tree check.
    pub random_configs: usize,
    /// Normalized `key = value` lines, echoed into artifact headers.
    pub echo: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecError {
    /// 1-based; 0 when the problem is a missing key.
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for SpecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "{}", self.message)
        } else {
            write!(
                f,
                "line {}, column {}: {}",
                self.line, self.column, self.message
            )
        }
    }
}

impl std::error::Error for SpecError {}

const KEYS: &[&str] = &[
    "offspring",
    "immigration",
    "variant",
    "pipeline",
    "checks",
    "epsilons",
    "lambdas",
    "replicates",
    "generations",
    "seed",
    "tolerance",
    "abs_tolerance",
    "draw_mode",
    "random_configs",
];

struct Entry<'a> {
    line: usize,
    value_col: usize,
    value: &'a str,
}

fn err(line: usize, column: usize, message: impl Into<String>) -> SpecError {
    SpecError {
        line,
        column,
        message: message.into(),
    }
}

fn literal_error(e: Error, entry: &Entry) -> SpecError {
    match e {
        Error::Parse { column, message } => err(entry.line, entry.value_col + column - 1, message),
        other => err(entry.line, entry.value_col, other.to_string()),
    }
}

fn scalar<T: FromStr>(entry: &Entry, what: &str) -> Result<T, SpecError> {
    entry.value.parse().map_err(|_| {
        err(
            entry.line,
            entry.value_col,
            format!("expected {what}, got '{}'", entry.value),
        )
    })
}

fn grid(entry: &Entry) -> Result<GridSpec, SpecError> {
    let parts: Vec<&str> = entry.value.split(',').map(str::trim).collect();
    let bad = |m: &str| err(entry.line, entry.value_col, m.to_string());
    if parts.len() != 3 {
        return Err(bad("expected 'min, max, points'"));
    }
    let min: f64 = parts[0].parse().map_err(|_| bad("bad grid minimum"))?;
    let max: f64 = parts[1].parse().map_err(|_| bad("bad grid maximum"))?;
    let points: usize = parts[2].parse().map_err(|_| bad("bad grid point count"))?;
    if !(min > 0.0 && max > min && max.is_finite() && points >= 2) {
        return Err(bad("grid needs 0 < min < max and at least 2 points"));
    }
    Ok(GridSpec { min, max, points })
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<ExperimentSpec, SpecError> {
        let mut entries: Vec<(&str, Entry)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap();
            if content.trim().is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(line, 1, "expected 'key = value'"))?;
            let key_col = key.len() - key.trim_start().len() + 1;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(err(line, key_col, format!("unknown key '{key}'")));
            }
            if entries.iter().any(|(k, _)| *k == key) {
                return Err(err(line, key_col, format!("duplicate key '{key}'")));
            }
            let after_eq = content.find('=').unwrap() + 1;
            let value_col = after_eq + (value.len() - value.trim_start().len()) + 1;
            let value = value.trim();
            if value.is_empty() {
                return Err(err(line, after_eq + 1, format!("empty value for '{key}'")));
            }
            entries.push((
                key,
                Entry {
                    line,
                    value_col,
                    value,
                },
            ));
        }
        let get = |k: &str| entries.iter().find(|(key, _)| *key == k).map(|(_, e)| e);

        let off_entry = get("offspring").ok_or_else(|| err(0, 0, "missing key 'offspring'"))?;
        let offspring: OffspringSpec = off_entry
            .value
            .parse()
            .map_err(|e| literal_error(e, off_entry))?;
        let immigration = match get("immigration") {
            None => None,
            Some(e) if e.value == "none" => None,
            Some(e) => Some(
                e.value
                    .parse::<ImmigrationSpec>()
                    .map_err(|x| literal_error(x, e))?,
            ),
        };
        let variant = match get("variant") {
            Some(e) => e.value.parse::<Variant>().map_err(|_| {
                err(
                    e.line,
                    e.value_col,
                    format!("unknown variant '{}'", e.value),
                )
            })?,
            None if immigration.is_some() => Variant::CurlyW,
            None => Variant::WOnly,
        };
        if variant != Variant::WOnly && immigration.is_none() {
            let line = get("variant").map_or(0, |e| e.line);
            return Err(err(
                line,
                1,
                format!("variant {variant} needs an immigration law"),
            ));
        }
        let pipeline = match get("pipeline") {
            Some(e) => e
                .value
                .parse()
                .map_err(|m: String| err(e.line, e.value_col, m))?,
            None => Pipeline::Classify,
        };
        let checks = match get("checks") {
            Some(e) => e
                .value
                .split(',')
                .map(|c| {
                    c.trim()
                        .parse()
                        .map_err(|m: String| err(e.line, e.value_col, m))
                })
                .collect::<Result<Vec<Check>, _>>()?,
            None => Vec::new(),
        };
        let epsilons = get("epsilons").map(grid).transpose()?;
        let lambdas = get("lambdas").map(grid).transpose()?;

        let draw_mode = match get("draw_mode").map(|e| (e, e.value)) {
            None | Some((_, "aggregate")) => DrawMode::Aggregate,
            Some((_, "individual")) => DrawMode::Individual,
            Some((e, v)) => {
                return Err(err(e.line, e.value_col, format!("unknown draw mode '{v}'")))
            }
        };

        let spec = ExperimentSpec {
            offspring,
            immigration,
            variant,
            pipeline,
            checks,
            epsilons,
            lambdas,
            replicates: get("replicates").map_or(Ok(100_000), |e| scalar(e, "an integer"))?,
            generations: get("generations").map_or(Ok(20), |e| scalar(e, "an integer"))?,
            seed: get("seed").map_or(Ok(0), |e| scalar(e, "an integer"))?,
            tolerance: get("tolerance").map_or(Ok(0.1), |e| scalar(e, "a number"))?,
            abs_tolerance: get("abs_tolerance").map_or(Ok(0.02), |e| scalar(e, "a number"))?,
            draw_mode,
            random_configs: get("random_configs").map_or(Ok(0), |e| scalar(e, "an integer"))?,
            echo: entries
                .iter()
                .map(|(k, e)| format!("{k} = {}", e.value))
                .collect(),
        };
        if spec.replicates == 0 || spec.generations == 0 {
            return Err(err(0, 0, "replicates and generations must be positive"));
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Checks run by the pipeline, in order.
    pub fn effective_checks(&self) -> Vec<Check> {
        match self.pipeline {
            Pipeline::Classify => Vec::new(),
            Pipeline::Tail => vec![Check::Tail],
            Pipeline::Laplace => vec![Check::Laplace],
            Pipeline::Verify if self.checks.is_empty() => {
                let mut c = Vec::new();
                if self.epsilons.is_some() {
                    c.push(Check::Tail);
                }
                if self.lambdas.is_some() {
                    c.push(Check::Laplace);
                }
                c
            }
            Pipeline::Verify => self.checks.clone(),
        }
    }

    /// Checks that the fields the selected checks need are present.
    pub fn validate(&self) -> Result<(), SpecError> {
        for c in self.effective_checks() {
            if matches!(c, Check::Tail) && self.epsilons.is_none() {
                return Err(err(
                    0,
                    0,
                    "the tail check needs 'epsilons = min, max, points'",
                ));
            }
            if matches!(c, Check::Laplace | Check::Functional) && self.lambdas.is_none() {
                return Err(err(
                    0,
                    0,
                    format!("the {c} check needs 'lambdas = min, max, points'"),
                ));
            }
            if matches!(c, Check::MinimalTree | Check::Identities) && self.immigration.is_none() {
                return Err(err(0, 0, format!("the {c} check needs an immigration law")));
            }
        }
        Ok(())
    }
}

/// Reads and parses a spec file, then applies command-line overrides.
pub fn load(
    path: &Path,
    seed: Option<u64>,
    replicates: Option<usize>,
) -> anyhow::Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        anyhow::Error::new(err(0, 0, format!("cannot read {}: {e}", path.display())))
    })?;
    let mut spec = ExperimentSpec::parse(&text)
        .map_err(|e| anyhow::Error::new(e).context(path.display().to_string()))?;
    if let Some(seed) = seed {
        spec.seed = seed;
        spec.echo.push(format!("--seed {seed}"));
    }
    if let Some(n) = replicates {
        if n == 0 {
            return Err(err(0, 0, "--replicates must be positive").into());
        }
        spec.replicates = n;
        spec.echo.push(format!("--replicates {n}"));
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_spec() {
        let s = ExperimentSpec::parse(
            "# case A\noffspring = {1:.5,2:.5}\nimmigration = {0:.5,1:.5}  # q0 = 1/2\n\
             pipeline = verify\nchecks = tail, functional\nepsilons = 0.02, 0.3, 12\n\
             lambdas = 1, 1e6, 13\nreplicates = 1000\nseed = 7\n",
        )
        .unwrap();
        assert_eq!(s.variant, Variant::CurlyW);
        assert_eq!(s.pipeline, Pipeline::Verify);
        assert_eq!(s.checks, vec![Check::Tail, Check::Functional]);
        assert_eq!(s.epsilons.unwrap().points, 12);
        assert_eq!(s.replicates, 1000);
        assert_eq!(s.seed, 7);
        assert_eq!(s.generations, 20);
        assert_eq!(s.echo[1], "immigration = {0:.5,1:.5}");
    }

    #[test]
    fn defaults() {
        let s = ExperimentSpec::parse("offspring = fl(m=2)\n").unwrap();
        assert_eq!(s.variant, Variant::WOnly);
        assert_eq!(s.pipeline, Pipeline::Classify);
        assert!(s.effective_checks().is_empty());
        let s = ExperimentSpec::parse("offspring = fl(m=2)\nimmigration = none\nvariant = W_only")
            .unwrap();
        assert!(s.immigration.is_none());
    }

    #[test]
    fn literal_errors_point_into_the_line() {
        let e = ExperimentSpec::parse("# x\noffspring = {0:0.25 2:0.75}\n").unwrap_err();
        assert_eq!(e.line, 2);
        // '{' sits at column 13, the bad mass starts at column 16
        assert_eq!(e.column, 16);
    }

    #[test]
    fn structural_errors() {
        let e = ExperimentSpec::parse("offspring = fl(m=2)\ncolour = red\n").unwrap_err();
        assert_eq!((e.line, e.column), (2, 1));
        assert!(ExperimentSpec::parse("offspring fl(m=2)").is_err());
        assert!(ExperimentSpec::parse("immigration = {1:1}").is_err());
        assert!(ExperimentSpec::parse("offspring = fl(m=2)\noffspring = fl(m=3)").is_err());
        assert!(ExperimentSpec::parse("offspring = fl(m=2)\nvariant = curlyW").is_err());
        assert!(ExperimentSpec::parse("offspring = fl(m=2)\npipeline = tail").is_err());
        assert!(ExperimentSpec::parse("offspring = fl(m=2)\nepsilons = 0.3, 0.02, 5").is_err());
        assert!(ExperimentSpec::parse("offspring = fl(m=2)\nreplicates = -1").is_err());
        assert!(ExperimentSpec::parse("offspring = {0:.5,1:.5}").is_err());
    }
}
