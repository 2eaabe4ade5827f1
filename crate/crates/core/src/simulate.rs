//! Reproducible sampling of population paths and martingale limits.
//!
//! Three processes are covered: plain Galton–Watson paths `Z_n`, paths with
//! immigration `𝒵_n` started from an immigrant batch `Y_0`, and paths with
//! immigration started from a single ancestor. Their normalized sizes
//! `count_n / m^n` approximate the limits `W`, `𝒲` and `𝒲~`.

use std::io::{self, BufRead, Write};

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Geometric, Poisson};

use crate::distributions::{ImmigrationSpec, OffspringSpec, Pmf};
use crate::error::{Error, Result};
use crate::parallel::{map_replicates, Execution, StreamRng};

pub const DEFAULT_GENERATIONS: u32 = 20;
pub const DEFAULT_POPULATION_CAP: u64 = 100_000_000;

/// How the offspring of a whole generation are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DrawMode {
    /// One draw per individual.
    Individual,
    /// One multinomial split (finite support) or negative-binomial draw
    /// (fractional-linear) per generation. Same law as `Individual`.
    #[default]
    Aggregate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub generations: u32,
    pub replicates: usize,
    pub master_seed: u64,
    pub population_cap: u64,
    pub draw_mode: DrawMode,
    pub execution: Execution,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            generations: DEFAULT_GENERATIONS,
            replicates: 1,
            master_seed: 0,
            population_cap: DEFAULT_POPULATION_CAP,
            draw_mode: DrawMode::default(),
            execution: Execution::default(),
        }
    }
}

impl SimConfig {
    pub fn new(generations: u32, replicates: usize, master_seed: u64) -> Result<Self> {
        if generations == 0 {
            return Err(Error::Domain {
                name: "generations",
                value: 0.0,
                reason: "at least one generation is required",
            });
        }
        if replicates == 0 {
            return Err(Error::Domain {
                name: "replicates",
                value: 0.0,
                reason: "at least one replicate is required",
            });
        }
        Ok(SimConfig {
            generations,
            replicates,
            master_seed,
            ..SimConfig::default()
        })
    }

    pub fn with_draw_mode(mut self, draw_mode: DrawMode) -> Self {
        self.draw_mode = draw_mode;
        self
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn with_population_cap(mut self, cap: u64) -> Self {
        self.population_cap = cap;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub counts: Vec<u64>,
    pub normalized_limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartMode {
    /// `𝒵_0 = Y_0`
    ImmigrantStart,
    /// `𝒵~_0 = 1`
    SingleAncestor,
}

/// Compiled sampler for one law.
#[derive(Debug, Clone)]
enum Sampler {
    Point(u64),
    Finite {
        values: Vec<u64>,
        cdf: Vec<f64>,
        /// `p_i / sum_{j >= i} p_j`, for sequential binomial splitting.
        split: Vec<f64>,
    },
    FractionalLinear {
        geometric: Geometric,
        /// scale of the gamma mixing law, `m - 1`
        scale: f64,
    },
}

impl Sampler {
    fn new(pmf: &Pmf) -> Sampler {
        match pmf {
            Pmf::FractionalLinear { m } => Sampler::FractionalLinear {
                geometric: Geometric::new(1.0 / m).expect("m > 1"),
                scale: m - 1.0,
            },
            Pmf::Finite { .. } => {
                let atoms = pmf.atoms().unwrap();
                if atoms.len() == 1 {
                    return Sampler::Point(atoms[0].0);
                }
                let values = atoms.iter().map(|a| a.0).collect();
                let mut acc = 0.0;
                let mut cdf: Vec<f64> = atoms
                    .iter()
                    .map(|a| {
                        acc += a.1;
                        acc
                    })
                    .collect();
                *cdf.last_mut().unwrap() = 1.0;
                let mut split = vec![0.0; atoms.len()];
                let mut rest = 0.0;
                for (i, a) in atoms.iter().enumerate().rev() {
                    rest += a.1;
                    split[i] = (a.1 / rest).min(1.0);
                }
                Sampler::Finite { values, cdf, split }
            }
        }
    }

    fn draw_one(&self, rng: &mut StreamRng) -> u64 {
        match self {
            Sampler::Point(k) => *k,
            Sampler::Finite { values, cdf, .. } => {
                let u: f64 = rng.random();
                let i = cdf.partition_point(|&c| c <= u).min(values.len() - 1);
                values[i]
            }
            Sampler::FractionalLinear { geometric, .. } => 1 + geometric.sample(rng),
        }
    }

    /// Sum of `z` independent draws.
    fn draw_sum(&self, z: u64, mode: DrawMode, rng: &mut StreamRng) -> u64 {
        if z == 0 {
            return 0;
        }
        if let Sampler::Point(k) = self {
            return k * z;
        }
        match mode {
            DrawMode::Individual => (0..z).map(|_| self.draw_one(rng)).sum(),
            DrawMode::Aggregate => match self {
                Sampler::Finite { values, split, .. } => {
                    let mut left = z;
                    let mut total = 0;
                    for (i, (&v, &p)) in values.iter().zip(split).enumerate() {
                        if left == 0 {
                            break;
                        }
                        let n = if i + 1 == values.len() || p >= 1.0 {
                            left
                        } else {
                            Binomial::new(left, p).expect("p in [0, 1]").sample(rng)
                        };
                        total += v * n;
                        left -= n;
                    }
                    total
                }
                Sampler::FractionalLinear { scale, .. } => {
                    // negative binomial as a gamma-mixed Poisson
                    let rate = Gamma::new(z as f64, *scale).expect("z > 0").sample(rng);
                    let extra = if rate > 0.0 {
                        Poisson::new(rate).expect("finite rate").sample(rng) as u64
                    } else {
                        0
                    };
                    z + extra
                }
                Sampler::Point(_) => unreachable!(),
            },
        }
    }
}

/// Offspring and immigration samplers for one model.
struct Model {
    offspring: Sampler,
    immigration: Option<Sampler>,
    mean: f64,
}

impl Model {
    fn new(off: &OffspringSpec, imm: Option<&ImmigrationSpec>) -> Model {
        Model {
            offspring: Sampler::new(off.pmf()),
            immigration: imm.map(|i| Sampler::new(i.pmf())),
            mean: off.mean(),
        }
    }

    fn path(
        &self,
        start: u64,
        with_immigration: bool,
        cfg: &SimConfig,
        rng: &mut StreamRng,
    ) -> Result<PathSample> {
        let n = cfg.generations as usize;
        let mut counts = Vec::with_capacity(n + 1);
        counts.push(start);
        let mut z = start;
        for _ in 0..n {
            let mut next = self.offspring.draw_sum(z, cfg.draw_mode, rng);
            if with_immigration {
                if let Some(imm) = &self.immigration {
                    next += imm.draw_one(rng);
                }
            }
            if next > cfg.population_cap {
                counts.push(next);
                let normalized_limit = next as f64 / self.mean.powi(counts.len() as i32 - 1);
                return Err(Error::PopulationCap {
                    cap: cfg.population_cap,
                    partial: Box::new(PathSample {
                        counts,
                        normalized_limit,
                    }),
                });
            }
            counts.push(next);
            z = next;
        }
        Ok(PathSample {
            normalized_limit: z as f64 / self.mean.powi(n as i32),
            counts,
        })
    }

    fn gwi_path(
        &self,
        mode: StartMode,
        cfg: &SimConfig,
        rng: &mut StreamRng,
    ) -> Result<PathSample> {
        let start = match mode {
            StartMode::SingleAncestor => 1,
            StartMode::ImmigrantStart => self.immigration.as_ref().map_or(0, |i| i.draw_one(rng)),
        };
        self.path(start, true, cfg, rng)
    }

    /// `sum_{j <= count} W^j` approximated by one path from `count` ancestors.
    fn w_sum(&self, count: u64, cfg: &SimConfig, rng: &mut StreamRng) -> Result<f64> {
        if count == 0 {
            return Ok(0.0);
        }
        Ok(self.path(count, false, cfg, rng)?.normalized_limit)
    }
}

/// One Galton–Watson path from `start` ancestors, on replicate stream 0.
pub fn simulate_gw(off: &OffspringSpec, cfg: &SimConfig, start: u64) -> Result<PathSample> {
    let model = Model::new(off, None);
    let mut rng = crate::parallel::stream_rng(cfg.master_seed, 0);
    model.path(start, false, cfg, &mut rng)
}

/// One path with immigration, on replicate stream 0.
pub fn simulate_gwi(
    off: &OffspringSpec,
    imm: &ImmigrationSpec,
    cfg: &SimConfig,
    start_mode: StartMode,
) -> Result<PathSample> {
    let model = Model::new(off, Some(imm));
    let mut rng = crate::parallel::stream_rng(cfg.master_seed, 0);
    model.gwi_path(start_mode, cfg, &mut rng)
}

/// `cfg.replicates` normalized sizes `Z_n / m^n` of independent paths.
pub fn sample_w(off: &OffspringSpec, cfg: &SimConfig) -> Result<Vec<f64>> {
    let model = Model::new(off, None);
    map_replicates(cfg.replicates, cfg.master_seed, cfg.execution, |_, rng| {
        model.w_sum(1, cfg, rng)
    })
}

/// `cfg.replicates` normalized sizes of independent paths with immigration;
/// approximates `𝒲` (immigrant start) or `𝒲~` (single ancestor).
pub fn sample_gwi_limits(
    off: &OffspringSpec,
    imm: &ImmigrationSpec,
    cfg: &SimConfig,
    start_mode: StartMode,
) -> Result<Vec<f64>> {
    let model = Model::new(off, Some(imm));
    map_replicates(cfg.replicates, cfg.master_seed, cfg.execution, |_, rng| {
        Ok(model.gwi_path(start_mode, cfg, rng)?.normalized_limit)
    })
}

/// Number of immigration levels after which the expected remainder
/// `m^-L E[Y] / (1 - 1/m)` drops below `1e-4`.
pub fn default_levels(m: f64, mean_y: f64) -> u32 {
    let scale = mean_y / (1.0 - 1.0 / m);
    if scale <= 1e-4 {
        return 0;
    }
    let mut levels = ((scale / 1e-4).ln() / m.ln()).ceil().max(0.0) as u32;
    while m.powi(-(levels as i32)) * scale >= 1e-4 {
        levels += 1;
    }
    levels
}

/// Samples of `𝒲` built from the series `sum_{l <= L} m^-l sum_{j <= Y_l} W_l^j`
/// with independent `Y_l` and independent `W` approximants.
pub fn sample_curly_w_decomposition(
    off: &OffspringSpec,
    imm: &ImmigrationSpec,
    cfg: &SimConfig,
    levels: Option<u32>,
) -> Result<Vec<f64>> {
    let model = Model::new(off, Some(imm));
    let m = off.mean();
    let levels = levels.unwrap_or_else(|| default_levels(m, imm.mean()));
    let immigration = model.immigration.as_ref().unwrap();
    map_replicates(cfg.replicates, cfg.master_seed, cfg.execution, |_, rng| {
        let mut total = 0.0;
        for l in 0..=levels {
            let y = immigration.draw_one(rng);
            total += m.powi(-(l as i32)) * model.w_sum(y, cfg, rng)?;
        }
        Ok(total)
    })
}

/// Samples of `W + 𝒲/m` with independent summands.
pub fn sample_tilde_w(
    off: &OffspringSpec,
    imm: &ImmigrationSpec,
    cfg: &SimConfig,
) -> Result<Vec<f64>> {
    let model = Model::new(off, Some(imm));
    let m = off.mean();
    map_replicates(cfg.replicates, cfg.master_seed, cfg.execution, |_, rng| {
        let w = model.w_sum(1, cfg, rng)?;
        let curly = model
            .gwi_path(StartMode::ImmigrantStart, cfg, rng)?
            .normalized_limit;
        Ok(w + curly / m)
    })
}

/// Writes one value per line after `#`-prefixed header lines.
pub fn write_samples<W: Write>(mut out: W, header: &[String], samples: &[f64]) -> io::Result<()> {
    for line in header {
        writeln!(out, "# {line}")?;
    }
    for x in samples {
        writeln!(out, "{x:.16e}")?;
    }
    Ok(())
}

pub fn read_samples<R: BufRead>(input: R) -> io::Result<Vec<f64>> {
    let mut samples = Vec::new();
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let x = line
            .parse()
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{line}: {e}")))?;
        samples.push(x);
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parallel::stream_rng;

    fn off(s: &str) -> OffspringSpec {
        s.parse().unwrap()
    }
    fn imm(s: &str) -> ImmigrationSpec {
        s.parse().unwrap()
    }
    fn cfg(n: u32, reps: usize) -> SimConfig {
        SimConfig::new(n, reps, 2024).unwrap()
    }
    fn mean(xs: &[f64]) -> f64 {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
    fn var(xs: &[f64]) -> f64 {
        let mu = mean(xs);
        xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::new(0, 1, 0).is_err());
        assert!(SimConfig::new(1, 0, 0).is_err());
    }

    #[test]
    fn deterministic_paths() {
        let p = simulate_gw(&off("{2:1.0}"), &cfg(5, 1), 1).unwrap();
        assert_eq!(p.counts, vec![1, 2, 4, 8, 16, 32]);
        assert_eq!(p.normalized_limit, 1.0);

        let o = off("{1:0.5, 2:0.5}");
        let p = simulate_gwi(&o, &imm("{1:1.0}"), &cfg(4, 1), StartMode::ImmigrantStart).unwrap();
        assert_eq!(p.counts[0], 1);

        let p = simulate_gwi(
            &off("{2:1.0}"),
            &imm("{0:1.0}"),
            &cfg(3, 1),
            StartMode::SingleAncestor,
        )
        .unwrap();
        assert_eq!(p.counts, vec![1, 2, 4, 8]);
    }

    #[test]
    fn identity_offspring_paths() {
        // {1:1} is not supercritical, so drive the sampler directly
        let model = Model {
            offspring: Sampler::new(&Pmf::point(1).unwrap()),
            immigration: Some(Sampler::new(&Pmf::point(1).unwrap())),
            mean: 1.0,
        };
        let mut rng = stream_rng(0, 0);
        let p = model.path(3, false, &cfg(4, 1), &mut rng).unwrap();
        assert_eq!(p.counts, vec![3; 5]);
        assert_eq!(p.normalized_limit, 3.0);
        let p = model
            .gwi_path(StartMode::ImmigrantStart, &cfg(4, 1), &mut rng)
            .unwrap();
        assert_eq!(p.counts, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn population_cap_reports_partial_path() {
        let c = cfg(10, 1).with_population_cap(100);
        match simulate_gw(&off("{2:1}"), &c, 1) {
            Err(Error::PopulationCap { cap, partial }) => {
                assert_eq!(cap, 100);
                assert_eq!(partial.counts, vec![1, 2, 4, 8, 16, 32, 64, 128]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn minimal_branching_lower_bound() {
        let o = off("{2:.5,3:.5}");
        for mode in [DrawMode::Individual, DrawMode::Aggregate] {
            let c = cfg(8, 1).with_draw_mode(mode);
            let p = simulate_gw(&o, &c, 3).unwrap();
            for (i, &z) in p.counts.iter().enumerate() {
                assert!(z >= 3 * 2u64.pow(i as u32));
            }
        }
    }

    #[test]
    fn fractional_linear_mean_is_one() {
        let xs = sample_w(&off("fl(m=2)"), &cfg(20, 100_000)).unwrap();
        assert!((mean(&xs) - 1.0).abs() < 0.02, "{}", mean(&xs));
    }

    #[test]
    fn deterministic_w() {
        let xs = sample_w(&off("{2:1}"), &cfg(10, 100)).unwrap();
        assert!(xs.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn extinction_fraction_is_rho() {
        let xs = sample_w(&off("{0:.25,2:.75}"), &cfg(25, 100_000)).unwrap();
        let zeros = xs.iter().filter(|&&x| x == 0.0).count() as f64 / xs.len() as f64;
        assert!((zeros - 1.0 / 3.0).abs() < 0.01, "{zeros}");
    }

    #[test]
    fn immigration_mean_matches_geometric_series() {
        let o = off("{1:.5,2:.5}");
        let i = imm("{1:1}");
        let xs = sample_gwi_limits(&o, &i, &cfg(25, 100_000), StartMode::ImmigrantStart).unwrap();
        assert!((mean(&xs) - 3.0).abs() < 0.1, "{}", mean(&xs));
        let ys = sample_curly_w_decomposition(&o, &i, &cfg(25, 100_000), Some(30)).unwrap();
        assert!((mean(&ys) - 3.0).abs() < 0.1, "{}", mean(&ys));
    }

    #[test]
    fn no_immigration_gives_zero() {
        let xs = sample_curly_w_decomposition(
            &off("{1:.5,2:.5}"),
            &ImmigrationSpec::none(),
            &cfg(10, 100),
            None,
        )
        .unwrap();
        assert!(xs.iter().all(|&x| x == 0.0));
        let t = sample_tilde_w(&off("{2:1}"), &imm("{0:1}"), &cfg(10, 100)).unwrap();
        assert!(t.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn tilde_w_without_immigration_is_w() {
        let o = off("{1:.5,2:.5}");
        let c = cfg(20, 1000);
        let t = sample_tilde_w(&o, &ImmigrationSpec::none(), &c).unwrap();
        let w = sample_w(&o, &c).unwrap();
        // same stream, same first draws
        assert_eq!(t, w);
    }

    #[test]
    fn levels_default() {
        let l = default_levels(1.5, 1.0);
        assert!(1.5f64.powi(-(l as i32)) * 3.0 < 1e-4);
        assert!(1.5f64.powi(-(l as i32 - 1)) * 3.0 >= 1e-4);
        assert_eq!(default_levels(2.0, 0.0), 0);
    }

    #[test]
    fn martingale_mean_at_finite_depth() {
        let o = off("{0:.25,2:.75}");
        for n in [5u32, 10, 15] {
            let xs = sample_w(&o, &cfg(n, 20_000)).unwrap();
            let se = (var(&xs) / xs.len() as f64).sqrt();
            assert!((mean(&xs) - 1.0).abs() < 3.0 * se, "n = {n}");
        }
    }

    #[test]
    fn truncation_variance_grows_towards_limit() {
        let o = off("{1:.5,2:.5}");
        let limit = o.w_variance();
        let vars: Vec<f64> = [2u32, 5, 10, 20]
            .iter()
            .map(|&n| var(&sample_w(&o, &cfg(n, 50_000)).unwrap()))
            .collect();
        for w in vars.windows(2) {
            assert!(w[1] >= w[0] * 0.97, "{vars:?}");
        }
        assert!(vars.iter().all(|&v| v <= limit + 1.0));
        assert!((vars[3] / limit - 1.0).abs() < 0.10, "{vars:?} {limit}");
    }

    #[test]
    fn individual_and_aggregate_agree_in_mean_and_variance() {
        for lit in ["{1:.5,2:.5}", "{0:.2,1:.1,3:.7}", "fl(m=1.7)"] {
            let o = off(lit);
            let c = cfg(8, 40_000);
            let a = sample_w(&o, &c.with_draw_mode(DrawMode::Individual)).unwrap();
            let b = sample_w(&o, &c.with_draw_mode(DrawMode::Aggregate)).unwrap();
            let se = ((var(&a) + var(&b)) / a.len() as f64).sqrt();
            assert!((mean(&a) - mean(&b)).abs() < 4.0 * se, "{lit}");
            assert!((var(&a) / var(&b) - 1.0).abs() < 0.08, "{lit}");
        }
    }

    #[test]
    fn reproducible_across_execution() {
        let o = off("{0:.1,1:.3,2:.6}");
        let i = imm("{0:.3,2:.7}");
        let c = cfg(12, 3000);
        let a = sample_tilde_w(&o, &i, &c.with_execution(Execution::Sequential)).unwrap();
        let b = sample_tilde_w(&o, &i, &c.with_execution(Execution::Parallel)).unwrap();
        assert_eq!(a, b);
        let a = sample_w(&o, &c).unwrap();
        let b = sample_w(&o, &c).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_dump_round_trip() {
        let xs = vec![0.0, 1.0 / 3.0, 2.5e-300, 7.0];
        let mut buf = Vec::new();
        write_samples(
            &mut buf,
            &["offspring = {2:1}".into(), "seed = 1".into()],
            &xs,
        )
        .unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# offspring = {2:1}\n# seed = 1\n"));
        assert_eq!(read_samples(&buf[..]).unwrap(), xs);
    }
}
