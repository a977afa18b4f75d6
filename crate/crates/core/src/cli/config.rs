use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{EntropySpec, InteractionSpec, PotentialQuadrature, PotentialSpec, ProblemSpec};
use crate::jko1d::NewtonConfig;
use crate::lagrangian::{BoundaryMode, MetricForm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Fp1d,
    Qdd1d,
    Thinfilm1d,
    Blob,
    Ksfd,
    Pme2d,
    Distance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EntropyChoice {
    #[default]
    Xlogx,
    Power,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialConfig {
    #[default]
    None,
    /// `a |x|^2`
    Quadratic { a: f64 },
    Polynomial { coeffs: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InteractionConfig {
    #[default]
    None,
    /// `a |z|^2`
    Quadratic { a: f64 },
    /// `c log|z|`
    Log { c: f64 },
    /// `log|z| / (2 pi)` in two dimensions.
    Newtonian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    pub entropy: EntropyChoice,
    /// Exponent for `entropy = "power"`.
    pub m: Option<f64>,
    pub potential: PotentialConfig,
    pub interaction: InteractionConfig,
    pub quadrature: PotentialQuadrature,
    pub boundary: Option<BoundaryMode>,
    pub metric: MetricForm,
    /// Interaction strength for `ksfd`; alternatively `chi_fraction` of the threshold `pi`.
    pub chi: Option<f64>,
    pub chi_fraction: Option<f64>,
    /// Physical total mass for `blob` and `ksfd`; alternatively `mass_pi` in units of pi.
    pub mass: Option<f64>,
    pub mass_pi: Option<f64>,
    /// Blob radius; alternatively `epsilon_factor` times the initial particle spacing.
    pub epsilon: Option<f64>,
    pub epsilon_factor: Option<f64>,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            entropy: EntropyChoice::Xlogx,
            m: None,
            potential: PotentialConfig::None,
            interaction: InteractionConfig::None,
            quadrature: PotentialQuadrature::Midpoint,
            boundary: None,
            metric: MetricForm::Lumped,
            chi: None,
            chi_fraction: None,
            mass: None,
            mass_pi: None,
            epsilon: None,
            epsilon_factor: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DiscretizationConfig {
    /// Mass cells of the 1D grid.
    pub k: Option<usize>,
    /// Intervals for `ksfd`, subdivisions per side for `pme2d`.
    pub n: Option<usize>,
    /// Particle count for `blob` (a perfect square).
    pub particles: Option<usize>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub steps: Option<usize>,
    /// Snapshot cadence in steps (time-stepping schemes) or in time units (`blob`).
    pub record_every: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    /// Self-similar porous-medium profile at time `t0`; `floor` only applies on the 2D box.
    Barenblatt {
        m: f64,
        t0: f64,
        #[serde(default = "one")]
        mass: f64,
        #[serde(default)]
        floor: Option<f64>,
    },
    Gaussian { mean: f64, sigma: f64 },
    Uniform { a: f64, b: f64 },
    /// `1 + amplitude cos(pi x)` on `[0, 1]`.
    Cosine { amplitude: f64 },
    /// Random piecewise-constant density with `pieces` cells on `[0, 1]`, drawn from the seed.
    Random { pieces: usize },
    /// `X^0 = factor U` for `ksfd`.
    Stretched { factor: f64 },
    File { path: PathBuf },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceConfig {
    pub first: InitialConfig,
    pub second: InitialConfig,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

fn default_resolution() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksConfig {
    pub contraction_report: bool,
    /// Relative slack for energy monotonicity.
    pub energy_tolerance: f64,
    pub mass_tolerance: f64,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        ChecksConfig { contraction_report: true, energy_tolerance: 1e-12, mass_tolerance: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scheme: Scheme,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub discretization: DiscretizationConfig,
    #[serde(default)]
    pub initial: Option<InitialConfig>,
    #[serde(default)]
    pub newton: NewtonConfig,
    #[serde(default)]
    pub distance: Option<DistanceConfig>,
    #[serde(default)]
    pub checks: ChecksConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("output")
}

/// Reads, validates and fills defaults. Unknown keys are rejected.
pub fn parse_config(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut spec = parse_config_str(&text)?;
    // relative paths are relative to the config file
    if let Some(dir) = path.parent() {
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        rebase(&mut spec.output);
        let inits = spec.initial.iter_mut().chain(spec.distance.iter_mut().flat_map(|d| [&mut d.first, &mut d.second]));
        for init in inits {
            if let InitialConfig::File { path: p } = init {
                rebase(p);
            }
        }
    }
    Ok(spec)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentSpec> {
    let spec: ExperimentSpec = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
    spec.resolved()
}

fn need<T: Copy>(v: Option<T>, what: &str, scheme: Scheme) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("scheme {scheme:?} requires {what}")))
}

fn positive(v: f64, what: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} must be positive, got {v}")))
    }
}

impl ExperimentSpec {
    /// Checks scheme-specific requirements and writes every default explicitly.
    pub fn resolved(mut self) -> Result<Self> {
        let s = self.scheme;
        self.newton.validate().map_err(|e| Error::Config(e.to_string()))?;
        positive(self.checks.energy_tolerance, "checks.energy_tolerance")?;
        positive(self.checks.mass_tolerance, "checks.mass_tolerance")?;
        let d = &mut self.discretization;
        let p = &mut self.problem;
        if s == Scheme::Distance {
            if self.distance.is_none() {
                return Err(Error::Config("scheme Distance requires a [distance] table".into()));
            }
            return Ok(self);
        }
        let dt = need(d.dt, "discretization.dt", s)?;
        positive(dt, "discretization.dt")?;
        match (d.steps, d.t_end) {
            (Some(n), _) => d.t_end = Some(n as f64 * dt),
            (None, Some(t)) => {
                positive(t, "discretization.t_end")?;
                d.steps = Some((t / dt).round().max(1.0) as usize);
            }
            (None, None) => return Err(Error::Config(format!("scheme {s:?} requires discretization.steps or discretization.t_end"))),
        }
        if p.entropy == EntropyChoice::Power {
            let m = need(p.m, "problem.m for a power entropy", s)?;
            if !(m > 1.0) {
                return Err(Error::Config(format!("problem.m must exceed 1, got {m}")));
            }
        }
        match s {
            Scheme::Fp1d | Scheme::Qdd1d | Scheme::Thinfilm1d => {
                need(d.k, "discretization.k", s)?;
                if self.initial.is_none() {
                    return Err(Error::Config(format!("scheme {s:?} requires an [initial] table")));
                }
                p.boundary.get_or_insert(if s == Scheme::Fp1d { BoundaryMode::Free } else { BoundaryMode::Pinned });
                d.record_every.get_or_insert(10.0);
            }
            Scheme::Blob => {
                let n = need(d.particles, "discretization.particles", s)?;
                let side = (n as f64).sqrt().round() as usize;
                if side * side != n {
                    return Err(Error::Config(format!("discretization.particles must be a perfect square, got {n}")));
                }
                if p.mass.is_none() {
                    p.mass = Some(p.mass_pi.map_or(1.0, |k| k * PI));
                }
                positive(p.mass.unwrap(), "problem.mass")?;
                if p.epsilon.is_none() {
                    p.epsilon_factor.get_or_insert(2.0);
                }
                if p.interaction == InteractionConfig::None && p.potential == PotentialConfig::None {
                    p.interaction = InteractionConfig::Newtonian;
                }
                self.initial.get_or_insert(InitialConfig::Gaussian { mean: 0.0, sigma: 0.2 });
                d.record_every.get_or_insert(d.t_end.unwrap() / 100.0);
            }
            Scheme::Ksfd => {
                need(d.n, "discretization.n", s)?;
                if p.chi.is_none() {
                    p.chi = Some(p.chi_fraction.unwrap_or(0.0) * PI);
                }
                self.initial.get_or_insert(InitialConfig::Stretched { factor: 2.0 });
                d.record_every.get_or_insert(1.0);
            }
            Scheme::Pme2d => {
                need(d.n, "discretization.n", s)?;
                if p.entropy != EntropyChoice::Power {
                    return Err(Error::Config("scheme Pme2d requires entropy = \"power\"".into()));
                }
                self.initial.get_or_insert(InitialConfig::Barenblatt { m: p.m.unwrap(), t0: 0.01, mass: 1.0, floor: Some(0.01) });
                d.record_every.get_or_insert(10.0);
            }
            Scheme::Distance => unreachable!(),
        }
        if let Some(e) = p.epsilon {
            positive(e, "problem.epsilon")?;
        }
        Ok(self)
    }

    pub fn steps(&self) -> usize {
        self.discretization.steps.unwrap_or(0)
    }

    pub fn dt(&self) -> f64 {
        self.discretization.dt.unwrap_or(0.0)
    }

    pub fn entropy(&self) -> Result<EntropySpec> {
        match self.problem.entropy {
            EntropyChoice::Xlogx => Ok(EntropySpec::boltzmann()),
            EntropyChoice::Power => EntropySpec::power(self.problem.m.unwrap_or(2.0)),
            EntropyChoice::None => Ok(EntropySpec::zero()),
        }
    }

    pub fn potential(&self) -> Option<PotentialSpec> {
        match &self.problem.potential {
            PotentialConfig::None => None,
            PotentialConfig::Quadratic { a } => Some(PotentialSpec::quadratic(*a)),
            PotentialConfig::Polynomial { coeffs } => Some(PotentialSpec::polynomial(coeffs.clone())),
        }
    }

    pub fn interaction(&self) -> Option<InteractionSpec> {
        match &self.problem.interaction {
            InteractionConfig::None => None,
            InteractionConfig::Quadratic { a } => Some(InteractionSpec::quadratic(*a)),
            InteractionConfig::Log { c } => Some(InteractionSpec::logarithmic(*c)),
            InteractionConfig::Newtonian => Some(InteractionSpec::newtonian_2d()),
        }
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec> {
        let entropy = match self.problem.entropy {
            EntropyChoice::None => None,
            _ => Some(self.entropy()?),
        };
        Ok(ProblemSpec::new(entropy, self.potential(), self.interaction())?.with_quadrature(self.problem.quadrature))
    }

    /// Facts derived from the configuration that are worth recording with the results.
    pub fn metadata(&self) -> BTreeMap<String, serde_json::Value> {
        let mut m = BTreeMap::new();
        let p = &self.problem;
        match self.scheme {
            Scheme::Blob => {
                let mass = p.mass.unwrap_or(1.0);
                let critical = 8.0 * PI;
                m.insert("critical_mass".into(), critical.into());
                m.insert("mass".into(), mass.into());
                m.insert("mass_over_critical".into(), (mass / critical).into());
                let regime = if (mass - critical).abs() <= 1e-12 * critical {
                    "critical"
                } else if mass > critical {
                    "supercritical"
                } else {
                    "subcritical"
                };
                m.insert("regime".into(), regime.into());
            }
            Scheme::Ksfd => {
                m.insert("chi".into(), p.chi.unwrap_or(0.0).into());
                m.insert("chi_threshold".into(), PI.into());
            }
            Scheme::Fp1d | Scheme::Qdd1d | Scheme::Thinfilm1d | Scheme::Pme2d => {
                m.insert("mass".into(), 1.0.into());
                m.insert("mass_note".into(), "densities are normalized to unit mass".into());
            }
            Scheme::Distance => {}
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
scheme = "fp1d"
[problem]
entropy = "xlogx"
[discretization]
k = 100
dt = 1e-4
t_end = 0.1
[initial]
kind = "barenblatt"
m = 2.0
t0 = 1e-3
"#;

    #[test]
    fn minimal_fp1d_gets_defaults() {
        let s = parse_config_str(MINIMAL).unwrap();
        assert_eq!(s.steps(), 1000);
        assert_eq!(s.problem.boundary, Some(BoundaryMode::Free));
        assert_eq!(s.discretization.record_every, Some(10.0));
        assert_eq!(s.newton, NewtonConfig::default());
        assert_eq!(s.initial, Some(InitialConfig::Barenblatt { m: 2.0, t0: 1e-3, mass: 1.0, floor: None }));
    }

    #[test]
    fn unknown_key_is_named() {
        let text = MINIMAL.replace("dt = 1e-4", "\"dt \" = 1e-4");
        let err = parse_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("`dt `"), "{err}");
    }

    #[test]
    fn supercritical_blob_metadata() {
        let s = parse_config_str("scheme = \"blob\"\n[problem]\nmass_pi = 9.0\n[discretization]\nparticles = 1600\ndt = 1e-3\nt_end = 0.1\n").unwrap();
        let m = s.metadata();
        assert_eq!(m["regime"], "supercritical");
        assert!((m["mass_over_critical"].as_f64().unwrap() - 9.0 / 8.0).abs() < 1e-15);
        assert_eq!(s.problem.interaction, InteractionConfig::Newtonian);
    }

    #[test]
    fn missing_fields_are_reported() {
        let err = parse_config_str("scheme = \"ksfd\"\n[discretization]\ndt = 0.1\nsteps = 3\n").unwrap_err().to_string();
        assert!(err.contains("discretization.n"), "{err}");
        assert!(parse_config_str("scheme = \"warp\"\n").is_err());
        assert!(parse_config_str("scheme = \"blob\"\n[discretization]\nparticles = 10\ndt = 1e-3\nsteps = 2\n").is_err());
    }
}
