use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_density_csv;
use crate::lagrangian::{gauss_legendre, PiecewiseConstantDensity};
use crate::profiles::Barenblatt;

/// What a computed profile is compared against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Reference {
    File(PathBuf),
    Barenblatt { m: f64, t: f64, mass: f64 },
    Gaussian { mean: f64, sigma: f64 },
}

impl Reference {
    /// Parses a file path or `analytic:NAME:key=value,...`, e.g.
    /// `analytic:barenblatt:m=2,t=0.01,mass=1` or `analytic:gaussian:mean=0,sigma=0.5`.
    pub fn parse(text: &str) -> Result<Self> {
        let Some(rest) = text.strip_prefix("analytic:") else {
            return Ok(Reference::File(PathBuf::from(text)));
        };
        let (name, args) = rest.split_once(':').unwrap_or((rest, ""));
        let get = {
            let pairs: Vec<(String, f64)> = args
                .split(',')
                .filter(|s| !s.is_empty())
                .map(|kv| {
                    let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("expected key=value, got `{kv}`")))?;
                    let v: f64 = v.trim().parse().map_err(|_| Error::Config(format!("`{v}` is not a number")))?;
                    Ok((k.trim().to_string(), v))
                })
                .collect::<Result<_>>()?;
            move |key: &str, default: Option<f64>| {
                pairs.iter().find(|p| p.0 == key).map(|p| p.1).or(default).ok_or_else(|| Error::Config(format!("analytic {name} needs `{key}`")))
            }
        };
        match name {
            "barenblatt" => Ok(Reference::Barenblatt { m: get("m", None)?, t: get("t", None)?, mass: get("mass", Some(1.0))? }),
            "gaussian" => Ok(Reference::Gaussian { mean: get("mean", Some(0.0))?, sigma: get("sigma", None)? }),
            other => Err(Error::Config(format!("unknown analytic reference `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub l1: f64,
    pub linf: f64,
    pub computed_mass: f64,
    pub reference_mass: f64,
    pub warnings: Vec<String>,
}

/// Profile, support bounds and mass.
type Analytic = (Box<dyn Fn(f64) -> f64>, f64, f64, f64);

fn analytic(reference: &Reference) -> Result<Analytic> {
    match *reference {
        Reference::Barenblatt { m, t, mass } => {
            let b = Barenblatt::new(1, m, mass)?;
            let r = b.support_radius(t);
            Ok((Box::new(move |x| b.density(t, &[x])), -r, r, mass))
        }
        Reference::Gaussian { mean, sigma } => {
            if !(sigma > 0.0) {
                return Err(Error::InvalidInput("sigma must be positive".into()));
            }
            let c = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            Ok((Box::new(move |x| c * (-0.5 * ((x - mean) / sigma).powi(2)).exp()), mean - 12.0 * sigma, mean + 12.0 * sigma, 1.0))
        }
        Reference::File(_) => unreachable!(),
    }
}

/// `L^1` and `L^inf` distances between a computed density and a reference.
pub fn compare_profiles(computed: &PiecewiseConstantDensity, reference: &Reference) -> Result<Comparison> {
    let computed_mass = computed.mass();
    let (l1, linf, reference_mass) = match reference {
        Reference::File(path) => {
            let r = read_density_csv(path)?;
            (computed.l1_distance(&r), computed.linf_distance(&r), r.mass())
        }
        _ => {
            let (f, a, b, mass) = analytic(reference)?;
            // merged partition of the computed breakpoints and the reference support
            let mut pts: Vec<f64> = computed.breakpoints().iter().copied().chain([a, b]).collect();
            pts.sort_by(f64::total_cmp);
            pts.dedup();
            let (lo, hi) = (pts[0].min(a), pts.last().unwrap().max(b));
            let mut l1 = 0.0;
            let mut linf = 0.0f64;
            let panels = 16;
            for w in pts.windows(2).filter(|w| w[0] >= lo && w[1] <= hi && w[1] > w[0]) {
                let c = computed.eval(0.5 * (w[0] + w[1]));
                let g = |x: f64| (c - f(x)).abs();
                let h = (w[1] - w[0]) / panels as f64;
                for j in 0..panels {
                    let x0 = w[0] + j as f64 * h;
                    l1 += gauss_legendre(&g, x0, x0 + h);
                    linf = linf.max(g(x0 + 0.5 * h));
                }
                linf = linf.max(g(w[0] + 1e-12 * (w[1] - w[0]))).max(g(w[1] - 1e-12 * (w[1] - w[0])));
            }
            (l1, linf, mass)
        }
    };
    let mut warnings = Vec::new();
    if (computed_mass - reference_mass).abs() > 1e-6 {
        warnings.push(format!("mass mismatch: computed {computed_mass}, reference {reference_mass}"));
    }
    Ok(Comparison { l1, linf, computed_mass, reference_mass, warnings })
}

pub fn compare_files(computed: &Path, reference: &Reference) -> Result<Comparison> {
    compare_profiles(&read_density_csv(computed)?, reference)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the fit in `log y`.
    pub residual: f64,
    pub samples: usize,
}

/// Least-squares fit `log y = intercept + slope log t` over samples with `t` in `window`.
pub fn fit_decay(t: &[f64], y: &[f64], window: (f64, f64)) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> =
        t.iter().zip(y).filter(|(t, _)| **t >= window.0 && **t <= window.1).map(|(t, y)| (*t, *y)).collect();
    if pts.len() < 2 {
        return Err(Error::InvalidInput(format!("only {} samples inside the fit window", pts.len())));
    }
    if pts.iter().any(|(t, y)| !(*t > 0.0 && *y > 0.0)) {
        return Err(Error::InvalidInput("log-log fit needs positive data".into()));
    }
    let n = pts.len() as f64;
    let lx: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidInput("fit window holds a single time".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum::<f64>() / n).sqrt();
    Ok(DecayFit { slope, intercept, residual, samples: pts.len() })
}
