//! Implicit finite differences for the one-dimensional modified Keller-Segel
//! model in self-similar variables, written for the node positions
//! `X_0 < ... < X_N` of a Lagrangian grid with equal mass spacing `dm = 1/N`.
//!
//! One step solves, for every node `i`,
//!
//! ```text
//! (X_i - Xp_i)/dt + 1/(X_{i+1} - X_i) - 1/(X_i - X_{i-1}) + X_i + (chi/pi) sum_{j != i} dm/(X_i - X_j) = 0,
//! ```
//!
//! where the right flux is absent at `i = N` and the left flux at `i = 0`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::jko1d::NewtonConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KSFDConfig {
    /// Number of intervals; the grid has `n + 1` nodes.
    pub n: usize,
    pub chi: f64,
    pub dt: f64,
    /// Largest interaction strength accepted by [`steady_state`].
    pub chi_threshold: f64,
    pub newton: NewtonConfig,
}

impl Default for KSFDConfig {
    fn default() -> Self {
        KSFDConfig { n: 100, chi: 0.0, dt: 0.1, chi_threshold: std::f64::consts::PI, newton: NewtonConfig::default() }
    }
}

impl KSFDConfig {
    pub fn dm(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidInput(format!("need N >= 2 intervals, got {}", self.n)));
        }
        if !(self.chi >= 0.0) || !self.chi.is_finite() {
            return Err(Error::InvalidInput(format!("chi must be nonnegative, got {}", self.chi)));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidInput(format!("dt must be positive, got {}", self.dt)));
        }
        self.newton.validate()
    }
}

/// Strictly increasing node positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSState {
    x: Vec<f64>,
}

impl KSState {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if x.len() < 3 {
            return Err(Error::InvalidInput("a Keller-Segel state needs at least three nodes".into()));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("node {i}")));
        }
        if let Some(i) = x.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::NotMonotone { index: i + 1 });
        }
        Ok(KSState { x })
    }

    /// Same nodes shifted to zero mean.
    pub fn centered(x: Vec<f64>) -> Result<Self> {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        Self::new(x.into_iter().map(|v| v - mean).collect())
    }

    pub fn positions(&self) -> &[f64] {
        &self.x
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn distance_sq(&self, other: &KSState) -> f64 {
        self.x.iter().zip(&other.x).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    pub fn min_gap(&self) -> f64 {
        self.x.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }
}

/// A discrete equilibrium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub u: KSState,
    pub residual: f64,
    pub iterations: usize,
}

/// Stationary part: fluxes, confinement and interaction.
fn stationary(x: &[f64], chi: f64, dm: f64) -> Vec<f64> {
    let n = x.len();
    let c = chi / std::f64::consts::PI * dm;
    (0..n)
        .map(|i| {
            let mut r = x[i];
            if i + 1 < n {
                r += 1.0 / (x[i + 1] - x[i]);
            }
            if i > 0 {
                r -= 1.0 / (x[i] - x[i - 1]);
            }
            if c != 0.0 {
                let mut s = 0.0;
                for j in 0..n {
                    if j != i {
                        s += 1.0 / (x[i] - x[j]);
                    }
                }
                r += c * s;
            }
            r
        })
        .collect()
}

fn stationary_jacobian(x: &[f64], chi: f64, dm: f64) -> DMatrix<f64> {
    let n = x.len();
    let c = chi / std::f64::consts::PI * dm;
    let mut j = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        if i + 1 < n {
            let a = 1.0 / (x[i + 1] - x[i]).powi(2);
            j[(i, i)] += a;
            j[(i, i + 1)] -= a;
        }
        if i > 0 {
            let a = 1.0 / (x[i] - x[i - 1]).powi(2);
            j[(i, i)] += a;
            j[(i, i - 1)] -= a;
        }
        if c != 0.0 {
            for k in 0..n {
                if k != i {
                    let a = c / (x[i] - x[k]).powi(2);
                    j[(i, i)] -= a;
                    j[(i, k)] += a;
                }
            }
        }
    }
    j
}

/// Residual of one implicit step from `prev`.
pub fn fdks_residual(x: &KSState, prev: &KSState, config: &KSFDConfig) -> Result<Vec<f64>> {
    if x.len() != config.n + 1 || prev.len() != config.n + 1 {
        return Err(Error::Mismatch(format!("expected {} nodes", config.n + 1)));
    }
    let mut r = stationary(&x.x, config.chi, config.dm());
    for (i, v) in r.iter_mut().enumerate() {
        *v += (x.x[i] - prev.x[i]) / config.dt;
    }
    Ok(r)
}

/// Jacobian of [`fdks_residual`] with respect to `x`.
pub fn fdks_jacobian(x: &KSState, config: &KSFDConfig) -> DMatrix<f64> {
    let mut j = stationary_jacobian(&x.x, config.chi, config.dm());
    for i in 0..x.len() {
        j[(i, i)] += 1.0 / config.dt;
    }
    j
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Damped Newton on `f(x) = 0` over strictly increasing vectors.
fn newton(
    start: Vec<f64>,
    f: impl Fn(&[f64]) -> Vec<f64>,
    jac: impl Fn(&[f64]) -> DMatrix<f64>,
    cfg: &NewtonConfig,
) -> Result<(Vec<f64>, f64, usize)> {
    let mut x = start;
    let mut r = f(&x);
    let mut res = norm(&r);
    let mut last_step = f64::INFINITY;
    for it in 0..cfg.max_iterations {
        let scale = 1.0 + x.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if res <= cfg.residual_tol && last_step <= cfg.step_tol * scale {
            return Ok((x, res, it));
        }
        let lu = jac(&x).lu();
        let d = lu.solve(&DVector::from_iterator(r.len(), r.iter().map(|v| -v))).ok_or(Error::Singular)?;
        let d: Vec<f64> = d.iter().copied().collect();
        let mut t = cfg.damping;
        for w in 0..x.len() - 1 {
            let gap = x[w + 1] - x[w];
            let dg = d[w + 1] - d[w];
            if dg < 0.0 {
                t = t.min((1.0 - cfg.safeguard) * gap / -dg);
            }
        }
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let rt = f(&trial);
            let nt = norm(&rt);
            // near convergence the residual sits at round-off; accept any non-growing step
            if nt.is_finite() && (nt <= (1.0 - 1e-4 * t) * res || (res <= cfg.residual_tol && nt <= res * 2.0)) {
                last_step = t * d.iter().fold(0.0f64, |a, b| a.max(b.abs()));
                x = trial;
                r = rt;
                res = nt;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            if res <= cfg.residual_tol {
                return Ok((x, res, it + 1));
            }
            return Err(Error::LineSearch(format!("residual {res:e} cannot be reduced")));
        }
    }
    if res <= cfg.residual_tol {
        return Ok((x, res, cfg.max_iterations));
    }
    Err(Error::NewtonFailure { iterations: cfg.max_iterations, residual: res })
}

/// One implicit step, re-centred to zero mean.
pub fn fdks_step(prev: &KSState, config: &KSFDConfig) -> Result<KSState> {
    config.validate()?;
    if prev.len() != config.n + 1 {
        return Err(Error::Mismatch(format!("expected {} nodes, got {}", config.n + 1, prev.len())));
    }
    let p = prev.x.clone();
    let (chi, dm, dt) = (config.chi, config.dm(), config.dt);
    let f = |x: &[f64]| {
        let mut r = stationary(x, chi, dm);
        for i in 0..x.len() {
            r[i] += (x[i] - p[i]) / dt;
        }
        r
    };
    let jac = |x: &[f64]| {
        let mut j = stationary_jacobian(x, chi, dm);
        for i in 0..x.len() {
            j[(i, i)] += 1.0 / dt;
        }
        j
    };
    let (x, _, _) = newton(p.clone(), f, jac, &config.newton)?;
    KSState::centered(x)
}

/// Step with recursive halving (up to a factor 16) when Newton fails.
pub fn fdks_advance(prev: &KSState, config: &KSFDConfig) -> Result<KSState> {
    fn go(prev: &KSState, config: &KSFDConfig, depth: u32) -> Result<KSState> {
        match fdks_step(prev, config) {
            Ok(s) => Ok(s),
            Err(Error::NewtonFailure { .. } | Error::LineSearch(_) | Error::Singular | Error::NotMonotone { .. }) if depth < 4 => {
                let half = KSFDConfig { dt: 0.5 * config.dt, ..*config };
                let mid = go(prev, &half, depth + 1)?;
                go(&mid, &half, depth + 1)
            }
            Err(e) => Err(e),
        }
    }
    go(prev, config, 0)
}

/// Centred standard-normal quantiles at `(i + 1/2) / (N + 1)`.
pub fn gaussian_quantiles(n: usize) -> Result<KSState> {
    let normal = Normal::standard();
    let x = (0..=n).map(|i| normal.inverse_cdf((i as f64 + 0.5) / (n as f64 + 1.0))).collect();
    KSState::centered(x)
}

/// Discrete equilibrium by damped Newton from the Gaussian-quantile guess.
pub fn steady_state(config: &KSFDConfig) -> Result<SteadyState> {
    steady_state_from(&gaussian_quantiles(config.n)?, config)
}

pub fn steady_state_from(guess: &KSState, config: &KSFDConfig) -> Result<SteadyState> {
    config.validate()?;
    if config.chi > config.chi_threshold {
        return Err(Error::InvalidInput(format!("chi = {} exceeds the configured threshold {}", config.chi, config.chi_threshold)));
    }
    if guess.len() != config.n + 1 {
        return Err(Error::Mismatch(format!("expected {} nodes", config.n + 1)));
    }
    let (chi, dm) = (config.chi, config.dm());
    let newton_cfg = NewtonConfig { max_iterations: config.newton.max_iterations.max(200), ..config.newton };
    let (x, residual, iterations) = newton(guess.x.clone(), |x| stationary(x, chi, dm), |x| stationary_jacobian(x, chi, dm), &newton_cfg)?;
    Ok(SteadyState { u: KSState::centered(x)?, residual, iterations })
}

/// Largest deviation from 1 of `(U_{k+1} - U_k) { (chi/pi) sum_{i<=k<j} dm / (U_j - U_i) - sum_{i<=k} U_i }`.
pub fn equilibrium_identity_defect(u: &KSState, config: &KSFDConfig) -> f64 {
    let x = &u.x;
    let n = x.len();
    let c = config.chi / std::f64::consts::PI * config.dm();
    let mut worst = 0.0f64;
    let mut partial = 0.0;
    for k in 0..n - 1 {
        partial += x[k];
        let mut cross = 0.0;
        for i in 0..=k {
            for j in k + 1..n {
                cross += 1.0 / (x[j] - x[i]);
            }
        }
        let v = (x[k + 1] - x[k]) * (c * cross - partial);
        worst = worst.max((v - 1.0).abs());
    }
    worst
}

/// `gamma(l) = 2 - l - 1/l`: concave, non-positive, zero only at `l = 1`.
pub fn gamma(lambda: f64) -> f64 {
    2.0 - lambda - 1.0 / lambda
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionRow {
    pub step: usize,
    pub distance_sq: f64,
    pub bound: f64,
    pub min_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsContractionReport {
    pub rows: Vec<ContractionRow>,
    /// Steps whose squared distance exceeds the round-off floor.
    pub resolved_steps: usize,
    pub floor: f64,
    pub per_step_ok: bool,
    pub cumulative_ok: bool,
    pub satisfied: bool,
}

/// Squared-distance level below which `|X - U|^2` is round-off: `(N+1) (64 eps_mach max|U|)^2`.
pub fn roundoff_floor(u: &KSState) -> f64 {
    let scale = u.x.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    u.len() as f64 * (64.0 * f64::EPSILON * scale).powi(2)
}

/// Checks `|X^{n+1} - U|^2 - |X^n - U|^2 <= -2 dt |X^{n+1} - U|^2` and
/// `|X^n - U|^2 <= (1 + 2 dt)^{-n} |X^0 - U|^2` at every step where the
/// distance is above the round-off floor.
pub fn contraction_report(trajectory: &[KSState], u: &SteadyState, dt: f64) -> KsContractionReport {
    let floor = roundoff_floor(&u.u);
    let d: Vec<f64> = trajectory.iter().map(|x| x.distance_sq(&u.u)).collect();
    let d0 = d.first().copied().unwrap_or(0.0);
    let mut rows = Vec::with_capacity(d.len());
    let mut per_step_ok = true;
    let mut cumulative_ok = true;
    let mut resolved = 0;
    for (n, x) in trajectory.iter().enumerate() {
        let bound = d0 * (1.0 + 2.0 * dt).powi(-(n as i32));
        if d[n] > floor {
            resolved += 1;
            if d[n] > bound * (1.0 + 1e-8) {
                cumulative_ok = false;
            }
            if n > 0 && d[n] - d[n - 1] > -2.0 * dt * d[n] * (1.0 - 1e-10) {
                per_step_ok = false;
            }
        }
        rows.push(ContractionRow { step: n, distance_sq: d[n], bound, min_gap: x.min_gap() });
    }
    KsContractionReport { rows, resolved_steps: resolved, floor, per_step_ok, cumulative_ok, satisfied: per_step_ok && cumulative_ok }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, chi: f64) -> KSFDConfig {
        KSFDConfig { n, chi, ..Default::default() }
    }

    #[test]
    fn three_node_equilibrium() {
        let c = cfg(2, 0.0);
        let x = KSState::new(vec![-1.0, 0.0, 1.0]).unwrap();
        let r = fdks_residual(&x, &x, &c).unwrap();
        assert!(r.iter().all(|v| *v == 0.0));
        let u = steady_state(&c).unwrap();
        for (a, b) in u.u.positions().iter().zip([-1.0, 0.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_sum_is_time_derivative() {
        let c = cfg(6, 1.0);
        let x = KSState::centered(vec![-2.0, -1.1, -0.3, 0.2, 0.5, 1.4, 2.2]).unwrap();
        let p = KSState::centered(vec![-1.5, -1.0, -0.2, 0.1, 0.6, 1.0, 1.9]).unwrap();
        let r = fdks_residual(&x, &p, &c).unwrap();
        let lhs: f64 = r.iter().sum();
        let rhs: f64 = x.positions().iter().zip(p.positions()).map(|(a, b)| (a - b) / c.dt).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn steady_state_properties() {
        for chi in [0.0, 0.5, 1.5] {
            let c = cfg(30, chi);
            let u = steady_state(&c).unwrap();
            let x = u.u.positions();
            for i in 0..x.len() {
                assert!((x[i] + x[x.len() - 1 - i]).abs() < 1e-10);
            }
            assert!(equilibrium_identity_defect(&u.u, &c) < 1e-8);
            let virial: f64 = x.iter().map(|v| v * v).sum();
            let expected = c.n as f64 - chi * (c.n as f64 + 1.0) / (2.0 * std::f64::consts::PI);
            assert!((virial - expected).abs() < 1e-8);
        }
    }

    #[test]
    fn fixed_point_step() {
        let c = cfg(20, 0.7);
        let u = steady_state(&c).unwrap();
        let next = fdks_step(&u.u, &c).unwrap();
        assert!(next.distance_sq(&u.u).sqrt() < 1e-12);
    }

    #[test]
    fn single_step_contracts() {
        let c = cfg(20, 0.0);
        let u = steady_state(&c).unwrap();
        let x0 = KSState::new(u.u.positions().iter().map(|v| 1.5 * v).collect()).unwrap();
        let x1 = fdks_step(&x0, &c).unwrap();
        assert!(x1.distance_sq(&u.u) < x0.distance_sq(&u.u));
    }

    #[test]
    fn gamma_shape() {
        assert_eq!(gamma(1.0), 0.0);
        let mut l = 0.01;
        while l <= 100.0 {
            if (l - 1.0f64).abs() > 1e-9 {
                assert!(gamma(l) < 0.0);
            }
            let h = 1e-3 * l;
            assert!(gamma(l + h) - 2.0 * gamma(l) + gamma(l - h) <= 1e-12);
            l *= 1.07;
        }
    }

    #[test]
    fn chi_above_threshold_rejected() {
        let c = KSFDConfig { chi: 4.0, ..cfg(10, 0.0) };
        assert!(steady_state(&c).is_err());
    }
}
