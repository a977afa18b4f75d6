//! Deterministic blob particles for aggregation-diffusion equations in one or
//! two dimensions.
//!
//! Diffusion is regularized by evaluating the internal energy at the mollified
//! density `rho_i = sum_j m_j phi_eps(x_i - x_j)`; the particles then follow the
//! finite-dimensional gradient flow of
//!
//! ```text
//! E(x) = sum_i m_i F(rho_i) + sum_i m_i V(x_i) + 1/2 sum_{i != j} m_i m_j W(x_i - x_j).
//! ```

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{InteractionSpec, PotentialSpec};

/// Particle positions and fixed masses. Positions are stored as pairs; the
/// second coordinate is unused in one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    dim: usize,
    positions: Vec<[f64; 2]>,
    masses: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn new(dim: usize, positions: Vec<[f64; 2]>, masses: Vec<f64>) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidInput(format!("blob dimension must be 1 or 2, got {dim}")));
        }
        if positions.len() != masses.len() || positions.is_empty() {
            return Err(Error::Mismatch(format!("{} positions, {} masses", positions.len(), masses.len())));
        }
        if let Some(index) = masses.iter().position(|m| !(*m >= 0.0) || !m.is_finite()) {
            return Err(Error::NonPositiveWeight { index, value: masses[index] });
        }
        if positions.iter().any(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::NonFinite("particle position".into()));
        }
        let mut positions = positions;
        if dim == 1 {
            positions.iter_mut().for_each(|p| p[1] = 0.0);
        }
        Ok(ParticleEnsemble { dim, positions, masses })
    }

    /// Uniform masses `total / N`.
    pub fn uniform(dim: usize, positions: Vec<[f64; 2]>, total: f64) -> Result<Self> {
        let n = positions.len();
        Self::new(dim, positions, vec![total / n as f64; n])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    fn with_positions(&self, positions: Vec<[f64; 2]>) -> Self {
        ParticleEnsemble { dim: self.dim, positions, masses: self.masses.clone() }
    }

    /// Smallest distance between two distinct particles (infinite for one particle).
    pub fn min_pair_distance(&self) -> f64 {
        let n = self.len();
        let mut best = f64::INFINITY;
        for i in 0..n {
            let p = self.positions[i];
            for q in &self.positions[i + 1..] {
                let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
                best = best.min(d2);
            }
        }
        best.sqrt()
    }

    /// Nearest-neighbour distance averaged over particles.
    pub fn mean_spacing(&self) -> f64 {
        let n = self.len();
        if n < 2 {
            return 0.0;
        }
        let total: f64 = (0..n)
            .map(|i| {
                let p = self.positions[i];
                self.positions
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, q)| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2))
                    .fold(f64::INFINITY, f64::min)
                    .sqrt()
            })
            .sum();
        total / n as f64
    }
}

/// `n_side x n_side` lattice of cell centres on `[-3 sigma, 3 sigma]^2` with
/// masses proportional to a centred Gaussian of width `sigma`, scaled to `total`.
pub fn gaussian_lattice(n_side: usize, sigma: f64, total: f64) -> Result<ParticleEnsemble> {
    if n_side == 0 || !(sigma > 0.0) || !(total > 0.0) {
        return Err(Error::InvalidInput("gaussian lattice needs n_side > 0, sigma > 0, total > 0".into()));
    }
    let h = 6.0 * sigma / n_side as f64;
    let mut positions = Vec::with_capacity(n_side * n_side);
    let mut masses = Vec::with_capacity(n_side * n_side);
    for a in 0..n_side {
        for b in 0..n_side {
            let p = [-3.0 * sigma + (a as f64 + 0.5) * h, -3.0 * sigma + (b as f64 + 0.5) * h];
            positions.push(p);
            masses.push((-(p[0] * p[0] + p[1] * p[1]) / (2.0 * sigma * sigma)).exp());
        }
    }
    let sum: f64 = masses.iter().sum();
    masses.iter_mut().for_each(|m| *m *= total / sum);
    ParticleEnsemble::new(2, positions, masses)
}

/// Gaussian mollifier `phi_eps(x) = (2 pi eps^2)^{-d/2} exp(-|x|^2 / (2 eps^2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MollifierSpec {
    pub eps: f64,
}

impl MollifierSpec {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::InvalidInput(format!("mollifier width must be positive, got {eps}")));
        }
        Ok(MollifierSpec { eps })
    }

    fn norm(&self, dim: usize) -> f64 {
        (2.0 * std::f64::consts::PI * self.eps * self.eps).powf(-(dim as f64) / 2.0)
    }

    pub fn value(&self, dim: usize, z: [f64; 2]) -> f64 {
        let r2 = z[0] * z[0] + z[1] * z[1];
        self.norm(dim) * (-r2 / (2.0 * self.eps * self.eps)).exp()
    }

    pub fn gradient(&self, dim: usize, z: [f64; 2]) -> [f64; 2] {
        let v = self.value(dim, z);
        let s = -v / (self.eps * self.eps);
        [s * z[0], s * z[1]]
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Internal density function `F`, with internal energy `int rho F(rho)`.
#[derive(Clone)]
pub struct Diffusion {
    name: String,
    f: ScalarFn,
    f_prime: ScalarFn,
}

impl fmt::Debug for Diffusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Diffusion").field("name", &self.name).finish()
    }
}

impl Diffusion {
    /// `F = log`: linear diffusion.
    pub fn linear() -> Self {
        Diffusion { name: "linear".into(), f: Arc::new(f64::ln), f_prime: Arc::new(|r| 1.0 / r) }
    }

    /// `F(r) = r^{m-1} / (m - 1)`: porous-medium diffusion `Delta rho^m`.
    pub fn power(m: f64) -> Result<Self> {
        if !(m > 1.0) {
            return Err(Error::InvalidInput(format!("power diffusion needs m > 1, got {m}")));
        }
        Ok(Diffusion {
            name: format!("power{m}"),
            f: Arc::new(move |r| r.powf(m - 1.0) / (m - 1.0)),
            f_prime: Arc::new(move |r| r.powf(m - 2.0)),
        })
    }

    pub fn none() -> Self {
        Diffusion { name: "none".into(), f: Arc::new(|_| 0.0), f_prime: Arc::new(|_| 0.0) }
    }

    pub fn custom(
        name: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        f_prime: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Diffusion { name: name.into(), f: Arc::new(f), f_prime: Arc::new(f_prime) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_none(&self) -> bool {
        self.name == "none"
    }
}

#[derive(Debug, Clone)]
pub struct BlobProblem {
    pub diffusion: Diffusion,
    pub potential: Option<PotentialSpec>,
    pub interaction: Option<InteractionSpec>,
    pub mollifier: MollifierSpec,
}

impl BlobProblem {
    /// Keller-Segel: linear diffusion and Newtonian attraction in 2D.
    pub fn keller_segel(eps: f64) -> Result<Self> {
        Ok(BlobProblem {
            diffusion: Diffusion::linear(),
            potential: None,
            interaction: Some(InteractionSpec::newtonian_2d()),
            mollifier: MollifierSpec::new(eps)?,
        })
    }
}

fn diff(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

/// Mollified densities `rho_i` (self term included).
pub fn mollified_density(ensemble: &ParticleEnsemble, mollifier: &MollifierSpec) -> Vec<f64> {
    let d = ensemble.dim;
    let x = &ensemble.positions;
    let m = &ensemble.masses;
    (0..x.len())
        .into_par_iter()
        .map(|i| (0..x.len()).map(|j| m[j] * mollifier.value(d, diff(x[i], x[j]))).sum())
        .collect()
}

fn checked_f(problem: &BlobProblem, rho: &[f64], prime: bool) -> Result<Vec<f64>> {
    let f = if prime { &problem.diffusion.f_prime } else { &problem.diffusion.f };
    rho.iter()
        .enumerate()
        .map(|(index, &r)| {
            let v = f(r);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::UndefinedAt { index, density: r })
            }
        })
        .collect()
}

/// `sum_i m_i F(rho_i)`.
pub fn regularized_internal_energy(ensemble: &ParticleEnsemble, problem: &BlobProblem) -> Result<f64> {
    if problem.diffusion.is_none() {
        return Ok(0.0);
    }
    let rho = mollified_density(ensemble, &problem.mollifier);
    let f = checked_f(problem, &rho, false)?;
    Ok(ensemble.masses.iter().zip(&f).map(|(m, v)| m * v).sum())
}

/// Full regularized energy including potential and pair interaction.
pub fn blob_energy(ensemble: &ParticleEnsemble, problem: &BlobProblem) -> Result<f64> {
    let d = ensemble.dim;
    let x = &ensemble.positions;
    let m = &ensemble.masses;
    let mut e = regularized_internal_energy(ensemble, problem)?;
    if let Some(v) = &problem.potential {
        e += x.iter().zip(m).map(|(p, mi)| mi * v.value(&p[..d])).sum::<f64>();
    }
    if let Some(w) = &problem.interaction {
        // per-particle rows in parallel, summed in index order for reproducibility
        let rows: Vec<f64> = (0..x.len())
            .into_par_iter()
            .map(|i| {
                (0..x.len())
                    .filter(|&j| j != i)
                    .map(|j| m[i] * m[j] * w.value(&diff(x[i], x[j])[..d]))
                    .sum::<f64>()
            })
            .collect();
        let pair: f64 = rows.iter().sum();
        if !pair.is_finite() {
            return Err(Error::NonFinite("interaction energy (coincident particles?)".into()));
        }
        e += 0.5 * pair;
    }
    Ok(e)
}

/// Particle velocities `-(1/m_i) dE/dx_i`.
pub fn blob_rhs(ensemble: &ParticleEnsemble, problem: &BlobProblem) -> Result<Vec<[f64; 2]>> {
    let d = ensemble.dim;
    let x = &ensemble.positions;
    let m = &ensemble.masses;
    let n = x.len();
    let moll = &problem.mollifier;
    let fp = if problem.diffusion.is_none() {
        None
    } else {
        let rho = mollified_density(ensemble, moll);
        Some((checked_f(problem, &rho, true)?, rho))
    };
    let v: Vec<[f64; 2]> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut out = [0.0; 2];
            let mut g = [0.0; 2];
            if let Some(pot) = &problem.potential {
                pot.gradient(&x[i][..d], &mut g[..d]);
                out[0] -= g[0];
                out[1] -= g[1];
            }
            if let Some(w) = &problem.interaction {
                let mut acc = [0.0; 2];
                for j in 0..n {
                    if j != i {
                        g = [0.0; 2];
                        w.gradient(&diff(x[i], x[j])[..d], &mut g[..d]);
                        acc[0] += m[j] * g[0];
                        acc[1] += m[j] * g[1];
                    }
                }
                out[0] -= acc[0];
                out[1] -= acc[1];
            }
            if let Some((fp, _)) = &fp {
                let mut a = [0.0; 2];
                let mut b = [0.0; 2];
                for j in 0..n {
                    let gp = moll.gradient(d, diff(x[i], x[j]));
                    a[0] += m[j] * fp[j] * gp[0];
                    a[1] += m[j] * fp[j] * gp[1];
                    b[0] += m[j] * gp[0];
                    b[1] += m[j] * gp[1];
                }
                out[0] -= a[0] + fp[i] * b[0];
                out[1] -= a[1] + fp[i] * b[1];
            }
            out
        })
        .collect();
    if let Some(i) = v.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
        return Err(Error::NonFinite(format!("velocity of particle {i}")));
    }
    Ok(v)
}

/// `-sum_i m_i |v_i|^2`, the rate of change of the energy along the flow.
pub fn dissipation(ensemble: &ParticleEnsemble, velocities: &[[f64; 2]]) -> f64 {
    -ensemble.masses.iter().zip(velocities).map(|(m, v)| m * (v[0] * v[0] + v[1] * v[1])).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Rk4,
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegrateConfig {
    pub integrator: Integrator,
    /// Nominal time step.
    pub dt: f64,
    pub final_time: f64,
    /// Time between recorded samples.
    pub record_every: f64,
    /// Reject steps that raise the energy and retry with half the step.
    pub monitor_energy: bool,
    /// Cap on the fraction of the smallest pair distance a particle may travel per step.
    pub displacement_fraction: f64,
    /// Halt once the smallest pair distance drops below this multiple of `eps`.
    pub blowup_factor: f64,
    pub min_dt: f64,
}

impl Default for IntegrateConfig {
    fn default() -> Self {
        IntegrateConfig {
            integrator: Integrator::Rk4,
            dt: 1e-3,
            final_time: 1.0,
            record_every: 1e-2,
            monitor_energy: true,
            displacement_fraction: 0.25,
            blowup_factor: 1e-3,
            min_dt: 1e-14,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaltReason {
    /// Two particles came closer than `blowup_factor * eps`.
    BlowUp,
    /// The step size fell below `min_dt`.
    StepUnderflow,
    /// A position or velocity became non-finite; the last valid state is kept.
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationMetrics {
    pub second_moment: f64,
    pub min_distance: f64,
    pub mass_within_radius: f64,
}

/// Second moment about the mass centre, smallest pair distance and mass within `radius` of the centre.
pub fn concentration_metrics(ensemble: &ParticleEnsemble, radius: f64) -> ConcentrationMetrics {
    let total = ensemble.total_mass();
    let mut c = [0.0; 2];
    for (p, m) in ensemble.positions.iter().zip(&ensemble.masses) {
        c[0] += m * p[0];
        c[1] += m * p[1];
    }
    if total > 0.0 {
        c = [c[0] / total, c[1] / total];
    }
    let mut m2 = 0.0;
    let mut inside = 0.0;
    for (p, m) in ensemble.positions.iter().zip(&ensemble.masses) {
        let r2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
        m2 += m * r2;
        if r2 <= radius * radius {
            inside += m;
        }
    }
    ConcentrationMetrics { second_moment: m2, min_distance: ensemble.min_pair_distance(), mass_within_radius: inside }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlobSample {
    pub time: f64,
    pub energy: f64,
    pub dissipation: f64,
    pub metrics: ConcentrationMetrics,
    pub dt: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlobTrajectory {
    pub samples: Vec<BlobSample>,
    pub snapshots: Vec<(f64, ParticleEnsemble)>,
    pub final_state: ParticleEnsemble,
    pub final_time: f64,
    pub halted: Option<HaltReason>,
    pub steps: usize,
    /// Number of steps redone because the energy increased.
    pub energy_rejections: usize,
}

fn axpy(x: &[[f64; 2]], v: &[[f64; 2]], h: f64) -> Vec<[f64; 2]> {
    x.iter().zip(v).map(|(p, q)| [p[0] + h * q[0], p[1] + h * q[1]]).collect()
}

fn finite(x: &[[f64; 2]]) -> bool {
    x.iter().all(|p| p[0].is_finite() && p[1].is_finite())
}

fn propose(e: &ParticleEnsemble, problem: &BlobProblem, v0: &[[f64; 2]], h: f64, integrator: Integrator) -> Result<ParticleEnsemble> {
    let x = &e.positions;
    match integrator {
        Integrator::Euler => Ok(e.with_positions(axpy(x, v0, h))),
        Integrator::Rk4 => {
            let k2 = blob_rhs(&e.with_positions(axpy(x, v0, 0.5 * h)), problem)?;
            let k3 = blob_rhs(&e.with_positions(axpy(x, &k2, 0.5 * h)), problem)?;
            let k4 = blob_rhs(&e.with_positions(axpy(x, &k3, h)), problem)?;
            let next = (0..x.len())
                .map(|i| {
                    let mut p = x[i];
                    for c in 0..2 {
                        p[c] += h / 6.0 * (v0[i][c] + 2.0 * k2[i][c] + 2.0 * k3[i][c] + k4[i][c]);
                    }
                    p
                })
                .collect();
            Ok(e.with_positions(next))
        }
    }
}

fn sample(e: &ParticleEnsemble, problem: &BlobProblem, v: &[[f64; 2]], t: f64, dt: f64, energy: f64) -> BlobSample {
    BlobSample { time: t, energy, dissipation: dissipation(e, v), metrics: concentration_metrics(e, problem.mollifier.eps), dt }
}

/// Integrates the particle system up to `config.final_time` or a halt.
pub fn integrate(initial: &ParticleEnsemble, problem: &BlobProblem, config: &IntegrateConfig) -> Result<BlobTrajectory> {
    if !(config.dt > 0.0) || !(config.final_time >= 0.0) || !(config.record_every > 0.0) || !(config.displacement_fraction > 0.0) {
        return Err(Error::InvalidInput(format!("invalid integration settings {config:?}")));
    }
    let eps = problem.mollifier.eps;
    let mut state = initial.clone();
    let mut t = 0.0;
    let mut v = blob_rhs(&state, problem)?;
    let mut energy = blob_energy(&state, problem)?;
    let mut traj = BlobTrajectory {
        samples: vec![sample(&state, problem, &v, 0.0, config.dt, energy)],
        snapshots: vec![(0.0, state.clone())],
        final_state: state.clone(),
        final_time: 0.0,
        halted: None,
        steps: 0,
        energy_rejections: 0,
    };
    let mut next_record = config.record_every;
    let mut dt = config.dt;
    let tol_t = 1e-12 * config.final_time.max(1.0);
    while t < config.final_time - tol_t {
        let dmin = state.min_pair_distance();
        if dmin < config.blowup_factor * eps {
            traj.halted = Some(HaltReason::BlowUp);
            break;
        }
        let vmax = v.iter().map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt()).fold(0.0f64, f64::max);
        let mut h = dt;
        if vmax > 0.0 && dmin.is_finite() {
            h = h.min(config.displacement_fraction * dmin / vmax);
        }
        h = h.min(next_record - t).min(config.final_time - t);
        let mut accepted = None;
        while h >= config.min_dt {
            let outcome = propose(&state, problem, &v, h, config.integrator)
                .and_then(|s| if finite(&s.positions) { Ok(s) } else { Err(Error::NonFinite("position".into())) })
                .and_then(|s| blob_energy(&s, problem).map(|e| (s, e)));
            match outcome {
                Ok((s, e)) if !config.monitor_energy || e <= energy + 1e-12 * (1.0 + energy.abs()) => {
                    accepted = Some((s, e));
                    break;
                }
                Ok(_) => traj.energy_rejections += 1,
                Err(Error::NonFinite(_)) => {}
                Err(e) => return Err(e),
            }
            h *= 0.5;
            dt = dt.min(h.max(config.min_dt));
        }
        let Some((s, e)) = accepted else {
            traj.halted = Some(HaltReason::StepUnderflow);
            break;
        };
        let v_new = match blob_rhs(&s, problem) {
            Ok(v) => v,
            Err(Error::NonFinite(_)) => {
                traj.halted = Some(HaltReason::NonFinite);
                break;
            }
            Err(err) => return Err(err),
        };
        state = s;
        energy = e;
        v = v_new;
        t += h;
        traj.steps += 1;
        // relax back toward the nominal step after a successful one
        dt = (dt * 2.0).min(config.dt);
        if t >= next_record - tol_t {
            traj.samples.push(sample(&state, problem, &v, t, h, energy));
            traj.snapshots.push((t, state.clone()));
            next_record += config.record_every;
        }
    }
    if traj.samples.last().map(|s| s.time) != Some(t) {
        traj.samples.push(sample(&state, problem, &v, t, dt, energy));
        traj.snapshots.push((t, state.clone()));
    }
    traj.final_state = state;
    traj.final_time = t;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_particle_entropy() {
        let e = ParticleEnsemble::new(2, vec![[0.3, -0.1]], vec![1.0]).unwrap();
        let eps = 0.2;
        let p = BlobProblem { diffusion: Diffusion::linear(), potential: None, interaction: None, mollifier: MollifierSpec::new(eps).unwrap() };
        let v = regularized_internal_energy(&e, &p).unwrap();
        let exact = -(2.0 * std::f64::consts::PI * eps * eps).ln();
        assert!((v - exact).abs() < 1e-14);
    }

    #[test]
    fn separated_pair_porous_medium() {
        let eps = 0.05;
        let e = ParticleEnsemble::new(1, vec![[0.0, 0.0], [10.0, 0.0]], vec![0.3, 0.7]).unwrap();
        let p = BlobProblem { diffusion: Diffusion::power(2.0).unwrap(), potential: None, interaction: None, mollifier: MollifierSpec::new(eps).unwrap() };
        let phi0 = MollifierSpec::new(eps).unwrap().value(1, [0.0, 0.0]);
        let v = regularized_internal_energy(&e, &p).unwrap();
        assert!((v - (0.09 + 0.49) * phi0).abs() < 1e-15 * phi0.max(1.0) + 1e-15);
    }

    #[test]
    fn confinement_velocity() {
        let e = ParticleEnsemble::new(2, vec![[0.4, -1.2]], vec![1.0]).unwrap();
        let p = BlobProblem {
            diffusion: Diffusion::none(),
            potential: Some(PotentialSpec::quadratic(0.5)),
            interaction: None,
            mollifier: MollifierSpec::new(0.1).unwrap(),
        };
        let v = blob_rhs(&e, &p).unwrap();
        assert!((v[0][0] + 0.4).abs() < 1e-15 && (v[0][1] - 1.2).abs() < 1e-15);
    }

    #[test]
    fn two_body_quadratic_interaction() {
        let (m1, m2) = (0.3, 1.1);
        let e = ParticleEnsemble::new(2, vec![[1.0, 0.5], [-0.5, 2.0]], vec![m1, m2]).unwrap();
        let p = BlobProblem {
            diffusion: Diffusion::none(),
            potential: None,
            interaction: Some(InteractionSpec::quadratic(0.5)),
            mollifier: MollifierSpec::new(0.1).unwrap(),
        };
        let v = blob_rhs(&e, &p).unwrap();
        let rel = [v[0][0] - v[1][0], v[0][1] - v[1][1]];
        assert!((rel[0] + (m1 + m2) * 1.5).abs() < 1e-14);
        assert!((rel[1] - (m1 + m2) * 1.5).abs() < 1e-14);
        assert!((m1 * v[0][0] + m2 * v[1][0]).abs() < 1e-15);
    }

    #[test]
    fn diffusion_conserves_momentum() {
        let pos: Vec<[f64; 2]> = (0..30).map(|i| [(i as f64 * 0.37).sin(), (i as f64 * 1.3).cos() * 0.5]).collect();
        let masses: Vec<f64> = (0..30).map(|i| 0.01 + 0.001 * i as f64).collect();
        let e = ParticleEnsemble::new(2, pos, masses).unwrap();
        let p = BlobProblem { diffusion: Diffusion::linear(), potential: None, interaction: None, mollifier: MollifierSpec::new(0.2).unwrap() };
        let v = blob_rhs(&e, &p).unwrap();
        let mom: [f64; 2] = v.iter().zip(e.masses()).fold([0.0, 0.0], |a, (v, m)| [a[0] + m * v[0], a[1] + m * v[1]]);
        let scale: f64 = v.iter().zip(e.masses()).map(|(v, m)| m * v[0].abs()).sum();
        assert!(mom[0].abs() < 1e-13 * scale && mom[1].abs() < 1e-13 * scale);
    }

    #[test]
    fn metrics_examples() {
        let one = ParticleEnsemble::new(2, vec![[3.0, 1.0]], vec![1.0]).unwrap();
        assert_eq!(concentration_metrics(&one, 1.0).second_moment, 0.0);
        let two = ParticleEnsemble::new(1, vec![[-1.0, 0.0], [1.0, 0.0]], vec![1.0, 1.0]).unwrap();
        let m = concentration_metrics(&two, 0.5);
        assert_eq!(m.second_moment, 2.0);
        assert_eq!(m.min_distance, 2.0);
        assert_eq!(m.mass_within_radius, 0.0);
    }

    #[test]
    fn exponential_decay_under_rk4() {
        let e = ParticleEnsemble::new(1, vec![[1.0, 0.0]], vec![1.0]).unwrap();
        let p = BlobProblem {
            diffusion: Diffusion::none(),
            potential: Some(PotentialSpec::quadratic(0.5)),
            interaction: None,
            mollifier: MollifierSpec::new(0.1).unwrap(),
        };
        let cfg = IntegrateConfig { dt: 0.01, final_time: 1.0, record_every: 0.5, ..Default::default() };
        let t = integrate(&e, &p, &cfg).unwrap();
        assert!((t.final_state.positions()[0][0] - (-1.0f64).exp()).abs() < 1e-9);
        assert!((t.final_time - 1.0).abs() < 1e-12);
    }
}
