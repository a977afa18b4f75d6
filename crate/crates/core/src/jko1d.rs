//! Implicit Euler (minimizing movement) steps for one-dimensional flows.
//!
//! One step minimizes `Psi(x) = E(x) + |x - x_prev|_A^2 / (2 dt)` over the free
//! nodes by a safeguarded Newton iteration on `A (x - x_prev) / dt + dE(x) = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::DiscreteEnergy;
use crate::lagrangian::{density_from_state, wasserstein1d, LagrangianState, MassGrid, MetricMatrix};
use crate::linalg::SymMatrix;

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACK: usize = 60;
const MAX_SUBDIVISION_DEPTH: u32 = 4;
const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NewtonConfig {
    /// Initial step length `alpha` of each Newton update.
    pub damping: f64,
    /// `eps_1`: residual tolerance in the dual lumped-metric norm.
    pub residual_tol: f64,
    /// `eps_2`: relative step tolerance.
    pub step_tol: f64,
    pub max_iterations: usize,
    /// `sigma`: no cell may shrink below this fraction of its width in one update.
    pub safeguard: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig { damping: 1.0, residual_tol: 1e-10, step_tol: 1e-12, max_iterations: 50, safeguard: 0.1 }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.damping > 0.0
            && self.damping <= 1.0
            && self.residual_tol > 0.0
            && self.step_tol > 0.0
            && self.max_iterations > 0
            && self.safeguard > 0.0
            && self.safeguard < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid Newton configuration {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub iterations: usize,
    pub residual: f64,
}

struct Objective<'a> {
    energy: &'a dyn DiscreteEnergy,
    metric: &'a MetricMatrix,
    prev: &'a [f64],
    dt: f64,
}

impl Objective<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        let d: Vec<f64> = x.iter().zip(self.prev).map(|(a, b)| a - b).collect();
        Ok(self.energy.value(x)? + self.metric.norm_sq(&d) / (2.0 * self.dt))
    }
}

fn cells_ok(x: &[f64]) -> bool {
    x.windows(2).all(|w| w[1] > w[0]) && x.iter().all(|v| v.is_finite())
}

/// Largest step length along `d` that keeps every cell above `sigma` times its width.
fn safeguard_limit(x: &[f64], d: &[f64], sigma: f64) -> f64 {
    let mut t = f64::INFINITY;
    for c in 0..x.len() - 1 {
        let w = x[c + 1] - x[c];
        let dw = d[c + 1] - d[c];
        if dw < 0.0 {
            t = t.min((1.0 - sigma) * w / -dw);
        }
    }
    t
}

/// One minimizing-movement step; see [`jko_step_with_report`].
pub fn jko_step(
    prev: &LagrangianState,
    dt: f64,
    energy: &dyn DiscreteEnergy,
    grid: &MassGrid,
    metric: &MetricMatrix,
    config: &NewtonConfig,
) -> Result<LagrangianState> {
    jko_step_with_report(prev, dt, energy, grid, metric, config).map(|(s, _)| s)
}

pub fn jko_step_with_report(
    prev: &LagrangianState,
    dt: f64,
    energy: &dyn DiscreteEnergy,
    grid: &MassGrid,
    metric: &MetricMatrix,
    config: &NewtonConfig,
) -> Result<(LagrangianState, StepReport)> {
    config.validate()?;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
    }
    let n = prev.len();
    if grid.nodes().len() != n || metric.dim() != n {
        return Err(Error::Mismatch("state, grid and metric sizes differ".into()));
    }
    let xp = prev.positions();
    let free = prev.free_indices();
    let lumped: Vec<f64> = (0..n)
        .map(|i| metric.diag()[i] + if i > 0 { metric.get(i, i - 1) } else { 0.0 } + if i + 1 < n { metric.get(i, i + 1) } else { 0.0 })
        .collect();
    let obj = Objective { energy, metric, prev: xp, dt };
    let e_prev = energy.value(xp)?;
    let mut x = xp.to_vec();
    let mut psi = e_prev;
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..config.max_iterations {
        iterations = it;
        let g = energy.gradient(&x)?;
        let diff: Vec<f64> = x.iter().zip(xp).map(|(a, b)| a - b).collect();
        let ad = metric.apply(&diff);
        let f: Vec<f64> = free.iter().map(|&i| ad[i] / dt + g[i]).collect();
        residual = free.iter().zip(&f).map(|(&i, v)| v * v / lumped[i]).sum::<f64>().sqrt();
        if !residual.is_finite() {
            return Err(Error::NonFinite("Newton residual".into()));
        }
        if residual <= config.residual_tol {
            converged = true;
            break;
        }
        iterations = it + 1;

        let h = energy.hessian(&x)?;
        let m = h.add_scaled(&metric.as_sym(), 1.0 / dt).restrict(&free);
        let minus_f: Vec<f64> = f.iter().map(|v| -v).collect();
        let shift_diag: Vec<f64> = free.iter().map(|&i| lumped[i] / dt).collect();
        let mut dir = None;
        let mut mu = 0.0;
        for _ in 0..16 {
            let shifted = if mu == 0.0 {
                m.clone()
            } else {
                m.add_scaled(&SymMatrix::Tridiagonal { diag: shift_diag.clone(), off: vec![0.0; free.len() - 1] }, mu)
            };
            if let Ok(d) = shifted.solve(&minus_f) {
                let slope: f64 = d.iter().zip(&f).map(|(a, b)| a * b).sum();
                if slope < 0.0 && d.iter().all(|v| v.is_finite()) {
                    dir = Some((d, slope));
                    break;
                }
            }
            mu = if mu == 0.0 { 1e-2 } else { mu * 10.0 };
        }
        let (d_free, slope) = dir.ok_or(Error::Singular)?;
        let mut d = vec![0.0; n];
        for (k, &i) in free.iter().enumerate() {
            d[i] = d_free[k];
        }

        let t_cap = safeguard_limit(&x, &d, config.safeguard);
        let mut t = config.damping.min(t_cap);
        let full_step = t == 1.0;
        let slack = 1e-14 * (1.0 + psi.abs());
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            if cells_ok(&trial) {
                if let Ok(v) = obj.value(&trial) {
                    if v.is_finite() && v <= psi + ARMIJO * t * slope + slack {
                        accepted = Some((trial, v));
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        let Some((trial, v)) = accepted else {
            return Err(Error::LineSearch(format!("no acceptable step at iteration {}, residual {residual:e}", it + 1)));
        };
        let step = t * d.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        x = trial;
        psi = v;
        let scale = 1.0 + x.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if full_step && t == 1.0 && step <= config.step_tol * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NewtonFailure { iterations, residual });
    }
    let psi_final = obj.value(&x)?;
    if psi_final > e_prev + 1e-11 * (1.0 + e_prev.abs()) {
        return Err(Error::DecreaseViolated { before: e_prev, after: psi_final });
    }
    let state = prev.with_positions(x).map_err(|e| match e {
        Error::NotMonotone { index } => Error::DegenerateCell { index: index.saturating_sub(1), stretch: 0.0 },
        other => other,
    })?;
    Ok((state, StepReport { iterations, residual }))
}

/// Per-step diagnostics of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub time: f64,
    pub energy: f64,
    pub iterations: usize,
    pub residual: f64,
    pub min_density: f64,
    pub max_density: f64,
    /// Number of sub-steps the nominal step was split into (1 when none).
    pub substeps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTrajectory {
    pub grid: MassGrid,
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<LagrangianState>,
    /// `records[0]` describes the initial state.
    pub records: Vec<StepRecord>,
}

impl FlowTrajectory {
    pub fn final_state(&self) -> &LagrangianState {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn energies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.energy).collect()
    }
}

fn record(state: &LagrangianState, grid: &MassGrid, energy: &dyn DiscreteEnergy, time: f64, report: StepReport, substeps: usize) -> Result<StepRecord> {
    let rho = density_from_state(state, grid)?;
    if (rho.mass() - 1.0).abs() > MASS_TOL {
        return Err(Error::Mismatch(format!("mass drifted to {}", rho.mass())));
    }
    Ok(StepRecord {
        time,
        energy: energy.value(state.positions())?,
        iterations: report.iterations,
        residual: report.residual,
        min_density: rho.min_value(),
        max_density: rho.max_value(),
        substeps,
    })
}

fn recoverable(e: &Error) -> bool {
    matches!(
        e,
        Error::NewtonFailure { .. }
            | Error::LineSearch(_)
            | Error::DecreaseViolated { .. }
            | Error::DegenerateCell { .. }
            | Error::Singular
            | Error::NonFinite(_)
    )
}

/// Advances by `dt`, splitting into halves recursively (at most a factor 16) on failure.
fn advance(
    state: &LagrangianState,
    dt: f64,
    energy: &dyn DiscreteEnergy,
    grid: &MassGrid,
    metric: &MetricMatrix,
    config: &NewtonConfig,
    depth: u32,
) -> Result<(LagrangianState, StepReport, usize)> {
    match jko_step_with_report(state, dt, energy, grid, metric, config) {
        Ok((s, r)) => Ok((s, r, 1)),
        Err(e) if depth < MAX_SUBDIVISION_DEPTH && recoverable(&e) => {
            let (mid, r1, n1) = advance(state, 0.5 * dt, energy, grid, metric, config, depth + 1)?;
            let (end, r2, n2) = advance(&mid, 0.5 * dt, energy, grid, metric, config, depth + 1)?;
            Ok((end, StepReport { iterations: r1.iterations + r2.iterations, residual: r2.residual }, n1 + n2))
        }
        Err(e) => Err(e),
    }
}

/// Runs `n_steps` nominal steps of size `dt` from time 0.
pub fn run_flow(
    initial: &LagrangianState,
    grid: &MassGrid,
    energy: &dyn DiscreteEnergy,
    metric: &MetricMatrix,
    dt: f64,
    n_steps: usize,
    config: &NewtonConfig,
) -> Result<FlowTrajectory> {
    run_flow_from(0.0, initial, grid, energy, metric, dt, n_steps, config)
}

/// Like [`run_flow`], with the clock starting at `t0`.
#[allow(clippy::too_many_arguments)]
pub fn run_flow_from(
    t0: f64,
    initial: &LagrangianState,
    grid: &MassGrid,
    energy: &dyn DiscreteEnergy,
    metric: &MetricMatrix,
    dt: f64,
    n_steps: usize,
    config: &NewtonConfig,
) -> Result<FlowTrajectory> {
    config.validate()?;
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
    }
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut records = Vec::with_capacity(n_steps + 1);
    states.push(initial.clone());
    times.push(t0);
    records.push(record(initial, grid, energy, t0, StepReport { iterations: 0, residual: 0.0 }, 0)?);
    let mut current = initial.clone();
    for step in 1..=n_steps {
        let (next, report, substeps) = advance(&current, dt, energy, grid, metric, config, 0)?;
        let t = t0 + step as f64 * dt;
        records.push(record(&next, grid, energy, t, report, substeps)?);
        states.push(next.clone());
        times.push(t);
        current = next;
    }
    Ok(FlowTrajectory { grid: grid.clone(), dt, times, states, records })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    /// `W_2` between the two densities at each stored time.
    pub distances: Vec<f64>,
    /// `r_n = d_n / d_{n-1}`; 0 when `d_{n-1} = 0`.
    pub ratios: Vec<f64>,
    /// `(1 + lambda dt)^{-1}`.
    pub bound: f64,
    pub satisfied: bool,
}

/// Per-step `W_2` contraction factors between two trajectories of the same scheme.
pub fn contraction_check(a: &FlowTrajectory, b: &FlowTrajectory, lambda: f64, dt: f64) -> Result<ContractionReport> {
    if a.grid != b.grid {
        return Err(Error::Mismatch("trajectories live on different mass grids".into()));
    }
    if a.states.len() != b.states.len() {
        return Err(Error::Mismatch("trajectories have different lengths".into()));
    }
    let distances = a
        .states
        .iter()
        .zip(&b.states)
        .map(|(sa, sb)| Ok(wasserstein1d(&density_from_state(sa, &a.grid)?, &density_from_state(sb, &b.grid)?)))
        .collect::<Result<Vec<f64>>>()?;
    let bound = 1.0 / (1.0 + lambda * dt);
    let ratios: Vec<f64> = distances.windows(2).map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 }).collect();
    let satisfied = distances.windows(2).all(|w| w[1] <= w[0] * bound * (1.0 + 1e-8));
    Ok(ContractionReport { distances, ratios, bound, satisfied })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::{EntropySpec, FokkerPlanckEnergy, PotentialSpec, ProblemSpec};
    use crate::lagrangian::{l2_metric, BoundaryMode, MetricForm};

    #[test]
    fn critical_point_is_fixed() {
        let grid = MassGrid::uniform(6);
        let s = LagrangianState::identity(&grid, BoundaryMode::Pinned);
        let e = FokkerPlanckEnergy { grid: grid.clone(), problem: ProblemSpec::entropy_only(EntropySpec::boltzmann()) };
        let m = l2_metric(&grid, MetricForm::Lumped);
        let next = jko_step(&s, 1e-2, &e, &grid, &m, &NewtonConfig::default()).unwrap();
        for (a, b) in next.positions().iter().zip(s.positions()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn linear_ode_step() {
        let grid = MassGrid::uniform(1);
        let s = LagrangianState::new(vec![0.9, 1.3], BoundaryMode::Free).unwrap();
        let problem = ProblemSpec::new(None, Some(PotentialSpec::quadratic(0.5)), None).unwrap();
        let e = FokkerPlanckEnergy { grid: grid.clone(), problem };
        let m = l2_metric(&grid, MetricForm::Lumped);
        let dt = 0.1;
        let next = jko_step(&s, dt, &e, &grid, &m, &NewtonConfig::default()).unwrap();
        let mid = 0.5 * (next.positions()[0] + next.positions()[1]);
        assert!((mid - 1.1 / (1.0 + dt)).abs() < 1e-12);
        // the width is not acted on by the potential
        assert!((next.positions()[1] - next.positions()[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn bad_config_rejected() {
        let c = NewtonConfig { safeguard: 1.0, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn identical_trajectories_contract_trivially() {
        let grid = MassGrid::uniform(8);
        let x: Vec<f64> = grid.nodes().iter().map(|v| v * v * 0.5 + v * 0.5).collect();
        let s = LagrangianState::new(x, BoundaryMode::Pinned).unwrap();
        let e = FokkerPlanckEnergy { grid: grid.clone(), problem: ProblemSpec::entropy_only(EntropySpec::boltzmann()) };
        let m = l2_metric(&grid, MetricForm::Lumped);
        let t = run_flow(&s, &grid, &e, &m, 1e-2, 5, &NewtonConfig::default()).unwrap();
        let r = contraction_check(&t, &t, 0.0, 1e-2).unwrap();
        assert!(r.satisfied);
        assert!(r.distances.iter().all(|d| *d == 0.0));
    }
}
