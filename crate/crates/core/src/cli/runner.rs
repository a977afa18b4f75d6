use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::config::{EntropyChoice, ExperimentSpec, InitialConfig, Scheme};
use crate::blob::{self, BlobProblem, Diffusion, IntegrateConfig, MollifierSpec};
use crate::error::{Error, Result};
use crate::fdks::{self, KSFDConfig, KSState};
use crate::functionals::{discrete_h1, DiscreteEnergy, FokkerPlanckEnergy, Surrogate, SurrogateEnergy};
use crate::io::{read_density_csv, write_density_csv, write_json, write_rows, write_state_csv, StateJson};
use crate::jko1d::run_flow_from;
use crate::lagrangian::{
    density_from_state, idf_from_density, l2_metric, wasserstein1d, BoundaryMode, Distribution1d, FunctionDensity, LagrangianState,
    MassGrid, PiecewiseConstantDensity,
};
use crate::mesh2d;
use crate::profiles::Barenblatt;

/// Verdict of one runtime structure check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check { name: name.into(), passed, detail }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub scheme: Scheme,
    pub config: ExperimentSpec,
    pub metadata: BTreeMap<String, serde_json::Value>,
    pub version: String,
    pub wall_time_s: f64,
    pub checks: Vec<Check>,
    pub results: BTreeMap<String, serde_json::Value>,
    pub outputs: Vec<String>,
    /// Set when the solver stopped with an error.
    pub failure: Option<String>,
}

impl Manifest {
    /// 0 on success, 2 when a structure check failed, 3 when the solver failed.
    pub fn exit_code(&self) -> i32 {
        if self.failure.is_some() {
            3
        } else if self.checks.iter().any(|c| !c.passed) {
            2
        } else {
            0
        }
    }
}

struct Run<'a> {
    spec: &'a ExperimentSpec,
    checks: Vec<Check>,
    results: BTreeMap<String, serde_json::Value>,
    outputs: Vec<String>,
}

impl Run<'_> {
    fn path(&mut self, name: &str) -> std::path::PathBuf {
        self.outputs.push(name.to_string());
        self.spec.output.join(name)
    }

    fn result(&mut self, key: &str, v: impl Into<serde_json::Value>) {
        self.results.insert(key.into(), v.into());
    }
}

/// Runs the experiment, writing its outputs and `manifest.json` into the output directory.
///
/// Solver errors are recorded in the manifest rather than returned; an `Err` means
/// the output directory itself could not be written.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Manifest> {
    fs::create_dir_all(&spec.output)?;
    let start = Instant::now();
    let mut run = Run { spec, checks: Vec::new(), results: BTreeMap::new(), outputs: Vec::new() };
    let outcome = match spec.scheme {
        Scheme::Fp1d | Scheme::Qdd1d | Scheme::Thinfilm1d => run_1d(&mut run),
        Scheme::Blob => run_blob(&mut run),
        Scheme::Ksfd => run_ksfd(&mut run),
        Scheme::Pme2d => run_pme2d(&mut run),
        Scheme::Distance => run_distance(&mut run),
    };
    let manifest = Manifest {
        scheme: spec.scheme,
        config: spec.clone(),
        metadata: spec.metadata(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_s: start.elapsed().as_secs_f64(),
        checks: run.checks,
        results: run.results,
        outputs: run.outputs,
        failure: outcome.err().map(|e| e.to_string()),
    };
    write_json(&spec.output.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn monotone_nonincreasing(v: &[f64], rel: f64) -> Option<usize> {
    v.windows(2).position(|w| w[1] > w[0] + rel * (1.0 + w[0].abs())).map(|i| i + 1)
}

fn energy_check(energies: &[f64], rel: f64) -> Check {
    match monotone_nonincreasing(energies, rel) {
        None => Check::new("energy_monotone", true, format!("{} samples nonincreasing", energies.len())),
        Some(i) => Check::new("energy_monotone", false, format!("energy rose at sample {i}: {} -> {}", energies[i - 1], energies[i])),
    }
}

/// A 1D initial density as a distribution plus the clock it starts at.
fn density_1d(init: &InitialConfig, seed: u64) -> Result<(Box<dyn Distribution1d>, f64)> {
    Ok(match init {
        InitialConfig::Barenblatt { m, t0, mass, .. } => {
            let b = Barenblatt::new(1, *m, *mass)?;
            let t = *t0;
            let r = b.support_radius(t);
            (Box::new(FunctionDensity::new(move |x| b.density(t, &[x]), -r, r)?), t)
        }
        InitialConfig::Gaussian { mean, sigma } => {
            let (mu, s) = (*mean, *sigma);
            if !(s > 0.0) {
                return Err(Error::InvalidInput("sigma must be positive".into()));
            }
            (Box::new(FunctionDensity::new(move |x| (-0.5 * ((x - mu) / s).powi(2)).exp(), mu - 6.0 * s, mu + 6.0 * s)?), 0.0)
        }
        InitialConfig::Uniform { a, b } => (Box::new(PiecewiseConstantDensity::normalized(vec![*a, *b], vec![1.0])?), 0.0),
        InitialConfig::Cosine { amplitude } => {
            let a = *amplitude;
            if a.abs() >= 1.0 {
                return Err(Error::InvalidInput("cosine amplitude must lie in (-1, 1)".into()));
            }
            (Box::new(FunctionDensity::new(move |x| 1.0 + a * (PI * x).cos(), 0.0, 1.0)?), 0.0)
        }
        InitialConfig::Random { .. } => (Box::new(as_piecewise(init, seed)?.expect("random data is piecewise constant")), 0.0),
        InitialConfig::File { path } => (Box::new(read_density_csv(path)?), 0.0),
        InitialConfig::Stretched { .. } => return Err(Error::Config("a stretched initial state only applies to ksfd".into())),
    })
}

fn run_1d(run: &mut Run) -> Result<()> {
    let spec = run.spec;
    let k = spec.discretization.k.unwrap_or(100);
    let mode = spec.problem.boundary.unwrap_or(BoundaryMode::Free);
    let grid = MassGrid::uniform(k);
    let init_cfg = spec.initial.as_ref().ok_or_else(|| Error::Config("missing [initial]".into()))?;
    let (rho0, t0) = density_1d(init_cfg, spec.seed)?;
    let init = idf_from_density(rho0.as_ref(), &grid, mode)?;
    let metric = l2_metric(&grid, spec.problem.metric);
    let energy: Box<dyn DiscreteEnergy> = match spec.scheme {
        Scheme::Fp1d => Box::new(FokkerPlanckEnergy { grid: grid.clone(), problem: spec.problem_spec()? }),
        Scheme::Qdd1d => Box::new(SurrogateEnergy { which: Surrogate::Fisher, grid: grid.clone(), metric: metric.clone(), mode }),
        _ => Box::new(SurrogateEnergy { which: Surrogate::Dirichlet, grid: grid.clone(), metric: metric.clone(), mode }),
    };
    let traj = run_flow_from(t0, &init, &grid, energy.as_ref(), &metric, spec.dt(), spec.steps(), &spec.newton)?;

    // self-similar reference when the flow is a pure porous-medium flow from a Barenblatt profile
    let reference = match (init_cfg, spec.scheme, spec.problem.entropy) {
        (InitialConfig::Barenblatt { m, mass, .. }, Scheme::Fp1d, EntropyChoice::Power)
            if spec.problem.m == Some(*m) && spec.potential().is_none() && spec.interaction().is_none() && mode == BoundaryMode::Free =>
        {
            Some(Barenblatt::new(1, *m, *mass)?)
        }
        _ => None,
    };
    let ref_grid = MassGrid::uniform(2000);
    let w2_ref = |t: f64, rho: &PiecewiseConstantDensity| -> Result<f64> {
        let Some(b) = reference else { return Ok(f64::NAN) };
        let r = b.support_radius(t);
        let exact = idf_from_density(&FunctionDensity::new(move |x| b.density(t, &[x]), -r, r)?, &ref_grid, BoundaryMode::Free)?;
        Ok(wasserstein1d(rho, &density_from_state(&exact, &ref_grid)?))
    };

    #[derive(Serialize)]
    struct Row {
        step: usize,
        time: f64,
        energy: f64,
        h1: f64,
        w2_reference: f64,
        min_density: f64,
        max_density: f64,
        iterations: usize,
        residual: f64,
        substeps: usize,
    }
    let every = spec.discretization.record_every.unwrap_or(10.0).max(1.0) as usize;
    let mut rows = Vec::with_capacity(traj.states.len());
    let mut worst_mass = 0.0f64;
    let mut h1s = Vec::with_capacity(traj.states.len());
    for (n, (state, rec)) in traj.states.iter().zip(&traj.records).enumerate() {
        let rho = density_from_state(state, &grid)?;
        worst_mass = worst_mass.max((rho.mass() - 1.0).abs());
        let h1 = discrete_h1(state, &grid)?;
        h1s.push(h1);
        rows.push(Row {
            step: n,
            time: rec.time,
            energy: rec.energy,
            h1,
            w2_reference: w2_ref(rec.time, &rho)?,
            min_density: rec.min_density,
            max_density: rec.max_density,
            iterations: rec.iterations,
            residual: rec.residual,
            substeps: rec.substeps,
        });
        if n % every == 0 || n + 1 == traj.states.len() {
            let p = run.path(&format!("density_{n:06}.csv"));
            write_density_csv(&p, &rho)?;
            let p = run.path(&format!("state_{n:06}.csv"));
            write_state_csv(&p, &grid, state)?;
        }
    }
    let p = run.path("trajectory.csv");
    write_rows(&p, &rows)?;
    let p = run.path("final_state.json");
    write_json(&p, &StateJson::new(&grid, traj.final_state()))?;

    let tol = spec.checks.energy_tolerance;
    run.checks.push(energy_check(&traj.energies(), tol));
    if spec.scheme != Scheme::Fp1d {
        let c = match monotone_nonincreasing(&h1s, tol) {
            None => Check::new("h1_monotone", true, "discrete entropy nonincreasing".into()),
            Some(i) => Check::new("h1_monotone", false, format!("entropy rose at step {i}")),
        };
        run.checks.push(c);
    }
    run.checks.push(Check::new("mass", worst_mass <= spec.checks.mass_tolerance, format!("worst |mass - 1| = {worst_mass:.2e}")));
    let ordered = traj.states.iter().all(|s: &LagrangianState| s.positions().windows(2).all(|w| w[1] > w[0]));
    run.checks.push(Check::new("positions_increasing", ordered, "Lagrangian map strictly monotone at every step".into()));
    run.result("final_time", *traj.times.last().unwrap());
    run.result("final_energy", *traj.energies().last().unwrap());
    if let Some(last) = rows.last() {
        if last.w2_reference.is_finite() {
            run.result("final_w2_reference", last.w2_reference);
        }
    }
    Ok(())
}

fn run_blob(run: &mut Run) -> Result<()> {
    let spec = run.spec;
    let p = &spec.problem;
    let n = spec.discretization.particles.unwrap_or(1600);
    let side = (n as f64).sqrt().round() as usize;
    let sigma = match spec.initial {
        Some(InitialConfig::Gaussian { sigma, .. }) => sigma,
        None => 0.2,
        _ => return Err(Error::Config("blob initial data must be gaussian".into())),
    };
    let mass = p.mass.unwrap_or(1.0);
    let init = blob::gaussian_lattice(side, sigma, mass)?;
    let spacing = 6.0 * sigma / side as f64;
    let eps = p.epsilon.unwrap_or(p.epsilon_factor.unwrap_or(2.0) * spacing);
    let diffusion = match p.entropy {
        EntropyChoice::Xlogx => Diffusion::linear(),
        EntropyChoice::Power => Diffusion::power(p.m.unwrap_or(2.0))?,
        EntropyChoice::None => Diffusion::none(),
    };
    let problem = BlobProblem { diffusion, potential: spec.potential(), interaction: spec.interaction(), mollifier: MollifierSpec::new(eps)? };
    let t_end = spec.discretization.t_end.unwrap_or(spec.steps() as f64 * spec.dt());
    let cfg = IntegrateConfig {
        dt: spec.dt(),
        final_time: t_end,
        record_every: spec.discretization.record_every.unwrap_or(t_end / 100.0),
        ..IntegrateConfig::default()
    };
    let traj = blob::integrate(&init, &problem, &cfg)?;

    #[derive(Serialize)]
    struct Sample {
        time: f64,
        energy: f64,
        dissipation: f64,
        second_moment: f64,
        min_distance: f64,
        mass_within_radius: f64,
        dt: f64,
    }
    let rows: Vec<Sample> = traj
        .samples
        .iter()
        .map(|s| Sample {
            time: s.time,
            energy: s.energy,
            dissipation: s.dissipation,
            second_moment: s.metrics.second_moment,
            min_distance: s.metrics.min_distance,
            mass_within_radius: s.metrics.mass_within_radius,
            dt: s.dt,
        })
        .collect();
    let path = run.path("samples.csv");
    write_rows(&path, &rows)?;
    #[derive(Serialize)]
    struct Particle {
        id: usize,
        x: f64,
        y: f64,
        mass: f64,
    }
    for (i, (_, e)) in traj.snapshots.iter().enumerate() {
        let parts: Vec<Particle> =
            e.positions().iter().zip(e.masses()).enumerate().map(|(id, (p, m))| Particle { id, x: p[0], y: p[1], mass: *m }).collect();
        let path = run.path(&format!("particles_{i:05}.csv"));
        write_rows(&path, &parts)?;
    }
    let energies: Vec<f64> = traj.samples.iter().map(|s| s.energy).collect();
    run.checks.push(energy_check(&energies, spec.checks.energy_tolerance));
    let drift = (traj.final_state.total_mass() - mass).abs() / mass;
    run.checks.push(Check::new("mass", drift <= spec.checks.mass_tolerance, format!("relative mass drift {drift:.1e}")));
    run.result("epsilon", eps);
    run.result("final_time", traj.final_time);
    run.result("halted", serde_json::to_value(traj.halted)?);
    run.result("blow_up", traj.halted == Some(blob::HaltReason::BlowUp));
    run.result("steps", traj.steps);
    run.result("energy_rejections", traj.energy_rejections);
    Ok(())
}

fn run_ksfd(run: &mut Run) -> Result<()> {
    let spec = run.spec;
    let cfg = KSFDConfig {
        n: spec.discretization.n.unwrap_or(100),
        chi: spec.problem.chi.unwrap_or(0.0),
        dt: spec.dt(),
        newton: spec.newton,
        ..KSFDConfig::default()
    };
    let u = fdks::steady_state(&cfg)?;
    let factor = match spec.initial {
        Some(InitialConfig::Stretched { factor }) => factor,
        None => 2.0,
        _ => return Err(Error::Config("ksfd initial data must be `stretched`".into())),
    };
    let mut x = KSState::new(u.u.positions().iter().map(|v| factor * v).collect())?;
    let mut traj = vec![x.clone()];
    for _ in 0..spec.steps() {
        x = fdks::fdks_advance(&x, &cfg)?;
        traj.push(x.clone());
    }
    let report = fdks::contraction_report(&traj, &u, cfg.dt);
    let path = run.path("contraction.csv");
    write_rows(&path, &report.rows)?;
    #[derive(Serialize)]
    struct Node {
        node: usize,
        u: f64,
    }
    let nodes: Vec<Node> = u.u.positions().iter().enumerate().map(|(node, &u)| Node { node, u }).collect();
    let path = run.path("steady_state.csv");
    write_rows(&path, &nodes)?;
    if spec.checks.contraction_report {
        run.checks.push(Check::new(
            "contraction_bound",
            report.satisfied,
            format!("{} steps above the round-off floor {:.1e}", report.resolved_steps, report.floor),
        ));
        run.result("bound_satisfied", report.satisfied);
    }
    let gaps_ok = traj.iter().all(|s| s.min_gap() > 0.0);
    run.checks.push(Check::new("nodes_ordered", gaps_ok, "node order preserved at every step".into()));
    run.result("equilibrium_identity_defect", fdks::equilibrium_identity_defect(&u.u, &cfg));
    run.result("steady_state_residual", u.residual);
    Ok(())
}

fn run_pme2d(run: &mut Run) -> Result<()> {
    let spec = run.spec;
    let n = spec.discretization.n.unwrap_or(32);
    let m = spec.problem.m.unwrap_or(3.0);
    let (m0, t0, mass, floor) = match spec.initial {
        Some(InitialConfig::Barenblatt { m, t0, mass, floor }) => (m, t0, mass, floor.unwrap_or(0.01)),
        _ => return Err(Error::Config("pme2d initial data must be a barenblatt profile".into())),
    };
    let mesh = mesh2d::build_reference_mesh(n)?.with_mass(mass)?;
    let rho0 = mesh2d::corner_barenblatt(m0, mass, t0, floor * mass)?;
    let p0 = mesh2d::knothe_positions(&mesh, rho0, 2000)?;
    let entropy = spec.entropy()?;
    let cfg = mesh2d::Mesh2dConfig { newton: spec.newton, metric: spec.problem.metric, ..Default::default() };
    let every = spec.discretization.record_every.unwrap_or(10.0).max(1.0) as usize;
    let traj = mesh2d::run2d(&mesh, &p0, t0, spec.dt(), spec.steps(), &entropy, spec.potential().as_ref(), &cfg, every)?;

    #[derive(Serialize)]
    struct Row {
        time: f64,
        energy: f64,
        min_area: f64,
        iterations: usize,
    }
    let rows: Vec<Row> = (0..traj.times.len())
        .map(|i| Row { time: traj.times[i], energy: traj.energies[i], min_area: traj.min_areas[i], iterations: traj.iterations[i] })
        .collect();
    let path = run.path("energy.csv");
    write_rows(&path, &rows)?;
    #[derive(Serialize)]
    struct Node {
        id: usize,
        x: f64,
        y: f64,
    }
    #[derive(Serialize)]
    struct Element {
        k: usize,
        l: usize,
        m: usize,
        rho: f64,
    }
    let mut snaps = traj.snapshots.clone();
    if snaps.last().map(|s| s.0) != traj.times.last().copied() {
        snaps.push((*traj.times.last().unwrap(), traj.final_positions.clone()));
    }
    for (i, (_, pos)) in snaps.iter().enumerate() {
        let nodes: Vec<Node> = pos.positions().iter().enumerate().map(|(id, p)| Node { id, x: p[0], y: p[1] }).collect();
        let path = run.path(&format!("nodes_{i:05}.csv"));
        write_rows(&path, &nodes)?;
        let rho = mesh2d::triangle_densities(&mesh, pos)?;
        let elems: Vec<Element> = mesh.triangles().iter().zip(&rho).map(|(t, r)| Element { k: t[0], l: t[1], m: t[2], rho: *r }).collect();
        let path = run.path(&format!("elements_{i:05}.csv"));
        write_rows(&path, &elems)?;
    }
    run.checks.push(energy_check(&traj.energies, spec.checks.energy_tolerance));
    let min_area = traj.min_areas.iter().cloned().fold(f64::INFINITY, f64::min);
    run.checks.push(Check::new("no_inversion", min_area > 0.0, format!("smallest image area {min_area:.3e}")));
    run.result("min_area_series", traj.min_areas.clone());
    if m0 == m {
        let exact = Barenblatt::new(2, m, 4.0 * mass)?;
        let t = *traj.times.last().unwrap();
        run.result("l1_vs_barenblatt", mesh2d::l1_error(&mesh, &traj.final_positions, |x, y| exact.density(t, &[x, y]), 3)?);
        run.result("barenblatt_support_radius", exact.support_radius(t));
    }
    Ok(())
}

fn run_distance(run: &mut Run) -> Result<()> {
    let spec = run.spec;
    let d = spec.distance.as_ref().ok_or_else(|| Error::Config("missing [distance]".into()))?;
    let grid = MassGrid::uniform(d.resolution.max(1));
    let to_density = |c: &InitialConfig| -> Result<PiecewiseConstantDensity> {
        match c {
            InitialConfig::File { path } => read_density_csv(path),
            InitialConfig::Uniform { a, b } => PiecewiseConstantDensity::normalized(vec![*a, *b], vec![1.0]),
            other => {
                if let Some(pc) = as_piecewise(other, spec.seed)? {
                    return Ok(pc);
                }
                let (rho, _) = density_1d(other, spec.seed)?;
                density_from_state(&idf_from_density(rho.as_ref(), &grid, BoundaryMode::Free)?, &grid)
            }
        }
    };
    let a = to_density(&d.first)?;
    let b = to_density(&d.second)?;
    let w2 = wasserstein1d(&a, &b);
    let path = run.path("distance.json");
    write_json(&path, &serde_json::json!({ "w2": w2 }))?;
    run.result("w2", w2);
    Ok(())
}

/// Piecewise-constant initial data kept exact instead of being resampled.
fn as_piecewise(c: &InitialConfig, seed: u64) -> Result<Option<PiecewiseConstantDensity>> {
    if let InitialConfig::Random { pieces } = c {
        let mut rng = StdRng::seed_from_u64(seed);
        let n = (*pieces).max(1);
        let x = (0..=n).map(|i| i as f64 / n as f64).collect();
        let v = (0..n).map(|_| rng.random_range(0.2..2.0)).collect();
        return Ok(Some(PiecewiseConstantDensity::normalized(x, v)?));
    }
    Ok(None)
}

/// Loads a manifest written by [`run_experiment`].
pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    crate::io::read_json(&dir.join("manifest.json"))
}
