//! C ABI for `gradflow`.
//!
//! Objects cross the boundary as opaque handles created by `gf_*_new`-style
//! functions and released with the matching `gf_*_free`. Every fallible call
//! returns a [`GfStatus`]; on failure the message is available from
//! [`gf_last_error`]. Output pointers are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gradflow::blob::{self, BlobProblem, HaltReason, IntegrateConfig};
use gradflow::fdks::{self, KSFDConfig};
use gradflow::functionals::{EntropySpec, FokkerPlanckEnergy, PotentialSpec, ProblemSpec};
use gradflow::jko1d::{run_flow_from, FlowTrajectory, NewtonConfig};
use gradflow::lagrangian::{
    density_from_state, idf_from_density, l2_metric, wasserstein1d, BoundaryMode, LagrangianState, MassGrid, MetricForm,
    PiecewiseConstantDensity,
};
use gradflow::mesh2d;
use gradflow::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    NotMonotone = 3,
    Degenerate = 4,
    SolverFailure = 5,
    BufferTooSmall = 6,
    Io = 7,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GfEntropy {
    /// `h(r) = r log r`
    Xlogx = 0,
    /// `h(r) = r^m / (m - 1)`
    Power = 1,
    None = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GfHalt {
    Completed = 0,
    BlowUp = 1,
    StepUnderflow = 2,
    NonFinite = 3,
}

pub struct GfGrid(MassGrid);
pub struct GfDensity(PiecewiseConstantDensity);
pub struct GfState(LagrangianState);
pub struct GfTrajectory(FlowTrajectory);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> GfStatus {
    match e {
        Error::NotMonotone { .. } => GfStatus::NotMonotone,
        Error::DegenerateCell { .. } | Error::InvertedTriangle { .. } | Error::ZeroMass | Error::DensityGap { .. } => GfStatus::Degenerate,
        Error::NewtonFailure { .. } | Error::LineSearch(_) | Error::DecreaseViolated { .. } | Error::Singular | Error::NonFinite(_) => {
            GfStatus::SolverFailure
        }
        Error::Io(_) => GfStatus::Io,
        _ => GfStatus::InvalidInput,
    }
}

fn guard(f: impl FnOnce() -> Result<(), GfStatus>) -> GfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GfStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            GfStatus::Panic
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, GfStatus>;
}

impl<T> OrStatus<T> for gradflow::Result<T> {
    fn or_status(self) -> Result<T, GfStatus> {
        self.map_err(|e| {
            set_error(&e.to_string());
            status_of(&e)
        })
    }
}

unsafe fn slice<'a>(p: *const f64, n: usize) -> Result<&'a [f64], GfStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        set_error("null array");
        return Err(GfStatus::NullPointer);
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, GfStatus> {
    p.as_ref().ok_or_else(|| {
        set_error("null handle");
        GfStatus::NullPointer
    })
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), GfStatus> {
    if out.is_null() {
        set_error("null output pointer");
        return Err(GfStatus::NullPointer);
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put<T>(out: *mut T, value: T) -> Result<(), GfStatus> {
    if out.is_null() {
        set_error("null output pointer");
        return Err(GfStatus::NullPointer);
    }
    *out = value;
    Ok(())
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, cap: usize) -> Result<(), GfStatus> {
    if cap < src.len() {
        set_error(&format!("buffer holds {cap} values, {} needed", src.len()));
        return Err(GfStatus::BufferTooSmall);
    }
    if buf.is_null() {
        set_error("null buffer");
        return Err(GfStatus::NullPointer);
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `cap`) and returns its full length in bytes.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn gf_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let bytes = e.borrow();
        let bytes = bytes.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Uniform mass grid with `k` cells.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gf_grid_uniform(k: usize, out: *mut *mut GfGrid) -> GfStatus {
    guard(|| {
        if k == 0 {
            set_error("a grid needs at least one cell");
            return Err(GfStatus::InvalidInput);
        }
        emit(out, GfGrid(MassGrid::uniform(k)))
    })
}

/// Grid from `n` positive cell masses summing to 1.
///
/// # Safety
/// `weights` must point to `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gf_grid_from_weights(weights: *const f64, n: usize, out: *mut *mut GfGrid) -> GfStatus {
    guard(|| {
        let w = slice(weights, n)?;
        emit(out, GfGrid(MassGrid::from_weights(w).or_status()?))
    })
}

/// Number of cells.
///
/// # Safety
/// `grid` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn gf_grid_cells(grid: *const GfGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.0.cells())
}

/// # Safety
/// `grid` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gf_grid_free(grid: *mut GfGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Piecewise-constant density: `nv` values on `nv + 1` increasing breakpoints.
/// With `normalize` the values are rescaled to unit mass, otherwise the mass must be 1.
///
/// # Safety
/// Arrays must hold the stated number of values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gf_density_new(
    breakpoints: *const f64,
    nb: usize,
    values: *const f64,
    nv: usize,
    normalize: bool,
    out: *mut *mut GfDensity,
) -> GfStatus {
    guard(|| {
        let b = slice(breakpoints, nb)?.to_vec();
        let v = slice(values, nv)?.to_vec();
        let d = if normalize { PiecewiseConstantDensity::normalized(b, v) } else { PiecewiseConstantDensity::new(b, v) };
        emit(out, GfDensity(d.or_status()?))
    })
}

/// # Safety
/// `density` must be a live handle; `mass` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gf_density_mass(density: *const GfDensity, mass: *mut f64) -> GfStatus {
    guard(|| put(mass, handle(density)?.0.mass()))
}

/// Number of cells of the density.
///
/// # Safety
/// `density` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn gf_density_cells(density: *const GfDensity) -> usize {
    density.as_ref().map_or(0, |d| d.0.values().len())
}

/// Copies the breakpoints (`cells + 1` values) and values (`cells`) out.
///
/// # Safety
/// Buffers must hold `cap_b` and `cap_v` values.
#[no_mangle]
pub unsafe extern "C" fn gf_density_data(density: *const GfDensity, breakpoints: *mut f64, cap_b: usize, values: *mut f64, cap_v: usize) -> GfStatus {
    guard(|| {
        let d = &handle(density)?.0;
        copy_out(d.breakpoints(), breakpoints, cap_b)?;
        copy_out(d.values(), values, cap_v)
    })
}

/// # Safety
/// `density` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gf_density_free(density: *mut GfDensity) {
    if !density.is_null() {
        drop(Box::from_raw(density));
    }
}

/// Exact quadratic Wasserstein distance between two 1D densities.
///
/// # Safety
/// Handles must be live; `w2` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gf_wasserstein1d(a: *const GfDensity, b: *const GfDensity, w2: *mut f64) -> GfStatus {
    guard(|| put(w2, wasserstein1d(&handle(a)?.0, &handle(b)?.0)))
}

fn mode(free_boundary: bool) -> BoundaryMode {
    if free_boundary {
        BoundaryMode::Free
    } else {
        BoundaryMode::Pinned
    }
}

/// Lagrangian state (inverse distribution function) of `density` on `grid`.
///
/// # Safety
/// Handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gf_state_from_density(density: *const GfDensity, grid: *const GfGrid, free_boundary: bool, out: *mut *mut GfState) -> GfStatus {
    guard(|| {
        let s = idf_from_density(&handle(density)?.0, &handle(grid)?.0, mode(free_boundary)).or_status()?;
        emit(out, GfState(s))
    })
}

/// State from `n` strictly increasing positions.
///
/// # Safety
/// `positions` must hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gf_state_new(positions: *const f64, n: usize, free_boundary: bool, out: *mut *mut GfState) -> GfStatus {
    guard(|| {
        let x = slice(positions, n)?.to_vec();
        emit(out, GfState(LagrangianState::new(x, mode(free_boundary)).or_status()?))
    })
}

/// Number of nodes.
///
/// # Safety
/// `state` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn gf_state_len(state: *const GfState) -> usize {
    state.as_ref().map_or(0, |s| s.0.len())
}

/// # Safety
/// `buf` must hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn gf_state_positions(state: *const GfState, buf: *mut f64, cap: usize) -> GfStatus {
    guard(|| copy_out(handle(state)?.0.positions(), buf, cap))
}

/// Density represented by a state on `grid`.
///
/// # Safety
/// Handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gf_state_density(state: *const GfState, grid: *const GfGrid, out: *mut *mut GfDensity) -> GfStatus {
    guard(|| emit(out, GfDensity(density_from_state(&handle(state)?.0, &handle(grid)?.0).or_status()?)))
}

/// # Safety
/// `state` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gf_state_free(state: *mut GfState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// Runs `steps` implicit steps of the 1D Fokker-Planck flow with entropy `entropy`
/// (exponent `m` for the power case) and potential `V(x) = a x^2`, clock starting at `t0`.
///
/// # Safety
/// Handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gf_flow_fokker_planck(
    grid: *const GfGrid,
    initial: *const GfState,
    entropy: GfEntropy,
    m: f64,
    potential_a: f64,
    t0: f64,
    dt: f64,
    steps: usize,
    out: *mut *mut GfTrajectory,
) -> GfStatus {
    guard(|| {
        let grid = &handle(grid)?.0;
        let initial = &handle(initial)?.0;
        let e = match entropy {
            GfEntropy::Xlogx => Some(EntropySpec::boltzmann()),
            GfEntropy::Power => Some(EntropySpec::power(m).or_status()?),
            GfEntropy::None => None,
        };
        let v = (potential_a != 0.0).then(|| PotentialSpec::quadratic(potential_a));
        let problem = ProblemSpec::new(e, v, None).or_status()?;
        let energy = FokkerPlanckEnergy { grid: grid.clone(), problem };
        let metric = l2_metric(grid, MetricForm::Lumped);
        let traj = run_flow_from(t0, initial, grid, &energy, &metric, dt, steps, &NewtonConfig::default()).or_status()?;
        emit(out, GfTrajectory(traj))
    })
}

/// Number of stored states (steps + 1).
///
/// # Safety
/// `traj` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn gf_trajectory_len(traj: *const GfTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.0.states.len())
}

/// Time and discrete energy of state `i`.
///
/// # Safety
/// `traj` must be live; outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn gf_trajectory_sample(traj: *const GfTrajectory, i: usize, time: *mut f64, energy: *mut f64) -> GfStatus {
    guard(|| {
        let t = &handle(traj)?.0;
        let rec = t.records.get(i).ok_or_else(|| {
            set_error(&format!("index {i} out of range"));
            GfStatus::InvalidInput
        })?;
        put(time, rec.time)?;
        put(energy, rec.energy)
    })
}

/// Copy of state `i` as a new handle.
///
/// # Safety
/// `traj` must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gf_trajectory_state(traj: *const GfTrajectory, i: usize, out: *mut *mut GfState) -> GfStatus {
    guard(|| {
        let t = &handle(traj)?.0;
        let s = t.states.get(i).ok_or_else(|| {
            set_error(&format!("index {i} out of range"));
            GfStatus::InvalidInput
        })?;
        emit(out, GfState(s.clone()))
    })
}

/// # Safety
/// `traj` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gf_trajectory_free(traj: *mut GfTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Steady state of the finite-difference Keller-Segel scheme with `n` intervals
/// and strength `chi`, written as `n + 1` node positions.
///
/// # Safety
/// `buf` must hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn gf_ksfd_steady_state(n: usize, chi: f64, buf: *mut f64, cap: usize) -> GfStatus {
    guard(|| {
        let cfg = KSFDConfig { n, chi, ..KSFDConfig::default() };
        let u = fdks::steady_state(&cfg).or_status()?;
        copy_out(u.u.positions(), buf, cap)
    })
}

/// Keller-Segel blob run from an `n_side x n_side` Gaussian lattice of width
/// `sigma` and total mass `mass`, blob radius `eps`, up to `t_end`.
///
/// # Safety
/// Outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn gf_blob_keller_segel(
    n_side: usize,
    sigma: f64,
    mass: f64,
    eps: f64,
    dt: f64,
    t_end: f64,
    halt: *mut GfHalt,
    final_time: *mut f64,
    second_moment: *mut f64,
) -> GfStatus {
    guard(|| {
        let init = blob::gaussian_lattice(n_side, sigma, mass).or_status()?;
        let problem = BlobProblem::keller_segel(eps).or_status()?;
        let cfg = IntegrateConfig { dt, final_time: t_end, record_every: t_end, ..IntegrateConfig::default() };
        let traj = blob::integrate(&init, &problem, &cfg).or_status()?;
        let h = match traj.halted {
            None => GfHalt::Completed,
            Some(HaltReason::BlowUp) => GfHalt::BlowUp,
            Some(HaltReason::StepUnderflow) => GfHalt::StepUnderflow,
            Some(HaltReason::NonFinite) => GfHalt::NonFinite,
        };
        put(halt, h)?;
        put(final_time, traj.final_time)?;
        put(second_moment, blob::concentration_metrics(&traj.final_state, 0.0).second_moment)
    })
}

/// Porous-medium flow `d_t rho = Delta rho^m` on an `n x n` moving mesh of the
/// unit square, from a corner Barenblatt profile at `t0`; reports the final
/// energy and the smallest image triangle area seen.
///
/// # Safety
/// Outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn gf_pme2d(n: usize, m: f64, t0: f64, dt: f64, steps: usize, final_energy: *mut f64, min_area: *mut f64) -> GfStatus {
    guard(|| {
        let mesh = mesh2d::build_reference_mesh(n).or_status()?;
        let rho0 = mesh2d::corner_barenblatt(m, 1.0, t0, 0.01).or_status()?;
        let p0 = mesh2d::knothe_positions(&mesh, rho0, 2000).or_status()?;
        let entropy = EntropySpec::power(m).or_status()?;
        let traj = mesh2d::run2d(&mesh, &p0, t0, dt, steps, &entropy, None, &mesh2d::Mesh2dConfig::default(), 0).or_status()?;
        put(final_energy, *traj.energies.last().unwrap())?;
        put(min_area, traj.min_areas.iter().cloned().fold(f64::INFINITY, f64::min))
    })
}
