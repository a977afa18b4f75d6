//! Mass grids, monotone Lagrangian states and the inverse-distribution-function
//! picture of one-dimensional probability densities.
//!
//! A state `x_0 < ... < x_K` on a mass grid `0 = xi_0 < ... < xi_K = 1` is the
//! piecewise-linear map `X(xi_k) = x_k`; its push-forward of Lebesgue measure
//! is the piecewise-constant density `rho_k = delta_k / (x_k - x_{k-1})`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{solve_tridiagonal, SymMatrix};

const WEIGHT_SUM_TOL: f64 = 1e-12;
const MASS_TOL: f64 = 1e-12;

/// Partition of the reference interval `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassGrid {
    nodes: Vec<f64>,
}

impl MassGrid {
    /// Uniform partition with `k` cells, or the cumulative partition of `weights`.
    pub fn build(k: usize, weights: Option<&[f64]>) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("a mass grid needs at least one cell".into()));
        }
        match weights {
            None => Ok(Self::uniform(k)),
            Some(w) => {
                if w.len() != k {
                    return Err(Error::Mismatch(format!("{} weights for {} cells", w.len(), k)));
                }
                Self::from_weights(w)
            }
        }
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k > 0, "a mass grid needs at least one cell");
        let mut nodes: Vec<f64> = (0..=k).map(|i| i as f64 / k as f64).collect();
        nodes[k] = 1.0;
        MassGrid { nodes }
    }

    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidInput("a mass grid needs at least one cell".into()));
        }
        for (index, &value) in weights.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::NonPositiveWeight { index, value });
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::WeightSum { sum });
        }
        let mut nodes = Vec::with_capacity(weights.len() + 1);
        nodes.push(0.0);
        let mut acc = 0.0;
        for w in &weights[..weights.len() - 1] {
            acc += w;
            nodes.push(acc);
        }
        nodes.push(1.0);
        Self::from_nodes(nodes)
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidInput("a mass grid needs at least two nodes".into()));
        }
        if nodes[0] != 0.0 || *nodes.last().unwrap() != 1.0 {
            return Err(Error::InvalidInput("mass grid endpoints must be 0 and 1".into()));
        }
        if let Some(index) = first_non_increase(&nodes) {
            return Err(Error::NotMonotone { index });
        }
        Ok(MassGrid { nodes })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Number of cells `K`.
    pub fn cells(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Mass of cell `c` (zero-based, between nodes `c` and `c + 1`).
    #[inline]
    pub fn cell_mass(&self, c: usize) -> f64 {
        self.nodes[c + 1] - self.nodes[c]
    }

    pub fn cell_masses(&self) -> Vec<f64> {
        self.nodes.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Ratio of the largest to the smallest cell mass.
    pub fn mesh_ratio(&self) -> f64 {
        let m = self.cell_masses();
        let max = m.iter().cloned().fold(f64::MIN, f64::max);
        let min = m.iter().cloned().fold(f64::MAX, f64::min);
        max / min
    }
}

fn first_non_increase(v: &[f64]) -> Option<usize> {
    v.iter().position(|x| !x.is_finite()).or_else(|| v.windows(2).position(|w| !(w[1] > w[0])).map(|i| i + 1))
}

/// Whether the outermost nodes are held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    /// `x_0` and `x_K` never move.
    Pinned,
    /// All nodes are free (compactly supported data on the line).
    Free,
}

/// Strictly increasing node positions: the discrete inverse distribution function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagrangianState {
    positions: Vec<f64>,
    mode: BoundaryMode,
}

impl LagrangianState {
    pub fn new(positions: Vec<f64>, mode: BoundaryMode) -> Result<Self> {
        if positions.len() < 2 {
            return Err(Error::InvalidInput("a state needs at least two nodes".into()));
        }
        if let Some(index) = first_non_increase(&positions) {
            return Err(Error::NotMonotone { index });
        }
        Ok(LagrangianState { positions, mode })
    }

    /// Identity map `x_k = xi_k`.
    pub fn identity(grid: &MassGrid, mode: BoundaryMode) -> Self {
        LagrangianState { positions: grid.nodes().to_vec(), mode }
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn into_positions(self) -> Vec<f64> {
        self.positions
    }

    pub fn mode(&self) -> BoundaryMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Indices of the nodes that are allowed to move.
    pub fn free_indices(&self) -> Vec<usize> {
        free_indices(self.positions.len(), self.mode)
    }

    /// Same mode, new positions; keeps pinned endpoints bit-identical.
    pub fn with_positions(&self, mut positions: Vec<f64>) -> Result<Self> {
        if positions.len() != self.positions.len() {
            return Err(Error::Mismatch("position vector length".into()));
        }
        if self.mode == BoundaryMode::Pinned {
            let n = positions.len();
            positions[0] = self.positions[0];
            positions[n - 1] = self.positions[n - 1];
        }
        LagrangianState::new(positions, self.mode)
    }
}

pub(crate) fn free_indices(n: usize, mode: BoundaryMode) -> Vec<usize> {
    match mode {
        BoundaryMode::Pinned => (1..n - 1).collect(),
        BoundaryMode::Free => (0..n).collect(),
    }
}

/// Piecewise-constant probability density `sum_k rho_k 1_(b_{k-1}, b_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseConstantDensity {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseConstantDensity {
    /// Validating constructor: unit mass within `1e-12`.
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let d = Self::unchecked(breakpoints, values)?;
        let mass = d.mass();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidInput(format!("density mass {mass} differs from 1")));
        }
        Ok(d)
    }

    /// Rescales `values` to unit mass.
    pub fn normalized(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let mut d = Self::unchecked(breakpoints, values)?;
        let mass = d.mass();
        if !(mass > 0.0) {
            return Err(Error::ZeroMass);
        }
        d.values.iter_mut().for_each(|v| *v /= mass);
        Ok(d)
    }

    fn unchecked(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breakpoints.len() != values.len() + 1 || values.is_empty() {
            return Err(Error::Mismatch("need one more breakpoint than values".into()));
        }
        if let Some(index) = first_non_increase(&breakpoints) {
            return Err(Error::NotMonotone { index });
        }
        if let Some(i) = values.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput(format!("density value {i} is negative or not finite")));
        }
        Ok(PiecewiseConstantDensity { breakpoints, values })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mass(&self) -> f64 {
        self.cell_masses().iter().sum()
    }

    pub fn cell_masses(&self) -> Vec<f64> {
        self.values.iter().zip(self.breakpoints.windows(2)).map(|(v, w)| v * (w[1] - w[0])).collect()
    }

    pub fn support(&self) -> (f64, f64) {
        (self.breakpoints[0], *self.breakpoints.last().unwrap())
    }

    /// Density value at `x` (right-continuous; zero outside the breakpoints).
    pub fn eval(&self, x: f64) -> f64 {
        let b = &self.breakpoints;
        if x < b[0] || x >= *b.last().unwrap() {
            return 0.0;
        }
        let c = b.partition_point(|&p| p <= x) - 1;
        self.values[c.min(self.values.len() - 1)]
    }

    pub fn translated(&self, shift: f64) -> Self {
        PiecewiseConstantDensity {
            breakpoints: self.breakpoints.iter().map(|b| b + shift).collect(),
            values: self.values.clone(),
        }
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Exact `L^1` distance to another piecewise-constant density.
    pub fn l1_distance(&self, other: &Self) -> f64 {
        self.merged_integral(other, |a, b| (a - b).abs())
    }

    /// Exact `L^inf` distance (over open cells of the merged partition).
    pub fn linf_distance(&self, other: &Self) -> f64 {
        let mut pts: Vec<f64> = self.breakpoints.iter().chain(other.breakpoints.iter()).cloned().collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts.windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| {
                let m = 0.5 * (w[0] + w[1]);
                (self.eval(m) - other.eval(m)).abs()
            })
            .fold(0.0, f64::max)
    }

    fn merged_integral(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> f64 {
        let mut pts: Vec<f64> = self.breakpoints.iter().chain(other.breakpoints.iter()).cloned().collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts.windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| {
                let m = 0.5 * (w[0] + w[1]);
                f(self.eval(m), other.eval(m)) * (w[1] - w[0])
            })
            .sum()
    }

    /// Inverse distribution function as `(xi, x)` segments on which it is linear.
    fn idf_segments(&self) -> Vec<IdfSegment> {
        let total = self.mass();
        let mut segs = Vec::with_capacity(self.values.len());
        let mut xi = 0.0;
        for (c, &v) in self.values.iter().enumerate() {
            let (a, b) = (self.breakpoints[c], self.breakpoints[c + 1]);
            let m = v * (b - a) / total;
            if m > 0.0 {
                segs.push(IdfSegment { xi0: xi, xi1: xi + m, x0: a, x1: b });
                xi += m;
            }
        }
        if let Some(last) = segs.last_mut() {
            last.xi1 = 1.0;
        }
        segs
    }
}

#[derive(Debug, Clone, Copy)]
struct IdfSegment {
    xi0: f64,
    xi1: f64,
    x0: f64,
    x1: f64,
}

impl IdfSegment {
    #[inline]
    fn at(&self, xi: f64) -> f64 {
        let w = self.xi1 - self.xi0;
        if w <= 0.0 {
            return self.x0;
        }
        let t = ((xi - self.xi0) / w).clamp(0.0, 1.0);
        self.x0 + t * (self.x1 - self.x0)
    }
}

/// Push-forward density of a state: `rho_k = delta_k / (x_k - x_{k-1})`.
pub fn density_from_state(state: &LagrangianState, grid: &MassGrid) -> Result<PiecewiseConstantDensity> {
    let x = state.positions();
    if x.len() != grid.nodes().len() {
        return Err(Error::Mismatch(format!("{} positions on a grid with {} nodes", x.len(), grid.nodes().len())));
    }
    if let Some(index) = first_non_increase(x) {
        return Err(Error::NotMonotone { index });
    }
    let values = (0..grid.cells()).map(|c| grid.cell_mass(c) / (x[c + 1] - x[c])).collect();
    Ok(PiecewiseConstantDensity { breakpoints: x.to_vec(), values })
}

/// A density given by its cumulative distribution function on an interval.
pub trait Distribution1d {
    /// Interval carrying all the mass.
    fn interval(&self) -> (f64, f64);
    /// Unnormalized cumulative mass `int_a^x rho`.
    fn cumulative(&self, x: f64) -> f64;
    fn total_mass(&self) -> f64 {
        self.cumulative(self.interval().1)
    }
}

impl Distribution1d for PiecewiseConstantDensity {
    fn interval(&self) -> (f64, f64) {
        self.support()
    }

    fn cumulative(&self, x: f64) -> f64 {
        let b = &self.breakpoints;
        let mut acc = 0.0;
        for (c, &v) in self.values.iter().enumerate() {
            if x <= b[c] {
                break;
            }
            acc += v * (x.min(b[c + 1]) - b[c]);
        }
        acc
    }
}

/// Integrable nonnegative function on `[a, b]`; the cumulative distribution is
/// tabulated once with composite 5-point Gauss-Legendre quadrature.
pub struct FunctionDensity<F: Fn(f64) -> f64> {
    f: F,
    a: f64,
    b: f64,
    table: Vec<f64>,
}

const GL5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

pub(crate) fn gauss_legendre(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let h = 0.5 * (b - a);
    let m = 0.5 * (a + b);
    GL5_NODES.iter().zip(GL5_WEIGHTS.iter()).map(|(t, w)| w * f(m + h * t)).sum::<f64>() * h
}

impl<F: Fn(f64) -> f64> FunctionDensity<F> {
    pub fn new(f: F, a: f64, b: f64) -> Result<Self> {
        Self::with_resolution(f, a, b, 2048)
    }

    pub fn with_resolution(f: F, a: f64, b: f64, panels: usize) -> Result<Self> {
        if !(b > a) {
            return Err(Error::InvalidInput("density interval must have positive length".into()));
        }
        let h = (b - a) / panels as f64;
        let mut table = Vec::with_capacity(panels + 1);
        table.push(0.0);
        let mut acc = 0.0;
        for j in 0..panels {
            let lo = a + j as f64 * h;
            let hi = if j + 1 == panels { b } else { lo + h };
            let piece = gauss_legendre(&f, lo, hi);
            if piece < 0.0 || !piece.is_finite() {
                return Err(Error::InvalidInput(format!("density is negative or not finite near x = {lo}")));
            }
            acc += piece;
            table.push(acc);
        }
        Ok(FunctionDensity { f, a, b, table })
    }
}

impl<F: Fn(f64) -> f64> Distribution1d for FunctionDensity<F> {
    fn interval(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    fn cumulative(&self, x: f64) -> f64 {
        if x <= self.a {
            return 0.0;
        }
        if x >= self.b {
            return *self.table.last().unwrap();
        }
        let panels = self.table.len() - 1;
        let h = (self.b - self.a) / panels as f64;
        let j = (((x - self.a) / h) as usize).min(panels - 1);
        let lo = self.a + j as f64 * h;
        self.table[j] + if x > lo { gauss_legendre(&self.f, lo, x) } else { 0.0 }
    }

    fn total_mass(&self) -> f64 {
        *self.table.last().unwrap()
    }
}

/// Smallest `x` with `F(x) >= level` (or the largest with `F(x) <= level` when `upper`).
fn bisect_level(dist: &dyn Distribution1d, level: f64, upper: bool) -> f64 {
    let (mut lo, mut hi) = dist.interval();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f = dist.cumulative(mid);
        let go_right = if upper { f <= level } else { f < level };
        if go_right {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if upper {
        lo
    } else {
        hi
    }
}

/// Inverse distribution function of `density` sampled at the grid nodes.
///
/// Interior nodes get `X(xi) = inf {x : F(x) >= xi}`; the end nodes are the
/// edges of the support, so the state is strictly increasing on the support.
pub fn idf_from_density(density: &dyn Distribution1d, grid: &MassGrid, mode: BoundaryMode) -> Result<LagrangianState> {
    let total = density.total_mass();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::ZeroMass);
    }
    let (a, b) = density.interval();
    let width = b - a;
    let gap_tol = 1e-9 * width;
    let xi = grid.nodes();
    let k = grid.cells();
    let mut x = Vec::with_capacity(k + 1);
    x.push(bisect_level(density, 0.0, true));
    for (index, &level) in xi.iter().enumerate().take(k).skip(1) {
        let target = level * total;
        let lo = bisect_level(density, target, false);
        let hi = bisect_level(density, target, true);
        if hi - lo > gap_tol {
            return Err(Error::DensityGap { index, xi: level });
        }
        x.push(lo);
    }
    x.push(bisect_level(density, total, false));
    LagrangianState::new(x, mode)
}

/// Exact `W_2` distance between two piecewise-constant densities on the line.
///
/// Both inverse distribution functions are piecewise linear in `xi`; the
/// squared difference is integrated in closed form on the merged partition.
pub fn wasserstein1d(rho: &PiecewiseConstantDensity, eta: &PiecewiseConstantDensity) -> f64 {
    let sa = rho.idf_segments();
    let sb = eta.idf_segments();
    let mut cuts: Vec<f64> = sa.iter().chain(sb.iter()).flat_map(|s| [s.xi0, s.xi1]).collect();
    cuts.push(0.0);
    cuts.push(1.0);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut acc = 0.0;
    for w in cuts.windows(2) {
        let (u, v) = (w[0], w[1]);
        if !(v > u) {
            continue;
        }
        let mid = 0.5 * (u + v);
        while ia + 1 < sa.len() && sa[ia].xi1 <= mid {
            ia += 1;
        }
        while ib + 1 < sb.len() && sb[ib].xi1 <= mid {
            ib += 1;
        }
        let d0 = sa[ia].at(u) - sb[ib].at(u);
        let d1 = sa[ia].at(v) - sb[ib].at(v);
        acc += (v - u) * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0;
    }
    acc.max(0.0).sqrt()
}

/// Storage form of the `L^2(0,1)` Gram matrix of the hat functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MetricForm {
    Full,
    #[default]
    Lumped,
}

/// `A_xi`: the Gram matrix of the hat functions on a mass grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricMatrix {
    form: MetricForm,
    diag: Vec<f64>,
    /// Empty for the lumped form.
    off: Vec<f64>,
}

/// Builds the full tridiagonal or the lumped (row-sum) metric on `grid`.
pub fn l2_metric(grid: &MassGrid, form: MetricForm) -> MetricMatrix {
    let m = grid.cell_masses();
    let n = m.len() + 1;
    let left = |i: usize| if i == 0 { 0.0 } else { m[i - 1] };
    let right = |i: usize| if i + 1 == n { 0.0 } else { m[i] };
    match form {
        MetricForm::Full => MetricMatrix {
            form,
            diag: (0..n).map(|i| (left(i) + right(i)) / 3.0).collect(),
            off: m.iter().map(|d| d / 6.0).collect(),
        },
        MetricForm::Lumped => MetricMatrix {
            form,
            diag: (0..n).map(|i| (left(i) + right(i)) / 2.0).collect(),
            off: Vec::new(),
        },
    }
}

impl MetricMatrix {
    pub fn form(&self) -> MetricForm {
        self.form
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// Off-diagonal entries `(i, i+1)`; zeros for the lumped form.
    pub fn off_diag(&self) -> Vec<f64> {
        if self.off.is_empty() {
            vec![0.0; self.diag.len() - 1]
        } else {
            self.off.clone()
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.diag[i]
        } else if self.off.is_empty() {
            0.0
        } else if i + 1 == j {
            self.off[i]
        } else if j + 1 == i {
            self.off[j]
        } else {
            0.0
        }
    }

    pub fn as_sym(&self) -> SymMatrix {
        SymMatrix::Tridiagonal { diag: self.diag.clone(), off: self.off_diag() }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.as_sym().mul_vec(v)
    }

    /// `u^T A v`.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        let n = self.diag.len();
        let mut acc = 0.0;
        for i in 0..n {
            acc += u[i] * self.diag[i] * v[i];
        }
        if !self.off.is_empty() {
            for i in 0..n - 1 {
                acc += self.off[i] * (u[i] * v[i + 1] + u[i + 1] * v[i]);
            }
        }
        acc
    }

    pub fn norm_sq(&self, v: &[f64]) -> f64 {
        self.inner(v, v)
    }

    /// Solves `A g = rhs` on the index set `free` (contiguous), leaving the
    /// other components of `g` at zero.
    pub fn solve_on(&self, rhs: &[f64], free: &[usize]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.diag.len()];
        if free.is_empty() {
            return Ok(g);
        }
        let d: Vec<f64> = free.iter().map(|&i| self.diag[i]).collect();
        let r: Vec<f64> = free.iter().map(|&i| rhs[i]).collect();
        let sol = if self.off.is_empty() {
            r.iter().zip(&d).map(|(a, b)| a / b).collect()
        } else {
            let o: Vec<f64> = free.windows(2).map(|w| self.off[w[0]]).collect();
            solve_tridiagonal(&o, &d, &o, &r)?
        };
        for (k, &i) in free.iter().enumerate() {
            g[i] = sol[k];
        }
        Ok(g)
    }
}
