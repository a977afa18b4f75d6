//! Discrete energies on one-dimensional Lagrangian states.
//!
//! With cell masses `delta_k` and stretches `s_k = (x_k - x_{k-1}) / delta_k`,
//! the entropy/potential/interaction energy reads
//!
//! ```text
//! E(x) = sum_k delta_k [ h#(s_k) + V(m_k) ] + 1/2 sum_{k,l} delta_k delta_l W(m_k - m_l)
//! ```
//!
//! where `h#(s) = s h(1/s)` and `m_k` is the midpoint of cell `k`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lagrangian::{free_indices, BoundaryMode, LagrangianState, MassGrid, MetricMatrix};
use crate::linalg::SymMatrix;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type FieldFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Entropy density `h` with its first two derivatives.
#[derive(Clone)]
pub struct EntropySpec {
    name: String,
    h: ScalarFn,
    h_prime: ScalarFn,
    h_second: ScalarFn,
    mccann: bool,
}

impl fmt::Debug for EntropySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EntropySpec").field("name", &self.name).field("mccann", &self.mccann).finish()
    }
}

impl EntropySpec {
    /// `h(r) = r log r` (linear diffusion).
    pub fn boltzmann() -> Self {
        EntropySpec {
            name: "xlogx".into(),
            h: Arc::new(|r| if r > 0.0 { r * r.ln() } else { 0.0 }),
            h_prime: Arc::new(|r| r.ln() + 1.0),
            h_second: Arc::new(|r| 1.0 / r),
            mccann: true,
        }
    }

    /// `h(r) = r^m / (m - 1)`, the porous-medium entropy with `Phi(r) = r^m`.
    pub fn power(m: f64) -> Result<Self> {
        if !(m > 1.0) || !m.is_finite() {
            return Err(Error::InvalidInput(format!("power entropy needs m > 1, got {m}")));
        }
        let c = 1.0 / (m - 1.0);
        Ok(EntropySpec {
            name: format!("power{m}"),
            h: Arc::new(move |r| c * r.powf(m)),
            h_prime: Arc::new(move |r| c * m * r.powf(m - 1.0)),
            h_second: Arc::new(move |r| m * r.powf(m - 2.0)),
            mccann: true,
        })
    }

    pub fn zero() -> Self {
        EntropySpec {
            name: "zero".into(),
            h: Arc::new(|_| 0.0),
            h_prime: Arc::new(|_| 0.0),
            h_second: Arc::new(|_| 0.0),
            mccann: true,
        }
    }

    pub fn custom(
        name: impl Into<String>,
        h: impl Fn(f64) -> f64 + Send + Sync + 'static,
        h_prime: impl Fn(f64) -> f64 + Send + Sync + 'static,
        h_second: impl Fn(f64) -> f64 + Send + Sync + 'static,
        mccann: bool,
    ) -> Self {
        EntropySpec { name: name.into(), h: Arc::new(h), h_prime: Arc::new(h_prime), h_second: Arc::new(h_second), mccann }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn mccann(&self) -> bool {
        self.mccann
    }

    pub fn h(&self, r: f64) -> f64 {
        (self.h)(r)
    }

    pub fn h_prime(&self, r: f64) -> f64 {
        (self.h_prime)(r)
    }

    pub fn h_second(&self, r: f64) -> f64 {
        (self.h_second)(r)
    }

    /// Pressure `Phi(r) = r h'(r) - h(r)`, so that `Phi'(r) = r h''(r)`.
    pub fn phi(&self, r: f64) -> f64 {
        r * self.h_prime(r) - self.h(r)
    }

    pub fn phi_prime(&self, r: f64) -> f64 {
        r * self.h_second(r)
    }

    /// Samples convexity of `h` and, when flagged, the McCann conditions in 1D.
    pub fn check_invariants(&self, probes: &[f64]) -> Result<()> {
        for &r in probes {
            if self.h_second(r) < -1e-10 {
                return Err(Error::InvalidInput(format!("h is not convex at r = {r}")));
            }
        }
        if self.mccann {
            if self.h(0.0).abs() > 1e-12 {
                return Err(Error::InvalidInput("McCann flag set but h(0) != 0".into()));
            }
            for &s in probes {
                let (_, d1, d2) = hsharp(self, s)?;
                if d2 < -1e-10 || d1 > 1e-10 {
                    return Err(Error::InvalidInput(format!("s h(1/s) is not convex and non-increasing at s = {s}")));
                }
            }
        }
        Ok(())
    }
}

/// External potential `V` on `R^d`.
#[derive(Clone)]
pub struct PotentialSpec {
    name: String,
    v: FieldFn,
    grad: VectorFn,
    hess: Option<VectorFn>,
    lambda: f64,
}

impl fmt::Debug for PotentialSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PotentialSpec").field("name", &self.name).field("lambda", &self.lambda).finish()
    }
}

impl PotentialSpec {
    /// `V(x) = a |x|^2`, convex of modulus `2a`.
    pub fn quadratic(a: f64) -> Self {
        PotentialSpec {
            name: format!("quadratic{a}"),
            v: Arc::new(move |x| a * x.iter().map(|c| c * c).sum::<f64>()),
            grad: Arc::new(move |x, g| g.iter_mut().zip(x).for_each(|(g, c)| *g = 2.0 * a * c)),
            hess: Some(Arc::new(move |x, h| {
                let d = x.len();
                h.iter_mut().for_each(|e| *e = 0.0);
                for i in 0..d {
                    h[i * d + i] = 2.0 * a;
                }
            })),
            lambda: 2.0 * a,
        }
    }

    /// `V(x) = x_axis` (a constant force).
    pub fn linear(axis: usize, slope: f64) -> Self {
        PotentialSpec {
            name: format!("linear{axis}"),
            v: Arc::new(move |x| slope * x[axis]),
            grad: Arc::new(move |_, g| {
                g.iter_mut().for_each(|e| *e = 0.0);
                g[axis] = slope;
            }),
            hess: Some(Arc::new(|_, h| h.iter_mut().for_each(|e| *e = 0.0))),
            lambda: 0.0,
        }
    }

    /// One-dimensional polynomial `sum_j c_j x^j`; `lambda` is the infimum of `V''`
    /// over the real line when the degree is at most 2, and `-inf` otherwise.
    pub fn polynomial(coeffs: Vec<f64>) -> Self {
        let c1 = coeffs.clone();
        let c2 = coeffs.clone();
        let c3 = coeffs.clone();
        let lambda = match coeffs.len() {
            0..=2 => 0.0,
            3 => 2.0 * coeffs[2],
            _ if coeffs[3..].iter().all(|c| *c == 0.0) => 2.0 * coeffs[2],
            _ => f64::NEG_INFINITY,
        };
        PotentialSpec {
            name: "polynomial".into(),
            v: Arc::new(move |x| c1.iter().rev().fold(0.0, |acc, c| acc * x[0] + c)),
            grad: Arc::new(move |x, g| {
                g[0] = c2.iter().enumerate().skip(1).rev().fold(0.0, |acc, (j, c)| acc * x[0] + j as f64 * c);
            }),
            hess: Some(Arc::new(move |x, h| {
                h[0] = c3
                    .iter()
                    .enumerate()
                    .skip(2)
                    .rev()
                    .fold(0.0, |acc, (j, c)| acc * x[0] + (j * (j - 1)) as f64 * c);
            })),
            lambda,
        }
    }

    pub fn custom(
        name: impl Into<String>,
        v: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        hess: Option<VectorFn>,
        lambda: f64,
    ) -> Self {
        PotentialSpec { name: name.into(), v: Arc::new(v), grad: Arc::new(grad), hess, lambda }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.v)(x)
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        (self.grad)(x, out)
    }

    /// Hessian (row-major `d x d`); central differences of the gradient when
    /// no closed form was supplied.
    pub fn hessian(&self, x: &[f64], out: &mut [f64]) {
        if let Some(h) = &self.hess {
            return h(x, out);
        }
        let d = x.len();
        let mut xp = x.to_vec();
        let mut gp = vec![0.0; d];
        let mut gm = vec![0.0; d];
        for j in 0..d {
            let step = 1e-5 * (1.0 + x[j].abs());
            xp[j] = x[j] + step;
            self.gradient(&xp, &mut gp);
            xp[j] = x[j] - step;
            self.gradient(&xp, &mut gm);
            xp[j] = x[j];
            for i in 0..d {
                out[i * d + j] = (gp[i] - gm[i]) / (2.0 * step);
            }
        }
    }

    /// Central-difference check of the gradient at the probe points.
    pub fn check_invariants(&self, probes: &[Vec<f64>]) -> Result<()> {
        for p in probes {
            let d = p.len();
            let mut g = vec![0.0; d];
            self.gradient(p, &mut g);
            let mut q = p.clone();
            for j in 0..d {
                let h = 1e-5 * (1.0 + p[j].abs());
                q[j] = p[j] + h;
                let vp = self.value(&q);
                q[j] = p[j] - h;
                let vm = self.value(&q);
                q[j] = p[j];
                let fd = (vp - vm) / (2.0 * h);
                if (fd - g[j]).abs() > 1e-6 * (1.0 + g[j].abs()) {
                    return Err(Error::InvalidInput(format!("potential gradient mismatch at {p:?}")));
                }
            }
        }
        Ok(())
    }
}

/// Pair interaction potential `W(z)`.
#[derive(Clone)]
pub struct InteractionSpec {
    name: String,
    w: FieldFn,
    grad: VectorFn,
    hess: Option<VectorFn>,
    even: bool,
    convex: bool,
    singular_at_zero: bool,
}

impl fmt::Debug for InteractionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InteractionSpec").field("name", &self.name).field("even", &self.even).finish()
    }
}

impl InteractionSpec {
    /// `W(z) = a |z|^2`.
    pub fn quadratic(a: f64) -> Self {
        InteractionSpec {
            name: format!("quadratic{a}"),
            w: Arc::new(move |z| a * z.iter().map(|c| c * c).sum::<f64>()),
            grad: Arc::new(move |z, g| g.iter_mut().zip(z).for_each(|(g, c)| *g = 2.0 * a * c)),
            hess: Some(Arc::new(move |z, h| {
                let d = z.len();
                h.iter_mut().for_each(|e| *e = 0.0);
                for i in 0..d {
                    h[i * d + i] = 2.0 * a;
                }
            })),
            even: true,
            convex: a >= 0.0,
            singular_at_zero: false,
        }
    }

    /// `W(z) = c log|z|`: attractive for `c > 0`, repulsive for `c < 0`.
    pub fn logarithmic(c: f64) -> Self {
        InteractionSpec {
            name: format!("log{c}"),
            w: Arc::new(move |z| c * 0.5 * z.iter().map(|v| v * v).sum::<f64>().ln()),
            grad: Arc::new(move |z, g| {
                let r2: f64 = z.iter().map(|v| v * v).sum();
                g.iter_mut().zip(z).for_each(|(g, v)| *g = c * v / r2);
            }),
            hess: None,
            even: true,
            convex: false,
            singular_at_zero: true,
        }
    }

    /// Two-dimensional Newtonian potential `W(z) = log|z| / (2 pi)`.
    pub fn newtonian_2d() -> Self {
        let mut w = Self::logarithmic(1.0 / (2.0 * std::f64::consts::PI));
        w.name = "newtonian".into();
        w
    }

    pub fn custom(
        name: impl Into<String>,
        w: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        even: bool,
        convex: bool,
    ) -> Self {
        InteractionSpec {
            name: name.into(),
            w: Arc::new(w),
            grad: Arc::new(grad),
            hess: None,
            even,
            convex,
            singular_at_zero: false,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_even(&self) -> bool {
        self.even
    }

    pub fn is_convex(&self) -> bool {
        self.convex
    }

    pub fn is_singular(&self) -> bool {
        self.singular_at_zero
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        (self.w)(z)
    }

    pub fn gradient(&self, z: &[f64], out: &mut [f64]) {
        (self.grad)(z, out)
    }

    pub fn hessian(&self, z: &[f64], out: &mut [f64]) {
        if let Some(h) = &self.hess {
            return h(z, out);
        }
        let d = z.len();
        let mut zp = z.to_vec();
        let mut gp = vec![0.0; d];
        let mut gm = vec![0.0; d];
        for j in 0..d {
            let step = 1e-5 * (1.0 + z[j].abs());
            zp[j] = z[j] + step;
            self.gradient(&zp, &mut gp);
            zp[j] = z[j] - step;
            self.gradient(&zp, &mut gm);
            zp[j] = z[j];
            for i in 0..d {
                out[i * d + j] = (gp[i] - gm[i]) / (2.0 * step);
            }
        }
    }

    /// Evenness of `W` and oddness of its gradient at the probe points.
    pub fn check_invariants(&self, probes: &[Vec<f64>]) -> Result<()> {
        if !self.even {
            return Ok(());
        }
        for z in probes {
            let m: Vec<f64> = z.iter().map(|v| -v).collect();
            if (self.value(z) - self.value(&m)).abs() > 1e-12 * (1.0 + self.value(z).abs()) {
                return Err(Error::InvalidInput(format!("interaction flagged even but W(z) != W(-z) at {z:?}")));
            }
            let mut g1 = vec![0.0; z.len()];
            let mut g2 = vec![0.0; z.len()];
            self.gradient(z, &mut g1);
            self.gradient(&m, &mut g2);
            if g1.iter().zip(&g2).any(|(a, b)| (a + b).abs() > 1e-12 * (1.0 + a.abs())) {
                return Err(Error::InvalidInput(format!("gradient of W is not odd at {z:?}")));
            }
        }
        Ok(())
    }
}

/// Cell rule for the potential term `int V(X(xi)) dxi`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialQuadrature {
    /// `delta_k V(m_k)`.
    #[default]
    Midpoint,
    /// Simpson on the linear cell map; exact for quadratic `V`, so the discrete
    /// potential energy keeps the modulus of convexity of `V` in the full metric.
    Simpson,
}

/// Free energy `int h(rho) + rho V + 1/2 rho (W * rho)`.
#[derive(Debug, Clone, Default)]
pub struct ProblemSpec {
    pub entropy: Option<EntropySpec>,
    pub potential: Option<PotentialSpec>,
    pub interaction: Option<InteractionSpec>,
    pub quadrature: PotentialQuadrature,
}

impl ProblemSpec {
    pub fn new(entropy: Option<EntropySpec>, potential: Option<PotentialSpec>, interaction: Option<InteractionSpec>) -> Result<Self> {
        let p = ProblemSpec { entropy, potential, interaction, quadrature: PotentialQuadrature::Midpoint };
        p.validate()?;
        Ok(p)
    }

    pub fn entropy_only(entropy: EntropySpec) -> Self {
        ProblemSpec { entropy: Some(entropy), potential: None, interaction: None, quadrature: PotentialQuadrature::Midpoint }
    }

    pub fn with_quadrature(mut self, quadrature: PotentialQuadrature) -> Self {
        self.quadrature = quadrature;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.entropy.is_none() && self.potential.is_none() && self.interaction.is_none() {
            return Err(Error::InvalidInput("problem has no energy component".into()));
        }
        if let Some(w) = &self.interaction {
            if w.is_singular() || !w.value(&[0.0]).is_finite() {
                return Err(Error::InvalidInput("the 1D functionals need W finite at 0".into()));
            }
        }
        Ok(())
    }

    /// Convexity modulus of the potential (0 when absent).
    pub fn lambda(&self) -> f64 {
        self.potential.as_ref().map_or(0.0, |p| p.lambda())
    }
}

/// `h#(s) = s h(1/s)` with its first and second derivative.
pub fn hsharp(entropy: &EntropySpec, s: f64) -> Result<(f64, f64, f64)> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::DegenerateCell { index: 0, stretch: s });
    }
    let r = 1.0 / s;
    let h = entropy.h(r);
    let hp = entropy.h_prime(r);
    Ok((s * h, h - r * hp, entropy.h_second(r) * r * r * r))
}

fn stretches(x: &[f64], grid: &MassGrid) -> Result<Vec<f64>> {
    if x.len() != grid.nodes().len() {
        return Err(Error::Mismatch(format!("{} positions on a grid with {} nodes", x.len(), grid.nodes().len())));
    }
    (0..grid.cells())
        .map(|c| {
            let s = (x[c + 1] - x[c]) / grid.cell_mass(c);
            if s > 0.0 && s.is_finite() {
                Ok(s)
            } else {
                Err(Error::DegenerateCell { index: c, stretch: s })
            }
        })
        .collect()
}

fn midpoints(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

/// Energy of raw node positions (no monotonicity bookkeeping beyond positive stretches).
pub fn energy_of_positions(x: &[f64], grid: &MassGrid, problem: &ProblemSpec) -> Result<f64> {
    let s = stretches(x, grid)?;
    let delta = grid.cell_masses();
    let mid = midpoints(x);
    let mut e = 0.0;
    if let Some(h) = &problem.entropy {
        for c in 0..s.len() {
            e += delta[c] * hsharp(h, s[c])?.0;
        }
    }
    if let Some(v) = &problem.potential {
        for c in 0..s.len() {
            e += delta[c]
                * match problem.quadrature {
                    PotentialQuadrature::Midpoint => v.value(&[mid[c]]),
                    PotentialQuadrature::Simpson => {
                        (v.value(&[x[c]]) + 4.0 * v.value(&[mid[c]]) + v.value(&[x[c + 1]])) / 6.0
                    }
                };
        }
    }
    if let Some(w) = &problem.interaction {
        let mut acc = 0.0;
        for k in 0..mid.len() {
            let mut row = 0.0;
            for l in 0..mid.len() {
                row += delta[l] * w.value(&[mid[k] - mid[l]]);
            }
            acc += delta[k] * row;
        }
        e += 0.5 * acc;
    }
    Ok(e)
}

pub fn discrete_energy(state: &LagrangianState, grid: &MassGrid, problem: &ProblemSpec) -> Result<f64> {
    energy_of_positions(state.positions(), grid, problem)
}

/// Raw partial derivatives `dE/dx_k` of the discrete energy.
pub fn raw_partials(x: &[f64], grid: &MassGrid, problem: &ProblemSpec) -> Result<Vec<f64>> {
    let s = stretches(x, grid)?;
    let delta = grid.cell_masses();
    let mid = midpoints(x);
    let n = x.len();
    let mut g = vec![0.0; n];
    if let Some(h) = &problem.entropy {
        for c in 0..s.len() {
            let d1 = hsharp(h, s[c])?.1;
            g[c + 1] += d1;
            g[c] -= d1;
        }
    }
    // dE/dm_k, distributed half to each end node of the cell
    let mut dm = vec![0.0; mid.len()];
    if let Some(v) = &problem.potential {
        let mut gv = [0.0];
        let wm = match problem.quadrature {
            PotentialQuadrature::Midpoint => 1.0,
            PotentialQuadrature::Simpson => 2.0 / 3.0,
        };
        for c in 0..mid.len() {
            v.gradient(&[mid[c]], &mut gv);
            dm[c] += wm * delta[c] * gv[0];
            if problem.quadrature == PotentialQuadrature::Simpson {
                v.gradient(&[x[c]], &mut gv);
                g[c] += delta[c] * gv[0] / 6.0;
                v.gradient(&[x[c + 1]], &mut gv);
                g[c + 1] += delta[c] * gv[0] / 6.0;
            }
        }
    }
    if let Some(w) = &problem.interaction {
        let mut gw = [0.0];
        for k in 0..mid.len() {
            let mut row = 0.0;
            for l in 0..mid.len() {
                if l != k {
                    w.gradient(&[mid[k] - mid[l]], &mut gw);
                    row += delta[l] * gw[0];
                }
            }
            dm[k] += delta[k] * row;
        }
    }
    for c in 0..mid.len() {
        g[c] += 0.5 * dm[c];
        g[c + 1] += 0.5 * dm[c];
    }
    Ok(g)
}

/// Raw partials and the metric gradient `A^{-1} dE` (pinned endpoints held at zero).
pub fn discrete_gradient(
    state: &LagrangianState,
    grid: &MassGrid,
    problem: &ProblemSpec,
    metric: &MetricMatrix,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let raw = raw_partials(state.positions(), grid, problem)?;
    let g = metric_gradient(&raw, metric, state.mode())?;
    Ok((raw, g))
}

/// Riesz representative of `raw` in the metric, restricted to the free nodes.
pub fn metric_gradient(raw: &[f64], metric: &MetricMatrix, mode: BoundaryMode) -> Result<Vec<f64>> {
    if raw.len() != metric.dim() {
        return Err(Error::Mismatch("metric and gradient dimensions differ".into()));
    }
    metric.solve_on(raw, &free_indices(raw.len(), mode))
}

/// Analytic Hessian of the discrete energy; tridiagonal without interaction.
pub fn hessian_of_positions(x: &[f64], grid: &MassGrid, problem: &ProblemSpec) -> Result<SymMatrix> {
    let s = stretches(x, grid)?;
    let delta = grid.cell_masses();
    let mid = midpoints(x);
    let n = x.len();
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n - 1];
    if let Some(h) = &problem.entropy {
        for c in 0..s.len() {
            let a = hsharp(h, s[c])?.2 / delta[c];
            diag[c] += a;
            diag[c + 1] += a;
            off[c] -= a;
        }
    }
    if let Some(v) = &problem.potential {
        let mut hv = [0.0];
        let wm = match problem.quadrature {
            PotentialQuadrature::Midpoint => 1.0,
            PotentialQuadrature::Simpson => 2.0 / 3.0,
        };
        for c in 0..mid.len() {
            v.hessian(&[mid[c]], &mut hv);
            let a = 0.25 * wm * delta[c] * hv[0];
            diag[c] += a;
            diag[c + 1] += a;
            off[c] += a;
            if problem.quadrature == PotentialQuadrature::Simpson {
                v.hessian(&[x[c]], &mut hv);
                diag[c] += delta[c] * hv[0] / 6.0;
                v.hessian(&[x[c + 1]], &mut hv);
                diag[c + 1] += delta[c] * hv[0] / 6.0;
            }
        }
    }
    let Some(w) = &problem.interaction else {
        return Ok(SymMatrix::Tridiagonal { diag, off });
    };
    let mut full = SymMatrix::Tridiagonal { diag, off }.to_dense();
    let kc = mid.len();
    let mut hm = DMatrix::<f64>::zeros(kc, kc);
    let mut hw = [0.0];
    for k in 0..kc {
        for l in 0..kc {
            if l != k {
                w.hessian(&[mid[k] - mid[l]], &mut hw);
                let a = delta[k] * delta[l] * hw[0];
                hm[(k, l)] -= a;
                hm[(k, k)] += a;
            }
        }
    }
    // nodes: dm_c/dx_c = dm_c/dx_{c+1} = 1/2
    for a in 0..kc {
        for b in 0..kc {
            let v = 0.25 * hm[(a, b)];
            if v == 0.0 {
                continue;
            }
            full[(a, b)] += v;
            full[(a + 1, b)] += v;
            full[(a, b + 1)] += v;
            full[(a + 1, b + 1)] += v;
        }
    }
    Ok(SymMatrix::Dense(full))
}

pub fn discrete_hessian(state: &LagrangianState, grid: &MassGrid, problem: &ProblemSpec) -> Result<SymMatrix> {
    hessian_of_positions(state.positions(), grid, problem)
}

/// `H1#(x) = -sum_k delta_k log s_k`.
pub fn discrete_h1(state: &LagrangianState, grid: &MassGrid) -> Result<f64> {
    Ok(stretches(state.positions(), grid)?.iter().zip(grid.cell_masses()).map(|(s, d)| -d * s.ln()).sum())
}

/// `H2#(x) = sum_k delta_k / s_k`.
pub fn discrete_h2(state: &LagrangianState, grid: &MassGrid) -> Result<f64> {
    Ok(stretches(state.positions(), grid)?.iter().zip(grid.cell_masses()).map(|(s, d)| d / s).sum())
}

/// Per-cell derivatives of `f_k(u) = delta_k h#(u / delta_k)` with `u = x_k - x_{k-1}`,
/// for `H1` (`-delta log s`) and `H2` (`delta / s`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Basic {
    H1,
    H2,
}

impl Basic {
    /// `(f', f'', f''')` in the cell-width variable.
    fn derivs(self, u: f64, delta: f64) -> (f64, f64, f64) {
        match self {
            Basic::H1 => (-delta / u, delta / (u * u), -2.0 * delta / (u * u * u)),
            Basic::H2 => {
                let d2 = delta * delta;
                (-d2 / (u * u), 2.0 * d2 / (u * u * u), -6.0 * d2 / (u * u * u * u))
            }
        }
    }

    fn gradient(self, x: &[f64], grid: &MassGrid) -> Result<Vec<f64>> {
        stretches(x, grid)?;
        let mut g = vec![0.0; x.len()];
        for c in 0..grid.cells() {
            let (d1, _, _) = self.derivs(x[c + 1] - x[c], grid.cell_mass(c));
            g[c + 1] += d1;
            g[c] -= d1;
        }
        Ok(g)
    }

    fn hessian(self, x: &[f64], grid: &MassGrid) -> (Vec<f64>, Vec<f64>) {
        let n = x.len();
        let mut diag = vec![0.0; n];
        let mut off = vec![0.0; n - 1];
        for c in 0..grid.cells() {
            let (_, d2, _) = self.derivs(x[c + 1] - x[c], grid.cell_mass(c));
            diag[c] += d2;
            diag[c + 1] += d2;
            off[c] -= d2;
        }
        (diag, off)
    }

    /// `sum_k f_k''' (b_k . v) b_k b_k^T`, with `b_k = e_k - e_{k-1}`.
    fn third_contracted(self, x: &[f64], grid: &MassGrid, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = x.len();
        let mut diag = vec![0.0; n];
        let mut off = vec![0.0; n - 1];
        for c in 0..grid.cells() {
            let (_, _, d3) = self.derivs(x[c + 1] - x[c], grid.cell_mass(c));
            let a = d3 * (v[c + 1] - v[c]);
            diag[c] += a;
            diag[c + 1] += a;
            off[c] -= a;
        }
        (diag, off)
    }
}

fn tri_mul(diag: &[f64], off: &[f64], v: &[f64]) -> Vec<f64> {
    SymMatrix::Tridiagonal { diag: diag.to_vec(), off: off.to_vec() }.mul_vec(v)
}

pub fn h1_gradient(state: &LagrangianState, grid: &MassGrid) -> Result<Vec<f64>> {
    Basic::H1.gradient(state.positions(), grid)
}

pub fn h2_gradient(state: &LagrangianState, grid: &MassGrid) -> Result<Vec<f64>> {
    Basic::H2.gradient(state.positions(), grid)
}

/// Which fourth-order surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surrogate {
    /// `<grad H1, grad H1>`: drives the quantum drift-diffusion (QDD) flow.
    Fisher,
    /// `<grad H1, grad H2>`: drives the thin-film flow.
    Dirichlet,
}

struct SurrogateParts {
    g1: Vec<f64>,
    g2: Vec<f64>,
    r1: Vec<f64>,
    r2: Vec<f64>,
}

fn surrogate_parts(x: &[f64], grid: &MassGrid, metric: &MetricMatrix, mode: BoundaryMode, need_h2: bool) -> Result<SurrogateParts> {
    let r1 = Basic::H1.gradient(x, grid)?;
    let g1 = metric_gradient(&r1, metric, mode)?;
    let (r2, g2) = if need_h2 {
        let r2 = Basic::H2.gradient(x, grid)?;
        let g2 = metric_gradient(&r2, metric, mode)?;
        (r2, g2)
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(SurrogateParts { g1, g2, r1, r2 })
}

pub fn surrogate_value_of_positions(which: Surrogate, x: &[f64], grid: &MassGrid, metric: &MetricMatrix, mode: BoundaryMode) -> Result<f64> {
    let p = surrogate_parts(x, grid, metric, mode, which == Surrogate::Dirichlet)?;
    Ok(match which {
        // <g1, g1>_A = g1 . r1 on the free nodes (g1 vanishes on pinned ones)
        Surrogate::Fisher => crate::linalg::dot(&p.g1, &p.r1),
        Surrogate::Dirichlet => crate::linalg::dot(&p.g1, &p.r2),
    })
}

/// Discrete Fisher information `<grad H1, grad H1>` in the metric.
pub fn fisher_surrogate(state: &LagrangianState, grid: &MassGrid, metric: &MetricMatrix) -> Result<f64> {
    surrogate_value_of_positions(Surrogate::Fisher, state.positions(), grid, metric, state.mode())
}

/// Discrete Dirichlet energy `<grad H1, grad H2>` in the metric.
pub fn dirichlet_surrogate(state: &LagrangianState, grid: &MassGrid, metric: &MetricMatrix) -> Result<f64> {
    surrogate_value_of_positions(Surrogate::Dirichlet, state.positions(), grid, metric, state.mode())
}

pub fn surrogate_gradient_of_positions(
    which: Surrogate,
    x: &[f64],
    grid: &MassGrid,
    metric: &MetricMatrix,
    mode: BoundaryMode,
) -> Result<Vec<f64>> {
    let p = surrogate_parts(x, grid, metric, mode, which == Surrogate::Dirichlet)?;
    let (d1, o1) = Basic::H1.hessian(x, grid);
    Ok(match which {
        Surrogate::Fisher => tri_mul(&d1, &o1, &p.g1).into_iter().map(|v| 2.0 * v).collect(),
        Surrogate::Dirichlet => {
            let (d2, o2) = Basic::H2.hessian(x, grid);
            let a = tri_mul(&d1, &o1, &p.g2);
            let b = tri_mul(&d2, &o2, &p.g1);
            a.iter().zip(&b).map(|(u, v)| u + v).collect()
        }
    })
}

/// Raw partials of a surrogate, obtained through the adjoint of the metric solve.
pub fn surrogate_gradient(which: Surrogate, state: &LagrangianState, grid: &MassGrid, metric: &MetricMatrix) -> Result<Vec<f64>> {
    surrogate_gradient_of_positions(which, state.positions(), grid, metric, state.mode())
}

/// Dense `P^T A_P^{-1} P` for the free index set.
fn inverse_metric_dense(metric: &MetricMatrix, mode: BoundaryMode) -> Result<DMatrix<f64>> {
    let n = metric.dim();
    let free = free_indices(n, mode);
    let mut inv = DMatrix::<f64>::zeros(n, n);
    let mut e = vec![0.0; n];
    for &j in &free {
        e[j] = 1.0;
        let col = metric.solve_on(&e, &free)?;
        e[j] = 0.0;
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
    }
    Ok(inv)
}

pub fn surrogate_hessian_of_positions(
    which: Surrogate,
    x: &[f64],
    grid: &MassGrid,
    metric: &MetricMatrix,
    mode: BoundaryMode,
) -> Result<SymMatrix> {
    let p = surrogate_parts(x, grid, metric, mode, which == Surrogate::Dirichlet)?;
    let minv = inverse_metric_dense(metric, mode)?;
    let (d1, o1) = Basic::H1.hessian(x, grid);
    let h1 = SymMatrix::Tridiagonal { diag: d1, off: o1 }.to_dense();
    let _ = &p.r2;
    let m = match which {
        Surrogate::Fisher => {
            let (td, to) = Basic::H1.third_contracted(x, grid, &p.g1);
            let t = SymMatrix::Tridiagonal { diag: td, off: to }.to_dense();
            (&h1 * &minv * &h1 + t) * 2.0
        }
        Surrogate::Dirichlet => {
            let (d2, o2) = Basic::H2.hessian(x, grid);
            let h2 = SymMatrix::Tridiagonal { diag: d2, off: o2 }.to_dense();
            let (ta, tb) = Basic::H1.third_contracted(x, grid, &p.g2);
            let (ua, ub) = Basic::H2.third_contracted(x, grid, &p.g1);
            let t = SymMatrix::Tridiagonal { diag: ta, off: tb }.to_dense() + SymMatrix::Tridiagonal { diag: ua, off: ub }.to_dense();
            let cross = &h1 * &minv * &h2;
            let sym = &cross + cross.transpose();
            sym + t
        }
    };
    Ok(SymMatrix::Dense(m))
}

/// An energy on raw position vectors, as used by the implicit time steppers.
pub trait DiscreteEnergy: Send + Sync {
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn hessian(&self, x: &[f64]) -> Result<SymMatrix>;
}

/// The Fokker-Planck energy `[H_{h,V,W}]` on a fixed mass grid.
#[derive(Debug, Clone)]
pub struct FokkerPlanckEnergy {
    pub grid: MassGrid,
    pub problem: ProblemSpec,
}

impl DiscreteEnergy for FokkerPlanckEnergy {
    fn value(&self, x: &[f64]) -> Result<f64> {
        energy_of_positions(x, &self.grid, &self.problem)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        raw_partials(x, &self.grid, &self.problem)
    }

    fn hessian(&self, x: &[f64]) -> Result<SymMatrix> {
        hessian_of_positions(x, &self.grid, &self.problem)
    }
}

/// Fisher or Dirichlet surrogate as an energy for the fourth-order schemes.
#[derive(Debug, Clone)]
pub struct SurrogateEnergy {
    pub which: Surrogate,
    pub grid: MassGrid,
    pub metric: MetricMatrix,
    pub mode: BoundaryMode,
}

impl DiscreteEnergy for SurrogateEnergy {
    fn value(&self, x: &[f64]) -> Result<f64> {
        surrogate_value_of_positions(self.which, x, &self.grid, &self.metric, self.mode)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        surrogate_gradient_of_positions(self.which, x, &self.grid, &self.metric, self.mode)
    }

    fn hessian(&self, x: &[f64]) -> Result<SymMatrix> {
        surrogate_hessian_of_positions(self.which, x, &self.grid, &self.metric, self.mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagrangian::{l2_metric, MetricForm};

    fn k2_state() -> (MassGrid, LagrangianState) {
        (MassGrid::uniform(2), LagrangianState::new(vec![0.0, 0.25, 1.0], BoundaryMode::Pinned).unwrap())
    }

    #[test]
    fn hsharp_examples() {
        let b = EntropySpec::boltzmann();
        assert_eq!(hsharp(&b, 1.0).unwrap().0, 0.0);
        for s in [0.1, 0.7, 3.0, 20.0] {
            assert!((hsharp(&b, s).unwrap().0 + f64::ln(s)).abs() < 1e-14);
        }
        let p = EntropySpec::custom("r2", |r| r * r, |r| 2.0 * r, |_| 2.0, true);
        assert!((hsharp(&p, 2.0).unwrap().0 - 0.5).abs() < 1e-15);
        assert!(matches!(hsharp(&b, 0.0), Err(Error::DegenerateCell { .. })));
        assert!(hsharp(&b, -1.0).is_err());
    }

    #[test]
    fn hsharp_derivatives_match_differences() {
        for e in [EntropySpec::boltzmann(), EntropySpec::power(3.0).unwrap()] {
            for s in [0.3, 1.0, 2.5] {
                let h = 1e-5;
                let (_, d1, d2) = hsharp(&e, s).unwrap();
                let fd1 = (hsharp(&e, s + h).unwrap().0 - hsharp(&e, s - h).unwrap().0) / (2.0 * h);
                let fd2 = (hsharp(&e, s + h).unwrap().1 - hsharp(&e, s - h).unwrap().1) / (2.0 * h);
                assert!((d1 - fd1).abs() < 1e-8 * (1.0 + d1.abs()));
                assert!((d2 - fd2).abs() < 1e-7 * (1.0 + d2.abs()));
            }
        }
    }

    #[test]
    fn phi_relation() {
        let e = EntropySpec::power(3.0).unwrap();
        assert!((e.phi(2.0) - 8.0).abs() < 1e-12);
        assert!((EntropySpec::boltzmann().phi(0.7) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn energy_examples() {
        let g = MassGrid::uniform(4);
        let id = LagrangianState::identity(&g, BoundaryMode::Pinned);
        let heat = ProblemSpec::entropy_only(EntropySpec::boltzmann());
        assert_eq!(discrete_energy(&id, &g, &heat).unwrap(), 0.0);

        let (g, s) = k2_state();
        let e = discrete_energy(&s, &g, &heat).unwrap();
        assert!((e - 0.5 * (4.0f64 / 3.0).ln()).abs() < 1e-15);

        let lin = ProblemSpec::new(None, Some(PotentialSpec::linear(0, 1.0)), None).unwrap();
        assert!((discrete_energy(&s, &g, &lin).unwrap() - 0.375).abs() < 1e-15);
    }

    #[test]
    fn h1_h2_examples() {
        let g = MassGrid::uniform(6);
        let id = LagrangianState::identity(&g, BoundaryMode::Pinned);
        assert_eq!(discrete_h1(&id, &g).unwrap(), 0.0);
        assert!((discrete_h2(&id, &g).unwrap() - 1.0).abs() < 1e-15);
        let (g, s) = k2_state();
        assert!((discrete_h1(&s, &g).unwrap() - 0.5 * (4.0f64 / 3.0).ln()).abs() < 1e-15);
        assert!((discrete_h2(&s, &g).unwrap() - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn identity_is_critical_for_entropy() {
        let g = MassGrid::uniform(5);
        let id = LagrangianState::identity(&g, BoundaryMode::Pinned);
        let p = ProblemSpec::entropy_only(EntropySpec::boltzmann());
        let metric = l2_metric(&g, MetricForm::Lumped);
        let (raw, grad) = discrete_gradient(&id, &g, &p, &metric).unwrap();
        assert!(raw[1..5].iter().all(|v| v.abs() < 1e-14));
        assert!(grad.iter().all(|v| v.abs() < 1e-14));
        assert_eq!(fisher_surrogate(&id, &g, &metric).unwrap(), 0.0);
        assert!(dirichlet_surrogate(&id, &g, &metric).unwrap().abs() < 1e-14);
        let sg = surrogate_gradient(Surrogate::Fisher, &id, &g, &metric).unwrap();
        assert!(sg.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn no_interaction_means_tridiagonal() {
        let g = MassGrid::uniform(5);
        let s = LagrangianState::new(vec![0.0, 0.1, 0.3, 0.35, 0.7, 1.0], BoundaryMode::Pinned).unwrap();
        let p = ProblemSpec::new(Some(EntropySpec::boltzmann()), Some(PotentialSpec::quadratic(0.5)), None).unwrap();
        let h = discrete_hessian(&s, &g, &p).unwrap().to_dense();
        for i in 0..6usize {
            for j in 0..6 {
                if i.abs_diff(j) > 1 {
                    assert_eq!(h[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn singular_interaction_rejected() {
        assert!(ProblemSpec::new(None, None, Some(InteractionSpec::logarithmic(1.0))).is_err());
        assert!(ProblemSpec::new(None, None, None).is_err());
    }

    #[test]
    fn invariant_checks() {
        let probes = [0.1, 0.5, 1.0, 2.0, 10.0];
        EntropySpec::boltzmann().check_invariants(&probes).unwrap();
        EntropySpec::power(2.0).unwrap().check_invariants(&probes).unwrap();
        let bad = EntropySpec::custom("concave", |r: f64| -r * r, |r| -2.0 * r, |_| -2.0, false);
        assert!(bad.check_invariants(&probes).is_err());
        let pts: Vec<Vec<f64>> = vec![vec![0.3], vec![-1.2], vec![2.0]];
        PotentialSpec::quadratic(0.5).check_invariants(&pts).unwrap();
        PotentialSpec::polynomial(vec![1.0, -2.0, 0.5, 0.1]).check_invariants(&pts).unwrap();
        InteractionSpec::quadratic(1.0).check_invariants(&pts).unwrap();
        InteractionSpec::logarithmic(-1.0).check_invariants(&pts).unwrap();
    }
}
