//! Moving triangle meshes on the unit square.
//!
//! A reference triangulation of `[0,1]^2` is mapped vertex-wise to image
//! positions `x_k`; the push-forward of the uniform density is constant on every
//! image triangle, `rho_T = |T_ref| / |T_img|`. The energy
//!
//! ```text
//! E(x) = sum_T |T_ref| [ h#(|T_img| / |T_ref|) + V(centroid of T_img) ]
//! ```
//!
//! is minimized implicitly in time with the `L^2` metric of the hat functions.
//! Corners are fixed and edge vertices slide along their edge.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{hsharp, EntropySpec, PotentialSpec};
use crate::jko1d::{NewtonConfig, StepReport};
use crate::lagrangian::MetricForm;
use crate::linalg::BandedSym;
use crate::profiles::Barenblatt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexKind {
    Interior,
    /// On a side of the square; coordinate `fixed_axis` never changes.
    Edge { fixed_axis: usize },
    Corner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceMesh {
    n: usize,
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    kinds: Vec<VertexKind>,
    ref_areas: Vec<f64>,
    /// `(vertex, component)` of every degree of freedom.
    dofs: Vec<(usize, usize)>,
    dof_of: Vec<[Option<usize>; 2]>,
    bandwidth: usize,
}

/// Structured `n x n` grid with every square cut along its rising diagonal.
pub fn build_reference_mesh(n: usize) -> Result<ReferenceMesh> {
    if n == 0 {
        return Err(Error::InvalidInput("mesh needs at least one subdivision".into()));
    }
    let idx = |i: usize, j: usize| j * (n + 1) + i;
    let h = 1.0 / n as f64;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    let mut kinds = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            let xi = if i == n { 1.0 } else { i as f64 * h };
            let yi = if j == n { 1.0 } else { j as f64 * h };
            vertices.push([xi, yi]);
            let bx = i == 0 || i == n;
            let by = j == 0 || j == n;
            kinds.push(match (bx, by) {
                (true, true) => VertexKind::Corner,
                (true, false) => VertexKind::Edge { fixed_axis: 0 },
                (false, true) => VertexKind::Edge { fixed_axis: 1 },
                (false, false) => VertexKind::Interior,
            });
        }
    }
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    let ref_areas = triangles.iter().map(|t| 0.5 * det(&vertices, t)).collect();
    let mut dofs = Vec::new();
    let mut dof_of = vec![[None, None]; vertices.len()];
    for (v, k) in kinds.iter().enumerate() {
        for c in 0..2 {
            let free = match k {
                VertexKind::Interior => true,
                VertexKind::Edge { fixed_axis } => *fixed_axis != c,
                VertexKind::Corner => false,
            };
            if free {
                dof_of[v][c] = Some(dofs.len());
                dofs.push((v, c));
            }
        }
    }
    let mut bandwidth = 0;
    for t in &triangles {
        for &a in t {
            for &b in t {
                for ca in 0..2 {
                    for cb in 0..2 {
                        if let (Some(p), Some(q)) = (dof_of[a][ca], dof_of[b][cb]) {
                            bandwidth = bandwidth.max(p.abs_diff(q));
                        }
                    }
                }
            }
        }
    }
    Ok(ReferenceMesh { n, vertices, triangles, kinds, ref_areas, dofs, dof_of, bandwidth })
}

fn det(x: &[[f64; 2]], t: &[usize; 3]) -> f64 {
    let (a, b, c) = (x[t[0]], x[t[1]], x[t[2]]);
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Quarter turn `J = ((0, -1), (1, 0))`.
fn jrot(v: [f64; 2]) -> [f64; 2] {
    [-v[1], v[0]]
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

impl ReferenceMesh {
    pub fn subdivisions(&self) -> usize {
        self.n
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn kinds(&self) -> &[VertexKind] {
        &self.kinds
    }

    pub fn reference_areas(&self) -> &[f64] {
        &self.ref_areas
    }

    pub fn boundary_count(&self) -> usize {
        self.kinds.iter().filter(|k| !matches!(k, VertexKind::Interior)).count()
    }

    pub fn corner_count(&self) -> usize {
        self.kinds.iter().filter(|k| matches!(k, VertexKind::Corner)).count()
    }

    /// The same mesh carrying total mass `mass` instead of 1 (reference areas scaled).
    pub fn with_mass(mut self, mass: f64) -> Result<Self> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidInput(format!("mass must be positive, got {mass}")));
        }
        let total: f64 = self.ref_areas.iter().sum();
        for a in &mut self.ref_areas {
            *a *= mass / total;
        }
        Ok(self)
    }

    pub fn mass(&self) -> f64 {
        self.ref_areas.iter().sum()
    }

    pub fn dof_count(&self) -> usize {
        self.dofs.len()
    }

    fn gather(&self, x: &[[f64; 2]]) -> Vec<f64> {
        self.dofs.iter().map(|&(v, c)| x[v][c]).collect()
    }

    fn scatter(&self, base: &[[f64; 2]], dofs: &[f64]) -> Vec<[f64; 2]> {
        let mut x = base.to_vec();
        for (k, &(v, c)) in self.dofs.iter().enumerate() {
            x[v][c] = dofs[k];
        }
        x
    }
}

/// Image positions of all mesh vertices, satisfying the boundary constraints
/// and free of inverted triangles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexPositions {
    x: Vec<[f64; 2]>,
}

impl VertexPositions {
    pub fn new(mesh: &ReferenceMesh, x: Vec<[f64; 2]>) -> Result<Self> {
        if x.len() != mesh.vertices.len() {
            return Err(Error::Mismatch(format!("{} positions for {} vertices", x.len(), mesh.vertices.len())));
        }
        for (v, (p, k)) in x.iter().zip(&mesh.kinds).enumerate() {
            let r = mesh.vertices[v];
            let ok = match k {
                VertexKind::Interior => p.iter().all(|c| c.is_finite()),
                VertexKind::Edge { fixed_axis } => p[*fixed_axis] == r[*fixed_axis] && p[1 - fixed_axis].is_finite(),
                VertexKind::Corner => *p == r,
            };
            if !ok {
                return Err(Error::InvalidInput(format!("vertex {v} violates its boundary constraint")));
            }
        }
        let s = VertexPositions { x };
        if let Some((index, area)) = s.worst_triangle(mesh).filter(|(_, a)| *a <= 0.0) {
            return Err(Error::InvertedTriangle { index, area });
        }
        Ok(s)
    }

    pub fn identity(mesh: &ReferenceMesh) -> Self {
        VertexPositions { x: mesh.vertices.clone() }
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.x
    }

    /// Smallest signed image area and its triangle.
    pub fn worst_triangle(&self, mesh: &ReferenceMesh) -> Option<(usize, f64)> {
        mesh.triangles.iter().enumerate().map(|(i, t)| (i, 0.5 * det(&self.x, t))).min_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Signed image areas.
pub fn image_areas(mesh: &ReferenceMesh, x: &[[f64; 2]]) -> Vec<f64> {
    mesh.triangles.iter().map(|t| 0.5 * det(x, t)).collect()
}

fn checked_areas(mesh: &ReferenceMesh, x: &[[f64; 2]]) -> Result<Vec<f64>> {
    let a = image_areas(mesh, x);
    if let Some(index) = a.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::InvertedTriangle { index, area: a[index] });
    }
    Ok(a)
}

/// `rho_T = |T_ref| / |T_img|`.
pub fn triangle_densities(mesh: &ReferenceMesh, positions: &VertexPositions) -> Result<Vec<f64>> {
    Ok(checked_areas(mesh, &positions.x)?.iter().zip(&mesh.ref_areas).map(|(a, r)| r / a).collect())
}

fn centroid(x: &[[f64; 2]], t: &[usize; 3]) -> [f64; 2] {
    [(x[t[0]][0] + x[t[1]][0] + x[t[2]][0]) / 3.0, (x[t[0]][1] + x[t[1]][1] + x[t[2]][1]) / 3.0]
}

fn energy_raw(mesh: &ReferenceMesh, x: &[[f64; 2]], entropy: &EntropySpec, potential: Option<&PotentialSpec>) -> Result<f64> {
    let areas = checked_areas(mesh, x)?;
    let mut e = 0.0;
    for (i, t) in mesh.triangles.iter().enumerate() {
        let r = mesh.ref_areas[i];
        e += r * hsharp(entropy, areas[i] / r)?.0;
        if let Some(v) = potential {
            e += r * v.value(&centroid(x, t));
        }
    }
    Ok(e)
}

pub fn energy2d(mesh: &ReferenceMesh, positions: &VertexPositions, entropy: &EntropySpec, potential: Option<&PotentialSpec>) -> Result<f64> {
    energy_raw(mesh, &positions.x, entropy, potential)
}

/// Unconstrained partials `dE/dx_k` for every vertex.
fn gradient_raw(mesh: &ReferenceMesh, x: &[[f64; 2]], entropy: &EntropySpec, potential: Option<&PotentialSpec>) -> Result<Vec<[f64; 2]>> {
    let areas = checked_areas(mesh, x)?;
    let mut g = vec![[0.0; 2]; x.len()];
    let mut gv = [0.0; 2];
    for (i, t) in mesh.triangles.iter().enumerate() {
        let r = mesh.ref_areas[i];
        // h#'(s) = -Phi(rho): each vertex gets Phi(rho) J(x_l - x_m) / 2 for its opposite edge (l, m)
        let phi = -hsharp(entropy, areas[i] / r)?.1;
        if let Some(v) = potential {
            v.gradient(&centroid(x, t), &mut gv);
        }
        for a in 0..3 {
            let (k, l, m) = (t[a], t[(a + 1) % 3], t[(a + 2) % 3]);
            let e = jrot(sub(x[l], x[m]));
            g[k][0] += 0.5 * phi * e[0];
            g[k][1] += 0.5 * phi * e[1];
            if potential.is_some() {
                g[k][0] += r / 3.0 * gv[0];
                g[k][1] += r / 3.0 * gv[1];
            }
        }
    }
    Ok(g)
}

/// Partials with the constrained components (normal at edges, all at corners) set to zero.
pub fn gradient2d_raw(mesh: &ReferenceMesh, positions: &VertexPositions, entropy: &EntropySpec, potential: Option<&PotentialSpec>) -> Result<Vec<[f64; 2]>> {
    let mut g = gradient_raw(mesh, &positions.x, entropy, potential)?;
    for (v, gv) in g.iter_mut().enumerate() {
        for (c, gc) in gv.iter_mut().enumerate() {
            if mesh.dof_of[v][c].is_none() {
                *gc = 0.0;
            }
        }
    }
    Ok(g)
}

/// Gram matrix of the hat functions on the reference mesh, or its lumped diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshMetric {
    form: MetricForm,
    /// Per-vertex lumped weights; row sums of the full matrix.
    lumped: Vec<f64>,
    /// `(i, j, value)` with `i >= j`, full form only.
    entries: Vec<(usize, usize, f64)>,
}

impl MeshMetric {
    pub fn new(mesh: &ReferenceMesh, form: MetricForm) -> Self {
        let nv = mesh.vertices.len();
        let mut lumped = vec![0.0; nv];
        let mut acc = std::collections::BTreeMap::new();
        for (i, t) in mesh.triangles.iter().enumerate() {
            let r = mesh.ref_areas[i];
            for &a in t {
                lumped[a] += r / 3.0;
                for &b in t {
                    if a >= b {
                        let v = if a == b { r / 6.0 } else { r / 12.0 };
                        *acc.entry((a, b)).or_insert(0.0) += v;
                    }
                }
            }
        }
        let entries = match form {
            MetricForm::Full => acc.into_iter().map(|((a, b), v)| (a, b, v)).collect(),
            MetricForm::Lumped => Vec::new(),
        };
        MeshMetric { form, lumped, entries }
    }

    pub fn form(&self) -> MetricForm {
        self.form
    }

    pub fn lumped_weights(&self) -> &[f64] {
        &self.lumped
    }

    /// `sum_c v_c^T A v_c` over both coordinates.
    pub fn norm_sq(&self, v: &[[f64; 2]]) -> f64 {
        match self.form {
            MetricForm::Lumped => v.iter().zip(&self.lumped).map(|(p, w)| w * (p[0] * p[0] + p[1] * p[1])).sum(),
            MetricForm::Full => self
                .entries
                .iter()
                .map(|&(a, b, w)| {
                    let s = w * (v[a][0] * v[b][0] + v[a][1] * v[b][1]);
                    if a == b {
                        s
                    } else {
                        2.0 * s
                    }
                })
                .sum(),
        }
    }

    fn apply(&self, v: &[[f64; 2]]) -> Vec<[f64; 2]> {
        match self.form {
            MetricForm::Lumped => v.iter().zip(&self.lumped).map(|(p, w)| [w * p[0], w * p[1]]).collect(),
            MetricForm::Full => {
                let mut out = vec![[0.0; 2]; v.len()];
                for &(a, b, w) in &self.entries {
                    for c in 0..2 {
                        out[a][c] += w * v[b][c];
                        if a != b {
                            out[b][c] += w * v[a][c];
                        }
                    }
                }
                out
            }
        }
    }

    /// The metric restricted to the mesh's degrees of freedom, scaled by `scale`, added into `m`.
    fn add_to_dofs(&self, mesh: &ReferenceMesh, m: &mut BandedSym, scale: f64) {
        match self.form {
            MetricForm::Lumped => {
                for (k, &(v, _)) in mesh.dofs.iter().enumerate() {
                    m.add_diag(k, scale * self.lumped[v]);
                }
            }
            MetricForm::Full => {
                for &(a, b, w) in &self.entries {
                    for c in 0..2 {
                        if let (Some(p), Some(q)) = (mesh.dof_of[a][c], mesh.dof_of[b][c]) {
                            m.add(p, q, scale * w);
                        }
                    }
                }
            }
        }
    }

    /// Solves `A g = rhs` on the free components.
    pub fn solve(&self, mesh: &ReferenceMesh, rhs: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
        let mut m = BandedSym::zeros(mesh.dof_count(), mesh.bandwidth);
        self.add_to_dofs(mesh, &mut m, 1.0);
        let sol = m.cholesky()?.solve(&mesh.gather(rhs));
        Ok(mesh.scatter(&vec![[0.0; 2]; rhs.len()], &sol))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient2d {
    /// Partials with constrained components removed.
    pub raw: Vec<[f64; 2]>,
    /// Riesz representative in the mesh metric.
    pub metric: Vec<[f64; 2]>,
}

pub fn gradient2d(
    mesh: &ReferenceMesh,
    positions: &VertexPositions,
    entropy: &EntropySpec,
    potential: Option<&PotentialSpec>,
    metric: &MeshMetric,
) -> Result<Gradient2d> {
    let raw = gradient2d_raw(mesh, positions, entropy, potential)?;
    let g = metric.solve(mesh, &raw)?;
    Ok(Gradient2d { raw, metric: g })
}

/// Energy Hessian on the degrees of freedom (banded).
pub fn hessian2d(mesh: &ReferenceMesh, positions: &VertexPositions, entropy: &EntropySpec, potential: Option<&PotentialSpec>) -> Result<BandedSym> {
    let mut h = BandedSym::zeros(mesh.dof_count(), mesh.bandwidth);
    add_hessian(mesh, &positions.x, entropy, potential, &mut h)?;
    Ok(h)
}

fn add_hessian(mesh: &ReferenceMesh, x: &[[f64; 2]], entropy: &EntropySpec, potential: Option<&PotentialSpec>, h: &mut BandedSym) -> Result<()> {
    let areas = checked_areas(mesh, x)?;
    let mut hv = [0.0; 4];
    for (i, t) in mesh.triangles.iter().enumerate() {
        let r = mesh.ref_areas[i];
        let (_, d1, d2) = hsharp(entropy, areas[i] / r)?;
        // local 6x6 in the order (vertex a, component c)
        let mut grad_d = [0.0; 6];
        for a in 0..3 {
            let (l, m) = (t[(a + 1) % 3], t[(a + 2) % 3]);
            let e = jrot(sub(x[m], x[l]));
            grad_d[2 * a] = e[0];
            grad_d[2 * a + 1] = e[1];
        }
        let mut local = [[0.0; 6]; 6];
        for p in 0..6 {
            for q in 0..6 {
                local[p][q] = d2 / (4.0 * r) * grad_d[p] * grad_d[q];
            }
        }
        // second derivatives of the doubled area: +[[0,1],[-1,0]] on cyclic pairs (a, a+1)
        for a in 0..3 {
            let b = (a + 1) % 3;
            local[2 * a][2 * b + 1] += 0.5 * d1;
            local[2 * a + 1][2 * b] -= 0.5 * d1;
            local[2 * b + 1][2 * a] += 0.5 * d1;
            local[2 * b][2 * a + 1] -= 0.5 * d1;
        }
        if let Some(v) = potential {
            v.hessian(&centroid(x, t), &mut hv);
            for a in 0..3 {
                for b in 0..3 {
                    for c in 0..2 {
                        for e in 0..2 {
                            local[2 * a + c][2 * b + e] += r / 9.0 * hv[2 * c + e];
                        }
                    }
                }
            }
        }
        for a in 0..3 {
            for c in 0..2 {
                let Some(p) = mesh.dof_of[t[a]][c] else { continue };
                for b in 0..3 {
                    for e in 0..2 {
                        let Some(q) = mesh.dof_of[t[b]][e] else { continue };
                        if p >= q {
                            h.add(p, q, local[2 * a + c][2 * b + e]);
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Mesh2dConfig {
    pub newton: NewtonConfig,
    /// A step may not shrink any triangle below this fraction of its current area.
    pub det_guard: f64,
    pub metric: MetricForm,
}

impl Default for Mesh2dConfig {
    fn default() -> Self {
        Mesh2dConfig { newton: NewtonConfig::default(), det_guard: 0.1, metric: MetricForm::Lumped }
    }
}

/// One implicit step: minimizes `E(x) + |x - x_prev|_A^2 / (2 dt)` by guarded Newton.
pub fn jko_step2d(
    mesh: &ReferenceMesh,
    prev: &VertexPositions,
    dt: f64,
    entropy: &EntropySpec,
    potential: Option<&PotentialSpec>,
    metric: &MeshMetric,
    config: &Mesh2dConfig,
) -> Result<(VertexPositions, StepReport)> {
    let cfg = &config.newton;
    cfg.validate()?;
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
    }
    if !(config.det_guard > 0.0 && config.det_guard < 1.0) {
        return Err(Error::InvalidInput("det_guard must lie in (0, 1)".into()));
    }
    let xp = &prev.x;
    let psi = |x: &[[f64; 2]]| -> Result<f64> {
        let d: Vec<[f64; 2]> = x.iter().zip(xp).map(|(a, b)| sub(*a, *b)).collect();
        Ok(energy_raw(mesh, x, entropy, potential)? + metric.norm_sq(&d) / (2.0 * dt))
    };
    let e_prev = energy_raw(mesh, xp, entropy, potential)?;
    let lumped: Vec<f64> = mesh.dofs.iter().map(|&(v, _)| metric.lumped[v]).collect();
    let mut x = xp.clone();
    let mut psi_x = e_prev;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    for it in 0..cfg.max_iterations {
        iterations = it;
        let g = gradient_raw(mesh, &x, entropy, potential)?;
        let diff: Vec<[f64; 2]> = x.iter().zip(xp).map(|(a, b)| sub(*a, *b)).collect();
        let ad = metric.apply(&diff);
        let full: Vec<[f64; 2]> = g.iter().zip(&ad).map(|(g, a)| [g[0] + a[0] / dt, g[1] + a[1] / dt]).collect();
        let f = mesh.gather(&full);
        residual = f.iter().zip(&lumped).map(|(v, w)| v * v / w).sum::<f64>().sqrt();
        if !residual.is_finite() {
            return Err(Error::NonFinite("Newton residual".into()));
        }
        if residual <= cfg.residual_tol {
            converged = true;
            break;
        }
        iterations = it + 1;
        let mut base = BandedSym::zeros(mesh.dof_count(), mesh.bandwidth);
        add_hessian(mesh, &x, entropy, potential, &mut base)?;
        metric.add_to_dofs(mesh, &mut base, 1.0 / dt);
        let minus_f: Vec<f64> = f.iter().map(|v| -v).collect();
        let mut dir = None;
        let mut mu = 0.0;
        for _ in 0..16 {
            let mut m = base.clone();
            if mu > 0.0 {
                for (k, w) in lumped.iter().enumerate() {
                    m.add_diag(k, mu * w / dt);
                }
            }
            if let Ok(ch) = m.cholesky() {
                let d = ch.solve(&minus_f);
                let slope: f64 = d.iter().zip(&f).map(|(a, b)| a * b).sum();
                if slope < 0.0 && d.iter().all(|v| v.is_finite()) {
                    dir = Some((d, slope));
                    break;
                }
            }
            mu = if mu == 0.0 { 1e-2 } else { mu * 10.0 };
        }
        let (d, slope) = dir.ok_or(Error::Singular)?;
        let x_dofs = mesh.gather(&x);
        let dets: Vec<f64> = image_areas(mesh, &x);
        let mut t = cfg.damping;
        let full_step = t == 1.0;
        let slack = 1e-14 * (1.0 + psi_x.abs());
        let mut accepted = None;
        for _ in 0..60 {
            let trial_dofs: Vec<f64> = x_dofs.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let trial = mesh.scatter(&x, &trial_dofs);
            let guard_ok = image_areas(mesh, &trial).iter().zip(&dets).all(|(a, b)| *a >= config.det_guard * b);
            if guard_ok {
                if let Ok(v) = psi(&trial) {
                    if v <= psi_x + 1e-4 * t * slope + slack {
                        accepted = Some((trial, v));
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        let Some((trial, v)) = accepted else {
            let worst = VertexPositions { x: x.clone() }.worst_triangle(mesh).map_or(0, |w| w.0);
            return Err(Error::LineSearch(format!("no admissible step at iteration {}, residual {residual:e}, worst triangle {worst}", it + 1)));
        };
        let step = t * d.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        x = trial;
        psi_x = v;
        if full_step && t == 1.0 && step <= cfg.step_tol * 2.0 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NewtonFailure { iterations, residual });
    }
    let final_psi = psi(&x)?;
    if final_psi > e_prev + 1e-11 * (1.0 + e_prev.abs()) {
        return Err(Error::DecreaseViolated { before: e_prev, after: final_psi });
    }
    Ok((VertexPositions::new(mesh, x)?, StepReport { iterations, residual }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mesh2dTrajectory {
    pub times: Vec<f64>,
    pub energies: Vec<f64>,
    /// Smallest image area at each stored time.
    pub min_areas: Vec<f64>,
    pub iterations: Vec<usize>,
    pub snapshots: Vec<(f64, VertexPositions)>,
    pub final_positions: VertexPositions,
}

/// `n_steps` implicit steps from time `t0`, halving a failed step recursively up to a factor 16.
#[allow(clippy::too_many_arguments)]
pub fn run2d(
    mesh: &ReferenceMesh,
    initial: &VertexPositions,
    t0: f64,
    dt: f64,
    n_steps: usize,
    entropy: &EntropySpec,
    potential: Option<&PotentialSpec>,
    config: &Mesh2dConfig,
    snapshot_every: usize,
) -> Result<Mesh2dTrajectory> {
    let metric = MeshMetric::new(mesh, config.metric);
    let min_area = |p: &VertexPositions| p.worst_triangle(mesh).map_or(0.0, |w| w.1);
    let mut traj = Mesh2dTrajectory {
        times: vec![t0],
        energies: vec![energy2d(mesh, initial, entropy, potential)?],
        min_areas: vec![min_area(initial)],
        iterations: vec![0],
        snapshots: vec![(t0, initial.clone())],
        final_positions: initial.clone(),
    };
    fn advance(
        mesh: &ReferenceMesh,
        p: &VertexPositions,
        dt: f64,
        entropy: &EntropySpec,
        potential: Option<&PotentialSpec>,
        metric: &MeshMetric,
        config: &Mesh2dConfig,
        depth: u32,
    ) -> Result<(VertexPositions, usize)> {
        match jko_step2d(mesh, p, dt, entropy, potential, metric, config) {
            Ok((s, r)) => Ok((s, r.iterations)),
            Err(Error::NewtonFailure { .. } | Error::LineSearch(_) | Error::DecreaseViolated { .. } | Error::Singular) if depth < 4 => {
                let (mid, a) = advance(mesh, p, 0.5 * dt, entropy, potential, metric, config, depth + 1)?;
                let (end, b) = advance(mesh, &mid, 0.5 * dt, entropy, potential, metric, config, depth + 1)?;
                Ok((end, a + b))
            }
            Err(e) => Err(e),
        }
    }
    let mut current = initial.clone();
    for step in 1..=n_steps {
        let (next, its) = advance(mesh, &current, dt, entropy, potential, &metric, config, 0)?;
        let t = t0 + step as f64 * dt;
        traj.times.push(t);
        traj.energies.push(energy2d(mesh, &next, entropy, potential)?);
        traj.min_areas.push(min_area(&next));
        traj.iterations.push(its);
        if snapshot_every > 0 && step % snapshot_every == 0 {
            traj.snapshots.push((t, next.clone()));
        }
        current = next;
    }
    traj.final_positions = current;
    Ok(traj)
}

fn cumulative_trapezoid(f: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(f.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in f.windows(2) {
        acc += 0.5 * h * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

/// Inverse of a tabulated nondecreasing function on a uniform grid over `[0, 1]`.
fn invert_table(cdf: &[f64], target: f64) -> f64 {
    let m = cdf.len() - 1;
    let total = cdf[m];
    let y = target * total;
    let k = cdf.partition_point(|v| *v < y).clamp(1, m);
    let (a, b) = (cdf[k - 1], cdf[k]);
    let frac = if b > a { (y - a) / (b - a) } else { 0.0 };
    ((k - 1) as f64 + frac.clamp(0.0, 1.0)) / m as f64
}

/// Knothe-Rosenblatt map of a positive density on the unit square, sampled at
/// the mesh vertices: `x_1 = F_1^{-1}(xi_1)`, `x_2 = F_{2|1}^{-1}(xi_2 | x_1)`.
pub fn knothe_positions(mesh: &ReferenceMesh, density: impl Fn(f64, f64) -> f64, resolution: usize) -> Result<VertexPositions> {
    let m = resolution.max(16);
    let h = 1.0 / m as f64;
    let grid: Vec<f64> = (0..=m).map(|i| i as f64 * h).collect();
    let marginal: Vec<f64> = grid
        .iter()
        .map(|&x| {
            let col: Vec<f64> = grid.iter().map(|&y| density(x, y)).collect();
            *cumulative_trapezoid(&col, h).last().unwrap()
        })
        .collect();
    if marginal.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput("density must be positive and finite on the square".into()));
    }
    let f1 = cumulative_trapezoid(&marginal, h);
    let n = mesh.n;
    let mut x = mesh.vertices.clone();
    for i in 0..=n {
        let a = i as f64 / n as f64;
        let x1 = if i == 0 { 0.0 } else if i == n { 1.0 } else { invert_table(&f1, a) };
        let col: Vec<f64> = grid.iter().map(|&y| density(x1, y)).collect();
        let f2 = cumulative_trapezoid(&col, h);
        for j in 0..=n {
            let b = j as f64 / n as f64;
            let x2 = if j == 0 { 0.0 } else if j == n { 1.0 } else { invert_table(&f2, b) };
            x[j * (n + 1) + i] = [x1, x2];
        }
    }
    VertexPositions::new(mesh, x)
}

/// Quarter Barenblatt of `d_t rho = Delta(rho^m)` centred at the origin corner
/// with `quarter_mass` in the quadrant, at time `t`, plus a uniform floor; the
/// sum is rescaled to carry `quarter_mass` on the square.
pub fn corner_barenblatt(m: f64, quarter_mass: f64, t: f64, floor: f64) -> Result<impl Fn(f64, f64) -> f64> {
    let b = Barenblatt::new(2, m, 4.0 * quarter_mass)?;
    if !(floor > 0.0) {
        return Err(Error::InvalidInput("floor must be positive so that every triangle carries mass".into()));
    }
    // mass of the profile inside the square
    let q = 400;
    let h = 1.0 / q as f64;
    let mut inside = 0.0;
    for i in 0..q {
        for j in 0..q {
            inside += b.density(t, &[(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]) * h * h;
        }
    }
    let scale = quarter_mass / (inside + floor);
    Ok(move |x: f64, y: f64| (b.density(t, &[x, y]) + floor) * scale)
}

/// `int_[0,1]^2 |rho_h - reference|`, integrating the reference on each image
/// triangle by `4^levels` sub-triangles with the edge-midpoint rule.
pub fn l1_error(mesh: &ReferenceMesh, positions: &VertexPositions, reference: impl Fn(f64, f64) -> f64, levels: u32) -> Result<f64> {
    let rho = triangle_densities(mesh, positions)?;
    let x = &positions.x;
    let mut total = 0.0;
    for (i, t) in mesh.triangles.iter().enumerate() {
        let mut stack = vec![(x[t[0]], x[t[1]], x[t[2]], 0u32)];
        while let Some((a, b, c, lvl)) = stack.pop() {
            let ab = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
            let bc = [(b[0] + c[0]) / 2.0, (b[1] + c[1]) / 2.0];
            let ca = [(c[0] + a[0]) / 2.0, (c[1] + a[1]) / 2.0];
            if lvl < levels {
                stack.push((a, ab, ca, lvl + 1));
                stack.push((ab, b, bc, lvl + 1));
                stack.push((ca, bc, c, lvl + 1));
                stack.push((ab, bc, ca, lvl + 1));
            } else {
                let area = 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]));
                let s: f64 = [ab, bc, ca].iter().map(|p| (rho[i] - reference(p[0], p[1])).abs()).sum();
                total += area * s / 3.0;
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mesh_counts() {
        let m = build_reference_mesh(1).unwrap();
        assert_eq!(m.triangles().len(), 2);
        assert!((m.reference_areas().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let m = build_reference_mesh(4).unwrap();
        assert_eq!(m.triangles().len(), 32);
        assert_eq!(m.vertices().len(), 25);
        assert_eq!(m.boundary_count(), 16);
        assert_eq!(m.corner_count(), 4);
        assert!(m.reference_areas().iter().all(|a| *a > 0.0));
    }

    #[test]
    fn densities_and_mass() {
        let m = build_reference_mesh(3).unwrap();
        let id = VertexPositions::identity(&m);
        assert!(triangle_densities(&m, &id).unwrap().iter().all(|r| (r - 1.0).abs() < 1e-14));
        let half: Vec<[f64; 2]> = m.vertices().iter().map(|p| [p[0] / 2.0, p[1] / 2.0]).collect();
        let rho: Vec<f64> = image_areas(&m, &half).iter().zip(m.reference_areas()).map(|(a, r)| r / a).collect();
        assert!(rho.iter().all(|r| (r - 4.0).abs() < 1e-12));
    }

    #[test]
    fn energy_examples() {
        let m = build_reference_mesh(4).unwrap();
        let id = VertexPositions::identity(&m);
        assert_eq!(energy2d(&m, &id, &EntropySpec::boltzmann(), None).unwrap(), 0.0);
        let e = energy2d(&m, &id, &EntropySpec::zero(), Some(&PotentialSpec::linear(0, 1.0))).unwrap();
        assert!((e - 0.5).abs() < 1e-14);
        let g = gradient2d_raw(&m, &id, &EntropySpec::boltzmann(), None).unwrap();
        assert!(g.iter().all(|v| v[0].abs() < 1e-14 && v[1].abs() < 1e-14));
    }

    #[test]
    fn critical_point_step() {
        let m = build_reference_mesh(4).unwrap();
        let id = VertexPositions::identity(&m);
        let metric = MeshMetric::new(&m, MetricForm::Lumped);
        let (next, _) = jko_step2d(&m, &id, 1e-3, &EntropySpec::boltzmann(), None, &metric, &Mesh2dConfig::default()).unwrap();
        for (a, b) in next.positions().iter().zip(id.positions()) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn metric_weights_sum_to_one() {
        let m = build_reference_mesh(5).unwrap();
        let metric = MeshMetric::new(&m, MetricForm::Full);
        assert!((metric.lumped_weights().iter().sum::<f64>() - 1.0).abs() < 1e-14);
        // constant field: |1|^2 = area = 1 per coordinate
        let ones = vec![[1.0, 0.0]; m.vertices().len()];
        assert!((metric.norm_sq(&ones) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn inverted_positions_rejected() {
        let m = build_reference_mesh(2).unwrap();
        let mut x = m.vertices().to_vec();
        x[4] = [1.5, 0.5];
        assert!(matches!(VertexPositions::new(&m, x), Err(Error::InvertedTriangle { .. })));
    }
}
