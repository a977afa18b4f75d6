#![allow(clippy::needless_range_loop)]

use gradflow::functionals::{EntropySpec, PotentialSpec};

use gradflow::lagrangian::MetricForm;
use gradflow::mesh2d::*;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Random valid positions: interior vertices jittered by up to `amp * h` per
/// free component, redrawn until no triangle inverts.
fn perturbed(mesh: &ReferenceMesh, rng: &mut StdRng, amp: f64) -> VertexPositions {
    let h = 1.0 / mesh.subdivisions() as f64;
    loop {
        let x: Vec<[f64; 2]> = mesh
            .vertices()
            .iter()
            .zip(mesh.kinds())
            .map(|(p, k)| {
                let mut q = *p;
                for c in 0..2 {
                    let free = match k {
                        VertexKind::Interior => true,
                        VertexKind::Edge { fixed_axis } => *fixed_axis != c,
                        VertexKind::Corner => false,
                    };
                    if free {
                        q[c] += amp * h * rng.random_range(-1.0..1.0);
                    }
                }
                q
            })
            .collect();
        if let Ok(p) = VertexPositions::new(mesh, x) {
            return p;
        }
    }
}

fn shifted(mesh: &ReferenceMesh, p: &VertexPositions, v: usize, c: usize, d: f64) -> VertexPositions {
    let mut x = p.positions().to_vec();
    x[v][c] += d;
    VertexPositions::new(mesh, x).unwrap()
}

fn cases() -> Vec<(EntropySpec, Option<PotentialSpec>)> {
    vec![
        (EntropySpec::boltzmann(), None),
        (EntropySpec::power(3.0).unwrap(), None),
        (EntropySpec::power(2.0).unwrap(), Some(PotentialSpec::quadratic(1.5))),
        (EntropySpec::zero(), Some(PotentialSpec::polynomial(vec![0.0, 1.0, -0.5, 0.3]))),
    ]
}

fn free(mesh: &ReferenceMesh, v: usize, c: usize) -> bool {
    match mesh.kinds()[v] {
        VertexKind::Interior => true,
        VertexKind::Edge { fixed_axis } => fixed_axis != c,
        VertexKind::Corner => false,
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let mesh = build_reference_mesh(4).unwrap();
    let mut rng = StdRng::seed_from_u64(7);
    let d = 1e-6;
    for (ent, pot) in cases() {
        for _ in 0..5 {
            let p = perturbed(&mesh, &mut rng, 0.3);
            let g = gradient2d_raw(&mesh, &p, &ent, pot.as_ref()).unwrap();
            let scale = g.iter().flat_map(|v| v.iter()).fold(1e-3f64, |a, b| a.max(b.abs()));
            for v in 0..mesh.vertices().len() {
                for c in 0..2 {
                    if !free(&mesh, v, c) {
                        assert_eq!(g[v][c], 0.0);
                        continue;
                    }
                    let ep = energy2d(&mesh, &shifted(&mesh, &p, v, c, d), &ent, pot.as_ref()).unwrap();
                    let em = energy2d(&mesh, &shifted(&mesh, &p, v, c, -d), &ent, pot.as_ref()).unwrap();
                    let fd = (ep - em) / (2.0 * d);
                    assert!((fd - g[v][c]).abs() <= 1e-6 * scale, "{} vertex {v} comp {c}: {fd} vs {}", ent.name(), g[v][c]);
                }
            }
        }
    }
}

#[test]
fn hessian_matches_finite_differences() {
    let mesh = build_reference_mesh(3).unwrap();
    let mut rng = StdRng::seed_from_u64(8);
    let d = 1e-5;
    let dofs: Vec<(usize, usize)> =
        (0..mesh.vertices().len()).flat_map(|v| (0..2).map(move |c| (v, c))).filter(|&(v, c)| free(&mesh, v, c)).collect();
    for (ent, pot) in cases() {
        let p = perturbed(&mesh, &mut rng, 0.3);
        let h = hessian2d(&mesh, &p, &ent, pot.as_ref()).unwrap();
        let mut scale = 1e-3f64;
        for i in 0..dofs.len() {
            for j in 0..dofs.len() {
                scale = scale.max(h.get(i, j).abs());
            }
        }
        for (j, &(v, c)) in dofs.iter().enumerate() {
            let gp = gradient2d_raw(&mesh, &shifted(&mesh, &p, v, c, d), &ent, pot.as_ref()).unwrap();
            let gm = gradient2d_raw(&mesh, &shifted(&mesh, &p, v, c, -d), &ent, pot.as_ref()).unwrap();
            for (i, &(w, e)) in dofs.iter().enumerate() {
                let fd = (gp[w][e] - gm[w][e]) / (2.0 * d);
                assert!((fd - h.get(i, j)).abs() <= 1e-5 * scale, "{} ({i},{j}): {fd} vs {}", ent.name(), h.get(i, j));
            }
        }
    }
}

fn barycentric(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> [f64; 3] {
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let l1 = ((b[0] - p[0]) * (c[1] - p[1]) - (b[1] - p[1]) * (c[0] - p[0])) / det;
    let l2 = ((c[0] - p[0]) * (a[1] - p[1]) - (c[1] - p[1]) * (a[0] - p[0])) / det;
    [l1, l2, 1.0 - l1 - l2]
}

#[test]
fn energy_matches_monte_carlo() {
    let mesh = build_reference_mesh(4).unwrap();
    let mut rng = StdRng::seed_from_u64(11);
    let p = perturbed(&mesh, &mut rng, 0.3);
    let rho = triangle_densities(&mesh, &p).unwrap();
    let ent = EntropySpec::boltzmann();
    // linear potential: the centroid rule is exact, so only sampling error remains
    let pot = PotentialSpec::linear(1, 2.0);
    let exact = energy2d(&mesh, &p, &ent, Some(&pot)).unwrap();
    let x = p.positions();
    let n = 1_000_000;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n {
        let q = [rng.random::<f64>(), rng.random::<f64>()];
        let t = mesh
            .triangles()
            .iter()
            .position(|t| barycentric(q, x[t[0]], x[t[1]], x[t[2]]).iter().all(|l| *l >= -1e-14))
            .expect("the image triangles tile the square");
        let r = rho[t];
        let f = ent.h(r) + r * pot.value(&q);
        sum += f;
        sum_sq += f * f;
    }
    let mean = sum / n as f64;
    let sd = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
    assert!((mean - exact).abs() < 5.0 * sd, "{mean} vs {exact} (sd {sd})");
}

#[test]
fn symmetric_star_telescopes() {
    // the centre of a 2x2 mesh sees a symmetric star; scaling the star keeps the densities equal
    let mesh = build_reference_mesh(2).unwrap();
    let g = gradient2d_raw(&mesh, &VertexPositions::identity(&mesh), &EntropySpec::power(3.0).unwrap(), None).unwrap();
    assert!(g[4][0].abs() < 1e-15 && g[4][1].abs() < 1e-15);
    let mesh = build_reference_mesh(6).unwrap();
    let mut x = mesh.vertices().to_vec();
    // contract the inner ring around vertex (3, 3) uniformly
    let c = 3 * 7 + 3;
    for v in [c - 1, c + 1, c - 7, c + 7, c - 8, c + 8] {
        x[v] = [0.5 + 0.8 * (x[v][0] - 0.5), 0.5 + 0.8 * (x[v][1] - 0.5)];
    }
    let p = VertexPositions::new(&mesh, x).unwrap();
    let g = gradient2d_raw(&mesh, &p, &EntropySpec::boltzmann(), None).unwrap();
    assert!(g[c][0].abs() < 1e-14 && g[c][1].abs() < 1e-14);
}

#[test]
fn heat_step_decreases_energy() {
    let mesh = build_reference_mesh(8).unwrap();
    let x: Vec<[f64; 2]> = mesh
        .vertices()
        .iter()
        .zip(mesh.kinds())
        .map(|(p, k)| {
            let r = ((p[0] - 0.5).powi(2) + (p[1] - 0.5).powi(2)).sqrt();
            let f = 1.0 + 0.3 * (std::f64::consts::PI * r).cos() * (1.0 - r);
            let mut q = [0.5 + f * 0.4 * (p[0] - 0.5) / 0.5 * 0.5 + 0.1 * (p[0] - 0.5), 0.5 + f * 0.4 * (p[1] - 0.5) / 0.5 * 0.5 + 0.1 * (p[1] - 0.5)];
            match k {
                VertexKind::Interior => {}
                VertexKind::Edge { fixed_axis } => q[*fixed_axis] = p[*fixed_axis],
                VertexKind::Corner => q = *p,
            }
            q
        })
        .collect();
    let p = VertexPositions::new(&mesh, x).unwrap();
    let ent = EntropySpec::boltzmann();
    let e0 = energy2d(&mesh, &p, &ent, None).unwrap();
    assert!(e0 > 1e-3);
    for form in [MetricForm::Lumped, MetricForm::Full] {
        let metric = MeshMetric::new(&mesh, form);
        let cfg = Mesh2dConfig { metric: form, ..Mesh2dConfig::default() };
        let (next, _) = jko_step2d(&mesh, &p, 1e-3, &ent, None, &metric, &cfg).unwrap();
        let e1 = energy2d(&mesh, &next, &ent, None).unwrap();
        assert!(e1 < e0, "{form:?}: {e1} >= {e0}");
        let mass: f64 = triangle_densities(&mesh, &next).unwrap().iter().zip(image_areas(&mesh, next.positions())).map(|(r, a)| r * a).sum();
        assert!((mass - 1.0).abs() < 1e-12);
    }
}

#[test]
fn knothe_map_reproduces_density() {
    // piecewise-constant approximation: first order in the mesh size
    let rho = |x: f64, y: f64| (1.0 + x) * (1.0 + 2.0 * y) / 3.0;
    let err = |n| {
        let mesh = build_reference_mesh(n).unwrap();
        let p = knothe_positions(&mesh, rho, 4000).unwrap();
        l1_error(&mesh, &p, rho, 3).unwrap()
    };
    let (coarse, fine) = (err(8), err(16));
    assert!(fine < 0.025 && (coarse / fine - 2.0).abs() < 0.2, "L1 {coarse} -> {fine}");
}

#[test]
fn scaled_mass_is_carried() {
    let mesh = build_reference_mesh(4).unwrap().with_mass(0.25).unwrap();
    assert!((mesh.mass() - 0.25).abs() < 1e-15);
    let p = VertexPositions::identity(&mesh);
    assert!(triangle_densities(&mesh, &p).unwrap().iter().all(|r| (r - 0.25).abs() < 1e-14));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mass_is_structural(seed in any::<u64>(), amp in 0.0f64..0.4) {
        let mesh = build_reference_mesh(5).unwrap();
        let mut rng = StdRng::seed_from_u64(seed);
        let p = perturbed(&mesh, &mut rng, amp);
        let rho = triangle_densities(&mesh, &p).unwrap();
        let mass: f64 = rho.iter().zip(image_areas(&mesh, p.positions())).map(|(r, a)| r * a).sum();
        prop_assert!((mass - 1.0).abs() < 1e-12);
        let total: f64 = image_areas(&mesh, p.positions()).iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn step_keeps_triangles_positive(seed in any::<u64>()) {
        let mesh = build_reference_mesh(4).unwrap();
        let mut rng = StdRng::seed_from_u64(seed);
        let p = perturbed(&mesh, &mut rng, 0.35);
        let ent = EntropySpec::power(3.0).unwrap();
        let metric = MeshMetric::new(&mesh, MetricForm::Lumped);
        let (next, _) = jko_step2d(&mesh, &p, 1e-2, &ent, None, &metric, &Mesh2dConfig::default()).unwrap();
        prop_assert!(next.worst_triangle(&mesh).unwrap().1 > 0.0);
        prop_assert!(energy2d(&mesh, &next, &ent, None).unwrap() <= energy2d(&mesh, &p, &ent, None).unwrap());
    }
}
