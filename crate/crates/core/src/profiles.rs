//! Self-similar reference solutions and log-log fits.

use statrs::function::beta::beta;

use crate::error::{Error, Result};

/// Barenblatt profile of `d_t rho = Delta(rho^m)` in dimension `d`:
/// `rho(t, x) = t^{-alpha} (C - k |x|^2 / t^{2 beta})_+^{1/(m-1)}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Barenblatt {
    pub dim: usize,
    pub m: f64,
    pub alpha: f64,
    pub beta: f64,
    pub k: f64,
    pub c: f64,
}

impl Barenblatt {
    /// Profile of total mass `mass` on `R^d`, `d` in {1, 2}.
    pub fn new(dim: usize, m: f64, mass: f64) -> Result<Self> {
        if !(m > 1.0) || !(mass > 0.0) || !(dim == 1 || dim == 2) {
            return Err(Error::InvalidInput(format!("Barenblatt needs d in {{1,2}}, m > 1, mass > 0 (d={dim}, m={m})")));
        }
        let d = dim as f64;
        let alpha = d / (d * (m - 1.0) + 2.0);
        let beta = alpha / d;
        let k = alpha * (m - 1.0) / (2.0 * m * d);
        let p = 1.0 / (m - 1.0);
        // mass of the t = 1 profile as a function of C is a * C^e
        let (a, e) = if dim == 1 {
            (beta_fn(0.5, p + 1.0) / k.sqrt(), p + 0.5)
        } else {
            (std::f64::consts::PI / (k * (p + 1.0)), p + 1.0)
        };
        let c = (mass / a).powf(1.0 / e);
        Ok(Barenblatt { dim, m, alpha, beta, k, c })
    }

    pub fn density(&self, t: f64, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let inner = self.c - self.k * r2 / t.powf(2.0 * self.beta);
        if inner <= 0.0 {
            0.0
        } else {
            t.powf(-self.alpha) * inner.powf(1.0 / (self.m - 1.0))
        }
    }

    pub fn support_radius(&self, t: f64) -> f64 {
        (self.c / self.k).sqrt() * t.powf(self.beta)
    }

    /// `int rho^m dx` at time `t`; decays like `t^{-alpha (m - 1)}`.
    pub fn power_integral(&self, t: f64) -> f64 {
        let p = 1.0 / (self.m - 1.0);
        let q = self.m * p;
        let scale = t.powf(-self.alpha * (self.m - 1.0));
        let base = if self.dim == 1 {
            self.c.powf(q + 0.5) / self.k.sqrt() * beta_fn(0.5, q + 1.0)
        } else {
            std::f64::consts::PI / self.k * self.c.powf(q + 1.0) / (q + 1.0)
        };
        scale * base
    }
}

fn beta_fn(a: f64, b: f64) -> f64 {
    beta(a, b)
}

/// Least-squares slope of `log y` against `log t`.
pub fn loglog_slope(t: &[f64], y: &[f64]) -> Result<f64> {
    if t.len() != y.len() || t.len() < 2 {
        return Err(Error::InvalidInput("slope fit needs two or more matched samples".into()));
    }
    if t.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidInput("log-log fit needs positive data".into()));
    }
    let lx: Vec<f64> = t.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput("slope fit needs distinct times".into()));
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagrangian::gauss_legendre;

    fn mass_1d(b: &Barenblatt, t: f64) -> f64 {
        let r = b.support_radius(t);
        let n = 400;
        (0..n)
            .map(|i| {
                let a = -r + 2.0 * r * i as f64 / n as f64;
                gauss_legendre(&|x| b.density(t, &[x]), a, a + 2.0 * r / n as f64)
            })
            .sum()
    }

    #[test]
    fn unit_mass_in_1d() {
        for m in [2.0, 3.0, 4.0] {
            let b = Barenblatt::new(1, m, 1.0).unwrap();
            for t in [1e-3, 0.1, 2.0] {
                let q = mass_1d(&b, t);
                assert!((q - 1.0).abs() < 1e-5, "m={m} t={t} mass {q}");
            }
        }
    }

    #[test]
    fn quarter_plane_constants() {
        let b = Barenblatt::new(2, 3.0, 4.0).unwrap();
        assert!((b.alpha - 1.0 / 3.0).abs() < 1e-15);
        assert!((b.beta - 1.0 / 6.0).abs() < 1e-15);
        assert!((b.k - 1.0 / 18.0).abs() < 1e-15);
        assert!((b.c - (1.0 / (3.0 * std::f64::consts::PI)).powf(2.0 / 3.0)).abs() < 1e-14);
    }

    #[test]
    fn solves_the_pde_1d() {
        // d_t rho = (rho^m)_xx at an interior point, central differences
        let b = Barenblatt::new(1, 2.0, 1.0).unwrap();
        let (t, x) = (0.05, 0.1);
        let h = 1e-4;
        let dt = (b.density(t + h, &[x]) - b.density(t - h, &[x])) / (2.0 * h);
        let p = |x: f64| b.density(t, &[x]).powi(2);
        let lap = (p(x + h) - 2.0 * p(x) + p(x - h)) / (h * h);
        assert!((dt - lap).abs() < 1e-4 * lap.abs().max(1.0));
    }

    #[test]
    fn power_integral_matches_quadrature() {
        let b = Barenblatt::new(1, 2.0, 1.0).unwrap();
        let t = 0.02;
        let r = b.support_radius(t);
        let q = gauss_legendre(&|x| b.density(t, &[x]).powi(2), -r, r);
        assert!((q - b.power_integral(t)).abs() < 1e-10);
    }

    #[test]
    fn slope_of_power_law() {
        let t: Vec<f64> = (1..20).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|v| 3.0 * v.powf(-0.6)).collect();
        assert!((loglog_slope(&t, &y).unwrap() + 0.6).abs() < 1e-12);
    }
}
