//! Benchmark problems with closed-form solutions.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::mesh::Domain;
use crate::{norm, Error, Point, Result};

const ELLIPSE_A: f64 = PI / 6.18;
const ELLIPSE_B: f64 = 1.5 * ELLIPSE_A;
const ELLIPSE_P: f64 = 5.0;
const RHO0: f64 = 2.0 * std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExampleName {
    /// Elliptic inclusion with a smooth radial solution.
    Ellipse,
    /// L-shaped domain with a circular interface around the reentrant corner.
    LShape,
    /// Twelve-lobed interface.
    Petal,
    /// Global linear solution, reproduced exactly.
    LinearPatch,
    /// Elliptic inclusion with a nonzero flux jump across the interface.
    ManufacturedG,
}

impl ExampleName {
    pub const ALL: [ExampleName; 5] = [
        ExampleName::Ellipse,
        ExampleName::LShape,
        ExampleName::Petal,
        ExampleName::LinearPatch,
        ExampleName::ManufacturedG,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExampleName::Ellipse => "ellipse",
            ExampleName::LShape => "lshape",
            ExampleName::Petal => "petal",
            ExampleName::LinearPatch => "linear-patch",
            ExampleName::ManufacturedG => "manufactured-g",
        }
    }

    pub fn default_mu(self) -> f64 {
        match self {
            ExampleName::Ellipse | ExampleName::LinearPatch => 1.0,
            ExampleName::LShape => 5.0,
            ExampleName::Petal => 100.0,
            ExampleName::ManufacturedG => 2.0,
        }
    }

    /// Dof budget that stops the adaptive loop.
    pub fn default_max_dofs(self) -> usize {
        match self {
            ExampleName::Ellipse => 30_000,
            ExampleName::LShape => 60_000,
            ExampleName::Petal => 20_000,
            ExampleName::LinearPatch => 2_000,
            ExampleName::ManufacturedG => 10_000,
        }
    }

    /// Initial subdivisions per axis of the whole domain.
    pub fn default_n0(self) -> usize {
        match self {
            ExampleName::LShape => 16,
            _ => 8,
        }
    }
}

impl fmt::Display for ExampleName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExampleName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExampleName::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown example '{s}'")))
    }
}

/// Closed-form solution `u_s`, data and level set of a benchmark problem.
///
/// Side 0 is `phi < 0` with diffusivity `k[0]`, side 1 is `phi > 0` with `k[1]`.
/// Every side formula is a smooth extension beyond its own region.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactSolution {
    pub name: ExampleName,
    pub mu: f64,
    pub k: [f64; 2],
    pub domain: Domain,
}

pub fn make_example(name: ExampleName, mu: f64) -> Result<ExactSolution> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "contrast must be positive, got {mu}"
        )));
    }
    let (k, domain) = match name {
        ExampleName::LinearPatch => ([1.0, 1.0], Domain::Square { a: -1.0, b: 1.0 }),
        ExampleName::LShape => ([1.0, mu], Domain::LShape { a: -5.0, b: 5.0 }),
        _ => ([1.0, mu], Domain::Square { a: -1.0, b: 1.0 }),
    };
    Ok(ExactSolution {
        name,
        mu,
        k,
        domain,
    })
}

fn ellipse_q(x: Point) -> f64 {
    x[0] * x[0] / (ELLIPSE_A * ELLIPSE_A) + x[1] * x[1] / (ELLIPSE_B * ELLIPSE_B)
}

/// Gradient of `q = x^2/a^2 + y^2/b^2`.
fn ellipse_q_grad(x: Point) -> Point {
    [
        2.0 * x[0] / (ELLIPSE_A * ELLIPSE_A),
        2.0 * x[1] / (ELLIPSE_B * ELLIPSE_B),
    ]
}

const LAPLACE_Q: f64 = 2.0 / (ELLIPSE_A * ELLIPSE_A) + 2.0 / (ELLIPSE_B * ELLIPSE_B);

/// Polar angle in `[0, 3 pi / 2]` on the L-shaped domain.
fn lshape_angle(x: Point) -> f64 {
    let t = x[1].atan2(x[0]);
    if t < 0.0 {
        t + 2.0 * PI
    } else {
        t
    }
}

fn lshape_b(mu: f64) -> f64 {
    2.0 / (3.0 * mu) * RHO0.powf(-1.0 / 3.0)
}

fn petal_phi(x: Point) -> f64 {
    let r2 = x[0] * x[0] + x[1] * x[1];
    let t = x[1].atan2(x[0]);
    r2 * r2 * (1.0 + 0.5 * (12.0 * t).sin()) - 0.3
}

fn petal_grad(x: Point) -> Point {
    let r2 = x[0] * x[0] + x[1] * x[1];
    let t = x[1].atan2(x[0]);
    let radial = 4.0 * r2 * (1.0 + 0.5 * (12.0 * t).sin());
    let angular = 6.0 * r2 * (12.0 * t).cos();
    [
        radial * x[0] - angular * x[1],
        radial * x[1] + angular * x[0],
    ]
}

impl ExactSolution {
    /// Level set: negative on side 0.
    pub fn phi(&self, x: Point) -> f64 {
        match self.name {
            ExampleName::Ellipse | ExampleName::LinearPatch | ExampleName::ManufacturedG => {
                ellipse_q(x).sqrt() - 1.0
            }
            ExampleName::LShape => norm(x) - RHO0,
            ExampleName::Petal => petal_phi(x),
        }
    }

    fn phi_grad(&self, x: Point) -> Point {
        match self.name {
            ExampleName::Ellipse | ExampleName::LinearPatch | ExampleName::ManufacturedG => {
                let g = ellipse_q_grad(x);
                let r = ellipse_q(x).sqrt();
                [0.5 * g[0] / r, 0.5 * g[1] / r]
            }
            ExampleName::LShape => {
                let r = norm(x);
                [x[0] / r, x[1] / r]
            }
            ExampleName::Petal => petal_grad(x),
        }
    }

    /// Unit normal of the level sets, pointing from side 0 to side 1.
    pub fn interface_normal(&self, x: Point) -> Point {
        let g = self.phi_grad(x);
        let n = norm(g);
        [g[0] / n, g[1] / n]
    }

    pub fn u(&self, s: usize, x: Point) -> f64 {
        let k = self.k;
        match self.name {
            ExampleName::Ellipse => {
                let rp = ellipse_q(x).powf(0.5 * ELLIPSE_P);
                if s == 0 {
                    rp / k[0]
                } else {
                    rp / k[1] + 1.0 / k[0] - 1.0 / k[1]
                }
            }
            ExampleName::LShape => {
                let (r, t) = (norm(x), lshape_angle(x));
                let sn = (2.0 * t / 3.0).sin();
                if s == 0 {
                    r.powf(2.0 / 3.0) * sn
                } else {
                    sn * (RHO0.powf(2.0 / 3.0) + lshape_b(self.mu) * (r - RHO0))
                }
            }
            ExampleName::Petal => petal_phi(x) / k[s],
            ExampleName::LinearPatch => x[0] + x[1],
            ExampleName::ManufacturedG => {
                let q = ellipse_q(x);
                if s == 0 {
                    q
                } else {
                    2.0 * q - 1.0
                }
            }
        }
    }

    pub fn grad(&self, s: usize, x: Point) -> Point {
        let k = self.k;
        match self.name {
            ExampleName::Ellipse => {
                // grad q^(p/2) = (p/2) q^(p/2 - 1) grad q
                let q = ellipse_q(x);
                let g = ellipse_q_grad(x);
                let c = 0.5 * ELLIPSE_P * q.powf(0.5 * ELLIPSE_P - 1.0) / k[s];
                [c * g[0], c * g[1]]
            }
            ExampleName::LShape => {
                let (r, t) = (norm(x), lshape_angle(x));
                let (sn, cs) = ((2.0 * t / 3.0).sin(), (2.0 * t / 3.0).cos());
                let (dr, dt) = if s == 0 {
                    (
                        2.0 / 3.0 * r.powf(-1.0 / 3.0) * sn,
                        2.0 / 3.0 * r.powf(-1.0 / 3.0) * cs,
                    )
                } else {
                    let b = lshape_b(self.mu);
                    let radial = RHO0.powf(2.0 / 3.0) + b * (r - RHO0);
                    (b * sn, 2.0 / 3.0 * radial * cs / r)
                };
                let (c, sn_t) = (x[0] / r, x[1] / r);
                [dr * c - dt * sn_t, dr * sn_t + dt * c]
            }
            ExampleName::Petal => {
                let g = petal_grad(x);
                [g[0] / k[s], g[1] / k[s]]
            }
            ExampleName::LinearPatch => [1.0, 1.0],
            ExampleName::ManufacturedG => {
                let g = ellipse_q_grad(x);
                let c = if s == 0 { 1.0 } else { 2.0 };
                [c * g[0], c * g[1]]
            }
        }
    }

    /// Exact flux `k_s grad u_s`.
    pub fn flux(&self, s: usize, x: Point) -> Point {
        let g = self.grad(s, x);
        [self.k[s] * g[0], self.k[s] * g[1]]
    }

    /// Source `-div(k_s grad u_s)`.
    pub fn f(&self, s: usize, x: Point) -> f64 {
        match self.name {
            ExampleName::Ellipse => {
                let q = ellipse_q(x);
                let p = ELLIPSE_P;
                let (a2, b2) = (ELLIPSE_A * ELLIPSE_A, ELLIPSE_B * ELLIPSE_B);
                let quad = x[0] * x[0] / (a2 * a2) + x[1] * x[1] / (b2 * b2);
                -p * q.powf(0.5 * p - 2.0) * ((p - 2.0) * quad + q * (1.0 / a2 + 1.0 / b2))
            }
            ExampleName::LShape => {
                if s == 0 {
                    0.0
                } else {
                    let (r, t) = (norm(x), lshape_angle(x));
                    let sn = (2.0 * t / 3.0).sin();
                    let b = lshape_b(self.mu);
                    let a = RHO0.powf(2.0 / 3.0) - b * RHO0;
                    -self.mu * sn * (b / r - 4.0 / 9.0 * (a + b * r) / (r * r))
                }
            }
            ExampleName::Petal => {
                let r2 = x[0] * x[0] + x[1] * x[1];
                let t = x[1].atan2(x[0]);
                -r2 * (16.0 - 64.0 * (12.0 * t).sin())
            }
            ExampleName::LinearPatch => 0.0,
            ExampleName::ManufacturedG => {
                let c = if s == 0 { 1.0 } else { 2.0 };
                -self.k[s] * c * LAPLACE_Q
            }
        }
    }

    /// Flux jump `(k_0 grad u_0 - k_1 grad u_1) . n` across the level sets at `x`.
    pub fn g(&self, x: Point) -> f64 {
        if !self.has_g() {
            return 0.0;
        }
        let (a, b) = (self.flux(0, x), self.flux(1, x));
        let n = self.interface_normal(x);
        (a[0] - b[0]) * n[0] + (a[1] - b[1]) * n[1]
    }

    pub fn has_g(&self) -> bool {
        self.name == ExampleName::ManufacturedG
    }

    /// `count` points on the exact interface.
    pub fn interface_samples(&self, count: usize) -> Vec<Point> {
        (0..count)
            .map(|i| {
                let t = (i as f64 + 0.5) / count as f64;
                match self.name {
                    ExampleName::Ellipse
                    | ExampleName::LinearPatch
                    | ExampleName::ManufacturedG => {
                        let a = 2.0 * PI * t;
                        [ELLIPSE_A * a.cos(), ELLIPSE_B * a.sin()]
                    }
                    ExampleName::LShape => {
                        let a = 1.5 * PI * t;
                        [RHO0 * a.cos(), RHO0 * a.sin()]
                    }
                    ExampleName::Petal => {
                        let a = 2.0 * PI * t;
                        let r = (0.3 / (1.0 + 0.5 * (12.0 * a).sin())).powf(0.25);
                        [r * a.cos(), r * a.sin()]
                    }
                }
            })
            .collect()
    }
}

impl crate::assembly::Source for ExactSolution {
    fn f(&self, s: usize, x: Point) -> f64 {
        ExactSolution::f(self, s, x)
    }

    fn g(&self, x: Point) -> Option<f64> {
        self.has_g().then(|| ExactSolution::g(self, x))
    }

    fn boundary(&self, s: usize, x: Point) -> f64 {
        self.u(s, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn in_domain(e: &ExactSolution, x: Point) -> bool {
        match e.domain {
            Domain::Square { a, b } => x.iter().all(|&c| c > a && c < b),
            Domain::LShape { a, b } => {
                x.iter().all(|&c| c > a && c < b) && !(x[0] >= 0.0 && x[1] <= 0.0)
            }
        }
    }

    fn random_points(e: &ExactSolution, n: usize, seed: u64) -> Vec<Point> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = match e.domain {
            Domain::Square { a, b } | Domain::LShape { a, b } => (a, b),
        };
        let mut out = Vec::new();
        while out.len() < n {
            let x = [rng.random_range(a..b), rng.random_range(a..b)];
            // Keep clear of the singular corner and of the exact interface.
            if in_domain(e, x) && norm(x) > 0.05 * (b - a) && e.phi(x).abs() > 1e-3 {
                out.push(x);
            }
        }
        out
    }

    fn side(e: &ExactSolution, x: Point) -> usize {
        usize::from(e.phi(x) > 0.0)
    }

    #[test]
    fn sources_match_finite_difference_laplacian() {
        let h = 1e-3;
        for name in ExampleName::ALL {
            let e = make_example(name, 7.0).unwrap();
            for x in random_points(&e, 100, 11) {
                let s = side(&e, x);
                let u = |dx: f64, dy: f64| e.u(s, [x[0] + dx, x[1] + dy]);
                // Fourth-order five-point stencil in each direction.
                let d2 = |f: &dyn Fn(f64) -> f64| {
                    (-f(2.0 * h) + 16.0 * f(h) - 30.0 * f(0.0) + 16.0 * f(-h) - f(-2.0 * h))
                        / (12.0 * h * h)
                };
                let lap = d2(&|t| u(t, 0.0)) + d2(&|t| u(0.0, t));
                let fd = -e.k[s] * lap;
                let f = e.f(s, x);
                assert!(
                    (fd - f).abs() <= 1e-4 * f.abs().max(1.0),
                    "{name}: f = {f}, finite difference {fd} at {x:?}"
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let h = 1e-6;
        for name in ExampleName::ALL {
            let e = make_example(name, 3.0).unwrap();
            for x in random_points(&e, 100, 12) {
                for s in 0..2 {
                    let g = e.grad(s, x);
                    let dx = (e.u(s, [x[0] + h, x[1]]) - e.u(s, [x[0] - h, x[1]])) / (2.0 * h);
                    let dy = (e.u(s, [x[0], x[1] + h]) - e.u(s, [x[0], x[1] - h])) / (2.0 * h);
                    let scale = norm(g).max(1.0);
                    assert!(
                        (g[0] - dx).abs() <= 1e-6 * scale && (g[1] - dy).abs() <= 1e-6 * scale,
                        "{name}"
                    );
                }
            }
        }
    }

    #[test]
    fn interface_conditions_hold() {
        for name in ExampleName::ALL {
            for mu in [1.0, 10.0, 1e4] {
                let e = make_example(name, mu).unwrap();
                for x in e.interface_samples(100) {
                    assert!(e.phi(x).abs() < 1e-12, "{name}: sample off the interface");
                    assert!((e.u(0, x) - e.u(1, x)).abs() <= 1e-8, "{name}: [u] != 0");
                    let (a, b) = (e.flux(0, x), e.flux(1, x));
                    let n = e.interface_normal(x);
                    let jump = (a[0] - b[0]) * n[0] + (a[1] - b[1]) * n[1];
                    assert!(
                        (jump - e.g(x)).abs() <= 1e-8 * jump.abs().max(1.0),
                        "{name}: flux jump"
                    );
                }
            }
        }
    }

    #[test]
    fn example_identities() {
        let e = make_example(ExampleName::Ellipse, 1.0).unwrap();
        assert_eq!(e.k, [1.0, 1.0]);
        let x = e.interface_samples(1)[0];
        assert!((e.u(0, x) - 1.0).abs() < 1e-12 && (e.u(1, x) - 1.0).abs() < 1e-12);
        let l = make_example(ExampleName::LShape, 5.0).unwrap();
        assert_eq!(l.f(0, [-1.0, 0.5]), 0.0);
        let p = make_example(ExampleName::Petal, 100.0).unwrap();
        let y = [0.3, 0.2];
        assert!((p.flux(0, y)[0] - p.flux(1, y)[0]).abs() < 1e-14);
        let m = make_example(ExampleName::ManufacturedG, 2.0).unwrap();
        assert!(m.interface_samples(50).iter().all(|&x| m.g(x).abs() > 0.1));
        assert!(make_example(ExampleName::Petal, 0.0).is_err());
        assert_eq!(
            "lshape".parse::<ExampleName>().unwrap(),
            ExampleName::LShape
        );
        assert!("circle".parse::<ExampleName>().is_err());
    }
}
