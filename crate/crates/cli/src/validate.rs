//! Seeded self-checks of the tempered-calculus kernels and the discrete
//! scheme: operator identities with independent quadrature oracles, the
//! discrete coercivity bound, and the upwind dissipation identity.

use std::f64::consts::PI;
use std::rc::Rc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::gamma;
use tempered_dg::assembly::{assemble_convection, assemble_fractional_axis};
use tempered_dg::mesh::{Axis, Mesh};
use tempered_dg::quadrature::{integrate_adaptive, TanhSinh};
use tempered_dg::space::{line_fractional_seminorm_sq, DgFunction, DgSpace};
use tempered_dg::tempered::{tempered_integral, PiecewisePoly1D, Side, TemperedDeriv};

pub struct CheckResult {
    pub name: &'static str,
    pub pass: bool,
    /// worst absolute (or bound-relative) defect observed
    pub worst: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!(
            "{}: {} (worst {:.3e}, tolerance {:.1e})",
            self.name,
            if self.pass { "pass" } else { "FAIL" },
            self.worst,
            self.tolerance
        )
    }
}

fn poly(coeffs: Vec<f64>) -> PiecewisePoly1D {
    PiecewisePoly1D::single(0.0, 1.0, coeffs).unwrap()
}

fn rand_coeffs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// (I_left u, v) = (u, I_right v) on random polynomials
fn check_adjointness(rng: &mut ChaCha8Rng) -> CheckResult {
    let tol = 1e-9;
    let mut worst = 0.0f64;
    for _ in 0..12 {
        let u = poly(rand_coeffs(rng, 3));
        let v = poly(rand_coeffs(rng, 2));
        let mu = rng.gen_range(0.2..0.9);
        let lambda = rng.gen_range(0.0..3.0);
        let lhs = integrate_adaptive(
            |x| tempered_integral(&u, mu, lambda, x, Side::Left).unwrap() * v.eval(x),
            0.0,
            1.0,
            1e-12,
        );
        let rhs = integrate_adaptive(
            |x| u.eval(x) * tempered_integral(&v, mu, lambda, x, Side::Right).unwrap(),
            0.0,
            1.0,
            1e-12,
        );
        worst = worst.max((lhs - rhs).abs());
    }
    CheckResult {
        name: "integral adjointness",
        pass: worst <= tol,
        worst,
        tolerance: tol,
    }
}

/// I^mu (I^nu u) = I^{mu+nu} u with an endpoint-singular outer quadrature
fn check_semigroup(rng: &mut ChaCha8Rng) -> CheckResult {
    let tol = 1e-9;
    let ts = TanhSinh::new(0.15);
    let mut worst = 0.0f64;
    for _ in 0..6 {
        let u = poly(rand_coeffs(rng, 4));
        let mu = rng.gen_range(0.2..0.6);
        let nu = rng.gen_range(0.2..0.6);
        let lambda = rng.gen_range(0.0..2.0);
        for x in [0.3, 0.7, 1.0] {
            let nested = ts.integrate(0.0, x, |xi, _, dr| {
                dr.powf(mu - 1.0)
                    * (-lambda * dr).exp()
                    * tempered_integral(&u, nu, lambda, xi, Side::Left).unwrap()
            }) / gamma(mu);
            let direct = tempered_integral(&u, mu + nu, lambda, x, Side::Left).unwrap();
            worst = worst.max((nested - direct).abs());
        }
    }
    CheckResult {
        name: "integral semigroup",
        pass: worst <= tol,
        worst,
        tolerance: tol,
    }
}

/// RL = Caputo for functions vanishing at both endpoints
fn check_rl_caputo(rng: &mut ChaCha8Rng) -> CheckResult {
    let tol = 1e-8;
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let a = rng.gen_range(-2.0..2.0);
        let b = rng.gen_range(-2.0..2.0);
        let mu = rng.gen_range(0.15..0.9);
        let lambda = rng.gen_range(0.0..2.5);
        // u = x(1-x)(a + b x)
        let u = poly(vec![0.0, a, b - a, -b]);
        for side in [Side::Left, Side::Right] {
            let rl = TemperedDeriv::riemann_liouville(&u, mu, lambda, side).unwrap();
            let ca = TemperedDeriv::caputo(&u, mu, lambda, side).unwrap();
            for x in [0.21, 0.5, 0.83] {
                worst = worst.max((rl.eval(x).unwrap() - ca.eval(x).unwrap()).abs());
            }
        }
    }
    CheckResult {
        name: "RL equals Caputo on vanishing traces",
        pass: worst <= tol,
        worst,
        tolerance: tol,
    }
}

/// at lambda = 0 the derivative obeys the classical power rule
fn check_power_rule(rng: &mut ChaCha8Rng) -> CheckResult {
    let tol = 1e-12;
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let mu = rng.gen_range(0.1..0.95);
        for p in [1usize, 2, 3] {
            let mut c = vec![0.0; p + 1];
            c[p] = 1.0;
            let d = TemperedDeriv::riemann_liouville(&poly(c), mu, 0.0, Side::Left).unwrap();
            for x in [0.3f64, 0.6, 0.95] {
                let exact =
                    gamma(p as f64 + 1.0) / gamma(p as f64 + 1.0 - mu) * x.powf(p as f64 - mu);
                worst = worst.max((d.eval(x).unwrap() - exact).abs() / exact.abs().max(1.0));
            }
        }
    }
    CheckResult {
        name: "untempered power rule",
        pass: worst <= tol,
        worst,
        tolerance: tol,
    }
}

/// symmetrized half-order form >= cos(pi alpha/2) |v|^2_{alpha/2}
fn check_coercivity(rng: &mut ChaCha8Rng) -> CheckResult {
    let tol = 1e-4; // relative slack on the bound
    let mesh = Mesh::interval(0.0, 1.0, 4).unwrap();
    let sp = Rc::new(DgSpace::new(mesh, 1).unwrap());
    let ray = sp.mesh().ray_segments(Axis::X, 0.0).unwrap();
    let mut worst = 0.0f64;
    for alpha in [0.2, 0.5, 0.8] {
        let a = assemble_fractional_axis(&sp, Axis::X, 0.5 * alpha, 0.0, true).unwrap();
        let bound = (PI * alpha / 2.0).cos();
        for _ in 0..20 {
            let v: Vec<f64> = rand_coeffs(rng, sp.num_dofs());
            let quad = a.bilinear(&v, &v);
            let f = DgFunction {
                space: Rc::clone(&sp),
                coeffs: v,
            };
            let semi =
                line_fractional_seminorm_sq(&f.ray_poly(&ray), 0.5 * alpha, 0.0, true).unwrap();
            if semi > 1e-14 {
                // defect of the coercivity bound, relative to the bound
                worst = worst.max((bound * semi - quad) / (bound * semi));
            }
        }
    }
    CheckResult {
        name: "coercivity constant cos(pi alpha/2)",
        pass: worst <= tol,
        worst,
        tolerance: tol,
    }
}

/// convection quadratic form equals the half-sum of |b.n|-weighted
/// squared jumps over all faces (zero exterior trace on the boundary)
pub fn check_upwind_identity(rng: &mut ChaCha8Rng, cases: usize) -> CheckResult {
    let tol = 1e-10;
    let mesh1 = Mesh::interval(0.0, 2.0, 4).unwrap();
    let sp1 = Rc::new(DgSpace::new(mesh1, 2).unwrap());
    let mesh2 = Mesh::structured_rect([0.0, 2.0], [0.0, 2.0], 2, 2).unwrap();
    let sp2 = Rc::new(DgSpace::new(mesh2, 1).unwrap());
    let mut worst = 0.0f64;
    for (sp, b) in [(&sp1, [1.0, 0.0]), (&sp2, [0.5, 0.5])] {
        let s = assemble_convection(sp, b);
        for _ in 0..cases.div_ceil(2) {
            let v: Vec<f64> = rand_coeffs(rng, sp.num_dofs());
            let quad = s.bilinear(&v, &v);
            let mut jumps = 0.0;
            for face in sp.mesh().faces() {
                let bn: f64 = b[0] * face.normal[0] + b[1] * face.normal[1];
                let k1 = sp.local_of(face.elems.0).unwrap();
                let k2 = face.elems.1.map(|e| sp.local_of(e).unwrap());
                for (x, w) in sp.face_quad(&face) {
                    let t1: f64 = sp
                        .basis_at(k1, x)
                        .iter()
                        .enumerate()
                        .map(|(j, b)| b * v[sp.dof(k1, j)])
                        .sum();
                    let t2: f64 = k2.map_or(0.0, |k2| {
                        sp.basis_at(k2, x)
                            .iter()
                            .enumerate()
                            .map(|(j, b)| b * v[sp.dof(k2, j)])
                            .sum()
                    });
                    jumps += 0.5 * w * bn.abs() * (t1 - t2) * (t1 - t2);
                }
            }
            worst = worst.max((quad - jumps).abs());
        }
    }
    CheckResult {
        name: "upwind dissipation identity",
        pass: worst <= tol,
        worst,
        tolerance: tol,
    }
}

/// Full suite; deterministic for a fixed seed.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        check_adjointness(&mut rng),
        check_semigroup(&mut rng),
        check_rl_caputo(&mut rng),
        check_power_rule(&mut rng),
        check_coercivity(&mut rng),
        check_upwind_identity(&mut rng, 100),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_default_seed() {
        for r in run_all(0) {
            assert!(r.pass, "{}", r.line());
        }
    }
}
