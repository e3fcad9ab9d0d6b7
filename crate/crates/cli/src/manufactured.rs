//! Manufactured problems: exact solutions with right-hand sides obtained
//! by applying the continuous operator through the high-accuracy 1D
//! tempered-calculus path (exact for polynomial factors, endpoint-singular
//! quadrature otherwise).

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use statrs::function::gamma::gamma;
use tempered_dg::estimate::DiffusionForm;
use tempered_dg::quadrature::{integrate_adaptive, TanhSinh};
use tempered_dg::tempered::{PiecewisePoly1D, Side, TemperedDeriv, TemperedParams};

use crate::config::ConfigError;

/// Evolution problem with known exact solution u(x, t) and matching f.
pub struct EvolutionProblem {
    pub params: TemperedParams,
    pub dim: usize,
    pub domain: ([f64; 2], [f64; 2]),
    pub t_final: f64,
    pub exact: Rc<dyn Fn([f64; 2], f64) -> f64>,
    pub rhs: Rc<dyn Fn([f64; 2], f64) -> f64>,
    /// When set, f(x, t) = profile(t) * f(x, 0) with profile(0) = 1, so
    /// the load vector can be assembled once per mesh and scaled per step.
    pub time_profile: Option<Rc<dyn Fn(f64) -> f64>>,
}

/// Stationary problem; `exact` is present for manufactured cases.
pub struct StationaryProblem {
    pub form: DiffusionForm,
    pub dim: usize,
    pub domain: ([f64; 2], [f64; 2]),
    pub exact: Option<Rc<dyn Fn([f64; 2]) -> f64>>,
    pub rhs: Rc<dyn Fn([f64; 2]) -> f64>,
}

/// Exact tempered Caputo derivatives of a polynomial factor from both
/// sides; for factors vanishing at the endpoints these equal the
/// Riemann-Liouville derivatives of the continuous solution.
struct FactorDeriv {
    left: TemperedDeriv,
    right: TemperedDeriv,
}

impl FactorDeriv {
    fn new(poly: &PiecewisePoly1D, mu: f64, lambda: f64) -> Self {
        Self {
            left: TemperedDeriv::caputo(poly, mu, lambda, Side::Left).unwrap(),
            right: TemperedDeriv::caputo(poly, mu, lambda, Side::Right).unwrap(),
        }
    }

    /// (D_L + D_R) at an interior point
    fn both(&self, x: f64) -> f64 {
        self.left.eval(x).unwrap() + self.right.eval(x).unwrap()
    }
}

fn poly_factor(coeffs: Vec<f64>, a: f64, b: f64) -> PiecewisePoly1D {
    PiecewisePoly1D::single(a, b, coeffs).unwrap()
}

fn poly_eval(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ck| acc * x + ck)
}

fn poly_deriv(c: &[f64]) -> Vec<f64> {
    (1..c.len()).map(|k| k as f64 * c[k]).collect()
}

/// Numerical tempered Caputo derivative of a scalar function along one
/// axis (order in (0,1)): the singular convolution of the kernel
/// d^{-mu} e^{-lambda d} / Gamma(1-mu) with (lambda u + sign u'), split
/// into an adaptive smooth part and an endpoint-singular part so narrow
/// interior features stay resolved.
fn tempered_caputo_num(
    side: Side,
    a: f64,
    b: f64,
    x: f64,
    mu: f64,
    lambda: f64,
    u: &dyn Fn(f64) -> f64,
    du: &dyn Fn(f64) -> f64,
    tol: f64,
    ts_h: f64,
) -> f64 {
    let inv_gamma = 1.0 / gamma(1.0 - mu);
    let ts = TanhSinh::new(ts_h);
    let (lo, hi, sign) = match side {
        Side::Left => (a, x, 1.0),
        Side::Right => (x, b, -1.0),
    };
    if hi - lo <= 0.0 {
        return 0.0;
    }
    let g = |s: f64| lambda * u(s) + sign * du(s);
    let kernel = |d: f64| d.powf(-mu) * (-lambda * d).exp();
    let delta = 0.02f64.min(hi - lo);
    let (smooth, sing) = match side {
        Side::Left => {
            let smooth = if x - delta > lo {
                integrate_adaptive(|s| kernel(x - s) * g(s), lo, x - delta, tol)
            } else {
                0.0
            };
            (smooth, ts.integrate(x - delta, x, |s, _, dr| kernel(dr) * g(s)))
        }
        Side::Right => {
            let smooth = if x + delta < hi {
                integrate_adaptive(|s| kernel(s - x) * g(s), x + delta, hi, tol)
            } else {
                0.0
            };
            (smooth, ts.integrate(x, x + delta, |s, dl, _| kernel(dl) * g(s)))
        }
    };
    inv_gamma * (smooth + sing)
}

/// Pointwise memoization of an expensive space-time field; the singular
/// convolutions are re-requested at identical quadrature points by every
/// assembly over the same mesh.
struct Memo {
    map: RefCell<HashMap<(u64, u64, u64), f64>>,
    f: Box<dyn Fn([f64; 2], f64) -> f64>,
}

impl Memo {
    fn wrap(f: Box<dyn Fn([f64; 2], f64) -> f64>) -> Rc<dyn Fn([f64; 2], f64) -> f64> {
        let memo = Memo {
            map: RefCell::new(HashMap::new()),
            f,
        };
        Rc::new(move |x, t| {
            let key = (x[0].to_bits(), x[1].to_bits(), t.to_bits());
            if let Some(&v) = memo.map.borrow().get(&key) {
                return v;
            }
            let v = (memo.f)(x, t);
            let mut map = memo.map.borrow_mut();
            if map.len() > 4_000_000 {
                map.clear();
            }
            map.insert(key, v);
            v
        })
    }
}

/// Quadrature settings for the numeric right-hand sides: the tight pair
/// serves stationary reference problems, the fast pair the time-dependent
/// one where the load is re-evaluated every step and only needs to beat
/// the discretization error by a wide margin.
const TOL_TIGHT: f64 = 1e-9;
const TS_TIGHT: f64 = 0.14;
const TOL_FAST: f64 = 1e-6;
const TS_FAST: f64 = 0.22;

const DOMAIN_2D: ([f64; 2], [f64; 2]) = ([0.0, 2.0], [0.0, 2.0]);

/// x^2 (2-x)^2 on [0, 2]
const QUARTIC: [f64; 5] = [0.0, 0.0, 4.0, -4.0, 1.0];

/// Separable polynomial solution u = s(t) X(x) Y(y) (Y = 1 in 1D) with f
/// assembled exactly from the factor derivatives.
fn separable_poly_problem(
    params: TemperedParams,
    dim: usize,
    t_final: f64,
    time_scale: fn(f64) -> (f64, f64),
) -> EvolutionProblem {
    let xcoef = QUARTIC.to_vec();
    let dxcoef = poly_deriv(&xcoef);
    let fx = FactorDeriv::new(
        &poly_factor(xcoef.clone(), 0.0, 2.0),
        params.alpha,
        params.lambda,
    );
    let fy = FactorDeriv::new(&poly_factor(xcoef.clone(), 0.0, 2.0), params.beta, params.lambda);
    let cx = params.kappa1 * params.kappa_alpha();
    let cy = params.kappa2 * params.kappa_beta();
    let kappa = params.kappa();
    let b = params.b;
    let exact_coef = xcoef.clone();
    let exact: Rc<dyn Fn([f64; 2], f64) -> f64> = Rc::new(move |x, t| {
        let (s, _) = time_scale(t);
        let xy = if dim == 2 {
            poly_eval(&exact_coef, x[0]) * poly_eval(&exact_coef, x[1])
        } else {
            poly_eval(&exact_coef, x[0])
        };
        s * xy
    });
    let rhs: Rc<dyn Fn([f64; 2], f64) -> f64> = Rc::new(move |x, t| {
        let (s, ds) = time_scale(t);
        let xv = poly_eval(&xcoef, x[0]);
        let dxv = poly_eval(&dxcoef, x[0]);
        let (yv, dyv) = if dim == 2 {
            (poly_eval(&xcoef, x[1]), poly_eval(&dxcoef, x[1]))
        } else {
            (1.0, 0.0)
        };
        let mut v = ds * xv * yv;
        v += s * (b[0] * dxv * yv + b[1] * xv * dyv);
        v += s * cx * fx.both(x[0]) * yv;
        if dim == 2 {
            v += s * cy * xv * fy.both(x[1]);
        }
        v -= kappa * s * xv * yv;
        v
    });
    // both time scales used here (e^{-t} and 1) make f separable:
    // f(x, t) = s(t)/s(0) * f(x, 0)
    let s0 = time_scale(0.0).0;
    let profile: Rc<dyn Fn(f64) -> f64> = Rc::new(move |t| time_scale(t).0 / s0);
    EvolutionProblem {
        params,
        dim,
        domain: DOMAIN_2D,
        t_final,
        exact,
        rhs,
        time_profile: Some(profile),
    }
}

/// Evolution problems by identifier:
/// - `smooth-1d`: decaying quartic on [0, 2], tempered two-sided diffusion
///   with convection (1D convergence studies)
/// - `smooth-2d`: decaying product quartic, b = (0.5, 0.5), kappa =
///   (0.1, 0.2), lambda = 2 (2D convergence studies)
/// - `steady-2d`: time-independent product quartic (time-step growth checks)
/// - `moving-peak-2d`: narrow Gaussian travelling along y = x
/// - `zero-2d`: u = 0, f = 0
pub fn evolution_problem(id: &str, alpha: f64, beta: f64) -> Result<EvolutionProblem, ConfigError> {
    let bad = |m: String| ConfigError(m);
    let mk = |p: tempered_dg::Result<TemperedParams>| {
        p.map_err(|e| bad(format!("problem parameters: {e}")))
    };
    match id {
        "smooth-1d" => {
            let params = mk(TemperedParams::new(alpha, alpha, 2.0, 1.0, 1.0, [0.5, 0.0]))?;
            Ok(separable_poly_problem(params, 1, 1.0, |t| {
                ((-t).exp(), -(-t).exp())
            }))
        }
        "smooth-2d" => {
            let params = mk(TemperedParams::new(alpha, beta, 2.0, 0.1, 0.2, [0.5, 0.5]))?;
            Ok(separable_poly_problem(params, 2, 1.0, |t| {
                ((-t).exp(), -(-t).exp())
            }))
        }
        "steady-2d" => {
            let params = mk(TemperedParams::new(0.8, 0.8, 0.2, 0.1, 0.2, [0.0, 0.0]))?;
            Ok(separable_poly_problem(params, 2, 1.0, |_| (1.0, 0.0)))
        }
        "moving-peak-2d" => {
            let params = mk(TemperedParams::new(0.8, 0.8, 0.2, 0.1, 0.2, [0.0, 0.0]))?;
            Ok(moving_peak(params))
        }
        "zero-2d" => {
            let params = mk(TemperedParams::new(alpha, beta, 0.2, 0.1, 0.2, [0.0, 0.0]))?;
            Ok(EvolutionProblem {
                params,
                dim: 2,
                domain: DOMAIN_2D,
                t_final: 1.0,
                exact: Rc::new(|_, _| 0.0),
                rhs: Rc::new(|_, _| 0.0),
                time_profile: Some(Rc::new(|_| 1.0)),
            })
        }
        other => Err(bad(format!("unknown evolution problem '{other}'"))),
    }
}

/// Gaussian bump of width^2 = 0.005 travelling along the diagonal,
/// multiplied by the boundary factor x(x-2)y(y-2) and normalized by
/// a(t)^2 + c so the peak amplitude stays roughly constant along the
/// march (the raw boundary factor would grow it ~5x between t = 1/4 and
/// t = 1, forcing the adapted mesh far finer late than early).
fn moving_peak(params: TemperedParams) -> EvolutionProblem {
    let w2 = 0.005;
    let c = 0.1;
    let bump = move |x: [f64; 2], t: f64| {
        (-((x[0] - t) * (x[0] - t) + (x[1] - t) * (x[1] - t)) / w2).exp()
    };
    let a = |s: f64| s * (s - 2.0);
    let da = |s: f64| 2.0 * s - 2.0;
    let norm = move |t: f64| 1.0 / (a(t) * a(t) + c);
    let dnorm = move |t: f64| -2.0 * a(t) * da(t) * norm(t) * norm(t);
    let exact = move |x: [f64; 2], t: f64| norm(t) * a(x[0]) * a(x[1]) * bump(x, t);
    let (mu, lambda) = (params.alpha, params.lambda);
    let cx = params.kappa1 * params.kappa_alpha();
    let cy = params.kappa2 * params.kappa_beta();
    let kappa = params.kappa();
    // The solution is a product of identical 1D profiles g(s, t) =
    // a(s) exp(-(s - t)^2 / w2), so the fractional derivative along either
    // axis factors into the other axis' profile times a single 1D
    // convolution G(z, t); caching G makes the cost scale with the number
    // of distinct coordinates instead of quadrature points.
    let profile = move |s: f64, t: f64| a(s) * (-(s - t) * (s - t) / w2).exp();
    let gcache: RefCell<HashMap<(u64, u64), f64>> = RefCell::new(HashMap::new());
    let gfrac = move |z: f64, t: f64| {
        let key = (z.to_bits(), t.to_bits());
        if let Some(&v) = gcache.borrow().get(&key) {
            return v;
        }
        let g = |s: f64| profile(s, t);
        let dg = |s: f64| (da(s) - a(s) * 2.0 * (s - t) / w2) * (-(s - t) * (s - t) / w2).exp();
        let v = tempered_caputo_num(Side::Left, 0.0, 2.0, z, mu, lambda, &g, &dg, TOL_FAST, TS_FAST)
            + tempered_caputo_num(Side::Right, 0.0, 2.0, z, mu, lambda, &g, &dg, TOL_FAST, TS_FAST);
        let mut map = gcache.borrow_mut();
        if map.len() > 4_000_000 {
            map.clear();
        }
        map.insert(key, v);
        v
    };
    let rhs = move |x: [f64; 2], t: f64| {
        let u = exact(x, t);
        let dt = u * (2.0 * (x[0] - t) + 2.0 * (x[1] - t)) / w2 + dnorm(t) / norm(t) * u;
        let dxfrac = norm(t) * profile(x[1], t) * gfrac(x[0], t);
        let dyfrac = norm(t) * profile(x[0], t) * gfrac(x[1], t);
        dt + cx * dxfrac + cy * dyfrac - kappa * u
    };
    EvolutionProblem {
        params,
        dim: 2,
        domain: DOMAIN_2D,
        t_final: 1.0,
        exact: Rc::new(exact),
        rhs: Rc::new(rhs),
        time_profile: None,
    }
}

/// One-sided fractional derivative of x^g (2-x)^g on [0, 2] by the
/// binomial series and the power rule; converges for 0 <= x < 2 and the
/// tail is summed to relative 1e-14.
pub fn one_sided_power_rhs(g: f64, mu: f64) -> impl Fn(f64) -> f64 {
    move |x: f64| {
        let mut term = 1.0;
        let mut gratio = gamma(g + 1.0) / gamma(g + 1.0 - mu);
        let mut pw = 1.0;
        let mut acc = 0.0;
        for k in 0..40000 {
            let kf = k as f64;
            let c = term * gratio * pw;
            acc += c;
            if c.abs() < 1e-14 * acc.abs() && k > 4 {
                break;
            }
            term *= (kf - g) / (kf + 1.0);
            gratio *= (kf + g + 1.0) / (kf + g + 1.0 - mu);
            pw *= x / 2.0;
        }
        2f64.powf(g) * x.powf(g - mu) * acc
    }
}

/// Stationary problems by identifier:
/// - `boundary-layer-1d`: one-sided derivative of order 0.8 on [0, 2] with
///   the boundary-singular exact solution (x(2-x))^0.7
/// - `interior-layer-2d`: two-sided unit-coefficient derivatives (0.2 in
///   x, 0.8 in y) with an arctan interior layer along the arc x^2+y^2 = 4
pub fn stationary_problem(id: &str) -> Result<StationaryProblem, ConfigError> {
    match id {
        "boundary-layer-1d" => {
            let (g, mu) = (0.7, 0.8);
            let f = one_sided_power_rhs(g, mu);
            Ok(StationaryProblem {
                form: DiffusionForm::OneSidedLeft { mu, lambda: 0.0 },
                dim: 1,
                domain: DOMAIN_2D,
                exact: Some(Rc::new(move |x: [f64; 2]| {
                    (x[0] * (2.0 - x[0])).max(0.0).powf(g)
                })),
                rhs: Rc::new(move |x: [f64; 2]| f(x[0])),
            })
        }
        "interior-layer-2d" => {
            let (alpha, beta) = (0.2, 0.8);
            // unit coefficient per one-sided derivative: kappa_i kappa_mu = 1
            let k1 = 2.0 * (alpha * std::f64::consts::PI / 2.0).cos();
            let k2 = 2.0 * (beta * std::f64::consts::PI / 2.0).cos();
            let params = TemperedParams::new(alpha, beta, 0.0, k1, k2, [0.0, 0.0])
                .map_err(|e| ConfigError(format!("problem parameters: {e}")))?;
            let a = |s: f64| s * (s - 2.0);
            let da = |s: f64| 2.0 * s - 2.0;
            let layer = |r: f64| ((r - 2.0) / 0.05).atan();
            let dlayer = |r: f64| 1.0 / (0.05 * (1.0 + ((r - 2.0) / 0.05).powi(2)));
            let exact = move |x: [f64; 2]| {
                a(x[0]) * a(x[1]) * layer((x[0] * x[0] + x[1] * x[1]).sqrt())
            };
            let rhs = move |x: [f64; 2], _t: f64| {
                let ux = |s: f64| a(s) * a(x[1]) * layer((s * s + x[1] * x[1]).sqrt());
                let dux = |s: f64| {
                    let r = (s * s + x[1] * x[1]).sqrt().max(1e-300);
                    a(x[1]) * (da(s) * layer(r) + a(s) * dlayer(r) * s / r)
                };
                let uy = |s: f64| a(x[0]) * a(s) * layer((x[0] * x[0] + s * s).sqrt());
                let duy = |s: f64| {
                    let r = (x[0] * x[0] + s * s).sqrt().max(1e-300);
                    a(x[0]) * (da(s) * layer(r) + a(s) * dlayer(r) * s / r)
                };
                tempered_caputo_num(Side::Left, 0.0, 2.0, x[0], alpha, 0.0, &ux, &dux, TOL_TIGHT, TS_TIGHT)
                    + tempered_caputo_num(Side::Right, 0.0, 2.0, x[0], alpha, 0.0, &ux, &dux, TOL_TIGHT, TS_TIGHT)
                    + tempered_caputo_num(Side::Left, 0.0, 2.0, x[1], beta, 0.0, &uy, &duy, TOL_TIGHT, TS_TIGHT)
                    + tempered_caputo_num(Side::Right, 0.0, 2.0, x[1], beta, 0.0, &uy, &duy, TOL_TIGHT, TS_TIGHT)
            };
            let rhs = Memo::wrap(Box::new(rhs));
            Ok(StationaryProblem {
                form: DiffusionForm::Tempered(params),
                dim: 2,
                domain: DOMAIN_2D,
                exact: Some(Rc::new(exact)),
                rhs: Rc::new(move |x| rhs(x, 0.0)),
            })
        }
        other => Err(ConfigError(format!("unknown stationary problem '{other}'"))),
    }
}
