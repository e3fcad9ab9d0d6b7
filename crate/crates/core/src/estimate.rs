//! A-posteriori error estimation and adaptivity: strong-form residual
//! fields, energy-norm and goal-oriented (dual-weighted) indicators,
//! bulk marking, time-step indicators, and the stationary / evolution
//! adaptive loops.

use crate::assembly::{
    assemble_convection, assemble_fractional, assemble_fractional_axis, assemble_load,
    assemble_mass, assemble_penalty, AssembledSystem, SparseMatrix,
};
use crate::error::{Error, Result};
use crate::mesh::{Axis, Mesh};
use crate::quadrature::gauss_legendre;
use crate::solver::{solve_dual_quadratic, solve_stationary, BackwardEuler, EvolutionState};
use crate::space::{line_fractional_seminorm_sq, ray_with_jitter, DgFunction, DgSpace};
use crate::tempered::{Side, TemperedDeriv, TemperedParams};
use nalgebra::{DMatrix, DVector};
use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

/// Which fractional diffusion operator the problem uses.
#[derive(Debug, Clone)]
pub enum DiffusionForm {
    /// plain left-sided derivative of order mu in (0,1), unit coefficient
    OneSidedLeft { mu: f64, lambda: f64 },
    /// the full tempered scheme: weighted two-sided x (and y) derivatives,
    /// constant convection and the kappa reaction shift
    Tempered(TemperedParams),
}

impl DiffusionForm {
    fn convection(&self) -> [f64; 2] {
        match self {
            DiffusionForm::OneSidedLeft { .. } => [0.0, 0.0],
            DiffusionForm::Tempered(p) => p.b,
        }
    }

    fn kappa(&self) -> f64 {
        match self {
            DiffusionForm::OneSidedLeft { .. } => 0.0,
            DiffusionForm::Tempered(p) => p.kappa(),
        }
    }

    /// mesh-size exponent of the indicator; the smaller order governs
    /// when the two axes differ
    fn h_exponent(&self) -> f64 {
        match self {
            DiffusionForm::OneSidedLeft { mu, .. } => *mu,
            DiffusionForm::Tempered(p) => p.alpha.min(p.beta),
        }
    }

    /// discrete operator including penalty, convection and reaction shift
    pub fn assemble_operator(&self, space: &DgSpace) -> Result<SparseMatrix> {
        let mut op = match self {
            DiffusionForm::OneSidedLeft { mu, lambda } => {
                assemble_fractional_axis(space, Axis::X, 0.5 * mu, *lambda, false)?
            }
            DiffusionForm::Tempered(p) => assemble_fractional(space, p)?,
        };
        op.add_scaled(&assemble_penalty(space), 1.0);
        if let DiffusionForm::Tempered(p) = self {
            if p.b != [0.0, 0.0] {
                op.add_scaled(&assemble_convection(space, p.b), 1.0);
            }
            if p.kappa() != 0.0 {
                op.add_scaled(&assemble_mass(space), -p.kappa());
            }
        }
        Ok(op)
    }
}

/// One term coef * D^{mu,lambda} along an axis of the strong operator.
struct AxisTerm {
    axis: Axis,
    coef: f64,
    mu: f64,
    lambda: f64,
    two_sided: bool,
}

fn axis_terms(form: &DiffusionForm, dim: usize) -> Vec<AxisTerm> {
    match form {
        DiffusionForm::OneSidedLeft { mu, lambda } => vec![AxisTerm {
            axis: Axis::X,
            coef: 1.0,
            mu: *mu,
            lambda: *lambda,
            two_sided: false,
        }],
        DiffusionForm::Tempered(p) => {
            let mut v = vec![AxisTerm {
                axis: Axis::X,
                coef: p.kappa1 * p.kappa_alpha(),
                mu: p.alpha,
                lambda: p.lambda,
                two_sided: true,
            }];
            if dim == 2 {
                v.push(AxisTerm {
                    axis: Axis::Y,
                    coef: p.kappa2 * p.kappa_beta(),
                    mu: p.beta,
                    lambda: p.lambda,
                    two_sided: true,
                });
            }
            v
        }
    }
}

/// Pointwise application of the strong fractional operator to a DG
/// function. Derivatives are taken element-wise (broken Caputo form): the
/// inter-element jump contributions are accounted for by the separate
/// jump terms of the indicators, keeping the residual square-integrable.
pub struct StrongOperator<'a> {
    u: &'a DgFunction,
    terms: Vec<AxisTerm>,
    conv: [f64; 2],
    kappa: f64,
    cache: RefCell<HashMap<(usize, u64), Rc<Vec<(f64, TemperedDeriv)>>>>,
}

impl<'a> StrongOperator<'a> {
    pub fn new(u: &'a DgFunction, form: &DiffusionForm) -> Self {
        Self {
            u,
            terms: axis_terms(form, u.space.mesh().dim()),
            conv: form.convection(),
            kappa: form.kappa(),
            cache: RefCell::new(HashMap::new()),
        }
    }

    fn ray_derivs(&self, ti: usize, ordinate: f64) -> Result<Rc<Vec<(f64, TemperedDeriv)>>> {
        let key = (ti, ordinate.to_bits());
        if let Some(d) = self.cache.borrow().get(&key) {
            return Ok(Rc::clone(d));
        }
        let term = &self.terms[ti];
        let ray = ray_with_jitter(self.u.space.mesh(), term.axis, ordinate)?;
        let poly = self.u.ray_poly(&ray);
        let mut ds = vec![(
            term.coef,
            TemperedDeriv::caputo(&poly, term.mu, term.lambda, Side::Left)?,
        )];
        if term.two_sided {
            ds.push((
                term.coef,
                TemperedDeriv::caputo(&poly, term.mu, term.lambda, Side::Right)?,
            ));
        }
        let ds = Rc::new(ds);
        self.cache.borrow_mut().insert(key, Rc::clone(&ds));
        Ok(ds)
    }

    /// (b . grad + D^frac - kappa) u at point x inside local element k
    pub fn apply(&self, k: usize, x: [f64; 2]) -> Result<f64> {
        let mut v = 0.0;
        for ti in 0..self.terms.len() {
            let (along, ordinate) = match self.terms[ti].axis {
                Axis::X => (x[0], x[1]),
                Axis::Y => (x[1], x[0]),
            };
            for (coef, d) in self.ray_derivs(ti, ordinate)?.iter() {
                v += coef * d.eval(along)?;
            }
        }
        if self.conv != [0.0, 0.0] {
            let g = self.u.grad_in(k, x);
            v += self.conv[0] * g[0] + self.conv[1] * g[1];
        }
        if self.kappa != 0.0 {
            v -= self.kappa * self.u.eval_in(k, x);
        }
        Ok(v)
    }
}

/// Strong residual sampled at the volume quadrature points.
#[derive(Debug, Clone)]
pub struct ResidualField {
    /// per local element: (point, weight, R(point))
    pub per_elem: Vec<Vec<([f64; 2], f64, f64)>>,
}

impl ResidualField {
    pub fn norm_sq(&self, k: usize) -> f64 {
        self.per_elem[k].iter().map(|&(_, w, r)| w * r * r).sum()
    }

    pub fn total_norm_sq(&self) -> f64 {
        (0..self.per_elem.len()).map(|k| self.norm_sq(k)).sum()
    }

    /// index of the element with the largest L2 residual norm
    pub fn argmax_element(&self) -> usize {
        (0..self.per_elem.len())
            .max_by(|&a, &b| self.norm_sq(a).total_cmp(&self.norm_sq(b)))
            .unwrap_or(0)
    }
}

/// R = f - time_term - (b . grad + D^frac - kappa) u_h at volume
/// quadrature points; the optional time term is (u - u_prev)/tau with
/// u_prev on the same space.
pub fn residual_field<F: Fn([f64; 2]) -> f64>(
    u: &DgFunction,
    f: &F,
    form: &DiffusionForm,
    time: Option<(&DgFunction, f64)>,
) -> Result<ResidualField> {
    let space = &u.space;
    let op = StrongOperator::new(u, form);
    let mut per_elem = Vec::with_capacity(space.num_elems());
    for k in 0..space.num_elems() {
        let mut rows = Vec::new();
        for (x, w) in space.volume_quad(k) {
            let mut r = f(x) - op.apply(k, x)?;
            if let Some((prev, tau)) = time {
                r -= (u.eval_in(k, x) - prev.eval_in(k, x)) / tau;
            }
            if !r.is_finite() {
                return Err(Error::Internal(format!("non-finite residual at {x:?}")));
            }
            rows.push((x, w, r));
        }
        per_elem.push(rows);
    }
    Ok(ResidualField { per_elem })
}

/// Per-element indicators and oscillation terms.
#[derive(Debug, Clone)]
pub struct IndicatorField {
    pub eta: Vec<f64>,
    pub osc: Vec<f64>,
    /// scheme total: sqrt(sum eta^2) for the energy scheme, sum eta for
    /// the goal-oriented scheme
    pub total: f64,
}

/// L2 distance of the sampled residual on element k from its projection
/// onto polynomials of degree N-1, squared.
fn residual_osc_sq(space: &DgSpace, res: &ResidualField, k: usize) -> f64 {
    let n = space.degree();
    // scaled monomials of degree <= N-1 centered at the element centroid
    let c = space.mesh().centroid(space.elem_ids()[k]);
    let h = space.mesh().diameter(space.elem_ids()[k]);
    let dim = space.mesh().dim();
    let mut exps: Vec<(usize, usize)> = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if dim == 1 && j > 0 {
                continue;
            }
            if i + j < n {
                exps.push((i, j));
            }
        }
    }
    let m = exps.len();
    let basis = |x: [f64; 2]| -> Vec<f64> {
        exps.iter()
            .map(|&(i, j)| ((x[0] - c[0]) / h).powi(i as i32) * ((x[1] - c[1]) / h).powi(j as i32))
            .collect()
    };
    let mut gram = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DVector::<f64>::zeros(m);
    let mut norm_sq = 0.0;
    for &(x, w, r) in &res.per_elem[k] {
        let b = basis(x);
        for i in 0..m {
            for j in 0..m {
                gram[(i, j)] += w * b[i] * b[j];
            }
            rhs[i] += w * b[i] * r;
        }
        norm_sq += w * r * r;
    }
    let sol = match gram.lu().solve(&rhs) {
        Some(s) => s,
        None => return norm_sq,
    };
    // ||R - QR||^2 = ||R||^2 - c^T rhs for an orthogonal projection
    (norm_sq - sol.dot(&rhs)).max(0.0)
}

/// per-element squared jump norms of u over element boundaries; faces
/// shared by two elements contribute half to each
fn jump_terms(u: &DgFunction) -> Result<Vec<f64>> {
    let space = &u.space;
    let mut out = vec![0.0; space.num_elems()];
    for face in space.mesh().faces() {
        let k1 = space
            .local_of(face.elems.0)
            .ok_or_else(|| Error::Internal("face element missing".into()))?;
        let k2 = match face.elems.1 {
            Some(e) => Some(
                space
                    .local_of(e)
                    .ok_or_else(|| Error::Internal("face element missing".into()))?,
            ),
            None => None,
        };
        let mut s = 0.0;
        for (x, w) in space.face_quad(&face) {
            let (jump, _) = u.trace_jump_average(&face, x)?;
            s += w * jump * jump;
        }
        match k2 {
            Some(k2) => {
                out[k1] += 0.5 * s;
                out[k2] += 0.5 * s;
            }
            None => out[k1] += s,
        }
    }
    Ok(out)
}

/// Energy-norm indicator: eta_T^2 = h_T^a ||R||_T^2 + ||[u]||_{dT}^2 with
/// oscillation osc_T = h_T^{a/2} ||R - QR||_T; total = sqrt(sum eta^2).
pub fn energy_indicator<F: Fn([f64; 2]) -> f64>(
    u: &DgFunction,
    f: &F,
    form: &DiffusionForm,
    time: Option<(&DgFunction, f64)>,
) -> Result<IndicatorField> {
    let res = residual_field(u, f, form, time)?;
    let jumps = jump_terms(u)?;
    let space = &u.space;
    let a = form.h_exponent();
    let mut eta = Vec::with_capacity(space.num_elems());
    let mut osc = Vec::with_capacity(space.num_elems());
    for k in 0..space.num_elems() {
        let h = space.mesh().diameter(space.elem_ids()[k]);
        let ha = h.powf(a);
        eta.push((ha * res.norm_sq(k) + jumps[k]).sqrt());
        osc.push((ha * residual_osc_sq(space, &res, k)).sqrt());
    }
    let total = eta.iter().map(|e| e * e).sum::<f64>().sqrt();
    Ok(IndicatorField { eta, osc, total })
}

/// Goal functional for the dual problem, normalized to unit weight.
#[derive(Clone)]
pub enum GoalFunctional {
    Zero,
    /// J(phi) = (phi, R(u_h)) / ||R(u_h)||
    ResidualWeighted,
    /// J(phi) = (phi, g) / ||g||
    Weighted(Rc<dyn Fn([f64; 2]) -> f64>),
}

fn normalized_weight_load<W: Fn([f64; 2]) -> Result<f64>>(
    space: &DgSpace,
    w: W,
) -> Result<Vec<f64>> {
    let np = space.np();
    let mut load = vec![0.0; space.num_dofs()];
    let mut norm_sq = 0.0;
    for k in 0..space.num_elems() {
        for (x, wq) in space.volume_quad(k) {
            let v = w(x)?;
            norm_sq += wq * v * v;
            let b = space.basis_at(k, x);
            for i in 0..np {
                load[space.dof(k, i)] += wq * b[i] * v;
            }
        }
    }
    let norm = norm_sq.sqrt();
    if norm > 1e-14 {
        for l in &mut load {
            *l /= norm;
        }
    } else {
        load.iter_mut().for_each(|l| *l = 0.0);
    }
    Ok(load)
}

/// nodal re-interpolation of u onto another space over the same mesh
pub fn embed(u: &DgFunction, space2: &Rc<DgSpace>) -> Result<DgFunction> {
    if space2.num_elems() != u.space.num_elems() || space2.elem_ids() != u.space.elem_ids() {
        return Err(Error::Internal("embed requires spaces on the same mesh".into()));
    }
    let mut out = DgFunction::zero(space2);
    for k in 0..space2.num_elems() {
        for (j, x) in space2.node_coords(k).into_iter().enumerate() {
            out.coeffs[space2.dof(k, j)] = u.eval_in(k, x);
        }
    }
    Ok(out)
}

/// Dual-weighted residual indicator: solves the dual problem in degree
/// N+1, weights the element residual by the local dual interpolation gap
/// ||z2 - Pz2||_T and the jump by ||[z2 - Pz2]||_{dT}; total = sum eta.
pub fn dwr_indicator<F: Fn([f64; 2]) -> f64>(
    u: &DgFunction,
    f: &F,
    form: &DiffusionForm,
    goal: &GoalFunctional,
) -> Result<IndicatorField> {
    let space = &u.space;
    let res = residual_field(u, f, form, None)?;
    let jumps = jump_terms(u)?;
    let zeros = IndicatorField {
        eta: vec![0.0; space.num_elems()],
        osc: vec![0.0; space.num_elems()],
        total: 0.0,
    };
    if matches!(goal, GoalFunctional::Zero) {
        return Ok(zeros);
    }
    let z2 = solve_dual_quadratic(
        space.mesh(),
        space.degree(),
        |s2| form.assemble_operator(s2),
        |s2| match goal {
            GoalFunctional::Zero => unreachable!(),
            GoalFunctional::ResidualWeighted => {
                let op = StrongOperator::new(u, form);
                normalized_weight_load(s2, |x| {
                    // element index in the primal space for local terms
                    let k = locate_element(u, x)?;
                    Ok(f(x) - op.apply(k, x)?)
                })
            }
            GoalFunctional::Weighted(g) => normalized_weight_load(s2, |x| Ok(g(x))),
        },
    )?;
    // interpolation gap w = z2 - (degree-N interpolant of z2)
    let z1 = embed(&z2, space)?;
    let mut gap = z2.clone();
    gap.axpy(-1.0, &embed(&z1, &z2.space)?);
    let gap_jumps = jump_terms(&gap)?;
    let s2 = &z2.space;
    let mut eta = Vec::with_capacity(space.num_elems());
    let mut osc = Vec::with_capacity(space.num_elems());
    let a = form.h_exponent();
    for k in 0..space.num_elems() {
        let mut w_sq = 0.0;
        for (x, wq) in s2.volume_quad(k) {
            let v = gap.eval_in(k, x);
            w_sq += wq * v * v;
        }
        eta.push(res.norm_sq(k).sqrt() * w_sq.sqrt() + jumps[k].sqrt() * gap_jumps[k].sqrt());
        let h = space.mesh().diameter(space.elem_ids()[k]);
        osc.push((h.powf(a) * residual_osc_sq(space, &res, k)).sqrt());
    }
    let total = eta.iter().sum();
    Ok(IndicatorField { eta, osc, total })
}

/// alive element of u's mesh containing x (best barycentric fit)
pub fn locate_element(u: &DgFunction, x: [f64; 2]) -> Result<usize> {
    let space = &u.space;
    let mesh = space.mesh();
    let mut best = None;
    let mut best_margin = f64::NEG_INFINITY;
    for k in 0..space.num_elems() {
        let co = mesh.elem_coords(space.elem_ids()[k]);
        let margin = if mesh.dim() == 1 {
            let (a, b) = (co[0][0].min(co[1][0]), co[0][0].max(co[1][0]));
            ((x[0] - a).min(b - x[0])) / (b - a)
        } else {
            let det = (co[1][0] - co[0][0]) * (co[2][1] - co[0][1])
                - (co[2][0] - co[0][0]) * (co[1][1] - co[0][1]);
            let l1 = ((co[2][1] - co[0][1]) * (x[0] - co[0][0])
                + (co[0][0] - co[2][0]) * (x[1] - co[0][1]))
                / det;
            let l2 = ((co[0][1] - co[1][1]) * (x[0] - co[0][0])
                + (co[1][0] - co[0][0]) * (x[1] - co[0][1]))
                / det;
            l1.min(l2).min(1.0 - l1 - l2)
        };
        if margin > best_margin {
            best_margin = margin;
            best = Some(k);
        }
    }
    if best_margin < -1e-9 {
        let (lo, hi) = mesh.bounds();
        return Err(Error::OutOfDomain {
            x: x[0],
            a: lo[0],
            b: hi[0],
        });
    }
    best.ok_or_else(|| Error::Internal("empty mesh in point location".into()))
}

/// evaluate a DG function at an arbitrary point of its mesh
pub fn eval_anywhere(u: &DgFunction, x: [f64; 2]) -> Result<f64> {
    Ok(u.eval_in(locate_element(u, x)?, x))
}

/// Bulk marking: greedily select elements in decreasing eta^2 until the
/// marked set carries theta1^2 of the total, then enlarge in decreasing
/// osc^2 until it carries theta2^2 of the total oscillation. Returns
/// local element indices, ascending.
pub fn mark_strategy_c(eta: &[f64], osc: &[f64], theta1: f64, theta2: f64) -> Result<Vec<usize>> {
    for t in [theta1, theta2] {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::InvalidInput(format!(
                "marking parameter {t} must lie in (0,1)"
            )));
        }
    }
    if eta.len() != osc.len() {
        return Err(Error::InvalidInput("indicator length mismatch".into()));
    }
    let total_eta: f64 = eta.iter().map(|e| e * e).sum();
    let total_osc: f64 = osc.iter().map(|o| o * o).sum();
    let mut marked = vec![false; eta.len()];
    let greedy = |vals: &[f64], marked: &mut Vec<bool>, target: f64| {
        let mut acc: f64 = marked
            .iter()
            .zip(vals)
            .filter(|(m, _)| **m)
            .map(|(_, v)| v * v)
            .sum();
        let mut order: Vec<usize> = (0..vals.len()).filter(|&i| !marked[i]).collect();
        order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
        for i in order {
            if acc >= target || vals[i] == 0.0 {
                break;
            }
            marked[i] = true;
            acc += vals[i] * vals[i];
        }
    };
    if total_eta > 0.0 {
        greedy(&eta.to_vec(), &mut marked, theta1 * theta1 * total_eta);
    }
    if total_osc > 0.0 {
        greedy(&osc.to_vec(), &mut marked, theta2 * theta2 * total_osc);
    }
    Ok((0..eta.len()).filter(|&i| marked[i]).collect())
}

/// I_eff = eta / ||e||_E
pub fn effectiveness_index(eta_total: f64, energy_error: f64) -> Result<f64> {
    if energy_error == 0.0 {
        return Err(Error::UndefinedIndex);
    }
    Ok(eta_total / energy_error)
}

/// Time-step indicators over [t0, t1]:
/// eta1 = (1/tau) int ||f - fbar||^2 dt, eta2 = ||u_n - u_prev||^2.
pub fn time_indicators<F: Fn([f64; 2], f64) -> f64>(
    u_n: &DgFunction,
    u_prev: &DgFunction,
    f: &F,
    t0: f64,
    t1: f64,
) -> Result<(f64, f64)> {
    if !Rc::ptr_eq(&u_n.space, &u_prev.space) && u_n.coeffs.len() != u_prev.coeffs.len() {
        return Err(Error::Internal("time indicator spaces differ".into()));
    }
    let mut diff = u_n.clone();
    diff.axpy(-1.0, u_prev);
    let eta2 = diff.l2_norm().powi(2);
    let tau = t1 - t0;
    let gl = gauss_legendre(4);
    let space = &u_n.space;
    let mut eta1 = 0.0;
    for k in 0..space.num_elems() {
        for (x, wx) in space.volume_quad(k) {
            let vals: Vec<f64> = gl.nodes.iter().map(|&s| f(x, t0 + tau * s)).collect();
            let fbar: f64 = gl.weights.iter().zip(&vals).map(|(w, v)| w * v).sum();
            for (w, v) in gl.weights.iter().zip(&vals) {
                eta1 += wx * w * (v - fbar) * (v - fbar);
            }
        }
    }
    Ok((eta1, eta2))
}

/// Stationary problem: diffusion form plus right-hand side.
#[derive(Clone)]
pub struct StationaryModel {
    pub form: DiffusionForm,
    pub f: Rc<dyn Fn([f64; 2]) -> f64>,
}

impl StationaryModel {
    pub fn solve(&self, space: &Rc<DgSpace>) -> Result<DgFunction> {
        let op = self.form.assemble_operator(space)?;
        let load = assemble_load(space, |x| (self.f)(x));
        solve_stationary(space, &op, &load)
    }
}

/// Energy norm of u_exact - u_h, computed by projecting the exact
/// solution onto a higher-degree space over the same mesh.
pub fn energy_error<F: Fn([f64; 2]) -> f64>(
    u_h: &DgFunction,
    exact: F,
    form: &DiffusionForm,
) -> Result<f64> {
    // 1D projections are cheap; a richer space keeps the measured error
    // honest for exact solutions with boundary singularities.
    let extra = if u_h.space.mesh().dim() == 1 { 3 } else { 2 };
    let deg = (u_h.space.degree() + extra).min(4);
    let s2 = Rc::new(DgSpace::new(u_h.space.mesh().clone(), deg)?);
    let mut e = s2.l2_project(&exact)?;
    e.axpy(-1.0, &embed(u_h, &s2)?);
    match form {
        DiffusionForm::OneSidedLeft { mu, lambda } => {
            if s2.mesh().dim() != 1 {
                return Err(Error::InvalidInput(
                    "one-sided energy norm implemented in 1D only".into(),
                ));
            }
            let ray = s2.mesh().ray_segments(Axis::X, 0.0)?;
            let poly = e.ray_poly(&ray);
            let semi = line_fractional_seminorm_sq(&poly, 0.5 * mu, *lambda, true)?;
            Ok((semi + e.jump_norm_sq()).sqrt())
        }
        DiffusionForm::Tempered(p) => e.energy_norm(p),
    }
}

/// Which indicator drives the stationary loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Energy,
    Dwr,
}

/// Parameters of the adaptive loops.
#[derive(Debug, Clone)]
pub struct AdaptConfig {
    pub theta1: f64,
    pub theta2: f64,
    pub tol_space: f64,
    pub tol_time: f64,
    pub max_iterations: usize,
    pub coarsen_fraction: f64,
    pub timestep_growth: f64,
    pub dof_cap: usize,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            theta1: 0.5,
            theta2: 0.5,
            tol_space: 1e-3,
            tol_time: 1e-3,
            max_iterations: 20,
            coarsen_fraction: 0.1,
            timestep_growth: 1.5,
            dof_cap: 4000,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        for (v, name) in [(self.theta1, "theta1"), (self.theta2, "theta2")] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidInput(format!("{name} = {v} not in (0,1)")));
            }
        }
        if !(self.tol_space > 0.0 && self.tol_time > 0.0) {
            return Err(Error::InvalidInput("tolerances must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.coarsen_fraction) {
            return Err(Error::InvalidInput("coarsen_fraction not in [0,1)".into()));
        }
        if self.timestep_growth < 1.0 {
            return Err(Error::InvalidInput("timestep_growth must be >= 1".into()));
        }
        Ok(())
    }
}

/// Diagnostics of one stationary adaptive iteration.
pub struct StationaryIteration {
    pub iter: usize,
    pub k: usize,
    pub dofs: usize,
    pub eta: f64,
    pub l2_error: Option<f64>,
    pub energy_error: Option<f64>,
    pub i_eff: Option<f64>,
    pub u: DgFunction,
    pub indicators: IndicatorField,
}

/// Solve -> estimate -> mark -> refine until the total indicator meets
/// tol_space or max_iterations is reached.
#[allow(clippy::too_many_arguments)]
pub fn adapt_stationary(
    mesh0: &Mesh,
    degree: usize,
    model: &StationaryModel,
    exact: Option<&dyn Fn([f64; 2]) -> f64>,
    config: &AdaptConfig,
    scheme: Scheme,
    goal: &GoalFunctional,
) -> Result<Vec<StationaryIteration>> {
    config.validate()?;
    let mut mesh = mesh0.clone();
    let mut records: Vec<StationaryIteration> = Vec::new();
    for iter in 0..config.max_iterations {
        let space = Rc::new(DgSpace::new(mesh.clone(), degree)?);
        if space.num_dofs() > config.dof_cap {
            return Err(Error::DofCapExceeded {
                cap: config.dof_cap,
                reached: space.num_dofs(),
            });
        }
        let u = model.solve(&space)?;
        let ind = match scheme {
            Scheme::Energy => energy_indicator(&u, &|x| (model.f)(x), &model.form, None)?,
            Scheme::Dwr => dwr_indicator(&u, &|x| (model.f)(x), &model.form, goal)?,
        };
        let (l2e, ene, ieff) = match exact {
            Some(ex) => {
                let l2 = u.l2_error(ex);
                let en = energy_error(&u, ex, &model.form)?;
                let ie = effectiveness_index(ind.total, en).ok();
                (Some(l2), Some(en), ie)
            }
            None => (None, None, None),
        };
        let done = ind.total <= config.tol_space;
        records.push(StationaryIteration {
            iter,
            k: space.num_elems(),
            dofs: space.num_dofs(),
            eta: ind.total,
            l2_error: l2e,
            energy_error: ene,
            i_eff: ieff,
            u,
            indicators: ind,
        });
        if done {
            break;
        }
        // stagnation check: warn, keep going
        if records.len() >= 3 {
            let n = records.len();
            if records[n - 1].eta >= records[n - 2].eta && records[n - 2].eta >= records[n - 3].eta
            {
                eprintln!(
                    "warning: total indicator non-decreasing over 3 iterations (eta = {:.3e})",
                    records[n - 1].eta
                );
            }
        }
        let last = records.last().unwrap();
        let marked =
            mark_strategy_c(&last.indicators.eta, &last.indicators.osc, config.theta1, config.theta2)?;
        if marked.is_empty() {
            break;
        }
        let space = &last.u.space;
        let ids: Vec<usize> = marked.iter().map(|&k| space.elem_ids()[k]).collect();
        mesh = mesh.refine(&ids)?;
    }
    Ok(records)
}

/// Evolution problem: tempered parameters plus a space-time source.
#[derive(Clone)]
pub struct EvolutionModel {
    pub params: TemperedParams,
    pub f: Rc<dyn Fn([f64; 2], f64) -> f64>,
    pub degree: usize,
}

impl EvolutionModel {
    /// time average of f over [t0, t1] as a spatial function
    pub fn f_bar(&self, t0: f64, t1: f64) -> impl Fn([f64; 2]) -> f64 + '_ {
        let gl = gauss_legendre(4);
        move |x| {
            gl.nodes
                .iter()
                .zip(&gl.weights)
                .map(|(&s, &w)| w * (self.f)(x, t0 + (t1 - t0) * s))
                .sum()
        }
    }
}

/// Diagnostics of one adaptive evolution step.
pub struct EvolutionStepResult {
    pub state: EvolutionState,
    pub next_tau: f64,
    pub eta_time1: f64,
    pub eta_time2: f64,
    pub eta_space: f64,
    pub tau_halvings: usize,
    pub mesh_changes: usize,
}

/// One step of the adaptive evolution algorithm: halve the time step
/// until the time indicators meet tol_time, then refine/coarsen the mesh
/// until the space indicator meets tol_space, then propose an enlarged
/// next time step when the time indicators are comfortably small.
pub fn adapt_evolution_step(
    state: &EvolutionState,
    model: &EvolutionModel,
    config: &AdaptConfig,
) -> Result<EvolutionStepResult> {
    config.validate()?;
    let t0 = state.t;
    let mut tau = state.tau;
    let mut space = Rc::clone(&state.u.space);
    let mut u_prev = state.u.clone();
    let mut sys = AssembledSystem::build(&space, &model.params)?;
    let mut tau_halvings = 0usize;
    let mut mesh_changes = 0usize;

    let solve_step = |space: &Rc<DgSpace>,
                      sys: &AssembledSystem,
                      u_prev: &DgFunction,
                      tau: f64|
     -> Result<DgFunction> {
        let fbar = model.f_bar(t0, t0 + tau);
        let load = assemble_load(space, &fbar);
        let be = BackwardEuler::new(sys, tau)?;
        let st = be.step(
            &EvolutionState {
                t: t0,
                tau,
                step: state.step,
                u: u_prev.clone(),
            },
            &load,
        )?;
        Ok(st.u)
    };

    // step 1: time-step control
    let (mut u_new, mut eta1, mut eta2);
    loop {
        u_new = solve_step(&space, &sys, &u_prev, tau)?;
        let (e1, e2) = time_indicators(&u_new, &u_prev, &|x, t| (model.f)(x, t), t0, t0 + tau)?;
        eta1 = e1;
        eta2 = e2;
        if eta1 + eta2 <= config.tol_time {
            break;
        }
        tau *= 0.5;
        tau_halvings += 1;
        if tau < 1e-8 {
            return Err(Error::TimeStepUnderflow(tau));
        }
    }

    // step 2: mesh control
    let form = DiffusionForm::Tempered(model.params.clone());
    let mut eta_space;
    for _ in 0..config.max_iterations {
        let fbar = model.f_bar(t0, t0 + tau);
        let ind = energy_indicator(&u_new, &fbar, &form, Some((&u_prev, tau)))?;
        eta_space = ind.total;
        if eta_space <= config.tol_space {
            let (e1, e2) =
                time_indicators(&u_new, &u_prev, &|x, t| (model.f)(x, t), t0, t0 + tau)?;
            let next_tau = if e1 + e2 <= config.tol_time / 4.0 {
                config.timestep_growth * tau
            } else {
                tau
            };
            return Ok(EvolutionStepResult {
                state: EvolutionState {
                    t: t0 + tau,
                    tau,
                    step: state.step + 1,
                    u: u_new,
                },
                next_tau,
                eta_time1: e1,
                eta_time2: e2,
                eta_space,
                tau_halvings,
                mesh_changes,
            });
        }
        let marked = mark_strategy_c(&ind.eta, &ind.osc, config.theta1, config.theta2)?;
        // coarsening candidates: small indicators, not being refined
        let mean = ind.eta.iter().sum::<f64>() / ind.eta.len().max(1) as f64;
        let coarse: Vec<usize> = (0..ind.eta.len())
            .filter(|k| ind.eta[*k] < config.coarsen_fraction * mean && !marked.contains(k))
            .map(|k| space.elem_ids()[k])
            .collect();
        let ids: Vec<usize> = marked.iter().map(|&k| space.elem_ids()[k]).collect();
        if ids.is_empty() && coarse.is_empty() {
            break;
        }
        let mut mesh = space.mesh().refine(&ids)?;
        // closure bisections may have retired some coarsening candidates
        let coarse: Vec<usize> = coarse.into_iter().filter(|&e| mesh.is_alive(e)).collect();
        if !coarse.is_empty() {
            mesh = mesh.coarsen(&coarse)?;
        }
        mesh_changes += 1;
        let new_space = Rc::new(DgSpace::new(mesh, model.degree)?);
        if new_space.num_dofs() > config.dof_cap {
            return Err(Error::DofCapExceeded {
                cap: config.dof_cap,
                reached: new_space.num_dofs(),
            });
        }
        let old = u_prev.clone();
        u_prev = new_space.l2_project(|x| eval_anywhere(&old, x).unwrap_or(f64::NAN))?;
        space = new_space;
        sys = AssembledSystem::build(&space, &model.params)?;
        u_new = solve_step(&space, &sys, &u_prev, tau)?;
    }
    // mesh loop exhausted: accept the current state with the last indicators
    let fbar = model.f_bar(t0, t0 + tau);
    let ind = energy_indicator(&u_new, &fbar, &form, Some((&u_prev, tau)))?;
    let (e1, e2) = time_indicators(&u_new, &u_prev, &|x, t| (model.f)(x, t), t0, t0 + tau)?;
    let next_tau = if e1 + e2 <= config.tol_time / 4.0 {
        config.timestep_growth * tau
    } else {
        tau
    };
    Ok(EvolutionStepResult {
        state: EvolutionState {
            t: t0 + tau,
            tau,
            step: state.step + 1,
            u: u_new,
        },
        next_tau,
        eta_time1: e1,
        eta_time2: e2,
        eta_space: ind.total,
        tau_halvings,
        mesh_changes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tempered::PiecewisePoly1D;
    use approx::assert_relative_eq;
    use statrs::function::gamma::gamma;

    fn space_1d(k: usize, n: usize) -> Rc<DgSpace> {
        Rc::new(DgSpace::new(Mesh::interval(0.0, 1.0, k).unwrap(), n).unwrap())
    }

    #[test]
    fn residual_vanishes_for_pointwise_solution() {
        // u = x on a single element; broken-derivative form: D^{0.8} x =
        // x^{0.2} / Gamma(1.2), so R = 0 at every quadrature point
        let sp = space_1d(1, 1);
        let u = sp.interpolate(|x| x[0]).unwrap();
        let form = DiffusionForm::OneSidedLeft { mu: 0.8, lambda: 0.0 };
        let f = |x: [f64; 2]| x[0].powf(0.2) / gamma(1.2);
        let res = residual_field(&u, &f, &form, None).unwrap();
        for &(_, _, r) in &res.per_elem[0] {
            assert!(r.abs() <= 1e-8, "residual {r}");
        }
    }

    #[test]
    fn residual_shifts_linearly_with_f() {
        let sp = space_1d(3, 1);
        let u = sp.interpolate(|x| x[0] * x[0]).unwrap();
        let form = DiffusionForm::OneSidedLeft { mu: 0.5, lambda: 0.0 };
        let r0 = residual_field(&u, &|_| 0.0, &form, None).unwrap();
        let r1 = residual_field(&u, &|_| 1.0, &form, None).unwrap();
        for k in 0..3 {
            for (a, b) in r0.per_elem[k].iter().zip(&r1.per_elem[k]) {
                assert_relative_eq!(a.2 + 1.0, b.2, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn residual_time_term() {
        let sp = space_1d(2, 1);
        let u = sp.interpolate(|x| x[0]).unwrap();
        let prev = sp.interpolate(|x| 0.5 * x[0]).unwrap();
        let form = DiffusionForm::OneSidedLeft { mu: 0.5, lambda: 0.0 };
        let a = residual_field(&u, &|_| 0.0, &form, None).unwrap();
        let b = residual_field(&u, &|_| 0.0, &form, Some((&prev, 0.25))).unwrap();
        for k in 0..2 {
            for (p, q) in a.per_elem[k].iter().zip(&b.per_elem[k]) {
                // time term (u - prev)/tau = 0.5 x / 0.25 = 2x
                assert_relative_eq!(p.2 - 2.0 * p.0[0], q.2, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn constant_residual_has_zero_oscillation() {
        // u = 0, f = 1: R = 1 per element, which degree N-1 >= 0 captures
        let sp = space_1d(4, 1);
        let u = DgFunction::zero(&sp);
        let form = DiffusionForm::OneSidedLeft { mu: 0.6, lambda: 0.0 };
        let ind = energy_indicator(&u, &|_| 1.0, &form, None).unwrap();
        let h: f64 = 0.25;
        for k in 0..4 {
            assert!(ind.osc[k].abs() <= 1e-12);
            // eta_T^2 = h^mu * h (||R||^2 = h), no jumps
            assert_relative_eq!(ind.eta[k], (h.powf(0.6) * h).sqrt(), max_relative = 1e-10);
        }
        assert_relative_eq!(
            ind.total,
            (4.0 * h.powf(1.6)).sqrt(),
            max_relative = 1e-10
        );
    }

    #[test]
    fn marking_examples() {
        // single dominant element
        let eta = [4.0, 3.0, 2.0, 1.0];
        let osc = [0.0; 4];
        let m = mark_strategy_c(&eta, &osc, 0.5, 0.5).unwrap();
        assert_eq!(m, vec![0]);
        // limit case marks every nonzero-indicator element
        let m = mark_strategy_c(&eta, &osc, 0.999999, 0.999999).unwrap();
        assert_eq!(m, vec![0, 1, 2, 3]);
        // equal indicators: ceil(theta1^2 K) elements
        let eq = [1.0; 10];
        let m = mark_strategy_c(&eq, &[0.0; 10], 0.5, 0.5).unwrap();
        assert_eq!(m.len(), 3); // ceil(0.25 * 10)
        // oscillation enlargement
        let m = mark_strategy_c(&[1.0, 0.0, 0.0], &[0.0, 5.0, 0.1], 0.5, 0.5).unwrap();
        assert!(m.contains(&0) && m.contains(&1));
        // invalid thetas
        assert!(mark_strategy_c(&eta, &osc, 0.0, 0.5).is_err());
        assert!(mark_strategy_c(&eta, &osc, 0.5, 1.0).is_err());
    }

    #[test]
    fn effectiveness_index_values() {
        assert_relative_eq!(
            effectiveness_index(3.5025, 1.2608).unwrap(),
            2.7781,
            max_relative = 1e-4
        );
        assert_relative_eq!(
            effectiveness_index(1.0679, 1.2608).unwrap(),
            0.8470,
            max_relative = 1e-4
        );
        assert_relative_eq!(effectiveness_index(2.0, 1.0).unwrap(), 2.0);
        assert!(matches!(
            effectiveness_index(1.0, 0.0),
            Err(Error::UndefinedIndex)
        ));
    }

    #[test]
    fn time_indicator_values() {
        let mesh = Mesh::structured_rect([0.0, 2.0], [0.0, 2.0], 2, 2).unwrap();
        let sp = Rc::new(DgSpace::new(mesh, 1).unwrap());
        let u = sp.interpolate(|x| x[0]).unwrap();
        // constant-in-time f: eta1 = 0; identical states: eta2 = 0
        let (e1, e2) = time_indicators(&u, &u, &|x, _| x[0] + x[1], 0.0, 0.5).unwrap();
        assert!(e1.abs() <= 1e-14);
        assert!(e2.abs() <= 1e-14);
        // f = t on |Omega| = 4: eta1 = tau^2 / 3
        let tau = 0.3;
        let (e1, _) = time_indicators(&u, &u, &|_, t| t, 0.0, tau).unwrap();
        assert_relative_eq!(e1, tau * tau / 3.0, max_relative = 1e-10);
        // eta2 = ||u - prev||^2
        let prev = sp.interpolate(|_| 0.0).unwrap();
        let (_, e2) = time_indicators(&u, &prev, &|_, _| 0.0, 0.0, tau).unwrap();
        assert_relative_eq!(e2, u.l2_norm().powi(2), max_relative = 1e-12);
    }

    #[test]
    fn dwr_zero_goal_and_resolved_dual() {
        let sp = space_1d(3, 1);
        let form = DiffusionForm::OneSidedLeft { mu: 0.8, lambda: 0.0 };
        let u = sp.interpolate(|x| x[0]).unwrap();
        let ind = dwr_indicator(&u, &|_| 1.0, &form, &GoalFunctional::Zero).unwrap();
        assert!(ind.eta.iter().all(|&e| e == 0.0));
        assert_eq!(ind.total, 0.0);
    }

    #[test]
    fn dwr_weighted_goal_nonnegative() {
        let sp = space_1d(4, 1);
        let form = DiffusionForm::OneSidedLeft { mu: 0.8, lambda: 0.0 };
        let model = StationaryModel {
            form: form.clone(),
            f: Rc::new(|_| 1.0),
        };
        let u = model.solve(&sp).unwrap();
        let ind = dwr_indicator(&u, &|_| 1.0, &form, &GoalFunctional::ResidualWeighted).unwrap();
        assert!(ind.eta.iter().all(|&e| e >= 0.0 && e.is_finite()));
        assert!(ind.total > 0.0);
    }

    #[test]
    fn embed_is_exact_for_polynomials() {
        let sp = space_1d(3, 1);
        let u = sp.interpolate(|x| 2.0 * x[0] - 1.0).unwrap();
        let s2 = Rc::new(DgSpace::new(sp.mesh().clone(), 3).unwrap());
        let v = embed(&u, &s2).unwrap();
        for x in [0.13, 0.5, 0.77] {
            let p = [x, 0.0];
            assert_relative_eq!(
                eval_anywhere(&v, p).unwrap(),
                2.0 * x - 1.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn locate_and_eval_2d() {
        let mesh = Mesh::structured_rect([0.0, 1.0], [0.0, 1.0], 2, 2).unwrap();
        let sp = Rc::new(DgSpace::new(mesh, 1).unwrap());
        let u = sp.interpolate(|x| x[0] + 2.0 * x[1]).unwrap();
        for p in [[0.1, 0.2], [0.9, 0.9], [0.5, 0.01]] {
            assert_relative_eq!(
                eval_anywhere(&u, p).unwrap(),
                p[0] + 2.0 * p[1],
                epsilon = 1e-12
            );
        }
        assert!(eval_anywhere(&u, [2.0, 2.0]).is_err());
    }

    #[test]
    fn energy_error_oracle() {
        // u_h = 0 so the error is exactly the projected exact solution
        let sp = space_1d(1, 1);
        let u = DgFunction::zero(&sp);
        let form = DiffusionForm::OneSidedLeft { mu: 0.8, lambda: 0.0 };
        let e = energy_error(&u, |x| x[0] * (1.0 - x[0]), &form).unwrap();
        let poly = PiecewisePoly1D::single(0.0, 1.0, vec![0.0, 1.0, -1.0]).unwrap();
        let semi = line_fractional_seminorm_sq(&poly, 0.4, 0.0, true).unwrap();
        assert_relative_eq!(e, semi.sqrt(), max_relative = 1e-8);
    }

    #[test]
    fn stationary_loop_reduces_error() {
        // boundary-singular 1D problem: the loop must refine and reduce
        // the L2 error across iterations
        let gam = 0.7;
        let model = StationaryModel {
            form: DiffusionForm::OneSidedLeft { mu: 0.8, lambda: 0.0 },
            f: Rc::new(move |x: [f64; 2]| {
                // D^{0.8} of u = x^0.7 (2-x)^0.7 via the binomial series
                // (2-x)^0.7 = 2^0.7 sum term_k (x/2)^k and the power rule
                // D^mu x^p = Gamma(p+1)/Gamma(p+1-mu) x^{p-mu}
                let t = x[0];
                let mut term = 1.0;
                let mut gratio = gamma(gam + 1.0) / gamma(gam + 0.2);
                let mut pw = 1.0;
                let mut acc = 0.0;
                for k in 0..40000 {
                    let kf = k as f64;
                    let c = term * gratio * pw;
                    acc += c;
                    if c.abs() < 1e-14 * acc.abs() && k > 4 {
                        break;
                    }
                    term *= (kf - gam) / (kf + 1.0);
                    gratio *= (kf + gam + 1.0) / (kf + gam + 0.2);
                    pw *= t / 2.0;
                }
                2f64.powf(gam) * t.powf(gam - 0.8) * acc
            }),
        };
        let mesh = Mesh::interval(0.0, 2.0, 8).unwrap();
        let cfg = AdaptConfig {
            tol_space: 1e-12,
            max_iterations: 4,
            ..AdaptConfig::default()
        };
        let recs = adapt_stationary(
            &mesh,
            1,
            &model,
            Some(&|x: [f64; 2]| (x[0] * (2.0 - x[0])).max(0.0).powf(gam)),
            &cfg,
            Scheme::Energy,
            &GoalFunctional::Zero,
        )
        .unwrap();
        assert_eq!(recs.len(), 4);
        assert!(recs.windows(2).all(|w| w[1].k > w[0].k));
        let first = recs[0].l2_error.unwrap();
        let last = recs.last().unwrap().l2_error.unwrap();
        assert!(last < first, "error did not decrease: {first} -> {last}");
    }

    #[test]
    fn evolution_steady_state_grows_tau() {
        // time-independent manufactured solution: no halving, tau grows
        // by the configured factor each step
        let sp = space_1d(4, 1);
        let params = TemperedParams::new(0.8, 0.8, 2.0, 1.0, 1.0, [1.0, 0.0]).unwrap();
        let sys = AssembledSystem::build(&sp, &params).unwrap();
        let load = assemble_load(&sp, |x| (2.0 * x[0]).cos());
        let u0 = crate::assembly::solve_dense(sys.operator_dense(), &load).unwrap();
        let u0 = DgFunction {
            space: Rc::clone(&sp),
            coeffs: u0,
        };
        let model = EvolutionModel {
            params,
            f: Rc::new(|x, _| (2.0 * x[0]).cos()),
            degree: 1,
        };
        let cfg = AdaptConfig {
            tol_time: 1e-6,
            tol_space: 1e6, // skip mesh adaptation
            ..AdaptConfig::default()
        };
        let mut state = EvolutionState::initial(u0, 0.05);
        let mut tau = state.tau;
        for _ in 0..3 {
            let r = adapt_evolution_step(&state, &model, &cfg).unwrap();
            assert_eq!(r.tau_halvings, 0);
            assert_relative_eq!(r.state.tau, tau, max_relative = 1e-12);
            assert_relative_eq!(r.next_tau, 1.5 * tau, max_relative = 1e-12);
            tau = r.next_tau;
            state = r.state;
            state.tau = tau;
        }
    }

    #[test]
    fn evolution_time_step_halves_on_temporal_spike() {
        // a sharp temporal transient in f forces eta_time1 above tolerance
        let sp = space_1d(4, 1);
        let params = TemperedParams::new(0.8, 0.8, 0.0, 1.0, 1.0, [0.0, 0.0]).unwrap();
        let model = EvolutionModel {
            params,
            f: Rc::new(|_, t: f64| if t > 0.05 { 10.0 } else { 0.0 }),
            degree: 1,
        };
        let cfg = AdaptConfig {
            tol_time: 1e-3,
            tol_space: 1e6,
            ..AdaptConfig::default()
        };
        let state = EvolutionState::initial(DgFunction::zero(&sp), 0.1);
        let r = adapt_evolution_step(&state, &model, &cfg).unwrap();
        assert!(r.tau_halvings >= 1, "expected halving, got {}", r.tau_halvings);
    }

    #[test]
    fn config_validation() {
        let mut c = AdaptConfig::default();
        assert!(c.validate().is_ok());
        c.theta1 = 1.5;
        assert!(c.validate().is_err());
        c.theta1 = 0.5;
        c.coarsen_fraction = 1.0;
        assert!(c.validate().is_err());
        c.coarsen_fraction = 0.0;
        c.timestep_growth = 0.5;
        assert!(c.validate().is_err());
    }
}
