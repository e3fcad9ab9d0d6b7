//! Experiment drivers: fixed-mesh convergence studies, stationary
//! adaptivity (energy-norm or dual-weighted indicators) with a uniform
//! reference, and space-time adaptive evolution. Each driver writes CSV
//! tables, mesh/solution dumps and SVG plots into the output directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use tempered_dg::assembly::{assemble_load, AssembledSystem};
use tempered_dg::estimate::{
    AdaptConfig, DiffusionForm, EvolutionModel, GoalFunctional, Scheme, StationaryIteration,
    StationaryModel, adapt_evolution_step, adapt_stationary, energy_error,
};
use tempered_dg::mesh::Mesh;
use tempered_dg::quadrature::gauss_legendre;
use tempered_dg::solver::{BackwardEuler, EvolutionState};
use tempered_dg::space::{DgFunction, DgSpace};
use tempered_dg::tempered::TemperedParams;
use tempered_dg::Error as CoreError;

use crate::config::{Config, ConfigError};
use crate::log;
use crate::manufactured::{evolution_problem, stationary_problem, EvolutionProblem};
use crate::plot::{loglog_svg, mesh_svg, Series};

/// Harness failures, classified for distinct process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// invalid configuration or unknown problem (exit 2)
    Config(String),
    /// numerical failure: singular system, bad input, I/O (exit 3)
    Solver(String),
    /// adaptivity gave up: time-step underflow or dof cap (exit 4)
    Adapt(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Adapt(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Solver(m) => write!(f, "solver failure: {m}"),
            CliError::Adapt(m) => write!(f, "adaptivity aborted: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::TimeStepUnderflow(_) | CoreError::DofCapExceeded { .. } => {
                CliError::Adapt(e.to_string())
            }
            other => CliError::Solver(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Solver(format!("io: {e}"))
    }
}

/// Canonical float formatting: fixed precision scientific notation, '.'
/// decimal separator, so identical runs produce byte-identical tables.
pub fn num(v: f64) -> String {
    format!("{v:.10e}")
}

/// RFC-4180-style CSV (CRLF records, comma separated, header row).
pub fn csv_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = String::new();
    s.push_str(&header.join(","));
    s.push_str("\r\n");
    for r in rows {
        s.push_str(&r.join(","));
        s.push_str("\r\n");
    }
    s
}

fn write_out(out: &Path, name: &str, content: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(out)?;
    let path = out.join(name);
    std::fs::write(&path, content)?;
    Ok(path)
}

/// Least-squares slope of log(y) against log(x).
pub fn fit_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Pairwise orders log(e1/e2)/log(h1/h2).
pub fn pairwise_orders(errors: &[f64], h: &[f64]) -> Vec<f64> {
    errors
        .windows(2)
        .zip(h.windows(2))
        .map(|(e, hh)| (e[0] / e[1]).ln() / (hh[0] / hh[1]).ln())
        .collect()
}

fn problem_mesh(dim: usize, domain: ([f64; 2], [f64; 2]), base: usize) -> Result<Mesh, CliError> {
    let m = if dim == 1 {
        Mesh::interval(domain.0[0], domain.0[1], base)?
    } else {
        Mesh::structured_rect(domain.0, domain.1, base, base)?
    };
    Ok(m)
}

// ---------------------------------------------------------------------
// convergence study
// ---------------------------------------------------------------------

pub struct LevelResult {
    pub k: usize,
    pub dofs: usize,
    pub h: f64,
    pub tau: f64,
    pub steps: usize,
    pub l2_error: f64,
    /// worst additive defect of the per-step energy inequality, when checked
    pub energy_defect: Option<f64>,
}

pub struct ConvergeReport {
    pub levels: Vec<LevelResult>,
    pub orders: Vec<f64>,
    pub fitted_order: f64,
}

/// Time-average of f over [t0, t1].
fn time_average(f: &dyn Fn(f64) -> f64, t0: f64, t1: f64) -> f64 {
    let gl = gauss_legendre(4);
    gl.nodes
        .iter()
        .zip(&gl.weights)
        .map(|(&s, &w)| w * f(t0 + (t1 - t0) * s))
        .sum()
}

/// Per-step stability inequality of the implicit scheme:
/// (|u1|^2 - |u0|^2)/(2 tau) + gamma |u1|_E^2
///   <= |f|^2/2 + (kappa + 1/2) |u1|^2 + tol
/// with gamma = min(kappa1, kappa2, 1), f the applied (time-averaged) load.
fn energy_defect(
    params: &TemperedParams,
    u0: &DgFunction,
    u1: &DgFunction,
    tau: f64,
    fbar: &dyn Fn([f64; 2]) -> f64,
) -> Result<f64, CliError> {
    let gamma = params.kappa1.min(params.kappa2).min(1.0);
    let n0 = u0.l2_norm();
    let n1 = u1.l2_norm();
    let e1 = u1.energy_norm(params)?;
    let sp = &u1.space;
    let mut fsq = 0.0;
    for k in 0..sp.num_elems() {
        for (x, w) in sp.volume_quad(k) {
            let v = fbar(x);
            fsq += w * v * v;
        }
    }
    let lhs = (n1 * n1 - n0 * n0) / (2.0 * tau) + gamma * e1 * e1;
    let rhs = 0.5 * fsq + (params.kappa() + 0.5) * n1 * n1;
    Ok(lhs - rhs)
}

/// March the manufactured evolution problem to t_final on one fixed mesh
/// with tau ~ h^{degree+1}; returns the final-time L2 error.
fn run_level(
    problem: &EvolutionProblem,
    mesh: Mesh,
    degree: usize,
    check_energy: bool,
) -> Result<LevelResult, CliError> {
    let space = Rc::new(DgSpace::new(mesh, degree)?);
    let h = space.mesh().max_diameter();
    let t_final = problem.t_final;
    let steps = (t_final / h.powi(degree as i32 + 1)).ceil().max(1.0) as usize;
    let tau = t_final / steps as f64;
    let sys = AssembledSystem::build(&space, &problem.params)?;
    let be = BackwardEuler::new(&sys, tau)?;
    let exact = Rc::clone(&problem.exact);
    let rhs = Rc::clone(&problem.rhs);
    let u0 = space.l2_project(|x| exact(x, 0.0))?;
    let mut state = EvolutionState::initial(u0, tau);
    // separable loads: one assembly, scaled per step
    let base_load = problem
        .time_profile
        .as_ref()
        .map(|_| assemble_load(&space, |x| rhs(x, 0.0)));
    let mut worst_defect: Option<f64> = None;
    for n in 0..steps {
        let (t0, t1) = (n as f64 * tau, (n + 1) as f64 * tau);
        let (load, scale) = match (&problem.time_profile, &base_load) {
            (Some(p), Some(f0)) => {
                let avg = time_average(&**p, t0, t1);
                (f0.iter().map(|v| v * avg).collect::<Vec<f64>>(), Some(avg))
            }
            _ => {
                let gl = gauss_legendre(4);
                let load = assemble_load(&space, |x| {
                    gl.nodes
                        .iter()
                        .zip(&gl.weights)
                        .map(|(&s, &w)| w * rhs(x, t0 + (t1 - t0) * s))
                        .sum()
                });
                (load, None)
            }
        };
        let next = be.step(&state, &load)?;
        if check_energy {
            let rhs = Rc::clone(&rhs);
            let fbar: Box<dyn Fn([f64; 2]) -> f64> = match scale {
                Some(a) => Box::new(move |x| a * rhs(x, 0.0)),
                None => Box::new(move |x| {
                    let gl = gauss_legendre(4);
                    gl.nodes
                        .iter()
                        .zip(&gl.weights)
                        .map(|(&s, &w)| w * rhs(x, t0 + (t1 - t0) * s))
                        .sum()
                }),
            };
            let d = energy_defect(&problem.params, &state.u, &next.u, tau, &*fbar)?;
            worst_defect = Some(worst_defect.map_or(d, |w: f64| w.max(d)));
        }
        state = next;
    }
    let err = state.u.l2_error(|x| exact(x, t_final));
    Ok(LevelResult {
        k: space.num_elems(),
        dofs: space.num_dofs(),
        h,
        tau,
        steps,
        l2_error: err,
        energy_defect: worst_defect,
    })
}

/// Convergence study over a sequence of uniformly halved meshes.
/// Config keys: problem.id, problem.alpha, problem.beta, degree,
/// mesh.base, mesh.levels, check.energy.
pub fn run_converge(cfg: &Config, out: &Path) -> Result<ConvergeReport, CliError> {
    let alpha = cfg.f64_or("problem.alpha", 0.8)?;
    let beta = cfg.f64_or("problem.beta", alpha)?;
    let problem = evolution_problem(cfg.str("problem.id")?, alpha, beta)?;
    let degree = cfg.usize_or("degree", 1)?;
    let base = cfg.usize_or("mesh.base", 4)?;
    let levels = cfg.usize_or("mesh.levels", 3)?;
    let check_energy = cfg.usize_or("check.energy", 0)? != 0;
    if degree == 0 || degree > 3 {
        return Err(CliError::Config(format!("degree {degree} outside 1..=3")));
    }
    if levels < 2 {
        return Err(CliError::Config("mesh.levels must be >= 2".into()));
    }
    let mut results = Vec::new();
    for l in 0..levels {
        let n = base << l;
        let mesh = problem_mesh(problem.dim, problem.domain, n)?;
        log!("level {l}: K = {}", mesh.num_alive());
        let r = run_level(&problem, mesh, degree, check_energy)?;
        log!(
            "level {l}: K = {} dofs = {} error = {:.3e}",
            r.k,
            r.dofs,
            r.l2_error
        );
        results.push(r);
    }
    let errs: Vec<f64> = results.iter().map(|r| r.l2_error).collect();
    let hs: Vec<f64> = results.iter().map(|r| r.h).collect();
    let orders = pairwise_orders(&errs, &hs);
    let fitted = fit_slope(
        &results
            .iter()
            .map(|r| (r.h, r.l2_error))
            .collect::<Vec<_>>(),
    );
    // the fitted order is the slope of error against h
    let report = ConvergeReport {
        levels: results,
        orders,
        fitted_order: fitted,
    };
    let header = [
        "level",
        "K",
        "dof",
        "h",
        "tau",
        "steps",
        "L2_error",
        "order",
    ];
    let rows: Vec<Vec<String>> = report
        .levels
        .iter()
        .enumerate()
        .map(|(i, r)| {
            vec![
                i.to_string(),
                r.k.to_string(),
                r.dofs.to_string(),
                num(r.h),
                num(r.tau),
                r.steps.to_string(),
                num(r.l2_error),
                if i == 0 {
                    String::new()
                } else {
                    num(report.orders[i - 1])
                },
            ]
        })
        .collect();
    write_out(out, "converge.csv", &csv_table(&header, &rows))?;
    let series = [Series {
        label: "L2 error".into(),
        points: report
            .levels
            .iter()
            .map(|r| (r.k as f64, r.l2_error))
            .collect(),
    }];
    write_out(
        out,
        "converge.svg",
        &loglog_svg("L2 error vs element count", "K", "L2 error", &series, Some(-2.0)),
    )?;
    Ok(report)
}

// ---------------------------------------------------------------------
// stationary adaptivity
// ---------------------------------------------------------------------

pub struct StationaryReport {
    pub iterations: Vec<StationaryIteration>,
    /// uniform-refinement reference curve (K, L2 error), when exact known
    pub uniform: Vec<(usize, f64)>,
}

pub const STATIONARY_HEADER: [&str; 7] =
    ["iteration", "K", "dof", "L2_error", "energy_error", "eta", "I_eff"];

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Adaptive stationary run plus a uniform-refinement reference.
/// Config keys: problem.id, degree, mesh.base, uniform.levels, adapt.*.
pub fn run_adapt_stationary(
    cfg: &Config,
    out: &Path,
    scheme: Scheme,
) -> Result<StationaryReport, CliError> {
    let problem = stationary_problem(cfg.str("problem.id")?)?;
    let degree = cfg.usize_or("degree", 1)?;
    let base = cfg.usize_or("mesh.base", 8)?;
    let adapt = cfg.adapt()?;
    let mesh0 = problem_mesh(problem.dim, problem.domain, base)?;
    let model = StationaryModel {
        form: problem.form.clone(),
        f: Rc::clone(&problem.rhs),
    };
    let exact = problem.exact.clone();
    let exact_ref: Option<&dyn Fn([f64; 2]) -> f64> =
        exact.as_ref().map(|e| &**e as &dyn Fn([f64; 2]) -> f64);
    let iterations = adapt_stationary(
        &mesh0,
        degree,
        &model,
        exact_ref,
        &adapt,
        scheme,
        &GoalFunctional::ResidualWeighted,
    )?;

    // uniform reference curve on the same problem
    let mut uniform = Vec::new();
    if let Some(ex) = &exact {
        let levels = cfg.usize_or("uniform.levels", 4)?;
        let mut mesh = mesh0.clone();
        for _ in 0..=levels {
            let space = Rc::new(DgSpace::new(mesh.clone(), degree)?);
            let u = model.solve(&space)?;
            uniform.push((space.num_elems(), u.l2_error(|x| ex(x))));
            mesh = mesh.refine(&mesh.alive_elements())?;
        }
    }

    let rows: Vec<Vec<String>> = iterations
        .iter()
        .map(|it| {
            vec![
                it.iter.to_string(),
                it.k.to_string(),
                it.dofs.to_string(),
                opt_num(it.l2_error),
                opt_num(it.energy_error),
                num(it.eta),
                opt_num(it.i_eff),
            ]
        })
        .collect();
    write_out(out, "stationary.csv", &csv_table(&STATIONARY_HEADER, &rows))?;
    if !uniform.is_empty() {
        let urows: Vec<Vec<String>> = uniform
            .iter()
            .map(|&(k, e)| vec![k.to_string(), num(e)])
            .collect();
        write_out(out, "uniform.csv", &csv_table(&["K", "L2_error"], &urows))?;
    }
    for it in &iterations {
        write_out(
            out,
            &format!("mesh_{:04}.txt", it.iter),
            &it.u.space.mesh().write_text(),
        )?;
        write_out(
            out,
            &format!("solution_{:04}.txt", it.iter),
            &it.u.write_solution(),
        )?;
        write_out(
            out,
            &format!("mesh_{:04}.svg", it.iter),
            &mesh_svg(it.u.space.mesh()),
        )?;
        log!(
            "iter {}: K = {} eta = {:.3e} L2 = {}",
            it.iter,
            it.k,
            it.eta,
            opt_num(it.l2_error)
        );
    }
    let mut series = vec![Series {
        label: "adaptive L2 error".into(),
        points: iterations
            .iter()
            .filter_map(|it| it.l2_error.map(|e| (it.k as f64, e)))
            .collect(),
    }];
    if !uniform.is_empty() {
        series.push(Series {
            label: "uniform L2 error".into(),
            points: uniform.iter().map(|&(k, e)| (k as f64, e)).collect(),
        });
    }
    write_out(
        out,
        "stationary.svg",
        &loglog_svg("L2 error vs element count", "K", "L2 error", &series, Some(-2.0)),
    )?;
    Ok(StationaryReport { iterations, uniform })
}

// ---------------------------------------------------------------------
// evolution adaptivity
// ---------------------------------------------------------------------

pub struct EvolutionRow {
    pub step: usize,
    pub t: f64,
    pub tau: f64,
    pub k: usize,
    pub eta_time1: f64,
    pub eta_time2: f64,
    pub eta_space: f64,
    pub tau_halvings: usize,
}

pub struct Snapshot {
    pub t: f64,
    pub k: usize,
    /// centroid of the minimum-diameter alive element
    pub min_diam_centroid: [f64; 2],
}

pub struct EvolutionReport {
    pub rows: Vec<EvolutionRow>,
    pub snapshots: Vec<Snapshot>,
    pub total_halvings: usize,
}

pub const EVOLUTION_HEADER: [&str; 7] =
    ["step", "t", "tau", "K", "eta_time1", "eta_time2", "eta_space"];

fn min_diameter_centroid(mesh: &Mesh) -> [f64; 2] {
    let e = mesh
        .alive_elements()
        .into_iter()
        .min_by(|&a, &b| {
            mesh.diameter(a)
                .partial_cmp(&mesh.diameter(b))
                .unwrap()
                .then(a.cmp(&b))
        })
        .expect("nonempty mesh");
    mesh.centroid(e)
}

/// Space-time adaptive march with snapshots at the quarter times.
/// Config keys: problem.id, problem.alpha, problem.beta, degree,
/// mesh.base, time.tau0, time.t_final, adapt.*.
pub fn run_adapt_evolution(cfg: &Config, out: &Path) -> Result<EvolutionReport, CliError> {
    let alpha = cfg.f64_or("problem.alpha", 0.8)?;
    let beta = cfg.f64_or("problem.beta", alpha)?;
    let problem = evolution_problem(cfg.str("problem.id")?, alpha, beta)?;
    let degree = cfg.usize_or("degree", 1)?;
    let base = cfg.usize_or("mesh.base", 8)?;
    let tau0 = cfg.f64_or("time.tau0", 0.05)?;
    let t_final = cfg.f64_or("time.t_final", problem.t_final)?;
    if tau0 <= 0.0 || t_final <= 0.0 {
        return Err(CliError::Config("time.tau0 and time.t_final must be positive".into()));
    }
    let adapt: AdaptConfig = cfg.adapt()?;
    let mesh0 = problem_mesh(problem.dim, problem.domain, base)?;
    let model = EvolutionModel {
        params: problem.params.clone(),
        f: Rc::clone(&problem.rhs),
        degree,
    };
    let space = Rc::new(DgSpace::new(mesh0, degree)?);
    let exact = Rc::clone(&problem.exact);
    let u0 = space.l2_project(|x| exact(x, 0.0))?;
    // land exactly on the snapshot times
    let outputs: Vec<f64> = (1..=4).map(|q| t_final * q as f64 / 4.0).collect();
    let mut state = EvolutionState::initial(u0, tau0.min(outputs[0]));
    let mut rows = Vec::new();
    let mut snapshots = Vec::new();
    let mut total_halvings = 0usize;
    let mut next_out = 0usize;
    while state.t < t_final - 1e-12 {
        let res = adapt_evolution_step(&state, &model, &adapt)?;
        total_halvings += res.tau_halvings;
        let mesh = res.state.u.space.mesh();
        rows.push(EvolutionRow {
            step: res.state.step,
            t: res.state.t,
            tau: res.state.tau,
            k: mesh.num_alive(),
            eta_time1: res.eta_time1,
            eta_time2: res.eta_time2,
            eta_space: res.eta_space,
            tau_halvings: res.tau_halvings,
        });
        log!(
            "step {}: t = {:.4} tau = {:.4e} K = {} eta = ({:.2e}, {:.2e}, {:.2e})",
            res.state.step,
            res.state.t,
            res.state.tau,
            mesh.num_alive(),
            res.eta_time1,
            res.eta_time2,
            res.eta_space
        );
        if next_out < outputs.len() && res.state.t >= outputs[next_out] - 1e-12 {
            let idx = snapshots.len();
            write_out(out, &format!("mesh_t{idx}.txt", ), &mesh.write_text())?;
            write_out(out, &format!("mesh_t{idx}.svg"), &mesh_svg(mesh))?;
            write_out(
                out,
                &format!("solution_t{idx}.txt"),
                &res.state.u.write_solution(),
            )?;
            snapshots.push(Snapshot {
                t: res.state.t,
                k: mesh.num_alive(),
                min_diam_centroid: min_diameter_centroid(mesh),
            });
            next_out += 1;
        }
        state = res.state;
        // clamp the proposed step to the next snapshot / final time
        let target = if next_out < outputs.len() {
            outputs[next_out]
        } else {
            t_final
        };
        state.tau = res.next_tau.min((target - state.t).max(0.0));
        if state.tau <= 0.0 {
            state.tau = res.next_tau;
        }
    }
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.step.to_string(),
                num(r.t),
                num(r.tau),
                r.k.to_string(),
                num(r.eta_time1),
                num(r.eta_time2),
                num(r.eta_space),
            ]
        })
        .collect();
    write_out(out, "evolution.csv", &csv_table(&EVOLUTION_HEADER, &csv_rows))?;
    let series = [
        Series {
            label: "space indicator".into(),
            points: rows.iter().map(|r| (r.t, r.eta_space)).collect(),
        },
        Series {
            label: "time indicator".into(),
            points: rows
                .iter()
                .map(|r| (r.t, r.eta_time1 + r.eta_time2))
                .collect(),
        },
    ];
    write_out(
        out,
        "evolution.svg",
        &loglog_svg("indicators vs time", "t", "indicator", &series, None),
    )?;
    Ok(EvolutionReport {
        rows,
        snapshots,
        total_halvings,
    })
}

/// Energy error of a stationary iterate against the exact solution;
/// re-exported convenience for the acceptance checks.
pub fn stationary_energy_error(
    it: &StationaryIteration,
    exact: &dyn Fn([f64; 2]) -> f64,
    form: &DiffusionForm,
) -> Result<f64, CliError> {
    Ok(energy_error(&it.u, exact, form)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_is_rfc4180_style() {
        let t = csv_table(&["a", "b"], &[vec!["1".into(), num(0.25)]]);
        assert_eq!(t, "a,b\r\n1,2.5000000000e-1\r\n");
    }

    #[test]
    fn slope_fit_recovers_power_law() {
        let pts: Vec<(f64, f64)> = (1..6).map(|i| {
            let h = 1.0 / (1 << i) as f64;
            (h, 3.0 * h * h)
        }).collect();
        assert!((fit_slope(&pts) - 2.0).abs() <= 1e-12);
        let errs: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let hs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        for o in pairwise_orders(&errs, &hs) {
            assert!((o - 2.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn converge_smoke_1d() {
        let cfg = Config::parse(
            "problem.id = smooth-1d\ndegree = 1\nmesh.base = 4\nmesh.levels = 2\ncheck.energy = 1\n",
        )
        .unwrap();
        let dir = std::env::temp_dir().join("tdg-conv-smoke");
        let rep = run_converge(&cfg, &dir).unwrap();
        assert_eq!(rep.levels.len(), 2);
        assert!(rep.levels[1].l2_error < rep.levels[0].l2_error);
        for l in &rep.levels {
            assert!(l.energy_defect.unwrap() <= 1e-8);
        }
        assert!(dir.join("converge.csv").exists());
        assert!(dir.join("converge.svg").exists());
    }

    #[test]
    fn unknown_problem_is_config_error() {
        let cfg = Config::parse("problem.id = nope\n").unwrap();
        let dir = std::env::temp_dir().join("tdg-err-smoke");
        match run_converge(&cfg, &dir) {
            Err(e @ CliError::Config(_)) => assert_eq!(e.exit_code(), 2),
            other => panic!("expected config error, got {:?}", other.map(|_| ())),
        }
    }
}
