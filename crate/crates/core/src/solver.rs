//! Linear solves for the DG scheme: the stationary system, backward Euler
//! time stepping with factorization reuse, and the higher-degree dual solve
//! used by the goal-oriented estimator.

use crate::assembly::{AssembledSystem, SparseMatrix};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::space::{DgFunction, DgSpace};
use nalgebra::{DMatrix, DVector, Dyn, LU};
use std::rc::Rc;

fn lu_solve(lu: &LU<f64, Dyn, Dyn>, rhs: &[f64]) -> Result<Vec<f64>> {
    lu.solve(&DVector::from_column_slice(rhs))
        .map(|v| v.as_slice().to_vec())
        .ok_or_else(|| Error::SolverFailure("singular system in LU solve".into()))
}

fn check_residual(op: &SparseMatrix, u: &[f64], rhs: &[f64]) -> Result<()> {
    let au = op.matvec(u);
    let rn: f64 = rhs
        .iter()
        .zip(&au)
        .map(|(b, a)| (b - a) * (b - a))
        .sum::<f64>()
        .sqrt();
    let bn: f64 = rhs.iter().map(|b| b * b).sum::<f64>().sqrt();
    if !(rn <= 1e-10 * bn.max(1e-30)) {
        return Err(Error::SolverFailure(format!(
            "stationary solve residual {rn:.3e} exceeds 1e-10 * {bn:.3e}; system likely ill-conditioned"
        )));
    }
    Ok(())
}

/// Solve the stationary system op u = load (op already includes the jump
/// penalty). The computed residual must meet 1e-10 relative accuracy.
pub fn solve_stationary(
    space: &Rc<DgSpace>,
    op: &SparseMatrix,
    load: &[f64],
) -> Result<DgFunction> {
    if op.nrows() != space.num_dofs() || load.len() != space.num_dofs() {
        return Err(Error::Internal("stationary system dimension mismatch".into()));
    }
    let lu = op.to_dense().lu();
    let u = lu_solve(&lu, load)?;
    check_residual(op, &u, load)?;
    Ok(DgFunction {
        space: Rc::clone(space),
        coeffs: u,
    })
}

/// State of the evolution run after n backward-Euler steps.
#[derive(Debug, Clone)]
pub struct EvolutionState {
    pub t: f64,
    pub tau: f64,
    pub step: usize,
    pub u: DgFunction,
}

impl EvolutionState {
    pub fn initial(u0: DgFunction, tau: f64) -> Self {
        Self {
            t: 0.0,
            tau,
            step: 0,
            u: u0,
        }
    }
}

/// Backward Euler with a frozen factorization of M/tau + B + G + J0 - kappa M,
/// reusable across steps as long as mesh and tau are unchanged.
pub struct BackwardEuler {
    tau: f64,
    mass: SparseMatrix,
    lu: LU<f64, Dyn, Dyn>,
}

impl BackwardEuler {
    pub fn new(sys: &AssembledSystem, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::InvalidInput(format!("time step {tau} must be positive")));
        }
        let mut op = sys.operator_dense();
        op += sys.mass.to_dense() / tau;
        let lu = op.lu();
        Ok(Self {
            tau,
            mass: sys.mass.clone(),
            lu,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Advance one step: fbar is the load vector of f at t^{n+1} (or the
    /// time-averaged load when driven by the evolution estimator).
    pub fn step(&self, state: &EvolutionState, fbar: &[f64]) -> Result<EvolutionState> {
        let mut rhs = self.mass.matvec(&state.u.coeffs);
        for (r, f) in rhs.iter_mut().zip(fbar) {
            *r = *r / self.tau + f;
        }
        let u = lu_solve(&self.lu, &rhs)?;
        Ok(EvolutionState {
            t: state.t + self.tau,
            tau: self.tau,
            step: state.step + 1,
            u: DgFunction {
                space: Rc::clone(&state.u.space),
                coeffs: u,
            },
        })
    }
}

/// Solve the dual problem a(phi, z) = J(phi) in the degree-(N+1) space on
/// the same mesh. The dual operator is the transpose of the primal one, so
/// left/right derivative roles are swapped automatically.
pub fn solve_dual_quadratic<A, G>(
    mesh: &Mesh,
    primal_degree: usize,
    assemble_primal: A,
    goal: G,
) -> Result<DgFunction>
where
    A: FnOnce(&Rc<DgSpace>) -> Result<SparseMatrix>,
    G: FnOnce(&Rc<DgSpace>) -> Result<Vec<f64>>,
{
    let space2 = Rc::new(DgSpace::new(mesh.clone(), primal_degree + 1)?);
    let op = assemble_primal(&space2)?;
    let j = goal(&space2)?;
    if j.len() != space2.num_dofs() {
        return Err(Error::Internal("goal functional dimension mismatch".into()));
    }
    let lu = op.to_dense().transpose().lu();
    let z = lu_solve(&lu, &j)?;
    Ok(DgFunction {
        space: space2,
        coeffs: z,
    })
}

/// Dense operator helper shared by the adaptive drivers.
pub fn dense_operator(parts: &[&SparseMatrix]) -> DMatrix<f64> {
    let mut m = parts[0].to_dense();
    for p in &parts[1..] {
        m += p.to_dense();
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{
        assemble_fractional_axis, assemble_load, assemble_penalty, AssembledSystem,
    };
    use crate::mesh::Axis;
    use crate::quadrature::integrate_adaptive;
    use crate::tempered::TemperedParams;
    use approx::assert_relative_eq;

    fn space_1d(k: usize, n: usize) -> Rc<DgSpace> {
        Rc::new(DgSpace::new(Mesh::interval(0.0, 1.0, k).unwrap(), n).unwrap())
    }

    fn stationary_op(sp: &Rc<DgSpace>, alpha: f64) -> SparseMatrix {
        let mut op = assemble_fractional_axis(sp, Axis::X, 0.5 * alpha, 0.0, true).unwrap();
        op.add_scaled(&assemble_penalty(sp), 1.0);
        op
    }

    #[test]
    fn zero_load_gives_zero() {
        let sp = space_1d(4, 1);
        let op = stationary_op(&sp, 0.8);
        let u = solve_stationary(&sp, &op, &vec![0.0; sp.num_dofs()]).unwrap();
        assert!(u.coeffs.iter().all(|&c| c.abs() <= 1e-14));
    }

    #[test]
    fn stationary_residual_meets_tolerance() {
        let sp = space_1d(8, 2);
        let op = stationary_op(&sp, 0.6);
        let load = assemble_load(&sp, |x| (3.0 * x[0]).sin());
        // solve_stationary verifies the 1e-10 relative residual internally
        let u = solve_stationary(&sp, &op, &load).unwrap();
        assert!(u.l2_norm().is_finite());
    }

    #[test]
    fn backward_euler_fixed_point() {
        // f chosen for a steady solution: starting at the stationary
        // solution, one step must return it unchanged
        let sp = space_1d(6, 1);
        let params = TemperedParams::new(0.8, 0.8, 2.0, 1.0, 1.0, [1.0, 0.0]).unwrap();
        let sys = AssembledSystem::build(&sp, &params).unwrap();
        let load = assemble_load(&sp, |x| (2.0 * x[0]).cos() + 1.5);
        let u0 = crate::assembly::solve_dense(sys.operator_dense(), &load).unwrap();
        let u0 = DgFunction {
            space: Rc::clone(&sp),
            coeffs: u0,
        };
        let be = BackwardEuler::new(&sys, 0.1).unwrap();
        let s1 = be.step(&EvolutionState::initial(u0.clone(), 0.1), &load).unwrap();
        for (a, b) in s1.u.coeffs.iter().zip(&u0.coeffs) {
            assert_relative_eq!(a, b, epsilon = 1e-8);
        }
        assert_relative_eq!(s1.t, 0.1);
        assert_eq!(s1.step, 1);
    }

    #[test]
    fn backward_euler_unforced_decay() {
        // kappa = 0 (lambda = 0) and PSD spatial operator: the L2 norm is
        // nonincreasing step by step
        let sp = space_1d(5, 1);
        let params = TemperedParams::new(0.7, 0.7, 0.0, 1.0, 1.0, [1.0, 0.0]).unwrap();
        let sys = AssembledSystem::build(&sp, &params).unwrap();
        let be = BackwardEuler::new(&sys, 0.05).unwrap();
        let u0 = sp.interpolate(|x| (4.0 * x[0]).sin()).unwrap();
        let mut state = EvolutionState::initial(u0, 0.05);
        let zero = vec![0.0; sp.num_dofs()];
        let mut prev = state.u.l2_norm();
        for _ in 0..20 {
            state = be.step(&state, &zero).unwrap();
            let n = state.u.l2_norm();
            assert!(n <= prev * (1.0 + 1e-12), "norm grew: {n} > {prev}");
            prev = n;
        }
        assert_relative_eq!(state.t, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn discrete_energy_inequality_per_step() {
        let sp = space_1d(6, 1);
        let params = TemperedParams::new(0.8, 0.8, 2.0, 1.0, 1.0, [1.0, 0.0]).unwrap();
        let sys = AssembledSystem::build(&sp, &params).unwrap();
        let tau = 0.05;
        let be = BackwardEuler::new(&sys, tau).unwrap();
        let f = |x: [f64; 2]| (5.0 * x[0]).sin() * 2.0;
        let load = assemble_load(&sp, f);
        let f_norm_sq = integrate_adaptive(|x| f([x, 0.0]).powi(2), 0.0, 1.0, 1e-12);
        let gamma = 1.0f64.min(params.kappa1).min(params.kappa2);
        let mut state =
            EvolutionState::initial(sp.interpolate(|x| x[0] * (1.0 - x[0])).unwrap(), tau);
        for _ in 0..5 {
            let next = be.step(&state, &load).unwrap();
            let n1 = next.u.l2_norm();
            let n0 = state.u.l2_norm();
            let energy = next.u.energy_norm(&params).unwrap();
            let lhs = (n1 * n1 - n0 * n0) / (2.0 * tau) + gamma * energy * energy;
            let rhs = 0.5 * f_norm_sq + (sys.kappa + 0.5) * n1 * n1;
            assert!(lhs <= rhs + 1e-8, "energy inequality violated: {lhs} > {rhs}");
            state = next;
        }
    }

    #[test]
    fn dual_zero_goal() {
        let sp = space_1d(3, 1);
        let z = solve_dual_quadratic(
            sp.mesh(),
            1,
            |s2| {
                let mut op = assemble_fractional_axis(s2, Axis::X, 0.4, 0.0, false).unwrap();
                op.add_scaled(&assemble_penalty(s2), 1.0);
                Ok(op)
            },
            |s2| Ok(vec![0.0; s2.num_dofs()]),
        )
        .unwrap();
        assert_eq!(z.space.degree(), 2);
        assert!(z.coeffs.iter().all(|&c| c.abs() <= 1e-14));
    }

    #[test]
    fn dual_adjoint_pairing() {
        // one-sided left-derivative primal form: the dual solve satisfies
        // a(phi, z) = J(phi) for every basis function phi of the higher space
        let sp = space_1d(4, 1);
        let mut op2_store = None;
        let z = solve_dual_quadratic(
            sp.mesh(),
            1,
            |s2| {
                let mut op = assemble_fractional_axis(s2, Axis::X, 0.4, 0.0, false).unwrap();
                op.add_scaled(&assemble_penalty(s2), 1.0);
                op2_store = Some(op.clone());
                Ok(op)
            },
            |s2| Ok(assemble_load(s2, |x| x[0])),
        )
        .unwrap();
        let op2 = op2_store.unwrap();
        let goal = assemble_load(&z.space, |x| x[0]);
        // a(phi_i, z) = row pairing of the transposed operator
        let az = op2.to_dense().transpose() * DVector::from_column_slice(&z.coeffs);
        for (a, g) in az.iter().zip(&goal) {
            assert_relative_eq!(a, g, epsilon = 1e-8);
        }
    }

    #[test]
    fn invalid_tau_rejected() {
        let sp = space_1d(2, 1);
        let params = TemperedParams::new(0.8, 0.8, 0.0, 1.0, 1.0, [0.0, 0.0]).unwrap();
        let sys = AssembledSystem::build(&sp, &params).unwrap();
        assert!(BackwardEuler::new(&sys, 0.0).is_err());
        assert!(BackwardEuler::new(&sys, -1.0).is_err());
    }
}
