//! Log-det barrier path-following method for the max-margin feasibility
//! problem
//!
//! ```text
//!   maximize t  subject to  S_j(x) - t I >= 0,  |x| <= R,
//! ```
//!
//! where `S_j` is the margin-shifted slack of block `j` divided by the
//! block's largest coefficient. The problem always
//! has a strictly feasible start (`x = 0`, `t` below every eigenvalue), and
//! the original LMIs are feasible with margin exactly when the optimum is
//! nonnegative.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::backend::{ConicSolution, SdpBackend};
use super::{ConicProblem, SolveStatus, SolverOptions};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default)]
pub struct BarrierSolver;

impl SdpBackend for BarrierSolver {
    fn name(&self) -> &str {
        "barrier"
    }

    fn solve(&self, problem: &ConicProblem, opts: &SolverOptions) -> Result<ConicSolution> {
        Barrier::new(problem, opts).run()
    }
}

struct Barrier<'a> {
    problem: &'a ConicProblem,
    opts: &'a SolverOptions,
    /// Index of the margin variable `t` in the Newton system.
    t_index: usize,
}

/// Barrier value, gradient and Hessian at one point.
struct Local {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

impl<'a> Barrier<'a> {
    fn new(problem: &'a ConicProblem, opts: &'a SolverOptions) -> Self {
        Barrier {
            problem,
            opts,
            t_index: problem.num_vars,
        }
    }

    fn slack(&self, block: usize, z: &DVector<f64>) -> DMatrix<f64> {
        let b = &self.problem.blocks[block];
        let mut s = b.scaled_slack(&z.as_slice()[..self.t_index], self.problem.margin);
        for i in 0..b.dim {
            s[(i, i)] -= z[self.t_index];
        }
        s
    }

    fn ball_slack(&self, z: &DVector<f64>) -> f64 {
        let r = self.opts.radius;
        r * r - z.rows(0, self.t_index).norm_squared()
    }

    /// `None` when `z` is outside the barrier domain.
    fn evaluate(&self, z: &DVector<f64>, tau: f64, with_derivatives: bool) -> Option<Local> {
        let dim = self.t_index + 1;
        let ball = self.ball_slack(z);
        if !(ball > 0.0) {
            return None;
        }
        let mut value = -tau * z[self.t_index] - ball.ln();
        let mut grad = DVector::zeros(if with_derivatives { dim } else { 0 });
        let mut hess = DMatrix::zeros(grad.len(), grad.len());
        if with_derivatives {
            grad[self.t_index] = -tau;
            for i in 0..self.t_index {
                grad[i] += 2.0 * z[i] / ball;
                hess[(i, i)] += 2.0 / ball;
                for k in 0..self.t_index {
                    hess[(i, k)] += 4.0 * z[i] * z[k] / (ball * ball);
                }
            }
        }
        for (j, block) in self.problem.blocks.iter().enumerate() {
            let s = self.slack(j, z);
            let chol = Cholesky::<f64, Dyn>::new(s)?;
            let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
            value -= log_det;
            if !with_derivatives {
                continue;
            }
            let s_inv = chol.inverse();
            // U_i = S^{-1} dS/dz_i for every coordinate touching this block
            let mut touched: Vec<(usize, DMatrix<f64>)> = block
                .coeffs
                .iter()
                .map(|vc| (vc.var, &s_inv * block.scaled_coeff(vc)))
                .collect();
            touched.push((self.t_index, -&s_inv));
            for (a, (ia, ua)) in touched.iter().enumerate() {
                grad[*ia] -= ua.trace();
                for (ib, ub) in touched.iter().skip(a) {
                    let h = trace_of_product(ua, ub);
                    hess[(*ia, *ib)] += h;
                    if ia != ib {
                        hess[(*ib, *ia)] += h;
                    }
                }
            }
        }
        Some(Local { value, grad, hess })
    }

    fn run(&self) -> Result<ConicSolution> {
        let problem = self.problem;
        let nu = (problem.barrier_degree() + 1) as f64;
        let x0 = vec![0.0; problem.num_vars];
        let mut z = DVector::zeros(problem.num_vars + 1);
        z[self.t_index] = problem.worst_slack(&x0) - 1.0;
        if !z[self.t_index].is_finite() {
            return Err(Error::SolverBreakdown("non-finite problem data".into()));
        }

        let gap_target = self.opts.tol * problem.margin;
        let mut tau = 1.0 / (z[self.t_index].abs() + 1.0);
        let mut iterations = 0;
        loop {
            // centering
            loop {
                if iterations >= self.opts.max_iter {
                    return Ok(self.finish(z, SolveStatus::MaxIterations, iterations));
                }
                let local = self.evaluate(&z, tau, true).ok_or_else(|| {
                    Error::SolverBreakdown("iterate left the barrier domain".into())
                })?;
                let step = newton_step(&local.hess, &local.grad)?;
                let decrement = -local.grad.dot(&step);
                iterations += 1;
                if decrement / 2.0 <= 1e-9 {
                    break;
                }
                let slope = local.grad.dot(&step);
                let mut alpha = 1.0;
                let mut accepted = false;
                for _ in 0..80 {
                    let trial = &z + &step * alpha;
                    if let Some(next) = self.evaluate(&trial, tau, false) {
                        if next.value <= local.value + 0.25 * alpha * slope {
                            z = trial;
                            accepted = true;
                            break;
                        }
                    }
                    alpha *= 0.5;
                }
                if !accepted {
                    // no further progress possible at this tau
                    break;
                }
            }
            let t = z[self.t_index];
            let gap = nu / tau;
            if t + gap < 0.0 {
                return Ok(self.finish(z, SolveStatus::Infeasible, iterations));
            }
            if gap <= gap_target {
                let status = if t >= 0.0 {
                    SolveStatus::Feasible
                } else {
                    SolveStatus::Infeasible
                };
                return Ok(self.finish(z, status, iterations));
            }
            tau *= 10.0;
        }
    }

    fn finish(&self, z: DVector<f64>, status: SolveStatus, iterations: usize) -> ConicSolution {
        let x = z.as_slice()[..self.t_index].to_vec();
        // the certificate is judged on x alone
        let status = match status {
            SolveStatus::Feasible if self.problem.worst_slack(&x) < 0.0 => SolveStatus::Infeasible,
            SolveStatus::MaxIterations if self.problem.worst_slack(&x) >= 0.0 => {
                SolveStatus::Feasible
            }
            s => s,
        };
        ConicSolution {
            status,
            x,
            iterations,
            margin_slack: z[self.t_index],
        }
    }
}

fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

fn newton_step(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Result<DVector<f64>> {
    let scale = hess.diagonal().amax().max(1e-300);
    let mut reg = 0.0;
    for _ in 0..12 {
        let mut h = hess.clone();
        for i in 0..h.nrows() {
            h[(i, i)] += reg;
        }
        if let Some(chol) = Cholesky::new(h) {
            let step = -chol.solve(grad);
            if step.iter().all(|v| v.is_finite()) {
                return Ok(step);
            }
        }
        reg = if reg == 0.0 {
            1e-14 * scale
        } else {
            reg * 100.0
        };
    }
    Err(Error::SolverBreakdown(
        "Newton system is not positive definite".into(),
    ))
}
