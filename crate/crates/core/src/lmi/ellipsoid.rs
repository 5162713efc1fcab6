//! Central-cut ellipsoid method on the concave margin function
//! `f(x) = min_j lambda_min(S_j(x))` (scaled slacks) over the ball `|x| <= R`.
//!
//! Shares nothing with the barrier method beyond the conic problem data, so
//! it serves as an independent cross-check of feasibility status. It stops
//! at the first point with `f(x) >= 0`, or once the supergradient upper bound
//! `f(x) + sqrt(g^T P g)` proves the optimum negative.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::backend::{ConicSolution, SdpBackend};
use super::{ConicProblem, SolveStatus, SolverOptions};
use crate::error::Result;

#[derive(Clone, Copy, Debug, Default)]
pub struct EllipsoidSolver;

impl SdpBackend for EllipsoidSolver {
    fn name(&self) -> &str {
        "ellipsoid"
    }

    fn solve(&self, problem: &ConicProblem, opts: &SolverOptions) -> Result<ConicSolution> {
        Ok(run(problem, opts))
    }
}

/// Margin value and a supergradient at `x`.
fn margin_and_supergradient(problem: &ConicProblem, x: &[f64]) -> (f64, DVector<f64>) {
    let mut worst = f64::INFINITY;
    let mut grad = DVector::zeros(problem.num_vars);
    for block in &problem.blocks {
        let eig = SymmetricEigen::new(block.scaled_slack(x, problem.margin));
        let (idx, &lam) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("blocks are nonempty");
        if lam < worst {
            worst = lam;
            let v = eig.eigenvectors.column(idx).into_owned();
            grad.fill(0.0);
            for vc in &block.coeffs {
                let d = block.scaled_coeff(vc);
                grad[vc.var] = (v.transpose() * d * &v)[(0, 0)];
            }
        }
    }
    (worst, grad)
}

fn run(problem: &ConicProblem, opts: &SolverOptions) -> ConicSolution {
    let d = problem.num_vars;
    let r = opts.radius;
    let mut x = DVector::<f64>::zeros(d);
    let mut shape = DMatrix::<f64>::identity(d, d) * (r * r);
    let mut best = (f64::NEG_INFINITY, x.clone());
    let mut upper = f64::INFINITY;
    let budget = opts.max_iter * 50;
    let resolution = opts.tol * problem.margin;

    for iter in 0..budget {
        let norm = x.norm();
        let cut = if norm > r {
            // keep the half containing the ball
            x.clone() / norm
        } else {
            let (f, g) = margin_and_supergradient(problem, x.as_slice());
            if f > best.0 {
                best = (f, x.clone());
            }
            if f >= 0.0 {
                return solution(x, SolveStatus::Feasible, iter + 1, f);
            }
            let spread = (g.transpose() * &shape * &g)[(0, 0)].max(0.0).sqrt();
            upper = upper.min(f + spread);
            if upper < 0.0 {
                return solution(best.1, SolveStatus::Infeasible, iter + 1, best.0);
            }
            if spread <= resolution {
                let status = if best.0 >= 0.0 {
                    SolveStatus::Feasible
                } else {
                    SolveStatus::Infeasible
                };
                return solution(best.1, status, iter + 1, best.0);
            }
            // optimum lies where g^T (y - x) >= 0
            -g
        };
        let pa = &shape * &cut;
        let denom = cut.dot(&pa);
        if !(denom > 0.0) {
            break;
        }
        let step = pa / denom.sqrt();
        if d == 1 {
            x -= &step * 0.5;
            shape *= 0.25;
        } else {
            let df = d as f64;
            x -= &step / (df + 1.0);
            shape = (&shape - (&step * step.transpose()) * (2.0 / (df + 1.0)))
                * (df * df / (df * df - 1.0));
        }
    }
    solution(best.1, SolveStatus::MaxIterations, budget, best.0)
}

fn solution(
    x: DVector<f64>,
    status: SolveStatus,
    iterations: usize,
    margin_slack: f64,
) -> ConicSolution {
    ConicSolution {
        status,
        x: x.as_slice().to_vec(),
        iterations,
        margin_slack,
    }
}
