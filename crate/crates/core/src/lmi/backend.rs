//! Solver backends for the scalarized conic form.
//!
//! An external solver plugs in through [`CommandBackend`]: the request
//! (problem + options) is written as JSON to the child's stdin and a
//! [`ConicSolution`] is read back as JSON from its stdout.

use std::io::Write;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use super::{ConicProblem, SolveStatus, SolverOptions};
use crate::error::{Error, Result};

pub trait SdpBackend {
    fn name(&self) -> &str;
    fn solve(&self, problem: &ConicProblem, opts: &SolverOptions) -> Result<ConicSolution>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConicSolution {
    pub status: SolveStatus,
    /// Scalarized decision vector.
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Achieved common margin beyond `eps` (negative when infeasible).
    pub margin_slack: f64,
}

/// Wire format of a backend request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveRequest {
    pub problem: ConicProblem,
    pub margin_rel: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub radius: f64,
}

impl SolveRequest {
    pub fn new(problem: &ConicProblem, opts: &SolverOptions) -> Self {
        SolveRequest {
            problem: problem.clone(),
            margin_rel: opts.margin_rel,
            tol: opts.tol,
            max_iter: opts.max_iter,
            radius: opts.radius,
        }
    }

    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            margin_rel: self.margin_rel,
            tol: self.tol,
            max_iter: self.max_iter,
            radius: self.radius,
        }
    }
}

/// Runs an external program speaking the JSON request/solution protocol.
#[derive(Clone, Debug)]
pub struct CommandBackend {
    pub program: String,
    pub args: Vec<String>,
}

impl CommandBackend {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        CommandBackend {
            program: program.into(),
            args,
        }
    }
}

impl SdpBackend for CommandBackend {
    fn name(&self) -> &str {
        &self.program
    }

    fn solve(&self, problem: &ConicProblem, opts: &SolverOptions) -> Result<ConicSolution> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::BackendUnavailable(format!("{}: {e}", self.program)))?;
        let request = serde_json::to_vec(&SolveRequest::new(problem, opts))?;
        child
            .stdin
            .take()
            .expect("stdin is piped")
            .write_all(&request)
            .map_err(|e| Error::BackendUnavailable(format!("{}: {e}", self.program)))?;
        let output = child.wait_with_output()?;
        if !output.status.success() {
            return Err(Error::SolverBreakdown(format!(
                "{} exited with {}: {}",
                self.program,
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        Ok(serde_json::from_slice(&output.stdout)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmi::{ConicBlock, Sense, VarCoeff};

    #[test]
    fn missing_program_is_unavailable() {
        let problem = ConicProblem {
            num_vars: 1,
            margin: 1e-6,
            blocks: vec![ConicBlock {
                name: "c".into(),
                dim: 1,
                sense: Sense::PositiveDefinite,
                constant: vec![0.0],
                coeffs: vec![VarCoeff {
                    var: 0,
                    matrix: vec![1.0],
                }],
            }],
        };
        let backend = CommandBackend::new("/nonexistent/sdp-solver", vec![]);
        assert!(matches!(
            backend.solve(&problem, &SolverOptions::default()),
            Err(Error::BackendUnavailable(_))
        ));
    }
}
