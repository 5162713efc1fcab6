//! JSON report structures. Every report carries `schema_version` and
//! reloads into the exact value that produced it.

use serde::{Deserialize, Serialize};

use super::config::{from_dmatrix, to_dmatrix, Matrix, SCHEMA_VERSION};
use crate::basis::{Distribution, PolyBasis};
use crate::error::{Error, Result};
use crate::lmi::{ProblemSize, Residual, SolveStatus};
use crate::sim::TrajectoryRecord;
use crate::synthesis::{
    AffineLpvGain, ControllerGain, Design, EmsReport, GainExpansion, Method, SynthesisResult,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GainReport {
    /// `K(xi) = sum_i blocks[i] phi_i(xi)`.
    Expansion {
        blocks: Vec<Matrix>,
    },
    Constant {
        k: Matrix,
    },
    /// `K(rho) = (w0 + rho w1)(y0 + rho y1)^{-1}`, `rho` clamped to `domain`.
    AffineLpv {
        y0: Matrix,
        y1: Matrix,
        w0: Matrix,
        w1: Matrix,
        domain: (f64, f64),
    },
}

impl GainReport {
    pub fn from_gain(gain: &ControllerGain) -> Self {
        match gain {
            ControllerGain::Expansion(g) => GainReport::Expansion {
                blocks: g.blocks().iter().map(from_dmatrix).collect(),
            },
            ControllerGain::Constant(k) => GainReport::Constant { k: from_dmatrix(k) },
            ControllerGain::AffineLpv(g) => GainReport::AffineLpv {
                y0: from_dmatrix(&g.y0),
                y1: from_dmatrix(&g.y1),
                w0: from_dmatrix(&g.w0),
                w1: from_dmatrix(&g.w1),
                domain: g.domain,
            },
        }
    }

    pub fn to_gain(&self, basis: &PolyBasis) -> Result<ControllerGain> {
        Ok(match self {
            GainReport::Expansion { blocks } => {
                let blocks = blocks.iter().map(to_dmatrix).collect::<Result<Vec<_>>>()?;
                ControllerGain::Expansion(GainExpansion::from_blocks(&blocks, basis.clone())?)
            }
            GainReport::Constant { k } => ControllerGain::Constant(to_dmatrix(k)?),
            GainReport::AffineLpv {
                y0,
                y1,
                w0,
                w1,
                domain,
            } => ControllerGain::AffineLpv(AffineLpvGain {
                y0: to_dmatrix(y0)?,
                y1: to_dmatrix(y1)?,
                w0: to_dmatrix(w0)?,
                w1: to_dmatrix(w1)?,
                domain: *domain,
            }),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignReport {
    Theorem1 { order: usize },
    Theorem2 { order: usize },
    Lti { rho: f64, a: Matrix, b: Matrix },
    SampledLpv { samples: Vec<f64> },
}

impl DesignReport {
    pub fn method(&self) -> Method {
        match self {
            DesignReport::Theorem1 { .. } => Method::Theorem1,
            DesignReport::Theorem2 { .. } => Method::Theorem2,
            DesignReport::Lti { .. } => Method::Lti,
            DesignReport::SampledLpv { .. } => Method::SampledLpv,
        }
    }

    fn to_design(&self) -> Result<Design> {
        Ok(match self {
            DesignReport::Theorem1 { order } => Design::Theorem1 { order: *order },
            DesignReport::Theorem2 { order } => Design::Theorem2 { order: *order },
            DesignReport::Lti { a, b, .. } => Design::Lti {
                a: to_dmatrix(a)?,
                b: to_dmatrix(b)?,
            },
            DesignReport::SampledLpv { samples } => Design::SampledLpv {
                samples: samples.clone(),
            },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub lyapunov: Matrix,
    pub lyapunov_inverse: Matrix,
    pub w: Matrix,
    pub gain: GainReport,
    pub residuals: Vec<Residual>,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub message: String,
    /// Worst signed distance past the margin at the returned point.
    pub worst: f64,
    pub residual_eigenvalues: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub schema_version: u32,
    pub method: Method,
    pub status: SolveStatus,
    pub alpha: f64,
    pub seed: u64,
    pub distribution: Distribution,
    pub pc_order: usize,
    pub design: DesignReport,
    pub problem_size: Option<ProblemSize>,
    pub synthesis_seconds: f64,
    pub certificate: Option<Certificate>,
    pub failure: Option<Failure>,
}

impl SynthesisReport {
    pub fn feasible(
        result: &SynthesisResult,
        design: DesignReport,
        seed: u64,
        basis: &PolyBasis,
    ) -> Self {
        SynthesisReport {
            schema_version: SCHEMA_VERSION,
            method: result.method(),
            status: SolveStatus::Feasible,
            alpha: result.alpha,
            seed,
            distribution: basis.distribution(),
            pc_order: basis.order(),
            design,
            problem_size: Some(result.problem_size),
            synthesis_seconds: result.solve_seconds,
            certificate: Some(Certificate {
                lyapunov: from_dmatrix(&result.y),
                lyapunov_inverse: from_dmatrix(&result.p),
                w: from_dmatrix(&result.w),
                gain: GainReport::from_gain(&result.gain),
                residuals: result.certificates.clone(),
                margin: result.margin,
            }),
            failure: None,
        }
    }

    /// Rebuilds the synthesis result for re-verification.
    pub fn to_result(&self, basis: &PolyBasis) -> Result<SynthesisResult> {
        let (Some(cert), Some(size)) = (&self.certificate, self.problem_size) else {
            return Err(Error::Precondition(format!(
                "report has status {:?} and carries no certificate",
                self.status
            )));
        };
        if self.design.method() != self.method {
            return Err(Error::Config("report method and design disagree".into()));
        }
        Ok(SynthesisResult {
            design: self.design.to_design()?,
            alpha: self.alpha,
            gain: cert.gain.to_gain(basis)?,
            y: to_dmatrix(&cert.lyapunov)?,
            p: to_dmatrix(&cert.lyapunov_inverse)?,
            w: to_dmatrix(&cert.w)?,
            certificates: cert.residuals.clone(),
            margin: cert.margin,
            problem_size: size,
            solve_seconds: self.synthesis_seconds,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub schema_version: u32,
    pub seed: u64,
    pub ems: EmsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub controller: String,
    pub final_norm: f64,
    /// First time after which `|x|` stays within 2% of `|x(0)|`.
    pub settling_time: Option<f64>,
    /// `∫ (|x|^2 + |u|^2) dt`.
    pub cost: f64,
    pub clamped_steps: usize,
    pub step: f64,
    pub horizon: f64,
}

impl TrajectorySummary {
    pub const SETTLING_FRACTION: f64 = 0.02;

    pub fn of(rec: &TrajectoryRecord) -> Self {
        TrajectorySummary {
            controller: rec.metadata.controller.clone(),
            final_norm: rec.final_norm(),
            settling_time: rec.settling_time(Self::SETTLING_FRACTION),
            cost: rec.cost(),
            clamped_steps: rec.metadata.clamped_steps,
            step: rec.metadata.step,
            horizon: rec.times.last().copied().unwrap_or(0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub schema_version: u32,
    pub trajectory: TrajectorySummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerSummary {
    pub name: String,
    pub method: Method,
    pub design: DesignReport,
    pub gain: GainReport,
    pub residuals: Vec<Residual>,
    pub margin: f64,
    pub problem_size: ProblemSize,
    pub trajectory: TrajectorySummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReproduceSummary {
    pub schema_version: u32,
    pub seed: u64,
    pub alpha: f64,
    pub pc_order: usize,
    pub distribution: Distribution,
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub step: f64,
    pub controllers: Vec<ControllerSummary>,
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}
