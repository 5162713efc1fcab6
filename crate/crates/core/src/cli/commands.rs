use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{from_dmatrix, ProblemConfig, SimModel, SCHEMA_VERSION};
use super::report::{
    to_json, ControllerSummary, DesignReport, Failure, GainReport, ReproduceSummary,
    SimulationReport, SynthesisReport, TrajectorySummary, VerifyReport,
};
use crate::basis::{Distribution, PolyBasis};
use crate::error::{Error, Result};
use crate::galerkin::PhysicalPlant;
use crate::lmi::{BarrierSolver, EllipsoidSolver, SdpBackend, SolveRequest};
use crate::sim::{self, TrajectoryRecord};
use crate::synthesis::{
    synthesize_lti, synthesize_sampled_lpv, synthesize_theorem1, synthesize_theorem2, verify_ems,
    Method, SynthesisOptions, SynthesisResult, VerifyOptions,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NO_CERTIFICATE: i32 = 3;

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub order: Option<usize>,
    pub samples: Option<usize>,
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ProblemConfig> {
    let mut config = ProblemConfig::load(path)?;
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(alpha) = overrides.alpha {
        config.alpha = alpha;
    }
    if let Some(order) = overrides.order {
        config.pc_order = order;
    }
    if let Some(samples) = overrides.samples {
        config.method_options.samples = Some(samples);
        config.method_options.sample_points = None;
    }
    config.validate()?;
    Ok(config)
}

/// `count` independent uniform draws over `domain`.
pub fn draw_samples(domain: (f64, f64), count: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..count)
        .map(|_| rng.random_range(domain.0..=domain.1))
        .collect()
}

/// Outcome of one synthesis run: the report, plus the result when feasible.
pub struct Synthesized {
    pub report: SynthesisReport,
    pub result: Option<SynthesisResult>,
}

fn infeasible_report(
    config: &ProblemConfig,
    design: DesignReport,
    err: &Error,
) -> Option<SynthesisReport> {
    let Error::NoCertificate {
        status,
        worst,
        residuals,
    } = err
    else {
        return None;
    };
    Some(SynthesisReport {
        schema_version: SCHEMA_VERSION,
        method: config.method,
        status: *status,
        alpha: config.alpha,
        seed: config.seed,
        distribution: config.distribution,
        pc_order: config.pc_order,
        design,
        problem_size: None,
        synthesis_seconds: 0.0,
        certificate: None,
        failure: Some(Failure {
            message: err.to_string(),
            worst: *worst,
            residual_eigenvalues: residuals.clone(),
        }),
    })
}

/// Runs the configured design. Infeasibility is reported, not raised.
pub fn synthesize(config: &ProblemConfig) -> Result<Synthesized> {
    let opts = SynthesisOptions {
        solver: config.solver_options(),
    };
    let basis = config.basis()?;
    let physical = config.physical_plant()?;
    let (design, outcome) = match config.method {
        Method::Theorem1 | Method::Theorem2 => {
            let plant = physical.to_stochastic(&basis)?;
            let order = config.pc_order;
            if config.method == Method::Theorem1 {
                (
                    DesignReport::Theorem1 { order },
                    synthesize_theorem1(&plant, config.alpha, &opts),
                )
            } else {
                (
                    DesignReport::Theorem2 { order },
                    synthesize_theorem2(&plant, config.alpha, &opts),
                )
            }
        }
        Method::Lti => {
            let rho = config
                .method_options
                .lti_rho
                .unwrap_or_else(|| config.center());
            let (a, b) = (physical.a_at(rho), physical.b_at(rho));
            let outcome = synthesize_lti(&a, &b, config.alpha, &opts);
            let design = DesignReport::Lti {
                rho,
                a: from_dmatrix(&a),
                b: from_dmatrix(&b),
            };
            (design, outcome)
        }
        Method::SampledLpv => {
            let domain = config
                .distribution
                .bounds()
                .ok_or_else(|| Error::Config("sampled_lpv needs a bounded distribution".into()))?;
            let samples = match &config.method_options.sample_points {
                Some(points) => points.clone(),
                None => draw_samples(
                    domain,
                    config.sample_count(),
                    &mut ChaCha8Rng::seed_from_u64(config.seed),
                ),
            };
            let outcome = synthesize_sampled_lpv(&physical, domain, &samples, config.alpha, &opts);
            (DesignReport::SampledLpv { samples }, outcome)
        }
    };
    match outcome {
        Ok(result) => Ok(Synthesized {
            report: SynthesisReport::feasible(&result, design, config.seed, &basis),
            result: Some(result),
        }),
        Err(e) => match infeasible_report(config, design, &e) {
            Some(report) => Ok(Synthesized {
                report,
                result: None,
            }),
            None => Err(e),
        },
    }
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn load_report(path: &Path) -> Result<SynthesisReport> {
    let report: SynthesisReport = serde_json::from_str(&fs::read_to_string(path)?)?;
    if report.schema_version != SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "report schema_version {} is not supported",
            report.schema_version
        )));
    }
    Ok(report)
}

pub fn cmd_synthesize(config: &Path, out: Option<&Path>, overrides: &Overrides) -> Result<i32> {
    let config = load_config(config, overrides)?;
    let outcome = synthesize(&config)?;
    let out = out.or(config.output.report.as_deref());
    write_text(out, &to_json(&outcome.report)?)?;
    match &outcome.report.failure {
        None => Ok(EXIT_OK),
        Some(f) => {
            eprintln!("{}", f.message);
            Ok(EXIT_NO_CERTIFICATE)
        }
    }
}

pub fn cmd_verify(
    config: &Path,
    result: &Path,
    out: Option<&Path>,
    overrides: &Overrides,
) -> Result<i32> {
    let config = load_config(config, overrides)?;
    let report = load_report(result)?;
    let basis = PolyBasis::new(report.distribution, report.pc_order)?;
    let plant = config.physical_plant()?.to_stochastic(&basis)?;
    let result = report.to_result(&basis)?;
    let opts = VerifyOptions {
        monte_carlo: Some(config.monte_carlo()),
        ..VerifyOptions::default()
    };
    let ems = verify_ems(&plant, &result, &opts)?;
    let passed = ems.passed;
    let verify = VerifyReport {
        schema_version: SCHEMA_VERSION,
        seed: config.seed,
        ems,
    };
    write_text(out, &to_json(&verify)?)?;
    Ok(if passed { EXIT_OK } else { EXIT_FAILED })
}

fn write_csv_file(path: &Path, rec: &TrajectoryRecord) -> Result<()> {
    rec.write_csv(BufWriter::new(File::create(path)?))
}

pub fn cmd_simulate(
    config: &Path,
    result: &Path,
    out: Option<&Path>,
    overrides: &Overrides,
) -> Result<i32> {
    let config = load_config(config, overrides)?;
    let report = load_report(result)?;
    let basis = PolyBasis::new(report.distribution, report.pc_order)?;
    let Some(cert) = &report.certificate else {
        return Err(Error::Precondition("result carries no controller".into()));
    };
    let gain = cert.gain.to_gain(&basis)?;
    let sim = &config.simulation;
    let x0 = config.x0();
    let label = report.method.label();
    let rec = match sim.model {
        SimModel::VanDerPol => {
            sim::simulate_vdp(&gain, [x0[0], x0[1]], sim.horizon, sim.step, label)?
        }
        SimModel::Linear => {
            let rho = sim.rho.unwrap_or_else(|| config.center());
            let plant = config.physical_plant()?;
            sim::simulate_linear(&plant, rho, &gain, &x0, sim.horizon, sim.step, label)?
        }
    };
    match out.or(config.output.trajectory.as_deref()) {
        Some(path) => {
            write_csv_file(path, &rec)?;
            let summary = SimulationReport {
                schema_version: SCHEMA_VERSION,
                trajectory: TrajectorySummary::of(&rec),
            };
            write_text(None, &to_json(&summary)?)?;
        }
        None => rec.write_csv(io::stdout().lock())?,
    }
    Ok(EXIT_OK)
}

/// Van der Pol study settings.
#[derive(Clone, Debug, PartialEq)]
pub struct VdpStudy {
    pub seed: u64,
    pub alpha: f64,
    pub pc_order: usize,
    pub x0: [f64; 2],
    pub horizon: f64,
    pub step: f64,
}

impl Default for VdpStudy {
    fn default() -> Self {
        VdpStudy {
            seed: 0,
            alpha: 1.0,
            pc_order: 1,
            x0: [5.0, 5.0],
            horizon: 10.0,
            step: 1e-3,
        }
    }
}

pub const VDP_DOMAIN: (f64, f64) = (-24.0, 1.0);
pub const VDP_SAMPLE_COUNTS: [usize; 4] = [2, 5, 10, 50];

pub struct NamedDesign {
    pub name: String,
    pub design: DesignReport,
    pub result: SynthesisResult,
}

impl VdpStudy {
    pub fn basis(&self) -> Result<PolyBasis> {
        let (lo, hi) = VDP_DOMAIN;
        PolyBasis::new(Distribution::Uniform { lo, hi }, self.pc_order)
    }

    /// Synthesizes the LTI design (linearized about the origin, `rho = 1`),
    /// the sampled LPV designs on 2, 5, 10 and 50 draws taken in sequence
    /// from one seeded stream, and the parameter-dependent chaos design.
    ///
    /// An infeasible design is returned as `Err((name, error))`.
    pub fn synthesize(&self) -> std::result::Result<Vec<NamedDesign>, (String, Error)> {
        let opts = SynthesisOptions::default();
        let plant = PhysicalPlant::van_der_pol();
        let mut out = Vec::new();

        let rho = 1.0;
        let (a, b) = (plant.a_at(rho), plant.b_at(rho));
        let result = synthesize_lti(&a, &b, self.alpha, &opts).map_err(|e| ("lti".into(), e))?;
        out.push(NamedDesign {
            name: "lti".into(),
            design: DesignReport::Lti {
                rho,
                a: from_dmatrix(&a),
                b: from_dmatrix(&b),
            },
            result,
        });

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        for count in VDP_SAMPLE_COUNTS {
            let name = format!("lpv_{count}");
            let samples = draw_samples(VDP_DOMAIN, count, &mut rng);
            let result = synthesize_sampled_lpv(&plant, VDP_DOMAIN, &samples, self.alpha, &opts)
                .map_err(|e| (name.clone(), e))?;
            out.push(NamedDesign {
                name,
                design: DesignReport::SampledLpv { samples },
                result,
            });
        }

        let stochastic = self
            .basis()
            .and_then(|b| plant.to_stochastic(&b))
            .map_err(|e| ("pclpv".into(), e))?;
        let result =
            synthesize_theorem2(&stochastic, self.alpha, &opts).map_err(|e| ("pclpv".into(), e))?;
        out.push(NamedDesign {
            name: "pclpv".into(),
            design: DesignReport::Theorem2 {
                order: self.pc_order,
            },
            result,
        });
        Ok(out)
    }
}

fn comparison_csv(rows: &[ControllerSummary]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "controller",
        "method",
        "final_norm",
        "settling_time",
        "cost",
        "scalar_variables",
        "constraint_rows",
        "problem_size",
        "clamped_steps",
    ])?;
    for r in rows {
        let t = &r.trajectory;
        w.write_record([
            r.name.clone(),
            r.method.label().to_string(),
            t.final_norm.to_string(),
            t.settling_time.map(|s| s.to_string()).unwrap_or_default(),
            t.cost.to_string(),
            r.problem_size.scalar_variables.to_string(),
            r.problem_size.constraint_rows.to_string(),
            r.problem_size.total().to_string(),
            t.clamped_steps.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn timings_csv(designs: &[NamedDesign]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["controller", "synthesis_seconds"])?;
    for d in designs {
        w.write_record([d.name.clone(), d.result.solve_seconds.to_string()])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Runs the Van der Pol comparison and writes `<controller>.csv`
/// trajectories, `comparison.csv`, `summary.json` and `timings.csv` (the only
/// run-dependent file) into `out`.
pub fn cmd_reproduce_vdp(out: &Path, study: &VdpStudy) -> Result<i32> {
    let designs = match study.synthesize() {
        Ok(d) => d,
        Err((name, e @ Error::NoCertificate { .. })) => {
            eprintln!("design {name} failed: {e}");
            return Ok(EXIT_NO_CERTIFICATE);
        }
        Err((name, e)) => {
            eprintln!("design {name}:");
            return Err(e);
        }
    };
    fs::create_dir_all(out)?;
    let mut controllers = Vec::new();
    for d in &designs {
        let rec = sim::simulate_vdp(&d.result.gain, study.x0, study.horizon, study.step, &d.name)?;
        write_csv_file(&out.join(format!("{}.csv", d.name)), &rec)?;
        controllers.push(ControllerSummary {
            name: d.name.clone(),
            method: d.result.method(),
            design: d.design.clone(),
            gain: GainReport::from_gain(&d.result.gain),
            residuals: d.result.certificates.clone(),
            margin: d.result.margin,
            problem_size: d.result.problem_size,
            trajectory: TrajectorySummary::of(&rec),
        });
    }
    fs::write(out.join("comparison.csv"), comparison_csv(&controllers)?)?;
    fs::write(out.join("timings.csv"), timings_csv(&designs)?)?;
    let basis = study.basis()?;
    let summary = ReproduceSummary {
        schema_version: SCHEMA_VERSION,
        seed: study.seed,
        alpha: study.alpha,
        pc_order: study.pc_order,
        distribution: basis.distribution(),
        x0: study.x0.to_vec(),
        horizon: study.horizon,
        step: study.step,
        controllers,
    };
    fs::write(out.join("summary.json"), to_json(&summary)?)?;
    Ok(EXIT_OK)
}

/// Solves one JSON request from stdin and writes the solution to stdout.
pub fn cmd_sdp_backend(ellipsoid: bool) -> Result<i32> {
    let mut input = String::new();
    io::stdin().read_to_string(&mut input)?;
    let request: SolveRequest = serde_json::from_str(&input)?;
    let opts = request.options();
    let solution = if ellipsoid {
        EllipsoidSolver.solve(&request.problem, &opts)?
    } else {
        BarrierSolver.solve(&request.problem, &opts)?
    };
    write_text(None, &serde_json::to_string(&solution)?)?;
    Ok(EXIT_OK)
}
