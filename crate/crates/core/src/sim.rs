//! Fixed-step RK4 simulation: the nonlinear Van der Pol loop, Monte Carlo
//! mean-square estimates over sampled linear plants, and deterministic
//! propagation of the chaos-expanded state.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::Family;
use crate::error::{Error, Result};
use crate::galerkin::{self, PhysicalPlant, StochasticPlant};
use crate::synthesis::{ControllerGain, GainExpansion};

/// States with any component beyond this magnitude count as diverged.
pub const DIVERGENCE_BOUND: f64 = 1e6;

/// Mean-square values at or below this are left out of the decay fit.
pub const FIT_FLOOR: f64 = 1e-8;

/// Largest fraction of Monte Carlo samples that may diverge and be dropped.
pub const MAX_DIVERGENT_FRACTION: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub integrator: String,
    pub step: f64,
    pub controller: String,
    /// Step boundaries at which the scheduling value was saturated.
    pub clamped_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub scheduling: Vec<f64>,
    pub metadata: TrajectoryMeta,
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn final_norm(&self) -> f64 {
        norm_sq(self.final_state()).sqrt()
    }

    /// `∫ (|x|^2 + |u|^2) dt` by the trapezoidal rule.
    pub fn cost(&self) -> f64 {
        let integrand: Vec<f64> = self
            .states
            .iter()
            .zip(&self.controls)
            .map(|(x, u)| norm_sq(x) + norm_sq(u))
            .collect();
        self.times
            .windows(2)
            .zip(integrand.windows(2))
            .map(|(t, f)| 0.5 * (t[1] - t[0]) * (f[0] + f[1]))
            .sum()
    }

    /// First time after which `|x|` stays within `fraction * |x(0)|`.
    pub fn settling_time(&self, fraction: f64) -> Option<f64> {
        let bound = fraction * norm_sq(self.states.first()?).sqrt();
        let last_outside = self.states.iter().rposition(|x| norm_sq(x).sqrt() > bound);
        match last_outside {
            None => Some(self.times[0]),
            Some(i) if i + 1 < self.len() => Some(self.times[i + 1]),
            Some(_) => None,
        }
    }

    /// Columns `t, x1..xn, u (or u1..um), rho`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.states.first().map_or(0, Vec::len);
        let m = self.controls.first().map_or(0, Vec::len);
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        if m == 1 {
            header.push("u".into());
        } else {
            header.extend((1..=m).map(|i| format!("u{i}")));
        }
        header.push("rho".into());
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![self.times[k].to_string()];
            row.extend(self.states[k].iter().map(f64::to_string));
            row.extend(self.controls[k].iter().map(f64::to_string));
            row.push(self.scheduling[k].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn step_count(horizon: f64, step: f64) -> Result<usize> {
    if !(step > 0.0 && horizon > step && horizon.is_finite()) {
        return Err(Error::Precondition(format!(
            "need 0 < h < T, got h = {step}, T = {horizon}"
        )));
    }
    Ok((horizon / step).round() as usize)
}

/// One classic RK4 step of `xdot = a x` written as a matrix:
/// `I + ha + (ha)^2/2 + (ha)^3/6 + (ha)^4/24`.
pub fn rk4_step_matrix(a: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    let ha = a * h;
    let mut term = DMatrix::identity(a.nrows(), a.ncols());
    let mut out = term.clone();
    for k in 1..=4 {
        term = &term * &ha / k as f64;
        out += &term;
    }
    out
}

fn vdp_field(x: [f64; 2], u: f64) -> [f64; 2] {
    [x[1], -x[0] + (1.0 - x[0] * x[0]) * x[1] + u]
}

fn feedback(gain: &ControllerGain, x: [f64; 2]) -> Result<(f64, f64, bool)> {
    let rho = 1.0 - x[0] * x[0];
    let g = gain.evaluate(rho)?;
    Ok((g.k[(0, 0)] * x[0] + g.k[(0, 1)] * x[1], rho, g.clamped))
}

/// Controlled Van der Pol oscillator `x1' = x2`,
/// `x2' = -x1 + (1 - x1^2) x2 + u`, `u = K(rho) x`, `rho = 1 - x1^2`, with
/// the gain re-evaluated at every RK4 stage.
pub fn simulate_vdp(
    gain: &ControllerGain,
    x0: [f64; 2],
    horizon: f64,
    step: f64,
    controller: &str,
) -> Result<TrajectoryRecord> {
    if gain.shape() != (1, 2) {
        return Err(Error::DimensionMismatch(format!(
            "Van der Pol needs a 1x2 gain, got {:?}",
            gain.shape()
        )));
    }
    let steps = step_count(horizon, step)?;
    let mut rec = TrajectoryRecord {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        controls: Vec::with_capacity(steps + 1),
        scheduling: Vec::with_capacity(steps + 1),
        metadata: TrajectoryMeta {
            integrator: "rk4".into(),
            step,
            controller: controller.into(),
            clamped_steps: 0,
        },
    };
    let mut x = x0;
    let stage = |x: [f64; 2]| -> Result<[f64; 2]> { Ok(vdp_field(x, feedback(gain, x)?.0)) };
    let shift = |x: [f64; 2], k: [f64; 2], s: f64| [x[0] + s * k[0], x[1] + s * k[1]];
    for i in 0..=steps {
        let t = i as f64 * step;
        if x.iter().any(|v| !(v.abs() <= DIVERGENCE_BOUND)) {
            return Err(Error::NonFinite { time: t });
        }
        let (u, rho, clamped) = feedback(gain, x)?;
        rec.times.push(t);
        rec.states.push(x.to_vec());
        rec.controls.push(vec![u]);
        rec.scheduling.push(rho);
        rec.metadata.clamped_steps += clamped as usize;
        if i == steps {
            break;
        }
        let k1 = vdp_field(x, u);
        let k2 = stage(shift(x, k1, 0.5 * step))?;
        let k3 = stage(shift(x, k2, 0.5 * step))?;
        let k4 = stage(shift(x, k3, step))?;
        for j in 0..2 {
            x[j] += step / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
    Ok(rec)
}

/// Linear plant frozen at `rho` under `u = K(rho) x`.
pub fn simulate_linear(
    plant: &PhysicalPlant,
    rho: f64,
    gain: &ControllerGain,
    x0: &[f64],
    horizon: f64,
    step: f64,
    controller: &str,
) -> Result<TrajectoryRecord> {
    let (n, m) = (plant.n(), plant.m());
    if gain.shape() != (m, n) || x0.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "plant is {n} states / {m} inputs, gain is {:?}, x0 has {}",
            gain.shape(),
            x0.len()
        )));
    }
    let steps = step_count(horizon, step)?;
    let g = gain.evaluate(rho)?;
    let closed = plant.a_at(rho) + plant.b_at(rho) * &g.k;
    let phi = rk4_step_matrix(&closed, step);
    let mut rec = TrajectoryRecord {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        controls: Vec::with_capacity(steps + 1),
        scheduling: Vec::with_capacity(steps + 1),
        metadata: TrajectoryMeta {
            integrator: "rk4".into(),
            step,
            controller: controller.into(),
            clamped_steps: 0,
        },
    };
    let mut x = DVector::from_column_slice(x0);
    for i in 0..=steps {
        let t = i as f64 * step;
        if x.iter().any(|v| !(v.abs() <= DIVERGENCE_BOUND)) {
            return Err(Error::NonFinite { time: t });
        }
        rec.times.push(t);
        rec.states.push(x.iter().copied().collect());
        rec.controls.push((&g.k * &x).iter().copied().collect());
        rec.scheduling.push(rho);
        rec.metadata.clamped_steps += g.clamped as usize;
        x = &phi * x;
    }
    Ok(rec)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MsEstimate {
    pub times: Vec<f64>,
    /// Sample mean of `|x(t)|^2`.
    pub ms_values: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Negated least-squares slope of `ln E|x|^2` over the window above the fit floor.
    pub fitted_decay_rate: f64,
    /// Samples contributing to the estimate.
    pub sample_count: usize,
    /// Samples dropped for diverging.
    pub diverged: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonteCarloOptions {
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub step: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for MonteCarloOptions {
    fn default() -> Self {
        MonteCarloOptions {
            x0: vec![5.0, 5.0],
            horizon: 10.0,
            step: 1e-3,
            samples: 2000,
            seed: 0,
        }
    }
}

fn draw_standard(family: Family, rng: &mut ChaCha8Rng) -> f64 {
    match family {
        Family::Legendre => rng.random_range(-1.0..1.0),
        Family::Hermite => rng.sample(StandardNormal),
    }
}

/// Least-squares slope of `ln y` against `t`, using points with `y > floor`.
pub fn fit_log_slope(times: &[f64], values: &[f64], floor: f64) -> f64 {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(_, &v)| v > floor)
        .map(|(&t, &v)| (t, v.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    sxy / sxx
}

/// Monte Carlo estimate of `E|x(t)|^2` for the linear closed loop
/// `xdot = (A(xi) + B(xi) K(rho(xi))) x` with `xi` drawn from the plant's
/// distribution.
pub fn mc_ms_decay(
    plant: &StochasticPlant,
    gain: &ControllerGain,
    opts: &MonteCarloOptions,
) -> Result<MsEstimate> {
    if opts.samples < 100 {
        return Err(Error::Precondition(format!(
            "Monte Carlo needs at least 100 samples, got {}",
            opts.samples
        )));
    }
    let n = plant.n();
    if opts.x0.len() != n || gain.shape() != (plant.m(), n) {
        return Err(Error::DimensionMismatch(format!(
            "x0 has {} entries and gain is {:?} for a plant with n = {n}, m = {}",
            opts.x0.len(),
            gain.shape(),
            plant.m()
        )));
    }
    let steps = step_count(opts.horizon, opts.step)?;
    let basis = plant.basis();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let draws: Vec<f64> = (0..opts.samples)
        .map(|_| draw_standard(basis.family(), &mut rng))
        .collect();

    let x0 = DVector::from_column_slice(&opts.x0);
    // Welford accumulators, reduced in draw order
    let mut mean = vec![0.0; steps + 1];
    let mut m2 = vec![0.0; steps + 1];
    let mut count = 0usize;
    let mut trace = vec![0.0; steps + 1];
    let mut diverged = 0;
    for &xi in &draws {
        let rho = basis.standardizer().to_physical(xi);
        let k = gain.evaluate(rho)?.k;
        let closed = plant.a().eval(xi) + plant.b().eval(xi) * k;
        let step = rk4_step_matrix(&closed, opts.step);
        let mut x = x0.clone();
        let mut ok = true;
        for slot in trace.iter_mut() {
            let v = x.norm_squared();
            if !(v.sqrt() <= DIVERGENCE_BOUND) {
                ok = false;
                break;
            }
            *slot = v;
            x = &step * x;
        }
        if !ok {
            diverged += 1;
            continue;
        }
        count += 1;
        let cf = count as f64;
        for (i, &v) in trace.iter().enumerate() {
            let delta = v - mean[i];
            mean[i] += delta / cf;
            m2[i] += delta * (v - mean[i]);
        }
    }
    if diverged > 0 && diverged as f64 >= MAX_DIVERGENT_FRACTION * opts.samples as f64 {
        return Err(Error::TooManyDivergent {
            failed: diverged,
            total: opts.samples,
        });
    }

    let cf = count as f64;
    let stderr = m2.iter().map(|v| (v / (cf - 1.0) / cf).sqrt()).collect();
    let ms_values = mean;
    let times: Vec<f64> = (0..=steps).map(|i| i as f64 * opts.step).collect();
    let fitted_decay_rate = -fit_log_slope(&times, &ms_values, FIT_FLOOR);
    Ok(MsEstimate {
        times,
        ms_values,
        stderr,
        fitted_decay_rate,
        sample_count: count,
        diverged,
        seed: opts.seed,
    })
}

/// Trajectory of the expanded deterministic state.
#[derive(Clone, Debug, PartialEq)]
pub struct PcTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// `x_pc^T G x_pc = E|x|^2` under the expansion.
    pub second_moment: Vec<f64>,
    /// Number of chaos modes `N + 1`.
    pub modes: usize,
}

impl PcTrajectory {
    /// Mean state, the mode-0 block.
    pub fn mean(&self, index: usize) -> DVector<f64> {
        let n = self.states[index].len() / self.modes;
        self.states[index].rows(0, n).into_owned()
    }
}

/// Integrates `x_pc' = G^{-1}(GA + GB (I ⊗ V_K)) x_pc` from `[x0; 0; ...; 0]`.
pub fn pc_propagate(
    plant: &StochasticPlant,
    gain: &GainExpansion,
    x0: &[f64],
    horizon: f64,
    step: f64,
) -> Result<PcTrajectory> {
    if !gain.basis().same_expansion(plant.basis()) {
        return Err(Error::BasisMismatch(
            "gain and plant use different chaos expansions".into(),
        ));
    }
    if x0.len() != plant.n() {
        return Err(Error::DimensionMismatch(format!(
            "x0 has {} entries, plant has n = {}",
            x0.len(),
            plant.n()
        )));
    }
    let steps = step_count(horizon, step)?;
    let proj = galerkin::project(plant)?;
    let closed = galerkin::closed_loop_dynamics(&proj, gain.vk())?;
    let m = rk4_step_matrix(&closed, step);
    let mut x = DVector::zeros(closed.nrows());
    x.rows_mut(0, x0.len()).copy_from_slice(x0);
    let mut traj = PcTrajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        second_moment: Vec::with_capacity(steps + 1),
        modes: proj.terms(),
    };
    for i in 0..=steps {
        let t = i as f64 * step;
        if x.iter().any(|v| !(v.abs() <= DIVERGENCE_BOUND)) {
            return Err(Error::NonFinite { time: t });
        }
        traj.times.push(t);
        traj.second_moment.push(x.dot(&(&proj.g * &x)));
        traj.states.push(x.clone());
        x = &m * x;
    }
    Ok(traj)
}
