//! Adjoint-state full-waveform inversion on the scalar solver, and the
//! hybrid workflow seeding it with a DeepONet prediction.
//!
//! The gradient is the exact adjoint of the discrete time stepping, so it
//! matches finite differences of the discrete misfit up to roundoff.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::evaluation::relative_l2;
use crate::geometry::{Grid2D, Raw, ShotGatherSet, VelocityField};
use crate::npy::write_atomic;
use crate::training::TrainedModel;
use crate::wave::{source_series, RickerSource, ScalarRun, SimulationConfig};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LineSearch {
    /// Sufficient-decrease constant.
    pub c: f64,
    pub shrink: f64,
    pub max_tries: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self { c: 1e-4, shrink: 0.5, max_tries: 10 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Misfit {
    #[default]
    LeastSquares,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FwiConfig {
    pub max_iters: usize,
    /// Largest model change of the first trial step, in m/s.
    pub step_init: f64,
    pub line_search: LineSearch,
    pub v_min: f32,
    pub v_max: f32,
    /// Gaussian smoothing of the gradient in cells; 0 disables it.
    pub gradient_smoothing_sigma: f64,
    pub misfit: Misfit,
    /// Speed of the homogeneous baseline start.
    pub homogeneous_speed: f32,
    /// Stop when the misfit fell by less than `stall_tolerance` (relative)
    /// over the last `stall_window` iterations.
    pub stall_window: usize,
    pub stall_tolerance: f64,
}

impl Default for FwiConfig {
    fn default() -> Self {
        Self {
            max_iters: 30,
            step_init: 100.0,
            line_search: LineSearch::default(),
            v_min: 1500.0,
            v_max: 4500.0,
            gradient_smoothing_sigma: 1.0,
            misfit: Misfit::LeastSquares,
            homogeneous_speed: 3000.0,
            stall_window: 5,
            stall_tolerance: 1e-4,
        }
    }
}

impl FwiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_min < self.v_max) {
            return Err(Error::InvalidArgument(format!("v_min {} must be below v_max {}", self.v_min, self.v_max)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        let ls = &self.line_search;
        if !(self.step_init > 0.0) || !(ls.shrink > 0.0 && ls.shrink < 1.0) || ls.max_tries == 0 || !(ls.c >= 0.0 && ls.c < 1.0) {
            return Err(Error::InvalidArgument("bad step or line-search settings".into()));
        }
        if !(self.gradient_smoothing_sigma >= 0.0) {
            return Err(Error::InvalidArgument("smoothing sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Observed data with the source and solver settings that model it.
#[derive(Clone, Debug)]
pub struct FwiProblem {
    pub observed: ShotGatherSet<Raw>,
    /// Wavelet template; shot `k` fires at `geometry.source_positions[k]`.
    pub source: RickerSource,
    pub simulation: SimulationConfig,
}

impl FwiProblem {
    fn shot_source(&self, shot: usize) -> RickerSource {
        let x = self.observed.geometry().source_positions[shot];
        self.source.at(x, self.source.depth)
    }

    fn shot_run(&self, model: &VelocityField, shot: usize) -> Result<(ScalarRun, Vec<f32>)> {
        let geo = self.observed.geometry();
        let src = self.shot_source(shot);
        let run = ScalarRun::new(model, geo, &src, &self.simulation)?;
        let series = source_series(&src, model, geo.dt, geo.nt);
        Ok((run, series))
    }
}

fn shot_misfit(traces: &[f32], observed: &[f32]) -> f64 {
    0.5 * traces.iter().zip(observed).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>()
}

/// `J = 1/2 sum (d_sim - d_obs)^2` over shots, receivers and time.
pub fn misfit(model: &VelocityField, problem: &FwiProblem) -> Result<f64> {
    let n = problem.observed.geometry().n_sources();
    let parts: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|shot| {
            let (run, series) = problem.shot_run(model, shot).map_err(|e| Error::Shot { shot, source: Box::new(e) })?;
            let traces = run.forward(&series, |_, _| {}).map_err(|e| Error::Shot { shot, source: Box::new(e) })?;
            Ok(shot_misfit(&traces, problem.observed.shot(shot)))
        })
        .collect::<Result<_>>()?;
    Ok(parts.iter().sum())
}

/// Misfit and its gradient with respect to the speed of every grid node,
/// `[depth][x]`, before any smoothing.
pub fn misfit_and_gradient(model: &VelocityField, problem: &FwiProblem) -> Result<(f64, Vec<f64>)> {
    let n = problem.observed.geometry().n_sources();
    let parts: Vec<(f64, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|shot| shot_gradient(model, problem, shot).map_err(|e| Error::Shot { shot, source: Box::new(e) }))
        .collect::<Result<_>>()?;
    let mut grad = vec![0.0; model.grid().len()];
    let mut total = 0.0;
    for (j, g) in parts {
        total += j;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((total, grad))
}

/// Gradient of the misfit, smoothed when `sigma > 0`.
pub fn gradient(model: &VelocityField, problem: &FwiProblem, sigma: f64) -> Result<Vec<f64>> {
    let (_, g) = misfit_and_gradient(model, problem)?;
    Ok(smooth_gradient(&g, model.grid(), sigma))
}

fn shot_gradient(model: &VelocityField, problem: &FwiProblem, shot: usize) -> Result<(f64, Vec<f64>)> {
    let (run, series) = problem.shot_run(model, shot)?;
    let d = &run.domain;
    let nt = run.nt;
    let len = d.len();
    let mut frames = Vec::with_capacity(nt * len);
    let traces = run.forward(&series, |_, u| frames.extend_from_slice(u))?;
    let observed = problem.observed.shot(shot);
    let j = shot_misfit(&traces, observed);
    let residual: Vec<f32> = traces.iter().zip(observed).map(|(a, b)| a - b).collect();

    // lambda_n = R^T r_n + 2 g lambda_{n+1} + L(m g lambda_{n+1}) - g^2 lambda_{n+2}
    // dJ/dm += lambda_n g (L u_{n-1} + delta_s s_{n-1})
    let (g, m) = (&d.damp, &run.mdt2);
    let mut l1 = vec![0.0f32; len];
    let mut l2 = vec![0.0f32; len];
    let mut lam = vec![0.0f32; len];
    let mut mg_l1 = vec![0.0f32; len];
    let mut dj_dm = vec![0.0f64; len];
    for n in (1..nt).rev() {
        for i in d.interior() {
            mg_l1[i] = m[i] * g[i] * l1[i];
        }
        d.for_each_laplacian(&mg_l1, |i, lap| {
            lam[i] = 2.0 * g[i] * l1[i] + lap - g[i] * g[i] * l2[i];
        });
        for (r, &i) in run.receiver_indices.iter().enumerate() {
            lam[i] += residual[r * nt + n];
        }
        let u_prev = &frames[(n - 1) * len..n * len];
        d.for_each_laplacian(u_prev, |i, lap| {
            dj_dm[i] += (lam[i] * g[i] * lap) as f64;
        });
        let s = run.source_index;
        dj_dm[s] += (lam[s] * g[s] * series[n - 1]) as f64;
        std::mem::swap(&mut l2, &mut l1);
        std::mem::swap(&mut l1, &mut lam);
    }
    if !dj_dm.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { context: "adjoint wavefield".into(), step: 0 });
    }

    // m = c^2 dt^2, so dJ/dc = 2 c dt^2 dJ/dm; padded cells fold back onto
    // the physical node whose speed they copy.
    let dt2 = problem.observed.geometry().dt.powi(2);
    let mut grad = vec![0.0; model.grid().len()];
    for iz in 0..d.nz {
        for ix in 0..d.nx {
            let i = d.idx(iz, ix);
            grad[d.source_cell(iz, ix)] += 2.0 * d.vel[i] as f64 * dt2 * dj_dm[i];
        }
    }
    Ok((j, grad))
}

/// Separable Gaussian smoothing with edge renormalization.
pub fn smooth_gradient(g: &[f64], grid: &Grid2D, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return g.to_vec();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let w: Vec<f64> = (-r..=r).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let (ny, nx) = (grid.ny as isize, grid.nx as isize);
    let pass = |src: &[f64], along_x: bool| {
        let mut out = vec![0.0; src.len()];
        for y in 0..ny {
            for x in 0..nx {
                let (mut acc, mut norm) = (0.0, 0.0);
                for (k, wk) in (-r..=r).zip(&w) {
                    let (yy, xx) = if along_x { (y, x + k) } else { (y + k, x) };
                    if (0..ny).contains(&yy) && (0..nx).contains(&xx) {
                        acc += wk * src[(yy * nx + xx) as usize];
                        norm += wk;
                    }
                }
                out[(y * nx + x) as usize] = acc / norm;
            }
        }
        out
    };
    pass(&pass(g, true), false)
}

/// Elementwise clamp to `[lo, hi]`.
pub fn clamp_model(model: &VelocityField, lo: f32, hi: f32) -> VelocityField {
    model.clamped(lo, hi)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub misfit: f64,
    pub rel_l2_vs_truth: Option<f64>,
    /// Largest model change of the accepted step, m/s (0 for the start).
    pub step_size: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIters,
    ZeroGradient,
    Stalled,
    LineSearchFailed,
}

#[derive(Clone, Debug)]
pub struct FwiState {
    pub model: VelocityField,
    /// Accepted iterations.
    pub iteration: usize,
    pub misfit_history: Vec<f64>,
    pub gradient: Vec<f64>,
    pub records: Vec<IterationRecord>,
    pub stop: StopReason,
}

/// Steepest descent with backtracking and a box clamp. `truth`, when given,
/// adds the relative model error to every record.
pub fn invert(initial: &VelocityField, problem: &FwiProblem, config: &FwiConfig, truth: Option<&VelocityField>) -> Result<FwiState> {
    config.validate()?;
    let (lo, hi) = (config.v_min, config.v_max);
    if initial.values().iter().any(|v| !(lo..=hi).contains(v)) {
        return Err(Error::InvalidArgument(format!("initial model leaves [{lo}, {hi}]")));
    }
    let score = |m: &VelocityField| truth.map(|t| relative_l2(t, m)).transpose();
    let mut model = initial.clone();
    let (mut j, raw) = misfit_and_gradient(&model, problem)?;
    let mut grad = smooth_gradient(&raw, model.grid(), config.gradient_smoothing_sigma);
    let mut history = vec![j];
    let mut records = vec![IterationRecord { iter: 0, misfit: j, rel_l2_vs_truth: score(&model)?, step_size: 0.0 }];
    let mut step = config.step_init;
    let mut stop = StopReason::MaxIters;
    let mut iteration = 0;
    while iteration < config.max_iters {
        let gmax = grad.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if j == 0.0 || gmax == 0.0 {
            stop = StopReason::ZeroGradient;
            break;
        }
        let mut accepted = None;
        let mut alpha = step;
        for _ in 0..config.line_search.max_tries {
            let trial: Vec<f32> = model
                .values()
                .iter()
                .zip(&grad)
                .map(|(&c, &g)| (c as f64 - alpha * g / gmax).clamp(lo as f64, hi as f64) as f32)
                .collect();
            let trial = VelocityField::new(*model.grid(), trial)?;
            let decrease: f64 = trial.values().iter().zip(model.values()).zip(&grad).map(|((&a, &b), &g)| g * (a as f64 - b as f64)).sum();
            let jt = misfit(&trial, problem)?;
            if jt < j && jt <= j + config.line_search.c * decrease {
                accepted = Some((trial, jt, alpha));
                break;
            }
            alpha *= config.line_search.shrink;
        }
        let Some((trial, jt, alpha)) = accepted else {
            stop = StopReason::LineSearchFailed;
            break;
        };
        let moved = trial.values().iter().zip(model.values()).fold(0.0f64, |a, (x, y)| a.max((x - y).abs() as f64));
        model = trial;
        iteration += 1;
        // Next trial starts a little beyond the last accepted step.
        step = (alpha * 2.0).min(config.step_init);
        let (jn, raw) = misfit_and_gradient(&model, problem)?;
        debug_assert!((jn - jt).abs() <= 1e-9 * jt.max(1.0));
        j = jn;
        grad = smooth_gradient(&raw, model.grid(), config.gradient_smoothing_sigma);
        history.push(j);
        records.push(IterationRecord { iter: iteration, misfit: j, rel_l2_vs_truth: score(&model)?, step_size: moved });
        tracing::debug!(iteration, misfit = j, step = moved, "fwi step");
        let w = config.stall_window;
        if w > 0 && history.len() > w {
            let old = history[history.len() - 1 - w];
            if (old - j) / old < config.stall_tolerance {
                stop = StopReason::Stalled;
                break;
            }
        }
    }
    Ok(FwiState { model, iteration, misfit_history: history, gradient: grad, records, stop })
}

/// Trajectory CSV `iter,misfit,rel_l2_vs_truth,step_size`; the error column
/// is empty without a reference model.
pub fn trajectory_csv(records: &[IterationRecord]) -> String {
    let mut out = String::from("iter,misfit,rel_l2_vs_truth,step_size\n");
    for r in records {
        let rel = r.rel_l2_vs_truth.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{}", r.iter, r.misfit, rel, r.step_size);
    }
    out
}

pub fn write_trajectory(records: &[IterationRecord], path: &Path) -> Result<()> {
    write_atomic(path, trajectory_csv(records).as_bytes())
}

#[derive(Clone, Debug)]
pub struct HybridResult {
    pub informed_start: VelocityField,
    pub informed: FwiState,
    pub homogeneous: FwiState,
}

/// FWI from the DeepONet prediction and from a homogeneous model, with the
/// same data and settings.
pub fn hybrid_run(
    trained: &TrainedModel,
    problem: &FwiProblem,
    grid: &Grid2D,
    config: &FwiConfig,
    truth: Option<&VelocityField>,
) -> Result<HybridResult> {
    let predicted = trained.predict_gather(problem.observed.clone(), grid, None)?;
    let informed_start = predicted.clamped(config.v_min, config.v_max);
    let homogeneous_start = VelocityField::constant(*grid, config.homogeneous_speed)?;
    let informed = invert(&informed_start, problem, config, truth)?;
    let homogeneous = invert(&homogeneous_start, problem, config, truth)?;
    Ok(HybridResult { informed_start, informed, homogeneous })
}
