//! Finite-difference acoustic wave modelling on the surface acquisition.

pub(crate) mod domain;
mod scalar;
mod snapshot;
mod staggered;

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use scalar::simulate_scalar;
pub(crate) use scalar::{source_series, ScalarRun};
pub use snapshot::{read_snapshots, write_snapshots, SnapshotHeader};
pub use staggered::{simulate_first_order, FirstOrderRecord};

use crate::geometry::{AcquisitionGeometry, ShotGatherSet, VelocityField};
use crate::{Error, Result};

/// Ricker wavelet `(1 - 2a) exp(-a)` with `a = (pi f0 (t - t0))^2`.
pub fn ricker(t: f64, f0: f64, t0: f64) -> f64 {
    let a = (PI * f0 * (t - t0)).powi(2);
    (1.0 - 2.0 * a) * (-a).exp()
}

/// Point source emitting a Ricker wavelet.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RickerSource {
    /// Central frequency in Hz.
    pub f0: f64,
    /// Delay in seconds.
    pub t0: f64,
    pub amplitude: f64,
    /// Horizontal position in metres.
    pub x: f64,
    /// Depth in metres.
    pub depth: f64,
}

impl Default for RickerSource {
    fn default() -> Self {
        Self::new(25.0)
    }
}

impl RickerSource {
    /// Unit-amplitude source at the origin with delay `1 / f0`.
    pub fn new(f0: f64) -> Self {
        Self { f0, t0: 1.0 / f0, amplitude: 1.0, x: 0.0, depth: 0.0 }
    }

    pub fn at(self, x: f64, depth: f64) -> Self {
        Self { x, depth, ..self }
    }

    pub fn with_amplitude(self, amplitude: f64) -> Self {
        Self { amplitude, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f0 > 0.0 && self.f0.is_finite()) || !(self.t0 >= 0.0) || !self.amplitude.is_finite() {
            return Err(Error::InvalidArgument(format!("bad Ricker source: f0={} t0={} amplitude={}", self.f0, self.t0, self.amplitude)));
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> f64 {
        self.amplitude * ricker(t, self.f0, self.t0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    SecondOrderScalar,
    FirstOrderStaggered,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    AbsorbingSponge,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub scheme: Scheme,
    /// Spatial accuracy order, 2 or 4.
    pub space_order: usize,
    pub boundary: Boundary,
    /// Sponge thickness in cells.
    pub sponge_width: usize,
    /// Cerjan coefficient: damping `exp(-(strength * d)^2)` at `d` cells in.
    pub sponge_strength: f64,
    /// Density in kg/m^3 (first-order scheme only).
    pub density: f64,
    /// Reflecting pressure-free top boundary instead of a sponge.
    pub free_surface: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::SecondOrderScalar,
            space_order: 4,
            boundary: Boundary::AbsorbingSponge,
            sponge_width: 20,
            sponge_strength: 0.0053,
            density: 1.0,
            free_surface: true,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.space_order != 2 && self.space_order != 4 {
            return Err(Error::InvalidArgument(format!("space_order must be 2 or 4, got {}", self.space_order)));
        }
        if !(self.sponge_strength >= 0.0 && self.sponge_strength.is_finite()) {
            return Err(Error::InvalidArgument("sponge_strength must be finite and non-negative".into()));
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(Error::InvalidArgument("density must be positive".into()));
        }
        Ok(())
    }

    /// Stability constant `lambda`: the explicit leapfrog is stable iff
    /// `c dt sqrt(lambda (1/dx^2 + 1/dy^2)) <= 2`.
    fn stencil_constant(&self) -> f64 {
        match (self.scheme, self.space_order) {
            (Scheme::SecondOrderScalar, 2) | (Scheme::FirstOrderStaggered, 2) => 4.0,
            (Scheme::SecondOrderScalar, _) => 16.0 / 3.0,
            (Scheme::FirstOrderStaggered, _) => 4.0 * (7.0f64 / 6.0).powi(2),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CflReport {
    pub stable: bool,
    pub dt_max: f64,
}

/// Largest stable time step for `field` under `config`.
pub fn check_cfl(field: &VelocityField, dt: f64, config: &SimulationConfig) -> CflReport {
    let g = field.grid();
    let c = field.max() as f64;
    let inv = 1.0 / (g.dx() * g.dx()) + 1.0 / (g.dy() * g.dy());
    let dt_max = 2.0 / (c * (config.stencil_constant() * inv).sqrt());
    CflReport { stable: dt <= dt_max, dt_max }
}

pub(crate) fn ensure_stable(field: &VelocityField, dt: f64, config: &SimulationConfig) -> Result<()> {
    config.validate()?;
    let report = check_cfl(field, dt, config);
    if !report.stable {
        return Err(Error::Cfl { dt, dt_max: report.dt_max });
    }
    Ok(())
}

/// Pressure snapshots `[time][depth][horizontal]` of the physical grid.
#[derive(Clone, Debug, PartialEq)]
pub struct WavefieldMovie {
    pub stride: usize,
    pub ny: usize,
    pub nx: usize,
    pub snapshots: Vec<f32>,
}

impl WavefieldMovie {
    pub fn n_frames(&self) -> usize {
        self.snapshots.len() / (self.ny * self.nx)
    }

    pub fn frame(&self, k: usize) -> &[f32] {
        let n = self.ny * self.nx;
        &self.snapshots[k * n..(k + 1) * n]
    }
}

/// Runs one scalar simulation per source position in `geometry`; the
/// template's position is replaced by each source's `(x, 0)`.
pub fn simulate_all_shots(
    field: &VelocityField,
    geometry: &AcquisitionGeometry,
    source_template: &RickerSource,
    config: &SimulationConfig,
) -> Result<ShotGatherSet> {
    geometry.validate()?;
    ensure_stable(field, geometry.dt, config)?;
    let shots: Vec<Vec<f32>> = geometry
        .source_positions
        .par_iter()
        .enumerate()
        .map(|(shot, &x)| {
            let src = source_template.at(x, source_template.depth);
            simulate_scalar(field, geometry, &src, config, None)
                .map(|(g, _)| g.into_data())
                .map_err(|e| Error::Shot { shot, source: Box::new(e) })
        })
        .collect::<Result<_>>()?;
    ShotGatherSet::new(geometry.clone(), shots.concat())
}
