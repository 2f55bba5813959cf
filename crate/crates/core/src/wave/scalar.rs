//! Second-order-in-time scalar wave equation with a Cerjan sponge.

use super::domain::Domain;
use super::{ensure_stable, RickerSource, SimulationConfig, WavefieldMovie};
use crate::geometry::{AcquisitionGeometry, ShotGatherSet, VelocityField};
use crate::{Error, Result};

const FINITE_CHECK_EVERY: usize = 32;

/// Everything needed to step the discrete scalar system, shared with the
/// adjoint solver in `fwi`.
#[derive(Clone, Debug)]
pub(crate) struct ScalarRun {
    pub domain: Domain,
    /// `(c dt)^2` per cell, halo'd layout.
    pub mdt2: Vec<f32>,
    pub source_index: usize,
    pub receiver_indices: Vec<usize>,
    pub nt: usize,
}

impl ScalarRun {
    pub fn new(field: &VelocityField, geometry: &AcquisitionGeometry, source: &RickerSource, config: &SimulationConfig) -> Result<Self> {
        geometry.validate()?;
        source.validate()?;
        ensure_stable(field, geometry.dt, config)?;
        let domain = Domain::new(field, config);
        let dt2 = (geometry.dt * geometry.dt) as f32;
        let mdt2 = domain.vel.iter().map(|c| c * c * dt2).collect();
        let (sz, sx) = domain
            .nearest_node(source.x, source.depth)
            .ok_or_else(|| Error::InvalidArgument(format!("source at ({}, {}) is outside the grid", source.x, source.depth)))?;
        let receiver_indices = geometry
            .receiver_positions
            .iter()
            .map(|&x| {
                domain
                    .nearest_node(x, 0.0)
                    .map(|(z, x)| domain.phys_idx(z, x))
                    .ok_or_else(|| Error::InvalidArgument(format!("receiver at x = {x} is outside the grid")))
            })
            .collect::<Result<_>>()?;
        Ok(Self { source_index: domain.phys_idx(sz, sx), domain, mdt2, receiver_indices, nt: geometry.nt })
    }

    /// Forward run; `observe(n, u_n)` sees every state from `u_0 = 0` up to
    /// `u_{nt-1}`. Returns traces `[receiver][time]`.
    pub fn forward(&self, source: &[f32], mut observe: impl FnMut(usize, &[f32])) -> Result<Vec<f32>> {
        let d = &self.domain;
        let nt = self.nt;
        let nr = self.receiver_indices.len();
        let mut traces = vec![0.0f32; nr * nt];
        let mut prev = vec![0.0f32; d.len()];
        let mut cur = vec![0.0f32; d.len()];
        let mut next = vec![0.0f32; d.len()];
        for n in 0..nt {
            for (r, &i) in self.receiver_indices.iter().enumerate() {
                traces[r * nt + n] = cur[i];
            }
            observe(n, &cur);
            if n % FINITE_CHECK_EVERY == 0 && !cur.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { context: "scalar wavefield".into(), step: n });
            }
            if n + 1 == nt {
                break;
            }
            let (g, m) = (&d.damp, &self.mdt2);
            d.for_each_laplacian(&cur, |i, lap| {
                next[i] = g[i] * (2.0 * cur[i] - g[i] * prev[i] + m[i] * lap);
            });
            let s = self.source_index;
            next[s] += g[s] * m[s] * source[n];
            std::mem::swap(&mut prev, &mut cur);
            std::mem::swap(&mut cur, &mut next);
        }
        if !traces.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { context: "scalar wavefield".into(), step: nt - 1 });
        }
        Ok(traces)
    }
}

/// Source samples `s_n = amplitude * ricker(n dt) / (dx dy)`.
pub(crate) fn source_series(source: &RickerSource, field: &VelocityField, dt: f64, nt: usize) -> Vec<f32> {
    let g = field.grid();
    let scale = 1.0 / (g.dx() * g.dy());
    (0..nt).map(|n| (source.value(n as f64 * dt) * scale) as f32).collect()
}

/// Simulates one shot, returning a single-source gather and, when
/// `movie_stride` is set, every `stride`-th physical pressure snapshot.
pub fn simulate_scalar(
    field: &VelocityField,
    geometry: &AcquisitionGeometry,
    source: &RickerSource,
    config: &SimulationConfig,
    movie_stride: Option<usize>,
) -> Result<(ShotGatherSet, Option<WavefieldMovie>)> {
    if movie_stride == Some(0) {
        return Err(Error::InvalidArgument("movie stride must be at least 1".into()));
    }
    let run = ScalarRun::new(field, geometry, source, config)?;
    let series = source_series(source, field, geometry.dt, geometry.nt);
    let grid = *field.grid();
    let mut movie = movie_stride.map(|stride| WavefieldMovie {
        stride,
        ny: grid.ny,
        nx: grid.nx,
        snapshots: Vec::with_capacity((geometry.nt / stride) * grid.len()),
    });
    let n_frames = movie_stride.map_or(0, |s| geometry.nt / s);
    let traces = run.forward(&series, |n, u| {
        if let Some(m) = movie.as_mut() {
            if n % m.stride == 0 && n / m.stride < n_frames {
                m.snapshots.extend(run.domain.physical(u));
            }
        }
    })?;
    let single = AcquisitionGeometry { source_positions: vec![source.x], ..geometry.clone() };
    Ok((ShotGatherSet::new(single, traces)?, movie))
}
