//! First-order pressure/particle-velocity system on a staggered grid.
//!
//! Pressure lives on nodes, `vx` half a cell to the right and `vz` half a
//! cell below. Pressure is injected as the running sum of the source so the
//! recorded pressure solves the same second-order equation as the scalar
//! solver.

use super::domain::Domain;
use super::scalar::source_series;
use super::{ensure_stable, RickerSource, SimulationConfig};
use crate::geometry::{AcquisitionGeometry, ShotGatherSet, VelocityField};
use crate::{Error, Result};

/// Receiver histories of the first-order solver.
#[derive(Clone, Debug)]
pub struct FirstOrderRecord {
    pub pressure: ShotGatherSet,
    /// Vertical particle velocity half a cell below each receiver node, averaged
    /// onto the pressure time levels.
    pub vertical_velocity: ShotGatherSet,
    /// Discrete energy `sum p^2/(2 rho c^2) + rho v_old . v_new / 2` per step.
    pub energy: Vec<f64>,
}

pub fn simulate_first_order(
    field: &VelocityField,
    geometry: &AcquisitionGeometry,
    source: &RickerSource,
    config: &SimulationConfig,
) -> Result<FirstOrderRecord> {
    geometry.validate()?;
    source.validate()?;
    let config = SimulationConfig { scheme: super::Scheme::FirstOrderStaggered, ..*config };
    ensure_stable(field, geometry.dt, &config)?;
    let d = Domain::new(field, &config);
    let dt = geometry.dt as f32;
    let rho = config.density as f32;
    let nt = geometry.nt;
    let (sz, sx) = d
        .nearest_node(source.x, source.depth)
        .ok_or_else(|| Error::InvalidArgument(format!("source at ({}, {}) is outside the grid", source.x, source.depth)))?;
    let src = d.phys_idx(sz, sx);
    let receivers: Vec<usize> = geometry
        .receiver_positions
        .iter()
        .map(|&x| {
            d.nearest_node(x, 0.0)
                .map(|(z, x)| d.phys_idx(z, x))
                .ok_or_else(|| Error::InvalidArgument(format!("receiver at x = {x} is outside the grid")))
        })
        .collect::<Result<_>>()?;

    let series = source_series(source, field, geometry.dt, nt);
    let [ax1, ax2] = d.staggered_weights(d.dx);
    let [az1, az2] = d.staggered_weights(d.dz);
    let s = d.stride;
    let g = &d.damp;
    let kappa: Vec<f32> = d.vel.iter().map(|c| rho * c * c).collect();
    let mut p = vec![0.0f32; d.len()];
    let mut vx = vec![0.0f32; d.len()];
    let mut vz = vec![0.0f32; d.len()];
    let nr = receivers.len();
    let mut pressure = vec![0.0f32; nr * nt];
    let mut velocity = vec![0.0f32; nr * nt];
    let mut energy = Vec::with_capacity(nt);
    let mut injected = 0.0f64;
    let interior: Vec<usize> = d.interior().collect();
    let c2dt2 = (d.vel[src] as f64 * geometry.dt).powi(2);
    let free_surface = d.top == 0;
    let ghost_row = d.idx(0, 0) - s..d.idx(0, d.nx - 1) - s + 1;

    for n in 0..nt {
        let mut e_pot = 0.0f64;
        for &i in &interior {
            e_pot += (p[i] as f64).powi(2) / kappa[i] as f64;
        }
        let old_vz: Vec<f32> = receivers.iter().map(|&i| vz[i]).collect();
        let mut e_kin = 0.0f64;
        let b = dt / rho;
        for &i in &interior {
            let dpx = ax1 * (p[i + 1] - p[i]) + ax2 * (p[i + 2] - p[i - 1]);
            let dpz = az1 * (p[i + s] - p[i]) + az2 * (p[i + 2 * s] - p[i - s]);
            let nvx = g[i] * (vx[i] - b * dpx);
            let nvz = g[i] * (vz[i] - b * dpz);
            e_kin += vx[i] as f64 * nvx as f64 + vz[i] as f64 * nvz as f64;
            vx[i] = nvx;
            vz[i] = nvz;
        }
        if free_surface {
            // vz half a cell above the surface row sees p = 0 in the ghost row.
            for i in ghost_row.clone() {
                let dpz = az1 * (p[i + s] - p[i]) + az2 * (p[i + 2 * s] - p[i - s]);
                let nvz = g[i + s] * (vz[i] - b * dpz);
                e_kin += vz[i] as f64 * nvz as f64;
                vz[i] = nvz;
            }
        }
        energy.push(0.5 * e_pot + 0.5 * config.density * e_kin);
        for (r, &i) in receivers.iter().enumerate() {
            pressure[r * nt + n] = p[i];
            velocity[r * nt + n] = 0.5 * (old_vz[r] + vz[i]);
        }
        if n % 32 == 0 && !p.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { context: "staggered wavefield".into(), step: n });
        }
        for &i in &interior {
            let dvx = ax1 * (vx[i] - vx[i - 1]) + ax2 * (vx[i + 1] - vx[i - 2]);
            let dvz = az1 * (vz[i] - vz[i - s]) + az2 * (vz[i + s] - vz[i - 2 * s]);
            p[i] = g[i] * (p[i] - dt * kappa[i] * (dvx + dvz));
        }
        injected += series[n] as f64;
        p[src] += g[src] * (c2dt2 * injected) as f32;
    }
    if !pressure.iter().chain(&velocity).all(|v| v.is_finite()) {
        return Err(Error::NonFinite { context: "staggered wavefield".into(), step: nt - 1 });
    }
    let single = AcquisitionGeometry { source_positions: vec![source.x], ..geometry.clone() };
    Ok(FirstOrderRecord {
        pressure: ShotGatherSet::new(single.clone(), pressure)?,
        vertical_velocity: ShotGatherSet::new(single, velocity)?,
        energy,
    })
}
