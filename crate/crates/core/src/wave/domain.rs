//! Padded computational domain shared by the forward and adjoint solvers.
//!
//! The physical grid is surrounded by a Cerjan sponge (absent on top when the
//! free surface is on) and a 2-cell halo of zeros, so every stencil read stays
//! in bounds and the out-of-domain field is identically zero.

use super::SimulationConfig;
use crate::geometry::{Grid2D, VelocityField};

pub(crate) const HALO: usize = 2;

#[derive(Clone, Debug)]
pub(crate) struct Domain {
    /// Padded rows/columns, excluding the halo.
    pub nz: usize,
    pub nx: usize,
    /// Row stride of the halo'd arrays.
    pub stride: usize,
    /// Offset of physical node (0, 0) inside the padded grid.
    pub top: usize,
    pub left: usize,
    pub grid: Grid2D,
    /// Per-cell speed, halo'd layout (halo cells hold 0).
    pub vel: Vec<f32>,
    /// Per-cell sponge factor in `(0, 1]`, halo'd layout.
    pub damp: Vec<f32>,
    pub order: usize,
    pub dx: f64,
    pub dz: f64,
}

impl Domain {
    pub fn new(field: &VelocityField, config: &SimulationConfig) -> Self {
        let grid = *field.grid();
        let w = config.sponge_width;
        let top = if config.free_surface { 0 } else { w };
        let left = w;
        let nz = grid.ny + top + w;
        let nx = grid.nx + 2 * w;
        let stride = nx + 2 * HALO;
        let len = (nz + 2 * HALO) * stride;
        let mut vel = vec![0.0f32; len];
        let mut damp = vec![0.0f32; len];
        let alpha = config.sponge_strength;
        let profile = |d: usize| (-(alpha * d as f64).powi(2)).exp();
        for iz in 0..nz {
            let pz = iz as isize - top as isize;
            let dz_in = if pz < 0 { (-pz) as usize } else if pz as usize >= grid.ny { pz as usize - grid.ny + 1 } else { 0 };
            let rz = pz.clamp(0, grid.ny as isize - 1) as usize;
            for ix in 0..nx {
                let px = ix as isize - left as isize;
                let dx_in = if px < 0 { (-px) as usize } else if px as usize >= grid.nx { px as usize - grid.nx + 1 } else { 0 };
                let rx = px.clamp(0, grid.nx as isize - 1) as usize;
                let i = (iz + HALO) * stride + ix + HALO;
                vel[i] = field.at(rz, rx);
                damp[i] = (profile(dz_in) * profile(dx_in)) as f32;
            }
        }
        Self { nz, nx, stride, top, left, grid, vel, damp, order: config.space_order, dx: grid.dx(), dz: grid.dy() }
    }

    pub fn len(&self) -> usize {
        (self.nz + 2 * HALO) * self.stride
    }

    #[inline]
    pub fn idx(&self, iz: usize, ix: usize) -> usize {
        (iz + HALO) * self.stride + ix + HALO
    }

    /// Array index of physical node `(depth, x)`.
    #[inline]
    pub fn phys_idx(&self, depth: usize, x: usize) -> usize {
        self.idx(depth + self.top, x + self.left)
    }

    /// Physical cell whose speed was copied into padded cell `(iz, ix)`.
    pub fn source_cell(&self, iz: usize, ix: usize) -> usize {
        let rz = (iz as isize - self.top as isize).clamp(0, self.grid.ny as isize - 1) as usize;
        let rx = (ix as isize - self.left as isize).clamp(0, self.grid.nx as isize - 1) as usize;
        rz * self.grid.nx + rx
    }

    /// Nearest physical node to a point, ties to even.
    pub fn nearest_node(&self, x: f64, depth: f64) -> Option<(usize, usize)> {
        let jx = (x / self.dx).round_ties_even();
        let jz = (depth / self.dz).round_ties_even();
        if jx < 0.0 || jz < 0.0 || jx as usize >= self.grid.nx || jz as usize >= self.grid.ny {
            return None;
        }
        Some((jz as usize, jx as usize))
    }

    /// Second-derivative stencil weights `(c0, c1, c2)` along one axis.
    pub fn laplacian_weights(&self, h: f64) -> [f32; 3] {
        let inv = 1.0 / (h * h);
        match self.order {
            2 => [(-2.0 * inv) as f32, inv as f32, 0.0],
            _ => [(-2.5 * inv) as f32, (4.0 / 3.0 * inv) as f32, (-1.0 / 12.0 * inv) as f32],
        }
    }

    /// Staggered first-derivative weights `(a1, a2)`.
    pub fn staggered_weights(&self, h: f64) -> [f32; 2] {
        match self.order {
            2 => [(1.0 / h) as f32, 0.0],
            _ => [(9.0 / 8.0 / h) as f32, (-1.0 / 24.0 / h) as f32],
        }
    }

    /// Applies `visit(i, lap(u)[i])` over every interior (non-halo) cell.
    #[inline]
    pub fn for_each_laplacian(&self, u: &[f32], mut visit: impl FnMut(usize, f32)) {
        let [x0, x1, x2] = self.laplacian_weights(self.dx);
        let [z0, z1, z2] = self.laplacian_weights(self.dz);
        let c0 = x0 + z0;
        let s = self.stride;
        for iz in 0..self.nz {
            let row = (iz + HALO) * s;
            for i in row + HALO..row + HALO + self.nx {
                let lap = c0 * u[i]
                    + x1 * (u[i - 1] + u[i + 1])
                    + x2 * (u[i - 2] + u[i + 2])
                    + z1 * (u[i - s] + u[i + s])
                    + z2 * (u[i - 2 * s] + u[i + 2 * s]);
                visit(i, lap);
            }
        }
    }

    pub fn interior(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nz).flat_map(move |iz| {
            let row = (iz + HALO) * self.stride;
            row + HALO..row + HALO + self.nx
        })
    }

    /// Copies the physical window of a halo'd array, `[depth][x]`.
    pub fn physical(&self, u: &[f32]) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.grid.len());
        for d in 0..self.grid.ny {
            let start = self.phys_idx(d, 0);
            out.extend_from_slice(&u[start..start + self.grid.nx]);
        }
        out
    }
}
