//! Spatial grid, acquisition layout, velocity fields and shot gathers.
//!
//! Fields are stored `[depth][horizontal]`, gathers `[source][receiver][time]`,
//! matching the OpenFWI array layout.

use std::marker::PhantomData;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Node-centred regular grid; `dx = extent_x / (nx - 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub nx: usize,
    pub ny: usize,
    pub extent_x: f64,
    pub extent_y: f64,
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize, extent_x: f64, extent_y: f64) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidArgument(format!("grid needs at least 2x2 nodes, got {nx}x{ny}")));
        }
        if !(extent_x > 0.0 && extent_y > 0.0) {
            return Err(Error::InvalidArgument("grid extents must be positive".into()));
        }
        Ok(Self { nx, ny, extent_x, extent_y })
    }

    /// 70 x 70 nodes over 690 m x 690 m.
    pub fn openfwi() -> Self {
        Self { nx: 70, ny: 70, extent_x: 690.0, extent_y: 690.0 }
    }

    /// Grid with `n` nodes per side at the given spacing.
    pub fn square(n: usize, spacing: f64) -> Result<Self> {
        let extent = spacing * (n.max(2) - 1) as f64;
        Self::new(n, n, extent, extent)
    }

    pub fn dx(&self) -> f64 {
        self.extent_x / (self.nx - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        self.extent_y / (self.ny - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Wave speed in m/s on a [`Grid2D`], row = depth, column = horizontal.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityField {
    grid: Grid2D,
    values: Vec<f32>,
}

impl VelocityField {
    pub fn new(grid: Grid2D, values: Vec<f32>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape { context: "velocity field".into(), expected: vec![grid.ny, grid.nx], got: vec![values.len()] });
        }
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidArgument(format!("velocity values must be finite and positive, found {bad}")));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid2D, speed: f32) -> Result<Self> {
        Self::new(grid, vec![speed; grid.len()])
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn at(&self, depth: usize, x: usize) -> f32 {
        self.values[depth * self.grid.nx + x]
    }

    /// Clamps every value into `[lo, hi]`.
    pub fn clamped(&self, lo: f32, hi: f32) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|v| v.clamp(lo, hi)).collect() }
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(f32::MIN, f32::max)
    }
}

/// Exact `(min, max, mean)` of a field's values.
pub fn field_stats(values: &[f32]) -> Result<(f64, f64, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("field_stats of an empty field".into()));
    }
    let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for &v in values {
        let v = v as f64;
        lo = lo.min(v);
        hi = hi.max(v);
        sum += v;
    }
    Ok((lo, hi, sum / values.len() as f64))
}

/// Sources and receivers on the surface (depth 0) plus time sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionGeometry {
    pub source_positions: Vec<f64>,
    pub receiver_positions: Vec<f64>,
    pub dt: f64,
    pub nt: usize,
}

impl AcquisitionGeometry {
    pub fn new(source_positions: Vec<f64>, receiver_positions: Vec<f64>, dt: f64, nt: usize) -> Result<Self> {
        let g = Self { source_positions, receiver_positions, dt, nt };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || self.nt == 0 {
            return Err(Error::InvalidArgument(format!("need dt > 0 and nt >= 1, got dt={} nt={}", self.dt, self.nt)));
        }
        if self.source_positions.is_empty() || self.receiver_positions.is_empty() {
            return Err(Error::InvalidArgument("geometry needs at least one source and one receiver".into()));
        }
        Ok(())
    }

    /// Evenly spaced sources across `[0, width]`, one receiver per surface
    /// column of `grid`.
    pub fn surface(grid: &Grid2D, n_sources: usize, dt: f64, nt: usize) -> Result<Self> {
        let sources = if n_sources == 1 {
            vec![grid.extent_x / 2.0]
        } else {
            (0..n_sources).map(|i| grid.extent_x * i as f64 / (n_sources - 1) as f64).collect()
        };
        let receivers = (0..grid.nx).map(|i| i as f64 * grid.dx()).collect();
        Self::new(sources, receivers, dt, nt)
    }

    pub fn n_sources(&self) -> usize {
        self.source_positions.len()
    }

    pub fn n_receivers(&self) -> usize {
        self.receiver_positions.len()
    }

    /// Recording length `(nt - 1) * dt`.
    pub fn duration(&self) -> f64 {
        (self.nt - 1) as f64 * self.dt
    }
}

/// The OpenFWI FlatFault layout: 5 sources, 70 receivers, 1 ms sampling,
/// 1000 samples on a 690 m surface.
pub fn make_openfwi_geometry() -> AcquisitionGeometry {
    AcquisitionGeometry::surface(&Grid2D::openfwi(), 5, 1e-3, 1000).expect("fixed geometry is valid")
}

mod sealed {
    pub trait Sealed {}
}

/// Processing stage of a gather; see [`ShotGatherSet`].
pub trait Stage: sealed::Sealed + Clone + std::fmt::Debug + Send + Sync + 'static {
    const NAME: &'static str;
}

/// Stages that may still be corrupted (noise, masking) before the gain.
pub trait Ungained: Stage {}

macro_rules! stage {
    ($(#[$m:meta])* $name:ident, $label:literal) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq)]
        pub struct $name;
        impl sealed::Sealed for $name {}
        impl Stage for $name {
            const NAME: &'static str = $label;
        }
    };
}

stage!(/// Simulated or recorded amplitudes.
    Raw, "raw");
stage!(/// Raw data after noise injection and/or receiver masking.
    Corrupted, "corrupted");
stage!(/// After the signed log1p gain.
    Gained, "gained");
stage!(/// After the affine map to the training range.
    Normalized, "normalized");

impl Ungained for Raw {}
impl Ungained for Corrupted {}

/// Recorded traces `[source][receiver][time]` tagged with their processing
/// stage, so preprocessing steps can only be composed in order.
#[derive(Clone, Debug, PartialEq)]
pub struct ShotGatherSet<S: Stage = Raw> {
    geometry: AcquisitionGeometry,
    data: Vec<f32>,
    _stage: PhantomData<S>,
}

impl ShotGatherSet<Raw> {
    pub fn new(geometry: AcquisitionGeometry, data: Vec<f32>) -> Result<Self> {
        Self::with_stage(geometry, data)
    }

    pub fn zeros(geometry: AcquisitionGeometry) -> Self {
        let n = geometry.n_sources() * geometry.n_receivers() * geometry.nt;
        Self { geometry, data: vec![0.0; n], _stage: PhantomData }
    }
}

impl<S: Stage> ShotGatherSet<S> {
    pub(crate) fn with_stage(geometry: AcquisitionGeometry, data: Vec<f32>) -> Result<Self> {
        let shape = [geometry.n_sources(), geometry.n_receivers(), geometry.nt];
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::Shape { context: "shot gather".into(), expected: shape.to_vec(), got: vec![data.len()] });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("shot gather contains non-finite samples".into()));
        }
        Ok(Self { geometry, data, _stage: PhantomData })
    }

    pub(crate) fn restage<T: Stage>(self, data: Vec<f32>) -> ShotGatherSet<T> {
        debug_assert_eq!(data.len(), self.data.len());
        ShotGatherSet { geometry: self.geometry, data, _stage: PhantomData }
    }

    pub fn geometry(&self) -> &AcquisitionGeometry {
        &self.geometry
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn stage(&self) -> &'static str {
        S::NAME
    }

    /// `[n_sources, n_receivers, nt]`.
    pub fn shape(&self) -> [usize; 3] {
        [self.geometry.n_sources(), self.geometry.n_receivers(), self.geometry.nt]
    }

    pub fn trace(&self, source: usize, receiver: usize) -> &[f32] {
        let nt = self.geometry.nt;
        let start = (source * self.geometry.n_receivers() + receiver) * nt;
        &self.data[start..start + nt]
    }

    pub fn shot(&self, source: usize) -> &[f32] {
        let len = self.geometry.n_receivers() * self.geometry.nt;
        &self.data[source * len..(source + 1) * len]
    }
}
