//! Gain, normalization, noise injection and receiver masking for shot
//! gathers.
//!
//! Stage tags on [`ShotGatherSet`] fix the order: corruption acts on raw
//! amplitudes, the gain follows, normalization comes last. Gaining twice
//! does not type-check:
//!
//! ```compile_fail
//! use onetfwi_core::geometry::{make_openfwi_geometry, ShotGatherSet};
//! use onetfwi_core::preprocess::gain_log1p;
//! let raw = ShotGatherSet::zeros(make_openfwi_geometry());
//! let twice = gain_log1p(gain_log1p(raw));
//! ```
//!
//! and neither does corrupting after the gain:
//!
//! ```compile_fail
//! use onetfwi_core::geometry::{make_openfwi_geometry, ShotGatherSet};
//! use onetfwi_core::preprocess::{gain_log1p, mask_receivers};
//! let raw = ShotGatherSet::zeros(make_openfwi_geometry());
//! let late = mask_receivers(gain_log1p(raw), &[3]);
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::geometry::{Corrupted, Gained, Normalized, ShotGatherSet, Ungained};
use crate::{Error, Result};

/// Receivers killed in the masking experiment, spread over the first half of
/// the 70-receiver line.
pub const DEFAULT_MASKED_RECEIVERS: [usize; 5] = [10, 15, 20, 25, 30];

/// Signed logarithmic gain `sign(x) ln(1 + |x|)`.
#[inline]
pub fn gain_value(x: f32) -> f32 {
    x.signum() * x.abs().ln_1p()
}

pub fn gain_log1p<S: Ungained>(gather: ShotGatherSet<S>) -> ShotGatherSet<Gained> {
    let data = gather.data().iter().map(|&x| if x == 0.0 { 0.0 } else { gain_value(x) }).collect();
    gather.restage(data)
}

/// Global extremes of the gained training data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationStats {
    pub min_val: f64,
    pub max_val: f64,
}

impl NormalizationStats {
    pub fn new(min_val: f64, max_val: f64) -> Result<Self> {
        let s = Self { min_val, max_val };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min_val < self.max_val) || !self.min_val.is_finite() || !self.max_val.is_finite() {
            return Err(Error::InvalidArgument(format!("degenerate normalization range [{}, {}]", self.min_val, self.max_val)));
        }
        Ok(())
    }

    /// Min/max over any stream of value slices.
    pub fn fit_values<'a>(values: impl IntoIterator<Item = &'a [f32]>) -> Result<Self> {
        let (mut lo, mut hi, mut seen) = (f64::INFINITY, f64::NEG_INFINITY, false);
        for chunk in values {
            for &v in chunk {
                lo = lo.min(v as f64);
                hi = hi.max(v as f64);
                seen = true;
            }
        }
        if !seen {
            return Err(Error::InvalidArgument("normalization needs at least one sample".into()));
        }
        Self::new(lo, hi)
    }

    #[inline]
    pub fn apply(&self, x: f32) -> f32 {
        (2.0 * (x as f64 - self.min_val) / (self.max_val - self.min_val) - 1.0) as f32
    }

    #[inline]
    pub fn invert(&self, y: f32) -> f32 {
        ((y as f64 + 1.0) * 0.5 * (self.max_val - self.min_val) + self.min_val) as f32
    }
}

pub fn fit_normalization<'a>(training: impl IntoIterator<Item = &'a ShotGatherSet<Gained>>) -> Result<NormalizationStats> {
    NormalizationStats::fit_values(training.into_iter().map(|g| g.data()))
}

/// Affine map of the training range onto `[-1, 1]`; values outside the
/// range are not clipped.
pub fn normalize(gather: ShotGatherSet<Gained>, stats: &NormalizationStats) -> Result<ShotGatherSet<Normalized>> {
    stats.validate()?;
    let data = gather.data().iter().map(|&x| stats.apply(x)).collect();
    Ok(gather.restage(data))
}

pub fn denormalize(gather: ShotGatherSet<Normalized>, stats: &NormalizationStats) -> Result<ShotGatherSet<Gained>> {
    stats.validate()?;
    let data = gather.data().iter().map(|&y| stats.invert(y)).collect();
    Ok(gather.restage(data))
}

/// Which per-trace maximum scales the noise.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScale {
    /// `max_t X(t)`, signed.
    #[default]
    SignedMax,
    /// `max_t |X(t)|`.
    AbsMax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptionSpec {
    pub noise_sigma: f64,
    pub cutoff_hz: f64,
    pub masked_receivers: Vec<usize>,
    pub rng_seed: u64,
    pub noise_scale: NoiseScale,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self { noise_sigma: 0.0, cutoff_hz: 100.0, masked_receivers: Vec::new(), rng_seed: 0, noise_scale: NoiseScale::SignedMax }
    }
}

impl CorruptionSpec {
    pub fn noise(sigma: f64, seed: u64) -> Self {
        Self { noise_sigma: sigma, rng_seed: seed, ..Self::default() }
    }

    pub fn masked(receivers: &[usize]) -> Self {
        Self { masked_receivers: receivers.to_vec(), ..Self::default() }
    }

    pub fn validate(&self, dt: f64, n_receivers: usize) -> Result<()> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        let nyquist = 0.5 / dt;
        if !(self.cutoff_hz > 0.0 && self.cutoff_hz < nyquist) {
            return Err(Error::InvalidArgument(format!("cutoff {} Hz must lie in (0, {nyquist}) Hz", self.cutoff_hz)));
        }
        if let Some(&bad) = self.masked_receivers.iter().find(|&&r| r >= n_receivers) {
            return Err(Error::InvalidArgument(format!("masked receiver {bad} out of range 0..{n_receivers}")));
        }
        Ok(())
    }
}

/// Independent noise stream for trace `(source, receiver)`.
fn trace_rng(seed: u64, source: usize, receiver: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((source as u64) << 32) | receiver as u64);
    rng
}

/// Adds `scale * lowpass(N(0, sigma))` to every trace, where `scale` is the
/// trace maximum chosen by `spec.noise_scale`.
pub fn add_filtered_noise<S: Ungained>(gather: ShotGatherSet<S>, spec: &CorruptionSpec) -> Result<ShotGatherSet<Corrupted>> {
    let geo = gather.geometry().clone();
    spec.validate(geo.dt, geo.n_receivers())?;
    if spec.noise_sigma == 0.0 {
        let data = gather.data().to_vec();
        return Ok(gather.restage(data));
    }
    let nt = geo.nt;
    let nr = geo.n_receivers();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nt);
    let inv = planner.plan_fft_inverse(nt);
    let keep = |k: usize| (k.min(nt - k) as f64) / (nt as f64 * geo.dt) <= spec.cutoff_hz;
    let mut data = gather.data().to_vec();
    data.par_chunks_mut(nt).enumerate().for_each(|(trace, x)| {
        let (src, rec) = (trace / nr, trace % nr);
        let mut rng = trace_rng(spec.rng_seed, src, rec);
        let mut buf: Vec<Complex<f64>> =
            (0..nt).map(|_| Complex::new(spec.noise_sigma * { let z: f64 = StandardNormal.sample(&mut rng); z }, 0.0)).collect();
        fwd.process(&mut buf);
        for (k, b) in buf.iter_mut().enumerate() {
            if !keep(k) {
                *b = Complex::new(0.0, 0.0);
            }
        }
        inv.process(&mut buf);
        let scale = match spec.noise_scale {
            NoiseScale::SignedMax => x.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64,
            NoiseScale::AbsMax => x.iter().fold(0f32, |m, v| m.max(v.abs())) as f64,
        };
        for (v, n) in x.iter_mut().zip(&buf) {
            *v += (scale * n.re / nt as f64) as f32;
        }
    });
    Ok(gather.restage(data))
}

/// Zeroes the listed receiver columns for every source and time step.
pub fn mask_receivers<S: Ungained>(gather: ShotGatherSet<S>, receivers: &[usize]) -> Result<ShotGatherSet<Corrupted>> {
    let geo = gather.geometry();
    let (nr, nt) = (geo.n_receivers(), geo.nt);
    if let Some(&bad) = receivers.iter().find(|&&r| r >= nr) {
        return Err(Error::InvalidArgument(format!("masked receiver {bad} out of range 0..{nr}")));
    }
    let mut data = gather.data().to_vec();
    for src in 0..geo.n_sources() {
        for &r in receivers {
            let start = (src * nr + r) * nt;
            data[start..start + nt].fill(0.0);
        }
    }
    Ok(gather.restage(data))
}

/// Noise followed by masking, as configured in `spec`.
pub fn corrupt<S: Ungained>(gather: ShotGatherSet<S>, spec: &CorruptionSpec) -> Result<ShotGatherSet<Corrupted>> {
    let noisy = add_filtered_noise(gather, spec)?;
    mask_receivers(noisy, &spec.masked_receivers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gain_reference_values() {
        assert_eq!(gain_value(0.0), 0.0);
        let e1 = std::f32::consts::E - 1.0;
        assert!((gain_value(e1) - 1.0).abs() < 1e-6);
        assert!((gain_value(-e1) + 1.0).abs() < 1e-6);
    }

    #[test]
    fn normalization_endpoints_and_midpoint() {
        let s = NormalizationStats::new(-2.0, 3.0).unwrap();
        assert_eq!(s.apply(-2.0), -1.0);
        assert_eq!(s.apply(0.5), 0.0);
        assert_eq!(s.apply(3.0), 1.0);
        assert!(s.apply(4.0) > 1.0);
        assert!(NormalizationStats::new(1.0, 1.0).is_err());
    }

    #[test]
    fn stream_fitting() {
        let a = [-2.0f32, 0.0, 3.0];
        let b = [1.0f32, 2.0];
        let s = NormalizationStats::fit_values([&a[..]]).unwrap();
        assert_eq!((s.min_val, s.max_val), (-2.0, 3.0));
        assert_eq!(NormalizationStats::fit_values([&b[..], &a[..]]).unwrap(), s);
        assert!(NormalizationStats::fit_values(std::iter::empty()).is_err());
    }
}
