//! Error metrics, aggregate reports and score export.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::VelocityField;
use crate::npy::write_atomic;
use crate::preprocess::CorruptionSpec;
use crate::training::{Dataset, PreparedSet, TrainedModel};
use crate::{Error, Result};

/// `||truth - pred|| / ||truth||` over all grid points.
pub fn relative_l2(truth: &VelocityField, pred: &VelocityField) -> Result<f64> {
    if truth.grid() != pred.grid() {
        return Err(Error::InvalidArgument("relative_l2 needs fields on the same grid".into()));
    }
    relative_l2_values(truth.values(), pred.values())
}

pub fn relative_l2_values(truth: &[f32], pred: &[f32]) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(Error::Shape { context: "relative_l2".into(), expected: vec![truth.len()], got: vec![pred.len()] });
    }
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (&t, &p) in truth.iter().zip(pred) {
        num += (t as f64 - p as f64).powi(2);
        den += (t as f64).powi(2);
    }
    if den == 0.0 {
        return Err(Error::InvalidArgument("relative_l2 of an all-zero truth is undefined".into()));
    }
    Ok((num / den).sqrt())
}

/// Gaussian-window SSIM settings; both images are mapped to `[0, 1]` with
/// the fixed bounds before comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
    pub bounds: (f64, f64),
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03, data_range: 1.0, bounds: (1500.0, 4500.0) }
    }
}

/// Half-sample symmetric index (`d c b a | a b c d`).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn gaussian_filter(img: &[f64], ny: usize, nx: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; img.len()];
    for y in 0..ny {
        for x in 0..nx {
            tmp[y * nx + x] =
                kernel.iter().enumerate().map(|(k, w)| w * img[y * nx + reflect(x as isize + k as isize - r, nx)]).sum();
        }
    }
    let mut out = vec![0.0; img.len()];
    for y in 0..ny {
        for x in 0..nx {
            out[y * nx + x] =
                kernel.iter().enumerate().map(|(k, w)| w * tmp[reflect(y as isize + k as isize - r, ny) * nx + x]).sum();
        }
    }
    out
}

/// Mean local SSIM over the interior, excluding a border of half a window.
pub fn ssim(truth: &VelocityField, pred: &VelocityField, config: &SsimConfig) -> Result<f64> {
    if truth.grid() != pred.grid() {
        return Err(Error::InvalidArgument("ssim needs fields on the same grid".into()));
    }
    let (ny, nx) = (truth.grid().ny, truth.grid().nx);
    let w = config.window;
    if w % 2 == 0 || ny < w || nx < w {
        return Err(Error::InvalidArgument(format!("ssim window {w} does not fit a {ny}x{nx} grid")));
    }
    let (lo, hi) = config.bounds;
    let scale = |v: &[f32]| v.iter().map(|&x| (x as f64 - lo) / (hi - lo)).collect::<Vec<_>>();
    let a = scale(truth.values());
    let b = scale(pred.values());
    let r = (w / 2) as isize;
    let mut kernel: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * config.sigma * config.sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let filt = |img: &[f64]| gaussian_filter(img, ny, nx, &kernel);
    let ux = filt(&a);
    let uy = filt(&b);
    let uxx = filt(&a.iter().map(|v| v * v).collect::<Vec<_>>());
    let uyy = filt(&b.iter().map(|v| v * v).collect::<Vec<_>>());
    let uxy = filt(&a.iter().zip(&b).map(|(x, y)| x * y).collect::<Vec<_>>());
    let c1 = (config.k1 * config.data_range).powi(2);
    let c2 = (config.k2 * config.data_range).powi(2);
    let pad = w / 2;
    let (mut sum, mut count) = (0.0, 0usize);
    for y in pad..ny - pad {
        for x in pad..nx - pad {
            let i = y * nx + x;
            let vx = uxx[i] - ux[i] * ux[i];
            let vy = uyy[i] - uy[i] * uy[i];
            let vxy = uxy[i] - ux[i] * uy[i];
            let s = ((2.0 * ux[i] * uy[i] + c1) * (2.0 * vxy + c2)) / ((ux[i] * ux[i] + uy[i] * uy[i] + c1) * (vx + vy + c2));
            sum += s;
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub sample_id: usize,
    pub rel_l2: f64,
    pub ssim: f64,
}

/// Aggregate of one evaluation condition. `std` is the population standard
/// deviation; `sample_std` divides by `N - 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub condition: String,
    pub scores: Vec<SampleScore>,
    pub mean: f64,
    pub std: f64,
    pub sample_std: f64,
    pub ssim_mean: f64,
    pub std_convention: String,
    pub ssim_config: SsimConfig,
}

/// `(mean, population std, sample std)` in `f64`.
pub fn mean_std(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let sample = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { f64::NAN };
    (mean, (ss / n as f64).sqrt(), sample)
}

impl EvalReport {
    pub fn new(condition: impl Into<String>, mut scores: Vec<SampleScore>, ssim_config: SsimConfig) -> Self {
        scores.sort_by_key(|s| s.sample_id);
        let rel: Vec<f64> = scores.iter().map(|s| s.rel_l2).collect();
        let (mean, std, sample_std) = mean_std(&rel);
        let ssim_mean = mean_std(&scores.iter().map(|s| s.ssim).collect::<Vec<_>>()).0;
        Self {
            condition: condition.into(),
            scores,
            mean,
            std,
            sample_std,
            ssim_mean,
            std_convention: "population".into(),
            ssim_config,
        }
    }
}

/// Corrupt, gain, normalize, predict and score every sample of `dataset`.
/// Each sample's noise stream is derived from `corruption.rng_seed` and its
/// id.
pub fn evaluate_condition(
    trained: &TrainedModel,
    dataset: &Dataset,
    corruption: Option<&CorruptionSpec>,
    condition: impl Into<String>,
    ssim_config: &SsimConfig,
) -> Result<EvalReport> {
    let set = PreparedSet::new(dataset, &trained.stats, corruption)?;
    let coords = trained.model.coordinates(&set.grid);
    let n = set.grid.len();
    let rows: Vec<usize> = (0..set.len()).collect();
    let mut scores = Vec::with_capacity(set.len());
    for chunk in rows.chunks(16) {
        let (x, _) = set.batch(chunk);
        let v = trained.model.predict(&x, &coords)?;
        for (k, &r) in chunk.iter().enumerate() {
            let truth = VelocityField::new(set.grid, set.target(r).to_vec())?;
            let pred = VelocityField::new(set.grid, v.data()[k * n..(k + 1) * n].to_vec())?;
            scores.push(SampleScore { sample_id: set.ids[r], rel_l2: relative_l2(&truth, &pred)?, ssim: ssim(&truth, &pred, ssim_config)? });
        }
    }
    Ok(EvalReport::new(condition, scores, *ssim_config))
}

/// CSV `sample_id,rel_l2,ssim` with trailing `mean` and `std` rows.
pub fn scores_csv(report: &EvalReport) -> String {
    let mut out = String::from("sample_id,rel_l2,ssim\n");
    for s in &report.scores {
        let _ = writeln!(out, "{},{},{}", s.sample_id, s.rel_l2, s.ssim);
    }
    if !report.scores.is_empty() {
        let ssim_std = mean_std(&report.scores.iter().map(|s| s.ssim).collect::<Vec<_>>()).1;
        let _ = writeln!(out, "mean,{},{}", report.mean, report.ssim_mean);
        let _ = writeln!(out, "std,{},{}", report.std, ssim_std);
    }
    out
}

/// Writes the CSV; an empty report still writes the header, then errors.
pub fn export_scores(report: &EvalReport, path: &Path) -> Result<()> {
    write_atomic(path, scores_csv(report).as_bytes())?;
    if report.scores.is_empty() {
        return Err(Error::InvalidArgument(format!("report '{}' has no scores", report.condition)));
    }
    Ok(())
}

/// Parses the per-sample rows of a scores CSV, skipping summary rows.
pub fn parse_scores_csv(text: &str) -> Result<Vec<SampleScore>> {
    let mut lines = text.lines();
    if lines.next() != Some("sample_id,rel_l2,ssim") {
        return Err(Error::InvalidArgument("scores CSV header must be sample_id,rel_l2,ssim".into()));
    }
    let bad = |l: &str| Error::InvalidArgument(format!("bad scores row '{l}'"));
    let mut out = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let mut cols = line.split(',');
        let (Some(id), Some(rel), Some(ss), None) = (cols.next(), cols.next(), cols.next(), cols.next()) else {
            return Err(bad(line));
        };
        if id == "mean" || id == "std" {
            continue;
        }
        out.push(SampleScore {
            sample_id: id.parse().map_err(|_| bad(line))?,
            rel_l2: rel.parse().map_err(|_| bad(line))?,
            ssim: ss.parse().map_err(|_| bad(line))?,
        });
    }
    Ok(out)
}
