//! One function per subcommand. Every output lands in the configured output
//! directory.

use std::path::{Path, PathBuf};

use onetfwi_core::evaluation::{evaluate_condition, export_scores, SsimConfig};
use onetfwi_core::fwi::{hybrid_run, invert, misfit, write_trajectory, FwiProblem, FwiState};
use onetfwi_core::geometry::{AcquisitionGeometry, Grid2D, ShotGatherSet, VelocityField};
use onetfwi_core::model::{CoordinateGrid, DeepONet};
use onetfwi_core::npy::{read_npy_with_budget, write_atomic, write_npy};
use onetfwi_core::preprocess::CorruptionSpec;
use onetfwi_core::training::{
    fit_training_stats, load_checkpoint, make_toy_dataset, prepare_gather, sample_seed, save_checkpoint,
    time_major_to_trace_major, trace_major_to_time_major, train as train_model, write_loss_csv, Dataset,
    DatasetManifest, PreparedSet, Split, TrainedModel,
};
use onetfwi_core::wave::simulate_all_shots;
use onetfwi_core::Error;
use onetfwi_tensor::Tensor;
use serde::Serialize;
use tracing::info;

use crate::config::ExperimentConfig;
use crate::CliError;

const PREDICT_BATCH: usize = 16;

/// Largest NPY input in elements (1 GiB of `f32`), enough for a full
/// 500-sample OpenFWI data file.
const FILE_BUDGET: usize = 256 << 20;

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    Ok(write_atomic(path, text.as_bytes())?)
}

pub fn write_resolved_config(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    write_json(cfg, &out.join("resolved_config.json"))
}

fn is_trivial(spec: &CorruptionSpec) -> bool {
    spec.noise_sigma == 0.0 && spec.masked_receivers.is_empty()
}

/// Velocity tensor as `[B, ny, nx]` values checked against `grid`.
fn read_velocities(path: &Path, grid: &Grid2D) -> Result<(usize, Vec<f32>), CliError> {
    let t = read_npy_with_budget(path, FILE_BUDGET)?;
    let b = match t.shape() {
        [ny, nx] if (*ny, *nx) == (grid.ny, grid.nx) => 1,
        [b, ny, nx] if (*ny, *nx) == (grid.ny, grid.nx) => *b,
        [b, 1, ny, nx] if (*ny, *nx) == (grid.ny, grid.nx) => *b,
        other => {
            return Err(Error::Shape { context: path.display().to_string(), expected: vec![grid.ny, grid.nx], got: other.to_vec() }.into())
        }
    };
    Ok((b, t.into_data()))
}

fn read_velocity(path: &Path, index: usize, grid: &Grid2D) -> Result<VelocityField, CliError> {
    let (b, data) = read_velocities(path, grid)?;
    if index >= b {
        return Err(Error::InvalidArgument(format!("{}: index {index} out of range 0..{b}", path.display())).into());
    }
    let n = grid.len();
    Ok(VelocityField::new(*grid, data[index * n..(index + 1) * n].to_vec())?)
}

/// Gathers in the on-disk `[B, S, T, R]` layout.
fn read_gathers(path: &Path, geo: &AcquisitionGeometry) -> Result<(usize, Vec<f32>), CliError> {
    let t = read_npy_with_budget(path, FILE_BUDGET)?;
    let (ns, nt, nr) = (geo.n_sources(), geo.nt, geo.n_receivers());
    let b = match t.shape() {
        [s, t_, r] if (*s, *t_, *r) == (ns, nt, nr) => 1,
        [b, s, t_, r] if (*s, *t_, *r) == (ns, nt, nr) => *b,
        other => return Err(Error::Shape { context: path.display().to_string(), expected: vec![ns, nt, nr], got: other.to_vec() }.into()),
    };
    Ok((b, t.into_data()))
}

fn gather_at(data: &[f32], index: usize, geo: &AcquisitionGeometry) -> Result<ShotGatherSet, CliError> {
    let (ns, nt, nr) = (geo.n_sources(), geo.nt, geo.n_receivers());
    let per = ns * nt * nr;
    Ok(ShotGatherSet::new(geo.clone(), time_major_to_trace_major(&data[index * per..(index + 1) * per], ns, nt, nr))?)
}

fn read_gather(path: &Path, index: usize, geo: &AcquisitionGeometry) -> Result<ShotGatherSet, CliError> {
    let (b, data) = read_gathers(path, geo)?;
    if index >= b {
        return Err(Error::InvalidArgument(format!("{}: index {index} out of range 0..{b}", path.display())).into());
    }
    gather_at(&data, index, geo)
}

fn manifest(cfg: &ExperimentConfig, flag: Option<PathBuf>, from_config: &Option<PathBuf>, what: &str) -> Result<DatasetManifest, CliError> {
    let path = match (flag, from_config) {
        (Some(p), _) => p,
        (None, Some(p)) => cfg.data.resolve(p),
        (None, None) => return Err(CliError::usage(format!("no {what} manifest: pass --{what} or set data.{what}_manifest"))),
    };
    Ok(DatasetManifest::load(&path)?)
}

pub fn simulate(cfg: &ExperimentConfig, velocity: &Path) -> Result<(), CliError> {
    let fwd = &cfg.forward;
    let (b, data) = read_velocities(velocity, &fwd.grid)?;
    let n = fwd.grid.len();
    let geo = &fwd.geometry;
    let mut out = Vec::with_capacity(b * geo.n_sources() * geo.nt * geo.n_receivers());
    for k in 0..b {
        let field = VelocityField::new(fwd.grid, data[k * n..(k + 1) * n].to_vec())?;
        let gather = simulate_all_shots(&field, geo, &fwd.source, &fwd.simulation)?;
        out.extend(trace_major_to_time_major(gather.data(), geo.n_sources(), geo.n_receivers(), geo.nt));
    }
    let path = cfg.output.directory.join("gathers.npy");
    write_npy(&path, &[b, geo.n_sources(), geo.nt, geo.n_receivers()], &out)?;
    info!(samples = b, path = %path.display(), "simulated");
    Ok(())
}

pub fn make_toy(cfg: &ExperimentConfig, samples: Option<usize>, split: Option<&str>) -> Result<(), CliError> {
    let mut toy = cfg.toy.clone();
    if let Some(n) = samples {
        toy.n_samples = n;
    }
    match split {
        Some("train") => toy.split = Split::Train,
        Some("test") => toy.split = Split::Test,
        _ => {}
    }
    let m = make_toy_dataset(&cfg.output.directory, &toy)?;
    info!(samples = m.total_samples, "toy dataset written");
    Ok(())
}

pub fn train(cfg: &ExperimentConfig, train: Option<PathBuf>, val: Option<PathBuf>) -> Result<(), CliError> {
    let train_manifest = manifest(cfg, train, &cfg.data.train_manifest, "train")?;
    let mut train_data = Dataset::load(&train_manifest, cfg.data.sample_limit)?;
    train_data.split = Split::Train;
    let stats = fit_training_stats(&train_data)?;
    let train_set = PreparedSet::new(&train_data, &stats, None)?;
    drop(train_data);
    let val_set = match val.or_else(|| cfg.data.test_manifest.as_ref().map(|p| cfg.data.resolve(p))) {
        Some(path) => {
            let data = Dataset::load(&DatasetManifest::load(&path)?, cfg.data.sample_limit)?;
            Some(PreparedSet::new(&data, &stats, None)?)
        }
        None => None,
    };
    let mut model = DeepONet::new(cfg.model.resolve(), cfg.train.seed)?;
    let out = &cfg.output.directory;
    let every = cfg.train.checkpoint_every;
    let history = train_model(&mut model, &train_set, val_set.as_ref(), &cfg.train, |r, m| {
        if every > 0 && (r.epoch + 1) % every == 0 {
            let snapshot = TrainedModel { model: m.clone(), stats };
            save_checkpoint(&snapshot, &out.join(format!("model_epoch{}", r.epoch + 1)))?;
        }
        Ok(())
    })?;
    write_loss_csv(&history, &out.join("loss.csv"))?;
    save_checkpoint(&TrainedModel { model, stats }, &out.join("model"))?;
    Ok(())
}

/// Predictions for every gather of a `[B, S, T, R]` file, in batches.
fn predict_all(trained: &TrainedModel, data: &[f32], b: usize, cfg: &ExperimentConfig) -> Result<Vec<f32>, CliError> {
    let geo = &cfg.forward.geometry;
    let grid = &cfg.forward.grid;
    let coords = CoordinateGrid::for_grid(grid, trained.model.config().coordinate_scale);
    let shape = [geo.n_sources(), geo.n_receivers(), geo.nt];
    let mut out = Vec::with_capacity(b * grid.len());
    for start in (0..b).step_by(PREDICT_BATCH) {
        let rows = (start..b.min(start + PREDICT_BATCH)).collect::<Vec<_>>();
        let mut x = Vec::with_capacity(rows.len() * shape.iter().product::<usize>());
        for &k in &rows {
            x.extend(prepare_gather(gather_at(data, k, geo)?, &trained.stats, None)?);
        }
        let x = Tensor::new(vec![rows.len(), shape[0], shape[1], shape[2]], x).map_err(Error::from)?;
        out.extend(trained.model.predict(&x, &coords)?.into_data());
    }
    Ok(out)
}

pub fn predict(cfg: &ExperimentConfig, checkpoint: &Path, gathers: &Path) -> Result<(), CliError> {
    let trained = load_checkpoint(checkpoint)?;
    let (b, data) = read_gathers(gathers, &cfg.forward.geometry)?;
    let v = predict_all(&trained, &data, b, cfg)?;
    let grid = &cfg.forward.grid;
    write_npy(&cfg.output.directory.join("prediction.npy"), &[b, 1, grid.ny, grid.nx], &v)?;
    Ok(())
}

pub fn corrupt(cfg: &ExperimentConfig, gathers: &Path) -> Result<(), CliError> {
    let geo = &cfg.forward.geometry;
    let (b, data) = read_gathers(gathers, geo)?;
    let path = cfg.output.directory.join("corrupted.npy");
    let shape = [b, geo.n_sources(), geo.nt, geo.n_receivers()];
    if is_trivial(&cfg.corruption) {
        return Ok(write_npy(&path, &shape, &data)?);
    }
    let mut out = Vec::with_capacity(data.len());
    for k in 0..b {
        let spec = CorruptionSpec { rng_seed: sample_seed(cfg.corruption.rng_seed, k), ..cfg.corruption.clone() };
        let c = onetfwi_core::preprocess::corrupt(gather_at(&data, k, geo)?, &spec)?;
        out.extend(trace_major_to_time_major(c.data(), geo.n_sources(), geo.n_receivers(), geo.nt));
    }
    Ok(write_npy(&path, &shape, &out)?)
}

fn condition_label(spec: &CorruptionSpec) -> String {
    let mut parts = Vec::new();
    if spec.noise_sigma > 0.0 {
        parts.push(format!("sigma{}", spec.noise_sigma));
    }
    if !spec.masked_receivers.is_empty() {
        parts.push("masked".to_string());
    }
    if parts.is_empty() {
        "clean".into()
    } else {
        parts.join("_")
    }
}

pub fn evaluate(cfg: &ExperimentConfig, checkpoint: &Path, test: Option<PathBuf>, condition: Option<String>) -> Result<(), CliError> {
    let trained = load_checkpoint(checkpoint)?;
    let m = manifest(cfg, test, &cfg.data.test_manifest, "test")?;
    let data = Dataset::load(&m, cfg.data.sample_limit)?;
    let corruption = (!is_trivial(&cfg.corruption)).then_some(&cfg.corruption);
    let label = condition.unwrap_or_else(|| condition_label(&cfg.corruption));
    if label.is_empty() || !label.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c)) {
        return Err(CliError::usage(format!("condition label {label:?} must be non-empty [A-Za-z0-9._-]")));
    }
    let report = evaluate_condition(&trained, &data, corruption, label.clone(), &SsimConfig::default())?;
    let out = &cfg.output.directory;
    export_scores(&report, &out.join(format!("scores_{label}.csv")))?;
    write_json(&report, &out.join(format!("report_{label}.json")))?;
    info!(condition = %label, mean = report.mean, std = report.std, "evaluated");
    Ok(())
}

fn problem(cfg: &ExperimentConfig, observed: &Path, index: usize) -> Result<FwiProblem, CliError> {
    let gather = read_gather(observed, index, &cfg.forward.geometry)?;
    Ok(FwiProblem { observed: gather, source: cfg.forward.source, simulation: cfg.forward.simulation })
}

#[derive(Serialize)]
struct FwiSummary<'a> {
    start: &'a str,
    iterations: usize,
    initial_misfit: f64,
    final_misfit: f64,
    final_rel_l2_vs_truth: Option<f64>,
    stop: &'a onetfwi_core::fwi::StopReason,
}

fn summary<'a>(start: &'a str, state: &'a FwiState) -> FwiSummary<'a> {
    FwiSummary {
        start,
        iterations: state.iteration,
        initial_misfit: state.misfit_history.first().copied().unwrap_or(f64::NAN),
        final_misfit: state.misfit_history.last().copied().unwrap_or(f64::NAN),
        final_rel_l2_vs_truth: state.records.last().and_then(|r| r.rel_l2_vs_truth),
        stop: &state.stop,
    }
}

fn write_field(field: &VelocityField, path: &Path) -> Result<(), CliError> {
    let g = field.grid();
    Ok(write_npy(path, &[1, 1, g.ny, g.nx], field.values())?)
}

pub fn fwi(cfg: &ExperimentConfig, observed: &Path, index: usize, initial: Option<&Path>, truth: Option<&Path>) -> Result<(), CliError> {
    let grid = cfg.forward.grid;
    let problem = problem(cfg, observed, index)?;
    let start = match initial {
        Some(p) => read_velocity(p, index, &grid)?,
        None => VelocityField::constant(grid, cfg.fwi.homogeneous_speed)?,
    };
    let truth = truth.map(|p| read_velocity(p, index, &grid)).transpose()?;
    info!(misfit = misfit(&start, &problem)?, "initial");
    let state = invert(&start, &problem, &cfg.fwi, truth.as_ref())?;
    let out = &cfg.output.directory;
    write_trajectory(&state.records, &out.join("trajectory.csv"))?;
    write_field(&state.model, &out.join("fwi_model.npy"))?;
    write_json(&summary(if initial.is_some() { "file" } else { "homogeneous" }, &state), &out.join("fwi_summary.json"))
}

pub fn hybrid(cfg: &ExperimentConfig, checkpoint: &Path, observed: &Path, index: usize, truth: Option<&Path>) -> Result<(), CliError> {
    let trained = load_checkpoint(checkpoint)?;
    let grid = cfg.forward.grid;
    let problem = problem(cfg, observed, index)?;
    let truth = truth.map(|p| read_velocity(p, index, &grid)).transpose()?;
    let r = hybrid_run(&trained, &problem, &grid, &cfg.fwi, truth.as_ref())?;
    let out = &cfg.output.directory;
    write_trajectory(&r.informed.records, &out.join("hybrid_informed.csv"))?;
    write_trajectory(&r.homogeneous.records, &out.join("hybrid_homogeneous.csv"))?;
    write_field(&r.informed_start, &out.join("hybrid_informed_start.npy"))?;
    write_field(&r.informed.model, &out.join("hybrid_informed.npy"))?;
    write_field(&r.homogeneous.model, &out.join("hybrid_homogeneous.npy"))?;
    write_json(&[summary("informed", &r.informed), summary("homogeneous", &r.homogeneous)], &out.join("hybrid_summary.json"))
}

#[derive(Serialize)]
struct ExportEntry {
    file: String,
    kind: &'static str,
    source: PathBuf,
}

/// Schema of an exported file, from its CSV header or NPY suffix.
fn export_kind(path: &Path) -> Option<&'static str> {
    let ext = path.extension()?.to_str()?;
    match ext {
        "csv" => {
            let text = std::fs::read_to_string(path).ok()?;
            match text.lines().next()? {
                "sample_id,rel_l2,ssim" => Some("scores"),
                h if h.starts_with("epoch,") => Some("loss"),
                h if h.starts_with("iter,") => Some("trajectory"),
                _ => None,
            }
        }
        "npy" => {
            let h = onetfwi_core::npy::read_npy_header(path).ok()?;
            match h.shape.as_slice() {
                [_, 1, _, _] => Some("velocity"),
                [_, _, _, _] => Some("gathers"),
                _ => None,
            }
        }
        _ => None,
    }
}

pub fn export(cfg: &ExperimentConfig, sources: &[PathBuf]) -> Result<(), CliError> {
    let out = &cfg.output.directory;
    let dest = out.join("figures");
    std::fs::create_dir_all(&dest).map_err(|e| Error::io(&dest, e))?;
    let dirs = if sources.is_empty() { vec![out.clone()] } else { sources.to_vec() };
    let mut entries = Vec::new();
    for dir in &dirs {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        paths.sort();
        for path in paths {
            let Some(kind) = export_kind(&path) else { continue };
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            if entries.iter().any(|e: &ExportEntry| e.file == name) {
                return Err(Error::InvalidArgument(format!("export: {name} exists in more than one source directory")).into());
            }
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            write_atomic(&dest.join(&name), &bytes)?;
            entries.push(ExportEntry { file: name, kind, source: path });
        }
    }
    write_json(&entries, &dest.join("index.json"))?;
    info!(files = entries.len(), "exported");
    Ok(())
}
