//! Dataset files in the OpenFWI layout, toy dataset synthesis, the training
//! loop and checkpoints.
//!
//! Data arrays are stored `[sample, source, time, receiver]` on disk and
//! held `[source, receiver, time]` in memory; velocity arrays are
//! `[sample, 1, depth, x]`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use onetfwi_tensor::{AdamConfig, AdamState, Graph, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::evaluation::{mean_std, relative_l2_values};
use crate::geometry::{make_openfwi_geometry, AcquisitionGeometry, Grid2D, Raw, ShotGatherSet, Ungained, VelocityField};
use crate::model::{CoordinateGrid, DeepONet, ModelConfig};
use crate::npy::{read_npy_header, read_npy_rows, write_atomic, write_npy};
use crate::preprocess::{corrupt, gain_log1p, gain_value, normalize, CorruptionSpec, NormalizationStats};
use crate::wave::{simulate_all_shots, RickerSource, SimulationConfig};
use crate::{Error, Result};

/// Samples per data/model file pair.
pub const SAMPLES_PER_FILE: usize = 500;

const LOAD_CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub data_files: Vec<PathBuf>,
    pub model_files: Vec<PathBuf>,
    pub split: Split,
    pub total_samples: usize,
    #[serde(default = "make_openfwi_geometry")]
    pub geometry: AcquisitionGeometry,
    #[serde(default = "Grid2D::openfwi")]
    pub grid: Grid2D,
}

impl DatasetManifest {
    /// Reads a manifest; relative file paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Self = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in m.data_files.iter_mut().chain(m.model_files.iter_mut()) {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_files.len() != self.model_files.len() {
            return Err(Error::InvalidArgument(format!(
                "{} data files but {} model files",
                self.data_files.len(),
                self.model_files.len()
            )));
        }
        self.geometry.validate()
    }
}

/// One velocity model and its recorded gathers.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub gather: ShotGatherSet<Raw>,
    pub velocity: VelocityField,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Loads the first `limit` samples (all when `None`) of a manifest.
    pub fn load(manifest: &DatasetManifest, limit: Option<usize>) -> Result<Self> {
        manifest.validate()?;
        let want = limit.unwrap_or(manifest.total_samples).min(manifest.total_samples);
        let geo = &manifest.geometry;
        let (ns, nr, nt) = (geo.n_sources(), geo.n_receivers(), geo.nt);
        let grid = manifest.grid;
        let mut samples = Vec::with_capacity(want);
        for (df, mf) in manifest.data_files.iter().zip(&manifest.model_files) {
            if samples.len() >= want {
                break;
            }
            let dh = read_npy_header(df)?;
            let mh = read_npy_header(mf)?;
            let b = dh.shape.first().copied().unwrap_or(0);
            if dh.shape != [b, ns, nt, nr] {
                return Err(Error::Shape { context: format!("{}", df.display()), expected: vec![b, ns, nt, nr], got: dh.shape });
            }
            if mh.shape != [b, 1, grid.ny, grid.nx] {
                return Err(Error::Shape { context: format!("{}", mf.display()), expected: vec![b, 1, grid.ny, grid.nx], got: mh.shape });
            }
            let per = ns * nt * nr;
            let take = b.min(want - samples.len());
            for first in (0..take).step_by(LOAD_CHUNK) {
                let count = LOAD_CHUNK.min(take - first);
                let data = read_npy_rows(df, first, count)?;
                let model = read_npy_rows(mf, first, count)?;
                for k in 0..count {
                    let block = &data.data()[k * per..(k + 1) * per];
                    let gather = ShotGatherSet::new(geo.clone(), time_major_to_trace_major(block, ns, nt, nr))?;
                    let v = model.data()[k * grid.len()..(k + 1) * grid.len()].to_vec();
                    samples.push(Sample { id: samples.len(), gather, velocity: VelocityField::new(grid, v)? });
                }
            }
        }
        if samples.len() < want {
            return Err(Error::InvalidArgument(format!("manifest lists {want} samples but files hold {}", samples.len())));
        }
        Ok(Self { split: manifest.split, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// `[source][time][receiver]` to `[source][receiver][time]`.
pub fn time_major_to_trace_major(block: &[f32], ns: usize, nt: usize, nr: usize) -> Vec<f32> {
    let mut out = vec![0.0; block.len()];
    for s in 0..ns {
        for t in 0..nt {
            for r in 0..nr {
                out[(s * nr + r) * nt + t] = block[(s * nt + t) * nr + r];
            }
        }
    }
    out
}

pub fn trace_major_to_time_major(block: &[f32], ns: usize, nr: usize, nt: usize) -> Vec<f32> {
    let mut out = vec![0.0; block.len()];
    for s in 0..ns {
        for r in 0..nr {
            for t in 0..nt {
                out[(s * nt + t) * nr + r] = block[(s * nr + r) * nt + t];
            }
        }
    }
    out
}

/// Writes samples as OpenFWI-style NPY pairs plus `manifest.json`.
pub fn write_dataset(dir: &Path, split: Split, samples: &[Sample]) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let first = samples.first().ok_or_else(|| Error::InvalidArgument("cannot write an empty dataset".into()))?;
    let geometry = first.gather.geometry().clone();
    let grid = *first.velocity.grid();
    let [ns, nr, nt] = first.gather.shape();
    let mut data_files = Vec::new();
    let mut model_files = Vec::new();
    for (k, chunk) in samples.chunks(SAMPLES_PER_FILE).enumerate() {
        let mut data = Vec::with_capacity(chunk.len() * ns * nr * nt);
        let mut model = Vec::with_capacity(chunk.len() * grid.len());
        for s in chunk {
            if s.gather.geometry() != &geometry || s.velocity.grid() != &grid {
                return Err(Error::InvalidArgument(format!("sample {} uses a different geometry or grid", s.id)));
            }
            data.extend(trace_major_to_time_major(s.gather.data(), ns, nr, nt));
            model.extend_from_slice(s.velocity.values());
        }
        let (dn, mn) = (format!("data_{k}.npy"), format!("model_{k}.npy"));
        write_npy(&dir.join(&dn), &[chunk.len(), ns, nt, nr], &data)?;
        write_npy(&dir.join(&mn), &[chunk.len(), 1, grid.ny, grid.nx], &model)?;
        data_files.push(PathBuf::from(dn));
        model_files.push(PathBuf::from(mn));
    }
    let manifest = DatasetManifest { data_files, model_files, split, total_samples: samples.len(), geometry, grid };
    let path = dir.join("manifest.json");
    write_atomic(&path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    DatasetManifest::load(&path)
}

/// Flat-layered toy family with an optional vertical fault.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub n_samples: usize,
    pub n_layers: (usize, usize),
    pub fault_probability: f64,
    pub speed_range: (f32, f32),
    pub seed: u64,
    pub split: Split,
    pub source: RickerSource,
    pub simulation: SimulationConfig,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            n_samples: 300,
            n_layers: (2, 4),
            fault_probability: 0.5,
            speed_range: (1500.0, 4500.0),
            seed: 0,
            split: Split::Train,
            source: RickerSource::new(25.0).with_amplitude(TOY_SOURCE_AMPLITUDE),
            simulation: SimulationConfig::default(),
        }
    }
}

/// Source scaling that puts toy gathers in the amplitude range of OpenFWI
/// data (peaks of a few tens), where the log gain is strongly nonlinear.
pub const TOY_SOURCE_AMPLITUDE: f64 = 100.0;

/// Random layered field; interfaces shift by the fault throw right of the
/// fault column.
pub fn sample_toy_field<R: Rng + ?Sized>(rng: &mut R, grid: Grid2D, config: &ToyConfig) -> Result<VelocityField> {
    let (lo, hi) = config.n_layers;
    if lo < 1 || lo > hi {
        return Err(Error::InvalidArgument(format!("bad layer range ({lo}, {hi})")));
    }
    let (vmin, vmax) = config.speed_range;
    let n = rng.gen_range(lo..=hi);
    let margin = grid.ny / 8;
    let span = grid.ny - 2 * margin;
    if span < n {
        return Err(Error::InvalidArgument(format!("grid depth {} cannot hold {n} layers", grid.ny)));
    }
    let mut tops: Vec<usize> = rand::seq::index::sample(rng, span, n - 1).into_iter().map(|t| t + margin).collect();
    tops.sort_unstable();
    let mut speeds: Vec<f32> = (0..n).map(|_| rng.gen_range(vmin..=vmax)).collect();
    speeds.sort_by(f32::total_cmp);
    let fault = rng.gen_bool(config.fault_probability).then(|| {
        let col = rng.gen_range(grid.nx / 5..grid.nx * 4 / 5);
        let throw = rng.gen_range(3..=grid.ny as i64 / 7) * if rng.gen_bool(0.5) { 1 } else { -1 };
        (col, throw)
    });
    let mut values = Vec::with_capacity(grid.len());
    for d in 0..grid.ny {
        for x in 0..grid.nx {
            let shift = match fault {
                Some((col, throw)) if x >= col => throw,
                _ => 0,
            };
            let layer = tops.iter().filter(|&&t| d as i64 >= t as i64 + shift).count();
            values.push(speeds[layer]);
        }
    }
    VelocityField::new(grid, values)
}

/// Synthesizes `config.n_samples` fields with 5-shot gathers on the OpenFWI
/// geometry and writes them under `dir`.
pub fn make_toy_dataset(dir: &Path, config: &ToyConfig) -> Result<DatasetManifest> {
    let samples = generate_toy_samples(config)?;
    write_dataset(dir, config.split, &samples)
}

pub fn generate_toy_samples(config: &ToyConfig) -> Result<Vec<Sample>> {
    let geometry = make_openfwi_geometry();
    let grid = Grid2D::openfwi();
    (0..config.n_samples)
        .into_par_iter()
        .map(|id| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(id as u64);
            let mut last = None;
            for _ in 0..10 {
                let velocity = sample_toy_field(&mut rng, grid, config)?;
                match simulate_all_shots(&velocity, &geometry, &config.source, &config.simulation) {
                    Ok(gather) => return Ok(Sample { id, gather, velocity }),
                    Err(e) if e.is_numerical() => last = Some(e),
                    Err(e) => return Err(e),
                }
            }
            Err(last.expect("at least one attempt"))
        })
        .collect()
}

/// Normalization range of the gained training gathers. Refuses test data.
pub fn fit_training_stats(dataset: &Dataset) -> Result<NormalizationStats> {
    if dataset.split != Split::Train {
        return Err(Error::InvalidArgument("normalization stats must come from the training split".into()));
    }
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for s in &dataset.samples {
        for &v in s.gather.data() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if lo > hi {
        return Err(Error::InvalidArgument("normalization needs at least one sample".into()));
    }
    NormalizationStats::new(gain_value(lo) as f64, gain_value(hi) as f64)
}

/// Corruption seed for one sample, so samples get independent noise.
pub fn sample_seed(seed: u64, sample_id: usize) -> u64 {
    seed ^ (sample_id as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Corrupt (optional), gain and normalize one gather into model input.
pub fn prepare_gather<S: Ungained>(
    gather: ShotGatherSet<S>,
    stats: &NormalizationStats,
    corruption: Option<&CorruptionSpec>,
) -> Result<Vec<f32>> {
    let gained = match corruption {
        Some(spec) => gain_log1p(corrupt(gather, spec)?),
        None => gain_log1p(gather),
    };
    Ok(normalize(gained, stats)?.into_data())
}

/// Model-ready inputs `[n, sources, receivers, time]` and targets `[n, points]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSet {
    pub ids: Vec<usize>,
    pub input_shape: [usize; 3],
    pub inputs: Vec<f32>,
    pub targets: Vec<f32>,
    pub grid: Grid2D,
}

impl PreparedSet {
    pub fn new(dataset: &Dataset, stats: &NormalizationStats, corruption: Option<&CorruptionSpec>) -> Result<Self> {
        let first = dataset.samples.first().ok_or_else(|| Error::InvalidArgument("empty dataset".into()))?;
        let input_shape = first.gather.shape();
        let grid = *first.velocity.grid();
        let inputs: Vec<Vec<f32>> = dataset
            .samples
            .par_iter()
            .map(|s| {
                let spec = corruption.map(|c| CorruptionSpec { rng_seed: sample_seed(c.rng_seed, s.id), ..c.clone() });
                prepare_gather(s.gather.clone(), stats, spec.as_ref())
            })
            .collect::<Result<_>>()?;
        let mut targets = Vec::with_capacity(dataset.len() * grid.len());
        for s in &dataset.samples {
            if s.gather.shape() != input_shape || s.velocity.grid() != &grid {
                return Err(Error::InvalidArgument(format!("sample {} differs in shape from sample 0", s.id)));
            }
            targets.extend_from_slice(s.velocity.values());
        }
        Ok(Self {
            ids: dataset.samples.iter().map(|s| s.id).collect(),
            input_shape,
            inputs: inputs.concat(),
            targets,
            grid,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Gathers the listed rows into an input batch and a target batch.
    pub fn batch(&self, rows: &[usize]) -> (Tensor<f32>, Tensor<f32>) {
        let (il, tl) = (self.input_len(), self.grid.len());
        let mut x = Vec::with_capacity(rows.len() * il);
        let mut y = Vec::with_capacity(rows.len() * tl);
        for &r in rows {
            x.extend_from_slice(&self.inputs[r * il..(r + 1) * il]);
            y.extend_from_slice(&self.targets[r * tl..(r + 1) * tl]);
        }
        let [s, rec, t] = self.input_shape;
        (
            Tensor::new(vec![rows.len(), s, rec, t], x).expect("batch shape"),
            Tensor::new(vec![rows.len(), tl], y).expect("batch shape"),
        )
    }

    pub fn target(&self, row: usize) -> &[f32] {
        let tl = self.grid.len();
        &self.targets[row * tl..(row + 1) * tl]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    Constant,
    StepDecay { factor: f64, every: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub l2_lambda: f64,
    pub l2_start_epoch: usize,
    pub seed: u64,
    /// Epoch interval of the checkpoint callback; 0 disables it.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 100,
            lr: 1e-4,
            lr_schedule: LrSchedule::StepDecay { factor: 0.5, every: 20 },
            l2_lambda: 1e-6,
            l2_start_epoch: 50,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument("batch_size and epochs must be positive".into()));
        }
        if self.l2_start_epoch > self.epochs {
            return Err(Error::InvalidArgument(format!(
                "l2_start_epoch {} exceeds epochs {}",
                self.l2_start_epoch, self.epochs
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.l2_lambda >= 0.0) {
            return Err(Error::InvalidArgument("lr and l2_lambda must be finite and non-negative".into()));
        }
        if let LrSchedule::StepDecay { factor, every } = self.lr_schedule {
            if every == 0 || !(factor > 0.0) {
                return Err(Error::InvalidArgument("step decay needs every > 0 and factor > 0".into()));
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::StepDecay { factor, every } => self.lr * factor.powi((epoch / every) as i32),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_rel_l2_mean: f64,
    pub val_rel_l2_std: f64,
}

/// Relative L2 of every row of `set`, predicted in batches.
pub fn rel_l2_per_sample(model: &DeepONet, set: &PreparedSet, batch: usize) -> Result<Vec<f64>> {
    let coords = model.coordinates(&set.grid);
    let rows: Vec<usize> = (0..set.len()).collect();
    let mut out = Vec::with_capacity(set.len());
    for chunk in rows.chunks(batch.max(1)) {
        let (x, _) = set.batch(chunk);
        let v = model.predict(&x, &coords)?;
        for (k, &r) in chunk.iter().enumerate() {
            let n = set.grid.len();
            out.push(relative_l2_values(set.target(r), &v.data()[k * n..(k + 1) * n])?);
        }
    }
    Ok(out)
}

/// Adam on the MSE of predicted velocities. `on_epoch` runs after every
/// epoch and may save checkpoints. On a non-finite loss the parameters of
/// the last completed epoch are restored and the error returned.
pub fn train(
    model: &mut DeepONet,
    train_set: &PreparedSet,
    val_set: Option<&PreparedSet>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &DeepONet) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if train_set.input_shape != model.config().input_shape {
        return Err(Error::Shape {
            context: "training inputs".into(),
            expected: model.config().input_shape.to_vec(),
            got: train_set.input_shape.to_vec(),
        });
    }
    let coords = model.coordinates(&train_set.grid);
    let coords = Tensor::new(vec![coords.len(), 2], coords.points.iter().flatten().copied().collect())?;
    let mut adam = AdamState::new(AdamConfig { lr: config.lr, ..AdamConfig::default() }, model.params());
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.epochs {
        adam.config.lr = config.lr_at(epoch);
        adam.config.weight_decay_l2 = if epoch >= config.l2_start_epoch { config.l2_lambda } else { 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let snapshot = model.params().clone();
        let (mut sum, mut count) = (0.0f64, 0usize);
        for rows in order.chunks(config.batch_size) {
            let (x, y) = train_set.batch(rows);
            let (loss, grads) = batch_gradients(model, &x, &y, &coords)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
                *model.params_mut() = snapshot;
                return Err(Error::NonFinite { context: "training loss".into(), step: epoch });
            }
            for (p, g) in model.params_mut().iter_mut().zip(grads) {
                p.grad = g;
            }
            adam.step(model.params_mut());
            sum += loss * rows.len() as f64;
            count += rows.len();
        }
        let (val_mean, val_std) = match val_set {
            Some(v) if !v.is_empty() => {
                let (m, s, _) = mean_std(&rel_l2_per_sample(model, v, config.batch_size)?);
                (m, s)
            }
            _ => (f64::NAN, f64::NAN),
        };
        let record = EpochRecord { epoch, train_mse: sum / count as f64, val_rel_l2_mean: val_mean, val_rel_l2_std: val_std };
        tracing::info!(epoch, train_mse = record.train_mse, val_rel_l2 = val_mean, "epoch done");
        history.push(record);
        on_epoch(&record, model)?;
    }
    Ok(history)
}

/// Loss and per-parameter gradients of one batch, in parameter order.
pub fn batch_gradients(model: &DeepONet, x: &Tensor<f32>, y: &Tensor<f32>, coords: &Tensor<f32>) -> Result<(f64, Vec<Tensor<f32>>)> {
    let mut g = Graph::new().with_finite_check(false);
    let p = model.bind(&mut g, true);
    let xv = g.constant_ref(x);
    let cv = g.constant_ref(coords);
    let v = model.velocity_graph(&mut g, &p, xv, cv)?;
    let yv = g.constant_ref(y);
    let loss = g.mse(v, yv)?;
    let value = g.value(loss).data()[0] as f64;
    let mut grads = g.backward(loss)?;
    let out = p
        .0
        .iter()
        .zip(model.params().iter())
        .map(|(var, param)| grads.take(*var).unwrap_or_else(|| Tensor::zeros(param.value.shape().to_vec())))
        .collect();
    Ok((value, out))
}

pub fn loss_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_mse,val_rel_l2_mean,val_rel_l2_std\n");
    for r in history {
        let _ = writeln!(out, "{},{},{},{}", r.epoch, r.train_mse, r.val_rel_l2_mean, r.val_rel_l2_std);
    }
    out
}

pub fn write_loss_csv(history: &[EpochRecord], path: &Path) -> Result<()> {
    write_atomic(path, loss_csv(history).as_bytes())
}

/// A model together with the normalization its inputs need.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: DeepONet,
    pub stats: NormalizationStats,
}

impl TrainedModel {
    /// Corrupt (optional), gain, normalize and predict one gather.
    pub fn predict_gather<S: Ungained>(
        &self,
        gather: ShotGatherSet<S>,
        grid: &Grid2D,
        corruption: Option<&CorruptionSpec>,
    ) -> Result<VelocityField> {
        let shape = gather.shape();
        let input = prepare_gather(gather, &self.stats, corruption)?;
        let x = Tensor::new(vec![1, shape[0], shape[1], shape[2]], input)?;
        let coords = CoordinateGrid::for_grid(grid, self.model.config().coordinate_scale);
        let v = self.model.predict(&x, &coords)?;
        VelocityField::new(*grid, v.into_data())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoordinateConvention {
    pub order: String,
    pub origin: String,
    pub scale_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub dtype: String,
    pub config: ModelConfig,
    pub normalization: Option<NormalizationStats>,
    pub coordinates: CoordinateConvention,
    pub layers: Vec<LayerEntry>,
    pub blob_bytes: usize,
}

const CHECKPOINT_FORMAT: &str = "onetfwi-checkpoint-1";

fn stem_with(stem: &Path, ext: &str) -> PathBuf {
    let mut p = stem.as_os_str().to_owned();
    p.push(ext);
    PathBuf::from(p)
}

/// Writes `<stem>.json` and `<stem>.bin`.
pub fn save_checkpoint(trained: &TrainedModel, stem: &Path) -> Result<()> {
    let model = &trained.model;
    let mut blob = Vec::with_capacity(4 * model.param_count());
    let mut layers = Vec::new();
    for p in model.params().iter() {
        let offset = blob.len();
        for v in p.value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        layers.push(LayerEntry { name: p.name.clone(), shape: p.value.shape().to_vec(), offset, bytes: blob.len() - offset });
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        dtype: "<f4".into(),
        config: model.config().clone(),
        normalization: Some(trained.stats),
        coordinates: CoordinateConvention {
            order: "x,depth".into(),
            origin: "top-left".into(),
            scale_m: model.config().coordinate_scale,
        },
        layers,
        blob_bytes: blob.len(),
    };
    write_atomic(&stem_with(stem, ".bin"), &blob)?;
    write_atomic(&stem_with(stem, ".json"), serde_json::to_string_pretty(&manifest)?.as_bytes())
}

/// Parameters and manifest; normalization may be absent.
pub fn load_checkpoint_parts(stem: &Path) -> Result<(DeepONet, CheckpointManifest)> {
    let json_path = stem_with(stem, ".json");
    let bin_path = stem_with(stem, ".bin");
    let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", json_path.display())))?;
    if manifest.format != CHECKPOINT_FORMAT || manifest.dtype != "<f4" {
        return Err(Error::Checkpoint(format!("unsupported format {} / dtype {}", manifest.format, manifest.dtype)));
    }
    let blob = std::fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    if blob.len() != manifest.blob_bytes {
        return Err(Error::Checkpoint(format!("blob holds {} bytes, manifest says {}", blob.len(), manifest.blob_bytes)));
    }
    let mut model = DeepONet::new(manifest.config.clone(), 0)?;
    if model.params().len() != manifest.layers.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} tensors, config builds {}",
            manifest.layers.len(),
            model.params().len()
        )));
    }
    let mut cursor = 0;
    for (entry, p) in manifest.layers.iter().zip(model.params().iter()) {
        if entry.name != p.name || entry.shape != p.value.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {} {:?} does not match config tensor {} {:?}",
                entry.name,
                entry.shape,
                p.name,
                p.value.shape()
            )));
        }
        if entry.offset != cursor || entry.bytes != 4 * p.value.len() {
            return Err(Error::Checkpoint(format!("tensor {} does not tile the blob", entry.name)));
        }
        cursor += entry.bytes;
    }
    if cursor != blob.len() {
        return Err(Error::Checkpoint(format!("layers cover {cursor} of {} blob bytes", blob.len())));
    }
    for (entry, p) in manifest.layers.iter().zip(model.params_mut().iter_mut()) {
        let bytes = &blob[entry.offset..entry.offset + entry.bytes];
        for (v, c) in p.value.data_mut().iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        }
    }
    Ok((model, manifest))
}

/// Loads a model ready for prediction; requires normalization stats.
pub fn load_checkpoint(stem: &Path) -> Result<TrainedModel> {
    let (model, manifest) = load_checkpoint_parts(stem)?;
    let stats = manifest
        .normalization
        .ok_or_else(|| Error::Checkpoint("checkpoint has no normalization stats; cannot predict".into()))?;
    stats.validate()?;
    Ok(TrainedModel { model, stats })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transposes_are_inverse() {
        let (ns, nt, nr) = (2, 3, 4);
        let block: Vec<f32> = (0..ns * nt * nr).map(|v| v as f32).collect();
        let tm = time_major_to_trace_major(&block, ns, nt, nr);
        assert_eq!(tm[(nr + 2) * nt + 1], block[(nt + 1) * nr + 2]);
        assert_eq!(trace_major_to_time_major(&tm, ns, nr, nt), block);
    }

    #[test]
    fn step_decay_schedule() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(0), 1e-4);
        assert_eq!(c.lr_at(19), 1e-4);
        assert_eq!(c.lr_at(20), 5e-5);
        assert_eq!(c.lr_at(45), 2.5e-5);
    }
}
