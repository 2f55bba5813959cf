//! DeepONet: a convolutional branch over shot gathers and a dense trunk over
//! query coordinates, combined by an inner product and a scaled sigmoid.
//!
//! Branch: UNet (strided convolutions down, transposed convolutions up with
//! channel-concatenated skips, the last one being the raw input) followed by
//! a convolution stack, a flatten and a fully connected head.

use onetfwi_tensor::{
    conv_out_len, conv_transpose_out_len, glorot_uniform, Graph, Padding, ParamSet, Tensor, Var,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Grid2D, Normalized, ShotGatherSet, VelocityField};
use crate::{Error, Result};

/// Lower and upper bounds of the scaled sigmoid output in m/s.
pub const OUTPUT_BOUNDS: (f32, f32) = (1490.0, 4510.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    /// Output channels.
    pub channels: usize,
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
}

const fn conv(channels: usize, kernel: [usize; 2], stride: [usize; 2]) -> ConvSpec {
    ConvSpec { channels, kernel, stride }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnetPadding {
    /// No padding; skips are center-cropped to the decoder size.
    Valid,
    /// Output size `ceil(len / stride)` down, `len * stride` up.
    Same,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchConfig {
    /// Average-pooling factor along time applied to the input (1 = none).
    pub time_pool: usize,
    pub unet_padding: UnetPadding,
    pub unet_down: Vec<ConvSpec>,
    pub unet_up: Vec<ConvSpec>,
    pub leaky_slope: f64,
    /// Largest per-axis size difference a skip crop may absorb.
    pub crop_budget: usize,
    pub cnn_stack: Vec<ConvSpec>,
    /// Width of the flattened stack output fed to the dense head.
    pub fcn_input: usize,
    /// Adaptive-pool target used when the stack output does not flatten to
    /// `fcn_input` directly.
    pub flatten_pool: [usize; 2],
    /// Dense widths after the flatten; the last one is the latent size `p`.
    pub fcn: Vec<usize>,
    pub final_activation: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrunkConfig {
    /// Dense widths after the 2-d coordinate input; the last one is `p`.
    pub widths: Vec<usize>,
    pub final_activation: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// `[sources, receivers, time samples]` of one input gather.
    pub input_shape: [usize; 3],
    pub branch: BranchConfig,
    pub trunk: TrunkConfig,
    pub output_bounds: (f32, f32),
    /// Adds a trainable scalar to the inner product.
    pub dot_bias: bool,
    /// Starts the branch head at zero so every prediction is the bound
    /// midpoint.
    pub zero_init_head: bool,
    /// Metres per unit of trunk coordinate.
    pub coordinate_scale: f64,
}

impl ModelConfig {
    /// The published network for 5 x 70 x 1000 gathers.
    pub fn full() -> Self {
        let k = [5, 9];
        let s = [2, 2];
        let c = [3, 9];
        Self {
            input_shape: [5, 70, 1000],
            branch: BranchConfig {
                time_pool: 1,
                unet_padding: UnetPadding::Valid,
                unet_down: vec![conv(8, k, s), conv(10, k, s), conv(12, k, s), conv(16, k, s)],
                unet_up: vec![conv(8, k, s), conv(12, k, s), conv(16, k, s), conv(20, k, s)],
                leaky_slope: 0.3,
                crop_budget: 16,
                cnn_stack: vec![
                    conv(32, c, [1, 1]),
                    conv(40, c, [1, 1]),
                    conv(48, c, [1, 1]),
                    conv(64, c, [1, 2]),
                    conv(64, c, [1, 2]),
                    conv(128, c, [2, 2]),
                    conv(128, c, [2, 2]),
                    conv(256, c, [2, 2]),
                    conv(256, c, [2, 2]),
                ],
                fcn_input: 4096,
                flatten_pool: [4, 4],
                fcn: vec![2000; 5],
                final_activation: false,
            },
            trunk: TrunkConfig { widths: vec![2000; 11], final_activation: true },
            output_bounds: OUTPUT_BOUNDS,
            dot_bias: false,
            zero_init_head: true,
            coordinate_scale: 690.0,
        }
    }

    /// Same topology scaled for single-core training: time axis pooled by
    /// 8, a short strided stack and a 128-wide latent space.
    pub fn desk() -> Self {
        let k = [5, 9];
        let s = [2, 2];
        Self {
            input_shape: [5, 70, 1000],
            branch: BranchConfig {
                time_pool: 8,
                unet_padding: UnetPadding::Valid,
                unet_down: vec![conv(8, k, s), conv(10, k, s), conv(12, k, s), conv(16, k, s)],
                unet_up: vec![conv(8, k, s), conv(12, k, s), conv(16, k, s), conv(20, k, s)],
                leaky_slope: 0.3,
                crop_budget: 16,
                cnn_stack: vec![conv(16, [3, 9], [2, 2]), conv(32, [3, 9], [2, 2]), conv(32, [3, 5], [2, 2])],
                fcn_input: 512,
                flatten_pool: [4, 4],
                fcn: vec![256, 256, 128],
                final_activation: false,
            },
            trunk: TrunkConfig { widths: vec![128; 4], final_activation: true },
            output_bounds: OUTPUT_BOUNDS,
            dot_bias: false,
            zero_init_head: true,
            coordinate_scale: 690.0,
        }
    }

    pub fn latent_width(&self) -> usize {
        self.branch.fcn.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.output_bounds;
        if !(lo < hi) {
            return Err(Error::InvalidArgument(format!("output bounds ({lo}, {hi}) are not increasing")));
        }
        if self.branch.fcn.is_empty() || self.trunk.widths.is_empty() {
            return Err(Error::InvalidArgument("branch and trunk need at least one dense layer".into()));
        }
        if self.latent_width() != *self.trunk.widths.last().unwrap() {
            return Err(Error::InvalidArgument(format!(
                "branch width {} differs from trunk width {}",
                self.latent_width(),
                self.trunk.widths.last().unwrap()
            )));
        }
        if self.branch.unet_up.len() != self.branch.unet_down.len() {
            return Err(Error::InvalidArgument("UNet needs as many up as down layers".into()));
        }
        if self.branch.time_pool == 0 || !(self.coordinate_scale > 0.0) {
            return Err(Error::InvalidArgument("time_pool and coordinate_scale must be positive".into()));
        }
        self.layer_shapes().map(|_| ())
    }

    /// `[channels, height, width]` after every branch stage, for one sample.
    pub fn layer_shapes(&self) -> Result<Vec<(String, [usize; 3])>> {
        let b = &self.branch;
        let [c0, h0, w0] = self.input_shape;
        let mut out = Vec::new();
        let mut cur = [c0, h0, w0 / b.time_pool];
        out.push(("input".to_string(), cur));
        let mut skips = vec![cur];
        for (i, spec) in b.unet_down.iter().enumerate() {
            let pad = down_padding(b.unet_padding, cur, spec);
            cur = conv_shape(&format!("down{i}"), cur, spec, pad)?;
            out.push((format!("down{i}"), cur));
            skips.push(cur);
        }
        skips.pop();
        for (i, spec) in b.unet_up.iter().enumerate() {
            let crop = up_crop(b.unet_padding, spec);
            let h = conv_transpose_out_len(cur[1], crop.top + crop.bottom, spec.kernel[0], spec.stride[0]);
            let w = conv_transpose_out_len(cur[2], crop.left + crop.right, spec.kernel[1], spec.stride[1]);
            let (Some(h), Some(w)) = (h, w) else {
                return Err(layer_err(&format!("up{i}"), "non-positive output"));
            };
            out.push((format!("up{i}"), [spec.channels, h, w]));
            let skip = skips.pop().expect("one skip per up layer");
            let (_, _, [th, tw]) = align_skip([h, w], [skip[1], skip[2]], b.crop_budget)
                .map_err(|e| layer_err(&format!("skip{i}"), e))?;
            cur = [spec.channels + skip[0], th, tw];
            out.push((format!("skip{i}"), cur));
        }
        for (i, spec) in b.cnn_stack.iter().enumerate() {
            cur = conv_shape(&format!("cnn{i}"), cur, spec, Padding::VALID)?;
            out.push((format!("cnn{i}"), cur));
        }
        let flat = match flatten_mode(cur, b)? {
            Flatten::Direct => cur,
            Flatten::Pool(ph, pw) => [cur[0], ph, pw],
        };
        out.push(("flatten".to_string(), flat));
        Ok(out)
    }

    /// Parameter count computed from the layer list.
    pub fn param_count(&self) -> Result<usize> {
        let shapes = self.layer_shapes()?;
        let channels = |name: &str| shapes.iter().find(|(n, _)| n == name).map(|(_, s)| s[0]).unwrap();
        let b = &self.branch;
        let mut total = 0;
        let mut cin = self.input_shape[0];
        for spec in &b.unet_down {
            total += spec.channels * cin * spec.kernel[0] * spec.kernel[1] + spec.channels;
            cin = spec.channels;
        }
        for (i, spec) in b.unet_up.iter().enumerate() {
            total += spec.channels * cin * spec.kernel[0] * spec.kernel[1] + spec.channels;
            cin = channels(&format!("skip{i}"));
        }
        for spec in &b.cnn_stack {
            total += spec.channels * cin * spec.kernel[0] * spec.kernel[1] + spec.channels;
            cin = spec.channels;
        }
        let mut fin = b.fcn_input;
        for &w in &b.fcn {
            total += fin * w + w;
            fin = w;
        }
        let mut fin = 2;
        for &w in &self.trunk.widths {
            total += fin * w + w;
            fin = w;
        }
        Ok(total + usize::from(self.dot_bias))
    }
}

fn layer_err(layer: &str, msg: impl std::fmt::Display) -> Error {
    Error::InvalidArgument(format!("layer {layer}: {msg}"))
}

fn down_padding(mode: UnetPadding, shape: [usize; 3], spec: &ConvSpec) -> Padding {
    match mode {
        UnetPadding::Valid => Padding::VALID,
        UnetPadding::Same => Padding::same(
            shape[1],
            shape[2],
            (spec.kernel[0], spec.kernel[1]),
            (spec.stride[0], spec.stride[1]),
        ),
    }
}

fn up_crop(mode: UnetPadding, spec: &ConvSpec) -> Padding {
    match mode {
        UnetPadding::Valid => Padding::VALID,
        UnetPadding::Same => Padding::same_transpose((spec.kernel[0], spec.kernel[1]), (spec.stride[0], spec.stride[1])),
    }
}

fn conv_shape(layer: &str, shape: [usize; 3], spec: &ConvSpec, pad: Padding) -> Result<[usize; 3]> {
    let h = conv_out_len(shape[1], pad.top + pad.bottom, spec.kernel[0], spec.stride[0]);
    let w = conv_out_len(shape[2], pad.left + pad.right, spec.kernel[1], spec.stride[1]);
    match (h, w) {
        (Some(h), Some(w)) => Ok([spec.channels, h, w]),
        _ => Err(layer_err(layer, format!("input {}x{} too small for kernel {:?}", shape[1], shape[2], spec.kernel))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Flatten {
    Direct,
    Pool(usize, usize),
}

fn flatten_mode(shape: [usize; 3], b: &BranchConfig) -> Result<Flatten> {
    let [c, h, w] = shape;
    if c * h * w == b.fcn_input {
        return Ok(Flatten::Direct);
    }
    let [ph, pw] = b.flatten_pool;
    if c * ph * pw == b.fcn_input {
        return Ok(Flatten::Pool(ph, pw));
    }
    Err(layer_err(
        "flatten",
        format!("stack output {c}x{h}x{w} flattens neither directly nor after pooling to {ph}x{pw} into {}", b.fcn_input),
    ))
}

/// Center-crop plan making two spatial shapes equal: returns the
/// `(top, left)` offsets for `a` and `b` and the common size.
pub fn align_skip(a: [usize; 2], b: [usize; 2], budget: usize) -> Result<([usize; 2], [usize; 2], [usize; 2])> {
    let mut off_a = [0; 2];
    let mut off_b = [0; 2];
    let mut size = [0; 2];
    for k in 0..2 {
        let d = a[k].abs_diff(b[k]);
        if d > budget {
            return Err(Error::Shape {
                context: format!("skip alignment (difference {d} exceeds crop budget {budget})"),
                expected: b.to_vec(),
                got: a.to_vec(),
            });
        }
        size[k] = a[k].min(b[k]);
        off_a[k] = (a[k] - size[k]) / 2;
        off_b[k] = (b[k] - size[k]) / 2;
    }
    Ok((off_a, off_b, size))
}

/// Trunk query points in model units, row-major over `[depth][x]` for full
/// fields.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateGrid {
    /// `(x, depth)` pairs divided by `scale`.
    pub points: Vec<[f32; 2]>,
    pub scale: f64,
}

impl CoordinateGrid {
    pub fn for_grid(grid: &Grid2D, scale: f64) -> Self {
        let mut points = Vec::with_capacity(grid.len());
        for d in 0..grid.ny {
            for x in 0..grid.nx {
                points.push([(x as f64 * grid.dx() / scale) as f32, (d as f64 * grid.dy() / scale) as f32]);
            }
        }
        Self { points, scale }
    }

    pub fn from_metres(points: &[(f64, f64)], scale: f64) -> Self {
        Self { points: points.iter().map(|&(x, d)| [(x / scale) as f32, (d / scale) as f32]).collect(), scale }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn tensor(&self) -> Tensor<f32> {
        if self.points.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            tracing::warn!("trunk coordinates outside [0, 1]^2; extrapolating");
        }
        Tensor::new(vec![self.points.len(), 2], self.points.iter().flatten().copied().collect()).expect("n x 2")
    }
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    w: usize,
    b: usize,
}

/// Parameters plus the layer bookkeeping of one DeepONet.
#[derive(Clone, Debug)]
pub struct DeepONet {
    config: ModelConfig,
    params: ParamSet<f32>,
    down: Vec<Layer>,
    up: Vec<Layer>,
    stack: Vec<Layer>,
    branch_fc: Vec<Layer>,
    trunk_fc: Vec<Layer>,
    dot_bias: Option<usize>,
    flatten: Flatten,
}

/// Parameters bound to a graph, in [`ParamSet`] order.
pub struct BoundParams(pub Vec<Var>);

impl DeepONet {
    /// Glorot-uniform kernels and zero biases from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let shapes = config.layer_shapes()?;
        let channels_of = |name: &str| shapes.iter().find(|(n, _)| n == name).map(|(_, s)| s[0]).unwrap();
        let mut add_conv = |params: &mut ParamSet<f32>, name: String, kshape: [usize; 4], cout: usize, fan: (usize, usize)| {
            let w = params.push(format!("{name}.kernel"), glorot_uniform(kshape.to_vec(), fan.0, fan.1, &mut rng));
            let b = params.push(format!("{name}.bias"), Tensor::zeros(vec![cout]));
            Layer { w, b }
        };
        let b = &config.branch;
        let mut cin = config.input_shape[0];
        let mut down = Vec::new();
        for (i, s) in b.unet_down.iter().enumerate() {
            let rf = s.kernel[0] * s.kernel[1];
            down.push(add_conv(&mut params, format!("branch.down{i}"), [s.channels, cin, s.kernel[0], s.kernel[1]], s.channels, (cin * rf, s.channels * rf)));
            cin = s.channels;
        }
        let mut up = Vec::new();
        for (i, s) in b.unet_up.iter().enumerate() {
            let rf = s.kernel[0] * s.kernel[1];
            up.push(add_conv(&mut params, format!("branch.up{i}"), [cin, s.channels, s.kernel[0], s.kernel[1]], s.channels, (cin * rf, s.channels * rf)));
            cin = channels_of(&format!("skip{i}"));
        }
        let mut stack = Vec::new();
        for (i, s) in b.cnn_stack.iter().enumerate() {
            let rf = s.kernel[0] * s.kernel[1];
            stack.push(add_conv(&mut params, format!("branch.cnn{i}"), [s.channels, cin, s.kernel[0], s.kernel[1]], s.channels, (cin * rf, s.channels * rf)));
            cin = s.channels;
        }
        let mut dense = |params: &mut ParamSet<f32>, name: String, fin: usize, fout: usize, zero: bool| {
            let wt = if zero { Tensor::zeros(vec![fin, fout]) } else { glorot_uniform(vec![fin, fout], fin, fout, &mut rng) };
            let w = params.push(format!("{name}.weight"), wt);
            let b = params.push(format!("{name}.bias"), Tensor::zeros(vec![fout]));
            Layer { w, b }
        };
        let mut branch_fc = Vec::new();
        let mut fin = b.fcn_input;
        for (i, &w) in b.fcn.iter().enumerate() {
            let zero = config.zero_init_head && i + 1 == b.fcn.len();
            branch_fc.push(dense(&mut params, format!("branch.fc{i}"), fin, w, zero));
            fin = w;
        }
        let mut trunk_fc = Vec::new();
        let mut fin = 2;
        for (i, &w) in config.trunk.widths.iter().enumerate() {
            trunk_fc.push(dense(&mut params, format!("trunk.fc{i}"), fin, w, false));
            fin = w;
        }
        let dot_bias = config.dot_bias.then(|| params.push("dot.bias", Tensor::zeros(vec![1])));
        let last = shapes.iter().rev().find(|(n, _)| n != "flatten").map(|(_, s)| *s).unwrap();
        let flatten = flatten_mode(last, b)?;
        Ok(Self { config, params, down, up, stack, branch_fc, trunk_fc, dot_bias, flatten })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<f32> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Registers every parameter on `g`, as differentiable leaves when
    /// `trainable`.
    pub fn bind<'a>(&'a self, g: &mut Graph<'a, f32>, trainable: bool) -> BoundParams {
        BoundParams(
            self.params
                .iter()
                .map(|p| if trainable { g.param(&p.value) } else { g.constant_ref(&p.value) })
                .collect(),
        )
    }

    /// Branch output `[batch, p]` for input `[batch, sources, receivers, time]`.
    pub fn branch_graph(&self, g: &mut Graph<'_, f32>, p: &BoundParams, x: Var) -> Result<Var> {
        let b = &self.config.branch;
        let shape = g.value(x).shape().to_vec();
        let expect = self.config.input_shape;
        if shape.len() != 4 || shape[1..] != expect[..] {
            return Err(Error::Shape { context: "branch input".into(), expected: expect.to_vec(), got: shape });
        }
        let mut h = x;
        if b.time_pool > 1 {
            h = g.adaptive_avg_pool2d(h, shape[2], shape[3] / b.time_pool)?;
        }
        let mut skips = vec![h];
        for (spec, l) in b.unet_down.iter().zip(&self.down) {
            let s = g.value(h).shape();
            let pad = down_padding(b.unet_padding, [s[1], s[2], s[3]], spec);
            h = g.conv2d(h, p.0[l.w], Some(p.0[l.b]), (spec.stride[0], spec.stride[1]), pad)?;
            h = g.relu(h)?;
            skips.push(h);
        }
        skips.pop();
        let slope = b.leaky_slope as f32;
        for (i, (spec, l)) in b.unet_up.iter().zip(&self.up).enumerate() {
            let t = g.conv2d_transpose(h, p.0[l.w], Some(p.0[l.b]), (spec.stride[0], spec.stride[1]), up_crop(b.unet_padding, spec))?;
            let t = g.leaky_relu(t, slope)?;
            let skip = skips.pop().expect("one skip per up layer");
            let (ts, ss) = (g.value(t).shape().to_vec(), g.value(skip).shape().to_vec());
            let (oa, ob, [hh, ww]) =
                align_skip([ts[2], ts[3]], [ss[2], ss[3]], b.crop_budget).map_err(|e| layer_err(&format!("skip{i}"), e))?;
            let t = g.crop(t, oa[0], oa[1], hh, ww)?;
            let skip = g.crop(skip, ob[0], ob[1], hh, ww)?;
            h = g.concat_channels(t, skip)?;
        }
        for (spec, l) in b.cnn_stack.iter().zip(&self.stack) {
            h = g.conv2d(h, p.0[l.w], Some(p.0[l.b]), (spec.stride[0], spec.stride[1]), Padding::VALID)?;
            h = g.relu(h)?;
        }
        if let Flatten::Pool(ph, pw) = self.flatten {
            h = g.adaptive_avg_pool2d(h, ph, pw)?;
        }
        let n = g.value(h).shape()[0];
        h = g.reshape(h, vec![n, b.fcn_input])?;
        let last = self.branch_fc.len() - 1;
        for (i, l) in self.branch_fc.iter().enumerate() {
            h = g.dense(h, p.0[l.w], Some(p.0[l.b]))?;
            if i < last || b.final_activation {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Trunk output `[points, p]` for coordinates `[points, 2]`.
    pub fn trunk_graph(&self, g: &mut Graph<'_, f32>, p: &BoundParams, coords: Var) -> Result<Var> {
        let mut h = coords;
        let last = self.trunk_fc.len() - 1;
        for (i, l) in self.trunk_fc.iter().enumerate() {
            h = g.dense(h, p.0[l.w], Some(p.0[l.b]))?;
            if i < last || self.config.trunk.final_activation {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Pre-sigmoid inner product `[batch, points]`.
    pub fn raw_graph(&self, g: &mut Graph<'_, f32>, p: &BoundParams, x: Var, coords: Var) -> Result<Var> {
        let br = self.branch_graph(g, p, x)?;
        let tr = self.trunk_graph(g, p, coords)?;
        let mut raw = g.matmul_nt(br, tr)?;
        if let Some(i) = self.dot_bias {
            raw = g.add_scalar(raw, p.0[i])?;
        }
        Ok(raw)
    }

    /// Velocities `[batch, points]` strictly inside the output bounds.
    pub fn velocity_graph(&self, g: &mut Graph<'_, f32>, p: &BoundParams, x: Var, coords: Var) -> Result<Var> {
        let raw = self.raw_graph(g, p, x, coords)?;
        let (lo, hi) = self.config.output_bounds;
        Ok(g.scaled_sigmoid(raw, lo, hi)?)
    }

    pub fn branch_forward(&self, inputs: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::new().with_finite_check(false);
        let p = self.bind(&mut g, false);
        let x = g.constant_ref(inputs);
        let out = self.branch_graph(&mut g, &p, x)?;
        Ok(g.value(out).clone())
    }

    pub fn trunk_forward(&self, coords: &CoordinateGrid) -> Result<Tensor<f32>> {
        let mut g = Graph::new().with_finite_check(false);
        let p = self.bind(&mut g, false);
        let c = g.constant(coords.tensor());
        let out = self.trunk_graph(&mut g, &p, c)?;
        Ok(g.value(out).clone())
    }

    /// Velocities `[batch, points]` for a batch of preprocessed gathers.
    pub fn predict(&self, inputs: &Tensor<f32>, coords: &CoordinateGrid) -> Result<Tensor<f32>> {
        let mut g = Graph::new().with_finite_check(false);
        let p = self.bind(&mut g, false);
        let x = g.constant_ref(inputs);
        let c = g.constant(coords.tensor());
        let out = self.velocity_graph(&mut g, &p, x, c)?;
        Ok(g.value(out).clone())
    }

    /// Full-field prediction on `grid` for one preprocessed gather.
    pub fn predict_field(&self, gather: &ShotGatherSet<Normalized>, grid: &Grid2D) -> Result<VelocityField> {
        let shape = gather.shape();
        let input = Tensor::new(vec![1, shape[0], shape[1], shape[2]], gather.data().to_vec())?;
        let coords = CoordinateGrid::for_grid(grid, self.config.coordinate_scale);
        let out = self.predict(&input, &coords)?;
        VelocityField::new(*grid, out.into_data())
    }

    pub fn coordinates(&self, grid: &Grid2D) -> CoordinateGrid {
        CoordinateGrid::for_grid(grid, self.config.coordinate_scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn align_skip_examples() {
        assert_eq!(align_skip([6, 118], [6, 118], 8).unwrap(), ([0, 0], [0, 0], [6, 118]));
        assert_eq!(align_skip([5, 117], [6, 118], 8).unwrap(), ([0, 0], [0, 0], [5, 117]));
        assert_eq!(align_skip([61, 985], [70, 1000], 16).unwrap(), ([0, 0], [4, 7], [61, 985]));
        assert!(align_skip([61, 985], [70, 1000], 8).is_err());
    }
}
