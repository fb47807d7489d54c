//! Stage-1 and stage-2 networks, their losses, checkpoints, and op counts.
//!
//! Stage 1 runs on horizontal `input_w x input_h` strips of the frame: three
//! conv/relu/maxpool blocks form a three-level pyramid, each level is reduced
//! to `lateral` channels by a 1x1 conv, resized to the map extent and
//! concatenated, and two 3x3 convs produce presence and paradigm logits.
//! Stage 2 is a stride-1 fully convolutional net on `side x side` crops whose
//! single-channel output keeps the crop resolution.

pub mod train;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use train::{train, LossRecord, TrainConfig, TrainOutcome};

use crate::error::{Error, Result};
use crate::tensor::kernels::ConvGeometry;
use crate::tensor::serialize::{self, Layer, LayerKind};
use crate::tensor::{Graph, NodeId, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage1Config {
    pub image_w: usize,
    pub image_h: usize,
    pub input_w: usize,
    pub input_h: usize,
    /// Vertical step between consecutive strips.
    pub strip_stride: usize,
    pub k_w: usize,
    pub k_h: usize,
    pub backbone: [usize; 3],
    pub lateral: usize,
    pub head_hidden: usize,
    /// Coarse descriptor radius `u'`, map cells.
    pub radius: f64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            image_w: 320,
            image_h: 240,
            input_w: 320,
            input_h: 96,
            strip_stride: 72,
            k_w: 4,
            k_h: 4,
            backbone: [8, 16, 32],
            lateral: 8,
            head_hidden: 16,
            radius: 3.0,
        }
    }
}

impl Stage1Config {
    pub fn map_w(&self) -> usize {
        self.input_w / self.k_w
    }

    pub fn map_h(&self) -> usize {
        self.input_h / self.k_h
    }

    /// Concatenated pyramid channels `c_1`.
    pub fn concat_channels(&self) -> usize {
        3 * self.lateral
    }

    /// Top rows of the strips covering the frame; the last strip is flush with the bottom edge.
    pub fn strip_offsets(&self) -> Vec<usize> {
        let last = self.image_h.saturating_sub(self.input_h);
        let mut out: Vec<usize> = (0..=last).step_by(self.strip_stride.max(1)).collect();
        if out.last() != Some(&last) {
            out.push(last);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k_w == 0
            || self.k_h == 0
            || !self.input_w.is_multiple_of(self.k_w)
            || !self.input_h.is_multiple_of(self.k_h)
        {
            return bad(format!(
                "strip {}x{} is not divisible by k = ({}, {})",
                self.input_w, self.input_h, self.k_w, self.k_h
            ));
        }
        if !self.input_w.is_multiple_of(8) || !self.input_h.is_multiple_of(8) {
            return bad(format!(
                "strip {}x{} must be divisible by 8 for three pools",
                self.input_w, self.input_h
            ));
        }
        if self.input_w > self.image_w || self.input_h > self.image_h || self.strip_stride == 0 {
            return bad("strip must fit the image and advance by at least one row".into());
        }
        if self.backbone.contains(&0) || self.lateral == 0 || self.head_hidden == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.radius.is_nan() || self.radius < 1.0 {
            return bad(format!("coarse radius {} must be at least one map cell", self.radius));
        }
        Ok(())
    }

    /// `(Cout, Cin, k, pad)` per conv in forward order.
    fn layer_shapes(&self) -> Vec<(usize, usize, usize, usize)> {
        let [a, b, c] = self.backbone;
        let l = self.lateral;
        vec![
            (a, 3, 3, 1),
            (b, a, 3, 1),
            (c, b, 3, 1),
            (l, a, 1, 0),
            (l, b, 1, 0),
            (l, c, 1, 0),
            (self.head_hidden, 3 * l, 3, 1),
            (2, self.head_hidden, 3, 1),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage2Config {
    /// Crop side `S`; the output map has the same extent.
    pub side: usize,
    pub channels: [usize; 3],
    pub kernel: usize,
    /// Fine descriptor radius `l'`, pixels.
    pub radius: f64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            side: 25,
            channels: [8, 16, 8],
            kernel: 3,
            radius: 3.0,
        }
    }
}

impl Stage2Config {
    pub fn validate(&self, stage1: &Stage1Config) -> Result<()> {
        if self.side != 25 {
            return Err(Error::Config(format!("stage-2 side must be 25, got {}", self.side)));
        }
        if self.kernel.is_multiple_of(2) || self.channels.contains(&0) {
            return Err(Error::Config("stage-2 kernel must be odd and channels positive".into()));
        }
        let coarse_px = stage1.radius * stage1.k_w.max(stage1.k_h) as f64;
        crate::descriptor::CircularDescriptor::check_pair(coarse_px, self.radius)
            .map_err(|e| Error::Config(e.to_string()))
    }

    fn layer_shapes(&self) -> Vec<(usize, usize, usize, usize)> {
        let [a, b, c] = self.channels;
        let (k, p) = (self.kernel, self.kernel / 2);
        vec![(a, 3, k, p), (b, a, k, p), (c, b, k, p), (1, c, 1, 0)]
    }
}

/// Conv parameters of one stage, `[w0, b0, w1, b1, ...]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StageParams {
    pub tensors: Vec<Tensor>,
    pads: Vec<usize>,
}

impl StageParams {
    fn init(shapes: &[(usize, usize, usize, usize)], rng: &mut ChaCha8Rng) -> Self {
        let mut tensors = Vec::new();
        for &(co, ci, k, _) in shapes {
            let std = (2.0 / (ci * k * k) as f32).sqrt();
            tensors.push(Tensor::randn(&[co, ci, k, k], std, rng));
            tensors.push(Tensor::zeros(&[co]));
        }
        Self {
            tensors,
            pads: shapes.iter().map(|s| s.3).collect(),
        }
    }

    fn zeros(shapes: &[(usize, usize, usize, usize)]) -> Self {
        let mut tensors = Vec::new();
        for &(co, ci, k, _) in shapes {
            tensors.push(Tensor::zeros(&[co, ci, k, k]));
            tensors.push(Tensor::zeros(&[co]));
        }
        Self {
            tensors,
            pads: shapes.iter().map(|s| s.3).collect(),
        }
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Registers every tensor as a trainable leaf.
    pub fn bind(&self, g: &mut Graph) -> Result<Vec<NodeId>> {
        self.tensors.iter().map(|t| g.param(t)).collect()
    }

    /// Registers every tensor as a constant.
    pub fn bind_frozen(&self, g: &mut Graph) -> Result<Vec<NodeId>> {
        self.tensors.iter().map(|t| g.input(t.clone())).collect()
    }

    fn conv(&self, g: &mut Graph, ids: &[NodeId], layer: usize, x: NodeId) -> Result<NodeId> {
        let p = self.pads[layer];
        g.conv2d(x, ids[2 * layer], ids[2 * layer + 1], (1, 1), (p, p))
    }

    fn last_weight_mut(&mut self) -> &mut Tensor {
        let n = self.tensors.len();
        &mut self.tensors[n - 2]
    }

    fn last_bias_mut(&mut self) -> &mut Tensor {
        self.tensors.last_mut().expect("stage has layers")
    }
}

fn check_input(op: &'static str, x: &Tensor, h: usize, w: usize) -> Result<()> {
    let s = x.shape();
    if s.len() != 4 || s[1] != 3 || s[2] != h || s[3] != w {
        return Err(Error::ShapeMismatch {
            op,
            lhs: s.to_vec(),
            rhs: vec![s.first().copied().unwrap_or(1), 3, h, w],
        });
    }
    Ok(())
}

/// Records stage 1 on `input` `[N, 3, input_h, input_w]`; returns `[N, 2, map_h, map_w]` logits.
pub fn stage1_graph(
    cfg: &Stage1Config,
    params: &StageParams,
    ids: &[NodeId],
    g: &mut Graph,
    input: NodeId,
) -> Result<NodeId> {
    check_input("stage1_forward", g.value(input), cfg.input_h, cfg.input_w)?;
    let (mh, mw) = (cfg.map_h(), cfg.map_w());
    let mut x = input;
    let mut levels = Vec::new();
    for layer in 0..3 {
        let c = params.conv(g, ids, layer, x)?;
        let r = g.relu(c)?;
        x = g.max_pool2d(r, 2, 2)?;
        let lat = params.conv(g, ids, 3 + layer, x)?;
        levels.push(g.bilinear_resize(lat, mh, mw)?);
    }
    let cat = g.concat_channels(&levels)?;
    let h = params.conv(g, ids, 6, cat)?;
    let h = g.relu(h)?;
    params.conv(g, ids, 7, h)
}

/// Records stage 2 on `input` `[N, 3, S, S]`; returns `[N, 1, S, S]` logits.
pub fn stage2_graph(
    cfg: &Stage2Config,
    params: &StageParams,
    ids: &[NodeId],
    g: &mut Graph,
    input: NodeId,
) -> Result<NodeId> {
    check_input("stage2_forward", g.value(input), cfg.side, cfg.side)?;
    let mut x = input;
    for layer in 0..3 {
        let c = params.conv(g, ids, layer, x)?;
        x = g.relu(c)?;
    }
    params.conv(g, ids, 3, x)
}

/// `sum((sigmoid(logits) - target)^2)`.
pub fn stage_loss(g: &mut Graph, logits: NodeId, target: &Tensor) -> Result<NodeId> {
    let p = g.sigmoid(logits)?;
    g.sse_loss(p, target)
}

/// Stage-1 loss over both channels of an unbatched or batched map.
pub fn loss_stage1(pred_logits: &Tensor, target: &Tensor) -> Result<f64> {
    eval_loss(pred_logits, target)
}

/// Stage-2 loss over the single refinement channel.
pub fn loss_stage2(pred_logits: &Tensor, target: &Tensor) -> Result<f64> {
    eval_loss(pred_logits, target)
}

fn eval_loss(pred_logits: &Tensor, target: &Tensor) -> Result<f64> {
    let mut g = Graph::inference();
    let p = g.input(pred_logits.clone())?;
    let l = stage_loss(&mut g, p, target)?;
    Ok(g.scalar(l))
}

/// Both stages with their configurations.
#[derive(Clone, Debug, PartialEq)]
pub struct CascadeModel {
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub params1: StageParams,
    pub params2: StageParams,
}

/// Serialized size limit for a checkpoint.
pub const MAX_PAYLOAD_BYTES: usize = 128 * 1024;

/// Logit the output biases start from, so initial responses sit below the retention threshold.
const INITIAL_OUTPUT_BIAS: f32 = -2.0;

/// Shrinks the He-initialized output weights so every initial logit starts near the bias.
const OUTPUT_WEIGHT_SCALE: f32 = 0.1;

impl CascadeModel {
    pub fn new(stage1: Stage1Config, stage2: Stage2Config, seed: u64) -> Result<Self> {
        stage1.validate()?;
        stage2.validate(&stage1)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params1 = StageParams::init(&stage1.layer_shapes(), &mut rng);
        let mut params2 = StageParams::init(&stage2.layer_shapes(), &mut rng);
        for p in [&mut params1, &mut params2] {
            p.last_bias_mut().data_mut().fill(INITIAL_OUTPUT_BIAS);
            p.last_weight_mut()
                .data_mut()
                .iter_mut()
                .for_each(|w| *w *= OUTPUT_WEIGHT_SCALE);
        }
        Ok(Self {
            stage1,
            stage2,
            params1,
            params2,
        })
    }

    /// Model with every weight and bias zero.
    pub fn zeroed(stage1: Stage1Config, stage2: Stage2Config) -> Result<Self> {
        stage1.validate()?;
        stage2.validate(&stage1)?;
        Ok(Self {
            params1: StageParams::zeros(&stage1.layer_shapes()),
            params2: StageParams::zeros(&stage2.layer_shapes()),
            stage1,
            stage2,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params1.numel() + self.params2.numel()
    }

    /// Stage-1 logits `[N, 2, map_h, map_w]` for strips `[N, 3, input_h, input_w]`.
    pub fn stage1_forward(&self, strips: &Tensor) -> Result<Tensor> {
        let mut g = Graph::inference();
        let ids = self.params1.bind_frozen(&mut g)?;
        let x = g.input(strips.clone())?;
        let y = stage1_graph(&self.stage1, &self.params1, &ids, &mut g, x)?;
        Ok(g.value(y).clone())
    }

    /// Stage-2 logits `[N, 1, S, S]` for crops `[N, 3, S, S]`.
    pub fn stage2_forward(&self, crops: &Tensor) -> Result<Tensor> {
        let mut g = Graph::inference();
        let ids = self.params2.bind_frozen(&mut g)?;
        let x = g.input(crops.clone())?;
        let y = stage2_graph(&self.stage2, &self.params2, &ids, &mut g, x)?;
        Ok(g.value(y).clone())
    }

    fn config_record(&self) -> Vec<f32> {
        let s1 = &self.stage1;
        let s2 = &self.stage2;
        [
            s1.image_w,
            s1.image_h,
            s1.input_w,
            s1.input_h,
            s1.strip_stride,
            s1.k_w,
            s1.k_h,
            s1.backbone[0],
            s1.backbone[1],
            s1.backbone[2],
            s1.lateral,
            s1.head_hidden,
        ]
        .iter()
        .map(|&v| v as f32)
        .chain([s1.radius as f32])
        .chain([s2.side, s2.channels[0], s2.channels[1], s2.channels[2], s2.kernel].map(|v| v as f32))
        .chain([s2.radius as f32])
        .collect()
    }

    fn from_config_record(r: &[f32]) -> Result<(Stage1Config, Stage2Config)> {
        if r.len() != 19 || r.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Format(format!(
                "config record has {} fields, expected 19",
                r.len()
            )));
        }
        let u = |i: usize| r[i] as usize;
        let s1 = Stage1Config {
            image_w: u(0),
            image_h: u(1),
            input_w: u(2),
            input_h: u(3),
            strip_stride: u(4),
            k_w: u(5),
            k_h: u(6),
            backbone: [u(7), u(8), u(9)],
            lateral: u(10),
            head_hidden: u(11),
            radius: r[12] as f64,
        };
        let s2 = Stage2Config {
            side: u(13),
            channels: [u(14), u(15), u(16)],
            kernel: u(17),
            radius: r[18] as f64,
        };
        Ok((s1, s2))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut layers = vec![Layer {
            kind: LayerKind::Config,
            tensor: Tensor::new(vec![19], self.config_record()).expect("19 fields"),
        }];
        for (i, t) in self.params1.tensors.iter().chain(&self.params2.tensors).enumerate() {
            let kind = if i % 2 == 0 {
                LayerKind::ConvWeight
            } else {
                LayerKind::ConvBias
            };
            layers.push(Layer {
                kind,
                tensor: t.clone(),
            });
        }
        serialize::encode(&layers)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let layers = serialize::decode(bytes)?;
        let (first, rest) = layers
            .split_first()
            .ok_or_else(|| Error::Format("checkpoint has no layers".into()))?;
        if first.kind != LayerKind::Config {
            return Err(Error::Format("checkpoint does not start with a config record".into()));
        }
        let (s1, s2) = Self::from_config_record(first.tensor.data())?;
        let mut model = Self::zeroed(s1, s2).map_err(|e| Error::Format(format!("stored config invalid: {e}")))?;
        let expected = model.params1.tensors.len() + model.params2.tensors.len();
        if rest.len() != expected {
            return Err(Error::Format(format!(
                "{} parameter layers, expected {expected}",
                rest.len()
            )));
        }
        let n1 = model.params1.tensors.len();
        for (i, layer) in rest.iter().enumerate() {
            let slot = if i < n1 {
                &mut model.params1.tensors[i]
            } else {
                &mut model.params2.tensors[i - n1]
            };
            let kind = if i % 2 == 0 {
                LayerKind::ConvWeight
            } else {
                LayerKind::ConvBias
            };
            if layer.kind != kind || layer.tensor.shape() != slot.shape() {
                return Err(Error::Format(format!(
                    "layer {i}: found {:?} {:?}, expected {kind:?} {:?}",
                    layer.kind,
                    layer.tensor.shape(),
                    slot.shape()
                )));
            }
            *slot = layer.tensor.clone();
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Multiply-accumulate counts of convolution layers.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexityReport {
    /// Same backbone and head applied to the whole frame with a full-resolution map.
    pub single_stage_macs: u64,
    pub stage1_macs_per_strip: u64,
    pub strips: usize,
    pub stage2_macs_per_proposal: u64,
}

impl ComplexityReport {
    pub fn cascade_macs(&self, proposals: usize) -> u64 {
        self.strips as u64 * self.stage1_macs_per_strip + proposals as u64 * self.stage2_macs_per_proposal
    }

    /// Largest proposal count at which the cascade costs less than `fraction` of the single-stage detector.
    pub fn max_proposals_within(&self, fraction: f64) -> Option<usize> {
        let budget = self.single_stage_macs as f64 * fraction;
        let base = (self.strips as u64 * self.stage1_macs_per_strip) as f64;
        if base >= budget {
            return None;
        }
        Some(((budget - base) / self.stage2_macs_per_proposal as f64).ceil() as usize - 1)
    }
}

fn conv_macs(shapes: &[(usize, usize, usize, usize)], extents: &[(usize, usize)]) -> u64 {
    shapes
        .iter()
        .zip(extents)
        .map(|(&(co, ci, k, p), &(h, w))| {
            ConvGeometry::new(&[1, ci, h, w], &[co, ci, k, k], (1, 1), (p, p))
                .expect("layer geometry")
                .macs()
        })
        .sum()
}

fn stage1_macs(cfg: &Stage1Config, h: usize, w: usize, map: (usize, usize)) -> u64 {
    let levels = [(h, w), (h / 2, w / 2), (h / 4, w / 4)];
    let pooled = [(h / 2, w / 2), (h / 4, w / 4), (h / 8, w / 8)];
    let extents = [
        levels[0], levels[1], levels[2], pooled[0], pooled[1], pooled[2], map, map,
    ];
    conv_macs(&cfg.layer_shapes(), &extents)
}

pub fn complexity_report(model: &CascadeModel) -> ComplexityReport {
    let s1 = &model.stage1;
    let s2 = &model.stage2;
    let side = s2.side;
    ComplexityReport {
        single_stage_macs: stage1_macs(s1, s1.image_h, s1.image_w, (s1.image_h, s1.image_w)),
        stage1_macs_per_strip: stage1_macs(s1, s1.input_h, s1.input_w, (s1.map_h(), s1.map_w())),
        strips: s1.strip_offsets().len(),
        stage2_macs_per_proposal: conv_macs(&s2.layer_shapes(), &[(side, side); 4]),
    }
}
