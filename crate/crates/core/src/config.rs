//! Flat `key=value` configuration covering every model, training, pipeline
//! and evaluation default.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::MatchCriterion;
use crate::model::train::TrainConfig;
use crate::model::{Stage1Config, Stage2Config};
use crate::pipeline::PipelineConfig;

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunConfig {
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub train: TrainConfig,
    pub pipeline: PipelineConfig,
    pub eval: MatchCriterion,
}

type Getter = fn(&RunConfig) -> String;
type Setter = fn(&mut RunConfig, &str) -> std::result::Result<(), String>;

pub struct Key {
    pub name: &'static str,
    pub doc: &'static str,
    get: Getter,
    set: Setter,
}

fn parse<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.trim().parse::<T>().map_err(|e| e.to_string())
}

fn parse_triple(v: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<&str> = v.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated integers, got `{v}`"));
    }
    let mut out = [0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = parse(p)?;
    }
    Ok(out)
}

fn fmt_triple(t: [usize; 3]) -> String {
    format!("{},{},{}", t[0], t[1], t[2])
}

macro_rules! key {
    ($name:literal, $doc:literal, $($field:ident).+) => {
        Key {
            name: $name,
            doc: $doc,
            get: |c| c.$($field).+.to_string(),
            set: |c, v| {
                c.$($field).+ = parse(v)?;
                Ok(())
            },
        }
    };
}

pub const KEYS: &[Key] = &[
    key!("stage1.input_w", "strip width fed to stage 1", stage1.input_w),
    key!("stage1.input_h", "strip height fed to stage 1", stage1.input_h),
    key!(
        "stage1.strip_stride",
        "vertical step between strips",
        stage1.strip_stride
    ),
    key!("stage1.k_w", "horizontal downscale of the stage-1 map", stage1.k_w),
    key!("stage1.k_h", "vertical downscale of the stage-1 map", stage1.k_h),
    Key {
        name: "stage1.backbone",
        doc: "channels of the three pyramid levels",
        get: |c| fmt_triple(c.stage1.backbone),
        set: |c, v| {
            c.stage1.backbone = parse_triple(v)?;
            Ok(())
        },
    },
    key!("stage1.lateral", "channels of each lateral projection", stage1.lateral),
    key!(
        "stage1.head_hidden",
        "hidden channels of the stage-1 head",
        stage1.head_hidden
    ),
    key!("stage1.radius", "coarse descriptor radius, map cells", stage1.radius),
    key!("stage2.side", "refinement crop side, pixels", stage2.side),
    Key {
        name: "stage2.channels",
        doc: "channels of the three stage-2 convolutions",
        get: |c| fmt_triple(c.stage2.channels),
        set: |c, v| {
            c.stage2.channels = parse_triple(v)?;
            Ok(())
        },
    },
    key!("stage2.kernel", "stage-2 kernel size (odd)", stage2.kernel),
    key!("stage2.radius", "fine descriptor radius, pixels", stage2.radius),
    key!("train.epochs", "passes over the training split", train.epochs),
    Key {
        name: "train.max_steps",
        doc: "stop after this many steps (0 = no limit)",
        get: |c| c.train.max_steps.unwrap_or(0).to_string(),
        set: |c, v| {
            let n: usize = parse(v)?;
            c.train.max_steps = (n > 0).then_some(n);
            Ok(())
        },
    },
    key!("train.batch", "strips per step", train.batch),
    key!(
        "train.crops_per_sample",
        "stage-2 crops per sample per step",
        train.crops_per_sample
    ),
    key!("train.lr1", "stage-1 learning rate", train.lr1),
    key!("train.lr2", "stage-2 learning rate", train.lr2),
    key!("train.momentum", "SGD momentum", train.momentum),
    key!(
        "train.clip_norm",
        "per-stage gradient norm cap (0 = off)",
        train.clip_norm
    ),
    key!(
        "train.lr_decay",
        "learning-rate factor after decay_start",
        train.lr_decay
    ),
    key!(
        "train.decay_start",
        "fraction of epochs before decay",
        train.decay_start
    ),
    key!(
        "train.negative_fraction",
        "share of stage-2 crops away from vertices",
        train.negative_fraction
    ),
    key!("train.jitter", "positive crop jitter half-width, pixels", train.jitter),
    key!("train.flips", "random horizontal/vertical flips", train.flips),
    key!("pipeline.threshold", "stage-1 retention threshold", pipeline.threshold),
    key!(
        "pipeline.nms_radius",
        "stage-1 suppression radius, map cells",
        pipeline.nms_radius
    ),
    key!(
        "pipeline.merge_radius",
        "image-space suppression radius, pixels",
        pipeline.merge_radius
    ),
    key!(
        "pipeline.accept_threshold",
        "stage-2 acceptance threshold",
        pipeline.accept_threshold
    ),
    key!(
        "pipeline.refine_support",
        "stage-2 level bounding the averaged blob",
        pipeline.refine_support
    ),
    key!(
        "pipeline.entrance_min",
        "shortest slot entrance, pixels",
        pipeline.entrance_min
    ),
    key!(
        "pipeline.entrance_max",
        "longest slot entrance, pixels",
        pipeline.entrance_max
    ),
    key!(
        "pipeline.direction_tolerance_deg",
        "angular tolerance for slot assembly, degrees",
        pipeline.direction_tolerance_deg
    ),
    key!("eval.epsilon", "vertex match radius, pixels", eval.epsilon),
];

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let k = KEYS
            .iter()
            .find(|k| k.name == key)
            .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
        (k.set)(self, value).map_err(|e| Error::Config(format!("{key}: {e}")))
    }

    pub fn get(&self, key: &str) -> Option<String> {
        KEYS.iter().find(|k| k.name == key).map(|k| (k.get)(self))
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{kv}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn validate(&self) -> Result<()> {
        self.stage1.validate()?;
        self.stage2.validate(&self.stage1)?;
        MatchCriterion::new(self.eval.epsilon)?;
        if self.train.batch == 0 {
            return Err(Error::Config("train.batch must be positive".into()));
        }
        Ok(())
    }

    /// Every key with its resolved value, one per line; re-parses to `self`.
    pub fn effective(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            let _ = writeln!(s, "{}={}", k.name, (k.get)(self));
        }
        s
    }

    /// Every key with its default and description.
    pub fn documentation() -> String {
        let d = RunConfig::default();
        let mut s = String::new();
        for k in KEYS {
            let _ = writeln!(s, "  {:<34} {:<10} {}", k.name, (k.get)(&d), k.doc);
        }
        s
    }
}
