//! On-disk dataset layout:
//!
//! ```text
//! <root>/images/NNNNN.png
//! <root>/labels/NNNNN.json     annotation, "image" relative to the label file
//! <root>/manifest.jsonl        {"path": "labels/NNNNN.json", "split": "train"|"test", "type": ...}
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate, LabeledSample, SceneSpec};
use crate::descriptor::{SlotType, VertexAnnotation};
use crate::error::{Error, Result};
use crate::geom::Point;
use crate::raster::Image;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationVertex {
    pub x: f64,
    pub y: f64,
    pub dirs: [[f64; 2]; 2],
    #[serde(rename = "type")]
    pub slot_type: SlotType,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub image: String,
    pub vertices: Vec<AnnotationVertex>,
    pub slots: Vec<[usize; 2]>,
}

impl AnnotationFile {
    pub fn from_sample(sample: &LabeledSample, image: String) -> Self {
        Self {
            image,
            vertices: sample
                .annotations
                .iter()
                .map(|a| AnnotationVertex {
                    x: a.o.x,
                    y: a.o.y,
                    dirs: a.incident_dirs.map(|d| [d.x, d.y]),
                    slot_type: a.slot_type,
                })
                .collect(),
            slots: sample.slots.clone(),
        }
    }

    pub fn annotations(&self) -> Result<Vec<VertexAnnotation>> {
        self.vertices
            .iter()
            .map(|v| VertexAnnotation::new(Point::new(v.x, v.y), v.dirs.map(|[x, y]| Point::new(x, y)), v.slot_type))
            .collect()
    }
}

/// Byte offset of a 1-based (line, column) position.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (start + column.saturating_sub(1)).min(text.len())
}

pub fn load_annotation(path: &Path) -> Result<AnnotationFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Annotation {
        path: path.to_path_buf(),
        offset: byte_offset(&text, e.line(), e.column()),
        msg: e.to_string(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub path: String,
    pub split: Split,
    #[serde(rename = "type")]
    pub slot_type: SlotType,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitSummary {
    pub train: usize,
    pub test: usize,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sample `index` within a dataset seeded by `seed`.
pub fn sample_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index)
}

/// Writes `count_per_type` scenes of every slot type under `dir`, half of
/// each type (rounded down) in the test split.
pub fn generate_split(dir: &Path, count_per_type: usize, seed: u64) -> Result<SplitSummary> {
    if count_per_type < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 samples per type, got {count_per_type}"
        )));
    }
    let images = dir.join("images");
    let labels = dir.join("labels");
    for d in [&images, &labels] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut jobs = Vec::new();
    for (t, &slot_type) in SlotType::ALL.iter().enumerate() {
        let mut order: Vec<usize> = (0..count_per_type).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(splitmix64(seed ^ (t as u64 + 1))));
        let n_test = count_per_type / 2;
        let mut split = vec![Split::Train; count_per_type];
        for &j in &order[..n_test] {
            split[j] = Split::Test;
        }
        for (j, s) in split.into_iter().enumerate() {
            jobs.push((t * count_per_type + j, slot_type, s));
        }
    }
    let records = jobs
        .par_iter()
        .map(|&(index, slot_type, split)| {
            let sample = generate(&SceneSpec::sample(slot_type, sample_seed(seed, index as u64)))?;
            let name = format!("{index:05}");
            let image_path = images.join(format!("{name}.png"));
            sample.image.save(&image_path)?;
            let ann = AnnotationFile::from_sample(&sample, format!("../images/{name}.png"));
            let label_path = labels.join(format!("{name}.json"));
            let json = serde_json::to_string_pretty(&ann).expect("annotation serializes");
            fs::write(&label_path, json + "\n").map_err(|e| Error::io(&label_path, e))?;
            Ok(ManifestRecord {
                path: format!("labels/{name}.json"),
                split,
                slot_type,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut manifest = String::new();
    for r in &records {
        manifest.push_str(&serde_json::to_string(r).expect("record serializes"));
        manifest.push('\n');
    }
    let manifest_path = dir.join("manifest.jsonl");
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    let test = records.iter().filter(|r| r.split == Split::Test).count();
    Ok(SplitSummary {
        train: records.len() - test,
        test,
    })
}

/// Manifest-indexed dataset directory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join("manifest.jsonl");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut records = Vec::new();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            if !line.trim().is_empty() {
                let r = serde_json::from_str(line).map_err(|e| Error::Annotation {
                    path: path.clone(),
                    offset: offset + byte_offset(line, e.line(), e.column()),
                    msg: e.to_string(),
                })?;
                records.push(r);
            }
            offset += line.len();
        }
        Ok(Self {
            root: root.to_path_buf(),
            records,
        })
    }

    pub fn records(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn load_record(&self, record: &ManifestRecord) -> Result<LabeledSample> {
        let label_path = self.root.join(&record.path);
        let ann = load_annotation(&label_path)?;
        let image_path = label_path.parent().unwrap_or(Path::new(".")).join(&ann.image);
        let image = Image::load(&image_path)?;
        Ok(LabeledSample {
            slot_type: record.slot_type,
            image,
            annotations: ann.annotations()?,
            slots: ann.slots,
            strokes: Vec::new(),
        })
    }

    /// Loads every sample of `split` in manifest order.
    pub fn load_split(&self, split: Split) -> Result<Vec<LabeledSample>> {
        let records: Vec<&ManifestRecord> = self.records(split).collect();
        records.par_iter().map(|r| self.load_record(r)).collect()
    }
}
