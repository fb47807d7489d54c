//! Deterministic synthetic top-down parking scenes with vertex annotations.
//!
//! A scene holds one or two rows of slots. Each row has an entrance line and
//! one separator per vertex; separators start at the far edge of the entrance
//! band, so every vertex is the center of the overlap of two strokes.

mod dataset;
mod render;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use dataset::{
    generate_split, load_annotation, sample_seed, AnnotationFile, AnnotationVertex, Dataset, ManifestRecord, Split,
    SplitSummary,
};
pub use render::{Lighting, Shadow, Stroke, Texture};

use crate::descriptor::{SlotType, VertexAnnotation};
use crate::error::{Error, Result};
use crate::geom::Point;
use crate::raster::{Image, Mask};
use render::Canvas;

pub const IMAGE_WIDTH: usize = 320;
pub const IMAGE_HEIGHT: usize = 240;
/// Twice the coarse descriptor reach (3 cells of 4 px).
pub const DEFAULT_BORDER_MARGIN: f64 = 24.0;
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

const PARAM_STREAM: u64 = 1;
const SCENE_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub slot_type: SlotType,
    pub width: usize,
    pub height: usize,
    /// Total slots over all rows.
    pub slot_count: usize,
    /// Vertex spacing along the entrance line, pixels `[min, max]`.
    pub entrance_width: (f64, f64),
    /// Marking width, pixels `[min, max]`.
    pub line_width: (f64, f64),
    /// Angle between separator and entrance line, degrees. Trapezoid rows
    /// alternate this angle with its supplement.
    pub line_angle: f64,
    pub texture: Texture,
    pub lighting: Lighting,
    pub noise_sigma: f64,
    pub border_margin: f64,
    pub min_separation: f64,
}

impl SceneSpec {
    /// Draws the per-scene imaging parameters for `slot_type` from `seed`.
    pub fn sample(slot_type: SlotType, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(PARAM_STREAM);
        let line_angle = match slot_type {
            SlotType::Oblique => rng.gen_range(30.0..=75.0),
            SlotType::Trapezoid => rng.gen_range(55.0..=75.0),
            _ => 90.0,
        };
        let texture = match slot_type {
            SlotType::Brick => Texture::Brick,
            SlotType::Grass => Texture::Grass,
            SlotType::Stereo => Texture::StereoPlatform,
            _ => Texture::Asphalt,
        };
        let shadow = rng.gen_bool(0.3).then(|| Shadow {
            anchor: Point::new(
                rng.gen_range(0.0..IMAGE_WIDTH as f64),
                rng.gen_range(0.0..IMAGE_HEIGHT as f64),
            ),
            normal: Point::from_angle(rng.gen_range(0.0..std::f64::consts::TAU)),
            strength: rng.gen_range(0.25..0.5),
            softness: rng.gen_range(3.0..12.0),
        });
        Self {
            seed,
            slot_type,
            width: IMAGE_WIDTH,
            height: IMAGE_HEIGHT,
            slot_count: rng.gen_range(2..=6),
            entrance_width: (40.0, 90.0),
            line_width: (3.0, 6.0),
            line_angle,
            texture,
            lighting: Lighting {
                gain: rng.gen_range(0.8..1.15),
                gamma: rng.gen_range(0.85..1.2),
                shadow,
            },
            noise_sigma: rng.gen_range(1.5..5.0),
            border_margin: DEFAULT_BORDER_MARGIN,
            min_separation: 30.0,
        }
    }

    fn check(&self) -> Result<()> {
        let unsat = |msg: String| Err(Error::Layout { attempts: 0, msg });
        let (lo, hi) = self.entrance_width;
        if self.slot_count == 0 {
            return unsat("slot_count must be at least 1".into());
        }
        if !(lo > 0.0 && lo <= hi) || !(self.line_width.0 > 0.0 && self.line_width.0 <= self.line_width.1) {
            return unsat(format!(
                "invalid ranges: entrance width {:?}, line width {:?}",
                self.entrance_width, self.line_width
            ));
        }
        if lo < self.min_separation {
            return unsat(format!(
                "entrance width {lo} is below the minimum vertex separation {}",
                self.min_separation
            ));
        }
        if !(self.line_angle > 1.0 && self.line_angle < 179.0) {
            return unsat(format!("line angle {} must lie in (1, 179) degrees", self.line_angle));
        }
        let usable = self.width as f64 - 2.0 * self.border_margin;
        let per_row = (usable / lo).floor() as usize;
        if usable <= 0.0 || (self.height as f64) < 2.0 * self.border_margin || self.slot_count > 2 * per_row {
            return unsat(format!(
                "{} slots of width >= {lo} px do not fit two rows of a {}x{} frame with margin {}",
                self.slot_count, self.width, self.height, self.border_margin
            ));
        }
        Ok(())
    }
}

/// Rendered scene with its ground truth.
#[derive(Clone, Debug)]
pub struct LabeledSample {
    pub slot_type: SlotType,
    pub image: Image,
    pub annotations: Vec<VertexAnnotation>,
    /// Annotation index pairs joined by an entrance line.
    pub slots: Vec<[usize; 2]>,
    /// Per-stroke rasterized masks; empty when loaded from disk.
    pub strokes: Vec<Mask>,
}

impl LabeledSample {
    pub fn vertices(&self) -> Vec<Point> {
        self.annotations.iter().map(|a| a.o).collect()
    }

    pub fn line_mask(&self) -> Mask {
        let mut m = Mask::new(self.image.width(), self.image.height());
        for s in &self.strokes {
            m = m.union(s);
        }
        m
    }

    /// Slots reference two distinct in-range vertices and every vertex is in a slot.
    pub fn check_labels(&self) -> Result<()> {
        let n = self.annotations.len();
        let mut used = vec![false; n];
        for &[a, b] in &self.slots {
            if a == b || a >= n || b >= n {
                return Err(Error::InvalidArgument(format!(
                    "slot [{a}, {b}] is invalid for {n} vertices"
                )));
            }
            used[a] = true;
            used[b] = true;
        }
        match used.iter().position(|u| !u) {
            Some(i) => Err(Error::InvalidArgument(format!("vertex {i} belongs to no slot"))),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug)]
struct Row {
    vertices: Vec<Point>,
    separators: Vec<Point>,
    /// Entrance direction at an acute (or right) angle to each separator.
    entrance_dirs: Vec<Point>,
    axis: Point,
    line_width: f64,
    depth: f64,
    overhang: f64,
}

fn plan_rows(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Option<Vec<Row>> {
    let two_rows = spec.slot_count >= 3 && rng.gen_bool(0.6)
        || spec.slot_count as f64 * spec.entrance_width.0 > spec.width as f64 - 2.0 * spec.border_margin;
    let counts = if two_rows {
        let top = (spec.slot_count + usize::from(rng.gen_bool(0.5))) / 2;
        vec![top, spec.slot_count - top]
    } else {
        vec![spec.slot_count]
    };
    let tilt = rng.gen_range(-8.0f64..8.0).to_radians();
    let axis = Point::from_angle(tilt);
    let mut rows = Vec::new();
    for (r, &n) in counts.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let usable = spec.width as f64 - 2.0 * spec.border_margin;
        let hi = spec.entrance_width.1.min(usable / n as f64);
        if hi < spec.entrance_width.0 {
            return None;
        }
        let spacing = rng.gen_range(spec.entrance_width.0..=hi);
        let span = spacing * n as f64;
        let x_hi = spec.width as f64 - spec.border_margin - span * tilt.cos();
        if x_hi < spec.border_margin {
            return None;
        }
        let x0 = rng.gen_range(spec.border_margin..=x_hi);
        let (y0, up) = if two_rows {
            if r == 0 {
                (rng.gen_range(60.0..=95.0), true)
            } else {
                (rng.gen_range(145.0..=180.0), false)
            }
        } else {
            (rng.gen_range(40.0..=200.0), rng.gen_bool(0.5))
        };
        let start = Point::new(x0, y0);
        let base = spec.line_angle.to_radians();
        let mut vertices = Vec::new();
        let mut separators = Vec::new();
        let mut entrance_dirs = Vec::new();
        for i in 0..=n {
            let theta = if spec.slot_type == SlotType::Trapezoid && i % 2 == 1 {
                std::f64::consts::PI - base
            } else {
                base
            };
            let s = axis.rotated(if up { -theta } else { theta });
            vertices.push(start + axis * (i as f64 * spacing));
            separators.push(s);
            entrance_dirs.push(if s.dot(axis) >= 0.0 { axis } else { -axis });
        }
        rows.push(Row {
            vertices,
            separators,
            entrance_dirs,
            axis,
            line_width: rng.gen_range(spec.line_width.0..=spec.line_width.1),
            depth: rng.gen_range(50.0..=110.0),
            overhang: rng.gen_range(10.0..=20.0),
        });
    }
    Some(rows)
}

fn layout_ok(spec: &SceneSpec, rows: &[Row]) -> bool {
    let pts: Vec<Point> = rows.iter().flat_map(|r| r.vertices.iter().copied()).collect();
    let m = spec.border_margin;
    let inside = pts
        .iter()
        .all(|p| p.x >= m && p.y >= m && p.x <= spec.width as f64 - m && p.y <= spec.height as f64 - m);
    let separated = pts
        .iter()
        .enumerate()
        .all(|(i, a)| pts[i + 1..].iter().all(|b| a.dist(*b) >= spec.min_separation));
    inside && separated
}

/// Separator quad from the far edge of the entrance band out to `depth`.
fn separator_stroke(o: Point, s: Point, axis: Point, width: f64, entrance_width: f64, depth: f64) -> Stroke {
    let n = s.perp();
    let en = axis.dot(n);
    let sin = axis.cross(s).abs();
    let start = o - s * (entrance_width / 2.0 / sin);
    let t = width / 2.0 / en;
    let end = o + s * depth;
    Stroke {
        corners: [
            start + axis * t,
            end + n * (width / 2.0),
            end - n * (width / 2.0),
            start - axis * t,
        ],
    }
}

fn row_strokes(slot_type: SlotType, row: &Row, rng: &mut ChaCha8Rng) -> Vec<Stroke> {
    let mut strokes = Vec::new();
    let w = row.line_width;
    if slot_type == SlotType::Open {
        for &o in &row.vertices {
            let half = rng.gen_range(7.0..=10.0);
            strokes.push(Stroke::band(o - row.axis * half, o + row.axis * half, w));
        }
    } else {
        let first = row.vertices[0];
        let last = *row.vertices.last().unwrap();
        strokes.push(Stroke::band(
            first - row.axis * row.overhang,
            last + row.axis * row.overhang,
            w,
        ));
    }
    for (o, s) in row.vertices.iter().zip(&row.separators) {
        strokes.push(separator_stroke(*o, *s, row.axis, w, w, row.depth));
    }
    strokes
}

/// Renders the scene described by `spec`. Output depends only on `spec`.
pub fn generate(spec: &SceneSpec) -> Result<LabeledSample> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(SCENE_STREAM);
    let mut rows = None;
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        if let Some(candidate) = plan_rows(spec, &mut rng) {
            if layout_ok(spec, &candidate) {
                rows = Some(candidate);
                break;
            }
        }
    }
    let rows = rows.ok_or_else(|| Error::Layout {
        attempts: MAX_PLACEMENT_ATTEMPTS,
        msg: format!(
            "no placement of {} {} slots satisfies margin {} and separation {}",
            spec.slot_count, spec.slot_type, spec.border_margin, spec.min_separation
        ),
    })?;

    let (w, h) = (spec.width, spec.height);
    let mut annotations = Vec::new();
    let mut slots = Vec::new();
    let mut strokes = Vec::new();
    let mut rows_strokes = Vec::new();
    for row in &rows {
        let base = annotations.len();
        for i in 0..row.vertices.len() {
            annotations.push(VertexAnnotation::new(
                row.vertices[i],
                [row.separators[i], row.entrance_dirs[i]],
                spec.slot_type,
            )?);
            if i > 0 {
                slots.push([base + i - 1, base + i]);
            }
        }
        let rs = row_strokes(spec.slot_type, row, &mut rng);
        strokes.extend(rs.iter().map(|s| s.mask(w, h)));
        rows_strokes.push(rs);
    }

    let mut canvas = Canvas::new(w, h);
    render::paint_texture(&mut canvas, spec.texture, &mut rng);
    let mut coverage = vec![0.0f32; w * h];
    for s in rows_strokes.iter().flatten() {
        for (c, v) in coverage.iter_mut().zip(s.coverage(w, h)) {
            *c = c.max(v);
        }
    }
    let color = if rng.gen_bool(0.25) {
        [
            rng.gen_range(215.0..240.0),
            rng.gen_range(180.0..205.0),
            rng.gen_range(50.0..90.0),
        ]
    } else {
        let v = rng.gen_range(220.0..250.0);
        [v, v, v]
    };
    let opacity_level = if spec.slot_type == SlotType::Grass {
        rng.gen_range(0.55..0.75)
    } else {
        rng.gen_range(0.8..0.97)
    };
    let wear = rng.gen_range(0.0..0.3f32);
    let wear_cell = rng.gen_range(3.0..8.0);
    let wear_noise = render::value_noise(&mut rng, w, h, wear_cell);
    let opacity: Vec<f32> = wear_noise.iter().map(|n| opacity_level * (1.0 - wear * n)).collect();
    render::composite(&mut canvas, &coverage, color, &opacity);

    if spec.slot_type == SlotType::Stereo {
        let row = &rows[rng.gen_range(0..rows.len())];
        let i = rng.gen_range(0..row.vertices.len());
        let (o, s) = (row.vertices[i], row.separators[i]);
        let along = rng.gen_range(6.0..12.0);
        let d = rng.gen_range(25.0 + along / 2.0..=(row.depth - along / 2.0).min(50.0).max(25.0 + along / 2.0));
        let plate = Stroke::band(
            o + s * (d - along / 2.0),
            o + s * (d + along / 2.0),
            row.line_width + 2.0 * rng.gen_range(5.0..10.0),
        );
        let dark = rng.gen_range(30.0..55.0);
        render::composite(
            &mut canvas,
            &plate.coverage(w, h),
            [dark, dark, dark + 6.0],
            &vec![1.0; w * h],
        );
    }

    render::apply_lighting(&mut canvas, &spec.lighting);
    render::add_noise(&mut canvas, spec.noise_sigma, &mut rng);
    let image = Image::from_raw(w, h, 3, canvas.to_bytes())?;
    Ok(LabeledSample {
        slot_type: spec.slot_type,
        image,
        annotations,
        slots,
        strokes,
    })
}
