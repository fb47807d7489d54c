//! Two-stage inference: strip proposals, crop refinement, slot assembly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::descriptor::{arc_centers, estimate_paradigm, SlotType, StageGrid};
use crate::error::{Error, Result};
use crate::geom::Point;
use crate::model::CascadeModel;
use crate::raster::Image;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineConfig {
    /// Stage-1 retention threshold on the logistic presence map.
    pub threshold: f64,
    /// Stage-1 non-maximum suppression radius, map cells.
    pub nms_radius: f64,
    /// Image-space suppression radius across strips and after refinement, pixels.
    pub merge_radius: f64,
    /// Minimum squashed stage-2 peak for a proposal to survive.
    pub accept_threshold: f64,
    /// Squashed stage-2 level that bounds the blob averaged around the peak.
    pub refine_support: f64,
    pub entrance_min: f64,
    pub entrance_max: f64,
    pub direction_tolerance_deg: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            nms_radius: 3.0,
            merge_radius: 12.0,
            accept_threshold: 0.5,
            refine_support: 0.05,
            entrance_min: 30.0,
            entrance_max: 100.0,
            direction_tolerance_deg: 15.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexProposal {
    pub position: Point,
    pub score: f64,
    pub paradigm: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectedVertex {
    pub position: Point,
    pub score: f64,
    pub paradigm: u8,
    /// Stage-1 proposal the vertex was refined from.
    pub proposal: Point,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectedSlot {
    /// Indices into the detected vertex list.
    pub vertices: [usize; 2],
    pub entrance_width: f64,
    pub slot_type: SlotType,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Detections {
    pub proposals: Vec<VertexProposal>,
    pub vertices: Vec<DetectedVertex>,
    pub slots: Vec<DetectedSlot>,
}

pub fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedMap {
    /// Per-cell logistic values, used for retention.
    pub logistic: Vec<f64>,
    /// Softmax over the whole map; sums to 1.
    pub softmax: Vec<f64>,
}

pub fn normalize_map(m: &[f32]) -> NormalizedMap {
    let max = m.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v as f64));
    let exps: Vec<f64> = m.iter().map(|&v| (v as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    NormalizedMap {
        logistic: m.iter().map(|&v| logistic(v as f64)).collect(),
        softmax: exps.iter().map(|e| e / sum).collect(),
    }
}

/// Cells at or above `threshold` that dominate every cell within `nms_radius`
/// (equal values defer to the smaller row-major index). A disk-shaped response
/// has no preferred peak cell, so each proposal sits at the presence-weighted
/// centroid of the connected retained cells around its peak, no farther than
/// `2 * nms_radius` from it.
/// `paradigm` holds the squashed paradigm channel when available.
pub fn extract_proposals(
    presence: &[f64],
    paradigm: Option<&[f64]>,
    grid: &StageGrid,
    threshold: f64,
    nms_radius: f64,
) -> Result<Vec<VertexProposal>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold {threshold} must lie in (0, 1)"
        )));
    }
    let (w, h) = (grid.width, grid.height);
    if presence.len() != w * h {
        return Err(Error::ShapeMismatch {
            op: "extract_proposals",
            lhs: vec![h, w],
            rhs: vec![presence.len()],
        });
    }
    let r = nms_radius.max(0.0);
    let ri = r.floor() as i64;
    let mut out = Vec::new();
    for row in 0..h {
        'cell: for col in 0..w {
            let i = row * w + col;
            let v = presence[i];
            if v < threshold {
                continue;
            }
            for dy in -ri..=ri {
                for dx in -ri..=ri {
                    if (dx == 0 && dy == 0) || (dx * dx + dy * dy) as f64 > r * r {
                        continue;
                    }
                    let (y, x) = (row as i64 + dy, col as i64 + dx);
                    if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
                        continue;
                    }
                    let j = y as usize * w + x as usize;
                    if presence[j] > v || (presence[j] == v && j < i) {
                        continue 'cell;
                    }
                }
            }
            let (cx, cy, _) = blob_centroid(presence, w, h, (col, row), 2.0 * r, threshold);
            let at = grid.cell_to_image(0, 0);
            out.push(VertexProposal {
                position: Point::new(at.x + cx * grid.scale.0, at.y + cy * grid.scale.1),
                score: v,
                paradigm: paradigm.map_or(0, |p| u8::from(p[i] >= 0.5)),
            });
        }
    }
    Ok(out)
}

/// Presence-weighted centroid `(x, y, cells)` of the 8-connected component of
/// cells `>= threshold` containing `peak`, restricted to `reach` cells of it.
fn blob_centroid(
    presence: &[f64],
    w: usize,
    h: usize,
    peak: (usize, usize),
    reach: f64,
    threshold: f64,
) -> (f64, f64, usize) {
    let (pc, pr) = peak;
    let mut seen = vec![false; w * h];
    let mut stack = vec![(pc, pr)];
    seen[pr * w + pc] = true;
    let (mut sw, mut sx, mut sy, mut n) = (0.0, 0.0, 0.0, 0);
    while let Some((x, y)) = stack.pop() {
        n += 1;
        let u = presence[y * w + x];
        sw += u;
        sx += u * x as f64;
        sy += u * y as f64;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                let j = ny * w + nx;
                let d2 = (nx as f64 - pc as f64).powi(2) + (ny as f64 - pr as f64).powi(2);
                if !seen[j] && presence[j] >= threshold && d2 <= reach * reach {
                    seen[j] = true;
                    stack.push((nx, ny));
                }
            }
        }
    }
    (sx / sw, sy / sw, n)
}

/// `S x S` crop centered on the rounded position; returns the crop and its top-left.
pub fn crop_subimage(image: &Image, position: Point, side: usize) -> (Tensor, (i64, i64)) {
    let half = (side / 2) as i64;
    let x0 = position.x.round() as i64 - half;
    let y0 = position.y.round() as i64 - half;
    (image.window_tensor(x0, y0, side, side), (x0, y0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Refinement {
    /// Argmax cell `(row, col)`.
    pub peak: (usize, usize),
    /// Quadratic sub-pixel correction of the peak cell, `(dx, dy)` in `[-0.5, 0.5]`.
    pub subpixel: (f64, f64),
    /// Cells averaged into the refined location; 1 means the quadratic estimate was used.
    pub support: usize,
    /// Refined location relative to the crop center.
    pub offset: Point,
    pub score: f64,
}

fn parabola_vertex(l: f64, c: f64, r: f64) -> f64 {
    let denom = l - 2.0 * c + r;
    if denom < 0.0 {
        (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

/// Stationary point of the least-squares quadratic through a 3x3 patch
/// (`f[dy+1][dx+1]`), when it is a maximum inside the center cell.
fn quadratic_peak(f: &[[f64; 3]; 3]) -> Option<(f64, f64)> {
    let (mut b, mut c, mut d, mut e, mut q) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (iy, row) in f.iter().enumerate() {
        for (ix, &v) in row.iter().enumerate() {
            let (x, y) = (ix as f64 - 1.0, iy as f64 - 1.0);
            b += x * v / 6.0;
            c += y * v / 6.0;
            d += (x * x - 2.0 / 3.0) * v / 2.0;
            q += (y * y - 2.0 / 3.0) * v / 2.0;
            e += x * y * v / 4.0;
        }
    }
    // f ~ a + b x + c y + d x^2 + e x y + q y^2
    let det = 4.0 * d * q - e * e;
    if !(d < 0.0 && det > 0.0) {
        return None;
    }
    let x = (-2.0 * q * b + e * c) / det;
    let y = (e * b - 2.0 * d * c) / det;
    (x.abs() <= 0.5 && y.abs() <= 0.5).then_some((x, y))
}

/// Locates the vertex in a `side x side` logit map; `None` when the squashed
/// peak is below `accept_threshold`.
///
/// A disk-shaped response is flat near its top, so the argmax alone wanders
/// over the disk. The location is the squashed-value centroid of the
/// connected cells at or above `support_threshold` within `reach` of the
/// argmax. When that blob is the argmax cell alone (always so for
/// `reach < 1`), the argmax plus a quadratic sub-pixel fit is used instead.
pub fn refine(
    map: &[f32],
    side: usize,
    accept_threshold: f64,
    support_threshold: f64,
    reach: f64,
) -> Result<Option<Refinement>> {
    if map.len() != side * side || side == 0 {
        return Err(Error::ShapeMismatch {
            op: "refine",
            lhs: vec![side, side],
            rhs: vec![map.len()],
        });
    }
    let mut best = 0;
    for (i, &v) in map.iter().enumerate() {
        if v > map[best] {
            best = i;
        }
    }
    let (row, col) = (best / side, best % side);
    let score = logistic(map[best] as f64);
    if score < accept_threshold {
        return Ok(None);
    }
    let at = |r: usize, c: usize| map[r * side + c] as f64;
    let interior = row > 0 && col > 0 && row + 1 < side && col + 1 < side;
    let (dx, dy) = if interior {
        let mut patch = [[0.0; 3]; 3];
        for (py, prow) in patch.iter_mut().enumerate() {
            for (px, v) in prow.iter_mut().enumerate() {
                *v = at(row + py - 1, col + px - 1);
            }
        }
        quadratic_peak(&patch).unwrap_or_else(|| {
            (
                parabola_vertex(patch[1][0], patch[1][1], patch[1][2]),
                parabola_vertex(patch[0][1], patch[1][1], patch[2][1]),
            )
        })
    } else {
        let dx = if col > 0 && col + 1 < side {
            parabola_vertex(at(row, col - 1), at(row, col), at(row, col + 1))
        } else {
            0.0
        };
        let dy = if row > 0 && row + 1 < side {
            parabola_vertex(at(row - 1, col), at(row, col), at(row + 1, col))
        } else {
            0.0
        };
        (dx, dy)
    };
    let squashed: Vec<f64> = map.iter().map(|&v| logistic(v as f64)).collect();
    let blob = blob_centroid(&squashed, side, side, (col, row), reach, support_threshold);
    let (x, y) = if blob.2 > 1 {
        (blob.0, blob.1)
    } else {
        (col as f64 + dx, row as f64 + dy)
    };
    let center = (side / 2) as f64;
    Ok(Some(Refinement {
        peak: (row, col),
        subpixel: (dx, dy),
        support: blob.2,
        offset: Point::new(x - center, y - center),
        score,
    }))
}

/// Greedy suppression by descending score; survivors keep their original order of score.
fn suppress<T: Copy>(items: &mut Vec<T>, radius: f64, key: impl Fn(&T) -> (Point, f64)) {
    items.sort_by(|a, b| {
        let (pa, sa) = key(a);
        let (pb, sb) = key(b);
        sb.total_cmp(&sa)
            .then(pa.y.total_cmp(&pb.y))
            .then(pa.x.total_cmp(&pb.x))
    });
    let mut kept: Vec<T> = Vec::with_capacity(items.len());
    for it in items.iter() {
        let p = key(it).0;
        if kept.iter().all(|k| key(k).0.dist(p) > radius) {
            kept.push(*it);
        }
    }
    *items = kept;
}

fn strip_tensor(model: &CascadeModel, image: &Image) -> Result<Tensor> {
    let s1 = &model.stage1;
    if image.width() != s1.image_w || image.height() != s1.image_h {
        return Err(Error::ShapeMismatch {
            op: "detect (image extent)",
            lhs: vec![image.height(), image.width()],
            rhs: vec![s1.image_h, s1.image_w],
        });
    }
    let strips: Vec<Tensor> = s1
        .strip_offsets()
        .iter()
        .map(|&oy| image.window_tensor(0, oy as i64, s1.input_w, s1.input_h))
        .collect();
    Tensor::stack_batch(&strips)
}

/// Stage-1 proposals for the whole frame, merged across strips.
pub fn propose(model: &CascadeModel, image: &Image, cfg: &PipelineConfig) -> Result<Vec<VertexProposal>> {
    let s1 = &model.stage1;
    let logits = model.stage1_forward(&strip_tensor(model, image)?)?;
    let (mh, mw) = (s1.map_h(), s1.map_w());
    let plane = mh * mw;
    let mut proposals = Vec::new();
    for (n, &oy) in s1.strip_offsets().iter().enumerate() {
        let base = n * 2 * plane;
        let presence = normalize_map(&logits.data()[base..base + plane]).logistic;
        let paradigm: Vec<f64> = logits.data()[base + plane..base + 2 * plane]
            .iter()
            .map(|&v| logistic(v as f64))
            .collect();
        let grid = StageGrid {
            width: mw,
            height: mh,
            scale: (s1.k_w as f64, s1.k_h as f64),
            origin: Point::new(0.0, oy as f64),
            cell_center: 0.5,
            radius: s1.radius,
        };
        proposals.extend(extract_proposals(
            &presence,
            Some(&paradigm),
            &grid,
            cfg.threshold,
            cfg.nms_radius,
        )?);
    }
    suppress(&mut proposals, cfg.merge_radius, |p| (p.position, p.score));
    Ok(proposals)
}

/// Full cascade on one frame. Output order: descending score, then y, then x.
pub fn detect(model: &CascadeModel, image: &Image, cfg: &PipelineConfig) -> Result<Detections> {
    let proposals = propose(model, image, cfg)?;
    let side = model.stage2.side;
    let reach = 2.0 * model.stage2.radius;
    let mut vertices = Vec::new();
    if !proposals.is_empty() {
        let crops: Vec<(Tensor, (i64, i64))> = proposals
            .iter()
            .map(|p| crop_subimage(image, p.position, side))
            .collect();
        let batch = Tensor::stack_batch(&crops.iter().map(|c| c.0.clone()).collect::<Vec<_>>())?;
        let maps = model.stage2_forward(&batch)?;
        for (k, p) in proposals.iter().enumerate() {
            let map = &maps.data()[k * side * side..(k + 1) * side * side];
            if let Some(r) = refine(map, side, cfg.accept_threshold, cfg.refine_support, reach)? {
                let center = Point::new(p.position.x.round(), p.position.y.round());
                vertices.push(DetectedVertex {
                    position: center + r.offset,
                    score: r.score,
                    paradigm: p.paradigm,
                    proposal: p.position,
                });
            }
        }
    }
    suppress(&mut vertices, cfg.merge_radius, |v| (v.position, v.score));
    let slots = assemble_slots(image, &vertices, cfg);
    Ok(Detections {
        proposals,
        vertices,
        slots,
    })
}

/// Directions of bright arcs around `p`, tried at several radii; the radius
/// with the most arcs (at most four) wins, the smaller radius on ties.
pub fn estimate_directions(image: &Image, p: Point) -> Vec<Point> {
    const SAMPLES: usize = 180;
    let (w, h) = (image.width(), image.height());
    let luma = |x: usize, y: usize| -> f64 {
        let px = image.pixel(x, y);
        if px.len() == 1 {
            px[0] as f64 / 255.0
        } else {
            (0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64) / 255.0
        }
    };
    let sample = |q: Point| -> f64 {
        let (x, y) = (q.x.clamp(0.0, w as f64 - 1.0), q.y.clamp(0.0, h as f64 - 1.0));
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (tx, ty) = (x - x0 as f64, y - y0 as f64);
        let at = |xx: usize, yy: usize| luma(xx, yy);
        (at(x0, y0) * (1.0 - tx) + at(x1, y0) * tx) * (1.0 - ty) + (at(x0, y1) * (1.0 - tx) + at(x1, y1) * tx) * ty
    };
    let mut best: Vec<Point> = Vec::new();
    for radius in [6.0, 8.0, 10.0, 12.0] {
        let ring: Vec<f64> = (0..SAMPLES)
            .map(|i| sample(p + Point::from_angle(i as f64 * std::f64::consts::TAU / SAMPLES as f64) * radius))
            .collect();
        let (lo, hi) = ring
            .iter()
            .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        if hi - lo < 0.08 {
            continue;
        }
        let thr = lo + 0.5 * (hi - lo);
        let on: Vec<bool> = ring.iter().map(|&v| v > thr).collect();
        let dirs: Vec<Point> = arc_centers(&on)
            .into_iter()
            .map(|c| Point::from_angle(c * std::f64::consts::TAU / SAMPLES as f64))
            .collect();
        if dirs.len() <= 4 && dirs.len() > best.len() {
            best = dirs;
        }
    }
    best
}

fn segment_distance(p: Point, a: Point, b: Point) -> (f64, f64) {
    let ab = b - a;
    let t = ((p - a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
    ((a + ab * t).dist(p), t)
}

/// Pairs vertices into slots: distance within the entrance range, each end
/// showing a marking direction toward the other, no third vertex on the
/// segment between them, at most two slots per vertex, greedy by score.
pub fn assemble_slots(image: &Image, vertices: &[DetectedVertex], cfg: &PipelineConfig) -> Vec<DetectedSlot> {
    let dirs: Vec<Vec<Point>> = vertices
        .iter()
        .map(|v| estimate_directions(image, v.position))
        .collect();
    assemble_with_directions(vertices, &dirs, cfg)
}

pub fn assemble_with_directions(
    vertices: &[DetectedVertex],
    dirs: &[Vec<Point>],
    cfg: &PipelineConfig,
) -> Vec<DetectedSlot> {
    let tol = cfg.direction_tolerance_deg.to_radians();
    let points_at = |i: usize, target: Point| {
        let want = target - vertices[i].position;
        dirs[i].iter().any(|d| d.angle_to(want) <= tol)
    };
    let mut candidates = Vec::new();
    for i in 0..vertices.len() {
        for j in i + 1..vertices.len() {
            let (a, b) = (vertices[i].position, vertices[j].position);
            let d = a.dist(b);
            if d < cfg.entrance_min || d > cfg.entrance_max || !points_at(i, b) || !points_at(j, a) {
                continue;
            }
            let blocked = vertices.iter().enumerate().any(|(k, v)| {
                let (dist, t) = segment_distance(v.position, a, b);
                k != i && k != j && t > 0.0 && t < 1.0 && dist < cfg.merge_radius
            });
            if !blocked {
                candidates.push((vertices[i].score + vertices[j].score, i, j, d));
            }
        }
    }
    candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    let mut degree = vec![0usize; vertices.len()];
    let mut slots = Vec::new();
    for (_, i, j, d) in candidates {
        if degree[i] < 2 && degree[j] < 2 {
            degree[i] += 1;
            degree[j] += 1;
            let oblique = vertices[i].paradigm == 1 && vertices[j].paradigm == 1;
            slots.push(DetectedSlot {
                vertices: [i, j],
                entrance_width: d,
                slot_type: if oblique {
                    SlotType::Oblique
                } else {
                    SlotType::Rectangular
                },
            });
        }
    }
    slots
}

/// Paradigm guess from image evidence around `p`, independent of the network.
pub fn image_paradigm(image: &Image, p: Point) -> Option<u8> {
    estimate_paradigm(&estimate_directions(image, p), 10.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionVertexJson {
    pub x: f64,
    pub y: f64,
    pub score: f64,
    pub paradigm: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionJson {
    pub vertices: Vec<DetectionVertexJson>,
    pub slots: Vec<[usize; 2]>,
}

impl From<&Detections> for DetectionJson {
    fn from(d: &Detections) -> Self {
        Self {
            vertices: d
                .vertices
                .iter()
                .map(|v| DetectionVertexJson {
                    x: v.position.x,
                    y: v.position.y,
                    score: v.score,
                    paradigm: v.paradigm,
                })
                .collect(),
            slots: d.slots.iter().map(|s| s.vertices).collect(),
        }
    }
}

fn put(img: &mut Image, x: i64, y: i64, color: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as usize) < img.width() && (y as usize) < img.height() {
        let px = img.pixel_mut(x as usize, y as usize);
        if px.len() == 3 {
            px.copy_from_slice(&color);
        } else {
            px[0] = color[0];
        }
    }
}

/// Copy of `image` with entrance lines and vertex circles drawn on it.
pub fn render_overlay(image: &Image, det: &Detections) -> Image {
    let mut out = if image.channels() == 3 {
        image.clone()
    } else {
        let rgb = image.data().iter().flat_map(|&v| [v, v, v]).collect();
        Image::from_raw(image.width(), image.height(), 3, rgb).expect("same extent")
    };
    for s in &det.slots {
        let (a, b) = (
            det.vertices[s.vertices[0]].position,
            det.vertices[s.vertices[1]].position,
        );
        let n = a.dist(b).ceil() as usize + 1;
        for k in 0..=n {
            let p = a + (b - a) * (k as f64 / n as f64);
            put(&mut out, p.x.round() as i64, p.y.round() as i64, [0, 220, 0]);
        }
    }
    for v in &det.vertices {
        for k in 0..64 {
            let p = v.position + Point::from_angle(k as f64 * std::f64::consts::TAU / 64.0) * 5.0;
            put(&mut out, p.x.round() as i64, p.y.round() as i64, [255, 40, 40]);
        }
    }
    out
}

pub fn write_detection_json(path: &Path, det: &Detections) -> Result<()> {
    let json = serde_json::to_string_pretty(&DetectionJson::from(det)).expect("detections serialize");
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}
