//! Vertex paradigm metric, circular-descriptor radius bounds, and the
//! ground-truth maps both cascade stages are trained against.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{dist_to_pixel, far_corner_dist, Point};
use crate::raster::Mask;

/// Parking-slot scenario category.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotType {
    Rectangular,
    Open,
    Brick,
    Grass,
    Oblique,
    Trapezoid,
    Stereo,
}

impl SlotType {
    pub const ALL: [SlotType; 7] = [
        SlotType::Rectangular,
        SlotType::Open,
        SlotType::Brick,
        SlotType::Grass,
        SlotType::Oblique,
        SlotType::Trapezoid,
        SlotType::Stereo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SlotType::Rectangular => "rectangular",
            SlotType::Open => "open",
            SlotType::Brick => "brick",
            SlotType::Grass => "grass",
            SlotType::Oblique => "oblique",
            SlotType::Trapezoid => "trapezoid",
            SlotType::Stereo => "stereo",
        }
    }
}

impl fmt::Display for SlotType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SlotType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SlotType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown slot type {s:?}")))
    }
}

/// Ground-truth marking point: center `o` plus the directions of the two
/// marking lines that leave it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexAnnotation {
    pub o: Point,
    pub incident_dirs: [Point; 2],
    pub slot_type: SlotType,
}

impl VertexAnnotation {
    pub fn new(o: Point, incident_dirs: [Point; 2], slot_type: SlotType) -> Result<Self> {
        for d in &incident_dirs {
            if (d.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!(
                    "incident direction {d:?} is not unit length"
                )));
            }
        }
        if incident_dirs[0].angle_to(incident_dirs[1]) <= 1f64.to_radians() {
            return Err(Error::InvalidArgument(
                "incident directions must differ by more than 1 degree".into(),
            ));
        }
        Ok(Self {
            o,
            incident_dirs,
            slot_type,
        })
    }

    /// `x_m`, `x_n`: where the incident lines cross the circle of `radius` around `o`.
    pub fn intersection_points(&self, radius: f64) -> (Point, Point) {
        (
            self.o + self.incident_dirs[0] * radius,
            self.o + self.incident_dirs[1] * radius,
        )
    }

    pub fn paradigm(&self) -> u8 {
        let (xm, xn) = self.intersection_points(1.0);
        paradigm_metric(self.o, xm, xn).expect("unit directions are non-degenerate")
    }
}

/// Inner products within this fraction of `|a||b|` count as zero, so
/// perpendicular directions built from rounded trigonometry still give 0.
pub const PERPENDICULAR_TOLERANCE: f64 = 1e-12;

/// `F = 1` when `<x_m - o, x_n - o> > 0`, otherwise 0.
pub fn paradigm_metric(o: Point, x_m: Point, x_n: Point) -> Result<u8> {
    let (a, b) = (x_m - o, x_n - o);
    let scale = a.norm() * b.norm();
    if scale == 0.0 {
        return Err(Error::InvalidArgument(
            "paradigm metric needs x_m and x_n distinct from o".into(),
        ));
    }
    Ok(u8::from(a.dot(b) > PERPENDICULAR_TOLERANCE * scale))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Coarse,
    Fine,
}

/// Circular template of a given radius (in the stage's own map pixels).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CircularDescriptor {
    pub radius: f64,
    pub paradigm_flag: u8,
    pub stage: Stage,
}

impl CircularDescriptor {
    pub fn new(radius: f64, paradigm_flag: u8, stage: Stage) -> Result<Self> {
        if radius.is_nan() || radius <= 0.0 || paradigm_flag > 1 {
            return Err(Error::InvalidArgument(format!(
                "descriptor radius must be > 0 and flag in {{0,1}}, got {radius}, {paradigm_flag}"
            )));
        }
        Ok(Self {
            radius,
            paradigm_flag,
            stage,
        })
    }

    pub fn for_annotation(ann: &VertexAnnotation, radius: f64, stage: Stage) -> Result<Self> {
        Self::new(radius, ann.paradigm(), stage)
    }

    /// Coarse and fine radii, both in input-image pixels, must satisfy coarse > fine.
    pub fn check_pair(coarse_px: f64, fine_px: f64) -> Result<()> {
        if coarse_px > fine_px && fine_px > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "coarse radius {coarse_px} px must exceed fine radius {fine_px} px"
            )))
        }
    }
}

/// Admissible descriptor radii `[lower, upper]` for one vertex, in image pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParadigmBounds {
    pub lower: f64,
    pub upper: f64,
}

impl ParadigmBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if lower > 0.0 && lower <= upper {
            Ok(Self { lower, upper })
        } else {
            Err(Error::InvalidArgument(format!(
                "paradigm bounds need 0 < lower <= upper, got [{lower}, {upper}]"
            )))
        }
    }

    pub fn admits(&self, radius: f64) -> bool {
        self.lower <= radius && radius <= self.upper
    }

    pub fn clamp(&self, radius: f64) -> f64 {
        radius.clamp(self.lower, self.upper)
    }
}

/// Smallest radius of a disk at `o` covering the junction core: the connected
/// blob of pixels that belong to at least two stroke masks, reached from `o`.
/// Pixels count as unit squares, so the radius reaches their far corners.
pub fn paradigm_lower_bound(strokes: &[Mask], o: Point) -> Result<f64> {
    let first = strokes
        .first()
        .ok_or_else(|| Error::InvalidArgument("lower bound needs stroke masks".into()))?;
    let (w, h) = (first.width(), first.height());
    if !strokes.iter().any(|m| m.at_point(o.x, o.y)) {
        return Err(Error::InvalidArgument(format!(
            "vertex ({:.2}, {:.2}) does not lie on any marking line",
            o.x, o.y
        )));
    }
    let overlap = |x: usize, y: usize| strokes.iter().filter(|m| m.get(x, y)).count() >= 2;
    let (cx, cy) = (o.x.round() as i64, o.y.round() as i64);

    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::new();
    for dy in -1..=1 {
        for dx in -1..=1 {
            let (x, y) = (cx + dx, cy + dy);
            if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && overlap(x as usize, y as usize) {
                seen[y as usize * w + x as usize] = true;
                queue.push_back((x as usize, y as usize));
            }
        }
    }
    let mut radius = far_corner_dist(o, cx as usize, cy as usize);
    while let Some((x, y)) = queue.pop_front() {
        radius = radius.max(far_corner_dist(o, x, y));
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                if !seen[ny * w + nx] && overlap(nx, ny) {
                    seen[ny * w + nx] = true;
                    queue.push_back((nx, ny));
                }
            }
        }
    }
    Ok(radius)
}

/// Largest radius of a disk at `vertices[index]` that contains no other vertex,
/// touches no pixel of a stroke not passing through the vertex, and stays in
/// the `width x height` frame.
pub fn paradigm_upper_bound(vertices: &[Point], strokes: &[Mask], width: usize, height: usize, index: usize) -> f64 {
    let o = vertices[index];
    let mut best = o.x.min(o.y).min(width as f64 - o.x).min(height as f64 - o.y);
    for (i, v) in vertices.iter().enumerate() {
        if i != index {
            best = best.min(o.dist(*v));
        }
    }
    let foreign: Vec<&Mask> = strokes.iter().filter(|m| !m.at_point(o.x, o.y)).collect();
    if foreign.is_empty() {
        return best.max(0.0);
    }
    let hit = |x: usize, y: usize| foreign.iter().any(|m| m.get(x, y));
    // Chebyshev rings around the vertex pixel; a pixel on ring k is at least
    // k - 1 away from any point inside the center pixel.
    let (cx, cy) = (o.x.round() as i64, o.y.round() as i64);
    let max_ring = width.max(height) as i64;
    for k in 0..=max_ring {
        if (k - 1) as f64 > best {
            break;
        }
        for dy in -k..=k {
            let edge_row = dy.abs() == k;
            let step = if edge_row { 1 } else { (2 * k).max(1) };
            let mut dx = -k;
            while dx <= k {
                let (x, y) = (cx + dx, cy + dy);
                if x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height && hit(x as usize, y as usize) {
                    best = best.min(dist_to_pixel(o, x as usize, y as usize));
                }
                dx += step;
            }
        }
    }
    best.max(0.0)
}

/// Directions of mask arcs crossed by the circle of `radius` around `o`,
/// measured at the arc midpoints.
pub fn incident_directions_from_mask(mask: &Mask, o: Point, radius: f64) -> Vec<Point> {
    const SAMPLES: usize = 720;
    let on: Vec<bool> = (0..SAMPLES)
        .map(|i| {
            let p = o + Point::from_angle(i as f64 * std::f64::consts::TAU / SAMPLES as f64) * radius;
            mask.at_point(p.x, p.y)
        })
        .collect();
    arc_centers(&on)
        .into_iter()
        .map(|c| Point::from_angle(c * std::f64::consts::TAU / SAMPLES as f64))
        .collect()
}

/// Midpoints (in sample units, possibly fractional, in `[0, n)`) of the runs of
/// `true` in a circular sequence.
pub(crate) fn arc_centers(on: &[bool]) -> Vec<f64> {
    let n = on.len();
    if n == 0 || on.iter().all(|&v| v) || !on.iter().any(|&v| v) {
        return Vec::new();
    }
    // start scanning just after a gap so no run wraps
    let start = (0..n).find(|&i| !on[i]).unwrap();
    let mut centers = Vec::new();
    let mut run_start = None;
    for step in 1..=n {
        let i = (start + step) % n;
        match (on[i], run_start) {
            (true, None) => run_start = Some(step),
            (false, Some(s)) => {
                let mid = (s + step - 1) as f64 / 2.0;
                centers.push((start as f64 + mid) % n as f64);
                run_start = None;
            }
            _ => {}
        }
    }
    centers
}

/// Estimates `F` from measured line directions: the pair of directions with
/// the largest inner product decides, with a dead band of `tolerance_deg`
/// around perpendicular to absorb measurement noise.
pub fn estimate_paradigm(dirs: &[Point], tolerance_deg: f64) -> Option<u8> {
    let mut best: Option<f64> = None;
    for i in 0..dirs.len() {
        for j in i + 1..dirs.len() {
            let c = dirs[i].normalized().dot(dirs[j].normalized());
            best = Some(best.map_or(c, |b| b.max(c)));
        }
    }
    best.map(|c| u8::from(c > (90.0 - tolerance_deg).to_radians().cos()))
}

/// Circle radii, pixels, tried by [`paradigm_from_mask`].
pub const MASK_PROBE_RADII: [f64; 7] = [4.0, 5.0, 6.0, 8.0, 10.0, 12.0, 14.0];

/// Largest angle, degrees, between arcs on adjacent probe circles that still
/// count as the same line.
const PROBE_AGREEMENT_DEG: f64 = 12.0;

/// Directions of the lines leaving `o` in a rasterized line mask. Arcs are
/// taken on every circle of [`MASK_PROBE_RADII`]; an arc is kept only when an
/// adjacent circle has an arc within [`PROBE_AGREEMENT_DEG`], which discards
/// splits where a circle grazes a line end. Kept arcs are clustered and each
/// cluster contributes its mean direction.
pub fn line_directions_from_mask(mask: &Mask, o: Point) -> Vec<Point> {
    let per_radius: Vec<Vec<Point>> = MASK_PROBE_RADII
        .iter()
        .map(|&r| incident_directions_from_mask(mask, o, r))
        .collect();
    let close_cos = PROBE_AGREEMENT_DEG.to_radians().cos();
    let near = |d: Point, set: &[Point]| set.iter().any(|e| d.dot(*e) >= close_cos);
    let mut clusters: Vec<(Point, usize)> = Vec::new();
    for (i, dirs) in per_radius.iter().enumerate() {
        for &d in dirs {
            let confirmed =
                (i > 0 && near(d, &per_radius[i - 1])) || per_radius.get(i + 1).is_some_and(|next| near(d, next));
            if !confirmed {
                continue;
            }
            match clusters
                .iter_mut()
                .find(|(sum, _)| sum.normalized().dot(d) >= close_cos)
            {
                Some((sum, n)) => {
                    *sum = *sum + d;
                    *n += 1;
                }
                None => clusters.push((d, 1)),
            }
        }
    }
    clusters.into_iter().map(|(sum, _)| sum.normalized()).collect()
}

/// Estimates `F` at `o` from a rasterized line mask via [`line_directions_from_mask`].
pub fn paradigm_from_mask(mask: &Mask, o: Point, tolerance_deg: f64) -> Option<u8> {
    estimate_paradigm(&line_directions_from_mask(mask, o), tolerance_deg)
}

/// Mapping between image pixels and one stage's response-map cells.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageGrid {
    pub width: usize,
    pub height: usize,
    /// Image pixels per map cell along x and y.
    pub scale: (f64, f64),
    /// Image coordinate of map coordinate (0, 0).
    pub origin: Point,
    /// Map coordinate of the center of cell 0 (0.5 for area-style cells).
    pub cell_center: f64,
    /// Descriptor radius in map cells.
    pub radius: f64,
}

impl StageGrid {
    pub fn to_map(&self, p: Point) -> Point {
        Point::new(
            (p.x - self.origin.x) / self.scale.0,
            (p.y - self.origin.y) / self.scale.1,
        )
    }

    /// Image coordinate of the center of cell `(row, col)`.
    pub fn cell_to_image(&self, row: usize, col: usize) -> Point {
        Point::new(
            self.origin.x + (col as f64 + self.cell_center) * self.scale.0,
            self.origin.y + (row as f64 + self.cell_center) * self.scale.1,
        )
    }

    fn contains_map_point(&self, m: Point) -> bool {
        m.x >= 0.0 && m.y >= 0.0 && m.x < self.width as f64 && m.y < self.height as f64
    }
}

/// Two-channel ground truth: presence disks and each disk's paradigm flag.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetMap {
    pub width: usize,
    pub height: usize,
    pub presence: Vec<f32>,
    pub paradigm: Vec<f32>,
}

impl TargetMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            presence: vec![0.0; width * height],
            paradigm: vec![0.0; width * height],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TargetWarning {
    /// Vertex maps outside the grid and was skipped.
    OutsideMap { index: usize },
    /// Stage radius violated the vertex's bounds; the clamped radius (image px) was used.
    RadiusClamped { index: usize, requested: f64, used: f64 },
}

/// Rasterizes presence disks of the grid radius around every annotation and
/// fills the paradigm channel with the `F` of the nearest owning vertex
/// (ties go to the lower index). `bounds`, when given, clamps each vertex's
/// radius into its admissible range.
pub fn build_target_maps(
    annotations: &[VertexAnnotation],
    grid: &StageGrid,
    bounds: Option<&[ParadigmBounds]>,
) -> (TargetMap, Vec<TargetWarning>) {
    let mut map = TargetMap::zeros(grid.width, grid.height);
    let mut warnings = Vec::new();
    let mut nearest = vec![f64::INFINITY; grid.width * grid.height];
    let px_per_cell = grid.scale.0.max(grid.scale.1);
    for (index, ann) in annotations.iter().enumerate() {
        let m = grid.to_map(ann.o);
        if !grid.contains_map_point(m) {
            warnings.push(TargetWarning::OutsideMap { index });
            continue;
        }
        let mut radius = grid.radius;
        if let Some(b) = bounds.and_then(|b| b.get(index)) {
            let requested = radius * px_per_cell;
            if !b.admits(requested) {
                let used = b.clamp(requested);
                warnings.push(TargetWarning::RadiusClamped { index, requested, used });
                radius = used / px_per_cell;
            }
        }
        let flag = ann.paradigm() as f32;
        let r2 = radius * radius;
        let x0 = ((m.x - grid.cell_center - radius).floor().max(0.0)) as usize;
        let y0 = ((m.y - grid.cell_center - radius).floor().max(0.0)) as usize;
        let x1 = ((m.x - grid.cell_center + radius).ceil() as usize).min(grid.width - 1);
        let y1 = ((m.y - grid.cell_center + radius).ceil() as usize).min(grid.height - 1);
        for row in y0..=y1 {
            for col in x0..=x1 {
                let dx = col as f64 + grid.cell_center - m.x;
                let dy = row as f64 + grid.cell_center - m.y;
                let d2 = dx * dx + dy * dy;
                if d2 > r2 {
                    continue;
                }
                let i = row * grid.width + col;
                map.presence[i] = 1.0;
                if d2 < nearest[i] {
                    nearest[i] = d2;
                    map.paradigm[i] = flag;
                }
            }
        }
    }
    (map, warnings)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64) -> Point {
        Point::new(x, y)
    }

    #[test]
    fn metric_examples() {
        let o = p(0.0, 0.0);
        assert_eq!(paradigm_metric(o, p(5.0, 0.0), p(0.0, 5.0)).unwrap(), 0);
        assert_eq!(paradigm_metric(o, p(5.0, 0.0), p(4.0, 3.0)).unwrap(), 1);
        assert_eq!(paradigm_metric(o, p(5.0, 0.0), p(-4.0, 3.0)).unwrap(), 0);
        assert!(paradigm_metric(o, o, p(1.0, 0.0)).is_err());
    }

    #[test]
    fn annotation_validation() {
        let o = p(10.0, 10.0);
        let x = p(1.0, 0.0);
        assert!(VertexAnnotation::new(o, [x, p(0.0, 1.0)], SlotType::Open).is_ok());
        assert!(VertexAnnotation::new(o, [x, p(0.0, 2.0)], SlotType::Open).is_err());
        assert!(VertexAnnotation::new(o, [x, x], SlotType::Open).is_err());
        let a = VertexAnnotation::new(o, [x, Point::from_angle(0.5f64.to_radians())], SlotType::Open);
        assert!(a.is_err());
    }

    #[test]
    fn slot_type_names_round_trip() {
        for t in SlotType::ALL {
            assert_eq!(t.name().parse::<SlotType>().unwrap(), t);
            assert_eq!(serde_json::to_string(&t).unwrap(), format!("\"{}\"", t.name()));
        }
        assert!("parallel".parse::<SlotType>().is_err());
    }

    fn h_band(w: usize, h: usize, cy: f64, half: f64) -> Mask {
        let mut m = Mask::new(w, h);
        for y in 0..h {
            for x in 0..w {
                if (y as f64 - cy).abs() < half {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    fn v_band(w: usize, h: usize, cx: f64, half: f64) -> Mask {
        let mut m = Mask::new(w, h);
        for y in 0..h {
            for x in 0..w {
                if (x as f64 - cx).abs() < half {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    #[test]
    fn lower_bound_of_perpendicular_width_four_cross() {
        let strokes = [h_band(101, 101, 50.5, 2.0), v_band(101, 101, 50.5, 2.0)];
        let d = paradigm_lower_bound(&strokes, p(50.5, 50.5)).unwrap();
        assert!((d - 2.0 * 2f64.sqrt()).abs() <= 0.5, "{d}");
    }

    #[test]
    fn lower_bound_of_single_pixel_lines() {
        let strokes = [h_band(41, 41, 20.0, 0.5), v_band(41, 41, 20.0, 0.5)];
        assert!(paradigm_lower_bound(&strokes, p(20.0, 20.0)).unwrap() <= 1.0);
    }

    #[test]
    fn lower_bound_rejects_off_mask_vertex() {
        let strokes = [h_band(41, 41, 20.0, 0.5)];
        assert!(paradigm_lower_bound(&strokes, p(5.0, 5.0)).is_err());
    }

    #[test]
    fn upper_bound_examples() {
        let lone = [p(100.0, 100.0)];
        assert_eq!(paradigm_upper_bound(&lone, &[], 200, 200, 0), 100.0);
        let pair = [p(100.0, 100.0), p(160.0, 100.0)];
        assert_eq!(paradigm_upper_bound(&pair, &[], 400, 400, 0), 60.0);
        // a line 20 px to the left, not through the vertex
        let line = v_band(200, 200, 80.0, 0.5);
        let d = paradigm_upper_bound(&lone, &[line], 200, 200, 0);
        assert!((d - 19.5).abs() < 1e-9, "{d}");
    }

    #[test]
    fn descriptor_pair_ordering() {
        assert!(CircularDescriptor::check_pair(12.0, 3.0).is_ok());
        assert!(CircularDescriptor::check_pair(3.0, 3.0).is_err());
        assert!(CircularDescriptor::new(0.0, 0, Stage::Fine).is_err());
    }

    fn coarse_grid(radius: f64) -> StageGrid {
        StageGrid {
            width: 80,
            height: 24,
            scale: (4.0, 4.0),
            origin: p(0.0, 0.0),
            cell_center: 0.5,
            radius,
        }
    }

    #[test]
    fn empty_annotations_give_zero_maps() {
        let (m, w) = build_target_maps(&[], &coarse_grid(3.0), None);
        assert!(w.is_empty());
        assert!(m.presence.iter().chain(&m.paradigm).all(|&v| v == 0.0));
    }

    #[test]
    fn coarse_disk_is_centered_on_scaled_vertex() {
        let ann = VertexAnnotation::new(p(40.0, 20.0), [p(1.0, 0.0), p(0.0, 1.0)], SlotType::Rectangular).unwrap();
        let grid = coarse_grid(2.0);
        assert_eq!(grid.to_map(ann.o), p(10.0, 5.0));
        let (m, _) = build_target_maps(&[ann], &grid, None);
        let cells: Vec<(usize, usize)> = (0..24 * 80)
            .filter(|&i| m.presence[i] == 1.0)
            .map(|i| (i / 80, i % 80))
            .collect();
        // cell centers at (col + 0.5, row + 0.5) within 2 of (10, 5)
        let n = cells.len() as f64;
        let (mr, mc) = cells
            .iter()
            .fold((0.0, 0.0), |(a, b), &(r, c)| (a + r as f64 + 0.5, b + c as f64 + 0.5));
        assert_eq!((mr / n, mc / n), (5.0, 10.0));
        assert_eq!(cells.len(), 12);
    }

    #[test]
    fn fine_disk_of_radius_three_has_29_cells() {
        let ann = VertexAnnotation::new(p(112.0, 80.0), [p(1.0, 0.0), p(0.0, 1.0)], SlotType::Rectangular).unwrap();
        let grid = StageGrid {
            width: 25,
            height: 25,
            scale: (1.0, 1.0),
            origin: p(100.0, 68.0),
            cell_center: 0.0,
            radius: 3.0,
        };
        let (m, _) = build_target_maps(&[ann], &grid, None);
        assert_eq!(m.presence.iter().filter(|&&v| v == 1.0).count(), 29);
        assert_eq!(m.presence[12 * 25 + 12], 1.0);
    }

    #[test]
    fn outside_vertices_and_clamped_radii_warn() {
        let dirs = [p(1.0, 0.0), p(0.0, 1.0)];
        let anns = [
            VertexAnnotation::new(p(-5.0, 20.0), dirs, SlotType::Open).unwrap(),
            VertexAnnotation::new(p(40.0, 40.0), dirs, SlotType::Open).unwrap(),
        ];
        let bounds = [
            ParadigmBounds::new(1.0, 50.0).unwrap(),
            ParadigmBounds::new(1.0, 8.0).unwrap(),
        ];
        let (m, w) = build_target_maps(&anns, &coarse_grid(3.0), Some(&bounds));
        assert_eq!(w[0], TargetWarning::OutsideMap { index: 0 });
        assert_eq!(
            w[1],
            TargetWarning::RadiusClamped {
                index: 1,
                requested: 12.0,
                used: 8.0
            }
        );
        assert!(m.presence.iter().filter(|&&v| v == 1.0).count() > 0);
        assert!(m.paradigm.iter().zip(&m.presence).all(|(a, b)| a <= b));
    }

    #[test]
    fn arcs_wrap_around() {
        let mut on = vec![false; 12];
        on[11] = true;
        on[0] = true;
        on[5] = true;
        let mut c = arc_centers(&on);
        c.sort_by(f64::total_cmp);
        assert_eq!(c, vec![5.0, 11.5]);
    }

    #[test]
    fn paradigm_estimate_from_directions() {
        let dirs = [p(1.0, 0.0), p(-1.0, 0.0), Point::from_angle(88f64.to_radians())];
        assert_eq!(estimate_paradigm(&dirs, 5.0), Some(0));
        let oblique = [p(1.0, 0.0), p(-1.0, 0.0), Point::from_angle(45f64.to_radians())];
        assert_eq!(estimate_paradigm(&oblique, 5.0), Some(1));
        assert_eq!(estimate_paradigm(&dirs[..1], 5.0), None);
    }
}
