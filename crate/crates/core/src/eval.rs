//! Vertex and slot precision/recall, and latency benchmarking.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptor::SlotType;
use crate::error::{Error, Result};
use crate::geom::Point;
use crate::pipeline::Detections;
use crate::synthgen::LabeledSample;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchCriterion {
    /// Vertex match radius, pixels.
    pub epsilon: f64,
}

impl Default for MatchCriterion {
    fn default() -> Self {
        Self { epsilon: 4.0 }
    }
}

impl MatchCriterion {
    pub fn new(epsilon: f64) -> Result<Self> {
        if epsilon > 0.0 {
            Ok(Self { epsilon })
        } else {
            Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {epsilon}"
            )))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VertexMatch {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// `(detection, ground truth, distance)`.
    pub pairs: Vec<(usize, usize, f64)>,
}

/// Greedy one-to-one matching by ascending distance (ties by detection, then
/// ground-truth index); only pairs within `epsilon` are eligible.
pub fn match_vertices(detections: &[Point], ground_truth: &[Point], criterion: &MatchCriterion) -> VertexMatch {
    let mut cand = Vec::new();
    for (i, d) in detections.iter().enumerate() {
        for (j, g) in ground_truth.iter().enumerate() {
            let dist = d.dist(*g);
            if dist <= criterion.epsilon {
                cand.push((dist, i, j));
            }
        }
    }
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut det_used = vec![false; detections.len()];
    let mut gt_used = vec![false; ground_truth.len()];
    let mut pairs = Vec::new();
    for (dist, i, j) in cand {
        if !det_used[i] && !gt_used[j] {
            det_used[i] = true;
            gt_used[j] = true;
            pairs.push((i, j, dist));
        }
    }
    let tp = pairs.len();
    VertexMatch {
        tp,
        fp: detections.len() - tp,
        fn_: ground_truth.len() - tp,
        pairs,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Sum of matched distances, pixels.
    pub error_sum: f64,
}

impl Counts {
    /// `TP / (TP + FP)`, 1 when nothing was detected.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `TP / (TP + FN)`, 1 when there was nothing to find.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn mean_error(&self) -> f64 {
        if self.tp == 0 {
            0.0
        } else {
            self.error_sum / self.tp as f64
        }
    }

    fn add(&mut self, o: &Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.error_sum += o.error_sum;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        1.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub stage: String,
    pub per_type: BTreeMap<SlotType, Counts>,
    pub total: Counts,
}

impl EvalReport {
    fn new(stage: &str) -> Self {
        Self {
            stage: stage.into(),
            per_type: BTreeMap::new(),
            total: Counts::default(),
        }
    }

    fn add(&mut self, t: SlotType, c: &Counts) {
        self.per_type.entry(t).or_default().add(c);
        self.total.add(c);
    }

    pub fn to_json(&self) -> serde_json::Value {
        let row = |c: &Counts| {
            serde_json::json!({
                "precision": c.precision(),
                "recall": c.recall(),
                "mean_error": c.mean_error(),
                "tp": c.tp,
                "fp": c.fp,
                "fn": c.fn_,
            })
        };
        let per_type: serde_json::Map<String, serde_json::Value> = self
            .per_type
            .iter()
            .map(|(t, c)| (t.name().to_string(), row(c)))
            .collect();
        serde_json::json!({ "stage": self.stage, "total": row(&self.total), "per_type": per_type })
    }

    pub fn table(&self) -> String {
        let mut s = format!("[{}]\n", self.stage);
        let _ = writeln!(
            s,
            "{:<12} {:>9} {:>9} {:>9} {:>6} {:>6} {:>6}",
            "type", "precision", "recall", "err_px", "tp", "fp", "fn"
        );
        let mut line = |name: &str, c: &Counts| {
            let _ = writeln!(
                s,
                "{:<12} {:>9.4} {:>9.4} {:>9.3} {:>6} {:>6} {:>6}",
                name,
                c.precision(),
                c.recall(),
                c.mean_error(),
                c.tp,
                c.fp,
                c.fn_
            );
        };
        for (t, c) in &self.per_type {
            line(t.name(), c);
        }
        line("all", &self.total);
        s
    }
}

/// Stage-wise reports over one split.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub proposals: EvalReport,
    pub refined: EvalReport,
    pub slots: EvalReport,
}

impl Evaluation {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "proposals": self.proposals.to_json(),
            "refined": self.refined.to_json(),
            "slots": self.slots.to_json(),
        })
    }

    pub fn table(&self) -> String {
        format!(
            "{}\n{}\n{}",
            self.proposals.table(),
            self.refined.table(),
            self.slots.table()
        )
    }
}

/// A detected slot is correct when both ends match the two vertices of one ground-truth slot.
pub fn match_slots(det: &Detections, sample: &LabeledSample, vertex_match: &VertexMatch) -> Counts {
    let mut gt_of = vec![None; det.vertices.len()];
    for &(d, g, _) in &vertex_match.pairs {
        gt_of[d] = Some(g);
    }
    let mut gt_hit = vec![false; sample.slots.len()];
    let mut tp = 0;
    for s in &det.slots {
        let (Some(a), Some(b)) = (gt_of[s.vertices[0]], gt_of[s.vertices[1]]) else {
            continue;
        };
        if let Some(k) = sample
            .slots
            .iter()
            .position(|&[x, y]| (x == a && y == b) || (x == b && y == a))
        {
            if !gt_hit[k] {
                gt_hit[k] = true;
                tp += 1;
            }
        }
    }
    Counts {
        tp,
        fp: det.slots.len() - tp,
        fn_: sample.slots.len() - tp,
        error_sum: 0.0,
    }
}

fn vertex_counts(points: &[Point], gt: &[Point], criterion: &MatchCriterion) -> (Counts, VertexMatch) {
    let m = match_vertices(points, gt, criterion);
    let c = Counts {
        tp: m.tp,
        fp: m.fp,
        fn_: m.fn_,
        error_sum: m.pairs.iter().map(|p| p.2).sum(),
    };
    (c, m)
}

/// Runs `detector` on every sample (in parallel) and reduces in sample order.
pub fn evaluate<F>(samples: &[LabeledSample], detector: F, criterion: &MatchCriterion) -> Result<Evaluation>
where
    F: Fn(&LabeledSample) -> Result<Detections> + Sync,
{
    if samples.is_empty() {
        return Err(Error::EmptyDataset("evaluation split has no samples".into()));
    }
    let per_image = samples
        .par_iter()
        .map(|s| {
            let det = detector(s)?;
            let gt = s.vertices();
            let props: Vec<Point> = det.proposals.iter().map(|p| p.position).collect();
            let verts: Vec<Point> = det.vertices.iter().map(|v| v.position).collect();
            let (pc, _) = vertex_counts(&props, &gt, criterion);
            let (rc, m) = vertex_counts(&verts, &gt, criterion);
            let sc = match_slots(&det, s, &m);
            Ok((s.slot_type, pc, rc, sc))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ev = Evaluation {
        proposals: EvalReport::new("proposals"),
        refined: EvalReport::new("refined"),
        slots: EvalReport::new("slots"),
    };
    for (t, pc, rc, sc) in &per_image {
        ev.proposals.add(*t, pc);
        ev.refined.add(*t, rc);
        ev.slots.add(*t, sc);
    }
    Ok(ev)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub threads: usize,
    /// `(image index, latency ms)` per timed iteration.
    pub latencies: Vec<(usize, f64)>,
    pub total_seconds: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub fps: f64,
}

impl BenchRecord {
    pub fn csv(&self) -> String {
        let mut s = String::from("image_index,latency_ms\n");
        for (i, ms) in &self.latencies {
            let _ = writeln!(s, "{i},{ms:.4}");
        }
        s
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

/// Times `run` over `iters` images (cycling) after `warmup` untimed calls,
/// inside a pool of `threads` workers.
pub fn benchmark<I, F>(images: &[I], warmup: usize, iters: usize, threads: usize, run: F) -> Result<BenchRecord>
where
    I: Sync,
    F: Fn(&I) -> Result<()> + Sync,
{
    if iters < 10 || images.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "benchmark needs >= 10 iterations and at least one image (got {iters}, {})",
            images.len()
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    pool.install(|| {
        for k in 0..warmup {
            run(&images[k % images.len()])?;
        }
        let mut latencies = Vec::with_capacity(iters);
        let start = Instant::now();
        for k in 0..iters {
            let i = k % images.len();
            let t = Instant::now();
            run(&images[i])?;
            latencies.push((i, t.elapsed().as_secs_f64() * 1e3));
        }
        let total_seconds = start.elapsed().as_secs_f64();
        let mut sorted: Vec<f64> = latencies.iter().map(|l| l.1).collect();
        sorted.sort_by(f64::total_cmp);
        Ok(BenchRecord {
            threads: threads.max(1),
            median_ms: percentile(&sorted, 0.5),
            p95_ms: percentile(&sorted, 0.95),
            fps: iters as f64 / total_seconds,
            total_seconds,
            latencies,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[(f64, f64)]) -> Vec<Point> {
        v.iter().map(|&(x, y)| Point::new(x, y)).collect()
    }

    #[test]
    fn matching_examples() {
        let gt = pts(&[(10.0, 10.0), (50.0, 50.0)]);
        let m = match_vertices(&gt, &gt, &MatchCriterion::default());
        assert_eq!((m.tp, m.fp, m.fn_), (2, 0, 0));
        let det = pts(&[(11.0, 10.0), (50.0, 52.0), (200.0, 10.0)]);
        let m = match_vertices(&det, &gt, &MatchCriterion::default());
        assert_eq!((m.tp, m.fp, m.fn_), (2, 1, 0));
        let twin = pts(&[(11.0, 10.0), (9.0, 11.0)]);
        let m = match_vertices(&twin, &gt[..1], &MatchCriterion::default());
        assert_eq!((m.tp, m.fp, m.fn_), (1, 1, 0));
        assert_eq!(m.pairs[0].0, 0);
    }

    #[test]
    fn vacuous_ratios_are_one() {
        let c = Counts::default();
        assert_eq!((c.precision(), c.recall()), (1.0, 1.0));
        let c = Counts {
            fn_: 3,
            ..Default::default()
        };
        assert_eq!((c.precision(), c.recall()), (1.0, 0.0));
        assert!(MatchCriterion::new(0.0).is_err());
    }

    #[test]
    fn fps_is_iterations_over_total_time() {
        let r = benchmark(&[1u64, 2, 3], 2, 12, 1, |&n| {
            std::hint::black_box((0..n * 1000).sum::<u64>());
            Ok(())
        })
        .unwrap();
        assert_eq!(r.latencies.len(), 12);
        assert!((r.fps - 12.0 / r.total_seconds).abs() < 1e-9);
        assert!(r.median_ms <= r.p95_ms);
        assert!(benchmark(&[1u64], 0, 9, 1, |_| Ok(())).is_err());
    }
}
