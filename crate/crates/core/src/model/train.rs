use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{stage1_graph, stage2_graph, stage_loss, CascadeModel};
use crate::descriptor::{build_target_maps, StageGrid, VertexAnnotation};
use crate::error::{Error, Result};
use crate::geom::Point;
use crate::raster::{network_input, Image};
use crate::synthgen::LabeledSample;
use crate::tensor::{clip_grad_norm, Graph, Sgd, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Stops after this many optimizer steps when set.
    pub max_steps: Option<usize>,
    /// Strips per stage-1 step.
    pub batch: usize,
    /// Stage-2 crops drawn per sample in a step.
    pub crops_per_sample: usize,
    pub lr1: f32,
    pub lr2: f32,
    pub momentum: f32,
    /// Cap on the joint norm of the batch-mean gradient, per stage; 0 disables clipping.
    pub clip_norm: f32,
    /// Learning rates are multiplied by `lr_decay` for the last `1 - decay_start` of the epochs.
    pub lr_decay: f32,
    pub decay_start: f64,
    /// Share of stage-2 crops centered away from every vertex.
    pub negative_fraction: f64,
    /// Half-width of the uniform positive-crop jitter, pixels.
    pub jitter: i64,
    pub flips: bool,
    pub seed: u64,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            max_steps: None,
            batch: 8,
            crops_per_sample: 8,
            lr1: 0.01,
            lr2: 0.01,
            momentum: 0.9,
            clip_norm: 10.0,
            lr_decay: 0.1,
            decay_start: 0.75,
            negative_fraction: 0.3,
            jitter: 6,
            flips: true,
            seed: 0,
            checkpoint_dir: None,
        }
    }
}

/// Mean per-item losses of one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub steps: usize,
    pub stage1: f64,
    pub stage2: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: CascadeModel,
    pub curve: Vec<LossRecord>,
    /// Per-step mean item losses `(stage1, stage2)`.
    pub step_losses: Vec<(f64, f64)>,
}

impl TrainOutcome {
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("epoch,steps,stage1_loss,stage2_loss\n");
        for r in &self.curve {
            let _ = writeln!(s, "{},{},{:.6},{:.6}", r.epoch, r.steps, r.stage1, r.stage2);
        }
        s
    }
}

/// Image as seen through optional horizontal/vertical flips.
struct View<'a> {
    image: &'a Image,
    flip_x: bool,
    flip_y: bool,
}

impl View<'_> {
    fn map_point(&self, p: Point) -> Point {
        let (w, h) = (self.image.width() as f64, self.image.height() as f64);
        Point::new(
            if self.flip_x { w - 1.0 - p.x } else { p.x },
            if self.flip_y { h - 1.0 - p.y } else { p.y },
        )
    }

    fn map_dir(&self, d: Point) -> Point {
        Point::new(
            if self.flip_x { -d.x } else { d.x },
            if self.flip_y { -d.y } else { d.y },
        )
    }

    fn annotations(&self, anns: &[VertexAnnotation]) -> Vec<VertexAnnotation> {
        anns.iter()
            .map(|a| VertexAnnotation {
                o: self.map_point(a.o),
                incident_dirs: a.incident_dirs.map(|d| self.map_dir(d)),
                slot_type: a.slot_type,
            })
            .collect()
    }

    /// Window with top-left `(x0, y0)` in view coordinates, zero-padded, into `out` `[3, h, w]`.
    fn window(&self, x0: i64, y0: i64, w: usize, h: usize, out: &mut [f32]) {
        let (iw, ih) = (self.image.width() as i64, self.image.height() as i64);
        let plane = w * h;
        let ch = self.image.channels();
        let data = self.image.data();
        for wy in 0..h {
            let vy = y0 + wy as i64;
            if vy < 0 || vy >= ih {
                continue;
            }
            let sy = if self.flip_y { ih - 1 - vy } else { vy };
            for wx in 0..w {
                let vx = x0 + wx as i64;
                if vx < 0 || vx >= iw {
                    continue;
                }
                let sx = if self.flip_x { iw - 1 - vx } else { vx };
                let base = (sy * iw + sx) as usize * ch;
                for c in 0..3 {
                    let v = data[base + if ch == 1 { 0 } else { c }];
                    out[c * plane + wy * w + wx] = network_input(v);
                }
            }
        }
    }
}

fn crop_center(
    rng: &mut ChaCha8Rng,
    anns: &[VertexAnnotation],
    negative: bool,
    jitter: i64,
    w: usize,
    h: usize,
) -> Point {
    if !negative || anns.is_empty() {
        if anns.is_empty() {
            return Point::new(
                rng.gen_range(0.0..w as f64).round(),
                rng.gen_range(0.0..h as f64).round(),
            );
        }
        let a = anns[rng.gen_range(0..anns.len())];
        let dx = rng.gen_range(-jitter..=jitter) as f64;
        let dy = rng.gen_range(-jitter..=jitter) as f64;
        return Point::new(a.o.x.round() + dx, a.o.y.round() + dy);
    }
    let min_dist = jitter as f64 + 3.0;
    for _ in 0..100 {
        let p = if rng.gen_bool(0.5) {
            // along a marking line leaving a vertex
            let a = anns[rng.gen_range(0..anns.len())];
            let d = match rng.gen_range(0..3) {
                0 => a.incident_dirs[0],
                1 => a.incident_dirs[1],
                _ => -a.incident_dirs[1],
            };
            a.o + d * rng.gen_range(min_dist..min_dist + 25.0)
        } else {
            Point::new(rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64))
        };
        let p = Point::new(p.x.round(), p.y.round());
        let inside = p.x >= 0.0 && p.y >= 0.0 && p.x < w as f64 && p.y < h as f64;
        if inside && anns.iter().all(|a| a.o.dist(p) >= min_dist) {
            return p;
        }
    }
    Point::new(
        rng.gen_range(0.0..w as f64).round(),
        rng.gen_range(0.0..h as f64).round(),
    )
}

fn diverged(stage: &'static str, step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } | Error::NonFiniteGradient { .. } => Error::Diverged { step, stage },
        other => other,
    }
}

/// Trains both stages together with independent losses and optimizers.
/// Stage 1 sees one randomly placed strip per sample per epoch; stage 2 sees
/// jittered crops around vertices plus negatives drawn from the same samples.
pub fn train(samples: &[LabeledSample], mut model: CascadeModel, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("training needs at least one sample".into()));
    }
    if cfg.batch == 0 || cfg.epochs == 0 {
        return Err(Error::Config("batch and epochs must be positive".into()));
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let s1 = model.stage1;
    let s2 = model.stage2;
    let mut sgd1 = Sgd::new(cfg.lr1, cfg.momentum)?;
    let mut sgd2 = Sgd::new(cfg.lr2, cfg.momentum)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let last_offset = s1.image_h.saturating_sub(s1.input_h);
    let (mh, mw) = (s1.map_h(), s1.map_w());
    let side = s2.side;
    let half = (side / 2) as i64;
    let n_neg = (cfg.crops_per_sample as f64 * cfg.negative_fraction).round() as usize;

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut curve = Vec::new();
    let mut step_losses = Vec::new();
    let mut step = 0usize;
    let mut stop = false;
    for epoch in 0..cfg.epochs {
        let decay = if (epoch as f64) < cfg.decay_start * cfg.epochs as f64 {
            1.0
        } else {
            cfg.lr_decay
        };
        order.shuffle(&mut rng);
        let (mut sum1, mut sum2, mut steps_in_epoch) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                stop = true;
                break;
            }
            let n = chunk.len();
            let mut strips = vec![0.0f32; n * 3 * s1.input_h * s1.input_w];
            let mut targets1 = vec![0.0f32; n * 2 * mh * mw];
            let crops_n = n * cfg.crops_per_sample;
            let mut crops = vec![0.0f32; crops_n * 3 * side * side];
            let mut targets2 = vec![0.0f32; crops_n * side * side];
            for (b, &si) in chunk.iter().enumerate() {
                let sample = &samples[si];
                let view = View {
                    image: &sample.image,
                    flip_x: cfg.flips && rng.gen_bool(0.5),
                    flip_y: cfg.flips && rng.gen_bool(0.5),
                };
                let anns = view.annotations(&sample.annotations);
                let oy = rng.gen_range(0..=last_offset);
                let strip_len = 3 * s1.input_h * s1.input_w;
                view.window(
                    0,
                    oy as i64,
                    s1.input_w,
                    s1.input_h,
                    &mut strips[b * strip_len..(b + 1) * strip_len],
                );
                let grid = StageGrid {
                    width: mw,
                    height: mh,
                    scale: (s1.k_w as f64, s1.k_h as f64),
                    origin: Point::new(0.0, oy as f64),
                    cell_center: 0.5,
                    radius: s1.radius,
                };
                let (map, _) = build_target_maps(&anns, &grid, None);
                let t = &mut targets1[b * 2 * mh * mw..(b + 1) * 2 * mh * mw];
                t[..mh * mw].copy_from_slice(&map.presence);
                t[mh * mw..].copy_from_slice(&map.paradigm);

                for c in 0..cfg.crops_per_sample {
                    let center = crop_center(
                        &mut rng,
                        &anns,
                        c < n_neg,
                        cfg.jitter,
                        sample.image.width(),
                        sample.image.height(),
                    );
                    let (x0, y0) = (center.x as i64 - half, center.y as i64 - half);
                    let k = b * cfg.crops_per_sample + c;
                    view.window(
                        x0,
                        y0,
                        side,
                        side,
                        &mut crops[k * 3 * side * side..(k + 1) * 3 * side * side],
                    );
                    let grid = StageGrid {
                        width: side,
                        height: side,
                        scale: (1.0, 1.0),
                        origin: Point::new(x0 as f64, y0 as f64),
                        cell_center: 0.0,
                        radius: s2.radius,
                    };
                    let (map, _) = build_target_maps(&anns, &grid, None);
                    targets2[k * side * side..(k + 1) * side * side].copy_from_slice(&map.presence);
                }
            }

            sgd1.set_lr(cfg.lr1 * decay / n as f32);
            let mut g = Graph::new();
            let ids = model.params1.bind(&mut g)?;
            let x = g.input(Tensor::new(vec![n, 3, s1.input_h, s1.input_w], strips)?)?;
            let y = stage1_graph(&s1, &model.params1, &ids, &mut g, x).map_err(diverged("stage-1", step))?;
            let target = Tensor::new(vec![n, 2, mh, mw], targets1)?;
            let l1 = stage_loss(&mut g, y, &target).map_err(diverged("stage-1", step))?;
            let loss1 = g.scalar(l1) / n as f64;
            g.backward(l1).map_err(diverged("stage-1", step))?;
            g.export_grads(&ids, &mut model.params1.tensors)?;
            clip_grad_norm(&mut model.params1.tensors, cfg.clip_norm * n as f32);
            sgd1.step(&mut model.params1.tensors)
                .map_err(diverged("stage-1", step))?;
            drop(g);

            sgd2.set_lr(cfg.lr2 * decay / crops_n as f32);
            let mut g = Graph::new();
            let ids = model.params2.bind(&mut g)?;
            let x = g.input(Tensor::new(vec![crops_n, 3, side, side], crops)?)?;
            let y = stage2_graph(&s2, &model.params2, &ids, &mut g, x).map_err(diverged("stage-2", step))?;
            let target = Tensor::new(vec![crops_n, 1, side, side], targets2)?;
            let l2 = stage_loss(&mut g, y, &target).map_err(diverged("stage-2", step))?;
            let loss2 = g.scalar(l2) / crops_n as f64;
            g.backward(l2).map_err(diverged("stage-2", step))?;
            g.export_grads(&ids, &mut model.params2.tensors)?;
            clip_grad_norm(&mut model.params2.tensors, cfg.clip_norm * crops_n as f32);
            sgd2.step(&mut model.params2.tensors)
                .map_err(diverged("stage-2", step))?;

            for t in model.params1.tensors.iter_mut().chain(model.params2.tensors.iter_mut()) {
                t.set_grad(None)?;
            }
            log::debug!("step {step}: stage1 {loss1:.4} stage2 {loss2:.4}");
            step_losses.push((loss1, loss2));
            sum1 += loss1;
            sum2 += loss2;
            steps_in_epoch += 1;
            step += 1;
        }
        if steps_in_epoch == 0 {
            break;
        }
        let record = LossRecord {
            epoch,
            steps: step,
            stage1: sum1 / steps_in_epoch as f64,
            stage2: sum2 / steps_in_epoch as f64,
        };
        log::info!(
            "epoch {epoch}: stage1 {:.4} stage2 {:.4} ({step} steps)",
            record.stage1,
            record.stage2
        );
        curve.push(record);
        if let Some(dir) = &cfg.checkpoint_dir {
            model.save(&dir.join(format!("epoch-{epoch:03}.scm1")))?;
        }
        if stop {
            break;
        }
    }
    let outcome = TrainOutcome {
        model,
        curve,
        step_losses,
    };
    if let Some(dir) = &cfg.checkpoint_dir {
        let path = dir.join("loss.csv");
        std::fs::write(&path, outcome.curve_csv()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(outcome)
}
