use proptest::prelude::*;
use psdet::descriptor::{SlotType, StageGrid};
use psdet::geom::Point;
use psdet::model::{CascadeModel, Stage1Config, Stage2Config};
use psdet::pipeline::{
    crop_subimage, detect, extract_proposals, normalize_map, propose, refine, DetectedVertex, Detections,
    PipelineConfig,
};
use psdet::raster::Image;
use psdet::synthgen::{generate, SceneSpec};

/// Largest sub-pixel error tolerated on an exact quadratic bump.
const BUMP_TOL: f64 = 0.1;

fn blank() -> Image {
    let mut img = Image::new(320, 240, 3);
    img.data_mut().fill(90);
    img
}

/// Zero weights with fixed output biases: every stage-1 cell and every stage-2 cell is constant.
fn constant_model(presence_bias: f32, refine_bias: f32) -> CascadeModel {
    let mut m = CascadeModel::zeroed(Stage1Config::default(), Stage2Config::default()).unwrap();
    m.params1.tensors.last_mut().unwrap().data_mut()[0] = presence_bias;
    m.params2.tensors.last_mut().unwrap().data_mut()[0] = refine_bias;
    m
}

fn grid() -> StageGrid {
    StageGrid {
        width: 80,
        height: 24,
        scale: (4.0, 4.0),
        origin: Point::new(0.0, 0.0),
        cell_center: 0.5,
        radius: 3.0,
    }
}

#[test]
fn quadratic_bump_is_recovered_to_subpixel_accuracy() {
    for (px, py) in [(12.3, 11.7), (12.0, 12.0), (7.45, 15.2), (18.6, 5.5)] {
        let map: Vec<f32> = (0..625)
            .map(|i| {
                let (x, y) = ((i % 25) as f64, (i / 25) as f64);
                (4.0 - 0.3 * (x - px).powi(2) - 0.5 * (y - py).powi(2)) as f32
            })
            .collect();
        // quadratic path: no blob averaging
        let r = refine(&map, 25, 0.5, 0.5, 0.0).unwrap().unwrap();
        let got = Point::new(r.offset.x + 12.0, r.offset.y + 12.0);
        assert!(
            got.dist(Point::new(px, py)) <= BUMP_TOL,
            "bump at ({px}, {py}) recovered at {got:?}"
        );
    }
}

#[test]
fn centered_refinement_returns_the_proposal() {
    let img = blank();
    let p = Point::new(150.0, 97.0);
    let (_, (x0, y0)) = crop_subimage(&img, p, 25);
    assert_eq!((x0, y0), (138, 85));
    let mut map = vec![-4.0f32; 625];
    map[12 * 25 + 12] = 2.0;
    let r = refine(&map, 25, 0.5, 0.05, 6.0).unwrap().unwrap();
    let refined = Point::new(x0 as f64 + 12.0 + r.offset.x, y0 as f64 + 12.0 + r.offset.y);
    assert_eq!(refined, p);
}

#[test]
fn blank_image_gives_no_detections() {
    for model in [
        CascadeModel::new(Stage1Config::default(), Stage2Config::default(), 3).unwrap(),
        constant_model(-3.0, 5.0),
    ] {
        let d = detect(&model, &blank(), &PipelineConfig::default()).unwrap();
        assert_eq!(d, Detections::default());
    }
}

#[test]
fn overlapping_strips_collapse_to_single_vertices() {
    // every cell passes, so both strips propose in their shared rows
    let model = constant_model(4.0, 4.0);
    let cfg = PipelineConfig::default();
    let d = detect(&model, &blank(), &cfg).unwrap();
    assert!(!d.proposals.is_empty());
    for (i, a) in d.proposals.iter().enumerate() {
        for b in &d.proposals[i + 1..] {
            assert!(a.position.dist(b.position) > cfg.merge_radius, "{a:?} and {b:?}");
        }
    }
    for (i, a) in d.vertices.iter().enumerate() {
        for b in &d.vertices[i + 1..] {
            assert!(a.position.dist(b.position) > cfg.merge_radius);
        }
    }
    // the shared rows of the first two strips did produce proposals
    let rows: Vec<f64> = d.proposals.iter().map(|p| p.position.y).collect();
    assert!(rows.iter().any(|&y| (72.0..96.0).contains(&y)));
}

#[test]
fn refined_vertices_stay_inside_their_crops() {
    let model = CascadeModel::new(Stage1Config::default(), Stage2Config::default(), 8).unwrap();
    let mut m = model.clone();
    // accept every crop so containment is exercised on every proposal
    m.params1.tensors.last_mut().unwrap().data_mut()[0] = 4.0;
    m.params2.tensors.last_mut().unwrap().data_mut()[0] = 6.0;
    let half = (model.stage2.side / 2) as f64 + 0.5;
    for seed in 0..4 {
        let s = generate(&SceneSpec::sample(SlotType::ALL[seed as usize], 60 + seed)).unwrap();
        let d = detect(&m, &s.image, &PipelineConfig::default()).unwrap();
        assert!(!d.vertices.is_empty());
        for v in &d.vertices {
            let c = Point::new(v.proposal.x.round(), v.proposal.y.round());
            assert!(
                (v.position.x - c.x).abs() <= half && (v.position.y - c.y).abs() <= half,
                "{v:?}"
            );
            assert!((0.0..=1.0).contains(&v.score));
        }
        for p in &d.proposals {
            assert!((0.0..=1.0).contains(&p.score));
            assert!(p.position.x >= 0.0 && p.position.y >= 0.0 && p.position.x <= 320.0 && p.position.y <= 240.0);
        }
    }
}

#[test]
fn detection_is_deterministic_and_thread_independent() {
    let model = CascadeModel::new(Stage1Config::default(), Stage2Config::default(), 5).unwrap();
    let mut m = model;
    m.params1.tensors.last_mut().unwrap().data_mut()[0] = 2.1;
    m.params2.tensors.last_mut().unwrap().data_mut()[0] = 2.0;
    let s = generate(&SceneSpec::sample(SlotType::Brick, 77)).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| detect(&m, &s.image, &PipelineConfig::default()).unwrap())
    };
    let a = run(1);
    assert_eq!(a, run(1));
    assert_eq!(a, run(3));
}

#[test]
fn raising_the_threshold_never_adds_proposals() {
    let m = CascadeModel::new(Stage1Config::default(), Stage2Config::default(), 6).unwrap();
    let s = generate(&SceneSpec::sample(SlotType::Grass, 31)).unwrap();
    let mut last = usize::MAX;
    for t in [0.01, 0.05, 0.1, 0.11, 0.12, 0.13, 0.15, 0.2, 0.5, 0.9] {
        let cfg = PipelineConfig {
            threshold: t,
            ..Default::default()
        };
        let n = propose(&m, &s.image, &cfg).unwrap().len();
        assert!(n <= last, "threshold {t}: {n} > {last}");
        last = n;
    }
}

#[test]
fn wrong_image_extent_is_rejected() {
    let m = constant_model(0.0, 0.0);
    assert_eq!(
        detect(&m, &Image::new(320, 200, 3), &PipelineConfig::default())
            .unwrap_err()
            .kind(),
        "shape"
    );
}

#[test]
fn slot_entrances_respect_the_configured_range() {
    let cfg = PipelineConfig::default();
    for seed in 0..14 {
        let s = generate(&SceneSpec::sample(SlotType::ALL[seed % 7], 400 + seed as u64)).unwrap();
        let v: Vec<DetectedVertex> = s
            .annotations
            .iter()
            .map(|a| DetectedVertex {
                position: a.o,
                score: 1.0,
                paradigm: a.paradigm(),
                proposal: a.o,
            })
            .collect();
        let slots = psdet::pipeline::assemble_slots(&s.image, &v, &cfg);
        let mut degree = vec![0; v.len()];
        for slot in &slots {
            assert!((cfg.entrance_min..=cfg.entrance_max).contains(&slot.entrance_width));
            degree[slot.vertices[0]] += 1;
            degree[slot.vertices[1]] += 1;
        }
        assert!(degree.iter().all(|&d| d <= 2));
    }
}

proptest! {
    #[test]
    fn softmax_sums_to_one(m in prop::collection::vec(-30.0f32..30.0, 1..2000)) {
        let n = normalize_map(&m);
        let s: f64 = n.softmax.iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-6);
        prop_assert!(n.logistic.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn proposal_count_is_monotone_in_threshold(
        m in prop::collection::vec(0.0f64..1.0, 80 * 24),
        a in 0.01f64..0.99,
        b in 0.01f64..0.99,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let n_lo = extract_proposals(&m, None, &grid(), lo, 3.0).unwrap();
        let n_hi = extract_proposals(&m, None, &grid(), hi, 3.0).unwrap();
        prop_assert!(n_hi.len() <= n_lo.len());
        prop_assert!(n_hi.iter().all(|p| p.score >= hi));
    }
}
