use psdet::descriptor::{build_target_maps, SlotType, StageGrid};
use psdet::geom::Point;
use psdet::model::{
    complexity_report, loss_stage1, loss_stage2, stage1_graph, train, CascadeModel, Stage1Config, Stage2Config,
    TrainConfig, MAX_PAYLOAD_BYTES,
};
use psdet::raster::Image;
use psdet::synthgen::{generate, LabeledSample, SceneSpec};
use psdet::tensor::{ConvAlgo, Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DUAL_PATH_TOL: f32 = 1e-5;
const OVERFIT_STEPS: usize = 500;

fn defaults() -> (Stage1Config, Stage2Config) {
    (Stage1Config::default(), Stage2Config::default())
}

#[test]
fn loss_examples() {
    let zeros = Tensor::zeros(&[1, 1, 24, 80]);
    assert!((loss_stage1(&zeros, &zeros).unwrap() - 480.0).abs() < 1e-9);
    let two = Tensor::zeros(&[1, 2, 24, 80]);
    assert!((loss_stage1(&two, &two).unwrap() - 960.0).abs() < 1e-9);

    let grid = StageGrid {
        width: 25,
        height: 25,
        scale: (1.0, 1.0),
        origin: Point::new(0.0, 0.0),
        cell_center: 0.0,
        radius: 3.0,
    };
    let ann = psdet::descriptor::VertexAnnotation::new(
        Point::new(12.0, 12.0),
        [Point::new(1.0, 0.0), Point::new(0.0, 1.0)],
        SlotType::Rectangular,
    )
    .unwrap();
    let (map, _) = build_target_maps(&[ann], &grid, None);
    let target = Tensor::new(vec![1, 1, 25, 25], map.presence.clone()).unwrap();
    assert_eq!(map.presence.iter().filter(|&&v| v == 1.0).count(), 29);
    let off = Tensor::full(&[1, 1, 25, 25], -200.0);
    assert!((loss_stage2(&off, &target).unwrap() - 29.0).abs() < 1e-9);
    // a perfect prediction up to sigmoid saturation
    let on: Vec<f32> = map
        .presence
        .iter()
        .map(|&v| if v == 1.0 { 200.0 } else { -200.0 })
        .collect();
    assert!(loss_stage2(&Tensor::new(vec![1, 1, 25, 25], on).unwrap(), &target).unwrap() < 1e-12);
    assert!(loss_stage2(&zeros, &Tensor::zeros(&[1, 1, 25, 25])).is_err());
}

#[test]
fn zero_weights_give_the_final_bias() {
    let (s1, s2) = defaults();
    let mut m = CascadeModel::zeroed(s1, s2).unwrap();
    m.params1
        .tensors
        .last_mut()
        .unwrap()
        .data_mut()
        .copy_from_slice(&[0.25, -1.5]);
    m.params2.tensors.last_mut().unwrap().data_mut()[0] = 0.75;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x1 = Tensor::new(
        vec![1, 3, 96, 320],
        (0..3 * 96 * 320).map(|_| rng.gen_range(-0.5..0.5)).collect(),
    )
    .unwrap();
    let y = m.stage1_forward(&x1).unwrap();
    assert_eq!(y.shape(), &[1, 2, 24, 80]);
    assert!(y.data()[..1920].iter().all(|&v| v == 0.25));
    assert!(y.data()[1920..].iter().all(|&v| v == -1.5));
    let x2 = Tensor::new(
        vec![1, 3, 25, 25],
        (0..3 * 625).map(|_| rng.gen_range(-0.5..0.5)).collect(),
    )
    .unwrap();
    let z = m.stage2_forward(&x2).unwrap();
    assert_eq!(z.shape(), &[1, 1, 25, 25]);
    assert!(z.data().iter().all(|&v| v == 0.75));
}

#[test]
fn stage1_output_shape_for_any_batch() {
    let (s1, s2) = defaults();
    let m = CascadeModel::new(s1, s2, 1).unwrap();
    for n in 1..=3 {
        let y = m.stage1_forward(&Tensor::full(&[n, 3, 96, 320], 0.1)).unwrap();
        assert_eq!(y.shape(), &[n, 2, 24, 80]);
    }
    assert_eq!(
        m.stage1_forward(&Tensor::zeros(&[1, 3, 95, 320])).unwrap_err().kind(),
        "shape"
    );
    assert_eq!(
        m.stage2_forward(&Tensor::zeros(&[1, 1, 25, 25])).unwrap_err().kind(),
        "shape"
    );
}

#[test]
fn stage1_forward_agrees_with_direct_convolution_path() {
    let (s1, s2) = defaults();
    let m = CascadeModel::new(s1, s2, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = Tensor::new(
        vec![1, 3, 96, 320],
        (0..3 * 96 * 320).map(|_| rng.gen_range(-0.5..0.5)).collect(),
    )
    .unwrap();
    let fast = m.stage1_forward(&x).unwrap();
    let mut g = Graph::inference().with_conv_algo(ConvAlgo::Direct);
    let ids = m.params1.bind_frozen(&mut g).unwrap();
    let xi = g.input(x).unwrap();
    let y = stage1_graph(&m.stage1, &m.params1, &ids, &mut g, xi).unwrap();
    let direct = g.value(y);
    let worst = fast
        .data()
        .iter()
        .zip(direct.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    assert!(worst <= DUAL_PATH_TOL, "max deviation {worst:e}");
}

/// A sample cropped to a single strip, so stage 1 sees the same input every step.
fn single_strip_sample() -> (LabeledSample, Stage1Config) {
    let mut s = generate(&SceneSpec::sample(SlotType::Rectangular, 3)).unwrap();
    let (y0, h) = (72usize, 96usize);
    let (w, c) = (s.image.width(), s.image.channels());
    let rows = s.image.data()[y0 * w * c..(y0 + h) * w * c].to_vec();
    s.image = Image::from_raw(w, h, c, rows).unwrap();
    s.annotations = s
        .annotations
        .iter()
        .filter(|a| a.o.y >= y0 as f64 && a.o.y < (y0 + h) as f64)
        .map(|a| {
            let mut b = *a;
            b.o = Point::new(a.o.x, a.o.y - y0 as f64);
            b
        })
        .collect();
    s.slots.clear();
    s.strokes.clear();
    assert!(!s.annotations.is_empty());
    let cfg = Stage1Config {
        image_h: h,
        ..Default::default()
    };
    (s, cfg)
}

#[test]
fn single_sample_overfit() {
    let (sample, s1) = single_strip_sample();
    let model = CascadeModel::new(s1, Stage2Config::default(), 0).unwrap();
    let cfg = TrainConfig {
        epochs: OVERFIT_STEPS,
        batch: 1,
        flips: false,
        lr_decay: 1.0,
        ..Default::default()
    };
    let out = train(&[sample], model, &cfg).unwrap();
    let losses: Vec<f64> = out.step_losses.iter().map(|l| l.0).collect();
    assert_eq!(losses.len(), OVERFIT_STEPS);
    let initial = losses[0];
    let reached = losses.iter().position(|&l| l < 0.01 * initial);
    assert!(
        reached.is_some(),
        "stage-1 loss never fell below 1% of {initial}: last {}",
        losses.last().unwrap()
    );
    // one sample per epoch, so each epoch is one step; compare means over windows of 50
    let means: Vec<f64> = losses
        .chunks(50)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    for w in means.windows(2) {
        assert!(w[1] <= w[0], "windowed loss rose: {means:?}");
    }
    assert_eq!(out.curve.len(), OVERFIT_STEPS);
}

fn tiny_set() -> Vec<LabeledSample> {
    [SlotType::Rectangular, SlotType::Oblique]
        .iter()
        .enumerate()
        .map(|(i, &t)| generate(&SceneSpec::sample(t, 40 + i as u64)).unwrap())
        .collect()
}

fn short_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch: 2,
        crops_per_sample: 4,
        ..Default::default()
    }
}

#[test]
fn seeded_training_is_reproducible() {
    let (s1, s2) = defaults();
    let data = tiny_set();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let run = |seed: u64| {
        pool.install(|| {
            let cfg = TrainConfig { seed, ..short_cfg() };
            train(&data, CascadeModel::new(s1, s2, seed).unwrap(), &cfg).unwrap()
        })
    };
    let (a, b) = (run(4), run(4));
    assert_eq!(a.model.to_bytes(), b.model.to_bytes());
    assert_eq!(a.step_losses, b.step_losses);
    assert_ne!(run(5).model.to_bytes(), a.model.to_bytes());
}

#[test]
fn empty_dataset_is_rejected() {
    let (s1, s2) = defaults();
    let err = train(&[], CascadeModel::new(s1, s2, 0).unwrap(), &TrainConfig::default()).unwrap_err();
    assert_eq!(err.kind(), "empty_dataset");
}

#[test]
fn stages_are_isolated_during_joint_training() {
    let (s1, s2) = defaults();
    let data = tiny_set();
    let start = CascadeModel::new(s1, s2, 2).unwrap();
    let run = |lr1: f32, lr2: f32| {
        train(
            &data,
            start.clone(),
            &TrainConfig {
                lr1,
                lr2,
                ..short_cfg()
            },
        )
        .unwrap()
        .model
    };
    let base = run(0.01, 0.01);
    // stage-2 hyperparameters cannot reach stage-1 parameters and vice versa
    assert_eq!(run(0.01, 0.05).params1, base.params1);
    assert_eq!(run(0.05, 0.01).params2, base.params2);
    assert_ne!(base.params1, start.params1);
    assert_ne!(base.params2, start.params2);
}

#[test]
fn checkpoints_round_trip_and_stay_within_budget() {
    let (s1, s2) = defaults();
    let m = CascadeModel::new(s1, s2, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.scm1");
    m.save(&path).unwrap();
    let back = CascadeModel::load(&path).unwrap();
    assert_eq!(back, m);
    let bytes = std::fs::read(&path).unwrap();
    assert!(bytes.len() <= MAX_PAYLOAD_BYTES, "{} bytes", bytes.len());
    for (a, b) in back
        .params1
        .tensors
        .iter()
        .chain(&back.params2.tensors)
        .zip(m.params1.tensors.iter().chain(&m.params2.tensors))
    {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    let mut newer = bytes.clone();
    newer[4..6].copy_from_slice(&2u16.to_le_bytes());
    assert_eq!(CascadeModel::from_bytes(&newer).unwrap_err().kind(), "version");
    assert!(CascadeModel::from_bytes(&bytes[..bytes.len() - 3]).is_err());
}

#[test]
fn training_writes_a_checkpoint_per_epoch() {
    let (s1, s2) = defaults();
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..short_cfg()
    };
    let out = train(&tiny_set(), CascadeModel::new(s1, s2, 0).unwrap(), &cfg).unwrap();
    for epoch in 0..2 {
        let p = dir.path().join(format!("epoch-{epoch:03}.scm1"));
        CascadeModel::load(&p).unwrap();
    }
    let csv = std::fs::read_to_string(dir.path().join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + out.curve.len());
}

#[test]
fn complexity_counts() {
    let (s1, s2) = defaults();
    let r = complexity_report(&CascadeModel::zeroed(s1, s2).unwrap());
    // 3x3 convs at 25x25: 3->8, 8->16, 16->8, then 1x1 8->1
    assert_eq!(
        r.stage2_macs_per_proposal,
        9 * 625 * (3 * 8 + 8 * 16 + 16 * 8) + 625 * 8
    );
    assert_eq!(r.strips, 3);
    for p in 0..=8 {
        assert!(2 * r.cascade_macs(p) < r.single_stage_macs, "{p} proposals");
        assert!(r.cascade_macs(p) * (1 + 8) > 0);
    }
    assert!(r.max_proposals_within(0.5).unwrap() >= 8);

    // k = 1: the coarse map is full resolution, so strips cost more than one full pass
    let k1 = Stage1Config {
        k_w: 1,
        k_h: 1,
        radius: 4.0,
        ..Default::default()
    };
    let r1 = complexity_report(&CascadeModel::zeroed(k1, s2).unwrap());
    assert!(r1.cascade_macs(0) >= r1.single_stage_macs);
    assert_eq!(r1.max_proposals_within(1.0), None);
}

#[test]
fn first_stage1_layer_macs_match_hand_count() {
    let (s1, s2) = defaults();
    let full = complexity_report(&CascadeModel::zeroed(s1, s2).unwrap()).stage1_macs_per_strip;
    let narrow = Stage1Config {
        backbone: [9, 16, 32],
        ..s1
    };
    let more = complexity_report(&CascadeModel::zeroed(narrow, s2).unwrap()).stage1_macs_per_strip;
    // one extra first-layer filter: kh*kw*Cin*H*W, plus the extra input channel
    // it feeds into layer 2 (3x3x16 at 48x160) and the level-1 lateral (8 at 48x160)
    let delta = 9 * 3 * 96 * 320 + 9 * 16 * 48 * 160 + 8 * 48 * 160;
    assert_eq!(more - full, delta as u64);
}
