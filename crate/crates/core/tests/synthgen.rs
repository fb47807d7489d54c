use std::collections::HashMap;
use std::fs;

use psdet::descriptor::{paradigm_from_mask, SlotType};
use psdet::geom::Point;
use psdet::raster::Mask;
use psdet::synthgen::{generate, generate_split, Dataset, LabeledSample, SceneSpec, Split};

fn scene(t: SlotType, seed: u64) -> LabeledSample {
    generate(&SceneSpec::sample(t, seed)).unwrap()
}

#[test]
fn identical_specs_render_identical_samples() {
    for t in SlotType::ALL {
        let (a, b) = (scene(t, 9), scene(t, 9));
        assert_eq!(a.image.data(), b.image.data(), "{t}");
        assert_eq!(a.annotations, b.annotations, "{t}");
        assert_eq!(a.slots, b.slots, "{t}");
        assert_ne!(a.image.data(), scene(t, 10).image.data(), "{t}");
    }
}

#[test]
fn rectangular_is_perpendicular_and_oblique_is_acute() {
    for seed in 0..20 {
        let r = scene(SlotType::Rectangular, seed);
        assert!(r.annotations.iter().all(|a| a.paradigm() == 0), "seed {seed}");
        let mut spec = SceneSpec::sample(SlotType::Oblique, seed);
        spec.line_angle = 45.0;
        let o = generate(&spec).unwrap();
        assert!(o.annotations.iter().all(|a| a.paradigm() == 1), "seed {seed}");
    }
}

#[test]
fn layout_invariants_hold() {
    for (i, t) in SlotType::ALL.iter().cycle().take(140).enumerate() {
        let spec = SceneSpec::sample(*t, 500 + i as u64);
        let s = generate(&spec).unwrap();
        assert_eq!((s.image.width(), s.image.height(), s.image.channels()), (320, 240, 3));
        s.check_labels().unwrap();
        let v = s.vertices();
        assert!(!v.is_empty());
        for (k, p) in v.iter().enumerate() {
            let border = p.x.min(p.y).min(320.0 - p.x).min(240.0 - p.y);
            assert!(
                border >= spec.border_margin,
                "scene {i} vertex {k} is {border} px from the border"
            );
            assert!(border >= 2.0 * 3.0 * 4.0);
            for q in &v[k + 1..] {
                assert!(
                    p.dist(*q) >= spec.min_separation,
                    "scene {i}: vertices {} px apart",
                    p.dist(*q)
                );
            }
        }
    }
}

/// Pixels on two or more strokes, grouped into 8-connected blobs.
fn junction_blobs(strokes: &[Mask]) -> Vec<Vec<(usize, usize)>> {
    let (w, h) = (strokes[0].width(), strokes[0].height());
    let on = |x: usize, y: usize| strokes.iter().filter(|m| m.get(x, y)).count() >= 2;
    let mut seen = vec![false; w * h];
    let mut blobs = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if seen[y * w + x] || !on(x, y) {
                continue;
            }
            let mut blob = Vec::new();
            let mut stack = vec![(x, y)];
            seen[y * w + x] = true;
            while let Some((cx, cy)) = stack.pop() {
                blob.push((cx, cy));
                for ny in cy.saturating_sub(1)..=(cy + 1).min(h - 1) {
                    for nx in cx.saturating_sub(1)..=(cx + 1).min(w - 1) {
                        if !seen[ny * w + nx] && on(nx, ny) {
                            seen[ny * w + nx] = true;
                            stack.push((nx, ny));
                        }
                    }
                }
            }
            blobs.push(blob);
        }
    }
    blobs
}

#[test]
fn annotated_vertices_are_recovered_from_rendered_lines() {
    for (i, t) in SlotType::ALL.iter().cycle().take(70).enumerate() {
        let s = scene(*t, 700 + i as u64);
        let centroids: Vec<Point> = junction_blobs(&s.strokes)
            .iter()
            .map(|b| {
                let n = b.len() as f64;
                Point::new(
                    b.iter().map(|p| p.0 as f64).sum::<f64>() / n,
                    b.iter().map(|p| p.1 as f64).sum::<f64>() / n,
                )
            })
            .collect();
        for (k, a) in s.annotations.iter().enumerate() {
            let best = centroids.iter().map(|c| c.dist(a.o)).fold(f64::INFINITY, f64::min);
            assert!(
                best <= 1.0,
                "{t} scene {i} vertex {k}: nearest junction {best:.2} px away"
            );
        }
    }
}

#[test]
fn paradigm_from_mask_agrees_with_annotations() {
    let (mut agree, mut total) = (0, 0);
    for (i, t) in SlotType::ALL.iter().cycle().take(140).enumerate() {
        let s = scene(*t, 900 + i as u64);
        let mask = s.line_mask();
        for a in &s.annotations {
            total += 1;
            agree += usize::from(paradigm_from_mask(&mask, a.o, 10.0) == Some(a.paradigm()));
        }
    }
    let rate = agree as f64 / total as f64;
    assert!(rate >= 0.95, "paradigm agreement {agree}/{total} = {rate:.3}");
}

#[test]
fn split_counts_and_manifest_are_stratified() {
    let dir = tempfile::tempdir().unwrap();
    let summary = generate_split(dir.path(), 10, 3).unwrap();
    assert_eq!((summary.train, summary.test), (35, 35));
    let ds = Dataset::open(dir.path()).unwrap();
    assert_eq!(ds.records.len(), 70);
    let mut per: HashMap<(SlotType, Split), usize> = HashMap::new();
    for r in &ds.records {
        *per.entry((r.slot_type, r.split)).or_default() += 1;
    }
    for t in SlotType::ALL {
        assert_eq!(per[&(t, Split::Train)], 5, "{t}");
        assert_eq!(per[&(t, Split::Test)], 5, "{t}");
    }
    // loading reproduces the generated annotations
    let test = ds.load_split(Split::Test).unwrap();
    assert_eq!(test.len(), 35);
    for s in &test {
        s.check_labels().unwrap();
    }
    let first = &ds.records[0];
    let loaded = ds.load_record(first).unwrap();
    let index: u64 = first
        .path
        .trim_start_matches("labels/")
        .trim_end_matches(".json")
        .parse()
        .unwrap();
    let fresh = generate(&SceneSpec::sample(
        first.slot_type,
        psdet::synthgen::sample_seed(3, index),
    ))
    .unwrap();
    assert_eq!(loaded.image.data(), fresh.image.data());
    assert_eq!(loaded.annotations, fresh.annotations);

    let other = tempfile::tempdir().unwrap();
    generate_split(other.path(), 10, 4).unwrap();
    let a = fs::read(dir.path().join("images/00000.png")).unwrap();
    let b = fs::read(other.path().join("images/00000.png")).unwrap();
    assert_ne!(a, b);
    assert!(generate_split(other.path(), 1, 4).is_err());
}

#[test]
fn annotation_files_follow_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    generate_split(dir.path(), 2, 5).unwrap();
    let text = fs::read_to_string(dir.path().join("labels/00000.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(v["image"].is_string());
    let vert = &v["vertices"][0];
    for key in ["x", "y", "dirs", "type"] {
        assert!(!vert[key].is_null(), "missing {key}");
    }
    assert_eq!(vert["dirs"].as_array().unwrap().len(), 2);
    assert!(v["slots"][0].as_array().unwrap().len() == 2);
    let line = fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap();
    let rec: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    for key in ["path", "split", "type"] {
        assert!(rec[key].is_string(), "manifest missing {key}");
    }
}
