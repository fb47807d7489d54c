//! Naive reference implementations shared by the integration and acceptance tests.
#![allow(dead_code)]

use psdet::descriptor::{StageGrid, VertexAnnotation};
use psdet::geom::Point;
use psdet::raster::Mask;
use psdet::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn close(got: &[f32], want: &[f64], tol: f64, what: &str) {
    assert_eq!(got.len(), want.len(), "{what}: length");
    for (i, (&g, &w)) in got.iter().zip(want).enumerate() {
        let d = (g as f64 - w).abs();
        assert!(
            d <= tol * w.abs().max(1.0),
            "{what}: index {i}: {g} vs {w} (diff {d:.2e})"
        );
    }
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap()
}

pub fn conv_oracle(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: (usize, usize),
    pad: (usize, usize),
) -> (Vec<usize>, Vec<f64>) {
    let [n, cin, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [cout, _, kh, kw] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
    let oh = (h + 2 * pad.0 - kh) / stride.0 + 1;
    let ow = (wd + 2 * pad.1 - kw) / stride.1 + 1;
    let xv = |bn: usize, c: usize, y: isize, xx: isize| -> f64 {
        if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
            0.0
        } else {
            x.data()[((bn * cin + c) * h + y as usize) * wd + xx as usize] as f64
        }
    };
    let mut out = Vec::with_capacity(n * cout * oh * ow);
    for bn in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = b.data()[co] as f64;
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride.0 + ky) as isize - pad.0 as isize;
                                let ix = (ox * stride.1 + kx) as isize - pad.1 as isize;
                                let wv = w.data()[((co * cin + ci) * kh + ky) * kw + kx] as f64;
                                s += wv * xv(bn, ci, iy, ix);
                            }
                        }
                    }
                    out.push(s);
                }
            }
        }
    }
    (vec![n, cout, oh, ow], out)
}

pub fn pool_oracle(x: &Tensor, window: usize, stride: usize) -> Vec<f64> {
    let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
    let mut out = Vec::new();
    for p in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..window {
                    for dx in 0..window {
                        m = m.max(x.data()[(p * h + oy * stride + dy) * w + ox * stride + dx] as f64);
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

pub fn resize_oracle(x: &Tensor, oh: usize, ow: usize) -> Vec<f64> {
    let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let src = |o: usize, out_len: usize, in_len: usize| -> f64 {
        if out_len == 1 {
            0.0
        } else {
            o as f64 * (in_len as f64 - 1.0) / (out_len as f64 - 1.0)
        }
    };
    let mut out = Vec::new();
    for p in 0..n * c {
        let at = |y: usize, xx: usize| x.data()[(p * h + y) * w + xx] as f64;
        for oy in 0..oh {
            let sy = src(oy, oh, h);
            let y0 = sy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let fy = sy - y0 as f64;
            for ox in 0..ow {
                let sx = src(ox, ow, w);
                let x0 = sx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let fx = sx - x0 as f64;
                out.push(
                    at(y0, x0) * (1.0 - fy) * (1.0 - fx)
                        + at(y0, x1) * (1.0 - fy) * fx
                        + at(y1, x0) * fy * (1.0 - fx)
                        + at(y1, x1) * fy * fx,
                );
            }
        }
    }
    out
}

pub fn far_corner(o: Point, x: usize, y: usize) -> f64 {
    let mut best = 0.0f64;
    for (cx, cy) in [(-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5), (0.5, 0.5)] {
        best = best.max(o.dist(Point::new(x as f64 + cx, y as f64 + cy)));
    }
    best
}

/// Connected-component labeling of the overlap set by repeated relaxation,
/// then the farthest corner of every pixel in a component touching the
/// 3x3 neighborhood of the vertex pixel.
pub fn lower_bound_oracle(strokes: &[Mask], o: Point) -> f64 {
    let (w, h) = (strokes[0].width(), strokes[0].height());
    let overlap: Vec<bool> = (0..w * h)
        .map(|i| strokes.iter().filter(|m| m.get(i % w, i / w)).count() >= 2)
        .collect();
    let mut label: Vec<usize> = (0..w * h).collect();
    loop {
        let mut changed = false;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if !overlap[i] {
                    continue;
                }
                for (dx, dy) in [
                    (-1i64, -1i64),
                    (0, -1),
                    (1, -1),
                    (-1, 0),
                    (1, 0),
                    (-1, 1),
                    (0, 1),
                    (1, 1),
                ] {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if overlap[j] && label[j] < label[i] {
                        label[i] = label[j];
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    let (cx, cy) = (o.x.round() as i64, o.y.round() as i64);
    let mut seeds = Vec::new();
    for dy in -1..=1 {
        for dx in -1..=1 {
            let (x, y) = (cx + dx, cy + dy);
            if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && overlap[y as usize * w + x as usize] {
                seeds.push(label[y as usize * w + x as usize]);
            }
        }
    }
    let mut r = far_corner(o, cx as usize, cy as usize);
    for i in 0..w * h {
        if overlap[i] && seeds.contains(&label[i]) {
            r = r.max(far_corner(o, i % w, i / w));
        }
    }
    r
}

pub fn pixel_square_dist(o: Point, x: usize, y: usize) -> f64 {
    let dx = (o.x - x as f64).abs() - 0.5;
    let dy = (o.y - y as f64).abs() - 0.5;
    (dx.max(0.0).powi(2) + dy.max(0.0).powi(2)).sqrt()
}

/// Brute-force minimum over every constraint: frame edges, other vertices,
/// and every pixel of every stroke that does not cover the vertex pixel.
pub fn upper_bound_oracle(vertices: &[Point], strokes: &[Mask], w: usize, h: usize, index: usize) -> f64 {
    let o = vertices[index];
    let mut best = [o.x, o.y, w as f64 - o.x, h as f64 - o.y]
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    for (i, v) in vertices.iter().enumerate() {
        if i != index {
            best = best.min(o.dist(*v));
        }
    }
    let (px, py) = (o.x.round() as usize, o.y.round() as usize);
    for m in strokes {
        if m.get(px, py) {
            continue;
        }
        for (x, y) in m.iter_set() {
            best = best.min(pixel_square_dist(o, x, y));
        }
    }
    best.max(0.0)
}

pub fn disk_union_oracle(anns: &[VertexAnnotation], grid: &StageGrid) -> (Vec<f32>, Vec<f32>) {
    let mut presence = vec![0.0; grid.width * grid.height];
    let mut paradigm = vec![0.0; grid.width * grid.height];
    for row in 0..grid.height {
        for col in 0..grid.width {
            let c = grid.cell_to_image(row, col);
            let mut owner: Option<(f64, usize)> = None;
            for (k, a) in anns.iter().enumerate() {
                let m = grid.to_map(a.o);
                if m.x < 0.0 || m.y < 0.0 || m.x >= grid.width as f64 || m.y >= grid.height as f64 {
                    continue;
                }
                let cm = grid.to_map(c);
                let d2 = (cm.x - m.x).powi(2) + (cm.y - m.y).powi(2);
                if d2 <= grid.radius * grid.radius && owner.is_none_or(|(best, _)| d2 < best) {
                    owner = Some((d2, k));
                }
            }
            if let Some((_, k)) = owner {
                presence[row * grid.width + col] = 1.0;
                paradigm[row * grid.width + col] = anns[k].paradigm() as f32;
            }
        }
    }
    (presence, paradigm)
}
