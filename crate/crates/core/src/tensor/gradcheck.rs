//! Finite-difference verification of every differentiable op.
//!
//! Each check uses the scalar loss `L = sum(out * r)` for a fixed random `r`.
//! The 32-bit check compares graph gradients against central differences of a
//! 64-bit evaluation of the same op (so the reference carries no f32 rounding);
//! the 64-bit check runs the generic kernels' own backward in f64.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{
    bilinear_backward, bilinear_forward, conv2d_backward, conv2d_direct, max_pool2d_backward, max_pool2d_forward,
    ConvGeometry, PoolGeometry,
};
use super::{Graph, NodeId, Tensor};

pub const TOL_F32: f64 = 1e-3;
pub const TOL_F64: f64 = 1e-6;
const STEP_F64: f64 = 1e-5;
/// Gradients below this magnitude are compared absolutely.
const REL_FLOOR: f64 = 1e-2;

/// Outcome of checking one gradient path of one op.
#[derive(Clone, Debug)]
pub struct OpCheck {
    pub op: &'static str,
    pub coords: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    /// Index, analytic and numeric value of the worst coordinate.
    pub worst: Option<(usize, f64, f64)>,
}

impl OpCheck {
    fn new(op: &'static str, tolerance: f64) -> Self {
        Self {
            op,
            coords: 0,
            max_rel_err: 0.0,
            tolerance,
            worst: None,
        }
    }

    pub fn passed(&self, min_coords: usize) -> bool {
        self.coords >= min_coords && self.max_rel_err.is_finite() && self.max_rel_err < self.tolerance
    }

    /// Compares `analytic` against central differences of `f` on up to `n` sampled coordinates.
    fn compare(&mut self, f: Loss, x: &[f64], analytic: &[f64], n: usize, rng: &mut ChaCha8Rng) {
        assert_eq!(analytic.len(), x.len(), "{}: gradient length", self.op);
        let n = n.min(x.len());
        for i in sample(rng, x.len(), n) {
            let num = central(f, x, i);
            let e = rel_err(analytic[i], num);
            if e.is_nan() || e > self.max_rel_err {
                self.max_rel_err = e;
                self.worst = Some((i, analytic[i], num));
            }
        }
        self.coords += n;
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

fn randv(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn f32v(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn weighted_sum(out: &[f64], r: &[f64]) -> f64 {
    out.iter().zip(r).map(|(a, b)| a * b).sum()
}

/// Central difference of `f` at `x[i]`.
fn central(f: Loss, x: &[f64], i: usize) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += STEP_F64;
    let lp = f(&xp);
    xp[i] = x[i] - STEP_F64;
    let lm = f(&xp);
    (lp - lm) / (2.0 * STEP_F64)
}

type Build<'a> = &'a dyn Fn(&mut Graph, &[NodeId]) -> NodeId;
type Loss<'a> = &'a dyn Fn(&[f64]) -> f64;

/// Runs a one-op graph in f32 and returns the gradient of `sum(out * r)` for `leaf_index`.
fn graph_grad(inputs: &[(Vec<usize>, Vec<f64>)], leaf_index: usize, build: Build, r: &[f64]) -> Vec<f64> {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs
        .iter()
        .map(|(s, v)| g.input_with_grad(Tensor::new(s.clone(), f32v(v)).unwrap()).unwrap())
        .collect();
    let out = build(&mut g, &ids);
    // SSE(out, t) with t = out - r/2 has gradient 2(out - t) = r, the gradient of sum(out * r).
    let t: Vec<f32> = g
        .value(out)
        .data()
        .iter()
        .zip(r)
        .map(|(&o, &ri)| o - (ri as f32) / 2.0)
        .collect();
    let target = Tensor::new(g.value(out).shape().to_vec(), t).unwrap();
    let loss = g.sse_loss(out, &target).unwrap();
    g.backward(loss).unwrap();
    g.grad(ids[leaf_index]).unwrap().iter().map(|&v| v as f64).collect()
}

struct ConvCase {
    g: ConvGeometry,
    x: Vec<f64>,
    w: Vec<f64>,
    b: Vec<f64>,
    r: Vec<f64>,
}

impl ConvCase {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let n = rng.gen_range(1..=2);
        let cin = rng.gen_range(1..=3);
        let cout = rng.gen_range(1..=4);
        let k = [1usize, 3][rng.gen_range(0..2)];
        let h = rng.gen_range(k.max(3)..=7);
        let w = rng.gen_range(k.max(3)..=7);
        let stride = (rng.gen_range(1..=2), rng.gen_range(1..=2));
        let pad = if k == 3 {
            (rng.gen_range(0..=1), rng.gen_range(0..=1))
        } else {
            (0, 0)
        };
        let g = ConvGeometry::new(&[n, cin, h, w], &[cout, cin, k, k], stride, pad).unwrap();
        let out_len = g.batch * g.out_channels * g.out_plane();
        Self {
            x: randv(rng, n * cin * h * w),
            w: randv(rng, cout * cin * k * k),
            b: randv(rng, cout),
            r: randv(rng, out_len),
            g,
        }
    }

    fn inputs(&self) -> [(Vec<usize>, Vec<f64>); 3] {
        let g = &self.g;
        [
            (vec![g.batch, g.in_channels, g.in_h, g.in_w], self.x.clone()),
            (
                vec![g.out_channels, g.in_channels, g.kernel_h, g.kernel_w],
                self.w.clone(),
            ),
            (vec![g.out_channels], self.b.clone()),
        ]
    }

    fn loss(&self, x: &[f64], w: &[f64], b: &[f64]) -> f64 {
        weighted_sum(&conv2d_direct(&self.g, x, w, b).unwrap(), &self.r)
    }
}

/// Graph convolution gradients for input, weight and bias leaves.
pub fn conv2d_f32(coords: usize, seed: u64) -> [OpCheck; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = [
        OpCheck::new("conv2d f32 input", TOL_F32),
        OpCheck::new("conv2d f32 weight", TOL_F32),
        OpCheck::new("conv2d f32 bias", TOL_F32),
    ];
    while checks.iter().any(|c| c.coords < coords) {
        let c = ConvCase::random(&mut rng);
        let inputs = c.inputs();
        let (stride, pad) = (c.g.stride, c.g.pad);
        let build = |gr: &mut Graph, ids: &[NodeId]| gr.conv2d(ids[0], ids[1], ids[2], stride, pad).unwrap();
        let fx = |x: &[f64]| c.loss(x, &c.w, &c.b);
        let fw = |w: &[f64]| c.loss(&c.x, w, &c.b);
        let fb = |b: &[f64]| c.loss(&c.x, &c.w, b);
        let fs: [Loss; 3] = [&fx, &fw, &fb];
        for leaf in 0..3 {
            let a = graph_grad(&inputs, leaf, &build, &c.r);
            checks[leaf].compare(fs[leaf], &inputs[leaf].1, &a, coords, &mut rng);
        }
    }
    checks
}

/// The generic kernel backward evaluated in f64.
pub fn conv2d_f64(coords: usize, seed: u64) -> [OpCheck; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = [
        OpCheck::new("conv2d f64 input", TOL_F64),
        OpCheck::new("conv2d f64 weight", TOL_F64),
        OpCheck::new("conv2d f64 bias", TOL_F64),
    ];
    while checks.iter().any(|c| c.coords < coords) {
        let c = ConvCase::random(&mut rng);
        let grads = conv2d_backward(&c.g, &c.x, &c.w, &c.r, true).unwrap();
        let fx = |x: &[f64]| c.loss(x, &c.w, &c.b);
        let fw = |w: &[f64]| c.loss(&c.x, w, &c.b);
        let fb = |b: &[f64]| c.loss(&c.x, &c.w, b);
        checks[0].compare(&fx, &c.x, grads.input.as_ref().unwrap(), coords, &mut rng);
        checks[1].compare(&fw, &c.w, &grads.weight, coords, &mut rng);
        checks[2].compare(&fb, &c.b, &grads.bias, coords, &mut rng);
    }
    checks
}

/// Loss = output sum, every weight perturbed one at a time with step 1e-3.
pub fn conv2d_output_sum(seed: u64) -> [OpCheck; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = ConvGeometry::new(&[2, 3, 8, 8], &[4, 3, 3, 3], (2, 1), (1, 1)).unwrap();
    let x = randv(&mut rng, 2 * 3 * 64);
    let w = randv(&mut rng, 4 * 27);
    let b = randv(&mut rng, 4);
    let ones = vec![1.0; g.batch * g.out_channels * g.out_plane()];
    let inputs = [
        (vec![2, 3, 8, 8], x.clone()),
        (vec![4, 3, 3, 3], w.clone()),
        (vec![4], b.clone()),
    ];
    let a32 = graph_grad(
        &inputs,
        1,
        &|gr, ids| gr.conv2d(ids[0], ids[1], ids[2], (2, 1), (1, 1)).unwrap(),
        &ones,
    );
    let a64 = conv2d_backward(&g, &x, &w, &ones, false).unwrap().weight;
    let mut checks = [
        OpCheck::new("conv2d f32 weight, output sum", TOL_F32),
        OpCheck::new("conv2d f64 weight, output sum", TOL_F64),
    ];
    let h = 1e-3;
    for i in 0..w.len() {
        let mut wp = w.clone();
        wp[i] += h;
        let lp: f64 = conv2d_direct(&g, &x, &wp, &b).unwrap().iter().sum();
        wp[i] = w[i] - h;
        let lm: f64 = conv2d_direct(&g, &x, &wp, &b).unwrap().iter().sum();
        let num = (lp - lm) / (2.0 * h);
        for (c, a) in checks.iter_mut().zip([a32[i], a64[i]]) {
            let e = rel_err(a, num);
            if e.is_nan() || e > c.max_rel_err {
                c.max_rel_err = e;
                c.worst = Some((i, a, num));
            }
            c.coords += 1;
        }
    }
    checks
}

/// Distinct values at least `gap` apart so max windows have a unique winner under perturbation.
fn distinct_values(rng: &mut ChaCha8Rng, n: usize, gap: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * gap).collect();
    for i in (1..n).rev() {
        v.swap(i, rng.gen_range(0..=i));
    }
    v.iter().map(|x| x - n as f64 * gap / 2.0).collect()
}

pub fn max_pool(coords: usize, seed: u64) -> [OpCheck; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = [
        OpCheck::new("max_pool f32", TOL_F32),
        OpCheck::new("max_pool f64", TOL_F64),
    ];
    while checks.iter().any(|c| c.coords < coords) {
        let planes = rng.gen_range(1..=4);
        let (h, w) = (rng.gen_range(4..=8), rng.gen_range(4..=8));
        let window = rng.gen_range(2..=3);
        let stride = rng.gen_range(1..=2);
        let pg = PoolGeometry::new(planes, h, w, window, stride).unwrap();
        let x = distinct_values(&mut rng, planes * h * w, 0.01);
        let r = randv(&mut rng, planes * pg.out_h * pg.out_w);
        let f = |x: &[f64]| weighted_sum(&max_pool2d_forward(&pg, x).0, &r);
        let build = |gr: &mut Graph, ids: &[NodeId]| gr.max_pool2d(ids[0], window, stride).unwrap();
        let a32 = graph_grad(&[(vec![1, planes, h, w], x.clone())], 0, &build, &r);
        checks[0].compare(&f, &x, &a32, coords, &mut rng);
        let (_, arg) = max_pool2d_forward(&pg, &x);
        let a64 = max_pool2d_backward(&pg, &arg, &r);
        checks[1].compare(&f, &x, &a64, coords, &mut rng);
    }
    checks
}

pub fn bilinear(coords: usize, seed: u64) -> [OpCheck; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = [
        OpCheck::new("bilinear f32", TOL_F32),
        OpCheck::new("bilinear f64", TOL_F64),
    ];
    while checks.iter().any(|c| c.coords < coords) {
        let planes = rng.gen_range(1..=3);
        let (h, w) = (rng.gen_range(1..=6), rng.gen_range(2..=6));
        let (oh, ow) = (rng.gen_range(1..=9), rng.gen_range(1..=9));
        let x = randv(&mut rng, planes * h * w);
        let r = randv(&mut rng, planes * oh * ow);
        let f = |x: &[f64]| weighted_sum(&bilinear_forward(planes, h, w, oh, ow, x), &r);
        let build = |gr: &mut Graph, ids: &[NodeId]| gr.bilinear_resize(ids[0], oh, ow).unwrap();
        let a32 = graph_grad(&[(vec![planes, 1, h, w], x.clone())], 0, &build, &r);
        checks[0].compare(&f, &x, &a32, coords, &mut rng);
        let a64 = bilinear_backward(planes, h, w, oh, ow, &r);
        checks[1].compare(&f, &x, &a64, coords, &mut rng);
    }
    checks
}

pub fn concat(coords: usize, seed: u64) -> OpCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut check = OpCheck::new("concat", TOL_F32);
    let mut per_leaf = [0usize; 3];
    while per_leaf.iter().any(|&c| c < coords) {
        let (n, h, w) = (rng.gen_range(1..=2), rng.gen_range(1..=5), rng.gen_range(1..=5));
        let cs = [rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3)];
        let parts: Vec<Vec<f64>> = cs.iter().map(|&c| randv(&mut rng, n * c * h * w)).collect();
        let total: usize = cs.iter().sum();
        let r = randv(&mut rng, n * total * h * w);
        let cat = |parts: &[Vec<f64>]| {
            let mut out = Vec::new();
            for b in 0..n {
                for (p, &c) in parts.iter().zip(&cs) {
                    out.extend_from_slice(&p[b * c * h * w..(b + 1) * c * h * w]);
                }
            }
            out
        };
        let inputs: Vec<(Vec<usize>, Vec<f64>)> = cs
            .iter()
            .zip(&parts)
            .map(|(&c, p)| (vec![n, c, h, w], p.clone()))
            .collect();
        for leaf in 0..3 {
            let f = |x: &[f64]| {
                let mut ps = parts.clone();
                ps[leaf] = x.to_vec();
                weighted_sum(&cat(&ps), &r)
            };
            let a = graph_grad(&inputs, leaf, &|gr, ids| gr.concat_channels(ids).unwrap(), &r);
            let before = check.coords;
            check.compare(&f, &parts[leaf], &a, coords, &mut rng);
            per_leaf[leaf] += check.coords - before;
        }
    }
    check
}

pub fn relu(coords: usize, seed: u64) -> OpCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // keep inputs away from the kink
    let x: Vec<f64> = (0..coords.max(300))
        .map(|_| {
            let v: f64 = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    let r = randv(&mut rng, x.len());
    let f = |x: &[f64]| x.iter().zip(&r).map(|(v, ri)| v.max(0.0) * ri).sum::<f64>();
    let a = graph_grad(
        &[(vec![1, 1, 1, x.len()], x.clone())],
        0,
        &|gr, ids| gr.relu(ids[0]).unwrap(),
        &r,
    );
    let mut check = OpCheck::new("relu", TOL_F32);
    check.compare(&f, &x, &a, coords, &mut rng);
    check
}

pub fn sigmoid(coords: usize, seed: u64) -> OpCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..coords.max(300)).map(|_| rng.gen_range(-4.0..4.0)).collect();
    let r = randv(&mut rng, x.len());
    let f = |x: &[f64]| x.iter().zip(&r).map(|(v, ri)| ri / (1.0 + (-v).exp())).sum::<f64>();
    let a = graph_grad(
        &[(vec![1, 1, 1, x.len()], x.clone())],
        0,
        &|gr, ids| gr.sigmoid(ids[0]).unwrap(),
        &r,
    );
    let mut check = OpCheck::new("sigmoid", TOL_F32);
    check.compare(&f, &x, &a, coords, &mut rng);
    check
}

pub fn sse(coords: usize, seed: u64) -> OpCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = coords.max(300);
    let x = randv(&mut rng, n);
    let t = randv(&mut rng, n);
    let f = |x: &[f64]| x.iter().zip(&t).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
    let mut g = Graph::new();
    let id = g
        .input_with_grad(Tensor::new(vec![1, 1, 1, n], f32v(&x)).unwrap())
        .unwrap();
    let target = Tensor::new(vec![1, 1, 1, n], f32v(&t)).unwrap();
    let loss = g.sse_loss(id, &target).unwrap();
    g.backward(loss).unwrap();
    let a: Vec<f64> = g.grad(id).unwrap().iter().map(|&v| v as f64).collect();
    let mut check = OpCheck::new("sse", TOL_F32);
    check.compare(&f, &x, &a, coords, &mut rng);
    check
}

/// Every check above with fixed seeds.
pub fn all(coords: usize) -> Vec<OpCheck> {
    let mut out = Vec::new();
    out.extend(conv2d_f32(coords, 11));
    out.extend(conv2d_f64(coords, 12));
    out.extend(conv2d_output_sum(13));
    out.extend(max_pool(coords, 21));
    out.extend(bilinear(coords, 31));
    out.push(concat(coords, 41));
    out.push(relu(coords, 51));
    out.push(sigmoid(coords, 61));
    out.push(sse(coords, 71));
    out
}
