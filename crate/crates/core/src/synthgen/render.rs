//! Rasterization of marking strokes and procedural ground textures.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geom::Point;
use crate::raster::Mask;

/// Supersampling grid per pixel axis for anti-aliased coverage.
const SUBSAMPLES: usize = 4;

/// Linear RGB canvas with values in `[0, 255]`.
#[derive(Clone, Debug)]
pub(crate) struct Canvas {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[f32; 3]>,
}

impl Canvas {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            rgb: vec![[0.0; 3]; width * height],
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.rgb
            .iter()
            .flat_map(|p| p.map(|v| v.round().clamp(0.0, 255.0) as u8))
            .collect()
    }
}

/// Convex quadrilateral of paint, corners in order around the boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct Stroke {
    pub corners: [Point; 4],
}

impl Stroke {
    /// Band of width `width` along the axis `a -> b`, ends cut perpendicular to the axis.
    pub fn band(a: Point, b: Point, width: f64) -> Self {
        let n = (b - a).normalized().perp() * (width / 2.0);
        Self {
            corners: [a + n, b + n, b - n, a - n],
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        let mut sign = 0.0;
        for i in 0..4 {
            let (a, b) = (self.corners[i], self.corners[(i + 1) % 4]);
            let c = (b - a).cross(p - a);
            if c != 0.0 {
                if sign == 0.0 {
                    sign = c.signum();
                } else if c.signum() != sign {
                    return false;
                }
            }
        }
        true
    }

    fn pixel_bounds(&self, width: usize, height: usize) -> Option<(usize, usize, usize, usize)> {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for c in &self.corners {
            x0 = x0.min(c.x);
            y0 = y0.min(c.y);
            x1 = x1.max(c.x);
            y1 = y1.max(c.y);
        }
        let lo_x = (x0 - 0.5).floor().max(0.0);
        let lo_y = (y0 - 0.5).floor().max(0.0);
        let hi_x = (x1 + 0.5).ceil().min(width as f64 - 1.0);
        let hi_y = (y1 + 0.5).ceil().min(height as f64 - 1.0);
        (lo_x <= hi_x && lo_y <= hi_y).then_some((lo_x as usize, lo_y as usize, hi_x as usize, hi_y as usize))
    }

    /// Fractional pixel coverage in `[0, 1]`, row-major over the frame.
    pub fn coverage(&self, width: usize, height: usize) -> Vec<f32> {
        let mut out = vec![0.0f32; width * height];
        let Some((x0, y0, x1, y1)) = self.pixel_bounds(width, height) else {
            return out;
        };
        let step = 1.0 / SUBSAMPLES as f64;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let mut hits = 0;
                for sy in 0..SUBSAMPLES {
                    for sx in 0..SUBSAMPLES {
                        let p = Point::new(
                            x as f64 - 0.5 + (sx as f64 + 0.5) * step,
                            y as f64 - 0.5 + (sy as f64 + 0.5) * step,
                        );
                        hits += usize::from(self.contains(p));
                    }
                }
                out[y * width + x] = hits as f32 / (SUBSAMPLES * SUBSAMPLES) as f32;
            }
        }
        out
    }

    /// Pixels at least half covered.
    pub fn mask(&self, width: usize, height: usize) -> Mask {
        let cov = self.coverage(width, height);
        let mut m = Mask::new(width, height);
        for (i, &c) in cov.iter().enumerate() {
            if c >= 0.5 {
                m.set(i % width, i / width, true);
            }
        }
        m
    }
}

/// Smooth noise in `[0, 1]`: random lattice values every `cell` pixels,
/// blended with smoothstep weights.
pub(crate) fn value_noise(rng: &mut ChaCha8Rng, width: usize, height: usize, cell: f64) -> Vec<f32> {
    let gw = (width as f64 / cell).ceil() as usize + 2;
    let gh = (height as f64 / cell).ceil() as usize + 2;
    let lattice: Vec<f32> = (0..gw * gh).map(|_| rng.gen::<f32>()).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let gy = y as f64 / cell;
        let (iy, ty) = (gy.floor() as usize, smooth(gy.fract()));
        for x in 0..width {
            let gx = x as f64 / cell;
            let (ix, tx) = (gx.floor() as usize, smooth(gx.fract()));
            let at = |i: usize, j: usize| lattice[j * gw + i] as f64;
            let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
            let bottom = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
            out.push((top * (1.0 - ty) + bottom * ty) as f32);
        }
    }
    out
}

/// Ground surface category.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Texture {
    Asphalt,
    Brick,
    Grass,
    StereoPlatform,
}

pub(crate) fn paint_texture(canvas: &mut Canvas, texture: Texture, rng: &mut ChaCha8Rng) {
    let (w, h) = (canvas.width, canvas.height);
    let grain = Normal::new(0.0f32, 1.0).unwrap();
    match texture {
        Texture::Asphalt => {
            let base = rng.gen_range(60.0..115.0f32);
            let tint = rng.gen_range(-6.0..6.0f32);
            let cell = rng.gen_range(18.0..40.0);
            let blotch = value_noise(rng, w, h, cell);
            for (i, px) in canvas.rgb.iter_mut().enumerate() {
                let v = base + 30.0 * (blotch[i] - 0.5) + 7.0 * grain.sample(rng);
                *px = [v + tint, v, v - tint];
            }
        }
        Texture::Brick => {
            let bw = rng.gen_range(10..18usize);
            let bh = rng.gen_range(5..9usize);
            let base = [
                rng.gen_range(120.0..170.0f32),
                rng.gen_range(60.0..100.0f32),
                rng.gen_range(45.0..80.0f32),
            ];
            let mortar = rng.gen_range(35.0..60.0f32);
            let cols = w / bw + 2;
            let rows = h / bh + 1;
            let shade: Vec<f32> = (0..cols * rows).map(|_| rng.gen_range(-18.0..18.0)).collect();
            for y in 0..h {
                let row = y / bh;
                let shift = if row % 2 == 1 { bw / 2 } else { 0 };
                for x in 0..w {
                    let xs = x + shift;
                    let px = &mut canvas.rgb[y * w + x];
                    if y % bh == 0 || xs % bw == 0 {
                        *px = [mortar; 3];
                    } else {
                        let s = shade[row * cols + xs / bw] + 5.0 * grain.sample(rng);
                        *px = base.map(|c| c + s);
                    }
                }
            }
        }
        Texture::Grass => {
            let base = [
                rng.gen_range(45.0..75.0f32),
                rng.gen_range(90.0..130.0f32),
                rng.gen_range(30.0..55.0f32),
            ];
            let cell = rng.gen_range(10.0..25.0);
            let patches = value_noise(rng, w, h, cell);
            for (i, px) in canvas.rgb.iter_mut().enumerate() {
                let s = 40.0 * (patches[i] - 0.5) + 14.0 * grain.sample(rng);
                *px = [base[0] + 0.5 * s, base[1] + s, base[2] + 0.4 * s];
            }
        }
        Texture::StereoPlatform => {
            let base = rng.gen_range(95.0..135.0f32);
            let plate = rng.gen_range(24..44usize);
            let shade: Vec<f32> = (0..(w / plate + 1) * (h / plate + 1))
                .map(|_| rng.gen_range(-12.0..12.0))
                .collect();
            let tread = rng.gen_range(5..8usize);
            for y in 0..h {
                for x in 0..w {
                    let px = &mut canvas.rgb[y * w + x];
                    if x % plate == 0 || y % plate == 0 {
                        *px = [base * 0.45; 3];
                        continue;
                    }
                    let mut v = base + shade[(y / plate) * (w / plate + 1) + x / plate] + 4.0 * grain.sample(rng);
                    if (x + y) % tread == 0 {
                        v += 10.0;
                    }
                    *px = [v - 4.0, v, v + 8.0];
                }
            }
        }
    }
}

/// Blends paint over the canvas where `coverage > 0`.
pub(crate) fn composite(canvas: &mut Canvas, coverage: &[f32], color: [f32; 3], opacity: &[f32]) {
    for (i, px) in canvas.rgb.iter_mut().enumerate() {
        let a = coverage[i] * opacity[i];
        if a > 0.0 {
            for c in 0..3 {
                px[c] = px[c] * (1.0 - a) + color[c] * a;
            }
        }
    }
}

/// Soft-edged darkening on one side of a line through `anchor` with normal `normal`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Shadow {
    pub anchor: Point,
    pub normal: Point,
    pub strength: f64,
    pub softness: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lighting {
    pub gain: f64,
    pub gamma: f64,
    pub shadow: Option<Shadow>,
}

impl Default for Lighting {
    fn default() -> Self {
        Self {
            gain: 1.0,
            gamma: 1.0,
            shadow: None,
        }
    }
}

pub(crate) fn apply_lighting(canvas: &mut Canvas, lighting: &Lighting) {
    let w = canvas.width;
    for (i, px) in canvas.rgb.iter_mut().enumerate() {
        let mut factor = lighting.gain;
        if let Some(s) = lighting.shadow {
            let p = Point::new((i % w) as f64, (i / w) as f64);
            let d = (p - s.anchor).dot(s.normal);
            let t = (0.5 + d / (2.0 * s.softness)).clamp(0.0, 1.0);
            factor *= 1.0 - s.strength * t;
        }
        for v in px.iter_mut() {
            let x = (*v as f64 / 255.0).clamp(0.0, 1.0).powf(lighting.gamma);
            *v = (255.0 * x * factor) as f32;
        }
    }
}

pub(crate) fn add_noise(canvas: &mut Canvas, sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma <= 0.0 {
        return;
    }
    let n = Normal::new(0.0f32, sigma as f32).unwrap();
    for px in canvas.rgb.iter_mut() {
        for v in px.iter_mut() {
            *v += n.sample(rng);
        }
    }
}
