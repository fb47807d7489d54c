//! 8-bit rasters, binary masks, and image file I/O.
//!
//! Coordinates are pixels with the origin at the top-left and y pointing
//! down. Pixel `(x, y)` is centered on the integer coordinate `(x, y)` and
//! covers the square `[x - 0.5, x + 0.5] x [y - 0.5, y + 0.5]`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Single- or three-channel interleaved 8-bit image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        assert!(channels == 1 || channels == 3, "1 or 3 channels");
        Self {
            width,
            height,
            channels,
            data: vec![0; width * height * channels],
        }
    }

    pub fn from_raw(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if (channels != 1 && channels != 3) || data.len() != width * height * channels {
            return Err(Error::ShapeMismatch {
                op: "image from_raw",
                lhs: vec![height, width, channels],
                rhs: vec![data.len()],
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Luma in `[0, 1]` per pixel (Rec. 601 weights for RGB).
    pub fn luma(&self) -> Vec<f32> {
        self.data
            .chunks_exact(self.channels)
            .map(|p| {
                if self.channels == 1 {
                    p[0] as f32 / 255.0
                } else {
                    (0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32) / 255.0
                }
            })
            .collect()
    }

    /// `[1, 3, h, w]` tensor of the window with top-left `(x0, y0)`, values
    /// from [`network_input`], zero outside the image. Gray images are
    /// replicated to three channels.
    pub fn window_tensor(&self, x0: i64, y0: i64, w: usize, h: usize) -> Tensor {
        let mut out = vec![0.0f32; 3 * w * h];
        let plane = w * h;
        for wy in 0..h {
            let y = y0 + wy as i64;
            if y < 0 || y >= self.height as i64 {
                continue;
            }
            for wx in 0..w {
                let x = x0 + wx as i64;
                if x < 0 || x >= self.width as i64 {
                    continue;
                }
                let p = self.pixel(x as usize, y as usize);
                for c in 0..3 {
                    let v = if self.channels == 1 { p[0] } else { p[c] };
                    out[c * plane + wy * w + wx] = network_input(v);
                }
            }
        }
        Tensor::new(vec![1, 3, h, w], out).expect("window extents")
    }

    /// Loads PNG or PNM, converting to 8-bit RGB.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Self::from_raw(w as usize, h as usize, 3, rgb.into_raw())
    }

    /// Writes PNG, or binary PGM/PPM when the extension is `pgm`/`ppm`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if ext.eq_ignore_ascii_case("pgm") || ext.eq_ignore_ascii_case("ppm") {
            return self.save_pnm(path);
        }
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        image::save_buffer_with_format(
            path,
            &self.data,
            self.width as u32,
            self.height as u32,
            color,
            image::ImageFormat::Png,
        )
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }

    fn save_pnm(&self, path: &Path) -> Result<()> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut bytes = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        bytes.extend_from_slice(&self.data);
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

/// Writes a map of values in `[0, 1]` as an 8-bit PGM for inspection.
pub fn write_map_pgm(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<()> {
    let data = values
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    Image::from_raw(width, height, 1, data)?.save_pnm(path)
}

/// Binary raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Value at the pixel containing the real point `(x, y)`; false outside.
    pub fn at_point(&self, x: f64, y: f64) -> bool {
        let (px, py) = (x.round(), y.round());
        if px < 0.0 || py < 0.0 || px >= self.width as f64 || py >= self.height as f64 {
            return false;
        }
        self.get(px as usize, py as usize)
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// Iterator over `(x, y)` of set pixels in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(move |(i, _)| (i % w, i / w))
    }

    pub fn union(&self, other: &Mask) -> Mask {
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect();
        Mask { data, ..*self }
    }
}

/// Network input of an 8-bit sample: centered on mid-gray, in `[-0.5, 0.5]`.
pub fn network_input(v: u8) -> f32 {
    v as f32 / 255.0 - 0.5
}
