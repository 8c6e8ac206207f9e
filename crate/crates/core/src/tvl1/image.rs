use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Row-major single-channel image. Intensities are nominally in `[0, 1]`;
/// derived planes (gradients, divergence) reuse the same container.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Empty("image"));
        }
        if data.len() != width * height {
            return Err(Error::shape(
                format!("{} pixels for {width}x{height}", width * height),
                format!("{} pixels", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("pixel {i} is not finite")));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image must be non-empty");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image must be non-empty");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    /// Luma of an interleaved 8-bit RGB buffer, scaled to `[0, 1]`.
    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != 3 * width * height {
            return Err(Error::shape(
                format!("{} bytes of RGB", 3 * width * height),
                format!("{} bytes", rgb.len()),
            ));
        }
        let data = rgb
            .chunks_exact(3)
            .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0)
            .collect();
        Self::new(width, height, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub(crate) fn check_same_dims(&self, other: &GrayImage, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(
                format!("{what} of {}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ));
        }
        Ok(())
    }

    /// Band-limited texture: a sum of random low-frequency sinusoids sampled
    /// at `(x - shift_x, y - shift_y)`, scaled into `[0, 1]`. Shifting the
    /// same seed by `t` yields an exact sub-pixel translation.
    pub fn sinusoid_texture(width: usize, height: usize, seed: u64, shift: (f64, f64)) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves: Vec<(f64, f64, f64, f64)> = (0..8)
            .map(|_| {
                let period = rng.random_range(8.0..24.0);
                let angle = rng.random_range(0.0..std::f64::consts::PI);
                let k = 2.0 * std::f64::consts::PI / period;
                (k * angle.cos(), k * angle.sin(), rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.5..1.0))
            })
            .collect();
        let total: f64 = waves.iter().map(|w| w.3).sum();
        Self::from_fn(width, height, |x, y| {
            let (px, py) = (x as f64 - shift.0, y as f64 - shift.1);
            let s: f64 = waves.iter().map(|&(kx, ky, phase, amp)| amp * (kx * px + ky * py + phase).sin()).sum();
            0.5 + 0.5 * s / total
        })
    }
}

/// Dense displacement field `(u1, u2)` in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            u1: vec![0.0; width * height],
            u2: vec![0.0; width * height],
        }
    }

    pub fn constant(width: usize, height: usize, u1: f64, u2: f64) -> Self {
        Self {
            width,
            height,
            u1: vec![u1; width * height],
            u2: vec![u2; width * height],
        }
    }

    pub fn new(width: usize, height: usize, u1: Vec<f64>, u2: Vec<f64>) -> Result<Self> {
        let n = width * height;
        if n == 0 {
            return Err(Error::Empty("flow field"));
        }
        if u1.len() != n || u2.len() != n {
            return Err(Error::shape(
                format!("{n} vectors for {width}x{height}"),
                format!("{} / {}", u1.len(), u2.len()),
            ));
        }
        if u1.iter().chain(&u2).any(|v| !v.is_finite()) {
            return Err(Error::Domain("flow has non-finite entries".into()));
        }
        Ok(Self { width, height, u1, u2 })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Mean Euclidean length of the displacement vectors.
    pub fn mean_magnitude(&self) -> f64 {
        let s: f64 = self.u1.iter().zip(&self.u2).map(|(a, b)| a.hypot(*b)).sum();
        s / self.u1.len() as f64
    }

    /// Mean endpoint error against a constant ground-truth displacement over
    /// pixels at least `margin` away from the border.
    pub fn mean_endpoint_error(&self, truth: (f64, f64), margin: usize) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for y in margin..self.height.saturating_sub(margin) {
            for x in margin..self.width.saturating_sub(margin) {
                let i = y * self.width + x;
                sum += (self.u1[i] - truth.0).hypot(self.u2[i] - truth.1);
                count += 1;
            }
        }
        if count == 0 {
            f64::NAN
        } else {
            sum / count as f64
        }
    }
}
