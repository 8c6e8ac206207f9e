//! Discrete differential operators, warping and filtering on [`GrayImage`].

use super::{FlowField, GrayImage};
use crate::error::{Error, Result};

/// Forward differences `(d/dx, d/dy)` with a zero gradient on the last
/// column and row.
pub fn image_gradient(img: &GrayImage) -> (GrayImage, GrayImage) {
    let (w, h) = img.dims();
    let mut gx = GrayImage::filled(w, h, 0.0);
    let mut gy = GrayImage::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let v = img.get(x, y);
            if x + 1 < w {
                gx.set(x, y, img.get(x + 1, y) - v);
            }
            if y + 1 < h {
                gy.set(x, y, img.get(x, y + 1) - v);
            }
        }
    }
    (gx, gy)
}

/// Backward-difference divergence, the negative adjoint of
/// [`image_gradient`]: `<grad u, p> = -<u, div p>`.
pub fn divergence(p1: &GrayImage, p2: &GrayImage) -> Result<GrayImage> {
    p1.check_same_dims(p2, "second component")?;
    let (w, h) = p1.dims();
    let mut out = GrayImage::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let dx = if w == 1 {
                0.0
            } else if x == 0 {
                p1.get(0, y)
            } else if x == w - 1 {
                -p1.get(x - 1, y)
            } else {
                p1.get(x, y) - p1.get(x - 1, y)
            };
            let dy = if h == 1 {
                0.0
            } else if y == 0 {
                p2.get(x, 0)
            } else if y == h - 1 {
                -p2.get(x, y - 1)
            } else {
                p2.get(x, y) - p2.get(x, y - 1)
            };
            out.set(x, y, dx + dy);
        }
    }
    Ok(out)
}

/// Central differences with border-clamped neighbours.
pub(crate) fn centered_gradient(img: &GrayImage) -> (GrayImage, GrayImage) {
    let (w, h) = img.dims();
    let mut gx = GrayImage::filled(w, h, 0.0);
    let mut gy = GrayImage::filled(w, h, 0.0);
    for y in 0..h {
        let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..w {
            let (xm, xp) = (x.saturating_sub(1), (x + 1).min(w - 1));
            gx.set(x, y, 0.5 * (img.get(xp, y) - img.get(xm, y)));
            gy.set(x, y, 0.5 * (img.get(x, yp) - img.get(x, ym)));
        }
    }
    (gx, gy)
}

/// Bilinear sample at a real coordinate; the coordinate is clamped to the
/// image so out-of-bounds reads return border values.
#[inline]
pub(crate) fn sample_bilinear(img: &GrayImage, x: f64, y: f64) -> f64 {
    let (w, h) = img.dims();
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = (1.0 - fx) * img.get(x0, y0) + fx * img.get(x1, y0);
    let bottom = (1.0 - fx) * img.get(x0, y1) + fx * img.get(x1, y1);
    (1.0 - fy) * top + fy * bottom
}

/// `img` sampled at `(x + u1, y + u2)`.
pub fn warp_bilinear(img: &GrayImage, flow: &FlowField) -> Result<GrayImage> {
    if img.dims() != flow.dims() {
        return Err(Error::shape(
            format!("flow of {}x{}", img.width(), img.height()),
            format!("{}x{}", flow.width(), flow.height()),
        ));
    }
    let (w, h) = img.dims();
    let mut out = GrayImage::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            out.set(x, y, sample_bilinear(img, x as f64 + flow.u1[i], y as f64 + flow.u2[i]));
        }
    }
    Ok(out)
}

/// 3x3 median with border replication.
pub(crate) fn median3x3(plane: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; plane.len()];
    let mut window = [0.0f64; 9];
    for y in 0..h {
        for x in 0..w {
            let mut k = 0;
            for dy in [-1isize, 0, 1] {
                let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                for dx in [-1isize, 0, 1] {
                    let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    window[k] = plane[yy * w + xx];
                    k += 1;
                }
            }
            window.sort_unstable_by(f64::total_cmp);
            out[y * w + x] = window[4];
        }
    }
    out
}

/// Separable Gaussian blur with border replication.
pub(crate) fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= s);

    let (w, h) = img.dims();
    let mut tmp = GrayImage::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let xx = (x as isize + k as isize - radius).clamp(0, w as isize - 1) as usize;
                acc += kv * img.get(xx, y);
            }
            tmp.set(x, y, acc);
        }
    }
    let mut out = GrayImage::filled(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let yy = (y as isize + k as isize - radius).clamp(0, h as isize - 1) as usize;
                acc += kv * tmp.get(x, yy);
            }
            out.set(x, y, acc);
        }
    }
    out
}

/// Bilinear resample to `(w, h)` with pixel-centre alignment.
pub(crate) fn resize_bilinear(img: &GrayImage, w: usize, h: usize) -> GrayImage {
    let sx = img.width() as f64 / w as f64;
    let sy = img.height() as f64 / h as f64;
    GrayImage::from_fn(w, h, |x, y| {
        sample_bilinear(img, (x as f64 + 0.5) * sx - 0.5, (y as f64 + 0.5) * sy - 0.5)
    })
}
