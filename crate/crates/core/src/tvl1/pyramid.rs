use super::ops::{gaussian_blur, resize_bilinear};
use super::GrayImage;

/// Levels stop before either side would drop below this.
const MIN_SIDE: usize = 16;

/// Coarse-to-fine pyramid. Level 0 is `img`; level `k` is
/// `round(dim * zoom^k)` on each axis, smoothed before resampling. Fewer
/// than `n_scales` levels are returned if the coarsest would be smaller than
/// 16 pixels.
pub fn build_pyramid(img: &GrayImage, n_scales: usize, zoom: f64) -> Vec<GrayImage> {
    let mut levels = vec![img.clone()];
    // anti-aliasing sigma for a single zoom step
    let sigma = 0.6 * (1.0 / (zoom * zoom) - 1.0).max(0.0).sqrt();
    for k in 1..n_scales {
        let f = zoom.powi(k as i32);
        let w = (img.width() as f64 * f).round() as usize;
        let h = (img.height() as f64 * f).round() as usize;
        if w < MIN_SIDE || h < MIN_SIDE {
            break;
        }
        let prev = levels.last().expect("non-empty");
        let smoothed = gaussian_blur(prev, sigma);
        levels.push(resize_bilinear(&smoothed, w, h));
    }
    levels
}
