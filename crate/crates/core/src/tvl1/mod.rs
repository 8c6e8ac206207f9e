//! Duality-based TV-L1 optical flow.
//!
//! Minimises the discrete energy
//!
//! ```text
//! E(u) = sum_x |grad u1| + |grad u2| + lambda * |I1(x + u) - I0(x)|
//! ```
//!
//! coarse to fine. At every warp the residual is linearised around the
//! current flow `u0`:
//! `rho(u) = I1(x + u0) + grad I1(x + u0) . (u - u0) - I0(x)`.
//! An auxiliary field `v` decouples the two terms; the data term is solved
//! pointwise by thresholding and the TV term by a projected dual ascent on
//! `p` followed by a divergence step.

mod image;
mod ops;
mod pyramid;

pub use image::{FlowField, GrayImage};
pub use ops::{divergence, image_gradient, warp_bilinear};
pub use pyramid::build_pyramid;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use ops::{centered_gradient, median3x3, resize_bilinear};

const GRAD_IS_ZERO: f64 = 1e-10;
/// The solver works on intensities rescaled to this range.
const WORKING_RANGE: f64 = 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tvl1Params {
    /// Data term weight.
    pub lambda: f64,
    /// Coupling between `u` and the auxiliary field `v`.
    pub theta: f64,
    /// Dual ascent step.
    pub tau_step: f64,
    pub n_scales: usize,
    /// Per-level downscale factor.
    pub zoom: f64,
    pub n_warps: usize,
    pub max_iters: usize,
    /// Stop inner iterations once the mean flow update falls below this.
    pub epsilon: f64,
    /// 3x3 median filter on the flow after each warp.
    pub median_filter: bool,
}

impl Default for Tvl1Params {
    fn default() -> Self {
        Self {
            lambda: 0.15,
            theta: 0.3,
            tau_step: 0.25,
            n_scales: 5,
            zoom: 0.5,
            n_warps: 5,
            max_iters: 300,
            epsilon: 0.01,
            median_filter: true,
        }
    }
}

impl Tvl1Params {
    pub fn validate(&self) -> Result<()> {
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        if !finite_pos(self.lambda) {
            return Err(Error::param("lambda", format!("must be > 0, got {}", self.lambda)));
        }
        if !finite_pos(self.theta) {
            return Err(Error::param("theta", format!("must be > 0, got {}", self.theta)));
        }
        if !finite_pos(self.tau_step) || self.tau_step > 0.125 / self.theta {
            return Err(Error::param(
                "tau_step",
                format!("must be in (0, 0.125/theta = {}], got {}", 0.125 / self.theta, self.tau_step),
            ));
        }
        if !(self.zoom > 0.0 && self.zoom < 1.0) {
            return Err(Error::param("zoom", format!("must be in (0, 1), got {}", self.zoom)));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::param("epsilon", format!("must be >= 0, got {}", self.epsilon)));
        }
        for (name, v) in [
            ("n_scales", self.n_scales),
            ("n_warps", self.n_warps),
            ("max_iters", self.max_iters),
        ] {
            if v == 0 {
                return Err(Error::param(name, "must be >= 1"));
            }
        }
        Ok(())
    }
}

/// Discrete energy with the data term evaluated by warping `i1`
/// (no linearisation). The TV term uses forward differences.
pub fn energy(i0: &GrayImage, i1: &GrayImage, flow: &FlowField, lambda: f64) -> Result<f64> {
    i0.check_same_dims(i1, "second frame")?;
    let warped = warp_bilinear(i1, flow)?;
    let (w, h) = i0.dims();
    let u1 = GrayImage::new(w, h, flow.u1.clone())?;
    let u2 = GrayImage::new(w, h, flow.u2.clone())?;
    let (u1x, u1y) = image_gradient(&u1);
    let (u2x, u2y) = image_gradient(&u2);
    let mut tv = 0.0;
    let mut data = 0.0;
    for i in 0..w * h {
        tv += u1x.as_slice()[i].hypot(u1y.as_slice()[i]) + u2x.as_slice()[i].hypot(u2y.as_slice()[i]);
        data += (warped.as_slice()[i] - i0.as_slice()[i]).abs();
    }
    Ok(tv + lambda * data)
}

/// Jointly rescale both frames to `[0, 255]`, the intensity scale the
/// solver works in and on which `lambda` is calibrated. A constant pair maps
/// to zeros.
pub fn normalize_pair(i0: &GrayImage, i1: &GrayImage) -> (GrayImage, GrayImage) {
    let (lo, hi) = i0
        .as_slice()
        .iter()
        .chain(i1.as_slice())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let scale = if hi > lo { WORKING_RANGE / (hi - lo) } else { 0.0 };
    let f = |img: &GrayImage| {
        let mut out = img.clone();
        out.as_mut_slice().iter_mut().for_each(|v| *v = (*v - lo) * scale);
        out
    };
    (f(i0), f(i1))
}

/// Estimate the flow taking `i0` onto `i1`, i.e. `i1(x + u) ~ i0(x)`.
///
/// The minimised objective is [`energy`] on the [`normalize_pair`] images.
pub fn compute_flow(i0: &GrayImage, i1: &GrayImage, params: &Tvl1Params) -> Result<FlowField> {
    i0.check_same_dims(i1, "second frame")?;
    params.validate()?;
    let (n0, n1) = normalize_pair(i0, i1);
    let pyr0 = build_pyramid(&n0, params.n_scales, params.zoom);
    let pyr1 = build_pyramid(&n1, params.n_scales, params.zoom);
    let levels = pyr0.len();

    let (cw, ch) = pyr0[levels - 1].dims();
    let mut flow = FlowField::zeros(cw, ch);
    for level in (0..levels).rev() {
        let (w, h) = pyr0[level].dims();
        if flow.dims() != (w, h) {
            flow = upsample_flow(&flow, w, h);
        }
        solve_level(&pyr0[level], &pyr1[level], &mut flow, params);
    }
    Ok(flow)
}

fn upsample_flow(flow: &FlowField, w: usize, h: usize) -> FlowField {
    let (cw, ch) = flow.dims();
    let sx = w as f64 / cw as f64;
    let sy = h as f64 / ch as f64;
    let plane = |data: &[f64], s: f64| -> Vec<f64> {
        let img = GrayImage::new(cw, ch, data.to_vec()).expect("flow planes are finite");
        let mut up = resize_bilinear(&img, w, h);
        up.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        up.as_slice().to_vec()
    };
    FlowField::new(w, h, plane(&flow.u1, sx), plane(&flow.u2, sy)).expect("upsampled flow is finite")
}

fn solve_level(i0: &GrayImage, i1: &GrayImage, flow: &mut FlowField, params: &Tvl1Params) {
    let (w, h) = i0.dims();
    let n = w * h;
    let (i1x, i1y) = centered_gradient(i1);
    let l_t = params.lambda * params.theta;
    let taut = params.tau_step / params.theta;

    // dual variables for u1 and u2
    let mut p11 = GrayImage::filled(w, h, 0.0);
    let mut p12 = GrayImage::filled(w, h, 0.0);
    let mut p21 = GrayImage::filled(w, h, 0.0);
    let mut p22 = GrayImage::filled(w, h, 0.0);
    let mut v1 = vec![0.0; n];
    let mut v2 = vec![0.0; n];

    for _ in 0..params.n_warps {
        let warped = warp_bilinear(i1, flow).expect("dims checked");
        let wx = warp_bilinear(&i1x, flow).expect("dims checked");
        let wy = warp_bilinear(&i1y, flow).expect("dims checked");
        let (wx, wy) = (wx.as_slice(), wy.as_slice());
        let grad: Vec<f64> = wx.iter().zip(wy).map(|(a, b)| a * a + b * b).collect();
        let rho_c: Vec<f64> = (0..n)
            .map(|i| warped.as_slice()[i] - wx[i] * flow.u1[i] - wy[i] * flow.u2[i] - i0.as_slice()[i])
            .collect();

        for _ in 0..params.max_iters {
            // pointwise thresholding of the linearised data term
            for i in 0..n {
                let rho = rho_c[i] + wx[i] * flow.u1[i] + wy[i] * flow.u2[i];
                let (d1, d2) = if rho < -l_t * grad[i] {
                    (l_t * wx[i], l_t * wy[i])
                } else if rho > l_t * grad[i] {
                    (-l_t * wx[i], -l_t * wy[i])
                } else if grad[i] < GRAD_IS_ZERO {
                    (0.0, 0.0)
                } else {
                    let f = -rho / grad[i];
                    (f * wx[i], f * wy[i])
                };
                v1[i] = flow.u1[i] + d1;
                v2[i] = flow.u2[i] + d2;
            }

            let div1 = divergence(&p11, &p12).expect("dims match");
            let div2 = divergence(&p21, &p22).expect("dims match");
            let mut delta = 0.0;
            for i in 0..n {
                let nu1 = v1[i] + params.theta * div1.as_slice()[i];
                let nu2 = v2[i] + params.theta * div2.as_slice()[i];
                delta += (nu1 - flow.u1[i]).hypot(nu2 - flow.u2[i]);
                flow.u1[i] = nu1;
                flow.u2[i] = nu2;
            }
            delta /= n as f64;

            dual_step(&flow.u1, w, h, taut, &mut p11, &mut p12);
            dual_step(&flow.u2, w, h, taut, &mut p21, &mut p22);

            if delta < params.epsilon {
                break;
            }
        }

        if params.median_filter {
            flow.u1 = median3x3(&flow.u1, w, h);
            flow.u2 = median3x3(&flow.u2, w, h);
        }
    }
}

/// `p <- (p + taut * grad u) / (1 + taut * |grad u|)`
fn dual_step(u: &[f64], w: usize, h: usize, taut: f64, px: &mut GrayImage, py: &mut GrayImage) {
    let plane = GrayImage::new(w, h, u.to_vec()).expect("flow is finite");
    let (gx, gy) = image_gradient(&plane);
    for i in 0..w * h {
        let (ux, uy) = (gx.as_slice()[i], gy.as_slice()[i]);
        let ng = 1.0 + taut * ux.hypot(uy);
        px.as_mut_slice()[i] = (px.as_slice()[i] + taut * ux) / ng;
        py.as_mut_slice()[i] = (py.as_slice()[i] + taut * uy) / ng;
    }
}
