//! Naive double-loop transcription of the contrastive losses.
//!
//! Shares no code with the fast path: similarities are evaluated with a
//! direct `exp`, denominators are plain sums and no reuse happens across
//! anchors. Values only, no gradients.

use super::{EmbeddingBatch, LossWeights, Temperature, TemporalClipSet};
use crate::error::{Error, Result};

fn h(u: &[f64], v: &[f64], tau: f64) -> f64 {
    let mut uv = 0.0;
    let mut uu = 0.0;
    let mut vv = 0.0;
    for k in 0..u.len() {
        uv += u[k] * v[k];
        uu += u[k] * u[k];
        vv += v[k] * v[k];
    }
    (uv / (uu.sqrt() * vv.sqrt() * tau)).exp()
}

pub fn instance_contrastive(batch: &EmbeddingBatch, tau: Temperature) -> f64 {
    let g = batch.embeddings();
    let gp = batch.twins();
    let n = g.rows();
    let tau = tau.get();
    let mut total = 0.0;
    for i in 0..n {
        let num = h(g.row(i), gp.row(i), tau);
        let mut den = 0.0;
        for j in 0..n {
            let indicator = if j != i { 1.0 } else { 0.0 };
            den += indicator * h(g.row(i), g.row(j), tau) + h(g.row(i), gp.row(j), tau);
        }
        total += -(num / den).ln();
    }
    total / n as f64
}

pub fn local_local(clips: &TemporalClipSet, tau: Temperature) -> f64 {
    let g = clips.locals();
    let gp = clips.locals_twin();
    let nt = g.rows();
    let tau = tau.get();
    let mut total = 0.0;
    for p in 0..nt {
        let num = h(g.row(p), gp.row(p), tau);
        let mut den = 0.0;
        for q in 0..nt {
            let indicator = if q != p { 1.0 } else { 0.0 };
            den += indicator * h(g.row(p), g.row(q), tau) + h(g.row(p), gp.row(q), tau);
        }
        total += (num / den).ln();
    }
    -total
}

pub fn global_local(clips: &TemporalClipSet, tau: Temperature) -> f64 {
    let g = clips.global_slices();
    let l = clips.local_anchors();
    let nt = g.rows();
    let tau = tau.get();
    let mut total = 0.0;
    for k in 0..nt {
        let mut den_l = 0.0;
        let mut den_g = 0.0;
        for q in 0..nt {
            den_l += h(l.row(k), g.row(q), tau);
            den_g += h(g.row(k), l.row(q), tau);
        }
        total += (h(l.row(k), g.row(k), tau) / den_l).ln() + (h(g.row(k), l.row(k), tau) / den_g).ln();
    }
    -total
}

pub fn combined(
    batch: &EmbeddingBatch,
    clip_sets: &[TemporalClipSet],
    tau: Temperature,
    weights: LossWeights,
) -> Result<f64> {
    if clip_sets.is_empty() {
        return Err(Error::Empty("clip sets"));
    }
    let m = clip_sets.len() as f64;
    let ll: f64 = clip_sets.iter().map(|c| local_local(c, tau)).sum::<f64>() / m;
    let gl: f64 = clip_sets.iter().map(|c| global_local(c, tau)).sum::<f64>() / m;
    Ok(weights.instance * instance_contrastive(batch, tau)
        + weights.local_local * ll
        + weights.global_local * gl)
}
