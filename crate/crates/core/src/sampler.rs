//! Clip sampling and multi-crop, multi-model prediction averaging.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Tolerance on probability rows summing to one.
pub const PROB_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ClipSpec {
    pub frames: usize,
    pub skip: usize,
    pub resolution: usize,
}

impl ClipSpec {
    pub fn new(frames: usize, skip: usize, resolution: usize) -> Result<Self> {
        if frames == 0 {
            return Err(Error::param("frames", "must be >= 1"));
        }
        if skip == 0 {
            return Err(Error::param("skip", "must be >= 1"));
        }
        if resolution == 0 {
            return Err(Error::param("resolution", "must be > 0"));
        }
        Ok(Self { frames, skip, resolution })
    }

    /// Frames covered by one clip, `frames * skip`.
    pub fn span(&self) -> usize {
        self.frames * self.skip
    }
}

/// `frames` indices `start, start + skip, ...`, wrapped modulo `video_len`.
pub fn sample_clip_indices(video_len: usize, spec: &ClipSpec, start: usize) -> Result<Vec<usize>> {
    if video_len == 0 {
        return Err(Error::param("video_len", "must be >= 1"));
    }
    Ok((0..spec.frames).map(|k| (start + k * spec.skip) % video_len).collect())
}

/// Evenly spaced clip starts over `[0, max(0, video_len - span)]`; a single
/// crop is centred.
pub fn temporal_crop_starts(video_len: usize, spec: &ClipSpec, n_temporal: usize) -> Result<Vec<usize>> {
    if n_temporal == 0 {
        return Err(Error::param("n_temporal", "must be >= 1"));
    }
    let slack = video_len.saturating_sub(spec.span());
    if n_temporal == 1 {
        return Ok(vec![slack / 2]);
    }
    let step = slack as f64 / (n_temporal - 1) as f64;
    Ok((0..n_temporal).map(|k| (k as f64 * step).round() as usize).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CropBox {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// `n_spatial` square crops of `side` spread along the longer axis (start,
/// centre and end for three), centred on the shorter one.
pub fn spatial_crop_boxes(height: usize, width: usize, side: usize, n_spatial: usize) -> Result<Vec<CropBox>> {
    if side == 0 || side > height.min(width) {
        return Err(Error::param(
            "side",
            format!("crop side {side} must be in 1..={}", height.min(width)),
        ));
    }
    if n_spatial == 0 {
        return Err(Error::param("n_spatial", "must be >= 1"));
    }
    let along_x = width >= height;
    let (long, short) = if along_x { (width, height) } else { (height, width) };
    let slack = long - side;
    let cross = (short - side) / 2;
    let offsets: Vec<usize> = if n_spatial == 1 {
        vec![slack / 2]
    } else {
        let step = slack as f64 / (n_spatial - 1) as f64;
        (0..n_spatial).map(|k| (k as f64 * step).round() as usize).collect()
    };
    Ok(offsets
        .into_iter()
        .map(|o| {
            let (x, y) = if along_x { (o, cross) } else { (cross, o) };
            CropBox { x, y, width: side, height: side }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CropGrid {
    pub spatial: usize,
    pub temporal: usize,
}

impl CropGrid {
    pub fn new(spatial: usize, temporal: usize) -> Result<Self> {
        if spatial == 0 || temporal == 0 {
            return Err(Error::param("crops", "spatial and temporal crop counts must be >= 1"));
        }
        Ok(Self { spatial, temporal })
    }

    pub fn len(&self) -> usize {
        self.spatial * self.temporal
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row of crop `(s, t)` in spatial-major order.
    pub fn row(&self, spatial: usize, temporal: usize) -> usize {
        spatial * self.temporal + temporal
    }
}

/// One probability row per crop, one column per class.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    probs: Matrix,
}

impl PredictionMatrix {
    pub fn new(probs: Matrix) -> Result<Self> {
        if probs.rows() == 0 || probs.cols() == 0 {
            return Err(Error::Empty("prediction matrix"));
        }
        for (i, r) in probs.iter_rows().enumerate() {
            if let Some(v) = r.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Domain(format!("row {i}: probability {v} outside [0, 1]")));
            }
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > PROB_TOL {
                return Err(Error::Domain(format!("row {i} sums to {s}")));
            }
        }
        Ok(Self { probs })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn crops(&self) -> usize {
        self.probs.rows()
    }

    pub fn classes(&self) -> usize {
        self.probs.cols()
    }
}

/// Mean of the crop rows.
pub fn aggregate_crops(preds: &PredictionMatrix) -> Vec<f64> {
    let mut out = vec![0.0; preds.classes()];
    for r in preds.probs.iter_rows() {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    let inv = 1.0 / preds.crops() as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleMember {
    pub model_id: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSpec {
    members: Vec<EnsembleMember>,
}

impl EnsembleSpec {
    pub fn new(members: Vec<EnsembleMember>) -> Result<Self> {
        if let Some(m) = members.iter().find(|m| !(m.weight.is_finite() && m.weight >= 0.0)) {
            return Err(Error::param("weights", format!("weight of `{}` is {}", m.model_id, m.weight)));
        }
        if !members.iter().any(|m| m.weight > 0.0) {
            return Err(Error::param("weights", "at least one weight must be positive"));
        }
        Ok(Self { members })
    }

    /// Members named `model0, model1, ...` with the given weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        Self::new(
            weights
                .iter()
                .enumerate()
                .map(|(i, &weight)| EnsembleMember { model_id: format!("model{i}"), weight })
                .collect(),
        )
    }

    /// `n` members with weight 1.
    pub fn uniform(n: usize) -> Result<Self> {
        Self::from_weights(&vec![1.0; n])
    }

    pub fn members(&self) -> &[EnsembleMember] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsemblePrediction {
    pub probs: Vec<f64>,
    pub top1: usize,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Weighted mean of per-model probability vectors, renormalised.
pub fn aggregate_ensemble(per_model: &[Vec<f64>], spec: &EnsembleSpec) -> Result<EnsemblePrediction> {
    if per_model.len() != spec.len() {
        return Err(Error::shape(format!("{} model vectors", spec.len()), per_model.len()));
    }
    let classes = per_model[0].len();
    if classes == 0 {
        return Err(Error::Empty("probability vector"));
    }
    if let Some((i, v)) = per_model.iter().enumerate().find(|(_, v)| v.len() != classes) {
        return Err(Error::shape(format!("{classes} classes"), format!("{} in model {i}", v.len())));
    }
    let mut probs = vec![0.0; classes];
    for (v, m) in per_model.iter().zip(&spec.members) {
        for (p, x) in probs.iter_mut().zip(v) {
            *p += m.weight * x;
        }
    }
    let total: f64 = probs.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::Domain("ensemble has no probability mass".into()));
    }
    probs.iter_mut().for_each(|p| *p /= total);
    let top1 = argmax(&probs);
    Ok(EnsemblePrediction { probs, top1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_indices() {
        let s = ClipSpec::new(16, 2, 112).unwrap();
        assert_eq!(sample_clip_indices(64, &s, 0).unwrap(), (0..32).step_by(2).collect::<Vec<_>>());
        let wrapped = sample_clip_indices(20, &s, 0).unwrap();
        let expected: Vec<usize> = (0..10).map(|k| 2 * k).chain((0..6).map(|k| 2 * k)).collect();
        assert_eq!(wrapped, expected);
        assert_eq!(sample_clip_indices(10, &ClipSpec::new(1, 1, 1).unwrap(), 5).unwrap(), vec![5]);
        assert!(sample_clip_indices(0, &s, 0).is_err());
    }

    #[test]
    fn temporal_starts() {
        let s = ClipSpec::new(16, 2, 112).unwrap();
        assert_eq!(temporal_crop_starts(100, &s, 1).unwrap(), vec![34]);
        assert_eq!(
            temporal_crop_starts(352, &s, 10).unwrap(),
            vec![0, 36, 71, 107, 142, 178, 213, 249, 284, 320]
        );
        assert_eq!(temporal_crop_starts(20, &s, 5).unwrap(), vec![0; 5]);
    }

    #[test]
    fn spatial_boxes() {
        let xs: Vec<_> = spatial_crop_boxes(224, 298, 224, 3).unwrap().iter().map(|b| b.x).collect();
        assert_eq!(xs, vec![0, 37, 74]);
        let ys: Vec<_> = spatial_crop_boxes(256, 224, 224, 3).unwrap().iter().map(|b| b.y).collect();
        assert_eq!(ys, vec![0, 16, 32]);
        let same = spatial_crop_boxes(112, 112, 112, 3).unwrap();
        assert!(same.iter().all(|b| *b == CropBox { x: 0, y: 0, width: 112, height: 112 }));
        assert!(spatial_crop_boxes(100, 200, 101, 3).is_err());
    }

    #[test]
    fn crop_means() {
        let p = PredictionMatrix::from_rows(&[vec![0.6, 0.4], vec![0.2, 0.8]]).unwrap();
        let m = aggregate_crops(&p);
        assert!((m[0] - 0.4).abs() < 1e-15 && (m[1] - 0.6).abs() < 1e-15);
        let single = PredictionMatrix::from_rows(&[vec![0.1, 0.9]]).unwrap();
        assert_eq!(aggregate_crops(&single), vec![0.1, 0.9]);
    }

    #[test]
    fn invalid_prediction_rows() {
        assert!(PredictionMatrix::from_rows(&[vec![0.5, 0.6]]).is_err());
        assert!(PredictionMatrix::from_rows(&[vec![1.5, -0.5]]).is_err());
        assert!(PredictionMatrix::new(Matrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn ensemble_tie_break_and_errors() {
        let spec = EnsembleSpec::uniform(2).unwrap();
        let out = aggregate_ensemble(&[vec![1.0, 0.0], vec![0.0, 1.0]], &spec).unwrap();
        assert_eq!(out.probs, vec![0.5, 0.5]);
        assert_eq!(out.top1, 0);
        assert!(aggregate_ensemble(&[vec![1.0, 0.0], vec![1.0]], &spec).is_err());
        assert!(EnsembleSpec::from_weights(&[0.0, 0.0]).is_err());
        assert!(EnsembleSpec::from_weights(&[-1.0, 2.0]).is_err());
    }
}
