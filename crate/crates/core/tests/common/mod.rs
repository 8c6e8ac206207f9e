#![allow(dead_code)]

use knights::gradcheck::{central_difference, max_relative_error};
use knights::tclr::{
    global_local_loss, instance_contrastive_loss, local_local_loss, EmbeddingBatch, Temperature, TemporalClipSet,
};
use knights::Matrix;
use rand::Rng;

pub const TAUS: [f64; 3] = [0.1, 0.5, 1.0];
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for relative errors; keeps near-zero gradient entries
/// from dominating the ratio with pure rounding noise.
pub const FD_FLOOR: f64 = 1e-3;

/// Rows uniform in `[-1, 1]^dim`, rejecting norms below 0.3.
pub fn random_rows<R: Rng>(rng: &mut R, rows: usize, dim: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, dim);
    for i in 0..rows {
        loop {
            let r: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            if r.iter().map(|v| v * v).sum::<f64>() >= 0.09 {
                m.row_mut(i).copy_from_slice(&r);
                break;
            }
        }
    }
    m
}

pub fn random_tau<R: Rng>(rng: &mut R) -> Temperature {
    Temperature::new(TAUS[rng.random_range(0..TAUS.len())]).unwrap()
}

pub fn random_batch<R: Rng>(rng: &mut R, n: usize, d: usize) -> EmbeddingBatch {
    EmbeddingBatch::new(random_rows(rng, n, d), random_rows(rng, n, d)).unwrap()
}

pub fn random_clips<R: Rng>(rng: &mut R, nt: usize, d: usize) -> TemporalClipSet {
    TemporalClipSet::new(
        random_rows(rng, nt, d),
        random_rows(rng, nt, d),
        random_rows(rng, nt, d),
        random_rows(rng, nt, d),
    )
    .unwrap()
}

fn concat(ms: &[&Matrix]) -> Vec<f64> {
    ms.iter().flat_map(|m| m.as_slice().iter().copied()).collect()
}

fn split(x: &[f64], parts: usize, rows: usize, dim: usize) -> Vec<Matrix> {
    (0..parts)
        .map(|k| Matrix::from_vec(rows, dim, x[k * rows * dim..(k + 1) * rows * dim].to_vec()).unwrap())
        .collect()
}

pub fn ic_gradient_error(batch: &EmbeddingBatch, tau: Temperature) -> f64 {
    let (n, d) = (batch.len(), batch.dim());
    let g = instance_contrastive_loss(batch, tau).unwrap().grads;
    let x = concat(&[batch.embeddings(), batch.twins()]);
    let numeric = central_difference(
        |x| {
            let mut m = split(x, 2, n, d);
            let t = m.pop().unwrap();
            let e = m.pop().unwrap();
            instance_contrastive_loss(&EmbeddingBatch::new(e, t).unwrap(), tau).unwrap().value
        },
        &x,
        FD_STEP,
    );
    max_relative_error(&concat(&[&g.embeddings, &g.twins]), &numeric, FD_FLOOR)
}

pub fn clip_gradient_error(clips: &TemporalClipSet, tau: Temperature, local_local: bool) -> f64 {
    let f = if local_local { local_local_loss } else { global_local_loss };
    let (nt, d) = (clips.segments(), clips.dim());
    let g = f(clips, tau).unwrap().grads;
    let x = concat(&[clips.locals(), clips.locals_twin(), clips.global_slices(), clips.local_anchors()]);
    let numeric = central_difference(
        |x| {
            let m = split(x, 4, nt, d);
            let c = TemporalClipSet::new(m[0].clone(), m[1].clone(), m[2].clone(), m[3].clone()).unwrap();
            f(&c, tau).unwrap().value
        },
        &x,
        FD_STEP,
    );
    max_relative_error(&concat(&[&g.locals, &g.locals_twin, &g.global_slices, &g.local_anchors]), &numeric, FD_FLOOR)
}

/// Textbook multi-head attention with no pooling, written independently of
/// the library: softmax(Q K^T / sqrt(d_h)) V per head, concat, `wo`, plus
/// the input when widths match.
pub fn vanilla_attention(x: &Matrix, wq: &Matrix, wk: &Matrix, wv: &Matrix, wo: &Matrix, heads: usize) -> Matrix {
    let (n, din) = x.shape();
    let dout = wq.cols();
    let hd = dout / heads;
    let proj = |w: &Matrix| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..dout).map(|j| (0..din).map(|k| x[(i, k)] * w[(k, j)]).sum()).collect())
            .collect()
    };
    let (q, k, v) = (proj(wq), proj(wk), proj(wv));
    let mut concat = vec![vec![0.0; dout]; n];
    for h in 0..heads {
        let cols = h * hd..(h + 1) * hd;
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (hd as f64).sqrt())
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in cols.clone() {
                concat[i][c] = (0..n).map(|j| e[j] / z * v[j][c]).sum();
            }
        }
    }
    let mut out = Matrix::zeros(n, dout);
    for i in 0..n {
        for j in 0..dout {
            let mut s: f64 = (0..dout).map(|c| concat[i][c] * wo[(c, j)]).sum();
            if din == dout {
                s += x[(i, j)];
            }
            out[(i, j)] = s;
        }
    }
    out
}
