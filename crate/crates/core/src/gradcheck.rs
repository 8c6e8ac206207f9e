//! Central finite differences for checking hand-derived gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::matrix::Matrix;
use crate::tclr::{
    global_local_loss, instance_contrastive_loss, local_local_loss, EmbeddingBatch, Temperature, TemporalClipSet,
};

/// Relative-error floor used when checking the loss gradients.
pub const LOSS_FLOOR: f64 = 1e-3;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let plus = f(&probe);
            probe[i] = orig - step;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Largest `|a - n| / max(|a|, |n|, floor)` over paired entries. The floor
/// keeps entries that are zero up to rounding from dominating.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Random valid rows in `[-1, 1]^d` with norm at least 0.3.
fn random_rows(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, dim);
    for i in 0..rows {
        loop {
            let r: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            if r.iter().map(|v| v * v).sum::<f64>().sqrt() >= 0.3 {
                m.row_mut(i).copy_from_slice(&r);
                break;
            }
        }
    }
    m
}

/// Largest relative error of the instance, local-local and global-local
/// gradients over `configs` random problems.
pub fn loss_gradient_errors(configs: usize, seed: u64, step: f64) -> Result<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 3];
    for _ in 0..configs {
        let n = rng.random_range(1..=6);
        let d = rng.random_range(2..=8);
        let tau = Temperature::new([0.1, 0.5, 1.0][rng.random_range(0..3)])?;
        let (g, gp) = (random_rows(&mut rng, n, d), random_rows(&mut rng, n, d));
        let batch = EmbeddingBatch::new(g.clone(), gp.clone())?;
        let ic = instance_contrastive_loss(&batch, tau)?;
        let flat: Vec<f64> = g.as_slice().iter().chain(gp.as_slice()).copied().collect();
        let numeric = central_difference(
            |x| {
                let (a, b) = x.split_at(n * d);
                let b = EmbeddingBatch::new(
                    Matrix::from_vec(n, d, a.to_vec()).expect("shape"),
                    Matrix::from_vec(n, d, b.to_vec()).expect("shape"),
                );
                b.and_then(|b| instance_contrastive_loss(&b, tau)).map_or(f64::NAN, |o| o.value)
            },
            &flat,
            step,
        );
        let analytic: Vec<f64> = ic.grads.embeddings.as_slice().iter().chain(ic.grads.twins.as_slice()).copied().collect();
        worst[0] = worst[0].max(max_relative_error(&analytic, &numeric, LOSS_FLOOR));

        let nt = rng.random_range(1..=6);
        let mats: Vec<Matrix> = (0..4).map(|_| random_rows(&mut rng, nt, d)).collect();
        let flat: Vec<f64> = mats.iter().flat_map(|m| m.as_slice().iter().copied()).collect();
        let rebuild = |x: &[f64]| {
            let m = |k: usize| Matrix::from_vec(nt, d, x[k * nt * d..(k + 1) * nt * d].to_vec()).expect("shape");
            TemporalClipSet::new(m(0), m(1), m(2), m(3))
        };
        let clips = rebuild(&flat)?;
        for (slot, f) in [(1usize, local_local_loss as fn(&TemporalClipSet, Temperature) -> _), (2, global_local_loss)] {
            let out = f(&clips, tau)?;
            let numeric = central_difference(
                |x| rebuild(x).and_then(|c| f(&c, tau)).map_or(f64::NAN, |o| o.value),
                &flat,
                step,
            );
            let g = &out.grads;
            let analytic: Vec<f64> = [&g.locals, &g.locals_twin, &g.global_slices, &g.local_anchors]
                .iter()
                .flat_map(|m| m.as_slice().iter().copied())
                .collect();
            worst[slot] = worst[slot].max(max_relative_error(&analytic, &numeric, LOSS_FLOOR));
        }
    }
    Ok(worst)
}
