mod common;

use common::*;
use knights::tclr::{
    combined_tclr_loss, global_local_loss, instance_contrastive_loss, local_local_loss, oracle, similarity,
    EmbeddingBatch, LossWeights, Temperature, TemporalClipSet,
};
use knights::{Error, Matrix};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn scaled_rows(m: &Matrix, factors: &[f64]) -> Matrix {
    let mut out = m.clone();
    for (i, &c) in factors.iter().enumerate() {
        out.row_mut(i).iter_mut().for_each(|v| *v *= c);
    }
    out
}

fn permuted_rows(m: &Matrix, perm: &[usize]) -> Matrix {
    Matrix::from_rows(&perm.iter().map(|&p| m.row(p).to_vec()).collect::<Vec<_>>()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fast_losses_match_oracle(seed in any::<u64>(), n in 1usize..=6, nt in 1usize..=6, d in 1usize..=8) {
        let mut r = rng(seed);
        let tau = random_tau(&mut r);
        let batch = random_batch(&mut r, n, d);
        let clips = random_clips(&mut r, nt, d);
        prop_assert!((instance_contrastive_loss(&batch, tau).unwrap().value - oracle::instance_contrastive(&batch, tau)).abs() <= 1e-10);
        prop_assert!((local_local_loss(&clips, tau).unwrap().value - oracle::local_local(&clips, tau)).abs() <= 1e-10);
        prop_assert!((global_local_loss(&clips, tau).unwrap().value - oracle::global_local(&clips, tau)).abs() <= 1e-10);
    }

    #[test]
    fn gradients_match_finite_differences(seed in any::<u64>(), n in 1usize..=6, nt in 1usize..=6, d in 2usize..=8) {
        let mut r = rng(seed);
        let tau = random_tau(&mut r);
        prop_assert!(ic_gradient_error(&random_batch(&mut r, n, d), tau) < 1e-5);
        let clips = random_clips(&mut r, nt, d);
        prop_assert!(clip_gradient_error(&clips, tau, true) < 1e-5);
        prop_assert!(clip_gradient_error(&clips, tau, false) < 1e-5);
    }

    #[test]
    fn losses_ignore_row_scale(seed in any::<u64>(), n in 1usize..=6, d in 1usize..=8, c in proptest::collection::vec(0.05f64..20.0, 24)) {
        let mut r = rng(seed);
        let tau = random_tau(&mut r);
        let batch = random_batch(&mut r, n, d);
        let scaled = EmbeddingBatch::new(scaled_rows(batch.embeddings(), &c[..n]), scaled_rows(batch.twins(), &c[6..6 + n])).unwrap();
        let a = instance_contrastive_loss(&batch, tau).unwrap().value;
        let b = instance_contrastive_loss(&scaled, tau).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-10);

        let clips = random_clips(&mut r, n, d);
        let sc = TemporalClipSet::new(
            scaled_rows(clips.locals(), &c[..n]),
            scaled_rows(clips.locals_twin(), &c[6..6 + n]),
            scaled_rows(clips.global_slices(), &c[12..12 + n]),
            scaled_rows(clips.local_anchors(), &c[18..18 + n]),
        ).unwrap();
        prop_assert!((local_local_loss(&clips, tau).unwrap().value - local_local_loss(&sc, tau).unwrap().value).abs() <= 1e-10);
        prop_assert!((global_local_loss(&clips, tau).unwrap().value - global_local_loss(&sc, tau).unwrap().value).abs() <= 1e-10);
    }

    #[test]
    fn losses_are_nonnegative(seed in any::<u64>(), n in 1usize..=6, d in 1usize..=8) {
        let mut r = rng(seed);
        let tau = random_tau(&mut r);
        let batch = random_batch(&mut r, n, d);
        let clips = random_clips(&mut r, n, d);
        prop_assert!(instance_contrastive_loss(&batch, tau).unwrap().value >= -1e-12);
        prop_assert!(local_local_loss(&clips, tau).unwrap().value >= -1e-12);
        prop_assert!(global_local_loss(&clips, tau).unwrap().value >= -1e-12);
    }

    #[test]
    fn instance_permutation_is_equivariant(seed in any::<u64>(), perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle()) {
        let mut r = rng(seed);
        let tau = random_tau(&mut r);
        let batch = random_batch(&mut r, 5, 4);
        let pb = EmbeddingBatch::new(permuted_rows(batch.embeddings(), &perm), permuted_rows(batch.twins(), &perm)).unwrap();
        let a = instance_contrastive_loss(&batch, tau).unwrap();
        let b = instance_contrastive_loss(&pb, tau).unwrap();
        prop_assert!((a.value - b.value).abs() <= 1e-12);
        for (j, &p) in perm.iter().enumerate() {
            prop_assert!((a.per_term[p] - b.per_term[j]).abs() <= 1e-12);
            for (x, y) in a.grads.embeddings.row(p).iter().zip(b.grads.embeddings.row(j)) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
            for (x, y) in a.grads.twins.row(p).iter().zip(b.grads.twins.row(j)) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn combined_matches_weighted_oracle(seed in any::<u64>(), n in 1usize..=4, sets in 1usize..=3, w in proptest::array::uniform3(0.0f64..2.0)) {
        let mut r = rng(seed);
        let tau = random_tau(&mut r);
        let batch = random_batch(&mut r, n, 3);
        let clips: Vec<_> = (0..sets).map(|_| random_clips(&mut r, 3, 3)).collect();
        let weights = LossWeights::new(w[0], w[1], w[2]).unwrap();
        let fast = combined_tclr_loss(&batch, &clips, tau, weights).unwrap();
        let slow = oracle::combined(&batch, &clips, tau, weights).unwrap();
        prop_assert!((fast.value - slow).abs() <= 1e-10);
        prop_assert!(fast.grad_norm().is_finite());
    }
}

#[test]
fn negative_counts_per_anchor() {
    let mut r = rng(0);
    let tau = Temperature::new(0.5).unwrap();
    for n in 1..=6 {
        let ic = instance_contrastive_loss(&random_batch(&mut r, n, 4), tau).unwrap();
        assert_eq!(ic.negatives_per_anchor, vec![2 * n - 2; n]);
        let clips = random_clips(&mut r, n, 4);
        assert_eq!(local_local_loss(&clips, tau).unwrap().negatives_per_anchor, vec![2 * n - 2; n]);
        assert_eq!(global_local_loss(&clips, tau).unwrap().negatives_per_anchor, vec![n - 1; 2 * n]);
    }
}

#[test]
fn similarity_of_orthogonal_and_parallel_rows() {
    let tau = Temperature::new(0.5).unwrap();
    assert_eq!(similarity(&[1.0, 0.0], &[0.0, 3.0], tau).unwrap(), 1.0);
    assert!((similarity(&[2.0, 0.0], &[5.0, 0.0], tau).unwrap() - 2f64.exp()).abs() < 1e-12);
}

#[test]
fn all_equal_embeddings_hit_closed_forms() {
    let tau = Temperature::new(0.1).unwrap();
    let same = |rows| Matrix::from_rows(&vec![vec![1.0, 2.0]; rows]).unwrap();
    let ic = instance_contrastive_loss(&EmbeddingBatch::new(same(4), same(4)).unwrap(), tau).unwrap();
    assert!((ic.value - 7f64.ln()).abs() < 1e-9);
    let clips = TemporalClipSet::new(same(4), same(4), same(4), same(4)).unwrap();
    assert!((local_local_loss(&clips, tau).unwrap().value - 4.0 * 7f64.ln()).abs() < 1e-9);
    assert!((global_local_loss(&clips, tau).unwrap().value - 8.0 * 4f64.ln()).abs() < 1e-9);
}

#[test]
fn invalid_inputs_are_rejected() {
    assert!(matches!(Temperature::new(0.0), Err(Error::Parameter { .. })));
    assert!(matches!(Temperature::new(f64::NAN), Err(Error::Parameter { .. })));
    let zero_row = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
    let ok = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    assert!(matches!(EmbeddingBatch::new(zero_row, ok.clone()), Err(Error::Domain(_))));
    assert!(matches!(EmbeddingBatch::new(ok.clone(), ok.slice_rows(0, 1)), Err(Error::Shape { .. })));
    assert!(matches!(EmbeddingBatch::new(Matrix::zeros(0, 2), Matrix::zeros(0, 2)), Err(Error::Empty(_))));
    let batch = EmbeddingBatch::new(ok.clone(), ok).unwrap();
    assert!(matches!(
        combined_tclr_loss(&batch, &[], Temperature::new(0.1).unwrap(), LossWeights::default()),
        Err(Error::Empty(_))
    ));
}
