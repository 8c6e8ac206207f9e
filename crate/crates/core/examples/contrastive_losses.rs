//! Evaluates the three contrastive losses on a small random batch and checks
//! them against the naive reference implementations.

use knights::tclr::{
    combined_tclr_loss, global_local_loss, instance_contrastive_loss, local_local_loss, oracle, EmbeddingBatch,
    LossWeights, Temperature, TemporalClipSet,
};
use knights::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> knights::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let tau = Temperature::new(0.1)?;
    let (n, segments, dim) = (4, 4, 8);

    let batch = EmbeddingBatch::new(
        Matrix::random_normal(n, dim, 1.0, &mut rng),
        Matrix::random_normal(n, dim, 1.0, &mut rng),
    )?;
    let clip_sets: Vec<TemporalClipSet> = (0..n)
        .map(|_| {
            TemporalClipSet::new(
                Matrix::random_normal(segments, dim, 1.0, &mut rng),
                Matrix::random_normal(segments, dim, 1.0, &mut rng),
                Matrix::random_normal(segments, dim, 1.0, &mut rng),
                Matrix::random_normal(segments, dim, 1.0, &mut rng),
            )
        })
        .collect::<knights::Result<_>>()?;

    let ic = instance_contrastive_loss(&batch, tau)?;
    println!("instance contrastive  {:.6}  (reference {:.6})", ic.value, oracle::instance_contrastive(&batch, tau));
    println!("  negatives per anchor {:?}", ic.negatives_per_anchor);

    let ll = local_local_loss(&clip_sets[0], tau)?;
    let gl = global_local_loss(&clip_sets[0], tau)?;
    println!("local-local (clip 0)  {:.6}  (reference {:.6})", ll.value, oracle::local_local(&clip_sets[0], tau));
    println!("global-local (clip 0) {:.6}  (reference {:.6})", gl.value, oracle::global_local(&clip_sets[0], tau));

    let combined = combined_tclr_loss(&batch, &clip_sets, tau, LossWeights::default())?;
    println!(
        "combined {:.6} = {:.6} + {:.6} + {:.6}, gradient norm {:.6}",
        combined.value,
        combined.instance,
        combined.local_local,
        combined.global_local,
        combined.grad_norm()
    );
    Ok(())
}
