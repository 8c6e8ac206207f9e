//! Runs a four-stage pooling-attention schedule over an 8x8 token grid and
//! prints how sequence length and width change per stage.

use knights::mhpa::{run_schedule, Grid3, PoolingKind, StageSchedule, TokenTensor};
use knights::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> knights::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for pooling in [PoolingKind::Average, PoolingKind::Strided] {
        let schedule = StageSchedule::hierarchical(4, 8, 2, pooling)?;
        let weights = schedule.random_weights(&mut rng);
        let x = TokenTensor::new(Matrix::random_normal(65, 8, 1.0, &mut rng), Grid3::new(1, 8, 8), true)?;
        let out = run_schedule(&x, &schedule, &weights)?;
        println!("{pooling:?} pooling, with class token:");
        for (k, e) in out.trace.iter().enumerate() {
            println!("  stage {k}: {} tokens x {} channels", e.seq_len, e.dim);
        }
        println!("  softmax row deviation {:.2e}", out.max_softmax_deviation);
    }
    Ok(())
}
