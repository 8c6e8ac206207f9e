//! Compares hand-derived loss gradients with central finite differences.

use knights::gradcheck::{central_difference, max_relative_error};
use knights::tclr::{instance_contrastive_loss, EmbeddingBatch, Temperature};
use knights::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> knights::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, d) = (5, 6);
    let tau = Temperature::new(0.5)?;
    let g = Matrix::random_normal(n, d, 1.0, &mut rng);
    let twins = Matrix::random_normal(n, d, 1.0, &mut rng);

    let out = instance_contrastive_loss(&EmbeddingBatch::new(g.clone(), twins.clone())?, tau)?;
    let numeric = central_difference(
        |x| {
            let e = Matrix::from_vec(n, d, x.to_vec()).expect("shape");
            instance_contrastive_loss(&EmbeddingBatch::new(e, twins.clone()).expect("valid"), tau)
                .expect("loss")
                .value
        },
        g.as_slice(),
        1e-5,
    );
    let err = max_relative_error(out.grads.embeddings.as_slice(), &numeric, 1e-3);
    println!("instance loss gradient: max relative error {err:.3e}");

    // the same check over many random problems, for all three losses
    let [ic, ll, gl] = knights::gradcheck::loss_gradient_errors(50, 0, 1e-5)?;
    println!("50 random problems: instance {ic:.3e}, local-local {ll:.3e}, global-local {gl:.3e}");
    Ok(())
}
