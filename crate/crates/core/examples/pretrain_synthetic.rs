//! Trains the tiny encoder with the combined contrastive objective on
//! synthetic random-walk clips and reports how segment embeddings spread.

use knights::pretrain::{generate_dataset, temporal_distinctness, train, DatasetConfig, TrainConfig};

fn main() -> knights::Result<()> {
    let data = generate_dataset(&DatasetConfig::default())?;
    let (between_segments, twins) = data.distance_stats();
    println!("input distances: between segments {between_segments:.3}, twin pairs {twins:.3}");

    let cfg = TrainConfig::default();
    let mut encoder = cfg.encoder_for(&data);
    let before = temporal_distinctness(&encoder, &data)?;
    let trace = train(&data, &mut encoder, &cfg)?;
    let after = temporal_distinctness(&encoder, &data)?;

    println!("gradient check max relative error {:.2e}", trace.gradcheck_max_rel_err.unwrap_or(f64::NAN));
    for r in trace.steps.iter().step_by(40) {
        println!("step {:>3}: loss {:.4}, |grad| {:.4}", r.step, r.loss, r.grad_norm);
    }
    println!("loss {:.4} -> {:.4}", trace.initial_loss(), trace.final_loss());
    println!("mean same-instance segment cosine {before:.4} -> {after:.4}");
    Ok(())
}
