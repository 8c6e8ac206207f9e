//! Test-time augmentation: 10 temporal x 3 spatial crops per video, crop
//! predictions averaged, then a weighted two-model ensemble.

use knights::sampler::{
    aggregate_crops, aggregate_ensemble, spatial_crop_boxes, temporal_crop_starts, ClipSpec, CropGrid, EnsembleSpec,
    PredictionMatrix,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fake_predictions(rng: &mut ChaCha8Rng, crops: usize, classes: usize, favourite: usize) -> Vec<Vec<f64>> {
    (0..crops)
        .map(|_| {
            let logits: Vec<f64> = (0..classes)
                .map(|c| rng.random_range(0.0..1.0) + if c == favourite { 1.5 } else { 0.0 })
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            logits.iter().map(|l| l.exp() / z).collect()
        })
        .collect()
}

fn main() -> knights::Result<()> {
    let clip = ClipSpec::new(16, 2, 112)?;
    let grid = CropGrid::new(3, 10)?;
    println!("temporal starts: {:?}", temporal_crop_starts(300, &clip, grid.temporal)?);
    for b in spatial_crop_boxes(128, 171, clip.resolution, grid.spatial)? {
        println!("spatial crop at ({}, {}) size {}", b.x, b.y, b.width);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rgb = aggregate_crops(&PredictionMatrix::from_rows(&fake_predictions(&mut rng, grid.len(), 5, 2))?);
    let flow = aggregate_crops(&PredictionMatrix::from_rows(&fake_predictions(&mut rng, grid.len(), 5, 3))?);
    let spec = EnsembleSpec::from_weights(&[2.0, 1.0])?;
    let e = aggregate_ensemble(&[rgb, flow], &spec)?;
    println!("ensemble probabilities {:.3?}, top-1 class {}", e.probs, e.top1);
    Ok(())
}
