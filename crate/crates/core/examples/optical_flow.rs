//! Estimates TV-L1 flow between two textures shifted by a known amount.
//!
//! With two PGM paths as arguments it runs on those frames instead and
//! writes `flow.flo` to the working directory.

use std::path::Path;

use knights::io::{flo, pgm};
use knights::tvl1::{compute_flow, energy, normalize_pair, FlowField, GrayImage, Tvl1Params};

fn main() -> knights::Result<()> {
    let params = Tvl1Params::default();
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let [a, b] = args.as_slice() {
        let i0 = pgm::read_pgm(Path::new(a))?;
        let i1 = pgm::read_pgm(Path::new(b))?;
        let flow = compute_flow(&i0, &i1, &params)?;
        flo::write_flo(Path::new("flow.flo"), &flow)?;
        println!("wrote flow.flo, mean |u| = {:.4}", flow.mean_magnitude());
        return Ok(());
    }

    let i0 = GrayImage::sinusoid_texture(64, 64, 11, (0.0, 0.0));
    for shift in [(1.0, 0.0), (2.0, 0.0), (1.0, -1.0)] {
        let i1 = GrayImage::sinusoid_texture(64, 64, 11, shift);
        let flow = compute_flow(&i0, &i1, &params)?;
        let (n0, n1) = normalize_pair(&i0, &i1);
        let before = energy(&n0, &n1, &FlowField::zeros(64, 64), params.lambda)?;
        let after = energy(&n0, &n1, &flow, params.lambda)?;
        println!(
            "shift {shift:?}: endpoint error {:.4} px, energy {before:.1} -> {after:.1}",
            flow.mean_endpoint_error(shift, 8)
        );
    }
    Ok(())
}
