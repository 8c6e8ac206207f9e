//! Writes and re-reads each supported file format in a temporary directory.

use knights::io::{config::Config, emb1, file_digest, flo, pgm, preds};
use knights::tvl1::{FlowField, GrayImage};
use knights::Matrix;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let dir = tmp.path();

    let flow = FlowField::constant(4, 3, 0.5, -1.25);
    let flo_path = dir.join("example.flo");
    flo::write_flo(&flo_path, &flow)?;
    assert_eq!(flo::read_flo(&flo_path)?, flow);
    println!("{}: sha256 {}", flo_path.display(), file_digest(&flo_path)?);

    let m = Matrix::from_rows(&[vec![0.1, 0.2, 0.7], vec![0.3, 0.3, 0.4]])?;
    let emb_path = dir.join("example.emb1");
    emb1::write_emb1(&emb_path, &m)?;
    assert_eq!(emb1::read_emb1(&emb_path)?, m);
    println!("{}: {:?} matrix", emb_path.display(), m.shape());

    let img = GrayImage::from_fn(16, 8, |x, y| ((x * 16 + y * 8) % 256) as f64 / 255.0);
    let pgm_path = dir.join("example.pgm");
    pgm::write_pgm(&pgm_path, &img)?;
    assert_eq!(pgm::read_pgm(&pgm_path)?, img);
    println!("{}: {}x{} frame", pgm_path.display(), img.width(), img.height());

    // an EMB1 matrix of probabilities is read as one video's crop predictions
    let table = preds::read_preds(&emb_path)?;
    let csv_path = dir.join("example.csv");
    preds::write_csv_preds(&csv_path, &table)?;
    print!("{}", std::fs::read_to_string(&csv_path)?);

    let cfg = Config::parse("lambda = 0.2\n# comment\nn_warps = 3\n")?;
    println!("config lambda={} n_warps={}", cfg.require::<f64>("lambda")?, cfg.require::<usize>("n_warps")?);

    Ok(())
}
