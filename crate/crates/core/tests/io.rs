use knights::io::config::Config;
use knights::io::emb1::{decode_emb1, encode_emb1, read_emb1, write_emb1};
use knights::io::flo::{decode_flo, encode_flo, read_flo, write_flo, FLO_TAG};
use knights::io::pgm::{decode_pgm, encode_pgm, read_pgm, write_pgm};
use knights::io::preds::{parse_csv_preds, read_preds, write_csv_preds};
use knights::io::file_digest;
use knights::tvl1::{FlowField, GrayImage};
use knights::{Error, Matrix};
use proptest::prelude::*;
use std::path::Path;

proptest! {
    #[test]
    fn emb1_round_trip_is_bitwise(rows in 0usize..6, cols in 1usize..6, bits in proptest::collection::vec(any::<u64>(), 36)) {
        let vals: Vec<f64> = bits[..rows * cols].iter().map(|&b| f64::from_bits(b)).filter(|v| v.is_finite()).collect();
        prop_assume!(vals.len() == rows * cols);
        let m = Matrix::from_vec(rows, cols, vals).unwrap();
        let bytes = encode_emb1(&m);
        let back = decode_emb1(&bytes).unwrap();
        prop_assert_eq!(back.shape(), m.shape());
        prop_assert!(back.as_slice().iter().zip(m.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert_eq!(encode_emb1(&back), bytes);
    }

    #[test]
    fn flo_round_trip_is_bitwise(w in 1usize..8, h in 1usize..8, vals in proptest::collection::vec(-100.0f32..100.0, 128)) {
        let n = w * h;
        let u1 = vals[..n].iter().map(|&v| v as f64).collect();
        let u2 = vals[64..64 + n].iter().map(|&v| v as f64).collect();
        let flow = FlowField::new(w, h, u1, u2).unwrap();
        let bytes = encode_flo(&flow);
        prop_assert_eq!(bytes.len(), 12 + 8 * n);
        let back = decode_flo(&bytes).unwrap();
        prop_assert_eq!(&back, &flow);
        prop_assert_eq!(encode_flo(&back), bytes);
    }

    #[test]
    fn pgm_round_trip_of_8bit_levels(w in 1usize..10, h in 1usize..10, levels in proptest::collection::vec(0u8..=255, 100)) {
        let img = GrayImage::new(w, h, levels[..w * h].iter().map(|&l| l as f64 / 255.0).collect()).unwrap();
        prop_assert_eq!(decode_pgm(&encode_pgm(&img)).unwrap(), img);
    }
}

#[test]
fn flo_header_layout() {
    let bytes = encode_flo(&FlowField::constant(3, 2, 0.5, -1.5));
    assert_eq!(&bytes[..4], b"PIEH");
    assert_eq!(f32::from_le_bytes(bytes[..4].try_into().unwrap()), FLO_TAG);
    assert_eq!(i32::from_le_bytes(bytes[4..8].try_into().unwrap()), 3);
    assert_eq!(i32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
    assert_eq!(f32::from_le_bytes(bytes[12..16].try_into().unwrap()), 0.5);
    assert_eq!(f32::from_le_bytes(bytes[16..20].try_into().unwrap()), -1.5);
}

#[test]
fn corrupt_files_report_format_errors() {
    let mut bad_tag = encode_flo(&FlowField::zeros(2, 2));
    bad_tag[0] ^= 1;
    assert!(decode_flo(&bad_tag).is_err());
    let truncated = encode_flo(&FlowField::zeros(2, 2));
    assert!(decode_flo(&truncated[..truncated.len() - 1]).is_err());
    let emb = encode_emb1(&Matrix::zeros(2, 2));
    let err = decode_emb1(&emb[..emb.len() - 8]).unwrap_err();
    assert!(err.reason.contains("length mismatch"), "{}", err.reason);
    assert!(decode_emb1(b"EMB2\0\0\0\0\0\0\0\0").is_err());
    assert!(decode_pgm(b"P2\n1 1\n255\n\0").is_err());
}

#[test]
fn file_helpers_round_trip_and_name_missing_paths() {
    let dir = tempfile::tempdir().unwrap();
    let m = Matrix::from_rows(&[vec![1.0, -2.5], vec![1e-300, 3.0]]).unwrap();
    let p = dir.path().join("m.emb1");
    write_emb1(&p, &m).unwrap();
    assert_eq!(read_emb1(&p).unwrap(), m);
    let f = FlowField::constant(4, 3, 0.25, 2.0);
    write_flo(&dir.path().join("f.flo"), &f).unwrap();
    assert_eq!(read_flo(&dir.path().join("f.flo")).unwrap(), f);
    let img = GrayImage::from_fn(5, 4, |x, y| ((x + y) * 10) as f64 / 255.0);
    write_pgm(&dir.path().join("i.pgm"), &img).unwrap();
    assert_eq!(read_pgm(&dir.path().join("i.pgm")).unwrap(), img);
    assert_eq!(file_digest(&p).unwrap().len(), 64);

    let missing = dir.path().join("absent.flo");
    let err = read_flo(&missing).unwrap_err();
    assert!(err.is_io_or_format());
    assert!(err.to_string().contains("absent.flo"));
}

#[test]
fn pgm_with_comments_and_16_bit_samples() {
    let mut bytes = b"P5\n# made by hand\n2 1\n65535\n".to_vec();
    bytes.extend_from_slice(&[0xff, 0xff, 0x00, 0x00]);
    let img = decode_pgm(&bytes).unwrap();
    assert_eq!(img.as_slice(), &[1.0, 0.0]);
}

#[test]
fn csv_predictions_group_by_video() {
    let text = "video_id,a,b\nv1,0.25,0.75\nv1,0.75,0.25\nv2,1.0,0.0\n";
    let t = parse_csv_preds(text, "x", Path::new("p.csv")).unwrap();
    assert_eq!(t.class_ids, ["a", "b"]);
    assert_eq!(t.videos.len(), 2);
    assert_eq!(t.videos[0].preds.crops(), 2);

    let plain = parse_csv_preds("a,b\n0.5,0.5\n", "clip", Path::new("p.csv")).unwrap();
    assert_eq!(plain.videos[0].video_id, "clip");

    match parse_csv_preds("a,b\n0.5,0.5\n0.5,half\n", "x", Path::new("p.csv")) {
        Err(Error::Format { offset, .. }) => assert_eq!(offset, 3),
        other => panic!("expected format error, got {other:?}"),
    }
    assert!(matches!(parse_csv_preds("a,b\n0.5,0.6\n", "x", Path::new("p.csv")), Err(Error::Domain(_))));

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.csv");
    write_csv_preds(&out, &t).unwrap();
    assert_eq!(read_preds(&out).unwrap(), t);
}

#[test]
fn config_parsing() {
    let c = Config::parse("# header\nlambda = 0.2\n\nname=run one # trailing\n").unwrap();
    assert_eq!(c.get::<f64>("lambda").unwrap(), Some(0.2));
    assert_eq!(c.get_str("name"), Some("run one"));
    assert_eq!(c.get_or("missing", 3usize).unwrap(), 3);
    assert!(c.get::<f64>("name").is_err());
    assert!(Config::parse("novalue\n").is_err());
}
