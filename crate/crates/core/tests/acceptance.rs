//! Acceptance gate. Runs every criterion at its stated tolerance, prints one
//! PASS/FAIL line each and exits non-zero if any fails.

mod common;

use std::time::{Duration, Instant};

use common::*;
use knights::io::{emb1, flo};
use knights::mhpa::{mhpa_forward, run_schedule, AttentionStage, Grid3, PoolingKind, StageSchedule, StageWeights, TokenTensor};
use knights::pretrain::{check_encoder_gradients, generate_dataset, temporal_distinctness, train, DatasetConfig, TrainConfig};
use knights::sampler::{aggregate_crops, aggregate_ensemble, EnsembleSpec, PredictionMatrix};
use knights::tclr::{
    global_local_loss, instance_contrastive_loss, local_local_loss, oracle, EmbeddingBatch, Temperature,
    TemporalClipSet,
};
use knights::tvl1::{compute_flow, divergence, energy, image_gradient, normalize_pair, FlowField, GrayImage, Tvl1Params};
use knights::Matrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn loss_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(1..=6);
        let nt = rng.random_range(1..=6);
        let d = rng.random_range(1..=8);
        let tau = random_tau(&mut rng);
        let batch = random_batch(&mut rng, n, d);
        let clips = random_clips(&mut rng, nt, d);
        worst = worst
            .max((instance_contrastive_loss(&batch, tau).unwrap().value - oracle::instance_contrastive(&batch, tau)).abs())
            .max((local_local_loss(&clips, tau).unwrap().value - oracle::local_local(&clips, tau)).abs())
            .max((global_local_loss(&clips, tau).unwrap().value - oracle::global_local(&clips, tau)).abs());
    }
    let t = start.elapsed();
    outcome(worst <= 1e-10 && within(t, 5.0), format!("max abs diff {worst:.3e}, {:.2}s", t.as_secs_f64()))
}

fn equal_rows(rows: usize) -> Matrix {
    Matrix::from_rows(&vec![vec![0.6, -0.8, 0.0]; rows]).unwrap()
}

fn closed_forms() -> Outcome {
    let tau = Temperature::new(0.1).unwrap();
    let ic = instance_contrastive_loss(&EmbeddingBatch::new(equal_rows(4), equal_rows(4)).unwrap(), tau).unwrap().value;
    let same = |nt| TemporalClipSet::new(equal_rows(nt), equal_rows(nt), equal_rows(nt), equal_rows(nt)).unwrap();
    let ll = local_local_loss(&same(4), tau).unwrap().value;
    let gl = global_local_loss(&same(4), tau).unwrap().value;
    let errs = [
        (ic - 7f64.ln()).abs(),
        (ll - 4.0 * 7f64.ln()).abs(),
        (gl - 8.0 * 4f64.ln()).abs(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let degenerate = [
        instance_contrastive_loss(&random_batch(&mut rng, 1, 5), tau).unwrap().value,
        local_local_loss(&random_clips(&mut rng, 1, 5), tau).unwrap().value,
        global_local_loss(&random_clips(&mut rng, 1, 5), tau).unwrap().value,
    ];
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    outcome(
        worst <= 1e-9 && degenerate.iter().all(|&v| v == 0.0),
        format!("max closed-form err {worst:.3e}, degenerate {degenerate:?}"),
    )
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut loss_err: f64 = 0.0;
    let mut enc_err: f64 = 0.0;
    for c in 0..50 {
        let n = rng.random_range(1..=6);
        let nt = rng.random_range(1..=6);
        let d = rng.random_range(2..=8);
        let tau = random_tau(&mut rng);
        loss_err = loss_err.max(ic_gradient_error(&random_batch(&mut rng, n, d), tau));
        let clips = random_clips(&mut rng, nt, d);
        loss_err = loss_err.max(clip_gradient_error(&clips, tau, true));
        loss_err = loss_err.max(clip_gradient_error(&clips, tau, false));

        let data = generate_dataset(&DatasetConfig {
            n_instances: rng.random_range(2..=4),
            n_segments: rng.random_range(1..=4),
            feature_dim: rng.random_range(2..=6),
            seed: c,
            ..DatasetConfig::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            tau: tau.get(),
            hidden_dim: rng.random_range(2..=6),
            embed_dim: rng.random_range(2..=5),
            seed: 100 + c,
            ..TrainConfig::default()
        };
        enc_err = enc_err.max(check_encoder_gradients(&cfg.encoder_for(&data), &data, &cfg).unwrap());
    }
    let t = start.elapsed();
    outcome(
        loss_err < 1e-5 && enc_err < 1e-4 && within(t, 30.0),
        format!("losses {loss_err:.3e}, encoder {enc_err:.3e}, {:.2}s", t.as_secs_f64()),
    )
}

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> GrayImage {
    GrayImage::new(w, h, (0..w * h).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn tvl1_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut adjoint: f64 = 0.0;
    for _ in 0..20 {
        let (w, h) = (rng.random_range(1..=32), rng.random_range(1..=32));
        let u = random_image(&mut rng, w, h);
        let (p1, p2) = (random_image(&mut rng, w, h), random_image(&mut rng, w, h));
        let (g1, g2) = image_gradient(&u);
        let div = divergence(&p1, &p2).unwrap();
        let lhs: f64 = (0..w * h).map(|i| g1.as_slice()[i] * p1.as_slice()[i] + g2.as_slice()[i] * p2.as_slice()[i]).sum();
        let rhs: f64 = -(0..w * h).map(|i| u.as_slice()[i] * div.as_slice()[i]).sum::<f64>();
        adjoint = adjoint.max((lhs - rhs).abs());
    }

    let params = Tvl1Params::default();
    let base = GrayImage::sinusoid_texture(64, 64, 11, (0.0, 0.0));
    let still = compute_flow(&base, &base, &params).unwrap().mean_magnitude();

    let mut epe = Vec::new();
    let mut energy_ok = true;
    let mut pairs = vec![(base.clone(), base.clone(), (0.0, 0.0))];
    for shift in [(1.0, 0.0), (2.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
        pairs.push((base.clone(), GrayImage::sinusoid_texture(64, 64, 11, shift), shift));
    }
    for (i0, i1, shift) in &pairs {
        let flow = compute_flow(i0, i1, &params).unwrap();
        if *shift != (0.0, 0.0) {
            epe.push(flow.mean_endpoint_error(*shift, 8));
        }
        let (n0, n1) = normalize_pair(i0, i1);
        let e_out = energy(&n0, &n1, &flow, params.lambda).unwrap();
        let e_zero = energy(&n0, &n1, &FlowField::zeros(64, 64), params.lambda).unwrap();
        energy_ok &= e_out <= e_zero;
    }
    let worst_epe = epe.iter().cloned().fold(0.0, f64::max);
    let t = start.elapsed();
    outcome(
        adjoint <= 1e-12 && still < 1e-3 && worst_epe < 0.3 && energy_ok && within(t, 60.0),
        format!(
            "adjoint {adjoint:.3e}, still |u| {still:.3e}, EPE {epe:.4?}, energy descent {energy_ok}, {:.2}s",
            t.as_secs_f64()
        ),
    )
}

fn mhpa_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut oracle_err: f64 = 0.0;
    for case in 0..12 {
        let heads = 1 + case % 2;
        let dim_in = 4 * heads;
        let dim_out = if case % 3 == 0 { 2 * dim_in } else { dim_in };
        let grid = Grid3::new(rng.random_range(1..=2), rng.random_range(1..=4), rng.random_range(1..=4));
        let cls = case % 4 == 1;
        let stage = AttentionStage {
            heads,
            dim_in,
            dim_out,
            q_stride: Grid3::new(1, 1, 1),
            kv_stride: Grid3::new(1, 1, 1),
            pooling: if case % 2 == 0 { PoolingKind::Average } else { PoolingKind::Strided },
        };
        let w = StageWeights::random(&stage, &mut rng);
        let tokens = Matrix::random_normal(grid.volume() + usize::from(cls), dim_in, 1.0, &mut rng);
        let out = mhpa_forward(&TokenTensor::new(tokens.clone(), grid, cls).unwrap(), &stage, &w).unwrap();
        let want = vanilla_attention(&tokens, &w.wq, &w.wk, &w.wv, &w.wo, heads);
        for (a, b) in out.output.tokens().as_slice().iter().zip(want.as_slice()) {
            oracle_err = oracle_err.max((a - b).abs());
        }
    }

    let schedule = StageSchedule::hierarchical(4, 8, 1, PoolingKind::Average).unwrap();
    let weights = schedule.random_weights(&mut rng);
    let x = TokenTensor::new(Matrix::random_normal(64, 8, 1.0, &mut rng), Grid3::new(1, 8, 8), false).unwrap();
    let out = run_schedule(&x, &schedule, &weights).unwrap();
    let trace: Vec<(usize, usize)> = out.trace.iter().map(|e| (e.seq_len, e.dim)).collect();
    let trace_ok = trace == [(64, 8), (16, 16), (4, 32), (1, 64)];

    let mut softmax_dev: f64 = 0.0;
    let mut cur = x;
    for (stage, w) in schedule.stages().iter().zip(&weights) {
        let o = mhpa_forward(&cur, stage, w).unwrap();
        for a in &o.attention {
            for r in a.iter_rows() {
                softmax_dev = softmax_dev.max((r.iter().sum::<f64>() - 1.0).abs());
            }
        }
        cur = o.output;
    }
    outcome(
        oracle_err <= 1e-10 && trace_ok && softmax_dev <= 1e-6,
        format!("oracle {oracle_err:.3e}, trace {trace:?}, softmax dev {softmax_dev:.3e}"),
    )
}

fn random_distribution(rng: &mut ChaCha8Rng, classes: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..classes).map(|_| rng.random_range(-3.0f64..3.0).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn tta_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut mean_err, mut perm_err, mut sum_dev) = (0.0f64, 0.0f64, 0.0f64);
    let mut argmax_ok = true;
    for _ in 0..20 {
        let classes = rng.random_range(2..=10);
        let models = rng.random_range(1..=4);
        let mut per_model = Vec::new();
        for _ in 0..models {
            let mut rows: Vec<Vec<f64>> = (0..30).map(|_| random_distribution(&mut rng, classes)).collect();
            let agg = aggregate_crops(&PredictionMatrix::from_rows(&rows).unwrap());
            // column-major accumulation, independent of the library's order
            for c in 0..classes {
                let mut s = 0.0;
                for r in rows.iter().rev() {
                    s += r[c];
                }
                mean_err = mean_err.max((agg[c] - s / 30.0).abs());
            }
            sum_dev = sum_dev.max((agg.iter().sum::<f64>() - 1.0).abs());
            rows.shuffle(&mut rng);
            let shuffled = aggregate_crops(&PredictionMatrix::from_rows(&rows).unwrap());
            for (a, b) in agg.iter().zip(&shuffled) {
                perm_err = perm_err.max((a - b).abs());
            }
            per_model.push(agg);
        }
        let weights: Vec<f64> = (0..models).map(|_| rng.random_range(0.1..2.0)).collect();
        let base = aggregate_ensemble(&per_model, &EnsembleSpec::from_weights(&weights).unwrap()).unwrap();
        sum_dev = sum_dev.max((base.probs.iter().sum::<f64>() - 1.0).abs());
        for c in [0.5, 3.0, 1e3] {
            let scaled: Vec<f64> = weights.iter().map(|w| w * c).collect();
            let e = aggregate_ensemble(&per_model, &EnsembleSpec::from_weights(&scaled).unwrap()).unwrap();
            argmax_ok &= e.top1 == base.top1;
        }
    }
    outcome(
        mean_err <= 1e-12 && sum_dev <= 1e-6 && argmax_ok && perm_err <= 1e-12,
        format!("mean {mean_err:.3e}, sum dev {sum_dev:.3e}, argmax stable {argmax_ok}, permutation {perm_err:.3e}"),
    )
}

fn pretrain_demo() -> Outcome {
    let start = Instant::now();
    let run = || {
        let data = generate_dataset(&DatasetConfig::default()).unwrap();
        let cfg = TrainConfig::default();
        let mut enc = cfg.encoder_for(&data);
        let before = temporal_distinctness(&enc, &data).unwrap();
        let trace = train(&data, &mut enc, &cfg).unwrap();
        let after = temporal_distinctness(&enc, &data).unwrap();
        (trace, enc.params(), before, after)
    };
    let (trace, params, before, after) = run();
    let t = start.elapsed();
    let (trace2, params2, _, _) = run();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let reproducible = bits(&params) == bits(&params2)
        && trace.steps.len() == trace2.steps.len()
        && trace.steps.iter().zip(&trace2.steps).all(|(a, b)| a.loss.to_bits() == b.loss.to_bits());
    let (l0, l1) = (trace.initial_loss(), trace.final_loss());
    outcome(
        trace.steps.len() <= 200 && l1 < 0.5 * l0 && after < before && reproducible && within(t, 60.0),
        format!(
            "loss {l0:.4} -> {l1:.4}, distinctness {before:.4} -> {after:.4}, reproducible {reproducible}, {:.2}s",
            t.as_secs_f64()
        ),
    )
}

fn io_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (w, h) = (7, 5);
    let vals = |rng: &mut ChaCha8Rng| (0..w * h).map(|_| rng.random_range(-4.0f32..4.0) as f64).collect::<Vec<_>>();
    let flow = FlowField::new(w, h, vals(&mut rng), vals(&mut rng)).unwrap();
    let bytes = flo::encode_flo(&flow);
    let back = flo::decode_flo(&bytes).unwrap();
    let flo_ok = back == flow && flo::encode_flo(&back) == bytes;
    let header_ok = f32::from_le_bytes(bytes[0..4].try_into().unwrap()) == 202021.25
        && i32::from_le_bytes(bytes[4..8].try_into().unwrap()) == w as i32
        && i32::from_le_bytes(bytes[8..12].try_into().unwrap()) == h as i32;

    let m = Matrix::random_normal(6, 9, 3.0, &mut rng);
    let eb = emb1::encode_emb1(&m);
    let mb = emb1::decode_emb1(&eb).unwrap();
    let emb_ok = mb.as_slice().iter().zip(m.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits())
        && mb.shape() == m.shape()
        && emb1::encode_emb1(&mb) == eb;
    outcome(flo_ok && header_ok && emb_ok, format!("flo {flo_ok}, header {header_ok}, emb1 {emb_ok}"))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 loss correctness", loss_correctness),
        ("2 closed-form anchors", closed_forms),
        ("3 gradient suite", gradient_suite),
        ("4 tv-l1", tvl1_suite),
        ("5 pooling attention", mhpa_suite),
        ("6 tta/ensemble", tta_suite),
        ("7 pretraining demo", pretrain_demo),
        ("8 io round-trips", io_suite),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let o = f();
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
