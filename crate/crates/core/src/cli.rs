//! The `knights` command line.
//!
//! Every subcommand accepts `--config <file>` (key=value; flags override
//! it) and `--manifest <file>`. A JSON run manifest is written for every
//! successful run: to `--manifest` if given, else next to the first output
//! as `<output>.manifest.json`, else to stderr.
//!
//! Exit codes: 0 success, 2 IO or file-format error, 3 parameter or
//! validation error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::io::config::Config;
use crate::io::preds::read_preds;
use crate::io::{emb1, file_digest, flo, pgm};
use crate::matrix::Matrix;
use crate::mhpa::{run_schedule, Grid3, PoolingKind, StageSchedule, StageWeights, TokenTensor};
use crate::pretrain::{generate_dataset, temporal_distinctness, train, DatasetConfig, TrainConfig};
use crate::sampler::{
    aggregate_crops, aggregate_ensemble, sample_clip_indices, spatial_crop_boxes, temporal_crop_starts,
    ClipSpec, EnsembleSpec,
};
use crate::tclr::{
    combined_tclr_loss, global_local_loss, instance_contrastive_loss, local_local_loss, EmbeddingBatch,
    LossWeights, Temperature, TemporalClipSet,
};
use crate::tvl1::{compute_flow, energy, normalize_pair, FlowField, Tvl1Params};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 2;
pub const EXIT_PARAM: i32 = 3;

/// Environment variable capping worker threads (0 = automatic).
pub const THREADS_ENV: &str = "KNIGHTS_THREADS";

#[derive(Debug, Parser)]
#[command(name = "knights", version, about = "Contrastive losses, TV-L1 flow, pooling attention and TTA ensembling")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate TV-L1 optical flow between two PGM frames (or consecutive frames of a directory).
    Flow(FlowArgs),
    /// Evaluate the TV-L1 energy of a flow field (zero flow if none given).
    Energy(EnergyArgs),
    /// Evaluate a contrastive loss on EMB1 matrices.
    TclrLoss(TclrLossArgs),
    /// Check analytic loss gradients against central finite differences.
    TclrGradcheck(GradcheckArgs),
    /// Train the tiny encoder on synthetic temporal data.
    Pretrain(PretrainArgs),
    /// Run a pooling-attention stage schedule and report the shape trace.
    MhpaRun(MhpaArgs),
    /// Print clip frame indices and test-time crop positions.
    SampleClips(SampleArgs),
    /// Average crop predictions per video and ensemble across models.
    Aggregate(AggregateArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// key=value config file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Where to write the JSON run manifest.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FlowArgs {
    #[arg(long)]
    pub i0: Option<PathBuf>,
    #[arg(long)]
    pub i1: Option<PathBuf>,
    /// Output `.flo` file, or output directory with --frames-dir.
    #[arg(long)]
    pub out: PathBuf,
    /// Compute flow between consecutive PGM frames of this directory (sorted by name).
    #[arg(long, conflicts_with_all = ["i0", "i1"])]
    pub frames_dir: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Debug, Args, Clone, Default)]
pub struct SolverFlags {
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub scales: Option<usize>,
    #[arg(long)]
    pub zoom: Option<f64>,
    #[arg(long)]
    pub warps: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Disable the 3x3 median filter between warps.
    #[arg(long)]
    pub no_median: bool,
}

#[derive(Debug, Args)]
pub struct EnergyArgs {
    #[arg(long)]
    pub i0: PathBuf,
    #[arg(long)]
    pub i1: PathBuf,
    /// `.flo` file; zero flow when omitted.
    #[arg(long)]
    pub flow: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Evaluate on the frames as stored instead of the solver's normalised intensities.
    #[arg(long)]
    pub raw: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Ic,
    Ll,
    Gl,
    Combined,
}

#[derive(Debug, Args)]
pub struct TclrLossArgs {
    #[arg(long, value_enum)]
    pub loss: LossKind,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub twins: Option<PathBuf>,
    #[arg(long)]
    pub locals: Option<PathBuf>,
    #[arg(long)]
    pub locals_twin: Option<PathBuf>,
    #[arg(long)]
    pub global_slices: Option<PathBuf>,
    #[arg(long)]
    pub local_anchors: Option<PathBuf>,
    /// Segments per instance in the clip matrices; rows are instance-major.
    #[arg(long)]
    pub segments: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Loss weights `ic,ll,gl`.
    #[arg(long)]
    pub weights: Option<String>,
    /// JSON report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub configs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub instances: Option<usize>,
    #[arg(long)]
    pub segments: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub data_seed: Option<u64>,
    #[arg(long)]
    pub drift: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// Loss weights `ic,ll,gl`.
    #[arg(long)]
    pub weights: Option<String>,
    #[arg(long)]
    pub trace_csv: Option<PathBuf>,
    #[arg(long)]
    pub summary_json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MhpaArgs {
    /// EMB1 token matrix; random tokens when omitted.
    #[arg(long)]
    pub tokens: Option<PathBuf>,
    /// Token grid `TxHxW`.
    #[arg(long)]
    pub grid: Option<String>,
    /// Token width for random tokens.
    #[arg(long)]
    pub dim: Option<usize>,
    /// The first token is a class token.
    #[arg(long)]
    pub cls: bool,
    /// Stage schedule config; a 4-stage halving schedule when omitted.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    #[arg(long)]
    pub stages: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub pooling: Option<String>,
    /// Directory with `stage<k>_{q,k,v,o}.emb1`; seeded random weights when omitted.
    #[arg(long)]
    pub weights_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON trace path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub video_len: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub skip: Option<usize>,
    #[arg(long)]
    pub start: Option<usize>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub temporal_crops: Option<usize>,
    #[arg(long)]
    pub spatial_crops: Option<usize>,
    /// Frame size `HxW` after shorter-side resize, for spatial crop boxes.
    #[arg(long)]
    pub frame_size: Option<String>,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    /// Prediction files, one per model (CSV or `.emb1`).
    #[arg(long, num_args = 1.., required = true)]
    pub preds: Vec<PathBuf>,
    /// One weight per prediction file.
    #[arg(long, num_args = 1..)]
    pub weights: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool_version: &'static str,
    pub command: String,
    pub params: Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
}

struct Run {
    command: &'static str,
    params: Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn new(command: &'static str) -> Self {
        Self {
            command,
            params: Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }
}

fn load_config(common: &Common) -> Result<Config> {
    match &common.config {
        Some(p) => Config::from_file(p),
        None => Ok(Config::default()),
    }
}

/// Flag value, else config value, else default.
fn resolve<T: FromStr>(flag: Option<T>, cfg: &Config, key: &str, default: T) -> Result<T> {
    match flag {
        Some(v) => Ok(v),
        None => cfg.get_or(key, default),
    }
}

fn parse_weights(s: &str) -> Result<LossWeights> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| Error::param("weights", format!("bad weight `{p}`"))))
        .collect::<Result<_>>()?;
    if parts.len() != 3 {
        return Err(Error::param("weights", "expected three weights ic,ll,gl"));
    }
    LossWeights::new(parts[0], parts[1], parts[2])
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serialisable");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn emit(out: Option<&Path>, value: &impl Serialize, run: &mut Run) -> Result<()> {
    match out {
        Some(p) => {
            write_json(p, value)?;
            run.outputs.push(p.to_path_buf());
        }
        None => println!("{}", serde_json::to_string_pretty(value).expect("serialisable")),
    }
    Ok(())
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::param("KNIGHTS_THREADS", format!("not a count: `{v}`")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::param("KNIGHTS_THREADS", e.to_string()))
}

fn solver_params(flags: &SolverFlags, cfg: &Config) -> Result<Tvl1Params> {
    let d = Tvl1Params::default();
    let p = Tvl1Params {
        lambda: resolve(flags.lambda, cfg, "lambda", d.lambda)?,
        theta: resolve(flags.theta, cfg, "theta", d.theta)?,
        tau_step: resolve(flags.tau, cfg, "tau_step", d.tau_step)?,
        n_scales: resolve(flags.scales, cfg, "n_scales", d.n_scales)?,
        zoom: resolve(flags.zoom, cfg, "zoom", d.zoom)?,
        n_warps: resolve(flags.warps, cfg, "n_warps", d.n_warps)?,
        max_iters: resolve(flags.iters, cfg, "max_iters", d.max_iters)?,
        epsilon: resolve(flags.epsilon, cfg, "epsilon", d.epsilon)?,
        median_filter: if flags.no_median { false } else { cfg.get_or("median_filter", d.median_filter)? },
    };
    p.validate()?;
    Ok(p)
}

#[derive(Debug, Serialize)]
struct FlowReport {
    i0: PathBuf,
    i1: PathBuf,
    out: PathBuf,
    energy_before: f64,
    energy_after: f64,
    mean_magnitude: f64,
}

fn flow_pair(i0p: &Path, i1p: &Path, out: &Path, params: &Tvl1Params) -> Result<FlowReport> {
    let i0 = pgm::read_pgm(i0p)?;
    let i1 = pgm::read_pgm(i1p)?;
    let flow = compute_flow(&i0, &i1, params)?;
    let (n0, n1) = normalize_pair(&i0, &i1);
    let energy_before = energy(&n0, &n1, &FlowField::zeros(i0.width(), i0.height()), params.lambda)?;
    let energy_after = energy(&n0, &n1, &flow, params.lambda)?;
    flo::write_flo(out, &flow)?;
    Ok(FlowReport {
        i0: i0p.to_path_buf(),
        i1: i1p.to_path_buf(),
        out: out.to_path_buf(),
        energy_before,
        energy_after,
        mean_magnitude: flow.mean_magnitude(),
    })
}

fn cmd_flow(args: &FlowArgs, cfg: &Config, run: &mut Run) -> Result<()> {
    let params = solver_params(&args.solver, cfg)?;
    run.params = serde_json::to_value(params).expect("serialisable");
    if let Some(dir) = &args.frames_dir {
        let mut frames: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
            .collect();
        frames.sort();
        if frames.len() < 2 {
            return Err(Error::param("frames_dir", format!("{} needs at least two .pgm frames", dir.display())));
        }
        std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
        let jobs: Vec<(PathBuf, PathBuf, PathBuf)> = frames
            .windows(2)
            .map(|w| {
                let stem = w[0].file_stem().unwrap_or_default().to_string_lossy().into_owned();
                (w[0].clone(), w[1].clone(), args.out.join(format!("{stem}.flo")))
            })
            .collect();
        let pool = thread_pool()?;
        // collect keeps the sorted-filename order regardless of completion order
        let reports: Vec<FlowReport> = pool.install(|| {
            jobs.par_iter()
                .map(|(a, b, o)| flow_pair(a, b, o, &params))
                .collect::<Result<_>>()
        })?;
        for r in &reports {
            println!("{}", serde_json::to_string(r).expect("serialisable"));
            run.outputs.push(r.out.clone());
        }
        run.inputs.extend(frames);
        return Ok(());
    }
    let (Some(i0), Some(i1)) = (&args.i0, &args.i1) else {
        return Err(Error::param("i0", "--i0 and --i1 are required without --frames-dir"));
    };
    let report = flow_pair(i0, i1, &args.out, &params)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("serialisable"));
    run.inputs.extend([i0.clone(), i1.clone()]);
    run.outputs.push(args.out.clone());
    Ok(())
}

fn cmd_energy(args: &EnergyArgs, cfg: &Config, run: &mut Run) -> Result<()> {
    let lambda = resolve(args.lambda, cfg, "lambda", Tvl1Params::default().lambda)?;
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::param("lambda", format!("must be > 0, got {lambda}")));
    }
    let mut i0 = pgm::read_pgm(&args.i0)?;
    let mut i1 = pgm::read_pgm(&args.i1)?;
    run.inputs.extend([args.i0.clone(), args.i1.clone()]);
    let flow = match &args.flow {
        Some(p) => {
            run.inputs.push(p.clone());
            flo::read_flo(p)?
        }
        None => FlowField::zeros(i0.width(), i0.height()),
    };
    if !args.raw {
        (i0, i1) = normalize_pair(&i0, &i1);
    }
    let e = energy(&i0, &i1, &flow, lambda)?;
    run.params = json!({ "lambda": lambda, "normalized": !args.raw });
    println!("{}", json!({ "energy": e, "lambda": lambda, "normalized": !args.raw }));
    Ok(())
}

#[derive(Debug, Serialize)]
struct LossReport {
    loss: f64,
    per_term: Vec<f64>,
    grad_norm: f64,
}

fn read_matrix(path: &Option<PathBuf>, flag: &'static str, run: &mut Run) -> Result<Matrix> {
    let p = path
        .as_ref()
        .ok_or_else(|| Error::param(flag, format!("--{} is required for this loss", flag.replace('_', "-"))))?;
    run.inputs.push(p.clone());
    emb1::read_emb1(p)
}

/// Split instance-major clip matrices into per-instance sets of `segments` rows.
fn split_clip_sets(mats: [&Matrix; 4], segments: Option<usize>) -> Result<Vec<TemporalClipSet>> {
    let rows = mats[0].rows();
    let nt = segments.unwrap_or(rows);
    if nt == 0 || !rows.is_multiple_of(nt) {
        return Err(Error::param("segments", format!("{rows} rows are not a multiple of {nt} segments")));
    }
    (0..rows / nt)
        .map(|i| {
            let s = |m: &Matrix| m.slice_rows(i * nt, (i + 1) * nt);
            TemporalClipSet::new(s(mats[0]), s(mats[1]), s(mats[2]), s(mats[3]))
        })
        .collect()
}

fn cmd_tclr_loss(args: &TclrLossArgs, cfg: &Config, run: &mut Run) -> Result<()> {
    let tau = Temperature::new(resolve(args.tau, cfg, "tau", 0.1)?)?;
    let weights = match args.weights.as_deref().or(cfg.get_str("weights")) {
        Some(s) => parse_weights(s)?,
        None => LossWeights::default(),
    };
    run.params = json!({ "loss": args.loss, "tau": tau.get(), "weights": weights, "segments": args.segments });

    let load_clips = |run: &mut Run, need_ll: bool, need_gl: bool| -> Result<Vec<TemporalClipSet>> {
        let ll = if need_ll {
            Some((read_matrix(&args.locals, "locals", run)?, read_matrix(&args.locals_twin, "locals_twin", run)?))
        } else {
            None
        };
        let gl = if need_gl {
            Some((
                read_matrix(&args.global_slices, "global_slices", run)?,
                read_matrix(&args.local_anchors, "local_anchors", run)?,
            ))
        } else {
            None
        };
        // the unused pair of a single loss mirrors the used one
        let (l, lt) = ll.clone().or_else(|| gl.clone()).expect("one pair loaded");
        let (g, a) = gl.or(ll).expect("one pair loaded");
        split_clip_sets([&l, &lt, &g, &a], args.segments)
    };

    let report = match args.loss {
        LossKind::Ic => {
            let batch = EmbeddingBatch::new(
                read_matrix(&args.embeddings, "embeddings", run)?,
                read_matrix(&args.twins, "twins", run)?,
            )?;
            let out = instance_contrastive_loss(&batch, tau)?;
            LossReport {
                loss: out.value,
                per_term: out.per_term,
                grad_norm: out.grads.norm_squared().sqrt(),
            }
        }
        LossKind::Ll | LossKind::Gl => {
            let sets = load_clips(run, args.loss == LossKind::Ll, args.loss == LossKind::Gl)?;
            let mut per_term = Vec::new();
            let mut total = 0.0;
            let mut g2 = 0.0;
            for s in &sets {
                let out = if args.loss == LossKind::Ll { local_local_loss(s, tau)? } else { global_local_loss(s, tau)? };
                total += out.value;
                g2 += out.grads.norm_squared();
                per_term.extend(out.per_term);
            }
            LossReport {
                loss: total / sets.len() as f64,
                per_term,
                grad_norm: (g2 / (sets.len() * sets.len()) as f64).sqrt(),
            }
        }
        LossKind::Combined => {
            let batch = EmbeddingBatch::new(
                read_matrix(&args.embeddings, "embeddings", run)?,
                read_matrix(&args.twins, "twins", run)?,
            )?;
            let sets = load_clips(run, true, true)?;
            let out = combined_tclr_loss(&batch, &sets, tau, weights)?;
            LossReport {
                loss: out.value,
                per_term: vec![out.instance, out.local_local, out.global_local],
                grad_norm: out.grad_norm(),
            }
        }
    };
    emit(args.out.as_deref(), &report, run)
}

#[derive(Debug, Serialize)]
struct GradcheckReport {
    configs: usize,
    step: f64,
    tolerance: f64,
    max_rel_err_ic: f64,
    max_rel_err_ll: f64,
    max_rel_err_gl: f64,
    passed: bool,
}

fn cmd_tclr_gradcheck(args: &GradcheckArgs, cfg: &Config, run: &mut Run) -> Result<()> {
    let configs = resolve(args.configs, cfg, "configs", 50)?;
    let seed = resolve(args.seed, cfg, "seed", 0)?;
    let step = resolve(args.step, cfg, "step", 1e-5)?;
    let tolerance = resolve(args.tol, cfg, "tol", 1e-5)?;
    if step.is_nan() || step <= 0.0 {
        return Err(Error::param("step", "must be > 0"));
    }
    run.params = json!({ "configs": configs, "seed": seed, "step": step, "tol": tolerance });
    let [ic, ll, gl] = crate::gradcheck::loss_gradient_errors(configs, seed, step)?;
    let report = GradcheckReport {
        configs,
        step,
        tolerance,
        max_rel_err_ic: ic,
        max_rel_err_ll: ll,
        max_rel_err_gl: gl,
        passed: ic < tolerance && ll < tolerance && gl < tolerance,
    };
    println!("{}", serde_json::to_string_pretty(&report).expect("serialisable"));
    if !report.passed {
        return Err(Error::GradientCheck {
            max_rel_err: ic.max(ll).max(gl),
            tolerance,
        });
    }
    Ok(())
}

fn cmd_pretrain(args: &PretrainArgs, cfg: &Config, run: &mut Run) -> Result<()> {
    let dd = DatasetConfig::default();
    let data_cfg = DatasetConfig {
        n_instances: resolve(args.instances, cfg, "instances", dd.n_instances)?,
        n_segments: resolve(args.segments, cfg, "segments", dd.n_segments)?,
        feature_dim: resolve(args.feature_dim, cfg, "feature_dim", dd.feature_dim)?,
        seed: resolve(args.data_seed, cfg, "data_seed", dd.seed)?,
        drift: resolve(args.drift, cfg, "drift", dd.drift)?,
        noise: resolve(args.noise, cfg, "noise", dd.noise)?,
    };
    let td = TrainConfig::default();
    let weights = match args.weights.as_deref().or(cfg.get_str("weights")) {
        Some(s) => parse_weights(s)?,
        None => td.weights,
    };
    let train_cfg = TrainConfig {
        steps: resolve(args.steps, cfg, "steps", td.steps)?,
        batch: resolve(args.batch, cfg, "batch", td.batch)?,
        tau: resolve(args.tau, cfg, "tau", td.tau)?,
        lr: resolve(args.lr, cfg, "lr", td.lr)?,
        weights,
        seed: resolve(args.seed, cfg, "seed", td.seed)?,
        hidden_dim: resolve(args.hidden_dim, cfg, "hidden_dim", td.hidden_dim)?,
        embed_dim: resolve(args.embed_dim, cfg, "embed_dim", td.embed_dim)?,
        verify_gradients: cfg.get_or("verify_gradients", td.verify_gradients)?,
    };
    train_cfg.validate()?;
    run.params = json!({ "dataset": data_cfg, "train": train_cfg });

    let dataset = generate_dataset(&data_cfg)?;
    let mut encoder = train_cfg.encoder_for(&dataset);
    let before = temporal_distinctness(&encoder, &dataset)?;
    let trace = train(&dataset, &mut encoder, &train_cfg)?;
    let after = temporal_distinctness(&encoder, &dataset)?;
    if let Some(p) = &args.trace_csv {
        std::fs::write(p, trace.to_csv()).map_err(|e| Error::io(p, e))?;
        run.outputs.push(p.clone());
    }
    let summary = json!({
        "steps": trace.steps.len(),
        "initial_loss": trace.initial_loss(),
        "final_loss": trace.final_loss(),
        "distinctness_before": before,
        "distinctness_after": after,
        "gradcheck_max_rel_err": trace.gradcheck_max_rel_err,
    });
    emit(args.summary_json.as_deref(), &summary, run)
}

fn cmd_mhpa_run(args: &MhpaArgs, cfg: &Config, run: &mut Run) -> Result<()> {
    let seed = resolve(args.seed, cfg, "seed", 0)?;
    let grid: Grid3 = resolve(args.grid.clone(), cfg, "grid", "1x8x8".to_string())?.parse()?;
    let cls = args.cls || cfg.get_or("cls", false)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schedule = match &args.schedule {
        Some(p) => {
            run.inputs.push(p.clone());
            StageSchedule::from_config(&Config::from_file(p)?)?
        }
        None => {
            let pooling: PoolingKind = resolve(args.pooling.clone(), cfg, "pooling", "average".to_string())?.parse()?;
            let dim = resolve(args.dim, cfg, "dim", 8)?;
            StageSchedule::hierarchical(
                resolve(args.stages, cfg, "stages", 4)?,
                dim,
                resolve(args.heads, cfg, "heads", 1)?,
                pooling,
            )?
        }
    };
    let dim_in = schedule.stages()[0].dim_in;
    let tokens = match &args.tokens {
        Some(p) => {
            run.inputs.push(p.clone());
            emb1::read_emb1(p)?
        }
        None => Matrix::random_normal(grid.volume() + usize::from(cls), dim_in, 1.0, &mut rng),
    };
    let x = TokenTensor::new(tokens, grid, cls)?;
    let weights = match &args.weights_dir {
        Some(dir) => (0..schedule.stages().len())
            .map(|k| {
                let mut load = |name: &str| {
                    let p = dir.join(format!("stage{k}_{name}.emb1"));
                    run.inputs.push(p.clone());
                    emb1::read_emb1(&p)
                };
                Ok(StageWeights { wq: load("q")?, wk: load("k")?, wv: load("v")?, wo: load("o")? })
            })
            .collect::<Result<Vec<_>>>()?,
        None => schedule.random_weights(&mut rng),
    };
    run.params = json!({ "seed": seed, "grid": grid, "cls": cls, "schedule": schedule });
    let out = run_schedule(&x, &schedule, &weights)?;
    let report = json!({
        "trace": out.trace,
        "max_softmax_deviation": out.max_softmax_deviation,
        "input_norm": x.tokens().norm(),
        "output_norm": out.output.tokens().norm(),
        "output_grid": out.output.grid(),
    });
    emit(args.out.as_deref(), &report, run)
}

fn parse_hw(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::param("frame_size", format!("expected HxW, got `{s}`"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((h.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?))
}

fn cmd_sample_clips(args: &SampleArgs, cfg: &Config, run: &mut Run) -> Result<()> {
    let video_len = resolve(args.video_len, cfg, "video_len", 0)?;
    let spec = ClipSpec::new(
        resolve(args.frames, cfg, "frames", 16)?,
        resolve(args.skip, cfg, "skip", 2)?,
        resolve(args.resolution, cfg, "resolution", 112)?,
    )?;
    let start = resolve(args.start, cfg, "start", 0)?;
    let n_temporal = resolve(args.temporal_crops, cfg, "temporal_crops", 1)?;
    let n_spatial = resolve(args.spatial_crops, cfg, "spatial_crops", 3)?;
    run.params = json!({ "video_len": video_len, "clip": spec, "start": start, "temporal_crops": n_temporal });
    let mut report = json!({
        "indices": sample_clip_indices(video_len, &spec, start)?,
        "temporal_starts": temporal_crop_starts(video_len, &spec, n_temporal)?,
    });
    if let Some(fs) = args.frame_size.as_deref().or(cfg.get_str("frame_size")) {
        let (h, w) = parse_hw(fs)?;
        report["spatial_boxes"] = serde_json::to_value(spatial_crop_boxes(h, w, spec.resolution, n_spatial)?)
            .expect("serialisable");
    }
    println!("{}", serde_json::to_string_pretty(&report).expect("serialisable"));
    Ok(())
}

#[derive(Debug, Serialize, PartialEq)]
pub struct VideoPrediction {
    pub video_id: String,
    pub probs: Vec<f64>,
    pub top1: usize,
}

fn cmd_aggregate(args: &AggregateArgs, cfg: &Config, run: &mut Run) -> Result<()> {
    let weights: Vec<f64> = if !args.weights.is_empty() {
        args.weights.clone()
    } else {
        (0..args.preds.len())
            .map(|i| cfg.get_or(&format!("weight.{i}"), 1.0))
            .collect::<Result<_>>()?
    };
    if weights.len() != args.preds.len() {
        return Err(Error::param(
            "weights",
            format!("{} weights for {} prediction files", weights.len(), args.preds.len()),
        ));
    }
    let spec = EnsembleSpec::new(
        args.preds
            .iter()
            .zip(&weights)
            .map(|(p, &weight)| crate::sampler::EnsembleMember {
                model_id: p.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
                weight,
            })
            .collect(),
    )?;
    run.params = json!({ "ensemble": spec });
    let tables = args.preds.iter().map(|p| read_preds(p)).collect::<Result<Vec<_>>>()?;
    run.inputs.extend(args.preds.iter().cloned());
    let classes = tables[0].class_ids.len();
    for (t, p) in tables.iter().zip(&args.preds) {
        if t.class_ids.len() != classes {
            return Err(Error::shape(
                format!("{classes} classes in every prediction file"),
                format!("{} in {}", t.class_ids.len(), p.display()),
            ));
        }
    }
    let mut results = Vec::with_capacity(tables[0].videos.len());
    for video in &tables[0].videos {
        let per_model = tables
            .iter()
            .zip(&args.preds)
            .map(|(t, p)| {
                t.videos
                    .iter()
                    .find(|v| v.video_id == video.video_id)
                    .map(|v| aggregate_crops(&v.preds))
                    .ok_or_else(|| Error::Domain(format!("video `{}` missing from {}", video.video_id, p.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        let e = aggregate_ensemble(&per_model, &spec)?;
        results.push(VideoPrediction { video_id: video.video_id.clone(), probs: e.probs, top1: e.top1 });
    }
    write_json(&args.out, &results)?;
    run.outputs.push(args.out.clone());
    Ok(())
}

fn write_manifest(common: &Common, run: &Run) -> Result<()> {
    let inputs = run
        .inputs
        .iter()
        .map(|p| Ok(InputDigest { path: p.clone(), sha256: file_digest(p)? }))
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        command: run.command.to_string(),
        params: run.params.clone(),
        inputs,
        outputs: run.outputs.clone(),
    };
    let target = common.manifest.clone().or_else(|| {
        run.outputs.first().map(|o| {
            let mut s = o.clone().into_os_string();
            s.push(".manifest.json");
            PathBuf::from(s)
        })
    });
    match target {
        Some(p) => write_json(&p, &manifest),
        None => {
            eprintln!("{}", serde_json::to_string_pretty(&manifest).expect("serialisable"));
            Ok(())
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let common = &cli.common;
    let cfg = load_config(common)?;
    let mut run;
    match &cli.command {
        Command::Flow(a) => {
            run = Run::new("flow");
            cmd_flow(a, &cfg, &mut run)?;
        }
        Command::Energy(a) => {
            run = Run::new("energy");
            cmd_energy(a, &cfg, &mut run)?;
        }
        Command::TclrLoss(a) => {
            run = Run::new("tclr-loss");
            cmd_tclr_loss(a, &cfg, &mut run)?;
        }
        Command::TclrGradcheck(a) => {
            run = Run::new("tclr-gradcheck");
            cmd_tclr_gradcheck(a, &cfg, &mut run)?;
        }
        Command::Pretrain(a) => {
            run = Run::new("pretrain");
            cmd_pretrain(a, &cfg, &mut run)?;
        }
        Command::MhpaRun(a) => {
            run = Run::new("mhpa-run");
            cmd_mhpa_run(a, &cfg, &mut run)?;
        }
        Command::SampleClips(a) => {
            run = Run::new("sample-clips");
            cmd_sample_clips(a, &cfg, &mut run)?;
        }
        Command::Aggregate(a) => {
            run = Run::new("aggregate");
            cmd_aggregate(a, &cfg, &mut run)?;
        }
    }
    write_manifest(common, &run)
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_io_or_format() {
        EXIT_IO
    } else {
        EXIT_PARAM
    }
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(p) => p,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_PARAM,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
