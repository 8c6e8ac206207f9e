//! Multi-head pooling attention, forward only.
//!
//! Tokens live on a `t x h x w` space-time grid, optionally preceded by a
//! class token. Queries, keys and values are projected and then pooled on
//! that grid before scaled dot-product attention, so the output sequence has
//! the resolution of the pooled queries. Stages chain into a hierarchy where
//! resolution drops while channel width grows.

mod pool;

pub use pool::{pool_tokens, Grid3, PoolingKind, TokenTensor};

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::config::Config;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AttentionStage {
    pub heads: usize,
    pub dim_in: usize,
    pub dim_out: usize,
    pub q_stride: Grid3,
    pub kv_stride: Grid3,
    pub pooling: PoolingKind,
}

impl AttentionStage {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 {
            return Err(Error::param("heads", "must be >= 1"));
        }
        if self.dim_in == 0 || self.dim_out < self.dim_in {
            return Err(Error::param(
                "dim_out",
                format!("need 0 < dim_in <= dim_out, got {} -> {}", self.dim_in, self.dim_out),
            ));
        }
        if !self.dim_in.is_multiple_of(self.heads) || !self.dim_out.is_multiple_of(self.heads) {
            return Err(Error::param(
                "heads",
                format!("{} heads do not divide dims {} / {}", self.heads, self.dim_in, self.dim_out),
            ));
        }
        for (name, s) in [("q_stride", self.q_stride), ("kv_stride", self.kv_stride)] {
            if s.t == 0 || s.h == 0 || s.w == 0 {
                return Err(Error::param(name, "strides must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim_out / self.heads
    }
}

/// Projection matrices of one stage: `wq`, `wk`, `wv` map `dim_in` to
/// `dim_out`, `wo` is `dim_out x dim_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageWeights {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
}

impl StageWeights {
    pub fn random<R: Rng + ?Sized>(stage: &AttentionStage, rng: &mut R) -> Self {
        let s_in = 1.0 / (stage.dim_in as f64).sqrt();
        let s_out = 1.0 / (stage.dim_out as f64).sqrt();
        Self {
            wq: Matrix::random_normal(stage.dim_in, stage.dim_out, s_in, rng),
            wk: Matrix::random_normal(stage.dim_in, stage.dim_out, s_in, rng),
            wv: Matrix::random_normal(stage.dim_in, stage.dim_out, s_in, rng),
            wo: Matrix::random_normal(stage.dim_out, stage.dim_out, s_out, rng),
        }
    }

    fn check(&self, stage: &AttentionStage) -> Result<()> {
        let want_in = (stage.dim_in, stage.dim_out);
        for (name, m) in [("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv)] {
            if m.shape() != want_in {
                return Err(Error::shape(format!("{name} of {want_in:?}"), format!("{:?}", m.shape())));
            }
        }
        if self.wo.shape() != (stage.dim_out, stage.dim_out) {
            return Err(Error::shape(
                format!("wo of {:?}", (stage.dim_out, stage.dim_out)),
                format!("{:?}", self.wo.shape()),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StageOutput {
    pub output: TokenTensor,
    /// Row-stochastic attention matrix of each head (`queries x keys`).
    pub attention: Vec<Matrix>,
}

/// In-place row softmax.
fn softmax_rows(m: &mut Matrix) {
    for i in 0..m.rows() {
        let r = m.row_mut(i);
        let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in r.iter_mut() {
            *v = (*v - max).exp();
            s += *v;
        }
        r.iter_mut().for_each(|v| *v /= s);
    }
}

fn head_columns(m: &Matrix, head: usize, head_dim: usize) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), head_dim);
    for i in 0..m.rows() {
        out.row_mut(i).copy_from_slice(&m.row(i)[head * head_dim..(head + 1) * head_dim]);
    }
    out
}

/// One pooling-attention layer. The input, pooled with the query stride, is
/// added back as a residual when `dim_in == dim_out`.
pub fn mhpa_forward(x: &TokenTensor, stage: &AttentionStage, weights: &StageWeights) -> Result<StageOutput> {
    stage.validate()?;
    weights.check(stage)?;
    if x.dim() != stage.dim_in {
        return Err(Error::shape(format!("tokens of dim {}", stage.dim_in), format!("dim {}", x.dim())));
    }
    let project = |w: &Matrix| -> Result<TokenTensor> {
        TokenTensor::new(x.tokens().matmul(w)?, x.grid(), x.has_cls())
    };
    let q = pool_tokens(&project(&weights.wq)?, stage.q_stride, stage.pooling)?;
    let k = pool_tokens(&project(&weights.wk)?, stage.kv_stride, stage.pooling)?;
    let v = pool_tokens(&project(&weights.wv)?, stage.kv_stride, stage.pooling)?;

    let hd = stage.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let mut merged = Matrix::zeros(q.seq_len(), stage.dim_out);
    let mut attention = Vec::with_capacity(stage.heads);
    for head in 0..stage.heads {
        let qh = head_columns(q.tokens(), head, hd);
        let kh = head_columns(k.tokens(), head, hd);
        let vh = head_columns(v.tokens(), head, hd);
        let mut scores = qh.matmul(&kh.transpose())?;
        scores.scale(scale);
        softmax_rows(&mut scores);
        let out = scores.matmul(&vh)?;
        for i in 0..out.rows() {
            merged.row_mut(i)[head * hd..(head + 1) * hd].copy_from_slice(out.row(i));
        }
        attention.push(scores);
    }
    let mut tokens = merged.matmul(&weights.wo)?;
    if stage.dim_in == stage.dim_out {
        let residual = pool_tokens(x, stage.q_stride, stage.pooling)?;
        tokens.add_assign(residual.tokens());
    }
    Ok(StageOutput {
        output: TokenTensor::new(tokens, q.grid(), x.has_cls())?,
        attention,
    })
}

/// Ordered stages whose channel widths chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageSchedule {
    stages: Vec<AttentionStage>,
}

impl StageSchedule {
    pub fn new(stages: Vec<AttentionStage>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::Empty("stage schedule"));
        }
        for s in &stages {
            s.validate()?;
        }
        for (k, pair) in stages.windows(2).enumerate() {
            if pair[0].dim_out != pair[1].dim_in {
                return Err(Error::shape(
                    format!("stage {} dim_in = {}", k + 1, pair[0].dim_out),
                    pair[1].dim_in,
                ));
            }
        }
        Ok(Self { stages })
    }

    /// A first stage at full resolution and width `base_dim`, then stages
    /// that halve height and width and double channels.
    pub fn hierarchical(n_stages: usize, base_dim: usize, heads: usize, pooling: PoolingKind) -> Result<Self> {
        let mut stages = Vec::with_capacity(n_stages);
        let mut dim = base_dim;
        for k in 0..n_stages {
            let (stride, dim_out) = if k == 0 {
                (Grid3::new(1, 1, 1), dim)
            } else {
                (Grid3::new(1, 2, 2), dim * 2)
            };
            stages.push(AttentionStage {
                heads,
                dim_in: dim,
                dim_out,
                q_stride: stride,
                kv_stride: stride,
                pooling,
            });
            dim = dim_out;
        }
        Self::new(stages)
    }

    /// Reads `stages = N` and `stage.<k>.{heads,dim_in,dim_out,q_stride,kv_stride,pooling}`;
    /// strides are written `TxHxW`.
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let n: usize = cfg.require("stages")?;
        let mut stages = Vec::with_capacity(n);
        for k in 0..n {
            let key = |f: &str| format!("stage.{k}.{f}");
            stages.push(AttentionStage {
                heads: cfg.get_or(&key("heads"), 1)?,
                dim_in: cfg.require(&key("dim_in"))?,
                dim_out: cfg.require(&key("dim_out"))?,
                q_stride: cfg.get_or(&key("q_stride"), Grid3::new(1, 1, 1))?,
                kv_stride: cfg.get_or(&key("kv_stride"), Grid3::new(1, 1, 1))?,
                pooling: cfg.get_or(&key("pooling"), PoolingKind::Average)?,
            });
        }
        Self::new(stages)
    }

    pub fn stages(&self) -> &[AttentionStage] {
        &self.stages
    }

    pub fn random_weights<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<StageWeights> {
        self.stages.iter().map(|s| StageWeights::random(s, rng)).collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceEntry {
    pub seq_len: usize,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct ScheduleOutput {
    pub output: TokenTensor,
    /// `(seq_len, dim)` after each stage.
    pub trace: Vec<TraceEntry>,
    /// Largest `|row sum - 1|` over every attention matrix of every stage.
    pub max_softmax_deviation: f64,
}

pub fn run_schedule(x: &TokenTensor, schedule: &StageSchedule, weights: &[StageWeights]) -> Result<ScheduleOutput> {
    if weights.len() != schedule.stages.len() {
        return Err(Error::shape(
            format!("{} stage weights", schedule.stages.len()),
            weights.len(),
        ));
    }
    let mut current = x.clone();
    let mut trace = Vec::with_capacity(weights.len());
    let mut deviation = 0.0f64;
    for (k, (stage, w)) in schedule.stages.iter().zip(weights).enumerate() {
        let out = mhpa_forward(&current, stage, w)?;
        for a in &out.attention {
            for r in a.iter_rows() {
                deviation = deviation.max((r.iter().sum::<f64>() - 1.0).abs());
            }
        }
        if out.output.grid().volume() > current.grid().volume() || out.output.dim() < current.dim() {
            return Err(Error::Domain(format!(
                "stage {k} increased resolution or reduced channels"
            )));
        }
        trace.push(TraceEntry {
            seq_len: out.output.seq_len(),
            dim: out.output.dim(),
        });
        current = out.output;
    }
    Ok(ScheduleOutput {
        output: current,
        trace,
        max_softmax_deviation: deviation,
    })
}
