//! Synthetic pretraining: a two-layer encoder trained by plain gradient
//! descent on the combined temporal contrastive objective.
//!
//! Each synthetic instance is a random-walk trajectory of `n_segments`
//! feature vectors. Local clips are the clean segments; their twins and the
//! global-clip slices are independently perturbed copies. The instance-level
//! clip is the mean over segments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gradcheck::{central_difference, max_relative_error};
use crate::matrix::{dot, l2, Matrix};
use crate::tclr::{combined_tclr_loss, EmbeddingBatch, LossWeights, Temperature, TemporalClipSet};

/// Finite-difference step and tolerance for the pre-training gradient check.
pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-4;
/// Entries smaller than this are compared absolutely.
pub const GRADCHECK_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DatasetConfig {
    pub n_instances: usize,
    pub n_segments: usize,
    pub feature_dim: usize,
    pub seed: u64,
    /// Scale of the random-walk step between consecutive segments.
    pub drift: f64,
    /// Half-width of the uniform perturbation applied to twins and global slices.
    pub noise: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_instances: 8,
            n_segments: 4,
            feature_dim: 16,
            seed: 7,
            drift: 1.0,
            noise: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticClipDataset {
    config: DatasetConfig,
    /// Per instance, `n_segments x feature_dim`.
    locals: Vec<Matrix>,
    twins: Vec<Matrix>,
    globals: Vec<Matrix>,
}

pub fn generate_dataset(config: &DatasetConfig) -> Result<SyntheticClipDataset> {
    if config.n_instances == 0 || config.n_segments == 0 || config.feature_dim == 0 {
        return Err(Error::param("dataset", "instances, segments and feature_dim must be >= 1"));
    }
    if !(config.drift >= 0.0 && config.noise >= 0.0) {
        return Err(Error::param("dataset", "drift and noise must be >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (nt, f) = (config.n_segments, config.feature_dim);
    let mut locals = Vec::with_capacity(config.n_instances);
    let mut twins = Vec::with_capacity(config.n_instances);
    let mut globals = Vec::with_capacity(config.n_instances);
    for _ in 0..config.n_instances {
        let mut segs = Matrix::random_normal(1, f, 1.0, &mut rng);
        let mut rows = vec![segs.row(0).to_vec()];
        for p in 1..nt {
            let step: Vec<f64> = (0..f)
                .map(|_| { let z: f64 = StandardNormal.sample(&mut rng); config.drift * z })
                .collect();
            rows.push(rows[p - 1].iter().zip(&step).map(|(a, b)| a + b).collect());
        }
        segs = Matrix::from_rows(&rows)?;
        let mut perturbed = |m: &Matrix| {
            let mut out = m.clone();
            for v in out.as_mut_slice() {
                *v += config.noise * rng.random_range(-1.0..=1.0);
            }
            out
        };
        twins.push(perturbed(&segs));
        globals.push(perturbed(&segs));
        locals.push(segs);
    }
    Ok(SyntheticClipDataset {
        config: *config,
        locals,
        twins,
        globals,
    })
}

impl SyntheticClipDataset {
    pub fn config(&self) -> &DatasetConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.locals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locals.is_empty()
    }

    pub fn locals(&self, instance: usize) -> &Matrix {
        &self.locals[instance]
    }

    pub fn twins(&self, instance: usize) -> &Matrix {
        &self.twins[instance]
    }

    pub fn globals(&self, instance: usize) -> &Matrix {
        &self.globals[instance]
    }

    /// Mean Euclidean distance between distinct segments of an instance and
    /// mean distance between a segment and its twin.
    pub fn distance_stats(&self) -> (f64, f64) {
        let (mut seg, mut ns, mut twin, mut nt) = (0.0, 0usize, 0.0, 0usize);
        for (l, t) in self.locals.iter().zip(&self.twins) {
            for p in 0..l.rows() {
                for q in p + 1..l.rows() {
                    seg += euclid(l.row(p), l.row(q));
                    ns += 1;
                }
                twin += euclid(l.row(p), t.row(p));
                nt += 1;
            }
        }
        (seg / ns.max(1) as f64, twin / nt.max(1) as f64)
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn mean_rows(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for r in m.iter_rows() {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= m.rows() as f64);
    out
}

/// `y = tanh(x W1 + b1) W2 + b2`, applied row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyEncoder {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

struct ForwardCache {
    hidden: Matrix,
    output: Matrix,
}

impl TinyEncoder {
    pub fn new(input_dim: usize, hidden_dim: usize, output_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            w1: Matrix::random_normal(input_dim, hidden_dim, 1.0 / (input_dim as f64).sqrt(), &mut rng),
            b1: vec![0.0; hidden_dim],
            w2: Matrix::random_normal(hidden_dim, output_dim, 1.0 / (hidden_dim as f64).sqrt(), &mut rng),
            b2: vec![0.0; output_dim],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.cols()
    }

    pub fn param_count(&self) -> usize {
        self.w1.as_slice().len() + self.b1.len() + self.w2.as_slice().len() + self.b2.len()
    }

    /// Parameters flattened as `w1, b1, w2, b2`.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        p.extend_from_slice(self.w1.as_slice());
        p.extend_from_slice(&self.b1);
        p.extend_from_slice(self.w2.as_slice());
        p.extend_from_slice(&self.b2);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.param_count(), "parameter vector length");
        let mut rest = p;
        for dst in [
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
        ] {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        }
    }

    fn forward_cached(&self, x: &Matrix) -> Result<ForwardCache> {
        let mut hidden = x.matmul(&self.w1)?;
        for i in 0..hidden.rows() {
            for (h, b) in hidden.row_mut(i).iter_mut().zip(&self.b1) {
                *h = (*h + b).tanh();
            }
        }
        let mut output = hidden.matmul(&self.w2)?;
        for i in 0..output.rows() {
            for (o, b) in output.row_mut(i).iter_mut().zip(&self.b2) {
                *o += b;
            }
        }
        Ok(ForwardCache { hidden, output })
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(x)?.output)
    }

    /// Parameter gradient (flattened like [`Self::params`]) given the
    /// output gradient `d_out`.
    fn backward(&self, x: &Matrix, cache: &ForwardCache, d_out: &Matrix) -> Result<Vec<f64>> {
        let d_w2 = cache.hidden.transpose().matmul(d_out)?;
        let mut d_b2 = vec![0.0; self.b2.len()];
        for r in d_out.iter_rows() {
            d_b2.iter_mut().zip(r).for_each(|(a, v)| *a += v);
        }
        let mut d_pre = d_out.matmul(&self.w2.transpose())?;
        for i in 0..d_pre.rows() {
            for (d, h) in d_pre.row_mut(i).iter_mut().zip(cache.hidden.row(i)) {
                *d *= 1.0 - h * h;
            }
        }
        let d_w1 = x.transpose().matmul(&d_pre)?;
        let mut d_b1 = vec![0.0; self.b1.len()];
        for r in d_pre.iter_rows() {
            d_b1.iter_mut().zip(r).for_each(|(a, v)| *a += v);
        }
        let mut g = Vec::with_capacity(self.param_count());
        g.extend_from_slice(d_w1.as_slice());
        g.extend_from_slice(&d_b1);
        g.extend_from_slice(d_w2.as_slice());
        g.extend_from_slice(&d_b2);
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainConfig {
    pub steps: usize,
    /// Instances per step.
    pub batch: usize,
    pub tau: f64,
    pub lr: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    /// Run the finite-difference check on the encoder chain before training.
    pub verify_gradients: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch: 8,
            tau: 0.1,
            lr: 0.3,
            weights: LossWeights::default(),
            seed: 0,
            hidden_dim: 32,
            embed_dim: 16,
            verify_gradients: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::param("steps", "must be >= 1"));
        }
        if self.batch == 0 {
            return Err(Error::param("batch", "must be >= 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::param("lr", format!("must be finite and > 0, got {}", self.lr)));
        }
        if self.hidden_dim == 0 || self.embed_dim == 0 {
            return Err(Error::param("embed_dim", "layer widths must be >= 1"));
        }
        Temperature::new(self.tau)?;
        LossWeights::new(self.weights.instance, self.weights.local_local, self.weights.global_local)?;
        Ok(())
    }

    pub fn encoder_for(&self, dataset: &SyntheticClipDataset) -> TinyEncoder {
        TinyEncoder::new(dataset.config.feature_dim, self.hidden_dim, self.embed_dim, self.seed)
    }
}

/// Encoder inputs for one batch, stacked so a single forward pass covers
/// every clip view.
struct BatchInputs {
    x: Matrix,
    n: usize,
    nt: usize,
}

impl BatchInputs {
    fn new(dataset: &SyntheticClipDataset, instances: &[usize]) -> Result<Self> {
        let n = instances.len();
        let nt = dataset.config.n_segments;
        let mut rows = Vec::with_capacity(2 * n + 3 * n * nt);
        for &i in instances {
            rows.push(mean_rows(&dataset.locals[i]));
        }
        for &i in instances {
            rows.push(mean_rows(&dataset.twins[i]));
        }
        for &i in instances {
            for m in [&dataset.locals[i], &dataset.twins[i], &dataset.globals[i]] {
                rows.extend(m.iter_rows().map(<[f64]>::to_vec));
            }
        }
        Ok(Self {
            x: Matrix::from_rows(&rows)?,
            n,
            nt,
        })
    }

    /// Row offset of view `v` (0 locals, 1 twins, 2 globals) of the
    /// `j`-th batch instance.
    fn view_offset(&self, j: usize, v: usize) -> usize {
        2 * self.n + (3 * j + v) * self.nt
    }
}

/// Combined loss value and the gradient with respect to the encoder
/// parameters.
fn objective(
    encoder: &TinyEncoder,
    inputs: &BatchInputs,
    tau: Temperature,
    weights: LossWeights,
) -> Result<(f64, Vec<f64>)> {
    let cache = encoder.forward_cached(&inputs.x)?;
    let y = &cache.output;
    let (n, nt) = (inputs.n, inputs.nt);
    let batch = EmbeddingBatch::new(y.slice_rows(0, n), y.slice_rows(n, 2 * n))?;
    let clip_sets = (0..n)
        .map(|j| {
            let view = |v| {
                let o = inputs.view_offset(j, v);
                y.slice_rows(o, o + nt)
            };
            let locals = view(0);
            TemporalClipSet::new(locals.clone(), view(1), view(2), locals)
        })
        .collect::<Result<Vec<_>>>()?;
    let out = combined_tclr_loss(&batch, &clip_sets, tau, weights)?;

    let mut d_out = Matrix::zeros(y.rows(), y.cols());
    let mut add = |offset: usize, g: &Matrix| {
        for r in 0..g.rows() {
            for (d, v) in d_out.row_mut(offset + r).iter_mut().zip(g.row(r)) {
                *d += v;
            }
        }
    };
    add(0, &out.batch_grads.embeddings);
    add(n, &out.batch_grads.twins);
    for (j, g) in out.clip_grads.iter().enumerate() {
        // local anchors are the local clips, so both gradients land there
        add(inputs.view_offset(j, 0), &g.locals);
        add(inputs.view_offset(j, 0), &g.local_anchors);
        add(inputs.view_offset(j, 1), &g.locals_twin);
        add(inputs.view_offset(j, 2), &g.global_slices);
    }
    let grads = encoder.backward(&inputs.x, &cache, &d_out)?;
    Ok((out.value, grads))
}

fn batch_instances(dataset_len: usize, batch: usize, step: usize) -> Vec<usize> {
    let size = batch.min(dataset_len);
    (0..size).map(|j| (step * size + j) % dataset_len).collect()
}

/// Finite-difference check of the encoder chain on the first batch; returns
/// the largest relative error.
pub fn check_encoder_gradients(
    encoder: &TinyEncoder,
    dataset: &SyntheticClipDataset,
    config: &TrainConfig,
) -> Result<f64> {
    let tau = Temperature::new(config.tau)?;
    let inputs = BatchInputs::new(dataset, &batch_instances(dataset.len(), config.batch, 0))?;
    let (_, analytic) = objective(encoder, &inputs, tau, config.weights)?;
    let mut probe = encoder.clone();
    let numeric = central_difference(
        |p| {
            probe.set_params(p);
            objective(&probe, &inputs, tau, config.weights).map_or(f64::NAN, |(v, _)| v)
        },
        &encoder.params(),
        GRADCHECK_STEP,
    );
    Ok(max_relative_error(&analytic, &numeric, GRADCHECK_FLOOR))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingTrace {
    pub steps: Vec<StepRecord>,
    /// Result of the pre-training gradient check, if it ran.
    pub gradcheck_max_rel_err: Option<f64>,
}

impl TrainingTrace {
    pub fn initial_loss(&self) -> f64 {
        self.steps.first().map_or(f64::NAN, |s| s.loss)
    }

    pub fn final_loss(&self) -> f64 {
        self.steps.last().map_or(f64::NAN, |s| s.loss)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss,grad_norm\n");
        for r in &self.steps {
            s.push_str(&format!("{},{:?},{:?}\n", r.step, r.loss, r.grad_norm));
        }
        s
    }
}

/// Plain gradient descent. Each record holds the loss and gradient norm
/// evaluated before that step's update.
pub fn train(
    dataset: &SyntheticClipDataset,
    encoder: &mut TinyEncoder,
    config: &TrainConfig,
) -> Result<TrainingTrace> {
    config.validate()?;
    if encoder.input_dim() != dataset.config.feature_dim {
        return Err(Error::shape(
            format!("encoder input dim {}", dataset.config.feature_dim),
            encoder.input_dim(),
        ));
    }
    let tau = Temperature::new(config.tau)?;
    let gradcheck = if config.verify_gradients {
        let err = check_encoder_gradients(encoder, dataset, config)?;
        if err.is_nan() || err >= GRADCHECK_TOL {
            return Err(Error::GradientCheck {
                max_rel_err: err,
                tolerance: GRADCHECK_TOL,
            });
        }
        Some(err)
    } else {
        None
    };

    let mut params = encoder.params();
    let mut steps = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let inputs = BatchInputs::new(dataset, &batch_instances(dataset.len(), config.batch, step))?;
        let (loss, grads) = objective(encoder, &inputs, tau, config.weights)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        let grad_norm = l2(&grads);
        steps.push(StepRecord { step, loss, grad_norm });
        for (p, g) in params.iter_mut().zip(&grads) {
            *p -= config.lr * g;
        }
        encoder.set_params(&params);
    }
    Ok(TrainingTrace {
        steps,
        gradcheck_max_rel_err: gradcheck,
    })
}

/// Mean cosine similarity over all pairs of distinct rows, averaged over
/// the given per-instance embedding matrices. Instances with one row are
/// skipped; with no pairs at all the result is 1.
pub fn mean_pairwise_cosine(per_instance: &[Matrix]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for m in per_instance {
        let mut s = 0.0;
        let mut c = 0usize;
        for p in 0..m.rows() {
            for q in p + 1..m.rows() {
                let (a, b) = (m.row(p), m.row(q));
                s += dot(a, b) / (l2(a) * l2(b));
                c += 1;
            }
        }
        if c > 0 {
            total += s / c as f64;
            count += 1;
        }
    }
    if count == 0 {
        1.0
    } else {
        total / count as f64
    }
}

/// Mean pairwise cosine between embeddings of different segments of the
/// same instance. Lower means more temporally distinct.
pub fn temporal_distinctness(encoder: &TinyEncoder, dataset: &SyntheticClipDataset) -> Result<f64> {
    let embedded = dataset
        .locals
        .iter()
        .map(|m| encoder.forward(m))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_pairwise_cosine(&embedded))
}
