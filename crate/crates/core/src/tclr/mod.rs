//! Temporal contrastive losses over temperature-scaled cosine similarity.
//!
//! Three objectives share one building block: an anchor row scored against a
//! set of candidate rows, exactly one of which is the positive. The loss of
//! such a term is the negative log-softmax of the positive logit, where the
//! logit of a pair is `cos(u, v) / tau`.
//!
//! - [`instance_contrastive_loss`] contrasts the two augmented clips of each
//!   instance against every other clip in the batch.
//! - [`local_local_loss`] contrasts the temporal segments of one instance
//!   against each other.
//! - [`global_local_loss`] aligns each local clip with the matching temporal
//!   slice of the global clip, in both directions.
//!
//! Gradients are derived by hand from the log-softmax structure and returned
//! alongside the value. [`oracle`] holds a naive transcription used to check
//! the fast path.

pub mod oracle;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::{dot, l2, Matrix};

/// Softmax temperature, strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::param("tau", format!("must be finite and > 0, got {tau}")));
        }
        Ok(Self(tau))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Temperature {
    type Error = Error;

    fn try_from(tau: f64) -> Result<Self> {
        Self::new(tau)
    }
}

/// `exp(cos(u, v) / tau)`.
pub fn similarity(u: &[f64], v: &[f64], tau: Temperature) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape(format!("length {}", u.len()), format!("length {}", v.len())));
    }
    let (nu, nv) = (l2(u), l2(v));
    if !(nu > 0.0 && nv > 0.0) || !nu.is_finite() || !nv.is_finite() {
        return Err(Error::Domain(format!(
            "similarity needs nonzero finite vectors (norms {nu}, {nv})"
        )));
    }
    Ok((dot(u, v) / (nu * nv * tau.get())).exp())
}

fn check_rows(name: &str, m: &Matrix) -> Result<()> {
    for (i, r) in m.iter_rows().enumerate() {
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("{name} row {i} has non-finite entries")));
        }
        if l2(r) == 0.0 {
            return Err(Error::Domain(format!("{name} row {i} has zero norm")));
        }
    }
    Ok(())
}

fn check_same_shape(name: &str, reference: &Matrix, m: &Matrix) -> Result<()> {
    if m.shape() != reference.shape() {
        return Err(Error::shape(
            format!("{name} of shape {:?}", reference.shape()),
            format!("{:?}", m.shape()),
        ));
    }
    Ok(())
}

/// Clip representations of `N` instances and their augmented twins.
#[derive(Debug, Clone)]
pub struct EmbeddingBatch {
    embeddings: Matrix,
    twins: Matrix,
}

impl EmbeddingBatch {
    pub fn new(embeddings: Matrix, twins: Matrix) -> Result<Self> {
        check_same_shape("twins", &embeddings, &twins)?;
        if embeddings.rows() == 0 {
            return Err(Error::Empty("embedding batch"));
        }
        if embeddings.cols() == 0 {
            return Err(Error::Domain("embedding dimension is zero".into()));
        }
        check_rows("embeddings", &embeddings)?;
        check_rows("twins", &twins)?;
        Ok(Self { embeddings, twins })
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn twins(&self) -> &Matrix {
        &self.twins
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }
}

/// Per-instance temporal features: `N_T` local clips with twins, plus the
/// global clip's per-timestamp slices and the local anchors they align with.
#[derive(Debug, Clone)]
pub struct TemporalClipSet {
    locals: Matrix,
    locals_twin: Matrix,
    global_slices: Matrix,
    local_anchors: Matrix,
}

impl TemporalClipSet {
    pub fn new(
        locals: Matrix,
        locals_twin: Matrix,
        global_slices: Matrix,
        local_anchors: Matrix,
    ) -> Result<Self> {
        check_same_shape("locals_twin", &locals, &locals_twin)?;
        check_same_shape("global_slices", &locals, &global_slices)?;
        check_same_shape("local_anchors", &locals, &local_anchors)?;
        if locals.rows() == 0 {
            return Err(Error::Empty("temporal clip set"));
        }
        if locals.cols() == 0 {
            return Err(Error::Domain("clip feature dimension is zero".into()));
        }
        check_rows("locals", &locals)?;
        check_rows("locals_twin", &locals_twin)?;
        check_rows("global_slices", &global_slices)?;
        check_rows("local_anchors", &local_anchors)?;
        Ok(Self {
            locals,
            locals_twin,
            global_slices,
            local_anchors,
        })
    }

    pub fn locals(&self) -> &Matrix {
        &self.locals
    }

    pub fn locals_twin(&self) -> &Matrix {
        &self.locals_twin
    }

    pub fn global_slices(&self) -> &Matrix {
        &self.global_slices
    }

    pub fn local_anchors(&self) -> &Matrix {
        &self.local_anchors
    }

    /// Number of temporal segments `N_T`.
    pub fn segments(&self) -> usize {
        self.locals.rows()
    }

    pub fn dim(&self) -> usize {
        self.locals.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchGrads {
    pub embeddings: Matrix,
    pub twins: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipGrads {
    pub locals: Matrix,
    pub locals_twin: Matrix,
    pub global_slices: Matrix,
    pub local_anchors: Matrix,
}

impl BatchGrads {
    pub fn norm_squared(&self) -> f64 {
        self.embeddings.norm().powi(2) + self.twins.norm().powi(2)
    }
}

impl ClipGrads {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            locals: Matrix::zeros(rows, cols),
            locals_twin: Matrix::zeros(rows, cols),
            global_slices: Matrix::zeros(rows, cols),
            local_anchors: Matrix::zeros(rows, cols),
        }
    }

    pub fn norm_squared(&self) -> f64 {
        [&self.locals, &self.locals_twin, &self.global_slices, &self.local_anchors]
            .iter()
            .map(|m| m.norm().powi(2))
            .sum()
    }
}

/// Loss value with exact gradients for every input matrix.
#[derive(Debug, Clone)]
pub struct LossOutput<G> {
    pub value: f64,
    /// Loss of each anchor term before reduction.
    pub per_term: Vec<f64>,
    /// Negative pairs in each anchor's denominator.
    pub negatives_per_anchor: Vec<usize>,
    pub grads: G,
}

/// Unit rows and the original norms of one input matrix.
struct UnitRows {
    unit: Matrix,
    norms: Vec<f64>,
}

impl UnitRows {
    fn new(m: &Matrix) -> Self {
        let mut unit = m.clone();
        let mut norms = Vec::with_capacity(m.rows());
        for i in 0..m.rows() {
            let r = unit.row_mut(i);
            let n = l2(r);
            r.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        Self { unit, norms }
    }
}

#[derive(Clone, Copy)]
struct RowId {
    view: usize,
    row: usize,
}

/// Scores one anchor against `candidates`, accumulates `scale * dL/dx` into
/// `grads` and returns the unscaled term loss `-log softmax(logits)[positive]`.
fn contrastive_term(
    views: &[UnitRows],
    anchor: RowId,
    candidates: &[RowId],
    positive: usize,
    tau: f64,
    scale: f64,
    grads: &mut [&mut Matrix],
) -> f64 {
    let a_hat = views[anchor.view].unit.row(anchor.row);
    let cosines: Vec<f64> = candidates
        .iter()
        .map(|c| dot(a_hat, views[c.view].unit.row(c.row)))
        .collect();
    let max = cosines.iter().copied().fold(f64::NEG_INFINITY, f64::max) / tau;
    let sum_exp: f64 = cosines.iter().map(|c| (c / tau - max).exp()).sum();
    let log_den = max + sum_exp.ln();
    let loss = log_den - cosines[positive] / tau;

    // dL/dcos_t = (p_t - [t == positive]) / tau
    let dim = a_hat.len();
    let mut anchor_acc = vec![0.0; dim];
    let mut cos_acc = 0.0;
    for (t, (c, &cos)) in candidates.iter().zip(&cosines).enumerate() {
        let p = (cos / tau - log_den).exp();
        let coef = scale * (p - if t == positive { 1.0 } else { 0.0 }) / tau;
        if coef == 0.0 {
            continue;
        }
        let b_hat = views[c.view].unit.row(c.row);
        for (acc, &b) in anchor_acc.iter_mut().zip(b_hat) {
            *acc += coef * b;
        }
        cos_acc += coef * cos;
        // d cos / d b = (a_hat - cos * b_hat) / |b|
        let inv_nb = 1.0 / views[c.view].norms[c.row];
        let gb = grads[c.view].row_mut(c.row);
        for ((g, &a), &b) in gb.iter_mut().zip(a_hat).zip(b_hat) {
            *g += coef * inv_nb * (a - cos * b);
        }
    }
    let inv_na = 1.0 / views[anchor.view].norms[anchor.row];
    let ga = grads[anchor.view].row_mut(anchor.row);
    for ((g, &acc), &a) in ga.iter_mut().zip(&anchor_acc).zip(a_hat) {
        *g += inv_na * (acc - cos_acc * a);
    }
    loss
}

/// Anchor `i` of view 0 against every other row of view 0 and every row of
/// view 1; the positive is row `i` of view 1.
fn paired_view_terms(
    first: &Matrix,
    second: &Matrix,
    tau: f64,
    scale: f64,
) -> (Vec<f64>, Vec<usize>, Matrix, Matrix) {
    let n = first.rows();
    let views = [UnitRows::new(first), UnitRows::new(second)];
    let mut g0 = Matrix::zeros(n, first.cols());
    let mut g1 = Matrix::zeros(n, first.cols());
    let mut per_term = Vec::with_capacity(n);
    let mut negatives = Vec::with_capacity(n);
    let mut candidates = Vec::with_capacity(2 * n);
    for i in 0..n {
        candidates.clear();
        candidates.extend((0..n).filter(|&j| j != i).map(|row| RowId { view: 0, row }));
        let positive = candidates.len() + i;
        candidates.extend((0..n).map(|row| RowId { view: 1, row }));
        negatives.push(candidates.len() - 1);
        let term = contrastive_term(
            &views,
            RowId { view: 0, row: i },
            &candidates,
            positive,
            tau,
            scale,
            &mut [&mut g0, &mut g1],
        );
        per_term.push(term);
    }
    (per_term, negatives, g0, g1)
}

/// Instance contrastive loss, averaged over the `N` instances of the batch.
pub fn instance_contrastive_loss(
    batch: &EmbeddingBatch,
    tau: Temperature,
) -> Result<LossOutput<BatchGrads>> {
    let n = batch.len();
    let scale = 1.0 / n as f64;
    let (per_term, negatives, g0, g1) =
        paired_view_terms(&batch.embeddings, &batch.twins, tau.get(), scale);
    let value = per_term.iter().sum::<f64>() * scale;
    Ok(LossOutput {
        value,
        per_term,
        negatives_per_anchor: negatives,
        grads: BatchGrads {
            embeddings: g0,
            twins: g1,
        },
    })
}

/// Local-local temporal loss of one instance, summed over its `N_T`
/// segments. Only `locals` and `locals_twin` participate.
pub fn local_local_loss(clips: &TemporalClipSet, tau: Temperature) -> Result<LossOutput<ClipGrads>> {
    let (per_term, negatives, g0, g1) =
        paired_view_terms(&clips.locals, &clips.locals_twin, tau.get(), 1.0);
    let (rows, cols) = clips.locals.shape();
    let mut grads = ClipGrads::zeros(rows, cols);
    grads.locals = g0;
    grads.locals_twin = g1;
    Ok(LossOutput {
        value: per_term.iter().sum(),
        per_term,
        negatives_per_anchor: negatives,
        grads,
    })
}

/// Global-local temporal loss of one instance. Each timestamp contributes
/// two reciprocal terms: the local anchor against all global slices and the
/// global slice against all local anchors. `per_term[k]` is their sum.
pub fn global_local_loss(clips: &TemporalClipSet, tau: Temperature) -> Result<LossOutput<ClipGrads>> {
    const GLOBAL: usize = 0;
    const LOCAL: usize = 1;
    let n = clips.segments();
    let views = [UnitRows::new(&clips.global_slices), UnitRows::new(&clips.local_anchors)];
    let mut g_global = Matrix::zeros(n, clips.dim());
    let mut g_local = Matrix::zeros(n, clips.dim());
    let all_global: Vec<RowId> = (0..n).map(|row| RowId { view: GLOBAL, row }).collect();
    let all_local: Vec<RowId> = (0..n).map(|row| RowId { view: LOCAL, row }).collect();
    let mut per_term = Vec::with_capacity(n);
    for k in 0..n {
        let mut grads = [&mut g_global, &mut g_local];
        let local_anchor = contrastive_term(
            &views,
            RowId { view: LOCAL, row: k },
            &all_global,
            k,
            tau.get(),
            1.0,
            &mut grads,
        );
        let global_anchor = contrastive_term(
            &views,
            RowId { view: GLOBAL, row: k },
            &all_local,
            k,
            tau.get(),
            1.0,
            &mut grads,
        );
        per_term.push(local_anchor + global_anchor);
    }
    let mut grads = ClipGrads::zeros(n, clips.dim());
    grads.global_slices = g_global;
    grads.local_anchors = g_local;
    Ok(LossOutput {
        value: per_term.iter().sum(),
        per_term,
        negatives_per_anchor: vec![n - 1; 2 * n],
        grads,
    })
}

/// Weights of the instance, local-local and global-local components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossWeights {
    pub instance: f64,
    pub local_local: f64,
    pub global_local: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            instance: 1.0,
            local_local: 1.0,
            global_local: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(instance: f64, local_local: f64, global_local: f64) -> Result<Self> {
        if ![instance, local_local, global_local].iter().all(|w| w.is_finite()) {
            return Err(Error::param("weights", "loss weights must be finite"));
        }
        Ok(Self {
            instance,
            local_local,
            global_local,
        })
    }
}

#[derive(Debug, Clone)]
pub struct CombinedOutput {
    pub value: f64,
    pub instance: f64,
    /// Mean local-local loss over the clip sets.
    pub local_local: f64,
    /// Mean global-local loss over the clip sets.
    pub global_local: f64,
    pub batch_grads: BatchGrads,
    pub clip_grads: Vec<ClipGrads>,
}

impl CombinedOutput {
    pub fn grad_norm(&self) -> f64 {
        (self.batch_grads.norm_squared()
            + self.clip_grads.iter().map(ClipGrads::norm_squared).sum::<f64>())
        .sqrt()
    }
}

/// `w_ic * L_IC + w_ll * mean(L_LL) + w_gl * mean(L_GL)`, with gradients.
pub fn combined_tclr_loss(
    batch: &EmbeddingBatch,
    clip_sets: &[TemporalClipSet],
    tau: Temperature,
    weights: LossWeights,
) -> Result<CombinedOutput> {
    if clip_sets.is_empty() {
        return Err(Error::Empty("clip sets"));
    }
    let inv_sets = 1.0 / clip_sets.len() as f64;
    let ic = instance_contrastive_loss(batch, tau)?;
    let mut batch_grads = ic.grads;
    batch_grads.embeddings.scale(weights.instance);
    batch_grads.twins.scale(weights.instance);

    let mut ll_sum = 0.0;
    let mut gl_sum = 0.0;
    let mut clip_grads = Vec::with_capacity(clip_sets.len());
    for clips in clip_sets {
        let ll = local_local_loss(clips, tau)?;
        let gl = global_local_loss(clips, tau)?;
        ll_sum += ll.value;
        gl_sum += gl.value;
        let (wl, wg) = (weights.local_local * inv_sets, weights.global_local * inv_sets);
        let mut g = ll.grads;
        g.locals.scale(wl);
        g.locals_twin.scale(wl);
        let mut gs = gl.grads.global_slices;
        gs.scale(wg);
        let mut la = gl.grads.local_anchors;
        la.scale(wg);
        g.global_slices = gs;
        g.local_anchors = la;
        clip_grads.push(g);
    }
    let local_local = ll_sum * inv_sets;
    let global_local = gl_sum * inv_sets;
    let value = weights.instance * ic.value
        + weights.local_local * local_local
        + weights.global_local * global_local;
    Ok(CombinedOutput {
        value,
        instance: ic.value,
        local_local,
        global_local,
        batch_grads,
        clip_grads,
    })
}
