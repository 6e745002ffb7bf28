//! Loss, batch gradients, AdamW, and the search / fixed-architecture drivers.
//!
//! Randomness: every stream is a ChaCha8 generator seeded with the run seed and
//! a distinct stream id. Stream 0 initializes parameters; epoch `e` shuffles
//! with stream `2e + 1` and samples dropout masks with stream `2e + 2`.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::CandidateDescriptor;
use crate::data::{FeatureDataset, FeatureSequence, Split};
use crate::diffqas::{discretize, logit_gradient, warmup_weights, SearchState, StructuralWeights, WeightSnapshot};
use crate::engine::{self, Weights};
use crate::error::{Error, Result};
use crate::head::{softmax, DropoutMask, HeadConfig, HeadParams, Mode, ParamGroup};
use crate::metrics::{compute_metrics, MetricsReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Worker threads for per-sample passes. Results do not depend on it.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 5e-5,
            weight_decay: 1e-2,
            epochs: 50,
            warmup_epochs: 5,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive and finite");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be >= 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must be in [0, 1)");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("epsilon must be positive");
        }
        if self.threads == 0 {
            return bad("threads must be >= 1");
        }
        Ok(())
    }
}

pub(crate) fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Maps `f` over `items` on up to `threads` scoped workers, keeping input order.
fn parallel_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(usize, &T) -> R + Sync) -> Vec<R> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let f = &f;
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                scope.spawn(move || {
                    part.iter()
                        .enumerate()
                        .map(|(i, x)| f(c * chunk + i, x))
                        .collect::<Vec<R>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

/// `-log softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Loss and `∂loss/∂logits = softmax - onehot`.
pub fn cross_entropy_grad(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let mut g = softmax(logits);
    g[label] -= 1.0;
    (cross_entropy(logits, label), g)
}

/// The architecture a gradient is taken through.
#[derive(Debug, Clone, Copy)]
pub enum Arch<'a> {
    Fixed(usize, usize),
    Search(&'a StructuralWeights),
}

impl Arch<'_> {
    fn weights(&self) -> Weights {
        match self {
            Arch::Fixed(a, b) => Weights::one_hot(*a, *b),
            Arch::Search(sw) => sw.weights(),
        }
    }
}

/// A flat vector aligned to the canonical parameter ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    pub values: Vec<f64>,
    pub layout: Vec<(ParamGroup, Range<usize>)>,
}

impl GradientVector {
    pub fn group(&self, group: ParamGroup) -> Option<&[f64]> {
        self.layout
            .iter()
            .find(|(g, _)| *g == group)
            .map(|(_, r)| &self.values[r.clone()])
    }

    /// Errors on the first group holding a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        for (g, r) in &self.layout {
            if self.values[r.clone()].iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { group: g.name() });
            }
        }
        Ok(())
    }
}

/// Head parameters followed, when searching, by the two structural-logit groups.
pub fn flatten(params: &HeadParams, sw: Option<&StructuralWeights>) -> GradientVector {
    let mut values = Vec::with_capacity(params.len() + 48);
    let mut layout = Vec::new();
    let mut push = |g: ParamGroup, v: &[f64]| {
        layout.push((g, values.len()..values.len() + v.len()));
        values.extend_from_slice(v);
    };
    for (g, v) in params.groups() {
        push(g, v);
    }
    if let Some(sw) = sw {
        push(ParamGroup::StructuralTimestep, &sw.ts_logits);
        push(ParamGroup::StructuralQff, &sw.qff_logits);
    }
    GradientVector { values, layout }
}

/// Inverse of [`flatten`] for the head parameters (structural entries are ignored).
pub fn unflatten(flat: &[f64], params: &mut HeadParams) {
    let mut at = 0;
    for (_, v) in params.groups_mut() {
        v.copy_from_slice(&flat[at..at + v.len()]);
        at += v.len();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    pub loss: f64,
    pub grad: GradientVector,
}

/// Exact gradient of the mean cross-entropy over `batch`.
///
/// `masks` supplies one dropout mask per sample (training mode) or is `None`
/// (evaluation mode). Per-sample gradients are summed in batch order.
pub fn batch_gradient(
    batch: &[&FeatureSequence],
    masks: Option<&[DropoutMask]>,
    params: &HeadParams,
    cfg: &HeadConfig,
    arch: Arch<'_>,
) -> Result<BatchGradient> {
    batch_gradient_threaded(batch, masks, params, cfg, arch, 1)
}

/// [`batch_gradient`] with per-sample passes spread over `threads` workers.
pub fn batch_gradient_threaded(
    batch: &[&FeatureSequence],
    masks: Option<&[DropoutMask]>,
    params: &HeadParams,
    cfg: &HeadConfig,
    arch: Arch<'_>,
    threads: usize,
) -> Result<BatchGradient> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let weights = arch.weights();
    let per_sample = parallel_map(batch, threads, |i, sample| -> Result<(f64, engine::Backward)> {
        let mode = match masks {
            Some(m) => Mode::Train(&m[i]),
            None => Mode::Eval,
        };
        let fwd = engine::forward(sample, params, cfg, &weights, mode, true)?;
        let (l, dlogits) = cross_entropy_grad(&fwd.logits, sample.label);
        Ok((l, engine::backward(&fwd, params, cfg, &weights, &dlogits)))
    });
    let mut total = HeadParams::zeros(cfg);
    let mut dw_ts = vec![0.0; weights.ts.len()];
    let mut dw_qff = vec![0.0; weights.qff.len()];
    let mut loss = 0.0;
    for r in per_sample {
        let (l, back) = r?;
        loss += l;
        for ((_, acc), (_, g)) in total.groups_mut().into_iter().zip(back.grads.groups()) {
            acc.iter_mut().zip(g).for_each(|(a, g)| *a += g);
        }
        dw_ts.iter_mut().zip(&back.ts_weights).for_each(|(a, g)| *a += g);
        dw_qff.iter_mut().zip(&back.qff_weights).for_each(|(a, g)| *a += g);
    }
    let scale = 1.0 / batch.len() as f64;
    let structural = match arch {
        Arch::Search(_) => Some(StructuralWeights {
            ts_logits: logit_gradient(&weights.ts, &dw_ts),
            qff_logits: logit_gradient(&weights.qff, &dw_qff),
            frozen: false,
        }),
        Arch::Fixed(..) => None,
    };
    let mut grad = flatten(&total, structural.as_ref());
    grad.values.iter_mut().for_each(|g| *g *= scale);
    grad.check_finite()?;
    Ok(BatchGradient {
        loss: loss * scale,
        grad,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamWState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One AdamW update with decoupled decay on the coordinates where `decay` is true.
pub fn adamw_step(
    values: &mut [f64],
    grads: &[f64],
    decay: &[bool],
    state: &mut AdamWState,
    cfg: &TrainConfig,
) -> Result<()> {
    let n = values.len();
    if grads.len() != n || decay.len() != n || state.m.len() != n {
        return Err(Error::DimensionMismatch {
            context: "AdamW vectors",
            expected: n,
            got: grads.len(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let lr = cfg.learning_rate;
    for i in 0..n {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        if decay[i] {
            values[i] -= lr * cfg.weight_decay * values[i];
        }
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        values[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

fn decay_mask(g: &GradientVector) -> Vec<bool> {
    let mut mask = vec![false; g.values.len()];
    for (group, r) in &g.layout {
        mask[r.clone()].fill(group.decays());
    }
    mask
}

/// Optimizer over the head parameters, one flat vector in canonical order.
struct HeadOptimizer {
    state: AdamWState,
    decay: Vec<bool>,
}

impl HeadOptimizer {
    fn new(params: &HeadParams) -> Self {
        let flat = flatten(params, None);
        Self {
            state: AdamWState::new(flat.values.len()),
            decay: decay_mask(&flat),
        }
    }

    fn step(&mut self, params: &mut HeadParams, grads: &[f64], cfg: &TrainConfig) -> Result<()> {
        let mut flat = flatten(params, None).values;
        let len = flat.len();
        adamw_step(&mut flat, &grads[..len], &self.decay, &mut self.state, cfg)?;
        unflatten(&flat, params);
        Ok(())
    }
}

/// Predicted classes and mean loss over a split.
pub fn predict(
    ds: &FeatureDataset,
    split: Split,
    params: &HeadParams,
    cfg: &HeadConfig,
    arch: Arch<'_>,
    threads: usize,
) -> Result<(Vec<usize>, f64)> {
    let weights = arch.weights();
    let samples: Vec<&FeatureSequence> = ds.split(split).collect();
    let logits = parallel_map(&samples, threads, |_, s| {
        engine::forward(s, params, cfg, &weights, Mode::Eval, false).map(|f| f.logits)
    });
    let mut preds = Vec::with_capacity(samples.len());
    let mut loss = 0.0;
    for (sample, logits) in samples.iter().zip(logits) {
        let logits = logits?;
        loss += cross_entropy(&logits, sample.label);
        let mut best = 0;
        for (k, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = k;
            }
        }
        preds.push(best);
    }
    let n = preds.len().max(1) as f64;
    Ok((preds, loss / n))
}

pub fn evaluate(
    ds: &FeatureDataset,
    split: Split,
    params: &HeadParams,
    cfg: &HeadConfig,
    arch: Arch<'_>,
    threads: usize,
) -> Result<MetricsReport> {
    let (preds, _) = predict(ds, split, params, cfg, arch, threads)?;
    let labels: Vec<usize> = ds.split(split).map(|s| s.label).collect();
    compute_metrics(&preds, &labels, ds.dims.n_classes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub train: MetricsReport,
    pub val: MetricsReport,
    pub test: MetricsReport,
}

pub fn evaluate_all(
    ds: &FeatureDataset,
    params: &HeadParams,
    cfg: &HeadConfig,
    arch: Arch<'_>,
    threads: usize,
) -> Result<SplitMetrics> {
    Ok(SplitMetrics {
        train: evaluate(ds, Split::Train, params, cfg, arch, threads)?,
        val: evaluate(ds, Split::Val, params, cfg, arch, threads)?,
        test: evaluate(ds, Split::Test, params, cfg, arch, threads)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

fn check_inputs(ds: &FeatureDataset, cfg: &HeadConfig, tc: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    tc.validate()?;
    ds.require_nonempty_splits()?;
    if (ds.dims.seq_len, ds.dims.feat_dim, ds.dims.n_classes) != (cfg.seq_len, cfg.feat_dim, cfg.n_classes) {
        return Err(Error::InvalidConfig(format!(
            "dataset dims {:?} do not match head config (seq_len {}, feat_dim {}, n_classes {})",
            ds.dims, cfg.seq_len, cfg.feat_dim, cfg.n_classes
        )));
    }
    Ok(())
}

/// Shuffled mini-batches and their dropout masks for one epoch.
fn epoch_batches(
    ds: &FeatureDataset,
    cfg: &HeadConfig,
    tc: &TrainConfig,
    epoch: usize,
) -> Vec<(Vec<usize>, Vec<DropoutMask>)> {
    let mut order = ds.splits.get(Split::Train).to_vec();
    order.shuffle(&mut rng_stream(tc.seed, 2 * epoch as u64 + 1));
    let mut drop_rng = rng_stream(tc.seed, 2 * epoch as u64 + 2);
    order
        .chunks(tc.batch_size)
        .map(|idx| {
            let masks = idx
                .iter()
                .map(|_| DropoutMask::sample(&mut drop_rng, cfg.seq_len, cfg.feat_dim, cfg.dropout_rate))
                .collect();
            (idx.to_vec(), masks)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub architecture: (CandidateDescriptor, CandidateDescriptor),
    pub state: SearchState,
    pub history: Vec<EpochLog>,
    /// Ensemble metrics after the final epoch.
    pub ensemble: SplitMetrics,
}

impl SearchResult {
    pub fn trajectory(&self) -> &[WeightSnapshot] {
        &self.state.trajectory
    }
}

/// Warmup with frozen uniform weights, joint training, then argmax discretization.
pub fn run_search(ds: &FeatureDataset, cfg: &HeadConfig, tc: &TrainConfig) -> Result<SearchResult> {
    check_inputs(ds, cfg, tc)?;
    let params = HeadParams::init(cfg, &mut rng_stream(tc.seed, 0));
    let mut state = SearchState::new(params);
    let mut head_opt = HeadOptimizer::new(&state.params);
    let mut structural_opt = AdamWState::new(48);
    let no_decay = vec![false; 48];
    let mut history = Vec::new();

    for epoch in 0..tc.epochs {
        state.weights = warmup_weights(epoch, tc.warmup_epochs, &state.weights);
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for (idx, masks) in epoch_batches(ds, cfg, tc, epoch) {
            let batch: Vec<&FeatureSequence> = idx.iter().map(|&i| &ds.samples[i]).collect();
            let g = loop {
                match batch_gradient_threaded(&batch, Some(&masks), &state.params, cfg, Arch::Search(&state.weights), tc.threads) {
                    Err(Error::CandidateCollapse { block, candidate }) => {
                        log::warn!("epoch {epoch}: {block} candidate {candidate} collapsed; excluding it");
                        state.weights.exclude(block, candidate)?;
                    }
                    other => break other?,
                }
            };
            loss_sum += g.loss;
            n_batches += 1;
            head_opt.step(&mut state.params, &g.grad.values, tc)?;
            if !state.weights.frozen {
                let head_len = state.params.len();
                let mut logits = [state.weights.ts_logits.clone(), state.weights.qff_logits.clone()].concat();
                adamw_step(&mut logits, &g.grad.values[head_len..], &no_decay, &mut structural_opt, tc)?;
                state.weights.ts_logits.copy_from_slice(&logits[..24]);
                state.weights.qff_logits.copy_from_slice(&logits[24..]);
            }
        }
        let (preds, val_loss) = predict(ds, Split::Val, &state.params, cfg, Arch::Search(&state.weights), tc.threads)?;
        let labels: Vec<usize> = ds.split(Split::Val).map(|s| s.label).collect();
        let val = compute_metrics(&preds, &labels, cfg.n_classes)?;
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / n_batches as f64,
            val_loss,
            val_accuracy: val.accuracy,
        };
        log::info!(
            "search epoch {epoch}: train loss {:.4}, val loss {:.4}, val acc {:.3}",
            entry.train_loss,
            entry.val_loss,
            entry.val_accuracy
        );
        history.push(entry);
        state.log_epoch();
    }
    let ensemble = evaluate_all(ds, &state.params, cfg, Arch::Search(&state.weights), tc.threads)?;
    Ok(SearchResult {
        architecture: discretize(&state.weights, cfg),
        state,
        history,
        ensemble,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedResult {
    pub params: HeadParams,
    pub history: Vec<EpochLog>,
    pub metrics: SplitMetrics,
}

/// Trains one architecture from a fresh seeded initialization.
pub fn run_fixed(
    ds: &FeatureDataset,
    arch: (&CandidateDescriptor, &CandidateDescriptor),
    cfg: &HeadConfig,
    tc: &TrainConfig,
) -> Result<FixedResult> {
    check_inputs(ds, cfg, tc)?;
    for (desc, layers, block) in [(arch.0, cfg.timestep_layers, "timestep"), (arch.1, cfg.qff_layers, "qff")] {
        if desc.layers() != layers {
            return Err(Error::InvalidConfig(format!(
                "{block} candidate {desc} has {} layers, config fixes {layers}",
                desc.layers()
            )));
        }
    }
    let fixed = Arch::Fixed(arch.0.index(), arch.1.index());
    let mut params = HeadParams::init(cfg, &mut rng_stream(tc.seed, 0));
    let mut opt = HeadOptimizer::new(&params);
    let mut history = Vec::new();
    for epoch in 0..tc.epochs {
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for (idx, masks) in epoch_batches(ds, cfg, tc, epoch) {
            let batch: Vec<&FeatureSequence> = idx.iter().map(|&i| &ds.samples[i]).collect();
            let g = batch_gradient_threaded(&batch, Some(&masks), &params, cfg, fixed, tc.threads)?;
            loss_sum += g.loss;
            n_batches += 1;
            opt.step(&mut params, &g.grad.values, tc)?;
        }
        let (preds, val_loss) = predict(ds, Split::Val, &params, cfg, fixed, tc.threads)?;
        let labels: Vec<usize> = ds.split(Split::Val).map(|s| s.label).collect();
        let val = compute_metrics(&preds, &labels, cfg.n_classes)?;
        log::info!("train epoch {epoch}: loss {:.4}, val acc {:.3}", loss_sum / n_batches as f64, val.accuracy);
        history.push(EpochLog {
            epoch,
            train_loss: loss_sum / n_batches as f64,
            val_loss,
            val_accuracy: val.accuracy,
        });
    }
    let metrics = evaluate_all(ds, &params, cfg, fixed, tc.threads)?;
    Ok(FixedResult {
        params,
        history,
        metrics,
    })
}

/// One coordinate of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordCheck {
    pub group: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl CoordCheck {
    /// `|a - n| / max(|a|, |n|)`, zero when both vanish.
    pub fn relative_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.analytic - self.numeric).abs() / scale
        }
    }

    /// Agreement within `rel`, or an absolute difference below `abs_floor`.
    pub fn passes(&self, rel: f64, abs_floor: f64) -> bool {
        (self.analytic - self.numeric).abs() < abs_floor || self.relative_error() < rel
    }
}

/// Compares [`batch_gradient`] against central differences of the batch loss.
///
/// Coordinates are drawn round-robin over every parameter group (structural
/// groups included when `arch` is a search), uniformly within each group,
/// until `n_coords` have been checked.
#[allow(clippy::too_many_arguments)]
pub fn finite_difference_check<R: rand::Rng>(
    batch: &[&FeatureSequence],
    masks: Option<&[DropoutMask]>,
    params: &HeadParams,
    cfg: &HeadConfig,
    arch: Arch<'_>,
    n_coords: usize,
    h: f64,
    rng: &mut R,
) -> Result<Vec<CoordCheck>> {
    let analytic = batch_gradient(batch, masks, params, cfg, arch)?.grad;
    let sw = match arch {
        Arch::Search(sw) => Some(sw.clone()),
        Arch::Fixed(..) => None,
    };
    let base = flatten(params, sw.as_ref());
    let loss_at = |flat: &[f64]| -> Result<f64> {
        let mut p = params.clone();
        unflatten(flat, &mut p);
        let s = sw.as_ref().map(|sw| {
            let head = p.len();
            StructuralWeights {
                ts_logits: flat[head..head + 24].to_vec(),
                qff_logits: flat[head + 24..].to_vec(),
                frozen: sw.frozen,
            }
        });
        let a = match (&s, arch) {
            (Some(s), _) => Arch::Search(s),
            (None, fixed) => fixed,
        };
        Ok(batch_gradient(batch, masks, &p, cfg, a)?.loss)
    };
    let mut out = Vec::with_capacity(n_coords);
    let mut flat = base.values.clone();
    'outer: loop {
        for (group, range) in &base.layout {
            if out.len() == n_coords {
                break 'outer;
            }
            let index = rng.random_range(0..range.len());
            let at = range.start + index;
            let x = flat[at];
            flat[at] = x + h;
            let up = loss_at(&flat)?;
            flat[at] = x - h;
            let down = loss_at(&flat)?;
            flat[at] = x;
            out.push(CoordCheck {
                group: group.name(),
                index,
                analytic: analytic.values[at],
                numeric: (up - down) / (2.0 * h),
            });
        }
    }
    Ok(out)
}
