//! Factorized architecture search over the two circuit blocks.
//!
//! Each block carries 24 structural logits whose softmax mixes the block's
//! candidates. Timestep-block states are mixed as a density matrix and
//! QFF-block readouts as expectation vectors, so one sample costs 24 + 24
//! block evaluations while matching the full 24 × 24 joint ensemble.

use serde::{Deserialize, Serialize};

use crate::circuit::{CandidateDescriptor, CANDIDATES_PER_BLOCK};
use crate::data::FeatureSequence;
use crate::engine::{self, Weights};
use crate::error::{Block, Error, Result};
use crate::head::{softmax, HeadConfig, HeadParams, Mode};
use crate::linalg::{DensityMatrix, StateVector};

/// Structural logits of both blocks. An excluded candidate has logit `-∞`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralWeights {
    pub ts_logits: Vec<f64>,
    pub qff_logits: Vec<f64>,
    pub frozen: bool,
}

impl Default for StructuralWeights {
    fn default() -> Self {
        Self {
            ts_logits: vec![0.0; CANDIDATES_PER_BLOCK],
            qff_logits: vec![0.0; CANDIDATES_PER_BLOCK],
            frozen: false,
        }
    }
}

fn block_weights(logits: &[f64], frozen: bool) -> Vec<f64> {
    if frozen {
        let alive = logits.iter().filter(|l| l.is_finite()).count() as f64;
        logits
            .iter()
            .map(|l| if l.is_finite() { 1.0 / alive } else { 0.0 })
            .collect()
    } else {
        softmax(logits)
    }
}

impl StructuralWeights {
    pub fn logits(&self, block: Block) -> &[f64] {
        match block {
            Block::Timestep => &self.ts_logits,
            Block::Qff => &self.qff_logits,
        }
    }

    pub fn logits_mut(&mut self, block: Block) -> &mut [f64] {
        match block {
            Block::Timestep => &mut self.ts_logits,
            Block::Qff => &mut self.qff_logits,
        }
    }

    /// Softmax weights of one block; exactly uniform over live candidates while frozen.
    pub fn block(&self, block: Block) -> Vec<f64> {
        block_weights(self.logits(block), self.frozen)
    }

    pub fn weights(&self) -> Weights {
        Weights {
            ts: self.block(Block::Timestep),
            qff: self.block(Block::Qff),
        }
    }

    /// Drops a candidate from the search by pinning its logit at `-∞`.
    pub fn exclude(&mut self, block: Block, candidate: usize) -> Result<()> {
        let logits = self.logits_mut(block);
        logits[candidate] = f64::NEG_INFINITY;
        if logits.iter().all(|l| !l.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "every {block} candidate has been excluded"
            )));
        }
        Ok(())
    }

    pub fn check(&self) -> Result<()> {
        for block in [Block::Timestep, Block::Qff] {
            let l = self.logits(block);
            if l.len() != CANDIDATES_PER_BLOCK {
                return Err(Error::DimensionMismatch {
                    context: "structural logits",
                    expected: CANDIDATES_PER_BLOCK,
                    got: l.len(),
                });
            }
            if l.iter().any(|x| x.is_nan() || *x == f64::INFINITY) || l.iter().all(|x| !x.is_finite()) {
                return Err(Error::InvalidConfig(format!("invalid {block} logits")));
            }
        }
        Ok(())
    }
}

/// Chain rule through one block's softmax: `∂L/∂l_i = w_i (g_i - Σ_j w_j g_j)`.
pub fn logit_gradient(weights: &[f64], dweights: &[f64]) -> Vec<f64> {
    let mean: f64 = weights.iter().zip(dweights).map(|(w, g)| w * g).sum();
    weights.iter().zip(dweights).map(|(w, g)| w * (g - mean)).collect()
}

/// Per-epoch snapshot of both blocks' weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSnapshot {
    pub epoch: usize,
    pub ts: Vec<f64>,
    pub qff: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchState {
    pub weights: StructuralWeights,
    pub params: HeadParams,
    pub epoch: usize,
    pub trajectory: Vec<WeightSnapshot>,
}

impl SearchState {
    pub fn new(params: HeadParams) -> Self {
        Self {
            weights: StructuralWeights::default(),
            params,
            epoch: 0,
            trajectory: Vec::new(),
        }
    }

    /// Records the current weights for the epoch just finished.
    pub fn log_epoch(&mut self) {
        let w = self.weights.weights();
        self.trajectory.push(WeightSnapshot {
            epoch: self.epoch,
            ts: w.ts,
            qff: w.qff,
        });
        self.epoch += 1;
    }
}

/// Sets the frozen flag for `epoch`: frozen while `epoch < warmup_epochs`.
pub fn warmup_weights(epoch: usize, warmup_epochs: usize, sw: &StructuralWeights) -> StructuralWeights {
    StructuralWeights {
        frozen: epoch < warmup_epochs,
        ..sw.clone()
    }
}

/// Logits of the factorized ensemble.
pub fn ensemble_forward(
    sample: &FeatureSequence,
    sw: &StructuralWeights,
    params: &HeadParams,
    cfg: &HeadConfig,
    mode: Mode<'_>,
) -> Result<Vec<f64>> {
    sw.check()?;
    Ok(engine::forward(sample, params, cfg, &sw.weights(), mode, false)?.logits)
}

/// `ρ_mix = Σ_a w_a |ψ_a⟩⟨ψ_a|` over the timestep candidates.
pub fn mixture_state(
    sample: &FeatureSequence,
    sw: &StructuralWeights,
    params: &HeadParams,
    cfg: &HeadConfig,
    mode: Mode<'_>,
) -> Result<DensityMatrix> {
    sw.check()?;
    let w = sw.block(Block::Timestep);
    let states: Vec<(usize, StateVector)> = engine::timestep_states(sample, params, cfg, &w, mode)?
        .into_iter()
        .map(|(a, psi)| (a, StateVector::new(psi)))
        .collect();
    let parts: Vec<(f64, &StateVector)> = states.iter().map(|(a, s)| (w[*a], s)).collect();
    Ok(DensityMatrix::from_ensemble(&parts))
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointOracle {
    pub logits: Vec<f64>,
    /// Number of (timestep, QFF) pairs run through the fixed-architecture path.
    pub evaluations: usize,
}

/// Brute-force reference: `Σ_{a,b} w_a v_b f_{a,b}` over all 576 pairs, then the classifier.
pub fn joint_ensemble_oracle(
    sample: &FeatureSequence,
    sw: &StructuralWeights,
    params: &HeadParams,
    cfg: &HeadConfig,
) -> Result<JointOracle> {
    if cfg.n_qubits > 8 || cfg.seq_len > 8 {
        return Err(Error::ScaleGuard(format!(
            "joint oracle limited to 8 qubits and 8 timesteps, got {} and {}",
            cfg.n_qubits, cfg.seq_len
        )));
    }
    sw.check()?;
    let w = sw.weights();
    let mut features = vec![0.0; cfg.n_features()];
    let mut evaluations = 0;
    for a in 0..CANDIDATES_PER_BLOCK {
        for b in 0..CANDIDATES_PER_BLOCK {
            let pair = engine::forward(sample, params, cfg, &Weights::one_hot(a, b), Mode::Eval, false);
            evaluations += 1;
            let weight = w.ts[a] * w.qff[b];
            if weight == 0.0 {
                continue;
            }
            for (f, x) in features.iter_mut().zip(&pair?.features) {
                *f += weight * x;
            }
        }
    }
    Ok(JointOracle {
        logits: crate::head::classify(&features, &params.classifier)?,
        evaluations,
    })
}

fn argmax(w: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in w.iter().enumerate() {
        if x > w[best] {
            best = i;
        }
    }
    best
}

/// Highest-weight candidate per block; ties go to the lowest index.
pub fn discretize(sw: &StructuralWeights, cfg: &HeadConfig) -> (CandidateDescriptor, CandidateDescriptor) {
    let w = sw.weights();
    (
        cfg.timestep_candidates()[argmax(&w.ts)],
        cfg.qff_candidates()[argmax(&w.qff)],
    )
}
