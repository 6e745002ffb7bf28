//! The quantum readout head for one fixed (timestep, QFF) architecture pair.
//!
//! Per sample: every timestep's features are projected to normalized angles
//! that drive one timestep-candidate unitary `U_t`. The unitaries are mixed
//! into `M = Σ e^{iγ_t} p_t U_t`, a real polynomial `P_c(M)` is applied to
//! `|0…0⟩` and renormalized, the QFF circuit acts on the resulting state, and
//! single-qubit X/Y/Z expectations feed a linear classifier.
//!
//! The dense functions here ([`lcu_mix`], [`qff_apply`], [`measure_pauli`])
//! work on explicit matrices. [`timestep_block`] and [`forward_fixed`] go
//! through the statevector engine, which never materializes a unitary.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::circuit::{
    build_candidate_unitary, enumerate_candidates, param_count, CandidateDescriptor,
    CANDIDATES_PER_BLOCK,
};
use crate::data::FeatureSequence;
use crate::engine::{self, Weights};
use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, DensityMatrix, StateVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub n_qubits: usize,
    pub seq_len: usize,
    pub feat_dim: usize,
    pub n_classes: usize,
    pub qsvt_degree: usize,
    pub timestep_layers: usize,
    pub qff_layers: usize,
    pub dropout_rate: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            n_qubits: 8,
            seq_len: 4,
            feat_dim: 32,
            n_classes: 4,
            qsvt_degree: 3,
            timestep_layers: 2,
            qff_layers: 1,
            dropout_rate: 0.1,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(2..=10).contains(&self.n_qubits) {
            return bad(format!("n_qubits must be in 2..=10, got {}", self.n_qubits));
        }
        if self.seq_len == 0 || self.feat_dim == 0 {
            return bad("seq_len and feat_dim must be >= 1".into());
        }
        if self.n_classes < 2 {
            return bad("n_classes must be >= 2".into());
        }
        if self.qsvt_degree == 0 {
            return bad("qsvt_degree must be >= 1".into());
        }
        if self.timestep_layers == 0 || self.qff_layers == 0 {
            return bad("layer counts must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate));
        }
        Ok(())
    }

    /// Widest timestep-candidate angle vector: `layers · 2n`.
    pub fn n_angle_slots(&self) -> usize {
        self.timestep_candidates()
            .iter()
            .map(|c| param_count(c, self.n_qubits))
            .max()
            .unwrap_or(0)
    }

    pub fn timestep_candidates(&self) -> Vec<CandidateDescriptor> {
        enumerate_candidates(self.timestep_layers.max(1)).expect("layers >= 1")
    }

    pub fn qff_candidates(&self) -> Vec<CandidateDescriptor> {
        enumerate_candidates(self.qff_layers.max(1)).expect("layers >= 1")
    }

    pub fn n_features(&self) -> usize {
        3 * self.n_qubits
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    /// `n_angle_slots × feat_dim`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ProjectionParams {
    pub fn n_slots(&self) -> usize {
        self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcuParams {
    pub attn_logits: Vec<f64>,
    pub phases: Vec<f64>,
}

impl LcuParams {
    /// `softmax(attn_logits)`, the `|a_j|²` magnitudes.
    pub fn weights(&self) -> Vec<f64> {
        softmax(&self.attn_logits)
    }

    /// `e^{iγ_j} p_j`.
    pub fn coefficients(&self) -> Vec<Complex64> {
        self.weights()
            .iter()
            .zip(&self.phases)
            .map(|(&p, &g)| Complex64::from_polar(p, g))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QsvtParams {
    pub coeffs: Vec<f64>,
}

/// Raw (pre-sigmoid) angles, one vector per QFF candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QffParams {
    pub angles: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    /// `n_classes × 3n`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Every trainable value of the head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub projection: ProjectionParams,
    pub lcu: LcuParams,
    pub qsvt: QsvtParams,
    pub qff: QffParams,
    pub classifier: ClassifierParams,
}

/// Named slices of the canonical flat parameter ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    ProjectionWeight,
    ProjectionBias,
    LcuLogits,
    LcuPhases,
    QsvtCoeffs,
    QffAngles(usize),
    ClassifierWeight,
    ClassifierBias,
    StructuralTimestep,
    StructuralQff,
}

impl ParamGroup {
    pub fn name(&self) -> String {
        match self {
            ParamGroup::ProjectionWeight => "projection.weight".into(),
            ParamGroup::ProjectionBias => "projection.bias".into(),
            ParamGroup::LcuLogits => "lcu.attn_logits".into(),
            ParamGroup::LcuPhases => "lcu.phases".into(),
            ParamGroup::QsvtCoeffs => "qsvt.coeffs".into(),
            ParamGroup::QffAngles(b) => format!("qff.angles[{b}]"),
            ParamGroup::ClassifierWeight => "classifier.weight".into(),
            ParamGroup::ClassifierBias => "classifier.bias".into(),
            ParamGroup::StructuralTimestep => "structural.timestep".into(),
            ParamGroup::StructuralQff => "structural.qff".into(),
        }
    }

    /// Whether decoupled weight decay applies. Biases and structural logits are exempt.
    pub fn decays(&self) -> bool {
        !matches!(
            self,
            ParamGroup::ProjectionBias
                | ParamGroup::ClassifierBias
                | ParamGroup::StructuralTimestep
                | ParamGroup::StructuralQff
        )
    }

    pub fn is_structural(&self) -> bool {
        matches!(self, ParamGroup::StructuralTimestep | ParamGroup::StructuralQff)
    }
}

impl HeadParams {
    pub fn zeros(cfg: &HeadConfig) -> Self {
        let slots = cfg.n_angle_slots();
        let n = cfg.seq_len;
        Self {
            projection: ProjectionParams {
                weight: vec![0.0; slots * cfg.feat_dim],
                bias: vec![0.0; slots],
            },
            lcu: LcuParams {
                attn_logits: vec![0.0; n],
                phases: vec![0.0; n],
            },
            qsvt: QsvtParams {
                coeffs: vec![0.0; cfg.qsvt_degree + 1],
            },
            qff: QffParams {
                angles: cfg
                    .qff_candidates()
                    .iter()
                    .map(|c| vec![0.0; param_count(c, cfg.n_qubits)])
                    .collect(),
            },
            classifier: ClassifierParams {
                weight: vec![0.0; cfg.n_classes * cfg.n_features()],
                bias: vec![0.0; cfg.n_classes],
            },
        }
    }

    /// Seeded initialization.
    ///
    /// Linear layers are uniform in `±1/√fan_in`; LCU logits and phases start
    /// at zero; the polynomial starts as the identity map `P(M) = M`; raw QFF
    /// angles are uniform in `[-1, 1]`.
    pub fn init<R: Rng>(cfg: &HeadConfig, rng: &mut R) -> Self {
        let mut p = Self::zeros(cfg);
        let fill = |v: &mut [f64], bound: f64, rng: &mut R| {
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            v.iter_mut().for_each(|x| *x = dist.sample(rng));
        };
        let proj_bound = 1.0 / (cfg.feat_dim as f64).sqrt();
        fill(&mut p.projection.weight, proj_bound, rng);
        fill(&mut p.projection.bias, proj_bound, rng);
        for a in &mut p.qff.angles {
            fill(a, 1.0, rng);
        }
        let cls_bound = 1.0 / (cfg.n_features() as f64).sqrt();
        fill(&mut p.classifier.weight, cls_bound, rng);
        fill(&mut p.classifier.bias, cls_bound, rng);
        p.qsvt.coeffs[1] = 1.0;
        p
    }

    pub fn groups(&self) -> Vec<(ParamGroup, &[f64])> {
        let mut g: Vec<(ParamGroup, &[f64])> = vec![
            (ParamGroup::ProjectionWeight, &self.projection.weight),
            (ParamGroup::ProjectionBias, &self.projection.bias),
            (ParamGroup::LcuLogits, &self.lcu.attn_logits),
            (ParamGroup::LcuPhases, &self.lcu.phases),
            (ParamGroup::QsvtCoeffs, &self.qsvt.coeffs),
        ];
        g.extend(
            self.qff
                .angles
                .iter()
                .enumerate()
                .map(|(b, a)| (ParamGroup::QffAngles(b), a.as_slice())),
        );
        g.push((ParamGroup::ClassifierWeight, &self.classifier.weight));
        g.push((ParamGroup::ClassifierBias, &self.classifier.bias));
        g
    }

    pub fn groups_mut(&mut self) -> Vec<(ParamGroup, &mut [f64])> {
        let mut g: Vec<(ParamGroup, &mut [f64])> = vec![
            (ParamGroup::ProjectionWeight, &mut self.projection.weight),
            (ParamGroup::ProjectionBias, &mut self.projection.bias),
            (ParamGroup::LcuLogits, &mut self.lcu.attn_logits),
            (ParamGroup::LcuPhases, &mut self.lcu.phases),
            (ParamGroup::QsvtCoeffs, &mut self.qsvt.coeffs),
        ];
        g.extend(
            self.qff
                .angles
                .iter_mut()
                .enumerate()
                .map(|(b, a)| (ParamGroup::QffAngles(b), a.as_mut_slice())),
        );
        g.push((ParamGroup::ClassifierWeight, &mut self.classifier.weight));
        g.push((ParamGroup::ClassifierBias, &mut self.classifier.bias));
        g
    }

    pub fn len(&self) -> usize {
        self.groups().iter().map(|(_, v)| v.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks every group's shape against `cfg`.
    pub fn check_shapes(&self, cfg: &HeadConfig) -> Result<()> {
        let expected = Self::zeros(cfg);
        for ((group, have), (_, want)) in self.groups().iter().zip(expected.groups()) {
            if have.len() != want.len() {
                return Err(Error::InvalidConfig(format!(
                    "parameter group {} has {} values, expected {}",
                    group.name(),
                    have.len(),
                    want.len()
                )));
            }
        }
        if self.qff.angles.len() != CANDIDATES_PER_BLOCK {
            return Err(Error::InvalidConfig("expected 24 QFF angle sets".into()));
        }
        Ok(())
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Inverted-dropout mask over a whole sequence; entries are 0 or `1/(1-rate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub values: Vec<f64>,
}

impl DropoutMask {
    pub fn sample<R: Rng>(rng: &mut R, seq_len: usize, feat_dim: usize, rate: f64) -> Self {
        let keep = 1.0 / (1.0 - rate);
        Self {
            values: (0..seq_len * feat_dim)
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                .collect(),
        }
    }

    pub fn timestep(&self, t: usize, feat_dim: usize) -> &[f64] {
        &self.values[t * feat_dim..(t + 1) * feat_dim]
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Mode<'a> {
    Eval,
    Train(&'a DropoutMask),
}

/// `θ = sigmoid(W·(mask ⊙ x) + b)`, every component in `(0, 1)`.
pub fn project_features(x: &[f64], p: &ProjectionParams, mask: Option<&[f64]>) -> Result<Vec<f64>> {
    let d = x.len();
    if p.weight.len() != p.n_slots() * d {
        return Err(Error::DimensionMismatch {
            context: "projection input width",
            expected: p.weight.len() / p.n_slots().max(1),
            got: d,
        });
    }
    if let Some(m) = mask {
        if m.len() != d {
            return Err(Error::DimensionMismatch {
                context: "dropout mask",
                expected: d,
                got: m.len(),
            });
        }
    }
    Ok(engine::project(x, p, mask)
        .into_iter()
        .map(sigmoid)
        .collect())
}

/// `M = Σ_j e^{iγ_j} p_j U_j` with `p = softmax(attn_logits)`.
pub fn lcu_mix(unitaries: &[ComplexMatrix], lcu: &LcuParams) -> Result<ComplexMatrix> {
    let first = unitaries.first().ok_or(Error::Empty("unitary list"))?;
    if unitaries.len() != lcu.attn_logits.len() || lcu.phases.len() != lcu.attn_logits.len() {
        return Err(Error::DimensionMismatch {
            context: "LCU parameters",
            expected: unitaries.len(),
            got: lcu.attn_logits.len(),
        });
    }
    let mut m = ComplexMatrix::zeros(first.rows(), first.cols());
    for (u, beta) in unitaries.iter().zip(lcu.coefficients()) {
        if (u.rows(), u.cols()) != (first.rows(), first.cols()) {
            return Err(Error::DimensionMismatch {
                context: "LCU unitary dims",
                expected: first.rows(),
                got: u.rows(),
            });
        }
        m.add_scaled(beta, u);
    }
    Ok(m)
}

fn check_sample(sample: &FeatureSequence, cfg: &HeadConfig) -> Result<()> {
    if sample.seq_len != cfg.seq_len || sample.feat_dim != cfg.feat_dim {
        return Err(Error::DimensionMismatch {
            context: "sample shape vs head config",
            expected: cfg.seq_len * cfg.feat_dim,
            got: sample.features.len(),
        });
    }
    Ok(())
}

fn check_candidate(desc: &CandidateDescriptor, layers: usize, block: &str) -> Result<usize> {
    if desc.layers() != layers {
        return Err(Error::InvalidConfig(format!(
            "{block} candidate {desc} has {} layers, config fixes {layers}",
            desc.layers()
        )));
    }
    Ok(desc.index())
}

/// Normalized `P_c(M)|0…0⟩` for one timestep candidate.
#[allow(clippy::too_many_arguments)]
pub fn timestep_block(
    sample: &FeatureSequence,
    desc: &CandidateDescriptor,
    projection: &ProjectionParams,
    lcu: &LcuParams,
    qsvt: &QsvtParams,
    cfg: &HeadConfig,
    mode: Mode<'_>,
) -> Result<StateVector> {
    cfg.validate()?;
    check_sample(sample, cfg)?;
    check_candidate(desc, cfg.timestep_layers, "timestep")?;
    if lcu.attn_logits.len() != cfg.seq_len || qsvt.coeffs.is_empty() {
        return Err(Error::DimensionMismatch {
            context: "LCU/QSVT parameters",
            expected: cfg.seq_len,
            got: lcu.attn_logits.len(),
        });
    }
    let circuit = crate::circuit::compile(desc, cfg.n_qubits)?;
    let angles = engine::timestep_angles(sample, projection, mode);
    let betas = lcu.coefficients();
    let trace = engine::timestep_forward(&circuit, &angles, &betas, &qsvt.coeffs, false)?;
    Ok(StateVector::new(trace.psi))
}

/// `V ρ V†` with `V` the candidate at angles `sigmoid(angles_raw)`.
pub fn qff_apply(
    rho: &DensityMatrix,
    desc: &CandidateDescriptor,
    angles_raw: &[f64],
    cfg: &HeadConfig,
) -> Result<DensityMatrix> {
    let expected = param_count(desc, cfg.n_qubits);
    if angles_raw.len() != expected {
        return Err(Error::DimensionMismatch {
            context: "QFF angle vector",
            expected,
            got: angles_raw.len(),
        });
    }
    if rho.dim() != 1 << cfg.n_qubits {
        return Err(Error::DimensionMismatch {
            context: "QFF density matrix",
            expected: 1 << cfg.n_qubits,
            got: rho.dim(),
        });
    }
    let angles: Vec<f64> = angles_raw.iter().map(|&r| sigmoid(r)).collect();
    let v = build_candidate_unitary(desc, cfg.n_qubits, &angles)?;
    rho.conjugate_by(&v)
}

/// `[⟨X_0⟩…⟨X_{n-1}⟩, ⟨Y_0⟩…, ⟨Z_0⟩…]` of a density matrix.
pub fn measure_pauli(rho: &DensityMatrix, n_qubits: usize) -> Vec<f64> {
    let m = rho.matrix();
    let dim = rho.dim();
    let mut out = vec![0.0; 3 * n_qubits];
    for q in 0..n_qubits {
        let mask = 1 << (n_qubits - 1 - q);
        let (mut x, mut y, mut z) = (0.0, 0.0, 0.0);
        for i in 0..dim {
            if i & mask == 0 {
                let rij = m[(i, i | mask)];
                x += 2.0 * rij.re;
                y -= 2.0 * rij.im;
                z += m[(i, i)].re;
            } else {
                z -= m[(i, i)].re;
            }
        }
        out[q] = x;
        out[n_qubits + q] = y;
        out[2 * n_qubits + q] = z;
    }
    out
}

/// `W_c · features + b_c`.
pub fn classify(features: &[f64], cp: &ClassifierParams) -> Result<Vec<f64>> {
    let k = cp.bias.len();
    if k == 0 || cp.weight.len() != k * features.len() {
        return Err(Error::DimensionMismatch {
            context: "classifier input width",
            expected: cp.weight.len() / k.max(1),
            got: features.len(),
        });
    }
    Ok(cp
        .weight
        .chunks_exact(features.len())
        .zip(&cp.bias)
        .map(|(row, &b)| row.iter().zip(features).map(|(w, f)| w * f).sum::<f64>() + b)
        .collect())
}

/// Logits of the head for a fixed architecture pair.
pub fn forward_fixed(
    sample: &FeatureSequence,
    arch: (&CandidateDescriptor, &CandidateDescriptor),
    params: &HeadParams,
    cfg: &HeadConfig,
    mode: Mode<'_>,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_sample(sample, cfg)?;
    params.check_shapes(cfg)?;
    let ts = check_candidate(arch.0, cfg.timestep_layers, "timestep")?;
    let qff = check_candidate(arch.1, cfg.qff_layers, "qff")?;
    let weights = Weights::one_hot(ts, qff);
    let fwd = engine::forward(sample, params, cfg, &weights, mode, false)?;
    Ok(fwd.logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{Entangler, Init, Rotation};
    use crate::linalg::{self, matrix_polynomial, normalize_state, pauli};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> HeadConfig {
        HeadConfig {
            n_qubits: 3,
            seq_len: 3,
            feat_dim: 4,
            n_classes: 3,
            qsvt_degree: 3,
            timestep_layers: 2,
            qff_layers: 1,
            dropout_rate: 0.1,
        }
    }

    fn random_sample(cfg: &HeadConfig, rng: &mut ChaCha8Rng) -> FeatureSequence {
        let f = (0..cfg.seq_len * cfg.feat_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        FeatureSequence::new(f, cfg.seq_len, cfg.feat_dim, 0).unwrap()
    }

    fn random_params(cfg: &HeadConfig, rng: &mut ChaCha8Rng) -> HeadParams {
        let mut p = HeadParams::init(cfg, rng);
        for (_, v) in p.groups_mut() {
            v.iter_mut().for_each(|x| *x += rng.random_range(-0.5..0.5));
        }
        p
    }

    #[test]
    fn projection_examples() {
        let p = ProjectionParams {
            weight: vec![0.0; 6],
            bias: vec![0.0; 2],
        };
        assert_eq!(project_features(&[1.0, -3.0, 2.0], &p, None).unwrap(), vec![0.5, 0.5]);
        let p = ProjectionParams {
            weight: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            bias: vec![0.0; 2],
        };
        let x = [3f64.ln(), 0.0, 0.0];
        let out = project_features(&x, &p, None).unwrap();
        assert!((out[0] - 0.75).abs() < 1e-15);
        assert_eq!(out, project_features(&x, &p, None).unwrap());
        assert!(project_features(&[1.0, 2.0], &p, None).is_err());
        let masked = project_features(&x, &p, Some(&[0.0, 1.0, 1.0])).unwrap();
        assert_eq!(masked[0], 0.5);
    }

    #[test]
    fn lcu_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = CandidateDescriptor::new(Init::None, Entangler::CrxForward, Rotation::Ry, 1).unwrap();
        let angles: Vec<f64> = (0..4).map(|_| rng.random()).collect();
        let u0 = build_candidate_unitary(&d, 2, &angles).unwrap();
        let lcu = LcuParams {
            attn_logits: vec![0.3],
            phases: vec![0.7],
        };
        let m = lcu_mix(std::slice::from_ref(&u0), &lcu).unwrap();
        assert!(m.max_abs_diff(&u0.scale(Complex64::from_polar(1.0, 0.7))) < 1e-15);

        let id = ComplexMatrix::identity(4);
        let lcu = LcuParams {
            attn_logits: vec![0.1, -0.4, 2.0],
            phases: vec![0.0; 3],
        };
        assert!(lcu_mix(&[id.clone(), id.clone(), id.clone()], &lcu).unwrap().max_abs_diff(&id) < 1e-15);

        let lcu = LcuParams {
            attn_logits: vec![0.0, 0.0],
            phases: vec![0.0, std::f64::consts::PI],
        };
        let m = lcu_mix(&[id.clone(), id.clone()], &lcu).unwrap();
        assert!(m.max_abs_diff(&ComplexMatrix::zeros(4, 4)) < 1e-15);
        assert!(matches!(lcu_mix(&[], &lcu), Err(Error::Empty(_))));
    }

    #[test]
    fn lcu_mix_is_a_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cands = enumerate_candidates(2).unwrap();
        for trial in 0..20 {
            let n_seq = 1 + trial % 4;
            let us: Vec<_> = (0..n_seq)
                .map(|_| {
                    let c = &cands[rng.random_range(0..24)];
                    let a: Vec<f64> = (0..param_count(c, 3)).map(|_| rng.random()).collect();
                    build_candidate_unitary(c, 3, &a).unwrap()
                })
                .collect();
            let lcu = LcuParams {
                attn_logits: (0..n_seq).map(|_| rng.random_range(-3.0..3.0)).collect(),
                phases: (0..n_seq).map(|_| rng.random_range(-3.0..3.0)).collect(),
            };
            assert!(lcu_mix(&us, &lcu).unwrap().spectral_norm() <= 1.0 + 1e-10);
        }
    }

    /// Dense, step-by-step composition of the timestep block.
    fn dense_timestep_oracle(
        sample: &FeatureSequence,
        desc: &CandidateDescriptor,
        p: &HeadParams,
        cfg: &HeadConfig,
    ) -> Vec<Complex64> {
        let us: Vec<ComplexMatrix> = (0..cfg.seq_len)
            .map(|t| {
                let x = sample.timestep(t);
                let theta: Vec<f64> = (0..cfg.n_angle_slots())
                    .map(|s| {
                        let z: f64 = (0..cfg.feat_dim)
                            .map(|j| p.projection.weight[s * cfg.feat_dim + j] * x[j])
                            .sum::<f64>()
                            + p.projection.bias[s];
                        1.0 / (1.0 + (-z).exp())
                    })
                    .collect();
                build_candidate_unitary(desc, cfg.n_qubits, &theta).unwrap()
            })
            .collect();
        let m = lcu_mix(&us, &p.lcu).unwrap();
        let poly = matrix_polynomial(&m, &p.qsvt.coeffs).unwrap();
        let raw = StateVector::new(poly.column(0));
        normalize_state(&raw).unwrap().into_amplitudes()
    }

    #[test]
    fn timestep_block_matches_dense_pipeline() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for desc in cfg.timestep_candidates() {
            let sample = random_sample(&cfg, &mut rng);
            let p = random_params(&cfg, &mut rng);
            let fast = timestep_block(&sample, &desc, &p.projection, &p.lcu, &p.qsvt, &cfg, Mode::Eval).unwrap();
            let oracle = dense_timestep_oracle(&sample, &desc, &p, &cfg);
            for (a, b) in fast.amplitudes().iter().zip(&oracle) {
                assert!((a - b).norm() < 1e-12, "{desc}");
            }
        }
    }

    #[test]
    fn timestep_block_identity_polynomials() {
        let cfg = HeadConfig { seq_len: 1, ..small_cfg() };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sample = random_sample(&cfg, &mut rng);
        let mut p = random_params(&cfg, &mut rng);
        p.lcu.phases = vec![0.0];
        let desc = cfg.timestep_candidates()[17];

        p.qsvt.coeffs = vec![0.0, 1.0, 0.0, 0.0];
        let state = timestep_block(&sample, &desc, &p.projection, &p.lcu, &p.qsvt, &cfg, Mode::Eval).unwrap();
        let theta = project_features(sample.timestep(0), &p.projection, None).unwrap();
        let u0 = build_candidate_unitary(&desc, cfg.n_qubits, &theta).unwrap();
        let expect = u0.column(0);
        assert!((linalg::norm(&expect) - 1.0).abs() < 1e-10);
        for (a, b) in state.amplitudes().iter().zip(&expect) {
            assert!((a - b).norm() < 1e-12);
        }

        p.qsvt.coeffs = vec![1.0, 0.0, 0.0, 0.0];
        let state = timestep_block(&sample, &desc, &p.projection, &p.lcu, &p.qsvt, &cfg, Mode::Eval).unwrap();
        assert_eq!(state, StateVector::zero_state(cfg.n_qubits));
    }

    #[test]
    fn timestep_block_reports_collapse() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sample = random_sample(&cfg, &mut rng);
        let mut p = random_params(&cfg, &mut rng);
        p.qsvt.coeffs = vec![0.0; 4];
        let desc = cfg.timestep_candidates()[0];
        let r = timestep_block(&sample, &desc, &p.projection, &p.lcu, &p.qsvt, &cfg, Mode::Eval);
        assert!(matches!(r, Err(Error::NormCollapse { .. })));
    }

    #[test]
    fn qff_apply_examples() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let psi = normalize_state(&StateVector::new(
            (0..8).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect(),
        ))
        .unwrap();
        let rho = DensityMatrix::from_pure(&psi);

        // Raw angles far below zero squash to θ̂ ≈ 0, so a CRX/RX candidate is the identity.
        let d_lin = CandidateDescriptor::new(Init::None, Entangler::CrxForward, Rotation::Rx, 1).unwrap();
        let far = vec![-60.0; 6];
        let same = qff_apply(&rho, &d_lin, &far, &cfg).unwrap();
        assert!(same.matrix().max_abs_diff(rho.matrix()) < 1e-12);

        let d = CandidateDescriptor::new(Init::Hadamard, Entangler::CrxBackward, Rotation::Ry, 1).unwrap();
        let a1: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let a2: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let out = qff_apply(&rho, &d, &a1, &cfg).unwrap();
        let phys = out.physicality();
        assert!(phys.trace_error < 1e-10 && phys.hermiticity < 1e-12);
        let eigs = nalgebra::DMatrix::from_row_slice(8, 8, out.matrix().as_slice()).symmetric_eigenvalues();
        let mut e: Vec<f64> = eigs.iter().cloned().collect();
        e.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!((e[0] - 1.0).abs() < 1e-10);
        assert!(e[1..].iter().all(|v| v.abs() < 1e-10));

        let twice = qff_apply(&out, &d, &a2, &cfg).unwrap();
        let s = |a: &[f64]| a.iter().map(|&r| sigmoid(r)).collect::<Vec<_>>();
        let v1 = build_candidate_unitary(&d, 3, &s(&a1)).unwrap();
        let v2 = build_candidate_unitary(&d, 3, &s(&a2)).unwrap();
        let once = rho.conjugate_by(&v2.matmul(&v1).unwrap()).unwrap();
        assert!(twice.matrix().max_abs_diff(once.matrix()) < 1e-12);

        assert!(qff_apply(&rho, &d, &a1[..5], &cfg).is_err());
    }

    #[test]
    fn measure_pauli_examples() {
        let n = 3;
        let zero = DensityMatrix::from_pure(&StateVector::zero_state(n));
        let e = measure_pauli(&zero, n);
        assert_eq!(&e[..6], &[0.0; 6]);
        assert_eq!(&e[6..], &[1.0; 3]);
        assert!(measure_pauli(&DensityMatrix::maximally_mixed(n), n).iter().all(|v| v.abs() < 1e-15));

        // |+⟩ on qubit 0, |0⟩ elsewhere.
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut amps = vec![Complex64::new(0.0, 0.0); 8];
        amps[0] = Complex64::new(h, 0.0);
        amps[4] = Complex64::new(h, 0.0);
        let e = measure_pauli(&DensityMatrix::from_pure(&StateVector::new(amps)), n);
        assert!((e[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn measure_pauli_matches_kron_observables() {
        let n = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let states: Vec<StateVector> = (0..3)
            .map(|_| {
                normalize_state(&StateVector::new(
                    (0..8).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect(),
                ))
                .unwrap()
            })
            .collect();
        let rho = DensityMatrix::from_ensemble(&[(0.2, &states[0]), (0.5, &states[1]), (0.3, &states[2])]);
        let e = measure_pauli(&rho, n);
        for (axis, op) in [pauli::x(), pauli::y(), pauli::z()].iter().enumerate() {
            for q in 0..n {
                let obs = pauli::embed(op, q, n).unwrap();
                let expect = linalg::expectation(&rho, &obs).unwrap();
                assert!((e[axis * n + q] - expect).abs() < 1e-13);
                assert!(e[axis * n + q].abs() <= 1.0 + 1e-10);
            }
        }
    }

    #[test]
    fn classify_examples() {
        let cp = ClassifierParams {
            weight: vec![0.0; 12],
            bias: vec![0.0; 2],
        };
        assert_eq!(classify(&[1.0; 6], &cp).unwrap(), vec![0.0, 0.0]);
        let mut w = vec![0.0; 12];
        w[6 + 4] = 1.0;
        let cp = ClassifierParams { weight: w, bias: vec![0.0; 2] };
        let f = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        assert_eq!(classify(&f, &cp).unwrap()[1], 0.5);
        assert!(classify(&f[..5], &cp).is_err());
        let cfg = HeadConfig::default();
        let p = HeadParams::zeros(&cfg);
        assert_eq!(p.classifier.weight.len() + p.classifier.bias.len(), 100);
    }

    #[test]
    fn forward_fixed_shape_and_determinism() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sample = random_sample(&cfg, &mut rng);
        let p = random_params(&cfg, &mut rng);
        let ts = cfg.timestep_candidates()[22];
        let qff = cfg.qff_candidates()[19];
        let a = forward_fixed(&sample, (&ts, &qff), &p, &cfg, Mode::Eval).unwrap();
        let b = forward_fixed(&sample, (&ts, &qff), &p, &cfg, Mode::Eval).unwrap();
        assert_eq!(a.len(), cfg.n_classes);
        assert_eq!(a, b);

        let mask = DropoutMask::sample(&mut ChaCha8Rng::seed_from_u64(1), cfg.seq_len, cfg.feat_dim, 0.5);
        let t1 = forward_fixed(&sample, (&ts, &qff), &p, &cfg, Mode::Train(&mask)).unwrap();
        let t2 = forward_fixed(&sample, (&ts, &qff), &p, &cfg, Mode::Train(&mask)).unwrap();
        assert_eq!(t1, t2);
        assert_ne!(t1, a);

        let wrong_layers = CandidateDescriptor::new(ts.init, ts.entangler, ts.rotation, 1).unwrap();
        assert!(forward_fixed(&sample, (&wrong_layers, &qff), &p, &cfg, Mode::Eval).is_err());
    }

    /// Dense reference: pure-state density → dense QFF conjugation → Pauli → classifier.
    #[test]
    fn forward_fixed_matches_dense_composition() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let sample = random_sample(&cfg, &mut rng);
            let p = random_params(&cfg, &mut rng);
            let ts = cfg.timestep_candidates()[rng.random_range(0..24)];
            let qff = cfg.qff_candidates()[rng.random_range(0..24)];
            let psi = dense_timestep_oracle(&sample, &ts, &p, &cfg);
            let rho = DensityMatrix::from_pure(&StateVector::new(psi));
            let rho = qff_apply(&rho, &qff, &p.qff.angles[qff.index()], &cfg).unwrap();
            let expect = classify(&measure_pauli(&rho, cfg.n_qubits), &p.classifier).unwrap();
            let got = forward_fixed(&sample, (&ts, &qff), &p, &cfg, Mode::Eval).unwrap();
            for (a, b) in got.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(HeadConfig::default().validate().is_ok());
        assert_eq!(HeadConfig::default().n_angle_slots(), 32);
        assert!(HeadConfig { n_qubits: 11, ..Default::default() }.validate().is_err());
        assert!(HeadConfig { n_classes: 1, ..Default::default() }.validate().is_err());
        assert!(HeadConfig { dropout_rate: 1.0, ..Default::default() }.validate().is_err());
        assert!(HeadConfig { qsvt_degree: 0, ..Default::default() }.validate().is_err());
    }
}
