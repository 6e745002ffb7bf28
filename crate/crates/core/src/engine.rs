//! Statevector forward and reverse passes through the whole head.
//!
//! One engine serves both the fixed-architecture head (one-hot block weights)
//! and the ensemble search (softmax block weights). Candidates with weight
//! exactly zero are skipped.
//!
//! The ensemble mixes at two points: timestep-block output states form the
//! mixed state `ρ = Σ_a w_a |ψ_a⟩⟨ψ_a|`, which is kept as its ensemble of pure
//! states, and QFF-block Pauli readouts are mixed with weights `v_b`.
//!
//! Complex adjoints follow the convention `z̄ = ∂L/∂Re z + i ∂L/∂Im z`. With
//! it, a linear map `y = A x` pulls back as `x̄ = A† ȳ` and a real parameter
//! `θ` has `∂L/∂θ = Re⟨z̄, ∂z/∂θ⟩`.

use num_complex::Complex64;

use crate::circuit::{compile, CompiledCircuit, CANDIDATES_PER_BLOCK};
use crate::data::FeatureSequence;
use crate::error::{Block, Error, Result};
use crate::head::{sigmoid, HeadConfig, HeadParams, Mode, ProjectionParams};
use crate::linalg::{inner, norm, NORM_EPS, ONE, ZERO};

/// Block mixture weights, one per candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub ts: Vec<f64>,
    pub qff: Vec<f64>,
}

impl Weights {
    pub fn one_hot(ts: usize, qff: usize) -> Self {
        let mut w = Self {
            ts: vec![0.0; CANDIDATES_PER_BLOCK],
            qff: vec![0.0; CANDIDATES_PER_BLOCK],
        };
        w.ts[ts] = 1.0;
        w.qff[qff] = 1.0;
        w
    }

    fn active(w: &[f64]) -> impl Iterator<Item = (usize, f64)> + '_ {
        w.iter().cloned().enumerate().filter(|&(_, x)| x != 0.0)
    }
}

/// Pre-activation `W·(mask ⊙ x) + b`.
pub(crate) fn project(x: &[f64], p: &ProjectionParams, mask: Option<&[f64]>) -> Vec<f64> {
    let d = x.len();
    p.weight
        .chunks_exact(d)
        .zip(&p.bias)
        .map(|(row, &b)| {
            let dot: f64 = match mask {
                Some(m) => row.iter().zip(x).zip(m).map(|((w, x), m)| w * x * m).sum(),
                None => row.iter().zip(x).map(|(w, x)| w * x).sum(),
            };
            dot + b
        })
        .collect()
}

fn masked_input(sample: &FeatureSequence, t: usize, mode: Mode<'_>) -> Vec<f64> {
    let x = sample.timestep(t);
    match mode {
        Mode::Eval => x.to_vec(),
        Mode::Train(mask) => x
            .iter()
            .zip(mask.timestep(t, sample.feat_dim))
            .map(|(a, m)| a * m)
            .collect(),
    }
}

/// Normalized angles for every timestep.
pub(crate) fn timestep_angles(
    sample: &FeatureSequence,
    p: &ProjectionParams,
    mode: Mode<'_>,
) -> Vec<Vec<f64>> {
    (0..sample.seq_len)
        .map(|t| {
            project(&masked_input(sample, t, mode), p, None)
                .into_iter()
                .map(sigmoid)
                .collect()
        })
        .collect()
}

pub(crate) struct TimestepTrace {
    /// `v_k = M^k |0⟩` for `k = 0..=d`.
    powers: Vec<Vec<Complex64>>,
    /// `U_t v_{k-1}` at index `(k-1)·N + t`; empty unless kept.
    branches: Vec<Vec<Complex64>>,
    norm: f64,
    pub psi: Vec<Complex64>,
}

fn zero_state(dim: usize) -> Vec<Complex64> {
    let mut v = vec![ZERO; dim];
    v[0] = ONE;
    v
}

/// `P_c(M)|0⟩ / ‖·‖` with `M = Σ_t β_t U_t`, using only matrix-vector products.
pub(crate) fn timestep_forward(
    circuit: &CompiledCircuit,
    angles: &[Vec<f64>],
    betas: &[Complex64],
    coeffs: &[f64],
    keep_branches: bool,
) -> Result<TimestepTrace> {
    let dim = circuit.dim();
    let degree = coeffs.len() - 1;
    let mut powers = Vec::with_capacity(degree + 1);
    powers.push(zero_state(dim));
    let mut branches = Vec::new();
    let mut phi: Vec<Complex64> = powers[0].iter().map(|z| z * coeffs[0]).collect();
    let mut scratch = vec![ZERO; dim];
    for k in 1..=degree {
        let mut next = vec![ZERO; dim];
        for (theta, &beta) in angles.iter().zip(betas) {
            scratch.copy_from_slice(&powers[k - 1]);
            circuit.apply(&mut scratch, theta);
            for (n, s) in next.iter_mut().zip(&scratch) {
                *n += beta * s;
            }
            if keep_branches {
                branches.push(scratch.clone());
            }
        }
        for (p, v) in phi.iter_mut().zip(&next) {
            *p += v * coeffs[k];
        }
        powers.push(next);
    }
    let r = norm(&phi);
    if r <= NORM_EPS || !r.is_finite() {
        return Err(Error::NormCollapse { norm: r });
    }
    let inv = 1.0 / r;
    phi.iter_mut().for_each(|z| *z *= inv);
    Ok(TimestepTrace {
        powers,
        branches,
        norm: r,
        psi: phi,
    })
}

/// Accumulators filled by [`timestep_backward`].
pub(crate) struct TimestepGrads {
    /// `∂L/∂θ̂` per timestep and angle slot.
    pub angles: Vec<Vec<f64>>,
    /// `Σ ⟨v̄_k, U_t v_{k-1}⟩` per timestep; `∂L/∂β_t` in the sense `dL = Re(dβ_t · s_t)`.
    pub beta_sums: Vec<Complex64>,
    pub coeffs: Vec<f64>,
}

pub(crate) fn timestep_backward(
    circuit: &CompiledCircuit,
    angles: &[Vec<f64>],
    betas: &[Complex64],
    coeffs: &[f64],
    trace: &TimestepTrace,
    psi_adj: &[Complex64],
    grads: &mut TimestepGrads,
) {
    let dim = circuit.dim();
    let n_seq = angles.len();
    let degree = coeffs.len() - 1;
    // Through ψ = φ / ‖φ‖.
    let overlap = inner(&trace.psi, psi_adj).re;
    let phi_adj: Vec<Complex64> = psi_adj
        .iter()
        .zip(&trace.psi)
        .map(|(g, p)| (g - p * overlap) / trace.norm)
        .collect();
    for (k, v) in trace.powers.iter().enumerate() {
        grads.coeffs[k] += inner(&phi_adj, v).re;
    }
    let mut carry = vec![ZERO; dim];
    let mut state = vec![ZERO; dim];
    let mut adj = vec![ZERO; dim];
    for k in (1..=degree).rev() {
        let v_adj: Vec<Complex64> = phi_adj
            .iter()
            .zip(&carry)
            .map(|(p, c)| p * coeffs[k] + c)
            .collect();
        carry.fill(ZERO);
        for t in 0..n_seq {
            if trace.branches.is_empty() {
                state.copy_from_slice(&trace.powers[k - 1]);
                circuit.apply(&mut state, &angles[t]);
            } else {
                state.copy_from_slice(&trace.branches[(k - 1) * n_seq + t]);
            }
            grads.beta_sums[t] += inner(&v_adj, &state);
            let scale = betas[t].conj();
            for (a, v) in adj.iter_mut().zip(&v_adj) {
                *a = v * scale;
            }
            circuit.backward(&mut state, &mut adj, &angles[t], &mut grads.angles[t], 1.0);
            if k > 1 {
                for (c, a) in carry.iter_mut().zip(&adj) {
                    *c += a;
                }
            }
        }
    }
}

/// Pure-state Pauli readout `[⟨X_q⟩…, ⟨Y_q⟩…, ⟨Z_q⟩…]`.
pub(crate) fn pauli_expectations(state: &[Complex64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; 3 * n];
    for q in 0..n {
        let s = 1 << (n - 1 - q);
        let (mut x, mut y, mut z) = (0.0, 0.0, 0.0);
        for block in state.chunks_exact(2 * s) {
            let (lo, hi) = block.split_at(s);
            for (a, b) in lo.iter().zip(hi) {
                let c = a.conj() * b;
                x += c.re;
                y += c.im;
                z += a.norm_sqr() - b.norm_sqr();
            }
        }
        out[q] = 2.0 * x;
        out[n + q] = 2.0 * y;
        out[2 * n + q] = z;
    }
    out
}

/// `out += scale · Λ state` with `Λ = Σ_q gx_q X_q + gy_q Y_q + gz_q Z_q`.
pub(crate) fn apply_readout_observable(
    state: &[Complex64],
    n: usize,
    g: &[f64],
    scale: f64,
    out: &mut [Complex64],
) {
    for q in 0..n {
        let s = 1 << (n - 1 - q);
        let (gx, gy, gz) = (g[q] * scale, g[n + q] * scale, g[2 * n + q] * scale);
        for (oblock, sblock) in out.chunks_exact_mut(2 * s).zip(state.chunks_exact(2 * s)) {
            let (olo, ohi) = oblock.split_at_mut(s);
            let (slo, shi) = sblock.split_at(s);
            for k in 0..s {
                let (a, b) = (slo[k], shi[k]);
                // X: swap; Y: (-i b, i a); Z: (a, -b).
                olo[k] += b * gx + Complex64::new(b.im, -b.re) * gy + a * gz;
                ohi[k] += a * gx + Complex64::new(-a.im, a.re) * gy - b * gz;
            }
        }
    }
}

struct QffBranch {
    ts: usize,
    chi: Vec<Complex64>,
    readout: Vec<f64>,
}

struct QffTrace {
    angles: Vec<f64>,
    readout: Vec<f64>,
    branches: Vec<QffBranch>,
}

pub struct Forward {
    pub logits: Vec<f64>,
    pub features: Vec<f64>,
    /// Normalized timestep-block states of the active candidates.
    pub ts_states: Vec<(usize, Vec<Complex64>)>,
    inputs: Vec<Vec<f64>>,
    angles: Vec<Vec<f64>>,
    betas: Vec<Complex64>,
    ts: Vec<(usize, CompiledCircuit, TimestepTrace)>,
    qff: Vec<(usize, CompiledCircuit, QffTrace)>,
}

pub struct Backward {
    pub grads: HeadParams,
    /// `∂L/∂w_a` for the timestep block weights.
    pub ts_weights: Vec<f64>,
    /// `∂L/∂v_b` for the QFF block weights.
    pub qff_weights: Vec<f64>,
}

/// Runs the timestep block for every active candidate.
pub(crate) fn timestep_states(
    sample: &FeatureSequence,
    params: &HeadParams,
    cfg: &HeadConfig,
    ts_weights: &[f64],
    mode: Mode<'_>,
) -> Result<Vec<(usize, Vec<Complex64>)>> {
    let angles = timestep_angles(sample, &params.projection, mode);
    let betas = params.lcu.coefficients();
    let cands = cfg.timestep_candidates();
    Weights::active(ts_weights)
        .map(|(a, _)| {
            let circuit = compile(&cands[a], cfg.n_qubits)?;
            let tr = timestep_forward(&circuit, &angles, &betas, &params.qsvt.coeffs, false)
                .map_err(|_| Error::CandidateCollapse {
                    block: Block::Timestep,
                    candidate: a,
                })?;
            Ok((a, tr.psi))
        })
        .collect()
}

pub fn forward(
    sample: &FeatureSequence,
    params: &HeadParams,
    cfg: &HeadConfig,
    weights: &Weights,
    mode: Mode<'_>,
    keep: bool,
) -> Result<Forward> {
    let n = cfg.n_qubits;
    let inputs: Vec<Vec<f64>> = (0..sample.seq_len).map(|t| masked_input(sample, t, mode)).collect();
    let angles: Vec<Vec<f64>> = inputs
        .iter()
        .map(|x| project(x, &params.projection, None).into_iter().map(sigmoid).collect())
        .collect();
    let betas = params.lcu.coefficients();

    let ts_cands = cfg.timestep_candidates();
    let mut ts = Vec::new();
    for (a, _) in Weights::active(&weights.ts) {
        let circuit = compile(&ts_cands[a], n)?;
        let tr = timestep_forward(&circuit, &angles, &betas, &params.qsvt.coeffs, keep).map_err(
            |_| Error::CandidateCollapse {
                block: Block::Timestep,
                candidate: a,
            },
        )?;
        ts.push((a, circuit, tr));
    }

    let qff_cands = cfg.qff_candidates();
    let mut features = vec![0.0; 3 * n];
    let mut qff = Vec::new();
    let mut chi = vec![ZERO; 1 << n];
    for (b, vb) in Weights::active(&weights.qff) {
        let circuit = compile(&qff_cands[b], n)?;
        let q_angles: Vec<f64> = params.qff.angles[b].iter().map(|&r| sigmoid(r)).collect();
        let mut readout = vec![0.0; 3 * n];
        let mut branches = Vec::new();
        for (a, _, tr) in &ts {
            let wa = weights.ts[*a];
            chi.copy_from_slice(&tr.psi);
            circuit.apply(&mut chi, &q_angles);
            let m = pauli_expectations(&chi, n);
            for (r, x) in readout.iter_mut().zip(&m) {
                *r += wa * x;
            }
            if keep {
                branches.push(QffBranch {
                    ts: *a,
                    chi: chi.clone(),
                    readout: m,
                });
            }
        }
        for (f, r) in features.iter_mut().zip(&readout) {
            *f += vb * r;
        }
        qff.push((
            b,
            circuit,
            QffTrace {
                angles: q_angles,
                readout,
                branches,
            },
        ));
    }

    let logits = crate::head::classify(&features, &params.classifier)?;
    let ts_states = ts.iter().map(|(a, _, tr)| (*a, tr.psi.clone())).collect();
    Ok(Forward {
        logits,
        features,
        ts_states,
        inputs,
        angles,
        betas,
        ts,
        qff,
    })
}

/// Reverse pass for a forward run with `keep = true`.
pub fn backward(
    fwd: &Forward,
    params: &HeadParams,
    cfg: &HeadConfig,
    weights: &Weights,
    dlogits: &[f64],
) -> Backward {
    let n = cfg.n_qubits;
    let dim = 1 << n;
    let n_feat = 3 * n;
    let mut grads = HeadParams::zeros(cfg);

    // Classifier.
    let mut df = vec![0.0; n_feat];
    for (k, &g) in dlogits.iter().enumerate() {
        grads.classifier.bias[k] += g;
        let row = &params.classifier.weight[k * n_feat..(k + 1) * n_feat];
        let grow = &mut grads.classifier.weight[k * n_feat..(k + 1) * n_feat];
        for i in 0..n_feat {
            grow[i] += g * fwd.features[i];
            df[i] += row[i] * g;
        }
    }

    // QFF block and the mixture weights.
    let mut ts_weights = vec![0.0; CANDIDATES_PER_BLOCK];
    let mut qff_weights = vec![0.0; CANDIDATES_PER_BLOCK];
    let ts_slot = |a: usize| fwd.ts.iter().position(|(x, _, _)| *x == a).unwrap();
    let mut psi_adj = vec![vec![ZERO; dim]; fwd.ts.len()];
    let mut state = vec![ZERO; dim];
    let mut adj = vec![ZERO; dim];
    for (b, circuit, tr) in &fwd.qff {
        qff_weights[*b] = dot(&df, &tr.readout);
        let de: Vec<f64> = df.iter().map(|g| g * weights.qff[*b]).collect();
        let mut angle_grad = vec![0.0; tr.angles.len()];
        for br in &tr.branches {
            ts_weights[br.ts] += dot(&de, &br.readout);
            adj.fill(ZERO);
            apply_readout_observable(&br.chi, n, &de, 2.0 * weights.ts[br.ts], &mut adj);
            state.copy_from_slice(&br.chi);
            circuit.backward(&mut state, &mut adj, &tr.angles, &mut angle_grad, 1.0);
            for (p, a) in psi_adj[ts_slot(br.ts)].iter_mut().zip(&adj) {
                *p += a;
            }
        }
        for ((g, s), ag) in grads.qff.angles[*b].iter_mut().zip(&tr.angles).zip(&angle_grad) {
            *g += ag * s * (1.0 - s);
        }
    }

    // Timestep block.
    let n_seq = fwd.angles.len();
    let mut tg = TimestepGrads {
        angles: fwd.angles.iter().map(|a| vec![0.0; a.len()]).collect(),
        beta_sums: vec![ZERO; n_seq],
        coeffs: vec![0.0; params.qsvt.coeffs.len()],
    };
    for ((_, circuit, tr), pa) in fwd.ts.iter().zip(&psi_adj) {
        timestep_backward(circuit, &fwd.angles, &fwd.betas, &params.qsvt.coeffs, tr, pa, &mut tg);
    }
    grads.qsvt.coeffs = tg.coeffs;

    // β_t = p_t e^{iγ_t}, p = softmax(logits).
    let p = params.lcu.weights();
    let mut dp = vec![0.0; n_seq];
    for t in 0..n_seq {
        let rot = Complex64::from_polar(1.0, params.lcu.phases[t]) * tg.beta_sums[t];
        dp[t] = rot.re;
        grads.lcu.phases[t] = -p[t] * rot.im;
    }
    let mean: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
    for t in 0..n_seq {
        grads.lcu.attn_logits[t] = p[t] * (dp[t] - mean);
    }

    // Projection through the sigmoid.
    let d = cfg.feat_dim;
    for t in 0..n_seq {
        for (s, (&theta, &g)) in fwd.angles[t].iter().zip(&tg.angles[t]).enumerate() {
            if g == 0.0 {
                continue;
            }
            let dz = g * theta * (1.0 - theta);
            grads.projection.bias[s] += dz;
            let row = &mut grads.projection.weight[s * d..(s + 1) * d];
            for (w, x) in row.iter_mut().zip(&fwd.inputs[t]) {
                *w += dz * x;
            }
        }
    }

    Backward {
        grads,
        ts_weights,
        qff_weights,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
