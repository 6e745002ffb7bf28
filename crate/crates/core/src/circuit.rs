//! Gate set, the 24-candidate block search space, and circuit compilation.
//!
//! A candidate circuit is a hardware-efficient ansatz: an optional Hadamard
//! layer, then `layers` repetitions of (one rotation per qubit, entangler).
//! Angles are normalized to `[0, 1]` and applied as `R(π·θ̂)`.
//!
//! Parameter slots are consumed in prefix order, layer by layer: the `n`
//! rotation slots first, then `n` entangler slots when the entangler is CRX.
//! That way one shared angle vector can drive any candidate.

use std::f64::consts::PI;
use std::fmt;
use std::num::NonZeroUsize;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, ONE, ZERO};

pub const CANDIDATES_PER_BLOCK: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    Hadamard,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Entangler {
    LinearCnot,
    RingCnot,
    CrxForward,
    CrxBackward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rotation {
    Rx,
    Ry,
    Rz,
}

impl Init {
    pub const ALL: [Init; 2] = [Init::Hadamard, Init::None];
}

impl Entangler {
    pub const ALL: [Entangler; 4] = [
        Entangler::LinearCnot,
        Entangler::RingCnot,
        Entangler::CrxForward,
        Entangler::CrxBackward,
    ];

    pub fn is_parametric(self) -> bool {
        matches!(self, Entangler::CrxForward | Entangler::CrxBackward)
    }
}

impl Rotation {
    pub const ALL: [Rotation; 3] = [Rotation::Rx, Rotation::Ry, Rotation::Rz];
}

/// One point in the per-block search space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CandidateDescriptor {
    pub init: Init,
    pub entangler: Entangler,
    pub rotation: Rotation,
    pub layers: NonZeroUsize,
}

impl CandidateDescriptor {
    pub fn new(init: Init, entangler: Entangler, rotation: Rotation, layers: usize) -> Result<Self> {
        let layers = NonZeroUsize::new(layers)
            .ok_or_else(|| Error::InvalidConfig("candidate layer count must be >= 1".into()))?;
        Ok(Self {
            init,
            entangler,
            rotation,
            layers,
        })
    }

    pub fn layers(&self) -> usize {
        self.layers.get()
    }

    /// Position in [`enumerate_candidates`] order (init-major, then entangler, then rotation).
    pub fn index(&self) -> usize {
        let i = Init::ALL.iter().position(|&x| x == self.init).unwrap();
        let e = Entangler::ALL.iter().position(|&x| x == self.entangler).unwrap();
        let r = Rotation::ALL.iter().position(|&x| x == self.rotation).unwrap();
        i * 12 + e * 3 + r
    }

    pub fn from_index(index: usize, layers: NonZeroUsize) -> Option<Self> {
        if index >= CANDIDATES_PER_BLOCK {
            return None;
        }
        Some(Self {
            init: Init::ALL[index / 12],
            entangler: Entangler::ALL[(index / 3) % 4],
            rotation: Rotation::ALL[index % 3],
            layers,
        })
    }
}

impl fmt::Display for CandidateDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?}/{:?}/{:?}x{}",
            self.init, self.entangler, self.rotation, self.layers
        )
    }
}

pub fn enumerate_candidates(layers: usize) -> Result<Vec<CandidateDescriptor>> {
    let layers = NonZeroUsize::new(layers)
        .ok_or_else(|| Error::InvalidConfig("candidate layer count must be >= 1".into()))?;
    Ok((0..CANDIDATES_PER_BLOCK)
        .map(|i| CandidateDescriptor::from_index(i, layers).unwrap())
        .collect())
}

pub fn param_count(desc: &CandidateDescriptor, n_qubits: usize) -> usize {
    let per_layer = if desc.entangler.is_parametric() {
        2 * n_qubits
    } else {
        n_qubits
    };
    desc.layers() * per_layer
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateKind {
    Rx,
    Ry,
    Rz,
    Crx,
    Cnot,
    H,
}

impl From<Rotation> for GateKind {
    fn from(r: Rotation) -> Self {
        match r {
            Rotation::Rx => GateKind::Rx,
            Rotation::Ry => GateKind::Ry,
            Rotation::Rz => GateKind::Rz,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GateSpec {
    pub kind: GateKind,
    pub target: usize,
    pub control: Option<usize>,
    pub param_slot: Option<usize>,
}

type Mat2 = [[Complex64; 2]; 2];

/// `exp(-i φ/2 σ)` for a rotation axis.
fn rotation_matrix(kind: GateKind, phi: f64) -> Mat2 {
    let (s, c) = (phi / 2.0).sin_cos();
    match kind {
        GateKind::Rx | GateKind::Crx => [
            [Complex64::new(c, 0.0), Complex64::new(0.0, -s)],
            [Complex64::new(0.0, -s), Complex64::new(c, 0.0)],
        ],
        GateKind::Ry => [
            [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
            [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
        ],
        GateKind::Rz => [
            [Complex64::new(c, -s), ZERO],
            [ZERO, Complex64::new(c, s)],
        ],
        GateKind::H | GateKind::Cnot => unreachable!("not a rotation"),
    }
}

/// 2x2 rotation `R_axis(π·θ̂)` as a dense matrix.
pub fn rotation_gate(axis: Rotation, theta_hat: f64) -> Result<ComplexMatrix> {
    if !(0.0..=1.0).contains(&theta_hat) {
        return Err(Error::AngleOutOfRange {
            slot: 0,
            value: theta_hat,
        });
    }
    let m = rotation_matrix(axis.into(), PI * theta_hat);
    Ok(ComplexMatrix::from_rows(&m))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledCircuit {
    pub n_qubits: usize,
    pub gates: Vec<GateSpec>,
    pub n_params: usize,
}

pub fn compile(desc: &CandidateDescriptor, n_qubits: usize) -> Result<CompiledCircuit> {
    if !(2..=crate::linalg::MAX_QUBITS).contains(&n_qubits) {
        return Err(Error::InvalidConfig(format!(
            "candidate circuits need 2..={} qubits, got {n_qubits}",
            crate::linalg::MAX_QUBITS
        )));
    }
    let n = n_qubits;
    let mut gates = Vec::new();
    let mut slot = 0;
    if desc.init == Init::Hadamard {
        gates.extend((0..n).map(|q| GateSpec {
            kind: GateKind::H,
            target: q,
            control: None,
            param_slot: None,
        }));
    }
    for _ in 0..desc.layers() {
        for q in 0..n {
            gates.push(GateSpec {
                kind: desc.rotation.into(),
                target: q,
                control: None,
                param_slot: Some(slot),
            });
            slot += 1;
        }
        let cnot = |control, target| GateSpec {
            kind: GateKind::Cnot,
            target,
            control: Some(control),
            param_slot: None,
        };
        match desc.entangler {
            Entangler::LinearCnot => gates.extend((0..n - 1).map(|q| cnot(q, q + 1))),
            Entangler::RingCnot => {
                gates.extend((0..n - 1).map(|q| cnot(q, q + 1)));
                gates.push(cnot(n - 1, 0));
            }
            Entangler::CrxForward | Entangler::CrxBackward => {
                for q in 0..n {
                    let target = if desc.entangler == Entangler::CrxForward {
                        (q + 1) % n
                    } else {
                        (q + n - 1) % n
                    };
                    gates.push(GateSpec {
                        kind: GateKind::Crx,
                        target,
                        control: Some(q),
                        param_slot: Some(slot),
                    });
                    slot += 1;
                }
            }
        }
    }
    debug_assert_eq!(slot, param_count(desc, n));
    Ok(CompiledCircuit {
        n_qubits: n,
        gates,
        n_params: slot,
    })
}

/// Dense unitary of a candidate at normalized angles.
pub fn build_candidate_unitary(
    desc: &CandidateDescriptor,
    n_qubits: usize,
    angles: &[f64],
) -> Result<ComplexMatrix> {
    let circuit = compile(desc, n_qubits)?;
    circuit.check_angles(angles)?;
    let dim = 1 << n_qubits;
    let mut u = ComplexMatrix::zeros(dim, dim);
    let mut col = vec![ZERO; dim];
    for j in 0..dim {
        col.fill(ZERO);
        col[j] = ONE;
        circuit.apply(&mut col, angles);
        u.set_column(j, &col);
    }
    Ok(u)
}

impl CompiledCircuit {
    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn check_angles(&self, angles: &[f64]) -> Result<()> {
        if angles.len() < self.n_params {
            return Err(Error::DimensionMismatch {
                context: "circuit angle vector",
                expected: self.n_params,
                got: angles.len(),
            });
        }
        if let Some((slot, &value)) = angles[..self.n_params]
            .iter()
            .enumerate()
            .find(|(_, a)| !(0.0..=1.0).contains(*a))
        {
            return Err(Error::AngleOutOfRange { slot, value });
        }
        Ok(())
    }

    /// Applies the circuit in place. Angles are not range-checked here.
    pub fn apply(&self, state: &mut [Complex64], angles: &[f64]) {
        debug_assert_eq!(state.len(), self.dim());
        for g in &self.gates {
            self.apply_gate(state, g, angles, false);
        }
    }

    fn apply_gate(&self, state: &mut [Complex64], g: &GateSpec, angles: &[f64], inverse: bool) {
        let n = self.n_qubits;
        let (t, c) = (g.target, g.control);
        let Some(slot) = g.param_slot else {
            match g.kind {
                GateKind::H => kernel::hadamard(state, n, t),
                _ => kernel::swap(state, n, t, c),
            }
            return;
        };
        let (s, co) = (0.5 * PI * angles[slot]).sin_cos();
        let s = if inverse { -s } else { s };
        match g.kind {
            GateKind::Rx | GateKind::Crx => kernel::rx(state, n, t, c, co, s),
            GateKind::Ry => kernel::ry(state, n, t, co, s),
            GateKind::Rz => kernel::rz(state, n, t, co, s),
            GateKind::H | GateKind::Cnot => unreachable!(),
        }
    }

    /// Reverse pass through the circuit.
    ///
    /// On entry `state` holds the circuit output and `adjoint` the loss adjoint
    /// `∂L/∂Re ψ + i ∂L/∂Im ψ` of that output. On exit `state` holds the input
    /// and `adjoint` the input adjoint. `grad[slot]` accumulates `∂L/∂θ̂_slot`
    /// scaled by `weight`.
    pub fn backward(
        &self,
        state: &mut [Complex64],
        adjoint: &mut [Complex64],
        angles: &[f64],
        grad: &mut [f64],
        weight: f64,
    ) {
        let n = self.n_qubits;
        for g in self.gates.iter().rev() {
            if let Some(slot) = g.param_slot {
                // dR/dφ = -i/2 σ R, so the derivative pairs the adjoint with σ·(gate output);
                // φ = π θ̂ adds the factor π.
                let z = kernel::pauli_inner(adjoint, state, n, g.target, g.control, g.kind);
                grad[slot] += weight * 0.5 * PI * z.im;
            }
            self.apply_gate(state, g, angles, true);
            self.apply_gate(adjoint, g, angles, true);
        }
    }
}

/// Statevector kernels. Qubit 0 is the most significant index bit.
pub(crate) mod kernel {
    use super::GateKind;
    use num_complex::Complex64;
    use std::f64::consts::FRAC_1_SQRT_2;

    #[inline]
    fn stride(n: usize, q: usize) -> usize {
        1 << (n - 1 - q)
    }

    /// Calls `f(a, b)` on every amplitude pair a gate on `target` couples
    /// (`b` has the target bit set), keeping only pairs with the control bit set.
    #[inline(always)]
    fn pairs(
        state: &mut [Complex64],
        n: usize,
        target: usize,
        control: Option<usize>,
        mut f: impl FnMut(&mut Complex64, &mut Complex64),
    ) {
        let ts = stride(n, target);
        let mut run = |lo: &mut [Complex64], hi: &mut [Complex64]| {
            lo.iter_mut().zip(hi.iter_mut()).for_each(|(a, b)| f(a, b));
        };
        match control.map(|c| stride(n, c)) {
            None => {
                for blk in state.chunks_exact_mut(2 * ts) {
                    let (lo, hi) = blk.split_at_mut(ts);
                    run(lo, hi);
                }
            }
            Some(cm) if cm > ts => {
                for big in state.chunks_exact_mut(2 * cm) {
                    for blk in big[cm..].chunks_exact_mut(2 * ts) {
                        let (lo, hi) = blk.split_at_mut(ts);
                        run(lo, hi);
                    }
                }
            }
            Some(cm) => {
                for blk in state.chunks_exact_mut(2 * ts) {
                    let (lo, hi) = blk.split_at_mut(ts);
                    for (l, h) in lo.chunks_exact_mut(2 * cm).zip(hi.chunks_exact_mut(2 * cm)) {
                        run(&mut l[cm..], &mut h[cm..]);
                    }
                }
            }
        }
    }

    /// Read-only counterpart of [`pairs`] over two aligned vectors:
    /// `f(u_a, u_b, v_a, v_b)`.
    #[inline(always)]
    fn pairs2(
        u: &[Complex64],
        v: &[Complex64],
        n: usize,
        target: usize,
        control: Option<usize>,
        mut f: impl FnMut(Complex64, Complex64, Complex64, Complex64),
    ) {
        let ts = stride(n, target);
        let mut run = |ul: &[Complex64], uh: &[Complex64], vl: &[Complex64], vh: &[Complex64]| {
            for k in 0..ul.len() {
                f(ul[k], uh[k], vl[k], vh[k]);
            }
        };
        let step = 2 * ts;
        match control.map(|c| stride(n, c)) {
            None => {
                for (ub, vb) in u.chunks_exact(step).zip(v.chunks_exact(step)) {
                    run(&ub[..ts], &ub[ts..], &vb[..ts], &vb[ts..]);
                }
            }
            Some(cm) if cm > ts => {
                for (ubig, vbig) in u.chunks_exact(2 * cm).zip(v.chunks_exact(2 * cm)) {
                    for (ub, vb) in ubig[cm..].chunks_exact(step).zip(vbig[cm..].chunks_exact(step)) {
                        run(&ub[..ts], &ub[ts..], &vb[..ts], &vb[ts..]);
                    }
                }
            }
            Some(cm) => {
                for (ub, vb) in u.chunks_exact(step).zip(v.chunks_exact(step)) {
                    let mut k = cm;
                    while k < ts {
                        run(&ub[k..k + cm], &ub[ts + k..ts + k + cm], &vb[k..k + cm], &vb[ts + k..ts + k + cm]);
                        k += 2 * cm;
                    }
                }
            }
        }
    }

    pub fn hadamard(state: &mut [Complex64], n: usize, q: usize) {
        pairs(state, n, q, None, |a, b| {
            let (x, y) = (*a, *b);
            *a = (x + y) * FRAC_1_SQRT_2;
            *b = (x - y) * FRAC_1_SQRT_2;
        });
    }

    /// CNOT when `control` is set, otherwise a bare X.
    pub fn swap(state: &mut [Complex64], n: usize, q: usize, control: Option<usize>) {
        pairs(state, n, q, control, std::mem::swap);
    }

    /// `cos·I - i sin·X` on the (controlled) pairs.
    pub fn rx(state: &mut [Complex64], n: usize, q: usize, control: Option<usize>, c: f64, s: f64) {
        pairs(state, n, q, control, |a, b| {
            let (x, y) = (*a, *b);
            *a = Complex64::new(c * x.re + s * y.im, c * x.im - s * y.re);
            *b = Complex64::new(c * y.re + s * x.im, c * y.im - s * x.re);
        });
    }

    pub fn ry(state: &mut [Complex64], n: usize, q: usize, c: f64, s: f64) {
        pairs(state, n, q, None, |a, b| {
            let (x, y) = (*a, *b);
            *a = x * c - y * s;
            *b = x * s + y * c;
        });
    }

    pub fn rz(state: &mut [Complex64], n: usize, q: usize, c: f64, s: f64) {
        let (d0, d1) = (Complex64::new(c, -s), Complex64::new(c, s));
        pairs(state, n, q, None, |a, b| {
            *a *= d0;
            *b *= d1;
        });
    }

    /// `⟨adj | σ | state⟩` with `σ` the generator axis of `kind` on `q`,
    /// restricted to the control subspace when there is one.
    pub fn pauli_inner(
        adj: &[Complex64],
        state: &[Complex64],
        n: usize,
        q: usize,
        control: Option<usize>,
        kind: GateKind,
    ) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        match kind {
            GateKind::Rx | GateKind::Crx => pairs2(adj, state, n, q, control, |u0, u1, a, b| {
                acc += u0.conj() * b + u1.conj() * a;
            }),
            GateKind::Ry => pairs2(adj, state, n, q, control, |u0, u1, a, b| {
                // σ_y (a, b) = (-i b, i a)
                let d = u1.conj() * a - u0.conj() * b;
                acc += Complex64::new(-d.im, d.re);
            }),
            GateKind::Rz => pairs2(adj, state, n, q, control, |u0, u1, a, b| {
                acc += u0.conj() * a - u1.conj() * b;
            }),
            GateKind::H | GateKind::Cnot => unreachable!("not a rotation"),
        }
        acc
    }
}
