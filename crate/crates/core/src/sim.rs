//! Dense statevector simulation.
//!
//! Qubit 0 is the most significant bit of a basis index, so on four qubits
//! `|1000>` is index 8. Rotations follow `R_P(phi) = exp(-i phi P / 2)`.
//! Global phase is not tracked.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pauli::{Pauli, PauliString};

/// Default register cap for dense simulation.
pub const DEFAULT_QUBIT_CAP: usize = 20;

const NORM_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid gate {gate:?} for a {n}-qubit register")]
    InvalidGate { gate: Gate, n: usize },
    #[error("dimension mismatch: expected {expected} qubits, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("qubit count {n} outside 1..={cap}")]
    QubitCount { n: usize, cap: usize },
    #[error("amplitude vector of length {0} is not a power of two")]
    BadLength(usize),
    #[error("state norm {0} differs from 1")]
    NotNormalized(f64),
    #[error("basis index {index} out of range for {n} qubits")]
    BasisIndex { index: usize, n: usize },
}

/// Normalized pure state on `n` qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// `|0...0>` on `n` qubits.
    pub fn zero(n: usize) -> Result<Self, SimError> {
        Self::basis(n, 0)
    }

    pub fn basis(n: usize, index: usize) -> Result<Self, SimError> {
        Self::basis_with_cap(n, index, DEFAULT_QUBIT_CAP)
    }

    pub fn basis_with_cap(n: usize, index: usize, cap: usize) -> Result<Self, SimError> {
        if n == 0 || n > cap {
            return Err(SimError::QubitCount { n, cap });
        }
        let dim = 1usize << n;
        if index >= dim {
            return Err(SimError::BasisIndex { index, n });
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); dim];
        amps[index] = Complex64::new(1.0, 0.0);
        Ok(Self { n, amps })
    }

    /// Wraps an amplitude vector, checking length and normalization.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self, SimError> {
        let len = amps.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(SimError::BadLength(len));
        }
        let n = len.trailing_zeros() as usize;
        if n > DEFAULT_QUBIT_CAP {
            return Err(SimError::QubitCount {
                n,
                cap: DEFAULT_QUBIT_CAP,
            });
        }
        let state = Self { n, amps };
        let norm = state.norm();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(SimError::NotNormalized(norm));
        }
        Ok(state)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Born probabilities in the computational basis.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> Result<Complex64, SimError> {
        self.check_n(other.n)?;
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    fn check_n(&self, n: usize) -> Result<(), SimError> {
        if self.n != n {
            return Err(SimError::DimensionMismatch {
                expected: self.n,
                got: n,
            });
        }
        Ok(())
    }

    #[inline]
    fn bit(&self, qubit: usize) -> usize {
        1usize << (self.n - 1 - qubit)
    }

    fn apply_1q(&mut self, qubit: usize, m: [[Complex64; 2]; 2]) {
        let bit = self.bit(qubit);
        for i0 in 0..self.amps.len() {
            if i0 & bit != 0 {
                continue;
            }
            let i1 = i0 | bit;
            let (a0, a1) = (self.amps[i0], self.amps[i1]);
            self.amps[i0] = m[0][0] * a0 + m[0][1] * a1;
            self.amps[i1] = m[1][0] * a0 + m[1][1] * a1;
        }
    }

    fn apply_cnot(&mut self, control: usize, target: usize) {
        let cbit = self.bit(control);
        let tbit = self.bit(target);
        for i in 0..self.amps.len() {
            if i & cbit != 0 && i & tbit == 0 {
                self.amps.swap(i, i | tbit);
            }
        }
    }

    /// Applies a gate in place.
    pub fn apply_gate_mut(&mut self, gate: &Gate) -> Result<(), SimError> {
        gate.validate(self.n)?;
        match *gate {
            Gate::Rx { qubit, angle } => self.apply_1q(qubit, rotation(Pauli::X, angle)),
            Gate::Ry { qubit, angle } => self.apply_1q(qubit, rotation(Pauli::Y, angle)),
            Gate::Rz { qubit, angle } => self.apply_1q(qubit, rotation(Pauli::Z, angle)),
            Gate::Cnot { control, target } => self.apply_cnot(control, target),
        }
        Ok(())
    }

    /// Applies every gate of `circuit` in order, in place.
    pub fn run_mut(&mut self, circuit: &Circuit) -> Result<(), SimError> {
        self.check_n(circuit.n)?;
        for g in &circuit.gates {
            self.apply_gate_mut(g)?;
        }
        Ok(())
    }

    /// Rotates every qubit so that a computational-basis measurement reads
    /// out the requested letter: `H` for X, `S^dagger` then `H` for Y,
    /// nothing for Z or I.
    fn rotate_into_basis(&mut self, basis: &PauliString) {
        let h = 1.0 / 2f64.sqrt();
        let hm = [
            [Complex64::new(h, 0.0), Complex64::new(h, 0.0)],
            [Complex64::new(h, 0.0), Complex64::new(-h, 0.0)],
        ];
        // H * S^dagger
        let hsd = [
            [Complex64::new(h, 0.0), Complex64::new(0.0, -h)],
            [Complex64::new(h, 0.0), Complex64::new(0.0, h)],
        ];
        for q in 0..self.n {
            match basis.letter(q) {
                Pauli::X => self.apply_1q(q, hm),
                Pauli::Y => self.apply_1q(q, hsd),
                Pauli::Z | Pauli::I => {}
            }
        }
    }
}

/// 2x2 matrix of `exp(-i angle P / 2)`.
pub fn rotation(p: Pauli, angle: f64) -> [[Complex64; 2]; 2] {
    let c = Complex64::new((angle / 2.0).cos(), 0.0);
    let s = (angle / 2.0).sin();
    let z = Complex64::new(0.0, 0.0);
    match p {
        Pauli::I => [[c, z], [z, c]],
        Pauli::X => [
            [c, Complex64::new(0.0, -s)],
            [Complex64::new(0.0, -s), c],
        ],
        Pauli::Y => [[c, Complex64::new(-s, 0.0)], [Complex64::new(s, 0.0), c]],
        Pauli::Z => [
            [Complex64::new(c.re, -s), z],
            [z, Complex64::new(c.re, s)],
        ],
    }
}

/// Elementary gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "gate", rename_all = "lowercase")]
pub enum Gate {
    Rx { qubit: usize, angle: f64 },
    Ry { qubit: usize, angle: f64 },
    Rz { qubit: usize, angle: f64 },
    Cnot { control: usize, target: usize },
}

impl Gate {
    pub fn validate(&self, n: usize) -> Result<(), SimError> {
        let ok = match *self {
            Gate::Rx { qubit, .. } | Gate::Ry { qubit, .. } | Gate::Rz { qubit, .. } => qubit < n,
            Gate::Cnot { control, target } => control < n && target < n && control != target,
        };
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidGate { gate: *self, n })
        }
    }

    pub fn adjoint(&self) -> Gate {
        match *self {
            Gate::Rx { qubit, angle } => Gate::Rx {
                qubit,
                angle: -angle,
            },
            Gate::Ry { qubit, angle } => Gate::Ry {
                qubit,
                angle: -angle,
            },
            Gate::Rz { qubit, angle } => Gate::Rz {
                qubit,
                angle: -angle,
            },
            cnot @ Gate::Cnot { .. } => cnot,
        }
    }

    pub fn is_cnot(&self) -> bool {
        matches!(self, Gate::Cnot { .. })
    }
}

/// Ordered gate list on a fixed register.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    n: usize,
    gates: Vec<Gate>,
}

impl Circuit {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            gates: Vec::new(),
        }
    }

    pub fn from_gates(n: usize, gates: Vec<Gate>) -> Result<Self, SimError> {
        for g in &gates {
            g.validate(n)?;
        }
        Ok(Self { n, gates })
    }

    pub fn push(&mut self, gate: Gate) -> Result<(), SimError> {
        gate.validate(self.n)?;
        self.gates.push(gate);
        Ok(())
    }

    /// Appends `other` after this circuit.
    pub fn append(&mut self, other: &Circuit) -> Result<(), SimError> {
        if other.n != self.n {
            return Err(SimError::DimensionMismatch {
                expected: self.n,
                got: other.n,
            });
        }
        self.gates.extend_from_slice(&other.gates);
        Ok(())
    }

    /// `self` followed by `other`.
    pub fn then(&self, other: &Circuit) -> Result<Circuit, SimError> {
        let mut out = self.clone();
        out.append(other)?;
        Ok(out)
    }

    /// Gate-reversed adjoint circuit.
    pub fn adjoint(&self) -> Circuit {
        Circuit {
            n: self.n,
            gates: self.gates.iter().rev().map(Gate::adjoint).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }
}

/// Returns the state transformed by `gate`.
pub fn apply_gate(state: &StateVector, gate: &Gate) -> Result<StateVector, SimError> {
    let mut out = state.clone();
    out.apply_gate_mut(gate)?;
    Ok(out)
}

/// Runs `circuit` on `state`.
pub fn run_circuit(state: &StateVector, circuit: &Circuit) -> Result<StateVector, SimError> {
    let mut out = state.clone();
    out.run_mut(circuit)?;
    Ok(out)
}

/// `<psi|P|psi>` computed directly on amplitudes.
pub fn expectation(state: &StateVector, pauli: &PauliString) -> Result<f64, SimError> {
    state.check_n(pauli.n())?;
    let x = pauli.x_mask() as usize;
    let z = pauli.z_mask() as usize;
    let amps = &state.amps;
    // P|j> = i^{#Y} (-1)^{|j & z|} |j ^ x>
    let mut acc = Complex64::new(0.0, 0.0);
    for (j, a) in amps.iter().enumerate() {
        let term = amps[j ^ x].conj() * a;
        if (j & z).count_ones().is_multiple_of(2) {
            acc += term;
        } else {
            acc -= term;
        }
    }
    let value = match pauli.y_count() % 4 {
        0 => acc.re,
        1 => -acc.im,
        2 => -acc.re,
        _ => acc.im,
    };
    Ok(value.clamp(-1.0, 1.0))
}

/// `|<a|b>|^2`.
pub fn state_fidelity(a: &StateVector, b: &StateVector) -> Result<f64, SimError> {
    Ok(a.inner(b)?.norm_sqr().min(1.0))
}

/// Cumulative Born distribution after rotating into `basis`.
pub fn basis_cdf(state: &StateVector, basis: &PauliString) -> Result<Vec<f64>, SimError> {
    state.check_n(basis.n())?;
    let mut rotated = state.clone();
    rotated.rotate_into_basis(basis);
    let mut acc = 0.0;
    Ok(rotated
        .amps
        .iter()
        .map(|a| {
            acc += a.norm_sqr();
            acc
        })
        .collect())
}

/// Draws one basis index from a cumulative distribution with one uniform.
#[inline]
pub fn sample_cdf<R: Rng + ?Sized>(cdf: &[f64], rng: &mut R) -> u64 {
    let total = *cdf.last().expect("non-empty distribution");
    let u: f64 = rng.gen::<f64>() * total;
    let idx = cdf.partition_point(|&c| c <= u);
    idx.min(cdf.len() - 1) as u64
}

/// Measures every qubit in the basis named by the corresponding letter
/// (`I` reads as `Z`) and returns the outcome as a basis index, qubit 0 in
/// the most significant bit.
pub fn sample_in_basis<R: Rng + ?Sized>(
    state: &StateVector,
    basis: &PauliString,
    rng: &mut R,
) -> Result<u64, SimError> {
    let cdf = basis_cdf(state, basis)?;
    Ok(sample_cdf(&cdf, rng))
}

/// Renders an outcome index as a `0`/`1` string of length `n`.
pub fn format_bits(bits: u64, n: usize) -> String {
    (0..n)
        .map(|q| if bits >> (n - 1 - q) & 1 == 1 { '1' } else { '0' })
        .collect()
}

/// Parses a `0`/`1` string into an outcome index.
pub fn parse_bits(s: &str) -> Option<u64> {
    if s.is_empty() || s.len() > 64 {
        return None;
    }
    s.chars().try_fold(0u64, |acc, c| match c {
        '0' => Some(acc << 1),
        '1' => Some(acc << 1 | 1),
        _ => None,
    })
}
