//! Data-encoding circuit, layered RY/CNOT-ring Ansatz, and the fixed
//! parameter-shift ensemble used for Ansatz expansion.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{run_circuit, Circuit, Gate, SimError, StateVector};
use crate::util::{binomial, combinations, CountError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CircuitError {
    #[error("feature length {len} is not divisible by qubit count {n}")]
    Shape { len: usize, n: usize },
    #[error("feature {index} = {value} outside [0, 2pi)")]
    Range { index: usize, value: f64 },
    #[error("expected {expected} parameters, got {got}")]
    ParamLength { expected: usize, got: usize },
    #[error("derivative order {order} exceeds parameter count {k}")]
    OrderTooLarge { k: usize, order: usize },
    #[error("invalid ansatz: {0}")]
    Ansatz(String),
    #[error("parameter index {u} out of range for {k} parameters")]
    ParamIndex { u: usize, k: usize },
    #[error(transparent)]
    Count(#[from] CountError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Gate used on even rows of the encoded grid; odd rows use the other one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncodingOrder {
    #[default]
    RzFirst,
    RxFirst,
}

/// Encodes `x` as a grid with one column per qubit: row `r` puts
/// `x[r*n + j]` on qubit `j`, alternating RZ and RX rows starting with RZ.
pub fn encode_data(x: &[f64], n: usize) -> Result<Circuit, CircuitError> {
    encode_data_with(x, n, EncodingOrder::RzFirst)
}

pub fn encode_data_with(
    x: &[f64],
    n: usize,
    order: EncodingOrder,
) -> Result<Circuit, CircuitError> {
    if n == 0 || !x.len().is_multiple_of(n) {
        return Err(CircuitError::Shape { len: x.len(), n });
    }
    if let Some((index, &value)) = x
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..TAU).contains(*v))
    {
        return Err(CircuitError::Range { index, value });
    }
    let mut circ = Circuit::new(n);
    for (r, row) in x.chunks(n).enumerate() {
        let z_row = (r % 2 == 0) == (order == EncodingOrder::RzFirst);
        for (j, &angle) in row.iter().enumerate() {
            let gate = if z_row {
                Gate::Rz { qubit: j, angle }
            } else {
                Gate::Rx { qubit: j, angle }
            };
            circ.push(gate)?;
        }
    }
    Ok(circ)
}

/// How consecutive CNOT rings are laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntanglerClosure {
    /// Every odd-indexed layer emits its ring in reversed gate order, so
    /// pairs of rings cancel when all angles are zero.
    #[default]
    Mirrored,
    /// Every layer emits `0->1, 1->2, ..., n-1->0`.
    Forward,
}

/// Layered Ansatz: per layer an RY on every qubit, then a CNOT ring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnsatzSpec {
    n: usize,
    layers: usize,
    closure: EntanglerClosure,
}

impl AnsatzSpec {
    /// Builds a spec; with [`EntanglerClosure::Mirrored`] the circuit at
    /// zero angles is checked to be the identity on every basis state.
    pub fn new(n: usize, layers: usize, closure: EntanglerClosure) -> Result<Self, CircuitError> {
        if n == 0 || layers == 0 {
            return Err(CircuitError::Ansatz(format!(
                "need at least one qubit and one layer (n={n}, layers={layers})"
            )));
        }
        let spec = Self { n, layers, closure };
        if closure == EntanglerClosure::Mirrored && !spec.identity_at_zero()? {
            return Err(CircuitError::Ansatz(format!(
                "mirrored rings with {layers} layers on {n} qubits are not identity at zero"
            )));
        }
        Ok(spec)
    }

    /// Two layers, mirrored closure.
    pub fn standard(n: usize) -> Result<Self, CircuitError> {
        Self::new(n, 2, EntanglerClosure::Mirrored)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn closure(&self) -> EntanglerClosure {
        self.closure
    }

    /// Parameter count `n * layers`.
    pub fn k(&self) -> usize {
        self.n * self.layers
    }

    fn ring(&self, layer: usize) -> Vec<Gate> {
        if self.n < 2 {
            return Vec::new();
        }
        let mut gates: Vec<Gate> = (0..self.n)
            .map(|i| Gate::Cnot {
                control: i,
                target: (i + 1) % self.n,
            })
            .collect();
        if self.closure == EntanglerClosure::Mirrored && layer % 2 == 1 {
            gates.reverse();
        }
        gates
    }

    fn identity_at_zero(&self) -> Result<bool, CircuitError> {
        let circ = build_ansatz(self, &vec![0.0; self.k()])?;
        let n = self.n.min(12);
        if n != self.n {
            // beyond desk scale, fall back to the structural argument:
            // an even number of mirrored rings cancels gate by gate
            return Ok(self.layers.is_multiple_of(2));
        }
        for idx in 0..(1usize << n) {
            let s = StateVector::basis(n, idx)?;
            let out = run_circuit(&s, &circ)?;
            if (crate::sim::state_fidelity(&s, &out)? - 1.0).abs() > 1e-12 {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Builds `U(theta)`; `theta[layer * n + qubit]` drives the RY on `qubit`
/// in `layer`.
pub fn build_ansatz(spec: &AnsatzSpec, theta: &[f64]) -> Result<Circuit, CircuitError> {
    if theta.len() != spec.k() {
        return Err(CircuitError::ParamLength {
            expected: spec.k(),
            got: theta.len(),
        });
    }
    let mut circ = Circuit::new(spec.n);
    for layer in 0..spec.layers {
        for q in 0..spec.n {
            circ.push(Gate::Ry {
                qubit: q,
                angle: theta[layer * spec.n + q],
            })?;
        }
        for g in spec.ring(layer) {
            circ.push(g)?;
        }
    }
    Ok(circ)
}

/// One component of a shift vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Shift {
    Zero,
    Plus,
    Minus,
}

impl Shift {
    pub fn angle(self) -> f64 {
        match self {
            Shift::Zero => 0.0,
            Shift::Plus => FRAC_PI_2,
            Shift::Minus => -FRAC_PI_2,
        }
    }

    fn symbol(self) -> char {
        match self {
            Shift::Zero => '0',
            Shift::Plus => '+',
            Shift::Minus => '-',
        }
    }
}

/// Parameter setting with every entry in `{0, +pi/2, -pi/2}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShiftVector(Vec<Shift>);

impl ShiftVector {
    pub fn zeros(k: usize) -> Self {
        Self(vec![Shift::Zero; k])
    }

    pub fn from_shifts(values: Vec<Shift>) -> Self {
        Self(values)
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[Shift] {
        &self.0
    }

    pub fn get(&self, u: usize) -> Shift {
        self.0[u]
    }

    /// Number of nonzero entries.
    pub fn order(&self) -> usize {
        self.0.iter().filter(|s| **s != Shift::Zero).count()
    }

    pub fn angles(&self) -> Vec<f64> {
        self.0.iter().map(|s| s.angle()).collect()
    }

    pub fn with(&self, u: usize, shift: Shift) -> Self {
        let mut v = self.0.clone();
        v[u] = shift;
        Self(v)
    }

    /// True if every nonzero entry of `base` is present here unchanged.
    pub fn extends(&self, base: &ShiftVector) -> bool {
        self.k() == base.k()
            && base
                .0
                .iter()
                .zip(&self.0)
                .all(|(b, s)| *b == Shift::Zero || b == s)
    }
}

impl fmt::Display for ShiftVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.0 {
            write!(f, "{}", s.symbol())?;
        }
        Ok(())
    }
}

/// `sum_{l=0}^{R} C(k, l) 2^l`.
pub fn count_shifts(k: usize, max_order: usize) -> Result<u64, CircuitError> {
    if max_order > k {
        return Err(CircuitError::OrderTooLarge {
            k,
            order: max_order,
        });
    }
    let mut total: u64 = 0;
    for l in 0..=max_order {
        let pow = u32::try_from(l)
            .ok()
            .and_then(|e| 2u64.checked_pow(e))
            .ok_or(CountError::Overflow)?;
        let term = binomial(k as u64, l as u64)?
            .checked_mul(pow)
            .ok_or(CountError::Overflow)?;
        total = total.checked_add(term).ok_or(CountError::Overflow)?;
    }
    Ok(total)
}

/// Every shift vector of order `<= max_order`: ascending order, then
/// lexicographic positions, then signs with `+` before `-`. The all-zero
/// vector comes first.
pub fn enumerate_shifts(k: usize, max_order: usize) -> Result<Vec<ShiftVector>, CircuitError> {
    let count = count_shifts(k, max_order)?;
    let mut out = Vec::with_capacity(count as usize);
    for l in 0..=max_order {
        for positions in combinations(k, l) {
            for signs in 0..(1usize << l) {
                let mut v = vec![Shift::Zero; k];
                for (slot, &u) in positions.iter().enumerate() {
                    // first slot is the most significant sign bit
                    let minus = signs >> (l - 1 - slot) & 1 == 1;
                    v[u] = if minus { Shift::Minus } else { Shift::Plus };
                }
                out.push(ShiftVector(v));
            }
        }
    }
    Ok(out)
}
