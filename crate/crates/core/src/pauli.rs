//! Pauli strings in bitmask form, locality-bounded enumeration and
//! dense-matrix Pauli decomposition.
//!
//! A string over `{I, X, Y, Z}` is stored as an X-mask and a Z-mask using
//! the same bit layout as [`crate::sim::StateVector`] indices: qubit 0 is
//! the most significant bit. `X` sets the X bit, `Z` the Z bit and `Y` both.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::{binomial, CountError};

/// Largest register a [`PauliString`] can describe.
pub const MAX_PAULI_QUBITS: usize = 64;

/// Largest register accepted by the dense decomposition path.
pub const MAX_DECOMPOSE_QUBITS: usize = 6;

/// Decomposition coefficients smaller than this are dropped.
pub const COEFF_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum PauliError {
    #[error("invalid Pauli letter {0:?}")]
    InvalidLetter(char),
    #[error("Pauli string must have between 1 and {MAX_PAULI_QUBITS} letters, got {0}")]
    BadLength(usize),
    #[error("locality {locality} exceeds qubit count {n}")]
    LocalityTooLarge { n: usize, locality: usize },
    #[error("matrix is {rows}x{cols}, expected a square power-of-two dimension")]
    BadDimension { rows: usize, cols: usize },
    #[error("dense decomposition supports at most {MAX_DECOMPOSE_QUBITS} qubits, got {0}")]
    TooManyQubits(usize),
    #[error("matrix is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),
    #[error(transparent)]
    Count(#[from] CountError),
}

/// Single-qubit Pauli letter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const NON_IDENTITY: [Pauli; 3] = [Pauli::X, Pauli::Y, Pauli::Z];

    pub fn as_char(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }

    pub fn from_char(c: char) -> Result<Self, PauliError> {
        match c {
            'I' => Ok(Pauli::I),
            'X' => Ok(Pauli::X),
            'Y' => Ok(Pauli::Y),
            'Z' => Ok(Pauli::Z),
            other => Err(PauliError::InvalidLetter(other)),
        }
    }

    fn bits(self) -> (bool, bool) {
        match self {
            Pauli::I => (false, false),
            Pauli::X => (true, false),
            Pauli::Y => (true, true),
            Pauli::Z => (false, true),
        }
    }

    /// 2x2 matrix of the letter.
    pub fn matrix(self) -> [[Complex64; 2]; 2] {
        let o = Complex64::new(0.0, 0.0);
        let l = Complex64::new(1.0, 0.0);
        let i = Complex64::new(0.0, 1.0);
        match self {
            Pauli::I => [[l, o], [o, l]],
            Pauli::X => [[o, l], [l, o]],
            Pauli::Y => [[o, -i], [i, o]],
            Pauli::Z => [[l, o], [o, -l]],
        }
    }
}

/// An n-qubit Pauli word such as `"XZII"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PauliString {
    n: usize,
    x: u64,
    z: u64,
}

impl PauliString {
    pub fn identity(n: usize) -> Result<Self, PauliError> {
        check_len(n)?;
        Ok(Self { n, x: 0, z: 0 })
    }

    pub fn from_letters(letters: &[Pauli]) -> Result<Self, PauliError> {
        let n = letters.len();
        check_len(n)?;
        let mut p = Self { n, x: 0, z: 0 };
        for (q, &letter) in letters.iter().enumerate() {
            p.set(q, letter);
        }
        Ok(p)
    }

    /// Builds a string from raw masks. Bits above `n` are rejected.
    pub fn from_masks(n: usize, x: u64, z: u64) -> Result<Self, PauliError> {
        check_len(n)?;
        let valid = low_mask(n);
        if (x | z) & !valid != 0 {
            return Err(PauliError::BadLength(n));
        }
        Ok(Self { n, x, z })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn x_mask(&self) -> u64 {
        self.x
    }

    pub fn z_mask(&self) -> u64 {
        self.z
    }

    /// Bits of qubits acted on non-trivially.
    pub fn support_mask(&self) -> u64 {
        self.x | self.z
    }

    pub fn locality(&self) -> usize {
        self.support_mask().count_ones() as usize
    }

    pub fn y_count(&self) -> usize {
        (self.x & self.z).count_ones() as usize
    }

    pub fn is_identity(&self) -> bool {
        self.support_mask() == 0
    }

    pub fn letter(&self, qubit: usize) -> Pauli {
        let bit = 1u64 << (self.n - 1 - qubit);
        match (self.x & bit != 0, self.z & bit != 0) {
            (false, false) => Pauli::I,
            (true, false) => Pauli::X,
            (true, true) => Pauli::Y,
            (false, true) => Pauli::Z,
        }
    }

    pub fn letters(&self) -> Vec<Pauli> {
        (0..self.n).map(|q| self.letter(q)).collect()
    }

    fn set(&mut self, qubit: usize, letter: Pauli) {
        let bit = 1u64 << (self.n - 1 - qubit);
        let (xb, zb) = letter.bits();
        self.x = if xb { self.x | bit } else { self.x & !bit };
        self.z = if zb { self.z | bit } else { self.z & !bit };
    }

    /// Action on a basis index: `P|j> = phase * |j ^ x_mask>`.
    #[inline]
    pub fn phase_on(&self, index: usize) -> Complex64 {
        let sign = if ((index as u64) & self.z).count_ones().is_multiple_of(2) {
            1.0
        } else {
            -1.0
        };
        // i^{#Y}
        match self.y_count() % 4 {
            0 => Complex64::new(sign, 0.0),
            1 => Complex64::new(0.0, sign),
            2 => Complex64::new(-sign, 0.0),
            _ => Complex64::new(0.0, -sign),
        }
    }

    /// Dense `2^n x 2^n` matrix built by Kronecker products.
    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut out = DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0));
        for q in 0..self.n {
            let m = self.letter(q).matrix();
            let small = DMatrix::from_fn(2, 2, |r, c| m[r][c]);
            out = out.kronecker(&small);
        }
        out
    }
}

fn check_len(n: usize) -> Result<(), PauliError> {
    if n == 0 || n > MAX_PAULI_QUBITS {
        return Err(PauliError::BadLength(n));
    }
    Ok(())
}

fn low_mask(n: usize) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for q in 0..self.n {
            write!(f, "{}", self.letter(q).as_char())?;
        }
        Ok(())
    }
}

impl FromStr for PauliString {
    type Err = PauliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let letters = s
            .chars()
            .map(Pauli::from_char)
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_letters(&letters)
    }
}

impl Serialize for PauliString {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PauliString {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Number of Pauli strings on `n` qubits with locality at most `max_locality`:
/// `sum_{l=0}^{L} C(n, l) 3^l`.
pub fn count_local_paulis(n: usize, max_locality: usize) -> Result<u64, PauliError> {
    if max_locality > n {
        return Err(PauliError::LocalityTooLarge {
            n,
            locality: max_locality,
        });
    }
    let mut total: u64 = 0;
    for l in 0..=max_locality {
        let term = binomial(n as u64, l as u64)?
            .checked_mul(checked_pow(3, l)?)
            .ok_or(CountError::Overflow)?;
        total = total.checked_add(term).ok_or(CountError::Overflow)?;
    }
    Ok(total)
}

fn checked_pow(base: u64, exp: usize) -> Result<u64, CountError> {
    let exp = u32::try_from(exp).map_err(|_| CountError::Overflow)?;
    base.checked_pow(exp).ok_or(CountError::Overflow)
}

/// All Pauli strings with locality `<= max_locality`, ordered by ascending
/// locality, then lexicographic support positions, then letters `X < Y < Z`.
/// The first element is always the identity.
pub fn enumerate_local_paulis(
    n: usize,
    max_locality: usize,
) -> Result<Vec<PauliString>, PauliError> {
    check_len(n)?;
    let count = count_local_paulis(n, max_locality)?;
    let mut out = Vec::with_capacity(count as usize);
    for l in 0..=max_locality {
        let letter_choices = 3usize.pow(l as u32);
        for positions in crate::util::combinations(n, l) {
            // base-3 counter over letters, last support slot fastest
            for code in 0..letter_choices {
                let mut word = vec![Pauli::I; n];
                let mut rest = code;
                for &q in positions.iter().rev() {
                    word[q] = Pauli::NON_IDENTITY[rest % 3];
                    rest /= 3;
                }
                out.push(PauliString::from_letters(&word)?);
            }
        }
    }
    Ok(out)
}

/// Keeps only the strings whose locality is at most `max_locality`,
/// preserving order.
pub fn restrict_locality(paulis: &[PauliString], max_locality: usize) -> Vec<PauliString> {
    paulis
        .iter()
        .copied()
        .filter(|p| p.locality() <= max_locality)
        .collect()
}

/// Shadow-norm bound `4^locality` for a Pauli string under random
/// single-qubit Clifford measurements.
pub fn shadow_norm_bound(p: &PauliString) -> f64 {
    4f64.powi(p.locality() as i32)
}

/// Real Pauli-basis coefficients of a Hermitian matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PauliDecomposition {
    pub n: usize,
    /// Nonzero terms in canonical enumeration order.
    pub terms: Vec<(PauliString, f64)>,
}

impl PauliDecomposition {
    pub fn coefficient(&self, p: &PauliString) -> f64 {
        self.terms
            .iter()
            .find(|(q, _)| q == p)
            .map(|(_, c)| *c)
            .unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// `sum_P c_P M_P` as a dense matrix.
    pub fn reconstruct(&self) -> DMatrix<Complex64> {
        let dim = 1usize << self.n;
        let mut out = DMatrix::zeros(dim, dim);
        for (p, c) in &self.terms {
            for k in 0..dim {
                let row = k ^ p.x_mask() as usize;
                out[(row, k)] += p.phase_on(k) * *c;
            }
        }
        out
    }
}

/// Decomposes a Hermitian matrix into Pauli strings via
/// `c_P = tr(P H) / 2^n`.
pub fn pauli_decompose(h: &DMatrix<Complex64>) -> Result<PauliDecomposition, PauliError> {
    let (rows, cols) = h.shape();
    if rows != cols || rows < 2 || !rows.is_power_of_two() {
        return Err(PauliError::BadDimension { rows, cols });
    }
    let n = rows.trailing_zeros() as usize;
    if n > MAX_DECOMPOSE_QUBITS {
        return Err(PauliError::TooManyQubits(n));
    }
    let deviation = (h - h.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if deviation > 1e-10 {
        return Err(PauliError::NotHermitian(deviation));
    }
    let dim = rows as f64;
    let mut terms = Vec::new();
    for p in enumerate_local_paulis(n, n)? {
        // tr(P H) = sum_k <k ^ x| P |k> H[k, k ^ x]
        let x = p.x_mask() as usize;
        let mut tr = Complex64::new(0.0, 0.0);
        for k in 0..rows {
            tr += p.phase_on(k) * h[(k, k ^ x)];
        }
        let c = tr.re / dim;
        if c.abs() >= COEFF_FLOOR {
            terms.push((p, c));
        }
    }
    Ok(PauliDecomposition { n, terms })
}
