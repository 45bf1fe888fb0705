//! Classical shadows from random single-qubit Pauli-basis measurements,
//! median-of-means Pauli estimation, and the measurement-budget planner.
//!
//! A shadow record stores the measured basis word and the outcome. The
//! inverted single-qubit channel `3 U^dagger |b><b| U - I` is never
//! materialized: for a Pauli observable it reduces to a product over the
//! support of `3 * [basis letter matches] * (+-1)`.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pauli::{Pauli, PauliString};
use crate::sim::{basis_cdf, format_bits, parse_bits, sample_cdf, Circuit, SimError, StateVector};
use crate::util::derived_rng;

/// Default median-of-means constant for the shadow shot count.
pub const DEFAULT_SHADOW_CONST: f64 = 34.0;

// eager per-basis distribution cache is used up to this many qubits
const CDF_CACHE_MAX_QUBITS: usize = 8;

#[derive(Debug, Error)]
pub enum ShadowError {
    #[error("cannot estimate from an empty shadow list")]
    Empty,
    #[error("need 1 <= groups <= records, got groups={groups}, records={records}")]
    Groups { groups: usize, records: usize },
    #[error("observable has {got} qubits but shadows have {expected}")]
    QubitMismatch { expected: usize, got: usize },
    #[error("invalid budget argument: {0}")]
    Argument(String),
    #[error("shot count overflows 64-bit unsigned integer")]
    Overflow,
    #[error("shadow file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One random-basis measurement. `basis` has no identity letters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShadowRecord {
    pub basis: PauliString,
    /// Outcome bits, qubit 0 most significant.
    pub outcome: u64,
}

impl ShadowRecord {
    /// Single-record unbiased estimate of `tr(P rho)`.
    #[inline]
    pub fn estimate(&self, p: &PauliString) -> f64 {
        let support = p.support_mask();
        if support == 0 {
            return 1.0;
        }
        if self.basis.x_mask() & support != p.x_mask() || self.basis.z_mask() & support != p.z_mask()
        {
            return 0.0;
        }
        let magnitude = 3f64.powi(support.count_ones() as i32);
        if (self.outcome & support).count_ones().is_multiple_of(2) {
            magnitude
        } else {
            -magnitude
        }
    }
}

/// Shadow records plus the master seed that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowSet {
    pub n: usize,
    pub seed: u64,
    pub records: Vec<ShadowRecord>,
}

/// Collects `t` shadow records of `prep|0^n>`, drawing the master seed
/// from `rng`.
pub fn collect_shadows<R: Rng + ?Sized>(
    prep: &Circuit,
    t: usize,
    rng: &mut R,
) -> Result<Vec<ShadowRecord>, ShadowError> {
    let seed = rng.gen::<u64>();
    Ok(collect_shadows_seeded(prep, t, seed)?.records)
}

/// Collects `t` records; record `i` uses a generator derived from
/// `(seed, i)`, so the result does not depend on thread scheduling.
pub fn collect_shadows_seeded(
    prep: &Circuit,
    t: usize,
    seed: u64,
) -> Result<ShadowSet, ShadowError> {
    let mut state = StateVector::zero(prep.n())?;
    state.run_mut(prep)?;
    collect_from_state(&state, t, seed)
}

/// Same as [`collect_shadows_seeded`] for an already prepared state.
pub fn collect_from_state(
    state: &StateVector,
    t: usize,
    seed: u64,
) -> Result<ShadowSet, ShadowError> {
    let n = state.n();
    let bases = 3usize.pow(n as u32);
    let cache: Option<Vec<Vec<f64>>> = if n <= CDF_CACHE_MAX_QUBITS && bases <= t.max(1) {
        Some(
            (0..bases)
                .map(|code| basis_cdf(state, &basis_from_code(n, code)))
                .collect::<Result<_, _>>()?,
        )
    } else {
        None
    };
    let records = (0..t)
        .into_par_iter()
        .map(|i| {
            let mut rng = derived_rng(seed, &[i as u64]);
            let mut code = 0usize;
            for _ in 0..n {
                code = code * 3 + rng.gen_range(0..3usize);
            }
            let basis = basis_from_code(n, code);
            let outcome = match &cache {
                Some(cdfs) => sample_cdf(&cdfs[code], &mut rng),
                None => sample_cdf(&basis_cdf(state, &basis)?, &mut rng),
            };
            Ok(ShadowRecord { basis, outcome })
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    Ok(ShadowSet { n, seed, records })
}

/// Base-3 code to basis word; qubit 0 is the most significant digit and
/// digits 0, 1, 2 map to X, Y, Z.
fn basis_from_code(n: usize, mut code: usize) -> PauliString {
    let mut letters = vec![Pauli::X; n];
    for q in (0..n).rev() {
        letters[q] = Pauli::NON_IDENTITY[code % 3];
        code /= 3;
    }
    PauliString::from_letters(&letters).expect("n within Pauli limits")
}

/// Median of means over `groups` contiguous groups of records.
pub fn estimate_pauli(
    shadows: &[ShadowRecord],
    p: &PauliString,
    groups: usize,
) -> Result<f64, ShadowError> {
    if shadows.is_empty() {
        return Err(ShadowError::Empty);
    }
    if groups == 0 || groups > shadows.len() {
        return Err(ShadowError::Groups {
            groups,
            records: shadows.len(),
        });
    }
    let n = shadows[0].basis.n();
    if p.n() != n {
        return Err(ShadowError::QubitMismatch {
            expected: n,
            got: p.n(),
        });
    }
    let t = shadows.len();
    let mut means: Vec<f64> = (0..groups)
        .map(|g| {
            let chunk = &shadows[g * t / groups..(g + 1) * t / groups];
            chunk.iter().map(|r| r.estimate(p)).sum::<f64>() / chunk.len() as f64
        })
        .collect();
    Ok(median(&mut means))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Writes `n=<n> T=<T> seed=<seed>` followed by `basis<TAB>bits` lines.
pub fn write_shadows<W: Write>(mut w: W, set: &ShadowSet) -> Result<(), ShadowError> {
    writeln!(w, "n={} T={} seed={}", set.n, set.records.len(), set.seed)?;
    for r in &set.records {
        writeln!(w, "{}\t{}", r.basis, format_bits(r.outcome, set.n))?;
    }
    Ok(())
}

pub fn read_shadows<R: BufRead>(r: R) -> Result<ShadowSet, ShadowError> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| ShadowError::Parse {
        line: 1,
        msg: "missing header".into(),
    })??;
    let bad_header = |msg: &str| ShadowError::Parse {
        line: 1,
        msg: format!("{msg}: {header:?}"),
    };
    let mut n = None;
    let mut t = None;
    let mut seed = None;
    for field in header.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| bad_header("expected key=value"))?;
        match key {
            "n" => n = value.parse::<usize>().ok(),
            "T" => t = value.parse::<usize>().ok(),
            "seed" => seed = value.parse::<u64>().ok(),
            _ => return Err(bad_header("unknown key")),
        }
    }
    let (n, t, seed) = match (n, t, seed) {
        (Some(n), Some(t), Some(seed)) => (n, t, seed),
        _ => return Err(bad_header("need n, T and seed")),
    };
    let mut records = Vec::with_capacity(t);
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| ShadowError::Parse { line: lineno, msg };
        let (b, o) = line
            .split_once('\t')
            .ok_or_else(|| err("expected basis<TAB>bits".into()))?;
        let basis: PauliString = b.parse().map_err(|e| err(format!("{e}")))?;
        if basis.n() != n || basis.locality() != n {
            return Err(err(format!("basis {b:?} is not a word over X,Y,Z of length {n}")));
        }
        if o.len() != n {
            return Err(err(format!("outcome {o:?} has wrong length")));
        }
        let outcome = parse_bits(o).ok_or_else(|| err(format!("bad outcome {o:?}")))?;
        records.push(ShadowRecord { basis, outcome });
    }
    if records.len() != t {
        return Err(ShadowError::Parse {
            line: 1,
            msg: format!("header declares T={t}, found {} records", records.len()),
        });
    }
    Ok(ShadowSet { n, seed, records })
}

/// Post-variational design principle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    AnsatzExpansion,
    ObservableConstruction,
    Hybrid,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::AnsatzExpansion,
        Strategy::ObservableConstruction,
        Strategy::Hybrid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::AnsatzExpansion => "ansatz-expansion",
            Strategy::ObservableConstruction => "observable-construction",
            Strategy::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

/// How neuron outputs are estimated on hardware.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementMode {
    Direct,
    Shadows,
}

impl MeasurementMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MeasurementMode::Direct => "direct",
            MeasurementMode::Shadows => "shadows",
        }
    }
}

impl fmt::Display for MeasurementMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MeasurementMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct" => Ok(MeasurementMode::Direct),
            "shadows" => Ok(MeasurementMode::Shadows),
            _ => Err(format!("unknown measurement mode {s:?}")),
        }
    }
}

/// Inputs of [`plan_budget`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetRequest {
    pub strategy: Strategy,
    pub mode: MeasurementMode,
    pub p: u64,
    pub q: u64,
    pub n: u64,
    pub d: u64,
    pub epsilon_h: f64,
    pub delta: f64,
    /// Largest squared shadow norm over the observable set.
    pub shadow_norm_max: f64,
    pub shadow_const: f64,
}

impl BudgetRequest {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        strategy: Strategy,
        mode: MeasurementMode,
        p: u64,
        q: u64,
        n: u64,
        d: u64,
        epsilon_h: f64,
        delta: f64,
        shadow_norm_max: f64,
    ) -> Self {
        Self {
            strategy,
            mode,
            p,
            q,
            n,
            d,
            epsilon_h,
            delta,
            shadow_norm_max,
            shadow_const: DEFAULT_SHADOW_CONST,
        }
    }
}

/// Shot counts that estimate all `m * d` neuron outputs within `epsilon_h`
/// with probability at least `1 - delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetPlan {
    pub strategy: Strategy,
    pub mode: MeasurementMode,
    pub p: u64,
    pub q: u64,
    pub m: u64,
    pub n: u64,
    pub d: u64,
    pub epsilon_h: f64,
    pub delta: f64,
    /// Direct: shots per (datum, neuron). Shadows: records per group.
    pub shots_per_unit: u64,
    pub total_shots: u64,
    /// Median-of-means groups; shadows mode only.
    pub groups_s: Option<u64>,
    pub shadow_norm_max: f64,
    pub shadow_const: f64,
    /// Mode favored by the asymptotic bounds for this strategy.
    pub favored_mode: MeasurementMode,
}

impl BudgetPlan {
    /// Shadow records per (datum, shift) block.
    pub fn records_per_block(&self) -> u64 {
        self.shots_per_unit * self.groups_s.unwrap_or(1)
    }
}

// ceil that ignores floating noise just above an integer
fn ceil_count(x: f64) -> u64 {
    let c = (x - 1e-9 * x.abs().max(1.0)).ceil();
    c.max(1.0) as u64
}

pub fn plan_budget(req: &BudgetRequest) -> Result<BudgetPlan, ShadowError> {
    let arg = |msg: String| Err(ShadowError::Argument(msg));
    if req.p == 0 || req.q == 0 || req.n == 0 || req.d == 0 {
        return arg(format!(
            "counts must be >= 1 (p={}, q={}, n={}, d={})",
            req.p, req.q, req.n, req.d
        ));
    }
    if !(req.epsilon_h > 0.0 && req.epsilon_h < 2.0) {
        return arg(format!("epsilon_H must lie in (0, 2), got {}", req.epsilon_h));
    }
    if !(req.delta > 0.0 && req.delta < 1.0) {
        return arg(format!("delta must lie in (0, 1), got {}", req.delta));
    }
    match req.strategy {
        Strategy::AnsatzExpansion if req.q != 1 => {
            return arg(format!("ansatz expansion uses a single observable, got q={}", req.q))
        }
        Strategy::ObservableConstruction if req.p != 1 => {
            return arg(format!("observable construction uses a single circuit, got p={}", req.p))
        }
        _ => {}
    }
    if req.mode == MeasurementMode::Shadows
        && !(req.shadow_norm_max >= 1.0 && req.shadow_norm_max.is_finite())
    {
        return arg(format!("shadow norm must be >= 1, got {}", req.shadow_norm_max));
    }
    if !(req.shadow_const > 0.0 && req.shadow_const.is_finite()) {
        return arg(format!("shadow constant must be positive, got {}", req.shadow_const));
    }
    let m = req.p.checked_mul(req.q).ok_or(ShadowError::Overflow)?;
    let md = m.checked_mul(req.d).ok_or(ShadowError::Overflow)?;
    let log_term = (2.0 * md as f64 / req.delta).ln();
    let eps2 = req.epsilon_h * req.epsilon_h;

    let (shots_per_unit, groups_s, total) = match req.mode {
        MeasurementMode::Direct => {
            // 2 m d exp(-t eps^2 / 2) <= delta
            let spu = ceil_count(2.0 / eps2 * log_term);
            let total = md.checked_mul(spu).ok_or(ShadowError::Overflow)?;
            (spu, None, total)
        }
        MeasurementMode::Shadows => {
            let spu = ceil_count(req.shadow_const * req.shadow_norm_max / eps2);
            let s = ceil_count(2.0 * log_term);
            let total = req
                .p
                .checked_mul(req.d)
                .and_then(|x| x.checked_mul(spu))
                .and_then(|x| x.checked_mul(s))
                .ok_or(ShadowError::Overflow)?;
            (spu, Some(s), total)
        }
    };

    let favored_mode = match req.strategy {
        Strategy::AnsatzExpansion => MeasurementMode::Direct,
        _ if req.shadow_norm_max < req.q as f64 => MeasurementMode::Shadows,
        _ => MeasurementMode::Direct,
    };

    Ok(BudgetPlan {
        strategy: req.strategy,
        mode: req.mode,
        p: req.p,
        q: req.q,
        m,
        n: req.n,
        d: req.d,
        epsilon_h: req.epsilon_h,
        delta: req.delta,
        shots_per_unit,
        total_shots: total,
        groups_s,
        shadow_norm_max: req.shadow_norm_max,
        shadow_const: req.shadow_const,
        favored_mode,
    })
}
