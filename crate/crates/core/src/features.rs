//! Feature-matrix generation: every datum is encoded, passed through each
//! shifted Ansatz, and measured against each Pauli observable. Entries are
//! exact expectations, shot averages, or classical-shadow estimates.
//! Also hosts the gradient and fidelity pruning heuristics.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuits::{build_ansatz, encode_data, AnsatzSpec, CircuitError, Shift, ShiftVector};
use crate::data::{fmt_real, parse_real, Dataset};
use crate::pauli::PauliString;
use crate::shadows::{collect_from_state, estimate_pauli, BudgetPlan, MeasurementMode, ShadowError};
use crate::sim::{
    basis_cdf, expectation, run_circuit, sample_cdf, state_fidelity, Circuit, SimError, StateVector,
};
use crate::util::derived_rng;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("empty registry: {0}")]
    Empty(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("budget plan does not match the request: {0}")]
    PlanMismatch(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("fidelity cross-check failed: {a} vs {b}")]
    FidelityMismatch { a: f64, b: f64 },
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Shadow(#[from] ShadowError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv line {line}: {msg}")]
    CsvValue { line: u64, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One quantum neuron: shift-registry index and observable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NeuronSpec {
    pub shift: usize,
    pub pauli: PauliString,
}

impl fmt::Display for NeuronSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}:{}", self.shift, self.pauli)
    }
}

impl FromStr for NeuronSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (idx, word) = s
            .strip_prefix('s')
            .and_then(|r| r.split_once(':'))
            .ok_or_else(|| format!("column spec {s:?} is not s<index>:<word>"))?;
        Ok(NeuronSpec {
            shift: idx.parse().map_err(|e| format!("{s:?}: {e}"))?,
            pauli: word.parse().map_err(|e| format!("{s:?}: {e}"))?,
        })
    }
}

/// How the entries were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureMode {
    Exact,
    Direct { shots: u64 },
    Shadows { records_per_group: u64, groups: u64 },
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureMode::Exact => f.write_str("exact"),
            FeatureMode::Direct { shots } => write!(f, "direct(shots={shots})"),
            FeatureMode::Shadows {
                records_per_group,
                groups,
            } => write!(f, "shadows(records_per_group={records_per_group},groups={groups})"),
        }
    }
}

/// `d x m` matrix of neuron outputs, rows are data.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub q: DMatrix<f64>,
    pub row_ids: Vec<usize>,
    pub labels: Vec<f64>,
    pub col_specs: Vec<NeuronSpec>,
    pub mode: FeatureMode,
}

impl FeatureMatrix {
    pub fn d(&self) -> usize {
        self.q.nrows()
    }

    pub fn m(&self) -> usize {
        self.q.ncols()
    }

    /// Keeps the listed columns in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            q: self.q.select_columns(cols),
            row_ids: self.row_ids.clone(),
            labels: self.labels.clone(),
            col_specs: cols.iter().map(|&c| self.col_specs[c]).collect(),
            mode: self.mode,
        }
    }

    /// Keeps the listed rows in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            q: self.q.select_rows(rows),
            row_ids: rows.iter().map(|&r| self.row_ids[r]).collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            col_specs: self.col_specs.clone(),
            mode: self.mode,
        }
    }

    /// Columns whose observable has locality at most `max_locality`.
    pub fn restrict_locality(&self, max_locality: usize) -> FeatureMatrix {
        let cols: Vec<usize> = (0..self.m())
            .filter(|&c| self.col_specs[c].pauli.locality() <= max_locality)
            .collect();
        self.select_columns(&cols)
    }

    /// Keeps only the columns whose spec is in `keep`.
    pub fn retain_specs(&self, keep: &[NeuronSpec]) -> FeatureMatrix {
        let cols: Vec<usize> = (0..self.m())
            .filter(|&c| keep.contains(&self.col_specs[c]))
            .collect();
        self.select_columns(&cols)
    }

    /// Writes `# ` comment lines, then `id,label,<colspec>...`.
    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> Result<(), FeatureError> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["id".to_string(), "label".to_string()];
        header.extend(self.col_specs.iter().map(|s| s.to_string()));
        out.write_record(&header)?;
        for i in 0..self.d() {
            let mut rec = vec![self.row_ids[i].to_string(), fmt_real(self.labels[i])];
            rec.extend(self.q.row(i).iter().map(|&v| fmt_real(v)));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a matrix written by [`FeatureMatrix::write_csv`]. The mode is
    /// taken from a `# mode=` comment when present, else exact.
    pub fn read_csv<R: Read>(mut r: R) -> Result<FeatureMatrix, FeatureError> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let mode = text
            .lines()
            .take_while(|l| l.starts_with('#'))
            .find_map(|l| l.trim_start_matches('#').trim().strip_prefix("mode="))
            .map(serde_json::from_str::<FeatureMode>)
            .transpose()
            .map_err(|e| FeatureError::CsvValue {
                line: 0,
                msg: format!("mode comment: {e}"),
            })?
            .unwrap_or(FeatureMode::Exact);
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let header = rdr.headers()?.clone();
        if header.len() < 2 || &header[0] != "id" || &header[1] != "label" {
            return Err(FeatureError::CsvValue {
                line: 1,
                msg: "header must start with id,label".into(),
            });
        }
        let col_specs = header
            .iter()
            .skip(2)
            .map(|h| h.parse::<NeuronSpec>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|msg| FeatureError::CsvValue { line: 1, msg })?;
        let mut row_ids = Vec::new();
        let mut labels = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let bad = |msg: String| FeatureError::CsvValue { line, msg };
            row_ids.push(rec[0].parse::<usize>().map_err(|e| bad(format!("id: {e}")))?);
            labels.push(parse_real(&rec[1]).map_err(bad)?);
            for v in rec.iter().skip(2) {
                values.push(parse_real(v).map_err(|msg| FeatureError::CsvValue { line, msg })?);
            }
        }
        let q = DMatrix::from_row_slice(row_ids.len(), col_specs.len(), &values);
        Ok(FeatureMatrix {
            q,
            row_ids,
            labels,
            col_specs,
            mode,
        })
    }

    pub fn save_csv(&self, path: &Path, comments: &[String]) -> Result<(), FeatureError> {
        let mut all = comments.to_vec();
        all.push(format!(
            "mode={}",
            serde_json::to_string(&self.mode).expect("mode serializes")
        ));
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?), &all)
    }

    pub fn load_csv(path: &Path) -> Result<FeatureMatrix, FeatureError> {
        FeatureMatrix::read_csv(std::fs::File::open(path)?)
    }
}

/// Canonical shift-major, Pauli-minor column specs.
pub fn column_specs(p: usize, paulis: &[PauliString]) -> Vec<NeuronSpec> {
    (0..p)
        .flat_map(|a| paulis.iter().map(move |&pauli| NeuronSpec { shift: a, pauli }))
        .collect()
}

fn check_registries(
    data: &Dataset,
    spec: &AnsatzSpec,
    shifts: &[ShiftVector],
    paulis: &[PauliString],
) -> Result<(), FeatureError> {
    if data.is_empty() {
        return Err(FeatureError::Empty("dataset"));
    }
    if shifts.is_empty() {
        return Err(FeatureError::Empty("shifts"));
    }
    if paulis.is_empty() {
        return Err(FeatureError::Empty("paulis"));
    }
    if let Some(s) = shifts.iter().find(|s| s.k() != spec.k()) {
        return Err(FeatureError::Shape(format!(
            "shift {s} has {} entries, ansatz has {} parameters",
            s.k(),
            spec.k()
        )));
    }
    if let Some(p) = paulis.iter().find(|p| p.n() != spec.n()) {
        return Err(FeatureError::Shape(format!(
            "observable {p} acts on {} qubits, ansatz on {}",
            p.n(),
            spec.n()
        )));
    }
    Ok(())
}

/// Encoding circuits per datum and Ansatz circuits per shift.
struct Prepared {
    enc: Vec<Circuit>,
    ans: Vec<Circuit>,
    n: usize,
}

impl Prepared {
    fn new(data: &Dataset, spec: &AnsatzSpec, shifts: &[ShiftVector]) -> Result<Self, FeatureError> {
        let enc = data
            .features
            .iter()
            .map(|x| encode_data(x, spec.n()))
            .collect::<Result<Vec<_>, _>>()?;
        let ans = shifts
            .iter()
            .map(|s| build_ansatz(spec, &s.angles()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { enc, ans, n: spec.n() })
    }

    fn encoded(&self, i: usize) -> Result<StateVector, SimError> {
        run_circuit(&StateVector::zero(self.n)?, &self.enc[i])
    }

    fn state(&self, i: usize, a: usize) -> Result<StateVector, SimError> {
        run_circuit(&self.encoded(i)?, &self.ans[a])
    }
}

fn assemble(
    data: &Dataset,
    p: usize,
    paulis: &[PauliString],
    blocks: Vec<Vec<f64>>,
    mode: FeatureMode,
) -> FeatureMatrix {
    let (d, q) = (data.len(), paulis.len());
    let m = p * q;
    // block (i, a) holds the q entries of row i starting at column a*q
    let q_mat = DMatrix::from_fn(d, m, |i, c| blocks[i * p + c / q][c % q]);
    FeatureMatrix {
        q: q_mat,
        row_ids: data.ids.clone(),
        labels: data.labels.clone(),
        col_specs: column_specs(p, paulis),
        mode,
    }
}

/// Exact expectations `<0|S(x)^dag U(theta)^dag P U(theta) S(x)|0>`.
pub fn generate_features_exact(
    data: &Dataset,
    spec: &AnsatzSpec,
    shifts: &[ShiftVector],
    paulis: &[PauliString],
) -> Result<FeatureMatrix, FeatureError> {
    check_registries(data, spec, shifts, paulis)?;
    let prep = Prepared::new(data, spec, shifts)?;
    let p = shifts.len();
    let blocks = (0..data.len() * p)
        .into_par_iter()
        .map(|block| {
            let (i, a) = (block / p, block % p);
            let state = prep.state(i, a)?;
            paulis.iter().map(|o| expectation(&state, o)).collect()
        })
        .collect::<Result<Vec<Vec<f64>>, SimError>>()?;
    Ok(assemble(data, p, paulis, blocks, FeatureMode::Exact))
}

/// Shot-based features following `plan`. Direct mode averages
/// `shots_per_unit` single-shot `+-1` outcomes per entry; shadows mode
/// collects one shadow set per (datum, shift) block and estimates all
/// observables of the block from it. The master seed is drawn from `rng`.
pub fn generate_features_sampled<R: Rng + ?Sized>(
    data: &Dataset,
    spec: &AnsatzSpec,
    shifts: &[ShiftVector],
    paulis: &[PauliString],
    plan: &BudgetPlan,
    rng: &mut R,
) -> Result<FeatureMatrix, FeatureError> {
    let seed = rng.gen::<u64>();
    generate_features_seeded(data, spec, shifts, paulis, plan, seed)
}

/// [`generate_features_sampled`] with an explicit master seed; block
/// `(i, a)` draws from a generator derived from `(seed, i, a)`.
pub fn generate_features_seeded(
    data: &Dataset,
    spec: &AnsatzSpec,
    shifts: &[ShiftVector],
    paulis: &[PauliString],
    plan: &BudgetPlan,
    seed: u64,
) -> Result<FeatureMatrix, FeatureError> {
    check_registries(data, spec, shifts, paulis)?;
    let (p, q, d) = (shifts.len() as u64, paulis.len() as u64, data.len() as u64);
    if plan.m != p * q || plan.d != d {
        return Err(FeatureError::PlanMismatch(format!(
            "plan has m={}, d={}; registries give m={}, d={}",
            plan.m,
            plan.d,
            p * q,
            d
        )));
    }
    if plan.mode == MeasurementMode::Shadows && plan.p != p {
        return Err(FeatureError::PlanMismatch(format!(
            "shadow plan has p={}, registry has {p} shifts",
            plan.p
        )));
    }
    let prep = Prepared::new(data, spec, shifts)?;
    let p = shifts.len();
    let blocks = (0..data.len() * p)
        .into_par_iter()
        .map(|block| -> Result<Vec<f64>, FeatureError> {
            let (i, a) = (block / p, block % p);
            let state = prep.state(i, a)?;
            match plan.mode {
                MeasurementMode::Direct => paulis
                    .iter()
                    .enumerate()
                    .map(|(b, o)| {
                        let mut rng = derived_rng(seed, &[i as u64, a as u64, b as u64]);
                        shot_mean(&state, o, plan.shots_per_unit, &mut rng)
                    })
                    .collect(),
                MeasurementMode::Shadows => {
                    let groups = plan.groups_s.unwrap_or(1);
                    let records = plan.shots_per_unit.checked_mul(groups).ok_or_else(|| {
                        FeatureError::PlanMismatch("shadow record count overflows".into())
                    })?;
                    let block_seed = crate::util::derive_seed(seed, &[i as u64, a as u64]);
                    let set = collect_from_state(&state, records as usize, block_seed)?;
                    paulis
                        .iter()
                        .map(|o| {
                            let est = estimate_pauli(&set.records, o, groups as usize)?;
                            Ok(est.clamp(-1.0, 1.0))
                        })
                        .collect()
                }
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mode = match plan.mode {
        MeasurementMode::Direct => FeatureMode::Direct {
            shots: plan.shots_per_unit,
        },
        MeasurementMode::Shadows => FeatureMode::Shadows {
            records_per_group: plan.shots_per_unit,
            groups: plan.groups_s.unwrap_or(1),
        },
    };
    Ok(assemble(data, p, paulis, blocks, mode))
}

/// Mean of `shots` single-shot eigenvalue readouts of `o`.
pub fn shot_mean<R: Rng + ?Sized>(
    state: &StateVector,
    o: &PauliString,
    shots: u64,
    rng: &mut R,
) -> Result<f64, FeatureError> {
    if o.is_identity() {
        return Ok(1.0);
    }
    if shots == 0 {
        return Err(FeatureError::Argument("shots must be >= 1".into()));
    }
    let cdf = basis_cdf(state, o)?;
    let support = o.support_mask();
    let mut sum: i64 = 0;
    for _ in 0..shots {
        let bits = sample_cdf(&cdf, rng);
        sum += if (bits & support).count_ones().is_multiple_of(2) { 1 } else { -1 };
    }
    Ok(sum as f64 / shots as f64)
}

/// Expectation source for pruning scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScoreMode {
    Exact,
    Sampled { shots: u64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruneKind {
    Gradient,
    Fidelity,
}

/// Score and decision for parameter `u` on top of `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneDecision {
    pub kind: PruneKind,
    pub u: usize,
    pub base: ShiftVector,
    pub pauli: Option<PauliString>,
    pub score: f64,
    pub threshold: f64,
    pub drop: bool,
}

fn shifted_pair(
    spec: &AnsatzSpec,
    base: &ShiftVector,
    u: usize,
) -> Result<(Circuit, Circuit), FeatureError> {
    if u >= spec.k() || base.k() != spec.k() {
        return Err(CircuitError::ParamIndex { u, k: spec.k() }.into());
    }
    let mut plus = base.angles();
    let mut minus = plus.clone();
    plus[u] += Shift::Plus.angle();
    minus[u] += Shift::Minus.angle();
    Ok((build_ansatz(spec, &plus)?, build_ansatz(spec, &minus)?))
}

fn encoded_states(data: &Dataset, n: usize) -> Result<Vec<StateVector>, FeatureError> {
    data.features
        .par_iter()
        .map(|x| Ok(run_circuit(&StateVector::zero(n)?, &encode_data(x, n)?)?))
        .collect()
}

/// Mean over the data of `(<O>_{theta + pi/2 e_u} - <O>_{theta - pi/2 e_u})^2`.
pub fn gradient_score(
    data: &Dataset,
    spec: &AnsatzSpec,
    u: usize,
    base: &ShiftVector,
    pauli: &PauliString,
    mode: ScoreMode,
) -> Result<f64, FeatureError> {
    if data.is_empty() {
        return Err(FeatureError::Empty("dataset"));
    }
    let (plus, minus) = shifted_pair(spec, base, u)?;
    let states = encoded_states(data, spec.n())?;
    let diffs = states
        .par_iter()
        .enumerate()
        .map(|(i, s)| -> Result<f64, FeatureError> {
            let sp = run_circuit(s, &plus)?;
            let sm = run_circuit(s, &minus)?;
            let diff = match mode {
                ScoreMode::Exact => expectation(&sp, pauli)? - expectation(&sm, pauli)?,
                ScoreMode::Sampled { shots, seed } => {
                    let mut rng = derived_rng(seed, &[u as u64, i as u64, 0]);
                    shot_mean(&sp, pauli, shots, &mut rng)? - shot_mean(&sm, pauli, shots, &mut rng)?
                }
            };
            Ok(diff * diff)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(diffs.iter().sum::<f64>() / data.len() as f64)
}

pub fn prune_by_gradient(
    data: &Dataset,
    spec: &AnsatzSpec,
    u: usize,
    base: &ShiftVector,
    pauli: &PauliString,
    tau_g: f64,
    mode: ScoreMode,
) -> Result<PruneDecision, FeatureError> {
    if !(tau_g >= 0.0) {
        return Err(FeatureError::Argument(format!("tau_g must be >= 0, got {tau_g}")));
    }
    let score = gradient_score(data, spec, u, base, pauli, mode)?;
    Ok(PruneDecision {
        kind: PruneKind::Gradient,
        u,
        base: base.clone(),
        pauli: Some(*pauli),
        score,
        threshold: tau_g,
        drop: score < tau_g,
    })
}

/// Fidelity of the two shifted states for one datum, computed both as a
/// state overlap and as the all-zero probability of the composed circuit
/// `S^dag U(theta+)^dag U(theta-) S |0>`.
pub fn shifted_fidelity_pair(
    x: &[f64],
    spec: &AnsatzSpec,
    u: usize,
    base: &ShiftVector,
) -> Result<(f64, f64), FeatureError> {
    let n = spec.n();
    let (plus, minus) = shifted_pair(spec, base, u)?;
    let enc = encode_data(x, n)?;
    let zero = StateVector::zero(n)?;
    let sp = run_circuit(&run_circuit(&zero, &enc)?, &plus)?;
    let sm = run_circuit(&run_circuit(&zero, &enc)?, &minus)?;
    let overlap = state_fidelity(&sp, &sm)?;
    let composed = enc.then(&minus)?.then(&plus.adjoint())?.then(&enc.adjoint())?;
    let out = run_circuit(&zero, &composed)?;
    Ok((overlap, out.amplitudes()[0].norm_sqr()))
}

/// Mean over the data of `4 (1 - F)`.
pub fn fidelity_score(
    data: &Dataset,
    spec: &AnsatzSpec,
    u: usize,
    base: &ShiftVector,
    mode: ScoreMode,
) -> Result<f64, FeatureError> {
    if data.is_empty() {
        return Err(FeatureError::Empty("dataset"));
    }
    let n = spec.n();
    let (plus, minus) = shifted_pair(spec, base, u)?;
    let terms = data
        .features
        .par_iter()
        .enumerate()
        .map(|(i, x)| -> Result<f64, FeatureError> {
            let f = match mode {
                ScoreMode::Exact => {
                    let (a, b) = shifted_fidelity_pair(x, spec, u, base)?;
                    if (a - b).abs() > 1e-10 {
                        return Err(FeatureError::FidelityMismatch { a, b });
                    }
                    a
                }
                ScoreMode::Sampled { shots, seed } => {
                    if shots == 0 {
                        return Err(FeatureError::Argument("shots must be >= 1".into()));
                    }
                    let enc = encode_data(x, n)?;
                    let composed = enc.then(&minus)?.then(&plus.adjoint())?.then(&enc.adjoint())?;
                    let out = run_circuit(&StateVector::zero(n)?, &composed)?;
                    let z = PauliString::identity(n).expect("n within limits");
                    let cdf = basis_cdf(&out, &z)?;
                    let mut rng = derived_rng(seed, &[u as u64, i as u64, 1]);
                    let hits = (0..shots).filter(|_| sample_cdf(&cdf, &mut rng) == 0).count();
                    hits as f64 / shots as f64
                }
            };
            Ok(4.0 * (1.0 - f))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(terms.iter().sum::<f64>() / data.len() as f64)
}

pub fn prune_by_fidelity(
    data: &Dataset,
    spec: &AnsatzSpec,
    u: usize,
    base: &ShiftVector,
    tau_f: f64,
    mode: ScoreMode,
) -> Result<PruneDecision, FeatureError> {
    if !(0.0..=4.0).contains(&tau_f) {
        return Err(FeatureError::Argument(format!("tau_f must lie in [0, 4], got {tau_f}")));
    }
    let score = fidelity_score(data, spec, u, base, mode)?;
    Ok(PruneDecision {
        kind: PruneKind::Fidelity,
        u,
        base: base.clone(),
        pauli: None,
        score,
        threshold: tau_f,
        drop: score < tau_f,
    })
}

/// Whether shift `s` is one of the circuits removed by pruning `u` on top
/// of `base`: `s` extends `base` and moves component `u`.
pub fn pruned_by(s: &ShiftVector, base: &ShiftVector, u: usize) -> bool {
    base.get(u) == Shift::Zero && s.get(u) != Shift::Zero && s.extends(base)
}

/// Pruning thresholds; `None` disables a heuristic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneConfig {
    pub tau_g: Option<f64>,
    pub tau_f: Option<f64>,
    pub mode: ScoreMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneOutcome {
    pub decisions: Vec<PruneDecision>,
    /// Surviving neurons, indexed into the original shift registry.
    pub retained: Vec<NeuronSpec>,
}

/// Runs both heuristics over the registry. For every registry shift used
/// as a base and every parameter it leaves at zero whose `+-pi/2`
/// extensions are registered, the fidelity score may drop all circuits
/// built on that step, and the gradient score may drop the step's neurons
/// for one observable. Bases are visited in registry order; bases already
/// removed are skipped.
pub fn prune_registry(
    data: &Dataset,
    spec: &AnsatzSpec,
    shifts: &[ShiftVector],
    paulis: &[PauliString],
    cfg: &PruneConfig,
) -> Result<PruneOutcome, FeatureError> {
    check_registries(data, spec, shifts, paulis)?;
    let p = shifts.len();
    let mut alive = vec![vec![true; paulis.len()]; p];
    let mut decisions = Vec::new();
    for (bi, base) in shifts.iter().enumerate() {
        if alive[bi].iter().all(|a| !a) {
            continue;
        }
        for u in 0..spec.k() {
            if base.get(u) != Shift::Zero
                || !shifts.contains(&base.with(u, Shift::Plus))
                || !shifts.contains(&base.with(u, Shift::Minus))
            {
                continue;
            }
            let family: Vec<usize> = (0..p).filter(|&s| pruned_by(&shifts[s], base, u)).collect();
            if family.iter().all(|&s| alive[s].iter().all(|a| !a)) {
                continue;
            }
            if let Some(tau_f) = cfg.tau_f {
                let dec = prune_by_fidelity(data, spec, u, base, tau_f, cfg.mode)?;
                let drop = dec.drop;
                decisions.push(dec);
                if drop {
                    for &s in &family {
                        alive[s].iter_mut().for_each(|a| *a = false);
                    }
                    continue;
                }
            }
            if let Some(tau_g) = cfg.tau_g {
                for (b, o) in paulis.iter().enumerate() {
                    if family.iter().all(|&s| !alive[s][b]) {
                        continue;
                    }
                    let dec = prune_by_gradient(data, spec, u, base, o, tau_g, cfg.mode)?;
                    if dec.drop {
                        for &s in &family {
                            alive[s][b] = false;
                        }
                    }
                    decisions.push(dec);
                }
            }
        }
    }
    let retained = (0..p)
        .flat_map(|a| {
            let alive = &alive;
            paulis
                .iter()
                .enumerate()
                .filter(move |(b, _)| alive[a][*b])
                .map(move |(_, &pauli)| NeuronSpec { shift: a, pauli })
        })
        .collect();
    Ok(PruneOutcome { decisions, retained })
}
