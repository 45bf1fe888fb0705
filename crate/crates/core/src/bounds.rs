//! Error-propagation guarantees for post-variational heads and randomized
//! checks of them: loss-gap thresholds for unconstrained and ball
//! constrained regression, the BCE extension, the rank-perturbation lemma
//! and Wedin's pseudoinverse bound.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::head::{
    compute_loss, fit_constrained, fit_least_squares, fit_logistic, predict_values, Constraint,
    FitOptions, HeadError, LossKind,
};
use crate::util::{
    derived_rng, max_norm, numerical_rank, pseudoinverse, sigma_min_nonzero, spectral_norm,
};

/// Relative cutoff for "nonzero" singular values and numerical rank.
pub const RANK_CUTOFF: f64 = 1e-10;
/// Smallest `m` and `d` admitted in unconstrained-regression trials.
pub const THEOREM1_MIN_DIM: usize = 9;

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("shape mismatch: {a:?} vs {b:?}")]
    Shape { a: (usize, usize), b: (usize, usize) },
    #[error("rank mismatch: rank(A)={a}, rank(B)={b}")]
    RankMismatch { a: usize, b: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Head(#[from] HeadError),
}

fn same_shape(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(), BoundsError> {
    if a.shape() != b.shape() {
        return Err(BoundsError::Shape {
            a: a.shape(),
            b: b.shape(),
        });
    }
    Ok(())
}

/// Both branches of the unconstrained-regression threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Threshold {
    /// `min(sigma_min(Q), sigma_min(Qhat)) / sqrt(min(m,d) m d)`.
    pub rank_branch: f64,
    /// `epsilon / (6 sqrt(m) ||Y|| ||Q|| ||Q^+||^2)`.
    pub loss_branch: f64,
    pub value: f64,
}

pub fn theorem1_threshold(
    q: &DMatrix<f64>,
    qhat: &DMatrix<f64>,
    y: &[f64],
    epsilon: f64,
) -> Result<Theorem1Threshold, BoundsError> {
    same_shape(q, qhat)?;
    if !(epsilon > 0.0) {
        return Err(BoundsError::Argument(format!("epsilon must be > 0, got {epsilon}")));
    }
    if y.len() != q.nrows() {
        return Err(BoundsError::Shape {
            a: q.shape(),
            b: (y.len(), 1),
        });
    }
    let (d, m) = q.shape();
    let s_q = sigma_min_nonzero(q, RANK_CUTOFF)
        .ok_or_else(|| BoundsError::Degenerate("Q has no nonzero singular value".into()))?;
    let s_qhat = sigma_min_nonzero(qhat, RANK_CUTOFF)
        .ok_or_else(|| BoundsError::Degenerate("Qhat has no nonzero singular value".into()))?;
    let (m_f, d_f) = (m as f64, d as f64);
    let rank_branch = s_q.min(s_qhat) / (m.min(d) as f64 * m_f * d_f).sqrt();
    let y_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let q_norm = spectral_norm(q);
    let pinv_norm = 1.0 / s_q;
    let loss_branch = epsilon / (6.0 * m_f.sqrt() * y_norm * q_norm * pinv_norm * pinv_norm);
    Ok(Theorem1Threshold {
        rank_branch,
        loss_branch,
        value: rank_branch.min(loss_branch),
    })
}

/// `epsilon / (2 sqrt(m))`, shared by ball-constrained regression and BCE.
pub fn theorem2_threshold(m: usize, epsilon: f64) -> f64 {
    epsilon / (2.0 * (m as f64).sqrt())
}

/// Whether `||A - B||_max < min(sigma_min(A), sigma_min(B)) / sqrt(min(M,N) M N)`.
pub fn rank_lemma_premise(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    if a.shape() != b.shape() {
        return false;
    }
    let (rows, cols) = a.shape();
    let (Some(sa), Some(sb)) = (
        sigma_min_nonzero(a, RANK_CUTOFF),
        sigma_min_nonzero(b, RANK_CUTOFF),
    ) else {
        return false;
    };
    let scale = (rows.min(cols) as f64 * rows as f64 * cols as f64).sqrt();
    max_norm(&(a - b)) < sa.min(sb) / scale
}

/// `(||B^+ - A^+||, 2 ||A^+|| ||B^+|| ||B - A||)`, spectral norms.
pub fn wedin_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(f64, f64), BoundsError> {
    same_shape(a, b)?;
    let (ra, rb) = (numerical_rank(a, RANK_CUTOFF), numerical_rank(b, RANK_CUTOFF));
    if ra != rb {
        return Err(BoundsError::RankMismatch { a: ra, b: rb });
    }
    let pa = pseudoinverse(a, RANK_CUTOFF);
    let pb = pseudoinverse(b, RANK_CUTOFF);
    let lhs = spectral_norm(&(&pb - &pa));
    let rhs = 2.0 * spectral_norm(&pa) * spectral_norm(&pb) * spectral_norm(&(b - a));
    Ok((lhs, rhs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapMode {
    Unconstrained,
    Ball,
    LogisticBall,
}

impl GapMode {
    pub fn theorem(self) -> TheoremKind {
        match self {
            GapMode::Unconstrained => TheoremKind::One,
            GapMode::Ball => TheoremKind::Two,
            GapMode::LogisticBall => TheoremKind::Bce,
        }
    }
}

impl FromStr for GapMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unconstrained" => Ok(GapMode::Unconstrained),
            "ball" => Ok(GapMode::Ball),
            "logistic_ball" | "logistic-ball" => Ok(GapMode::LogisticBall),
            _ => Err(format!("unknown bound mode {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TheoremKind {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "BCE")]
    Bce,
}

impl fmt::Display for TheoremKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TheoremKind::One => "1",
            TheoremKind::Two => "2",
            TheoremKind::Bce => "BCE",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub theorem: TheoremKind,
    pub m: usize,
    pub d: usize,
    pub max_norm_threshold: f64,
    pub observed_max_norm: f64,
    pub delta_loss: f64,
    pub epsilon: f64,
    /// `2 sqrt(m) ||Qhat - Q||_max`, the intermediate bound of the
    /// constrained chains; absent for unconstrained regression.
    pub chain_bound: Option<f64>,
    /// `delta_loss < epsilon` whenever the premise held.
    pub satisfied: bool,
}

impl PerturbationReport {
    pub fn premise_held(&self) -> bool {
        self.observed_max_norm <= self.max_norm_threshold
    }

    pub const CSV_HEADER: &'static str =
        "theorem,m,d,epsilon,threshold,observed_max_norm,delta_loss,satisfied";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:e},{:e},{:e},{:e},{}",
            self.theorem,
            self.m,
            self.d,
            self.epsilon,
            self.max_norm_threshold,
            self.observed_max_norm,
            self.delta_loss,
            self.satisfied
        )
    }
}

/// Fits the matching head on `Q` and on `Qhat`, evaluates both on `Q`, and
/// reports the loss gap against the threshold of `mode`.
pub fn verify_loss_gap(
    q: &DMatrix<f64>,
    qhat: &DMatrix<f64>,
    y: &[f64],
    mode: GapMode,
    epsilon: f64,
) -> Result<PerturbationReport, BoundsError> {
    same_shape(q, qhat)?;
    if !(epsilon > 0.0) {
        return Err(BoundsError::Argument(format!("epsilon must be > 0, got {epsilon}")));
    }
    let (d, m) = q.shape();
    let observed = max_norm(&(qhat - q));
    let opts = FitOptions::default();
    let (threshold, delta_loss) = match mode {
        GapMode::Unconstrained => {
            if m < THEOREM1_MIN_DIM || d < THEOREM1_MIN_DIM {
                return Err(BoundsError::Argument(format!(
                    "unconstrained trials need m, d >= {THEOREM1_MIN_DIM}, got m={m}, d={d}"
                )));
            }
            let thr = theorem1_threshold(q, qhat, y, epsilon)?.value;
            let a = fit_least_squares(q, y, &opts)?;
            let b = fit_least_squares(qhat, y, &opts)?;
            (thr, gap(LossKind::Rmse, q, y, &a, &b)?)
        }
        GapMode::Ball => {
            let a = fit_constrained(q, y, Constraint::Ball, &opts)?;
            let b = fit_constrained(qhat, y, Constraint::Ball, &opts)?;
            (theorem2_threshold(m, epsilon), gap(LossKind::Rmse, q, y, &a, &b)?)
        }
        GapMode::LogisticBall => {
            let a = fit_logistic(q, y, Constraint::Ball, &opts)?;
            let b = fit_logistic(qhat, y, Constraint::Ball, &opts)?;
            (theorem2_threshold(m, epsilon), gap(LossKind::Bce, q, y, &a, &b)?)
        }
    };
    let chain_bound = (mode != GapMode::Unconstrained).then(|| 2.0 * (m as f64).sqrt() * observed);
    Ok(PerturbationReport {
        theorem: mode.theorem(),
        m,
        d,
        max_norm_threshold: threshold,
        observed_max_norm: observed,
        delta_loss,
        epsilon,
        chain_bound,
        satisfied: observed > threshold || delta_loss < epsilon,
    })
}

fn gap(
    kind: LossKind,
    q: &DMatrix<f64>,
    y: &[f64],
    fitted: &crate::head::RegressionModel,
    perturbed: &crate::head::RegressionModel,
) -> Result<f64, HeadError> {
    let base = compute_loss(kind, y, &predict_values(fitted, q)?)?;
    let moved = compute_loss(kind, y, &predict_values(perturbed, q)?)?;
    Ok(moved - base)
}

/// Randomized loss-gap trial parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialSpec {
    pub mode: GapMode,
    pub d: usize,
    pub m: usize,
    pub epsilon: f64,
    /// Perturbation max-norm as a fraction of the threshold.
    pub fraction: f64,
}

impl TrialSpec {
    pub fn new(mode: GapMode) -> Self {
        let (d, m) = match mode {
            GapMode::Unconstrained => (20, 10),
            _ => (50, 10),
        };
        Self {
            mode,
            d,
            m,
            epsilon: 0.1,
            fraction: 0.9,
        }
    }
}

/// Random `Q` with entries in `[-1, 1]`, a sign-pattern target, and a
/// perturbation with max-norm `fraction * threshold`. Unconstrained trials
/// shrink the perturbation until the post hoc threshold admits it.
pub fn random_trial(spec: &TrialSpec, seed: u64) -> Result<PerturbationReport, BoundsError> {
    if spec.d == 0 || spec.m == 0 || !(spec.fraction > 0.0) {
        return Err(BoundsError::Argument("trial needs d, m >= 1 and fraction > 0".into()));
    }
    let mut rng = derived_rng(seed, &[spec.d as u64, spec.m as u64]);
    let q = DMatrix::from_fn(spec.d, spec.m, |_, _| rng.gen_range(-1.0..=1.0));
    let signs: Vec<bool> = (0..spec.d).map(|_| rng.gen_bool(0.5)).collect();
    let y: Vec<f64> = match spec.mode {
        GapMode::LogisticBall => signs.iter().map(|&s| f64::from(s)).collect(),
        _ => signs.iter().map(|&s| if s { 1.0 } else { -1.0 }).collect(),
    };
    let mut direction = DMatrix::from_fn(spec.d, spec.m, |_, _| rng.gen_range(-1.0..=1.0));
    let peak = max_norm(&direction);
    if peak > 0.0 {
        direction /= peak;
    }
    let mut target = match spec.mode {
        GapMode::Unconstrained => spec.fraction * theorem1_threshold(&q, &q, &y, spec.epsilon)?.value,
        _ => spec.fraction * theorem2_threshold(spec.m, spec.epsilon),
    };
    for _ in 0..60 {
        let qhat = &q + &direction * target;
        let report = verify_loss_gap(&q, &qhat, &y, spec.mode, spec.epsilon)?;
        if report.premise_held() || spec.mode != GapMode::Unconstrained {
            return Ok(report);
        }
        target *= 0.5;
    }
    Err(BoundsError::Degenerate(
        "could not place a perturbation inside the post hoc threshold".into(),
    ))
}

/// Random matrix pair for lemma and Wedin checks. About a quarter of the
/// instances are rank deficient.
pub fn random_pair<R: Rng + ?Sized>(rng: &mut R) -> (DMatrix<f64>, DMatrix<f64>) {
    let rows = rng.gen_range(2..=8);
    let cols = rng.gen_range(2..=8);
    let full = rows.min(cols);
    let rank = if rng.gen_bool(0.25) { rng.gen_range(1..=full) } else { full };
    let left = DMatrix::from_fn(rows, rank, |_, _| rng.gen_range(-1.0..=1.0));
    let right = DMatrix::from_fn(rank, cols, |_, _| rng.gen_range(-1.0..=1.0));
    let a = &left * &right;
    let smin = sigma_min_nonzero(&a, RANK_CUTOFF).unwrap_or(0.0);
    let scale = (full as f64 * rows as f64 * cols as f64).sqrt();
    let b = if rank == full {
        // any perturbation inside the lemma's premise keeps full rank
        let size = rng.gen_range(0.0..0.5) * smin / scale;
        &a + DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-size..=size))
    } else {
        // perturbing the factors keeps the rank generically
        let eps = rng.gen_range(1e-4..1e-1);
        let l2 = left.map(|v| v + rng.gen_range(-eps..=eps));
        let r2 = right.map(|v| v + rng.gen_range(-eps..=eps));
        l2 * r2
    };
    (a, b)
}
