//! Convex classical heads over a feature matrix: losses, least squares,
//! ridge and unit-ball constrained regression, logistic and softmax
//! classification.
//!
//! The feature matrix is `d x m` (rows are data). An optional intercept is
//! appended as a constant column and is never constrained or penalized.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::{pseudoinverse, spectral_norm};

/// Relative singular-value cutoff for least-squares pseudoinverses.
pub const PINV_CUTOFF: f64 = 1e-12;
/// Probability clip used by BCE.
pub const BCE_CLIP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum HeadError {
    #[error("length mismatch: {what} has {got}, expected {expected}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("BCE requires binary targets, found {0}")]
    NonBinary(f64),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("{solver} did not converge in {iterations} iterations (stationarity {residual:.3e})")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
        last: Box<RegressionModel>,
    },
    #[error("model json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LossKind {
    Rmse,
    Mae,
    Bce,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Rmse => "RMSE",
            LossKind::Mae => "MAE",
            LossKind::Bce => "BCE",
        })
    }
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rmse" => Ok(LossKind::Rmse),
            "mae" => Ok(LossKind::Mae),
            "bce" => Ok(LossKind::Bce),
            _ => Err(format!("unknown loss {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub kind: LossKind,
    pub value: f64,
}

pub fn compute_loss(kind: LossKind, y: &[f64], yhat: &[f64]) -> Result<f64, HeadError> {
    if y.len() != yhat.len() {
        return Err(HeadError::Length {
            what: "predictions",
            expected: y.len(),
            got: yhat.len(),
        });
    }
    if y.is_empty() {
        return Err(HeadError::Argument("loss of an empty sample".into()));
    }
    if y.iter().chain(yhat).any(|v| !v.is_finite()) {
        return Err(HeadError::Argument("non-finite target or prediction".into()));
    }
    let d = y.len() as f64;
    let value = match kind {
        LossKind::Rmse => (y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / d).sqrt(),
        LossKind::Mae => y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / d,
        LossKind::Bce => {
            let mut acc = 0.0;
            for (&t, &p) in y.iter().zip(yhat) {
                if t != 0.0 && t != 1.0 {
                    return Err(HeadError::NonBinary(t));
                }
                let p = p.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
                acc -= if t == 1.0 { p.ln() } else { (1.0 - p).ln() };
            }
            acc / d
        }
    };
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Constraint {
    None,
    Ridge { lambda: f64 },
    /// Unit l2 ball on the coefficients (per class column).
    Ball,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constraint::None => f.write_str("none"),
            Constraint::Ridge { lambda } => write!(f, "ridge:{lambda}"),
            Constraint::Ball => f.write_str("ball"),
        }
    }
}

impl FromStr for Constraint {
    type Err = String;

    /// Accepts `none`, `ball`, `ridge:<lambda>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Constraint::None),
            "ball" => Ok(Constraint::Ball),
            _ => {
                let lambda = s
                    .strip_prefix("ridge:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| format!("unknown constraint {s:?}"))?;
                Ok(Constraint::Ridge { lambda })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Task {
    Regression,
    Binary,
    Multiclass { classes: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: Option<u64>,
    pub iterations: usize,
    /// Final value of the minimized objective.
    pub objective: f64,
    pub losses: Vec<LossReport>,
}

/// Fitted linear head. `coefficients` holds one column per output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub task: Task,
    pub constraint: Constraint,
    pub coefficients: Vec<Vec<f64>>,
    pub intercept: Option<Vec<f64>>,
    #[serde(default)]
    pub col_specs: Vec<String>,
    #[serde(default)]
    pub meta: TrainingMeta,
}

impl RegressionModel {
    /// Number of feature columns.
    pub fn m(&self) -> usize {
        self.coefficients.first().map_or(0, Vec::len)
    }

    pub fn outputs(&self) -> usize {
        self.coefficients.len()
    }

    /// Coefficients of the first (for scalar tasks, only) output.
    pub fn alpha(&self) -> &[f64] {
        &self.coefficients[0]
    }

    /// Largest per-column l2 norm of the coefficients.
    pub fn alpha_norm(&self) -> f64 {
        self.coefficients
            .iter()
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String, HeadError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, HeadError> {
        let model: RegressionModel = serde_json::from_str(s)?;
        let outputs = match model.task {
            Task::Multiclass { classes } => classes,
            _ => 1,
        };
        if model.coefficients.len() != outputs
            || model.coefficients.iter().any(|c| c.len() != model.m())
            || model.intercept.as_ref().is_some_and(|b| b.len() != outputs)
        {
            return Err(HeadError::Argument("inconsistent coefficient shapes".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), HeadError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, HeadError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Solver options shared by all fits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub intercept: bool,
    pub max_iter: usize,
    /// Stationarity tolerance; `None` uses the per-solver default
    /// (1e-8 for ball regression, 1e-7 for classification).
    pub tol: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            intercept: false,
            max_iter: 100_000,
            tol: None,
        }
    }
}

impl FitOptions {
    pub fn with_intercept(mut self, on: bool) -> Self {
        self.intercept = on;
        self
    }
}

fn check_rows(q: &DMatrix<f64>, len: usize) -> Result<(), HeadError> {
    if q.nrows() == 0 || q.ncols() == 0 {
        return Err(HeadError::Argument(format!(
            "feature matrix must be non-empty, got {}x{}",
            q.nrows(),
            q.ncols()
        )));
    }
    if len != q.nrows() {
        return Err(HeadError::Length {
            what: "targets",
            expected: q.nrows(),
            got: len,
        });
    }
    Ok(())
}

fn design(q: &DMatrix<f64>, intercept: bool) -> DMatrix<f64> {
    if intercept {
        q.clone().insert_column(q.ncols(), 1.0)
    } else {
        q.clone()
    }
}

fn split(w: &[f64], m: usize, intercept: bool) -> (Vec<f64>, Option<f64>) {
    (w[..m].to_vec(), intercept.then(|| w[m]))
}

fn scalar_model(
    task: Task,
    constraint: Constraint,
    w: &[f64],
    m: usize,
    intercept: bool,
) -> RegressionModel {
    let (alpha, b) = split(w, m, intercept);
    RegressionModel {
        task,
        constraint,
        coefficients: vec![alpha],
        intercept: b.map(|b| vec![b]),
        col_specs: Vec::new(),
        meta: TrainingMeta::default(),
    }
}

fn regression_meta(model: &mut RegressionModel, q: &DMatrix<f64>, y: &[f64], iterations: usize) {
    let yhat = predict_values(model, q).expect("shapes checked");
    let rmse = compute_loss(LossKind::Rmse, y, &yhat).unwrap_or(f64::NAN);
    let mae = compute_loss(LossKind::Mae, y, &yhat).unwrap_or(f64::NAN);
    model.meta.iterations = iterations;
    model.meta.objective = rmse * rmse;
    model.meta.losses = vec![
        LossReport {
            kind: LossKind::Rmse,
            value: rmse,
        },
        LossReport {
            kind: LossKind::Mae,
            value: mae,
        },
    ];
}

/// Minimum-norm least squares `alpha = Q^+ Y`.
pub fn fit_least_squares(
    q: &DMatrix<f64>,
    y: &[f64],
    opts: &FitOptions,
) -> Result<RegressionModel, HeadError> {
    check_rows(q, y.len())?;
    let a = design(q, opts.intercept);
    let w = pseudoinverse(&a, PINV_CUTOFF) * DVector::from_column_slice(y);
    let mut model = scalar_model(Task::Regression, Constraint::None, w.as_slice(), q.ncols(), opts.intercept);
    regression_meta(&mut model, q, y, 0);
    Ok(model)
}

/// Ridge `(Q^T Q + d lambda I)^{-1} Q^T Y`, or least squares on the unit
/// ball by accelerated projected gradient.
pub fn fit_constrained(
    q: &DMatrix<f64>,
    y: &[f64],
    constraint: Constraint,
    opts: &FitOptions,
) -> Result<RegressionModel, HeadError> {
    check_rows(q, y.len())?;
    let (d, m) = q.shape();
    match constraint {
        Constraint::None => fit_least_squares(q, y, opts),
        Constraint::Ridge { lambda } => {
            if !(lambda >= 0.0 && lambda.is_finite()) {
                return Err(HeadError::Argument(format!("ridge lambda must be >= 0, got {lambda}")));
            }
            if lambda == 0.0 {
                let mut model = fit_least_squares(q, y, opts)?;
                model.constraint = constraint;
                return Ok(model);
            }
            // stacked least squares [A; sqrt(d lambda) I_m] w = [Y; 0]
            let a = design(q, opts.intercept);
            let cols = a.ncols();
            let mut stacked = DMatrix::zeros(d + m, cols);
            stacked.rows_mut(0, d).copy_from(&a);
            let s = (d as f64 * lambda).sqrt();
            for j in 0..m {
                stacked[(d + j, j)] = s;
            }
            let mut rhs = DVector::zeros(d + m);
            rhs.rows_mut(0, d).copy_from_slice(y);
            let w = pseudoinverse(&stacked, PINV_CUTOFF) * rhs;
            let mut model = scalar_model(Task::Regression, constraint, w.as_slice(), m, opts.intercept);
            regression_meta(&mut model, q, y, 0);
            Ok(model)
        }
        Constraint::Ball => fit_ball_least_squares(q, y, opts),
    }
}

fn fit_ball_least_squares(
    q: &DMatrix<f64>,
    y: &[f64],
    opts: &FitOptions,
) -> Result<RegressionModel, HeadError> {
    let (d, m) = q.shape();
    // an interior least-squares solution is already optimal
    let free = fit_least_squares(q, y, opts)?;
    if free.alpha_norm() <= 1.0 {
        let mut model = free;
        model.constraint = Constraint::Ball;
        return Ok(model);
    }
    let a = design(q, opts.intercept);
    let yv = DVector::from_column_slice(y);
    let df = d as f64;
    let lip = 2.0 * spectral_norm(&a).powi(2) / df;
    let objective = |w: &DVector<f64>| -> (f64, DVector<f64>) {
        let r = &a * w - &yv;
        (r.norm_squared() / df, a.tr_mul(&r) * (2.0 / df))
    };
    let run = apg(
        DVector::zeros(a.ncols()),
        objective,
        |w| project_ball(w.as_mut_slice(), m),
        lip,
        opts.tol.unwrap_or(1e-8),
        opts.max_iter,
    );
    let mut model = scalar_model(Task::Regression, Constraint::Ball, run.x.as_slice(), m, opts.intercept);
    regression_meta(&mut model, q, y, run.iterations);
    if !run.converged {
        return Err(HeadError::NonConvergence {
            solver: "ball least squares",
            iterations: run.iterations,
            residual: run.residual,
            last: Box::new(model),
        });
    }
    Ok(model)
}

/// Projects the first `m` entries onto the unit ball, leaving any tail
/// (intercepts) free.
fn project_ball(w: &mut [f64], m: usize) {
    let norm = w[..m].iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 1.0 {
        for v in &mut w[..m] {
            *v /= norm;
        }
    }
}

fn softplus(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Mean BCE of `sigmoid(A w)` and its gradient.
pub fn logistic_objective(a: &DMatrix<f64>, y: &[f64], w: &DVector<f64>) -> (f64, DVector<f64>) {
    let d = a.nrows() as f64;
    let s = a * w;
    let mut loss = 0.0;
    let mut resid = DVector::zeros(a.nrows());
    for i in 0..a.nrows() {
        loss += softplus(s[i]) - y[i] * s[i];
        resid[i] = sigmoid(s[i]) - y[i];
    }
    (loss / d, a.tr_mul(&resid) / d)
}

fn check_binary(y: &[f64]) -> Result<(), HeadError> {
    match y.iter().find(|&&t| t != 0.0 && t != 1.0) {
        Some(&t) => Err(HeadError::NonBinary(t)),
        None => Ok(()),
    }
}

// ridge strength of a classification head; the penalty is
// `lambda * ||w||^2` over the non-intercept weights
fn classification_penalty(c: Constraint) -> Result<f64, HeadError> {
    match c {
        Constraint::Ridge { lambda } if !(lambda >= 0.0 && lambda.is_finite()) => Err(HeadError::Argument(
            format!("ridge lambda must be >= 0, got {lambda}"),
        )),
        Constraint::Ridge { lambda } => Ok(lambda),
        _ => Ok(0.0),
    }
}

// adds `lambda * ||w_j||^2` for every block of `cols` entries, skipping the
// intercept slot at index `m` of each block
fn add_penalty(lambda: f64, cols: usize, m: usize, w: &DVector<f64>, (f, mut g): (f64, DVector<f64>)) -> (f64, DVector<f64>) {
    if lambda == 0.0 {
        return (f, g);
    }
    let mut pen = 0.0;
    for (wc, gc) in w.as_slice().chunks(cols).zip(g.as_mut_slice().chunks_mut(cols)) {
        for j in 0..m {
            pen += wc[j] * wc[j];
            gc[j] += 2.0 * lambda * wc[j];
        }
    }
    (f + lambda * pen, g)
}

/// Binary logistic regression minimizing mean BCE.
pub fn fit_logistic(
    q: &DMatrix<f64>,
    y: &[f64],
    constraint: Constraint,
    opts: &FitOptions,
) -> Result<RegressionModel, HeadError> {
    check_rows(q, y.len())?;
    check_binary(y)?;
    let lambda = classification_penalty(constraint)?;
    let m = q.ncols();
    let a = design(q, opts.intercept);
    let cols = a.ncols();
    let lip = spectral_norm(&a).powi(2) / (4.0 * a.nrows() as f64) + 2.0 * lambda;
    let ball = constraint == Constraint::Ball;
    let run = apg(
        DVector::zeros(cols),
        |w| add_penalty(lambda, cols, m, w, logistic_objective(&a, y, w)),
        |w| {
            if ball {
                project_ball(w.as_mut_slice(), m)
            }
        },
        lip,
        opts.tol.unwrap_or(1e-7),
        opts.max_iter,
    );
    let mut model = scalar_model(Task::Binary, constraint, run.x.as_slice(), m, opts.intercept);
    let p = predict_values(&model, q).expect("shapes checked");
    let bce = compute_loss(LossKind::Bce, y, &p).unwrap_or(f64::NAN);
    model.meta.iterations = run.iterations;
    model.meta.objective = run.f;
    model.meta.losses = vec![LossReport {
        kind: LossKind::Bce,
        value: bce,
    }];
    if !run.converged {
        return Err(HeadError::NonConvergence {
            solver: "logistic",
            iterations: run.iterations,
            residual: run.residual,
            last: Box::new(model),
        });
    }
    Ok(model)
}

/// Mean multiclass cross-entropy of `softmax(A W)` and its gradient, with
/// `W` stored column-major as a flat vector (`cols x classes`).
pub fn softmax_objective(
    a: &DMatrix<f64>,
    labels: &[usize],
    classes: usize,
    w: &DVector<f64>,
) -> (f64, DVector<f64>) {
    let (d, cols) = a.shape();
    let wm = DMatrix::from_column_slice(cols, classes, w.as_slice());
    let mut s = a * wm;
    let mut loss = 0.0;
    for i in 0..d {
        let row_max = s.row(i).max();
        let lse = row_max + s.row(i).iter().map(|v| (v - row_max).exp()).sum::<f64>().ln();
        loss += lse - s[(i, labels[i])];
        for c in 0..classes {
            s[(i, c)] = (s[(i, c)] - lse).exp();
        }
        s[(i, labels[i])] -= 1.0;
    }
    let g = a.tr_mul(&s) / d as f64;
    (loss / d as f64, DVector::from_column_slice(g.as_slice()))
}

/// Multiclass softmax regression. Class ids are `0..classes`.
pub fn fit_softmax(
    q: &DMatrix<f64>,
    labels: &[usize],
    classes: usize,
    constraint: Constraint,
    opts: &FitOptions,
) -> Result<RegressionModel, HeadError> {
    check_rows(q, labels.len())?;
    let lambda = classification_penalty(constraint)?;
    if classes < 2 {
        return Err(HeadError::Argument(format!("need at least 2 classes, got {classes}")));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(HeadError::Argument(format!("label {bad} outside 0..{classes}")));
    }
    let m = q.ncols();
    let a = design(q, opts.intercept);
    let cols = a.ncols();
    let lip = spectral_norm(&a).powi(2) / a.nrows() as f64 + 2.0 * lambda;
    let ball = constraint == Constraint::Ball;
    let run = apg(
        DVector::zeros(cols * classes),
        |w| add_penalty(lambda, cols, m, w, softmax_objective(&a, labels, classes, w)),
        |w| {
            if ball {
                for col in w.as_mut_slice().chunks_mut(cols) {
                    project_ball(col, m);
                }
            }
        },
        lip,
        opts.tol.unwrap_or(1e-7),
        opts.max_iter,
    );
    let chunks: Vec<&[f64]> = run.x.as_slice().chunks(cols).collect();
    let mut model = RegressionModel {
        task: Task::Multiclass { classes },
        constraint,
        coefficients: chunks.iter().map(|c| c[..m].to_vec()).collect(),
        intercept: opts.intercept.then(|| chunks.iter().map(|c| c[m]).collect()),
        col_specs: Vec::new(),
        meta: TrainingMeta {
            seed: None,
            iterations: run.iterations,
            objective: run.f,
            losses: Vec::new(),
        },
    };
    if !run.converged {
        model.meta.iterations = run.iterations;
        return Err(HeadError::NonConvergence {
            solver: "softmax",
            iterations: run.iterations,
            residual: run.residual,
            last: Box::new(model),
        });
    }
    Ok(model)
}

struct ApgRun {
    x: DVector<f64>,
    f: f64,
    iterations: usize,
    residual: f64,
    converged: bool,
}

/// Accelerated projected gradient with backtracking and gradient-based
/// momentum restart. Stationarity is `||x - P(x - grad f(x))||`, which is
/// the gradient norm when `P` is the identity.
fn apg<F, P>(x0: DVector<f64>, mut fg: F, project: P, lip_hint: f64, tol: f64, max_iter: usize) -> ApgRun
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
    P: Fn(&mut DVector<f64>),
{
    let stationarity = |x: &DVector<f64>, g: &DVector<f64>| {
        let mut z = x - g;
        project(&mut z);
        (x - z).norm()
    };
    let mut x = x0;
    project(&mut x);
    let (mut fx, mut gx) = fg(&x);
    let mut residual = stationarity(&x, &gx);
    if residual <= tol {
        return ApgRun { x, f: fx, iterations: 0, residual, converged: true };
    }
    let mut lip = if lip_hint > 0.0 && lip_hint.is_finite() { lip_hint } else { 1.0 };
    let mut y = x.clone();
    let mut t = 1.0f64;
    for k in 1..=max_iter {
        let (fy, gy) = if k == 1 { (fx, gx.clone()) } else { fg(&y) };
        let (z, fz, gz) = loop {
            let mut z = &y - &gy / lip;
            project(&mut z);
            let step = &z - &y;
            let (fz, gz) = fg(&z);
            let model = fy + gy.dot(&step) + 0.5 * lip * step.norm_squared();
            if fz <= model + 1e-12 * fy.abs().max(1.0) || lip > 1e300 {
                break (z, fz, gz);
            }
            lip *= 2.0;
        };
        residual = stationarity(&z, &gz);
        if residual <= tol {
            return ApgRun { x: z, f: fz, iterations: k, residual, converged: true };
        }
        let restart = (&y - &z).dot(&(&z - &x)) > 0.0 || fz > fx;
        let x_prev = std::mem::replace(&mut x, z);
        fx = fz;
        gx = gz;
        if restart {
            t = 1.0;
            y = x.clone();
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = &x + (&x - &x_prev) * ((t - 1.0) / t_next);
            t = t_next;
        }
        // let the step grow back slowly after conservative backtracking
        lip *= 0.98;
    }
    let _ = gx;
    ApgRun { x, f: fx, iterations: max_iter, residual, converged: false }
}

/// Raw scores `Q W + b` (`d x outputs`).
fn scores(model: &RegressionModel, q: &DMatrix<f64>) -> Result<DMatrix<f64>, HeadError> {
    if q.ncols() != model.m() {
        return Err(HeadError::Length {
            what: "feature columns",
            expected: model.m(),
            got: q.ncols(),
        });
    }
    let outputs = model.outputs();
    let mut w = DMatrix::zeros(model.m(), outputs);
    for (c, col) in model.coefficients.iter().enumerate() {
        w.column_mut(c).copy_from_slice(col);
    }
    let mut s = q * w;
    if let Some(b) = &model.intercept {
        for c in 0..outputs {
            s.column_mut(c).add_scalar_mut(b[c]);
        }
    }
    Ok(s)
}

/// Predictions: values for regression, probabilities of class 1 for binary,
/// and `d x C` class probabilities for multiclass.
pub fn predict(model: &RegressionModel, q: &DMatrix<f64>) -> Result<DMatrix<f64>, HeadError> {
    let mut s = scores(model, q)?;
    match model.task {
        Task::Regression => {}
        Task::Binary => s.apply(|v| *v = sigmoid(*v)),
        Task::Multiclass { .. } => {
            for mut row in s.row_iter_mut() {
                let mx = row.max();
                row.apply(|v| *v = (*v - mx).exp());
                let z = row.sum();
                row /= z;
            }
        }
    }
    Ok(s)
}

/// First output column of [`predict`].
pub fn predict_values(model: &RegressionModel, q: &DMatrix<f64>) -> Result<Vec<f64>, HeadError> {
    Ok(predict(model, q)?.column(0).iter().copied().collect())
}

/// Hard labels: threshold 0.5 for binary, argmax for multiclass.
pub fn predict_labels(model: &RegressionModel, q: &DMatrix<f64>) -> Result<Vec<usize>, HeadError> {
    let p = predict(model, q)?;
    Ok(match model.task {
        Task::Regression => {
            return Err(HeadError::Argument("regression models have no labels".into()))
        }
        Task::Binary => p.column(0).iter().map(|&v| usize::from(v >= 0.5)).collect(),
        Task::Multiclass { .. } => p.row_iter().map(|r| r.transpose().argmax().0).collect(),
    })
}

/// Fraction of matching labels.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

/// A fitted head usable on new feature matrices.
pub trait Predictor {
    /// One value per row: regression value, class-1 probability, or class id.
    fn predict_rows(&self, q: &DMatrix<f64>) -> Result<Vec<f64>, HeadError>;
}

impl Predictor for RegressionModel {
    fn predict_rows(&self, q: &DMatrix<f64>) -> Result<Vec<f64>, HeadError> {
        match self.task {
            Task::Multiclass { .. } => Ok(predict_labels(self, q)?.into_iter().map(|c| c as f64).collect()),
            _ => predict_values(self, q),
        }
    }
}

/// Pluggable head interface: anything that can be trained on a feature
/// matrix and targets.
pub trait Head {
    fn name(&self) -> String;
    fn fit(&self, q: &DMatrix<f64>, targets: &[f64]) -> Result<Box<dyn Predictor>, HeadError>;
}

/// The built-in linear heads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinearHead {
    LeastSquares(FitOptions),
    Constrained(Constraint, FitOptions),
    Logistic(Constraint, FitOptions),
    Softmax {
        classes: usize,
        constraint: Constraint,
        opts: FitOptions,
    },
}

impl LinearHead {
    pub fn fit_model(&self, q: &DMatrix<f64>, targets: &[f64]) -> Result<RegressionModel, HeadError> {
        match *self {
            LinearHead::LeastSquares(o) => fit_least_squares(q, targets, &o),
            LinearHead::Constrained(c, o) => fit_constrained(q, targets, c, &o),
            LinearHead::Logistic(c, o) => fit_logistic(q, targets, c, &o),
            LinearHead::Softmax { classes, constraint, opts } => {
                let labels = targets
                    .iter()
                    .map(|&t| {
                        if t >= 0.0 && t.fract() == 0.0 {
                            Ok(t as usize)
                        } else {
                            Err(HeadError::Argument(format!("class id {t} is not a non-negative integer")))
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                fit_softmax(q, &labels, classes, constraint, &opts)
            }
        }
    }
}

impl Head for LinearHead {
    fn name(&self) -> String {
        match self {
            LinearHead::LeastSquares(_) => "least-squares".into(),
            LinearHead::Constrained(c, _) => format!("regression[{c}]"),
            LinearHead::Logistic(c, _) => format!("logistic[{c}]"),
            LinearHead::Softmax { classes, constraint, .. } => format!("softmax{classes}[{constraint}]"),
        }
    }

    fn fit(&self, q: &DMatrix<f64>, targets: &[f64]) -> Result<Box<dyn Predictor>, HeadError> {
        Ok(Box::new(self.fit_model(q, targets)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::LN_2;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn opts() -> FitOptions {
        FitOptions::default()
    }

    #[test]
    fn loss_examples() {
        let r = compute_loss(LossKind::Rmse, &[1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((r - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(compute_loss(LossKind::Mae, &[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.5);
        let b = compute_loss(LossKind::Bce, &[1.0], &[0.5]).unwrap();
        assert!((b - LN_2).abs() < 1e-15);
        assert!(compute_loss(LossKind::Bce, &[0.5], &[0.5]).is_err());
        assert!(compute_loss(LossKind::Rmse, &[1.0], &[0.5, 0.1]).is_err());
        // clipping keeps BCE finite
        assert!(compute_loss(LossKind::Bce, &[1.0], &[0.0]).unwrap().is_finite());
    }

    #[test]
    fn least_squares_identity() {
        let q = DMatrix::identity(2, 2);
        let m = fit_least_squares(&q, &[1.0, 2.0], &opts()).unwrap();
        assert!((m.alpha()[0] - 1.0).abs() < 1e-12 && (m.alpha()[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn least_squares_full_rank_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random_matrix(&mut rng, 20, 4);
        let y: Vec<f64> = (0..20).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let m = fit_least_squares(&q, &y, &opts()).unwrap();
        let qtq = q.tr_mul(&q);
        let expect = qtq.try_inverse().unwrap() * q.tr_mul(&DVector::from_column_slice(&y));
        for j in 0..4 {
            assert!((m.alpha()[j] - expect[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn least_squares_min_norm_on_duplicate_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let base = random_matrix(&mut rng, 15, 2);
        let q = DMatrix::from_fn(15, 3, |i, j| base[(i, j.min(1))]);
        let y: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = fit_least_squares(&q, &y, &opts()).unwrap();
        // limiting ridge oracle
        let lam = 1e-10;
        let reg = q.tr_mul(&q) + DMatrix::identity(3, 3) * lam;
        let oracle = reg.try_inverse().unwrap() * q.tr_mul(&DVector::from_column_slice(&y));
        for j in 0..3 {
            assert!((m.alpha()[j] - oracle[j]).abs() < 1e-5, "{:?} vs {}", m.alpha(), oracle);
        }
        assert!((m.alpha()[1] - m.alpha()[2]).abs() < 1e-10);
    }

    #[test]
    fn least_squares_first_order_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let d = rng.gen_range(1..=50);
            let mc = rng.gen_range(1..=10);
            let q = random_matrix(&mut rng, d, mc);
            let y: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let model = fit_least_squares(&q, &y, &opts()).unwrap();
            let base = model.meta.losses[0].value;
            for _ in 0..5 {
                let mut dir = DVector::from_fn(mc, |_, _| rng.gen_range(-1.0..1.0));
                dir /= dir.norm();
                let mut moved = model.clone();
                for j in 0..mc {
                    moved.coefficients[0][j] += 1e-4 * dir[j];
                }
                let yhat = predict_values(&moved, &q).unwrap();
                let rmse = compute_loss(LossKind::Rmse, &y, &yhat).unwrap();
                assert!(rmse >= base - 1e-12);
            }
        }
    }

    #[test]
    fn intercept_recovers_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = random_matrix(&mut rng, 30, 2);
        let y: Vec<f64> = (0..30).map(|i| 3.0 + 0.5 * q[(i, 0)] - q[(i, 1)]).collect();
        let m = fit_least_squares(&q, &y, &opts().with_intercept(true)).unwrap();
        assert!((m.intercept.as_ref().unwrap()[0] - 3.0).abs() < 1e-10);
        assert!(m.meta.losses[0].value < 1e-10);
    }

    #[test]
    fn ridge_zero_matches_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_matrix(&mut rng, 12, 3);
        let y: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = fit_least_squares(&q, &y, &opts()).unwrap();
        let b = fit_constrained(&q, &y, Constraint::Ridge { lambda: 0.0 }, &opts()).unwrap();
        for j in 0..3 {
            assert!((a.alpha()[j] - b.alpha()[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn ridge_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let q = random_matrix(&mut rng, 12, 3);
        let y: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lam = 0.3;
        let m = fit_constrained(&q, &y, Constraint::Ridge { lambda: lam }, &opts()).unwrap();
        let reg = q.tr_mul(&q) + DMatrix::identity(3, 3) * (12.0 * lam);
        let expect = reg.try_inverse().unwrap() * q.tr_mul(&DVector::from_column_slice(&y));
        for j in 0..3 {
            assert!((m.alpha()[j] - expect[j]).abs() < 1e-10);
        }
    }

    // KKT oracle: alpha(mu) = (Q^T Q + mu I)^{-1} Q^T Y with ||alpha(mu)|| = 1.
    fn ball_oracle(q: &DMatrix<f64>, y: &[f64]) -> DVector<f64> {
        let m = q.ncols();
        let qty = q.tr_mul(&DVector::from_column_slice(y));
        let qtq = q.tr_mul(q);
        let sol = |mu: f64| (&qtq + DMatrix::identity(m, m) * mu).try_inverse().unwrap() * &qty;
        let (mut lo, mut hi) = (0.0, 1.0);
        while sol(hi).norm() > 1.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if sol(mid).norm() > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        sol(0.5 * (lo + hi))
    }

    #[test]
    fn ball_active_matches_kkt_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = random_matrix(&mut rng, 25, 4);
        let y: Vec<f64> = (0..25).map(|_| 100.0 * rng.gen_range(-1.0..1.0)).collect();
        let m = fit_constrained(&q, &y, Constraint::Ball, &opts()).unwrap();
        assert!((m.alpha_norm() - 1.0).abs() < 1e-6);
        let oracle = ball_oracle(&q, &y);
        for j in 0..4 {
            assert!((m.alpha()[j] - oracle[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn ball_inactive_is_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let q = random_matrix(&mut rng, 25, 3);
        let y: Vec<f64> = (0..25).map(|i| 0.2 * q[(i, 0)] + 0.01 * rng.gen_range(-1.0..1.0)).collect();
        let a = fit_least_squares(&q, &y, &opts()).unwrap();
        let b = fit_constrained(&q, &y, Constraint::Ball, &opts()).unwrap();
        for j in 0..3 {
            assert!((a.alpha()[j] - b.alpha()[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn ball_with_intercept_leaves_intercept_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = random_matrix(&mut rng, 40, 3);
        let y: Vec<f64> = (0..40).map(|i| 50.0 + 10.0 * q[(i, 1)]).collect();
        let m = fit_constrained(&q, &y, Constraint::Ball, &opts().with_intercept(true)).unwrap();
        assert!(m.alpha_norm() <= 1.0 + 1e-9);
        assert!(m.intercept.unwrap()[0] > 45.0);
    }

    #[test]
    fn nonconvergence_carries_iterate() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let q = random_matrix(&mut rng, 25, 4);
        let y: Vec<f64> = (0..25).map(|_| 100.0 * rng.gen_range(-1.0..1.0)).collect();
        let o = FitOptions { max_iter: 2, ..opts() };
        match fit_constrained(&q, &y, Constraint::Ball, &o) {
            Err(HeadError::NonConvergence { last, iterations, .. }) => {
                assert_eq!(iterations, 2);
                assert!(last.alpha_norm() <= 1.0 + 1e-12);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn logistic_constant_features() {
        let q = DMatrix::from_element(10, 2, 0.7);
        let y: Vec<f64> = (0..10).map(|i| (i % 2) as f64).collect();
        let m = fit_logistic(&q, &y, Constraint::None, &opts()).unwrap();
        assert!(m.alpha_norm() < 1e-6);
        assert!((m.meta.losses[0].value - LN_2).abs() < 1e-9);
    }

    #[test]
    fn logistic_separable() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = random_matrix(&mut rng, 40, 3);
        let y: Vec<f64> = (0..40).map(|i| f64::from(q[(i, 0)] + 0.5 * q[(i, 2)] > 0.0)).collect();
        let labels: Vec<usize> = y.iter().map(|&v| v as usize).collect();
        for c in [Constraint::None, Constraint::Ball] {
            let m = fit_logistic(&q, &y, c, &opts()).unwrap();
            let acc = accuracy(&predict_labels(&m, &q).unwrap(), &labels);
            if c == Constraint::None {
                assert_eq!(acc, 1.0);
            } else {
                assert!(m.alpha_norm() <= 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn logistic_never_worse_than_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let q = random_matrix(&mut rng, 30, 4);
            let y: Vec<f64> = (0..30).map(|_| f64::from(rng.gen_bool(0.4))).collect();
            for c in [Constraint::None, Constraint::Ball] {
                let m = fit_logistic(&q, &y, c, &opts()).unwrap();
                assert!(m.meta.losses[0].value <= LN_2 + 1e-12);
            }
        }
    }

    #[test]
    fn ridge_logistic_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let q = random_matrix(&mut rng, 40, 3);
        let y: Vec<f64> = (0..40).map(|i| f64::from(q[(i, 0)] > 0.0)).collect();
        let lam = 0.01;
        let m = fit_logistic(&q, &y, Constraint::Ridge { lambda: lam }, &opts().with_intercept(true)).unwrap();
        let w = m.alpha();
        let b = m.intercept.as_ref().unwrap()[0];
        let mut grad = [0.0; 4];
        for i in 0..40 {
            let s: f64 = (0..3).map(|j| q[(i, j)] * w[j]).sum::<f64>() + b;
            let r = 1.0 / (1.0 + (-s).exp()) - y[i];
            for j in 0..3 {
                grad[j] += r * q[(i, j)] / 40.0;
            }
            grad[3] += r / 40.0;
        }
        for j in 0..3 {
            grad[j] += 2.0 * lam * w[j];
        }
        assert!(grad.iter().all(|g| g.abs() < 1e-6), "{grad:?}");
        // penalty keeps the separable fit bounded
        assert!(m.alpha_norm() < 20.0);
    }

    #[test]
    fn ridge_softmax_is_minimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let q = random_matrix(&mut rng, 30, 2);
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let lam = 0.05;
        let m = fit_softmax(&q, &labels, 3, Constraint::Ridge { lambda: lam }, &opts()).unwrap();
        let obj = |w: &[Vec<f64>]| {
            let mut f = 0.0;
            for i in 0..30 {
                let s: Vec<f64> = w.iter().map(|c| c[0] * q[(i, 0)] + c[1] * q[(i, 1)]).collect();
                let lse = s.iter().map(|v| v.exp()).sum::<f64>().ln();
                f += (lse - s[labels[i]]) / 30.0;
            }
            f + lam * w.iter().flatten().map(|v| v * v).sum::<f64>()
        };
        let base = obj(&m.coefficients);
        for _ in 0..50 {
            let mut w = m.coefficients.clone();
            w.iter_mut().flatten().for_each(|v| *v += rng.gen_range(-1e-3..1e-3));
            assert!(obj(&w) >= base - 1e-12);
        }
    }

    #[test]
    fn logistic_gradient_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = random_matrix(&mut rng, 15, 4);
        let y: Vec<f64> = (0..15).map(|_| f64::from(rng.gen_bool(0.5))).collect();
        let w = DVector::from_fn(4, |_, _| rng.gen_range(-2.0..2.0));
        let (_, g) = logistic_objective(&a, &y, &w);
        let h = 1e-6;
        for j in 0..4 {
            let mut wp = w.clone();
            wp[j] += h;
            let mut wm = w.clone();
            wm[j] -= h;
            let fd = (logistic_objective(&a, &y, &wp).0 - logistic_objective(&a, &y, &wm).0) / (2.0 * h);
            assert!((fd - g[j]).abs() <= 1e-5 * g[j].abs().max(1e-3), "{fd} vs {}", g[j]);
        }
    }

    #[test]
    fn softmax_gradient_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let a = random_matrix(&mut rng, 12, 3);
        let labels: Vec<usize> = (0..12).map(|_| rng.gen_range(0..4)).collect();
        let w = DVector::from_fn(12, |_, _| rng.gen_range(-1.0..1.0));
        let (_, g) = softmax_objective(&a, &labels, 4, &w);
        let h = 1e-6;
        for j in 0..12 {
            let mut wp = w.clone();
            wp[j] += h;
            let mut wm = w.clone();
            wm[j] -= h;
            let fd = (softmax_objective(&a, &labels, 4, &wp).0
                - softmax_objective(&a, &labels, 4, &wm).0)
                / (2.0 * h);
            assert!((fd - g[j]).abs() <= 1e-5 * g[j].abs().max(1e-3));
        }
    }

    #[test]
    fn softmax_two_class_matches_logistic() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let q = random_matrix(&mut rng, 50, 3);
        let labels: Vec<usize> = (0..50)
            .map(|i| usize::from(q[(i, 0)] - q[(i, 1)] + 0.3 * rng.gen_range(-1.0..1.0) > 0.0))
            .collect();
        let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
        let o = opts().with_intercept(true);
        let lg = fit_logistic(&q, &y, Constraint::None, &o).unwrap();
        let sm = fit_softmax(&q, &labels, 2, Constraint::None, &o).unwrap();
        assert_eq!(predict_labels(&lg, &q).unwrap(), predict_labels(&sm, &q).unwrap());
    }

    #[test]
    fn softmax_uniform_features() {
        let q = DMatrix::from_element(9, 2, 1.0);
        let labels: Vec<usize> = (0..9).map(|i| i % 3).collect();
        let m = fit_softmax(&q, &labels, 3, Constraint::None, &opts()).unwrap();
        let p = predict(&m, &q).unwrap();
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-6));
    }

    #[test]
    fn softmax_label_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let q = random_matrix(&mut rng, 30, 2);
        let labels: Vec<usize> = (0..30).map(|_| rng.gen_range(0..3)).collect();
        let perm = [2usize, 0, 1];
        let permuted: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
        let a = fit_softmax(&q, &labels, 3, Constraint::Ball, &opts()).unwrap();
        let b = fit_softmax(&q, &permuted, 3, Constraint::Ball, &opts()).unwrap();
        assert!((a.meta.objective - b.meta.objective).abs() < 1e-8);
        for c in 0..3 {
            for j in 0..2 {
                assert!((a.coefficients[c][j] - b.coefficients[perm[c]][j]).abs() < 1e-5);
            }
        }
        assert!(a.alpha_norm() <= 1.0 + 1e-9);
    }

    #[test]
    fn predict_unit_coefficient_selects_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let q = random_matrix(&mut rng, 6, 3);
        let model = RegressionModel {
            task: Task::Regression,
            constraint: Constraint::None,
            coefficients: vec![vec![0.0, 1.0, 0.0]],
            intercept: None,
            col_specs: Vec::new(),
            meta: TrainingMeta::default(),
        };
        let p = predict_values(&model, &q).unwrap();
        for i in 0..6 {
            assert_eq!(p[i], q[(i, 1)]);
        }
        assert!(predict(&model, &DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn model_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let q = random_matrix(&mut rng, 10, 2);
        let y: Vec<f64> = (0..10).map(|i| f64::from(i % 2 == 0)).collect();
        let mut m = fit_logistic(&q, &y, Constraint::Ball, &opts().with_intercept(true)).unwrap();
        m.col_specs = vec!["s0:ZI".into(), "s0:IZ".into()];
        let back = RegressionModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        let p = predict_values(&m, &q).unwrap();
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn constraint_parsing() {
        assert_eq!("ball".parse::<Constraint>().unwrap(), Constraint::Ball);
        assert_eq!(
            "ridge:0.5".parse::<Constraint>().unwrap(),
            Constraint::Ridge { lambda: 0.5 }
        );
        assert!("ridge:x".parse::<Constraint>().is_err());
    }

    #[test]
    fn head_trait_object() {
        let heads: Vec<Box<dyn Head>> = vec![
            Box::new(LinearHead::LeastSquares(opts())),
            Box::new(LinearHead::Logistic(Constraint::Ball, opts())),
        ];
        let q = DMatrix::from_row_slice(4, 1, &[1.0, -1.0, 2.0, -2.0]);
        let y = [1.0, 0.0, 1.0, 0.0];
        for h in heads {
            let fitted = h.fit(&q, &y).unwrap();
            assert_eq!(fitted.predict_rows(&q).unwrap().len(), 4);
        }
    }
}
