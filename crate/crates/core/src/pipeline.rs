//! End-to-end runs: registries from a [`RunConfig`], dataset loading,
//! feature generation with optional pruning, head fitting, evaluation,
//! budget verdicts, and the strategy comparison tables.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circuits::{enumerate_shifts, AnsatzSpec, CircuitError, ShiftVector};
use crate::config::{ConfigError, DatasetSource, ModeKind, RunConfig, SynthSource, TaskKind, TOOL, VERSION};
use crate::data::{load_idx_images, sample_per_class, synth_dataset, DataError, Dataset, Split, SynthKind, SynthParams};
use crate::features::{
    generate_features_exact, generate_features_seeded, prune_registry, FeatureError, FeatureMatrix, PruneConfig,
    PruneOutcome, ScoreMode,
};
use crate::head::{
    compute_loss, fit_constrained, fit_least_squares, fit_logistic, fit_softmax, predict, predict_labels, Constraint,
    FitOptions, HeadError, LossKind, RegressionModel, Task,
};
use crate::pauli::{enumerate_local_paulis, shadow_norm_bound, PauliError, PauliString};
use crate::shadows::{plan_budget, BudgetPlan, BudgetRequest, MeasurementMode, ShadowError, Strategy};
use crate::util::{derive_seed, derived_rng};

/// File-name pairs tried, in order, under the data directory.
pub const IDX_NAMES: &[(&str, &str)] = &[
    ("fashion-images-idx3-ubyte", "fashion-labels-idx1-ubyte"),
    ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
];

pub const DATA_DIR_ENV: &str = "POSTVAR_DATA_DIR";

// sub-stream tags under the master seed
const STREAM_DATA: u64 = 1;
const STREAM_FEATURES: u64 = 2;
const STREAM_PLANT: u64 = 3;
const STREAM_PRUNE: u64 = 4;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Shadow(#[from] ShadowError),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Pauli(#[from] PauliError),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Ansatz, shift registry, and observable registry of one strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct Registries {
    pub spec: AnsatzSpec,
    pub shifts: Vec<ShiftVector>,
    pub paulis: Vec<PauliString>,
}

pub fn registries(cfg: &RunConfig) -> Result<Registries, PipelineError> {
    cfg.validate()?;
    let spec = AnsatzSpec::new(cfg.n, cfg.layers, cfg.closure)?;
    let (shifts, paulis) = match cfg.strategy {
        Strategy::AnsatzExpansion => (
            enumerate_shifts(spec.k(), cfg.order)?,
            vec![cfg.ansatz_observable()],
        ),
        Strategy::ObservableConstruction => (
            vec![ShiftVector::zeros(spec.k())],
            enumerate_local_paulis(cfg.n, cfg.locality)?,
        ),
        Strategy::Hybrid => (
            enumerate_shifts(spec.k(), cfg.order)?,
            enumerate_local_paulis(cfg.n, cfg.locality)?,
        ),
    };
    Ok(Registries { spec, shifts, paulis })
}

/// Data directory from the environment, else `fallback`.
pub fn data_dir(fallback: &Path) -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map_or_else(|| fallback.to_path_buf(), PathBuf::from)
}

fn find_idx(dir: &Path) -> Result<(PathBuf, PathBuf), PipelineError> {
    IDX_NAMES
        .iter()
        .map(|(i, l)| (dir.join(i), dir.join(l)))
        .find(|(i, l)| i.is_file() && l.is_file())
        .ok_or_else(|| {
            PipelineError::Dataset(format!(
                "no IDX image/label pair under {} (set {DATA_DIR_ENV})",
                dir.display()
            ))
        })
}

/// Builds the configured dataset. Planted-linear labels are filled in by
/// [`compute_features`]; here they are zero.
pub fn load_dataset(cfg: &RunConfig, data_root: &Path) -> Result<Dataset, PipelineError> {
    cfg.validate()?;
    match &cfg.dataset {
        DatasetSource::Synth(kind) => {
            let synth_kind = match kind {
                SynthSource::Blobs => SynthKind::Blobs,
                SynthSource::Parity => SynthKind::Parity,
                SynthSource::Linear | SynthSource::PlantedLinear => SynthKind::Linear,
            };
            let params = SynthParams {
                d: cfg.samples + cfg.test_samples,
                dim: cfg.dim,
                ..Default::default()
            };
            let mut rng = derived_rng(cfg.seed, &[STREAM_DATA]);
            let mut ds = synth_dataset(synth_kind, &params, &mut rng)?;
            for s in ds.split.iter_mut().skip(cfg.samples) {
                *s = Split::Test;
            }
            if *kind == SynthSource::PlantedLinear {
                ds.labels.iter_mut().for_each(|y| *y = 0.0);
                ds.planted = None;
            }
            Ok(ds)
        }
        DatasetSource::Fmnist => {
            let (img, lbl) = find_idx(data_root)?;
            let raw = load_idx_images(&img, &lbl)?;
            Ok(sample_per_class(
                &raw,
                &cfg.classes,
                cfg.train_per_class,
                cfg.test_per_class,
                cfg.seed,
            )?)
        }
        DatasetSource::Csv(path) => Ok(Dataset::load_csv(path)?),
    }
}

/// Budget request for the configured strategy over `d` data.
pub fn budget_request(
    cfg: &RunConfig,
    regs: &Registries,
    mode: MeasurementMode,
    d: usize,
) -> BudgetRequest {
    let norm = regs
        .paulis
        .iter()
        .map(shadow_norm_bound)
        .fold(1.0f64, f64::max);
    let mut req = BudgetRequest::new(
        cfg.strategy,
        mode,
        regs.shifts.len() as u64,
        regs.paulis.len() as u64,
        cfg.n as u64,
        d as u64,
        cfg.epsilon,
        cfg.delta,
        norm,
    );
    req.shadow_const = cfg.shadow_const;
    req
}

/// Output of [`compute_features`].
#[derive(Debug, Clone)]
pub struct FeatureRun {
    pub train: FeatureMatrix,
    pub test: Option<FeatureMatrix>,
    pub plan: Option<BudgetPlan>,
    pub prune: Option<PruneOutcome>,
    /// Planted weights for planted-linear data.
    pub planted: Option<Vec<f64>>,
}

/// Generates features for every row, then splits by the dataset's tags.
/// Pruning, when enabled, scores on the training split only and removes
/// the dropped neurons from both splits.
pub fn compute_features(cfg: &RunConfig, data: &Dataset) -> Result<FeatureRun, PipelineError> {
    let regs = registries(cfg)?;
    let mut data = data.clone();
    let mut planted = None;
    if cfg.dataset == DatasetSource::Synth(SynthSource::PlantedLinear) {
        let exact = generate_features_exact(&data, &regs.spec, &regs.shifts, &regs.paulis)?;
        let mut rng = derived_rng(cfg.seed, &[STREAM_PLANT]);
        let w: Vec<f64> = (0..exact.m()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y = &exact.q * DVector::from_column_slice(&w);
        data.labels = y.iter().copied().collect();
        planted = Some(w);
    }
    let (full, plan) = match cfg.mode {
        ModeKind::Exact => (
            generate_features_exact(&data, &regs.spec, &regs.shifts, &regs.paulis)?,
            None,
        ),
        ModeKind::Direct | ModeKind::Shadows => {
            let mode = if cfg.mode == ModeKind::Direct {
                MeasurementMode::Direct
            } else {
                MeasurementMode::Shadows
            };
            let plan = plan_budget(&budget_request(cfg, &regs, mode, data.len()))?;
            let seed = derive_seed(cfg.seed, &[STREAM_FEATURES]);
            let fm = generate_features_seeded(&data, &regs.spec, &regs.shifts, &regs.paulis, &plan, seed)?;
            (fm, Some(plan))
        }
    };
    let train_rows: Vec<usize> = (0..data.len()).filter(|&i| data.split[i] == Split::Train).collect();
    let test_rows: Vec<usize> = (0..data.len()).filter(|&i| data.split[i] == Split::Test).collect();
    let mut train = full.select_rows(&train_rows);
    let mut test = (!test_rows.is_empty()).then(|| full.select_rows(&test_rows));
    let mut prune = None;
    if cfg.prune {
        let train_data = data.subset(Split::Train);
        let mode = match plan {
            None => ScoreMode::Exact,
            Some(p) => ScoreMode::Sampled {
                shots: p.shots_per_unit.max(1),
                seed: derive_seed(cfg.seed, &[STREAM_PRUNE]),
            },
        };
        let pc = PruneConfig {
            tau_g: Some(cfg.tau_g),
            tau_f: Some(cfg.tau_f),
            mode,
        };
        let outcome = prune_registry(&train_data, &regs.spec, &regs.shifts, &regs.paulis, &pc)?;
        train = train.retain_specs(&outcome.retained);
        test = test.map(|t| t.retain_specs(&outcome.retained));
        prune = Some(outcome);
    }
    Ok(FeatureRun {
        train,
        test,
        plan,
        prune,
        planted,
    })
}

/// A fitted head with its convergence status. Non-converged solvers
/// still return their last iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    pub converged: bool,
    pub model: RegressionModel,
}

impl ModelArtifact {
    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ModelArtifact, PipelineError> {
        let art: ModelArtifact = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        // shape checks live in the model's own decoder
        RegressionModel::from_json(&serde_json::to_string(&art.model)?)?;
        Ok(art)
    }
}

fn class_ids(labels: &[f64]) -> Result<Vec<usize>, PipelineError> {
    labels
        .iter()
        .map(|&l| {
            if l >= 0.0 && l.fract() == 0.0 {
                Ok(l as usize)
            } else {
                Err(PipelineError::Dataset(format!("label {l} is not a class id")))
            }
        })
        .collect()
}

/// Fits the configured head on `q` against `labels`.
pub fn fit_head(
    cfg: &RunConfig,
    q: &DMatrix<f64>,
    labels: &[f64],
    intercept: bool,
) -> Result<(RegressionModel, bool), PipelineError> {
    let opts = FitOptions::default().with_intercept(intercept);
    let fitted = match (cfg.task, cfg.constraint) {
        (TaskKind::Regression, Constraint::None) => fit_least_squares(q, labels, &opts),
        (TaskKind::Regression, c) => fit_constrained(q, labels, c, &opts),
        (TaskKind::Binary, c) => fit_logistic(q, labels, c, &opts),
        (TaskKind::Multiclass, c) => {
            let ids = class_ids(labels)?;
            let classes = ids.iter().max().map_or(0, |&m| m + 1).max(2);
            fit_softmax(q, &ids, classes, c, &opts)
        }
    };
    match fitted {
        Ok(m) => Ok((m, true)),
        Err(HeadError::NonConvergence { last, .. }) => Ok((*last, false)),
        Err(e) => Err(e.into()),
    }
}

/// Fits on a feature matrix and records its column specs in the model.
pub fn train(cfg: &RunConfig, fm: &FeatureMatrix) -> Result<ModelArtifact, PipelineError> {
    let (mut model, converged) = fit_head(cfg, &fm.q, &fm.labels, cfg.intercept)?;
    model.col_specs = fm.col_specs.iter().map(|s| s.to_string()).collect();
    model.meta.seed = Some(cfg.seed);
    Ok(ModelArtifact {
        tool: TOOL.into(),
        version: VERSION.into(),
        config: cfg.clone(),
        converged,
        model,
    })
}

/// Losses and accuracy of a model on one split; entries not defined for
/// the task are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub split: String,
    pub d: usize,
    pub rmse: Option<f64>,
    pub mae: Option<f64>,
    pub bce: Option<f64>,
    pub cross_entropy: Option<f64>,
    pub accuracy: Option<f64>,
}

impl Metrics {
    pub const CSV_HEADER: &'static str = "split,d,rmse,mae,bce,cross_entropy,accuracy";

    pub fn csv_row(&self) -> String {
        let f = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:?}"));
        format!(
            "{},{},{},{},{},{},{}",
            self.split,
            self.d,
            f(self.rmse),
            f(self.mae),
            f(self.bce),
            f(self.cross_entropy),
            f(self.accuracy)
        )
    }

    /// The loss the head was trained on.
    pub fn primary_loss(&self) -> f64 {
        self.rmse.or(self.bce).or(self.cross_entropy).unwrap_or(f64::NAN)
    }
}

pub fn evaluate(
    model: &RegressionModel,
    q: &DMatrix<f64>,
    labels: &[f64],
    split: &str,
) -> Result<Metrics, PipelineError> {
    let mut out = Metrics {
        split: split.to_string(),
        d: labels.len(),
        rmse: None,
        mae: None,
        bce: None,
        cross_entropy: None,
        accuracy: None,
    };
    let probs = predict(model, q)?;
    match model.task {
        Task::Regression => {
            let yhat: Vec<f64> = probs.column(0).iter().copied().collect();
            out.rmse = Some(compute_loss(LossKind::Rmse, labels, &yhat)?);
            out.mae = Some(compute_loss(LossKind::Mae, labels, &yhat)?);
        }
        Task::Binary => {
            let p: Vec<f64> = probs.column(0).iter().copied().collect();
            out.bce = Some(compute_loss(LossKind::Bce, labels, &p)?);
            let truth = class_ids(labels)?;
            out.accuracy = Some(crate::head::accuracy(&predict_labels(model, q)?, &truth));
        }
        Task::Multiclass { classes } => {
            let truth = class_ids(labels)?;
            if let Some(&bad) = truth.iter().find(|&&c| c >= classes) {
                return Err(PipelineError::Dataset(format!("label {bad} outside 0..{classes}")));
            }
            let ce = truth
                .iter()
                .enumerate()
                .map(|(i, &c)| -probs[(i, c)].max(crate::head::BCE_CLIP).ln())
                .sum::<f64>()
                / truth.len().max(1) as f64;
            out.cross_entropy = Some(ce);
            out.accuracy = Some(crate::head::accuracy(&predict_labels(model, q)?, &truth));
        }
    }
    Ok(out)
}

/// Plans for both measurement modes of one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetVerdict {
    pub strategy: Strategy,
    pub direct: BudgetPlan,
    pub shadows: BudgetPlan,
    pub favored: MeasurementMode,
}

impl BudgetVerdict {
    pub fn line(&self) -> String {
        format!(
            "verdict strategy={} recommended={} direct_total={} shadows_total={}",
            self.strategy,
            self.favored.as_str(),
            self.direct.total_shots,
            self.shadows.total_shots
        )
    }
}

/// Verdicts for every strategy at the configured `n`, `L`, `R` over `d`
/// data.
pub fn budget_verdicts(cfg: &RunConfig, d: usize) -> Result<Vec<BudgetVerdict>, PipelineError> {
    Strategy::ALL
        .iter()
        .map(|&strategy| {
            let c = RunConfig { strategy, ..cfg.clone() };
            let regs = registries(&c)?;
            let direct = plan_budget(&budget_request(&c, &regs, MeasurementMode::Direct, d))?;
            let shadows = plan_budget(&budget_request(&c, &regs, MeasurementMode::Shadows, d))?;
            Ok(BudgetVerdict {
                strategy,
                favored: direct.favored_mode,
                direct,
                shadows,
            })
        })
        .collect()
}

/// One row of a strategy comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableEntry {
    PostVariational {
        strategy: Strategy,
        order: usize,
        locality: usize,
    },
    /// Logistic/linear head with intercept on the raw encoded inputs.
    Classical,
}

impl TableEntry {
    pub fn label(&self) -> String {
        match *self {
            TableEntry::PostVariational {
                strategy,
                order,
                locality,
            } => match strategy {
                Strategy::AnsatzExpansion => format!("ansatz-R{order}"),
                Strategy::ObservableConstruction => format!("observable-L{locality}"),
                Strategy::Hybrid => format!("hybrid-R{order}-L{locality}"),
            },
            TableEntry::Classical => "classical".into(),
        }
    }
}

/// The comparison rows of the Fashion-MNIST experiment.
pub fn standard_table() -> Vec<TableEntry> {
    use Strategy::*;
    let pv = |strategy, order, locality| TableEntry::PostVariational {
        strategy,
        order,
        locality,
    };
    vec![
        pv(AnsatzExpansion, 1, 0),
        pv(AnsatzExpansion, 2, 0),
        pv(ObservableConstruction, 0, 1),
        pv(ObservableConstruction, 0, 2),
        pv(ObservableConstruction, 0, 3),
        pv(Hybrid, 1, 1),
        pv(Hybrid, 2, 1),
        pv(Hybrid, 1, 2),
        TableEntry::Classical,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub m: usize,
    pub converged: bool,
    pub train: Metrics,
    pub test: Option<Metrics>,
}

impl TableRow {
    pub const CSV_HEADER: &'static str =
        "label,m,converged,train_loss,test_loss,train_accuracy,test_accuracy";

    pub fn csv_row(&self) -> String {
        let f = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:?}"));
        format!(
            "{},{},{},{:?},{},{},{}",
            self.label,
            self.m,
            self.converged,
            self.train.primary_loss(),
            f(self.test.as_ref().map(|t| t.primary_loss())),
            f(self.train.accuracy),
            f(self.test.as_ref().and_then(|t| t.accuracy)),
        )
    }
}

/// Result of one table entry together with its features.
#[derive(Debug, Clone)]
pub struct EntryRun {
    pub row: TableRow,
    pub features: Option<FeatureRun>,
}

fn split_raw(data: &Dataset) -> (DMatrix<f64>, Vec<f64>, Option<(DMatrix<f64>, Vec<f64>)>) {
    let take = |which: Split| {
        let rows: Vec<&Vec<f64>> = (0..data.len())
            .filter(|&i| data.split[i] == which)
            .map(|i| &data.features[i])
            .collect();
        let labels: Vec<f64> = (0..data.len())
            .filter(|&i| data.split[i] == which)
            .map(|i| data.labels[i])
            .collect();
        let dim = data.dim();
        let q = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
        (q, labels)
    };
    let (qt, yt) = take(Split::Train);
    let (qs, ys) = take(Split::Test);
    (qt, yt, (!ys.is_empty()).then_some((qs, ys)))
}

/// Runs one table entry on `data` with the head of `cfg`.
pub fn run_entry(cfg: &RunConfig, entry: TableEntry, data: &Dataset) -> Result<EntryRun, PipelineError> {
    match entry {
        TableEntry::PostVariational {
            strategy,
            order,
            locality,
        } => {
            let c = RunConfig {
                strategy,
                order: order.max(1),
                locality: locality.max(1),
                ..cfg.clone()
            };
            let run = compute_features(&c, data)?;
            let art = train(&c, &run.train)?;
            let train_m = evaluate(&art.model, &run.train.q, &run.train.labels, "train")?;
            let test_m = run
                .test
                .as_ref()
                .map(|t| evaluate(&art.model, &t.q, &t.labels, "test"))
                .transpose()?;
            Ok(EntryRun {
                row: TableRow {
                    label: entry.label(),
                    m: run.train.m(),
                    converged: art.converged,
                    train: train_m,
                    test: test_m,
                },
                features: Some(run),
            })
        }
        TableEntry::Classical => {
            let (qt, yt, test) = split_raw(data);
            let (model, converged) = fit_head(cfg, &qt, &yt, true)?;
            let train_m = evaluate(&model, &qt, &yt, "train")?;
            let test_m = test
                .map(|(qs, ys)| evaluate(&model, &qs, &ys, "test"))
                .transpose()?;
            Ok(EntryRun {
                row: TableRow {
                    label: entry.label(),
                    m: qt.ncols(),
                    converged,
                    train: train_m,
                    test: test_m,
                },
                features: None,
            })
        }
    }
}

/// Runs the table entries and writes `table.csv`, `config.txt`, and one
/// `features_<label>.csv` (plus `_test`) per post-variational entry into
/// `out` when given.
pub fn run_table(
    cfg: &RunConfig,
    entries: &[TableEntry],
    data: &Dataset,
    out: Option<&Path>,
) -> Result<Vec<TableRow>, PipelineError> {
    let header = cfg.artifact_header();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.txt"), cfg.to_text())?;
    }
    let mut rows = Vec::new();
    for &entry in entries {
        let run = run_entry(cfg, entry, data)?;
        if let (Some(dir), Some(f)) = (out, &run.features) {
            let mut h = header.clone();
            h.push(format!("entry {}", entry.label()));
            f.train
                .save_csv(&dir.join(format!("features_{}.csv", entry.label())), &h)?;
            if let Some(t) = &f.test {
                t.save_csv(&dir.join(format!("features_{}_test.csv", entry.label())), &h)?;
            }
        }
        rows.push(run.row);
    }
    if let Some(dir) = out {
        let lines: Vec<String> = rows.iter().map(|r| r.csv_row()).collect();
        write_commented(&dir.join("table.csv"), &header, TableRow::CSV_HEADER, &lines)?;
    }
    Ok(rows)
}

/// Logistic head with intercept and ridge `1 / (2 d)` on the mean BCE,
/// i.e. unit inverse strength on the summed loss.
pub fn default_logistic_head(cfg: &RunConfig, d_train: usize) -> RunConfig {
    RunConfig {
        task: TaskKind::Binary,
        constraint: Constraint::Ridge {
            lambda: 1.0 / (2.0 * d_train.max(1) as f64),
        },
        intercept: true,
        ..cfg.clone()
    }
}

/// Mean of one table entry over several sampling seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub label: String,
    pub runs: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

impl MeanRow {
    pub const CSV_HEADER: &'static str = "label,runs,train_loss,test_loss,train_accuracy,test_accuracy";

    pub fn csv_row(&self) -> String {
        let f = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:?}"));
        format!(
            "{},{},{:?},{},{},{}",
            self.label,
            self.runs,
            self.train_loss,
            f(self.test_loss),
            f(self.train_accuracy),
            f(self.test_accuracy)
        )
    }
}

fn mean_of(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let vals: Option<Vec<f64>> = v.collect();
    vals.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

/// Averages rows with equal labels across runs, keeping first-seen order.
pub fn mean_rows(runs: &[Vec<TableRow>]) -> Vec<MeanRow> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    first
        .iter()
        .map(|r0| {
            let rows: Vec<&TableRow> = runs
                .iter()
                .filter_map(|run| run.iter().find(|r| r.label == r0.label))
                .collect();
            MeanRow {
                label: r0.label.clone(),
                runs: rows.len(),
                train_loss: mean_of(rows.iter().map(|r| Some(r.train.primary_loss()))).unwrap_or(f64::NAN),
                test_loss: mean_of(rows.iter().map(|r| r.test.as_ref().map(|t| t.primary_loss()))),
                train_accuracy: mean_of(rows.iter().map(|r| r.train.accuracy)),
                test_accuracy: mean_of(rows.iter().map(|r| r.test.as_ref().and_then(|t| t.accuracy))),
            }
        })
        .collect()
}

/// Runs the table once per seed (seed `s` redraws the data sample and
/// every sampled quantity) and averages. Per-seed artifacts go to
/// `out/seed-<s>/`, the averages to `out/summary.csv`.
pub fn run_seeds(
    cfg: &RunConfig,
    entries: &[TableEntry],
    seeds: &[u64],
    data_root: &Path,
    out: Option<&Path>,
) -> Result<(Vec<Vec<TableRow>>, Vec<MeanRow>), PipelineError> {
    let mut runs = Vec::new();
    for &seed in seeds {
        let c = RunConfig { seed, ..cfg.clone() };
        let data = load_dataset(&c, data_root)?;
        let dir = out.map(|o| o.join(format!("seed-{seed}")));
        runs.push(run_table(&c, entries, &data, dir.as_deref())?);
    }
    let means = mean_rows(&runs);
    if let Some(dir) = out {
        let mut header = cfg.artifact_header();
        header.push(format!(
            "seeds {}",
            seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")
        ));
        let rows: Vec<String> = means.iter().map(|m| m.csv_row()).collect();
        write_commented(&dir.join("summary.csv"), &header, MeanRow::CSV_HEADER, &rows)?;
    }
    Ok((runs, means))
}

/// Writes comment header lines followed by CSV lines.
pub fn write_commented(path: &Path, header: &[String], csv_header: &str, rows: &[String]) -> Result<(), PipelineError> {
    let mut text: String = header.iter().map(|h| format!("# {h}\n")).collect();
    text.push_str(csv_header);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth_cfg(kind: SynthSource) -> RunConfig {
        RunConfig {
            dataset: DatasetSource::Synth(kind),
            samples: 40,
            ..Default::default()
        }
    }

    #[test]
    fn registry_sizes_per_strategy() {
        let mut cfg = RunConfig::default();
        let r = registries(&cfg).unwrap();
        assert_eq!((r.shifts.len(), r.paulis.len()), (17, 13));
        cfg.strategy = Strategy::AnsatzExpansion;
        cfg.order = 2;
        let r = registries(&cfg).unwrap();
        assert_eq!((r.shifts.len(), r.paulis.len()), (129, 1));
        cfg.strategy = Strategy::ObservableConstruction;
        cfg.locality = 3;
        let r = registries(&cfg).unwrap();
        assert_eq!((r.shifts.len(), r.paulis.len()), (1, 175));
    }

    #[test]
    fn planted_labels_are_fit_exactly() {
        let mut cfg = synth_cfg(SynthSource::PlantedLinear);
        cfg.strategy = Strategy::ObservableConstruction;
        cfg.locality = 2;
        let data = load_dataset(&cfg, Path::new(".")).unwrap();
        let run = compute_features(&cfg, &data).unwrap();
        assert_eq!(run.train.q.shape(), (40, 67));
        let art = train(&cfg, &run.train).unwrap();
        let m = evaluate(&art.model, &run.train.q, &run.train.labels, "train").unwrap();
        assert!(m.rmse.unwrap() < 1e-8, "{m:?}");
    }

    #[test]
    fn sampled_modes_attach_plans() {
        let mut cfg = synth_cfg(SynthSource::Blobs);
        cfg.samples = 4;
        cfg.strategy = Strategy::ObservableConstruction;
        cfg.epsilon = 0.5;
        cfg.delta = 0.5;
        for mode in [ModeKind::Direct, ModeKind::Shadows] {
            cfg.mode = mode;
            let data = load_dataset(&cfg, Path::new(".")).unwrap();
            let a = compute_features(&cfg, &data).unwrap();
            let b = compute_features(&cfg, &data).unwrap();
            assert!(a.plan.is_some());
            assert_eq!(a.train, b.train);
        }
    }

    #[test]
    fn test_split_and_pruning() {
        let mut cfg = synth_cfg(SynthSource::Blobs);
        cfg.samples = 10;
        cfg.test_samples = 4;
        cfg.prune = true;
        cfg.task = TaskKind::Binary;
        let data = load_dataset(&cfg, Path::new(".")).unwrap();
        let run = compute_features(&cfg, &data).unwrap();
        let test = run.test.unwrap();
        assert_eq!((run.train.d(), test.d()), (10, 4));
        assert_eq!(run.train.col_specs, test.col_specs);
        let kept = run.prune.unwrap().retained.len();
        assert_eq!(run.train.m(), kept);
        assert!(kept < 17 * 13);
    }

    #[test]
    fn ansatz_expansion_favors_direct() {
        let v = budget_verdicts(&RunConfig::default(), 400).unwrap();
        assert_eq!(v[0].strategy, Strategy::AnsatzExpansion);
        assert_eq!(v[0].favored, MeasurementMode::Direct);
        assert!(v[0].line().contains("recommended=direct"));
    }

    #[test]
    fn model_artifact_round_trip() {
        let cfg = RunConfig {
            task: TaskKind::Binary,
            ..synth_cfg(SynthSource::Blobs)
        };
        let data = load_dataset(&cfg, Path::new(".")).unwrap();
        let run = compute_features(&cfg, &data).unwrap();
        let art = train(&cfg, &run.train).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        art.save(&path).unwrap();
        assert_eq!(ModelArtifact::load(&path).unwrap(), art);
    }

    #[test]
    fn multiclass_metrics() {
        let q = DMatrix::from_row_slice(6, 2, &[1.0, 0.0, 1.0, 0.1, 0.0, 1.0, 0.1, 1.0, -1.0, -1.0, -1.0, -0.9]);
        let y = [0.0, 0.0, 1.0, 1.0, 2.0, 2.0];
        let cfg = RunConfig {
            task: TaskKind::Multiclass,
            ..Default::default()
        };
        let (model, _) = fit_head(&cfg, &q, &y, true).unwrap();
        let m = evaluate(&model, &q, &y, "train").unwrap();
        assert_eq!(m.accuracy, Some(1.0));
        assert!(m.cross_entropy.unwrap() < 0.5);
    }

    #[test]
    fn seeds_average() {
        let cfg = RunConfig {
            task: TaskKind::Binary,
            samples: 10,
            test_samples: 4,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let (runs, means) = run_seeds(&cfg, &[TableEntry::Classical], &[1, 2], Path::new("."), Some(dir.path())).unwrap();
        let want = (runs[0][0].train.accuracy.unwrap() + runs[1][0].train.accuracy.unwrap()) / 2.0;
        assert_eq!(means[0].runs, 2);
        assert!((means[0].train_accuracy.unwrap() - want).abs() < 1e-15);
        assert!(dir.path().join("seed-2/table.csv").is_file());
        assert!(dir.path().join("summary.csv").is_file());
    }

    #[test]
    fn table_writes_artifacts() {
        let cfg = RunConfig {
            task: TaskKind::Binary,
            samples: 12,
            test_samples: 4,
            ..Default::default()
        };
        let data = load_dataset(&cfg, Path::new(".")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let entries = [
            TableEntry::PostVariational {
                strategy: Strategy::ObservableConstruction,
                order: 0,
                locality: 1,
            },
            TableEntry::Classical,
        ];
        let rows = run_table(&cfg, &entries, &data, Some(dir.path())).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(dir.path().join("features_observable-L1.csv").is_file());
        assert!(dir.path().join("features_observable-L1_test.csv").is_file());
        let table = std::fs::read_to_string(dir.path().join("table.csv")).unwrap();
        assert!(table.contains("# config dataset = synth:blobs"));
        assert!(table.contains("\nclassical,16,"));
    }
}
