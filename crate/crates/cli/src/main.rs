use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use postvar::bounds::{random_trial, GapMode, PerturbationReport, TrialSpec};
use postvar::config::{ConfigError, DatasetSource, RunConfig, SynthSource, TaskKind, KEYS};
use postvar::data::Split;
use postvar::features::{prune_registry, FeatureMatrix, PruneConfig, ScoreMode};
use postvar::pipeline::{
    budget_request, budget_verdicts, compute_features, data_dir, default_logistic_head, evaluate, load_dataset,
    registries, run_seeds, standard_table, train, write_commented, Metrics, ModelArtifact, PipelineError,
    TableEntry,
};
use postvar::shadows::{plan_budget, MeasurementMode};
use postvar::util::derive_seed;
use serde_json::json;

#[derive(Parser)]
#[command(name = "postvar", version, about = "Post-variational quantum neural networks")]
struct Cli {
    /// Flat `key = value` config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: machine parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Default)]
struct Flags {
    /// Qubits.
    #[arg(long)]
    n: Option<String>,
    /// Maximum Pauli locality L.
    #[arg(long)]
    locality: Option<String>,
    /// Maximum derivative order R.
    #[arg(long)]
    order: Option<String>,
    /// `ansatz-expansion`, `observable-construction`, or `hybrid`.
    #[arg(long)]
    strategy: Option<String>,
    /// `exact`, `direct`, or `shadows`.
    #[arg(long)]
    mode: Option<String>,
    /// Target max-entry feature error.
    #[arg(long)]
    epsilon: Option<String>,
    /// Failure probability of the shot budget.
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Ansatz layers.
    #[arg(long)]
    layers: Option<String>,
    /// Gradient pruning threshold.
    #[arg(long = "tau-g")]
    tau_g: Option<String>,
    /// Fidelity pruning threshold.
    #[arg(long = "tau-f")]
    tau_f: Option<String>,
    /// `synth:<blobs|parity|linear|planted-linear>`, `fmnist`, or a CSV path.
    #[arg(long)]
    dataset: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// `none`, `ball`, or `ridge:<lambda>`.
    #[arg(long)]
    constraint: Option<String>,
    /// `regression`, `binary`, or `multiclass`.
    #[arg(long)]
    task: Option<String>,
    /// Pauli word measured by ansatz expansion, e.g. `ZIII`.
    #[arg(long)]
    observable: Option<String>,
    #[arg(long)]
    intercept: Option<String>,
    #[arg(long)]
    prune: Option<String>,
    /// Synthetic training samples.
    #[arg(long)]
    samples: Option<String>,
    /// Synthetic test samples.
    #[arg(long = "test-samples")]
    test_samples: Option<String>,
    /// Fashion-MNIST class ids, e.g. `4,6`.
    #[arg(long)]
    classes: Option<String>,
    /// Any config entry as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Flags {
    fn entries(&self) -> Vec<(&'static str, &String)> {
        let pairs: [(&'static str, &Option<String>); 21] = [
            ("n", &self.n),
            ("locality", &self.locality),
            ("order", &self.order),
            ("strategy", &self.strategy),
            ("mode", &self.mode),
            ("epsilon", &self.epsilon),
            ("delta", &self.delta),
            ("seed", &self.seed),
            ("layers", &self.layers),
            ("tau-g", &self.tau_g),
            ("tau-f", &self.tau_f),
            ("dataset", &self.dataset),
            ("out", &self.out),
            ("constraint", &self.constraint),
            ("task", &self.task),
            ("observable", &self.observable),
            ("intercept", &self.intercept),
            ("prune", &self.prune),
            ("samples", &self.samples),
            ("test-samples", &self.test_samples),
            ("classes", &self.classes),
        ];
        pairs.into_iter().filter_map(|(k, v)| v.as_ref().map(|v| (k, v))).collect()
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Dataset to feature-matrix CSV.
    Features {
        #[command(flatten)]
        flags: Flags,
    },
    /// Feature CSV to model JSON and loss report.
    Train {
        #[command(flatten)]
        flags: Flags,
        /// Defaults to `<out>/features.csv`.
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Model and feature CSV to metrics CSV.
    Eval {
        #[command(flatten)]
        flags: Flags,
        /// Defaults to `<out>/model.json`.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Defaults to `<out>/features_test.csv`, else `<out>/features.csv`.
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Shot budgets and the favored measurement mode per strategy.
    Budget {
        #[command(flatten)]
        flags: Flags,
        /// Number of data (default: the configured training size).
        #[arg(long)]
        d: Option<usize>,
    },
    /// Gradient and fidelity pruning scores over the registry.
    Prune {
        #[command(flatten)]
        flags: Flags,
    },
    /// Randomized checks of the loss-gap bounds.
    VerifyBounds {
        #[command(flatten)]
        flags: Flags,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// `unconstrained`, `ball`, `logistic-ball`, or `all`.
        #[arg(long, default_value = "all")]
        bound: String,
    },
    /// Fashion-MNIST strategy table.
    ReproFmnist {
        #[command(flatten)]
        flags: Flags,
        /// Sampling seeds `seed, seed+1, ...`.
        #[arg(long, default_value_t = 3)]
        runs: u64,
        /// IDX directory (default: $POSTVAR_DATA_DIR, else data/fashion-mnist).
        #[arg(long = "data-dir")]
        data_dir: Option<PathBuf>,
    },
    /// Strategy table on synthetic data.
    ReproSynth {
        #[command(flatten)]
        flags: Flags,
        #[arg(long, default_value_t = 1)]
        runs: u64,
    },
}

#[derive(Debug)]
struct CliError {
    kind: &'static str,
    message: String,
    violations: Vec<String>,
    code: u8,
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(c) => c.into(),
            PipelineError::Io(e) => CliError::new("io", e.to_string()),
            PipelineError::Dataset(m) => CliError::new("dataset", m),
            PipelineError::Data(e) => CliError::new("data", e.to_string()),
            PipelineError::Head(e) => CliError::new("head", e.to_string()),
            other => CliError::new("pipeline", other.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        let violations = match &e {
            ConfigError::Invalid(v) => v.clone(),
            _ => Vec::new(),
        };
        CliError {
            kind: "config",
            message: e.to_string(),
            violations,
            code: 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new("io", e.to_string())
    }
}

impl CliError {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
            violations: Vec::new(),
            code: 1,
        }
    }

    fn line(&self) -> String {
        json!({"error": {"kind": self.kind, "message": self.message, "violations": self.violations}}).to_string()
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn build_config(file: Option<&Path>, base: RunConfig, flags: &Flags) -> Result<RunConfig> {
    let mut cfg = base;
    if let Some(path) = file {
        cfg.apply_text(&std::fs::read_to_string(path)?)?;
    }
    for (k, v) in flags.entries() {
        cfg.set(k, v)?;
    }
    for kv in &flags.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::from(ConfigError::Syntax { line: 0, msg: format!("--set expects key=value, got {kv:?}") }))?;
        if !KEYS.contains(&k.trim()) {
            return Err(ConfigError::UnknownKey(k.trim().to_string()).into());
        }
        cfg.set(k.trim(), v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fmnist_root(explicit: Option<&Path>) -> PathBuf {
    explicit.map_or_else(|| data_dir(Path::new("data/fashion-mnist")), Path::to_path_buf)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.out)?;
    Ok(cfg.out.clone())
}

fn cmd_features(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(cfg, &fmnist_root(None))?;
    let run = compute_features(cfg, &data)?;
    let out = out_dir(cfg)?;
    let header = cfg.artifact_header();
    run.train.save_csv(&out.join("features.csv"), &header).map_err(PipelineError::from)?;
    if let Some(t) = &run.test {
        t.save_csv(&out.join("features_test.csv"), &header).map_err(PipelineError::from)?;
    }
    if let Some(plan) = &run.plan {
        std::fs::write(out.join("plan.json"), serde_json::to_string_pretty(plan).expect("plan serializes") + "\n")?;
    }
    if let Some(w) = &run.planted {
        let rows: Vec<String> = w.iter().enumerate().map(|(j, v)| format!("{},{v:?}", run.train.col_specs[j])).collect();
        write_commented(&out.join("planted.csv"), &header, "column,weight", &rows)?;
    }
    println!(
        "features rows={} test_rows={} columns={} mode={} out={}",
        run.train.d(),
        run.test.as_ref().map_or(0, |t| t.d()),
        run.train.m(),
        run.train.mode,
        out.join("features.csv").display()
    );
    Ok(())
}

fn load_matrix(path: &Path) -> Result<FeatureMatrix> {
    FeatureMatrix::load_csv(path).map_err(|e| CliError::new("features", format!("{}: {e}", path.display())))
}

fn write_metrics(path: &Path, cfg: &RunConfig, rows: &[Metrics]) -> Result<()> {
    let lines: Vec<String> = rows.iter().map(Metrics::csv_row).collect();
    write_commented(path, &cfg.artifact_header(), Metrics::CSV_HEADER, &lines)?;
    Ok(())
}

fn cmd_train(cfg: &RunConfig, features: Option<PathBuf>) -> Result<()> {
    let out = out_dir(cfg)?;
    let path = features.unwrap_or_else(|| out.join("features.csv"));
    let fm = load_matrix(&path)?;
    let art = train(cfg, &fm)?;
    art.save(&out.join("model.json"))?;
    let m = evaluate(&art.model, &fm.q, &fm.labels, "train")?;
    write_metrics(&out.join("train_report.csv"), cfg, std::slice::from_ref(&m))?;
    println!("train converged={} {}", art.converged, summary(&m));
    Ok(())
}

fn summary(m: &Metrics) -> String {
    let f = |name: &str, v: Option<f64>| v.map(|x| format!(" {name}={x:.6e}")).unwrap_or_default();
    format!(
        "split={} d={}{}{}{}{}{}",
        m.split,
        m.d,
        f("rmse", m.rmse),
        f("mae", m.mae),
        f("bce", m.bce),
        f("cross_entropy", m.cross_entropy),
        f("accuracy", m.accuracy)
    )
}

fn cmd_eval(cfg: &RunConfig, model: Option<PathBuf>, features: Option<PathBuf>) -> Result<()> {
    let out = out_dir(cfg)?;
    let art = ModelArtifact::load(&model.unwrap_or_else(|| out.join("model.json")))?;
    let path = features.unwrap_or_else(|| {
        let test = out.join("features_test.csv");
        if test.is_file() {
            test
        } else {
            out.join("features.csv")
        }
    });
    let fm = load_matrix(&path)?;
    let want: Vec<String> = fm.col_specs.iter().map(|s| s.to_string()).collect();
    if want != art.model.col_specs {
        return Err(CliError::new("eval", "feature columns do not match the model's column specs"));
    }
    let split = if path.file_name().is_some_and(|n| n.to_string_lossy().contains("test")) { "test" } else { "train" };
    let m = evaluate(&art.model, &fm.q, &fm.labels, split)?;
    write_metrics(&out.join("metrics.csv"), &art.config, std::slice::from_ref(&m))?;
    println!("eval {}", summary(&m));
    Ok(())
}

fn training_size(cfg: &RunConfig) -> usize {
    match cfg.dataset {
        DatasetSource::Fmnist => cfg.train_per_class * cfg.classes.len(),
        _ => cfg.samples,
    }
}

fn cmd_budget(cfg: &RunConfig, d: Option<usize>) -> Result<()> {
    let d = d.unwrap_or_else(|| training_size(cfg));
    let out = out_dir(cfg)?;
    let regs = registries(cfg)?;
    let requested = match cfg.mode {
        postvar::config::ModeKind::Direct => Some(MeasurementMode::Direct),
        postvar::config::ModeKind::Shadows => Some(MeasurementMode::Shadows),
        postvar::config::ModeKind::Exact => None,
    };
    let plan = requested
        .map(|mode| plan_budget(&budget_request(cfg, &regs, mode, d)))
        .transpose()
        .map_err(|e| CliError::new("budget", e.to_string()))?;
    let verdicts = budget_verdicts(cfg, d)?;
    let doc = json!({
        "config": cfg,
        "plan": plan,
        "verdicts": verdicts,
    });
    std::fs::write(out.join("budget.json"), serde_json::to_string_pretty(&doc).expect("serializes") + "\n")?;
    if let Some(p) = &plan {
        println!(
            "plan strategy={} mode={} m={} d={} shots_per_unit={} groups={} total_shots={}",
            p.strategy,
            p.mode.as_str(),
            p.m,
            p.d,
            p.shots_per_unit,
            p.groups_s.map_or("-".to_string(), |s| s.to_string()),
            p.total_shots
        );
    }
    for v in &verdicts {
        println!("{}", v.line());
    }
    Ok(())
}

fn cmd_prune(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(cfg, &fmnist_root(None))?.subset(Split::Train);
    let regs = registries(cfg)?;
    let mode = match cfg.mode {
        postvar::config::ModeKind::Exact => ScoreMode::Exact,
        _ => ScoreMode::Sampled {
            shots: plan_budget(&budget_request(cfg, &regs, MeasurementMode::Direct, data.len()))
                .map_err(|e| CliError::new("budget", e.to_string()))?
                .shots_per_unit,
            seed: derive_seed(cfg.seed, &[4]),
        },
    };
    let pc = PruneConfig {
        tau_g: Some(cfg.tau_g),
        tau_f: Some(cfg.tau_f),
        mode,
    };
    let outcome = prune_registry(&data, &regs.spec, &regs.shifts, &regs.paulis, &pc).map_err(PipelineError::from)?;
    let out = out_dir(cfg)?;
    let rows: Vec<String> = outcome
        .decisions
        .iter()
        .map(|d| {
            format!(
                "{},{},{},{},{:?},{:?},{}",
                match d.kind {
                    postvar::features::PruneKind::Gradient => "gradient",
                    postvar::features::PruneKind::Fidelity => "fidelity",
                },
                d.u,
                d.base,
                d.pauli.map_or(String::new(), |p| p.to_string()),
                d.score,
                d.threshold,
                d.drop
            )
        })
        .collect();
    let header = cfg.artifact_header();
    write_commented(&out.join("prune_scores.csv"), &header, "kind,u,base,pauli,score,threshold,drop", &rows)?;
    let specs: Vec<String> = outcome
        .retained
        .iter()
        .map(|s| format!("{s}\t{}", regs.shifts[s.shift]))
        .collect();
    write_commented(&out.join("retained.txt"), &header, "spec\tshift", &specs)?;
    let total = regs.shifts.len() * regs.paulis.len();
    println!(
        "prune decisions={} retained={}/{} out={}",
        outcome.decisions.len(),
        outcome.retained.len(),
        total,
        out.display()
    );
    Ok(())
}

fn cmd_verify_bounds(cfg: &RunConfig, trials: usize, bound: &str) -> Result<()> {
    let modes: Vec<GapMode> = if bound == "all" {
        vec![GapMode::Unconstrained, GapMode::Ball, GapMode::LogisticBall]
    } else {
        vec![bound.parse().map_err(|e: String| CliError::new("argument", e))?]
    };
    let mut rows = Vec::new();
    let mut violations = 0;
    for mode in modes {
        let spec = TrialSpec {
            epsilon: cfg.epsilon,
            ..TrialSpec::new(mode)
        };
        for t in 0..trials {
            let r: PerturbationReport = random_trial(&spec, derive_seed(cfg.seed, &[mode as u64, t as u64]))
                .map_err(|e| CliError::new("bounds", e.to_string()))?;
            if r.premise_held() && !r.satisfied {
                violations += 1;
            }
            rows.push(r.csv_row());
        }
    }
    let out = out_dir(cfg)?;
    write_commented(&out.join("bounds.csv"), &cfg.artifact_header(), PerturbationReport::CSV_HEADER, &rows)?;
    println!("verify-bounds trials={} violations={violations} out={}", rows.len(), out.join("bounds.csv").display());
    Ok(())
}

fn entries_for(flags: &Flags, cfg: &RunConfig) -> Vec<TableEntry> {
    if flags.strategy.is_some() {
        vec![
            TableEntry::PostVariational {
                strategy: cfg.strategy,
                order: cfg.order,
                locality: cfg.locality,
            },
            TableEntry::Classical,
        ]
    } else {
        standard_table()
    }
}

fn print_means(means: &[postvar::pipeline::MeanRow], out: &Path) {
    for m in means {
        println!(
            "{:<22} runs={} train_loss={:.4} train_acc={} test_acc={}",
            m.label,
            m.runs,
            m.train_loss,
            m.train_accuracy.map_or("-".into(), |a| format!("{:.2}%", 100.0 * a)),
            m.test_accuracy.map_or("-".into(), |a| format!("{:.2}%", 100.0 * a)),
        );
    }
    println!("summary {}", out.join("summary.csv").display());
}

fn seeds(cfg: &RunConfig, runs: u64) -> Vec<u64> {
    (0..runs.max(1)).map(|r| cfg.seed.wrapping_add(r)).collect()
}

fn cmd_repro_fmnist(file: Option<&Path>, flags: &Flags, runs: u64, root: Option<PathBuf>) -> Result<()> {
    let base = RunConfig {
        dataset: DatasetSource::Fmnist,
        ..RunConfig::default()
    };
    let probe = build_config(file, base.clone(), flags)?;
    let d_train = probe.train_per_class * probe.classes.len();
    let head_base = default_logistic_head(&base, d_train);
    let cfg = build_config(file, head_base, flags)?;
    let out = out_dir(&cfg)?;
    let (_, means) = run_seeds(&cfg, &entries_for(flags, &cfg), &seeds(&cfg, runs), &fmnist_root(root.as_deref()), Some(&out))?;
    print_means(&means, &out);
    Ok(())
}

fn cmd_repro_synth(file: Option<&Path>, flags: &Flags, runs: u64) -> Result<()> {
    let base = RunConfig {
        dataset: DatasetSource::Synth(SynthSource::Blobs),
        task: TaskKind::Binary,
        test_samples: 50,
        ..RunConfig::default()
    };
    let cfg = build_config(file, base, flags)?;
    let out = out_dir(&cfg)?;
    let (_, means) = run_seeds(&cfg, &entries_for(flags, &cfg), &seeds(&cfg, runs), Path::new("."), Some(&out))?;
    print_means(&means, &out);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(ConfigError::Invalid(vec!["workers must be >= 1".into()]).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| CliError::new("workers", e.to_string()))?;
    }
    let file = cli.config.as_deref();
    match cli.cmd {
        Cmd::Features { flags } => cmd_features(&build_config(file, RunConfig::default(), &flags)?),
        Cmd::Train { flags, features } => cmd_train(&build_config(file, RunConfig::default(), &flags)?, features),
        Cmd::Eval { flags, model, features } => {
            cmd_eval(&build_config(file, RunConfig::default(), &flags)?, model, features)
        }
        Cmd::Budget { flags, d } => cmd_budget(&build_config(file, RunConfig::default(), &flags)?, d),
        Cmd::Prune { flags } => cmd_prune(&build_config(file, RunConfig::default(), &flags)?),
        Cmd::VerifyBounds { flags, trials, bound } => {
            cmd_verify_bounds(&build_config(file, RunConfig::default(), &flags)?, trials, &bound)
        }
        Cmd::ReproFmnist { flags, runs, data_dir } => cmd_repro_fmnist(file, &flags, runs, data_dir),
        Cmd::ReproSynth { flags, runs } => cmd_repro_synth(file, &flags, runs),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.code)
        }
    }
}
