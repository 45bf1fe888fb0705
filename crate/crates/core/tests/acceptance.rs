//! Acceptance criteria 1-8. Each criterion prints one `PASS` or `FAIL`
//! line with its measurements and runtime. The process exits nonzero when
//! a criterion fails, except those listed in `MAY_FAIL`.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

use postvar::bounds::{random_pair, random_trial, rank_lemma_premise, wedin_gap, GapMode, TrialSpec};
use postvar::circuits::{build_ansatz, count_shifts, encode_data, enumerate_shifts, AnsatzSpec, Shift, ShiftVector};
use postvar::config::{DatasetSource, RunConfig, SynthSource, TaskKind};
use postvar::data::Dataset;
use postvar::features::{
    fidelity_score, generate_features_exact, generate_features_seeded, gradient_score, prune_by_gradient,
    ScoreMode,
};
use postvar::head::{compute_loss, fit_least_squares, predict_values, FitOptions, LossKind};
use postvar::pauli::{count_local_paulis, enumerate_local_paulis, pauli_decompose, shadow_norm_bound, PauliString};
use postvar::pipeline::{compute_features, data_dir, default_logistic_head, run_entry, run_seeds, standard_table, train, evaluate, TableEntry};
use postvar::shadows::{plan_budget, BudgetRequest, MeasurementMode, Strategy};
use postvar::sim::{expectation, run_circuit, Circuit, StateVector};
use postvar::util::derived_rng;

/// Criteria that depend on data outside the repository's control and are
/// reported without failing the run.
const MAY_FAIL: &[usize] = &[7];

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(outcome: Outcome, elapsed: Duration, limit: Duration) -> Outcome {
    let secs = format!("{:.2}s", elapsed.as_secs_f64());
    match outcome {
        Ok(d) if elapsed <= limit => Ok(format!("{d}; {secs}")),
        Ok(d) => Err(format!("{d}; {secs} exceeds {}s", limit.as_secs())),
        Err(d) => Err(format!("{d}; {secs}")),
    }
}

fn main() {
    let criteria: [(usize, &str, u64, fn() -> Outcome); 8] = [
        (1, "circuit and observable counts", 1, criterion_1),
        (2, "identity at zero and parameter shift", 10, criterion_2),
        (3, "Pauli decomposition of a variational observable", 5, criterion_3),
        (4, "shot budget statistical contract", 300, criterion_4),
        (5, "loss-gap bounds, rank lemma, Wedin", 120, criterion_5),
        (6, "end-to-end synthetic", 120, criterion_6),
        (7, "Fashion-MNIST desk-scale ordering", 1800, criterion_7),
        (8, "pruning soundness", 60, criterion_8),
    ];
    let filter: Option<usize> = std::env::args()
        .skip(1)
        .find(|a| !a.starts_with('-'))
        .and_then(|a| a.trim_start_matches("criterion_").parse().ok());
    let mut hard_failures = 0;
    for (id, name, limit, run) in criteria {
        if filter.is_some_and(|f| f != id) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match within(outcome, start.elapsed(), Duration::from_secs(limit)) {
            Ok(d) => println!("criterion {id} PASS {name}: {d}"),
            Err(d) => {
                println!("criterion {id} FAIL {name}: {d}");
                if !MAY_FAIL.contains(&id) {
                    hard_failures += 1;
                }
            }
        }
    }
    if hard_failures > 0 {
        std::process::exit(1);
    }
}

fn criterion_1() -> Outcome {
    let cases = [
        ("count_shifts(8,1)", count_shifts(8, 1).unwrap(), enumerate_shifts(8, 1).unwrap().len(), 17),
        ("count_shifts(8,2)", count_shifts(8, 2).unwrap(), enumerate_shifts(8, 2).unwrap().len(), 129),
        ("count_local_paulis(4,1)", count_local_paulis(4, 1).unwrap(), enumerate_local_paulis(4, 1).unwrap().len(), 13),
        ("count_local_paulis(4,2)", count_local_paulis(4, 2).unwrap(), enumerate_local_paulis(4, 2).unwrap().len(), 67),
        ("count_local_paulis(4,3)", count_local_paulis(4, 3).unwrap(), enumerate_local_paulis(4, 3).unwrap().len(), 175),
    ];
    let mut bad = Vec::new();
    for (name, count, listed, want) in cases {
        if count != want || listed as u64 != want {
            bad.push(format!("{name}: count {count}, enumerated {listed}, want {want}"));
        }
    }
    // brute force over all 3^8 shift vectors and all 4^4 Pauli words
    let brute_shifts = |r: usize| (0..3usize.pow(8)).filter(|c| base_digits(*c, 3, 8).iter().filter(|&&d| d != 0).count() <= r).count();
    let brute_paulis = |l: usize| (0..4usize.pow(4)).filter(|c| base_digits(*c, 4, 4).iter().filter(|&&d| d != 0).count() <= l).count();
    for (name, got, want) in [
        ("brute shifts R=1", brute_shifts(1), 17),
        ("brute shifts R=2", brute_shifts(2), 129),
        ("brute Paulis L=1", brute_paulis(1), 13),
        ("brute Paulis L=2", brute_paulis(2), 67),
        ("brute Paulis L=3", brute_paulis(3), 175),
    ] {
        if got != want {
            bad.push(format!("{name}: {got} vs {want}"));
        }
    }
    check(bad.is_empty(), if bad.is_empty() { "17, 129, 13, 67, 175 all match enumeration".into() } else { bad.join("; ") })
}

fn base_digits(mut c: usize, base: usize, len: usize) -> Vec<usize> {
    (0..len)
        .map(|_| {
            let d = c % base;
            c /= base;
            d
        })
        .collect()
}

fn unitary(c: &Circuit) -> DMatrix<Complex64> {
    let dim = 1usize << c.n();
    let mut u = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        let out = run_circuit(&StateVector::basis(c.n(), j).unwrap(), c).unwrap();
        for (i, a) in out.amplitudes().iter().enumerate() {
            u[(i, j)] = *a;
        }
    }
    u
}

fn criterion_2() -> Outcome {
    let spec = AnsatzSpec::standard(4).unwrap();
    let u = unitary(&build_ansatz(&spec, &vec![0.0; spec.k()]).unwrap());
    let id_err = (&u - DMatrix::<Complex64>::identity(16, 16)).iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut rng = derived_rng(2, &[]);
    let paulis = enumerate_local_paulis(4, 4).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let theta: Vec<f64> = (0..spec.k()).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
        let p = paulis[rng.gen_range(1..paulis.len())];
        let x: Vec<f64> = (0..16).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
        let input = run_circuit(&StateVector::zero(4).unwrap(), &encode_data(&x, 4).unwrap()).unwrap();
        let param = rng.gen_range(0..spec.k());
        let f = |offset: f64| {
            let mut t = theta.clone();
            t[param] += offset;
            expectation(&run_circuit(&input, &build_ansatz(&spec, &t).unwrap()).unwrap(), &p).unwrap()
        };
        let shift_rule = (f(std::f64::consts::FRAC_PI_2) - f(-std::f64::consts::FRAC_PI_2)) / 2.0;
        let fd = (f(h) - f(-h)) / (2.0 * h);
        worst = worst.max((shift_rule - fd).abs());
    }
    check(
        id_err < 1e-10 && worst < 1e-6,
        format!("identity max error {id_err:.1e} (< 1e-10), worst shift-rule vs FD {worst:.1e} over 50 cases (< 1e-6)"),
    )
}

fn criterion_3() -> Outcome {
    let spec = AnsatzSpec::standard(2).unwrap();
    let mz = "ZI".parse::<PauliString>().unwrap().to_dense();
    let mut rng = derived_rng(3, &[]);
    let mut worst: f64 = 0.0;
    let mut most_terms = 0;
    for _ in 0..20 {
        let theta: Vec<f64> = (0..spec.k()).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
        let u = unitary(&build_ansatz(&spec, &theta).unwrap());
        let h = u.adjoint() * &mz * &u;
        let dec = pauli_decompose(&h).unwrap();
        let err = (dec.reconstruct() - &h).iter().map(|z| z.norm()).fold(0.0, f64::max);
        worst = worst.max(err);
        most_terms = most_terms.max(dec.len());
    }
    check(
        worst < 1e-10 && most_terms <= 16,
        format!("max reconstruction error {worst:.1e} (< 1e-10), at most {most_terms} terms (<= 16)"),
    )
}

fn criterion_4() -> Outcome {
    let n = 2;
    let spec = AnsatzSpec::standard(n).unwrap();
    let shifts = vec![ShiftVector::zeros(spec.k())];
    let paulis: Vec<PauliString> = enumerate_local_paulis(n, 2).unwrap().into_iter().filter(|p| !p.is_identity()).collect();
    // RZ, RX, RZ rows on each qubit reach every single-qubit state
    let mut rng = derived_rng(4, &[]);
    let xs: Vec<Vec<f64>> = (0..5).map(|_| (0..3 * n).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect()).collect();
    let data = Dataset::new(xs, vec![0.0; 5]).unwrap();
    let exact = generate_features_exact(&data, &spec, &shifts, &paulis).unwrap();
    let norm = paulis.iter().map(shadow_norm_bound).fold(0.0, f64::max);
    let mut lines = Vec::new();
    let mut ok = true;
    for mode in [MeasurementMode::Shadows, MeasurementMode::Direct] {
        let req = BudgetRequest::new(Strategy::ObservableConstruction, mode, 1, paulis.len() as u64, n as u64, 5, 0.2, 0.1, norm);
        let plan = plan_budget(&req).unwrap();
        let hits = (0..100u64)
            .filter(|&t| {
                let est = generate_features_seeded(&data, &spec, &shifts, &paulis, &plan, t).unwrap();
                (&est.q - &exact.q).amax() <= 0.2
            })
            .count();
        ok &= hits >= 90;
        lines.push(format!("{mode}: {hits}/100 trials within 0.2 ({} shots per datum)", plan.total_shots / 5));
    }
    check(ok, format!("{} observables; {}", paulis.len(), lines.join(", ")))
}

fn criterion_5() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (mode, name) in [(GapMode::Ball, "ball RMSE"), (GapMode::LogisticBall, "ball BCE"), (GapMode::Unconstrained, "unconstrained RMSE")] {
        let spec = TrialSpec::new(mode);
        let mut good = 0;
        for seed in 0..100 {
            let r = random_trial(&spec, seed).unwrap();
            let full_rank = mode != GapMode::Unconstrained || r.m.min(r.d) >= 9;
            if r.premise_held() && r.delta_loss < r.epsilon && full_rank {
                good += 1;
            }
        }
        ok &= good == 100;
        lines.push(format!("{name} (d={}, m={}) {good}/100", spec.d, spec.m));
    }
    let mut rng = derived_rng(5, &[]);
    let (mut lemma_bad, mut wedin_bad, mut premised) = (0, 0, 0);
    for _ in 0..200 {
        let (a, b) = random_pair(&mut rng);
        if rank_lemma_premise(&a, &b) {
            premised += 1;
            if svd_rank(&a) != svd_rank(&b) {
                lemma_bad += 1;
            }
        }
    }
    for _ in 0..200 {
        let (a, b) = random_pair(&mut rng);
        if svd_rank(&a) != svd_rank(&b) {
            continue;
        }
        let (lhs, rhs) = wedin_gap(&a, &b).unwrap();
        if lhs > rhs * (1.0 + 1e-9) + 1e-12 {
            wedin_bad += 1;
        }
    }
    ok &= lemma_bad == 0 && wedin_bad == 0;
    lines.push(format!("rank lemma {lemma_bad} violations ({premised} premised), Wedin {wedin_bad} violations"));
    check(ok, lines.join(", "))
}

fn svd_rank(a: &DMatrix<f64>) -> usize {
    let s = a.clone().svd(false, false).singular_values;
    let top = s.max();
    s.iter().filter(|&&v| v > 1e-10 * top).count()
}

fn criterion_6() -> Outcome {
    let linear = RunConfig {
        dataset: DatasetSource::Synth(SynthSource::PlantedLinear),
        samples: 100,
        strategy: Strategy::ObservableConstruction,
        locality: 2,
        task: TaskKind::Regression,
        ..RunConfig::default()
    };
    let data = postvar::pipeline::load_dataset(&linear, &PathBuf::new()).unwrap();
    let run = compute_features(&linear, &data).unwrap();
    let fm = &run.train;
    let model = fit_least_squares(&fm.q, &fm.labels, &FitOptions::default()).unwrap();
    let rmse = compute_loss(LossKind::Rmse, &fm.labels, &predict_values(&model, &fm.q).unwrap()).unwrap();
    let art = train(&linear, fm).unwrap();
    let piped = evaluate(&art.model, &fm.q, &fm.labels, "train").unwrap().rmse.unwrap();

    let blobs = RunConfig {
        dataset: DatasetSource::Synth(SynthSource::Blobs),
        samples: 100,
        task: TaskKind::Binary,
        ..RunConfig::default()
    };
    let data = postvar::pipeline::load_dataset(&blobs, &PathBuf::new()).unwrap();
    let entry = TableEntry::PostVariational { strategy: Strategy::ObservableConstruction, order: 0, locality: 2 };
    let pv = run_entry(&blobs, entry, &data).unwrap().row.train.accuracy.unwrap();
    let raw = run_entry(&blobs, TableEntry::Classical, &data).unwrap().row.train.accuracy.unwrap();
    check(
        rmse < 0.05 && piped < 0.05 && pv - raw >= 0.05,
        format!(
            "planted-linear d=100 m={} train RMSE {rmse:.1e} (pipeline {piped:.1e}, < 0.05); blobs 2-local {:.1}% vs raw {:.1}% (gap >= 5 points)",
            fm.m(),
            100.0 * pv,
            100.0 * raw
        ),
    )
}

fn fmnist_root() -> PathBuf {
    data_dir(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../../data/fashion-mnist"))
}

fn criterion_7() -> Outcome {
    let root = fmnist_root();
    let base = RunConfig {
        dataset: DatasetSource::Fmnist,
        ..RunConfig::default()
    };
    let cfg = default_logistic_head(&base, 2 * base.train_per_class);
    let entries = standard_table();
    let (_, means) = run_seeds(&cfg, &entries, &[0, 1, 2], &root, None)
        .map_err(|e| format!("dataset under {} unusable: {e}", root.display()))?;
    let acc = |label: &str| {
        means.iter().find(|m| m.label == label).and_then(|m| m.train_accuracy).unwrap_or(f64::NAN)
    };
    let (l1, l2, l3) = (acc("observable-L1"), acc("observable-L2"), acc("observable-L3"));
    let monotone = l1 < l2 && l2 < l3;
    let below: Vec<String> = means
        .iter()
        .filter(|m| m.label != "classical")
        .filter(|m| !(m.train_accuracy.unwrap_or(0.0) > 0.5583))
        .map(|m| format!("{} {:.2}%", m.label, 100.0 * m.train_accuracy.unwrap_or(f64::NAN)))
        .collect();
    let l3_ok = (l3 - 0.7867).abs() <= 0.05;
    let table: Vec<String> = means
        .iter()
        .map(|m| format!("{} {:.2}%", m.label, 100.0 * m.train_accuracy.unwrap_or(f64::NAN)))
        .collect();
    check(
        monotone && below.is_empty() && l3_ok,
        format!(
            "mean train accuracy over seeds 0,1,2: [{}]; L1<L2<L3 {}; all above 55.83% {}{}; 3-local within 78.67 +- 5 points {}",
            table.join(", "),
            monotone,
            below.is_empty(),
            if below.is_empty() { String::new() } else { format!(" (not above: {})", below.join(", ")) },
            l3_ok
        ),
    )
}

fn criterion_8() -> Outcome {
    let n = 4;
    let spec = AnsatzSpec::standard(n).unwrap();
    let k = spec.k();
    let zero = ShiftVector::zeros(k);
    let mut rng = derived_rng(8, &[]);
    let xs: Vec<Vec<f64>> = (0..30).map(|_| (0..16).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect()).collect();
    let targets: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let data = Dataset::new(xs, targets.clone()).unwrap();

    // At theta = 0 every gate after the first RY cancels, so the circuit
    // is RY(theta_0) on qubit 0 and Y on qubit 0 commutes with it.
    let y0: PauliString = "YIII".parse().unwrap();
    let decision = prune_by_gradient(&data, &spec, 0, &zero, &y0, 1e-3, ScoreMode::Exact).unwrap();
    let shifts = vec![zero.clone(), zero.with(0, Shift::Plus), zero.with(0, Shift::Minus), zero.with(1, Shift::Plus), zero.with(1, Shift::Minus)];
    let paulis = [y0];
    let full = generate_features_exact(&data, &spec, &shifts, &paulis).unwrap();
    let kept: Vec<usize> = (0..shifts.len()).filter(|&s| !(decision.drop && (1..=2).contains(&s))).collect();
    let pruned = full.select_columns(&kept);
    let loss = |q: &DMatrix<f64>| {
        let model = fit_least_squares(q, &targets, &FitOptions::default()).unwrap();
        compute_loss(LossKind::Rmse, &targets, &predict_values(&model, q).unwrap()).unwrap()
    };
    let change = (loss(&full.q) - loss(&pruned.q)).abs();

    let all = enumerate_local_paulis(n, n).unwrap();
    let mut violations = 0;
    let mut tightest = f64::INFINITY;
    for t in 0..100u64 {
        let mut r = derived_rng(8, &[t]);
        let xs: Vec<Vec<f64>> = (0..5).map(|_| (0..16).map(|_| r.gen_range(0.0..std::f64::consts::TAU)).collect()).collect();
        let d = Dataset::new(xs, vec![0.0; 5]).unwrap();
        let base = ShiftVector::from_shifts((0..k).map(|_| [Shift::Zero, Shift::Zero, Shift::Plus, Shift::Minus][r.gen_range(0..4)]).collect());
        let u = r.gen_range(0..k);
        let base = base.with(u, Shift::Zero);
        let p = all[r.gen_range(1..all.len())];
        let g = gradient_score(&d, &spec, u, &base, &p, ScoreMode::Exact).unwrap();
        let f = fidelity_score(&d, &spec, u, &base, ScoreMode::Exact).unwrap();
        if f + 1e-12 < g {
            violations += 1;
        }
        tightest = tightest.min(f - g);
    }
    check(
        decision.drop && kept.len() == 3 && change < 1e-6 && violations == 0,
        format!(
            "zero-gradient score {:.1e} dropped={}, retrained RMSE change {change:.1e} (< 1e-6); fidelity >= gradient {violations} violations in 100 (min slack {tightest:.2e})",
            decision.score, decision.drop
        ),
    )
}
