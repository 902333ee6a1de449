//! Acceptance runner. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use event_energy::corpus::LabelSpaces;
use event_energy::hypersphere::{measure, HypersphereSet};
use event_energy::losses::{hinge_loss_level, Level};
use event_energy::metrics::{harmonic_f1, majority_baseline, micro_prf, MetricsReport};
use event_energy::tensor::Matrix;
use event_energy::trainer::{
    energy_separation, evaluate, predict, sphere_concentration, train, InferenceMode, Task,
    TrainOutcome,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

const GRADIENT_INSTANCES: usize = 100;

fn gradients() -> Outcome {
    let start = Instant::now();
    let checks = [
        ("token energy", check_token_energy(GRADIENT_INSTANCES, 11)),
        (
            "sentence energy",
            check_sentence_energy(GRADIENT_INSTANCES, 12),
        ),
        (
            "document energy",
            check_document_energy(GRADIENT_INSTANCES, 13),
        ),
        (
            "hinge distance",
            check_hinge_distance(GRADIENT_INSTANCES, 14),
        ),
        (
            "structured cost",
            check_structured_cost(GRADIENT_INSTANCES, 15),
        ),
        (
            "token loss",
            check_hinge_loss(Level::Token, GRADIENT_INSTANCES, 16),
        ),
        (
            "sentence loss",
            check_hinge_loss(Level::Sentence, GRADIENT_INSTANCES, 17),
        ),
        (
            "document loss",
            check_hinge_loss(Level::Document, GRADIENT_INSTANCES, 18),
        ),
    ];
    let elapsed = start.elapsed();
    let mut pass = elapsed < Duration::from_secs(60);
    let mut parts = Vec::new();
    for (name, rep) in &checks {
        pass &= rep.passed(GRADIENT_INSTANCES);
        parts.push(format!("{name} {:.1e} ({} inst)", rep.worst, rep.instances));
    }
    outcome(
        pass,
        format!(
            "worst rel. err: {}; {:.1}s",
            parts.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

fn zero_at_truth() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut checked = 0;
    let mut bad = Vec::new();
    for level in [Level::Token, Level::Sentence, Level::Document] {
        for _ in 0..200 {
            let d = rng.random_range(2..=8);
            let (n_e, n_r) = (rng.random_range(2..=4), rng.random_range(2..=3));
            let energy = random_energy(d, n_e, n_r, &mut rng);
            let (rows, width, labels) = match level {
                Level::Token => (rng.random_range(1..=6), d, n_e + 2),
                Level::Sentence => (rng.random_range(1..=4), d, n_e),
                Level::Document => (rng.random_range(1..=4), 3 * d, n_r),
            };
            let x = Matrix::random_normal(rows, width, 1.0, &mut rng);
            let gold: Vec<usize> = (0..rows).map(|_| rng.random_range(0..labels)).collect();
            let mu = rng.random_range(0.0..3.0);
            let l = hinge_loss_level(
                level,
                &x,
                &Matrix::one_hot(&gold, labels),
                &gold,
                &energy,
                mu,
            )
            .unwrap();
            if l.hinge.iter().chain(&l.ce).any(|&v| v != 0.0) || l.total != 0.0 {
                bad.push(format!("{level:?}: {:?} {:?}", l.hinge, l.ce));
            }
            checked += rows;
        }
    }
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            format!("{checked} instances over 3 levels, all hinge and CE terms exactly 0")
        } else {
            format!("nonzero terms: {}", bad.join("; "))
        },
    )
}

fn normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let d = rng.random_range(2..=8);
        let n = rng.random_range(1..=6);
        let spheres = HypersphereSet::new(Matrix::random_normal(n, d, 2.0, &mut rng), 1.0).unwrap();
        let scale = rng.random_range(0.1..10.0);
        let e = Matrix::random_normal(1, d, scale, &mut rng);
        let s: f64 = measure(e.row(0), &spheres).unwrap().iter().sum();
        worst = worst.max((s - 1.0).abs());
    }
    let two =
        HypersphereSet::new(Matrix::from_rows(&[vec![1.0, 0.0], vec![-3.0, 0.0]]), 1.0).unwrap();
    let p = measure(&[0.0, 0.0], &two).unwrap();
    let example_ok = (p[0] - 0.8808).abs() <= 1e-3 && (p[1] - 0.1192).abs() <= 1e-3;
    outcome(
        worst <= 1e-6 && example_ok,
        format!(
            "max |sum - 1| over 10^4 embeddings {worst:.1e}; two-class example ({:.4}, {:.4})",
            p[0], p[1]
        ),
    )
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n_labels = rng.random_range(2..=7);
        let len = rng.random_range(0..=60);
        let pred: Vec<usize> = (0..len).map(|_| rng.random_range(0..n_labels)).collect();
        let gold: Vec<usize> = (0..len).map(|_| rng.random_range(0..n_labels)).collect();
        let excluded: Vec<usize> = (0..n_labels).filter(|_| rng.random_bool(0.3)).collect();
        let names: Vec<String> = (0..n_labels).map(|i| i.to_string()).collect();
        let r = micro_prf("t", &pred, &gold, &excluded, &names).unwrap();
        let (tp, fp, fn_) = brute_force_counts(&pred, &gold, &excluded);
        let p = if tp + fp == 0 {
            0.0
        } else {
            100.0 * tp as f64 / (tp + fp) as f64
        };
        let rc = if tp + fn_ == 0 {
            0.0
        } else {
            100.0 * tp as f64 / (tp + fn_) as f64
        };
        let f = if p + rc == 0.0 {
            0.0
        } else {
            2.0 * p * rc / (p + rc)
        };
        let same = (r.true_positives, r.false_positives, r.false_negatives) == (tp, fp, fn_)
            && (r.precision - p).abs() < 1e-9
            && (r.recall - rc).abs() < 1e-9
            && (r.f1 - f).abs() < 1e-9;
        mismatches += usize::from(!same);
    }
    let f1 = harmonic_f1(78.82, 79.37);
    outcome(
        mismatches == 0 && (f1 - 79.09).abs() <= 0.01,
        format!("{mismatches}/1000 fixtures differ from brute force; F1(78.82, 79.37) = {f1:.4}"),
    )
}

struct Run {
    outcome: TrainOutcome,
    elapsed: Duration,
    reports: Vec<MetricsReport>,
}

fn run_end_to_end() -> Run {
    let (docs, spaces) = end_to_end_corpus();
    let cfg = end_to_end_config();
    let (train_docs, test_docs) = split(&cfg, &docs);
    let start = Instant::now();
    let outcome = train(&train_docs, &[], &spaces, &cfg).expect("training succeeds");
    let elapsed = start.elapsed();
    let mut reports = Vec::new();
    for (split, d) in [("train", &train_docs), ("test", &test_docs)] {
        for task in Task::ALL {
            for mut r in evaluate(&outcome.checkpoint, d, task, InferenceMode::Classifier).unwrap()
            {
                r.task = format!("{split}/{}", r.task);
                reports.push(r);
            }
        }
    }
    Run {
        outcome,
        elapsed,
        reports,
    }
}

fn f1_of(run: &Run, task: &str) -> f64 {
    run.reports
        .iter()
        .find(|r| r.task == task)
        .unwrap_or_else(|| panic!("no report for {task}"))
        .f1
}

fn ere_baseline(
    run: &Run,
    spaces: &LabelSpaces,
    split_docs: &[event_energy::corpus::Document],
) -> f64 {
    let model = &run.outcome.checkpoint.model;
    let p = predict(
        model,
        split_docs,
        run.outcome.checkpoint.train.mention_cap,
        InferenceMode::Classifier,
    )
    .unwrap();
    let gold: Vec<usize> = p.pairs.iter().map(|x| x.gold).collect();
    majority_baseline("baseline", &gold, &[spaces.na_index()], spaces.relations())
        .unwrap()
        .f1
}

fn end_to_end(run: &Run) -> Outcome {
    let (docs, spaces) = end_to_end_corpus();
    let (train_docs, test_docs) = split(&end_to_end_config(), &docs);
    let trig_train = f1_of(run, "train/trigger");
    let trig_test = f1_of(run, "test/trigger");
    let ev_train = f1_of(run, "train/event");
    let ev_test = f1_of(run, "test/event");
    let ere_train = f1_of(run, "train/ere/all-joint");
    let ere_test = f1_of(run, "test/ere/all-joint");
    let base_train = ere_baseline(run, &spaces, &train_docs);
    let base_test = ere_baseline(run, &spaces, &test_docs);
    let pass = trig_train >= 95.0
        && trig_test >= 80.0
        && (ev_train - trig_train).abs() <= 3.0
        && (ev_test - trig_test).abs() <= 3.0
        && ere_train - base_train >= 20.0
        && ere_test - base_test >= 20.0
        && run.elapsed <= Duration::from_secs(600);
    outcome(
        pass,
        format!(
            "trigger F1 train {trig_train:.2} test {trig_test:.2}; event F1 train {ev_train:.2} test {ev_test:.2}; \
             ERE F1 train {ere_train:.2} (baseline {base_train:.2}) test {ere_test:.2} (baseline {base_test:.2}); \
             trained in {:.1}s",
            run.elapsed.as_secs_f64()
        ),
    )
}

fn energy_gap(run: &Run) -> Outcome {
    let (docs, _) = end_to_end_corpus();
    let cfg = end_to_end_config();
    let (train_docs, _) = split(&cfg, &docs);
    let log = &run.outcome.log;
    let first = log.epoch_hinge(0).unwrap();
    let last = log.epoch_hinge(log.epochs() - 1).unwrap();
    let sep = energy_separation(
        &run.outcome.checkpoint.model,
        &train_docs,
        cfg.mention_cap,
        99,
    )
    .unwrap();
    let ratios = [
        last.token / first.token,
        last.sentence / first.sentence,
        last.document / first.document,
    ];
    let gaps = [sep.token, sep.sentence, sep.document];
    let pass = ratios.iter().all(|&r| r < 0.5) && gaps.iter().all(|g| g.gold < g.wrong);
    outcome(
        pass,
        format!(
            "final/first epoch hinge: token {:.2e}, sentence {:.2e}, document {:.2e}; \
             mean E gold vs wrong: token {:.3} < {:.3}, sentence {:.3} < {:.3}, document {:.3} < {:.3}",
            ratios[0],
            ratios[1],
            ratios[2],
            sep.token.gold,
            sep.token.wrong,
            sep.sentence.gold,
            sep.sentence.wrong,
            sep.document.gold,
            sep.document.wrong
        ),
    )
}

fn concentration(run: &Run) -> Outcome {
    let (docs, _) = end_to_end_corpus();
    let cfg = end_to_end_config();
    let (train_docs, _) = split(&cfg, &docs);
    let c =
        sphere_concentration(&run.outcome.checkpoint.model, &train_docs, cfg.mention_cap).unwrap();
    outcome(
        c.fraction_closer >= 0.9,
        format!(
            "{:.1}% of {} training mentions closer to their gold sphere (mean hinge {:.3} vs nearest other {:.3})",
            100.0 * c.fraction_closer,
            c.mentions,
            c.mean_gold_hinge,
            c.mean_nearest_other_hinge
        ),
    )
}

fn determinism(a: &Run, b: &Run) -> Outcome {
    let (ha, hb) = (a.outcome.checkpoint.hash(), b.outcome.checkpoint.hash());
    let same_reports = a.reports == b.reports;
    outcome(
        ha == hb && same_reports && a.outcome.log == b.outcome.log,
        format!(
            "checkpoint sha256 {}…{} both runs; reports {}",
            &ha[..8],
            if ha == hb { "identical" } else { "DIFFER" },
            if same_reports { "identical" } else { "differ" }
        ),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "gradient correctness", gradients()),
        (2, "zero at truth", zero_at_truth()),
        (3, "measurement normalization", normalization()),
        (4, "metrics oracle", metrics_oracle()),
    ];
    let first = run_end_to_end();
    results.push((5, "end-to-end synthetic learning", end_to_end(&first)));
    results.push((6, "energy separation", energy_gap(&first)));
    results.push((7, "hypersphere concentration", concentration(&first)));
    let second = run_end_to_end();
    results.push((8, "determinism", determinism(&first, &second)));

    let mut failed = 0;
    for (n, name, o) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n} [{tag}] {name}: {}", o.detail);
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
