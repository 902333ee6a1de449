use std::path::Path;
use std::process::Command;

use event_energy::cli::run;
use event_energy::plot::read_svg_series;
use event_energy::trainer::{Checkpoint, TrainingLog};

fn cli(args: &[&str]) -> event_energy::Result<String> {
    let mut out = Vec::new();
    run(
        std::iter::once("event-energy").chain(args.iter().copied()),
        &mut out,
    )?;
    Ok(String::from_utf8(out).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    let (corpus, config, ck, log) = (
        p("corpus.jsonl"),
        p("train.toml"),
        p("model.json"),
        p("log.csv"),
    );

    let said = cli(&[
        "synth",
        "--docs",
        "40",
        "--mentions",
        "4",
        "--seed",
        "3",
        "--out",
        s(&corpus),
    ])
    .unwrap();
    assert!(said.contains("40 documents"));
    let stats = cli(&["stats", "--corpus", s(&corpus)]).unwrap();
    assert!(stats.contains("documents 40") && stats.contains("mentions  160"));

    std::fs::write(
        &config,
        "lr = 0.001\nembed_dim = 8\nepochs = 2\nbatch_size = 8\nregime = \"event-maven\"\n",
    )
    .unwrap();
    let said = cli(&[
        "train",
        "--corpus",
        s(&corpus),
        "--config",
        s(&config),
        "--epochs",
        "3",
        "--seed",
        "4",
        "--out",
        s(&ck),
        "--log",
        s(&log),
    ])
    .unwrap();
    let checkpoint = Checkpoint::load(&ck).unwrap();
    assert!(said.contains(&checkpoint.hash()));
    assert_eq!(checkpoint.train.epochs, 3);
    assert_eq!(checkpoint.train.embed_dim, 8);
    let records = TrainingLog::read_csv(&log).unwrap();
    assert_eq!(records.epochs(), 3);
    assert_eq!(records.records.len(), 3 * 4);

    let table = cli(&[
        "eval",
        "--checkpoint",
        s(&ck),
        "--corpus",
        s(&corpus),
        "--task",
        "ere",
    ])
    .unwrap();
    assert!(table.contains("ere/temporal"));
    let json = cli(&[
        "eval",
        "--checkpoint",
        s(&ck),
        "--corpus",
        s(&corpus),
        "--task",
        "event",
        "--json",
    ])
    .unwrap();
    let reports: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(reports[0]["task"], "event");
    assert_eq!(reports[0]["instances"], 8 * 4);
    cli(&[
        "eval",
        "--checkpoint",
        s(&ck),
        "--corpus",
        s(&corpus),
        "--task",
        "trigger",
        "--energy-inference",
    ])
    .unwrap();

    for (task, lines) in [("event", 160), ("trigger", 160), ("ere", 40 * 6)] {
        let out = p(&format!("{task}.jsonl"));
        cli(&[
            "predict",
            "--checkpoint",
            s(&ck),
            "--corpus",
            s(&corpus),
            "--task",
            task,
            "--out",
            s(&out),
        ])
        .unwrap();
        let text = std::fs::read_to_string(&out).unwrap();
        assert_eq!(text.lines().count(), lines, "{task}");
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["task"], task);
        assert_eq!(first.get("score").is_some(), task != "trigger");
    }
    let out = p("test.jsonl");
    cli(&[
        "predict",
        "--checkpoint",
        s(&ck),
        "--corpus",
        s(&corpus),
        "--task",
        "event",
        "--split",
        "test",
        "--out",
        s(&out),
    ])
    .unwrap();
    assert_eq!(
        std::fs::read_to_string(&out).unwrap().lines().count(),
        8 * 4
    );

    cli(&[
        "plot-energy",
        "--log",
        s(&log),
        "--out",
        s(&p("energy.svg")),
    ])
    .unwrap();
    let svg = std::fs::read_to_string(p("energy.svg")).unwrap();
    let series = read_svg_series(&svg);
    assert_eq!(series.len(), 3);
    let first_token = series
        .iter()
        .find(|(name, _)| name.contains("token"))
        .unwrap();
    assert!(
        (first_token.1[0] - records.records[0].l_tok).abs()
            < 1e-6 * records.records[0].l_tok.abs().max(1.0)
    );
    cli(&[
        "plot-energy",
        "--log",
        s(&log),
        "--out",
        s(&p("energy.png")),
    ])
    .unwrap();
    assert_eq!(&std::fs::read(p("energy.png")).unwrap()[..4], b"\x89PNG");

    cli(&[
        "plot-sphere",
        "--checkpoint",
        s(&ck),
        "--corpus",
        s(&corpus),
        "--class",
        "E1",
        "--out",
        s(&p("sphere.svg")),
    ])
    .unwrap();
    assert!(std::fs::read_to_string(p("sphere.svg"))
        .unwrap()
        .contains("class=\"mention\""));

    assert!(cli(&[
        "plot-sphere",
        "--checkpoint",
        s(&ck),
        "--corpus",
        s(&corpus),
        "--class",
        "Nope",
        "--out",
        s(&p("x.svg"))
    ])
    .is_err());
    assert!(cli(&[
        "plot-energy",
        "--log",
        s(&log),
        "--out",
        s(&p("energy.gif"))
    ])
    .is_err());
    std::fs::write(
        p("empty.csv"),
        std::fs::read_to_string(&log)
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    assert!(cli(&[
        "plot-energy",
        "--log",
        s(&p("empty.csv")),
        "--out",
        s(&p("e.svg"))
    ])
    .is_err());
    assert!(cli(&[
        "eval",
        "--checkpoint",
        s(&p("missing.json")),
        "--corpus",
        s(&corpus),
        "--task",
        "ere"
    ])
    .is_err());
    assert!(cli(&[
        "train",
        "--corpus",
        s(&corpus),
        "--lr",
        "-1",
        "--out",
        s(&ck)
    ])
    .is_err());
    assert!(cli(&[
        "eval",
        "--checkpoint",
        s(&ck),
        "--corpus",
        s(&corpus),
        "--task",
        "nonsense"
    ])
    .is_err());
}

#[test]
fn binary_reports_failures_with_a_nonzero_exit() {
    let bin = env!("CARGO_BIN_EXE_event-energy");
    let out = Command::new(bin)
        .args(["stats", "--corpus", "/nonexistent.jsonl"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let ok = Command::new(bin).arg("--help").output().unwrap();
    assert!(ok.status.success());
}
