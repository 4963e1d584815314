use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use persona_probe::cli::{main_with_args, EXIT_BACKEND, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION};

fn run(args: &[&str]) -> i32 {
    run_env(args, &BTreeMap::new())
}

fn run_env(args: &[&str], env: &BTreeMap<String, String>) -> i32 {
    let mut full = vec!["persona-probe"];
    full.extend_from_slice(args);
    main_with_args(full, env)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn strip_timestamps(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|line| {
            let mut v: serde_json::Value = serde_json::from_str(line).unwrap();
            v["meta"]["timestamp"] = serde_json::Value::Null;
            v
        })
        .collect()
}

fn write_corpus(path: &Path) {
    let mut lines = Vec::new();
    let cues = [
        "friendly",
        "shy",
        "lazy",
        "organized",
        "calm",
        "anxious",
        "creative",
        "rude",
    ];
    for i in 0..24 {
        let text = format!(
            "post {i}. people say I am {}. the weather was fine today.",
            cues[i % cues.len()]
        );
        lines.push(serde_json::json!({"doc_id": format!("r{i}"), "source": "reddit", "text": text}).to_string());
    }
    for i in 0..12 {
        let answers: BTreeMap<String, i32> = (1..=50).map(|id| (id.to_string(), 1 + ((id + i) % 5) as i32)).collect();
        let text = format!("{} about me.", "I like hiking and I am kind. ".repeat(3 + i * 4));
        lines.push(
            serde_json::json!({"doc_id": format!("s{i}"), "source": "survey_directed", "text": text, "subject_responses": answers})
                .to_string(),
        );
    }
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(run(&["grid"]), EXIT_USAGE);
    assert_eq!(run(&["analyze", "--out", "x"]), EXIT_USAGE);
    assert_eq!(run(&["--help"]), EXIT_OK);
}

#[test]
fn validation_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert_eq!(
        run(&[
            "grid",
            "--backend",
            "mock:lexicon",
            "--concurrency",
            "0",
            "--out",
            p(&out)
        ]),
        EXIT_VALIDATION
    );
    assert_eq!(
        run(&["grid", "--backend", "mock:nonsense", "--out", p(&out)]),
        EXIT_VALIDATION
    );
    assert_eq!(
        run(&["grid", "--backend", "mock:lexicon", "--trait", "Q", "--out", p(&out)]),
        EXIT_VALIDATION
    );
    assert_eq!(
        run(&["assess", "--out", p(&out.join("r.jsonl"))]),
        EXIT_VALIDATION,
        "backend is required"
    );
    assert_eq!(
        run(&["analyze", "--records", "/does/not/exist.jsonl", "--out", p(&out)]),
        EXIT_VALIDATION
    );
    let env = BTreeMap::from([("PERSONA_PROBE_SEED".to_string(), "abc".to_string())]);
    assert_eq!(
        run_env(&["grid", "--backend", "mock:lexicon", "--out", p(&out)], &env),
        EXIT_VALIDATION
    );
}

#[test]
fn unreachable_backend_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let code = run(&[
        "assess",
        "--backend",
        &format!("http://127.0.0.1:{port}"),
        "--timeout-secs",
        "2",
        "--out",
        p(&dir.path().join("r.jsonl")),
    ]);
    assert_eq!(code, EXIT_BACKEND);
}

#[test]
fn grid_rerun_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(
            run(&[
                "grid",
                "--backend",
                "mock:lexicon",
                "--seed",
                "5",
                "--trait",
                "A",
                "--out",
                p(out)
            ]),
            EXIT_OK
        );
    }
    for name in ["base.jsonl", "grid.jsonl"] {
        let records = strip_timestamps(&a.join(name));
        assert_eq!(records, strip_timestamps(&b.join(name)), "{name}");
        assert!(records.iter().all(|r| r["meta"]["seed"] == 5));
    }
    assert_eq!(strip_timestamps(&a.join("grid.jsonl")).len(), 50);
    for name in [
        "deltas.csv",
        "correlations.csv",
        "item_rho.csv",
        "rcm_summary.csv",
        "analysis.json",
    ] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    let analysis: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("analysis.json")).unwrap()).unwrap();
    assert!(analysis.to_string().contains("rho"));
}

#[test]
fn config_file_env_and_flags_layer() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("probe.toml");
    std::fs::write(
        &config,
        "[run]\nbackend = \"mock:uniform\"\nseed = 1\npersona = \"name:Susan\"\n",
    )
    .unwrap();
    let env = BTreeMap::from([("PERSONA_PROBE_BACKEND".to_string(), "mock:lexicon".to_string())]);
    let out = dir.path().join("r.jsonl");
    let code = run_env(
        &["--config", p(&config), "assess", "--seed", "4", "--out", p(&out)],
        &env,
    );
    assert_eq!(code, EXIT_OK);
    let records = strip_timestamps(&out);
    assert_eq!(records.len(), 1);
    assert_eq!(records[0]["model_id"], "mock:lexicon:4");
    assert_eq!(records[0]["persona"]["name"], "Susan");

    std::fs::write(&config, "[run]\nbackend = \"mock:uniform\"\ncolour = \"blue\"\n").unwrap();
    assert_eq!(
        run(&["--config", p(&config), "assess", "--out", p(&out)]),
        EXIT_VALIDATION
    );
}

#[test]
fn corpus_features_analyze_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    write_corpus(&corpus);
    let prepared = dir.path().join("prepared");
    let code = run(&[
        "corpus",
        "--backend",
        "mock:lexicon:3",
        "--input",
        p(&corpus),
        "--limit",
        "40",
        "--out",
        p(&prepared),
    ]);
    assert_eq!(code, EXIT_OK);
    let docs = std::fs::read_to_string(prepared.join("docs.jsonl")).unwrap();
    assert_eq!(docs.lines().count(), 36);
    assert!(docs.contains("\"truncated\":true"));
    assert_eq!(
        strip_timestamps(&prepared.join("records.jsonl")).len(),
        37,
        "36 documents plus base"
    );

    let analysis = dir.path().join("analysis");
    let code = run(&[
        "analyze",
        "--records",
        p(&prepared.join("records.jsonl")),
        "--docs",
        p(&prepared.join("docs.jsonl")),
        "--survey-filter",
        "long=min-words:30",
        "--out",
        p(&analysis),
    ]);
    assert_eq!(code, EXIT_OK);
    let survey = std::fs::read_to_string(analysis.join("survey.csv")).unwrap();
    assert!(survey.contains("long"), "{survey}");

    let features = dir.path().join("features");
    let code = run(&[
        "features",
        "--records",
        p(&prepared.join("records.jsonl")),
        "--docs",
        p(&prepared.join("docs.jsonl")),
        "--orders",
        "1,2",
        "--k",
        "5",
        "--out",
        p(&features),
    ]);
    assert_eq!(code, EXIT_OK);
    let text = std::fs::read_to_string(features.join("features.txt")).unwrap();
    assert!(text.contains("friendly") || text.contains("shy"), "{text}");
    assert!(features.join("features.csv").exists());

    let report = dir.path().join("report");
    let code = run(&[
        "report",
        "--records",
        p(&prepared.join("records.jsonl")),
        "--ranges",
        "--plots",
        "--out",
        p(&report),
    ]);
    assert_eq!(code, EXIT_OK);
    let ranges = std::fs::read_to_string(report.join("ranges.csv")).unwrap();
    assert!(
        ranges.contains("reddit") && ranges.contains("survey_directed"),
        "{ranges}"
    );
}

#[test]
fn name_battery_writes_forty_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("names.jsonl");
    assert_eq!(
        run(&[
            "assess",
            "--backend",
            "mock:lexicon",
            "--names",
            "--mode",
            "masked",
            "--out",
            p(&out)
        ]),
        EXIT_OK
    );
    assert_eq!(strip_timestamps(&out).len(), 40);
    let report = dir.path().join("report");
    assert_eq!(run(&["report", "--records", p(&out), "--out", p(&report)]), EXIT_OK);
    let names = std::fs::read_to_string(report.join("names.csv")).unwrap();
    assert!(names.contains("male") && names.contains("female"), "{names}");
}

#[test]
fn binary_reports_exit_codes_and_json_summary() {
    let bin = env!("CARGO_BIN_EXE_persona-probe");
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(bin)
        .args(["grid", "--backend", "mock:lexicon", "--trait", "E", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_OK));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["command"], "grid");

    let bad = Command::new(bin).arg("nope").output().unwrap();
    assert_eq!(bad.status.code(), Some(EXIT_USAGE));
}
