use std::ffi::OsString;

use snakezero::cli::main_with;

fn run(args: &[&str]) -> (i32, String) {
    let argv: Vec<OsString> = std::iter::once("snakezero")
        .chain(args.iter().copied())
        .map(OsString::from)
        .collect();
    let mut out = Vec::new();
    let code = main_with(argv, &mut out);
    (code, String::from_utf8(out).unwrap())
}

#[test]
fn analyze_prints_closed_forms() {
    let (code, out) = run(&["analyze", "--board", "10", "--time-limit", "1200"]);
    assert_eq!(code, 0);
    let get = |k: &str| {
        out.lines()
            .find_map(|l| l.strip_prefix(&format!("{k}=")))
            .unwrap()
            .to_string()
    };
    let p: f64 = get("win_prob_clt").parse().unwrap();
    assert!((p / 2.566e-15 - 1.0).abs() < 0.05);
    assert_eq!(get("worst_case"), "4851");
    assert_eq!(get("optimal_lower_bound"), "450");
    assert_eq!(get("travel_distance_lower_bound"), "96");
}

#[test]
fn analyze_json_document() {
    let (code, out) = run(&[
        "analyze",
        "--board",
        "6",
        "--time-limit",
        "100",
        "--json",
        "--exact",
    ]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["board"], 6);
    assert!(v["win_prob_exact"].as_f64().unwrap() >= 0.0);
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["--bogus"]).0, 1);
    assert_eq!(run(&["eval", "--agent", "martian"]).0, 1);
    assert_eq!(run(&[]).0, 1);
    assert_eq!(run(&["--help"]).0, 0);
    // Runtime errors.
    assert_eq!(
        run(&[
            "eval",
            "--agent",
            "alphazero",
            "--checkpoint",
            "/no/such/file"
        ])
        .0,
        2
    );
    assert_eq!(run(&["analyze", "--board", "1"]).0, 2);
    assert_eq!(run(&["replay", "/no/such/log.jsonl"]).0, 2);
}

#[test]
fn eval_is_reproducible() {
    let args = [
        "eval", "--agent", "random", "--games", "50", "--seed", "7", "--board", "6",
    ];
    let (c1, a) = run(&args);
    let (c2, b) = run(&args);
    assert_eq!((c1, c2), (0, 0));
    assert_eq!(a, b);
    assert!(a.contains("Random policy"));
    assert!(a.contains("/50"));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "agent = \"hamiltonian\"\nboard = 6\ngames = 3\n").unwrap();
    let out = dir.path().join("table.csv");
    let (code, text) = run(&[
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--games",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{text}");
    let rows = snakezero::eval::parse_table(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(rows[0].strategy, "Hamiltonian cycle strategy");
    assert_eq!(rows[0].games, 5);
    let reports: Vec<snakezero::eval::EvalReport> =
        serde_json::from_str(&std::fs::read_to_string(out.with_extension("json")).unwrap())
            .unwrap();
    assert_eq!(reports[0].results.len(), 5);

    std::fs::write(&cfg, "unknown_key = 1\n").unwrap();
    assert_eq!(run(&["eval", "--config", cfg.to_str().unwrap()]).0, 2);
}

#[test]
fn train_replay_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let d = run_dir.to_str().unwrap();
    let (code, _) = run(&[
        "train",
        "--board",
        "4",
        "--games",
        "2",
        "--budget",
        "4",
        "--time-limit",
        "40",
        "--out",
        d,
    ]);
    assert_eq!(code, 0);
    let log = run_dir.join("games.jsonl");
    let (code, out) = run(&["replay", log.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(out.starts_with("2 games verified"));
    let (code, out) = run(&["metrics", log.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(out.starts_with("metric,games,mean,std_dev,band,count"));

    // A tampered log is rejected.
    let text = std::fs::read_to_string(&log).unwrap();
    let tampered = text.replacen("\"action\":\"", "\"action\":\"X", 1);
    std::fs::write(&log, tampered).unwrap();
    assert_eq!(run(&["replay", log.to_str().unwrap()]).0, 2);

    let ck = run_dir.join("checkpoint.json");
    let (code, out) = run(&[
        "eval",
        "--agent",
        "alphazero",
        "--board",
        "4",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--games",
        "3",
        "--budget",
        "0",
    ]);
    assert_eq!(code, 0);
    assert!(out.contains("AlphaZero"));
}

#[test]
fn selfcheck_passes() {
    let (code, out) = run(&["selfcheck"]);
    assert_eq!(code, 0, "{out}");
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 4);
}
