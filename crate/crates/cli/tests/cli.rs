use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::thread::sleep;
use std::time::{Duration, Instant};

const BIN: &str = env!("CARGO_BIN_EXE_concepttracer");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("CONCEPTTRACER_PORT")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Synthetic inputs in `dir`; returns (manifest, concepts).
fn synth(dir: &Path, extra: &[&str]) -> (PathBuf, PathBuf) {
    let mut args = vec!["synth", "--out-dir", p(dir), "--seed", "5"];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    (dir.join("activations.manifest.json"), dir.join("concepts.csv"))
}

fn compute(manifest: &Path, concepts: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "compute",
        "--activations",
        p(manifest),
        "--concepts",
        p(concepts),
        "--out",
        p(out),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

fn small_inputs(dir: &Path) -> (PathBuf, PathBuf) {
    synth(
        dir,
        &["--samples", "300", "--neurons", "4", "--concepts", "3", "--layers", "2", "--plant", "1:2:0", "--plant", "0:0:1"],
    )
}

#[test]
fn synth_compute_report() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, concepts) = small_inputs(dir.path());
    assert!(dir.path().join("planted.json").exists());
    let out = dir.path().join("result.json");
    let o = compute(&manifest, &concepts, &out, &["--seed", "1", "--permutations", "99"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.exists());
    let err = stderr(&o);
    assert!(err.lines().any(|l| l.starts_with("event=layer_binned")), "{err}");
    assert!(err.lines().any(|l| l.starts_with("event=finished")), "{err}");

    let o = run(&["report", "--results", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("rank"));
    // both planted pairs show up among the significant ones
    let ids = |l: &str| l.split_whitespace().skip(1).take(3).collect::<Vec<_>>().join(" ");
    assert!(text.lines().any(|l| ids(l) == "1 2 C00"), "{text}");
    assert!(text.lines().any(|l| ids(l) == "0 0 C01"), "{text}");

    let quiet = compute(&manifest, &concepts, &out, &["--seed", "1", "--permutations", "9", "--quiet"]);
    assert_eq!(code(&quiet), 0);
    assert!(stderr(&quiet).is_empty(), "{}", stderr(&quiet));
}

#[test]
fn flag_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, concepts) = small_inputs(dir.path());
    let out = dir.path().join("r.json");
    let o = compute(&manifest, &concepts, &out, &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--seed"), "{}", stderr(&o));
    assert!(stderr(&o).to_lowercase().contains("usage"));

    let o = compute(&manifest, &concepts, &out, &["--seed", "1", "--alpha", "1.5"]);
    assert_eq!(code(&o), 2);
    let o = compute(&manifest, &concepts, &out, &["--seed", "1", "--bins", "1"]);
    assert_eq!(code(&o), 2);
    let o = compute(&manifest, &concepts, &out, &["--seed", "1", "--maxt-scope", "sideways"]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
}

#[test]
fn input_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = small_inputs(dir.path());
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "a\n1\n0\n").unwrap();
    let out = dir.path().join("r.json");
    let o = compute(&manifest, &bad, &out, &["--seed", "1"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("rows"), "{}", stderr(&o));

    let o = compute(&dir.path().join("missing.json"), &bad, &out, &["--seed", "1"]);
    assert_eq!(code(&o), 3);

    let (_, concepts) = small_inputs(dir.path());
    let o = compute(&manifest, &concepts, &out, &["--seed", "1", "--layers", "7"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let o = compute(&manifest, &concepts, &out, &["--seed", "1", "--min-prevalence", "100000"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    std::fs::write(dir.path().join("junk.json"), "{\"schema_version\": \"1\"").unwrap();
    let o = run(&["report", "--results", p(&dir.path().join("junk.json"))]);
    assert_eq!(code(&o), 3);
    let o = run(&["report", "--results", p(&dir.path().join("absent.json"))]);
    assert_eq!(code(&o), 3);
}

#[test]
fn write_failure_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, concepts) = small_inputs(dir.path());
    // the output's parent is a regular file
    let out = dir.path().join("concepts.csv").join("r.json");
    let o = compute(&manifest, &concepts, &out, &["--seed", "1", "--permutations", "5"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

fn three_pair_result(dir: &Path) -> PathBuf {
    let (manifest, concepts) = synth(
        dir,
        &["--samples", "200", "--neurons", "1", "--concepts", "3", "--layers", "1", "--plant", "0:0:2"],
    );
    let out = dir.join("three.json");
    let o = compute(&manifest, &concepts, &out, &["--seed", "3", "--permutations", "50"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

#[test]
fn report_rows_markers_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let results = three_pair_result(dir.path());
    let csv_path = dir.path().join("top.csv");
    let o = run(&["report", "--results", p(&results), "--top-k", "5", "--all", "--csv", p(&csv_path)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().skip(2).collect();
    assert_eq!(rows.len(), 3, "{text}");
    let header: Vec<&str> = text.lines().nth(1).unwrap().split_whitespace().collect();
    assert_eq!(header.last(), Some(&"knee"));

    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    let records: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), 3);
    let knees = records.iter().filter(|r| &r[8] == "true").count();
    assert_eq!(knees, 1);

    let result: serde_json::Value = serde_json::from_slice(&std::fs::read(&results).unwrap()).unwrap();
    for r in &records {
        let concept_idx: usize = r[3][1..].parse().unwrap();
        let stored = result["pairs"]
            .as_array()
            .unwrap()
            .iter()
            .find(|p| p["concept"] == concept_idx)
            .unwrap();
        assert_eq!(r[4].parse::<f64>().unwrap(), stored["saliency"].as_f64().unwrap());
        assert_eq!(r[5].parse::<f64>().unwrap(), stored["selectivity"].as_f64().unwrap());
        assert_eq!(r[6].parse::<f64>().unwrap(), stored["p_combined"].as_f64().unwrap());
    }
    // the knee row is flagged in the table as well
    let knee_rank = records.iter().find(|r| &r[8] == "true").unwrap()[0].to_string();
    let knee_line = rows.iter().find(|l| l.split_whitespace().next() == Some(knee_rank.as_str())).unwrap();
    assert!(knee_line.trim_end().ends_with('*'));
}

#[test]
fn config_file_drives_compute() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, concepts) = small_inputs(dir.path());
    let out = dir.path().join("from_cfg.json");
    let cfg = dir.path().join("cfg.json");
    let json = serde_json::json!({
        "activations": manifest, "concepts": concepts, "out": out,
        "seed": 9, "permutations": 20, "maxt_scope": "per-layer"
    });
    std::fs::write(&cfg, json.to_string()).unwrap();
    let o = run(&["compute", "--config", p(&cfg), "--quiet"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(r["config"]["maxt_scope"], "per-layer");
    assert_eq!(r["config"]["permutations"], 20);
    assert_eq!(r["nulls"].as_array().unwrap().len(), 2);
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn serve_and_query() {
    let dir = tempfile::tempdir().unwrap();
    let results = three_pair_result(dir.path());
    let port = free_port();
    let _server = Server(
        Command::new(BIN)
            .args(["serve", "--results", p(&results)])
            .env("CONCEPTTRACER_PORT", port.to_string())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let url = format!("http://127.0.0.1:{port}");
    let deadline = Instant::now() + Duration::from_secs(20);
    let meta = loop {
        let o = run(&["query", "--url", &url, "meta"]);
        if code(&o) == 0 {
            break stdout(&o);
        }
        assert!(Instant::now() < deadline, "server never came up: {}", stderr(&o));
        sleep(Duration::from_millis(100));
    };
    let meta: serde_json::Value = serde_json::from_str(&meta).unwrap();
    assert_eq!(meta["counts"]["pairs"], 3);

    let o = run(&["query", "--url", &url, "pareto", "--all"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let view: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(view["pairs"].as_array().unwrap().len(), 3);
    assert!(view["knee"].is_u64());

    let o = run(&["query", "--url", &url, "pairs", "--scope", "layers", "--layers", "4"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("NotFound"));

    let o = run(&["query", "--url", &url, "concepts", "c0"]);
    assert_eq!(code(&o), 0);
    assert_eq!(serde_json::from_str::<serde_json::Value>(&stdout(&o)).unwrap().as_array().unwrap().len(), 3);

    // a second server on the same port
    let o = run(&["serve", "--results", p(&results), "--port", &port.to_string()]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
}

#[test]
fn serve_rejects_unreadable_results() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["serve", "--results", p(&dir.path().join("none.json")), "--port", "0"]);
    assert_eq!(code(&o), 3);
}
