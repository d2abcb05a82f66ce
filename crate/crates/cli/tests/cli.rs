use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_comparables"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

const SCHEMA: &str = r#"[{"name": "area", "kind": "continuous", "unit": "m2"},
 {"name": "age", "kind": "continuous", "unit": "years"}]"#;
const HEADER: &str = "id,lat,lon,offer_date,value,region,area,age";

struct Fixture {
    tmp: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Self {
            tmp: TempDir::new().unwrap(),
        };
        f.write("schema.json", SCHEMA);
        f
    }

    fn dir(&self) -> &Path {
        self.tmp.path()
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir().join(name)
    }

    fn write(&self, name: &str, text: &str) {
        fs::write(self.path(name), text).unwrap();
    }

    fn csv(&self, name: &str, rows: &[String]) {
        let mut text = format!("{HEADER}\n");
        for r in rows {
            text.push_str(r);
            text.push('\n');
        }
        self.write(name, &text);
    }

    fn read(&self, name: &str) -> String {
        fs::read_to_string(self.path(name)).unwrap()
    }

    fn json(&self, name: &str) -> Value {
        serde_json::from_str(&self.read(name)).unwrap()
    }

    fn witnesses(&self, name: &str) -> Vec<Value> {
        self.read(name)
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }

    fn ok(&self, args: &[&str]) {
        ok(self.dir(), args)
    }
}

fn row(id: u64, lat: f64, lon: f64, date: &str, value: f64, region: &str, area: f64, age: f64) -> String {
    format!("{id},{lat},{lon},{date},{value},{region},{area},{age}")
}

/// Valued grid; every fourth row is dated after the split cutoff.
fn grid_rows(n: u64) -> Vec<String> {
    (0..n)
        .map(|i| {
            let lat = 35.0 + (i % 20) as f64 * 0.005;
            let lon = 139.0 + (i / 20) as f64 * 0.005;
            let date = if i % 4 == 0 { "2018-02-01" } else { "2016-05-01" };
            let area = 40.0 + (i * 7 % 60) as f64;
            let age = (i * 3 % 40) as f64;
            row(i + 1, lat, lon, date, 1.0e6 * area / 40.0, if i % 2 == 0 { "a" } else { "b" }, area, age)
        })
        .collect()
}

#[test]
fn ingest_is_idempotent() {
    let f = Fixture::new();
    let mut rows = grid_rows(60);
    rows.push(rows[3].replacen("4,", "999,", 1));
    f.csv("raw.csv", &rows);
    f.ok(&["ingest", "raw.csv", "schema.json", "--run-dir", "one"]);
    f.ok(&["ingest", "one/dataset.csv", "schema.json", "--run-dir", "two"]);
    assert_eq!(f.read("one/dataset.csv"), f.read("two/dataset.csv"));
    assert_eq!(f.json("one/ingest_report.json")["cleaning"]["duplicate"], 1);
    assert!(f.path("one/manifest.json").exists());
}

#[test]
fn no_clean_keeps_price_outlier() {
    let f = Fixture::new();
    let mut rows = grid_rows(10);
    rows.push(row(500, 35.5, 139.5, "2016-01-01", 5.0e9, "a", 50.0, 3.0));
    f.csv("raw.csv", &rows);
    f.ok(&["ingest", "raw.csv", "schema.json", "--run-dir", "clean"]);
    f.ok(&["ingest", "raw.csv", "schema.json", "--no-clean", "--run-dir", "raw"]);
    assert!(!f.read("clean/dataset.csv").contains("\n500,"));
    assert!(f.read("raw/dataset.csv").contains("\n500,"));
    assert_eq!(f.json("clean/ingest_report.json")["cleaning"]["price_cap"], 1);
}

#[test]
fn malformed_csv_fails_without_outputs() {
    let f = Fixture::new();
    f.write("bad.csv", "id,lat,lon\n1,2,3\n");
    let out = run(f.dir(), &["ingest", "bad.csv", "schema.json", "--run-dir", "out"]);
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    assert!(!f.path("out/manifest.json").exists());
    assert!(!f.path("out/dataset.csv").exists());
}

#[test]
fn cleaning_config_file_is_used() {
    let f = Fixture::new();
    f.csv("raw.csv", &grid_rows(10));
    f.write("clean.toml", "max_price = 1.5e6\n");
    f.ok(&["ingest", "raw.csv", "schema.json", "--cleaning-config", "clean.toml", "--run-dir", "out"]);
    let kept = f.read("out/dataset.csv").lines().count() - 1;
    assert!(kept < 10);
    f.write("bad.toml", "max_price = -1\n");
    let out = run(f.dir(), &["ingest", "raw.csv", "schema.json", "--cleaning-config", "bad.toml", "--run-dir", "x"]);
    assert!(!out.status.success());
}

fn split_grid(f: &Fixture, n: u64) {
    f.csv("raw.csv", &grid_rows(n));
    f.ok(&["ingest", "raw.csv", "schema.json", "--run-dir", "in"]);
    f.ok(&["split", "in/dataset.csv", "--schema", "schema.json", "--cutoff", "2017-07-01", "--run-dir", "sp"]);
}

const SMALL_EA: &str = "number_of_generations = 4\npopulation_size = 3\noffsprings_per_parent = 2\nsample_size = 50\nrng_seed = 5\n";

#[test]
fn train_respects_cap_and_is_deterministic() {
    let f = Fixture::new();
    split_grid(&f, 200);
    f.write("ea.toml", SMALL_EA);
    let train = |dir: &str, cap: &str| {
        f.ok(&["train", "sp/train.csv", "ea.toml", "--schema", "schema.json", "--m-cap", cap, "--run-dir", dir]);
    };
    train("a", "10");
    train("b", "10");
    train("c", "inf");
    assert_eq!(f.read("a/genome.json"), f.read("b/genome.json"));
    assert_eq!(f.read("a/trace.csv"), f.read("b/trace.csv"));
    let m = f.json("a/genome.json")["m"].as_u64().unwrap();
    assert!((1..=10).contains(&m));
    assert_eq!(f.read("a/trace.csv").lines().count(), 1 + 4);
    assert!(f.path("c/genome.json").exists());

    let out = run(f.dir(), &["train", "sp/train.csv", "--schema", "schema.json", "--m-cap", "0", "--run-dir", "d"]);
    assert!(!out.status.success());
}

#[test]
fn train_rejects_empty_training_set() {
    let f = Fixture::new();
    f.csv("empty.csv", &[]);
    f.write("ea.toml", SMALL_EA);
    let out = run(f.dir(), &["train", "empty.csv", "ea.toml", "--schema", "schema.json", "--run-dir", "t"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));
}

#[test]
fn lbs_with_single_neighbor_returns_its_value() {
    let f = Fixture::new();
    f.csv("train.csv", &[row(1, 35.0, 139.0, "2016-01-01", 7.5e6, "a", 50.0, 1.0)]);
    f.csv("test.csv", &[row(2, 35.01, 139.0, "2018-01-01", 8.0e6, "a", 60.0, 9.0)]);
    f.ok(&["predict", "train.csv", "test.csv", "lbs", "--schema", "schema.json", "--run-dir", "p"]);
    let w = f.witnesses("p/witnesses.jsonl");
    assert_eq!(w.len(), 1);
    assert_eq!(w[0]["predicted_value"].as_f64().unwrap(), 7.5e6);
    assert_eq!(w[0]["comparables"].as_array().unwrap().len(), 1);
}

#[test]
fn witness_lengths_follow_post_selection() {
    let f = Fixture::new();
    split_grid(&f, 400);
    f.ok(&["predict", "sp/train.csv", "sp/test.csv", "unweighted", "--schema", "schema.json", "--run-dir", "u"]);
    let w = f.witnesses("u/witnesses.jsonl");
    assert_eq!(w.len(), 100);
    assert!(w.iter().all(|x| x["comparables"].as_array().unwrap().len() <= 50));
    assert!(w.iter().any(|x| x["comparables"].as_array().unwrap().len() == 50));

    f.write("ea.toml", SMALL_EA);
    f.ok(&["train", "sp/train.csv", "ea.toml", "--schema", "schema.json", "--m-cap", "10", "--run-dir", "t"]);
    f.ok(&["predict", "sp/train.csv", "sp/test.csv", "t/genome.json", "--schema", "schema.json", "--run-dir", "g"]);
    let w = f.witnesses("g/witnesses.jsonl");
    assert_eq!(w.len(), 100);
    assert!(w.iter().all(|x| x["comparables"].as_array().unwrap().len() <= 10));

    f.write("broken.json", "{\"q\": 1}");
    let out = run(f.dir(), &["predict", "sp/train.csv", "sp/test.csv", "broken.json", "--schema", "schema.json", "--run-dir", "x"]);
    assert!(!out.status.success());
}

#[test]
fn evaluate_reports() {
    let f = Fixture::new();
    // 99 properties in region "small", 150 in "big"
    let rows: Vec<String> = (0..249u64)
        .map(|i| {
            let region = if i < 99 { "small" } else { "big" };
            row(i + 1, 35.0, 139.0 + i as f64 * 1e-3, "2018-01-01", 1000.0 + i as f64, region, 50.0, 1.0)
        })
        .collect();
    f.csv("test.csv", &rows);
    let perfect: String = (0..249u64)
        .map(|i| format!("{{\"target_id\":{},\"predicted_value\":{}}}\n", i + 1, 1000.0 + i as f64))
        .collect();
    f.write("perfect.jsonl", &perfect);
    f.ok(&["evaluate", "perfect.jsonl", "test.csv", "--schema", "schema.json", "--run-dir", "e"]);
    let report = f.json("e/report.json");
    assert_eq!(report["mape"].as_f64().unwrap(), 0.0);
    assert_eq!(report["n"], 249);
    let regions = report["per_region"].as_object().unwrap();
    assert!(regions.contains_key("big"));
    assert!(!regions.contains_key("small"));
    let hist = f.read("e/histogram.csv");
    assert_eq!(hist.lines().count(), 1 + 202);
    assert!(hist.contains("\n0,1,249\n"));

    f.ok(&["evaluate", "perfect.jsonl", "test.csv", "--schema", "schema.json", "--min-region-n", "99", "--run-dir", "e99"]);
    assert!(f.json("e99/report.json")["per_region"].as_object().unwrap().contains_key("small"));

    f.write("stray.jsonl", "{\"target_id\":4242,\"predicted_value\":1.0}\n");
    let out = run(f.dir(), &["evaluate", "stray.jsonl", "test.csv", "--schema", "schema.json", "--run-dir", "bad"]);
    assert!(!out.status.success());
    assert!(!f.path("bad/report.json").exists());
}

#[test]
fn synth_outputs() {
    let f = Fixture::new();
    f.write("s.toml", "n = 500\nseed = 3\n");
    f.ok(&["synth", "s.toml", "--run-dir", "a"]);
    f.ok(&["synth", "s.toml", "--run-dir", "b"]);
    assert_eq!(f.read("a/dataset.csv"), f.read("b/dataset.csv"));
    assert_eq!(f.read("a/ground_truth.json"), f.read("b/ground_truth.json"));

    f.ok(&["ingest", "a/dataset.csv", "a/schema.json", "--run-dir", "i"]);
    let report = f.json("i/ingest_report.json");
    assert_eq!(report["parse"]["rejected"].as_array().unwrap().len(), 0);
    assert_eq!(report["parse"]["accepted"], 500);

    f.write("zero.toml", "n = 0\n");
    let out = run(f.dir(), &["synth", "zero.toml", "--run-dir", "z"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).to_lowercase().contains("invalid"));
}

#[test]
fn manifest_records_inputs_and_outputs() {
    let f = Fixture::new();
    split_grid(&f, 100);
    let m = f.json("sp/manifest.json");
    assert_eq!(m["command"], "split");
    assert_eq!(m["inputs"].as_object().unwrap().len(), 2);
    let outputs = m["outputs"].as_object().unwrap();
    assert!(outputs.contains_key("train.csv") && outputs.contains_key("test.csv"));
    assert!(m["timings_s"]["total"].as_f64().unwrap() >= 0.0);
}
