use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_minimaxgof"))
        .args(args)
        .env_remove("MINIMAXGOF_MAX_INDICES")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> (String, String) {
    let out = run(args);
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(out.status.success(), "{args:?} failed: {stderr}");
    (String::from_utf8(out.stdout).unwrap(), stderr)
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exited normally")
}

fn json(text: &str) -> Value {
    serde_json::from_str(text).expect("valid json")
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

fn two_row_data(dir: &TempDir) -> (String, String) {
    let data = path(dir, "data.csv");
    fs::write(&data, "t_1,x\n0.1,1\n0.9,1\n").unwrap();
    let weights = path(dir, "weights.csv");
    fs::write(&weights, format!("# schema_version: 1\nindex,weight\n0,{}\n", std::f64::consts::SQRT_2)).unwrap();
    (data, weights)
}

#[test]
fn enumerate_summary_counts() {
    let (csv, summary) = ok(&["enumerate", "--family", "sobolev-sum", "--d", "1", "--sigma", "1", "--cutoff", "10"]);
    assert!(summary.starts_with("N=2 "), "{summary}");
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 3);

    let (_, summary) =
        ok(&["enumerate", "--cutoff", "0.5", "--family", "tensor-sobolev", "--d", "2", "--sigma", "1"]);
    assert!(summary.starts_with("N=0 "), "{summary}");
}

#[test]
fn exit_codes() {
    assert_eq!(code(&["enumerate", "--family", "sobolev-sum", "--d", "1", "--cutoff", "10"]), 2);
    assert_eq!(code(&["enumerate", "--family", "sobolev-sum", "--d", "1", "--sigma", "-1", "--cutoff", "10"]), 2);
    let capped = Command::new(env!("CARGO_BIN_EXE_minimaxgof"))
        .args(["enumerate", "--family", "sobolev-sum", "--d", "2", "--sigma", "1", "--cutoff", "1000"])
        .env("MINIMAXGOF_MAX_INDICES", "10")
        .output()
        .unwrap();
    assert_eq!(capped.status.code(), Some(3));
    assert_eq!(
        code(&["extremal", "--family", "sobolev-sum", "--d", "1", "--sigma", "1", "--n", "100", "--r", "10"]),
        4
    );
}

#[test]
fn failure_leaves_no_output_file() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "sol.json");
    let status = code(&[
        "extremal", "--family", "sobolev-sum", "--d", "1", "--sigma", "1", "--n", "100", "--r", "10", "--out", &out,
    ]);
    assert_eq!(status, 4);
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn test_two_row_example() {
    let dir = TempDir::new().unwrap();
    let (data, weights) = two_row_data(&dir);
    let (body, summary) = ok(&["test", "--data", &data, "--weights", &weights]);
    let v = json(&body);
    assert!((v["U"].as_f64().unwrap() - 0.5 * std::f64::consts::SQRT_2).abs() < 1e-12);
    assert!((v["H"].as_f64().unwrap() - 1.6448536269514729).abs() < 1e-12);
    assert_eq!(v["reject"], Value::Bool(false));
    assert!(summary.contains("decision=accept"));

    let (body, _) = ok(&["test", "--data", &data, "--weights", &weights, "--tau2", "0.25"]);
    let scaled = json(&body)["U"].as_f64().unwrap();
    assert!((scaled - 4.0 * v["U"].as_f64().unwrap()).abs() < 1e-12);
}

#[test]
fn test_rejects_bad_data() {
    let dir = TempDir::new().unwrap();
    let (_, weights) = two_row_data(&dir);
    let empty = path(&dir, "empty.csv");
    fs::write(&empty, "").unwrap();
    assert_eq!(code(&["test", "--data", &empty, "--weights", &weights]), 2);
    let wide = path(&dir, "wide.csv");
    fs::write(&wide, "t_1,t_2,x\n0.1,0.2,1\n").unwrap();
    assert_eq!(code(&["test", "--data", &wide, "--weights", &weights, "--d", "1"]), 2);
}

#[test]
fn enumerate_round_trips_into_test() {
    let dir = TempDir::new().unwrap();
    let set = path(&dir, "set.csv");
    let fam = ["--family", "sobolev-sum", "--d", "2", "--sigma", "1"];
    let mut args = vec!["enumerate"];
    args.extend(fam);
    args.extend(["--cutoff", "60", "--out", &set]);
    ok(&args);

    let data = path(&dir, "data.csv");
    let mut text = String::from("t_1,t_2,x\n");
    for i in 0..40 {
        let t = (i as f64 * 0.618_034) % 1.0;
        let s = (i as f64 * 0.414_214) % 1.0;
        text += &format!("{t},{s},{}\n", ((i * 7) % 5) as f64 - 2.0);
    }
    fs::write(&data, text).unwrap();

    let (from_file, _) = ok(&["test", "--data", &data, "--index-set", &set]);
    let mut direct = vec!["test", "--data", &data];
    direct.extend(fam);
    direct.extend(["--cutoff", "60"]);
    let (in_process, _) = ok(&direct);
    assert_eq!(json(&from_file)["U"], json(&in_process)["U"]);
    assert_eq!(json(&from_file)["N"], json(&in_process)["N"]);
}

#[test]
fn extremal_rescaling() {
    let base = ["extremal", "--family", "sobolev-sum", "--d", "1", "--sigma", "1", "--n", "1000", "--r", "0.05"];
    let (one, _) = ok(&base);
    let mut scaled = base.to_vec();
    scaled.extend(["--b", "2", "--B", "2"]);
    let (two, _) = ok(&scaled);
    let u1 = json(&one)["u_sq"].as_f64().unwrap();
    let u2 = json(&two)["u_sq"].as_f64().unwrap();
    assert!((u2 / u1 - 16.0).abs() < 1e-4, "{}", u2 / u1);
    let weights = json(&one)["test_weights"].as_array().unwrap().clone();
    let norm: f64 = weights.iter().map(|w| w["weight"].as_f64().unwrap().powi(2)).sum();
    assert!((norm - 2.0).abs() < 1e-8);
}

#[test]
fn rates_slope() {
    let (csv, _) = ok(&[
        "rates", "--family", "sobolev-sum", "--d", "1", "--sigma", "2", "--n-grid", "1000..1000000:31",
    ]);
    let slope: f64 = csv
        .lines()
        .find_map(|l| l.strip_prefix("# slope:"))
        .expect("slope line")
        .trim()
        .parse()
        .unwrap();
    assert!((slope + 4.0 / 9.0).abs() < 0.02, "{slope}");

    let (csv, _) = ok(&["rates", "--family", "sobolev-sum", "--d", "1", "--sigma", "2", "--n-grid", "5000"]);
    assert!(!csv.contains("# slope"));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 2);
}

fn simulate(dir: &Path, workers: &str) -> Value {
    let out = dir.join(format!("sim-{workers}.json")).to_string_lossy().into_owned();
    ok(&[
        "simulate", "--family", "sobolev-sum", "--d", "1", "--sigma", "1", "--n", "500", "--target-u", "2",
        "--source", "lf-rademacher", "--reps", "300", "--seed", "11", "--workers", workers, "--out", &out,
        "--format", "json",
    ]);
    let mut v = json(&fs::read_to_string(out).unwrap());
    v.as_object_mut().unwrap().remove("runtime");
    v
}

#[test]
fn simulate_is_deterministic_across_workers() {
    let dir = TempDir::new().unwrap();
    let one = simulate(dir.path(), "1");
    let eight = simulate(dir.path(), "8");
    assert_eq!(one, eight);
    let beta = 1.0 - one["predicted"].as_f64().unwrap();
    assert!((beta - 0.361_240).abs() < 1e-6, "{beta}");
}

#[test]
fn simulate_appends_csv_rows() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "runs.csv");
    let base = [
        "simulate", "--family", "sobolev-sum", "--d", "1", "--sigma", "1", "--n", "200", "--r", "0.1", "--reps", "50",
        "--out", &out, "--format", "csv",
    ];
    ok(&base);
    let mut again = base.to_vec();
    again.push("--append");
    ok(&again);
    let text = fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1].split(',').count(), rows[0].split(',').count());
}
