use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_breakdown"));
    c.env_remove("BREAKDOWN_OUT_DIR");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().arg("--out-dir").arg(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let o = run(dir, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn sample(dir: &Path, n: usize) -> String {
    ok(dir, &["simulate", "--n", &n.to_string(), "--seed", "3"]);
    dir.join("sample.csv").display().to_string()
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|x| x.unwrap().iter().map(String::from).collect())
        .collect()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn frontier_has_one_row_per_grid_point() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let input = sample(d, 400);
    ok(d, &["frontier", "--input", &input, "--claim", "dte", "--z", "0", "--p", "0.5"]);
    let r = rows(&d.join("frontier.csv"));
    assert_eq!(r.len(), 50);
    assert!(r.iter().all(|x| x[2] == "dte(z=0,p=0.5)"));
    let meta = json(&d.join("frontier.json"));
    assert_eq!(meta["config"]["claims"][0]["p_lower"], 0.5);
    assert_eq!(meta["curves"][0]["points"], 50);
}

#[test]
fn ate_frontier_is_an_indicator_with_breakdown_point() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let input = sample(d, 400);
    ok(d, &["frontier", "--input", &input, "--claim", "ate", "--mu", "0.5"]);
    let meta = json(&d.join("frontier.json"));
    let bp = meta["curves"][0]["breakdown_point"]["value"].as_f64().unwrap();
    for r in rows(&d.join("frontier.csv")) {
        let c: f64 = r[0].parse().unwrap();
        let t: f64 = r[1].parse().unwrap();
        assert!(t == 0.0 || t == 1.0);
        assert_eq!(t == 1.0, c <= bp, "c={c} bp={bp}");
    }
}

#[test]
fn joint_and_is_pointwise_min() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let input = sample(d, 400);
    ok(d, &["frontier", "--input", &input, "--p", "0.25,0.75"]);
    let members = rows(&d.join("frontier.csv"));
    ok(
        d,
        &["frontier", "--input", &input, "--claim", "joint-and", "--claims", "dte:0:0.25;dte:0:0.75"],
    );
    let joint = rows(&d.join("frontier.csv"));
    assert_eq!(joint.len(), 50);
    for (j, r) in joint.iter().enumerate() {
        let a: f64 = members[j][1].parse().unwrap();
        let b: f64 = members[50 + j][1].parse().unwrap();
        let t: f64 = r[1].parse().unwrap();
        assert_eq!(t, a.min(b));
    }
}

#[test]
fn band_lies_below_frontier_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let input = sample(d, 300);
    let args = ["band", "--input", &input, "--p", "0.5", "--b", "60", "--seed", "9"];
    ok(d, &args);
    let first = fs::read(d.join("band.csv")).unwrap();
    let first_meta = fs::read(d.join("band.json")).unwrap();
    let r = rows(&d.join("band.csv"));
    assert_eq!(r.len(), 50);
    for x in &r {
        let f: f64 = x[1].parse().unwrap();
        let l: f64 = x[2].parse().unwrap();
        assert!(l <= f && l >= 0.0);
    }
    let meta = json(&d.join("band.json"));
    assert_eq!(meta["method"], "delta");
    assert_eq!(meta["B"], 60);
    assert_eq!(meta["seed"], 9);
    assert!(meta["epsilon_n"].as_f64().unwrap() > 0.0);
    assert!(meta["flagged"].is_u64());

    let o = bin()
        .arg("--threads")
        .arg("1")
        .arg("--out-dir")
        .arg(d)
        .args(args)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(fs::read(d.join("band.csv")).unwrap(), first);
    assert_eq!(fs::read(d.join("band.json")).unwrap(), first_meta);
}

#[test]
fn smoothed_band_is_tagged() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let input = sample(d, 300);
    ok(d, &["band", "--input", &input, "--p", "0.5", "--b", "40", "--method", "smoothed"]);
    let meta = json(&d.join("band.json"));
    assert_eq!(meta["method"], "smoothed");
    assert!(meta["epsilon_n"].is_null());
    assert_eq!(rows(&d.join("band.csv")).len(), 50);
}

#[test]
fn mc_table_schema() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(
        d,
        &["mc", "--s", "3", "--b", "20", "--ratios", "1,2", "--p-lowers", "0.25,0.9", "--grid-points", "10"],
    );
    let text = fs::read_to_string(d.join("mc.csv")).unwrap();
    assert!(text.starts_with("N,epsilon,ratio,p_lower,coverage,area_ratio\n"));
    assert_eq!(rows(&d.join("mc.csv")).len(), 4);
    assert_eq!(json(&d.join("mc.json"))["config"]["s"], 3);
}

#[test]
fn selected_epsilon_comes_from_the_grid() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let input = sample(d, 200);
    ok(
        d,
        &[
            "select-epsilon", "--input", &input, "--p", "0.5", "--ratios", "1,4", "--b-outer", "4",
            "--b-inner", "20", "--grid-points", "10",
        ],
    );
    let meta = json(&d.join("select_epsilon.json"));
    let r = meta["selection"]["selected_ratio"].as_f64().unwrap();
    assert!(r == 1.0 || r == 4.0);
    let selected: Vec<_> = rows(&d.join("select_epsilon.csv"))
        .into_iter()
        .filter(|x| x[4] == "1")
        .collect();
    assert_eq!(selected.len(), 1);
}

#[test]
fn diagnose_reports_one_row_per_covariate() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let mut text = String::from("y,x,a,b\n");
    for i in 0..80 {
        text += &format!("{},{},{},{}\n", i as f64 * 0.1, (i % 2), (i / 2) % 2, (i / 4) % 3);
    }
    let input = d.join("cov.csv");
    fs::write(&input, text).unwrap();
    let input = input.display().to_string();
    ok(d, &["diagnose", "--input", &input, "--covariates", "a,b"]);
    let r = rows(&d.join("diagnose.csv"));
    assert_eq!(r.len(), 2);
    assert_eq!(r[0][0], "a");
    assert_eq!(r[1][0], "b");
}

#[test]
fn output_directory_from_environment() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path().join("env_out");
    let o = bin()
        .env("BREAKDOWN_OUT_DIR", &d)
        .args(["simulate", "--n", "50"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(d.join("sample.csv").is_file());
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let input = sample(d, 100);
    let missing = run(d, &["frontier", "--input", "does_not_exist.csv"]);
    assert_eq!(missing.status.code(), Some(2));
    let bad_p = run(d, &["frontier", "--input", &input, "--p", "1.5"]);
    assert_eq!(bad_p.status.code(), Some(2));
    let conflict = run(d, &["band", "--input", &input, "--epsilon", "0.1", "--select-epsilon"]);
    assert_eq!(conflict.status.code(), Some(2));
    // an output "directory" that is a regular file cannot be written
    let blocked = bin()
        .arg("--out-dir")
        .arg(&input)
        .args(["frontier", "--input", &input])
        .output()
        .unwrap();
    assert_eq!(blocked.status.code(), Some(3));
}
