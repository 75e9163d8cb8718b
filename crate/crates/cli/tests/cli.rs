use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn sta(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sta")).args(args).output().expect("spawn sta")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn design(dir: &TempDir, name: &str, args: &[&str]) -> PathBuf {
    let path = dir.path().join(name);
    let mut all = vec!["design"];
    all.extend_from_slice(args);
    all.extend_from_slice(&["--out", path.to_str().unwrap()]);
    let out = sta(&all);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    path
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn coefficients(v: &Value, key: &str) -> Vec<f64> {
    v[key].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

struct Table {
    units: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn parse(text: &str) -> Self {
        let (units, body) = text.split_once('\n').unwrap();
        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        let header = rdr.headers().unwrap().iter().map(String::from).collect();
        let rows = rdr.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect();
        Self { units: units.into(), header, rows }
    }

    fn column(&self, name: &str) -> usize {
        self.header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
    }

    fn float(&self, row: usize, name: &str) -> f64 {
        self.rows[row][self.column(name)].parse().unwrap()
    }

    fn last(&self, name: &str) -> f64 {
        self.float(self.rows.len() - 1, name)
    }
}

fn propagate(path: &Path, extra: &[&str]) -> Table {
    let mut args = vec!["propagate", path.to_str().unwrap()];
    args.extend_from_slice(extra);
    let out = sta(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    Table::parse(&String::from_utf8(out.stdout).unwrap())
}

#[test]
fn design_tls_fig1_coefficients() {
    let dir = TempDir::new().unwrap();
    let v = json(&design(&dir, "fig1.json", &["tls", "--preset", "fig1", "--tf", "1"]));
    assert_eq!(v["system"], "two_level");
    let gamma = coefficients(&v, "gamma_coefficients");
    for (g, e) in gamma.iter().zip([PI, 0.0, -3.0 * PI, 2.0 * PI]) {
        assert!((g - e).abs() < 1e-12, "{gamma:?}");
    }
}

#[test]
fn design_ho_endpoints() {
    let dir = TempDir::new().unwrap();
    let v = json(&design(&dir, "ho.json", &["ho", "--omega0", "1", "--omegaf", "0.1", "--tf", "2"]));
    let b = coefficients(&v, "b_coefficients");
    let t_f = 2.0f64;
    let at_end: f64 = b.iter().enumerate().map(|(k, c)| c * t_f.powi(k as i32)).sum();
    assert!((at_end - 10f64.sqrt()).abs() < 1e-9, "{at_end}");
    assert!((b[0] - 1.0).abs() < 1e-12);

    let id = json(&design(&dir, "id.json", &["ho", "--omega0", "1", "--omegaf", "1", "--tf", "1"]));
    let b = coefficients(&id, "b_coefficients");
    assert_eq!(b[0], 1.0);
    assert!(b[1..].iter().all(|c| *c == 0.0));
}

#[test]
fn design_rejects_bad_arguments() {
    assert_eq!(code(&sta(&["design", "ho", "--omega0", "-1", "--tf", "1"])), 2);
    assert_eq!(code(&sta(&["design", "tls", "--preset", "fig9", "--tf", "1"])), 2);
    assert_eq!(code(&sta(&["design", "ho", "--preset", "fig1", "--tf", "1"])), 2);
    assert_eq!(code(&sta(&["propagate", "/nonexistent/design.json"])), 2);
}

#[test]
fn propagate_fig1_transfers_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let path = design(&dir, "fig1.json", &["tls", "--preset", "fig1", "--tf", "1"]);
    let table = propagate(&path, &[]);
    assert!(table.units.starts_with("# units:"));
    assert_eq!(
        table.header,
        ["t", "P1", "P2", "P1_ad", "P2_ad", "overlap_mode_plus", "phase_mode_plus", "alpha_plus"]
    );
    assert_eq!(table.rows.len(), 1001);
    assert!(table.last("P2") >= 1.0 - 1e-6);
    assert!((table.float(0, "P1") - 1.0).abs() < 1e-12);

    let a = sta(&["propagate", path.to_str().unwrap()]);
    let b = sta(&["propagate", path.to_str().unwrap()]);
    assert_eq!(a.stdout, b.stdout);

    let out = dir.path().join("traj.csv");
    let c = sta(&["propagate", path.to_str().unwrap(), "--samples", "11", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&c), 0);
    let t = Table::parse(&std::fs::read_to_string(out).unwrap());
    assert_eq!(t.rows.len(), 11);
}

#[test]
fn tracking_methods() {
    let dir = TempDir::new().unwrap();
    let path = design(&dir, "tracking.json", &["tls", "--preset", "tracking", "--tf", "1"]);
    let cd = propagate(&path, &["--method", "counterdiabatic"]);
    assert!(cd.last("P2") >= 1.0 - 1e-6, "{}", cd.last("P2"));
    let bare = propagate(&path, &["--method", "reference_only"]);
    assert!(bare.last("P2") < 0.99, "{}", bare.last("P2"));
    assert_eq!(code(&sta(&["propagate", path.to_str().unwrap(), "--method", "invariant"])), 2);
}

#[test]
fn propagate_oscillator_columns() {
    let dir = TempDir::new().unwrap();
    let path = design(&dir, "ho.json", &["ho", "--omega0", "1", "--omegaf", "0.1", "--tf", "2"]);
    let t = propagate(&path, &["--fock-dim", "64", "--samples", "21"]);
    assert_eq!(t.header[..3], ["t", "fidelity_to_mode_0", "P0"]);
    assert_eq!(t.header.last().unwrap(), "norm");
    assert_eq!(t.rows.len(), 21);
    assert!((t.last("norm") - 1.0).abs() < 1e-8);
    assert!(t.last("fidelity_to_mode_0") > 1.0 - 1e-6);
}

#[test]
fn check_exit_codes() {
    let dir = TempDir::new().unwrap();
    let fig1 = design(&dir, "fig1.json", &["tls", "--preset", "fig1", "--tf", "1"]);
    let out = sta(&["check", fig1.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], true);

    let mut broken = json(&fig1);
    broken["gamma_coefficients"][0] = Value::from(PI - 0.05);
    let bad = dir.path().join("broken.json");
    std::fs::write(&bad, broken.to_string()).unwrap();
    let out = sta(&["check", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("endpoint"));

    let flat = design(&dir, "flat.json", &["ho", "--omega0", "1", "--omegaf", "1", "--tf", "1"]);
    let out = sta(&["check", flat.to_str().unwrap(), "--fock-dim", "16"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn numeric_failure_exits_three() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("singular.json");
    std::fs::write(
        &path,
        r#"{"system":"two_level","t_f":1.0,"gamma_coefficients":[3.0,-1.0],"beta_coefficients":[0.0],"phi_coefficients":[0.0]}"#,
    )
    .unwrap();
    let out = sta(&["propagate", path.to_str().unwrap()]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sweep_tls_scaling() {
    let out = sta(&["sweep", "tls", "--preset", "fig1", "--tf", "10,0.1,1", "--jobs", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let t = Table::parse(&String::from_utf8(out.stdout).unwrap());
    let tfs: Vec<f64> = (0..3).map(|i| t.float(i, "t_f")).collect();
    assert_eq!(tfs, [0.1, 1.0, 10.0]);
    for i in 0..3 {
        assert!(t.float(i, "infidelity") <= 1e-6);
        let scaled = t.float(i, "peak_rabi") * tfs[i];
        let reference = t.float(1, "peak_rabi");
        assert!((scaled - reference).abs() <= 1e-3 * reference, "{scaled} vs {reference}");
    }
}

#[test]
fn sweep_ho_inversion_flag() {
    let out = sta(&["sweep", "ho", "--tf", "1,2,5,10,20", "--fock-dim", "64", "--samples", "21"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let t = Table::parse(&String::from_utf8(out.stdout).unwrap());
    let flag = t.column("trap_inverted");
    let mut seen = (false, false);
    for (i, row) in t.rows.iter().enumerate() {
        let inverted = row[flag] == "true";
        assert_eq!(inverted, t.float(i, "min_omega_squared") < 0.0);
        if inverted { seen.0 = true } else { seen.1 = true }
    }
    assert!(seen.0 && seen.1, "sweep should cross the inversion threshold");
}

#[test]
fn sweep_usage_errors() {
    assert_eq!(code(&sta(&["sweep", "tls", "--tf", ""])), 2);
    assert_eq!(code(&sta(&["sweep", "tls", "--tf", "1,-2"])), 2);
    assert_eq!(code(&sta(&["sweep", "tls", "--tf", "1", "--jobs", "0"])), 2);
}
