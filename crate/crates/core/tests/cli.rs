#[path = "common/quadrature.rs"]
mod quadrature;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use supou::cli::{load_config, ExperimentConfig};
use supou::estimate::{write_batches_csv, write_moments_csv, MomentTable};
use supou::theory::tau_total;

const CASE_B: &str = "\
gamma = 1.8
w_plus = 0.5
w_minus = 0.5
beta = 0.3
c_plus = 0.5
c_minus = 0.5
pi_shape = 0.4
";

fn supou(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_supou"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(|r| r.unwrap())
        .collect()
}

#[test]
fn tau_prints_case_b_label_and_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "b.toml", CASE_B);
    let out = dir.path().join("out");
    let o = supou(&["tau", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("Theorem(b=0) case (b), breakpoint q=1+α"));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("tau_theory.json")).unwrap()).unwrap();
    assert_eq!(json["total"]["breakpoints"], serde_json::json!([1.4]));
    assert_eq!(json["components"].as_object().unwrap().len(), 2);
    let rows = csv_rows(&out.join("tau_theory.csv"));
    assert!(rows.iter().any(|r| &r[0] == "1.4" && &r[1] == "1"));
}

#[test]
fn tau_case_a_has_one_segment() {
    let dir = tempfile::tempdir().unwrap();
    let body = CASE_B.replace("gamma = 1.8", "gamma = 1.2");
    let cfg = write_config(dir.path(), "a.toml", &body);
    let o = supou(&["tau", "--config", s(&cfg), "--out", s(dir.path())]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("case (a)"));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("tau_theory.json")).unwrap())
            .unwrap();
    assert_eq!(json["total"]["slopes"].as_array().unwrap().len(), 1);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let boundary = write_config(
        dir.path(),
        "edge.toml",
        &CASE_B.replace("beta = 0.3", "beta = 1.4"),
    );
    let o = supou(&["tau", "--config", s(&boundary)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("β = 1+α excluded"), "{}", stderr(&o));

    let unknown = write_config(dir.path(), "typo.toml", &format!("{CASE_B}gama = 1\n"));
    assert_eq!(supou(&["tau", "--config", s(&unknown)]).status.code(), Some(2));

    let missing = dir.path().join("nope.toml");
    assert_eq!(supou(&["tau", "--config", s(&missing)]).status.code(), Some(3));

    let blocked = dir.path().join("file");
    fs::write(&blocked, "").unwrap();
    let ok = write_config(dir.path(), "ok.toml", CASE_B);
    let o = supou(&["tau", "--config", s(&ok), "--out", s(&blocked.join("sub"))]);
    assert_eq!(o.status.code(), Some(3));
}

const TINY: &str = "\
gamma = 1.8
w_plus = 0.5
w_minus = 0.5
beta = 0.3
c_plus = 0.5
c_minus = 0.5
pi_shape = 0.4
count = 4
n_paths = 1
q_values = [0.5, 1.0, 1.5]
batching = 4
";

#[test]
fn simulate_shape_manifest_and_dump() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let out = dir.path().join("run");
    let o = supou(&["simulate", "--config", s(&cfg), "--out", s(&out), "--dump-paths"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(csv_rows(&out.join("moments.csv")).len(), 4 * 3);
    assert_eq!(csv_rows(&out.join("paths.csv")).len(), 4);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(manifest["config"]["n_paths"], 1);

    let out2 = dir.path().join("again");
    let o = supou(&[
        "simulate",
        "--config",
        s(&out.join("manifest.json")),
        "--out",
        s(&out2),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["moments.csv", "moment_batches.csv"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(out2.join(f)).unwrap());
    }
}

#[test]
fn simulate_is_worker_independent() {
    let dir = tempfile::tempdir().unwrap();
    let body = TINY
        .replace("n_paths = 1", "n_paths = 64")
        .replace("count = 4", "count = 6");
    let cfg = write_config(dir.path(), "w.toml", &body);
    let mut files = Vec::new();
    for w in ["1", "8"] {
        let out = dir.path().join(w);
        let o = supou(&[
            "simulate", "--config", s(&cfg), "--out", s(&out), "--workers", w, "--seed", "42",
        ]);
        assert!(o.status.success());
        let o = supou(&["estimate", "--config", s(&cfg), "--out", s(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        files.push((
            fs::read(out.join("moments.csv")).unwrap(),
            fs::read(out.join("tau.csv")).unwrap(),
        ));
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn gaussian_second_moment_matches_covariance_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let body = "\
b = 1.0
pi_shape = 1.5
pi_rate = 1.0
count = 4
n_paths = 4000
q_values = [1.0, 2.0]
seed = 3
";
    let cfg = write_config(dir.path(), "g.toml", body);
    let o = supou(&["simulate", "--config", s(&cfg), "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    for r in csv_rows(&dir.path().join("moments.csv")) {
        if &r[1] != "2" {
            continue;
        }
        let t: f64 = r[0].parse().unwrap();
        let (m, se): (f64, f64) = (r[2].parse().unwrap(), r[3].parse().unwrap());
        // Var X*(t) = 2 · (b/2) ∫₀ᵗ (t − u) E e^{−ξu} du
        let want = quadrature::integrate(|u| (t - u) * (1.0 + u).powf(-1.5), 0.0, t, 1e-12);
        assert!((m - want).abs() <= 4.0 * se, "t = {t}: {m} ± {se} vs {want}");
    }
}

#[test]
fn estimate_round_trips_theory_moments() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = CASE_B.to_string();
    body.push_str("count = 13\n");
    let cfg_path = write_config(dir.path(), "b.toml", &body);
    let cfg: ExperimentConfig = load_config(&cfg_path).unwrap();
    let theory = tau_total(&cfg.quadruple().unwrap()).unwrap();
    let qs: Vec<f64> = (1..=17).map(|k| 0.1 * k as f64).collect();
    let table = MomentTable::from_fn(&cfg.grid().unwrap(), &qs, |t, q| {
        t.powf(theory.value(q).unwrap())
    });
    write_moments_csv(&table, &dir.path().join("moments.csv")).unwrap();
    write_batches_csv(&table, &dir.path().join("moment_batches.csv")).unwrap();
    let o = supou(&["estimate", "--config", s(&cfg_path), "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = stdout(&o);
    assert!(report.contains("overall: pass"), "{report}");
    assert!(report.contains("breakpoint detected at q = 1.4"), "{report}");
    assert_eq!(fs::read_to_string(dir.path().join("report.txt")).unwrap().trim(), report.trim());
}

#[test]
fn estimate_errors() {
    let dir = tempfile::tempdir().unwrap();
    let narrow = write_config(
        dir.path(),
        "narrow.toml",
        &format!("{CASE_B}count = 6\nwindow_frac = 0.9\n"),
    );
    let cfg = load_config(&narrow).unwrap();
    let table = MomentTable::from_fn(&cfg.grid().unwrap(), &[0.5, 1.0], |t, q| t.powf(q));
    write_moments_csv(&table, &dir.path().join("moments.csv")).unwrap();
    let o = supou(&["estimate", "--config", s(&narrow), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("window"), "{}", stderr(&o));

    // q beyond the tail index of the configured quadruple
    let table = MomentTable::from_fn(&cfg.grid().unwrap(), &[0.5, 1.9], |t, q| t.powf(q));
    write_moments_csv(&table, &dir.path().join("moments.csv")).unwrap();
    let ok = write_config(dir.path(), "ok.toml", &format!("{CASE_B}count = 6\n"));
    let o = supou(&["estimate", "--config", s(&ok), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));

    fs::write(dir.path().join("moments.csv"), "t,q\n1,oops\n").unwrap();
    let o = supou(&["estimate", "--config", s(&ok), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(3));
}

fn repo_config(panel: char) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../configs/panel_{panel}.toml"))
}

#[test]
fn figure_emits_six_panels() {
    let dir = tempfile::tempdir().unwrap();
    // Point every panel at an empty output directory so only theory is emitted.
    let mut args = vec!["figure".to_string()];
    for p in "abcdef".chars() {
        let text = fs::read_to_string(repo_config(p)).unwrap();
        let text: String = text
            .lines()
            .filter(|l| !l.starts_with("output_dir"))
            .map(|l| format!("{l}\n"))
            .collect::<String>()
            + &format!("output_dir = \"{}\"\n", dir.path().join(format!("runs_{p}")).display());
        let cfg = write_config(dir.path(), &format!("{p}.toml"), &text);
        args.push("--config".into());
        args.push(cfg.display().to_string());
    }
    let fig = dir.path().join("fig");
    args.push("--out".into());
    args.push(fig.display().to_string());
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    let o = supou(&argv);
    assert!(o.status.success(), "{}", stderr(&o));
    for p in "abcdef".chars() {
        let rows = csv_rows(&fig.join(format!("panel_{p}.csv")));
        assert!(rows.len() > 90);
        assert!(rows.iter().all(|r| r[2].is_empty() && r[3].is_empty()));
    }
    let index: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fig.join("figure_index.json")).unwrap()).unwrap();
    assert_eq!(index["panels"].as_object().unwrap().len(), 6);

    // Panel (b) kinks at 1 + α = 1.4: slope 1/1.4 below, 1 above.
    let pts: Vec<(f64, f64)> = csv_rows(&fig.join("panel_b.csv"))
        .iter()
        .map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap()))
        .collect();
    let slope = |a: &(f64, f64), b: &(f64, f64)| (b.1 - a.1) / (b.0 - a.0);
    let k = pts.iter().position(|p| p.0 == 1.4).unwrap();
    assert!((slope(&pts[k - 1], &pts[k]) - 1.0 / 1.4).abs() < 1e-9);
    assert!((slope(&pts[k], &pts[k + 1]) - 1.0).abs() < 1e-9);

    let o = supou(&argv[..argv.len() - 4]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing panel configs: (f)"), "{}", stderr(&o));
}
