//! Experiment configuration and the `tau`, `simulate`, `estimate` and
//! `figure` commands.
//!
//! A configuration is a flat TOML document holding the quadruple fields plus
//! grid, simulation and estimation settings. A `manifest.json` written by
//! `simulate` is accepted wherever a configuration is expected.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{
    accumulate_ensemble, best_two_segment, compare, fit_breakpoint, fit_tau, format_report,
    read_moments_csv, read_tau_csv, write_batches_csv, write_moments_csv, write_tau_csv,
    Estimator, FitOptions, FitWindow, MomentTable, TauEstimate,
};
use crate::model::{classify, validate, CharacteristicQuadruple, QuadrupleSpec, TheoremCase};
use crate::sim::{simulate_ensemble, write_paths_csv, SimOptions, Simulator, TimeGrid};
use crate::theory::{limit_params, present_components, tau_total, ScalingFunction};

pub const MOMENTS_FILE: &str = "moments.csv";
pub const BATCHES_FILE: &str = "moment_batches.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TAU_FILE: &str = "tau.csv";
pub const REPORT_FILE: &str = "report.txt";
pub const THEORY_CSV: &str = "tau_theory.csv";
pub const THEORY_JSON: &str = "tau_theory.json";
pub const PATHS_FILE: &str = "paths.csv";

fn d_pi_rate() -> f64 {
    1.0
}
fn d_t0() -> f64 {
    1.0
}
fn d_ratio() -> f64 {
    2.0
}
fn d_count() -> usize {
    11
}
fn d_n_paths() -> u64 {
    1000
}
fn d_q_min() -> f64 {
    0.1
}
fn d_q_count() -> usize {
    16
}
fn d_eps() -> f64 {
    1e-3
}
fn d_n_ou() -> usize {
    64
}
fn d_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn d_window_frac() -> f64 {
    0.25
}
fn d_batching() -> usize {
    32
}
fn d_tolerance() -> f64 {
    0.15
}
fn d_bootstrap_reps() -> usize {
    200
}

/// Flat experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default)]
    pub b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub w_plus: f64,
    #[serde(default)]
    pub w_minus: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default)]
    pub c_plus: f64,
    #[serde(default)]
    pub c_minus: f64,
    pub pi_shape: f64,
    #[serde(default = "d_pi_rate")]
    pub pi_rate: f64,

    #[serde(default = "d_t0")]
    pub t0: f64,
    #[serde(default = "d_ratio")]
    pub ratio: f64,
    #[serde(default = "d_count")]
    pub count: usize,

    #[serde(default = "d_n_paths")]
    pub n_paths: u64,
    /// Explicit q grid; otherwise `q_count` equispaced points on
    /// `[q_min, q_max]`, with `q_max` defaulting to `0.95 γ` (or 3 when all
    /// moments are finite).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_values: Option<Vec<f64>>,
    #[serde(default = "d_q_min")]
    pub q_min: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_max: Option<f64>,
    #[serde(default = "d_q_count")]
    pub q_count: usize,

    #[serde(default = "d_eps")]
    pub eps_cutoff: f64,
    #[serde(default = "d_n_ou")]
    pub n_ou: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,

    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default = "d_output_dir")]
    pub output_dir: PathBuf,

    #[serde(default = "d_window_frac")]
    pub window_frac: f64,
    #[serde(default = "d_batching")]
    pub batching: usize,
    #[serde(default)]
    pub estimator: Estimator,
    #[serde(default = "d_tolerance")]
    pub tolerance: f64,
    #[serde(default = "d_bootstrap_reps")]
    pub bootstrap_reps: usize,
}

impl ExperimentConfig {
    /// Configuration with defaults for everything but the quadruple.
    pub fn from_spec(spec: &QuadrupleSpec) -> Self {
        let mut text = toml::to_string(spec).expect("flat quadruple serializes");
        text.push('\n');
        toml::from_str(&text).expect("defaults fill the remaining fields")
    }

    pub fn spec(&self) -> QuadrupleSpec {
        QuadrupleSpec {
            a: self.a,
            b: self.b,
            gamma: self.gamma,
            w_plus: self.w_plus,
            w_minus: self.w_minus,
            beta: self.beta,
            c_plus: self.c_plus,
            c_minus: self.c_minus,
            pi_shape: self.pi_shape,
            pi_rate: self.pi_rate,
        }
    }

    /// The validated quadruple.
    pub fn quadruple(&self) -> Result<CharacteristicQuadruple> {
        let q = self.spec().to_quadruple()?;
        let v = validate(&q);
        if v.is_empty() {
            Ok(q)
        } else {
            Err(Error::Validation(v))
        }
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.t0, self.ratio, self.count)
    }

    pub fn q_grid(&self, moment_bound: f64) -> Result<Vec<f64>> {
        if let Some(v) = &self.q_values {
            return Ok(v.clone());
        }
        let hi = self.q_max.unwrap_or(if moment_bound.is_finite() {
            0.95 * moment_bound
        } else {
            3.0
        });
        let n = self.q_count;
        if n < 2 || !(hi > self.q_min) {
            return Err(Error::Config(format!(
                "q grid needs q_count ≥ 2 and q_max > q_min, got {n} points on [{}, {hi}]",
                self.q_min
            )));
        }
        Ok((0..n)
            .map(|i| {
                let x = self.q_min + (hi - self.q_min) * i as f64 / (n - 1) as f64;
                (x * 1e12).round() / 1e12
            })
            .collect())
    }

    pub fn sim_options(&self) -> SimOptions {
        SimOptions {
            eps_cutoff: self.eps_cutoff,
            n_ou: self.n_ou,
            burn_in: self.burn_in,
            keep_components: false,
        }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            estimator: self.estimator,
            bootstrap_reps: self.bootstrap_reps,
            bootstrap_seed: self.seed,
        }
    }

    pub fn window(&self) -> FitWindow {
        FitWindow::drop_fraction(self.count, self.window_frac)
    }

    pub fn workers(&self) -> usize {
        self.workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    fn check(&self) -> Result<()> {
        if self.n_paths < 1 {
            return Err(Error::Config("n_paths must be at least 1".into()));
        }
        if self.batching < 1 {
            return Err(Error::Config("batching must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.window_frac) {
            return Err(Error::Config("window_frac must lie in [0, 1)".into()));
        }
        self.grid()?;
        Ok(())
    }
}

/// Record written next to the simulated moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub n_paths: u64,
    pub burn_in: f64,
    pub q_values: Vec<f64>,
    pub config: ExperimentConfig,
}

/// Read a TOML configuration, or the configuration echoed in a manifest.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    let cfg = if is_json {
        serde_json::from_str::<Manifest>(&text)
            .map(|m| m.config)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
    } else {
        toml::from_str::<ExperimentConfig>(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
    };
    cfg.check()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Regime label, or a description of the composition when a jump part is absent.
pub fn case_label(q: &CharacteristicQuadruple) -> Result<String> {
    match classify(q) {
        Ok(l) => Ok(l.to_string()),
        Err(Error::ComponentAbsent(_)) => Ok(tau_total(q)?.label),
        Err(e) => Err(e),
    }
}

/// Dense q grid on the theory's domain, including all breakpoints.
fn theory_grid(f: &ScalingFunction) -> Vec<f64> {
    let hi = if f.domain_hi.is_finite() { f.domain_hi } else { 3.0 };
    let mut q: Vec<f64> = (1..100)
        .map(|k| (hi * k as f64 / 100.0 * 1e12).round() / 1e12)
        .collect();
    if !f.domain_hi.is_finite() {
        q.push(hi);
    }
    q.extend(f.breakpoints().into_iter().filter(|&b| b < hi));
    q.sort_by(f64::total_cmp);
    q.dedup();
    q
}

#[derive(Debug, Serialize)]
struct TheoryRecord {
    label: String,
    total: crate::theory::ScalingRecord,
    components: BTreeMap<String, crate::theory::ScalingRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    limit_law: Option<crate::theory::LimitLawParams>,
}

/// Write `tau_theory.csv` and `tau_theory.json`; returns the case label.
pub fn cmd_tau(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let q = cfg.quadruple()?;
    let total = tau_total(&q)?;
    let parts = present_components(&q)?;
    let label = case_label(&q)?;
    create_dir(out)?;

    let path = out.join(THEORY_CSV);
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Parse(e.to_string()))?;
    let mut header = vec!["q".to_string(), "tau_total".into(), "kind".into()];
    header.extend(parts.iter().map(|(c, _)| format!("tau_{}", c.name().to_lowercase())));
    let rec = |w: &mut csv::Writer<fs::File>, r: Vec<String>| {
        w.write_record(r).map_err(|e| Error::Parse(e.to_string()))
    };
    rec(&mut w, header)?;
    for x in theory_grid(&total) {
        let mut row = vec![
            x.to_string(),
            total.value(x).map_or(String::new(), |v| v.to_string()),
            total.kind_at(x).map_or(String::new(), |k| k.to_string()),
        ];
        row.extend(
            parts
                .iter()
                .map(|(_, f)| f.value(x).map_or(String::new(), |v| v.to_string())),
        );
        rec(&mut w, row)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let record = TheoryRecord {
        label: label.clone(),
        total: total.to_record(),
        components: parts
            .iter()
            .map(|(c, f)| (c.name().to_string(), f.to_record()))
            .collect(),
        limit_law: limit_params(&q).ok(),
    };
    let json = serde_json::to_string_pretty(&record).expect("serializable record");
    write_text(&out.join(THEORY_JSON), &json)?;
    Ok(label)
}

/// Simulate the ensemble and write the moments, batch means and manifest.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path, dump_paths: bool) -> Result<MomentTable> {
    let q = cfg.quadruple()?;
    let grid = cfg.grid()?;
    let q_values = cfg.q_grid(q.moment_bound())?;
    let sim = Simulator::new(&q, &grid, &cfg.sim_options(), cfg.n_paths, cfg.seed)?;
    let table = accumulate_ensemble(
        &sim,
        cfg.n_paths,
        &q_values,
        cfg.batching,
        q.moment_bound(),
        cfg.workers(),
    )?;
    create_dir(out)?;
    write_moments_csv(&table, &out.join(MOMENTS_FILE))?;
    write_batches_csv(&table, &out.join(BATCHES_FILE))?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        n_paths: cfg.n_paths,
        burn_in: sim.burn_in(),
        q_values,
        config: cfg.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("serializable manifest");
    write_text(&out.join(MANIFEST_FILE), &json)?;
    if dump_paths {
        let mut opts = cfg.sim_options();
        opts.keep_components = true;
        let path = out.join(PATHS_FILE);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let paths = simulate_ensemble(&q, &grid, cfg.n_paths, &opts, cfg.seed)?;
        write_paths_csv(paths, std::io::BufWriter::new(file))
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    }
    Ok(table)
}

/// Result of `cmd_estimate`.
#[derive(Debug, Clone)]
pub struct EstimateOutput {
    pub estimate: TauEstimate,
    pub report: crate::estimate::ComparisonReport,
    pub text: String,
}

/// Fit τ̂ to a moments file, compare with theory and write `tau.csv` and
/// `report.txt`.
pub fn cmd_estimate(cfg: &ExperimentConfig, moments: &Path, out: &Path) -> Result<EstimateOutput> {
    let q = cfg.quadruple()?;
    let batches = moments.with_file_name(BATCHES_FILE);
    let table = read_moments_csv(moments, batches.exists().then_some(batches.as_path()))?;
    if let Some(&bad) = table.q_values.iter().find(|&&x| x >= q.moment_bound()) {
        return Err(Error::InfiniteMoment {
            q: bad,
            gamma: q.moment_bound(),
        });
    }
    let window = FitWindow::drop_fraction(table.times.len(), cfg.window_frac);
    let mut est = fit_tau(&table, window, &cfg.fit_options())?;
    est.breakpoint = fit_breakpoint(&est);
    let best = best_two_segment(&est.q_values, &est.tau_hat);
    let theory = tau_total(&q)?;
    let report = compare(&est, &theory, cfg.tolerance);
    let text = format_report(&case_label(&q)?, &est, &report, best.as_ref());
    create_dir(out)?;
    write_tau_csv(&report, &out.join(TAU_FILE))?;
    write_text(&out.join(REPORT_FILE), &text)?;
    Ok(EstimateOutput {
        estimate: est,
        report,
        text,
    })
}

#[derive(Debug, Serialize)]
struct FigureIndex {
    panels: BTreeMap<String, PanelEntry>,
}

#[derive(Debug, Serialize)]
struct PanelEntry {
    file: String,
    case: String,
    empirical: bool,
}

/// One data file per panel (a)–(f) with columns `q,tau_theory,tau_hat,se`.
///
/// Empirical columns are filled from `tau.csv` in the configuration's
/// `output_dir` when present.
pub fn cmd_figure(cfgs: &[ExperimentConfig], out: &Path) -> Result<Vec<PathBuf>> {
    let mut by_panel: BTreeMap<char, &ExperimentConfig> = BTreeMap::new();
    for cfg in cfgs {
        let q = cfg.quadruple()?;
        let panel = classify(&q)?.theorem_case.panel();
        if by_panel.insert(panel, cfg).is_some() {
            return Err(Error::Config(format!("more than one configuration for panel ({panel})")));
        }
    }
    let missing: Vec<String> = TheoremCase::ALL
        .iter()
        .map(|c| c.panel())
        .filter(|p| !by_panel.contains_key(p))
        .map(|p| format!("({p})"))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!("missing panel configs: {}", missing.join(", "))));
    }
    create_dir(out)?;
    let mut files = Vec::new();
    let mut index = FigureIndex {
        panels: BTreeMap::new(),
    };
    for (panel, cfg) in by_panel {
        let q = cfg.quadruple()?;
        let theory = tau_total(&q)?;
        let tau_path = cfg.output_dir.join(TAU_FILE);
        let empirical = if tau_path.exists() {
            read_tau_csv(&tau_path)?
        } else {
            Vec::new()
        };
        let mut rows: Vec<(f64, Option<f64>, Option<f64>)> =
            theory_grid(&theory).into_iter().map(|x| (x, None, None)).collect();
        for r in &empirical {
            rows.push((r.q, Some(r.tau_hat), Some(r.se)));
        }
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        rows.dedup_by(|later, kept| {
            let same = (later.0 - kept.0).abs() < 1e-9;
            if same {
                kept.1 = kept.1.or(later.1);
                kept.2 = kept.2.or(later.2);
            }
            same
        });
        let name = format!("panel_{panel}.csv");
        let path = out.join(&name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Parse(e.to_string()))?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        w.write_record(["q", "tau_theory", "tau_hat", "se"])
            .map_err(|e| Error::Parse(e.to_string()))?;
        for (x, th, se) in rows {
            w.write_record([x.to_string(), opt(theory.value(x)), opt(th), opt(se)])
                .map_err(|e| Error::Parse(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        index.panels.insert(
            panel.to_string(),
            PanelEntry {
                file: name,
                case: case_label(&q)?,
                empirical: !empirical.is_empty(),
            },
        );
        files.push(path);
    }
    let json = serde_json::to_string_pretty(&index).expect("serializable index");
    write_text(&out.join("figure_index.json"), &json)?;
    Ok(files)
}

#[derive(Debug, Parser)]
#[command(name = "supou", version, about = "Moment scaling of integrated supOU processes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Configuration file (TOML, or a manifest.json from `simulate`).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the regime and write the theoretical scaling functions.
    Tau(Common),
    /// Simulate an ensemble and write its moment table.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        /// Number of paths; overrides `n_paths`.
        #[arg(long)]
        paths: Option<u64>,
        /// Also write every simulated path to paths.csv.
        #[arg(long)]
        dump_paths: bool,
    },
    /// Fit the empirical scaling function and compare it with theory.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Moments file; defaults to moments.csv in the output directory.
        #[arg(long)]
        moments: Option<PathBuf>,
    },
    /// Write plot data for panels (a)–(f), one configuration per panel.
    Figure {
        #[arg(long, required = true)]
        config: Vec<PathBuf>,
        #[arg(long, default_value = "figure")]
        out: PathBuf,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = load_config(&common.config)?;
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    let out = cfg.output_dir.clone();
    Ok((cfg, out))
}

/// Run a parsed command; returns the text to print on success.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Tau(common) => {
            let (cfg, out) = load(&common)?;
            cmd_tau(&cfg, &out)
        }
        Command::Simulate {
            common,
            seed,
            workers,
            paths,
            dump_paths,
        } => {
            let (mut cfg, out) = load(&common)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(w) = workers {
                cfg.workers = Some(w);
            }
            if let Some(n) = paths {
                cfg.n_paths = n;
            }
            cfg.check()?;
            let t = cmd_simulate(&cfg, &out, dump_paths)?;
            Ok(format!(
                "simulated {} paths on {} times × {} q values; wrote {}",
                t.n_paths,
                t.times.len(),
                t.q_values.len(),
                out.join(MOMENTS_FILE).display()
            ))
        }
        Command::Estimate { common, moments } => {
            let (cfg, out) = load(&common)?;
            let moments = moments.unwrap_or_else(|| out.join(MOMENTS_FILE));
            Ok(cmd_estimate(&cfg, &moments, &out)?.text)
        }
        Command::Figure { config, out } => {
            let cfgs = config
                .iter()
                .map(|p| load_config(p))
                .collect::<Result<Vec<_>>>()?;
            let files = cmd_figure(&cfgs, &out)?;
            Ok(files
                .iter()
                .map(|f| f.display().to_string())
                .collect::<Vec<_>>()
                .join("\n"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ExperimentConfig {
        toml::from_str(text).unwrap()
    }

    const CASE_B: &str = "gamma = 1.8\nw_plus = 0.5\nw_minus = 0.5\nbeta = 0.3\nc_plus = 0.5\nc_minus = 0.5\npi_shape = 0.4\n";

    #[test]
    fn defaults_and_q_grid() {
        let c = cfg(CASE_B);
        assert_eq!(c.count, 11);
        assert_eq!(c.batching, 32);
        let qs = c.q_grid(1.8).unwrap();
        assert_eq!(qs.len(), 16);
        assert!((qs[15] - 0.95 * 1.8).abs() < 1e-12 && qs[0] == 0.1);
        assert_eq!(cfg(&format!("{CASE_B}q_min = 0.2\nq_max = 1.8\nq_count = 17\n")).q_grid(1.8).unwrap()[14], 1.6);
        assert_eq!(c.q_grid(f64::INFINITY).unwrap()[15], 3.0);
        assert!(toml::from_str::<ExperimentConfig>("pi_shape = 0.5\nunknown = 1\n").is_err());
    }

    #[test]
    fn from_spec_round_trip() {
        let c = cfg(CASE_B);
        let d = ExperimentConfig::from_spec(&c.spec());
        assert_eq!(c, d);
    }

    #[test]
    fn label_for_case_b() {
        let c = cfg(CASE_B);
        let dir = tempfile::tempdir().unwrap();
        let label = cmd_tau(&c, dir.path()).unwrap();
        assert!(label.starts_with("Theorem(b=0) case (b), breakpoint q=1+α"));
        assert!(label.contains("panel (b)"));
        let json = fs::read_to_string(dir.path().join(THEORY_JSON)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["total"]["breakpoints"][0].as_f64().unwrap(), 1.4);
    }

    #[test]
    fn boundary_config_is_rejected() {
        let c = cfg("gamma = 1.5\nw_plus = 1\nw_minus = 1\nbeta = 1.5\nc_plus = 1\nc_minus = 1\npi_shape = 0.5\n");
        let err = cmd_tau(&c, Path::new("/nonexistent")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("β = 1+α excluded"));
    }
}
