//! Ensemble moments, empirical scaling functions and comparison with theory.
//!
//! Paths are assigned to batches by `path_index mod B`. Each batch keeps
//! Welford `(count, mean, M2)` triples per `(t, q)` cell and folds its paths
//! in ascending path order; batches are merged in batch order. Summation is
//! therefore order-fixed: the table depends only on the set of paths and `B`,
//! not on how many workers produced them.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{PathSample, Simulator, TimeGrid};
use crate::theory::{ScalingFunction, SegmentKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Mean over all paths.
    #[default]
    Mean,
    /// Median of the per-batch means.
    MedianOfBatches,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn merge(&mut self, o: &Welford) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *o;
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n as f64 / n as f64;
        self.m2 += o.m2 + d * d * (self.n as f64 * o.n as f64) / n as f64;
        self.n = n;
    }

    fn se(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt()
        }
    }
}

/// Running statistics of one batch, cells indexed `j * n_q + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchState {
    cells: Vec<Welford>,
}

/// Single-pass accumulator of `|X*(t_j)|^{q_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    grid: TimeGrid,
    times: Vec<f64>,
    q_values: Vec<f64>,
    batches: Vec<BatchState>,
}

fn check_q_values(q_values: &[f64], domain_hi: f64) -> Result<()> {
    if q_values.is_empty() {
        return Err(Error::InvalidParameter("q grid is empty".into()));
    }
    for &q in q_values {
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::InvalidParameter(format!("q must be positive, got {q}")));
        }
        if q >= domain_hi {
            return Err(Error::InfiniteMoment {
                q,
                gamma: domain_hi,
            });
        }
    }
    if q_values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("q grid must be strictly increasing".into()));
    }
    Ok(())
}

impl MomentAccumulator {
    /// `domain_hi` is the moment bound of the model (γ, or ∞ without big
    /// jumps); any `q ≥ domain_hi` is rejected.
    pub fn new(grid: &TimeGrid, q_values: &[f64], batching: usize, domain_hi: f64) -> Result<Self> {
        check_q_values(q_values, domain_hi)?;
        if batching == 0 {
            return Err(Error::InvalidParameter("batching must be at least 1".into()));
        }
        let n_cells = grid.count * q_values.len();
        Ok(Self {
            grid: *grid,
            times: grid.values(),
            q_values: q_values.to_vec(),
            batches: vec![
                BatchState {
                    cells: vec![Welford::default(); n_cells],
                };
                batching
            ],
        })
    }

    pub fn batching(&self) -> usize {
        self.batches.len()
    }

    fn empty_batch(&self) -> BatchState {
        BatchState {
            cells: vec![Welford::default(); self.times.len() * self.q_values.len()],
        }
    }

    fn push_into(q_values: &[f64], batch: &mut BatchState, xstar: &[f64]) {
        let nq = q_values.len();
        for (j, x) in xstar.iter().enumerate() {
            let a = x.abs();
            for (i, &q) in q_values.iter().enumerate() {
                batch.cells[j * nq + i].push(a.powf(q));
            }
        }
    }

    /// Add one path to batch `path_index mod B`.
    pub fn push(&mut self, path: &PathSample) {
        assert_eq!(path.xstar.len(), self.times.len(), "path grid mismatch");
        let b = (path.path_index() % self.batches.len() as u64) as usize;
        Self::push_into(&self.q_values, &mut self.batches[b], &path.xstar);
    }

    /// Batch-wise merge; `other` must use the same grid, q values and batching.
    pub fn merge(&mut self, other: &MomentAccumulator) {
        assert_eq!(self.q_values, other.q_values);
        assert_eq!(self.batches.len(), other.batches.len());
        for (a, b) in self.batches.iter_mut().zip(&other.batches) {
            for (x, y) in a.cells.iter_mut().zip(&b.cells) {
                x.merge(y);
            }
        }
    }

    pub fn finish(self) -> MomentTable {
        let (nt, nq) = (self.times.len(), self.q_values.len());
        let mut total = vec![Welford::default(); nt * nq];
        for b in &self.batches {
            for (t, c) in total.iter_mut().zip(&b.cells) {
                t.merge(c);
            }
        }
        let grid2 = |f: &dyn Fn(usize) -> f64| -> Vec<Vec<f64>> {
            (0..nt).map(|j| (0..nq).map(|i| f(j * nq + i)).collect()).collect()
        };
        let filled: Vec<&BatchState> = self.batches.iter().filter(|b| b.cells[0].n > 0).collect();
        let batches: Vec<BatchMoments> = filled
            .iter()
            .map(|b| BatchMoments {
                n: b.cells[0].n,
                mean: grid2(&|k| b.cells[k].mean),
            })
            .collect();
        let batch_medians = grid2(&|k| median(filled.iter().map(|b| b.cells[k].mean).collect()));
        MomentTable {
            grid: self.grid,
            times: self.times,
            q_values: self.q_values,
            m: grid2(&|k| total[k].mean),
            se: grid2(&|k| total[k].se()),
            n_paths: total.first().map_or(0, |w| w.n),
            batch_medians: Some(batch_medians),
            batches,
        }
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Mean of one batch in every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMoments {
    pub n: u64,
    /// `mean[j][i]`.
    pub mean: Vec<Vec<f64>>,
}

/// Ensemble moments `m[j][i] ≈ E|X*(t_j)|^{q_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTable {
    pub grid: TimeGrid,
    pub times: Vec<f64>,
    pub q_values: Vec<f64>,
    pub m: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
    pub n_paths: u64,
    pub batch_medians: Option<Vec<Vec<f64>>>,
    /// Nonempty batches in batch order.
    pub batches: Vec<BatchMoments>,
}

impl MomentTable {
    /// Table with `m[j][i] = f(t_j, q_i)` and no sampling error.
    pub fn from_fn(grid: &TimeGrid, q_values: &[f64], f: impl Fn(f64, f64) -> f64) -> Self {
        let times = grid.values();
        let m: Vec<Vec<f64>> = times
            .iter()
            .map(|&t| q_values.iter().map(|&q| f(t, q)).collect())
            .collect();
        Self {
            grid: *grid,
            se: vec![vec![0.0; q_values.len()]; times.len()],
            times,
            q_values: q_values.to_vec(),
            batch_medians: Some(m.clone()),
            m,
            n_paths: 0,
            batches: Vec::new(),
        }
    }

    /// Cells `(j, i)` where `m^{1/q}` decreases from `q_{i−1}` to `q_i`.
    pub fn lyapunov_violations(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (j, row) in self.m.iter().enumerate() {
            for i in 1..row.len() {
                let lo = row[i - 1].ln() / self.q_values[i - 1];
                let hi = row[i].ln() / self.q_values[i];
                if hi < lo - 1e-9 * lo.abs().max(1.0) {
                    out.push((j, i));
                }
            }
        }
        out
    }

    /// Cells `(j, i)` where the divided differences of `q ↦ log m` decrease
    /// by more than `tol`.
    pub fn log_convexity_violations(&self, tol: f64) -> Vec<(usize, usize)> {
        let q = &self.q_values;
        let mut out = Vec::new();
        for (j, row) in self.m.iter().enumerate() {
            for i in 1..row.len().saturating_sub(1) {
                let d0 = (row[i].ln() - row[i - 1].ln()) / (q[i] - q[i - 1]);
                let d1 = (row[i + 1].ln() - row[i].ln()) / (q[i + 1] - q[i]);
                if d1 < d0 - tol {
                    out.push((j, i));
                }
            }
        }
        out
    }

    fn cells(&self, estimator: Estimator) -> &Vec<Vec<f64>> {
        match (estimator, &self.batch_medians) {
            (Estimator::MedianOfBatches, Some(b)) => b,
            _ => &self.m,
        }
    }
}

/// Accumulate a stream of paths sequentially.
pub fn accumulate_moments(
    paths: impl IntoIterator<Item = PathSample>,
    q_values: &[f64],
    batching: usize,
    domain_hi: f64,
) -> Result<MomentTable> {
    let mut iter = paths.into_iter().peekable();
    let first = iter
        .peek()
        .ok_or_else(|| Error::InvalidParameter("no paths to accumulate".into()))?;
    let mut acc = MomentAccumulator::new(&first.grid, q_values, batching, domain_hi)?;
    for p in iter {
        acc.push(&p);
    }
    Ok(acc.finish())
}

/// Accumulate paths `0..n_paths` produced by `path_fn` on `workers` threads.
///
/// Batch `b` receives paths `b, b + B, b + 2B, …` in that order and is
/// processed by a single task, so the table is identical for any `workers`.
#[allow(clippy::too_many_arguments)]
pub fn accumulate_with<F>(
    grid: &TimeGrid,
    n_paths: u64,
    q_values: &[f64],
    batching: usize,
    domain_hi: f64,
    workers: usize,
    path_fn: F,
) -> Result<MomentTable>
where
    F: Fn(u64) -> Vec<f64> + Sync,
{
    let mut acc = MomentAccumulator::new(grid, q_values, batching, domain_hi)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let b_count = batching as u64;
    let template = acc.empty_batch();
    let qs = acc.q_values.clone();
    let batches: Vec<BatchState> = pool.install(|| {
        (0..b_count)
            .into_par_iter()
            .map(|b| {
                let mut state = template.clone();
                let mut j = b;
                while j < n_paths {
                    let x = path_fn(j);
                    MomentAccumulator::push_into(&qs, &mut state, &x);
                    j += b_count;
                }
                state
            })
            .collect()
    });
    acc.batches = batches;
    Ok(acc.finish())
}

/// Simulate and accumulate an ensemble in parallel.
pub fn accumulate_ensemble(
    sim: &Simulator,
    n_paths: u64,
    q_values: &[f64],
    batching: usize,
    domain_hi: f64,
    workers: usize,
) -> Result<MomentTable> {
    accumulate_with(
        sim.grid(),
        n_paths,
        q_values,
        batching,
        domain_hi,
        workers,
        |j| sim.path(j).xstar,
    )
}

/// Inclusive index range of grid times used in the regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitWindow {
    pub j_min: usize,
    pub j_max: usize,
}

impl FitWindow {
    /// Drop the smallest `floor(count · frac)` grid times.
    pub fn drop_fraction(count: usize, frac: f64) -> Self {
        let j_min = (count as f64 * frac).floor() as usize;
        Self {
            j_min,
            j_max: count.saturating_sub(1),
        }
    }

    fn check(&self, count: usize) -> Result<()> {
        if self.j_max >= count || self.j_min > self.j_max || self.j_max - self.j_min + 1 < 4 {
            return Err(Error::DegenerateWindow(format!(
                "window [{}, {}] on a grid of {count} times; need at least 4 points",
                self.j_min, self.j_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub estimator: Estimator,
    pub bootstrap_reps: usize,
    pub bootstrap_seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            estimator: Estimator::Mean,
            bootstrap_reps: 200,
            bootstrap_seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub q_break: f64,
    pub slope_lo: f64,
    pub slope_hi: f64,
}

/// Empirical scaling function.
#[derive(Debug, Clone, PartialEq)]
pub struct TauEstimate {
    pub q_values: Vec<f64>,
    pub tau_hat: Vec<f64>,
    pub stderr: Vec<f64>,
    pub fit_window: (usize, usize),
    pub estimator: Estimator,
    pub breakpoint: Option<Breakpoint>,
}

impl TauEstimate {
    pub fn at(&self, q: f64) -> Option<(f64, f64)> {
        self.q_values
            .iter()
            .position(|&x| (x - q).abs() < 1e-12)
            .map(|i| (self.tau_hat[i], self.stderr[i]))
    }
}

/// OLS slope and the weights `w_j` with `slope = Σ w_j y_j`.
fn ols_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    x.iter().map(|v| (v - mx) / sxx).collect()
}

fn slopes(w: &[f64], cells: &[Vec<f64>], j_min: usize, nq: usize) -> Vec<f64> {
    (0..nq)
        .map(|i| {
            w.iter()
                .enumerate()
                .map(|(k, wk)| wk * cells[j_min + k][i].ln())
                .sum()
        })
        .collect()
}

/// Log-log regression slope of the moments over the window, per q.
///
/// Standard errors come from resampling batches with replacement when the
/// table has at least two batches, otherwise from the delta method on the
/// per-cell standard errors.
pub fn fit_tau(table: &MomentTable, window: FitWindow, opts: &FitOptions) -> Result<TauEstimate> {
    window.check(table.times.len())?;
    let cells = table.cells(opts.estimator);
    let nq = table.q_values.len();
    for j in window.j_min..=window.j_max {
        for i in 0..nq {
            if !(cells[j][i] > 0.0 && cells[j][i].is_finite()) {
                return Err(Error::NonPositiveMoment {
                    t: table.times[j],
                    q: table.q_values[i],
                });
            }
        }
    }
    let x: Vec<f64> = table.times[window.j_min..=window.j_max]
        .iter()
        .map(|t| t.ln())
        .collect();
    let w = ols_weights(&x);
    let tau_hat = slopes(&w, cells, window.j_min, nq);

    let stderr = if table.batches.len() >= 2 && opts.bootstrap_reps >= 2 {
        bootstrap_se(table, &w, window.j_min, opts)
    } else {
        (0..nq)
            .map(|i| {
                w.iter()
                    .enumerate()
                    .map(|(k, wk)| {
                        let j = window.j_min + k;
                        (wk * table.se[j][i] / table.m[j][i]).powi(2)
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    };
    Ok(TauEstimate {
        q_values: table.q_values.clone(),
        tau_hat,
        stderr,
        fit_window: (window.j_min, window.j_max),
        estimator: opts.estimator,
        breakpoint: None,
    })
}

fn bootstrap_se(table: &MomentTable, w: &[f64], j_min: usize, opts: &FitOptions) -> Vec<f64> {
    let nq = table.q_values.len();
    let nb = table.batches.len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.bootstrap_seed);
    let mut acc = vec![Welford::default(); nq];
    let mut cells = vec![vec![0.0; nq]; w.len() + j_min];
    for _ in 0..opts.bootstrap_reps {
        let pick: Vec<usize> = (0..nb).map(|_| rng.random_range(0..nb)).collect();
        for (k, _) in w.iter().enumerate() {
            let j = j_min + k;
            for i in 0..nq {
                cells[j][i] = match opts.estimator {
                    Estimator::Mean => {
                        let (mut s, mut n) = (0.0, 0.0);
                        for &b in &pick {
                            let bm = &table.batches[b];
                            s += bm.n as f64 * bm.mean[j][i];
                            n += bm.n as f64;
                        }
                        s / n
                    }
                    Estimator::MedianOfBatches => {
                        median(pick.iter().map(|&b| table.batches[b].mean[j][i]).collect())
                    }
                };
            }
        }
        for (a, s) in acc.iter_mut().zip(slopes(w, &cells, j_min, nq)) {
            a.push(s);
        }
    }
    acc.iter()
        .map(|a| (a.m2 / (a.n - 1) as f64).sqrt())
        .collect()
}

/// Best continuous two-segment fit with the break at an interior q point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoSegmentFit {
    pub q_break: f64,
    pub slope_lo: f64,
    pub slope_hi: f64,
    pub intercept: f64,
    /// Residual sum of squares of the single straight line.
    pub rss_one: f64,
    pub rss_two: f64,
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for c in 0..3 {
        let p = (c..3).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..3 {
            let f = a[r][c] / a[c][c];
            for k in c..3 {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = [0.0; 3];
    for c in (0..3).rev() {
        let s: f64 = (c + 1..3).map(|k| a[c][k] * x[k]).sum();
        x[c] = (b[c] - s) / a[c][c];
    }
    Some(x)
}

fn least_squares<const P: usize>(rows: &[[f64; P]], y: &[f64]) -> Option<([f64; P], f64)> {
    let mut ata = [[0.0; 3]; 3];
    let mut aty = [0.0; 3];
    for (r, &yv) in rows.iter().zip(y) {
        for a in 0..P {
            aty[a] += r[a] * yv;
            for b in 0..P {
                ata[a][b] += r[a] * r[b];
            }
        }
    }
    for d in P..3 {
        ata[d][d] = 1.0;
    }
    let sol = solve3(ata, aty)?;
    let mut coef = [0.0; P];
    coef.copy_from_slice(&sol[..P]);
    let rss = rows
        .iter()
        .zip(y)
        .map(|(r, &yv)| {
            let fit: f64 = r.iter().zip(&coef).map(|(a, c)| a * c).sum();
            (yv - fit).powi(2)
        })
        .sum();
    Some((coef, rss))
}

/// Least-squares two-segment fit over breakpoints `q[1..n−1]`.
pub fn best_two_segment(q: &[f64], y: &[f64]) -> Option<TwoSegmentFit> {
    let n = q.len();
    if n < 4 || y.len() != n {
        return None;
    }
    let line: Vec<[f64; 2]> = q.iter().map(|&v| [1.0, v]).collect();
    let (_, rss_one) = least_squares(&line, y)?;
    let mut best: Option<TwoSegmentFit> = None;
    for &c in &q[1..n - 1] {
        let rows: Vec<[f64; 3]> = q.iter().map(|&v| [1.0, v, (v - c).max(0.0)]).collect();
        let Some((coef, rss)) = least_squares(&rows, y) else {
            continue;
        };
        if best.is_none_or(|b| rss < b.rss_two) {
            best = Some(TwoSegmentFit {
                q_break: c,
                slope_lo: coef[1],
                slope_hi: coef[1] + coef[2],
                intercept: coef[0],
                rss_one,
                rss_two: rss,
            });
        }
    }
    best
}

/// Breakpoint of `q ↦ tau_hat(q)` if the two-segment fit at least halves the
/// residual sum of squares of a single line. Needs at least 8 q points.
pub fn fit_breakpoint(est: &TauEstimate) -> Option<Breakpoint> {
    if est.q_values.len() < 8 {
        return None;
    }
    let fit = best_two_segment(&est.q_values, &est.tau_hat)?;
    let scale: f64 = est.tau_hat.iter().map(|v| v * v).sum::<f64>().max(1.0);
    if fit.rss_one <= 1e-20 * scale || fit.rss_one < 2.0 * fit.rss_two {
        return None;
    }
    Some(Breakpoint {
        q_break: fit.q_break,
        slope_lo: fit.slope_lo,
        slope_hi: fit.slope_hi,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub q: f64,
    pub tau_hat: f64,
    pub se: f64,
    pub tau_theory: Option<f64>,
    pub kind: Option<SegmentKind>,
    /// `tau_hat − tau_theory`.
    pub deviation: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    /// Largest `|deviation|` over rows with an exact theory value.
    pub max_abs_dev: f64,
    pub tolerance: f64,
    pub all_pass: bool,
}

/// Per-q comparison with a theoretical scaling function.
///
/// Exact segments pass when `|tau_hat − τ| ≤ tolerance`; upper-bound segments
/// when `tau_hat ≤ τ + tolerance`. Rows outside the theory's domain fail.
pub fn compare(est: &TauEstimate, theory: &ScalingFunction, tolerance: f64) -> ComparisonReport {
    let mut max_abs_dev: f64 = 0.0;
    let rows: Vec<ComparisonRow> = est
        .q_values
        .iter()
        .zip(&est.tau_hat)
        .zip(&est.stderr)
        .map(|((&q, &tau_hat), &se)| {
            let tau_theory = theory.value(q);
            let kind = theory.kind_at(q);
            let deviation = tau_theory.map(|t| tau_hat - t);
            let pass = match (deviation, kind) {
                (Some(d), Some(SegmentKind::UpperBound)) => d <= tolerance,
                (Some(d), _) => {
                    max_abs_dev = max_abs_dev.max(d.abs());
                    d.abs() <= tolerance
                }
                (None, _) => false,
            };
            ComparisonRow {
                q,
                tau_hat,
                se,
                tau_theory,
                kind,
                deviation,
                pass,
            }
        })
        .collect();
    let all_pass = rows.iter().all(|r| r.pass);
    ComparisonReport {
        rows,
        max_abs_dev,
        tolerance,
        all_pass,
    }
}

/// Human-readable summary of a comparison.
pub fn format_report(
    label: &str,
    est: &TauEstimate,
    report: &ComparisonReport,
    best_fit: Option<&TwoSegmentFit>,
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "case: {label}");
    let _ = writeln!(
        s,
        "estimator: {:?}, fit window j = {}..={}",
        est.estimator, est.fit_window.0, est.fit_window.1
    );
    let _ = writeln!(s, "tolerance: {}", report.tolerance);
    let _ = writeln!(
        s,
        "{:>8} {:>10} {:>9} {:>10} {:>12} {:>10}  result",
        "q", "tau_hat", "se", "theory", "kind", "deviation"
    );
    for r in &report.rows {
        let th = r.tau_theory.map_or("inf".to_string(), |v| format!("{v:.4}"));
        let kind = r.kind.map_or("-".to_string(), |k| k.to_string());
        let dev = r.deviation.map_or("-".to_string(), |v| format!("{v:+.4}"));
        let _ = writeln!(
            s,
            "{:>8.4} {:>10.4} {:>9.4} {:>10} {:>12} {:>10}  {}",
            r.q,
            r.tau_hat,
            r.se,
            th,
            kind,
            dev,
            if r.pass { "pass" } else { "FAIL" }
        );
    }
    let _ = writeln!(s, "max |deviation| (exact segments): {:.4}", report.max_abs_dev);
    match &est.breakpoint {
        Some(b) => {
            let _ = writeln!(
                s,
                "breakpoint detected at q = {} (slopes {:.4} -> {:.4})",
                b.q_break, b.slope_lo, b.slope_hi
            );
        }
        None => {
            let _ = writeln!(s, "no breakpoint detected");
        }
    }
    if let Some(f) = best_fit {
        let _ = writeln!(
            s,
            "best two-segment fit: q = {}, slopes {:.4} -> {:.4}, RSS {:.3e} vs {:.3e} (one line)",
            f.q_break, f.slope_lo, f.slope_hi, f.rss_two, f.rss_one
        );
    }
    let _ = writeln!(s, "overall: {}", if report.all_pass { "pass" } else { "FAIL" });
    s
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse(format!("{}: {other:?}", path.display())),
    }
}

fn opt_str(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// Columns `t,q,m,se,n,batch_median`, one row per cell in `(t, q)` order.
pub fn write_moments_csv(table: &MomentTable, path: &Path) -> Result<()> {
    let e = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&e)?;
    w.write_record(["t", "q", "m", "se", "n", "batch_median"]).map_err(&e)?;
    for (j, t) in table.times.iter().enumerate() {
        for (i, q) in table.q_values.iter().enumerate() {
            let med = table.batch_medians.as_ref().map(|b| b[j][i]);
            w.write_record([
                t.to_string(),
                q.to_string(),
                table.m[j][i].to_string(),
                table.se[j][i].to_string(),
                table.n_paths.to_string(),
                opt_str(med),
            ])
            .map_err(&e)?;
        }
    }
    w.flush().map_err(|x| Error::io(path, x))
}

/// Columns `batch,n,t,q,mean`: per-batch cell means used for resampling.
pub fn write_batches_csv(table: &MomentTable, path: &Path) -> Result<()> {
    let e = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&e)?;
    w.write_record(["batch", "n", "t", "q", "mean"]).map_err(&e)?;
    for (b, bm) in table.batches.iter().enumerate() {
        for (j, t) in table.times.iter().enumerate() {
            for (i, q) in table.q_values.iter().enumerate() {
                w.write_record([
                    b.to_string(),
                    bm.n.to_string(),
                    t.to_string(),
                    q.to_string(),
                    bm.mean[j][i].to_string(),
                ])
                .map_err(&e)?;
            }
        }
    }
    w.flush().map_err(|x| Error::io(path, x))
}

#[derive(Debug, Deserialize)]
struct MomentRow {
    t: f64,
    q: f64,
    m: f64,
    se: f64,
    n: u64,
    batch_median: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct BatchRow {
    batch: usize,
    n: u64,
    t: f64,
    q: f64,
    mean: f64,
}

fn distinct(xs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for x in xs {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

/// Read a moments file and, if given, the matching batches file.
pub fn read_moments_csv(path: &Path, batches: Option<&Path>) -> Result<MomentTable> {
    let e = csv_err(path);
    let mut r = csv::Reader::from_path(path).map_err(&e)?;
    let rows: Vec<MomentRow> = r
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(&e)?;
    let times = distinct(rows.iter().map(|r| r.t));
    let q_values = distinct(rows.iter().map(|r| r.q));
    let (nt, nq) = (times.len(), q_values.len());
    let bad = |msg: &str| Error::Parse(format!("{}: {msg}", path.display()));
    if nt < 4 || rows.len() != nt * nq {
        return Err(bad("expected a full (t, q) grid with at least 4 times"));
    }
    let mut m = vec![vec![0.0; nq]; nt];
    let mut se = vec![vec![0.0; nq]; nt];
    let mut med = vec![vec![0.0; nq]; nt];
    let mut has_med = true;
    for (k, row) in rows.iter().enumerate() {
        let (j, i) = (k / nq, k % nq);
        if row.t != times[j] || row.q != q_values[i] {
            return Err(bad("rows must be ordered by t, then q"));
        }
        m[j][i] = row.m;
        se[j][i] = row.se;
        match row.batch_median {
            Some(v) => med[j][i] = v,
            None => has_med = false,
        }
    }
    let grid = TimeGrid::new(times[0], times[1] / times[0], nt).map_err(|_| bad("invalid time grid"))?;
    let batch_moments = match batches {
        Some(bp) => read_batches(bp, &times, &q_values)?,
        None => Vec::new(),
    };
    Ok(MomentTable {
        grid,
        times,
        q_values,
        m,
        se,
        n_paths: rows[0].n,
        batch_medians: has_med.then_some(med),
        batches: batch_moments,
    })
}

fn read_batches(path: &Path, times: &[f64], q_values: &[f64]) -> Result<Vec<BatchMoments>> {
    let e = csv_err(path);
    let mut r = csv::Reader::from_path(path).map_err(&e)?;
    let (nt, nq) = (times.len(), q_values.len());
    let mut out: Vec<BatchMoments> = Vec::new();
    for (k, row) in r.deserialize::<BatchRow>().enumerate() {
        let row = row.map_err(&e)?;
        let cell = k % (nt * nq);
        let (j, i) = (cell / nq, cell % nq);
        if row.batch != k / (nt * nq) || row.t != times[j] || row.q != q_values[i] {
            return Err(Error::Parse(format!(
                "{}: batch rows do not match the moments grid",
                path.display()
            )));
        }
        if cell == 0 {
            out.push(BatchMoments {
                n: row.n,
                mean: vec![vec![0.0; nq]; nt],
            });
        }
        out.last_mut().expect("pushed above").mean[j][i] = row.mean;
    }
    Ok(out)
}

/// Columns `q,tau_hat,se,tau_theory,theory_kind,pass`.
pub fn write_tau_csv(report: &ComparisonReport, path: &Path) -> Result<()> {
    let e = csv_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&e)?;
    w.write_record(["q", "tau_hat", "se", "tau_theory", "theory_kind", "pass"])
        .map_err(&e)?;
    for r in &report.rows {
        w.write_record([
            r.q.to_string(),
            r.tau_hat.to_string(),
            r.se.to_string(),
            opt_str(r.tau_theory),
            r.kind.map_or(String::new(), |k| k.to_string()),
            r.pass.to_string(),
        ])
        .map_err(&e)?;
    }
    w.flush().map_err(|x| Error::io(path, x))
}

/// One row of a tau file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct TauRow {
    pub q: f64,
    pub tau_hat: f64,
    pub se: f64,
    pub tau_theory: Option<f64>,
    pub theory_kind: Option<String>,
    pub pass: bool,
}

pub fn read_tau_csv(path: &Path) -> Result<Vec<TauRow>> {
    let e = csv_err(path);
    let mut r = csv::Reader::from_path(path).map_err(&e)?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(&e)
}
