//! Monte-Carlo simulation of the integrated process on a geometric time grid.
//!
//! The Lévy basis splits into three independent parts. The big-jump and
//! small-jump parts are compound-Poisson fields of atoms `(ξ, s, z)`, and each
//! atom contributes `z · g_t(ξ, s)` to `X*(t)` in closed form, so there is no
//! time discretization. The Gaussian part is approximated by a normalized sum
//! of independent stationary OU processes with rates drawn from π, advanced
//! with their exact joint (value, integral) Gaussian transition.
//!
//! Each path draws from its own counter-based stream, keyed by
//! `(seed, path_index, component)`, so path `j` is the same no matter how
//! paths are scheduled across workers.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate, CharacteristicQuadruple, SmallJumps};
use crate::stable_dist::{sample_pareto_jump, sample_pi, PiGamma};

/// One Poisson atom of the Lévy basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpAtom {
    /// OU decay rate ξ.
    pub rate: f64,
    /// Basis time coordinate s.
    pub pos: f64,
    /// Jump size z.
    pub size: f64,
}

/// `z · ∫₀ᵗ e^{s−ξu} 1{ξu ≥ s} du`, the atom's contribution to `X*(t)`.
pub fn kernel_antiderivative(atom: &JumpAtom, t: f64) -> f64 {
    let JumpAtom { rate, pos, size } = *atom;
    let x = rate * t;
    if pos < 0.0 {
        size * pos.exp() * (-(-x).exp_m1()) / rate
    } else if pos < x {
        size * (-(pos - x).exp_m1()) / rate
    } else {
        0.0
    }
}

/// Geometric grid `t_j = t0 · ratio^j`, `j = 0..count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub ratio: f64,
    pub count: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, ratio: f64, count: usize) -> Result<Self> {
        if !(t0 > 0.0 && t0.is_finite()) {
            return Err(Error::InvalidParameter(format!("t0 must be positive, got {t0}")));
        }
        if !(ratio > 1.0 && ratio.is_finite()) {
            return Err(Error::InvalidParameter(format!("ratio must exceed 1, got {ratio}")));
        }
        if count < 4 {
            return Err(Error::InvalidParameter(format!(
                "time grid needs at least 4 points, got {count}"
            )));
        }
        Ok(Self { t0, ratio, count })
    }

    /// `2^lo, 2^{lo+1}, …, 2^hi`.
    pub fn powers_of_two(lo: i32, hi: i32) -> Result<Self> {
        Self::new(2f64.powi(lo), 2.0, (hi - lo + 1).max(0) as usize)
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.count).map(|j| self.t(j)).collect()
    }

    pub fn t(&self, j: usize) -> f64 {
        self.t0 * self.ratio.powi(j as i32)
    }

    pub fn t_max(&self) -> f64 {
        self.t(self.count - 1)
    }
}

/// Per-component values of one path; absent components are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentPaths {
    pub x1: Option<Vec<f64>>,
    pub x2: Option<Vec<f64>>,
    pub x3: Option<Vec<f64>>,
}

/// `X*(t_j)` for one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub grid: TimeGrid,
    pub xstar: Vec<f64>,
    pub components: Option<ComponentPaths>,
    /// `(seed, path_index)`.
    pub seed_coords: (u64, u64),
}

impl PathSample {
    pub fn path_index(&self) -> u64 {
        self.seed_coords.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Small jumps below this size are replaced by a Gaussian surrogate.
    pub eps_cutoff: f64,
    /// Number of OU processes in the Gaussian mixture.
    pub n_ou: usize,
    /// Truncation of the Poisson field at `s = −burn_in`; `None` picks
    /// [`default_burn_in`].
    pub burn_in: Option<f64>,
    pub keep_components: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            eps_cutoff: 1e-3,
            n_ou: 64,
            burn_in: None,
            keep_components: false,
        }
    }
}

/// `50 + ln(n_paths)`. Atoms at `s < −B` are damped by `e^{−B}`, and the
/// mass of the kernel per unit of `s` is `t`, so the discarded part is at most
/// of order `e^{−B} t` per path.
pub fn default_burn_in(n_paths: u64) -> f64 {
    50.0 + (n_paths.max(1) as f64).ln()
}

const STREAM_X1: u64 = 0;
const STREAM_X2: u64 = 1;
const STREAM_X3: u64 = 2;
const STREAM_X2_SURROGATE: u64 = 3;

/// Generator for component `component` of path `path_index`.
pub fn path_rng(seed: u64, path_index: u64, component: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((path_index << 2) | component);
    rng
}

fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let n: f64 = Poisson::new(mean).expect("finite positive mean").sample(rng);
    n as u64
}

/// Visit the atoms of a Poisson field with size intensity `intensity` per
/// unit of `s`, restricted to `s ∈ (−burn_in, ξ · horizon)`.
///
/// Atoms with `s < 0` have rates from π. The region `0 ≤ s < ξ·horizon` has
/// mass `intensity · horizon · E ξ`; its rates follow the size-biased law and
/// `s` is uniform on `(0, ξ·horizon)`.
fn visit_field<R, F, S>(
    intensity: f64,
    pi: &PiGamma,
    horizon: f64,
    burn_in: f64,
    rng: &mut R,
    mut draw_size: F,
    mut sink: S,
) where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> f64,
    S: FnMut(JumpAtom),
{
    let n_past = poisson_count(intensity * burn_in, rng);
    for _ in 0..n_past {
        let rate = sample_pi(pi, rng);
        let pos = -burn_in * rng.random::<f64>();
        let size = draw_size(rng);
        sink(JumpAtom { rate, pos, size });
    }
    let biased = pi.size_biased();
    let n_now = poisson_count(intensity * horizon * pi.mean(), rng);
    for _ in 0..n_now {
        let rate = sample_pi(&biased, rng);
        let pos = rate * horizon * rng.random::<f64>();
        let size = draw_size(rng);
        sink(JumpAtom { rate, pos, size });
    }
}

fn add_atom(out: &mut [f64], times: &[f64], atom: &JumpAtom) {
    for (o, &t) in out.iter_mut().zip(times) {
        *o += kernel_antiderivative(atom, t);
    }
}

/// Atoms of the big-jump field relevant on `[0, horizon]`.
pub fn gen_big_jump_field<R: Rng + ?Sized>(
    q: &CharacteristicQuadruple,
    horizon: f64,
    burn_in: f64,
    rng: &mut R,
) -> Result<Vec<JumpAtom>> {
    let big = q
        .big_jumps
        .ok_or(Error::ComponentAbsent("big-jump field needs w_plus + w_minus > 0"))?;
    check_horizon(horizon, burn_in)?;
    let mut atoms = Vec::new();
    visit_field(
        big.total_mass(),
        &q.pi,
        horizon,
        burn_in,
        rng,
        |r| sample_pareto_jump(big.gamma_idx, big.w_plus, big.w_minus, r),
        |a| atoms.push(a),
    );
    Ok(atoms)
}

fn check_horizon(horizon: f64, burn_in: f64) -> Result<()> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
    }
    if !(burn_in >= 0.0 && burn_in.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "burn_in must be nonnegative, got {burn_in}"
        )));
    }
    Ok(())
}

/// `X₁*(t_j) = Σ_k z_k g_{t_j}(ξ_k, s_k) + a t_j`.
pub fn simulate_x1_star<R: Rng + ?Sized>(
    q: &CharacteristicQuadruple,
    grid: &TimeGrid,
    burn_in: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let big = q
        .big_jumps
        .ok_or(Error::ComponentAbsent("X1 needs big jumps (w_plus + w_minus > 0)"))?;
    let times = grid.values();
    check_horizon(grid.t_max(), burn_in)?;
    let mut out: Vec<f64> = times.iter().map(|t| q.a * t).collect();
    visit_field(
        big.total_mass(),
        &q.pi,
        grid.t_max(),
        burn_in,
        rng,
        |r| sample_pareto_jump(big.gamma_idx, big.w_plus, big.w_minus, r),
        |a| add_atom(&mut out, &times, &a),
    );
    Ok(out)
}

/// Jump size from the small-jump measure restricted to `ε < |x| ≤ 1`.
fn sample_small_jump<R: Rng + ?Sized>(s: &SmallJumps, eps: f64, rng: &mut R) -> f64 {
    let sign_u: f64 = rng.random();
    let u: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
    let mag = if s.beta_idx == 0.0 {
        u
    } else {
        let b = s.beta_idx;
        (1.0 + u * (eps.powf(-b) - 1.0)).powf(-1.0 / b)
    };
    if sign_u * s.total_weight() < s.c_plus {
        mag
    } else {
        -mag
    }
}

fn check_eps(s: &SmallJumps, eps: f64) -> Result<()> {
    let ok = if s.beta_idx == 0.0 {
        eps > 0.0 && eps <= 1.0
    } else {
        eps > 0.0 && eps < 1.0
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "eps_cutoff must lie in (0, 1) for β > 0 and in (0, 1] for β = 0, got {eps}"
        )))
    }
}

/// `X₂*(t_j)`: compensated compound Poisson jumps with `ε < |z| ≤ 1`, plus a
/// Gaussian supOU surrogate of variance `∫_{|x|<ε} x² μ(dx)` for the rest.
///
/// `rng` drives the jumps, `rng_surrogate` the Gaussian surrogate.
pub fn simulate_x2_star<R: Rng + ?Sized>(
    q: &CharacteristicQuadruple,
    grid: &TimeGrid,
    eps_cutoff: f64,
    n_ou: usize,
    burn_in: f64,
    rng: &mut R,
    rng_surrogate: &mut R,
) -> Result<Vec<f64>> {
    let small = q
        .small_jumps
        .ok_or(Error::ComponentAbsent("X2 needs small jumps (c_plus + c_minus > 0)"))?;
    check_eps(&small, eps_cutoff)?;
    check_horizon(grid.t_max(), burn_in)?;
    let times = grid.values();
    let drift = small.band_signed_mean(eps_cutoff);
    let mut out: Vec<f64> = times.iter().map(|t| -drift * t).collect();
    visit_field(
        small.band_mass(eps_cutoff),
        &q.pi,
        grid.t_max(),
        burn_in,
        rng,
        |r| sample_small_jump(&small, eps_cutoff, r),
        |a| add_atom(&mut out, &times, &a),
    );
    if small.beta_idx > 0.0 {
        let v = small.sub_band_variance(eps_cutoff);
        let g = gaussian_supou(v, &q.pi, &times, n_ou, rng_surrogate)?;
        for (o, x) in out.iter_mut().zip(g.integral) {
            *o += x;
        }
    }
    Ok(out)
}

/// `X₃*(t_j)` from the OU mixture.
pub fn simulate_x3_star<R: Rng + ?Sized>(
    q: &CharacteristicQuadruple,
    grid: &TimeGrid,
    n_ou: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !q.has_gaussian() {
        return Err(Error::ComponentAbsent("X3 needs a Gaussian part (b > 0)"));
    }
    Ok(gaussian_supou(q.b, &q.pi, &grid.values(), n_ou, rng)?.integral)
}

/// Conditional law of `(U(h), ∫₀ʰ U)` given `U(0) = u` for a stationary OU
/// process with rate ξ and stationary variance v.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuStepMoments {
    pub mean_u: f64,
    pub mean_i: f64,
    pub var_u: f64,
    pub cov: f64,
    pub var_i: f64,
}

/// `2x − 3 + 4e^{−x} − e^{−2x}`, by its series for small x.
fn ou_integral_variance_core(x: f64) -> f64 {
    if x < 0.5 {
        ou_core_series(x)
    } else {
        2.0 * x - 3.0 + 4.0 * (-x).exp() - (-2.0 * x).exp()
    }
}

/// `Σ_{k≥3} (−1)^{k+1} 2(2^{k−1} − 2) x^k / k!`
fn ou_core_series(x: f64) -> f64 {
    let mut sum = 0.0;
    let mut term = x * x * x / 6.0; // x^k / k! at k = 3
    let mut pow2 = 4.0; // 2^{k−1}
    for k in 3..60 {
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        sum += sign * 2.0 * (pow2 - 2.0) * term;
        term *= x / (k + 1) as f64;
        pow2 *= 2.0;
        if term * pow2 < 1e-18 * sum.abs() {
            break;
        }
    }
    sum
}

pub fn ou_step_moments(u: f64, xi: f64, h: f64, v: f64) -> OuStepMoments {
    let x = xi * h;
    let decay = (-x).exp();
    let one_minus = -(-x).exp_m1();
    OuStepMoments {
        mean_u: u * decay,
        mean_i: u * one_minus / xi,
        var_u: -v * (-2.0 * x).exp_m1(),
        cov: v * one_minus * one_minus / xi,
        var_i: v * ou_integral_variance_core(x) / (xi * xi),
    }
}

/// Draw `(U(h), ∫₀ʰ U)` from the exact conditional Gaussian law.
pub fn ou_exact_step<R: Rng + ?Sized>(u: f64, xi: f64, h: f64, v: f64, rng: &mut R) -> (f64, f64) {
    let m = ou_step_moments(u, xi, h, v);
    let z1: f64 = StandardNormal.sample(rng);
    let z2: f64 = StandardNormal.sample(rng);
    if m.var_u <= 0.0 {
        return (m.mean_u, m.mean_i + m.var_i.max(0.0).sqrt() * z2);
    }
    let sd_u = m.var_u.sqrt();
    let beta = m.cov / m.var_u;
    let resid = (m.var_i - beta * m.cov).max(0.0);
    (
        m.mean_u + sd_u * z1,
        m.mean_i + beta * sd_u * z1 + resid.sqrt() * z2,
    )
}

/// Values and running integrals of a Gaussian supOU field on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPath {
    /// `X(t_j)`.
    pub value: Vec<f64>,
    /// `∫₀^{t_j} X(u) du`.
    pub integral: Vec<f64>,
}

/// `n^{−1/2} Σ_i U_i` for `n = n_ou` independent stationary OU processes with
/// rates `ξ_i ~ π` and stationary variance `b/2`, so that `Var X(t) = b/2`.
pub fn gaussian_supou<R: Rng + ?Sized>(
    b: f64,
    pi: &PiGamma,
    times: &[f64],
    n_ou: usize,
    rng: &mut R,
) -> Result<GaussianPath> {
    if n_ou == 0 {
        return Err(Error::InvalidParameter("n_ou must be positive".into()));
    }
    let v = b / 2.0;
    let mut value = vec![0.0; times.len()];
    let mut integral = vec![0.0; times.len()];
    for _ in 0..n_ou {
        let xi = sample_pi(pi, rng);
        let z: f64 = StandardNormal.sample(rng);
        let mut u = v.sqrt() * z;
        let (mut t_prev, mut acc) = (0.0, 0.0);
        for (j, &t) in times.iter().enumerate() {
            let (u_next, di) = ou_exact_step(u, xi, t - t_prev, v, rng);
            u = u_next;
            acc += di;
            t_prev = t;
            value[j] += u;
            integral[j] += acc;
        }
    }
    let scale = (n_ou as f64).sqrt().recip();
    value.iter_mut().for_each(|x| *x *= scale);
    integral.iter_mut().for_each(|x| *x *= scale);
    Ok(GaussianPath { value, integral })
}

/// Validated simulation plan for one quadruple.
#[derive(Debug, Clone)]
pub struct Simulator {
    q: CharacteristicQuadruple,
    grid: TimeGrid,
    times: Vec<f64>,
    opts: SimOptions,
    burn_in: f64,
    seed: u64,
}

impl Simulator {
    /// The burn-in default depends on `n_paths`, so paths are reproducible for
    /// a fixed `(seed, n_paths)` or an explicit `burn_in`.
    pub fn new(
        q: &CharacteristicQuadruple,
        grid: &TimeGrid,
        opts: &SimOptions,
        n_paths: u64,
        seed: u64,
    ) -> Result<Self> {
        let v = validate(q);
        if !v.is_empty() {
            return Err(Error::Validation(v));
        }
        let grid = TimeGrid::new(grid.t0, grid.ratio, grid.count)?;
        if let Some(s) = q.small_jumps {
            check_eps(&s, opts.eps_cutoff)?;
        }
        if opts.n_ou == 0 && (q.has_gaussian() || q.small_jumps.is_some_and(|s| s.beta_idx > 0.0))
        {
            return Err(Error::InvalidParameter("n_ou must be positive".into()));
        }
        let burn_in = opts.burn_in.unwrap_or_else(|| default_burn_in(n_paths));
        check_horizon(grid.t_max(), burn_in)?;
        Ok(Self {
            q: *q,
            grid,
            times: grid.values(),
            opts: *opts,
            burn_in,
            seed,
        })
    }

    pub fn burn_in(&self) -> f64 {
        self.burn_in
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn path(&self, path_index: u64) -> PathSample {
        let (q, grid) = (&self.q, &self.grid);
        let rng = |c| path_rng(self.seed, path_index, c);
        let x1 = q.big_jumps.map(|_| {
            simulate_x1_star(q, grid, self.burn_in, &mut rng(STREAM_X1)).expect("validated")
        });
        let x2 = q.small_jumps.map(|_| {
            simulate_x2_star(
                q,
                grid,
                self.opts.eps_cutoff,
                self.opts.n_ou,
                self.burn_in,
                &mut rng(STREAM_X2),
                &mut rng(STREAM_X2_SURROGATE),
            )
            .expect("validated")
        });
        let x3 = q
            .has_gaussian()
            .then(|| simulate_x3_star(q, grid, self.opts.n_ou, &mut rng(STREAM_X3)).expect("validated"));
        let mut xstar = vec![0.0; self.times.len()];
        for part in [&x1, &x2, &x3].into_iter().flatten() {
            for (s, v) in xstar.iter_mut().zip(part) {
                *s += v;
            }
        }
        PathSample {
            grid: self.grid,
            xstar,
            components: self.opts.keep_components.then_some(ComponentPaths { x1, x2, x3 }),
            seed_coords: (self.seed, path_index),
        }
    }
}

/// Paths `0..n_paths`, generated lazily.
pub fn simulate_ensemble(
    q: &CharacteristicQuadruple,
    grid: &TimeGrid,
    n_paths: u64,
    opts: &SimOptions,
    seed: u64,
) -> Result<impl Iterator<Item = PathSample>> {
    let sim = Simulator::new(q, grid, opts, n_paths, seed)?;
    Ok((0..n_paths).map(move |j| sim.path(j)))
}

/// Debug dump: one row per `(path, t_j)` with columns
/// `path_index,t,xstar,x1,x2,x3`; absent components are left empty.
pub fn write_paths_csv<W: Write>(
    paths: impl IntoIterator<Item = PathSample>,
    out: W,
) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["path_index", "t", "xstar", "x1", "x2", "x3"])?;
    for p in paths {
        let times = p.grid.values();
        for (j, t) in times.iter().enumerate() {
            let comp = |f: fn(&ComponentPaths) -> &Option<Vec<f64>>| {
                p.components
                    .as_ref()
                    .and_then(|c| f(c).as_ref())
                    .map_or(String::new(), |v| v[j].to_string())
            };
            w.write_record([
                p.path_index().to_string(),
                t.to_string(),
                p.xstar[j].to_string(),
                comp(|c| &c.x1),
                comp(|c| &c.x2),
                comp(|c| &c.x3),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
#[path = "../tests/common/quadrature.rs"]
mod quadrature;
