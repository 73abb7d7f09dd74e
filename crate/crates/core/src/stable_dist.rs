//! Stable laws, heavy-tailed jump sizes and the rate-mixing measure π.
//!
//! Stable laws use the cumulant convention
//!
//! ```text
//! κ(ζ) = icζ − σ^γ |ζ|^γ (1 − iρ sign(ζ) χ(ζ, γ)),
//! χ(ζ, γ) = tan(πγ/2)        for γ ≠ 1,
//!         = (π/2) log|ζ|     for γ = 1,
//! ```
//!
//! which coincides with the `S_γ(σ, ρ, c)` parameterization of
//! Samorodnitsky and Taqqu. For γ = 1 only the symmetric case ρ = 0 is
//! supported.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, Open01};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{Error, Result};

/// Parameters `(γ, σ, ρ, c)` of a stable law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableParams {
    /// Stability index γ ∈ (0, 2).
    pub gamma_idx: f64,
    /// Scale σ > 0.
    pub sigma: f64,
    /// Skewness ρ ∈ [−1, 1].
    pub rho: f64,
    /// Location.
    pub c: f64,
}

impl StableParams {
    pub fn new(gamma_idx: f64, sigma: f64, rho: f64, c: f64) -> Result<Self> {
        if !(gamma_idx > 0.0 && gamma_idx < 2.0) {
            return Err(Error::InvalidParameter(format!(
                "stability index must lie in (0, 2), got {gamma_idx}"
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "stable scale must be positive, got {sigma}"
            )));
        }
        if !(-1.0..=1.0).contains(&rho) {
            return Err(Error::InvalidParameter(format!(
                "stable skewness must lie in [-1, 1], got {rho}"
            )));
        }
        if gamma_idx == 1.0 && rho != 0.0 {
            return Err(Error::InvalidParameter(
                "γ = 1 requires ρ = 0 (strictly stable convention)".into(),
            ));
        }
        if !c.is_finite() {
            return Err(Error::InvalidParameter("stable location must be finite".into()));
        }
        Ok(Self {
            gamma_idx,
            sigma,
            rho,
            c,
        })
    }

    /// Symmetric strictly stable law with unit scale.
    pub fn standard_symmetric(gamma_idx: f64) -> Result<Self> {
        Self::new(gamma_idx, 1.0, 0.0, 0.0)
    }
}

/// Tail weights `p, q` and the constant slowly varying factor `k` in
/// `P(X > x) ~ p k x^{-γ}`, `P(X ≤ -x) ~ q k x^{-γ}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailWeights {
    pub p_w: f64,
    pub q_w: f64,
    pub k_const: f64,
}

impl TailWeights {
    pub fn new(p_w: f64, q_w: f64, k_const: f64) -> Result<Self> {
        if !(p_w >= 0.0 && q_w >= 0.0 && p_w + q_w > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tail weights must be nonnegative with positive sum, got p={p_w}, q={q_w}"
            )));
        }
        if !(k_const > 0.0 && k_const.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "slowly varying constant must be positive, got {k_const}"
            )));
        }
        Ok(Self { p_w, q_w, k_const })
    }
}

/// Gamma law used for the rate-mixing measure π.
///
/// The density behaves like `const · ξ^{shape-1}` at the origin, so `shape`
/// plays the role of the memory exponent α, and the mean `shape / rate` is
/// finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiGamma {
    pub shape: f64,
    pub rate: f64,
}

impl PiGamma {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite() && rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "π needs positive shape and rate, got shape={shape}, rate={rate}"
            )));
        }
        Ok(Self { shape, rate })
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    /// `∫ ξ^p π(dξ) = Γ(α + p) rate^{-p} / Γ(α)`, finite for `p > −α`.
    pub fn moment(&self, p: f64) -> Option<f64> {
        if self.shape + p <= 0.0 {
            return None;
        }
        Some((ln_gamma(self.shape + p) - ln_gamma(self.shape) - p * self.rate.ln()).exp())
    }

    /// The size-biased law `ξ π(dξ) / E ξ`, again a Gamma law.
    pub fn size_biased(&self) -> PiGamma {
        PiGamma {
            shape: self.shape + 1.0,
            rate: self.rate,
        }
    }

    pub(crate) fn distribution(&self) -> Gamma<f64> {
        Gamma::new(self.shape, 1.0 / self.rate).expect("validated Gamma parameters")
    }
}

/// Cumulant `log E e^{iζZ}` of `Z ~ S_γ(σ, ρ, c)`.
pub fn stable_cumulant(params: &StableParams, zeta: f64) -> Complex64 {
    if zeta == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let g = params.gamma_idx;
    let chi = if g == 1.0 {
        FRAC_PI_2 * zeta.abs().ln()
    } else {
        (PI * g / 2.0).tan()
    };
    let mag = params.sigma.powf(g) * zeta.abs().powf(g);
    let skew = Complex64::new(1.0, -params.rho * zeta.signum() * chi);
    Complex64::new(0.0, params.c * zeta) - mag * skew
}

/// Scale and skewness of the stable law whose domain of attraction contains
/// a distribution with tails `p k x^{-γ}` (right) and `q k x^{-γ}` (left).
///
/// `σ = (Γ(2−γ)/(1−γ) · (p+q) k · cos(πγ/2))^{1/γ}`, `ρ = (p−q)/(p+q)`, `c = 0`.
/// At γ = 1 the removable singularity is replaced by its limit `π/2`, and the
/// tails must be balanced.
pub fn sigma_rho_from_tails(gamma_idx: f64, tails: &TailWeights) -> Result<StableParams> {
    if !(gamma_idx > 0.0 && gamma_idx < 2.0) {
        return Err(Error::InvalidParameter(format!(
            "stability index must lie in (0, 2), got {gamma_idx}"
        )));
    }
    let weight = (tails.p_w + tails.q_w) * tails.k_const;
    let factor = if gamma_idx == 1.0 {
        if tails.p_w != tails.q_w {
            return Err(Error::InvalidParameter(
                "γ = 1 requires balanced tails p = q".into(),
            ));
        }
        FRAC_PI_2
    } else {
        gamma(2.0 - gamma_idx) / (1.0 - gamma_idx) * (PI * gamma_idx / 2.0).cos()
    };
    let sigma = (factor * weight).powf(1.0 / gamma_idx);
    let rho = (tails.p_w - tails.q_w) / (tails.p_w + tails.q_w);
    StableParams::new(gamma_idx, sigma, rho, 0.0)
}

/// One draw from `S_γ(σ, ρ, c)` by the Chambers–Mallows–Stuck transform.
pub fn sample_stable<R: Rng + ?Sized>(params: &StableParams, rng: &mut R) -> f64 {
    let g = params.gamma_idx;
    // V uniform on (−π/2, π/2), W standard exponential.
    let u: f64 = rng.sample(Open01);
    let v = PI * (u - 0.5);
    if g == 1.0 {
        return params.sigma * v.tan() + params.c;
    }
    let w: f64 = Exp1.sample(rng);
    let t = params.rho * (PI * g / 2.0).tan();
    let b = t.atan() / g;
    let s = (1.0 + t * t).powf(1.0 / (2.0 * g));
    let arg = g * (v + b);
    let x = s * arg.sin() / v.cos().powf(1.0 / g) * ((v - arg).cos() / w).powf((1.0 - g) / g);
    params.sigma * x + params.c
}

/// One draw from π.
pub fn sample_pi<R: Rng + ?Sized>(pi: &PiGamma, rng: &mut R) -> f64 {
    // Gamma draws with small shape can underflow to zero; ξ must stay positive.
    pi.distribution().sample(rng).max(f64::MIN_POSITIVE)
}

/// Signed Pareto jump with density proportional to `w± γ |x|^{-γ-1}` on `|x| > 1`.
///
/// `P(|X| > x) = x^{-γ}` for `x ≥ 1`, and the sign is positive with
/// probability `w+ / (w+ + w−)`.
pub fn sample_pareto_jump<R: Rng + ?Sized>(
    gamma_idx: f64,
    w_plus: f64,
    w_minus: f64,
    rng: &mut R,
) -> f64 {
    debug_assert!(w_plus + w_minus > 0.0);
    let sign_u: f64 = rng.random();
    let u: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
    let mag = u.powf(-1.0 / gamma_idx);
    if sign_u * (w_plus + w_minus) < w_plus {
        mag
    } else {
        -mag
    }
}
