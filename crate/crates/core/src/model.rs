//! The characteristic quadruple `(a, b, μ, π)` and its regime classification.
//!
//! The Lévy measure μ is split at `|x| = 1`:
//!
//! - big jumps: density `γ w± |x|^{-γ-1}` on `|x| > 1`, so that
//!   `μ([x, ∞)) = w+ x^{-γ}` for `x ≥ 1` (tail index γ);
//! - small jumps: density `β c± |x|^{-β-1}` on `0 < |x| ≤ 1`, so that
//!   `μ([x, 1]) = c+ (x^{-β} − 1)` (Blumenthal–Getoor index β). For β = 0 the
//!   small-jump part is the finite measure with mass `c+` uniform on `(0, 1]`
//!   and mass `c−` uniform on `[−1, 0)`.
//!
//! π is a Gamma law whose shape is the memory exponent α. Any of the three
//! independent components (big jumps, small jumps, Gaussian part `b`) may be
//! absent, but the regime labels only exist when all jump assumptions hold.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stable_dist::{PiGamma, TailWeights};

/// Absolute tolerance for the excluded boundaries γ = 1+α, β = 1+α,
/// γ = 2/(2−α) and α = 1.
pub const BOUNDARY_TOL: f64 = 1e-9;

/// Pareto big-jump family on `|x| > 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BigJumps {
    pub gamma_idx: f64,
    pub w_plus: f64,
    pub w_minus: f64,
}

impl BigJumps {
    /// `μ₁(ℝ) = w+ + w−`, the Poisson intensity per unit of the basis time coordinate.
    pub fn total_mass(&self) -> f64 {
        self.w_plus + self.w_minus
    }

    /// Marginal tail weights `p = w+/γ`, `q = w−/γ` with `k ≡ 1`.
    ///
    /// The marginal tail of the supOU process is `1/γ` times the tail of μ.
    pub fn tail_weights(&self) -> Result<TailWeights> {
        TailWeights::new(
            self.w_plus / self.gamma_idx,
            self.w_minus / self.gamma_idx,
            1.0,
        )
    }

    /// `∫_{|x|>1} x μ(dx) = γ (w+ − w−)/(γ − 1)` for γ > 1.
    pub fn signed_first_moment(&self) -> Option<f64> {
        (self.gamma_idx > 1.0)
            .then(|| self.gamma_idx * (self.w_plus - self.w_minus) / (self.gamma_idx - 1.0))
    }
}

/// Power-law small-jump family on `0 < |x| ≤ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallJumps {
    pub beta_idx: f64,
    pub c_plus: f64,
    pub c_minus: f64,
}

impl SmallJumps {
    pub fn total_weight(&self) -> f64 {
        self.c_plus + self.c_minus
    }

    pub fn is_symmetric(&self) -> bool {
        self.c_plus == self.c_minus
    }

    /// Mass of `{ε < |x| ≤ 1}`; for β = 0 the whole (finite) measure.
    pub fn band_mass(&self, eps: f64) -> f64 {
        if self.beta_idx == 0.0 {
            self.total_weight()
        } else {
            self.total_weight() * (eps.powf(-self.beta_idx) - 1.0)
        }
    }

    /// `∫_{|x|<ε} x² μ(dx) = (c+ + c−) β ε^{2−β} / (2 − β)`.
    pub fn sub_band_variance(&self, eps: f64) -> f64 {
        let b = self.beta_idx;
        self.total_weight() * b * eps.powf(2.0 - b) / (2.0 - b)
    }

    /// `∫_{ε<|x|≤1} x μ(dx)`, the drift that the compensator removes from the
    /// simulated band.
    pub fn band_signed_mean(&self, eps: f64) -> f64 {
        let b = self.beta_idx;
        let diff = self.c_plus - self.c_minus;
        if b == 0.0 {
            0.5 * diff
        } else if (b - 1.0).abs() < 1e-12 {
            diff * b * (-eps.ln())
        } else {
            diff * b * (1.0 - eps.powf(1.0 - b)) / (1.0 - b)
        }
    }
}

/// The characteristic quadruple of a supOU process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicQuadruple {
    /// Drift of the background driving Lévy process.
    pub a: f64,
    /// Gaussian variance.
    pub b: f64,
    pub big_jumps: Option<BigJumps>,
    pub small_jumps: Option<SmallJumps>,
    pub pi: PiGamma,
}

impl CharacteristicQuadruple {
    /// Memory exponent α (shape of π).
    pub fn alpha(&self) -> f64 {
        self.pi.shape
    }

    pub fn gamma_idx(&self) -> Option<f64> {
        self.big_jumps.map(|j| j.gamma_idx)
    }

    pub fn beta_idx(&self) -> Option<f64> {
        self.small_jumps.map(|j| j.beta_idx)
    }

    /// Upper end `q̄` of the range of finite moments: γ with big jumps, else ∞.
    pub fn moment_bound(&self) -> f64 {
        self.gamma_idx().unwrap_or(f64::INFINITY)
    }

    pub fn has_gaussian(&self) -> bool {
        self.b > 0.0
    }

    /// Whether both jump parts are present, i.e. the heavy-tail and small-jump
    /// hypotheses under which the regime labels are defined.
    pub fn satisfies_jump_hypotheses(&self) -> bool {
        self.big_jumps.is_some() && self.small_jumps.is_some()
    }

    /// Replace `a` by the centering drift.
    pub fn centered(mut self) -> Result<Self> {
        self.a = centering_drift(&self)?;
        Ok(self)
    }
}

/// Which model assumption a violation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssumptionItem {
    /// Heavy tails of the marginal (tail index γ, tail weights, centering).
    TailIndex,
    /// Behaviour of π at the origin (memory exponent α).
    RateMixing,
    /// Behaviour of μ at the origin (β, c±).
    SmallJumps,
    /// Excluded boundary between regimes.
    Boundary,
    /// General well-formedness (signs, finiteness, empty model).
    Structure,
}

impl fmt::Display for AssumptionItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AssumptionItem::TailIndex => "tail assumption (i)",
            AssumptionItem::RateMixing => "rate-mixing assumption (ii)",
            AssumptionItem::SmallJumps => "small-jump assumption (iii)",
            AssumptionItem::Boundary => "boundary",
            AssumptionItem::Structure => "structure",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub item: AssumptionItem,
    pub message: String,
}

impl Violation {
    fn new(item: AssumptionItem, message: impl Into<String>) -> Self {
        Self {
            item,
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.item, self.message)
    }
}

fn near(x: f64, y: f64) -> bool {
    (x - y).abs() < BOUNDARY_TOL
}

/// All violated assumptions and excluded boundaries; empty iff the quadruple is usable.
pub fn validate(q: &CharacteristicQuadruple) -> Vec<Violation> {
    use AssumptionItem::*;
    let mut out = Vec::new();
    let alpha = q.pi.shape;

    if !(alpha > 0.0 && alpha.is_finite()) {
        out.push(Violation::new(RateMixing, "α (pi_shape) must be positive"));
    }
    if !(q.pi.rate > 0.0 && q.pi.rate.is_finite()) {
        out.push(Violation::new(RateMixing, "pi_rate must be positive"));
    }
    if near(alpha, 1.0) {
        out.push(Violation::new(Boundary, "α = 1 excluded"));
    }
    if !(q.b >= 0.0 && q.b.is_finite()) {
        out.push(Violation::new(Structure, "b must be a nonnegative real"));
    }
    if !q.a.is_finite() {
        out.push(Violation::new(Structure, "a must be finite"));
    }
    if q.big_jumps.is_none() && q.small_jumps.is_none() && q.b <= 0.0 {
        out.push(Violation::new(
            Structure,
            "empty model: no big jumps, no small jumps and b = 0",
        ));
    }

    if let Some(j) = q.big_jumps {
        let g = j.gamma_idx;
        if !(g > 0.0 && g < 2.0) {
            out.push(Violation::new(TailIndex, "γ must lie in (0, 2)"));
        }
        if !(j.w_plus >= 0.0 && j.w_minus >= 0.0 && j.total_mass() > 0.0) {
            out.push(Violation::new(
                TailIndex,
                "big-jump weights must be nonnegative with positive sum",
            ));
        }
        if g == 1.0 && j.w_plus != j.w_minus {
            out.push(Violation::new(TailIndex, "γ = 1 requires p = q (w_plus = w_minus)"));
        }
        if near(g, 1.0 + alpha) {
            out.push(Violation::new(Boundary, "γ = 1+α excluded"));
        }
        if q.b > 0.0 && alpha < 2.0 && near(g, 2.0 / (2.0 - alpha)) {
            out.push(Violation::new(Boundary, "γ = 2/(2−α) excluded when b ≠ 0"));
        }
    }

    if let Some(s) = q.small_jumps {
        let beta = s.beta_idx;
        if beta >= 2.0 {
            out.push(Violation::new(SmallJumps, "β must be < 2"));
        } else if !(beta >= 0.0) {
            out.push(Violation::new(SmallJumps, "β must be ≥ 0"));
        }
        if !(s.c_plus >= 0.0 && s.c_minus >= 0.0 && s.total_weight() > 0.0) {
            out.push(Violation::new(
                SmallJumps,
                "c_plus, c_minus must be nonnegative with positive sum",
            ));
        }
        if near(beta, 1.0 + alpha) {
            out.push(Violation::new(Boundary, "β = 1+α excluded"));
        }
    }

    // Zero mean whenever the mean is finite.
    let finite_mean = match q.big_jumps {
        None => true,
        Some(j) => j.gamma_idx > 1.0,
    };
    if finite_mean && out.iter().all(|v| v.item != TailIndex) {
        if let Ok(want) = centering_drift(q) {
            if (q.a - want).abs() > 1e-9 * want.abs().max(1.0) {
                out.push(Violation::new(
                    TailIndex,
                    format!("finite mean requires centering a = {want}, got a = {}", q.a),
                ));
            }
        }
    }
    out
}

/// Drift `a = −∫_{|x|>1} x μ(dx)` making `E L(1) = 0` when the mean is finite.
///
/// Returns 0 without big jumps and in the infinite-mean regime γ ≤ 1.
pub fn centering_drift(q: &CharacteristicQuadruple) -> Result<f64> {
    let Some(j) = q.big_jumps else {
        return Ok(0.0);
    };
    if j.gamma_idx == 1.0 && j.w_plus != j.w_minus {
        return Err(Error::InvalidParameter(
            "γ = 1 with asymmetric tails is not supported".into(),
        ));
    }
    Ok(j.signed_first_moment().map_or(0.0, |m| -m))
}

/// The six regimes of the closed-form scaling functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TheoremCase {
    #[serde(rename = "A_b0")]
    AB0,
    #[serde(rename = "B_b0")]
    BB0,
    #[serde(rename = "C_b0")]
    CB0,
    #[serde(rename = "D_b0")]
    DB0,
    #[serde(rename = "A_bn0")]
    ABn0,
    #[serde(rename = "B_bn0")]
    BBn0,
}

impl TheoremCase {
    pub const ALL: [TheoremCase; 6] = [
        TheoremCase::AB0,
        TheoremCase::BB0,
        TheoremCase::CB0,
        TheoremCase::DB0,
        TheoremCase::ABn0,
        TheoremCase::BBn0,
    ];

    pub fn code(&self) -> &'static str {
        match self {
            TheoremCase::AB0 => "A_b0",
            TheoremCase::BB0 => "B_b0",
            TheoremCase::CB0 => "C_b0",
            TheoremCase::DB0 => "D_b0",
            TheoremCase::ABn0 => "A_bn0",
            TheoremCase::BBn0 => "B_bn0",
        }
    }

    /// Figure panel letter (a)–(f).
    pub fn panel(&self) -> char {
        match self {
            TheoremCase::AB0 => 'a',
            TheoremCase::BB0 => 'b',
            TheoremCase::CB0 => 'c',
            TheoremCase::DB0 => 'd',
            TheoremCase::ABn0 => 'e',
            TheoremCase::BBn0 => 'f',
        }
    }

    pub fn from_panel(c: char) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.panel() == c)
    }

    pub fn is_b_zero(&self) -> bool {
        matches!(
            self,
            TheoremCase::AB0 | TheoremCase::BB0 | TheoremCase::CB0 | TheoremCase::DB0
        )
    }

    pub fn intermittent(&self) -> bool {
        matches!(self, TheoremCase::BB0 | TheoremCase::CB0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeLabel {
    pub theorem_case: TheoremCase,
    pub b_zero: bool,
}

impl RegimeLabel {
    pub fn description(&self) -> &'static str {
        match self.theorem_case {
            TheoremCase::AB0 => "Theorem(b=0) case (a), no breakpoint, τ(q)=q/γ",
            TheoremCase::BB0 => "Theorem(b=0) case (b), breakpoint q=1+α",
            TheoremCase::CB0 => "Theorem(b=0) case (c), breakpoint q=β",
            TheoremCase::DB0 => "Theorem(b=0) case (d), no breakpoint, τ(q)=(1−α/β)q",
            TheoremCase::ABn0 => "Theorem(b≠0) case (a), no breakpoint, τ(q)=q/γ",
            TheoremCase::BBn0 => "Theorem(b≠0) case (b), no breakpoint, τ(q)=(1−α/2)q",
        }
    }
}

impl fmt::Display for RegimeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}, panel ({})]",
            self.description(),
            self.theorem_case.code(),
            self.theorem_case.panel()
        )
    }
}

/// The regime of a validated quadruple that satisfies both jump hypotheses.
pub fn classify(q: &CharacteristicQuadruple) -> Result<RegimeLabel> {
    let violations = validate(q);
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    let (Some(big), Some(small)) = (q.big_jumps, q.small_jumps) else {
        return Err(Error::ComponentAbsent(
            "regime labels need both the heavy-tailed big jumps and the small jumps",
        ));
    };
    let (g, alpha, beta) = (big.gamma_idx, q.alpha(), small.beta_idx);
    let b_zero = q.b == 0.0;
    let theorem_case = if b_zero {
        if alpha > 1.0 || g < 1.0 + alpha {
            TheoremCase::AB0
        } else if beta < 1.0 + alpha {
            TheoremCase::BB0
        } else if beta <= g {
            TheoremCase::CB0
        } else {
            TheoremCase::DB0
        }
    } else if alpha > 1.0 || g < 2.0 / (2.0 - alpha) {
        TheoremCase::ABn0
    } else {
        TheoremCase::BBn0
    };
    Ok(RegimeLabel {
        theorem_case,
        b_zero,
    })
}

/// Flat key-value form of the quadruple.
///
/// `a` is optional and defaults to the centering drift. `gamma` is required
/// only when a big-jump weight is nonzero, `beta` only when a small-jump
/// weight is nonzero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadrupleSpec {
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
    #[serde(default = "default_pi_rate")]
    pub pi_rate: f64,
}

fn default_pi_rate() -> f64 {
    1.0
}

impl QuadrupleSpec {
    pub fn to_quadruple(&self) -> Result<CharacteristicQuadruple> {
        let big_jumps = if self.w_plus != 0.0 || self.w_minus != 0.0 {
            let gamma_idx = self.gamma.ok_or_else(|| {
                Error::InvalidParameter("gamma is required when w_plus or w_minus is set".into())
            })?;
            Some(BigJumps {
                gamma_idx,
                w_plus: self.w_plus,
                w_minus: self.w_minus,
            })
        } else {
            None
        };
        let small_jumps = if self.c_plus != 0.0 || self.c_minus != 0.0 {
            let beta_idx = self.beta.ok_or_else(|| {
                Error::InvalidParameter("beta is required when c_plus or c_minus is set".into())
            })?;
            Some(SmallJumps {
                beta_idx,
                c_plus: self.c_plus,
                c_minus: self.c_minus,
            })
        } else {
            None
        };
        // Validation reports bad π parameters; keep them as given.
        let pi = PiGamma {
            shape: self.pi_shape,
            rate: self.pi_rate,
        };
        let mut q = CharacteristicQuadruple {
            a: 0.0,
            b: self.b,
            big_jumps,
            small_jumps,
            pi,
        };
        q.a = match self.a {
            Some(a) => a,
            None => centering_drift(&q)?,
        };
        Ok(q)
    }

    pub fn from_quadruple(q: &CharacteristicQuadruple) -> Self {
        Self {
            a: Some(q.a),
            b: q.b,
            gamma: q.gamma_idx(),
            w_plus: q.big_jumps.map_or(0.0, |j| j.w_plus),
            w_minus: q.big_jumps.map_or(0.0, |j| j.w_minus),
            beta: q.beta_idx(),
            c_plus: q.small_jumps.map_or(0.0, |j| j.c_plus),
            c_minus: q.small_jumps.map_or(0.0, |j| j.c_minus),
            pi_shape: q.pi.shape,
            pi_rate: q.pi.rate,
        }
    }
}

/// Builder for tests and experiments: symmetric jump families, centered drift.
pub fn symmetric_quadruple(
    gamma_idx: Option<f64>,
    beta_idx: Option<f64>,
    b: f64,
    alpha: f64,
    pi_rate: f64,
) -> CharacteristicQuadruple {
    CharacteristicQuadruple {
        a: 0.0,
        b,
        big_jumps: gamma_idx.map(|gamma_idx| BigJumps {
            gamma_idx,
            w_plus: 0.5,
            w_minus: 0.5,
        }),
        small_jumps: beta_idx.map(|beta_idx| SmallJumps {
            beta_idx,
            c_plus: 0.5,
            c_minus: 0.5,
        }),
        pi: PiGamma {
            shape: alpha,
            rate: pi_rate,
        },
    }
}
