//! Exact scaling functions of the integrated process and its components.
//!
//! All scaling functions here are continuous, convex and piecewise linear in
//! `q`, vanish at `0+`, and are defined on the open moment range `(0, q̄)`.
//! Segments the theory only bounds from above carry
//! [`SegmentKind::UpperBound`].

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::model::{classify, validate, CharacteristicQuadruple, TheoremCase};
use crate::stable_dist::sigma_rho_from_tails;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Exact,
    UpperBound,
}

impl fmt::Display for SegmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SegmentKind::Exact => "exact",
            SegmentKind::UpperBound => "upper_bound",
        })
    }
}

/// `τ(q) = slope · q + intercept` for `q_lo ≤ q ≤ q_hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub q_lo: f64,
    pub q_hi: f64,
    pub slope: f64,
    pub intercept: f64,
    pub kind: SegmentKind,
}

impl Segment {
    fn line(q_lo: f64, q_hi: f64, slope: f64, intercept: f64, kind: SegmentKind) -> Self {
        Self {
            q_lo,
            q_hi,
            slope,
            intercept,
            kind,
        }
    }

    pub fn at(&self, q: f64) -> f64 {
        self.slope * q + self.intercept
    }
}

/// Value of a scaling function at `q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauValue {
    Finite(f64),
    /// `q` lies at or beyond the moment bound: `E|X*(t)|^q = ∞`.
    InfiniteMoment,
}

impl TauValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            TauValue::Finite(v) => Some(v),
            TauValue::InfiniteMoment => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFunction {
    pub segments: Vec<Segment>,
    /// Moment bound `q̄`; the domain is the open interval `(0, q̄)`.
    pub domain_hi: f64,
    /// `UpperBound` if any segment is only an upper bound.
    pub kind: SegmentKind,
    pub label: String,
}

impl ScalingFunction {
    fn new(segments: Vec<Segment>, domain_hi: f64, label: impl Into<String>) -> Self {
        let kind = if segments.iter().any(|s| s.kind == SegmentKind::UpperBound) {
            SegmentKind::UpperBound
        } else {
            SegmentKind::Exact
        };
        Self {
            segments,
            domain_hi,
            kind,
            label: label.into(),
        }
    }

    pub fn linear(slope: f64, domain_hi: f64, label: impl Into<String>) -> Self {
        Self::new(
            vec![Segment::line(0.0, domain_hi, slope, 0.0, SegmentKind::Exact)],
            domain_hi,
            label,
        )
    }

    /// Two pieces `s₁ q` on `(0, q_b]` and `q − α` on `[q_b, q̄)`.
    fn kinked(
        slope_lo: f64,
        q_break: f64,
        alpha: f64,
        hi_kind: SegmentKind,
        domain_hi: f64,
        label: impl Into<String>,
    ) -> Self {
        Self::new(
            vec![
                Segment::line(0.0, q_break, slope_lo, 0.0, SegmentKind::Exact),
                Segment::line(q_break, domain_hi, 1.0, -alpha, hi_kind),
            ],
            domain_hi,
            label,
        )
    }

    fn segment_at(&self, q: f64) -> Option<&Segment> {
        if !(q > 0.0 && q < self.domain_hi) {
            return None;
        }
        self.segments.iter().find(|s| q <= s.q_hi)
    }

    pub fn eval(&self, q: f64) -> TauValue {
        match self.segment_at(q) {
            Some(s) => TauValue::Finite(s.at(q)),
            None => TauValue::InfiniteMoment,
        }
    }

    /// `τ(q)`, or `None` outside `(0, q̄)`.
    pub fn value(&self, q: f64) -> Option<f64> {
        self.eval(q).finite()
    }

    /// Kind of the segment that owns `q`; at a breakpoint the left segment.
    pub fn kind_at(&self, q: f64) -> Option<SegmentKind> {
        self.segment_at(q).map(|s| s.kind)
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        self.segments.iter().skip(1).map(|s| s.q_lo).collect()
    }

    pub fn slopes(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.slope).collect()
    }

    pub fn to_record(&self) -> ScalingRecord {
        ScalingRecord {
            case: self.label.clone(),
            domain_hi: if self.domain_hi.is_finite() {
                Some(self.domain_hi)
            } else {
                None
            },
            breakpoints: self.breakpoints(),
            slopes: self.slopes(),
            intercepts: self.segments.iter().map(|s| s.intercept).collect(),
            segment_kinds: self.segments.iter().map(|s| s.kind).collect(),
            kind: self.kind,
        }
    }
}

/// Serialized form of a [`ScalingFunction`]. `domain_hi = null` means `+∞`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub case: String,
    pub domain_hi: Option<f64>,
    pub breakpoints: Vec<f64>,
    pub slopes: Vec<f64>,
    pub intercepts: Vec<f64>,
    pub segment_kinds: Vec<SegmentKind>,
    pub kind: SegmentKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Component {
    /// Big jumps `|x| > 1` (heavy tails, compound Poisson).
    X1,
    /// Small jumps `|x| ≤ 1` (finite variance).
    X2,
    /// Gaussian part.
    X3,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::X1, Component::X2, Component::X3];

    pub fn name(&self) -> &'static str {
        match self {
            Component::X1 => "X1",
            Component::X2 => "X2",
            Component::X3 => "X3",
        }
    }
}

fn ensure_valid(q: &CharacteristicQuadruple) -> Result<()> {
    let v = validate(q);
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(v))
    }
}

/// Scaling function of one independent component.
pub fn tau_component(q: &CharacteristicQuadruple, which: Component) -> Result<ScalingFunction> {
    ensure_valid(q)?;
    let alpha = q.alpha();
    match which {
        Component::X1 => {
            let g = q
                .gamma_idx()
                .ok_or(Error::ComponentAbsent("X1 needs big jumps (w_plus + w_minus > 0)"))?;
            if g < 1.0 + alpha {
                Ok(ScalingFunction::linear(1.0 / g, g, "X1: γ<1+α, q/γ"))
            } else {
                Ok(ScalingFunction::kinked(
                    1.0 / (1.0 + alpha),
                    1.0 + alpha,
                    alpha,
                    SegmentKind::UpperBound,
                    g,
                    "X1: γ>1+α, q/(1+α) then ≤ q−α",
                ))
            }
        }
        Component::X2 => {
            let beta = q
                .beta_idx()
                .ok_or(Error::ComponentAbsent("X2 needs small jumps (c_plus + c_minus > 0)"))?;
            let inf = f64::INFINITY;
            if alpha > 1.0 {
                let (q_lo, q_hi) = even_bracket(2.0 * alpha);
                let chord = (q_hi - alpha - q_lo / 2.0) / (q_hi - q_lo);
                Ok(ScalingFunction::new(
                    vec![
                        Segment::line(0.0, q_lo, 0.5, 0.0, SegmentKind::Exact),
                        Segment::line(
                            q_lo,
                            q_hi,
                            chord,
                            q_lo / 2.0 - chord * q_lo,
                            SegmentKind::UpperBound,
                        ),
                        Segment::line(q_hi, inf, 1.0, -alpha, SegmentKind::Exact),
                    ],
                    inf,
                    "X2: α>1, q/2 up to q_*, chord bound, q−α from q^*",
                ))
            } else if beta < 1.0 + alpha {
                Ok(ScalingFunction::kinked(
                    1.0 / (1.0 + alpha),
                    1.0 + alpha,
                    alpha,
                    SegmentKind::Exact,
                    inf,
                    "X2: α<1, β<1+α, q/(1+α) then q−α",
                ))
            } else {
                Ok(ScalingFunction::kinked(
                    1.0 - alpha / beta,
                    beta,
                    alpha,
                    SegmentKind::Exact,
                    inf,
                    "X2: α<1, β>1+α, (1−α/β)q then q−α",
                ))
            }
        }
        Component::X3 => {
            if !q.has_gaussian() {
                return Err(Error::ComponentAbsent("X3 needs a Gaussian part (b > 0)"));
            }
            let slope = if alpha > 1.0 { 0.5 } else { 1.0 - alpha / 2.0 };
            Ok(ScalingFunction::linear(
                slope,
                f64::INFINITY,
                if alpha > 1.0 {
                    "X3: α>1, q/2"
                } else {
                    "X3: α<1, (1−α/2)q"
                },
            ))
        }
    }
}

/// `(q_*, q^*)`: the largest even integer ≤ x and the smallest even integer > x.
fn even_bracket(x: f64) -> (f64, f64) {
    let lo = 2.0 * (x / 2.0).floor();
    (lo, lo + 2.0)
}

/// Scaling functions of the components present in `q`.
pub fn present_components(q: &CharacteristicQuadruple) -> Result<Vec<(Component, ScalingFunction)>> {
    let mut out = Vec::new();
    for c in Component::ALL {
        match tau_component(q, c) {
            Ok(f) => out.push((c, f)),
            Err(Error::ComponentAbsent(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Scaling function of `X* = X₁* + X₂* + X₃*`.
///
/// When both jump parts are present the regime is classified and the closed
/// form of that regime is returned. Otherwise the function is composed from
/// the components that are present.
pub fn tau_total(q: &CharacteristicQuadruple) -> Result<ScalingFunction> {
    ensure_valid(q)?;
    if !q.satisfies_jump_hypotheses() {
        let parts: Vec<ScalingFunction> =
            present_components(q)?.into_iter().map(|(_, f)| f).collect();
        let mut f = tau_max(&parts);
        f.label = format!("composition of components: {}", f.label);
        return Ok(f);
    }
    let label = classify(q)?;
    let g = q.gamma_idx().expect("big jumps present");
    let beta = q.beta_idx().expect("small jumps present");
    let alpha = q.alpha();
    let desc = label.description();
    let f = match label.theorem_case {
        TheoremCase::AB0 => {
            // With α<1 < 1+α < β the small-jump slope 1−α/β can exceed 1/γ
            // when γ > β/(β−α); the sum then grows at the larger rate.
            let mut slope = 1.0 / g;
            if alpha < 1.0 && beta > 1.0 + alpha {
                slope = slope.max(1.0 - alpha / beta);
            }
            ScalingFunction::linear(slope, g, desc)
        }
        TheoremCase::BB0 => ScalingFunction::kinked(
            1.0 / (1.0 + alpha),
            1.0 + alpha,
            alpha,
            SegmentKind::Exact,
            g,
            desc,
        ),
        TheoremCase::CB0 => {
            if beta < g {
                ScalingFunction::kinked(
                    1.0 - alpha / beta,
                    beta,
                    alpha,
                    SegmentKind::Exact,
                    g,
                    desc,
                )
            } else {
                ScalingFunction::linear(1.0 - alpha / beta, g, desc)
            }
        }
        TheoremCase::DB0 => ScalingFunction::linear(1.0 - alpha / beta, g, desc),
        TheoremCase::ABn0 => ScalingFunction::linear(1.0 / g, g, desc),
        TheoremCase::BBn0 => ScalingFunction::linear(1.0 - alpha / 2.0, g, desc),
    };
    Ok(f)
}

const TIE_TOL: f64 = 1e-12;

/// Pointwise maximum of scaling functions on the common domain.
///
/// Ties between an exact and an upper-bound line resolve to the exact one:
/// the maximum equals the exact value whenever the bounded function is not
/// larger.
pub fn tau_max(fs: &[ScalingFunction]) -> ScalingFunction {
    assert!(!fs.is_empty(), "tau_max needs at least one function");
    if fs.len() == 1 {
        return fs[0].clone();
    }
    let domain_hi = fs.iter().map(|f| f.domain_hi).fold(f64::INFINITY, f64::min);

    // Elementary intervals between all breakpoints, refined at line crossings.
    let mut cuts: Vec<f64> = vec![0.0];
    for f in fs {
        cuts.extend(f.breakpoints().into_iter().filter(|&b| b > 0.0 && b < domain_hi));
    }
    cuts.push(domain_hi);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < TIE_TOL);

    let mut refined = vec![cuts[0]];
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let mid = probe(lo, hi);
        let lines: Vec<Segment> = fs.iter().filter_map(|f| f.segment_at(mid).copied()).collect();
        let mut xs = Vec::new();
        for (i, a) in lines.iter().enumerate() {
            for b in &lines[i + 1..] {
                let ds = a.slope - b.slope;
                if ds.abs() > TIE_TOL {
                    let x = (b.intercept - a.intercept) / ds;
                    if x > lo + TIE_TOL && x < hi - TIE_TOL {
                        xs.push(x);
                    }
                }
            }
        }
        xs.sort_by(f64::total_cmp);
        refined.extend(xs);
        refined.push(hi);
    }
    refined.dedup_by(|a, b| (*a - *b).abs() < TIE_TOL);

    let mut segments: Vec<Segment> = Vec::new();
    for w in refined.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let mid = probe(lo, hi);
        let mut best: Option<Segment> = None;
        for f in fs {
            let Some(s) = f.segment_at(mid) else { continue };
            best = Some(match best {
                None => *s,
                Some(b) => {
                    let (vs, vb) = (s.at(mid), b.at(mid));
                    if vs > vb + TIE_TOL
                        || ((vs - vb).abs() <= TIE_TOL
                            && b.kind == SegmentKind::UpperBound
                            && s.kind == SegmentKind::Exact)
                    {
                        *s
                    } else {
                        b
                    }
                }
            });
        }
        let best = best.expect("every function covers the common domain");
        let seg = Segment::line(lo, hi, best.slope, best.intercept, best.kind);
        match segments.last_mut() {
            Some(prev)
                if (prev.slope - seg.slope).abs() < TIE_TOL
                    && (prev.intercept - seg.intercept).abs() < TIE_TOL
                    && prev.kind == seg.kind =>
            {
                prev.q_hi = hi;
            }
            _ => segments.push(seg),
        }
    }
    let label = fs
        .iter()
        .map(|f| f.label.as_str())
        .collect::<Vec<_>>()
        .join(" ∨ ");
    ScalingFunction::new(segments, domain_hi, format!("max[{label}]"))
}

fn probe(lo: f64, hi: f64) -> f64 {
    if hi.is_finite() {
        0.5 * (lo + hi)
    } else {
        lo + 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitRegime {
    /// γ < 1+α: γ-stable Lévy limit driven by the marginal tails.
    ShortMemoryGamma,
    /// γ > 1+α: (1+α)-stable Lévy limit driven by long memory.
    LongMemoryOnePlusAlpha,
}

/// Parameters of the stable Lévy limit of the big-jump component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitLawParams {
    pub stability: f64,
    pub scale: f64,
    pub skew: f64,
    pub regime: LimitRegime,
    /// `(c₁⁻, c₁⁺)` in the long-memory regime.
    pub c_minus_plus: Option<(f64, f64)>,
}

/// Stable limit-law parameters of `X₁*` after normalization.
///
/// - γ < 1+α: stability γ, scale `σ (γ ∫ ξ^{1−γ} π(dξ))^{1/γ}` with `(σ, ρ)`
///   from the marginal tails, skew ρ.
/// - γ > 1+α: stability 1+α, `c±₁ = α/(1+α) ∫_{±y>1} |y|^{1+α} μ(dy)`, scale
///   `(Γ(1−α)/α · (c⁻₁+c⁺₁) · |cos(π(1+α)/2)|)^{1/(1+α)}` and skew
///   `(c⁻₁ − c⁺₁)/(c⁻₁ + c⁺₁)`.
pub fn limit_params(q: &CharacteristicQuadruple) -> Result<LimitLawParams> {
    ensure_valid(q)?;
    let big = q
        .big_jumps
        .ok_or(Error::ComponentAbsent("limit law needs big jumps"))?;
    let (g, alpha) = (big.gamma_idx, q.alpha());
    if g < 1.0 + alpha {
        let base = sigma_rho_from_tails(g, &big.tail_weights()?)?;
        let mixing = q
            .pi
            .moment(1.0 - g)
            .ok_or_else(|| Error::InvalidParameter("∫ξ^{1−γ}π(dξ) diverges".into()))?;
        Ok(LimitLawParams {
            stability: g,
            scale: base.sigma * (g * mixing).powf(1.0 / g),
            skew: base.rho,
            regime: LimitRegime::ShortMemoryGamma,
            c_minus_plus: None,
        })
    } else {
        let k = alpha / (1.0 + alpha) * g / (g - 1.0 - alpha);
        let (c_minus, c_plus) = (k * big.w_minus, k * big.w_plus);
        let s = 1.0 + alpha;
        let factor = gamma(1.0 - alpha) / alpha * (PI * s / 2.0).cos().abs();
        Ok(LimitLawParams {
            stability: s,
            scale: (factor * (c_minus + c_plus)).powf(1.0 / s),
            skew: (c_minus - c_plus) / (c_minus + c_plus),
            regime: LimitRegime::LongMemoryOnePlusAlpha,
            c_minus_plus: Some((c_minus, c_plus)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{symmetric_quadruple, BigJumps};
    use proptest::prelude::*;

    fn quad(g: f64, alpha: f64, beta: f64, b: f64) -> CharacteristicQuadruple {
        symmetric_quadruple(Some(g), Some(beta), b, alpha, 1.0)
    }

    fn val(f: &ScalingFunction, q: f64) -> f64 {
        f.value(q).unwrap()
    }

    #[test]
    fn total_examples() {
        let f = tau_total(&quad(1.5, 0.7, 0.3, 0.0)).unwrap();
        assert!((val(&f, 0.9) - 0.6).abs() < 1e-12);
        let f = tau_total(&quad(1.8, 0.4, 0.3, 0.0)).unwrap();
        assert!((val(&f, 1.4) - 1.0).abs() < 1e-12);
        assert!((val(&f, 1.7) - 1.3).abs() < 1e-12);
        assert_eq!(f.breakpoints().len(), 1);
        let f = tau_total(&quad(1.7, 0.5, 0.3, 1.0)).unwrap();
        assert!((val(&f, 1.0) - 0.75).abs() < 1e-12);
        assert!(f.breakpoints().is_empty());
    }

    #[test]
    fn infinite_moment_sentinel() {
        let f = tau_total(&quad(1.5, 0.7, 0.3, 0.0)).unwrap();
        assert_eq!(f.eval(1.5), TauValue::InfiniteMoment);
        assert_eq!(f.eval(1.6), TauValue::InfiniteMoment);
        assert!(matches!(f.eval(1.49), TauValue::Finite(_)));
    }

    #[test]
    fn component_examples() {
        let q = quad(1.9, 1.5, 0.3, 1.0);
        let x2 = tau_component(&q, Component::X2).unwrap();
        assert!((val(&x2, 2.0) - 1.0).abs() < 1e-12);
        assert!((val(&x2, 4.0) - 2.5).abs() < 1e-12);
        assert_eq!(x2.kind_at(3.0), Some(SegmentKind::UpperBound));
        assert_eq!(x2.kind_at(1.0), Some(SegmentKind::Exact));

        let q = quad(1.2, 0.5, 0.3, 1.0);
        let x2 = tau_component(&q, Component::X2).unwrap();
        assert!((val(&x2, 1.5) - 1.0).abs() < 1e-12);
        let x3 = tau_component(&q, Component::X3).unwrap();
        assert!((val(&x3, 2.0) - 1.5).abs() < 1e-12);

        let q0 = quad(1.2, 0.5, 0.3, 0.0);
        assert!(matches!(
            tau_component(&q0, Component::X3),
            Err(Error::ComponentAbsent(_))
        ));
    }

    #[test]
    fn x1_upper_bound_above_one_plus_alpha() {
        let f = tau_component(&quad(1.8, 0.4, 0.3, 0.0), Component::X1).unwrap();
        assert_eq!(f.kind, SegmentKind::UpperBound);
        assert_eq!(f.kind_at(1.0), Some(SegmentKind::Exact));
        assert_eq!(f.kind_at(1.6), Some(SegmentKind::UpperBound));
        assert!((val(&f, 1.6) - 1.2).abs() < 1e-12);
    }

    #[test]
    fn max_examples() {
        let a = ScalingFunction::linear(0.5, f64::INFINITY, "a");
        let b = ScalingFunction::new(
            vec![Segment::line(0.0, f64::INFINITY, 1.0, -0.4, SegmentKind::Exact)],
            f64::INFINITY,
            "b",
        );
        let m = tau_max(&[a.clone(), b]);
        assert_eq!(m.segments.len(), 2);
        assert!((m.breakpoints()[0] - 0.8).abs() < 1e-12);
        assert!((val(&m, 0.5) - 0.25).abs() < 1e-12);
        assert!((val(&m, 2.0) - 1.6).abs() < 1e-12);
        assert_eq!(tau_max(std::slice::from_ref(&a)), a);
    }

    #[test]
    fn max_propagates_upper_bound_and_prefers_exact_ties() {
        let q = quad(1.8, 0.4, 0.3, 0.0);
        let x1 = tau_component(&q, Component::X1).unwrap();
        let x2 = tau_component(&q, Component::X2).unwrap();
        let m = tau_max(&[x1.clone(), x2]);
        assert_eq!(m.kind, SegmentKind::Exact);
        let alone = tau_max(&[x1, ScalingFunction::linear(0.1, f64::INFINITY, "low")]);
        assert_eq!(alone.kind, SegmentKind::UpperBound);
        assert!((alone.domain_hi - 1.8).abs() < 1e-15);
    }

    #[test]
    fn total_equals_component_max_in_every_case() {
        for q in [
            quad(1.5, 0.7, 0.3, 0.0),
            quad(1.3, 1.5, 0.3, 0.0),
            quad(1.8, 0.4, 0.3, 0.0),
            quad(1.9, 0.4, 1.6, 0.0),
            quad(1.6, 0.4, 1.8, 0.0),
            quad(1.2, 0.5, 0.3, 1.0),
            quad(1.7, 0.5, 1.9, 1.0),
            quad(1.45, 0.5, 1.9, 0.0),
        ] {
            let total = tau_total(&q).unwrap();
            let parts: Vec<_> = present_components(&q)
                .unwrap()
                .into_iter()
                .map(|(_, f)| f)
                .collect();
            for i in 1..100 {
                let x = total.domain_hi * i as f64 / 100.0;
                let want = parts
                    .iter()
                    .filter_map(|f| f.value(x))
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!((val(&total, x) - want).abs() < 1e-12, "{q:?} q={x}");
            }
        }
    }

    #[test]
    fn small_jump_slope_dominates_inside_case_a() {
        // α=0.5, β=1.9: β/(β−α) ≈ 1.357 < γ = 1.45 < 1+α.
        let f = tau_total(&quad(1.45, 0.5, 1.9, 0.0)).unwrap();
        assert!((f.slopes()[0] - (1.0 - 0.5 / 1.9)).abs() < 1e-15);
        let f = tau_total(&quad(1.3, 0.5, 1.9, 0.0)).unwrap();
        assert!((f.slopes()[0] - 1.0 / 1.3).abs() < 1e-15);
    }

    #[test]
    fn degenerate_models_compose_components() {
        let q = symmetric_quadruple(None, Some(0.5), 0.0, 0.5, 1.0);
        let f = tau_total(&q).unwrap();
        assert!(f.domain_hi.is_infinite());
        assert!((f.breakpoints()[0] - 1.5).abs() < 1e-12);
        let q = symmetric_quadruple(None, None, 1.0, 1.5, 1.0);
        let f = tau_total(&q).unwrap();
        assert!((val(&f, 3.0) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn limit_params_examples() {
        let q = quad(1.8, 0.4, 0.3, 0.0);
        let l = limit_params(&q).unwrap();
        assert_eq!(l.regime, LimitRegime::LongMemoryOnePlusAlpha);
        assert_eq!(l.skew, 0.0);
        assert!((l.stability - 1.4).abs() < 1e-15);

        let mut q = quad(1.8, 0.4, 0.3, 0.0);
        q.big_jumps = Some(BigJumps {
            gamma_idx: 1.8,
            w_plus: 1.0,
            w_minus: 0.0,
        });
        let q = q.centered().unwrap();
        let (cm, cp) = limit_params(&q).unwrap().c_minus_plus.unwrap();
        assert_eq!(cm, 0.0);
        assert!((cp - 0.4 / 1.4 * 1.8 / 0.4).abs() < 1e-12);

        let mut q = quad(1.2, 0.5, 0.3, 0.0);
        q.pi.rate = 1.0;
        let l = limit_params(&q).unwrap();
        assert_eq!(l.regime, LimitRegime::ShortMemoryGamma);
        let base = sigma_rho_from_tails(1.2, &q.big_jumps.unwrap().tail_weights().unwrap())
            .unwrap()
            .sigma;
        let want = base * (1.2 * gamma(0.3) / gamma(0.5)).powf(1.0 / 1.2);
        assert!((l.scale - want).abs() < 1e-12 * want);
    }

    fn random_quadruple() -> impl Strategy<Value = CharacteristicQuadruple> {
        (
            0.05f64..1.95,
            0.05f64..2.5,
            0.0f64..1.99,
            any::<bool>(),
            (0.1f64..3.0, 0.1f64..2.0, 0.1f64..2.0),
        )
            .prop_filter("off boundaries", |(g, a, beta, bnz, _)| {
                let far = |x: f64, y: f64| (x - y).abs() > 1e-6;
                far(*g, 1.0 + a)
                    && far(*beta, 1.0 + a)
                    && far(*a, 1.0)
                    && far(*g, 1.0)
                    && (!bnz || far(*g, 2.0 / (2.0 - a)))
            })
            .prop_map(|(g, a, beta, bnz, (rate, w, c))| {
                let mut q = quad(g, a, beta, if bnz { 1.0 } else { 0.0 });
                q.pi.rate = rate;
                q.big_jumps.as_mut().unwrap().w_plus = w;
                q.small_jumps.as_mut().unwrap().c_minus = c;
                q.centered().unwrap()
            })
    }

    fn assert_shape(f: &ScalingFunction) -> std::result::Result<(), TestCaseError> {
        prop_assert!(f.segments[0].q_lo == 0.0 && f.segments[0].intercept.abs() < 1e-15);
        for w in f.segments.windows(2) {
            prop_assert!((w[0].q_hi - w[1].q_lo).abs() < 1e-12);
            let x = w[0].q_hi;
            prop_assert!((w[0].at(x) - w[1].at(x)).abs() < 1e-12);
            prop_assert!(w[1].slope >= w[0].slope - 1e-12);
        }
        // q/γ is steeper than 1 when γ < 1; every other line has slope ≤ 1 and
        // the segments with nonzero intercept are exactly q − α or the chord.
        let max_slope = f.segments[0].slope.max(1.0);
        for s in &f.segments {
            prop_assert!(s.slope >= 0.0 && s.slope <= max_slope + 1e-15);
            if s.intercept.abs() > 1e-12 && s.kind == SegmentKind::Exact {
                prop_assert!((s.slope - 1.0).abs() < 1e-15);
            }
        }
        prop_assert_eq!(f.segments.last().unwrap().q_hi, f.domain_hi);
        Ok(())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn total_is_component_max(q in random_quadruple()) {
            let total = tau_total(&q).unwrap();
            prop_assert_eq!(total.domain_hi, q.gamma_idx().unwrap());
            let parts = present_components(&q).unwrap();
            for i in 1..50 {
                let x = total.domain_hi * i as f64 / 50.0;
                let want = parts
                    .iter()
                    .filter_map(|(_, f)| f.value(x))
                    .fold(f64::NEG_INFINITY, f64::max);
                prop_assert!((val(&total, x) - want).abs() < 1e-12);
            }
            let composed = tau_max(&parts.into_iter().map(|(_, f)| f).collect::<Vec<_>>());
            for i in 1..50 {
                let x = total.domain_hi * i as f64 / 50.0;
                prop_assert!((val(&composed, x) - val(&total, x)).abs() < 1e-12);
            }
        }

        #[test]
        fn shapes_are_convex_continuous(q in random_quadruple()) {
            assert_shape(&tau_total(&q).unwrap())?;
            for (_, f) in present_components(&q).unwrap() {
                assert_shape(&f)?;
            }
        }

        #[test]
        fn gaussian_part_removes_breakpoints(q in random_quadruple()) {
            let f = tau_total(&q).unwrap();
            if q.b > 0.0 {
                prop_assert!(f.breakpoints().is_empty());
            }
            let case = classify(&q).unwrap().theorem_case;
            match case {
                TheoremCase::BB0 => {
                    prop_assert_eq!(f.breakpoints().len(), 1);
                    prop_assert!((f.breakpoints()[0] - (1.0 + q.alpha())).abs() < 1e-12);
                }
                TheoremCase::CB0 if q.beta_idx().unwrap() < q.gamma_idx().unwrap() => {
                    prop_assert_eq!(f.breakpoints().len(), 1);
                    prop_assert!((f.breakpoints()[0] - q.beta_idx().unwrap()).abs() < 1e-12);
                }
                _ => {}
            }
            let s = f.slopes();
            for w in s.windows(2) {
                prop_assert!(w[1] > w[0]);
            }
        }

        #[test]
        fn invariant_under_scale_parameters(q in random_quadruple(), k in 0.1f64..10.0) {
            let mut r = q;
            r.pi.rate *= k;
            r.big_jumps.as_mut().unwrap().w_minus *= k;
            r.small_jumps.as_mut().unwrap().c_plus *= k;
            let r = r.centered().unwrap();
            let (f, g) = (tau_total(&q).unwrap(), tau_total(&r).unwrap());
            prop_assert_eq!(f.segments, g.segments);
        }
    }
}
