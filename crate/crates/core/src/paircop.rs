//! One-parameter bivariate copulas with reflections.
//!
//! `hfunc(u, v) = ∂C(u, v)/∂v` is the conditional distribution of the first
//! argument given the second. Reflections by 90°, 180° and 270° act on a
//! positive base parameter for Clayton and Joe; Gaussian and Frank cover
//! negative dependence through the sign of their parameter.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use crate::error::{Result, SvfError};
use crate::numeric::{integrate, kendall_tau, norm_cdf, norm_quantile};
use crate::optim::brent_max;

pub const CLAMP: f64 = 1e-10;
pub const GAUSSIAN_MAX: f64 = 0.9999;
pub const FRANK_MAX: f64 = 40.0;
pub const CLAYTON_MIN: f64 = 1e-4;
pub const CLAYTON_MAX: f64 = 28.0;
pub const JOE_MAX: f64 = 30.0;
pub const MIN_PAIRS: usize = 10;

#[inline]
fn clamp01(x: f64) -> f64 {
    x.clamp(CLAMP, 1.0 - CLAMP)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Independence,
    Gaussian,
    Frank,
    Clayton,
    Joe,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Independence, Family::Gaussian, Family::Frank, Family::Clayton, Family::Joe];

    pub fn name(self) -> &'static str {
        match self {
            Family::Independence => "independence",
            Family::Gaussian => "gaussian",
            Family::Frank => "frank",
            Family::Clayton => "clayton",
            Family::Joe => "joe",
        }
    }

    pub fn n_params(self) -> usize {
        if self == Family::Independence {
            0
        } else {
            1
        }
    }

    /// Reflections tried during selection.
    pub fn reflections(self) -> &'static [Reflection] {
        match self {
            Family::Clayton | Family::Joe => &Reflection::ALL,
            _ => &[Reflection::R0],
        }
    }

    fn bounds(self) -> (f64, f64) {
        match self {
            Family::Independence => (0.0, 0.0),
            Family::Gaussian => (-GAUSSIAN_MAX, GAUSSIAN_MAX),
            Family::Frank => (-FRANK_MAX, FRANK_MAX),
            Family::Clayton => (CLAYTON_MIN, CLAYTON_MAX),
            Family::Joe => (1.0, JOE_MAX),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = SvfError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "independence" | "indep" => Ok(Family::Independence),
            "gaussian" | "normal" => Ok(Family::Gaussian),
            "frank" => Ok(Family::Frank),
            "clayton" => Ok(Family::Clayton),
            "joe" => Ok(Family::Joe),
            other => Err(SvfError::InvalidArgument(format!("unknown copula family {other:?}"))),
        }
    }
}

/// Candidate families for selection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilySet(pub Vec<Family>);

impl FamilySet {
    pub fn all() -> Self {
        FamilySet(Family::ALL.to_vec())
    }

    pub fn single(f: Family) -> Self {
        FamilySet(vec![f])
    }

    pub fn contains(&self, f: Family) -> bool {
        self.0.contains(&f)
    }
}

impl FromStr for FamilySet {
    type Err = SvfError;
    /// `"all"` or a comma-separated list of family names.
    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("all") {
            return Ok(FamilySet::all());
        }
        let mut fams: Vec<Family> = s.split(',').filter(|p| !p.trim().is_empty()).map(Family::from_str).collect::<Result<_>>()?;
        fams.sort();
        fams.dedup();
        if fams.is_empty() {
            return Err(SvfError::InvalidArgument("empty family set".into()));
        }
        Ok(FamilySet(fams))
    }
}

impl fmt::Display for FamilySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(|x| x.name()).collect();
        f.write_str(&names.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u16", try_from = "u16")]
pub enum Reflection {
    R0,
    R90,
    R180,
    R270,
}

impl Reflection {
    pub const ALL: [Reflection; 4] = [Reflection::R0, Reflection::R90, Reflection::R180, Reflection::R270];

    pub fn degrees(self) -> u16 {
        match self {
            Reflection::R0 => 0,
            Reflection::R90 => 90,
            Reflection::R180 => 180,
            Reflection::R270 => 270,
        }
    }
}

impl From<Reflection> for u16 {
    fn from(r: Reflection) -> u16 {
        r.degrees()
    }
}

impl TryFrom<u16> for Reflection {
    type Error = String;
    fn try_from(d: u16) -> std::result::Result<Self, String> {
        match d {
            0 => Ok(Reflection::R0),
            90 => Ok(Reflection::R90),
            180 => Ok(Reflection::R180),
            270 => Ok(Reflection::R270),
            _ => Err(format!("invalid reflection {d}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCopula {
    pub family: Family,
    pub param: f64,
    pub reflection: Reflection,
}

impl PairCopula {
    pub fn new(family: Family, param: f64, reflection: Reflection) -> Result<Self> {
        let ok = match family {
            Family::Independence => true,
            Family::Gaussian => param.abs() < 1.0,
            Family::Frank => param.is_finite(),
            Family::Clayton => param > 0.0 && param.is_finite(),
            Family::Joe => param >= 1.0 && param.is_finite(),
        };
        if !ok {
            return Err(SvfError::InvalidArgument(format!("parameter {param} outside the {family} domain")));
        }
        if matches!(family, Family::Independence | Family::Gaussian | Family::Frank) && reflection != Reflection::R0 {
            return Err(SvfError::InvalidArgument(format!("{family} copulas take no reflection")));
        }
        let param = if family == Family::Independence { 0.0 } else { param };
        Ok(PairCopula { family, param, reflection })
    }

    pub fn independence() -> Self {
        PairCopula { family: Family::Independence, param: 0.0, reflection: Reflection::R0 }
    }

    pub fn gaussian(rho: f64) -> Self {
        PairCopula::new(Family::Gaussian, rho, Reflection::R0).expect("valid gaussian parameter")
    }

    pub fn frank(theta: f64) -> Self {
        PairCopula::new(Family::Frank, theta, Reflection::R0).expect("valid frank parameter")
    }

    pub fn clayton(theta: f64, r: Reflection) -> Self {
        PairCopula::new(Family::Clayton, theta, r).expect("valid clayton parameter")
    }

    pub fn joe(theta: f64, r: Reflection) -> Self {
        PairCopula::new(Family::Joe, theta, r).expect("valid joe parameter")
    }

    pub fn n_params(&self) -> usize {
        self.family.n_params()
    }

    /// The copula of `(V, U)` when `self` is the copula of `(U, V)`.
    pub fn swapped(&self) -> Self {
        let reflection = match self.reflection {
            Reflection::R90 => Reflection::R270,
            Reflection::R270 => Reflection::R90,
            r => r,
        };
        PairCopula { reflection, ..*self }
    }

    pub fn density(&self, u: f64, v: f64) -> f64 {
        self.log_density(u, v).exp()
    }

    pub fn log_density(&self, u: f64, v: f64) -> f64 {
        let (u, v) = (clamp01(u), clamp01(v));
        let (a, b) = match self.reflection {
            Reflection::R0 => (u, v),
            Reflection::R90 => (1.0 - u, v),
            Reflection::R180 => (1.0 - u, 1.0 - v),
            Reflection::R270 => (u, 1.0 - v),
        };
        base_log_density(self.family, self.param, a, b)
    }

    /// `∂C(u, v)/∂v`.
    pub fn hfunc(&self, u: f64, v: f64) -> f64 {
        let (u, v) = (clamp01(u), clamp01(v));
        let (f, t) = (self.family, self.param);
        let h = match self.reflection {
            Reflection::R0 => base_h(f, t, u, v),
            Reflection::R90 => 1.0 - base_h(f, t, 1.0 - u, v),
            Reflection::R180 => 1.0 - base_h(f, t, 1.0 - u, 1.0 - v),
            Reflection::R270 => base_h(f, t, u, 1.0 - v),
        };
        clamp01(h)
    }

    /// `∂C(u, v)/∂u`.
    pub fn hrev(&self, u: f64, v: f64) -> f64 {
        self.swapped().hfunc(v, u)
    }

    /// Inverse of [`hfunc`](Self::hfunc) in its first argument.
    pub fn hinv(&self, w: f64, v: f64) -> f64 {
        let (w, v) = (clamp01(w), clamp01(v));
        let (f, t) = (self.family, self.param);
        let u = match self.reflection {
            Reflection::R0 => base_hinv(f, t, w, v),
            Reflection::R90 => 1.0 - base_hinv(f, t, 1.0 - w, v),
            Reflection::R180 => 1.0 - base_hinv(f, t, 1.0 - w, 1.0 - v),
            Reflection::R270 => base_hinv(f, t, w, 1.0 - v),
        };
        clamp01(u)
    }

    /// Kendall's tau.
    pub fn tau(&self) -> f64 {
        let t = base_tau(self.family, self.param);
        match self.reflection {
            Reflection::R90 | Reflection::R270 => -t,
            _ => t,
        }
    }

    pub fn loglik(&self, u: &[f64], v: &[f64]) -> f64 {
        if self.family == Family::Independence {
            return 0.0;
        }
        u.iter().zip(v).map(|(&a, &b)| self.log_density(a, b)).sum()
    }
}

impl fmt::Display for PairCopula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            Family::Independence => write!(f, "independence"),
            Family::Clayton | Family::Joe => write!(f, "{}{}({})", self.family, self.reflection.degrees(), self.param),
            _ => write!(f, "{}({})", self.family, self.param),
        }
    }
}

/// `e^{θu} + e^{θv} − 1 − e^{θ(u+v−1)}` for `θ > 0`, written as a sum of
/// positive terms.
fn frank_denominator(t: f64, u: f64, v: f64) -> f64 {
    (t * u).exp_m1() - (t * v).exp() * (t * (u - 1.0)).exp_m1()
}

fn frank_is_zero(theta: f64) -> bool {
    theta.abs() < 1e-12
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `ln(u^-θ + v^-θ - 1)` for Clayton.
fn clayton_log_s(theta: f64, lu: f64, lv: f64) -> f64 {
    let a = -theta * lu;
    let b = -theta * lv;
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp() - (-m).exp()).ln()
}

fn base_log_density(f: Family, t: f64, u: f64, v: f64) -> f64 {
    match f {
        Family::Independence => 0.0,
        Family::Gaussian => {
            let x = norm_quantile(u);
            let y = norm_quantile(v);
            let r2 = 1.0 - t * t;
            -0.5 * r2.ln() - (t * t * (x * x + y * y) - 2.0 * t * x * y) / (2.0 * r2)
        }
        Family::Frank => {
            if frank_is_zero(t) {
                return 0.0;
            }
            let (t, v) = if t < 0.0 { (-t, 1.0 - v) } else { (t, v) };
            (t * -(-t).exp_m1()).ln() + t * (u + v) - 2.0 * frank_denominator(t, u, v).ln()
        }
        Family::Clayton => {
            let (lu, lv) = (u.ln(), v.ln());
            let ls = clayton_log_s(t, lu, lv);
            (1.0 + t).ln() + (-t - 1.0) * (lu + lv) + (-1.0 / t - 2.0) * ls
        }
        Family::Joe => {
            let (lu, lv) = ((1.0 - u).ln(), (1.0 - v).ln());
            let ut = (t * lu).exp();
            let vt = (t * lv).exp();
            let x = ut + vt * -(t * lu).exp_m1();
            (1.0 / t - 2.0) * x.ln() + (t - 1.0) * (lu + lv) + (t - 1.0 + x).ln()
        }
    }
}

fn base_h(f: Family, t: f64, u: f64, v: f64) -> f64 {
    match f {
        Family::Independence => u,
        Family::Gaussian => {
            let x = norm_quantile(u);
            let y = norm_quantile(v);
            norm_cdf((x - t * y) / (1.0 - t * t).sqrt())
        }
        Family::Frank => {
            if frank_is_zero(t) {
                return u;
            }
            let (t, v) = if t < 0.0 { (-t, 1.0 - v) } else { (t, v) };
            (t * u).exp_m1() / frank_denominator(t, u, v)
        }
        Family::Clayton => {
            let (lu, lv) = (u.ln(), v.ln());
            let ls = clayton_log_s(t, lu, lv);
            ((-t - 1.0) * lv + (-1.0 / t - 1.0) * ls).exp()
        }
        Family::Joe => {
            let (lu, lv) = ((1.0 - u).ln(), (1.0 - v).ln());
            let one_minus_ut = -(t * lu).exp_m1();
            let x = (t * lu).exp() + (t * lv).exp() * one_minus_ut;
            ((1.0 / t - 1.0) * x.ln() + (t - 1.0) * lv).exp() * one_minus_ut
        }
    }
}

fn base_hinv(f: Family, t: f64, w: f64, v: f64) -> f64 {
    match f {
        Family::Independence => w,
        Family::Gaussian => {
            let y = norm_quantile(v);
            norm_cdf(norm_quantile(w) * (1.0 - t * t).sqrt() + t * y)
        }
        Family::Frank => {
            if frank_is_zero(t) {
                return w;
            }
            let b = (-t * v).exp_m1();
            let e = (-t).exp_m1();
            let a = w * e / (1.0 + b * (1.0 - w));
            -a.ln_1p() / t
        }
        Family::Clayton => {
            let lv = v.ln();
            let q = (-t / (1.0 + t) * w.ln()).exp_m1();
            if q <= 0.0 {
                return 1.0;
            }
            let z = -t * lv + q.ln();
            (-softplus(z) / t).exp()
        }
        Family::Joe => invert_h(w, |u| (base_h(f, t, u, v), base_log_density(f, t, u, v).exp())),
    }
}

/// Solve `h(u) = w` on `(0, 1)` for increasing `h` by safeguarded Newton.
/// `hd` returns `(h(u), h'(u))`.
fn invert_h<F: Fn(f64) -> (f64, f64)>(w: f64, hd: F) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut u = w.clamp(CLAMP, 1.0 - CLAMP);
    for _ in 0..200 {
        let (h, d) = hd(u);
        let r = h - w;
        if r.abs() < 1e-14 {
            return u;
        }
        if r > 0.0 {
            hi = u;
        } else {
            lo = u;
        }
        let newton = u - r / d;
        let next = if newton.is_finite() && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - u).abs() < 1e-15 || hi - lo < 1e-15 {
            return next;
        }
        u = next;
    }
    u
}

/// Kendall's tau of the unreflected family.
pub fn base_tau(f: Family, t: f64) -> f64 {
    match f {
        Family::Independence => 0.0,
        Family::Gaussian => 2.0 / PI * t.asin(),
        Family::Clayton => t / (t + 2.0),
        Family::Frank => {
            let a = t.abs();
            if a < 1e-6 {
                return t / 9.0;
            }
            let tau = 1.0 - 4.0 / a * (1.0 - debye1(a));
            tau.copysign(t)
        }
        Family::Joe => {
            if t <= 1.0 {
                return 0.0;
            }
            let closed = |t: f64| 1.0 + 2.0 / (2.0 - t) * (digamma(2.0) - digamma(2.0 / t + 1.0));
            // the closed form cancels near θ = 2; bridge that gap linearly
            const GAP: f64 = 1e-4;
            if (t - 2.0).abs() < GAP {
                let w = (t - 2.0 + GAP) / (2.0 * GAP);
                return (1.0 - w) * closed(2.0 - GAP) + w * closed(2.0 + GAP);
            }
            closed(t)
        }
    }
}

/// First Debye function `(1/x) ∫₀ˣ t/(eᵗ-1) dt` for `x > 0`.
pub fn debye1(x: f64) -> f64 {
    let g = |t: f64| if t == 0.0 { 1.0 } else { t / t.exp_m1() };
    integrate(g, 0.0, x, 1e-13) / x
}

/// Parameter of `family` (unreflected, or 90°-reflected for negative `tau`
/// with Clayton and Joe) whose Kendall's tau is `tau`.
pub fn param_from_tau(family: Family, tau: f64) -> Result<f64> {
    if !(tau > -1.0 && tau < 1.0) {
        return Err(SvfError::InvalidArgument(format!("tau {tau} outside (-1, 1)")));
    }
    match family {
        Family::Independence => Ok(0.0),
        Family::Gaussian => Ok((PI * tau / 2.0).sin()),
        Family::Clayton => {
            if tau <= 0.0 {
                return Err(SvfError::InvalidArgument(format!("clayton needs tau > 0, got {tau}")));
            }
            Ok(2.0 * tau / (1.0 - tau))
        }
        Family::Frank => {
            if tau == 0.0 {
                return Ok(0.0);
            }
            let target = tau.abs();
            let (mut lo, mut hi) = (0.0, 1.0);
            while base_tau(Family::Frank, hi) < target {
                hi *= 2.0;
                if hi > 1e6 {
                    return Err(SvfError::Numerical("frank tau inversion out of range".into()));
                }
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if base_tau(Family::Frank, mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-13 * hi.max(1.0) {
                    break;
                }
            }
            Ok((0.5 * (lo + hi)).copysign(tau))
        }
        Family::Joe => {
            if tau < 0.0 {
                return Err(SvfError::InvalidArgument(format!("joe needs tau >= 0, got {tau}")));
            }
            if tau == 0.0 {
                return Ok(1.0);
            }
            let (mut lo, mut hi) = (1.0, 2.0);
            while base_tau(Family::Joe, hi) < tau {
                hi *= 2.0;
                if hi > 1e5 {
                    return Err(SvfError::Numerical("joe tau inversion out of range".into()));
                }
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if base_tau(Family::Joe, mid) < tau {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-13 * hi {
                    break;
                }
            }
            Ok(0.5 * (lo + hi))
        }
    }
}

/// A selected pair copula together with its fit statistics.
#[derive(Debug, Clone, Copy)]
pub struct PairFit {
    pub copula: PairCopula,
    pub loglik: f64,
    pub aic: f64,
}

fn check_pairs(u: &[f64], v: &[f64]) -> Result<()> {
    if u.len() != v.len() {
        return Err(SvfError::DimensionMismatch { expected: u.len(), got: v.len() });
    }
    if u.len() < MIN_PAIRS {
        return Err(SvfError::InsufficientData { needed: MIN_PAIRS, got: u.len() });
    }
    Ok(())
}

/// Maximum-likelihood parameter for a fixed family and reflection.
///
/// With a `hint`, the search starts on a bracket around it and falls back to
/// the full parameter range when the optimum lands on the bracket edge.
pub fn fit_param(u: &[f64], v: &[f64], family: Family, reflection: Reflection, hint: Option<f64>) -> Result<PairFit> {
    check_pairs(u, v)?;
    if family == Family::Independence {
        return Ok(PairFit { copula: PairCopula::independence(), loglik: 0.0, aic: 0.0 });
    }
    let (lo, hi) = family.bounds();
    let ll = |p: f64| PairCopula { family, param: p, reflection }.loglik(u, v);
    let xtol = 1e-7;
    let mut best = None;
    if let Some(h) = hint.filter(|h| h.is_finite()) {
        let width = 0.25 * h.abs().max(if family == Family::Gaussian { 0.2 } else { 1.0 });
        let (a, b) = ((h - width).max(lo), (h + width).min(hi));
        if b > a {
            let r = brent_max(ll, a, b, xtol, 100);
            let at_edge = (r.x - a < 10.0 * xtol && a > lo) || (b - r.x < 10.0 * xtol && b < hi);
            if !at_edge {
                best = Some(r);
            }
        }
    }
    let r = match best {
        Some(r) => r,
        None => brent_max(ll, lo, hi, xtol, 200),
    };
    if !r.fx.is_finite() {
        return Err(SvfError::Numerical(format!("{family} likelihood is not finite")));
    }
    let copula = PairCopula { family, param: r.x, reflection };
    let k = family.n_params() as f64;
    Ok(PairFit { copula, loglik: r.fx, aic: 2.0 * k - 2.0 * r.fx })
}

/// Fit every family×reflection candidate and keep the smallest AIC.
pub fn fit_pair(u: &[f64], v: &[f64], families: &FamilySet) -> Result<PairFit> {
    check_pairs(u, v)?;
    let mut best: Option<PairFit> = None;
    let mut last_err = None;
    for &family in &families.0 {
        for &reflection in family.reflections() {
            match fit_param(u, v, family, reflection, None) {
                Ok(fit) => {
                    if best.as_ref().is_none_or(|b| fit.aic < b.aic) {
                        best = Some(fit);
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| SvfError::Numerical("no copula candidate converged".into())))
}

/// Sample Kendall's tau of paired pseudo-observations.
pub fn empirical_tau(u: &[f64], v: &[f64]) -> f64 {
    kendall_tau(u, v)
}
