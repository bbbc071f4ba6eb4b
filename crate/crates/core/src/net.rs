//! Generalized scalars as representative nets `n ↦ x_n`.
//!
//! "Almost everywhere" statements are decided on a finite geometric window
//! of indices: a predicate holds eventually when it holds at every sample
//! from the window midpoint on.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use serde::Serialize;

use crate::error::NetError;
use crate::fit::loglog_slope;

/// Quotient structure a net is read in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ScaleTag {
    /// Exponent nets `|x_n| ≤ n^{c_n}`.
    Rho,
    /// Constant exponents `|x_n| ≤ n^c`.
    Asy,
    /// Constant exponents in `ε = 1/n`; classified like `Asy`.
    Colombeau,
}

impl ScaleTag {
    pub fn name(self) -> &'static str {
        match self {
            ScaleTag::Rho => "RHO",
            ScaleTag::Asy => "ASY",
            ScaleTag::Colombeau => "COLOMBEAU",
        }
    }

    pub fn from_name(s: &str) -> Option<ScaleTag> {
        match s.to_ascii_uppercase().as_str() {
            "RHO" => Some(ScaleTag::Rho),
            "ASY" => Some(ScaleTag::Asy),
            "COLOMBEAU" => Some(ScaleTag::Colombeau),
            _ => None,
        }
    }
}

impl fmt::Display for ScaleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

type Generator = dyn Fn(u64) -> f64 + Send + Sync;

/// A deterministic real net with a shared memo table.
#[derive(Clone)]
pub struct Net {
    generator: Arc<Generator>,
    memo: Arc<Mutex<HashMap<u64, f64>>>,
}

impl fmt::Debug for Net {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cached = self.memo.lock().map(|m| m.len()).unwrap_or(0);
        write!(f, "Net({cached} cached values)")
    }
}

impl Net {
    pub fn new(generator: impl Fn(u64) -> f64 + Send + Sync + 'static) -> Net {
        Net { generator: Arc::new(generator), memo: Arc::new(Mutex::new(HashMap::new())) }
    }

    pub fn constant(c: f64) -> Net {
        Net::new(move |_| c)
    }

    /// Net defined only at the listed indices; elsewhere it is singular (NaN).
    pub fn tabulated(values: Vec<(u64, f64)>) -> Net {
        let table: HashMap<u64, f64> = values.into_iter().collect();
        Net::new(move |n| table.get(&n).copied().unwrap_or(f64::NAN))
    }

    pub fn at(&self, n: u64) -> f64 {
        if let Ok(memo) = self.memo.lock() {
            if let Some(v) = memo.get(&n) {
                return *v;
            }
        }
        let v = (self.generator)(n);
        if let Ok(mut memo) = self.memo.lock() {
            memo.insert(n, v);
        }
        v
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Net {
        let a = self.clone();
        Net::new(move |n| f(a.at(n)))
    }

    pub fn zip(&self, other: &Net, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Net {
        let (a, b) = (self.clone(), other.clone());
        Net::new(move |n| f(a.at(n), b.at(n)))
    }
}

/// A finite, increasing set of sample indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Window {
    indices: Vec<u64>,
}

impl Default for Window {
    /// `{2, 4, …, 2^14}`.
    fn default() -> Self {
        Window::doubling(2, 1 << 14).expect("default window is valid")
    }
}

impl Window {
    pub fn new(mut indices: Vec<u64>) -> Result<Window, NetError> {
        indices.sort_unstable();
        indices.dedup();
        if indices.is_empty() {
            return Err(NetError::InvalidWindow("no indices".into()));
        }
        if indices[0] < 2 {
            return Err(NetError::InvalidWindow(format!("index {} is below 2", indices[0])));
        }
        Ok(Window { indices })
    }

    /// Powers of two from `lo` up to `hi` (both rounded into the grid).
    pub fn doubling(lo: u64, hi: u64) -> Result<Window, NetError> {
        if lo < 2 || hi < lo {
            return Err(NetError::InvalidWindow(format!("{lo}:{hi}")));
        }
        let mut v = Vec::new();
        let mut n = lo;
        while n <= hi {
            v.push(n);
            n = match n.checked_mul(2) {
                Some(m) => m,
                None => break,
            };
        }
        Window::new(v)
    }

    /// `count` geometrically spaced integers from `lo` to `hi`.
    pub fn geometric(lo: u64, hi: u64, count: usize) -> Result<Window, NetError> {
        if lo < 2 || hi <= lo || count < 2 {
            return Err(NetError::InvalidWindow(format!("{lo}:{hi} with {count} samples")));
        }
        let ratio = (hi as f64 / lo as f64).ln() / (count - 1) as f64;
        let v = (0..count).map(|i| ((lo as f64).ln() + ratio * i as f64).exp().round() as u64).collect();
        let w = Window::new(v)?;
        if w.len() < count {
            return Err(NetError::InvalidWindow(format!("{lo}:{hi} cannot hold {count} distinct samples")));
        }
        Ok(w)
    }

    pub fn indices(&self) -> &[u64] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn first(&self) -> u64 {
        self.indices[0]
    }

    pub fn last(&self) -> u64 {
        *self.indices.last().expect("window is non-empty")
    }

    /// Median sample; the tail starts here.
    pub fn midpoint(&self) -> u64 {
        self.indices[self.indices.len() / 2]
    }

    pub fn tail(&self) -> &[u64] {
        &self.indices[self.indices.len() / 2..]
    }

    /// The upper half as a window of its own.
    pub fn tail_window(&self) -> Window {
        Window { indices: self.tail().to_vec() }
    }

    pub fn require(&self, min: usize) -> Result<(), NetError> {
        if self.len() < min {
            return Err(NetError::WindowTooSmall { min, got: self.len() });
        }
        Ok(())
    }
}

/// A generalized number given by a representative net.
#[derive(Clone, Debug)]
pub struct GenScalar {
    re: Net,
    im: Option<Net>,
    scale: ScaleTag,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
}

impl GenScalar {
    pub fn real(net: Net, scale: ScaleTag) -> GenScalar {
        GenScalar { re: net, im: None, scale }
    }

    pub fn complex(re: Net, im: Net, scale: ScaleTag) -> GenScalar {
        GenScalar { re, im: Some(im), scale }
    }

    pub fn from_fn(f: impl Fn(u64) -> f64 + Send + Sync + 'static, scale: ScaleTag) -> GenScalar {
        GenScalar::real(Net::new(f), scale)
    }

    pub fn constant(c: f64, scale: ScaleTag) -> GenScalar {
        GenScalar::real(Net::constant(c), scale)
    }

    pub fn complex_constant(z: Complex64, scale: ScaleTag) -> GenScalar {
        GenScalar::complex(Net::constant(z.re), Net::constant(z.im), scale)
    }

    /// The infinitesimal `ρ = [1/n]`.
    pub fn rho(scale: ScaleTag) -> GenScalar {
        GenScalar::from_fn(|n| 1.0 / n as f64, scale)
    }

    /// The infinite number `[n]`.
    pub fn index(scale: ScaleTag) -> GenScalar {
        GenScalar::from_fn(|n| n as f64, scale)
    }

    pub fn scale(&self) -> ScaleTag {
        self.scale
    }

    pub fn with_scale(&self, scale: ScaleTag) -> GenScalar {
        GenScalar { re: self.re.clone(), im: self.im.clone(), scale }
    }

    pub fn is_complex(&self) -> bool {
        self.im.is_some()
    }

    pub fn re_net(&self) -> &Net {
        &self.re
    }

    pub fn im_net(&self) -> Option<&Net> {
        self.im.as_ref()
    }

    pub fn re(&self, n: u64) -> f64 {
        self.re.at(n)
    }

    pub fn im(&self, n: u64) -> f64 {
        self.im.as_ref().map_or(0.0, |i| i.at(n))
    }

    pub fn value(&self, n: u64) -> Complex64 {
        Complex64::new(self.re(n), self.im(n))
    }

    /// `|x_n|` (modulus for complex nets).
    pub fn abs(&self, n: u64) -> f64 {
        match &self.im {
            None => self.re(n).abs(),
            Some(_) => self.value(n).norm(),
        }
    }

    pub fn samples(&self, window: &Window) -> Vec<(u64, Complex64)> {
        window.indices().iter().map(|&n| (n, self.value(n))).collect()
    }

    fn check_scale(&self, other: &GenScalar) -> Result<(), NetError> {
        if self.scale != other.scale {
            return Err(NetError::ScaleMismatch { left: self.scale.to_string(), right: other.scale.to_string() });
        }
        Ok(())
    }

    pub fn add(&self, other: &GenScalar) -> Result<GenScalar, NetError> {
        scalar_arith(self, other, ArithOp::Add)
    }

    pub fn sub(&self, other: &GenScalar) -> Result<GenScalar, NetError> {
        scalar_arith(self, other, ArithOp::Sub)
    }

    pub fn mul(&self, other: &GenScalar) -> Result<GenScalar, NetError> {
        scalar_arith(self, other, ArithOp::Mul)
    }

    pub fn neg(&self) -> GenScalar {
        GenScalar {
            re: self.re.map(|v| -v),
            im: self.im.as_ref().map(|i| i.map(|v| -v)),
            scale: self.scale,
        }
    }

    pub fn scaled(&self, c: f64) -> GenScalar {
        GenScalar {
            re: self.re.map(move |v| c * v),
            im: self.im.as_ref().map(|i| i.map(move |v| c * v)),
            scale: self.scale,
        }
    }

    /// Level-wise image under a real function.
    pub fn map_real(&self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> GenScalar {
        GenScalar::real(self.re.map(f), self.scale)
    }
}

/// Level-wise `a ⊕ b`.
pub fn scalar_arith(a: &GenScalar, b: &GenScalar, op: ArithOp) -> Result<GenScalar, NetError> {
    a.check_scale(b)?;
    let scale = a.scale;
    if !a.is_complex() && !b.is_complex() {
        let net = match op {
            ArithOp::Add => a.re.zip(&b.re, |x, y| x + y),
            ArithOp::Sub => a.re.zip(&b.re, |x, y| x - y),
            ArithOp::Mul => a.re.zip(&b.re, |x, y| x * y),
        };
        return Ok(GenScalar::real(net, scale));
    }
    let (a, b) = (a.clone(), b.clone());
    let combine = move |n: u64| -> Complex64 {
        let (x, y) = (a.value(n), b.value(n));
        match op {
            ArithOp::Add => x + y,
            ArithOp::Sub => x - y,
            ArithOp::Mul => x * y,
        }
    };
    let combine = Arc::new(combine);
    let c2 = combine.clone();
    Ok(GenScalar::complex(Net::new(move |n| combine(n).re), Net::new(move |n| c2(n).im), scale))
}

/// Thresholds of the finite classification procedure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClassifyConfig {
    /// Negligibility is tested for `d = 1..=d_max`.
    pub d_max: u32,
    /// Largest admissible growth exponent for the constant-exponent scales.
    pub exponent_cap: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig { d_max: 8, exponent_cap: 64.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Moderate,
    Negligible,
    Neither,
    /// The moderate bound fails only at head samples before the midpoint.
    Inconclusive,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Moderate => "moderate",
            Verdict::Negligible => "negligible",
            Verdict::Neither => "neither",
            Verdict::Inconclusive => "inconclusive",
        }
    }

    pub fn is_moderate(self) -> bool {
        matches!(self, Verdict::Moderate | Verdict::Negligible)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub verdict: Verdict,
    pub scale: ScaleTag,
    pub moderate: bool,
    pub negligible: bool,
    /// Least-squares slope of `ln|x_n|` against `ln n` over the window.
    pub fitted_exponent: f64,
    pub window: (u64, u64),
    pub samples: Vec<(u64, f64)>,
    /// Largest `d ≤ d_max` for which the decay bound `n^{−d}` holds eventually.
    pub decay_order: u32,
    pub config: ClassifyConfig,
}

fn magnitudes(a: &GenScalar, window: &Window) -> Result<Vec<(u64, f64)>, NetError> {
    window
        .indices()
        .iter()
        .map(|&n| {
            let v = a.abs(n);
            if v.is_finite() {
                Ok((n, v))
            } else {
                Err(NetError::Singular { n })
            }
        })
        .collect()
}

/// Whether `|x_n| ≤ n^{−d}` holds at every sample of the tail (indices from
/// the window midpoint on). Head samples are ignored, so the verdict does not
/// change when the net is multiplied by a nonzero constant.
fn decays_with(samples: &[(u64, f64)], d: u32) -> bool {
    let bound = |n: u64| (n as f64).powi(-(d as i32));
    samples[samples.len() / 2..].iter().all(|&(n, v)| v <= bound(n))
}

/// Decides moderateness and negligibility of `a` on `window`.
pub fn classify(a: &GenScalar, scale: ScaleTag, window: &Window) -> Result<ClassificationReport, NetError> {
    classify_with(a, scale, window, ClassifyConfig::default())
}

pub fn classify_with(
    a: &GenScalar,
    scale: ScaleTag,
    window: &Window,
    config: ClassifyConfig,
) -> Result<ClassificationReport, NetError> {
    window.require(8)?;
    let samples = magnitudes(a, window)?;
    classify_samples(samples, scale, window, config)
}

/// Classification of precomputed magnitudes (used for sup-norm nets).
pub fn classify_samples(
    samples: Vec<(u64, f64)>,
    scale: ScaleTag,
    window: &Window,
    config: ClassifyConfig,
) -> Result<ClassificationReport, NetError> {
    if let Some(&(n, _)) = samples.iter().find(|(_, v)| !v.is_finite()) {
        return Err(NetError::Singular { n });
    }
    let pts: Vec<(f64, f64)> = samples.iter().map(|&(n, v)| (n as f64, v)).collect();
    let fitted_exponent = loglog_slope(&pts);
    let decay_order = (1..=config.d_max).take_while(|&d| decays_with(&samples, d)).last().unwrap_or(0);
    let (moderate, negligible, verdict) = match scale {
        ScaleTag::Rho => {
            // every finite sample has a witness exponent c_n = ⌈ln|x_n| / ln n⌉
            let negligible = decays_with(&samples, config.d_max);
            (true, negligible, if negligible { Verdict::Negligible } else { Verdict::Moderate })
        }
        ScaleTag::Asy | ScaleTag::Colombeau => {
            let cap = config.exponent_cap;
            let within = |&(n, v): &(u64, f64)| v <= (n as f64).powf(cap);
            let slope_ok = !(fitted_exponent > cap);
            let all_ok = samples.iter().all(within);
            let mid = window.midpoint();
            let tail_ok = samples.iter().filter(|(n, _)| *n >= mid).all(within);
            let moderate = slope_ok && all_ok;
            let negligible = moderate && (1..=config.d_max).all(|d| decays_with(&samples, d));
            let verdict = if negligible {
                Verdict::Negligible
            } else if moderate {
                Verdict::Moderate
            } else if slope_ok && tail_ok {
                Verdict::Inconclusive
            } else {
                Verdict::Neither
            };
            (moderate, negligible, verdict)
        }
    };
    Ok(ClassificationReport {
        verdict,
        scale,
        moderate,
        negligible,
        fitted_exponent,
        window: (window.first(), window.last()),
        samples,
        decay_order,
        config,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    EventuallyLess,
    EventuallyGreater,
    EventuallyEqual,
    Mixed,
}

impl Comparison {
    pub fn name(self) -> &'static str {
        match self {
            Comparison::EventuallyLess => "eventually_less",
            Comparison::EventuallyGreater => "eventually_greater",
            Comparison::EventuallyEqual => "eventually_equal",
            Comparison::Mixed => "mixed",
        }
    }
}

/// Sign pattern of `a − b` on the window tail.
pub fn compare(a: &GenScalar, b: &GenScalar, window: &Window) -> Result<Comparison, NetError> {
    a.check_scale(b)?;
    if a.is_complex() || b.is_complex() {
        return Err(NetError::ComplexOrdering);
    }
    let mut signs = window.tail().iter().map(|&n| {
        let d = a.re(n) - b.re(n);
        if d.is_nan() {
            Err(NetError::Singular { n })
        } else {
            Ok(d.partial_cmp(&0.0).expect("not NaN"))
        }
    });
    let first = signs.next().expect("window is non-empty")?;
    for s in signs {
        if s? != first {
            return Ok(Comparison::Mixed);
        }
    }
    Ok(match first {
        std::cmp::Ordering::Less => Comparison::EventuallyLess,
        std::cmp::Ordering::Greater => Comparison::EventuallyGreater,
        std::cmp::Ordering::Equal => Comparison::EventuallyEqual,
    })
}

/// Default `floor_exponent` of [`invert`].
pub const INVERT_FLOOR_EXPONENT: i32 = 16;

/// Closest double to `1/a` whose product with `a` rounds to exactly 1 when
/// such a neighbour exists.
fn exact_reciprocal(a: f64) -> f64 {
    let b = 1.0 / a;
    if a * b == 1.0 {
        return b;
    }
    for c in [b.next_up(), b.next_down()] {
        if a * c == 1.0 {
            return c;
        }
    }
    b
}

fn exact_reciprocal_complex(z: Complex64) -> Complex64 {
    if z.im == 0.0 {
        return Complex64::new(exact_reciprocal(z.re), 0.0);
    }
    z.inv()
}

/// `b_n = 1/a_n` where `|a_n| ≥ n^{−floor_exponent}`, else `1`.
pub fn invert(a: &GenScalar, floor_exponent: i32, window: &Window) -> Result<GenScalar, NetError> {
    let report = classify(a, a.scale(), window)?;
    if report.negligible {
        return Err(NetError::Negligible);
    }
    let valid = move |n: u64, m: f64| m >= (n as f64).powi(-floor_exponent);
    if !a.is_complex() {
        let src = a.clone();
        return Ok(GenScalar::from_fn(
            move |n| {
                let v = src.re(n);
                if valid(n, v.abs()) {
                    exact_reciprocal(v)
                } else {
                    1.0
                }
            },
            a.scale(),
        ));
    }
    let src = a.clone();
    let inv = Arc::new(move |n: u64| {
        let z = src.value(n);
        if valid(n, z.norm()) {
            exact_reciprocal_complex(z)
        } else {
            Complex64::new(1.0, 0.0)
        }
    });
    let inv2 = inv.clone();
    Ok(GenScalar::complex(Net::new(move |n| inv(n).re), Net::new(move |n| inv2(n).im), a.scale()))
}

/// Default relative residual tolerance for [`poly_roots`].
pub const ROOT_TOL: f64 = 1e-9;

/// Horner evaluation of `p` (leading coefficient first) and its derivative.
fn horner(coeffs: &[Complex64], z: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::new(0.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for &c in coeffs {
        dp = dp * z + p;
        p = p * z + c;
    }
    (p, dp)
}

/// All complex roots of one polynomial by Aberth–Ehrlich iteration, polished
/// with Newton steps.
pub fn solve_polynomial(coeffs: &[Complex64]) -> Vec<Complex64> {
    let deg = coeffs.len() - 1;
    if deg == 0 {
        return Vec::new();
    }
    let lead = coeffs[0];
    let radius = 1.0 + coeffs[1..].iter().map(|c| (c / lead).norm()).fold(0.0, f64::max);
    let mut z: Vec<Complex64> = (0..deg)
        .map(|k| Complex64::from_polar(0.5 * radius, 0.4 + std::f64::consts::TAU * k as f64 / deg as f64))
        .collect();
    for _ in 0..500 {
        let mut moved: f64 = 0.0;
        for k in 0..deg {
            let (p, dp) = horner(coeffs, z[k]);
            if p.norm() == 0.0 {
                continue;
            }
            let ratio = p / dp;
            let repulsion: Complex64 = (0..deg).filter(|&j| j != k).map(|j| (z[k] - z[j]).inv()).sum();
            let step = ratio / (Complex64::new(1.0, 0.0) - ratio * repulsion);
            if step.is_finite() {
                z[k] -= step;
                moved = moved.max(step.norm() / (1.0 + z[k].norm()));
            }
        }
        if moved < 1e-16 {
            break;
        }
    }
    for r in z.iter_mut() {
        for _ in 0..3 {
            let (p, dp) = horner(coeffs, *r);
            if dp.norm() == 0.0 {
                break;
            }
            let cand = *r - p / dp;
            if cand.is_finite() && horner(coeffs, cand).0.norm() < p.norm() {
                *r = cand;
            } else {
                break;
            }
        }
    }
    z
}

#[derive(Clone, Debug)]
pub struct RootNet {
    pub root: GenScalar,
    /// `|P_n(x_n)|` per sampled level.
    pub residuals: Vec<(u64, f64)>,
    /// Whether `|x_n| ≤ 1 + Σ|a_{k,n}/a_{0,n}|` at every level.
    pub within_bound: bool,
}

#[derive(Clone, Debug)]
pub struct RootsReport {
    pub roots: Vec<RootNet>,
    /// Two candidate continuations were closer than the matching tolerance.
    pub branch_ambiguous: bool,
    /// `max_n |P_n(x_n)| / (1 + Σ_k |a_{k,n}|)`.
    pub max_relative_residual: f64,
}

/// Level-wise roots of `Σ_k a_k x^{deg−k}` (leading coefficient first),
/// continued across levels by nearest-neighbour matching.
pub fn poly_roots(coeffs: &[GenScalar], window: &Window) -> Result<RootsReport, NetError> {
    if coeffs.len() < 2 {
        return Err(NetError::DegeneratePolynomial);
    }
    let scale = coeffs[0].scale();
    for c in coeffs {
        if c.scale() != scale {
            return Err(NetError::ScaleMismatch { left: scale.to_string(), right: c.scale().to_string() });
        }
    }
    if window.len() >= 8 && classify(&coeffs[0], scale, window)?.negligible {
        return Err(NetError::Negligible);
    }
    let deg = coeffs.len() - 1;
    let mut tracks: Vec<Vec<(u64, Complex64)>> = vec![Vec::new(); deg];
    let mut residuals: Vec<Vec<(u64, f64)>> = vec![Vec::new(); deg];
    let mut bound_ok = vec![true; deg];
    let mut ambiguous = false;
    let mut max_rel: f64 = 0.0;
    let mut prev: Option<Vec<Complex64>> = None;
    for &n in window.indices() {
        let a: Vec<Complex64> = coeffs.iter().map(|c| c.value(n)).collect();
        if let Some(bad) = a.iter().position(|c| !c.is_finite()) {
            let _ = bad;
            return Err(NetError::Singular { n });
        }
        if a[0].norm() == 0.0 {
            return Err(NetError::Negligible);
        }
        let mut roots = solve_polynomial(&a);
        match &prev {
            None => roots.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im))),
            Some(p) => {
                let (matched, amb) = match_roots(p, &roots);
                ambiguous |= amb;
                roots = matched;
            }
        }
        let magnitude = 1.0 + a.iter().map(|c| c.norm()).sum::<f64>();
        let bound = 1.0 + a[1..].iter().map(|c| (c / a[0]).norm()).sum::<f64>();
        for (i, r) in roots.iter().enumerate() {
            let res = horner(&a, *r).0.norm();
            max_rel = max_rel.max(res / magnitude);
            residuals[i].push((n, res));
            bound_ok[i] &= r.norm() <= bound * (1.0 + 1e-12);
            tracks[i].push((n, *r));
        }
        prev = Some(roots);
    }
    let roots = tracks
        .into_iter()
        .zip(residuals)
        .zip(bound_ok)
        .map(|((track, residuals), within_bound)| {
            let size = track.iter().map(|(_, z)| z.norm()).fold(0.0, f64::max);
            let real = track.iter().all(|(_, z)| z.im.abs() <= 1e-12 * (1.0 + size));
            let re = Net::tabulated(track.iter().map(|(n, z)| (*n, z.re)).collect());
            let root = if real {
                GenScalar::real(re, scale)
            } else {
                GenScalar::complex(re, Net::tabulated(track.iter().map(|(n, z)| (*n, z.im)).collect()), scale)
            };
            RootNet { root, residuals, within_bound }
        })
        .collect();
    Ok(RootsReport { roots, branch_ambiguous: ambiguous, max_relative_residual: max_rel })
}

/// Reorders `next` to follow `prev`; the flag reports an ambiguous match.
fn match_roots(prev: &[Complex64], next: &[Complex64]) -> (Vec<Complex64>, bool) {
    let m = prev.len();
    let mut min_gap = f64::INFINITY;
    for i in 0..m {
        for j in i + 1..m {
            min_gap = min_gap.min((prev[i] - prev[j]).norm());
        }
    }
    let tol = 0.5 * min_gap;
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(m * m);
    for (i, p) in prev.iter().enumerate() {
        for (j, q) in next.iter().enumerate() {
            pairs.push(((p - q).norm(), i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = vec![None; m];
    let mut used = vec![false; m];
    for &(_, i, j) in &pairs {
        if out[i].is_none() && !used[j] {
            out[i] = Some(next[j]);
            used[j] = true;
        }
    }
    // clustered roots are only resolved to about √ε, so closer candidates
    // cannot be told apart either
    let ambiguous = m > 1
        && prev.iter().any(|p| {
            let radius = tol.max(1e-7 * (1.0 + p.norm()));
            next.iter().filter(|q| (p - *q).norm() < radius).count() > 1
        });
    (out.into_iter().map(|z| z.expect("bijective matching")).collect(), ambiguous)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const A: ScaleTag = ScaleTag::Asy;

    #[test]
    fn level_wise_arithmetic() {
        let w = Window::default();
        let rho = GenScalar::rho(A);
        let two_rho = rho.add(&rho).unwrap();
        let one = rho.mul(&GenScalar::index(A)).unwrap();
        let diff = GenScalar::index(A).sub(&GenScalar::from_fn(|n| n as f64 - 1.0, A)).unwrap();
        for &n in w.indices() {
            assert_eq!(two_rho.re(n), 2.0 / n as f64);
            assert_eq!(one.re(n), 1.0);
            assert_eq!(diff.re(n), 1.0);
        }
    }

    #[test]
    fn scale_mismatch_is_an_error() {
        let r = GenScalar::rho(ScaleTag::Rho).add(&GenScalar::rho(A));
        assert!(matches!(r, Err(NetError::ScaleMismatch { .. })));
    }

    #[test]
    fn default_window_shape() {
        let w = Window::default();
        assert_eq!(w.len(), 14);
        assert_eq!(w.first(), 2);
        assert_eq!(w.last(), 16384);
        assert_eq!(w.midpoint(), 256);
    }

    #[test]
    fn classify_examples() {
        let w = Window::default();
        let rho = classify(&GenScalar::rho(A), A, &w).unwrap();
        assert_eq!(rho.verdict, Verdict::Moderate);
        assert_abs_diff_eq!(rho.fitted_exponent, -1.0, epsilon = 1e-12);
        assert_eq!(rho.decay_order, 1);
        let e = GenScalar::from_fn(|n| (-(n as f64)).exp(), A);
        assert_eq!(classify(&e, A, &w).unwrap().verdict, Verdict::Negligible);
        assert_eq!(classify(&e, ScaleTag::Rho, &w).unwrap().verdict, Verdict::Negligible);
    }

    #[test]
    fn exponential_growth_separates_scales() {
        let w = Window::geometric(2, 1000, 12).unwrap();
        let p = GenScalar::from_fn(|n| 2f64.powi(n as i32), A);
        assert_eq!(classify(&p, ScaleTag::Rho, &w).unwrap().verdict, Verdict::Moderate);
        assert_eq!(classify(&p, A, &w).unwrap().verdict, Verdict::Neither);
        // the witness exponent net c_n = n works directly
        for &n in w.indices() {
            assert!(2f64.powi(n as i32) <= (n as f64).powi(n as i32));
        }
    }

    #[test]
    fn singular_sample_is_reported() {
        let p = GenScalar::from_fn(|n| 2f64.powi(n as i32), A);
        assert!(matches!(classify(&p, A, &Window::default()), Err(NetError::Singular { n: 1024 })));
    }

    #[test]
    fn head_only_violation_is_inconclusive() {
        let w = Window::default();
        let spike = GenScalar::from_fn(|n| if n == 2 { 1e300 } else { 1.0 }, A);
        assert_eq!(classify(&spike, A, &w).unwrap().verdict, Verdict::Inconclusive);
    }

    #[test]
    fn compare_examples() {
        let w = Window::default();
        let zero = GenScalar::constant(0.0, A);
        let rho = GenScalar::rho(A);
        assert_eq!(compare(&rho, &zero, &w).unwrap(), Comparison::EventuallyGreater);
        let wide = Window::doubling(16, 1 << 20).unwrap();
        assert_eq!(compare(&rho, &GenScalar::constant(0.001, A), &wide).unwrap(), Comparison::EventuallyLess);
        let alt = GenScalar::from_fn(|n| if n % 2 == 0 { 1.0 } else { -1.0 } / n as f64, A);
        let mixed_window = Window::new((2..40).collect()).unwrap();
        assert_eq!(compare(&alt, &zero, &mixed_window).unwrap(), Comparison::Mixed);
        let c = GenScalar::complex_constant(Complex64::new(0.0, 1.0), A);
        assert_eq!(compare(&c, &zero, &w), Err(NetError::ComplexOrdering));
    }

    #[test]
    fn invert_examples() {
        let w = Window::default();
        let rho = GenScalar::rho(A);
        let inv = invert(&rho, INVERT_FLOOR_EXPONENT, &w).unwrap();
        let alt = GenScalar::from_fn(|n| 2.0 + if n % 2 == 0 { 1.0 } else { -1.0 }, A);
        let inv_alt = invert(&alt, INVERT_FLOOR_EXPONENT, &w).unwrap();
        let odd = Window::new(vec![3, 5, 7, 9, 11, 13, 15, 17, 19]).unwrap();
        for &n in w.indices().iter().chain(odd.indices()) {
            assert_eq!(rho.re(n) * inv.re(n) - 1.0, 0.0);
            assert_eq!(alt.re(n) * inv_alt.re(n) - 1.0, 0.0);
        }
        let e = GenScalar::from_fn(|n| (-(n as f64)).exp(), A);
        assert_eq!(invert(&e, INVERT_FLOOR_EXPONENT, &w).unwrap_err(), NetError::Negligible);
    }

    #[test]
    fn roots_of_simple_polynomials() {
        let w = Window::default();
        let c = |v: f64| GenScalar::constant(v, A);
        let r = poly_roots(&[c(1.0), c(0.0), c(-4.0)], &w).unwrap();
        assert_abs_diff_eq!(r.roots[0].root.re(64), -2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r.roots[1].root.re(64), 2.0, epsilon = 1e-14);
        let r = poly_roots(&[c(1.0), c(0.0), GenScalar::rho(A).neg()], &w).unwrap();
        for &n in w.indices() {
            let s = (n as f64).powf(-0.5);
            assert_abs_diff_eq!(r.roots[0].root.re(n), -s, epsilon = 1e-10);
            assert_abs_diff_eq!(r.roots[1].root.re(n), s, epsilon = 1e-10);
        }
        let r = poly_roots(&[c(1.0), c(0.0), c(1.0)], &w).unwrap();
        let mut ims: Vec<f64> = r.roots.iter().map(|x| x.root.im(8)).collect();
        ims.sort_by(f64::total_cmp);
        assert_abs_diff_eq!(ims[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(ims[1], 1.0, epsilon = 1e-14);
        assert!(r.roots.iter().all(|x| x.within_bound));
    }

    #[test]
    fn double_root_is_flagged_ambiguous() {
        let c = |v: f64| GenScalar::constant(v, A);
        let r = poly_roots(&[c(1.0), c(-2.0), c(1.0)], &Window::default()).unwrap();
        assert!(r.branch_ambiguous);
        assert!(r.max_relative_residual <= ROOT_TOL);
    }
}
