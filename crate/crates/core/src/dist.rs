//! Structured distributions `Σ c·D^α B` and their embeddings as nets of
//! smooth functions `T ∗ ϱ_n`.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{DistError, EvalError, GFuncError};
use crate::expr::{Expr, Primitive};
use crate::fit::{decay_fit, DEFAULT_NOISE_FLOOR};
use crate::geometry::PLMap;
use crate::gfunc::{hot_breaks, pair_level, GFunc};
use crate::jet::{Jet, JetLayout, MultiIndex};
use crate::mollifier::Mollifier;
use crate::net::Window;
use crate::quadrature::{integrate_box, integrate_box_vec, QuadOptions};
use crate::smooth::{tensor_points, DomainBox, SmoothMap};

/// Building blocks of structured distributions.
#[derive(Clone, Debug, PartialEq)]
pub enum Base {
    /// Dirac mass at a point.
    PointMass { at: Vec<f64> },
    /// `H(x − at)` in one dimension.
    Heaviside { at: f64 },
    /// The regular distribution `f·1_K` with `K = f.domain()`.
    Smooth { f: SmoothMap },
    /// A scalar piecewise map, zero outside its domain.
    Piecewise(PLMap),
}

impl Base {
    pub fn dim(&self) -> usize {
        match self {
            Base::PointMass { at } => at.len(),
            Base::Heaviside { .. } => 1,
            Base::Smooth { f } => f.in_dim(),
            Base::Piecewise(g) => g.in_dim(),
        }
    }
}

/// `coeff · D^α base`.
#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub coeff: f64,
    pub alpha: MultiIndex,
    pub base: Base,
}

impl Term {
    pub fn new(coeff: f64, alpha: MultiIndex, base: Base) -> Term {
        Term { coeff, alpha, base }
    }
}

/// Closed pieces of a support descriptor.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum SupportPiece {
    Point(Vec<f64>),
    Box(Vec<(f64, f64)>),
}

impl SupportPiece {
    fn inflated_contains(&self, x: &[f64], r: f64) -> bool {
        match self {
            SupportPiece::Point(p) => p.iter().zip(x).all(|(a, b)| (a - b).abs() <= r),
            SupportPiece::Box(b) => b.iter().zip(x).all(|(&(lo, hi), &v)| v >= lo - r && v <= hi + r),
        }
    }
}

/// A finite sum of derivatives of base distributions on an open box `U`.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution {
    pub domain: DomainBox,
    pub terms: Vec<Term>,
}

impl Distribution {
    pub fn new(domain: DomainBox, terms: Vec<Term>) -> Result<Distribution, DistError> {
        let d = Distribution { domain, terms };
        d.validate()?;
        Ok(d)
    }

    pub fn zero(domain: DomainBox) -> Distribution {
        Distribution { domain, terms: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    fn single(domain: DomainBox, alpha: MultiIndex, base: Base) -> Result<Distribution, DistError> {
        Distribution::new(domain, vec![Term::new(1.0, alpha, base)])
    }

    /// `D^α δ_a`.
    pub fn delta(domain: DomainBox, at: Vec<f64>, alpha: MultiIndex) -> Result<Distribution, DistError> {
        Distribution::single(domain, alpha, Base::PointMass { at })
    }

    /// `D^j H(x − a)` in one dimension.
    pub fn heaviside(domain: DomainBox, at: f64, order: u32) -> Result<Distribution, DistError> {
        Distribution::single(domain, MultiIndex(vec![order]), Base::Heaviside { at })
    }

    pub fn smooth(domain: DomainBox, f: SmoothMap) -> Result<Distribution, DistError> {
        let k = domain.dim();
        Distribution::single(domain, MultiIndex::zero(k), Base::Smooth { f })
    }

    pub fn piecewise(domain: DomainBox, g: PLMap) -> Result<Distribution, DistError> {
        let k = domain.dim();
        Distribution::single(domain, MultiIndex::zero(k), Base::Piecewise(g))
    }

    fn validate(&self) -> Result<(), DistError> {
        let k = self.dim();
        for t in &self.terms {
            if t.alpha.dim() != k || t.base.dim() != k {
                return Err(DistError::Dimension(format!("term of dimension {} in a {k}-D domain", t.base.dim())));
            }
            match &t.base {
                Base::Smooth { f } if f.out_dim() != 1 => {
                    return Err(DistError::Dimension("smooth terms must be scalar".into()));
                }
                Base::Piecewise(g) if g.out_dim() != 1 => {
                    return Err(DistError::Dimension("piecewise terms must be scalar".into()));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn add(&self, other: &Distribution) -> Result<Distribution, DistError> {
        if self.domain != other.domain {
            return Err(DistError::Dimension("distributions live on different domains".into()));
        }
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Ok(Distribution { domain: self.domain.clone(), terms })
    }

    pub fn scaled(&self, c: f64) -> Distribution {
        let terms = self.terms.iter().map(|t| Term { coeff: c * t.coeff, ..t.clone() }).collect();
        Distribution { domain: self.domain.clone(), terms }
    }

    /// `D^β T`.
    pub fn derive(&self, beta: &MultiIndex) -> Distribution {
        let terms = self.terms.iter().map(|t| Term { alpha: t.alpha.add(beta), ..t.clone() }).collect();
        Distribution { domain: self.domain.clone(), terms }
    }

    /// Support descriptor as a union of points and boxes, clipped to `U`.
    pub fn support(&self) -> Vec<SupportPiece> {
        let mut out = Vec::new();
        for t in &self.terms {
            if t.coeff == 0.0 {
                continue;
            }
            let piece = match &t.base {
                Base::PointMass { at } => SupportPiece::Point(at.clone()),
                Base::Heaviside { at } => SupportPiece::Box(vec![(*at, self.domain.bounds[0].1)]),
                Base::Smooth { f } => SupportPiece::Box(clip(&f.domain().bounds, &self.domain.bounds)),
                Base::Piecewise(g) => SupportPiece::Box(clip(&g.domain().bounds, &self.domain.bounds)),
            };
            if !out.contains(&piece) {
                out.push(piece);
            }
        }
        out
    }

    /// Errors unless every term has compact support inside the open box `U`
    /// (Heaviside terms use their closed form on the whole line instead).
    pub fn check_compact(&self) -> Result<(), DistError> {
        let inside = |b: &[(f64, f64)]| {
            b.iter().zip(&self.domain.bounds).all(|(&(lo, hi), &(ulo, uhi))| {
                lo.is_finite() && hi.is_finite() && lo > ulo && hi < uhi
            })
        };
        for t in &self.terms {
            let ok = match &t.base {
                Base::PointMass { at } => inside(&at.iter().map(|&a| (a, a)).collect::<Vec<_>>()),
                Base::Heaviside { .. } => true,
                Base::Smooth { f } => inside(&f.domain().bounds),
                Base::Piecewise(g) => inside(&g.domain().bounds),
            };
            if !ok {
                return Err(DistError::NotCompact(format!("{} term", base_name(&t.base))));
            }
        }
        Ok(())
    }

    fn hot_spots(&self) -> Vec<Vec<f64>> {
        let mut spots: Vec<Vec<f64>> = Vec::new();
        let mut push = |p: Vec<f64>| {
            if !spots.contains(&p) {
                spots.push(p);
            }
        };
        for t in &self.terms {
            match &t.base {
                Base::PointMass { at } => push(at.clone()),
                Base::Heaviside { at } => push(vec![*at]),
                Base::Smooth { f } => corners(&f.domain().bounds).into_iter().for_each(&mut push),
                Base::Piecewise(g) => {
                    if g.in_dim() == 1 {
                        g.breakpoints()[0].iter().filter(|b| b.is_finite()).for_each(|&b| push(vec![b]));
                    }
                }
            }
        }
        spots
    }
}

fn base_name(b: &Base) -> &'static str {
    match b {
        Base::PointMass { .. } => "point-mass",
        Base::Heaviside { .. } => "Heaviside",
        Base::Smooth { .. } => "smooth",
        Base::Piecewise(_) => "piecewise",
    }
}

fn clip(b: &[(f64, f64)], u: &[(f64, f64)]) -> Vec<(f64, f64)> {
    b.iter().zip(u).map(|(&(a, c), &(lo, hi))| (a.max(lo), c.min(hi))).collect()
}

fn corners(b: &[(f64, f64)]) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = b.iter().map(|&(lo, hi)| vec![lo, hi]).collect();
    tensor_points(&axes).into_iter().filter(|p| p.iter().all(|v| v.is_finite())).collect()
}

/// A compactly evaluated regular function `y ↦ r(y)` that vanishes outside
/// `support`; `breaks[i]` lists kink coordinates along axis `i` and
/// `planes` lists slanted kink hyperplanes `a·y = c`.
#[derive(Clone)]
pub struct RegularFn {
    eval: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    support: Vec<(f64, f64)>,
    breaks: Vec<Vec<f64>>,
    planes: Vec<(Vec<f64>, f64)>,
}

impl RegularFn {
    pub fn new(
        support: Vec<(f64, f64)>,
        breaks: Vec<Vec<f64>>,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> RegularFn {
        RegularFn { eval: Arc::new(eval), support, breaks, planes: Vec::new() }
    }

    pub fn with_planes(mut self, planes: Vec<(Vec<f64>, f64)>) -> RegularFn {
        self.planes = planes;
        self
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        (self.eval)(y)
    }
}

/// Level-`n` convolution `x ↦ n^{|α|} ∫ r(x − s/n) D^α ϱ(s) ds`, with
/// derivatives taken under the integral sign.
pub struct ConvolutionPrimitive {
    f: RegularFn,
    mollifier: Mollifier,
    n: u64,
    alpha: MultiIndex,
    tol: f64,
}

/// Default accuracy of quadrature-backed level maps.
pub const CONVOLUTION_TOL: f64 = 1e-13;

impl ConvolutionPrimitive {
    pub fn new(f: RegularFn, mollifier: Mollifier, n: u64, alpha: MultiIndex) -> ConvolutionPrimitive {
        ConvolutionPrimitive { f, mollifier, n, alpha, tol: CONVOLUTION_TOL }
    }

    pub fn into_expr(self) -> Expr {
        let k = self.mollifier.dimension();
        Expr::call(Arc::new(self), Expr::vars(k))
    }

    /// `n^{|γ|} ∫ r(x − s/n) D^γ ϱ(s) ds` for every requested `γ`.
    fn integrals(&self, x: &[f64], gammas: &[MultiIndex]) -> Result<Vec<f64>, EvalError> {
        let k = x.len();
        let nf = self.n as f64;
        let r = self.mollifier.radius();
        let mut bounds = Vec::with_capacity(k);
        for i in 0..k {
            let (lo, hi) = self.f.support[i];
            let a = (nf * (x[i] - hi)).max(-r);
            let b = (nf * (x[i] - lo)).min(r);
            if !(a < b) {
                return Ok(vec![0.0; gammas.len()]);
            }
            bounds.push((a, b));
        }
        let breaks: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                let mut v: Vec<f64> = self.f.breaks.get(i).map_or(Vec::new(), |bs| bs.iter().map(|b| nf * (x[i] - b)).collect());
                v.push(0.0);
                v
            })
            .collect();
        let max_order = gammas.iter().flat_map(|g| g.0.iter().copied()).max().unwrap_or(0) as usize;
        let mut y = vec![0.0; k];
        let mut factorials = vec![1.0; max_order + 1];
        for j in 1..=max_order {
            factorials[j] = factorials[j - 1] * j as f64;
        }
        let opts = QuadOptions { abs_tol: self.tol, rel_tol: self.tol, ..QuadOptions::default() };
        let mut taylors: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut point = |s: &[f64], out: &mut [f64]| {
            for i in 0..k {
                y[i] = x[i] - s[i] / nf;
            }
            let fv = self.f.eval(&y);
            if fv == 0.0 {
                return;
            }
            if max_order == 0 {
                let p = s.iter().fold(fv, |acc, &si| acc * self.mollifier.profile(si));
                out.iter_mut().for_each(|o| *o = p);
                return;
            }
            taylors.clear();
            taylors.extend(s.iter().map(|&si| self.mollifier.profile_taylor(si, max_order)));
            for (o, g) in out.iter_mut().zip(gammas) {
                let mut p = fv;
                for i in 0..k {
                    let gi = g.0[i] as usize;
                    p *= taylors[i][gi] * factorials[gi];
                }
                *o = p;
            }
        };
        let res = if k == 2 && !self.f.planes.is_empty() {
            // slanted kinks: iterate 1-D rules with exact crossings
            let planes: Vec<(f64, f64, f64)> = self
                .f
                .planes
                .iter()
                .map(|(a, c)| (a[0], a[1], nf * (a[0] * x[0] + a[1] * x[1] - c)))
                .collect();
            let mut outer_breaks = breaks[1].clone();
            for (i, &(a0, a1, c)) in planes.iter().enumerate() {
                if a0 == 0.0 {
                    outer_breaks.push(c / a1);
                }
                for &(b0, b1, d) in &planes[i + 1..] {
                    let det = a0 * b1 - a1 * b0;
                    if det != 0.0 {
                        outer_breaks.push((a0 * d - b0 * c) / det);
                    }
                }
            }
            let mut s = [0.0; 2];
            integrate_box_vec(
                |t, out| {
                    let mut inner_breaks = breaks[0].clone();
                    inner_breaks.extend(planes.iter().filter(|p| p.0 != 0.0).map(|&(a0, a1, c)| (c - a1 * t[0]) / a0));
                    let r = integrate_box_vec(
                        |u, o| {
                            s[0] = u[0];
                            s[1] = t[0];
                            point(&s, o)
                        },
                        gammas.len(),
                        &bounds[..1],
                        &[inner_breaks],
                        opts,
                    );
                    out.copy_from_slice(&r.values);
                },
                gammas.len(),
                &bounds[1..],
                &[outer_breaks],
                opts,
            )
        } else {
            integrate_box_vec(point, gammas.len(), &bounds, &breaks, opts)
        };
        if res.values.iter().any(|v| !v.is_finite()) {
            return Err(EvalError::NonFinite);
        }
        Ok(res.values.iter().zip(gammas).map(|(v, g)| v * nf.powi(g.order() as i32)).collect())
    }
}

impl Primitive for ConvolutionPrimitive {
    fn name(&self) -> &str {
        "conv"
    }

    fn arity(&self) -> usize {
        self.mollifier.dimension()
    }

    fn eval(&self, args: &[f64]) -> Result<f64, EvalError> {
        Ok(self.integrals(args, std::slice::from_ref(&self.alpha))?[0])
    }

    fn jet(&self, args: &[f64], order: usize) -> Result<Jet, EvalError> {
        Jet::check_order(order)?;
        let layout = JetLayout::get(args.len(), order);
        let gammas: Vec<MultiIndex> = layout.indices().iter().map(|b| self.alpha.add(b)).collect();
        let vals = self.integrals(args, &gammas)?;
        let coeffs = vals.iter().zip(layout.indices()).map(|(v, b)| v / b.factorial()).collect();
        Ok(Jet::from_coeffs(args, order, coeffs))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedMode {
    Compact,
    Global,
}

/// An embedded distribution together with its provenance.
#[derive(Clone, Debug)]
pub struct EmbeddedDistribution {
    pub gfunc: GFunc,
    pub source: Distribution,
    pub mollifier: Mollifier,
    pub mode: EmbedMode,
}

fn check_mollifier(t: &Distribution, m: &Mollifier) -> Result<(), DistError> {
    if m.dimension() != t.dim() {
        return Err(DistError::Dimension(format!("mollifier dimension {} for a {}-D distribution", m.dimension(), t.dim())));
    }
    if t.dim() > 2 {
        return Err(DistError::Unsupported("embedding is implemented for dimensions 1 and 2".into()));
    }
    Ok(())
}

/// `ϱ_n(x − a)` as an expression in `k` variables.
fn shifted_mollifier(m: &Mollifier, n: u64, at: &[f64]) -> Expr {
    let args: Vec<Expr> = at
        .iter()
        .enumerate()
        .map(|(i, &a)| if a == 0.0 { Expr::var(i) } else { Expr::var(i) - a })
        .collect();
    m.scaled_expr(n).substitute(&args)
}

fn scaled_shift(n: u64, at: f64) -> Expr {
    let x = if at == 0.0 { Expr::var(0) } else { Expr::var(0) - at };
    (n as f64) * x
}

/// Closed-form `g ∗ ϱ_n` for a scalar 1-D map with affine pieces `a + b y`
/// on `[p, q]`: `(a + b x)[F(n(x−p)) − F(n(x−q))] − (b/n)[G(n(x−p)) − G(n(x−q))]`.
pub fn affine_pieces_level(m: &Mollifier, n: u64, pieces: &[(f64, f64, f64, f64)]) -> Expr {
    let nf = n as f64;
    // F(n(x − p)) is 1 for p = −∞ and F(n(x − q)) is 0 for q = +∞
    let lower_mass = |p: f64| if p.is_infinite() { Expr::constant(1.0) } else { m.cumulative_expr(&scaled_shift(n, p)) };
    let upper_mass = |q: f64| if q.is_infinite() { Expr::constant(0.0) } else { m.cumulative_expr(&scaled_shift(n, q)) };
    let mom = |bound: f64| -> Expr {
        if bound.is_infinite() {
            Expr::constant(0.0)
        } else {
            m.first_moment_expr(&scaled_shift(n, bound))
        }
    };
    let mut total: Option<Expr> = None;
    for &(p, q, a, b) in pieces {
        let lin = if b == 0.0 { Expr::constant(a) } else { a + b * Expr::var(0) };
        let mass = lower_mass(p) - upper_mass(q);
        let mut piece = lin * mass;
        if b != 0.0 {
            piece = piece - (b / nf) * (mom(p) - mom(q));
        }
        total = Some(match total {
            None => piece,
            Some(t) => t + piece,
        });
    }
    total.unwrap_or_else(|| Expr::constant(0.0))
}

fn with_coeff(c: f64, e: Expr) -> Expr {
    if c == 1.0 {
        e
    } else {
        c * e
    }
}

fn sum_exprs(items: Vec<Expr>) -> Expr {
    items.into_iter().reduce(|a, b| a + b).unwrap_or_else(|| Expr::constant(0.0))
}

fn piecewise_regular(g: &PLMap, factor: Option<Expr>, support: Vec<(f64, f64)>) -> RegularFn {
    let g = g.clone();
    let breaks = g.breakpoints();
    RegularFn::new(support, breaks, move |y| {
        if !g.domain().contains(y) {
            return 0.0;
        }
        let v = g.eval(y).map_or(f64::NAN, |v| v[0]);
        match &factor {
            None => v,
            Some(h) => h.eval(y).map_or(f64::NAN, |h| h * v),
        }
    })
}

fn smooth_regular(f: &SmoothMap, factor: Option<Expr>, support: Vec<(f64, f64)>) -> RegularFn {
    let e = f.component(0).clone();
    RegularFn::new(support, Vec::new(), move |y| {
        let v = e.eval(y).unwrap_or(f64::NAN);
        match &factor {
            None => v,
            Some(h) => h.eval(y).map_or(f64::NAN, |h| h * v),
        }
    })
}

/// Level-`n` expression of `D^α B ∗ ϱ_n` on the whole space.
fn compact_term_level(t: &Term, m: &Mollifier, n: u64) -> Expr {
    let e = match &t.base {
        Base::PointMass { at } => shifted_mollifier(m, n, at).diff(&t.alpha),
        Base::Heaviside { at } => m.cumulative_expr(&scaled_shift(n, *at)).diff(&t.alpha),
        Base::Smooth { f } => {
            let r = smooth_regular(f, None, f.domain().bounds.clone());
            ConvolutionPrimitive::new(r, m.clone(), n, t.alpha.clone()).into_expr()
        }
        Base::Piecewise(g) => match g.affine_1d_pieces() {
            Some(pieces) => affine_pieces_level(m, n, &pieces).diff(&t.alpha),
            None => {
                let r = piecewise_regular(g, None, g.domain().bounds.clone());
                ConvolutionPrimitive::new(r, m.clone(), n, t.alpha.clone()).into_expr()
            }
        },
    };
    with_coeff(t.coeff, e)
}

/// `J(T)_n = T ∗ ϱ_n` for compactly supported `T`.
pub fn embed_compact(t: &Distribution, m: &Mollifier) -> Result<EmbeddedDistribution, DistError> {
    check_mollifier(t, m)?;
    t.check_compact()?;
    let (src, mol) = (t.clone(), m.clone());
    let domain = t.domain.clone();
    let gfunc = GFunc::new(t.domain.clone(), 1, "J(T)", move |n| {
        let e = sum_exprs(src.terms.iter().map(|term| compact_term_level(term, &mol, n)).collect());
        SmoothMap::scalar(e, domain.clone()).expect("level uses the domain variables")
    })
    .with_hot_spots(t.hot_spots(), m.radius());
    Ok(EmbeddedDistribution { gfunc, source: t.clone(), mollifier: m.clone(), mode: EmbedMode::Compact })
}

/// One element of a cutoff system.
#[derive(Clone, Debug, PartialEq)]
pub struct CutoffPiece {
    /// Open box `U_λ`.
    pub cover: DomainBox,
    /// `ψ_λ`, identically 1 near the closure of `U_λ`.
    pub plateau: SmoothMap,
    /// Closed box outside of which `ψ_λ` vanishes.
    pub plateau_support: DomainBox,
    /// `χ_j`, supported in `U_λ`.
    pub partition: SmoothMap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CutoffSystem {
    pub domain: DomainBox,
    pub working: DomainBox,
    pub pieces: Vec<CutoffPiece>,
    /// Spacing unit: a quarter of the distance from `W` to `∂U`.
    pub eta: f64,
}

/// `S((x − c)/w)` along axis `i`.
fn rise(i: usize, c: f64, w: f64) -> Expr {
    ((Expr::var(i) - c) * (1.0 / w)).smoothstep()
}

/// `S((c − x)/w)` along axis `i`.
fn fall(i: usize, c: f64, w: f64) -> Expr {
    ((c - Expr::var(i)) * (1.0 / w)).smoothstep()
}

/// Equal to 1 on `[lo + w, hi − w]`, zero outside `(lo, hi)`.
fn window_profile(i: usize, lo: f64, hi: f64, w: f64) -> Expr {
    rise(i, lo, w) * fall(i, hi, w)
}

/// Partition of unity on `W ⋐ U` subordinate to `pieces` overlapping boxes
/// along the first axis, with plateau functions for each box.
pub fn build_cutoffs(u: &DomainBox, w: &DomainBox, pieces: usize) -> Result<CutoffSystem, DistError> {
    let k = u.dim();
    if w.dim() != k || !(1..=2).contains(&k) {
        return Err(DistError::Dimension(format!("cutoffs need matching 1-D or 2-D boxes, got {k} and {}", w.dim())));
    }
    if pieces == 0 {
        return Err(DistError::Geometry("at least one piece is required".into()));
    }
    let mut margin = f64::INFINITY;
    for (&(wl, wh), &(ul, uh)) in w.bounds.iter().zip(&u.bounds) {
        if !(wl.is_finite() && wh.is_finite() && wl < wh) {
            return Err(DistError::Geometry("the working box must be bounded and non-degenerate".into()));
        }
        margin = margin.min(wl - ul).min(uh - wh);
    }
    if !(margin > 0.0) {
        return Err(DistError::Geometry("the working box touches the boundary of the domain".into()));
    }
    let margin = margin.min(1.0);
    let eta = margin / 4.0;
    let (w0, w1) = w.bounds[0];
    let width = (w1 - w0) / pieces as f64;
    let cells: Vec<(f64, f64)> =
        (0..pieces).map(|j| (w0 + width * j as f64, if j + 1 == pieces { w1 } else { w0 + width * (j + 1) as f64 })).collect();
    let bumps: Vec<Expr> = cells.iter().map(|&(a, b)| window_profile(0, a - eta, b + eta, eta / 2.0)).collect();
    let theta = window_profile(0, w0 - eta / 2.0, w1 + eta / 2.0, eta / 4.0);
    let denom = sum_exprs(bumps.clone()) + (1.0 - theta);
    // second-axis factors for 2-D boxes
    let (cross_part, cross_plateau, cross_cover, cross_support) = if k == 2 {
        let (v0, v1) = w.bounds[1];
        (
            Some(window_profile(1, v0 - eta, v1 + eta, eta / 2.0)),
            Some(window_profile(1, v0 - 2.0 * eta, v1 + 2.0 * eta, eta / 2.0)),
            Some((v0 - eta, v1 + eta)),
            Some((v0 - 2.0 * eta, v1 + 2.0 * eta)),
        )
    } else {
        (None, None, None, None)
    };
    let mut out = Vec::with_capacity(pieces);
    for (j, &(a, b)) in cells.iter().enumerate() {
        let mut chi = bumps[j].clone() / denom.clone();
        let mut psi = window_profile(0, a - 2.0 * eta, b + 2.0 * eta, eta / 2.0);
        let mut cover = vec![(a - eta, b + eta)];
        let mut support = vec![(a - 2.0 * eta, b + 2.0 * eta)];
        if let (Some(cp), Some(cpl), Some(cc), Some(cs)) = (&cross_part, &cross_plateau, cross_cover, cross_support) {
            chi = chi * cp.clone();
            psi = psi * cpl.clone();
            cover.push(cc);
            support.push(cs);
        }
        out.push(CutoffPiece {
            cover: DomainBox::new(cover),
            plateau: SmoothMap::scalar(psi, u.clone()).map_err(|e| DistError::Geometry(e.to_string()))?,
            plateau_support: DomainBox::new(support),
            partition: SmoothMap::scalar(chi, u.clone()).map_err(|e| DistError::Geometry(e.to_string()))?,
        });
    }
    Ok(CutoffSystem { domain: u.clone(), working: w.clone(), pieces: out, eta })
}

impl CutoffSystem {
    /// `max |Σ_j χ_j − 1|` over a lattice of the working box.
    pub fn partition_deviation(&self, per_axis: usize) -> Result<f64, EvalError> {
        let mut worst: f64 = 0.0;
        for p in self.working.lattice(per_axis) {
            let s: f64 = self.pieces.iter().map(|c| c.partition.eval_scalar(&p)).sum::<Result<f64, _>>()?;
            worst = worst.max((s - 1.0).abs());
        }
        Ok(worst)
    }

    /// `max |ψ_λ(j) − 1|` over lattice points of each cover box, which
    /// contains the support of `χ_j`.
    pub fn plateau_deviation(&self, per_axis: usize) -> Result<f64, EvalError> {
        let mut worst: f64 = 0.0;
        for c in &self.pieces {
            for p in c.cover.lattice(per_axis) {
                worst = worst.max((c.plateau.eval_scalar(&p)? - 1.0).abs());
            }
        }
        Ok(worst)
    }
}

/// `Σ_j χ_j · ((ψ_j T) ∗ ϱ_n)` with `ψ_j D^α B` expanded by Leibniz as
/// `Σ_{β≤α} C(α,β) (−1)^{|α−β|} D^β((D^{α−β}ψ_j) B)`.
pub fn embed_global(t: &Distribution, cs: &CutoffSystem, m: &Mollifier) -> Result<EmbeddedDistribution, DistError> {
    check_mollifier(t, m)?;
    if cs.domain != t.domain {
        return Err(DistError::Dimension("cutoff system and distribution use different domains".into()));
    }
    // level-independent pieces: for each cutoff and term, a list of
    // (weight, β, kind) contributions
    let mut plan: Vec<(Expr, Vec<Contribution>)> = Vec::new();
    for piece in &cs.pieces {
        let psi = piece.plateau.component(0).clone();
        let mut contribs = Vec::new();
        for term in &t.terms {
            if term.coeff == 0.0 {
                continue;
            }
            for beta in term.alpha.lower_set() {
                let gamma = term.alpha.checked_sub(&beta).expect("β ≤ α");
                let weight = term.coeff * term.alpha.binomial(&beta) * if gamma.order() % 2 == 0 { 1.0 } else { -1.0 };
                let h = psi.diff(&gamma);
                let kind = match &term.base {
                    Base::PointMass { at } => {
                        let ha = h.eval(at)?;
                        if ha == 0.0 {
                            continue;
                        }
                        Kind::Point { at: at.clone(), mass: ha }
                    }
                    Base::Heaviside { at } => {
                        let (lo, hi) = piece.plateau_support.bounds[0];
                        if *at >= hi {
                            continue;
                        }
                        let hh = h.clone();
                        let a = *at;
                        Kind::Regular(RegularFn::new(vec![(a.max(lo), hi)], vec![vec![a]], move |y| {
                            if y[0] < a {
                                0.0
                            } else {
                                hh.eval(y).unwrap_or(f64::NAN)
                            }
                        }))
                    }
                    Base::Smooth { f } => match intersect(&f.domain().bounds, &piece.plateau_support.bounds) {
                        Some(sup) => Kind::Regular(smooth_regular(f, Some(h.clone()), sup)),
                        None => continue,
                    },
                    Base::Piecewise(g) => match intersect(&g.domain().bounds, &piece.plateau_support.bounds) {
                        Some(sup) => Kind::Regular(piecewise_regular(g, Some(h.clone()), sup)),
                        None => continue,
                    },
                };
                contribs.push(Contribution { weight, beta: beta.clone(), kind });
            }
        }
        plan.push((piece.partition.component(0).clone(), contribs));
    }
    let mol = m.clone();
    let domain = t.domain.clone();
    let plan = Arc::new(plan);
    let gfunc = GFunc::new(t.domain.clone(), 1, "I(T)", move |n| {
        let mut parts = Vec::new();
        for (chi, contribs) in plan.iter() {
            if contribs.is_empty() {
                continue;
            }
            let inner = sum_exprs(
                contribs
                    .iter()
                    .map(|c| {
                        let e = match &c.kind {
                            Kind::Point { at, mass } => with_coeff(*mass, shifted_mollifier(&mol, n, at).diff(&c.beta)),
                            Kind::Regular(r) => ConvolutionPrimitive::new(r.clone(), mol.clone(), n, c.beta.clone()).into_expr(),
                        };
                        with_coeff(c.weight, e)
                    })
                    .collect(),
            );
            parts.push(chi.clone() * inner);
        }
        SmoothMap::scalar(sum_exprs(parts), domain.clone()).expect("level uses the domain variables")
    })
    .with_hot_spots(t.hot_spots(), m.radius());
    Ok(EmbeddedDistribution { gfunc, source: t.clone(), mollifier: m.clone(), mode: EmbedMode::Global })
}

enum Kind {
    Point { at: Vec<f64>, mass: f64 },
    Regular(RegularFn),
}

struct Contribution {
    weight: f64,
    beta: MultiIndex,
    kind: Kind,
}

fn intersect(a: &[(f64, f64)], b: &[(f64, f64)]) -> Option<Vec<(f64, f64)>> {
    let out: Vec<(f64, f64)> = a.iter().zip(b).map(|(&(x, y), &(u, v))| (x.max(u), y.min(v))).collect();
    out.iter().all(|(lo, hi)| lo < hi).then_some(out)
}

/// `⟨T, φ⟩ = Σ c (−1)^{|α|} ⟨B, D^α φ⟩`; `φ` is supported in its domain box.
pub fn reference_pairing(t: &Distribution, phi: &SmoothMap) -> Result<f64, DistError> {
    if phi.in_dim() != t.dim() || !phi.domain().is_bounded() {
        return Err(DistError::Dimension("test functions need a bounded support box of the domain dimension".into()));
    }
    let bx = phi.domain().bounds.clone();
    let opts = QuadOptions::new(1e-13);
    let mut total = 0.0;
    for term in &t.terms {
        let sign = if term.alpha.order() % 2 == 0 { 1.0 } else { -1.0 };
        let dphi = phi.component(0).diff(&term.alpha);
        let value = match &term.base {
            Base::PointMass { at } => {
                if phi.domain().contains(at) {
                    dphi.eval(at)?
                } else {
                    0.0
                }
            }
            Base::Heaviside { at } => {
                let (lo, hi) = bx[0];
                let a = at.max(lo);
                if a >= hi {
                    0.0
                } else {
                    checked_integral(|y| dphi.eval(y), &[(a, hi)], &[], opts)?
                }
            }
            Base::Smooth { f } => match intersect(&f.domain().bounds, &bx) {
                Some(b) => {
                    let e = f.component(0).clone();
                    checked_integral(|y| Ok(e.eval(y)? * dphi.eval(y)?), &b, &[], opts)?
                }
                None => 0.0,
            },
            Base::Piecewise(g) => match intersect(&g.domain().bounds, &bx) {
                Some(b) => checked_integral(
                    |y| {
                        let v = g.eval(y).map_err(|_| EvalError::OutsideDomain { point: y.to_vec() })?[0];
                        Ok(v * dphi.eval(y)?)
                    },
                    &b,
                    &g.breakpoints(),
                    opts,
                )?,
                None => 0.0,
            },
        };
        total += term.coeff * sign * value;
    }
    Ok(total)
}

fn checked_integral(
    f: impl Fn(&[f64]) -> Result<f64, EvalError>,
    bounds: &[(f64, f64)],
    breaks: &[Vec<f64>],
    opts: QuadOptions,
) -> Result<f64, EvalError> {
    let failure = std::sync::Mutex::new(None);
    let r = integrate_box(
        |y| match f(y) {
            Ok(v) => v,
            Err(e) => {
                failure.lock().expect("unpoisoned").get_or_insert(e);
                f64::NAN
            }
        },
        bounds,
        breaks,
        opts,
    );
    match failure.into_inner().expect("unpoisoned") {
        Some(e) => Err(e),
        None => Ok(r.value),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairingRow {
    pub n: u64,
    pub value: f64,
    pub reference: f64,
    pub abs_err: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairingReport {
    pub rows: Vec<PairingRow>,
    pub reference: f64,
    /// Value at the top window level.
    pub limit: f64,
    /// Decay slope of `|p_n − ⟨T, φ⟩|` above the noise floor.
    pub fitted_slope: f64,
    pub converged: bool,
}

/// `p_n = ∫ level_n φ` over the window, compared with `⟨T, φ⟩`.
pub fn pair(e: &EmbeddedDistribution, phi: &SmoothMap, window: &Window) -> Result<PairingReport, DistError> {
    let reference = reference_pairing(&e.source, phi)?;
    pair_against(&e.gfunc, phi, reference, window)
}

/// Pairing net of any generalized function against `φ`.
pub fn pair_against(f: &GFunc, phi: &SmoothMap, reference: f64, window: &Window) -> Result<PairingReport, DistError> {
    let rows = window
        .indices()
        .par_iter()
        .map(|&n| {
            let (value, converged) = pair_level(f, n, phi, 1e-12)?;
            Ok(PairingRow { n, value, reference, abs_err: (value - reference).abs(), converged })
        })
        .collect::<Result<Vec<_>, GFuncError>>()?;
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.n as f64, r.abs_err)).collect();
    let fit = decay_fit(&pts, DEFAULT_NOISE_FLOOR);
    let limit = rows.last().map_or(f64::NAN, |r| r.value);
    let converged = rows.iter().all(|r| r.converged);
    Ok(PairingReport { rows, reference, limit, fitted_slope: fit.slope, converged })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelRegion {
    pub n: u64,
    /// Cells (as boxes) where `|level_n|·n^t > 1`.
    pub cells: Vec<Vec<(f64, f64)>>,
    /// Bounding box of the cells.
    pub hull: Option<Vec<(f64, f64)>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SupportEstimate {
    pub threshold_exponent: f64,
    pub levels: Vec<LevelRegion>,
    pub reference: Vec<SupportPiece>,
    /// Inflation constant `c` of the comparison with `supp T + c/n`.
    pub inflation: f64,
    /// Whether every top-level cell meets the inflated support.
    pub within_inflated: bool,
}

/// Sample points per cell and axis in [`support_estimate`].
const CELL_SAMPLES: usize = 3;

/// Grid cells where the embedded levels exceed `n^{−t}`, per tail level.
pub fn support_estimate(
    e: &EmbeddedDistribution,
    cells_per_axis: usize,
    threshold_exponent: f64,
    window: &Window,
) -> Result<SupportEstimate, DistError> {
    let dom = e.gfunc.domain().clamped();
    let k = dom.len();
    if !(1..=2).contains(&k) || cells_per_axis == 0 {
        return Err(DistError::Dimension("support estimates need a 1-D or 2-D grid".into()));
    }
    let widths: Vec<f64> = dom.iter().map(|(a, b)| (b - a) / cells_per_axis as f64).collect();
    let cell_ids = tensor_points(&vec![(0..cells_per_axis).map(|i| i as f64).collect(); k]);
    let levels = window
        .tail()
        .par_iter()
        .map(|&n| {
            let level = e.gfunc.level(n);
            let nt = (n as f64).powf(threshold_exponent);
            let mut cells = Vec::new();
            for id in &cell_ids {
                let cell: Vec<(f64, f64)> =
                    id.iter().enumerate().map(|(i, &c)| (dom[i].0 + c * widths[i], dom[i].0 + (c + 1.0) * widths[i])).collect();
                let axes: Vec<Vec<f64>> = cell
                    .iter()
                    .map(|&(a, b)| (0..CELL_SAMPLES).map(|j| a + (b - a) * (j as f64 + 0.5) / CELL_SAMPLES as f64).collect())
                    .collect();
                let mut hit = false;
                for p in tensor_points(&axes) {
                    let v = level.eval_scalar(&p).map_err(|source| GFuncError::Level { level: n, source })?;
                    if v.abs() * nt > 1.0 {
                        hit = true;
                        break;
                    }
                }
                if hit {
                    cells.push(cell);
                }
            }
            let hull = (!cells.is_empty()).then(|| {
                (0..k)
                    .map(|i| {
                        let lo = cells.iter().map(|c| c[i].0).fold(f64::INFINITY, f64::min);
                        let hi = cells.iter().map(|c| c[i].1).fold(f64::NEG_INFINITY, f64::max);
                        (lo, hi)
                    })
                    .collect()
            });
            Ok(LevelRegion { n, cells, hull })
        })
        .collect::<Result<Vec<_>, GFuncError>>()?;
    let reference = e.source.support();
    let inflation = 10.0;
    let within_inflated = levels.last().is_none_or(|top| {
        let r = inflation / top.n as f64;
        top.cells.iter().all(|cell| {
            let center: Vec<f64> = cell.iter().map(|(a, b)| 0.5 * (a + b)).collect();
            let half = cell.iter().map(|(a, b)| 0.5 * (b - a)).fold(0.0, f64::max);
            reference.iter().any(|s| s.inflated_contains(&center, r + half))
        })
    });
    Ok(SupportEstimate { threshold_exponent, levels, reference, inflation, within_inflated })
}

impl fmt::Display for EmbedMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbedMode::Compact => "compact",
            EmbedMode::Global => "global",
        })
    }
}

/// Breakpoints used when pairing against an embedded distribution.
pub fn pairing_breaks(e: &EmbeddedDistribution, n: u64, bounds: &[(f64, f64)]) -> Vec<Vec<f64>> {
    hot_breaks(e.gfunc.hot_spots(), e.gfunc.hot_width() / n as f64, bounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn line(a: f64, b: f64) -> DomainBox {
        DomainBox::interval(a, b)
    }

    fn d1() -> MultiIndex {
        MultiIndex(vec![1])
    }

    #[test]
    fn delta_level_at_origin() {
        let m = Mollifier::build(1, 2).unwrap();
        let e = embed_compact(&Distribution::delta(line(-1.0, 1.0), vec![0.0], MultiIndex(vec![0])).unwrap(), &m).unwrap();
        for n in [2u64, 10, 1024] {
            let want = n as f64 * 1.5 / (2.0 * std::f64::consts::PI).sqrt();
            assert_abs_diff_eq!(e.gfunc.eval_level_scalar(n, &[0.0]).unwrap(), want, epsilon = 1e-12 * want);
        }
    }

    #[test]
    fn derivative_commutes_structurally_for_point_masses() {
        let m = Mollifier::build(1, 4).unwrap();
        let u = line(-1.0, 1.0);
        let delta = Distribution::delta(u.clone(), vec![0.25], MultiIndex(vec![0])).unwrap();
        let e = embed_compact(&delta, &m).unwrap();
        let de = crate::gfunc::derive(&e.gfunc, &d1()).unwrap();
        let e1 = embed_compact(&delta.derive(&d1()), &m).unwrap();
        for n in [2u64, 64, 4096] {
            assert_eq!(de.level(n), e1.gfunc.level(n));
        }
    }

    #[test]
    fn cutoff_partition_and_plateaus() {
        let u = line(-2.0, 2.0);
        let w = line(-1.0, 1.0);
        let one = build_cutoffs(&u, &w, 1).unwrap();
        for p in w.lattice(101) {
            assert_eq!(one.pieces[0].partition.eval_scalar(&p).unwrap(), 1.0);
        }
        let three = build_cutoffs(&u, &w, 3).unwrap();
        assert!(three.partition_deviation(101).unwrap() <= 1e-12);
        assert!(three.plateau_deviation(101).unwrap() <= 1e-12);
        assert!(build_cutoffs(&u, &line(-2.0, 1.0), 2).is_err());
        let u2 = DomainBox::cube(2, -2.0, 2.0);
        let w2 = DomainBox::cube(2, -1.0, 1.0);
        let c2 = build_cutoffs(&u2, &w2, 2).unwrap();
        assert!(c2.partition_deviation(21).unwrap() <= 1e-12);
        assert!(c2.plateau_deviation(21).unwrap() <= 1e-12);
    }

    #[test]
    fn convolution_jet_matches_finite_difference() {
        let m = Mollifier::build(1, 2).unwrap();
        let r = RegularFn::new(vec![(-1.0, 1.0)], vec![], |y| 1.0 - y[0] * y[0]);
        let p = ConvolutionPrimitive::new(r, m, 8, MultiIndex(vec![0]));
        let x = 0.3;
        let jet = p.jet(&[x], 2).unwrap();
        let h = 1e-4;
        let fd = (p.eval(&[x + h]).unwrap() - p.eval(&[x - h]).unwrap()) / (2.0 * h);
        assert_abs_diff_eq!(jet.coeffs()[1], fd, epsilon = 1e-7);
        assert_abs_diff_eq!(jet.value(), p.eval(&[x]).unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn zero_distribution_embeds_to_zero() {
        let m = Mollifier::build(1, 2).unwrap();
        let u = line(-2.0, 2.0);
        let z = Distribution::zero(u.clone());
        let cs = build_cutoffs(&u, &line(-1.0, 1.0), 3).unwrap();
        let e = embed_global(&z, &cs, &m).unwrap();
        assert_eq!(e.gfunc.eval_level_scalar(64, &[0.3]).unwrap(), 0.0);
        let s = support_estimate(&embed_compact(&z, &m).unwrap(), 64, 0.0, &Window::default()).unwrap();
        assert!(s.levels.iter().all(|l| l.cells.is_empty()));
    }

    #[test]
    fn reference_pairings() {
        let u = line(-2.0, 2.0);
        let phi = SmoothMap::scalar((Expr::var(0) - 0.2).bump(), line(-0.8, 1.2)).unwrap();
        let d1 = Distribution::delta(u.clone(), vec![0.0], d1()).unwrap();
        let jet = phi.eval_jet(&[0.0], 1).unwrap();
        assert_abs_diff_eq!(reference_pairing(&d1, &phi).unwrap(), -jet[0].coeffs()[1], epsilon = 1e-15);
        let abs = crate::geometry::PLMap::from_affine_1d(&[(-2.0, 0.0, 0.0, -1.0), (0.0, 2.0, 0.0, 1.0)]).unwrap();
        let dd = Distribution::piecewise(u.clone(), abs).unwrap().derive(&MultiIndex(vec![2]));
        assert_abs_diff_eq!(reference_pairing(&dd, &phi).unwrap(), 2.0 * phi.eval_scalar(&[0.0]).unwrap(), epsilon = 1e-10);
    }

    #[test]
    fn compactness_is_enforced() {
        let m = Mollifier::build(1, 2).unwrap();
        let u = line(-1.0, 1.0);
        let f = SmoothMap::scalar(Expr::var(0).sin(), line(-1.0, 1.0)).unwrap();
        let t = Distribution::smooth(u, f).unwrap();
        assert!(matches!(embed_compact(&t, &m), Err(DistError::NotCompact(_))));
    }
}
