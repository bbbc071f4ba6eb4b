//! Piecewise maps, path concatenation, the radial retraction of the
//! homotopy cube and one-cell homotopy extension.

use std::sync::Arc;

use serde::Serialize;

use crate::dist::{affine_pieces_level, ConvolutionPrimitive, RegularFn};
use crate::error::{EvalError, GFuncError, GeometryError};
use crate::expr::Expr;
use crate::gfunc::GFunc;
use crate::jet::MultiIndex;
use crate::mollifier::Mollifier;
use crate::net::Window;
use crate::smooth::{DomainBox, SmoothMap};

/// Agreement tolerance on shared faces.
pub const CONTINUITY_TOL: f64 = 1e-12;

/// Default margin excluded around piece boundaries in comparisons.
pub const BOUNDARY_MARGIN: f64 = 0.05;

/// A closed polyhedral cell: a box cut by half-spaces `a·x ≤ c`.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub bounds: Vec<(f64, f64)>,
    pub halfspaces: Vec<(Vec<f64>, f64)>,
}

impl Cell {
    pub fn from_box(bounds: Vec<(f64, f64)>) -> Cell {
        Cell { bounds, halfspaces: Vec::new() }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.bounds.iter().zip(x).all(|(&(lo, hi), &v)| v >= lo - tol && v <= hi + tol)
            && self.halfspaces.iter().all(|(a, c)| dot(a, x) <= c + tol * (1.0 + norm(a)))
    }

    /// Orthogonal projections of `x` onto each bounding hyperplane.
    fn face_projections(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for (i, &(lo, hi)) in self.bounds.iter().enumerate() {
            for b in [lo, hi] {
                if b.is_finite() {
                    let mut p = x.to_vec();
                    p[i] = b;
                    out.push(p);
                }
            }
        }
        for (a, c) in &self.halfspaces {
            let s = (dot(a, x) - c) / dot(a, a);
            out.push(x.iter().zip(a).map(|(v, ai)| v - s * ai).collect());
        }
        out
    }

    /// Distance from `x` to the nearest bounding hyperplane of the cell,
    /// ignoring box faces that lie on `outer`.
    fn boundary_distance(&self, x: &[f64], outer: &[(f64, f64)]) -> f64 {
        let mut d = f64::INFINITY;
        for (i, (&(lo, hi), &(olo, ohi))) in self.bounds.iter().zip(outer).enumerate() {
            if lo.is_finite() && lo > olo {
                d = d.min((x[i] - lo).abs());
            }
            if hi.is_finite() && hi < ohi {
                d = d.min((x[i] - hi).abs());
            }
        }
        for (a, c) in &self.halfspaces {
            d = d.min((dot(a, x) - c).abs() / norm(a));
        }
        d
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Restriction of a piecewise map to one cell.
#[derive(Clone, Debug, PartialEq)]
pub enum PieceMap {
    /// `x ↦ matrix·x + offset` with `matrix` stored row-wise (`l × k`).
    Affine { matrix: Vec<Vec<f64>>, offset: Vec<f64> },
    Smooth(SmoothMap),
}

impl PieceMap {
    fn eval(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        match self {
            PieceMap::Affine { matrix, offset } => Ok(matrix.iter().zip(offset).map(|(row, c)| dot(row, x) + c).collect()),
            PieceMap::Smooth(f) => f.components().iter().map(|e| e.eval(x)).collect(),
        }
    }

    fn eval_component(&self, c: usize, x: &[f64]) -> Result<f64, EvalError> {
        match self {
            PieceMap::Affine { matrix, offset } => Ok(dot(&matrix[c], x) + offset[c]),
            PieceMap::Smooth(f) => f.components()[c].eval(x),
        }
    }

    fn dims(&self) -> (usize, usize) {
        match self {
            PieceMap::Affine { matrix, offset } => (matrix.first().map_or(0, Vec::len), offset.len()),
            PieceMap::Smooth(f) => (f.in_dim(), f.out_dim()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Piece {
    pub cell: Cell,
    pub map: PieceMap,
}

/// A continuous map assembled from smooth restrictions to closed cells.
///
/// Pieces are evaluated on `extension ⊇ domain`; the mollified map uses
/// the values on `extension` and clamps inputs into it beyond.
#[derive(Clone, Debug, PartialEq)]
pub struct PLMap {
    in_dim: usize,
    out_dim: usize,
    domain: DomainBox,
    extension: DomainBox,
    pieces: Vec<Piece>,
    tolerance: f64,
}

/// Lattice resolution of continuity certificates.
fn certificate_lattice(k: usize) -> usize {
    match k {
        1 => 33,
        2 => 17,
        _ => 9,
    }
}

impl PLMap {
    /// Builds and certifies a piecewise map on `domain`.
    pub fn new(domain: DomainBox, pieces: Vec<Piece>) -> Result<PLMap, GeometryError> {
        PLMap::with_extension(domain.clone(), domain, pieces, CONTINUITY_TOL)
    }

    /// Builds a map whose piece formulas stay valid on `extension`, with
    /// shared-face agreement checked to `tolerance`.
    pub fn with_extension(
        domain: DomainBox,
        extension: DomainBox,
        pieces: Vec<Piece>,
        tolerance: f64,
    ) -> Result<PLMap, GeometryError> {
        let g = PLMap::unchecked(domain, extension, pieces, tolerance)?;
        g.certify()?;
        Ok(g)
    }

    fn unchecked(domain: DomainBox, extension: DomainBox, pieces: Vec<Piece>, tolerance: f64) -> Result<PLMap, GeometryError> {
        let k = domain.dim();
        let first = pieces.first().ok_or_else(|| GeometryError::InvalidPiece("no pieces".into()))?;
        let l = first.map.dims().1;
        if k == 0 || l == 0 {
            return Err(GeometryError::InvalidPiece("empty dimensions".into()));
        }
        if !extension.contains_box(&domain) {
            return Err(GeometryError::InvalidPiece("extension box must contain the domain".into()));
        }
        for p in &pieces {
            if p.cell.bounds.len() != k || p.cell.halfspaces.iter().any(|(a, _)| a.len() != k) {
                return Err(GeometryError::InvalidPiece(format!("cell of the wrong dimension in a {k}-D map")));
            }
            if p.map.dims() != (k, l) {
                return Err(GeometryError::InvalidPiece(format!("piece {:?} does not map ℝ^{k} → ℝ^{l}", p.map.dims())));
            }
            if let PieceMap::Affine { matrix, .. } = &p.map {
                if matrix.iter().any(|r| r.len() != k) {
                    return Err(GeometryError::InvalidPiece("ragged affine matrix".into()));
                }
            }
        }
        Ok(PLMap { in_dim: k, out_dim: l, domain, extension, pieces, tolerance })
    }

    /// Scalar 1-D map from `(lo, hi, a, b)` pieces `y ↦ a + b·y` on `[lo, hi]`.
    pub fn from_affine_1d(pieces: &[(f64, f64, f64, f64)]) -> Result<PLMap, GeometryError> {
        let lo = pieces.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let hi = pieces.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let ps = pieces
            .iter()
            .map(|&(a, b, c, s)| Piece { cell: Cell::from_box(vec![(a, b)]), map: PieceMap::Affine { matrix: vec![vec![s]], offset: vec![c] } })
            .collect();
        PLMap::new(DomainBox::interval(lo, hi), ps)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn extension(&self) -> &DomainBox {
        &self.extension
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    fn locate(&self, x: &[f64]) -> Option<&Piece> {
        self.pieces
            .iter()
            .find(|p| p.cell.contains(x, 0.0))
            .or_else(|| self.pieces.iter().find(|p| p.cell.contains(x, 1e-12)))
    }

    /// Value at a point of the declared domain.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, GeometryError> {
        if !self.domain.contains(x) {
            return Err(GeometryError::Uncovered { point: x.to_vec() });
        }
        self.eval_extended(x)
    }

    /// Value at a point of the extension box.
    pub fn eval_extended(&self, x: &[f64]) -> Result<Vec<f64>, GeometryError> {
        let piece = self.locate(x).ok_or_else(|| GeometryError::Uncovered { point: x.to_vec() })?;
        Ok(piece.map.eval(x)?)
    }

    /// Value at the projection of `x` onto the extension box.
    pub fn eval_clamped(&self, x: &[f64]) -> Result<Vec<f64>, GeometryError> {
        self.eval_extended(&self.extension.clamp_point(x))
    }

    /// Component `c` of [`PLMap::eval_clamped`]; `buf` holds the projected point.
    pub fn eval_clamped_component(&self, c: usize, x: &[f64], buf: &mut Vec<f64>) -> Result<f64, GeometryError> {
        buf.clear();
        buf.extend(x.iter().zip(&self.extension.bounds).map(|(v, (a, b))| v.max(*a).min(*b)));
        let piece = self.locate(buf).ok_or_else(|| GeometryError::Uncovered { point: buf.clone() })?;
        Ok(piece.map.eval_component(c, buf)?)
    }

    /// Shared-face agreement and coverage, checked on projections of a
    /// lattice onto every cell face.
    pub fn certify(&self) -> Result<(), GeometryError> {
        let lattice = self.extension.lattice(certificate_lattice(self.in_dim));
        for p in &lattice {
            if self.locate(p).is_none() {
                return Err(GeometryError::Uncovered { point: p.clone() });
            }
        }
        let ext = self.extension.clamped();
        let inside = |q: &[f64]| q.iter().zip(&ext).all(|(v, (a, b))| *v >= *a && *v <= *b);
        for piece in &self.pieces {
            for p in &lattice {
                for q in piece.cell.face_projections(p) {
                    if !inside(&q) || !piece.cell.contains(&q, 1e-13) {
                        continue;
                    }
                    let own = piece.map.eval(&q)?;
                    for other in &self.pieces {
                        if std::ptr::eq(other, piece) || !other.cell.contains(&q, 1e-13) {
                            continue;
                        }
                        let v = other.map.eval(&q)?;
                        for (a, b) in own.iter().zip(&v) {
                            let dev = (a - b).abs();
                            if dev > self.tolerance * (1.0 + a.abs()) {
                                return Err(GeometryError::Discontinuous { point: q, deviation: dev });
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Per-axis kink coordinates: finite box bounds of every cell.
    pub fn breakpoints(&self) -> Vec<Vec<f64>> {
        (0..self.in_dim)
            .map(|i| {
                let mut v: Vec<f64> = self
                    .pieces
                    .iter()
                    .flat_map(|p| [p.cell.bounds[i].0, p.cell.bounds[i].1])
                    .chain([self.domain.bounds[i].0, self.domain.bounds[i].1])
                    .filter(|b| b.is_finite())
                    .collect();
                v.sort_by(f64::total_cmp);
                v.dedup();
                v
            })
            .collect()
    }

    /// Slanted cell faces, normalized so the first non-zero entry is positive.
    pub fn hyperplanes(&self) -> Vec<(Vec<f64>, f64)> {
        let mut out: Vec<(Vec<f64>, f64)> = Vec::new();
        for p in &self.pieces {
            for (a, c) in &p.cell.halfspaces {
                let lead = a.iter().copied().find(|v| *v != 0.0).unwrap_or(1.0);
                let s = lead.abs() / lead * norm(a);
                let plane = (a.iter().map(|v| v / s).collect::<Vec<_>>(), c / s);
                if !out.iter().any(|q| q.0.iter().zip(&plane.0).all(|(u, v)| (u - v).abs() < 1e-14) && (q.1 - plane.1).abs() < 1e-14) {
                    out.push(plane);
                }
            }
        }
        out
    }

    /// Axis breakpoints plus the points where slanted faces meet the
    /// extension faces (kinks of the clamped continuation).
    pub fn kink_breaks(&self) -> Vec<Vec<f64>> {
        let mut breaks = self.breakpoints();
        let planes = self.hyperplanes();
        if self.in_dim == 2 {
            for (i, &(lo, hi)) in self.extension.bounds.iter().enumerate() {
                let j = 1 - i;
                for b in [lo, hi] {
                    breaks[i].push(b);
                    for (a, c) in &planes {
                        if b.is_finite() && a[j] != 0.0 {
                            breaks[j].push((c - a[i] * b) / a[j]);
                        }
                    }
                }
            }
        }
        for v in &mut breaks {
            v.retain(|b| b.is_finite());
            v.sort_by(f64::total_cmp);
            v.dedup();
        }
        breaks
    }

    /// Distance from `x` to the nearest internal piece boundary.
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        let outer = &self.extension.bounds;
        self.pieces
            .iter()
            .filter(|p| p.cell.contains(x, 1e-12))
            .map(|p| p.cell.boundary_distance(x, outer))
            .fold(f64::INFINITY, f64::min)
    }

    /// `(lo, hi, a, b)` pieces when this is a scalar 1-D map with affine
    /// box pieces, sorted by position.
    pub fn affine_1d_pieces(&self) -> Option<Vec<(f64, f64, f64, f64)>> {
        if self.in_dim != 1 || self.out_dim != 1 {
            return None;
        }
        let mut out = Vec::new();
        for p in &self.pieces {
            if !p.cell.halfspaces.is_empty() {
                return None;
            }
            match &p.map {
                PieceMap::Affine { matrix, offset } => out.push((p.cell.bounds[0].0, p.cell.bounds[0].1, offset[0], matrix[0][0])),
                PieceMap::Smooth(_) => return None,
            }
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        Some(out)
    }
}

thread_local! {
    static CLAMP_BUF: std::cell::RefCell<Vec<f64>> = const { std::cell::RefCell::new(Vec::new()) };
}

/// `g ∗ ϱ_n` component-wise, with `g` extended by clamping inputs into its
/// extension box. Scalar-output 1-D affine maps use closed forms.
pub fn embed_piecewise(g: &PLMap, m: &Mollifier) -> Result<GFunc, GeometryError> {
    if m.dimension() != g.in_dim() {
        return Err(GeometryError::Dimension(m.dimension()));
    }
    g.certify()?;
    let k = g.in_dim();
    let domain = g.extension().clone();
    let spots: Vec<Vec<f64>> = if k == 1 { g.breakpoints()[0].iter().map(|&b| vec![b]).collect() } else { Vec::new() };
    if let Some(mut pieces) = affine_1d_extended(g) {
        let mol = m.clone();
        pieces.sort_by(|a, b| a.0.total_cmp(&b.0));
        return Ok(GFunc::new(domain.clone(), 1, "g ∗ ϱ_n", move |n| {
            SmoothMap::scalar(affine_pieces_level(&mol, n, &pieces), domain.clone()).expect("one variable")
        })
        .with_hot_spots(spots, m.radius()));
    }
    let (mol, map) = (m.clone(), Arc::new(g.clone()));
    let l = g.out_dim();
    let breaks = g.kink_breaks();
    let planes = g.hyperplanes();
    Ok(GFunc::new(domain.clone(), l, "g ∗ ϱ_n", move |n| {
        let comps = (0..l)
            .map(|c| {
                let g = Arc::clone(&map);
                let r = RegularFn::new(vec![(f64::NEG_INFINITY, f64::INFINITY); k], breaks.clone(), move |y| {
                    CLAMP_BUF.with(|b| g.eval_clamped_component(c, y, &mut b.borrow_mut()).unwrap_or(f64::NAN))
                })
                .with_planes(planes.clone());
                ConvolutionPrimitive::new(r, mol.clone(), n, MultiIndex::zero(k)).into_expr()
            })
            .collect();
        SmoothMap::new(comps, domain.clone()).expect("components share the domain")
    })
    .with_hot_spots(spots, m.radius()))
}

/// Affine pieces of a scalar 1-D map plus constant continuations beyond
/// finite ends of the extension.
fn affine_1d_extended(g: &PLMap) -> Option<Vec<(f64, f64, f64, f64)>> {
    let mut pieces = g.affine_1d_pieces()?;
    let (lo, hi) = g.extension().bounds[0];
    if lo.is_finite() {
        let v = g.eval_extended(&[lo]).ok()?[0];
        pieces.push((f64::NEG_INFINITY, lo, v, 0.0));
    }
    if hi.is_finite() {
        let v = g.eval_extended(&[hi]).ok()?[0];
        pieces.push((hi, f64::INFINITY, v, 0.0));
    }
    Some(pieces)
}

/// A generalized path on an open interval containing `[0, 1]`.
#[derive(Clone, Debug)]
pub struct QAPath {
    pub gfunc: GFunc,
    /// Values at 0 and 1 at the top window level.
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub top_level: u64,
}

impl QAPath {
    pub fn new(gfunc: GFunc, window: &Window) -> Result<QAPath, GeometryError> {
        let (lo, hi) = *gfunc.domain().bounds.first().ok_or(GeometryError::Dimension(0))?;
        if gfunc.in_dim() != 1 {
            return Err(GeometryError::Dimension(gfunc.in_dim()));
        }
        if !(lo < 0.0 && hi > 1.0) {
            return Err(GeometryError::InvalidPiece(format!("path domain [{lo}, {hi}] must contain [0, 1] in its interior")));
        }
        let top = window.last();
        let start = gfunc.eval_level(top, &[0.0])?;
        let end = gfunc.eval_level(top, &[1.0])?;
        Ok(QAPath { gfunc, start, end, top_level: top })
    }

    /// Smallest distance from `[0, 1]` to the ends of the domain.
    pub fn margin(&self) -> f64 {
        let (lo, hi) = self.gfunc.domain().bounds[0];
        (-lo).min(hi - 1.0)
    }
}

/// Endpoint compatibility tolerance of [`concat`].
pub const ENDPOINT_TOL: f64 = 1e-9;

/// `ℓ₁ = clamp(2t, −2δ, 1)` and `ℓ₂ = clamp(2t − 1, 0, 1 + 2δ)`.
pub fn reparametrizations(delta: f64) -> Result<(PLMap, PLMap), GeometryError> {
    let inf = f64::INFINITY;
    let l1 = PLMap::from_affine_1d(&[(-inf, -delta, -2.0 * delta, 0.0), (-delta, 0.5, 0.0, 2.0), (0.5, inf, 1.0, 0.0)])?;
    let l2 = PLMap::from_affine_1d(&[(-inf, 0.5, 0.0, 0.0), (0.5, 1.0 + delta, -1.0, 2.0), (1.0 + delta, inf, 1.0 + 2.0 * delta, 0.0)])?;
    Ok((l1, l2))
}

/// `α_n(L1_n(t)) + β_n(L2_n(t)) − β_n(0)` with `L1, L2` the mollified
/// reparametrizations.
pub fn concat(a: &QAPath, b: &QAPath, m: &Mollifier, window: &Window) -> Result<QAPath, GeometryError> {
    if a.gfunc.out_dim() != b.gfunc.out_dim() {
        return Err(GeometryError::Dimension(b.gfunc.out_dim()));
    }
    let gap = a.end.iter().zip(&b.start).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    if gap > ENDPOINT_TOL {
        return Err(GeometryError::Endpoints(gap));
    }
    let delta = BOUNDARY_MARGIN.min(a.margin().min(b.margin()) / 4.0);
    let (l1, l2) = reparametrizations(delta)?;
    let (e1, e2) = (embed_piecewise(&l1, m)?, embed_piecewise(&l2, m)?);
    let domain = a.gfunc.domain().intersect(b.gfunc.domain()).ok_or(GeometryError::Dimension(1))?;
    let (fa, fb) = (a.gfunc.clone(), b.gfunc.clone());
    let dom = domain.clone();
    let gf = GFunc::new(domain, a.gfunc.out_dim(), "α ∗ β", move |n| {
        let s1 = e1.level(n).component(0).clone();
        let s2 = e2.level(n).component(0).clone();
        let (an, bn) = (fa.level(n), fb.level(n));
        let b0 = bn.eval(&[0.0]).unwrap_or_else(|_| vec![f64::NAN; bn.out_dim()]);
        let comps = an
            .components()
            .iter()
            .zip(bn.components())
            .zip(b0)
            .map(|((ca, cb), c0)| ca.substitute(std::slice::from_ref(&s1)) + cb.substitute(std::slice::from_ref(&s2)) - c0)
            .collect();
        SmoothMap::new(comps, dom.clone()).expect("one variable")
    })
    .with_hot_spots(vec![vec![-delta], vec![0.5], vec![1.0 + delta]], m.radius());
    QAPath::new(gf, window)
}

/// A generalized map whose last input coordinate is time.
#[derive(Clone, Debug)]
pub struct Homotopy {
    pub gfunc: GFunc,
}

impl Homotopy {
    pub fn new(gfunc: GFunc) -> Result<Homotopy, GeometryError> {
        let k = gfunc.in_dim();
        if k < 2 {
            return Err(GeometryError::Dimension(k));
        }
        let (lo, hi) = gfunc.domain().bounds[k - 1];
        if !(lo <= 0.0 && hi >= 1.0) {
            return Err(GeometryError::InvalidPiece("time axis must contain [0, 1]".into()));
        }
        Ok(Homotopy { gfunc })
    }

    /// Number of space coordinates.
    pub fn space_dim(&self) -> usize {
        self.gfunc.in_dim() - 1
    }

    /// The map `x ↦ H(x, t)`.
    pub fn slice(&self, t: f64) -> GFunc {
        let k = self.space_dim();
        let h = self.gfunc.clone();
        let domain = DomainBox::new(self.gfunc.domain().bounds[..k].to_vec());
        let dom = domain.clone();
        let mut args = Expr::vars(k);
        args.push(Expr::constant(t));
        GFunc::new(domain, self.gfunc.out_dim(), format!("H(·, {t})"), move |n| {
            let comps = h.level(n).components().iter().map(|c| c.substitute(&args)).collect();
            SmoothMap::new(comps, dom.clone()).expect("space variables")
        })
    }

    pub fn eval(&self, n: u64, x: &[f64], t: f64) -> Result<Vec<f64>, GFuncError> {
        let mut p = x.to_vec();
        p.push(t);
        self.gfunc.eval_level(n, &p)
    }
}

/// Box on which the retraction formulas are evaluated for mollification.
pub fn retraction_extension(k: usize) -> DomainBox {
    DomainBox::cube(k + 1, -0.5, 1.5)
}

/// Radial projection of `I^{k+1}` onto `L^k = ∂I^k × I ∪ I^k × {0}` from
/// `P = (1/2, …, 1/2, 2)`. The bottom piece comes first so rays through
/// bottom edges resolve to the bottom face.
pub fn radial_retraction(k: usize) -> Result<PLMap, GeometryError> {
    if !(1..=2).contains(&k) {
        return Err(GeometryError::Dimension(k));
    }
    let dim = k + 1;
    let t = Expr::var(k);
    let ext = retraction_extension(k);
    let unit = |i: usize, c: f64| -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = c;
        v
    };
    // p = τx + (1 − τ)P, written so τ = 1 reproduces x exactly
    let along = |tau: &Expr, fixed: Option<(usize, f64)>, bottom: bool| -> Vec<Expr> {
        (0..dim)
            .map(|j| match fixed {
                Some((i, v)) if i == j => Expr::constant(v),
                _ if bottom && j == k => Expr::constant(0.0),
                _ => {
                    let pj = if j == k { 2.0 } else { 0.5 };
                    Expr::var(j) * tau.clone() + pj * (1.0 - tau.clone())
                }
            })
            .collect()
    };
    let mut pieces = Vec::new();
    // bottom: 4|x_i − 1/2| ≤ 2 − t for every i
    let tau_b = 2.0 / (2.0 - t.clone());
    let mut hs = Vec::new();
    for i in 0..k {
        let mut a = unit(i, 4.0);
        a[k] = 1.0;
        hs.push((a, 4.0));
        let mut a = unit(i, -4.0);
        a[k] = 1.0;
        hs.push((a, 0.0));
    }
    pieces.push(Piece {
        cell: Cell { bounds: ext.bounds.clone(), halfspaces: hs },
        map: PieceMap::Smooth(SmoothMap::new(along(&tau_b, None, true), ext.clone()).map_err(map_err)?),
    });
    for i in 0..k {
        for upper in [true, false] {
            let mut hs = Vec::new();
            let (tau, wall) = if upper {
                // 4x_i + t ≥ 4 and |x_j − 1/2| ≤ x_i − 1/2
                let mut a = unit(i, -4.0);
                a[k] = -1.0;
                hs.push((a, -4.0));
                for j in (0..k).filter(|&j| j != i) {
                    let mut a = unit(j, 1.0);
                    a[i] = -1.0;
                    hs.push((a, 0.0));
                    let mut a = unit(j, -1.0);
                    a[i] = -1.0;
                    hs.push((a, -1.0));
                }
                (0.5 / (Expr::var(i) - 0.5), 1.0)
            } else {
                // 4x_i − t ≤ 0 and |x_j − 1/2| ≤ 1/2 − x_i
                let mut a = unit(i, 4.0);
                a[k] = -1.0;
                hs.push((a, 0.0));
                for j in (0..k).filter(|&j| j != i) {
                    let mut a = unit(j, 1.0);
                    a[i] = 1.0;
                    hs.push((a, 1.0));
                    let mut a = unit(j, -1.0);
                    a[i] = 1.0;
                    hs.push((a, 0.0));
                }
                (0.5 / (0.5 - Expr::var(i)), 0.0)
            };
            pieces.push(Piece {
                cell: Cell { bounds: ext.bounds.clone(), halfspaces: hs },
                map: PieceMap::Smooth(SmoothMap::new(along(&tau, Some((i, wall)), false), ext.clone()).map_err(map_err)?),
            });
        }
    }
    PLMap::with_extension(DomainBox::cube(dim, 0.0, 1.0), ext, pieces, CONTINUITY_TOL)
}

fn map_err(e: crate::error::MapError) -> GeometryError {
    GeometryError::InvalidPiece(e.to_string())
}

/// The exact retraction at a point of the cube.
pub fn retract_point(k: usize, x: &[f64]) -> Result<Vec<f64>, GeometryError> {
    if x.len() != k + 1 || x.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(GeometryError::OutsideCube { point: x.to_vec() });
    }
    radial_retraction(k)?.eval(x)
}

/// True when `x` lies on `L^k` (a side wall or the bottom).
pub fn on_l(k: usize, x: &[f64]) -> bool {
    x[k] == 0.0 || x[..k].iter().any(|&v| v == 0.0 || v == 1.0)
}

/// `H(x, s) = (1 − s)·p̂(x) + s·x` on the extension box times `[0, 1]`.
pub fn retract_homotopy(k: usize, m: &Mollifier) -> Result<Homotopy, GeometryError> {
    let p = radial_retraction(k)?;
    let phat = embed_piecewise(&p, m)?;
    let dim = k + 1;
    let mut bounds = p.extension().bounds.clone();
    bounds.push((0.0, 1.0));
    let domain = DomainBox::new(bounds);
    let dom = domain.clone();
    let s = Expr::var(dim);
    let gf = GFunc::new(domain, dim, "(1 − s)p̂ + s·x", move |n| {
        let level = phat.level(n);
        let comps = level
            .components()
            .iter()
            .enumerate()
            .map(|(i, c)| (1.0 - s.clone()) * c.clone() + s.clone() * Expr::var(i))
            .collect();
        SmoothMap::new(comps, dom.clone()).expect("space and time variables")
    });
    Homotopy::new(gf)
}

/// Seam tolerance of [`hep_extend`].
pub const SEAM_TOL: f64 = 1e-6;

/// Points of `∂I^k` used to test compatibility.
fn boundary_samples(k: usize) -> Vec<Vec<f64>> {
    let cube = DomainBox::cube(k, 0.0, 1.0);
    cube.lattice(9).into_iter().filter(|p| p.iter().any(|&v| v == 0.0 || v == 1.0)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeamReport {
    pub top_level: u64,
    pub max_deviation: f64,
}

/// Extends `f` on `I^k` and `h` on `∂I^k × I` to a homotopy on `I^k × I`:
/// `K_n = ((h_n ∪ f_n) ∘ p) ∗ ϱ_n` with `p` the radial retraction.
pub fn hep_extend(
    f_cell: &GFunc,
    h_boundary: &Homotopy,
    k: usize,
    m: &Mollifier,
    window: &Window,
) -> Result<(Homotopy, SeamReport), GeometryError> {
    if f_cell.in_dim() != k || h_boundary.space_dim() != k || m.dimension() != k + 1 {
        return Err(GeometryError::Dimension(k));
    }
    let l = f_cell.out_dim();
    if h_boundary.gfunc.out_dim() != l {
        return Err(GeometryError::Dimension(h_boundary.gfunc.out_dim()));
    }
    let top = window.last();
    let mut worst: f64 = 0.0;
    for x in boundary_samples(k) {
        let a = h_boundary.eval(top, &x, 0.0)?;
        let b = f_cell.eval_level(top, &x)?;
        for (u, v) in a.iter().zip(&b) {
            worst = worst.max((u - v).abs());
        }
    }
    if !(worst <= SEAM_TOL) {
        return Err(GeometryError::Incompatible(worst));
    }
    let p = Arc::new(radial_retraction(k)?);
    let ext = p.extension().clone();
    let domain = ext.clone();
    let (f, h, mol) = (f_cell.clone(), h_boundary.gfunc.clone(), m.clone());
    let dim = k + 1;
    let breaks = p.kink_breaks();
    let planes = p.hyperplanes();
    let gf = GFunc::new(domain.clone(), l, "(h ∪ f) ∘ p ∗ ϱ_n", move |n| {
        let (fl, hl) = (f.level(n), h.level(n));
        let p = Arc::clone(&p);
        let glued = Arc::new(move |y: &[f64]| -> Result<Vec<f64>, GeometryError> {
            let q = p.eval_clamped(y)?;
            // bottom points go to the cell map, wall points to the boundary homotopy
            // formulas only: images may leave the declared boxes slightly
            let comps = if p.locate(&p.extension().clamp_point(y)).is_some_and(|piece| std::ptr::eq(piece, &p.pieces()[0])) {
                fl.components().iter().map(|e| e.eval(&q[..k])).collect::<Result<Vec<_>, _>>()
            } else {
                hl.components().iter().map(|e| e.eval(&q)).collect::<Result<Vec<_>, _>>()
            };
            Ok(comps?)
        });
        let comps = (0..l)
            .map(|c| {
                let g = Arc::clone(&glued);
                let r = RegularFn::new(vec![(f64::NEG_INFINITY, f64::INFINITY); dim], breaks.clone(), move |y| {
                    g(y).map_or(f64::NAN, |v| v[c])
                })
                .with_planes(planes.clone());
                ConvolutionPrimitive::new(r, mol.clone(), n, MultiIndex::zero(dim)).into_expr()
            })
            .collect();
        SmoothMap::new(comps, domain.clone()).expect("components share the domain")
    });
    Ok((Homotopy::new(gf)?, SeamReport { top_level: top, max_deviation: worst }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn retraction_examples() {
        assert_eq!(retract_point(1, &[0.5, 1.0]).unwrap(), vec![0.5, 0.0]);
        assert_eq!(retract_point(1, &[0.0, 0.7]).unwrap(), vec![0.0, 0.7]);
        let p = retract_point(1, &[0.9, 1.0]).unwrap();
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.75, epsilon = 1e-15);
        assert!(retract_point(1, &[1.2, 0.5]).is_err());
    }

    #[test]
    fn retraction_fixes_l_and_is_idempotent() {
        for k in 1..=2 {
            let p = radial_retraction(k).unwrap();
            for x in DomainBox::cube(k + 1, 0.0, 1.0).lattice(11) {
                let y = p.eval(&x).unwrap();
                if on_l(k, &x) {
                    assert_eq!(y, x, "fixed point at {x:?}");
                }
                assert!(on_l(k, &y), "{y:?} is on L");
                assert_eq!(p.eval(&y).unwrap(), y);
            }
        }
    }

    #[test]
    fn discontinuous_pieces_fail_the_certificate() {
        let bad = PLMap::from_affine_1d(&[(0.0, 1.0, 0.0, 1.0), (1.0, 2.0, 0.5, 0.0)]);
        assert!(matches!(bad, Err(GeometryError::Discontinuous { .. })));
        let gap = PLMap::from_affine_1d(&[(0.0, 1.0, 0.0, 1.0), (1.5, 2.0, 1.0, 0.0)]);
        assert!(matches!(gap, Err(GeometryError::Uncovered { .. })));
    }

    #[test]
    fn affine_maps_are_reproduced() {
        let m = Mollifier::build(1, 2).unwrap();
        let inf = f64::INFINITY;
        let g = PLMap::from_affine_1d(&[(-inf, inf, 0.3, -1.7)]).unwrap();
        let e = embed_piecewise(&g, &m).unwrap();
        for n in [2u64, 64, 16384] {
            for x in [-3.0, 0.0, 0.4, 10.0] {
                assert_abs_diff_eq!(e.eval_level_scalar(n, &[x]).unwrap(), 0.3 - 1.7 * x, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn abs_embedding_is_even_and_small_at_zero() {
        let m = Mollifier::build(1, 2).unwrap();
        let g = PLMap::from_affine_1d(&[(-1.0, 0.0, 0.0, -1.0), (0.0, 1.0, 0.0, 1.0)]).unwrap();
        let e = embed_piecewise(&g, &m).unwrap();
        for n in [4u64, 64, 1024] {
            let v0 = e.eval_level_scalar(n, &[0.0]).unwrap();
            assert!(v0.abs() <= 2.0 / n as f64);
            assert_abs_diff_eq!(e.eval_level_scalar(n, &[0.3]).unwrap(), e.eval_level_scalar(n, &[-0.3]).unwrap(), epsilon = 1e-14);
        }
    }

    #[test]
    fn constant_paths_concatenate_exactly() {
        let m = Mollifier::build(1, 2).unwrap();
        let w = Window::default();
        let c = crate::gfunc::lift_expr(Expr::constant(1.5), DomainBox::interval(-0.25, 1.25)).unwrap();
        let a = QAPath::new(c, &w).unwrap();
        let ab = concat(&a, &a, &m, &w).unwrap();
        for n in [2u64, 128] {
            for t in [0.0, 0.3, 0.5, 1.0] {
                assert_eq!(ab.gfunc.eval_level_scalar(n, &[t]).unwrap(), 1.5);
            }
        }
    }

    #[test]
    fn homotopy_time_slices_are_exact() {
        let m = Mollifier::build(2, 2).unwrap();
        let h = retract_homotopy(1, &m).unwrap();
        let x = [0.3, 0.6];
        assert_eq!(h.eval(8, &x, 1.0).unwrap(), x.to_vec());
        let at0 = h.eval(8, &x, 0.0).unwrap();
        let p = embed_piecewise(&radial_retraction(1).unwrap(), &m).unwrap().eval_level(8, &x).unwrap();
        assert_eq!(at0, p);
    }
}
