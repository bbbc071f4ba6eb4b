//! Vector-valued smooth maps `ℝ^k → ℝ^l` over explicit domain boxes.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{EvalError, MapError};
use crate::expr::Expr;
use crate::jet::{Jet, MultiIndex};

/// Half-width used in place of an infinite bound when a box must be sampled.
pub const SAMPLING_CLAMP: f64 = 64.0;

/// Product of closed intervals. Bounds may be infinite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub bounds: Vec<(f64, f64)>,
}

impl DomainBox {
    pub fn new(bounds: Vec<(f64, f64)>) -> DomainBox {
        DomainBox { bounds }
    }

    pub fn interval(a: f64, b: f64) -> DomainBox {
        DomainBox { bounds: vec![(a, b)] }
    }

    /// All of `ℝ^k`.
    pub fn whole(k: usize) -> DomainBox {
        DomainBox { bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); k] }
    }

    pub fn cube(k: usize, a: f64, b: f64) -> DomainBox {
        DomainBox { bounds: vec![(a, b); k] }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.bounds).all(|(v, (a, b))| *a <= *v && *v <= *b)
    }

    /// `other ⊂ self`.
    pub fn contains_box(&self, other: &DomainBox) -> bool {
        other.dim() == self.dim()
            && other.bounds.iter().zip(&self.bounds).all(|((a, b), (c, d))| c <= a && b <= d)
    }

    pub fn is_bounded(&self) -> bool {
        self.bounds.iter().all(|(a, b)| a.is_finite() && b.is_finite())
    }

    pub fn intersect(&self, other: &DomainBox) -> Option<DomainBox> {
        let bounds: Vec<(f64, f64)> = self
            .bounds
            .iter()
            .zip(&other.bounds)
            .map(|((a, b), (c, d))| (a.max(*c), b.min(*d)))
            .collect();
        if bounds.iter().all(|(a, b)| a <= b) {
            Some(DomainBox { bounds })
        } else {
            None
        }
    }

    /// Box grown by `r` on every side.
    pub fn inflate(&self, r: f64) -> DomainBox {
        DomainBox { bounds: self.bounds.iter().map(|(a, b)| (a - r, b + r)).collect() }
    }

    /// Bounds with infinities replaced by `±SAMPLING_CLAMP`.
    pub fn clamped(&self) -> Vec<(f64, f64)> {
        self.bounds
            .iter()
            .map(|&(a, b)| (a.max(-SAMPLING_CLAMP), b.min(SAMPLING_CLAMP)))
            .collect()
    }

    /// Projects `x` onto the box.
    pub fn clamp_point(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.bounds).map(|(v, (a, b))| v.max(*a).min(*b)).collect()
    }

    /// Tensor lattice with `per_axis` points per coordinate (clamped bounds).
    pub fn lattice(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = self
            .clamped()
            .iter()
            .map(|&(a, b)| {
                if per_axis <= 1 {
                    vec![0.5 * (a + b)]
                } else {
                    (0..per_axis).map(|i| a + (b - a) * i as f64 / (per_axis - 1) as f64).collect()
                }
            })
            .collect();
        tensor_points(&axes)
    }

    /// The `3^k` lattice (corners, edge midpoints and center).
    pub fn sample_lattice(&self) -> Vec<Vec<f64>> {
        self.lattice(3)
    }
}

pub(crate) fn tensor_points(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in axes {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for p in &out {
            for &v in axis {
                let mut q = p.clone();
                q.push(v);
                next.push(q);
            }
        }
        out = next;
    }
    out
}

/// A smooth map with `l` expression components sharing one input dimension
/// and one domain box.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothMap {
    in_dim: usize,
    components: Vec<Expr>,
    domain: DomainBox,
}

impl SmoothMap {
    pub fn new(components: Vec<Expr>, domain: DomainBox) -> Result<SmoothMap, MapError> {
        let in_dim = domain.dim();
        if components.is_empty() {
            return Err(MapError::Dimension("a smooth map needs at least one component".into()));
        }
        if let Some(e) = components.iter().find(|e| e.arity() > in_dim) {
            return Err(MapError::Dimension(format!(
                "component {e} uses {} variables but the domain has dimension {in_dim}",
                e.arity()
            )));
        }
        Ok(SmoothMap { in_dim, components, domain })
    }

    pub fn scalar(expr: Expr, domain: DomainBox) -> Result<SmoothMap, MapError> {
        SmoothMap::new(vec![expr], domain)
    }

    /// Scalar map on `ℝ^k`.
    pub fn whole(expr: Expr, k: usize) -> SmoothMap {
        SmoothMap::new(vec![expr], DomainBox::whole(k)).expect("expression arity exceeds dimension")
    }

    pub fn identity(domain: DomainBox) -> SmoothMap {
        let k = domain.dim();
        SmoothMap { in_dim: k, components: Expr::vars(k), domain }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn component(&self, i: usize) -> &Expr {
        &self.components[i]
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn with_domain(&self, domain: DomainBox) -> SmoothMap {
        SmoothMap { in_dim: self.in_dim, components: self.components.clone(), domain }
    }

    fn check_point(&self, x: &[f64]) -> Result<(), EvalError> {
        if x.len() != self.in_dim {
            return Err(EvalError::Arity { expected: self.in_dim, got: x.len() });
        }
        if !self.domain.contains(x) {
            return Err(EvalError::OutsideDomain { point: x.to_vec() });
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.check_point(x)?;
        self.components.iter().map(|e| e.eval(x)).collect()
    }

    /// First component; the common case for scalar maps.
    pub fn eval_scalar(&self, x: &[f64]) -> Result<f64, EvalError> {
        self.check_point(x)?;
        self.components[0].eval(x)
    }

    /// One jet of order `order` per component.
    pub fn eval_jet(&self, x: &[f64], order: usize) -> Result<Vec<Jet>, EvalError> {
        self.check_point(x)?;
        Jet::check_order(order)?;
        let vars = Jet::variables(x, order);
        self.components.iter().map(|e| e.jet(&vars)).collect()
    }

    /// `J_f(x) = (∂_j f_i(x))_{i,j}`.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        let jets = self.eval_jet(x, 1)?;
        Ok(DMatrix::from_fn(self.out_dim(), self.in_dim, |i, j| {
            jets[i].derivative(&MultiIndex::unit(self.in_dim, j))
        }))
    }

    /// `D^α` applied to every component.
    pub fn derive(&self, alpha: &MultiIndex) -> Result<SmoothMap, MapError> {
        if alpha.dim() != self.in_dim {
            return Err(MapError::Dimension(format!(
                "multi-index {alpha} does not match input dimension {}",
                self.in_dim
            )));
        }
        Jet::check_order(alpha.order())?;
        Ok(SmoothMap {
            in_dim: self.in_dim,
            components: self.components.iter().map(|e| e.diff(alpha)).collect(),
            domain: self.domain.clone(),
        })
    }

    /// `g ∘ f` with `self = g`. Containment of `f`'s image in `g`'s domain is
    /// checked on the `3^k` lattice of `f`'s domain (corners included).
    pub fn compose(&self, f: &SmoothMap) -> Result<SmoothMap, MapError> {
        if f.out_dim() != self.in_dim {
            return Err(MapError::Dimension(format!(
                "inner map has {} outputs, outer map expects {} inputs",
                f.out_dim(),
                self.in_dim
            )));
        }
        for p in f.domain.sample_lattice() {
            let image = f.eval(&p)?;
            if !self.domain.contains(&image) {
                return Err(MapError::Containment { point: p, image });
            }
        }
        Ok(self.compose_unchecked(f))
    }

    /// Composition without the sampled containment check.
    pub fn compose_unchecked(&self, f: &SmoothMap) -> SmoothMap {
        SmoothMap {
            in_dim: f.in_dim,
            components: self.components.iter().map(|g| g.substitute(&f.components)).collect(),
            domain: f.domain.clone(),
        }
    }

    /// Componentwise combination with another map of the same shape.
    pub fn zip_with(&self, other: &SmoothMap, op: impl Fn(&Expr, &Expr) -> Expr) -> Result<SmoothMap, MapError> {
        if self.in_dim != other.in_dim || self.out_dim() != other.out_dim() {
            return Err(MapError::Dimension(format!(
                "shapes {}→{} and {}→{} differ",
                self.in_dim,
                self.out_dim(),
                other.in_dim,
                other.out_dim()
            )));
        }
        let domain = self
            .domain
            .intersect(&other.domain)
            .ok_or_else(|| MapError::Dimension("domains do not overlap".into()))?;
        Ok(SmoothMap {
            in_dim: self.in_dim,
            components: self.components.iter().zip(&other.components).map(|(a, b)| op(a, b)).collect(),
            domain,
        })
    }

    pub fn map_components(&self, op: impl Fn(&Expr) -> Expr) -> SmoothMap {
        SmoothMap {
            in_dim: self.in_dim,
            components: self.components.iter().map(op).collect(),
            domain: self.domain.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn x() -> Expr {
        Expr::var(0)
    }

    #[test]
    fn jacobian_of_sum_and_product() {
        let f = SmoothMap::new(vec![x() + Expr::var(1), x() * Expr::var(1)], DomainBox::whole(2)).unwrap();
        let j = f.jacobian(&[1.0, 2.0]).unwrap();
        assert_eq!(j, DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 1.0]));
    }

    #[test]
    fn linear_map_jacobian_is_constant() {
        let a = [[2.0, -1.0], [0.5, 3.0]];
        let comps = (0..2).map(|i| a[i][0] * x() + a[i][1] * Expr::var(1)).collect();
        let f = SmoothMap::new(comps, DomainBox::whole(2)).unwrap();
        for p in [[0.0, 0.0], [1.5, -2.0]] {
            let j = f.jacobian(&p).unwrap();
            for i in 0..2 {
                for k in 0..2 {
                    assert_eq!(j[(i, k)], a[i][k]);
                }
            }
        }
    }

    #[test]
    fn compose_exp_of_square() {
        let g = SmoothMap::whole(x().exp(), 1);
        let f = SmoothMap::whole(x().powi(2), 1);
        let h = g.compose(&f).unwrap();
        let grad = h.eval_jet(&[1.0], 1).unwrap()[0].gradient()[0];
        assert_relative_eq!(grad, 2.0 * 1f64.exp(), epsilon = 1e-14);
    }

    #[test]
    fn identity_composition_is_structural() {
        let f = SmoothMap::whole(x().sin() * x(), 1);
        let id = SmoothMap::identity(DomainBox::whole(1));
        assert_eq!(id.compose(&f).unwrap(), f);
    }

    #[test]
    fn compose_reports_witness() {
        let g = SmoothMap::scalar(x().ln(), DomainBox::interval(0.1, 10.0)).unwrap();
        let f = SmoothMap::scalar(x(), DomainBox::interval(-1.0, 1.0)).unwrap();
        match g.compose(&f) {
            Err(MapError::Containment { point, image }) => {
                assert_eq!(point, vec![-1.0]);
                assert_eq!(image, vec![-1.0]);
            }
            other => panic!("expected containment error, got {other:?}"),
        }
        let wrong = SmoothMap::whole(x() * Expr::var(1), 2);
        assert!(matches!(wrong.compose(&f), Err(MapError::Dimension(_))));
    }

    #[test]
    fn outside_domain_is_rejected() {
        let f = SmoothMap::scalar(x(), DomainBox::interval(0.0, 1.0)).unwrap();
        assert!(matches!(f.eval_jet(&[2.0], 1), Err(EvalError::OutsideDomain { .. })));
        assert!(matches!(f.eval_jet(&[0.5], 13), Err(EvalError::OrderTooHigh { .. })));
    }
}
