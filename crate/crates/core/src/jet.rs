//! Truncated multivariate Taylor jets.
//!
//! A [`Jet`] of order `m` in `k` variables stores the normalized Taylor
//! coefficients `D^α f(x) / α!` for every multi-index `|α| ≤ m`. Arithmetic on
//! jets is exact coefficient arithmetic (Cauchy products truncated at `m`), so
//! derivatives computed this way carry no truncation error beyond round-off.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::EvalError;

/// Highest jet order the engine will build.
pub const MAX_ORDER: usize = 12;

/// A multi-index `α = (α_1, …, α_k)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn zero(k: usize) -> Self {
        MultiIndex(vec![0; k])
    }

    /// Unit multi-index `e_i` in `k` variables.
    pub fn unit(k: usize, i: usize) -> Self {
        let mut v = vec![0; k];
        v[i] = 1;
        MultiIndex(v)
    }

    pub fn order(&self) -> usize {
        self.0.iter().map(|&a| a as usize).sum()
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&a| a == 0)
    }

    /// `α!` as a float.
    pub fn factorial(&self) -> f64 {
        self.0.iter().map(|&a| factorial(a as usize)).product()
    }

    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// Componentwise `β ≤ α`.
    pub fn le(&self, other: &MultiIndex) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    pub fn checked_sub(&self, other: &MultiIndex) -> Option<MultiIndex> {
        if !other.le(self) {
            return None;
        }
        Some(MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect()))
    }

    /// Product of binomial coefficients `C(α, β)`.
    pub fn binomial(&self, beta: &MultiIndex) -> f64 {
        self.0
            .iter()
            .zip(&beta.0)
            .map(|(&a, &b)| binomial(a as usize, b as usize))
            .product()
    }

    /// Every `β ≤ α`, in graded order.
    pub fn lower_set(&self) -> Vec<MultiIndex> {
        let mut out = vec![MultiIndex(Vec::with_capacity(self.dim()))];
        for &a in &self.0 {
            let mut next = Vec::with_capacity(out.len() * (a as usize + 1));
            for prefix in &out {
                for b in 0..=a {
                    let mut p = prefix.clone();
                    p.0.push(b);
                    next.push(p);
                }
            }
            out = next;
        }
        out.sort_by_key(|m| m.order());
        out
    }

    /// All multi-indices in `k` variables with `|α| ≤ max_order`, graded.
    pub fn all_up_to(k: usize, max_order: usize) -> Vec<MultiIndex> {
        JetLayout::get(k, max_order).indices.clone()
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

pub(crate) fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * i as f64)
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Index bookkeeping for jets of a given shape, shared between all jets of
/// that shape.
#[derive(Debug)]
pub struct JetLayout {
    nvars: usize,
    order: usize,
    indices: Vec<MultiIndex>,
    lookup: HashMap<Vec<u32>, usize>,
    /// `(i, j, target)` with `indices[i] + indices[j] = indices[target]`.
    products: Vec<(u32, u32, u32)>,
}

impl JetLayout {
    pub fn get(nvars: usize, order: usize) -> Arc<JetLayout> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<JetLayout>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("jet layout cache poisoned");
        guard
            .entry((nvars, order))
            .or_insert_with(|| Arc::new(JetLayout::build(nvars, order)))
            .clone()
    }

    fn build(nvars: usize, order: usize) -> JetLayout {
        let mut indices = Vec::new();
        for deg in 0..=order {
            let mut cur = vec![0u32; nvars];
            enumerate_degree(nvars, deg as u32, 0, &mut cur, &mut indices);
        }
        let lookup: HashMap<Vec<u32>, usize> =
            indices.iter().enumerate().map(|(i, m)| (m.0.clone(), i)).collect();
        let mut products = Vec::new();
        for (i, a) in indices.iter().enumerate() {
            for (j, b) in indices.iter().enumerate() {
                if a.order() + b.order() > order {
                    // indices are graded, so later j only grow
                    if b.order() > order - a.order() {
                        break;
                    }
                    continue;
                }
                let t = lookup[&a.add(b).0];
                products.push((i as u32, j as u32, t as u32));
            }
        }
        JetLayout { nvars, order, indices, lookup, products }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn position(&self, alpha: &[u32]) -> Option<usize> {
        self.lookup.get(alpha).copied()
    }
}

fn enumerate_degree(nvars: usize, remaining: u32, pos: usize, cur: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
    if nvars == 0 {
        if remaining == 0 {
            out.push(MultiIndex(Vec::new()));
        }
        return;
    }
    if pos == nvars - 1 {
        cur[pos] = remaining;
        out.push(MultiIndex(cur.clone()));
        cur[pos] = 0;
        return;
    }
    for a in (0..=remaining).rev() {
        cur[pos] = a;
        enumerate_degree(nvars, remaining - a, pos + 1, cur, out);
    }
    cur[pos] = 0;
}

/// Truncated Taylor expansion of a scalar function around a base point.
#[derive(Clone)]
pub struct Jet {
    point: Vec<f64>,
    layout: Arc<JetLayout>,
    coeffs: Vec<f64>,
}

impl fmt::Debug for Jet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Jet")
            .field("point", &self.point)
            .field("order", &self.layout.order)
            .field("coeffs", &self.coeffs)
            .finish()
    }
}

impl PartialEq for Jet {
    fn eq(&self, other: &Self) -> bool {
        self.point == other.point
            && self.layout.nvars == other.layout.nvars
            && self.layout.order == other.layout.order
            && self.coeffs == other.coeffs
    }
}

impl Jet {
    pub fn check_order(order: usize) -> Result<(), EvalError> {
        if order > MAX_ORDER {
            return Err(EvalError::OrderTooHigh { order, max: MAX_ORDER });
        }
        Ok(())
    }

    pub fn constant(point: &[f64], order: usize, value: f64) -> Jet {
        let layout = JetLayout::get(point.len(), order);
        let mut coeffs = vec![0.0; layout.len()];
        coeffs[0] = value;
        Jet { point: point.to_vec(), layout, coeffs }
    }

    /// The jet of the coordinate function `x ↦ x_i` at `point`.
    pub fn variable(point: &[f64], order: usize, i: usize) -> Jet {
        let mut jet = Jet::constant(point, order, point[i]);
        if order >= 1 {
            let pos = jet.layout.position(&MultiIndex::unit(point.len(), i).0).unwrap();
            jet.coeffs[pos] = 1.0;
        }
        jet
    }

    /// Coordinate jets for every variable at `point`.
    pub fn variables(point: &[f64], order: usize) -> Vec<Jet> {
        (0..point.len()).map(|i| Jet::variable(point, order, i)).collect()
    }

    pub fn from_coeffs(point: &[f64], order: usize, coeffs: Vec<f64>) -> Jet {
        let layout = JetLayout::get(point.len(), order);
        assert_eq!(coeffs.len(), layout.len(), "coefficient table has wrong length");
        Jet { point: point.to_vec(), layout, coeffs }
    }

    pub fn nvars(&self) -> usize {
        self.layout.nvars
    }

    pub fn order(&self) -> usize {
        self.layout.order
    }

    pub fn point(&self) -> &[f64] {
        &self.point
    }

    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.layout.indices
    }

    /// Normalized coefficient `D^α f / α!` (zero beyond the jet's order).
    pub fn coeff(&self, alpha: &MultiIndex) -> f64 {
        self.layout.position(&alpha.0).map_or(0.0, |p| self.coeffs[p])
    }

    /// The derivative `D^α f` at the base point.
    pub fn derivative(&self, alpha: &MultiIndex) -> f64 {
        self.coeff(alpha) * alpha.factorial()
    }

    pub fn gradient(&self) -> Vec<f64> {
        (0..self.nvars()).map(|i| self.derivative(&MultiIndex::unit(self.nvars(), i))).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    fn same_shape(&self, other: &Jet) {
        debug_assert_eq!(self.layout.nvars, other.layout.nvars);
        debug_assert_eq!(self.layout.order, other.layout.order);
    }

    pub fn add(&self, other: &Jet) -> Jet {
        self.same_shape(other);
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect();
        Jet { point: self.point.clone(), layout: self.layout.clone(), coeffs }
    }

    pub fn sub(&self, other: &Jet) -> Jet {
        self.same_shape(other);
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect();
        Jet { point: self.point.clone(), layout: self.layout.clone(), coeffs }
    }

    pub fn scale(&self, c: f64) -> Jet {
        let coeffs = self.coeffs.iter().map(|a| a * c).collect();
        Jet { point: self.point.clone(), layout: self.layout.clone(), coeffs }
    }

    pub fn neg(&self) -> Jet {
        self.scale(-1.0)
    }

    pub fn add_constant(&self, c: f64) -> Jet {
        let mut out = self.clone();
        out.coeffs[0] += c;
        out
    }

    /// Truncated Cauchy product (Leibniz rule on normalized coefficients).
    pub fn mul(&self, other: &Jet) -> Jet {
        self.same_shape(other);
        let mut coeffs = vec![0.0; self.coeffs.len()];
        for &(i, j, t) in &self.layout.products {
            coeffs[t as usize] += self.coeffs[i as usize] * other.coeffs[j as usize];
        }
        Jet { point: self.point.clone(), layout: self.layout.clone(), coeffs }
    }

    /// Evaluates `Σ_j taylor[j] (self − self(0))^j`, i.e. composes a
    /// univariate function given by its Taylor coefficients at `self.value()`.
    pub fn compose_univariate(&self, taylor: &[f64]) -> Jet {
        let mut h = self.clone();
        h.coeffs[0] = 0.0;
        let m = self.order().min(taylor.len().saturating_sub(1));
        let mut acc = Jet::constant(&self.point, self.order(), taylor[m]);
        for j in (0..m).rev() {
            acc = acc.mul(&h).add_constant(taylor[j]);
        }
        acc
    }

    pub fn recip(&self) -> Result<Jet, EvalError> {
        let u = self.value();
        if u == 0.0 {
            return Err(EvalError::DivisionByZero);
        }
        let m = self.order();
        let taylor: Vec<f64> = (0..=m).map(|j| (-1f64).powi(j as i32) / u.powi(j as i32 + 1)).collect();
        Ok(self.compose_univariate(&taylor))
    }

    pub fn div(&self, other: &Jet) -> Result<Jet, EvalError> {
        Ok(self.mul(&other.recip()?))
    }

    /// Jet of `D^α f` of order `self.order() − |α|`.
    pub fn shift(&self, alpha: &MultiIndex) -> Result<Jet, EvalError> {
        let k = alpha.order();
        if k > self.order() {
            return Err(EvalError::OrderTooHigh { order: k, max: self.order() });
        }
        let order = self.order() - k;
        let layout = JetLayout::get(self.nvars(), order);
        let coeffs = layout
            .indices
            .iter()
            .map(|beta| {
                let sum = alpha.add(beta);
                self.coeff(&sum) * sum.factorial() / beta.factorial()
            })
            .collect();
        Ok(Jet { point: self.point.clone(), layout, coeffs })
    }

    /// Reduces to a lower order by dropping coefficients.
    pub fn truncate(&self, order: usize) -> Jet {
        let layout = JetLayout::get(self.nvars(), order.min(self.order()));
        let coeffs = layout.indices.iter().map(|a| self.coeff(a)).collect();
        Jet { point: self.point.clone(), layout, coeffs }
    }

    fn is_variable_of(&self, i: usize) -> bool {
        self.coeffs.iter().enumerate().all(|(p, &c)| {
            let alpha = &self.layout.indices[p];
            if alpha.order() == 0 {
                c == self.point[i]
            } else if alpha.order() == 1 && alpha.0[i] == 1 {
                c == 1.0
            } else {
                c == 0.0
            }
        })
    }

    /// Composes this jet (of a function of `p` variables, expanded at
    /// `inner[i].value()`) with inner jets in some other set of variables.
    ///
    /// The result is the Taylor jet of `outer ∘ inner` at the inner base point.
    pub fn compose(&self, inner: &[Jet]) -> Jet {
        assert_eq!(inner.len(), self.nvars(), "compose arity mismatch");
        let target = &inner[0];
        let order = target.order();
        if inner.len() == target.nvars()
            && order == self.order()
            && inner.iter().enumerate().all(|(i, j)| j.is_variable_of(i))
        {
            let mut out = self.clone();
            out.point = target.point.clone();
            return out;
        }
        let p = self.nvars();
        // powers[i][e] = (inner_i − inner_i(0))^e
        let mut powers: Vec<Vec<Jet>> = Vec::with_capacity(p);
        for jet in inner {
            let mut h = jet.clone();
            h.coeffs[0] = 0.0;
            let mut row = Vec::with_capacity(order + 1);
            row.push(Jet::constant(&target.point, order, 1.0));
            for e in 1..=order {
                let next = row[e - 1].mul(&h);
                row.push(next);
            }
            powers.push(row);
        }
        let mut out = Jet::constant(&target.point, order, 0.0);
        for (pos, beta) in self.layout.indices.iter().enumerate() {
            let c = self.coeffs[pos];
            if c == 0.0 || beta.order() > order {
                continue;
            }
            let mut term: Option<Jet> = None;
            for (i, &e) in beta.0.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                let factor = &powers[i][e as usize];
                term = Some(match term {
                    None => factor.clone(),
                    Some(t) => t.mul(factor),
                });
            }
            match term {
                None => out.coeffs[0] += c,
                Some(t) => {
                    for (o, v) in out.coeffs.iter_mut().zip(&t.coeffs) {
                        *o += c * v;
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn layout_sizes_match_binomial_counts() {
        assert_eq!(JetLayout::get(1, 4).len(), 5);
        assert_eq!(JetLayout::get(2, 3).len(), 10);
        assert_eq!(JetLayout::get(3, 12).len(), 455);
    }

    #[test]
    fn product_is_leibniz_convolution_univariate() {
        // (1 + x)(1 − x) = 1 − x² at 0
        let x = Jet::variable(&[0.0], 3, 0);
        let a = x.add_constant(1.0);
        let b = x.neg().add_constant(1.0);
        let p = a.mul(&b);
        assert_eq!(p.coeffs(), &[1.0, 0.0, -1.0, 0.0]);
    }

    #[test]
    fn recip_geometric_series() {
        let x = Jet::variable(&[0.0], 5, 0);
        let one_minus = x.neg().add_constant(1.0);
        let r = one_minus.recip().unwrap();
        for c in r.coeffs() {
            assert_relative_eq!(*c, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn shift_extracts_derivative_jet() {
        // f = x³ at x=2: f' = 3x², jet of f' at 2 to order 1 = [12, 12]
        let x = Jet::variable(&[2.0], 3, 0);
        let f = x.mul(&x).mul(&x);
        let d = f.shift(&MultiIndex(vec![1])).unwrap();
        assert_eq!(d.order(), 2);
        assert_relative_eq!(d.coeffs()[0], 12.0);
        assert_relative_eq!(d.coeffs()[1], 12.0);
        assert_relative_eq!(d.coeffs()[2], 3.0);
    }

    #[test]
    fn compose_matches_direct_product() {
        // outer(u,v) = u·v at (sin 0.3, cos 0.3), inner = (sin x, cos x)
        let x = Jet::variable(&[0.3], 4, 0);
        let s = x.compose_univariate(&sin_taylor(0.3, 4));
        let c = x.compose_univariate(&cos_taylor(0.3, 4));
        let base = [s.value(), c.value()];
        let uv = Jet::variable(&base, 4, 0).mul(&Jet::variable(&base, 4, 1));
        let composed = uv.compose(&[s.clone(), c.clone()]);
        let direct = s.mul(&c);
        for (a, b) in composed.coeffs().iter().zip(direct.coeffs()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-14);
        }
    }

    fn sin_taylor(u: f64, m: usize) -> Vec<f64> {
        let cyc = [u.sin(), u.cos(), -u.sin(), -u.cos()];
        (0..=m).map(|j| cyc[j % 4] / factorial(j)).collect()
    }

    fn cos_taylor(u: f64, m: usize) -> Vec<f64> {
        let cyc = [u.cos(), -u.sin(), -u.cos(), u.sin()];
        (0..=m).map(|j| cyc[j % 4] / factorial(j)).collect()
    }

    #[test]
    fn lower_set_enumerates_box() {
        let a = MultiIndex(vec![1, 2]);
        assert_eq!(a.lower_set().len(), 6);
        assert!(a.lower_set().iter().all(|b| b.le(&a)));
    }
}
