//! Vanishing-moment mollifiers `ϱ(x) = Π_i P(x_i²)·φ(x_i)` with `φ` the
//! standard normal density, and their scaled family `ϱ_n(x) = n^k ϱ(nx)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DistError, EvalError};
use crate::expr::{gauss, Expr};
use crate::jet::binomial;
use crate::quadrature::{integrate_whole_space_with, QuadOptions, QuadResult};
use crate::smooth::SmoothMap;

/// `(2q − 1)!!`, the `2q`-th moment of the standard normal law.
pub fn gaussian_moment(two_q: usize) -> f64 {
    debug_assert!(two_q.is_multiple_of(2));
    (1..two_q).step_by(2).map(|v| v as f64).product()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mollifier {
    dimension: usize,
    order: usize,
    /// Coefficient of `x^{2q}` in the even polynomial factor, `q = 0..=d/2`.
    coefficients: Vec<f64>,
}

impl Mollifier {
    /// Solves `Σ_q c_q m_{2q+2j} = δ_{j0}` for `j = 0..=d/2`.
    pub fn build(k: usize, d: usize) -> Result<Mollifier, DistError> {
        if !(1..=3).contains(&k) {
            return Err(DistError::Mollifier(format!("dimension {k} is outside 1..=3")));
        }
        if !(2..=8).contains(&d) || !d.is_multiple_of(2) {
            return Err(DistError::Mollifier(format!("moment order {d} must be even and in 2..=8")));
        }
        let m = d / 2 + 1;
        let a = DMatrix::from_fn(m, m, |j, q| gaussian_moment(2 * (q + j)));
        let mut rhs = DVector::zeros(m);
        rhs[0] = 1.0;
        let c = a
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| DistError::Mollifier("singular moment system".into()))?;
        let residual = (&a * &c - &rhs).amax();
        let scale = a.amax() * c.amax();
        if residual > 1e-12 * scale.max(1.0) {
            return Err(DistError::Mollifier(format!("moment system residual {residual:e}")));
        }
        Ok(Mollifier { dimension: k, order: d, coefficients: c.iter().copied().collect() })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Truncation radius for whole-space quadrature.
    pub fn radius(&self) -> f64 {
        8.0 + self.order as f64
    }

    /// Residual `max_j |Σ_q c_q m_{2q+2j} − δ_{j0}|` of the moment system.
    pub fn moment_residual(&self) -> f64 {
        (0..self.coefficients.len())
            .map(|j| {
                let s: f64 = self.coefficients.iter().enumerate().map(|(q, c)| c * gaussian_moment(2 * (q + j))).sum();
                (s - if j == 0 { 1.0 } else { 0.0 }).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Dense coefficients `a_i` of the polynomial factor `Σ a_i u^i`.
    fn poly(&self) -> Vec<f64> {
        let mut a = vec![0.0; 2 * self.coefficients.len() - 1];
        for (q, c) in self.coefficients.iter().enumerate() {
            a[2 * q] = *c;
        }
        a
    }

    /// One-dimensional profile `P(u²) φ(u)`.
    pub fn profile(&self, u: f64) -> f64 {
        let s = u * u;
        let p = self.coefficients.iter().rev().fold(0.0, |acc, c| acc * s + c);
        p * gauss(u)
    }

    /// `ϱ(x)` as a product of profiles.
    pub fn value(&self, x: &[f64]) -> f64 {
        x.iter().map(|&u| self.profile(u)).product()
    }

    /// Taylor coefficients `f^{(j)}(u)/j!`, `j ≤ order`, of the profile.
    pub fn profile_taylor(&self, u: f64, order: usize) -> Vec<f64> {
        let a = self.poly();
        let poly_t: Vec<f64> = (0..=order)
            .map(|j| (j..a.len()).map(|i| a[i] * binomial(i, j) * u.powi((i - j) as i32)).sum())
            .collect();
        // φ(u + h) = φ(u) Σ_m (−1)^m He_m(u) h^m / m!
        let mut he = vec![1.0, u];
        for m in 1..order {
            let next = u * he[m] - m as f64 * he[m - 1];
            he.push(next);
        }
        let g = gauss(u);
        let mut fact = 1.0;
        let gauss_t: Vec<f64> = (0..=order)
            .map(|m| {
                if m > 0 {
                    fact *= m as f64;
                }
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                sign * he[m] * g / fact
            })
            .collect();
        (0..=order).map(|j| (0..=j).map(|i| poly_t[i] * gauss_t[j - i]).sum()).collect()
    }

    /// Profile as an expression in `u`.
    pub fn profile_expr(&self, u: &Expr) -> Expr {
        let s = u.clone().powi(2);
        let mut p = Expr::constant(*self.coefficients.last().expect("non-empty"));
        for c in self.coefficients.iter().rev().skip(1) {
            p = p * &s + *c;
        }
        p * u.clone().gauss()
    }

    /// `ϱ` as an expression in `k` variables.
    pub fn expr(&self) -> Expr {
        let mut out = self.profile_expr(&Expr::var(0));
        for i in 1..self.dimension {
            out = out * self.profile_expr(&Expr::var(i));
        }
        out
    }

    pub fn smooth_map(&self) -> SmoothMap {
        SmoothMap::whole(self.expr(), self.dimension)
    }

    /// `ϱ_n(x) = n^k ϱ(n x)` as an expression.
    pub fn scaled_expr(&self, n: u64) -> Expr {
        let nf = n as f64;
        let args: Vec<Expr> = (0..self.dimension).map(|i| nf * Expr::var(i)).collect();
        nf.powi(self.dimension as i32) * self.expr().substitute(&args)
    }

    pub fn scale(&self, n: u64) -> SmoothMap {
        SmoothMap::whole(self.scaled_expr(n), self.dimension)
    }

    fn require_1d(&self) -> Result<(), DistError> {
        if self.dimension != 1 {
            return Err(DistError::Dimension(format!(
                "closed-form cumulatives need a 1-D mollifier, got k = {}",
                self.dimension
            )));
        }
        Ok(())
    }

    /// Odd polynomial `Q` with `F(u) = Φ(u) − Q(u) φ(u)`; dense coefficients.
    fn cumulative_poly(&self) -> Vec<f64> {
        // S_q = u^{2q−1} + (2q−1) S_{q−1}, S_0 = 0
        let deg = 2 * self.coefficients.len();
        let mut s = vec![0.0; deg];
        let mut q_poly = vec![0.0; deg];
        for (q, c) in self.coefficients.iter().enumerate().skip(1) {
            let mut next: Vec<f64> = s.iter().map(|v| v * (2 * q - 1) as f64).collect();
            next[2 * q - 1] += 1.0;
            s = next;
            for (acc, v) in q_poly.iter_mut().zip(&s) {
                *acc += c * v;
            }
        }
        q_poly
    }

    /// Even polynomial `R` with `∫_{−∞}^u s ϱ(s) ds = −R(u) φ(u)`.
    fn first_moment_poly(&self) -> Vec<f64> {
        // R_q = u^{2q} + 2q R_{q−1}, R_0 = 1
        let deg = 2 * self.coefficients.len();
        let mut r = vec![0.0; deg];
        r[0] = 1.0;
        let mut out: Vec<f64> = r.iter().map(|v| v * self.coefficients[0]).collect();
        for (q, c) in self.coefficients.iter().enumerate().skip(1) {
            let mut next: Vec<f64> = r.iter().map(|v| v * (2 * q) as f64).collect();
            next[2 * q] += 1.0;
            r = next;
            for (acc, v) in out.iter_mut().zip(&r) {
                *acc += c * v;
            }
        }
        out
    }

    /// `F(u) = ∫_{−∞}^u ϱ(s) ds` (1-D).
    pub fn cumulative(&self, u: f64) -> f64 {
        let q = eval_poly(&self.cumulative_poly(), u);
        0.5 + 0.5 * libm::erf(u * std::f64::consts::FRAC_1_SQRT_2) - q * gauss(u)
    }

    /// `G(u) = ∫_{−∞}^u s ϱ(s) ds` (1-D).
    pub fn first_moment(&self, u: f64) -> f64 {
        -eval_poly(&self.first_moment_poly(), u) * gauss(u)
    }

    /// `F` as an expression in `u`.
    pub fn cumulative_expr(&self, u: &Expr) -> Expr {
        let erf_part = 0.5 + 0.5 * (std::f64::consts::FRAC_1_SQRT_2 * u.clone()).erf();
        let q = poly_expr(&self.cumulative_poly(), u);
        match q {
            Some(q) => erf_part - q * u.clone().gauss(),
            None => erf_part,
        }
    }

    /// `G` as an expression in `u`.
    pub fn first_moment_expr(&self, u: &Expr) -> Expr {
        let r = poly_expr(&self.first_moment_poly(), u).expect("R has a constant term");
        -(r * u.clone().gauss())
    }

    /// Closed-form cumulative `F` with `F′ = ϱ`.
    pub fn antiderivative_1d(&self) -> Result<SmoothMap, DistError> {
        self.require_1d()?;
        Ok(SmoothMap::whole(self.cumulative_expr(&Expr::var(0)), 1))
    }

    /// `∫ x^α ϱ(x) dx` for a single exponent vector, by quadrature.
    pub fn moment(&self, alpha: &[u32]) -> Result<QuadResult, EvalError> {
        let mut e = self.expr();
        for (i, &a) in alpha.iter().enumerate() {
            if a > 0 {
                e = Expr::var(i).powi(a as i32) * e;
            }
        }
        let opts = QuadOptions { abs_tol: 1e-13, rel_tol: 1e-13, ..QuadOptions::default() };
        integrate_whole_space_with(&SmoothMap::whole(e, self.dimension), self.dimension, self.radius(), opts)
    }

    /// `|∫ x^j ϱ|` along the first axis for `j = 0..=max_j` (mass at `j = 0`).
    pub fn axis_moments(&self, max_j: u32) -> Result<Vec<QuadResult>, EvalError> {
        (0..=max_j)
            .map(|j| {
                let mut alpha = vec![0; self.dimension];
                alpha[0] = j;
                self.moment(&alpha)
            })
            .collect()
    }
}

fn eval_poly(a: &[f64], u: f64) -> f64 {
    a.iter().rev().fold(0.0, |acc, c| acc * u + c)
}

/// Horner expression of a dense polynomial; `None` when it is identically 0.
fn poly_expr(a: &[f64], u: &Expr) -> Option<Expr> {
    let top = a.iter().rposition(|c| *c != 0.0)?;
    let mut p = Expr::constant(a[top]);
    for c in a[..top].iter().rev() {
        p = p * u.clone();
        if *c != 0.0 {
            p = p + *c;
        }
    }
    Some(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate_1d;
    use approx::assert_abs_diff_eq;

    #[test]
    fn order_two_coefficients() {
        let m = Mollifier::build(1, 2).unwrap();
        assert_abs_diff_eq!(m.coefficients()[0], 1.5, epsilon = 1e-14);
        assert_abs_diff_eq!(m.coefficients()[1], -0.5, epsilon = 1e-14);
        assert!(m.moment_residual() <= 1e-12);
    }

    #[test]
    fn moments_vanish_by_quadrature() {
        for d in [2, 4, 6, 8] {
            let m = Mollifier::build(1, d).unwrap();
            let mom = m.axis_moments(d as u32).unwrap();
            assert!((mom[0].value - 1.0).abs() <= 1e-10, "d={d} mass {}", mom[0].value);
            for (j, r) in mom.iter().enumerate().skip(1) {
                assert!(r.value.abs() <= 1e-8, "d={d} j={j} moment {}", r.value);
            }
        }
    }

    #[test]
    fn tensor_product_mixed_moment() {
        let m = Mollifier::build(2, 2).unwrap();
        assert_abs_diff_eq!(m.moment(&[1, 1]).unwrap().value, 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(m.moment(&[0, 0]).unwrap().value, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn scaled_value_at_origin() {
        let m = Mollifier::build(1, 2).unwrap();
        let v = m.scale(10).eval_scalar(&[0.0]).unwrap();
        assert_abs_diff_eq!(v, 10.0 * 1.5 / (2.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-13);
        for x in [-0.3, 0.0, 0.05, 0.71] {
            let direct = 10.0 * m.expr().eval(&[10.0 * x]).unwrap();
            assert_eq!(m.scale(10).eval_scalar(&[x]).unwrap(), direct);
        }
    }

    #[test]
    fn scaled_mass_and_second_moment() {
        let m = Mollifier::build(1, 2).unwrap();
        for n in [2u64, 32, 1024] {
            let e = m.scaled_expr(n);
            let r = m.radius() / n as f64;
            let opts = QuadOptions::new(1e-13);
            let mass = integrate_1d(|x| e.eval(&[x]).unwrap(), -r, r, &[0.0], opts);
            assert_abs_diff_eq!(mass.value, 1.0, epsilon = 1e-10);
            let second = integrate_1d(|x| x * x * e.eval(&[x]).unwrap(), -r, r, &[0.0], opts);
            assert_abs_diff_eq!(second.value, 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn cumulative_properties() {
        for d in [2, 4, 6, 8] {
            let m = Mollifier::build(1, d).unwrap();
            let f = m.antiderivative_1d().unwrap();
            assert_abs_diff_eq!(f.eval_scalar(&[0.0]).unwrap(), 0.5, epsilon = 1e-15);
            assert!((f.eval_scalar(&[8.0]).unwrap() - 1.0).abs() <= 1e-10);
            assert!(f.eval_scalar(&[-m.radius()]).unwrap().abs() <= 1e-10);
            for i in 0..20 {
                let x = -4.0 + 0.41 * i as f64;
                let jet = f.eval_jet(&[x], 1).unwrap();
                assert!((jet[0].coeffs()[1] - m.profile(x)).abs() <= 1e-12, "d={d} x={x}");
                assert_abs_diff_eq!(m.cumulative(x), jet[0].value(), epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn first_moment_matches_quadrature() {
        let m = Mollifier::build(1, 4).unwrap();
        for u in [-1.5, 0.0, 0.7, 3.0] {
            let q = integrate_1d(|s| s * m.profile(s), -m.radius(), u, &[], QuadOptions::new(1e-14));
            assert_abs_diff_eq!(m.first_moment(u), q.value, epsilon = 1e-13);
        }
        let g = m.first_moment_expr(&Expr::var(0));
        let jet = g.jet_at(&[0.3], 1).unwrap();
        assert_abs_diff_eq!(jet.coeffs()[1], 0.3 * m.profile(0.3), epsilon = 1e-14);
    }

    #[test]
    fn profile_taylor_matches_expression_jet() {
        let m = Mollifier::build(1, 6).unwrap();
        let e = m.profile_expr(&Expr::var(0));
        for u in [-2.0, 0.0, 0.4] {
            let jet = e.jet_at(&[u], 8).unwrap();
            let t = m.profile_taylor(u, 8);
            for j in 0..=8 {
                assert_abs_diff_eq!(t[j], jet.coeffs()[j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn square_integral_two_rules() {
        // ∫ϱ² = (1/2√π)(9/4 − 3/4 + 3/16) for d = 2
        let m = Mollifier::build(1, 2).unwrap();
        let exact = 27.0 / (32.0 * std::f64::consts::PI.sqrt());
        let e = m.expr() * m.expr();
        let adaptive = integrate_whole_space_with(&SmoothMap::whole(e, 1), 1, m.radius(), QuadOptions::new(1e-14))
            .unwrap()
            .value;
        let h = 0.01;
        let trapezoid: f64 = (-1000..=1000).map(|i| m.profile(i as f64 * h).powi(2)).sum::<f64>() * h;
        assert!((adaptive - trapezoid).abs() <= 1e-9);
        assert_abs_diff_eq!(adaptive, exact, epsilon = 1e-12);
    }

    #[test]
    fn invalid_parameters() {
        assert!(Mollifier::build(4, 2).is_err());
        assert!(Mollifier::build(1, 3).is_err());
        assert!(Mollifier::build(1, 10).is_err());
    }
}
