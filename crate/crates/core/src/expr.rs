//! Expression trees for smooth functions.
//!
//! An [`Expr`] is an immutable, cheaply clonable tree. Plain evaluation works
//! on `f64`; [`Expr::jet`] propagates truncated Taylor jets through the same
//! tree, which is how every derivative in the crate is computed.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::ops;
use std::sync::Arc;

use crate::error::EvalError;
use crate::jet::{factorial, Jet, MultiIndex};

/// Built-in univariate primitives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Erf,
    /// Standard normal density `e^{−u²/2}/√(2π)`.
    Gauss,
    /// `C^∞` step: 0 for `u ≤ 0`, 1 for `u ≥ 1`.
    Smoothstep,
    /// `e^{−1/(1−u²)}` on `(−1, 1)`, zero elsewhere.
    Bump,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Erf => "erf",
            Func::Gauss => "gauss",
            Func::Smoothstep => "smoothstep",
            Func::Bump => "bump",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "erf" => Func::Erf,
            "gauss" => Func::Gauss,
            "smoothstep" => Func::Smoothstep,
            "bump" => Func::Bump,
            _ => return None,
        })
    }

    pub fn eval(self, u: f64) -> Result<f64, EvalError> {
        Ok(match self {
            Func::Exp => u.exp(),
            Func::Log => {
                if u <= 0.0 {
                    return Err(EvalError::Domain { op: "log", value: u });
                }
                u.ln()
            }
            Func::Sin => u.sin(),
            Func::Cos => u.cos(),
            Func::Erf => libm::erf(u),
            Func::Gauss => gauss(u),
            Func::Smoothstep => smoothstep(u),
            Func::Bump => bump(u),
        })
    }

    /// Normalized Taylor coefficients `g^{(j)}(u)/j!` for `j ≤ order`.
    pub fn taylor(self, u: f64, order: usize) -> Result<Vec<f64>, EvalError> {
        let m = order;
        Ok(match self {
            Func::Exp => {
                let e = u.exp();
                (0..=m).map(|j| e / factorial(j)).collect()
            }
            Func::Log => {
                if u <= 0.0 {
                    return Err(EvalError::Domain { op: "log", value: u });
                }
                let mut out = vec![u.ln()];
                for j in 1..=m {
                    let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
                    out.push(sign / (j as f64 * u.powi(j as i32)));
                }
                out
            }
            Func::Sin => {
                let cyc = [u.sin(), u.cos(), -u.sin(), -u.cos()];
                (0..=m).map(|j| cyc[j % 4] / factorial(j)).collect()
            }
            Func::Cos => {
                let cyc = [u.cos(), -u.sin(), -u.cos(), u.sin()];
                (0..=m).map(|j| cyc[j % 4] / factorial(j)).collect()
            }
            Func::Erf => {
                // erf^{(j)}(u) = (2/√π)(−1)^{j−1} H_{j−1}(u) e^{−u²}
                let h = hermite_phys(u, m);
                let w = 2.0 / PI.sqrt() * (-u * u).exp();
                let mut out = vec![libm::erf(u)];
                for j in 1..=m {
                    let sign = if (j - 1) % 2 == 0 { 1.0 } else { -1.0 };
                    out.push(sign * h[j - 1] * w / factorial(j));
                }
                out
            }
            Func::Gauss => {
                // φ^{(j)}(u) = (−1)^j He_j(u) φ(u)
                let he = hermite_prob(u, m);
                let phi = gauss(u);
                (0..=m)
                    .map(|j| {
                        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                        sign * he[j] * phi / factorial(j)
                    })
                    .collect()
            }
            Func::Smoothstep => {
                if u <= 0.0 {
                    vec![0.0; m + 1]
                } else if u >= 1.0 {
                    let mut v = vec![0.0; m + 1];
                    v[0] = 1.0;
                    v
                } else {
                    let t = Jet::variable(&[u], m, 0);
                    let a = exp_neg_recip(&t)?;
                    let b = exp_neg_recip(&t.neg().add_constant(1.0))?;
                    a.div(&a.add(&b))?.coeffs().to_vec()
                }
            }
            Func::Bump => {
                if u.abs() >= 1.0 {
                    vec![0.0; m + 1]
                } else {
                    let t = Jet::variable(&[u], m, 0);
                    let one_minus = t.mul(&t).neg().add_constant(1.0);
                    exp_neg_recip(&one_minus)?.coeffs().to_vec()
                }
            }
        })
    }
}

/// `e^{−1/v}` for a jet with positive base value.
fn exp_neg_recip(v: &Jet) -> Result<Jet, EvalError> {
    let inner = v.recip()?.neg();
    Ok(inner.compose_univariate(&Func::Exp.taylor(inner.value(), v.order())?))
}

pub fn gauss(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
}

pub fn smoothstep(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / u).exp();
        let b = (-1.0 / (1.0 - u)).exp();
        a / (a + b)
    }
}

pub fn bump(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - u * u)).exp()
    }
}

fn hermite_phys(u: f64, m: usize) -> Vec<f64> {
    let mut h = vec![1.0, 2.0 * u];
    for k in 1..m {
        let next = 2.0 * u * h[k] - 2.0 * k as f64 * h[k - 1];
        h.push(next);
    }
    h.truncate(m + 1);
    h
}

fn hermite_prob(u: f64, m: usize) -> Vec<f64> {
    let mut h = vec![1.0, u];
    for k in 1..m {
        let next = u * h[k] - k as f64 * h[k - 1];
        h.push(next);
    }
    h.truncate(m + 1);
    h
}

/// An externally implemented smooth primitive (e.g. a quadrature-backed
/// convolution) that can report its own Taylor jet.
pub trait Primitive: Send + Sync {
    fn name(&self) -> &str;
    fn arity(&self) -> usize;
    fn eval(&self, args: &[f64]) -> Result<f64, EvalError>;
    /// Jet in `arity()` variables at `args`.
    fn jet(&self, args: &[f64], order: usize) -> Result<Jet, EvalError>;
}

#[derive(Clone)]
pub enum Node {
    Const(f64),
    Var(usize),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Neg(Expr),
    Powi(Expr, i32),
    Unary(Func, Expr),
    /// `(D^α body)(args)`; `body` is a function of its own positional variables.
    Diff { alpha: MultiIndex, body: Expr, args: Vec<Expr> },
    Call { prim: Arc<dyn Primitive>, args: Vec<Expr> },
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        use Node::*;
        match (self, other) {
            (Const(a), Const(b)) => a.to_bits() == b.to_bits() || a == b,
            (Var(a), Var(b)) => a == b,
            (Add(a, b), Add(c, d)) | (Sub(a, b), Sub(c, d)) | (Mul(a, b), Mul(c, d)) | (Div(a, b), Div(c, d)) => {
                a == c && b == d
            }
            (Neg(a), Neg(b)) => a == b,
            (Powi(a, p), Powi(b, q)) => p == q && a == b,
            (Unary(f, a), Unary(g, b)) => f == g && a == b,
            (Diff { alpha: a1, body: b1, args: x1 }, Diff { alpha: a2, body: b2, args: x2 }) => {
                a1 == a2 && b1 == b2 && x1 == x2
            }
            (Call { prim: p1, args: x1 }, Call { prim: p2, args: x2 }) => {
                Arc::ptr_eq(p1, p2) && x1 == x2
            }
            _ => false,
        }
    }
}

/// A smooth scalar expression in positional variables `x_0, x_1, …`.
#[derive(Clone, PartialEq)]
pub struct Expr(Arc<Node>);

impl Expr {
    pub fn new(node: Node) -> Expr {
        Expr(Arc::new(node))
    }

    pub fn node(&self) -> &Node {
        &self.0
    }

    pub fn constant(c: f64) -> Expr {
        Expr::new(Node::Const(c))
    }

    pub fn var(i: usize) -> Expr {
        Expr::new(Node::Var(i))
    }

    /// Identity argument list `[x_0, …, x_{k−1}]`.
    pub fn vars(k: usize) -> Vec<Expr> {
        (0..k).map(Expr::var).collect()
    }

    pub fn as_const(&self) -> Option<f64> {
        match self.node() {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn unary(self, f: Func) -> Expr {
        Expr::new(Node::Unary(f, self))
    }

    pub fn exp(self) -> Expr {
        self.unary(Func::Exp)
    }
    pub fn ln(self) -> Expr {
        self.unary(Func::Log)
    }
    pub fn sin(self) -> Expr {
        self.unary(Func::Sin)
    }
    pub fn cos(self) -> Expr {
        self.unary(Func::Cos)
    }
    pub fn erf(self) -> Expr {
        self.unary(Func::Erf)
    }
    pub fn gauss(self) -> Expr {
        self.unary(Func::Gauss)
    }
    pub fn smoothstep(self) -> Expr {
        self.unary(Func::Smoothstep)
    }
    pub fn bump(self) -> Expr {
        self.unary(Func::Bump)
    }

    pub fn powi(self, p: i32) -> Expr {
        Expr::new(Node::Powi(self, p))
    }

    pub fn call(prim: Arc<dyn Primitive>, args: Vec<Expr>) -> Expr {
        Expr::new(Node::Call { prim, args })
    }

    /// `D^α` of this expression regarded as a function of `k = α.dim()`
    /// variables. Nested derivatives of the identity-argument form merge.
    pub fn diff(&self, alpha: &MultiIndex) -> Expr {
        if alpha.is_zero() {
            return self.clone();
        }
        let k = alpha.dim();
        if let Node::Diff { alpha: inner, body, args } = self.node() {
            if inner.dim() == k && *args == Expr::vars(k) {
                return Expr::new(Node::Diff { alpha: inner.add(alpha), body: body.clone(), args: args.clone() });
            }
        }
        Expr::new(Node::Diff { alpha: alpha.clone(), body: self.clone(), args: Expr::vars(k) })
    }

    /// Replaces each `Var(i)` with `args[i]`. Bodies of `Diff` nodes keep their
    /// own variables; only their argument lists are rewritten.
    pub fn substitute(&self, args: &[Expr]) -> Expr {
        use Node::*;
        match self.node() {
            Const(_) => self.clone(),
            Var(i) => args.get(*i).cloned().unwrap_or_else(|| self.clone()),
            Add(a, b) => Expr::new(Add(a.substitute(args), b.substitute(args))),
            Sub(a, b) => Expr::new(Sub(a.substitute(args), b.substitute(args))),
            Mul(a, b) => Expr::new(Mul(a.substitute(args), b.substitute(args))),
            Div(a, b) => Expr::new(Div(a.substitute(args), b.substitute(args))),
            Neg(a) => Expr::new(Neg(a.substitute(args))),
            Powi(a, p) => Expr::new(Powi(a.substitute(args), *p)),
            Unary(f, a) => Expr::new(Unary(*f, a.substitute(args))),
            Diff { alpha, body, args: inner } => Expr::new(Diff {
                alpha: alpha.clone(),
                body: body.clone(),
                args: inner.iter().map(|e| e.substitute(args)).collect(),
            }),
            Call { prim, args: inner } => Expr::new(Call {
                prim: prim.clone(),
                args: inner.iter().map(|e| e.substitute(args)).collect(),
            }),
        }
    }

    /// Largest variable index referenced outside of `Diff` bodies, plus one.
    pub fn arity(&self) -> usize {
        use Node::*;
        match self.node() {
            Const(_) => 0,
            Var(i) => i + 1,
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => a.arity().max(b.arity()),
            Neg(a) | Powi(a, _) | Unary(_, a) => a.arity(),
            Diff { args, .. } | Call { args, .. } => args.iter().map(Expr::arity).max().unwrap_or(0),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        use Node::*;
        let v = match self.node() {
            Const(c) => *c,
            Var(i) => *x.get(*i).ok_or(EvalError::Arity { expected: i + 1, got: x.len() })?,
            Add(a, b) => a.eval(x)? + b.eval(x)?,
            Sub(a, b) => a.eval(x)? - b.eval(x)?,
            Mul(a, b) => a.eval(x)? * b.eval(x)?,
            Div(a, b) => {
                let d = b.eval(x)?;
                if d == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                a.eval(x)? / d
            }
            Neg(a) => -a.eval(x)?,
            Powi(a, p) => {
                let u = a.eval(x)?;
                if u == 0.0 && *p < 0 {
                    return Err(EvalError::DivisionByZero);
                }
                u.powi(*p)
            }
            Unary(f, a) => f.eval(a.eval(x)?)?,
            Diff { alpha, body, args } => {
                let u = eval_args(args, x)?;
                let jet = body.jet_at(&u, alpha.order())?;
                jet.derivative(alpha)
            }
            Call { prim, args } => {
                if args.len() != prim.arity() {
                    return Err(EvalError::Arity { expected: prim.arity(), got: args.len() });
                }
                prim.eval(&eval_args(args, x)?)?
            }
        };
        Ok(v)
    }

    /// Taylor jet of order `order` at the point `x`.
    pub fn jet_at(&self, x: &[f64], order: usize) -> Result<Jet, EvalError> {
        Jet::check_order(order)?;
        let vars = Jet::variables(x, order);
        self.jet(&vars)
    }

    /// Propagates input jets (one per variable, all of the same shape).
    pub fn jet(&self, inputs: &[Jet]) -> Result<Jet, EvalError> {
        let mut cache = HashMap::new();
        self.jet_cached(inputs, &mut cache)
    }

    fn jet_cached(&self, inputs: &[Jet], cache: &mut HashMap<usize, Jet>) -> Result<Jet, EvalError> {
        let key = Arc::as_ptr(&self.0) as usize;
        if let Some(j) = cache.get(&key) {
            return Ok(j.clone());
        }
        let shape = inputs.first().ok_or(EvalError::Arity { expected: 1, got: 0 })?;
        let order = shape.order();
        use Node::*;
        let jet = match self.node() {
            Const(c) => Jet::constant(shape.point(), order, *c),
            Var(i) => inputs.get(*i).cloned().ok_or(EvalError::Arity { expected: i + 1, got: inputs.len() })?,
            Add(a, b) => a.jet_cached(inputs, cache)?.add(&b.jet_cached(inputs, cache)?),
            Sub(a, b) => a.jet_cached(inputs, cache)?.sub(&b.jet_cached(inputs, cache)?),
            Mul(a, b) => a.jet_cached(inputs, cache)?.mul(&b.jet_cached(inputs, cache)?),
            Div(a, b) => a.jet_cached(inputs, cache)?.div(&b.jet_cached(inputs, cache)?)?,
            Neg(a) => a.jet_cached(inputs, cache)?.neg(),
            Powi(a, p) => {
                let inner = a.jet_cached(inputs, cache)?;
                inner.compose_univariate(&powi_taylor(inner.value(), *p, order)?)
            }
            Unary(f, a) => {
                let inner = a.jet_cached(inputs, cache)?;
                inner.compose_univariate(&f.taylor(inner.value(), order)?)
            }
            Diff { alpha, body, args } => {
                let arg_jets = args
                    .iter()
                    .map(|e| e.jet_cached(inputs, cache))
                    .collect::<Result<Vec<_>, _>>()?;
                let base: Vec<f64> = arg_jets.iter().map(Jet::value).collect();
                let raised = order + alpha.order();
                Jet::check_order(raised)?;
                let outer = body.jet_at(&base, raised)?.shift(alpha)?;
                outer.compose(&arg_jets)
            }
            Call { prim, args } => {
                if args.len() != prim.arity() {
                    return Err(EvalError::Arity { expected: prim.arity(), got: args.len() });
                }
                let arg_jets = args
                    .iter()
                    .map(|e| e.jet_cached(inputs, cache))
                    .collect::<Result<Vec<_>, _>>()?;
                let base: Vec<f64> = arg_jets.iter().map(Jet::value).collect();
                prim.jet(&base, order)?.compose(&arg_jets)
            }
        };
        cache.insert(key, jet.clone());
        Ok(jet)
    }
}

fn eval_args(args: &[Expr], x: &[f64]) -> Result<Vec<f64>, EvalError> {
    args.iter().map(|a| a.eval(x)).collect()
}

fn powi_taylor(u: f64, p: i32, m: usize) -> Result<Vec<f64>, EvalError> {
    if u == 0.0 && p < 0 {
        return Err(EvalError::DivisionByZero);
    }
    let mut out = Vec::with_capacity(m + 1);
    let mut falling = 1.0;
    for j in 0..=m {
        if j > 0 {
            falling *= (p - (j as i32 - 1)) as f64;
        }
        let e = p - j as i32;
        let c = if falling == 0.0 { 0.0 } else { falling / factorial(j) * u.powi(e) };
        out.push(c);
    }
    Ok(out)
}

impl From<f64> for Expr {
    fn from(c: f64) -> Expr {
        Expr::constant(c)
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $variant:ident) => {
        impl ops::$trait for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::new(Node::$variant(self, rhs))
            }
        }
        impl ops::$trait<&Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                Expr::new(Node::$variant(self.clone(), rhs.clone()))
            }
        }
        impl ops::$trait<&Expr> for Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                Expr::new(Node::$variant(self, rhs.clone()))
            }
        }
        impl ops::$trait<f64> for Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                Expr::new(Node::$variant(self, Expr::constant(rhs)))
            }
        }
        impl ops::$trait<Expr> for f64 {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                Expr::new(Node::$variant(Expr::constant(self), rhs))
            }
        }
    };
}

binop!(Add, add, Add);
binop!(Sub, sub, Sub);
binop!(Mul, mul, Mul);
binop!(Div, div, Div);

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::new(Node::Neg(self))
    }
}

impl ops::Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::new(Node::Neg(self.clone()))
    }
}

/// Default variable names used for printing and parsing.
pub const VAR_NAMES: [&str; 4] = ["x", "y", "z", "w"];

pub(crate) fn var_name(i: usize) -> String {
    VAR_NAMES.get(i).map(|s| s.to_string()).unwrap_or_else(|| format!("x{i}"))
}

/// Shortest round-tripping decimal form of a float.
pub fn fmt_num(v: f64) -> String {
    format!("{v:?}")
}

fn precedence(node: &Node) -> u8 {
    match node {
        Node::Add(..) | Node::Sub(..) => 1,
        Node::Mul(..) | Node::Div(..) => 2,
        Node::Neg(..) => 3,
        Node::Powi(..) => 4,
        Node::Const(c) if c.is_sign_negative() => 0,
        _ => 5,
    }
}

impl Expr {
    fn write_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let p = precedence(self.node());
        if p < min {
            write!(f, "(")?;
            self.write_bare(f)?;
            write!(f, ")")
        } else {
            self.write_bare(f)
        }
    }

    fn write_bare(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Node::*;
        match self.node() {
            Const(c) => write!(f, "{}", fmt_num(*c)),
            Var(i) => write!(f, "{}", var_name(*i)),
            Add(a, b) => {
                a.write_prec(f, 1)?;
                write!(f, " + ")?;
                b.write_prec(f, 2)
            }
            Sub(a, b) => {
                a.write_prec(f, 1)?;
                write!(f, " - ")?;
                b.write_prec(f, 2)
            }
            Mul(a, b) => {
                a.write_prec(f, 2)?;
                write!(f, "*")?;
                b.write_prec(f, 3)
            }
            Div(a, b) => {
                a.write_prec(f, 2)?;
                write!(f, "/")?;
                b.write_prec(f, 3)
            }
            Neg(a) => {
                write!(f, "-(")?;
                a.write_bare(f)?;
                write!(f, ")")
            }
            Powi(a, p) => {
                a.write_prec(f, 5)?;
                if *p < 0 {
                    write!(f, "^({p})")
                } else {
                    write!(f, "^{p}")
                }
            }
            Unary(func, a) => {
                write!(f, "{}(", func.name())?;
                a.write_bare(f)?;
                write!(f, ")")
            }
            Diff { alpha, body, args } => {
                write!(f, "D{alpha}[{body}](")?;
                write_args(f, args)?;
                write!(f, ")")
            }
            Call { prim, args } => {
                write!(f, "{}(", prim.name())?;
                write_args(f, args)?;
                write!(f, ")")
            }
        }
    }
}

fn write_args(f: &mut fmt::Formatter<'_>, args: &[Expr]) -> fmt::Result {
    for (i, a) in args.iter().enumerate() {
        if i > 0 {
            write!(f, ", ")?;
        }
        a.write_bare(f)?;
    }
    Ok(())
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_bare(f)
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({self})")
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
    fn exp_jet_coefficients() {
        let j = x().exp().jet_at(&[0.0], 3).unwrap();
        let want = [1.0, 1.0, 0.5, 1.0 / 6.0];
        for (a, b) in j.coeffs().iter().zip(want) {
            assert_relative_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn product_gradient() {
        let e = Expr::var(0) * Expr::var(1);
        let j = e.jet_at(&[2.0, 3.0], 1).unwrap();
        assert_eq!(j.value(), 6.0);
        assert_eq!(j.gradient(), vec![3.0, 2.0]);
    }

    #[test]
    fn log_domain_error() {
        assert!(matches!(x().ln().eval(&[-1.0]), Err(EvalError::Domain { op: "log", .. })));
        assert!(matches!(x().ln().jet_at(&[0.0], 2), Err(EvalError::Domain { .. })));
        assert_eq!((1.0 / x()).eval(&[0.0]), Err(EvalError::DivisionByZero));
    }

    #[test]
    fn diff_nodes_merge() {
        let f = Expr::var(0) * Expr::var(1);
        let a = f.diff(&MultiIndex(vec![1, 0])).diff(&MultiIndex(vec![0, 1]));
        let b = f.diff(&MultiIndex(vec![1, 1]));
        assert_eq!(a, b);
        assert_relative_eq!(a.eval(&[0.3, 0.7]).unwrap(), 1.0);
    }

    #[test]
    fn diff_node_jet_is_shifted_jet() {
        let f = x().powi(3);
        let d = f.diff(&MultiIndex(vec![1]));
        let j = d.jet_at(&[2.0], 2).unwrap();
        assert_relative_eq!(j.coeffs()[0], 12.0, epsilon = 1e-14);
        assert_relative_eq!(j.coeffs()[1], 12.0, epsilon = 1e-14);
        assert_relative_eq!(j.coeffs()[2], 3.0, epsilon = 1e-14);
    }

    #[test]
    fn substitute_leaves_diff_body_alone() {
        let f = x().sin().diff(&MultiIndex(vec![1]));
        let g = f.substitute(&[x() * 2.0]);
        // d/du sin(u) at u = 2x
        assert_relative_eq!(g.eval(&[0.25]).unwrap(), (0.5f64).cos(), epsilon = 1e-15);
    }

    #[test]
    fn smoothstep_and_bump_jets_match_values() {
        for &u in &[-0.5, 0.0, 0.2, 0.5, 0.9, 1.0, 1.3] {
            let j = x().smoothstep().jet_at(&[u], 3).unwrap();
            assert_eq!(j.value(), smoothstep(u));
            let b = x().bump().jet_at(&[u * 0.9], 3).unwrap();
            assert_relative_eq!(b.value(), bump(u * 0.9), epsilon = 1e-15);
        }
        // derivative of smoothstep at 1/2 by symmetry is the peak slope, positive
        assert!(x().smoothstep().jet_at(&[0.5], 1).unwrap().gradient()[0] > 0.0);
    }

    #[test]
    fn erf_and_gauss_derivatives() {
        let j = x().erf().jet_at(&[0.4], 2).unwrap();
        let d = 2.0 / PI.sqrt() * (-0.16f64).exp();
        assert_relative_eq!(j.gradient()[0], d, epsilon = 1e-15);
        assert_relative_eq!(j.coeffs()[2] * 2.0, -2.0 * 0.4 * d, epsilon = 1e-14);
        let g = x().gauss().jet_at(&[0.4], 1).unwrap();
        assert_relative_eq!(g.gradient()[0], -0.4 * gauss(0.4), epsilon = 1e-15);
    }

    #[test]
    fn display_is_stable() {
        let e = (x() + 1.0) * Expr::constant(-2.0) - x().powi(-2);
        assert_eq!(e.to_string(), "(x + 1.0)*(-2.0) - x^(-2)");
        let n = -(x() * 2.0);
        assert_eq!(n.to_string(), "-(x*2.0)");
    }
}
