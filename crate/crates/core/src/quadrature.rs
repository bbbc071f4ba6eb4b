//! Adaptive Gauss–Kronrod (7/15) quadrature on intervals and boxes.
//!
//! The rule is tensorized for `k ≤ 3`. Panels live in a max-heap keyed by
//! their error estimate; the worst panel is bisected along its longest axis
//! until the summed estimate meets the tolerance or the panel cap is hit.

use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::Serialize;

use crate::error::EvalError;
use crate::smooth::{tensor_points, DomainBox, SmoothMap};

/// Maximum number of panels before giving up.
pub const MAX_PANELS: usize = 20_000;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
/// Gauss weights for `XGK[1], XGK[3], XGK[5], XGK[7]`.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Reference nodes on [−1, 1] with Kronrod and (nested) Gauss weights.
fn reference_rule() -> Vec<(f64, f64, f64)> {
    let mut rule = Vec::with_capacity(15);
    for i in 0..7 {
        let wg = if i % 2 == 1 { WG[i / 2] } else { 0.0 };
        rule.push((-XGK[i], WGK[i], wg));
        rule.push((XGK[i], WGK[i], wg));
    }
    rule.push((0.0, WGK[7], WG[3]));
    rule
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_panels: usize,
}

impl QuadOptions {
    pub fn new(tol: f64) -> QuadOptions {
        QuadOptions { abs_tol: tol, rel_tol: tol, max_panels: MAX_PANELS }
    }

    pub fn absolute(tol: f64) -> QuadOptions {
        QuadOptions { abs_tol: tol, rel_tol: 0.0, max_panels: MAX_PANELS }
    }
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions::new(1e-12)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuadResult {
    pub value: f64,
    pub error_estimate: f64,
    pub subdivisions: usize,
    /// False when the panel cap was reached before the tolerance.
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VecQuadResult {
    pub values: Vec<f64>,
    pub error_estimate: f64,
    pub subdivisions: usize,
    pub converged: bool,
}

struct Panel {
    bounds: Vec<(f64, f64)>,
    values: Vec<f64>,
    err: f64,
    /// The Kronrod–Gauss difference is below the roundoff floor.
    at_floor: bool,
    seq: usize,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err
            .total_cmp(&other.err)
            // older panels first on ties, for a fixed processing order
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Rule {
    nodes: Vec<(Vec<f64>, f64, f64)>,
}

impl Rule {
    fn tensor(k: usize) -> Rule {
        let base = reference_rule();
        let axes: Vec<Vec<f64>> = (0..k).map(|_| (0..base.len()).map(|i| i as f64).collect()).collect();
        let nodes = tensor_points(&axes)
            .into_iter()
            .map(|idx| {
                let mut x = Vec::with_capacity(k);
                let mut wk = 1.0;
                let mut wg = 1.0;
                for i in idx {
                    let (xi, a, b) = base[i as usize];
                    x.push(xi);
                    wk *= a;
                    wg *= b;
                }
                (x, wk, wg)
            })
            .collect();
        Rule { nodes }
    }

    fn apply<F: FnMut(&[f64], &mut [f64])>(&self, f: &mut F, bounds: &[(f64, f64)], dim_out: usize) -> (Vec<f64>, f64, bool) {
        let k = bounds.len();
        let vol: f64 = bounds.iter().map(|(a, b)| 0.5 * (b - a)).product();
        let mut kron = vec![0.0; dim_out];
        let mut gauss = vec![0.0; dim_out];
        let mut absum = vec![0.0; dim_out];
        let mut x = vec![0.0; k];
        let mut fx = vec![0.0; dim_out];
        for (node, wk, wg) in &self.nodes {
            for i in 0..k {
                let (a, b) = bounds[i];
                x[i] = 0.5 * (a + b) + 0.5 * (b - a) * node[i];
            }
            fx.iter_mut().for_each(|v| *v = 0.0);
            f(&x, &mut fx);
            for j in 0..dim_out {
                kron[j] += wk * fx[j];
                absum[j] += wk * fx[j].abs();
                if *wg != 0.0 {
                    gauss[j] += wg * fx[j];
                }
            }
        }
        let mut err: f64 = 0.0;
        let mut at_floor = true;
        for j in 0..dim_out {
            kron[j] *= vol;
            gauss[j] *= vol;
            let roundoff = 50.0 * f64::EPSILON * absum[j] * vol.abs();
            let diff = (kron[j] - gauss[j]).abs();
            at_floor &= diff <= roundoff;
            let e = diff.max(roundoff);
            err = if e.is_nan() { f64::NAN } else { err.max(e) };
        }
        (kron, err, at_floor)
    }
}

fn split_axis(bounds: &[(f64, f64)], breaks: &[Vec<f64>]) -> Vec<Vec<(f64, f64)>> {
    let axes: Vec<Vec<(f64, f64)>> = bounds
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| {
            let mut cuts: Vec<f64> = breaks
                .get(i)
                .map(|v| v.iter().copied().filter(|c| *c > a && *c < b && c.is_finite()).collect())
                .unwrap_or_default();
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            let mut pts = vec![a];
            pts.extend(cuts);
            pts.push(b);
            pts.windows(2).filter(|w| w[1] > w[0]).map(|w| (w[0], w[1])).collect()
        })
        .collect();
    let mut out: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
    for axis in &axes {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for p in &out {
            for seg in axis {
                let mut q = p.clone();
                q.push(*seg);
                next.push(q);
            }
        }
        out = next;
    }
    out
}

/// Adaptive integration of a vector-valued integrand over a bounded box.
///
/// `breaks[i]` lists interior cut points along axis `i` used to seed the
/// initial panel partition.
pub fn integrate_box_vec<F>(
    mut f: F,
    dim_out: usize,
    bounds: &[(f64, f64)],
    breaks: &[Vec<f64>],
    opts: QuadOptions,
) -> VecQuadResult
where
    F: FnMut(&[f64], &mut [f64]),
{
    let k = bounds.len();
    assert!((1..=3).contains(&k), "quadrature supports dimensions 1 to 3");
    assert!(bounds.iter().all(|(a, b)| a.is_finite() && b.is_finite()), "integration box must be bounded");
    if bounds.iter().any(|(a, b)| a == b) {
        return VecQuadResult { values: vec![0.0; dim_out], error_estimate: 0.0, subdivisions: 0, converged: true };
    }
    let rule = Rule::tensor(k);
    let mut heap = BinaryHeap::new();
    let mut seq = 0;
    for panel in split_axis(bounds, breaks) {
        let (values, err, at_floor) = rule.apply(&mut f, &panel, dim_out);
        heap.push(Panel { bounds: panel, values, err, at_floor, seq });
        seq += 1;
    }
    let totals = |heap: &BinaryHeap<Panel>| -> (Vec<f64>, f64) {
        let mut panels: Vec<&Panel> = heap.iter().collect();
        panels.sort_by_key(|p| p.seq);
        let mut v = vec![0.0; dim_out];
        let mut e = 0.0;
        for p in panels {
            for (acc, x) in v.iter_mut().zip(&p.values) {
                *acc += x;
            }
            e += p.err;
        }
        (v, e)
    };
    let mut subdivisions = 0;
    loop {
        let (values, err) = totals(&heap);
        let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let target = opts.abs_tol.max(opts.rel_tol * scale);
        let finite = err.is_finite() && values.iter().all(|v| v.is_finite());
        // when the worst panel is roundoff-limited, bisection cannot help
        let floor_limited = heap.peek().is_some_and(|p| p.at_floor);
        if finite && (err <= target || floor_limited) {
            return VecQuadResult { values, error_estimate: err, subdivisions, converged: true };
        }
        if !finite || heap.len() >= opts.max_panels {
            return VecQuadResult { values, error_estimate: err, subdivisions, converged: false };
        }
        let worst = heap.pop().expect("heap is never empty");
        let axis = (0..k)
            .max_by(|&i, &j| {
                let wi = worst.bounds[i].1 - worst.bounds[i].0;
                let wj = worst.bounds[j].1 - worst.bounds[j].0;
                wi.total_cmp(&wj).then_with(|| j.cmp(&i))
            })
            .unwrap();
        let (a, b) = worst.bounds[axis];
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            // cannot split further; keep the panel and stop
            heap.push(worst);
            let (values, err) = totals(&heap);
            return VecQuadResult { values, error_estimate: err, subdivisions, converged: false };
        }
        for half in [(a, mid), (mid, b)] {
            let mut nb = worst.bounds.clone();
            nb[axis] = half;
            let (values, err, at_floor) = rule.apply(&mut f, &nb, dim_out);
            heap.push(Panel { bounds: nb, values, err, at_floor, seq });
            seq += 1;
        }
        subdivisions += 1;
    }
}

/// Scalar adaptive integration over a bounded box.
pub fn integrate_box<F>(mut f: F, bounds: &[(f64, f64)], breaks: &[Vec<f64>], opts: QuadOptions) -> QuadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let r = integrate_box_vec(|x, out| out[0] = f(x), 1, bounds, breaks, opts);
    QuadResult { value: r.values[0], error_estimate: r.error_estimate, subdivisions: r.subdivisions, converged: r.converged }
}

/// One-dimensional convenience wrapper.
pub fn integrate_1d<F>(mut f: F, a: f64, b: f64, breaks: &[f64], opts: QuadOptions) -> QuadResult
where
    F: FnMut(f64) -> f64,
{
    integrate_box(|x| f(x[0]), &[(a, b)], &[breaks.to_vec()], opts)
}

/// Integrates a scalar smooth map over a bounded box.
pub fn integrate(f: &SmoothMap, bx: &DomainBox, tol: f64) -> Result<QuadResult, EvalError> {
    if f.out_dim() != 1 || f.in_dim() != bx.dim() {
        return Err(EvalError::Arity { expected: f.in_dim(), got: bx.dim() });
    }
    if !bx.is_bounded() {
        return Err(EvalError::OutsideDomain { point: bx.bounds.iter().map(|b| b.1).collect() });
    }
    let failure = RefCell::new(None);
    let expr = f.component(0);
    let r = integrate_box(
        |x| match expr.eval(x) {
            Ok(v) => v,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        },
        &bx.bounds,
        &[],
        QuadOptions::new(tol),
    );
    match failure.into_inner() {
        Some(e) => Err(e),
        None => Ok(r),
    }
}

/// Integral over `ℝ^k` of an integrand dominated by a Gaussian times a
/// polynomial outside `[−radius, radius]^k`. The tail is estimated from the
/// largest boundary value and added to the error estimate.
pub fn integrate_whole_space(f: &SmoothMap, k: usize, radius: f64) -> Result<QuadResult, EvalError> {
    integrate_whole_space_with(f, k, radius, QuadOptions::new(1e-13))
}

pub fn integrate_whole_space_with(f: &SmoothMap, k: usize, radius: f64, opts: QuadOptions) -> Result<QuadResult, EvalError> {
    let bx = DomainBox::cube(k, -radius, radius);
    let expr = f.component(0);
    let failure = RefCell::new(None);
    let eval = |x: &[f64]| match expr.eval(x) {
        Ok(v) => v,
        Err(e) => {
            failure.borrow_mut().get_or_insert(e);
            f64::NAN
        }
    };
    // split at the origin so both halves of even integrands are resolved
    let breaks: Vec<Vec<f64>> = (0..k).map(|_| vec![0.0]).collect();
    let mut r = integrate_box(eval, &bx.bounds, &breaks, opts);
    let mut boundary: f64 = 0.0;
    for p in bx.lattice(9) {
        if p.iter().any(|v| v.abs() == radius) {
            boundary = boundary.max(eval(&p).abs());
        }
    }
    // Gaussian tail beyond R: ∫_R^∞ e^{−s²/2} ds ≤ e^{−R²/2}/R, per face
    let tail = boundary * 2.0 * k as f64 * (2.0 * radius).powi(k as i32 - 1) / radius;
    r.error_estimate += tail;
    match failure.into_inner() {
        Some(e) => Err(e),
        None => Ok(r),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use approx::assert_abs_diff_eq;

    fn x() -> Expr {
        Expr::var(0)
    }

    #[test]
    fn polynomial_is_exact() {
        let f = SmoothMap::whole(x().powi(2), 1);
        let r = integrate(&f, &DomainBox::interval(0.0, 1.0), 1e-14).unwrap();
        assert_abs_diff_eq!(r.value, 1.0 / 3.0, epsilon = 1e-14);
        assert!(r.converged);
    }

    #[test]
    fn oscillatory_integral() {
        let f = SmoothMap::whole((40.0 * x()).sin(), 1);
        let r = integrate(&f, &DomainBox::interval(0.0, 1.0), 1e-12).unwrap();
        assert_abs_diff_eq!(r.value, (1.0 - 40f64.cos()) / 40.0, epsilon = 1e-10);
    }

    #[test]
    fn gaussian_over_line() {
        let f = SmoothMap::whole(x().gauss(), 1);
        let r = integrate_whole_space(&f, 1, 12.0).unwrap();
        assert_abs_diff_eq!(r.value, 1.0, epsilon = 1e-12);
        assert!(r.error_estimate < 1e-12);
    }

    #[test]
    fn tensor_rule_in_two_and_three_dimensions() {
        let r = integrate_box(|p| p[0] * p[1] * p[1], &[(0.0, 1.0), (0.0, 2.0)], &[], QuadOptions::new(1e-13));
        assert_abs_diff_eq!(r.value, 0.5 * 8.0 / 3.0, epsilon = 1e-13);
        let r3 = integrate_box(|p| (p[0] + p[1] + p[2]).exp(), &[(0.0, 1.0); 3], &[], QuadOptions::new(1e-12));
        assert_abs_diff_eq!(r3.value, (1f64.exp() - 1.0).powi(3), epsilon = 1e-11);
    }

    #[test]
    fn kink_converges_with_breakpoint() {
        let r = integrate_1d(|t| t.abs(), -1.0, 2.0, &[0.0], QuadOptions::new(1e-14));
        assert_abs_diff_eq!(r.value, 2.5, epsilon = 1e-14);
        assert_eq!(r.subdivisions, 0);
    }

    #[test]
    fn cap_reached_is_flagged() {
        let opts = QuadOptions { abs_tol: 1e-30, rel_tol: 0.0, max_panels: 8 };
        let r = integrate_1d(|t| (1.0 / (t + 1e-3)).sin(), 0.0, 1.0, &[], opts);
        assert!(!r.converged);
        assert!(r.error_estimate > 0.0);
    }

    #[test]
    fn domain_errors_propagate() {
        let f = SmoothMap::whole(x().ln(), 1);
        assert!(integrate(&f, &DomainBox::interval(-1.0, 1.0), 1e-8).is_err());
    }
}
