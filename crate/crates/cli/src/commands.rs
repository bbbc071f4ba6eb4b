//! Subcommand implementations. Each returns a [`Report`]; errors are
//! precondition failures.

use anyhow::{anyhow, bail, ensure, Context, Result};
use serde_json::json;

use qagf::dist::{embed_compact, pair as pair_net, Base, Distribution};
use qagf::geometry::{concat, hep_extend, radial_retraction, retract_homotopy, Homotopy, QAPath};
use qagf::gfunc::{classify_gf, derive, ivt_residual_scale, ivt_solve, lift_expr, lift_smooth, mvt_witness, CompactWindowNet};
use qagf::net::{classify as classify_net, GenScalar, ScaleTag, Window};
use qagf::parse::{identifiers, parse_distribution, parse_expr_in, parse_expression, Parsed};
use qagf::{DomainBox, Expr, GFunc, Mollifier, MultiIndex, SmoothMap};

use crate::report::{Cell, Format, Report};
use crate::{Common, ComposeKind};

fn window(c: &Common) -> Result<Window> {
    let parts: Vec<&str> = c.levels.split(':').collect();
    let num = |s: &str| s.trim().parse::<u64>().with_context(|| format!("invalid level `{s}` in --levels"));
    let w = match parts.as_slice() {
        [a, b] => Window::doubling(num(a)?, num(b)?)?,
        [a, b, m] => Window::geometric(num(a)?, num(b)?, num(m)? as usize)?,
        _ => bail!("--levels expects a:b or a:b:m, got `{}`", c.levels),
    };
    Ok(w)
}

fn tol(c: &Common, default: f64) -> Result<f64> {
    let t = c.tol.unwrap_or(default);
    ensure!(t.is_finite() && t > 0.0, "--tol must be positive and finite");
    Ok(t)
}

fn mollifier(c: &Common, k: usize) -> Result<Mollifier> {
    Ok(Mollifier::build(k, c.order)?)
}

fn linspace(a: f64, b: f64, m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![a];
    }
    (0..m).map(|i| a + (b - a) * i as f64 / (m - 1) as f64).collect()
}

/// `a:b` or `a:b:m`.
fn range(text: &str, flag: &str) -> Result<(f64, f64, Option<usize>)> {
    let parts: Vec<&str> = text.split(':').collect();
    let num = |s: &str| s.trim().parse::<f64>().with_context(|| format!("invalid number `{s}` in {flag}"));
    let (a, b, m) = match parts.as_slice() {
        [a, b] => (num(a)?, num(b)?, None),
        [a, b, m] => (num(a)?, num(b)?, Some(m.trim().parse::<usize>().with_context(|| format!("invalid count in {flag}"))?)),
        _ => bail!("{flag} expects a:b or a:b:m, got `{text}`"),
    };
    ensure!(a.is_finite() && b.is_finite() && a < b, "{flag} needs finite a < b");
    ensure!(m.is_none_or(|m| m >= 1), "{flag} needs at least one sample");
    Ok((a, b, m))
}

fn point(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("invalid coordinate `{s}`")))
        .collect()
}

fn embed_text(c: &Common, text: &str) -> Result<(Distribution, GFunc)> {
    let t = parse_distribution(text)?;
    let m = mollifier(c, t.dim())?;
    let e = embed_compact(&t, &m).context("the embedding needs compact support inside the domain (add `in <box>`)")?;
    Ok((t, e.gfunc))
}

/// A scalar test function from `fn(...) on box` or `expr on box`.
fn test_function(text: &str) -> Result<SmoothMap> {
    let f = match parse_expression(text)? {
        Parsed::Smooth(f) => f,
        Parsed::Distribution(d) => match d.terms.as_slice() {
            [t] if t.coeff == 1.0 && t.alpha.is_zero() => match &t.base {
                Base::Smooth { f } => f.clone(),
                _ => bail!("the test function must be smooth"),
            },
            _ => bail!("the test function must be a single smooth term"),
        },
    };
    ensure!(f.out_dim() == 1, "the test function must be scalar");
    ensure!(f.domain().is_bounded(), "the test function needs a bounded box (`on [a,b]`)");
    Ok(f)
}

/// A 1-D generalized function: an expression in `x` and optionally the
/// level `n` on `domain`, a smooth function, or an embedded distribution.
fn level_function(c: &Common, text: &str, domain: DomainBox) -> Result<GFunc> {
    let ids = identifiers(text)?;
    if ids.iter().any(|s| s == "n") {
        let e = parse_expr_in(text, &["x", "n"])?;
        let dom = domain.clone();
        return Ok(GFunc::new(domain, 1, text, move |n| {
            let level = e.substitute(&[Expr::var(0), Expr::constant(n as f64)]);
            SmoothMap::scalar(level, dom.clone()).expect("one variable")
        }));
    }
    match parse_expression(text)? {
        Parsed::Smooth(f) => {
            ensure!(f.in_dim() == 1 && f.out_dim() == 1, "expected a scalar function of x");
            Ok(lift_expr(f.component(0).clone(), domain)?)
        }
        Parsed::Distribution(_) => Ok(embed_text(c, text)?.1),
    }
}

fn scalar_expr(text: &str, names: &[&str]) -> Result<Expr> {
    Ok(parse_expr_in(text, names)?)
}

pub fn moments(c: &Common, dim: usize) -> Result<Report> {
    let m = mollifier(c, dim)?;
    let d = c.order;
    let mut r = Report::new("moments", json!({"dim": dim, "order": d}), vec!["j", "moment", "error_estimate"], Format::Json);
    let moments = m.axis_moments(d as u32)?;
    let mut worst = 0.0f64;
    for (j, q) in moments.iter().enumerate() {
        r.row(vec![(j as u64).into(), q.value.into(), q.error_estimate.into()]);
        if j > 0 {
            worst = worst.max(q.value.abs());
        }
    }
    let mass_error = (moments[0].value - 1.0).abs();
    r.require(mass_error <= 1e-10, || format!("|∫ϱ − 1| = {mass_error:e} exceeds 1e-10"));
    r.require(worst <= 1e-8, || format!("max |∫x^j ϱ| = {worst:e} exceeds 1e-8"));
    r.summary = json!({
        "radius": m.radius(),
        "coefficients": m.coefficients(),
        "mass_error": mass_error,
        "max_abs_moment": worst,
    });
    Ok(r)
}

pub fn embed(c: &Common, text: &str, grid: &str) -> Result<Report> {
    let w = window(c)?;
    let (t, f) = embed_text(c, text)?;
    let (a, b, m) = range(grid, "--grid")?;
    let k = t.dim();
    let axis = linspace(a, b, m.unwrap_or(21));
    let points = DomainBox::cube(k, a, b).lattice(axis.len());
    let columns: Vec<&'static str> = match k {
        1 => vec!["n", "x", "value"],
        2 => vec!["n", "x", "y", "value"],
        _ => bail!("embed grids support dimensions 1 and 2"),
    };
    let mut r = Report::new("embed", json!({"dist": t.to_string(), "grid": grid, "levels": w.indices(), "order": c.order}), columns, Format::Csv);
    for &n in w.indices() {
        let level = f.level(n);
        for p in &points {
            let v = level.eval_scalar(p)?;
            let mut row: Vec<Cell> = vec![n.into()];
            row.extend(p.iter().map(|&x| Cell::from(x)));
            row.push(v.into());
            r.row(row);
        }
    }
    Ok(r)
}

pub fn pair(c: &Common, dist: &str, test: &str) -> Result<Report> {
    let w = window(c)?;
    let tol = tol(c, 1e-6)?;
    let t = parse_distribution(dist)?;
    let phi = test_function(test)?;
    ensure!(phi.in_dim() == t.dim(), "test function and distribution differ in dimension");
    let m = mollifier(c, t.dim())?;
    let e = embed_compact(&t, &m).context("the embedding needs compact support inside the domain (add `in <box>`)")?;
    let rep = pair_net(&e, &phi, &w)?;
    let mut r = Report::new(
        "pair",
        json!({"dist": t.to_string(), "test": test, "levels": w.indices(), "order": c.order, "tol": tol}),
        vec!["n", "p_n", "reference", "abs_err"],
        Format::Csv,
    );
    for row in &rep.rows {
        r.row(vec![row.n.into(), row.value.into(), row.reference.into(), row.abs_err.into()]);
    }
    let err = (rep.limit - rep.reference).abs();
    r.require(err <= tol, || format!("top-level pairing misses the reference by {err:e} (tolerance {tol:e})"));
    r.summary = json!({"reference": rep.reference, "limit": rep.limit, "fitted_slope": rep.fitted_slope, "quadrature_converged": rep.converged});
    Ok(r)
}

/// `C n^e` fitted to positive samples with the given exponent.
fn fitted_bound(samples: &[(u64, f64)], exponent: f64) -> impl Fn(u64) -> f64 {
    let logs: Vec<f64> = samples
        .iter()
        .filter(|(_, v)| *v > 0.0 && v.is_finite())
        .map(|&(n, v)| v.ln() - exponent * (n as f64).ln())
        .collect();
    let log_c = if logs.is_empty() { f64::NAN } else { logs.iter().sum::<f64>() / logs.len() as f64 };
    move |n| (log_c + exponent * (n as f64).ln()).exp()
}

pub fn classify(c: &Common, target: &str, scale: &str, power: u32, alpha_max: usize, k_box: &str) -> Result<Report> {
    let w = window(c)?;
    let tag = ScaleTag::from_name(scale).ok_or_else(|| anyhow!("unknown scale `{scale}` (expected asy, rho or colombeau)"))?;
    ensure!(power >= 1, "--power must be at least 1");
    let params = json!({"target": target, "scale": tag.name(), "power": power, "alpha_max": alpha_max, "box": k_box, "levels": w.indices()});
    let ids = identifiers(target)?;
    if ids.iter().any(|s| s == "n") {
        let e = scalar_expr(target, &["n"])?;
        let net = GenScalar::from_fn(move |n| e.eval(&[n as f64]).unwrap_or(f64::NAN).powi(power as i32), tag);
        let rep = classify_net(&net, tag, &w)?;
        let bound = fitted_bound(&rep.samples, rep.fitted_exponent);
        let mut r = Report::new("classify", params, vec!["n", "value", "fitted_bound"], Format::Json);
        for &(n, v) in &rep.samples {
            r.row(vec![n.into(), v.into(), bound(n).into()]);
        }
        r.summary = serde_json::to_value(&rep)?;
        return Ok(r);
    }
    let f = match parse_expression(target)? {
        Parsed::Smooth(f) => {
            ensure!(f.out_dim() == 1, "expected a scalar function");
            lift_smooth(&f)
        }
        Parsed::Distribution(_) => embed_text(c, target)?.1,
    };
    let mut g = f.clone();
    for _ in 1..power {
        g = g.mul(&f)?;
    }
    let (a, b, _) = range(k_box, "--box")?;
    let k = CompactWindowNet::Constant(DomainBox::cube(g.in_dim(), a, b));
    let rep = classify_gf(&g, &k, alpha_max, tag, &w)?;
    let mut r = Report::new("classify", params, vec!["alpha", "n", "sup_norm", "fitted_bound"], Format::Json);
    for d in &rep.derivatives {
        let alpha = MultiIndex(d.alpha.clone()).to_string();
        let bound = fitted_bound(&d.report.samples, d.report.fitted_exponent);
        for &(n, v) in &d.report.samples {
            r.row(vec![alpha.clone().into(), n.into(), v.into(), bound(n).into()]);
        }
    }
    r.summary = serde_json::to_value(&rep)?;
    Ok(r)
}

pub fn eval(c: &Common, target: &str, at: &str, jet_order: usize) -> Result<Report> {
    let x = point(at)?;
    match parse_expression(target)? {
        Parsed::Smooth(f) => {
            ensure!(f.out_dim() == 1, "expected a scalar function");
            ensure!(x.len() == f.in_dim(), "--at needs {} coordinates", f.in_dim());
            let jet = &f.eval_jet(&x, jet_order)?[0];
            let mut r = Report::new(
                "eval",
                json!({"target": target, "at": x, "jet_order": jet_order}),
                vec!["alpha", "derivative"],
                Format::Csv,
            );
            for alpha in MultiIndex::all_up_to(f.in_dim(), jet_order) {
                r.row(vec![alpha.to_string().into(), jet.derivative(&alpha).into()]);
            }
            Ok(r)
        }
        Parsed::Distribution(_) => {
            let w = window(c)?;
            let (t, f) = embed_text(c, target)?;
            ensure!(x.len() == t.dim(), "--at needs {} coordinates", t.dim());
            let mut r = Report::new(
                "eval",
                json!({"target": t.to_string(), "at": x, "levels": w.indices(), "order": c.order}),
                vec!["n", "value"],
                Format::Csv,
            );
            for &n in w.indices() {
                r.row(vec![n.into(), f.eval_level_scalar(n, &x)?.into()]);
            }
            Ok(r)
        }
    }
}

type ExprFn = fn(Expr) -> Expr;

pub fn compose_demo(c: &Common, demo: ComposeKind) -> Result<Report> {
    let w = window(c)?;
    let tol = tol(c, 1e-10)?;
    let u = DomainBox::interval(-1.0, 1.0);
    let m = mollifier(c, 1)?;
    let d1 = MultiIndex(vec![1]);
    let (name, inner) = match demo {
        ComposeKind::ExpDelta => ("exp-delta", Distribution::delta(u, vec![0.0], MultiIndex(vec![0]))?),
        ComposeKind::SinHeaviside => ("sin-heaviside", Distribution::heaviside(u, 0.0, 0)?),
    };
    let g = embed_compact(&inner, &m)?.gfunc;
    let (outer, outer_prime): (ExprFn, ExprFn) = match demo {
        ComposeKind::ExpDelta => (Expr::exp, Expr::exp),
        ComposeKind::SinHeaviside => (Expr::sin, Expr::cos),
    };
    let composed = g.map_levels(name, move |e| outer(e.clone()));
    let lhs = derive(&composed, &d1)?;
    let rhs = g.map_levels(name, move |e| outer_prime(e.clone())).mul(&derive(&g, &d1)?)?;
    let points = linspace(-0.98, 0.98, 50);
    let mut r = Report::new(
        "compose-demo",
        json!({"demo": name, "levels": w.indices(), "order": c.order, "tol": tol, "points": points.len()}),
        vec!["n", "max_rel_dev"],
        Format::Csv,
    );
    let mut worst = 0.0f64;
    for &n in w.indices() {
        let mut dev = 0.0f64;
        for &p in &points {
            let (a, b) = (lhs.eval_level_scalar(n, &[p])?, rhs.eval_level_scalar(n, &[p])?);
            let scale = a.abs().max(b.abs());
            if scale > 0.0 {
                dev = dev.max((a - b).abs() / scale);
            }
        }
        worst = worst.max(dev);
        r.row(vec![n.into(), dev.into()]);
    }
    r.require(worst <= tol, || format!("relative deviation {worst:e} exceeds {tol:e}"));
    r.summary = json!({"max_rel_dev": worst});
    Ok(r)
}

fn segment_domain(from: f64, to: f64) -> Result<DomainBox> {
    ensure!(from.is_finite() && to.is_finite() && from != to, "--from and --to must be distinct finite numbers");
    Ok(DomainBox::interval(from.min(to) - 1.0, from.max(to) + 1.0))
}

pub fn ivt(c: &Common, expr: &str, from: f64, to: f64, target: f64) -> Result<Report> {
    let w = window(c)?;
    let tol = tol(c, 1e-12)?;
    let f = level_function(c, expr, segment_domain(from, to)?)?;
    let k = |v: f64| GenScalar::constant(v, ScaleTag::Asy);
    let rhs = k(target);
    let sol = ivt_solve(&f, &k(from), &k(to), &rhs, &w)?;
    let mut r = Report::new(
        "ivt",
        json!({"expr": expr, "from": from, "to": to, "target": target, "levels": w.indices(), "order": c.order, "tol": tol}),
        vec!["n", "z", "residual"],
        Format::Csv,
    );
    let mut worst = 0.0f64;
    for &(n, z, res) in &sol.levels {
        r.row(vec![n.into(), z.into(), res.into()]);
        worst = worst.max(res / ivt_residual_scale(&rhs, n));
    }
    r.require(worst <= tol, || format!("scaled residual {worst:e} exceeds {tol:e}"));
    r.summary = json!({"max_scaled_residual": worst, "flagged_levels": sol.flagged});
    Ok(r)
}

pub fn mvt(c: &Common, expr: &str, from: f64, to: f64) -> Result<Report> {
    let w = window(c)?;
    let tol = tol(c, 1e-10)?;
    let f = level_function(c, expr, segment_domain(from, to)?)?;
    let k = |v: f64| GenScalar::constant(v, ScaleTag::Asy);
    let sol = mvt_witness(&f, &[k(from)], &[k(to)], &w)?;
    let mut r = Report::new(
        "mvt",
        json!({"expr": expr, "from": from, "to": to, "levels": w.indices(), "order": c.order, "tol": tol}),
        vec!["n", "c", "residual"],
        Format::Csv,
    );
    let mut worst = 0.0f64;
    for &(n, cn, res) in &sol.levels {
        r.row(vec![n.into(), cn.into(), res.into()]);
        let rise = f.eval_level_scalar(n, &[to])? - f.eval_level_scalar(n, &[from])?;
        worst = worst.max(res / rise.abs().max(1.0));
    }
    r.require(worst <= tol, || format!("scaled residual {worst:e} exceeds {tol:e}"));
    r.summary = json!({"max_scaled_residual": worst, "flagged_levels": sol.flagged});
    Ok(r)
}

pub fn concat_demo(c: &Common, alpha: &str, beta: &str, samples: usize) -> Result<Report> {
    let w = window(c)?;
    let tol = tol(c, 1e-6)?;
    ensure!(samples >= 2, "--samples must be at least 2");
    let m = mollifier(c, 1)?;
    let dom = DomainBox::interval(-0.25, 1.25);
    let a = scalar_expr(alpha, &["x"])?;
    let b = scalar_expr(beta, &["x"])?;
    let pa = QAPath::new(lift_expr(a.clone(), dom.clone())?, &w)?;
    let pb = QAPath::new(lift_expr(b.clone(), dom)?, &w)?;
    let ab = concat(&pa, &pb, &m, &w)?;
    let top = w.last();
    let mut r = Report::new(
        "concat-demo",
        json!({"alpha": alpha, "beta": beta, "level": top, "order": c.order, "tol": tol}),
        vec!["t", "value", "reference", "abs_err"],
        Format::Csv,
    );
    let mut half_err = 0.0f64;
    for t in linspace(0.0, 1.0, samples) {
        let v = ab.gfunc.eval_level_scalar(top, &[t])?;
        let reference = if t <= 0.5 { a.eval(&[2.0 * t])? } else { b.eval(&[2.0 * t - 1.0])? };
        let err = (v - reference).abs();
        if t <= 0.4 || t >= 0.6 {
            half_err = half_err.max(err);
        }
        r.row(vec![t.into(), v.into(), reference.into(), err.into()]);
    }
    let end_err = (ab.start[0] - a.eval(&[0.0])?).abs().max((ab.end[0] - b.eval(&[1.0])?).abs());
    r.require(end_err <= 1e-9, || format!("endpoints moved by {end_err:e}"));
    r.require(half_err <= tol, || format!("away from t = 1/2 the concatenation deviates by {half_err:e}"));
    r.summary = json!({"endpoint_error": end_err, "max_half_error": half_err});
    Ok(r)
}

pub fn retract_demo(c: &Common, dim: usize, samples: usize, level: Option<u64>) -> Result<Report> {
    ensure!((1..=2).contains(&dim), "-k must be 1 or 2");
    ensure!(samples >= 2, "--samples must be at least 2");
    let w = window(c)?;
    let n = level.unwrap_or_else(|| w.last());
    ensure!(n >= 2, "--level must be at least 2");
    let m = mollifier(c, dim + 1)?;
    let h = retract_homotopy(dim, &m)?;
    let columns: Vec<&'static str> = match dim {
        1 => vec!["x", "y", "t", "h_x", "h_y"],
        _ => vec!["x", "y", "z", "t", "h_x", "h_y", "h_z"],
    };
    let mut r = Report::new("retract-demo", json!({"dim": dim, "samples": samples, "level": n, "order": c.order}), columns, Format::Csv);
    let mut identity_exact = true;
    for t in [0.0, 0.5, 1.0] {
        for x in DomainBox::cube(dim + 1, 0.0, 1.0).lattice(samples) {
            let v = h.eval(n, &x, t)?;
            if t == 1.0 {
                identity_exact &= v == x;
            }
            let mut row: Vec<Cell> = x.iter().map(|&a| Cell::from(a)).collect();
            row.push(t.into());
            row.extend(v.iter().map(|&a| Cell::from(a)));
            r.row(row);
        }
    }
    r.require(identity_exact, || "H(·, 1) differs from the identity".into());
    let p = radial_retraction(dim)?;
    r.summary = json!({"identity_at_t1": identity_exact, "pieces": p.pieces().len(), "retraction": p.to_string()});
    Ok(r)
}

pub fn hep_demo(c: &Common, cell: &str, boundary: &str, samples: usize) -> Result<Report> {
    ensure!(samples >= 2, "--samples must be at least 2");
    let w = window(c)?;
    let tol = tol(c, 1e-6)?;
    let d = c.order;
    let m = mollifier(c, 2)?;
    let f = scalar_expr(cell, &["x"])?;
    let h = scalar_expr(boundary, &["x", "t"])?;
    let space = DomainBox::interval(-0.5, 1.5);
    let cyl = DomainBox::new(vec![(-0.5, 1.5), (0.0, 1.0)]);
    let fc = lift_expr(f.clone(), space)?;
    let hb = Homotopy::new(lift_expr(h.clone(), cyl)?)?;
    let (k, seam) = hep_extend(&fc, &hb, 1, &m, &w)?;
    let top = w.last();
    let bound = tol.max((top as f64).powi(-(d as i32)));
    let p = radial_retraction(1)?;
    let mut r = Report::new(
        "hep-demo",
        json!({"cell": cell, "boundary": boundary, "samples": samples, "level": top, "order": d, "tol": tol}),
        vec!["x", "t", "value"],
        Format::Csv,
    );
    let mut worst = 0.0f64;
    for t in linspace(0.0, 1.0, samples) {
        for x in linspace(0.0, 1.0, samples) {
            let v = k.eval(top, &[x], t)?[0];
            r.row(vec![x.into(), t.into(), v.into()]);
            let q = [x, t];
            if p.boundary_distance(&q) < 0.1 {
                continue;
            }
            if t == 0.0 {
                worst = worst.max((v - f.eval(&[x])?).abs());
            }
            if x == 0.0 || x == 1.0 {
                worst = worst.max((v - h.eval(&q)?).abs());
            }
        }
    }
    r.require(worst <= bound, || format!("seam deviation {worst:e} exceeds {bound:e}"));
    r.summary = json!({"max_seam_deviation": worst, "bound": bound, "gluing_deviation": seam.max_deviation});
    Ok(r)
}
