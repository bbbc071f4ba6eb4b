//! Quasi-asymptotic numbers and generalized functions.
//!
//! Generalized scalars are represented by nets `n ↦ x_n`, smooth maps by
//! expression trees with truncated Taylor jets, and distributions are
//! embedded as nets of smooth functions via convolution with a scaled
//! vanishing-moment mollifier.

pub mod error;
pub mod jet;
pub mod expr;
pub mod smooth;
pub mod quadrature;
pub mod fit;
pub mod net;
pub mod mollifier;
pub mod gfunc;
pub mod dist;
pub mod geometry;
pub mod parse;

pub use parse::{identifiers, parse_distribution, parse_expr, parse_expr_in, parse_expression, parse_plmap, parse_smooth, ParseError, Parsed, SmoothText};
pub use error::{EvalError, MapError, NetError, GFuncError, DistError, GeometryError, Error};
pub use expr::{Expr, Func, Node, Primitive};
pub use jet::{Jet, MultiIndex, MAX_ORDER};
pub use smooth::{DomainBox, SmoothMap};
pub use quadrature::{integrate, integrate_whole_space, QuadOptions, QuadResult};
pub use fit::{decay_fit, loglog_slope, DecayFit};
pub use mollifier::Mollifier;
pub use net::{
    classify, compare, invert, poly_roots, scalar_arith, ArithOp, ClassificationReport, Comparison, GenScalar, Net,
    ScaleTag, Verdict, Window,
};
pub use gfunc::{
    associated, classify_gf, compose_gf, derive, eval_at, gf_arith, ivt_solve, lift_smooth, mvt_witness,
    reindex_colombeau, CompactWindowNet, GFunc, GFuncReport, GfOp,
};
pub use dist::{
    build_cutoffs, embed_compact, embed_global, pair, reference_pairing, support_estimate, Base, CutoffSystem,
    Distribution, EmbeddedDistribution, PairingReport, SupportEstimate, Term,
};
pub use geometry::{
    concat, embed_piecewise, hep_extend, radial_retraction, retract_homotopy, Homotopy, PLMap, QAPath,
};
