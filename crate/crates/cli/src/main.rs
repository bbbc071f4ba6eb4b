//! `qagf`: batch front end for embeddings, pairings, classifications and
//! homotopy demos. Exit codes: 0 success, 2 invalid input or failed
//! precondition, 3 accuracy target not reached.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use report::Format;

#[derive(Parser, Debug)]
#[command(name = "qagf", version, about = "Generalized functions as nets of smooth functions", long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Window of net indices: `a:b` doubles from a up to b, `a:b:m` takes m geometric samples.
    #[arg(long, global = true, default_value = "2:16384")]
    pub levels: String,
    /// Moment order d of the mollifier (even, 2..=8).
    #[arg(short = 'd', long = "order", global = true, default_value_t = 4)]
    pub order: usize,
    /// Accuracy threshold; each command documents its default.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Output format [default: json for moments and classify, csv otherwise].
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Output file [default: $QAGF_OUT_DIR/<command>.<ext>, else standard output].
    #[arg(short, long, global = true)]
    pub output: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Moments ∫x^j ϱ of the mollifier along one axis; fails above 1e-10 (mass) or 1e-8 (j ≥ 1).
    Moments {
        /// Dimension of the mollifier.
        #[arg(short = 'k', long = "dim", default_value_t = 1)]
        dim: usize,
    },
    /// Values of the embedded net (T ∗ ϱ_n) on a grid.
    Embed {
        /// Distribution, e.g. "delta' + 2*H @ 0.5".
        dist: String,
        /// Grid `a:b:m`, used on every axis.
        #[arg(long, default_value = "-1:1:21", allow_hyphen_values = true)]
        grid: String,
    },
    /// Pairing net ⟨T ∗ ϱ_n, φ⟩ against a test function; fails if the top level misses ⟨T, φ⟩ by more than --tol [1e-6].
    Pair {
        /// Distribution.
        dist: String,
        /// Test function with a bounded box, e.g. "fn(exp(-x^2)) on [-4,4]".
        test: String,
    },
    /// Moderateness and negligibility of a net in `n`, or of sup norms of an embedded distribution or smooth function.
    Classify {
        /// Net expression in `n` (e.g. "2^n"), distribution, or smooth function.
        target: String,
        /// Scale: asy, rho or colombeau.
        #[arg(long, default_value = "asy")]
        scale: String,
        /// Classify the p-th power of the embedded function.
        #[arg(long, default_value_t = 1)]
        power: u32,
        /// Largest derivative order whose sup norm is classified.
        #[arg(long = "alpha-max", default_value_t = 0)]
        alpha_max: usize,
        /// Compact box `a:b` (every axis) for sup norms.
        #[arg(long = "box", default_value = "-1:1", allow_hyphen_values = true)]
        k_box: String,
    },
    /// Jet of a smooth function at a point, or level values of an embedded distribution there.
    Eval {
        /// Smooth function or distribution.
        target: String,
        /// Point, comma separated.
        #[arg(long, allow_hyphen_values = true)]
        at: String,
        /// Derivative order for smooth functions.
        #[arg(long = "jet-order", default_value_t = 2)]
        jet_order: usize,
    },
    /// Chain rule for compositions with embedded distributions; fails above relative --tol [1e-10].
    ComposeDemo {
        #[arg(value_enum, default_value = "exp-delta")]
        demo: ComposeKind,
    },
    /// Per-level solution of f_n(z) = r on [from, to]; fails above residual --tol [1e-12] · max(1, |r|).
    Ivt {
        /// Function of x (may use the level `n`) or a distribution.
        expr: String,
        #[arg(long, allow_hyphen_values = true)]
        from: f64,
        #[arg(long, allow_hyphen_values = true)]
        to: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        target: f64,
    },
    /// Per-level mean-value witness c with f(to) − f(from) = f'(from + c(to − from))(to − from); fails above residual --tol [1e-10].
    Mvt {
        /// Function of x (may use the level `n`) or a distribution.
        expr: String,
        #[arg(long, allow_hyphen_values = true)]
        from: f64,
        #[arg(long, allow_hyphen_values = true)]
        to: f64,
    },
    /// Concatenation of two paths at the top level; fails if endpoints move by 1e-9 or halves by --tol [1e-6].
    ConcatDemo {
        /// First path as a function of x.
        #[arg(long, default_value = "x")]
        alpha: String,
        /// Second path as a function of x.
        #[arg(long, default_value = "1 + x")]
        beta: String,
        #[arg(long, default_value_t = 21)]
        samples: usize,
    },
    /// Grid of the retraction homotopy H(x, t) of the cube onto the open box.
    RetractDemo {
        /// Dimension k of the attached cell (the cube is I^(k+1)).
        #[arg(short = 'k', long = "dim", default_value_t = 1)]
        dim: usize,
        /// Samples per space axis; times are 0, 1/2, 1.
        #[arg(long, default_value_t = 5)]
        samples: usize,
        /// Level n [default: top of the window].
        #[arg(long)]
        level: Option<u64>,
    },
    /// Homotopy extension for one 1-cell; fails if seams deviate by more than max(--tol [1e-6], n^-d).
    HepDemo {
        /// Map on the cell as a function of x.
        #[arg(long, default_value = "x")]
        cell: String,
        /// Homotopy on the boundary as a function of x and time t.
        #[arg(long, default_value = "x*(1 + t)")]
        boundary: String,
        /// Samples per axis of the (x, t) grid.
        #[arg(long, default_value_t = 6)]
        samples: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ComposeKind {
    /// (e^δ)' = e^δ δ'.
    ExpDelta,
    /// (sin H)' = cos(H) H'.
    SinHeaviside,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let c = &cli.common;
    let report = match &cli.command {
        Command::Moments { dim } => commands::moments(c, *dim),
        Command::Embed { dist, grid } => commands::embed(c, dist, grid),
        Command::Pair { dist, test } => commands::pair(c, dist, test),
        Command::Classify { target, scale, power, alpha_max, k_box } => {
            commands::classify(c, target, scale, *power, *alpha_max, k_box)
        }
        Command::Eval { target, at, jet_order } => commands::eval(c, target, at, *jet_order),
        Command::ComposeDemo { demo } => commands::compose_demo(c, *demo),
        Command::Ivt { expr, from, to, target } => commands::ivt(c, expr, *from, *to, *target),
        Command::Mvt { expr, from, to } => commands::mvt(c, expr, *from, *to),
        Command::ConcatDemo { alpha, beta, samples } => commands::concat_demo(c, alpha, beta, *samples),
        Command::RetractDemo { dim, samples, level } => commands::retract_demo(c, *dim, *samples, *level),
        Command::HepDemo { cell, boundary, samples } => commands::hep_demo(c, cell, boundary, *samples),
    };
    let report = match report {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match report.emit(c.format, c.output.as_deref()) {
        Ok(Some(path)) => eprintln!("wrote {}", path.display()),
        Ok(None) => {}
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    }
    if report.accuracy_reached() {
        ExitCode::SUCCESS
    } else {
        for f in &report.failures {
            eprintln!("accuracy not reached: {f}");
        }
        ExitCode::from(3)
    }
}
