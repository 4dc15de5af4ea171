//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::circle::{self, Alpha, GapTracker, Rotation, GAP_TOLERANCE};
use crate::dsl::{parse_distance_function, to_dsl};
use crate::error::{Error, Result};
use crate::expr::{Expr, Vec2};
use crate::khintchine::{self, PsiFamily};
use crate::lattice::SearchMode;
use crate::measure::{DensityMethod, DensityOracle, ResonantSpec, Resonator};
use crate::output::{num, write_atomic, Plot, Table};
use crate::skeleton::{extract_skeleton, fundamental_rectangle, Slope};
use crate::transference::{self, Coords, TransferParams};

#[derive(Debug, Parser)]
#[command(name = "starkit", version, about = "Diophantine approximation with planar star bodies")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Directory for artifacts; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Precision budget in bits for decimal real inputs.
    #[arg(long, global = true)]
    precision: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Svg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Auto,
    Analytic,
    Quadrature,
    Montecarlo,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Skeleton lines, significance and fundamental rectangle.
    Skeleton(FArg),
    /// Density D_F(ε) over the unit square.
    Density(DensityArgs),
    /// Partial sums of Σ D_F(qψ(q)) with a convergence verdict.
    Series(SeriesArgs),
    /// Monte Carlo measure of ∪_{q∈[N,2N]} B_q(F, ψ(q)).
    Tail(TailArgs),
    /// Resonant membership, best approximations or |B_q|.
    Search(SearchArgs),
    /// Continued fraction expansion.
    Cf(CfArgs),
    /// Gap partition of {x0 + n·α⁻¹}, n ≤ N.
    Threedist(ThreeDistArgs),
    /// N ≤ Nmax with maximal gap at most 3/(N+1).
    Ubiquity(UbiquityArgs),
    /// Interval system along an irrational skeleton line and its coverage.
    Coverage(CoverageArgs),
    /// Transference harnesses.
    Transfer {
        #[arg(value_enum)]
        body: TransferBody,
        #[command(flatten)]
        args: TransferArgs,
    },
    /// Randomized check of the two-system equivalence.
    Prop5(Prop5Args),
    /// Euler-φ weighted sum against the plain sum.
    Philemma(PhiArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TransferBody {
    Mult,
    Unionjack,
    Height,
}

#[derive(Debug, Args)]
struct FArg {
    /// Distance function: file path, registered name or inline DSL/JSON.
    #[arg(long = "f")]
    f: String,
}

#[derive(Debug, Args)]
struct DensityArgs {
    #[command(flatten)]
    f: FArg,
    #[arg(long, value_delimiter = ',', required = true)]
    eps: Vec<f64>,
    #[arg(long, value_enum, default_value = "auto")]
    method: Method,
    #[arg(long, default_value_t = 1_000_000)]
    samples: u64,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SeriesArgs {
    #[command(flatten)]
    f: FArg,
    /// `pow:τ`, `powlog:τ,σ` or a `q,psi` CSV file.
    #[arg(long)]
    psi: String,
    #[arg(long = "Qmax")]
    qmax: u64,
}

#[derive(Debug, Args)]
struct TailArgs {
    #[command(flatten)]
    f: FArg,
    #[arg(long)]
    psi: String,
    #[arg(long = "N", value_delimiter = ',', required = true)]
    n: Vec<u64>,
    #[arg(long, default_value_t = 100_000)]
    samples: u64,
    #[arg(long)]
    seed: Option<u64>,
    /// Also report series partial sums up to this Q.
    #[arg(long = "Qmax")]
    qmax: Option<u64>,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[command(flatten)]
    f: FArg,
    /// Point `x1,x2`.
    #[arg(long, value_delimiter = ',')]
    x: Option<Vec<f64>>,
    #[arg(long)]
    q: Option<u64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long = "Qmax")]
    qmax: Option<u64>,
    /// Restrict to coprime numerators per the fundamental rectangle.
    #[arg(long)]
    restricted: bool,
    /// Report every q, not only record minima.
    #[arg(long)]
    all: bool,
    #[arg(long)]
    samples: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct CfArgs {
    #[arg(long, allow_hyphen_values = true)]
    alpha: String,
    #[arg(long, default_value_t = 20)]
    depth: usize,
}

#[derive(Debug, Args)]
struct StepArg {
    /// Rotation step α⁻¹.
    #[arg(long = "alpha-inv", allow_hyphen_values = true, conflicts_with = "alpha")]
    alpha_inv: Option<String>,
    /// Rotation number α; the step is 1/α.
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<String>,
}

#[derive(Debug, Args)]
struct ThreeDistArgs {
    #[command(flatten)]
    step: StepArg,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    x0: f64,
    #[arg(long = "N")]
    n: u64,
    /// Report gap statistics for every N' ≤ N instead of the partition.
    #[arg(long)]
    scan: bool,
}

#[derive(Debug, Args)]
struct UbiquityArgs {
    #[command(flatten)]
    step: StepArg,
    #[arg(long = "N")]
    n: u64,
}

#[derive(Debug, Args)]
struct CoverageArgs {
    #[command(flatten)]
    f: FArg,
    /// Skeleton line index; first significant irrational line by default.
    #[arg(long)]
    line: Option<usize>,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = 0.0)]
    y0: f64,
    #[arg(long = "N", value_delimiter = ',', required = true)]
    n: Vec<u64>,
    #[arg(long, default_value_t = 3)]
    k: u32,
    #[arg(long, default_value_t = 10_000)]
    samples: u64,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the per-interval table (requires --out).
    #[arg(long)]
    intervals: bool,
}

#[derive(Debug, Args)]
struct TransferArgs {
    /// Coordinates, e.g. `sqrt2,sqrt3`.
    #[arg(long)]
    x: String,
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    bound: f64,
    /// Accepted for uniformity; the harnesses are deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct Prop5Args {
    #[arg(long, default_value_t = 100)]
    instances: usize,
    /// Box bound on |q_i|.
    #[arg(long, default_value_t = 200)]
    bound: i64,
    #[arg(long)]
    seed: Option<u64>,
    /// Single instance instead of the random suite.
    #[arg(long)]
    x: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
}

#[derive(Debug, Args)]
struct PhiArgs {
    #[arg(long = "N")]
    n: u64,
    /// `harmonic` (1/q), `one`, or `pow:s` (q^−s).
    #[arg(long, default_value = "harmonic")]
    omega: String,
    /// Exact rational sums.
    #[arg(long)]
    exact: bool,
}

/// A named output.
struct Artifact {
    name: String,
    ext: &'static str,
    body: String,
}

struct Ctx {
    out: Option<PathBuf>,
    format: Option<Format>,
    precision: Option<u32>,
    artifacts: Vec<Artifact>,
}

impl Ctx {
    fn format_or(&self, default: Format) -> Format {
        self.format.unwrap_or(default)
    }

    fn emit(&mut self, name: &str, format: Format, body: String) {
        let ext = match format {
            Format::Csv => "csv",
            Format::Json => "json",
            Format::Svg => "svg",
        };
        self.artifacts.push(Artifact { name: name.into(), ext, body });
    }

    fn emit_json(&mut self, name: &str, v: &impl Serialize) -> Result<()> {
        let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::InvalidInput(e.to_string()))?;
        s.push('\n');
        self.emit(name, Format::Json, s);
        Ok(())
    }

    fn alpha(&self, text: &str) -> Result<Alpha> {
        let a = Alpha::parse(text)?;
        Ok(match (a, self.precision) {
            (Alpha::Real { value, .. }, Some(bits)) => {
                let scale = num_rational::BigRational::from_integer(num_bigint::BigInt::from(2)).pow(bits as i32);
                let radius = num_traits::Signed::abs(&value) / scale;
                Alpha::Real { value, radius }
            }
            (a, _) => a,
        })
    }
}

fn unsupported(cmd: &str, f: Format) -> Error {
    Error::InvalidInput(format!("{cmd} does not produce {f:?} output"))
}

fn require_seed(seed: Option<u64>, cmd: &str) -> Result<u64> {
    seed.ok_or_else(|| Error::InvalidInput(format!("{cmd} is stochastic: --seed is required")))
}

/// Resolves `--f`: an existing file, a registered name, or inline text.
pub fn load_distance_function(spec: &str) -> Result<Expr> {
    let path = Path::new(spec);
    if path.is_file() {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        return parse_distance_function(&text);
    }
    let stem = spec.strip_suffix(".df").unwrap_or(spec);
    match stem {
        "height" => Ok(Expr::height()),
        "multiplicative" | "mult" => Ok(Expr::multiplicative()),
        "unionjack" | "union_jack" => Ok(Expr::union_jack()),
        "cusp" | "irrational_cusp" => Ok(Expr::irrational_cusp()),
        _ if spec.ends_with(".df") || spec.ends_with(".json") => {
            Err(Error::InvalidInput(format!("no such file: {spec}")))
        }
        _ => parse_distance_function(spec),
    }
}

fn parse_psi(spec: &str) -> Result<PsiFamily> {
    if spec.contains(':') && !Path::new(spec).is_file() {
        return PsiFamily::parse(spec);
    }
    let text = std::fs::read_to_string(spec).map_err(|e| Error::InvalidInput(format!("ψ table {spec}: {e}")))?;
    PsiFamily::from_csv(&text)
}

fn slope_text(s: &Slope) -> String {
    match s {
        Slope::Rational { s, r } => format!("{s}/{r}"),
        Slope::Irrational { coef, radicand, .. } => format!("{coef}*sqrt{radicand}"),
    }
}

fn step_of(ctx: &Ctx, s: &StepArg) -> Result<twofloat::TwoFloat> {
    match (&s.alpha_inv, &s.alpha) {
        (Some(a), None) => Ok(ctx.alpha(a)?.to_twofloat()),
        (None, Some(a)) => Ok(ctx.alpha(a)?.recip()?.to_twofloat()),
        _ => Err(Error::InvalidInput("give exactly one of --alpha-inv, --alpha".into())),
    }
}

fn run_skeleton(ctx: &mut Ctx, a: &FArg) -> Result<()> {
    let f = load_distance_function(&a.f)?;
    let skel = extract_skeleton(&f)?;
    match ctx.format_or(Format::Json) {
        Format::Json => {
            let rect = fundamental_rectangle(&skel).ok();
            let v = json!({
                "expr": to_dsl(&f),
                "bounded": skel.is_bounded(),
                "lines": skel.lines,
                "half_lines": skel.half_lines,
                "fundamental_rectangle": rect,
            });
            ctx.emit_json("skeleton", &v)
        }
        Format::Csv => {
            let mut t = Table::new(&["line", "slope", "significant", "width_exponent", "monotone", "asymmetry"]);
            for (i, l) in skel.lines.iter().enumerate() {
                t.push(vec![
                    i.to_string(),
                    slope_text(&l.slope),
                    l.significant.to_string(),
                    num(l.width_exponent),
                    l.monotone.to_string(),
                    num(l.asymmetry),
                ]);
            }
            ctx.emit("skeleton", Format::Csv, t.to_csv());
            Ok(())
        }
        f => Err(unsupported("skeleton", f)),
    }
}

fn run_density(ctx: &mut Ctx, a: &DensityArgs) -> Result<()> {
    let f = load_distance_function(&a.f.f)?;
    let mut oracle = DensityOracle::new(&f)?;
    if let Some(bits) = ctx.precision {
        oracle.tolerance = 0.5f64.powi(bits as i32);
    }
    let mut rows = Vec::new();
    for &eps in &a.eps {
        let r = match a.method {
            Method::Analytic => oracle.density(eps, DensityMethod::Analytic, 0, 0)?,
            Method::Quadrature => oracle.density(eps, DensityMethod::Quadrature, 0, 0)?,
            Method::Montecarlo => {
                let seed = require_seed(a.seed, "density --method montecarlo")?;
                oracle.density(eps, DensityMethod::MonteCarlo, a.samples, seed)?
            }
            Method::Auto => match a.seed {
                Some(seed) => oracle.density(eps, DensityMethod::Auto, a.samples, seed)?,
                None => match oracle.density(eps, DensityMethod::Analytic, 0, 0) {
                    Ok(r) => r,
                    Err(Error::InvalidInput(_)) => oracle.density(eps, DensityMethod::Quadrature, 0, 0)?,
                    Err(e) => return Err(e),
                },
            },
        };
        rows.push(r);
    }
    match ctx.format_or(Format::Csv) {
        Format::Csv => {
            let mut t = Table::new(&["epsilon", "value", "stderr", "method"]);
            for r in &rows {
                t.push(vec![num(r.epsilon), num(r.value), num(r.stderr), r.method.as_str().into()]);
            }
            ctx.emit("density", Format::Csv, t.to_csv());
        }
        Format::Json => ctx.emit_json("density", &rows)?,
        Format::Svg => {
            let pts = rows.iter().map(|r| (r.epsilon, r.value)).collect();
            let p = Plot::new("density", "epsilon", "D_F").log_x().log_y().line(&to_dsl(&f), pts);
            ctx.emit("density", Format::Svg, p.to_svg());
        }
    }
    Ok(())
}

fn run_series(ctx: &mut Ctx, a: &SeriesArgs) -> Result<()> {
    let f = load_distance_function(&a.f.f)?;
    let psi = parse_psi(&a.psi)?;
    if a.qmax == 0 {
        return Err(Error::InvalidInput("Qmax must be at least 1".into()));
    }
    let r = khintchine::series_partial_sums(&f, &psi, a.qmax)?;
    match ctx.format_or(Format::Csv) {
        Format::Csv => {
            let mut t = Table::new(&["Q", "partial_sum"]);
            for &(q, s) in &r.partial_sums {
                t.push(vec![q.to_string(), num(s)]);
            }
            ctx.emit("series", Format::Csv, t.to_csv());
        }
        Format::Json => ctx.emit_json("series", &json!({ "psi": psi, "Qmax": a.qmax, "report": r }))?,
        Format::Svg => {
            let pts = r.partial_sums.iter().map(|&(q, s)| (q as f64, s)).collect();
            let title = format!("partial sums ({:?})", r.verdict);
            ctx.emit("series", Format::Svg, Plot::new(&title, "Q", "sum").log_x().line(&a.psi, pts).to_svg());
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct TailRecord {
    #[serde(rename = "N")]
    n: u64,
    tail_measure: f64,
    stderr: f64,
    samples: u64,
    seed: u64,
}

fn run_tail(ctx: &mut Ctx, a: &TailArgs) -> Result<()> {
    let seed = require_seed(a.seed, "tail")?;
    let f = load_distance_function(&a.f.f)?;
    let psi = parse_psi(&a.psi)?;
    let res = Resonator::new(&f)?;
    let mut rows = Vec::new();
    for &n in &a.n {
        let e = khintchine::tail_measure_with(&res, &psi, n, a.samples, seed)?;
        rows.push(TailRecord { n, tail_measure: e.value, stderr: e.stderr, samples: a.samples, seed });
    }
    match ctx.format_or(Format::Json) {
        Format::Json => match a.qmax {
            Some(q) => {
                let series = khintchine::series_partial_sums(&f, &psi, q)?;
                ctx.emit_json("tail", &json!({ "psi": psi, "series": series, "tail_measures": rows }))?
            }
            None => ctx.emit_json("tail", &rows)?,
        },
        Format::Csv => {
            let mut t = Table::new(&["N", "tail_measure", "stderr", "samples", "seed"]);
            for r in &rows {
                t.push(vec![
                    r.n.to_string(),
                    num(r.tail_measure),
                    num(r.stderr),
                    r.samples.to_string(),
                    r.seed.to_string(),
                ]);
            }
            ctx.emit("tail", Format::Csv, t.to_csv());
        }
        Format::Svg => {
            let pts = rows.iter().map(|r| (r.n as f64, r.tail_measure)).collect();
            ctx.emit("tail", Format::Svg, Plot::new("tail measure", "N", "measure").log_x().line(&a.psi, pts).to_svg());
        }
    }
    Ok(())
}

fn run_search(ctx: &mut Ctx, a: &SearchArgs) -> Result<()> {
    let f = load_distance_function(&a.f.f)?;
    let res = Resonator::new(&f)?;
    let point = match &a.x {
        Some(v) if v.len() == 2 => Some(Vec2::checked(v[0], v[1])?),
        Some(_) => return Err(Error::InvalidInput("--x takes two coordinates".into())),
        None => None,
    };
    let spec_for =
        |q: u64, eps: f64| if a.restricted { ResonantSpec::restricted(q, eps) } else { ResonantSpec::new(q, eps) };
    match (point, a.q, a.qmax) {
        (Some(x), Some(q), _) => {
            let eps = a.eps.ok_or_else(|| Error::InvalidInput("--eps is required with --q".into()))?;
            let spec = spec_for(q, eps);
            let hit = res.membership(x, &spec, SearchMode::Auto)?;
            let min = res.minimum(x, &spec, SearchMode::Auto)?;
            let v = json!({
                "x": [x.x1, x.x2], "q": q, "epsilon": eps, "restricted": a.restricted,
                "member": hit.is_some(), "hit": hit,
                "minimum": min.map(|(p, v)| json!({ "p": [p.0, p.1], "value": v })),
            });
            ctx.emit_json("search", &v)
        }
        (Some(x), None, Some(qmax)) => {
            let b = khintchine::best_approximations(&f, x, qmax)?;
            let list = if a.all { &b.all } else { &b.records };
            match ctx.format_or(Format::Csv) {
                Format::Csv => {
                    let mut t = Table::new(&["q", "p1", "p2", "value"]);
                    for r in list {
                        t.push(vec![r.q.to_string(), r.p[0].to_string(), r.p[1].to_string(), num(r.value)]);
                    }
                    ctx.emit("search", Format::Csv, t.to_csv());
                    Ok(())
                }
                Format::Json => ctx.emit_json("search", &b),
                Format::Svg => {
                    let pts = b.all.iter().map(|r| (r.q as f64, r.value)).collect();
                    ctx.emit(
                        "search",
                        Format::Svg,
                        Plot::new("F(x - p/q)", "q", "value").log_x().log_y().line("min", pts).to_svg(),
                    );
                    Ok(())
                }
            }
        }
        (None, Some(q), _) => {
            let eps = a.eps.ok_or_else(|| Error::InvalidInput("--eps is required with --q".into()))?;
            let seed = require_seed(a.seed, "search --q without --x")?;
            let samples = a.samples.unwrap_or(100_000);
            let spec = spec_for(q, eps);
            let e = res.measure(&spec, samples, seed)?;
            ctx.emit_json("search", &json!({ "q": q, "epsilon": eps, "restricted": a.restricted, "measure": e }))
        }
        _ => Err(Error::InvalidInput("search needs --x with --q or --Qmax, or --q with --seed".into())),
    }
}

fn run_cf(ctx: &mut Ctx, a: &CfArgs) -> Result<()> {
    let alpha = ctx.alpha(&a.alpha)?;
    let cf = circle::continued_fraction(&alpha, a.depth)?;
    match ctx.format_or(Format::Json) {
        Format::Json => ctx.emit_json("cf", &cf),
        Format::Csv => {
            let mut t = Table::new(&["k", "a_k", "p_k", "q_k"]);
            for (k, (q, (pk, qk))) in cf.partial_quotients.iter().zip(&cf.convergents).enumerate() {
                t.push(vec![k.to_string(), q.to_string(), pk.to_string(), qk.to_string()]);
            }
            ctx.emit("cf", Format::Csv, t.to_csv());
            Ok(())
        }
        f => Err(unsupported("cf", f)),
    }
}

fn run_threedist(ctx: &mut Ctx, a: &ThreeDistArgs) -> Result<()> {
    let step = step_of(ctx, &a.step)?;
    let rot = Rotation::new(step, twofloat::TwoFloat::from(a.x0));
    if a.scan {
        if a.n == 0 {
            return Err(Error::InvalidInput("N must be at least 1".into()));
        }
        let mut tr = GapTracker::new();
        let mut t = Table::new(&["N", "distinct_gaps", "min_gap", "max_gap", "gap_sum"]);
        let mut pts = Vec::new();
        for n in 1..=a.n {
            tr.insert(rot.point(n));
            let d = tr.distinct(GAP_TOLERANCE);
            let max = tr.max_gap() as f64 / 2f64.powi(64);
            let sum = tr.total() as f64 / 2f64.powi(64);
            pts.push((n as f64, d.len() as f64));
            t.push(vec![n.to_string(), d.len().to_string(), num(d[0]), num(max), num(sum)]);
        }
        return match ctx.format_or(Format::Csv) {
            Format::Csv => {
                ctx.emit("threedist", Format::Csv, t.to_csv());
                Ok(())
            }
            Format::Svg => {
                ctx.emit("threedist", Format::Svg, Plot::new("distinct gaps", "N", "count").line("gaps", pts).to_svg());
                Ok(())
            }
            f => Err(unsupported("threedist --scan", f)),
        };
    }
    let g = circle::three_distance_partition(&rot, a.n)?;
    match ctx.format_or(Format::Json) {
        Format::Json => ctx.emit_json("threedist", &g),
        Format::Csv => {
            let mut t = Table::new(&["index", "point", "gap"]);
            for (i, (p, gap)) in g.points.iter().zip(&g.gaps).enumerate() {
                t.push(vec![i.to_string(), num(*p), num(*gap)]);
            }
            ctx.emit("threedist", Format::Csv, t.to_csv());
            Ok(())
        }
        f => Err(unsupported("threedist", f)),
    }
}

fn run_ubiquity(ctx: &mut Ctx, a: &UbiquityArgs) -> Result<()> {
    let step = step_of(ctx, &a.step)?;
    let seq = circle::ubiquity_sequence(step, a.n)?;
    let covers: Vec<bool> = seq.iter().map(|&n| circle::ubiquity_covers(step, n)).collect();
    match ctx.format_or(Format::Csv) {
        Format::Csv => {
            let mut t = Table::new(&["N_r", "radius", "covers"]);
            for (&n, c) in seq.iter().zip(&covers) {
                t.push(vec![n.to_string(), num(3.0 / (n as f64 + 1.0)), c.to_string()]);
            }
            ctx.emit("ubiquity", Format::Csv, t.to_csv());
            Ok(())
        }
        Format::Json => ctx.emit_json("ubiquity", &json!({ "Nmax": a.n, "sequence": seq, "covers": covers })),
        Format::Svg => {
            let pts = seq.iter().enumerate().map(|(r, &n)| (r as f64, n as f64)).collect();
            ctx.emit("ubiquity", Format::Svg, Plot::new("N_r", "r", "N_r").log_y().line("N_r", pts).to_svg());
            Ok(())
        }
    }
}

fn run_coverage(ctx: &mut Ctx, a: &CoverageArgs) -> Result<()> {
    let seed = require_seed(a.seed, "coverage")?;
    if a.intervals && ctx.out.is_none() {
        return Err(Error::InvalidInput("--intervals requires --out".into()));
    }
    let f = load_distance_function(&a.f.f)?;
    let line = match a.line {
        Some(l) => l,
        None => circle::default_irrational_line(&f)?,
    };
    let (sys, rows) = circle::coverage_experiment(&f, line, a.eps, a.y0, &a.n, a.k, a.samples, seed)?;
    let sums = sys.tilde_partial_sums(&a.n);
    match ctx.format_or(Format::Csv) {
        Format::Csv => {
            let mut t = Table::new(&["N", "fraction_hit_once", "fraction_hit_k", "stderr"]);
            for r in &rows {
                t.push(vec![r.n.to_string(), num(r.fraction_hit_once), num(r.fraction_hit_k), num(r.stderr)]);
            }
            ctx.emit("coverage", Format::Csv, t.to_csv());
        }
        Format::Json => {
            let sums: Vec<Value> = sums.iter().map(|&(n, s)| json!({ "N": n, "sum_len_Itilde": s })).collect();
            ctx.emit_json(
                "coverage",
                &json!({ "system": sys, "line": line, "k": a.k, "samples": a.samples, "seed": seed, "partial_sums": sums, "rows": rows }),
            )?
        }
        Format::Svg => {
            let once = rows.iter().map(|r| (r.n.max(1) as f64, r.fraction_hit_once)).collect();
            let many = rows.iter().map(|r| (r.n.max(1) as f64, r.fraction_hit_k)).collect();
            let p = Plot::new("coverage", "N", "fraction")
                .log_x()
                .line("hit once", once)
                .line(&format!("hit {} times", a.k), many);
            ctx.emit("coverage", Format::Svg, p.to_svg());
        }
    }
    if a.intervals {
        let mut t = Table::new(&["n", "x_n", "r_n", "sigma_n", "len_In", "len_Itilde_n"]);
        for r in &sys.records {
            t.push(vec![r.n.to_string(), num(r.x_n), num(r.r_n), num(r.sigma_n), num(r.len_i()), num(r.len_itilde())]);
        }
        ctx.emit("intervals", Format::Csv, t.to_csv());
    }
    Ok(())
}

fn run_transfer(ctx: &mut Ctx, body: TransferBody, a: &TransferArgs) -> Result<()> {
    let x = Coords::parse(&a.x)?;
    let r = match body {
        TransferBody::Mult => transference::verify_theorem_multitrans(&x, a.eps, a.bound)?,
        TransferBody::Unionjack => transference::verify_theorem_unionjack(&x, a.eps, a.bound)?,
        TransferBody::Height => transference::verify_khintchine_transfer(&x, a.eps, a.bound)?,
    };
    match ctx.format_or(Format::Json) {
        Format::Json => ctx.emit_json("transfer", &json!({ "seed": a.seed, "report": r })),
        Format::Csv => {
            ctx.emit("transfer", Format::Csv, r.to_csv());
            Ok(())
        }
        Format::Svg => {
            let pts = r.witnesses.iter().filter_map(|w| w.p.map(|p| (w.mu, p as f64))).collect();
            ctx.emit(
                "transfer",
                Format::Svg,
                Plot::new("witness p against mu", "mu", "p").log_x().log_y().line(r.body, pts).to_svg(),
            );
            Ok(())
        }
    }
}

fn run_prop5(ctx: &mut Ctx, a: &Prop5Args) -> Result<()> {
    if let Some(x) = &a.x {
        let x = Coords::parse(x)?;
        let (Some(l), Some(m)) = (a.lambda, a.mu) else {
            return Err(Error::InvalidInput("--x needs --lambda and --mu".into()));
        };
        let r = transference::verify_prop5(&x, &TransferParams::new(l, m)?, a.bound);
        return ctx.emit_json("prop5", &r);
    }
    let seed = require_seed(a.seed, "prop5")?;
    let s = transference::prop5_suite(a.instances, a.bound, seed);
    match ctx.format_or(Format::Json) {
        Format::Json => ctx.emit_json("prop5", &json!({ "seed": seed, "suite": s })),
        Format::Csv => {
            let mut t = Table::new(&[
                "x1",
                "x2",
                "lambda",
                "mu",
                "system_i_solutions",
                "p",
                "stated_bound_holds",
                "counterexample",
            ]);
            for r in &s.reports {
                t.push(vec![
                    num(r.x[0]),
                    num(r.x[1]),
                    num(r.params.lambda),
                    num(r.params.mu),
                    r.system_i_solutions.to_string(),
                    r.p_witness.map(|p| p.to_string()).unwrap_or_default(),
                    r.stated_bound_holds.map(|b| b.to_string()).unwrap_or_default(),
                    r.counterexample().to_string(),
                ]);
            }
            ctx.emit("prop5", Format::Csv, t.to_csv());
            Ok(())
        }
        f => Err(unsupported("prop5", f)),
    }
}

fn run_philemma(ctx: &mut Ctx, a: &PhiArgs) -> Result<()> {
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use num_traits::ToPrimitive;
    let pow: Option<i32> = match a.omega.as_str() {
        "harmonic" => Some(1),
        "one" => Some(0),
        s => match s.strip_prefix("pow:") {
            Some(e) => {
                if a.exact {
                    Some(e.parse().map_err(|_| Error::InvalidInput("exact mode needs an integer exponent".into()))?)
                } else {
                    None
                }
            }
            None => return Err(Error::InvalidInput(format!("unknown ω `{s}`"))),
        },
    };
    let (lhs, rhs, exact) = if a.exact {
        let e = pow.expect("set in exact mode");
        if e < 0 {
            return Err(Error::InvalidInput("ω must be decreasing".into()));
        }
        let (l, r) =
            khintchine::euler_phi_sum_exact(|q| BigRational::new(BigInt::from(1), BigInt::from(q).pow(e as u32)), a.n);
        let lf = l.to_f64().unwrap_or(f64::NAN);
        let rf = r.to_f64().unwrap_or(f64::NAN);
        (lf, rf, Some((l.to_string(), r.to_string())))
    } else {
        let s: f64 = match pow {
            Some(e) => e as f64,
            None => a.omega[4..].parse().map_err(|_| Error::InvalidInput("bad ω exponent".into()))?,
        };
        let r = khintchine::euler_phi_sum_check(|q| (q as f64).powf(-s), a.n)?;
        (r.lhs, r.rhs, None)
    };
    match ctx.format_or(Format::Csv) {
        Format::Csv => {
            let mut t = Table::new(&["N", "lhs", "rhs", "ratio"]);
            t.push(vec![a.n.to_string(), num(lhs), num(rhs), num(lhs / rhs)]);
            ctx.emit("philemma", Format::Csv, t.to_csv());
            Ok(())
        }
        Format::Json => ctx.emit_json(
            "philemma",
            &json!({ "N": a.n, "omega": a.omega, "lhs": lhs, "rhs": rhs, "ratio": lhs / rhs,
                     "exact": exact.map(|(l, r)| json!({ "lhs": l, "rhs": r })) }),
        ),
        f => Err(unsupported("philemma", f)),
    }
}

fn dispatch(ctx: &mut Ctx, cmd: &Command) -> Result<()> {
    match cmd {
        Command::Skeleton(a) => run_skeleton(ctx, a),
        Command::Density(a) => run_density(ctx, a),
        Command::Series(a) => run_series(ctx, a),
        Command::Tail(a) => run_tail(ctx, a),
        Command::Search(a) => run_search(ctx, a),
        Command::Cf(a) => run_cf(ctx, a),
        Command::Threedist(a) => run_threedist(ctx, a),
        Command::Ubiquity(a) => run_ubiquity(ctx, a),
        Command::Coverage(a) => run_coverage(ctx, a),
        Command::Transfer { body, args } => run_transfer(ctx, *body, args),
        Command::Prop5(a) => run_prop5(ctx, a),
        Command::Philemma(a) => run_philemma(ctx, a),
    }
}

fn error_record(kind: &str, message: &str, code: i32) -> String {
    json!({ "error": kind, "message": message, "exit_code": code }).to_string()
}

/// Exit code for an error: 3 for numeric failures, 2 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numeric() {
        3
    } else {
        2
    }
}

fn thread_count() -> std::result::Result<Option<usize>, String> {
    match std::env::var("STARKIT_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("STARKIT_THREADS must be a positive integer, got `{v}`")),
            Ok(n) => Ok(Some(n)),
        },
        Err(_) => Ok(None),
    }
}

/// Runs the CLI on `args`, writing results to `stdout` and error records to
/// `stderr`; returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(
                e.kind(),
                ErrorKind::DisplayHelp
                    | ErrorKind::DisplayVersion
                    | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
            ) {
                let _ = write!(stdout, "{e}");
                return if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand { 2 } else { 0 };
            }
            let msg = e.render().to_string();
            let _ = writeln!(stderr, "{}", error_record("UsageError", msg.trim(), 2));
            return 2;
        }
    };
    let threads = match thread_count() {
        Ok(t) => t,
        Err(m) => {
            let _ = writeln!(stderr, "{}", error_record("InvalidInput", &m, 2));
            return 2;
        }
    };
    let mut ctx = Ctx { out: cli.out.clone(), format: cli.format, precision: cli.precision, artifacts: Vec::new() };
    let result = match threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&mut ctx, &cli.command)),
            Err(e) => Err(Error::InvalidInput(format!("thread pool: {e}"))),
        },
        None => dispatch(&mut ctx, &cli.command),
    };
    let result = result.and_then(|()| flush(&ctx, stdout));
    match result {
        Ok(()) => 0,
        Err(e) => {
            let code = exit_code(&e);
            let _ = writeln!(stderr, "{}", error_record(e.kind(), &e.to_string(), code));
            code
        }
    }
}

fn flush(ctx: &Ctx, stdout: &mut dyn Write) -> Result<()> {
    match &ctx.out {
        Some(dir) => {
            for a in &ctx.artifacts {
                write_atomic(&dir.join(format!("{}.{}", a.name, a.ext)), a.body.as_bytes())?;
            }
        }
        None => {
            for a in &ctx.artifacts {
                match stdout.write_all(a.body.as_bytes()) {
                    Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => return Ok(()),
                    r => r.map_err(|e| Error::InvalidInput(format!("stdout: {e}")))?,
                }
            }
        }
    }
    Ok(())
}
