//! Zero sets of distance functions, cusp widths and the fundamental rectangle.

use std::f64::consts::PI;

use num_integer::Integer;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Expr, LinearForm, Vec2};

/// Slope of a skeleton line. `Rational { s, r }` means direction `(r, s)` with
/// `gcd(s, r) = 1` and `r > 0`, or `(r, s) = (0, 1)` for the vertical line.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Slope {
    Rational {
        s: i64,
        r: i64,
    },
    /// `value = coef·√radicand` with `radicand ∈ {2, 3, 6}`.
    Irrational {
        value: f64,
        coef: String,
        radicand: u32,
    },
}

impl Slope {
    pub fn is_rational(&self) -> bool {
        matches!(self, Slope::Rational { .. })
    }

    /// Direction of the line, normalised to unit length, pointing right
    /// (or up for the vertical line).
    pub fn direction(&self) -> Vec2 {
        match *self {
            Slope::Rational { s, r } => Vec2::new(r as f64, s as f64).unit(),
            Slope::Irrational { value, .. } => Vec2::new(1.0, value).unit(),
        }
    }

    /// Integer direction `(r, s)` for rational slopes.
    pub fn integer_direction(&self) -> Option<(i64, i64)> {
        match *self {
            Slope::Rational { s, r } => Some((r, s)),
            Slope::Irrational { .. } => None,
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            Slope::Rational { s, r } => s as f64 / r as f64,
            Slope::Irrational { value, .. } => value,
        }
    }
}

/// Slope of the kernel of `a·x1 + b·x2`.
fn kernel_slope(form: &LinearForm) -> Result<Slope> {
    let (a, b) = (form.a(), form.b());
    if b.is_zero() {
        return Ok(Slope::Rational { s: 1, r: 0 });
    }
    let (c, m) = a.ratio_surd(b).expect("b is nonzero");
    let c = -c;
    if m == 1 {
        let (s, r) = (c.numer().to_i64(), c.denom().to_i64());
        match (s, r) {
            (Some(s), Some(r)) => Ok(Slope::Rational { s, r }),
            _ => Err(Error::InvalidInput(format!("slope {c} exceeds 64-bit range"))),
        }
    } else {
        let value = crate::scalar::rational_to_twofloat(&c).hi() * f64::from(m).sqrt();
        Ok(Slope::Irrational { value, coef: fmt_ratio(&c), radicand: m })
    }
}

fn fmt_ratio(c: &BigRational) -> String {
    if c.is_integer() {
        c.numer().to_string()
    } else {
        format!("{}/{}", c.numer(), c.denom())
    }
}

/// A line of `F⁻¹(0)` through the origin.
#[derive(Debug, Clone, Serialize)]
pub struct SkeletonLine {
    #[serde(skip)]
    pub form: LinearForm,
    pub slope: Slope,
    pub significant: bool,
    pub width_exponent: f64,
    pub monotone: bool,
    /// `w⁺/w⁻` at the largest fitted radius.
    pub asymmetry: f64,
}

/// One of the two rays of a skeleton line.
#[derive(Debug, Clone, Serialize)]
pub struct HalfLine {
    pub line: usize,
    pub direction: Vec2Ser,
    pub slope: Slope,
    pub significant: bool,
    pub width_exponent: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Vec2Ser {
    pub x1: f64,
    pub x2: f64,
}

impl From<Vec2> for Vec2Ser {
    fn from(v: Vec2) -> Self {
        Self { x1: v.x1, x2: v.x2 }
    }
}

impl HalfLine {
    pub fn dir(&self) -> Vec2 {
        Vec2::new(self.direction.x1, self.direction.x2)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SkeletonReport {
    pub lines: Vec<SkeletonLine>,
    pub half_lines: Vec<HalfLine>,
}

impl SkeletonReport {
    pub fn is_bounded(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn all_rational(&self) -> bool {
        self.lines.iter().all(|l| l.slope.is_rational())
    }

    pub fn has_significant(&self) -> bool {
        self.lines.iter().any(|l| l.significant)
    }
}

/// Parameters of the width-decay fit.
#[derive(Debug, Clone, Copy)]
pub struct SignificanceOptions {
    pub r_max: f64,
    pub epsilon: f64,
    pub tolerance: f64,
    pub samples_per_decade: usize,
}

impl Default for SignificanceOptions {
    fn default() -> Self {
        Self { r_max: 1e6, epsilon: 0.1, tolerance: 0.05, samples_per_decade: 8 }
    }
}

fn union_into(acc: &mut Vec<LinearForm>, more: Vec<LinearForm>) {
    for f in more {
        if !acc.iter().any(|g| g.same_kernel(&f)) {
            acc.push(f);
        }
    }
}

/// Lines on which `e` vanishes identically.
pub fn zero_lines(e: &Expr) -> Vec<LinearForm> {
    match e {
        Expr::Abs(a) => vec![a.form().clone()],
        Expr::Min(c) | Expr::GeoMean(c) => {
            let mut acc = Vec::new();
            for child in c {
                union_into(&mut acc, zero_lines(child));
            }
            acc
        }
        Expr::Max(c) => {
            let mut sets = c.iter().map(zero_lines);
            let mut acc = sets.next().unwrap_or_default();
            for s in sets {
                acc.retain(|f| s.iter().any(|g| g.same_kernel(f)));
            }
            acc
        }
        Expr::Scale(_, c) => zero_lines(c),
    }
}

fn angle_of(v: Vec2) -> f64 {
    v.x2.atan2(v.x1).rem_euclid(PI)
}

/// Skeleton with significance computed under default fit options.
pub fn extract_skeleton(f: &Expr) -> Result<SkeletonReport> {
    extract_skeleton_with(f, &SignificanceOptions::default())
}

pub fn extract_skeleton_with(f: &Expr, opts: &SignificanceOptions) -> Result<SkeletonReport> {
    f.validate()?;
    let forms = zero_lines(f);
    let mut slopes = Vec::with_capacity(forms.len());
    for form in &forms {
        slopes.push(kernel_slope(form)?);
    }
    degenerate_scan(f, &slopes)?;

    let mut lines = Vec::new();
    let mut half_lines = Vec::new();
    for (idx, (form, slope)) in forms.into_iter().zip(slopes).enumerate() {
        let fit = classify_significance_dir(f, &form, slope.direction(), opts)?;
        for sign in [1.0, -1.0] {
            half_lines.push(HalfLine {
                line: idx,
                direction: slope.direction().scale(sign).into(),
                slope: slope.clone(),
                significant: fit.significant,
                width_exponent: fit.beta,
            });
        }
        lines.push(SkeletonLine {
            form,
            slope,
            significant: fit.significant,
            width_exponent: fit.beta,
            monotone: fit.monotone,
            asymmetry: fit.asymmetry,
        });
    }
    Ok(SkeletonReport { lines, half_lines })
}

/// Fails when `F` vanishes away from the symbolic zero set.
fn degenerate_scan(f: &Expr, slopes: &[Slope]) -> Result<()> {
    const STEPS: usize = 4096;
    let known: Vec<f64> = slopes.iter().map(|s| angle_of(s.direction())).collect();
    let scale = (0..64).map(|i| f.eval(Vec2::from_angle(PI * (i as f64 + 0.5) / 64.0))).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::DegenerateExpr);
    }
    let mut run = 0;
    for i in 0..STEPS {
        let th = PI * (i as f64 + 0.37) / STEPS as f64;
        let near = known.iter().any(|&k| {
            let d = (th - k).abs();
            d.min(PI - d) < 2.0 * PI / STEPS as f64
        });
        if !near && f.eval(Vec2::from_angle(th)) <= 1e-13 * scale {
            run += 1;
            if run >= 2 {
                return Err(Error::DegenerateExpr);
            }
        } else {
            run = 0;
        }
    }
    Ok(())
}

/// Evaluates `F(r·d + t·n)` without cancellation in the atoms vanishing on `d`.
#[derive(Debug, Clone)]
pub struct LineFrame<'a> {
    f: &'a Expr,
    along: Vec<f64>,
    across: Vec<f64>,
    pub direction: Vec2,
    pub normal: Vec2,
}

impl<'a> LineFrame<'a> {
    /// `kernel` is the form whose zero line contains `direction`.
    pub fn new(f: &'a Expr, kernel: &LinearForm, direction: Vec2) -> Self {
        let direction = direction.unit();
        let normal = direction.perp();
        let mut along = Vec::new();
        let mut across = Vec::new();
        for form in f.atoms() {
            let (a, b) = form.coefficients();
            let on_line = form.same_kernel(kernel);
            along.push(if on_line { 0.0 } else { a * direction.x1 + b * direction.x2 });
            across.push(a * normal.x1 + b * normal.x2);
        }
        Self { f, along, across, direction, normal }
    }

    pub fn eval(&self, r: f64, t: f64) -> f64 {
        let vals: Vec<f64> = self.along.iter().zip(&self.across).map(|(&u, &v)| r * u + t * v).collect();
        self.f.eval_atoms(&vals)
    }

    /// First crossing of `F = ε` along the normal, on the side `sign`.
    pub fn extent(&self, r: f64, epsilon: f64, sign: f64) -> f64 {
        if !(epsilon > 0.0) || self.eval(r, 0.0) >= epsilon {
            return 0.0;
        }
        let cap = 1e8 * r.abs().max(1.0);
        let mut lo = 0.0;
        let mut hi = f64::MIN_POSITIVE.max(1e-300);
        while self.eval(r, sign * hi) < epsilon {
            lo = hi;
            hi *= 2.0;
            if hi > cap {
                return cap;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.eval(r, sign * mid) < epsilon {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// `(w⁺, w⁻)` at arc distance `r`.
    pub fn widths(&self, r: f64, epsilon: f64) -> (f64, f64) {
        (self.extent(r, epsilon, 1.0), self.extent(r, epsilon, -1.0))
    }
}

/// Perpendicular extents `(w⁺, w⁻)` of `{F < ε}` at distance `r` along the
/// half-line. `w⁺` is measured towards the counter-clockwise normal.
pub fn width_profile(f: &Expr, line: &HalfLine, r: f64, epsilon: f64) -> (f64, f64) {
    let forms = zero_lines(f);
    let kernel = forms
        .iter()
        .find(|k| {
            let (a, b) = k.coefficients();
            let d = line.dir();
            (a * d.x1 + b * d.x2).abs() <= 1e-12 * a.hypot(b)
        })
        .cloned();
    match kernel {
        Some(k) => LineFrame::new(f, &k, line.dir()).widths(r, epsilon),
        None => {
            // Not a symbolic zero line: fall back to plain evaluation.
            let frame = PlainFrame { f, d: line.dir().unit() };
            (frame.extent(r, epsilon, 1.0), frame.extent(r, epsilon, -1.0))
        }
    }
}

struct PlainFrame<'a> {
    f: &'a Expr,
    d: Vec2,
}

impl PlainFrame<'_> {
    fn extent(&self, r: f64, epsilon: f64, sign: f64) -> f64 {
        let p = self.d.scale(r);
        let n = self.d.perp().scale(sign);
        let g = |t: f64| self.f.eval(p.add(n.scale(t)));
        if !(epsilon > 0.0) || g(0.0) >= epsilon {
            return 0.0;
        }
        let (mut lo, mut hi) = (0.0, 1e-300);
        while g(hi) < epsilon {
            lo = hi;
            hi *= 2.0;
            if hi > 1e8 * r.max(1.0) {
                return hi;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if g(mid) < epsilon {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

/// Result of the width-decay fit `w(r) ≈ C·r^(−β)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Significance {
    pub significant: bool,
    pub beta: f64,
    pub log_c: f64,
    pub monotone: bool,
    pub asymmetry: f64,
}

/// Classifies a half-line by fitting the decay of its total width.
pub fn classify_significance(f: &Expr, line: &HalfLine, r_max: f64, epsilon: f64) -> Result<(bool, f64)> {
    let opts = SignificanceOptions { r_max, epsilon, ..Default::default() };
    let forms = zero_lines(f);
    let d = line.dir();
    let kernel = forms
        .iter()
        .find(|k| {
            let (a, b) = k.coefficients();
            (a * d.x1 + b * d.x2).abs() <= 1e-12 * a.hypot(b)
        })
        .ok_or_else(|| Error::InvalidInput("half-line is not in the skeleton".into()))?;
    let s = classify_significance_dir(f, kernel, d, &opts)?;
    Ok((s.significant, s.beta))
}

pub fn classify_significance_dir(
    f: &Expr,
    kernel: &LinearForm,
    direction: Vec2,
    opts: &SignificanceOptions,
) -> Result<Significance> {
    if !(opts.r_max > 1.0) || !(opts.epsilon > 0.0) {
        return Err(Error::InvalidInput("significance fit needs r_max > 1 and ε > 0".into()));
    }
    let frame = LineFrame::new(f, kernel, direction);
    let decades = opts.r_max.log10();
    let n = ((decades * opts.samples_per_decade as f64).ceil() as usize).max(4);
    let mut xs = Vec::with_capacity(n + 1);
    let mut ys = Vec::with_capacity(n + 1);
    let mut widths = Vec::with_capacity(n + 1);
    let mut last = (0.0, 0.0);
    for i in 0..=n {
        let r = 10f64.powf(decades * i as f64 / n as f64);
        let (wp, wm) = frame.widths(r, opts.epsilon);
        let w = wp + wm;
        widths.push(w);
        last = (wp, wm);
        if w > 0.0 && w.is_finite() {
            xs.push(r.ln());
            ys.push(w.ln());
        }
    }
    if xs.len() < 3 {
        return Err(Error::FitFailure(format!("only {} positive widths over [1, {}]", xs.len(), opts.r_max)));
    }
    let (slope, icpt) = least_squares(&xs, &ys);
    let beta = -slope;
    let monotone = widths.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9));
    let asymmetry = if last.1 > 0.0 { last.0 / last.1 } else { f64::INFINITY };
    Ok(Significance { significant: beta <= 1.0 + opts.tolerance, beta, log_c: icpt, monotone, asymmetry })
}

pub(crate) fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// `(ŝ, r̂)` built from the skeleton slopes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FundamentalRectangle {
    pub s_hat: u64,
    pub r_hat: u64,
}

/// `ŝ = lcm` of nonzero numerators, `r̂ = lcm` of nonzero denominators.
pub fn fundamental_rectangle(skel: &SkeletonReport) -> Result<FundamentalRectangle> {
    let mut s_hat = 1u64;
    let mut r_hat = 1u64;
    for line in &skel.lines {
        match line.slope {
            Slope::Rational { s, r } => {
                if s != 0 {
                    s_hat = s_hat.lcm(&s.unsigned_abs());
                }
                if r != 0 {
                    r_hat = r_hat.lcm(&r.unsigned_abs());
                }
            }
            Slope::Irrational { .. } => return Err(Error::IrrationalSkeleton),
        }
    }
    Ok(FundamentalRectangle { s_hat, r_hat })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_dsl;

    fn rational(s: i64, r: i64) -> Slope {
        Slope::Rational { s, r }
    }

    #[test]
    fn bounded_and_axes() {
        let h = extract_skeleton(&Expr::height()).unwrap();
        assert!(h.is_bounded());
        assert_eq!(fundamental_rectangle(&h).unwrap(), FundamentalRectangle { s_hat: 1, r_hat: 1 });

        let m = extract_skeleton(&Expr::multiplicative()).unwrap();
        assert_eq!(m.half_lines.len(), 4);
        let slopes: Vec<_> = m.lines.iter().map(|l| l.slope.clone()).collect();
        assert!(slopes.contains(&rational(0, 1)));
        assert!(slopes.contains(&rational(1, 0)));
        for l in &m.lines {
            assert!(l.significant);
            assert!((l.width_exponent - 1.0).abs() < 1e-6, "{}", l.width_exponent);
            assert!(l.monotone);
        }
        assert_eq!(fundamental_rectangle(&m).unwrap(), FundamentalRectangle { s_hat: 1, r_hat: 1 });
    }

    #[test]
    fn irrational_cusp() {
        let sk = extract_skeleton(&Expr::irrational_cusp()).unwrap();
        assert_eq!(sk.lines.len(), 2);
        let irr = sk.lines.iter().find(|l| !l.slope.is_rational()).unwrap();
        assert!((irr.slope.value() - 2f64.sqrt()).abs() < 1e-15);
        assert!(irr.significant);
        assert!(sk.lines.iter().any(|l| l.slope == rational(1, 0)));
        assert_eq!(fundamental_rectangle(&sk), Err(Error::IrrationalSkeleton));
    }

    #[test]
    fn steep_cusp_is_not_significant() {
        let f = parse_dsl("gm(abs(0,1),abs(1,0),abs(1,0))").unwrap();
        let sk = extract_skeleton(&f).unwrap();
        let x_axis = sk.lines.iter().find(|l| l.slope == rational(0, 1)).unwrap();
        assert!(!x_axis.significant);
        assert!((x_axis.width_exponent - 2.0).abs() < 1e-6);
        let y_axis = sk.lines.iter().find(|l| l.slope == rational(1, 0)).unwrap();
        assert!(y_axis.significant);
        assert!((y_axis.width_exponent - 0.5).abs() < 1e-6);
    }

    #[test]
    fn slope_two_thirds() {
        let f = parse_dsl("gm(abs(2,-3),abs(1,1))").unwrap();
        let sk = extract_skeleton(&f).unwrap();
        assert!(sk.lines.iter().any(|l| l.slope == rational(2, 3)));
        assert!(sk.lines.iter().any(|l| l.slope == rational(-1, 1)));
        let only = SkeletonReport {
            lines: sk.lines.into_iter().filter(|l| l.slope == rational(2, 3)).collect(),
            half_lines: vec![],
        };
        assert_eq!(fundamental_rectangle(&only).unwrap(), FundamentalRectangle { s_hat: 2, r_hat: 3 });
    }

    #[test]
    fn max_intersects_min_unites() {
        let f = parse_dsl("max(gm(abs(1,0),abs(1,1)),abs(2,2))").unwrap();
        let sk = extract_skeleton(&f).unwrap();
        assert_eq!(sk.lines.len(), 1);
        assert_eq!(sk.lines[0].slope, rational(-1, 1));
        let uj = extract_skeleton(&Expr::union_jack()).unwrap();
        assert_eq!(uj.lines.len(), 4);
    }

    #[test]
    fn multiplicative_widths() {
        let f = Expr::multiplicative();
        let sk = extract_skeleton(&f).unwrap();
        let x_axis = sk.half_lines.iter().find(|h| h.slope == rational(0, 1)).unwrap();
        let (wp, wm) = width_profile(&f, x_axis, 10.0, 0.1);
        assert!((wp - 0.001).abs() < 1e-15 && (wm - 0.001).abs() < 1e-15);
        assert_eq!(width_profile(&f, x_axis, 10.0, 0.0), (0.0, 0.0));
    }

    #[test]
    fn union_jack_diagonal_width_matches_scan() {
        let f = Expr::union_jack();
        let sk = extract_skeleton(&f).unwrap();
        let diag = sk.half_lines.iter().find(|h| h.slope == rational(1, 1)).unwrap();
        let r = 2f64.sqrt();
        let (wp, wm) = width_profile(&f, diag, r, 0.1);
        let d = diag.dir();
        let n = d.perp();
        let grid = 1e-7;
        let scan = |sign: f64| {
            let mut t = 0.0;
            while f.eval(d.scale(r).add(n.scale(sign * (t + grid)))) < 0.1 {
                t += grid;
            }
            t
        };
        assert!((wp - scan(1.0)).abs() <= 2.0 * grid);
        assert!((wm - scan(-1.0)).abs() <= 2.0 * grid);
        assert!((wp - 0.01 / r).abs() < 1e-6);
    }

    #[test]
    fn far_irrational_widths_are_stable() {
        let f = Expr::irrational_cusp();
        let form = zero_lines(&f).into_iter().next().unwrap();
        let slope = kernel_slope(&form).unwrap();
        let frame = LineFrame::new(&f, &form, slope.direction());
        let (a, b) = frame.widths(1e6, 0.2);
        let (c, d) = frame.widths(2e6, 0.2);
        assert!(((a + b) / (c + d) - 2.0).abs() < 1e-6);
    }
}
