//! Continued fractions, circle rotations and the interval system cut out on
//! a horizontal line by the ε-neighbourhood of an irrational skeleton line.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rand::RngExt;
use rayon::prelude::*;
use serde::{Serialize, Serializer};
use twofloat::TwoFloat;

use crate::dsl::parse_decimal;
use crate::error::{Error, Result};
use crate::expr::{Expr, LinearForm, Vec2};
use crate::mc::{batch_rng, BATCH};
use crate::scalar::rational_to_twofloat;
use crate::skeleton::{extract_skeleton, LineFrame};

/// `(p + √d)/q` with `d > 0` not a square and `q | d − p²`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuadraticSurd {
    p: BigInt,
    d: BigInt,
    q: BigInt,
}

impl QuadraticSurd {
    pub fn new(p: BigInt, d: BigInt, q: BigInt) -> Result<Self> {
        if !d.is_positive() || q.is_zero() {
            return Err(Error::InvalidInput("quadratic surd needs d > 0 and q ≠ 0".into()));
        }
        let s = d.sqrt();
        if &s * &s == d {
            return Err(Error::InvalidInput(format!("{d} is a perfect square")));
        }
        if !((&d - &p * &p) % &q).is_zero() {
            let aq = q.abs();
            return Ok(Self { p: &p * &aq, d: &d * &q * &q, q: &q * &aq });
        }
        Ok(Self { p, d, q })
    }

    pub fn sqrt(d: u64) -> Result<Self> {
        Self::new(BigInt::zero(), BigInt::from(d), BigInt::one())
    }

    /// `c·√m`.
    pub fn scaled_sqrt(c: &BigRational, m: u32) -> Result<Self> {
        let u = c.numer();
        let v = c.denom();
        let d = u * u * BigInt::from(m);
        let q = if u.is_negative() { -v.clone() } else { v.clone() };
        Self::new(BigInt::zero(), d, q)
    }

    pub fn to_twofloat(&self) -> TwoFloat {
        let d = rational_to_twofloat(&BigRational::from_integer(self.d.clone()));
        let p = rational_to_twofloat(&BigRational::from_integer(self.p.clone()));
        let q = rational_to_twofloat(&BigRational::from_integer(self.q.clone()));
        (p + d.sqrt()) / q
    }

    pub fn to_f64(&self) -> f64 {
        self.to_twofloat().hi()
    }

    fn floor(&self) -> BigInt {
        let s = self.d.sqrt();
        if self.q.is_positive() {
            (&self.p + &s).div_floor(&self.q)
        } else {
            -(&self.p + &s).div_floor(&-&self.q) - 1
        }
    }

    /// `(⌊α⌋, 1/(α − ⌊α⌋))`.
    fn step(&self) -> (BigInt, Self) {
        let a = self.floor();
        let p1 = &a * &self.q - &self.p;
        let q1 = (&self.d - &p1 * &p1) / &self.q;
        (a, Self { p: p1, d: self.d.clone(), q: q1 })
    }

    /// `1/α`.
    pub fn recip(&self) -> Self {
        // q/(p + √d) = q(√d − p)/(d − p²)
        let den = &self.d - &self.p * &self.p;
        let (p, q) = (-&self.q * &self.p, den);
        let d = &self.q * &self.q * &self.d;
        let (p, q) = if self.q.is_negative() { (-p, -q) } else { (p, q) };
        Self::new(p, d, q).expect("reciprocal of a valid surd")
    }
}

impl std::fmt::Display for QuadraticSurd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}+sqrt{})/{}", self.p, self.d, self.q)
    }
}

/// A rotation number, in exact or precision-tagged form.
#[derive(Debug, Clone, PartialEq)]
pub enum Alpha {
    Rational(BigRational),
    Surd(QuadraticSurd),
    /// A real known to lie within `radius` of `value`.
    Real {
        value: BigRational,
        radius: BigRational,
    },
}

impl Alpha {
    /// Accepts `p/q`, `sqrtD`, `P±sqrtD`, `(P±sqrtD)/Q` and decimals. A
    /// decimal is taken to be exact up to half a unit in its last digit.
    pub fn parse(text: &str) -> Result<Self> {
        let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        let bad = || Error::InvalidInput(format!("cannot read `{text}` as a real number"));
        if s.contains("sqrt") {
            return parse_surd(&s).ok_or_else(bad).and_then(|(p, d, q)| Ok(Alpha::Surd(QuadraticSurd::new(p, d, q)?)));
        }
        if let Some((n, d)) = s.split_once('/') {
            let n: BigInt = n.parse().map_err(|_| bad())?;
            let d: BigInt = d.parse().map_err(|_| bad())?;
            if d.is_zero() {
                return Err(bad());
            }
            return Ok(Alpha::Rational(BigRational::new(n, d)));
        }
        let value = parse_decimal(&s).ok_or_else(bad)?;
        let (mant, exp) = match s.find(['e', 'E']) {
            Some(i) => (&s[..i], s[i + 1..].parse::<i32>().map_err(|_| bad())?),
            None => (&s[..], 0),
        };
        let Some(dot) = mant.find('.') else {
            return Ok(Alpha::Rational(value));
        };
        let frac = (mant.len() - dot - 1) as i32;
        let e = exp - frac;
        let ten = BigRational::from_integer(BigInt::from(10));
        let unit = if e >= 0 { num_traits::pow(ten, e as usize) } else { num_traits::pow(ten, (-e) as usize).recip() };
        Ok(Alpha::Real { value, radius: unit / BigInt::from(2) })
    }

    pub fn to_twofloat(&self) -> TwoFloat {
        match self {
            Alpha::Rational(r) | Alpha::Real { value: r, .. } => rational_to_twofloat(r),
            Alpha::Surd(s) => s.to_twofloat(),
        }
    }

    pub fn to_f64(&self) -> f64 {
        self.to_twofloat().hi()
    }

    pub fn recip(&self) -> Result<Self> {
        let zero = || Error::InvalidInput("α must be nonzero".into());
        Ok(match self {
            Alpha::Rational(r) if r.is_zero() => return Err(zero()),
            Alpha::Rational(r) => Alpha::Rational(r.recip()),
            Alpha::Surd(s) => Alpha::Surd(s.recip()),
            Alpha::Real { value, radius } => {
                if value.abs() <= *radius {
                    return Err(zero());
                }
                // 1/x moves by at most radius/(|x| − radius)²
                let m = value.abs() - radius;
                Alpha::Real { value: value.recip(), radius: radius / (&m * &m) }
            }
        })
    }
}

fn parse_surd(s: &str) -> Option<(BigInt, BigInt, BigInt)> {
    let (inner, q) = if let Some(rest) = s.strip_prefix('(') {
        let (inner, tail) = rest.split_once(')')?;
        let q = match tail {
            "" => BigInt::one(),
            t => t.strip_prefix('/')?.parse().ok()?,
        };
        (inner, q)
    } else if let Some((inner, q)) = s.split_once('/') {
        (inner, q.parse().ok()?)
    } else {
        (s, BigInt::one())
    };
    let i = inner.find("sqrt")?;
    let d: BigInt = inner[i + 4..].parse().ok()?;
    let (p, neg) = match &inner[..i] {
        "" => (BigInt::zero(), false),
        "-" => (BigInt::zero(), true),
        head => {
            let (num, sign) = head.split_at(head.len() - 1);
            (num.parse().ok()?, sign == "-")
        }
    };
    if q.is_zero() {
        return None;
    }
    Some(if neg { (-p, d, -q) } else { (p, d, q) })
}

fn ser_bigs<S: Serializer>(v: &[BigInt], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|b| b.to_string()))
}

fn ser_pairs<S: Serializer>(v: &[(BigInt, BigInt)], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|(p, q)| [p.to_string(), q.to_string()]))
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuedFraction {
    pub alpha: f64,
    #[serde(serialize_with = "ser_bigs")]
    pub partial_quotients: Vec<BigInt>,
    /// `(p_k, q_k)`.
    #[serde(serialize_with = "ser_pairs")]
    pub convergents: Vec<(BigInt, BigInt)>,
    pub terminated: bool,
}

/// Partial quotients `a_0..a_{depth−1}` (fewer if `α` is rational) and the
/// convergents they generate.
pub fn continued_fraction(alpha: &Alpha, depth: usize) -> Result<ContinuedFraction> {
    let mut quotients = Vec::with_capacity(depth);
    let mut terminated = false;
    match alpha {
        Alpha::Rational(r) => {
            let mut x = r.clone();
            while quotients.len() < depth {
                let a = x.floor().to_integer();
                let frac = &x - BigRational::from_integer(a.clone());
                quotients.push(a);
                if frac.is_zero() {
                    terminated = true;
                    break;
                }
                x = frac.recip();
            }
        }
        Alpha::Surd(s) => {
            let mut x = s.clone();
            while quotients.len() < depth {
                let (a, next) = x.step();
                quotients.push(a);
                x = next;
            }
        }
        Alpha::Real { value, radius } => {
            let mut lo = value - radius;
            let mut hi = value + radius;
            while quotients.len() < depth {
                let a = lo.floor().to_integer();
                if hi.floor().to_integer() != a {
                    return Err(Error::PrecisionExhausted { terms: quotients.len() });
                }
                let (fl, fh) = (&lo - BigRational::from_integer(a.clone()), &hi - BigRational::from_integer(a.clone()));
                quotients.push(a);
                if fl.is_zero() {
                    return Err(Error::PrecisionExhausted { terms: quotients.len() });
                }
                // x ↦ 1/x reverses the order
                (lo, hi) = (fh.recip(), fl.recip());
            }
        }
    }
    let mut convergents = Vec::with_capacity(quotients.len());
    let (mut p0, mut q0) = (BigInt::one(), BigInt::zero());
    let (mut p1, mut q1) = (BigInt::zero(), BigInt::one());
    for a in &quotients {
        let p = a * &p0 + &p1;
        let q = a * &q0 + &q1;
        (p1, q1) = (p0, q0);
        (p0, q0) = (p.clone(), q.clone());
        convergents.push((p, q));
    }
    Ok(ContinuedFraction { alpha: alpha.to_f64(), partial_quotients: quotients, convergents, terminated })
}

const ONE_TURN: u128 = 1 << 64;

fn to_fixed(x: TwoFloat) -> u64 {
    let fl = x.hi().floor();
    let frac = (x - fl).hi();
    let lo = (x - fl - frac).hi();
    let scale = ONE_TURN as f64;
    let a = (frac * scale) as i128;
    let b = (lo * scale).round() as i128;
    (a + b).rem_euclid(ONE_TURN as i128) as u64
}

fn fixed_to_f64(x: u128) -> f64 {
    x as f64 / ONE_TURN as f64
}

/// The rotation `x ↦ x + step` on `ℝ/ℤ` in 64-bit fixed point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rotation {
    pub step: u64,
    pub start: u64,
}

impl Rotation {
    pub fn new(step: TwoFloat, start: TwoFloat) -> Self {
        Self { step: to_fixed(step), start: to_fixed(start) }
    }

    pub fn from_f64(step: f64, start: f64) -> Self {
        Self::new(TwoFloat::from(step), TwoFloat::from(start))
    }

    /// `{start + n·step}`.
    pub fn point(&self, n: u64) -> u64 {
        self.start.wrapping_add(self.step.wrapping_mul(n))
    }
}

/// Gap multiset of a growing point set on the circle.
#[derive(Debug, Default, Clone)]
pub struct GapTracker {
    points: BTreeSet<u64>,
    repeats: usize,
    gaps: BTreeMap<u128, usize>,
}

impl GapTracker {
    pub fn new() -> Self {
        Self::default()
    }

    fn add_gap(&mut self, g: u128) {
        *self.gaps.entry(g).or_default() += 1;
    }

    fn remove_gap(&mut self, g: u128) {
        if let Some(c) = self.gaps.get_mut(&g) {
            *c -= 1;
            if *c == 0 {
                self.gaps.remove(&g);
            }
        }
    }

    pub fn insert(&mut self, p: u64) {
        if self.points.is_empty() {
            self.points.insert(p);
            self.add_gap(ONE_TURN);
            return;
        }
        if self.points.contains(&p) {
            self.repeats += 1;
            self.add_gap(0);
            return;
        }
        let prev = *self.points.range(..p).next_back().or(self.points.last()).unwrap();
        let next = *self.points.range(p..).next().or(self.points.first()).unwrap();
        let arc = |a: u64, b: u64| -> u128 {
            let d = b.wrapping_sub(a) as u128;
            if d == 0 {
                ONE_TURN
            } else {
                d
            }
        };
        self.remove_gap(arc(prev, next));
        self.add_gap(arc(prev, p));
        self.add_gap(arc(p, next));
        self.points.insert(p);
    }

    pub fn len(&self) -> usize {
        self.points.len() + self.repeats
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn max_gap(&self) -> u128 {
        self.gaps.keys().next_back().copied().unwrap_or(0)
    }

    pub fn distinct_exact(&self) -> usize {
        self.gaps.len()
    }

    /// Exact sum of all gaps in units of `2⁻⁶⁴`.
    pub fn total(&self) -> u128 {
        self.gaps.iter().map(|(g, c)| g * *c as u128).sum()
    }

    /// Distinct gap lengths after merging values within `tol`.
    pub fn distinct(&self, tol: f64) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for &g in self.gaps.keys() {
            let v = fixed_to_f64(g);
            match out.last() {
                Some(&last) if v - last <= tol => {}
                _ => out.push(v),
            }
        }
        out
    }

    pub fn sorted_points(&self) -> impl Iterator<Item = u64> + '_ {
        self.points.iter().copied()
    }
}

/// Gap merge tolerance for distinct-value counts.
pub const GAP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct GapPartition {
    pub n: u64,
    pub points: Vec<f64>,
    pub gaps: Vec<f64>,
    pub distinct_gap_values: Vec<f64>,
    pub gap_sum: f64,
}

/// Points `{x₀ + n·α⁻¹}`, `n = 1..N`, in circular order, and their gaps.
pub fn three_distance_partition(rot: &Rotation, n: u64) -> Result<GapPartition> {
    if n == 0 {
        return Err(Error::InvalidInput("N must be at least 1".into()));
    }
    let mut pts: Vec<u64> = (1..=n).map(|k| rot.point(k)).collect();
    pts.sort_unstable();
    let mut gaps_fixed: Vec<u128> = pts.windows(2).map(|w| (w[1] - w[0]) as u128).collect();
    gaps_fixed.push(ONE_TURN - (pts[pts.len() - 1] - pts[0]) as u128);
    let total: u128 = gaps_fixed.iter().sum();
    let mut tracker = GapTracker::new();
    for &g in &gaps_fixed {
        tracker.add_gap(g);
    }
    Ok(GapPartition {
        n,
        points: pts.iter().map(|&p| fixed_to_f64(p as u128)).collect(),
        gaps: gaps_fixed.iter().map(|&g| fixed_to_f64(g)).collect(),
        distinct_gap_values: tracker.distinct(GAP_TOLERANCE),
        gap_sum: fixed_to_f64(total),
    })
}

/// Whether `N·maxgap ≤ 3·N/(N+1)`, i.e. max gap `≤ 3/(N+1)`, exactly.
fn ubiquitous(max_gap: u128, n: u64) -> bool {
    max_gap * (n as u128 + 1) <= 3 * ONE_TURN
}

/// All `N ≤ n_max` for which the points `{n·α⁻¹}`, `n ≤ N`, have maximal
/// gap at most `3/(N+1)`.
pub fn ubiquity_sequence(step: TwoFloat, n_max: u64) -> Result<Vec<u64>> {
    if n_max == 0 {
        return Err(Error::InvalidInput("Nmax must be at least 1".into()));
    }
    let rot = Rotation::new(step, TwoFloat::from(0.0));
    let mut tracker = GapTracker::new();
    let mut out = Vec::new();
    for n in 1..=n_max {
        tracker.insert(rot.point(n));
        if ubiquitous(tracker.max_gap(), n) {
            out.push(n);
        }
    }
    if out.is_empty() {
        return Err(Error::EmptySequence(n_max));
    }
    Ok(out)
}

/// Whether open arcs of radius `num/den` around `points` cover the circle;
/// exact in `2⁻⁶⁴` units.
pub fn arcs_cover(points: &[u64], num: u128, den: u128) -> bool {
    if points.is_empty() {
        return false;
    }
    let mut pts = points.to_vec();
    pts.sort_unstable();
    // Sweep: every point of the circle lies in some arc iff no gap between
    // consecutive centres reaches twice the radius.
    let mut covered_to = pts[0] as u128;
    let first = pts[0] as u128;
    for &p in &pts[1..] {
        let p = p as u128;
        if (p - covered_to) * den >= 2 * num * ONE_TURN {
            return false;
        }
        covered_to = p;
    }
    (first + ONE_TURN - covered_to) * den < 2 * num * ONE_TURN
}

/// The exact covering check for `N_r` with radius `3/(N_r+1)`.
pub fn ubiquity_covers(step: TwoFloat, n_r: u64) -> bool {
    let rot = Rotation::new(step, TwoFloat::from(0.0));
    let pts: Vec<u64> = (1..=n_r).map(|k| rot.point(k)).collect();
    arcs_cover(&pts, 3, n_r as u128 + 1)
}

/// The skeleton line brought to slope `α > 1` by swapping or reflecting axes.
#[derive(Debug, Clone)]
pub struct OrientedLine {
    pub f: Expr,
    pub form: LinearForm,
    pub alpha: Alpha,
    pub swapped: bool,
    pub reflected: bool,
    pub width_exponent: f64,
}

pub fn orient_line(f: &Expr, line: usize) -> Result<OrientedLine> {
    let skel = extract_skeleton(f)?;
    let l = skel.lines.get(line).ok_or_else(|| Error::InvalidInput(format!("no skeleton line with index {line}")))?;
    if l.slope.is_rational() {
        return Err(Error::InvalidInput(format!("skeleton line {line} has rational slope")));
    }
    if !l.significant {
        return Err(Error::NotSignificant(l.width_exponent));
    }
    let slope = |form: &LinearForm| -> (BigRational, u32) {
        let (c, m) = form.a().ratio_surd(form.b()).expect("irrational line is not vertical");
        (-c, m)
    };
    let (mut g, mut form) = (f.clone(), l.form.clone());
    let (mut swapped, mut reflected) = (false, false);
    let (c, m) = slope(&form);
    if c.abs() * c.abs() * BigRational::from_integer(BigInt::from(m)) < BigRational::one() {
        g = g.swap_axes();
        form = form.swapped();
        swapped = true;
    }
    if slope(&form).0.is_negative() {
        g = g.reflect_x1();
        form = form.reflected_x1();
        reflected = true;
    }
    let (c, m) = slope(&form);
    let alpha = Alpha::Surd(QuadraticSurd::scaled_sqrt(&c, m)?);
    Ok(OrientedLine { f: g, form, alpha, swapped, reflected, width_exponent: l.width_exponent })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct IntervalRecord {
    pub n: u64,
    pub x_n: f64,
    pub r_n: f64,
    pub sigma_n: f64,
    /// Perpendicular extents of the ε-neighbourhood at `r_n`.
    pub w_plus: f64,
    pub w_minus: f64,
    /// Extents of `I_n` to the left and right of `x_n` along `H`.
    pub left: f64,
    pub right: f64,
}

impl IntervalRecord {
    pub fn len_i(&self) -> f64 {
        (self.left + self.right).min(1.0)
    }

    pub fn len_itilde(&self) -> f64 {
        (2.0 * self.sigma_n).min(1.0)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IntervalSystem {
    pub alpha: f64,
    pub theta: f64,
    pub y0: f64,
    pub x0: f64,
    pub epsilon: f64,
    pub k: f64,
    pub swapped: bool,
    pub reflected: bool,
    #[serde(skip)]
    pub records: Vec<IntervalRecord>,
}

/// First crossing of `g = ε` on `t > 0`, bracketed outward from `guess`.
fn crossing(g: impl Fn(f64) -> f64, eps: f64, guess: f64, cap: f64) -> f64 {
    if g(0.0) >= eps {
        return 0.0;
    }
    let (mut lo, mut hi);
    let mut t = guess;
    if g(t) < eps {
        lo = t;
        loop {
            t *= 2.0;
            if t > cap {
                return cap;
            }
            if g(t) >= eps {
                hi = t;
                break;
            }
            lo = t;
        }
    } else {
        hi = t;
        loop {
            t *= 0.5;
            if t < 1e-300 {
                return 0.0;
            }
            if g(t) < eps {
                lo = t;
                break;
            }
            hi = t;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

fn frac(x: TwoFloat) -> f64 {
    let fl = x.hi().floor();
    let v = (x - fl).hi();
    if v >= 1.0 {
        v - 1.0
    } else if v < 0.0 {
        v + 1.0
    } else {
        v
    }
}

/// Builds `I_n` and `Ĩ_n` for `n = 1..=n_max` on `H = {y = y₀}`.
pub fn interval_system(f: &Expr, line: usize, epsilon: f64, y0: f64, n_max: u64) -> Result<IntervalSystem> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidInput("ε must be positive".into()));
    }
    if !(0.0..1.0).contains(&y0) {
        return Err(Error::InvalidInput("y0 must lie in [0, 1)".into()));
    }
    let ol = orient_line(f, line)?;
    let alpha = ol.alpha.to_twofloat();
    let inv = TwoFloat::from(1.0) / alpha;
    let a = alpha.hi();
    let theta = a.atan();
    let cosec = (1.0 + a * a).sqrt() / a;
    let x0 = TwoFloat::from(y0) * inv;
    let dir = Vec2::new(1.0, a).unit();
    let frame = LineFrame::new(&ol.f, &ol.form, dir);
    let (d1, n1) = (frame.direction.x1, frame.normal.x1);
    let records: Vec<IntervalRecord> = (1..=n_max)
        .into_par_iter()
        .map(|n| {
            let r = (y0 + n as f64) * cosec;
            let cap = 1e8 * r.max(1.0);
            let w_plus = crossing(|t| frame.eval(r, t), epsilon, epsilon, cap);
            let w_minus = crossing(|t| frame.eval(r, -t), epsilon, epsilon, cap);
            let right = crossing(|h| frame.eval(r + h * d1, h * n1), epsilon, epsilon, cap);
            let left = crossing(|h| frame.eval(r - h * d1, -h * n1), epsilon, epsilon, cap);
            IntervalRecord { n, x_n: frac(x0 + inv * n as f64), r_n: r, sigma_n: 0.0, w_plus, w_minus, left, right }
        })
        .collect();
    let mut k = 0.5;
    let fits = |k: f64| records.iter().all(|r| k * r.w_plus.min(r.w_minus) <= r.left.min(r.right));
    while !fits(k) {
        k *= 0.5;
        if k < 1e-18 {
            return Err(Error::NonConvergent("no K keeps every Ĩ_n inside I_n".into()));
        }
    }
    let records = records
        .into_iter()
        .map(|mut r| {
            r.sigma_n = k * r.w_plus.min(r.w_minus);
            r
        })
        .collect();
    Ok(IntervalSystem {
        alpha: a,
        theta,
        y0,
        x0: x0.hi(),
        epsilon,
        k,
        swapped: ol.swapped,
        reflected: ol.reflected,
        records,
    })
}

impl IntervalSystem {
    /// `Σ_{n≤N} |Ĩ_n|` at each stage.
    pub fn tilde_partial_sums(&self, stages: &[u64]) -> Vec<(u64, f64)> {
        let mut prefix = Vec::with_capacity(self.records.len() + 1);
        let mut s = TwoFloat::from(0.0);
        prefix.push(0.0);
        for r in &self.records {
            s += r.len_itilde();
            prefix.push(s.hi());
        }
        stages.iter().map(|&n| (n, prefix[(n as usize).min(self.records.len())])).collect()
    }

    /// `3/(N_r+1) + max(w⁺, w⁻)` at `N_r`.
    pub fn generalized_lambda(&self, n_r: u64) -> Option<f64> {
        let r = self.records.get(n_r.checked_sub(1)? as usize)?;
        Some(3.0 / (n_r as f64 + 1.0) + r.w_plus.max(r.w_minus))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoverageRow {
    #[serde(rename = "N")]
    pub n: u64,
    pub fraction_hit_once: f64,
    pub fraction_hit_k: f64,
    pub stderr: f64,
}

/// Fraction of uniformly sampled `x ∈ H` lying in at least one, and in at
/// least `k`, of the `Ĩ_n` with `n ≤ N`, for each `N` in `stages`.
pub fn coverage_from_system(
    sys: &IntervalSystem,
    stages: &[u64],
    k: u32,
    samples: u64,
    seed: u64,
) -> Result<Vec<CoverageRow>> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    if let Some(&n) = stages.iter().find(|&&n| n > sys.records.len() as u64) {
        return Err(Error::InvalidInput(format!("stage {n} exceeds the {} built intervals", sys.records.len())));
    }
    let nb = samples.div_ceil(BATCH);
    let mut xs: Vec<f64> = (0..nb)
        .into_par_iter()
        .flat_map_iter(|b| {
            let mut rng = batch_rng(seed, b);
            let len = BATCH.min(samples - b * BATCH);
            (0..len).map(move |_| rng.random::<f64>())
        })
        .collect();
    xs.sort_by(f64::total_cmp);
    // First and k-th hitting index per sample.
    let mut count = vec![0u32; xs.len()];
    let mut first = vec![u64::MAX; xs.len()];
    let mut kth = vec![u64::MAX; xs.len()];
    let max_stage = stages.iter().copied().max().unwrap_or(0) as usize;
    let mut mark = |lo: f64, hi: f64, n: u64| {
        let a = xs.partition_point(|&x| x <= lo);
        let b = xs.partition_point(|&x| x < hi);
        for i in a..b {
            count[i] += 1;
            if count[i] == 1 {
                first[i] = n;
            }
            if count[i] == k {
                kth[i] = n;
            }
        }
    };
    for r in &sys.records[..max_stage] {
        let s = r.sigma_n.min(0.5);
        if s <= 0.0 {
            continue;
        }
        let (lo, hi) = (r.x_n - s, r.x_n + s);
        if lo < 0.0 {
            mark(lo + 1.0, 1.0 + f64::EPSILON, r.n);
            mark(-1.0, hi, r.n);
        } else if hi > 1.0 {
            mark(lo, 2.0, r.n);
            mark(-1.0, hi - 1.0, r.n);
        } else {
            mark(lo, hi, r.n);
        }
    }
    let total = samples.max(1) as f64;
    Ok(stages
        .iter()
        .map(|&n| {
            let once = first.iter().filter(|&&f| f <= n).count() as f64 / total;
            let many = kth.iter().filter(|&&f| f <= n).count() as f64 / total;
            CoverageRow {
                n,
                fraction_hit_once: once,
                fraction_hit_k: many,
                stderr: (once * (1.0 - once) / total).sqrt(),
            }
        })
        .collect())
}

#[allow(clippy::too_many_arguments)]
pub fn coverage_experiment(
    f: &Expr,
    line: usize,
    epsilon: f64,
    y0: f64,
    stages: &[u64],
    k: u32,
    samples: u64,
    seed: u64,
) -> Result<(IntervalSystem, Vec<CoverageRow>)> {
    let n_max = stages.iter().copied().max().unwrap_or(0);
    let sys = interval_system(f, line, epsilon, y0, n_max)?;
    let rows = coverage_from_system(&sys, stages, k, samples, seed)?;
    Ok((sys, rows))
}

/// Index of the first significant irrational skeleton line.
pub fn default_irrational_line(f: &Expr) -> Result<usize> {
    let skel = extract_skeleton(f)?;
    skel.lines
        .iter()
        .position(|l| !l.slope.is_rational() && l.significant)
        .or_else(|| skel.lines.iter().position(|l| !l.slope.is_rational()))
        .ok_or_else(|| Error::InvalidInput("F has no irrational skeleton line".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_dsl;
    use num_traits::ToPrimitive;

    fn dens(cf: &ContinuedFraction) -> Vec<i64> {
        cf.convergents.iter().map(|(_, q)| q.to_i64().unwrap()).collect()
    }

    #[test]
    fn sqrt2_expansion() {
        let cf = continued_fraction(&Alpha::parse("sqrt2").unwrap(), 5).unwrap();
        let a: Vec<i64> = cf.partial_quotients.iter().map(|a| a.to_i64().unwrap()).collect();
        assert_eq!(a, vec![1, 2, 2, 2, 2]);
        assert_eq!(dens(&cf), vec![1, 2, 5, 12, 29]);
    }

    #[test]
    fn golden_gives_fibonacci() {
        let cf = continued_fraction(&Alpha::parse("(1+sqrt5)/2").unwrap(), 12).unwrap();
        assert!(cf.partial_quotients.iter().all(|a| a.is_one()));
        assert_eq!(dens(&cf), vec![1, 1, 2, 3, 5, 8, 13, 21, 34, 55, 89, 144]);
    }

    #[test]
    fn rational_terminates() {
        let cf = continued_fraction(&Alpha::parse("3/7").unwrap(), 10).unwrap();
        let a: Vec<i64> = cf.partial_quotients.iter().map(|a| a.to_i64().unwrap()).collect();
        assert_eq!(a, vec![0, 2, 3]);
        assert!(cf.terminated);
    }

    #[test]
    fn surd_forms() {
        let s = Alpha::parse("(3-sqrt7)/2").unwrap();
        assert!((s.to_f64() - (3.0 - 7f64.sqrt()) / 2.0).abs() < 1e-15);
        let cf = continued_fraction(&Alpha::parse("-sqrt3").unwrap(), 4).unwrap();
        let a: Vec<i64> = cf.partial_quotients.iter().map(|a| a.to_i64().unwrap()).collect();
        // −√3 = −2 + (2 − √3) = [−2; 3, 1, 2, …]
        assert_eq!(a, vec![-2, 3, 1, 2]);
        let r = Alpha::parse("sqrt2").unwrap().recip().unwrap();
        assert!((r.to_f64() - 0.5f64.sqrt()).abs() < 1e-16);
    }

    #[test]
    fn decimal_precision_budget() {
        let a = Alpha::parse("1.41421356237309504880").unwrap();
        let cf = continued_fraction(&a, 20).unwrap();
        assert!(cf.partial_quotients[1..].iter().all(|q| q == &BigInt::from(2)));
        assert!(matches!(continued_fraction(&a, 60), Err(Error::PrecisionExhausted { .. })));
        // convergents approximate α to within 1/(q_k q_{k+1})
        let exact = 2f64.sqrt();
        for w in cf.convergents.windows(2) {
            let (p, q) = (&w[0].0, &w[0].1);
            let err = (exact - p.to_f64().unwrap() / q.to_f64().unwrap()).abs();
            assert!(err < 1.0 / (q.to_f64().unwrap() * w[1].1.to_f64().unwrap()));
        }
    }

    #[test]
    fn golden_three_points() {
        let inv = Alpha::parse("(-1+sqrt5)/2").unwrap().to_twofloat();
        let g = three_distance_partition(&Rotation::new(inv, TwoFloat::from(0.0)), 3).unwrap();
        let want = [0.2360679775, 0.6180339887, 0.8541019662];
        for (p, w) in g.points.iter().zip(want) {
            assert!((p - w).abs() < 1e-9);
        }
        assert!((g.gaps[0] - 0.3819660113).abs() < 1e-9);
        assert!((g.gaps[1] - 0.2360679775).abs() < 1e-9);
        assert!((g.gaps[2] - 0.3819660113).abs() < 1e-9);
        assert_eq!(g.distinct_gap_values.len(), 2);
        assert_eq!(g.gap_sum, 1.0);
    }

    #[test]
    fn single_point() {
        let g = three_distance_partition(&Rotation::from_f64(0.3, 0.1), 1).unwrap();
        assert_eq!(g.gaps, vec![1.0]);
    }

    #[test]
    fn tracker_matches_partition() {
        let rot = Rotation::new(TwoFloat::from(2f64.sqrt() - 1.0), TwoFloat::from(0.0));
        let mut t = GapTracker::new();
        for n in 1..=10_000u64 {
            t.insert(rot.point(n));
            assert!(t.distinct(GAP_TOLERANCE).len() <= 3, "N = {n}");
            assert_eq!(t.total(), ONE_TURN);
        }
        let g = three_distance_partition(&rot, 10_000).unwrap();
        assert_eq!(g.distinct_gap_values, t.distinct(GAP_TOLERANCE));
    }

    #[test]
    fn golden_ubiquity() {
        let inv = Alpha::parse("(-1+sqrt5)/2").unwrap().to_twofloat();
        let seq = ubiquity_sequence(inv, 1000).unwrap();
        assert!(seq.windows(2).all(|w| w[0] < w[1]));
        for fib in [13u64, 21, 34, 55, 89, 144, 233, 377, 610, 987] {
            assert!(seq.iter().any(|&n| n.abs_diff(fib) <= 1), "near {fib}");
        }
        for &n in &seq {
            assert!(ubiquity_covers(inv, n));
        }
    }

    #[test]
    fn arcs_cover_edge() {
        // two centres half a turn apart with radius exactly 1/4 leave gaps
        assert!(!arcs_cover(&[0, 1 << 63], 1, 4));
        assert!(arcs_cover(&[0, 1 << 63], 1, 3));
    }

    #[test]
    fn interval_geometry() {
        let f = parse_dsl("gm(abs(-sqrt2, 1), abs(1, 0))").unwrap();
        let sys = interval_system(&f, 0, 0.1, 0.3, 2000).unwrap();
        let cosec = (3.0f64).sqrt() / 2f64.sqrt();
        for r in &sys.records {
            assert!((r.r_n - (0.3 + r.n as f64) * cosec).abs() <= 1e-10 * r.r_n);
            assert!(r.sigma_n <= r.left.min(r.right));
            let ratio = r.len_itilde() / r.len_i();
            assert!(ratio >= sys.k / 4.0 && ratio <= 1.0);
        }
        // F² = h·(y₀+n) along H, so I_n has half-length ε²/(y₀+n).
        let r = &sys.records[999];
        assert!((r.right / (0.01 / 1000.3) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn symmetric_widths() {
        let f = parse_dsl("gm(abs(-sqrt2, 1), abs(1, sqrt2))").unwrap();
        let sys = interval_system(&f, 0, 0.1, 0.5, 500).unwrap();
        for r in &sys.records {
            assert!((r.w_plus / r.w_minus - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn coverage_is_monotone() {
        let f = Expr::irrational_cusp();
        let line = default_irrational_line(&f).unwrap();
        let (_, rows) = coverage_experiment(&f, line, 0.2, 0.3, &[0, 10, 100, 1000], 3, 5000, 7).unwrap();
        assert_eq!(rows[0].fraction_hit_once, 0.0);
        assert!(rows.windows(2).all(|w| w[0].fraction_hit_once <= w[1].fraction_hit_once));
        assert!(rows.iter().all(|r| r.fraction_hit_k <= r.fraction_hit_once));
    }

    #[test]
    fn rational_line_rejected() {
        assert!(interval_system(&Expr::multiplicative(), 0, 0.1, 0.0, 10).is_err());
    }
}
