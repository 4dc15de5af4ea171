//! Densities of periodized sublevel sets and measures of resonant
//! neighbourhoods.

use std::f64::consts::PI;

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Expr, Vec2};
use crate::lattice::{Restriction, SearchMode, SearchPlan};
use crate::mc::{self, Estimate};
use crate::quadrature;
use crate::skeleton::{fundamental_rectangle, zero_lines, FundamentalRectangle, HalfLine};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DensityMethod {
    Analytic,
    Quadrature,
    #[serde(rename = "montecarlo")]
    MonteCarlo,
    #[default]
    Auto,
}

impl DensityMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            DensityMethod::Analytic => "analytic",
            DensityMethod::Quadrature => "quadrature",
            DensityMethod::MonteCarlo => "montecarlo",
            DensityMethod::Auto => "auto",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityResult {
    pub epsilon: f64,
    pub value: f64,
    pub method: DensityMethod,
    pub stderr: f64,
}

/// Closed forms keyed by expression shape.
pub fn analytic_density(f: &Expr, epsilon: f64) -> Option<f64> {
    if !(epsilon > 0.0) {
        return Some(0.0);
    }
    match f {
        Expr::Scale(c, g) => analytic_density(g, epsilon / c.value()),
        Expr::Max(c) => match c.as_slice() {
            [Expr::Abs(a), Expr::Abs(b)] if !a.form().same_kernel(b.form()) => {
                let (a1, a2) = a.form().coefficients();
                let (b1, b2) = b.form().coefficients();
                Some(4.0 * epsilon * epsilon / (a1 * b2 - a2 * b1).abs())
            }
            _ => None,
        },
        Expr::GeoMean(c) => match c.as_slice() {
            [Expr::Abs(a), Expr::Abs(b)] => {
                let (a1, a2) = a.form().coefficients();
                let (b1, b2) = b.form().coefficients();
                let ab = if a2 == 0.0 && b1 == 0.0 {
                    a1 * b2
                } else if a1 == 0.0 && b2 == 0.0 {
                    a2 * b1
                } else {
                    return None;
                };
                let c = epsilon * epsilon / ab.abs();
                Some(if c >= 0.25 { 1.0 } else { 4.0 * (c + c * (1.0 / (4.0 * c)).ln()) })
            }
            _ => None,
        },
        _ => None,
    }
}

/// Evaluates `D_F(ε)` for one distance function.
#[derive(Debug, Clone)]
pub struct DensityOracle {
    plan: SearchPlan,
    atoms: Vec<(f64, f64)>,
    irregular_max: bool,
    h_fold: f64,
    /// Absolute tolerance for the quadrature path.
    pub tolerance: f64,
}

fn has_irregular_max(e: &Expr) -> bool {
    match e {
        Expr::Abs(_) => false,
        Expr::Max(c) => c.iter().any(|x| !matches!(x, Expr::Abs(_)) || has_irregular_max(x)),
        Expr::Min(c) | Expr::GeoMean(c) => c.iter().any(has_irregular_max),
        Expr::Scale(_, c) => has_irregular_max(c),
    }
}

impl DensityOracle {
    pub fn new(f: &Expr) -> Result<Self> {
        let plan = SearchPlan::new(f)?;
        let atoms = f.atoms().iter().map(|a| a.coefficients()).collect();
        let h_fold = plan
            .skeleton()
            .lines
            .iter()
            .filter_map(|l| l.slope.integer_direction())
            .map(|(r, _)| r.abs() as f64)
            .fold(0.0, f64::max);
        Ok(Self { plan, atoms, irregular_max: has_irregular_max(f), h_fold, tolerance: 1e-9 })
    }

    pub fn plan(&self) -> &SearchPlan {
        &self.plan
    }

    pub fn is_bounded(&self) -> bool {
        self.plan.skeleton().is_bounded()
    }

    fn f(&self) -> &Expr {
        self.plan.expr()
    }

    pub fn density(&self, epsilon: f64, method: DensityMethod, samples: u64, seed: u64) -> Result<DensityResult> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidInput(format!("ε must be positive, got {epsilon}")));
        }
        if !self.is_bounded() && !self.plan.skeleton().all_rational() {
            return Err(Error::IrrationalSkeleton);
        }
        let done = |value, method, stderr| DensityResult { epsilon, value, method, stderr };
        match method {
            DensityMethod::Analytic => analytic_density(self.f(), epsilon)
                .map(|v| done(v, DensityMethod::Analytic, 0.0))
                .ok_or_else(|| Error::InvalidInput("no closed form registered for this expression".into())),
            DensityMethod::Quadrature => Ok(done(self.quadrature(epsilon)?, DensityMethod::Quadrature, 0.0)),
            DensityMethod::MonteCarlo => {
                let e = self.monte_carlo(epsilon, samples, seed);
                Ok(done(e.value, DensityMethod::MonteCarlo, e.stderr))
            }
            DensityMethod::Auto => {
                if let Some(v) = analytic_density(self.f(), epsilon) {
                    return Ok(done(v, DensityMethod::Analytic, 0.0));
                }
                match self.quadrature(epsilon) {
                    Ok(v) => Ok(done(v, DensityMethod::Quadrature, 0.0)),
                    Err(Error::NonConvergent(_)) => {
                        let e = self.monte_carlo(epsilon, samples, seed);
                        Ok(done(e.value, DensityMethod::MonteCarlo, e.stderr))
                    }
                    Err(e) => Err(e),
                }
            }
        }
    }

    /// Adaptive quadrature: polar area for bounded bodies, cross-section
    /// lengths over the unit square otherwise.
    pub fn quadrature(&self, epsilon: f64) -> Result<f64> {
        if self.is_bounded() {
            let mut pts = self.critical_angles();
            pts.push(0.0);
            pts.push(PI);
            pts.sort_by(f64::total_cmp);
            pts.dedup();
            let f = self.f();
            let (v, _) = quadrature::integrate(
                |th| {
                    let r = f.eval(Vec2::from_angle(th));
                    1.0 / (r * r)
                },
                &pts,
                self.tolerance,
                20_000,
            )?;
            // ½∫₀^{2π} dθ/F² over the full circle, folded by symmetry.
            Ok(epsilon * epsilon * v)
        } else {
            let pts = [0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875, 1.0];
            let (v, _) = quadrature::integrate(|x1| self.section_length(x1, epsilon), &pts, self.tolerance, 20_000)?;
            Ok(v.clamp(0.0, 1.0))
        }
    }

    fn critical_angles(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut push = |a: f64, b: f64| {
            if a != 0.0 || b != 0.0 {
                // a·cos θ + b·sin θ = 0
                out.push((-a).atan2(b).rem_euclid(PI));
            }
        };
        for (i, &(a, b)) in self.atoms.iter().enumerate() {
            push(a, b);
            for &(c, d) in &self.atoms[i + 1..] {
                push(a - c, b - d);
                push(a + c, b + d);
            }
        }
        out
    }

    /// Measure of `{x2 ∈ [0,1) : min_p F((x1, x2) − p) < ε}`.
    pub fn section_length(&self, x1: f64, epsilon: f64) -> f64 {
        let reach = self.plan.core_radius(epsilon) + self.h_fold + 1.0;
        let lo = (x1 - reach).ceil() as i64;
        let hi = (x1 + reach).floor() as i64;
        let mut pieces: Vec<(f64, f64)> = Vec::new();
        for p1 in lo..=hi {
            let h = x1 - p1 as f64;
            for (a, b) in self.slice(h, epsilon) {
                if b - a >= 1.0 {
                    return 1.0;
                }
                let s = a.rem_euclid(1.0);
                let e = s + (b - a);
                if e <= 1.0 {
                    pieces.push((s, e));
                } else {
                    pieces.push((s, 1.0));
                    pieces.push((0.0, e - 1.0));
                }
            }
        }
        pieces.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut total = 0.0;
        let mut cur: Option<(f64, f64)> = None;
        for (a, b) in pieces {
            match cur {
                Some((ca, cb)) if a <= cb => cur = Some((ca, cb.max(b))),
                Some((ca, cb)) => {
                    total += cb - ca;
                    cur = Some((a, b));
                }
                None => cur = Some((a, b)),
            }
        }
        if let Some((a, b)) = cur {
            total += b - a;
        }
        total.min(1.0)
    }

    /// Intervals of `{y : F(h, y) < ε}`; an interval of length ≥ 1 is
    /// reported as soon as it is detected.
    fn slice(&self, h: f64, epsilon: f64) -> Vec<(f64, f64)> {
        let f = self.f();
        let g = |y: f64| f.eval(Vec2::new(h, y));
        let mut crit = Vec::new();
        let mut root = |a: f64, b: f64| {
            if b != 0.0 {
                crit.push(-a * h / b);
            }
        };
        for (i, &(a, b)) in self.atoms.iter().enumerate() {
            root(a, b);
            for &(c, d) in &self.atoms[i + 1..] {
                root(a - c, b - d);
                root(a + c, b + d);
            }
        }
        crit.retain(|y| y.is_finite());
        crit.sort_by(f64::total_cmp);
        crit.dedup();
        if crit.is_empty() {
            crit.push(0.0);
        }
        if self.irregular_max {
            let mut fine = Vec::new();
            let span = (crit[crit.len() - 1] - crit[0]).max(1e-12);
            let (a, b) = (crit[0] - span, crit[crit.len() - 1] + span);
            for k in 0..=256 {
                fine.push(a + (b - a) * k as f64 / 256.0);
            }
            crit.extend(fine);
            crit.sort_by(f64::total_cmp);
            crit.dedup();
        }

        let mut out: Vec<(f64, f64)> = Vec::new();
        let mut add = |a: f64, b: f64| {
            if b > a {
                match out.last_mut() {
                    Some(last) if a <= last.1 => last.1 = last.1.max(b),
                    _ => out.push((a, b)),
                }
            }
        };
        // Left ray: g is concave and non-negative there, hence monotone.
        let c0 = crit[0];
        if g(c0) < epsilon {
            add(ray_crossing(&g, c0, -1.0, epsilon), c0);
        }
        for w in crit.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (ga, gb) = (g(a), g(b));
            if ga >= epsilon && gb >= epsilon {
                continue;
            }
            let (xm, gm) = golden_max(&g, a, b);
            if gm < epsilon {
                add(a, b);
                continue;
            }
            if ga < epsilon {
                add(a, bisect(&g, a, xm, epsilon));
            }
            if gb < epsilon {
                add(bisect(&g, b, xm, epsilon), b);
            }
        }
        let cn = crit[crit.len() - 1];
        if g(cn) < epsilon {
            add(cn, ray_crossing(&g, cn, 1.0, epsilon));
        }
        out
    }

    /// Stratified Monte Carlo over the unit square, or over a box containing
    /// `{F < ε}` for bounded bodies.
    pub fn monte_carlo(&self, epsilon: f64, samples: u64, seed: u64) -> Estimate {
        let f = self.f();
        if self.is_bounded() {
            let r = epsilon / self.plan.core_constant();
            let area = 4.0 * r * r;
            let e = mc::fraction(samples, seed, |rng, i| {
                let p = stratified(rng, i);
                f.eval(Vec2::new(r * (2.0 * p.x1 - 1.0), r * (2.0 * p.x2 - 1.0))) < epsilon
            });
            Estimate { value: e.value * area, stderr: e.stderr * area, ..e }
        } else {
            mc::fraction(samples, seed, |rng, i| {
                let x = stratified(rng, i);
                self.plan.nearest(x, 1, &Restriction::None, epsilon, SearchMode::Fast).is_some()
            })
        }
    }
}

const STRATA: u64 = 64;

/// Uniform point in the unit square, with consecutive indices cycling over a
/// 64 × 64 grid of cells.
pub(crate) fn stratified(rng: &mut impl RngExt, i: u64) -> Vec2 {
    let cell = i % (STRATA * STRATA);
    let (cx, cy) = ((cell % STRATA) as f64, (cell / STRATA) as f64);
    let (u, v): (f64, f64) = (rng.random(), rng.random());
    Vec2::new((cx + u) / STRATA as f64, (cy + v) / STRATA as f64)
}

fn bisect(g: &impl Fn(f64) -> f64, inside: f64, outside: f64, eps: f64) -> f64 {
    let (mut a, mut b) = (inside, outside);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m == a || m == b {
            break;
        }
        if g(m) < eps {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

fn ray_crossing(g: &impl Fn(f64) -> f64, start: f64, dir: f64, eps: f64) -> f64 {
    let mut step = 1e-6 * start.abs().max(1e-3);
    let mut inside = start;
    loop {
        let y = start + dir * step;
        if g(y) >= eps {
            return bisect(g, inside, y, eps);
        }
        if step > 2.0 {
            return y;
        }
        inside = y;
        step *= 2.0;
    }
}

fn golden_max(g: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (a, b);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..80 {
        if (b - a).abs() <= 1e-13 * (a.abs() + b.abs()).max(1e-300) {
            break;
        }
        if gc > gd {
            b = d;
            d = c;
            gd = gc;
            c = b - INV_PHI * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + INV_PHI * (b - a);
            gd = g(d);
        }
    }
    let x = 0.5 * (a + b);
    let gx = g(x);
    [(x, gx), (c, gc), (d, gd)].into_iter().fold((x, gx), |m, v| if v.1 > m.1 { v } else { m })
}

/// Convenience wrapper building a fresh oracle.
pub fn density(f: &Expr, epsilon: f64, method: DensityMethod, samples: u64, seed: u64) -> Result<DensityResult> {
    DensityOracle::new(f)?.density(epsilon, method, samples, seed)
}

/// Parameters of a resonant neighbourhood `B_q(F, ε)` or `B*_q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonantSpec {
    pub q: u64,
    pub epsilon: f64,
    pub restricted: bool,
}

impl ResonantSpec {
    pub fn new(q: u64, epsilon: f64) -> Self {
        Self { q, epsilon, restricted: false }
    }

    pub fn restricted(q: u64, epsilon: f64) -> Self {
        Self { q, epsilon, restricted: true }
    }
}

/// Witness `F(x − p/q) < ε`, with `p` reduced modulo `q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResonantHit {
    pub x: [f64; 2],
    pub q: u64,
    pub p: [i64; 2],
    pub value: f64,
}

/// Membership queries in resonant neighbourhoods of one distance function.
#[derive(Debug, Clone)]
pub struct Resonator {
    plan: SearchPlan,
    rect: Option<FundamentalRectangle>,
}

impl Resonator {
    pub fn new(f: &Expr) -> Result<Self> {
        let plan = SearchPlan::new(f)?;
        let rect = fundamental_rectangle(plan.skeleton()).ok();
        Ok(Self { plan, rect })
    }

    pub fn from_plan(plan: SearchPlan) -> Self {
        let rect = fundamental_rectangle(plan.skeleton()).ok();
        Self { plan, rect }
    }

    pub fn plan(&self) -> &SearchPlan {
        &self.plan
    }

    pub fn plan_mut(&mut self) -> &mut SearchPlan {
        &mut self.plan
    }

    pub fn rectangle(&self) -> Option<FundamentalRectangle> {
        self.rect
    }

    pub fn restriction(&self, spec: &ResonantSpec) -> Result<Restriction> {
        if spec.q == 0 {
            return Err(Error::InvalidInput("q must be positive".into()));
        }
        if !spec.restricted {
            return Ok(Restriction::None);
        }
        let rect = self.rect.ok_or(Error::IrrationalSkeleton)?;
        Ok(Restriction::Coprime { q: spec.q, s_hat: rect.s_hat, r_hat: rect.r_hat })
    }

    /// Minimum of `F(x − p/q)` over admissible `p`, with the minimiser
    /// (not reduced).
    pub fn minimum(&self, x: Vec2, spec: &ResonantSpec, mode: SearchMode) -> Result<Option<((i64, i64), f64)>> {
        let restriction = self.restriction(spec)?;
        let q = spec.q as f64;
        let u = Vec2::new(x.x1 * q, x.x2 * q);
        Ok(self.plan.nearest(u, spec.q, &restriction, f64::INFINITY, mode).map(|(p, v)| (p, v / q)))
    }

    pub fn membership(&self, x: Vec2, spec: &ResonantSpec, mode: SearchMode) -> Result<Option<ResonantHit>> {
        let restriction = self.restriction(spec)?;
        Ok(self.hit(x, spec, &restriction, mode))
    }

    /// Membership with a precomputed restriction.
    #[inline]
    pub fn hit(
        &self,
        x: Vec2,
        spec: &ResonantSpec,
        restriction: &Restriction,
        mode: SearchMode,
    ) -> Option<ResonantHit> {
        let qf = spec.q as f64;
        let u = Vec2::new(x.x1 * qf, x.x2 * qf);
        let (p, v) = self.plan.nearest(u, spec.q, restriction, spec.epsilon * qf, mode)?;
        let value = v / qf;
        (value < spec.epsilon).then(|| {
            let q = spec.q as i64;
            ResonantHit { x: [x.x1, x.x2], q: spec.q, p: [p.0.rem_euclid(q), p.1.rem_euclid(q)], value }
        })
    }

    /// Monte Carlo estimate of `|B_q|` (or `|B*_q|`).
    pub fn measure(&self, spec: &ResonantSpec, samples: u64, seed: u64) -> Result<Estimate> {
        let restriction = self.restriction(spec)?;
        Ok(mc::fraction(samples, seed, |rng, i| {
            let x = stratified(rng, i);
            self.hit(x, spec, &restriction, SearchMode::Fast).is_some()
        }))
    }

    /// Monte Carlo estimate of `|B_q ∩ B_q'|`.
    pub fn overlap(&self, a: &ResonantSpec, b: &ResonantSpec, samples: u64, seed: u64) -> Result<Estimate> {
        let ra = self.restriction(a)?;
        let rb = self.restriction(b)?;
        Ok(mc::fraction(samples, seed, |rng, i| {
            let x = stratified(rng, i);
            self.hit(x, a, &ra, SearchMode::Fast).is_some() && self.hit(x, b, &rb, SearchMode::Fast).is_some()
        }))
    }
}

pub fn resonant_membership(f: &Expr, x: Vec2, spec: &ResonantSpec) -> Result<Option<ResonantHit>> {
    Resonator::new(f)?.membership(x, spec, SearchMode::Auto)
}

pub fn resonant_measure(f: &Expr, spec: &ResonantSpec, samples: u64, seed: u64) -> Result<Estimate> {
    Resonator::new(f)?.measure(spec, samples, seed)
}

pub fn overlap_estimate(f: &Expr, a: &ResonantSpec, b: &ResonantSpec, samples: u64, seed: u64) -> Result<Estimate> {
    Resonator::new(f)?.overlap(a, b, samples, seed)
}

/// One cell of the translated-intersection table.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OverlapCell {
    pub t1: f64,
    pub t2: f64,
    pub value: f64,
    pub stderr: f64,
}

/// `|{F1 < δ1} ∩ ({F2 < δ2} − t1·v − t2·v⊥)|` over a rectangle centred at the
/// origin, with common random numbers across the grid.
pub fn overlap_monotonicity_probe(
    f1: &Expr,
    f2: &Expr,
    delta1: f64,
    delta2: f64,
    line: &HalfLine,
    grid: &[(f64, f64)],
    half_size: (f64, f64),
    samples: u64,
    seed: u64,
) -> Result<Vec<OverlapCell>> {
    let z1 = zero_lines(f1);
    let z2 = zero_lines(f2);
    let single = |z: &[crate::expr::LinearForm]| z.len() == 1;
    if !single(&z1) || !single(&z2) || !z1[0].same_kernel(&z2[0]) {
        return Err(Error::SkeletonMismatch);
    }
    let (a, b) = z1[0].coefficients();
    let v = line.dir().unit();
    if (a * v.x1 + b * v.x2).abs() > 1e-9 * a.hypot(b) {
        return Err(Error::SkeletonMismatch);
    }
    let n = v.perp();
    let (hx, hy) = half_size;
    let area = 4.0 * hx * hy;
    let cells = grid
        .iter()
        .map(|&(t1, t2)| {
            let shift = v.scale(t1).add(n.scale(t2));
            let e = mc::fraction(samples, seed, |rng, i| {
                let p = stratified(rng, i);
                let x = Vec2::new(hx * (2.0 * p.x1 - 1.0), hy * (2.0 * p.x2 - 1.0));
                f1.eval(x) < delta1 && f2.eval(x.add(shift)) < delta2
            });
            OverlapCell { t1, t2, value: e.value * area, stderr: e.stderr * area }
        })
        .collect();
    Ok(cells)
}
