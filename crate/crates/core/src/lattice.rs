//! Nearest lattice translates under a distance function.
//!
//! For `u ∈ R²` the search returns `min_{p ∈ Z²} F(u − p)`, optionally over a
//! congruence-restricted set of `p`. Outside thin cones around the skeleton,
//! `F(y) ≥ c·|y|∞`, so a box around `u` handles the bulk. Inside a cone the
//! sublevel sets have the tabulated cusp widths, and once those widths stop
//! growing every lattice point far out along a rational cusp is dominated by
//! its translate one period closer. That bounds the search to a short tube.
//! Irrational cusps have no such period and are searched up to a fixed window.

use std::f64::consts::PI;

use num_integer::Integer;

use crate::error::{Error, Result};
use crate::expr::{Expr, Vec2};
use crate::skeleton::{extract_skeleton_with, LineFrame, SignificanceOptions, SkeletonReport, Slope};

/// Tabulated cusp of the unit body `{F < 1}`.
#[derive(Debug, Clone)]
struct Cusp {
    dir: Vec2,
    normal: Vec2,
    int_dir: Option<(i64, i64)>,
    /// `(τ, max(w⁺, w⁻))` on a log grid.
    table: Vec<(f64, f64)>,
    t_mono: f64,
}

impl Cusp {
    /// Upper bound on the half-width of `{F < 1}` at every distance `≥ tau`.
    fn width_bound(&self, tau: f64) -> f64 {
        let i = self.table.partition_point(|&(t, _)| t <= tau);
        if i == 0 {
            return f64::INFINITY;
        }
        let from = i - 1;
        if self.table[from].0 < self.t_mono {
            return self.table[from..].iter().map(|e| e.1).fold(0.0, f64::max);
        }
        self.table[from].1
    }

    fn fold_period(&self) -> Option<f64> {
        self.int_dir.map(|(r, s)| ((r * r + s * s) as f64).sqrt())
    }
}

/// Which lattice points are admissible translates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Restriction {
    None,
    /// `gcd(p1·r̂, q) = gcd(p2·ŝ, q) = 1`.
    Coprime {
        q: u64,
        s_hat: u64,
        r_hat: u64,
    },
}

impl Restriction {
    #[inline]
    pub fn allows(&self, p1: i64, p2: i64) -> bool {
        match *self {
            Restriction::None => true,
            Restriction::Coprime { q, s_hat, r_hat } => {
                let q = q as i128;
                let a = (p1 as i128 * r_hat as i128).rem_euclid(q);
                let b = (p2 as i128 * s_hat as i128).rem_euclid(q);
                a.gcd(&q) == 1 && b.gcd(&q) == 1
            }
        }
    }

    fn period(&self) -> i64 {
        match *self {
            Restriction::None => 1,
            Restriction::Coprime { q, .. } => q as i64,
        }
    }

    /// Largest distance from any integer to the nearest admissible residue,
    /// per coordinate; `None` if no residue is admissible.
    fn max_gap(&self) -> Option<i64> {
        let Restriction::Coprime { q, s_hat, r_hat } = *self else {
            return Some(0);
        };
        let q = q as i64;
        let gap = |mult: u64| -> Option<i64> {
            let ok: Vec<i64> =
                (0..q).filter(|&p| ((p as i128 * mult as i128).rem_euclid(q as i128)).gcd(&(q as i128)) == 1).collect();
            if ok.is_empty() {
                return None;
            }
            let mut g = 0;
            for w in ok.windows(2) {
                g = g.max(w[1] - w[0]);
            }
            g = g.max(ok[0] + q - ok[ok.len() - 1]);
            Some(g)
        };
        Some(gap(r_hat)?.max(gap(s_hat)?))
    }
}

/// How to search for the nearest translate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SearchMode {
    /// Exhaustive for small `q`, cusp-aware otherwise.
    #[default]
    Auto,
    Fast,
    Exhaustive,
}

/// Precomputed geometry for repeated nearest-translate queries on one `F`.
#[derive(Debug, Clone)]
pub struct SearchPlan {
    f: Expr,
    skeleton: SkeletonReport,
    cusps: Vec<Cusp>,
    delta: f64,
    c_core: f64,
    half_max: f64,
    t_mono_max: f64,
    /// Window half-size, in units of `1/q`-cells, for irrational cusps.
    pub irrational_window: f64,
    /// `q` up to which `SearchMode::Auto` enumerates exhaustively.
    pub q_exhaustive: u64,
}

impl SearchPlan {
    pub fn new(f: &Expr) -> Result<Self> {
        let opts = SignificanceOptions::default();
        let skeleton = extract_skeleton_with(f, &opts)?;
        let mut cusps = Vec::new();
        for line in &skeleton.lines {
            let d = line.slope.direction();
            let frame = LineFrame::new(f, &line.form, d);
            let mut table = Vec::new();
            for k in -40..=120 {
                let tau = 10f64.powf(k as f64 / 10.0);
                let (wp, wm) = frame.widths(tau, 1.0);
                table.push((tau, wp.max(wm)));
            }
            let mut start = table.len() - 1;
            while start > 0 && table[start - 1].1 >= table[start].1 * (1.0 - 1e-9) {
                start -= 1;
            }
            let t_mono = table[start].0;
            let int_dir = line.slope.integer_direction();
            for sign in [1.0, -1.0] {
                let dir = d.scale(sign);
                cusps.push(Cusp {
                    dir,
                    normal: dir.perp(),
                    int_dir: int_dir.map(|(r, s)| if sign > 0.0 { (r, s) } else { (-r, -s) }),
                    table: table.clone(),
                    t_mono,
                });
            }
        }

        let angles: Vec<f64> = skeleton
            .lines
            .iter()
            .map(|l| {
                let d = l.slope.direction();
                d.x2.atan2(d.x1).rem_euclid(PI)
            })
            .collect();
        let mut delta: f64 = if angles.is_empty() { 0.0 } else { 0.1 };
        for (i, a) in angles.iter().enumerate() {
            for b in &angles[i + 1..] {
                let d = (a - b).abs();
                delta = delta.min(0.5 * d.min(PI - d));
            }
        }

        const SCAN: usize = 20_000;
        let mut c_min = f64::INFINITY;
        let mut half_max: f64 = 0.0;
        for i in 0..SCAN {
            let th = 2.0 * PI * (i as f64 + 0.5) / SCAN as f64;
            let v = Vec2::from_angle(th);
            let inf = v.x1.abs().max(v.x2.abs());
            let fv = f.eval(v);
            half_max = half_max.max(fv / inf * 0.5);
            let in_cone = cusps.iter().any(|c| v.dot(c.dir) >= delta.cos());
            if !in_cone {
                c_min = c_min.min(fv / inf);
            }
        }
        // The scan is a lower envelope for the ∞-norm ratio only up to grid
        // effects; the halving absorbs them.
        let c_core = 0.5 * c_min;
        if !(c_core > 0.0) {
            return Err(Error::DegenerateExpr);
        }
        let t_mono_max = cusps.iter().map(|c| c.t_mono).fold(0.0, f64::max);
        Ok(Self {
            f: f.clone(),
            skeleton,
            cusps,
            delta,
            c_core,
            half_max: half_max * 1.01,
            t_mono_max,
            irrational_window: 1.0,
            q_exhaustive: 64,
        })
    }

    pub fn expr(&self) -> &Expr {
        &self.f
    }

    pub fn skeleton(&self) -> &SkeletonReport {
        &self.skeleton
    }

    fn has_irrational(&self) -> bool {
        self.cusps.iter().any(|c| c.int_dir.is_none())
    }

    /// `c` with `F(y) ≥ c·|y|∞` outside the cusp cones.
    pub fn core_constant(&self) -> f64 {
        self.c_core
    }

    /// Radius of the bulk box needed for a current best value `m`.
    pub fn core_radius(&self, m: f64) -> f64 {
        let mut r = m / self.c_core;
        if !self.cusps.is_empty() {
            r = r.max(m * self.t_mono_max / self.delta.cos());
        }
        r
    }

    fn fold_len(&self, restriction: &Restriction) -> f64 {
        let per = restriction.period() as f64;
        self.cusps.iter().filter_map(Cusp::fold_period).fold(0.0, f64::max) * per
    }

    fn irr_reach(&self, q: u64) -> f64 {
        if self.has_irrational() {
            self.irrational_window * q as f64
        } else {
            0.0
        }
    }

    /// Half-size of the box enumerated by the exhaustive search.
    pub fn exhaustive_reach(&self, q: u64, restriction: &Restriction) -> Option<f64> {
        let gap = restriction.max_gap()? as f64;
        let start = 2.0 * self.half_max * (gap + 1.0);
        let core = self.core_radius(start);
        Some((core + self.fold_len(restriction) + 2.0).max(self.irr_reach(q)).ceil())
    }

    #[inline]
    fn value(&self, u: Vec2, p1: i64, p2: i64) -> f64 {
        self.f.eval(Vec2::new(u.x1 - p1 as f64, u.x2 - p2 as f64))
    }

    /// `argmin_p F(u − p)` over admissible `p`, restricted to values `< bound`.
    pub fn nearest(
        &self,
        u: Vec2,
        q: u64,
        restriction: &Restriction,
        bound: f64,
        mode: SearchMode,
    ) -> Option<((i64, i64), f64)> {
        let mode = match mode {
            SearchMode::Auto if q <= self.q_exhaustive => SearchMode::Exhaustive,
            SearchMode::Auto => SearchMode::Fast,
            m => m,
        };
        match mode {
            SearchMode::Exhaustive => self.nearest_exhaustive(u, q, restriction, bound),
            _ => self.nearest_fast(u, q, restriction, bound),
        }
    }

    pub fn nearest_exhaustive(
        &self,
        u: Vec2,
        q: u64,
        restriction: &Restriction,
        bound: f64,
    ) -> Option<((i64, i64), f64)> {
        let reach = self.exhaustive_reach(q, restriction)?;
        let mut best = Best::new(bound);
        let (a1, b1) = ((u.x1 - reach).ceil() as i64, (u.x1 + reach).floor() as i64);
        let (a2, b2) = ((u.x2 - reach).ceil() as i64, (u.x2 + reach).floor() as i64);
        for p1 in a1..=b1 {
            for p2 in a2..=b2 {
                if restriction.allows(p1, p2) {
                    best.offer(p1, p2, self.value(u, p1, p2));
                }
            }
        }
        best.get()
    }

    pub fn nearest_fast(&self, u: Vec2, q: u64, restriction: &Restriction, bound: f64) -> Option<((i64, i64), f64)> {
        let mut best = Best::new(bound);
        let p0 = (u.x1.round() as i64, u.x2.round() as i64);
        if restriction.allows(p0.0, p0.1) {
            best.offer(p0.0, p0.1, self.value(u, p0.0, p0.1));
        }
        if best.value.is_infinite() {
            // Restricted search with no bound: the nearest admissible point
            // supplies a finite starting value.
            let gap = restriction.max_gap()?;
            let r = gap + 1;
            for p1 in p0.0 - r..=p0.0 + r {
                for p2 in p0.1 - r..=p0.1 + r {
                    if restriction.allows(p1, p2) {
                        best.offer(p1, p2, self.value(u, p1, p2));
                    }
                }
            }
            if best.value.is_infinite() {
                return None;
            }
        }
        let m = best.value;
        let exhaustive = self.exhaustive_reach(q, restriction)?;
        // With an irrational cusp the search domain is the exhaustive box.
        let window = if self.has_irrational() { exhaustive } else { 0.0 };
        let core = self.core_radius(m).min(exhaustive);
        let (a1, b1) = ((u.x1 - core).ceil() as i64, (u.x1 + core).floor() as i64);
        let (a2, b2) = ((u.x2 - core).ceil() as i64, (u.x2 + core).floor() as i64);
        for p1 in a1..=b1 {
            for p2 in a2..=b2 {
                if restriction.allows(p1, p2) {
                    best.offer(p1, p2, self.value(u, p1, p2));
                }
            }
        }
        let t_lo = core * self.delta.cos();
        let fold = restriction.period() as f64;
        for cusp in &self.cusps {
            let w = 2.0 * m * cusp.width_bound(t_lo / m);
            if !w.is_finite() {
                continue;
            }
            let t_hi = match cusp.fold_period() {
                Some(len) => (t_lo + len * fold + 1.0).min(exhaustive * 2f64.sqrt()),
                None => exhaustive * 2f64.sqrt(),
            };
            if t_hi <= t_lo {
                continue;
            }
            self.scan_tube(u, cusp, t_lo, t_hi, w, restriction, window, &mut best);
        }
        best.get()
    }

    /// Lattice points `p` with `p − u = t·dir + o·normal`, `t ∈ [t_lo, t_hi]`,
    /// `|o| ≤ w`.
    #[allow(clippy::too_many_arguments)]
    fn scan_tube(
        &self,
        u: Vec2,
        cusp: &Cusp,
        t_lo: f64,
        t_hi: f64,
        w: f64,
        restriction: &Restriction,
        window: f64,
        best: &mut Best,
    ) {
        let d = cusp.dir;
        let n = cusp.normal;
        // Walk along the dominant axis of the cusp direction.
        let major_x = d.x1.abs() >= d.x2.abs();
        let (dm, dn) = if major_x { (d.x1, d.x2) } else { (d.x2, d.x1) };
        let (um, un) = if major_x { (u.x1, u.x2) } else { (u.x2, u.x1) };
        let (nm, nn) = if major_x { (n.x1, n.x2) } else { (n.x2, n.x1) };
        let m_a = um + (t_lo * dm).min(t_hi * dm) - w * nm.abs();
        let m_b = um + (t_lo * dm).max(t_hi * dm) + w * nm.abs();
        let (lo, hi) = (m_a.ceil() as i64, m_b.floor() as i64);
        // Along a line of constant major coordinate, the minor coordinate is
        // affine in the offset; solve for the band |o| ≤ w.
        for pm in lo..=hi {
            let dmaj = pm as f64 - um;
            // point = (dmaj, y) with y the minor displacement;
            // t = dmaj·dm + y·dn, o = dmaj·nm + y·nn.
            if nn.abs() < 1e-300 {
                continue;
            }
            let y_a = (-w - dmaj * nm) / nn;
            let y_b = (w - dmaj * nm) / nn;
            let (ya, yb) = if y_a <= y_b { (y_a, y_b) } else { (y_b, y_a) };
            let (a, b) = ((un + ya).ceil() as i64, (un + yb).floor() as i64);
            for pn in a..=b {
                let y = pn as f64 - un;
                let t = dmaj * dm + y * dn;
                if t < t_lo - 1.0 || t > t_hi + 1.0 {
                    continue;
                }
                let (p1, p2) = if major_x { (pm, pn) } else { (pn, pm) };
                if window > 0.0 && (p1 as f64 - u.x1).abs().max((p2 as f64 - u.x2).abs()) > window {
                    continue;
                }
                if restriction.allows(p1, p2) {
                    best.offer(p1, p2, self.value(u, p1, p2));
                }
            }
        }
    }
}

/// Running minimum with a deterministic tie-break on `p`.
struct Best {
    value: f64,
    p: Option<(i64, i64)>,
}

impl Best {
    fn new(bound: f64) -> Self {
        Self { value: bound, p: None }
    }

    #[inline]
    fn offer(&mut self, p1: i64, p2: i64, v: f64) {
        let better = match self.p {
            None => v < self.value,
            Some(p) => v < self.value || (v == self.value && (p1, p2) < p),
        };
        if better {
            self.value = v;
            self.p = Some((p1, p2));
        }
    }

    fn get(&self) -> Option<((i64, i64), f64)> {
        self.p.map(|p| (p, self.value))
    }
}

/// Slope data used by callers that need integer directions.
pub fn integer_directions(skel: &SkeletonReport) -> Vec<(i64, i64)> {
    skel.lines
        .iter()
        .filter_map(|l| match l.slope {
            Slope::Rational { s, r } => Some((r, s)),
            _ => None,
        })
        .collect()
}
