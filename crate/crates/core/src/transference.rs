//! Transference between linear-form and simultaneous approximation for the
//! multiplicative, union-jack and height bodies.

use std::collections::BTreeSet;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Signed;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use twofloat::TwoFloat;

use crate::circle::Alpha;
use crate::error::{Error, Result};

/// `x − k` with `k` the nearest integer; half-integers map to `−1/2`.
pub fn nearest_signed_distance(x: f64) -> f64 {
    x - (x + 0.5).floor()
}

fn nsd_wide(v: TwoFloat) -> TwoFloat {
    let k = (v.hi() + 0.5).floor();
    let mut r = v - k;
    if r.hi() >= 0.5 {
        r -= 1.0;
    } else if r.hi() < -0.5 {
        r += 1.0;
    }
    r
}

fn nsd_exact(v: &BigRational) -> BigRational {
    let half = BigRational::new(BigInt::from(1), BigInt::from(2));
    v - (v + half).floor()
}

/// Geometric mean of `max(1, |q_i|)`.
pub fn f_plus(q: &[i64]) -> f64 {
    if q.is_empty() {
        return 1.0;
    }
    let logs: f64 = q.iter().map(|&v| (v.unsigned_abs().max(1) as f64).ln()).sum();
    (logs / q.len() as f64).exp()
}

fn prod_max(q: &[i64]) -> f64 {
    q.iter().map(|&v| v.unsigned_abs().max(1) as f64).product()
}

/// A point of `ℝⁿ` with exact coordinates where available.
#[derive(Debug, Clone)]
pub struct Coords {
    exact: Vec<Alpha>,
    approx: Vec<f64>,
    wide: Vec<TwoFloat>,
}

impl Coords {
    pub fn new(exact: Vec<Alpha>) -> Self {
        let wide: Vec<TwoFloat> = exact.iter().map(|a| a.to_twofloat()).collect();
        let approx = wide.iter().map(|w| w.hi()).collect();
        Self { exact, approx, wide }
    }

    pub fn from_f64(x: &[f64]) -> Self {
        Self::new(
            x.iter()
                .map(|&v| Alpha::Real {
                    value: BigRational::from_float(v).expect("finite coordinate"),
                    radius: BigRational::from_integer(BigInt::from(0)),
                })
                .collect(),
        )
    }

    /// Comma-separated list of values accepted by [`Alpha::parse`].
    pub fn parse(text: &str) -> Result<Self> {
        let parts = text.split(',').map(Alpha::parse).collect::<Result<Vec<_>>>()?;
        if parts.is_empty() {
            return Err(Error::InvalidInput("empty coordinate list".into()));
        }
        Ok(Self::new(parts))
    }

    pub fn dim(&self) -> usize {
        self.approx.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.approx
    }

    pub fn require_irrational(&self) -> Result<()> {
        match self.exact.iter().position(|a| matches!(a, Alpha::Rational(_))) {
            Some(i) => Err(Error::InvalidInput(format!("coordinate {} is rational", i + 1))),
            None => Ok(()),
        }
    }

    fn all_rational(&self) -> Option<Vec<BigRational>> {
        self.exact
            .iter()
            .map(|a| match a {
                Alpha::Rational(r) | Alpha::Real { value: r, .. } => Some(r.clone()),
                Alpha::Surd(_) => None,
            })
            .collect()
    }

    /// `⟨Σ q_i x_i⟩` in double precision.
    pub fn nsd_dot(&self, q: &[i64]) -> f64 {
        let v: f64 = q.iter().zip(&self.approx).map(|(&a, &x)| a as f64 * x).sum();
        nearest_signed_distance(v)
    }

    /// `|⟨Σ q_i x_i⟩| ≤ thr`, rechecked exactly or in double-double when the
    /// double-precision value is within `10⁻¹²` of the threshold.
    pub fn dot_within(&self, q: &[i64], thr: f64) -> bool {
        let v = self.nsd_dot(q).abs();
        if (v - thr).abs() > 1e-12 * thr.max(1e-300) && v != thr {
            return v <= thr;
        }
        self.abs_nsd_cmp(q, thr)
    }

    fn abs_nsd_cmp(&self, q: &[i64], thr: f64) -> bool {
        match self.all_rational() {
            Some(xs) => {
                let s: BigRational = q.iter().zip(&xs).map(|(&a, x)| x * BigInt::from(a)).sum();
                nsd_exact(&s).abs() <= BigRational::from_float(thr).expect("finite threshold")
            }
            None => {
                let mut s = TwoFloat::from(0.0);
                for (&a, &x) in q.iter().zip(&self.wide) {
                    s += x * a as f64;
                }
                nsd_wide(s).hi().abs() <= thr
            }
        }
    }

    /// `|⟨p x_i⟩|` in double-double.
    pub fn nsd_scaled(&self, p: i64, i: usize) -> f64 {
        nsd_wide(self.wide[i] * p as f64).hi().abs()
    }
}

/// Diagonal weights with `∏ ν_i = 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NuVector {
    pub nu: Vec<f64>,
}

impl NuVector {
    pub fn product(&self) -> f64 {
        self.nu.iter().product()
    }

    /// `max ν_i |x_i|`.
    pub fn box_norm(&self, x: &[f64]) -> f64 {
        self.nu.iter().zip(x).map(|(n, v)| n * v.abs()).fold(0.0, f64::max)
    }
}

/// `(∏|x_i|)^{1/n}`.
pub fn geometric_mean_abs(x: &[f64]) -> f64 {
    if x.contains(&0.0) {
        return 0.0;
    }
    (x.iter().map(|v| v.abs().ln()).sum::<f64>() / x.len() as f64).exp()
}

/// A box `max ν_i|x_i| ≤ λ` with `∏ν = 1` containing `x`, or `None` when
/// `(∏|x_i|)^{1/n} > λ`.
pub fn find_nu(x: &[f64], lambda: f64) -> Option<NuVector> {
    let n = x.len();
    if n == 0 || !(lambda > 0.0) || geometric_mean_abs(x) > lambda {
        return None;
    }
    let zeros: Vec<usize> = (0..n).filter(|&i| x[i] == 0.0).collect();
    let mut nu = vec![0.0; n];
    if zeros.is_empty() {
        let mut prod = 1.0;
        for i in 0..n - 1 {
            nu[i] = lambda / x[i].abs();
            prod *= nu[i];
        }
        nu[n - 1] = 1.0 / prod;
    } else {
        let mut log_prod = 0.0;
        for i in (0..n).filter(|i| !zeros.contains(i)) {
            nu[i] = lambda / x[i].abs();
            log_prod += nu[i].ln();
        }
        let shared = (-log_prod / zeros.len() as f64).exp();
        for &i in &zeros {
            nu[i] = shared;
        }
    }
    Some(NuVector { nu })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MatrixKind {
    A,
    Astar,
    Atilde,
    AtildePrime,
    AtildeTilde,
    AtildeTildePrime,
}

impl MatrixKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "A" => MatrixKind::A,
            "Astar" => MatrixKind::Astar,
            "Atilde" => MatrixKind::Atilde,
            "AtildePrime" => MatrixKind::AtildePrime,
            "AtildeTilde" => MatrixKind::AtildeTilde,
            "AtildeTildePrime" => MatrixKind::AtildeTildePrime,
            _ => return Err(Error::InvalidInput(format!("unknown matrix kind `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransferParams {
    pub lambda: f64,
    pub mu: f64,
}

impl TransferParams {
    pub fn new(lambda: f64, mu: f64) -> Result<Self> {
        if !(lambda > 0.0 && mu > 0.0 && lambda.is_finite() && mu.is_finite()) {
            return Err(Error::InvalidInput("λ and μ must be positive".into()));
        }
        Ok(Self { lambda, mu })
    }
}

/// Row-major square matrix acting on row vectors.
#[derive(Debug, Clone, Serialize)]
pub struct MatrixEncoding {
    pub kind: MatrixKind,
    pub entries: Vec<Vec<f64>>,
}

impl MatrixEncoding {
    /// `v·M`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let m = self.entries.len();
        (0..m).map(|j| v.iter().zip(&self.entries).map(|(a, row)| a * row[j]).sum()).collect()
    }

    pub fn sup_norm(&self, v: &[i64]) -> f64 {
        let v: Vec<f64> = v.iter().map(|&a| a as f64).collect();
        self.apply(&v).into_iter().fold(0.0, |m, e| m.max(e.abs()))
    }

    pub fn determinant(&self) -> f64 {
        let mut a = self.entries.clone();
        let m = a.len();
        let mut det = 1.0;
        for c in 0..m {
            let piv = (c..m).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            if a[piv][c] == 0.0 {
                return 0.0;
            }
            if piv != c {
                a.swap(piv, c);
                det = -det;
            }
            det *= a[c][c];
            for r in c + 1..m {
                let f = a[r][c] / a[c][c];
                let (top, rest) = a.split_at_mut(r);
                for (dst, src) in rest[0][c..].iter_mut().zip(&top[c][c..]) {
                    *dst -= f * src;
                }
            }
        }
        det
    }
}

/// The encoding matrices, with entries as displayed for each family. The
/// union-jack kinds are planar and take `x = (x, y)`.
pub fn build_matrices(kind: MatrixKind, x: &[f64], params: &TransferParams, nu: &NuVector) -> Result<MatrixEncoding> {
    let n = x.len();
    if nu.nu.len() != n {
        return Err(Error::DimensionMismatch(format!("x has {n} coordinates but ν has {}", nu.nu.len())));
    }
    let (l, m, v) = (params.lambda, params.mu, &nu.nu);
    let planar = || -> Result<()> {
        if n != 2 {
            return Err(Error::DimensionMismatch(format!("{kind:?} is planar but x has {n} coordinates")));
        }
        Ok(())
    };
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut e = vec![vec![0.0; n + 1]; n + 1];
    match kind {
        MatrixKind::A | MatrixKind::Atilde => {
            if kind == MatrixKind::Atilde {
                planar()?;
            }
            for i in 0..n {
                e[i][0] = x[i] / l;
                e[i][i + 1] = v[i] / m;
            }
            e[n][0] = 1.0 / l;
        }
        MatrixKind::Astar | MatrixKind::AtildeTilde => {
            if kind == MatrixKind::AtildeTilde {
                planar()?;
            }
            e[0][0] = l;
            for i in 0..n {
                e[0][i + 1] = -m * x[i] / v[i];
                e[i + 1][i + 1] = m / v[i];
            }
        }
        MatrixKind::AtildePrime => {
            planar()?;
            let (xx, yy) = (x[0], x[1]);
            e[0] = vec![xx / l, h * v[0] / m, -h * v[1] / m];
            e[1] = vec![-yy / l, h * v[0] / m, h * v[1] / m];
            e[2] = vec![1.0 / l, 0.0, 0.0];
        }
        MatrixKind::AtildeTildePrime => {
            planar()?;
            let (xx, yy) = (x[0], x[1]);
            e[0] = vec![l, -h * m / v[0] * (xx - yy), h * m / v[1] * (xx + yy)];
            e[1] = vec![0.0, h * m / v[0], h * m / v[1]];
            e[2] = vec![0.0, -h * m / v[0], h * m / v[1]];
        }
    }
    Ok(MatrixEncoding { kind, entries: e })
}

/// `(ãA)·(b̃A*)` together with `a₁b₂ + … + a_n b_{n+1} + a_{n+1} b₁`.
pub fn phi_check(a_mat: &MatrixEncoding, b_mat: &MatrixEncoding, a: &[i64], b: &[i64]) -> Result<(f64, i64)> {
    let m = a_mat.entries.len();
    if b_mat.entries.len() != m || a.len() != m || b.len() != m {
        return Err(Error::DimensionMismatch("Φ needs matching sizes".into()));
    }
    let fa: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let fb: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    let lhs: f64 = a_mat.apply(&fa).iter().zip(b_mat.apply(&fb)).map(|(u, w)| u * w).sum();
    let target = (0..m - 1).map(|i| a[i] * b[i + 1]).sum::<i64>() + a[m - 1] * b[0];
    Ok((lhs, target))
}

/// `q̃ = (q, p)` with `p` making the first coordinate of `q̃A` equal to
/// `⟨q·x⟩/λ`.
pub fn encode_q(q: &[i64], x: &Coords) -> Vec<i64> {
    let v: f64 = q.iter().zip(x.values()).map(|(&a, &b)| a as f64 * b).sum();
    let p = -((v + 0.5).floor() as i64);
    let mut out = q.to_vec();
    out.push(p);
    out
}

/// Calls `f` on every nonzero `q` with `|q_i| ≤ qbound` and
/// `∏ max(|q_i|, 1) ≤ limit`.
fn hyperbolic_points(n: usize, limit: f64, qbound: i64, f: &(dyn Fn(&[i64]) + Sync)) {
    fn rec(q: &mut Vec<i64>, n: usize, rest: f64, qbound: i64, f: &(dyn Fn(&[i64]) + Sync)) {
        if q.len() == n {
            if q.iter().any(|&v| v != 0) {
                f(q);
            }
            return;
        }
        let m = (rest.floor() as i64).min(qbound);
        for v in -m..=m {
            q.push(v);
            rec(q, n, rest / v.unsigned_abs().max(1) as f64, qbound, f);
            q.pop();
        }
    }
    if n == 0 || limit < 1.0 {
        return;
    }
    let m = (limit.floor() as i64).min(qbound);
    (-m..=m).into_par_iter().for_each(|v| {
        let mut q = vec![v];
        rec(&mut q, n, limit / v.unsigned_abs().max(1) as f64, qbound, f);
    });
}

fn collect_points<P>(n: usize, limit: f64, qbound: i64, keep: P) -> Vec<Vec<i64>>
where
    P: Fn(&[i64]) -> bool + Sync,
{
    let out = std::sync::Mutex::new(Vec::new());
    hyperbolic_points(n, limit, qbound, &|q: &[i64]| {
        if keep(q) {
            out.lock().unwrap().push(q.to_vec());
        }
    });
    let mut v = out.into_inner().unwrap();
    v.sort();
    v
}

/// All `q ≠ 0` with `|q_i| ≤ qbound`, `F₊(q) ≤ μ` and `|⟨q·x⟩| ≤ λ`.
pub fn solve_system_i(x: &Coords, params: &TransferParams, qbound: i64) -> Vec<Vec<i64>> {
    let n = x.dim();
    let limit = params.mu.powi(n as i32) * (1.0 + 1e-12);
    collect_points(n, limit, qbound, |q| f_plus(q) <= params.mu * (1.0 + 1e-12) && x.dot_within(q, params.lambda))
}

/// `(∏|⟨p x_i⟩|)^{1/n}`.
pub fn gm_at(x: &Coords, p: i64) -> f64 {
    let v: Vec<f64> = (0..x.dim()).map(|i| x.nsd_scaled(p, i)).collect();
    geometric_mean_abs(&v)
}

/// Upper end `n μ λ^{(1−n)/n}` of the `p` range.
pub fn p_range(n: usize, params: &TransferParams) -> f64 {
    let n = n as f64;
    n * params.mu * params.lambda.powf((1.0 - n) / n)
}

/// Value bound for system (ii) obtained from the determinant of `A*`:
/// `n λ^{1/n}`.
pub fn gm_bound(n: usize, lambda: f64) -> f64 {
    n as f64 * lambda.powf(1.0 / n as f64)
}

/// Value bound for system (ii) as stated alongside the `p` range: `n λ`.
pub fn gm_bound_stated(n: usize, lambda: f64) -> f64 {
    n as f64 * lambda
}

/// First `p` in `1..=n μ λ^{(1−n)/n}` with `(∏|⟨p x_i⟩|)^{1/n} ≤ bound`.
pub fn solve_system_ii_with(x: &Coords, params: &TransferParams, bound: f64) -> Option<i64> {
    let top = p_range(x.dim(), params).floor();
    if top < 1.0 {
        return None;
    }
    (1..=top as i64).find(|&p| gm_at(x, p) <= bound)
}

pub fn solve_system_ii(x: &Coords, params: &TransferParams) -> Option<i64> {
    solve_system_ii_with(x, params, gm_bound(x.dim(), params.lambda))
}

#[derive(Debug, Clone, Serialize)]
pub struct Prop5Report {
    pub x: Vec<f64>,
    pub params: TransferParams,
    pub qbound: i64,
    pub system_i_solutions: usize,
    pub q_witness: Option<Vec<i64>>,
    pub p_witness: Option<i64>,
    pub p_witness_gm: Option<f64>,
    /// Whether some `p` in range meets the stated value bound `nλ`.
    pub stated_bound_holds: Option<bool>,
    /// Constant `K` of the reverse transfer: `|⟨q·x⟩| ≤ Kλ`, `(∏|q_i|)^{1/n} ≤ Kμ`.
    pub reverse_k: f64,
    pub reverse_q: Option<Vec<i64>>,
    pub forward_counterexample: bool,
    pub reverse_counterexample: bool,
}

impl Prop5Report {
    pub fn counterexample(&self) -> bool {
        self.forward_counterexample || self.reverse_counterexample
    }
}

/// Checks both directions of the equivalence by bounded enumeration.
///
/// Forward: a solution of (i) implies a `p` in range with
/// `(∏|⟨p x_i⟩|)^{1/n} ≤ nλ^{1/n}`. Reverse: such a `p` implies a nonzero
/// `q` with `|q_i| ≤ qbound`, `|⟨q·x⟩| ≤ Kλ` and `(∏|q_i|)^{1/n} ≤ Kμ`,
/// where `K = n (nμλ^{1/n}/(λμⁿ))^{1/n}`.
pub fn verify_prop5(x: &Coords, params: &TransferParams, qbound: i64) -> Prop5Report {
    let n = x.dim();
    let sols = solve_system_i(x, params, qbound);
    let p = solve_system_ii(x, params);
    let stated = solve_system_ii_with(x, params, gm_bound_stated(n, params.lambda));
    let nf = n as f64;
    let c = gm_bound(n, params.lambda) * params.mu;
    let k = nf * (c / (params.lambda * params.mu.powi(n as i32))).powf(1.0 / nf);
    let reverse_q = p.and_then(|_| {
        let lam = k * params.lambda;
        let gm_lim = k * params.mu;
        let found = std::sync::Mutex::new(None::<Vec<i64>>);
        let limit = (qbound as f64).powi(n as i32);
        hyperbolic_points(n, limit, qbound, &|q: &[i64]| {
            let gm = geometric_mean_abs(&q.iter().map(|&v| v as f64).collect::<Vec<_>>());
            if gm <= gm_lim && x.dot_within(q, lam) {
                let mut f = found.lock().unwrap();
                if f.as_ref().map_or(true, |cur| q < cur.as_slice()) {
                    *f = Some(q.to_vec());
                }
            }
        });
        found.into_inner().unwrap()
    });
    Prop5Report {
        x: x.values().to_vec(),
        params: *params,
        qbound,
        system_i_solutions: sols.len(),
        q_witness: sols.first().cloned(),
        p_witness: p,
        p_witness_gm: p.map(|p| gm_at(x, p)),
        stated_bound_holds: (!sols.is_empty()).then_some(stated.is_some()),
        reverse_k: k,
        forward_counterexample: !sols.is_empty() && p.is_none(),
        reverse_counterexample: p.is_some() && reverse_q.is_none(),
        reverse_q,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Prop5Suite {
    pub instances: usize,
    pub vacuous: usize,
    pub counterexamples: usize,
    pub stated_bound_failures: usize,
    pub reports: Vec<Prop5Report>,
}

/// Random planar instances with `x ∈ [0,1)²`, `λ = 10^U(−3,−0.3)`,
/// `μ = 10^U(0,2)`.
pub fn prop5_suite(instances: usize, qbound: i64, seed: u64) -> Prop5Suite {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases: Vec<(Vec<f64>, TransferParams)> = (0..instances)
        .map(|_| {
            let x = vec![rng.random::<f64>(), rng.random::<f64>()];
            let lambda = 10f64.powf(rng.random_range(-3.0..-0.3));
            let mu = 10f64.powf(rng.random_range(0.0..2.0));
            (x, TransferParams { lambda, mu })
        })
        .collect();
    let reports: Vec<Prop5Report> = cases.iter().map(|(x, p)| verify_prop5(&Coords::from_f64(x), p, qbound)).collect();
    Prop5Suite {
        instances,
        vacuous: reports.iter().filter(|r| r.system_i_solutions == 0).count(),
        counterexamples: reports.iter().filter(|r| r.counterexample()).count(),
        stated_bound_failures: reports.iter().filter(|r| r.stated_bound_holds == Some(false)).count(),
        reports,
    }
}

/// Grid `ε·2^{−k}`, `k = 1..=20`, searched for `ε′`.
pub fn eps_prime_grid(eps: f64) -> Vec<f64> {
    (1..=20).map(|k| eps * 0.5f64.powi(k)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub j: usize,
    pub q: Vec<i64>,
    pub q_branch: Option<&'static str>,
    pub size: f64,
    pub mu: f64,
    pub lambda: f64,
    pub lhs_i: f64,
    pub p: Option<i64>,
    pub p_branch: Option<&'static str>,
    pub value_ii: Option<f64>,
    pub p_range: f64,
    pub value_bound: f64,
    pub stated_bound_holds: Option<bool>,
    pub eps_prime: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransferReport {
    pub body: &'static str,
    pub x: Vec<f64>,
    pub epsilon: f64,
    pub bound: f64,
    pub solutions: usize,
    pub with_p: usize,
    pub admissible: usize,
    pub distinct_p: usize,
    pub stated_bound_holds: usize,
    pub failures: Vec<usize>,
    pub witnesses: Vec<Witness>,
}

impl TransferReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "j,q,q_branch,mu,lambda,lhs_i,p,p_branch,value_ii,p_range,value_bound,stated_bound_holds,eps_prime\n",
        );
        let opt = |v: Option<String>| v.unwrap_or_default();
        for w in &self.witnesses {
            let q: Vec<String> = w.q.iter().map(|v| v.to_string()).collect();
            s.push_str(&format!(
                "{},{},{},{:e},{:e},{:e},{},{},{},{:e},{:e},{},{}\n",
                w.j,
                q.join(" "),
                w.q_branch.unwrap_or(""),
                w.mu,
                w.lambda,
                w.lhs_i,
                opt(w.p.map(|p| p.to_string())),
                w.p_branch.unwrap_or(""),
                opt(w.value_ii.map(|v| format!("{v:e}"))),
                w.p_range,
                w.value_bound,
                opt(w.stated_bound_holds.map(|b| b.to_string())),
                opt(w.eps_prime.map(|v| format!("{v:e}"))),
            ));
        }
        s
    }
}

/// A system-(i) solution: `q`, its size `μ`, `|⟨q·x⟩|` and branch tag.
struct Solution {
    q: Vec<i64>,
    mu: f64,
    lhs: f64,
    branch: Option<&'static str>,
}

/// Indices `p` at which the value strictly improves on all smaller `p`.
fn record_minima(values: impl Fn(i64) -> f64 + Sync, top: i64) -> Vec<(i64, f64)> {
    let vals: Vec<f64> = (1..=top).into_par_iter().map(&values).collect();
    let mut out = Vec::new();
    let mut best = f64::INFINITY;
    for (i, &v) in vals.iter().enumerate() {
        if v < best {
            best = v;
            out.push((i as i64 + 1, v));
        }
    }
    out
}

struct Pipeline<'a> {
    body: &'static str,
    x: &'a Coords,
    epsilon: f64,
    bound: f64,
    /// `λ = μ^{−exponent}`.
    lambda_exponent: f64,
    value: &'a (dyn Fn(i64) -> f64 + Sync),
    p_branch: &'a dyn Fn(i64) -> Option<&'static str>,
}

impl Pipeline<'_> {
    fn run(&self, mut sols: Vec<Solution>) -> Result<TransferReport> {
        if sols.is_empty() {
            return Err(Error::NoSolutions(self.bound));
        }
        sols.sort_by(|a, b| a.mu.total_cmp(&b.mu).then_with(|| a.q.cmp(&b.q)));
        let n = self.x.dim();
        let params: Vec<TransferParams> =
            sols.iter().map(|s| TransferParams { mu: s.mu, lambda: s.mu.powf(-self.lambda_exponent) }).collect();
        let top = params.iter().map(|p| p_range(n, p).floor()).fold(0.0, f64::max).min(2e8) as i64;
        let records = record_minima(self.value, top);
        let first_below = |bound: f64, limit: f64| -> Option<(i64, f64)> {
            let i = records.partition_point(|r| r.1 > bound);
            records.get(i).copied().filter(|r| (r.0 as f64) <= limit)
        };
        let grid = eps_prime_grid(self.epsilon);
        let witnesses: Vec<Witness> = sols
            .iter()
            .zip(&params)
            .enumerate()
            .map(|(j, (s, pr))| {
                let range = p_range(n, pr);
                let vb = gm_bound(n, pr.lambda);
                let hit = first_below(vb, range);
                let stated = first_below(gm_bound_stated(n, pr.lambda), range).is_some();
                let eps_prime =
                    hit.and_then(|(p, v)| grid.iter().copied().find(|&e| v <= (p as f64).powf(-(1.0 + e) / n as f64)));
                Witness {
                    j,
                    q: s.q.clone(),
                    q_branch: s.branch,
                    size: s.mu,
                    mu: pr.mu,
                    lambda: pr.lambda,
                    lhs_i: s.lhs,
                    p: hit.map(|h| h.0),
                    p_branch: hit.and_then(|h| (self.p_branch)(h.0)),
                    value_ii: hit.map(|h| h.1),
                    p_range: range,
                    value_bound: vb,
                    stated_bound_holds: Some(stated),
                    eps_prime,
                }
            })
            .collect();
        let distinct: BTreeSet<i64> = witnesses.iter().filter_map(|w| w.p).collect();
        Ok(TransferReport {
            body: self.body,
            x: self.x.values().to_vec(),
            epsilon: self.epsilon,
            bound: self.bound,
            solutions: witnesses.len(),
            with_p: witnesses.iter().filter(|w| w.p.is_some()).count(),
            admissible: witnesses.iter().filter(|w| w.eps_prime.is_some()).count(),
            distinct_p: distinct.len(),
            stated_bound_holds: witnesses.iter().filter(|w| w.stated_bound_holds == Some(true)).count(),
            failures: witnesses.iter().filter(|w| w.eps_prime.is_none()).map(|w| w.j).collect(),
            witnesses,
        })
    }
}

fn check_eps(eps: f64, bound: f64) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidInput("ε must be positive".into()));
    }
    if !(bound >= 1.0 && bound.is_finite()) {
        return Err(Error::InvalidInput("bound must be at least 1".into()));
    }
    Ok(())
}

/// Multiplicative transference: solutions of
/// `|⟨q·x⟩| ≤ (∏ max(|q_i|,1))^{−1−ε}` with `F₊(q) ≤ bound`, each fed
/// through `μ = F₊(q)`, `λ = μ^{−1−ε}` to a `p` with
/// `(∏|⟨p x_i⟩|)^{1/n} ≤ |p|^{−(1+ε′)/n}`.
pub fn verify_theorem_multitrans(x: &Coords, epsilon: f64, bound: f64) -> Result<TransferReport> {
    check_eps(epsilon, bound)?;
    x.require_irrational()?;
    let n = x.dim();
    let limit = bound.powi(n as i32) * (1.0 + 1e-12);
    let qbound = limit.floor() as i64;
    let pts = collect_points(n, limit, qbound, |q| x.dot_within(q, prod_max(q).powf(-1.0 - epsilon)));
    let sols =
        pts.into_iter().map(|q| Solution { mu: f_plus(&q), lhs: x.nsd_dot(&q).abs(), q, branch: None }).collect();
    let value = |p: i64| gm_at(x, p);
    Pipeline {
        body: "multiplicative",
        x,
        epsilon,
        bound,
        lambda_exponent: 1.0 + epsilon,
        value: &value,
        p_branch: &|_| None,
    }
    .run(sols)
}

/// `min{max(|q₁|,1)max(|q₂|,1), (√2/2)max(|q₁+q₂|,1)max(|q₁−q₂|,1)}` and the
/// branch attaining it.
pub fn union_jack_size(q: &[i64]) -> (f64, &'static str) {
    let axis = prod_max(q);
    let rot = std::f64::consts::FRAC_1_SQRT_2 * prod_max(&[q[0] + q[1], q[0] - q[1]]);
    if axis <= rot {
        (axis, "axis")
    } else {
        (rot, "rotated")
    }
}

/// `F′(u, v) = min{|uv|, |u²−v²|/2}^{1/2}` and the branch attaining it.
pub fn union_jack_value(u: f64, v: f64) -> (f64, &'static str) {
    let axis = (u * v).abs();
    let rot = ((u + v) * (u - v)).abs() / 2.0;
    if axis <= rot {
        (axis.sqrt(), "axis")
    } else {
        (rot.sqrt(), "rotated")
    }
}

/// Union-jack transference, planar.
pub fn verify_theorem_unionjack(x: &Coords, epsilon: f64, bound: f64) -> Result<TransferReport> {
    check_eps(epsilon, bound)?;
    if x.dim() != 2 {
        return Err(Error::DimensionMismatch("the union-jack body is planar".into()));
    }
    x.require_irrational()?;
    let g_lim = bound * bound * (1.0 + 1e-12);
    let keep = |q: &[i64]| {
        let (g, _) = union_jack_size(q);
        g <= g_lim && x.dot_within(q, g.powf(-1.0 - epsilon))
    };
    let qbound = (2.0 * g_lim).floor() as i64;
    let mut pts = collect_points(2, g_lim, qbound, keep);
    // rotated branch: (√2/2)·max(|u|,1)·max(|v|,1) ≤ g_lim with u ≡ v (mod 2)
    let rot = collect_points(2, std::f64::consts::SQRT_2 * g_lim, qbound, |uv| {
        let (u, v) = (uv[0], uv[1]);
        (u - v) % 2 == 0 && keep(&[(u + v) / 2, (u - v) / 2])
    });
    pts.extend(rot.into_iter().map(|uv| vec![(uv[0] + uv[1]) / 2, (uv[0] - uv[1]) / 2]));
    pts.sort();
    pts.dedup();
    let sols = pts
        .into_iter()
        .map(|q| {
            let (g, b) = union_jack_size(&q);
            Solution { mu: g.sqrt(), lhs: x.nsd_dot(&q).abs(), q, branch: Some(b) }
        })
        .collect();
    let value = |p: i64| union_jack_value(x.nsd_scaled(p, 0), x.nsd_scaled(p, 1)).0;
    let branch = |p: i64| Some(union_jack_value(x.nsd_scaled(p, 0), x.nsd_scaled(p, 1)).1);
    Pipeline { body: "unionjack", x, epsilon, bound, lambda_exponent: 1.0 + epsilon, value: &value, p_branch: &branch }
        .run(sols)
}

/// Height/inner-product transference: `|⟨q·x⟩| ≤ |q|^{−n−ε}` with
/// `|q| ≤ bound`, then `p` with `max|⟨p x_i⟩| ≤ |p|^{−(1+ε′)/n}`.
pub fn verify_khintchine_transfer(x: &Coords, epsilon: f64, bound: f64) -> Result<TransferReport> {
    check_eps(epsilon, bound)?;
    x.require_irrational()?;
    let n = x.dim();
    let b = bound.floor() as i64;
    let out = std::sync::Mutex::new(Vec::new());
    let nf = n as f64;
    hyperbolic_points(n, (b as f64).powi(n as i32), b, &|q: &[i64]| {
        let h = q.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0) as f64;
        if x.dot_within(q, h.powf(-nf - epsilon)) {
            out.lock().unwrap().push(q.to_vec());
        }
    });
    let mut pts = out.into_inner().unwrap();
    pts.sort();
    let sols = pts
        .into_iter()
        .map(|q| {
            let h = q.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0) as f64;
            Solution { mu: h, lhs: x.nsd_dot(&q).abs(), q, branch: None }
        })
        .collect();
    let value = |p: i64| (0..n).map(|i| x.nsd_scaled(p, i)).fold(0.0, f64::max);
    Pipeline { body: "height", x, epsilon, bound, lambda_exponent: nf + epsilon, value: &value, p_branch: &|_| None }
        .run(sols)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn surds() -> Coords {
        Coords::parse("sqrt2,sqrt3").unwrap()
    }

    #[test]
    fn signed_distance_window() {
        assert_eq!(nearest_signed_distance(1.75), -0.25);
        assert_eq!(nearest_signed_distance(0.5), -0.5);
        assert!((nearest_signed_distance(-0.2) + 0.2).abs() < 1e-16);
    }

    #[test]
    fn f_plus_values() {
        assert!((f_plus(&[3, -5]) - 15f64.sqrt()).abs() < 1e-14);
        assert!((f_plus(&[0, 7]) - 7f64.sqrt()).abs() < 1e-14);
        assert_eq!(f_plus(&[0, 0, 0]), 1.0);
    }

    #[test]
    fn nu_examples() {
        let nu = find_nu(&[0.2, 0.3], 0.3).unwrap();
        assert!((nu.nu[0] - 1.5).abs() < 1e-15 && (nu.nu[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!((nu.nu[1] * 0.3 - 0.2).abs() < 1e-15);
        assert!(find_nu(&[0.5, 0.5], 0.3).is_none());
        let z = find_nu(&[0.0, 0.9], 0.01).unwrap();
        assert!((z.product() - 1.0).abs() < 1e-12 && z.nu[1] * 0.9 <= 0.01 * (1.0 + 1e-12));
    }

    #[test]
    fn matrix_layout_and_determinants() {
        let x = [0.3, 0.7];
        let p = TransferParams::new(0.2, 3.0).unwrap();
        let nu = NuVector { nu: vec![2.0, 0.5] };
        let a = build_matrices(MatrixKind::A, &x, &p, &nu).unwrap();
        let col0: Vec<f64> = a.entries.iter().map(|r| r[0]).collect();
        assert_eq!(col0, vec![0.3 / 0.2, 0.7 / 0.2, 1.0 / 0.2]);
        let s = build_matrices(MatrixKind::Astar, &x, &p, &nu).unwrap();
        assert!((a.determinant().abs() - 1.0 / (0.2 * 9.0)).abs() < 1e-12);
        assert!((s.determinant().abs() - 0.2 * 9.0).abs() < 1e-12);
        let (v, t) = phi_check(&a, &s, &[1, 2, 3], &[4, 5, 6]).unwrap();
        assert_eq!(t, 29);
        assert!((v - 29.0).abs() < 1e-10);
        assert!(matches!(
            build_matrices(MatrixKind::Atilde, &[0.1, 0.2, 0.3], &p, &NuVector { nu: vec![1.0; 3] }),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn system_i_examples() {
        let p = TransferParams::new(0.45, 1.0).unwrap();
        assert!(solve_system_i(&surds(), &p, 5).contains(&vec![1, 0]));
        let wide = TransferParams::new(0.5, 2.0).unwrap();
        let all = solve_system_i(&surds(), &wide, 10);
        let mut count = 0;
        for q1 in -4i64..=4 {
            for q2 in -4i64..=4 {
                if (q1, q2) != (0, 0) && f_plus(&[q1, q2]) <= 2.0 {
                    count += 1;
                }
            }
        }
        assert_eq!(all.len(), count);
        let rational = Coords::parse("1/3,1/2").unwrap();
        let exact = solve_system_i(&rational, &TransferParams { lambda: 0.0, mu: 6.0 }, 10);
        assert!(exact.contains(&vec![3, 0]));
    }

    #[test]
    fn system_ii_examples() {
        let p = TransferParams::new(0.45, 1.0).unwrap();
        assert_eq!(solve_system_ii(&surds(), &p), Some(1));
        assert!((gm_at(&surds(), 1) - 0.33315).abs() < 1e-4);
        let half = Coords::parse("1/2,1/2").unwrap();
        assert_eq!(gm_at(&half, 2), 0.0);
    }

    #[test]
    fn prop5_instance() {
        let r = verify_prop5(&surds(), &TransferParams::new(0.45, 1.0).unwrap(), 50);
        assert!(r.q_witness.is_some());
        assert_eq!(r.p_witness, Some(1));
        assert!(!r.counterexample());
        let vac = verify_prop5(&surds(), &TransferParams::new(1e-6, 1.0).unwrap(), 50);
        assert_eq!(vac.system_i_solutions, 0);
        assert!(!vac.forward_counterexample);
    }

    #[test]
    fn multitrans_small() {
        let r = verify_theorem_multitrans(&surds(), 0.25, 30.0).unwrap();
        assert!(r.solutions > 0);
        assert!(r.witnesses.windows(2).all(|w| w[0].mu <= w[1].mu));
        for w in &r.witnesses {
            if let (Some(p), Some(e)) = (w.p, w.eps_prime) {
                let v = w.value_ii.unwrap();
                for g in eps_prime_grid(0.25).into_iter().filter(|&g| g <= e) {
                    assert!(v <= (p as f64).powf(-(1.0 + g) / 2.0));
                }
            }
        }
        assert!(verify_theorem_multitrans(&Coords::parse("1/3,sqrt3").unwrap(), 0.25, 30.0).is_err());
    }

    #[test]
    fn unionjack_helpers() {
        assert_eq!(union_jack_size(&[3, 3]), (std::f64::consts::FRAC_1_SQRT_2 * 6.0, "rotated"));
        assert_eq!(union_jack_value(0.2, 0.2).0, 0.0);
    }

    #[test]
    fn height_transfer_small() {
        let r = verify_khintchine_transfer(&surds(), 0.3, 100.0).unwrap();
        assert!(r.admissible > 0);
    }
}
