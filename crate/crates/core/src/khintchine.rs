//! Khintchine-type series and truncated limsup-set experiments.

use serde::Serialize;
use twofloat::TwoFloat;

use crate::error::{Error, Result};
use crate::expr::{Expr, Vec2};
use crate::lattice::{Restriction, SearchMode};
use crate::mc::{self, Estimate};
use crate::measure::{analytic_density, stratified, DensityMethod, DensityOracle, ResonantSpec, Resonator};

/// Approximation function `ψ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PsiFamily {
    /// `q^(−τ)`.
    #[serde(rename = "pow")]
    PowerLaw { tau: f64 },
    /// `q^(−τ)·(log q)^(−σ)` for `q ≥ 2`.
    #[serde(rename = "powlog")]
    PowerLog { tau: f64, sigma: f64 },
    /// Explicit `(q, ψ(q))` pairs, sorted by `q`.
    Table { values: Vec<(u64, f64)> },
}

/// Monotonicity contracts of a `ψ` over a range of `q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsiChecks {
    pub positive: bool,
    pub q_psi_nonincreasing: bool,
    pub density_nonincreasing: Option<bool>,
}

impl PsiFamily {
    /// Parses `pow:<tau>` or `powlog:<tau>,<sigma>`.
    pub fn parse(spec: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("bad ψ spec `{spec}` (use pow:τ or powlog:τ,σ)"));
        let (kind, args) = spec.split_once(':').ok_or_else(bad)?;
        let nums: Vec<f64> =
            args.split(',').map(|s| s.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_>>()?;
        if nums.iter().any(|v| !v.is_finite()) {
            return Err(bad());
        }
        match (kind, nums.as_slice()) {
            ("pow", [tau]) => Ok(PsiFamily::PowerLaw { tau: *tau }),
            ("powlog", [tau, sigma]) => Ok(PsiFamily::PowerLog { tau: *tau, sigma: *sigma }),
            _ => Err(bad()),
        }
    }

    /// Reads a `q,psi` CSV table.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::InvalidInput(format!("ψ table: {e}")))?;
            let q: u64 =
                rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| Error::InvalidInput("ψ table: bad q".into()))?;
            let v: f64 = rec
                .get(1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::InvalidInput("ψ table: bad psi".into()))?;
            if q == 0 || !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidInput(format!("ψ table: invalid row q={q}, psi={v}")));
            }
            values.push((q, v));
        }
        values.sort_by_key(|e| e.0);
        values.dedup_by_key(|e| e.0);
        if values.is_empty() {
            return Err(Error::InvalidInput("ψ table is empty".into()));
        }
        Ok(PsiFamily::Table { values })
    }

    pub fn domain_start(&self) -> u64 {
        match self {
            PsiFamily::PowerLaw { .. } => 1,
            PsiFamily::PowerLog { .. } => 2,
            PsiFamily::Table { values } => values[0].0,
        }
    }

    /// `ψ(q)`, or `None` outside the domain.
    pub fn eval(&self, q: u64) -> Option<f64> {
        let qf = q as f64;
        match *self {
            PsiFamily::PowerLaw { tau } if q >= 1 => Some(qf.powf(-tau)),
            PsiFamily::PowerLog { tau, sigma } if q >= 2 => Some(qf.powf(-tau) * qf.ln().powf(-sigma)),
            PsiFamily::Table { ref values } => values.binary_search_by_key(&q, |e| e.0).ok().map(|i| values[i].1),
            _ => None,
        }
    }

    /// Domain points in `[lo, hi]`.
    pub fn support(&self, lo: u64, hi: u64) -> Vec<u64> {
        match self {
            PsiFamily::Table { values } => values.iter().map(|e| e.0).filter(|&q| q >= lo && q <= hi).collect(),
            _ => (lo.max(self.domain_start())..=hi).collect(),
        }
    }

    /// Checks positivity, `qψ(q)` non-increasing and, given a density,
    /// `D_F(qψ(q))` non-increasing over `q ≤ q_max`.
    pub fn check(&self, q_max: u64, density: Option<&dyn Fn(f64) -> f64>) -> PsiChecks {
        let qs = self.support(1, q_max);
        let vals: Vec<f64> = qs.iter().map(|&q| self.eval(q).unwrap_or(f64::NAN)).collect();
        let positive = vals.iter().all(|v| *v > 0.0);
        let qpsi: Vec<f64> = qs.iter().zip(&vals).map(|(&q, v)| q as f64 * v).collect();
        let nonincreasing = |xs: &[f64]| xs.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
        let density_nonincreasing = density.map(|d| {
            let ds: Vec<f64> = qpsi.iter().map(|&e| d(e)).collect();
            nonincreasing(&ds)
        });
        PsiChecks { positive, q_psi_nonincreasing: nonincreasing(&qpsi), density_nonincreasing }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Convergent,
    Divergent,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeriesReport {
    pub partial_sums: Vec<(u64, f64)>,
    pub verdict: Verdict,
    /// `integral-test` when a closed form decided, `blocks` otherwise.
    pub verdict_source: &'static str,
    pub psi_checks: PsiChecks,
}

/// Shape classes with a registered density asymptotic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DensityClass {
    /// `D_F(ε) ∝ ε²`.
    Bounded,
    /// `D_F(ε) ≍ ε² log(1/ε)`.
    AxisProduct,
}

fn density_class(f: &Expr, oracle: &DensityOracle) -> Option<DensityClass> {
    if oracle.is_bounded() {
        return Some(DensityClass::Bounded);
    }
    match f {
        Expr::Scale(_, g) => density_class(g, oracle),
        Expr::GeoMean(_) if analytic_density(f, 0.01).is_some() => Some(DensityClass::AxisProduct),
        _ => None,
    }
}

/// Integral-test verdict for `Σ D_F(qψ(q))` with parametric `ψ`.
fn integral_test(class: DensityClass, psi: &PsiFamily) -> Option<Verdict> {
    let (tau, sigma) = match *psi {
        PsiFamily::PowerLaw { tau } => (tau, 0.0),
        PsiFamily::PowerLog { tau, sigma } => (tau, sigma),
        PsiFamily::Table { .. } => return None,
    };
    // (qψ)² = q^(−a)·(log q)^(−2σ)
    let a = 2.0 * tau - 2.0;
    let at_one = (a - 1.0).abs() < 1e-12;
    let conv = match class {
        DensityClass::Bounded => a > 1.0 && !at_one || at_one && 2.0 * sigma > 1.0,
        // extra factor log(1/(qψ)²) ≍ log q when a > 0
        DensityClass::AxisProduct => a > 1.0 && !at_one || at_one && sigma > 1.0,
    };
    Some(if conv { Verdict::Convergent } else { Verdict::Divergent })
}

/// Dyadic block heuristic for unregistered shapes.
fn block_verdict(terms: &[(u64, f64)]) -> Verdict {
    let mut blocks: Vec<f64> = Vec::new();
    let mut k = 0u32;
    let mut acc = 0.0;
    for &(q, t) in terms {
        while q >= 1u64 << (k + 1) {
            blocks.push(acc);
            acc = 0.0;
            k += 1;
        }
        acc += t;
    }
    let tail: Vec<f64> = blocks.iter().rev().take(5).rev().copied().collect();
    if tail.len() < 4 {
        return Verdict::Inconclusive;
    }
    let ratios: Vec<f64> = tail.windows(2).map(|w| w[1] / w[0]).collect();
    if ratios.iter().all(|&r| r < 0.9) {
        Verdict::Convergent
    } else if ratios.iter().all(|&r| r > 0.97) {
        Verdict::Divergent
    } else {
        Verdict::Inconclusive
    }
}

/// Partial sums of `Σ D_F(qψ(q))` recorded at powers of two and at `q_max`.
pub fn series_partial_sums(f: &Expr, psi: &PsiFamily, q_max: u64) -> Result<SeriesReport> {
    let oracle = DensityOracle::new(f)?;
    let class = density_class(f, &oracle);
    let dens = |e: f64| -> Result<f64> {
        if let Some(v) = analytic_density(f, e) {
            return Ok(v);
        }
        Ok(oracle.density(e, DensityMethod::Quadrature, 0, 0)?.value)
    };
    let mut sum = TwoFloat::from(0.0);
    let mut out = Vec::new();
    let mut terms = Vec::new();
    let mut next_mark = 1u64;
    for q in psi.support(1, q_max) {
        let eps = q as f64 * psi.eval(q).expect("q in support");
        let t = dens(eps)?;
        terms.push((q, t));
        sum += t;
        while next_mark < q {
            next_mark *= 2;
        }
        if q == next_mark || q == q_max {
            out.push((q, sum.hi()));
        }
    }
    if out.last().map(|e| e.0) != Some(q_max) {
        out.push((q_max, sum.hi()));
    }
    let density_fn = |e: f64| dens(e).unwrap_or(f64::NAN);
    let psi_checks = psi.check(q_max.min(1 << 16), Some(&density_fn));
    let (verdict, verdict_source) = match class.and_then(|c| integral_test(c, psi)) {
        Some(v) => (v, "integral-test"),
        None => (block_verdict(&terms), "blocks"),
    };
    Ok(SeriesReport { partial_sums: out, verdict, verdict_source, psi_checks })
}

/// Monte Carlo measure of `∪_{q∈[N,2N]} B_q(F, ψ(q))`.
pub fn tail_measure(f: &Expr, psi: &PsiFamily, n: u64, samples: u64, seed: u64) -> Result<Estimate> {
    let res = Resonator::new(f)?;
    tail_measure_with(&res, psi, n, samples, seed)
}

pub fn tail_measure_with(res: &Resonator, psi: &PsiFamily, n: u64, samples: u64, seed: u64) -> Result<Estimate> {
    if n == 0 {
        return Err(Error::InvalidInput("N must be at least 1".into()));
    }
    let specs: Vec<ResonantSpec> =
        psi.support(n, 2 * n).into_iter().map(|q| ResonantSpec::new(q, psi.eval(q).expect("in support"))).collect();
    Ok(mc::fraction(samples, seed, |rng, i| {
        let x = stratified(rng, i);
        specs.iter().any(|s| res.hit(x, s, &Restriction::None, SearchMode::Auto).is_some())
    }))
}

/// `Σ_{q∈[N,2N]} D_F(qψ(q))`, which bounds the tail measure from above for
/// bodies whose resonant sets have measure at most `D_F(qψ(q))`.
pub fn union_bound(f: &Expr, psi: &PsiFamily, n: u64) -> Result<f64> {
    let oracle = DensityOracle::new(f)?;
    let mut s = 0.0;
    for q in psi.support(n, 2 * n) {
        s += oracle.density(q as f64 * psi.eval(q).unwrap(), DensityMethod::Auto, 10_000, 0)?.value;
    }
    Ok(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct TailRow {
    pub n: u64,
    pub value: f64,
    pub stderr: f64,
    pub samples: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DichotomyReport {
    pub series: SeriesReport,
    pub tail_measures: Vec<TailRow>,
}

pub fn dichotomy(
    f: &Expr,
    psi: &PsiFamily,
    q_max: u64,
    blocks: &[u64],
    samples: u64,
    seed: u64,
) -> Result<DichotomyReport> {
    let series = series_partial_sums(f, psi, q_max)?;
    let res = Resonator::new(f)?;
    let tail_measures = blocks
        .iter()
        .map(|&n| {
            let e = tail_measure_with(&res, psi, n, samples, seed)?;
            Ok(TailRow { n, value: e.value, stderr: e.stderr, samples, seed })
        })
        .collect::<Result<_>>()?;
    Ok(DichotomyReport { series, tail_measures })
}

/// Euler's totient for `1..=n` by a linear sieve.
pub fn totients(n: usize) -> Vec<u64> {
    let mut phi = vec![0u64; n + 1];
    let mut primes = Vec::new();
    let mut composite = vec![false; n + 1];
    if n >= 1 {
        phi[1] = 1;
    }
    for i in 2..=n {
        if !composite[i] {
            primes.push(i);
            phi[i] = i as u64 - 1;
        }
        for &p in &primes {
            let ip = i * p;
            if ip > n {
                break;
            }
            composite[ip] = true;
            if i % p == 0 {
                phi[ip] = phi[i] * p as u64;
                break;
            }
            phi[ip] = phi[i] * (p as u64 - 1);
        }
    }
    phi
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhiSums {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// `Σ_{q=1}^N (φ(q)/q)² ω(q)` against `Σ_{q=2}^N ω(q)`.
pub fn euler_phi_sum_check(omega: impl Fn(u64) -> f64, n: u64) -> Result<PhiSums> {
    if n < 2 {
        return Err(Error::InvalidInput("N must be at least 2".into()));
    }
    let phi = totients(n as usize);
    let mut lhs = TwoFloat::from(0.0);
    let mut rhs = TwoFloat::from(0.0);
    let mut prev = f64::INFINITY;
    for q in 1..=n {
        let w = omega(q);
        if !(w > 0.0) || w > prev {
            return Err(Error::InvalidInput(format!("ω must be positive and decreasing (q = {q})")));
        }
        prev = w;
        let r = phi[q as usize] as f64 / q as f64;
        lhs += TwoFloat::from(r) * r * w;
        if q >= 2 {
            rhs += w;
        }
    }
    let (lhs, rhs) = (lhs.hi() + lhs.lo(), rhs.hi() + rhs.lo());
    Ok(PhiSums { lhs, rhs, ratio: lhs / rhs })
}

/// Exact rational version of [`euler_phi_sum_check`].
pub fn euler_phi_sum_exact(
    omega: impl Fn(u64) -> num_rational::BigRational,
    n: u64,
) -> (num_rational::BigRational, num_rational::BigRational) {
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use num_traits::Zero;
    let phi = totients(n as usize);
    let mut lhs = BigRational::zero();
    let mut rhs = BigRational::zero();
    for q in 1..=n {
        let w = omega(q);
        let r = BigRational::new(BigInt::from(phi[q as usize]), BigInt::from(q));
        lhs += &r * &r * &w;
        if q >= 2 {
            rhs += w;
        }
    }
    (lhs, rhs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Approximation {
    pub q: u64,
    pub p: [i64; 2],
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BestApproximations {
    pub all: Vec<Approximation>,
    pub records: Vec<Approximation>,
}

/// For each `q ≤ q_max`, the `p` minimising `F(x − p/q)`, and the
/// subsequence of strict new minima.
pub fn best_approximations(f: &Expr, x: Vec2, q_max: u64) -> Result<BestApproximations> {
    if q_max == 0 {
        return Err(Error::InvalidInput("Qmax must be at least 1".into()));
    }
    let res = Resonator::new(f)?;
    let mut all = Vec::new();
    let mut records: Vec<Approximation> = Vec::new();
    for q in 1..=q_max {
        let spec = ResonantSpec::new(q, f64::INFINITY);
        if let Some((p, value)) = res.minimum(x, &spec, SearchMode::Auto)? {
            let a = Approximation { q, p: [p.0, p.1], value };
            if records.last().map_or(true, |r| value < r.value) {
                records.push(a);
            }
            all.push(a);
        }
    }
    Ok(BestApproximations { all, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use num_rational::BigRational;

    #[test]
    fn psi_parsing_and_domain() {
        assert_eq!(PsiFamily::parse("pow:1.5").unwrap(), PsiFamily::PowerLaw { tau: 1.5 });
        assert_eq!(PsiFamily::parse("powlog:1.5,1.2").unwrap(), PsiFamily::PowerLog { tau: 1.5, sigma: 1.2 });
        assert!(PsiFamily::parse("pow").is_err());
        let p = PsiFamily::PowerLog { tau: 1.5, sigma: 1.0 };
        assert_eq!(p.eval(1), None);
        assert_eq!(p.domain_start(), 2);
        let t = PsiFamily::from_csv("q,psi\n3,0.1\n1,0.5\n2,0.2\n").unwrap();
        assert_eq!(t.eval(2), Some(0.2));
        assert_eq!(t.support(1, 10), vec![1, 2, 3]);
    }

    #[test]
    fn height_zeta_two() {
        let r = series_partial_sums(&Expr::height(), &PsiFamily::PowerLaw { tau: 2.0 }, 1 << 14).unwrap();
        assert_eq!(r.verdict, Verdict::Convergent);
        let last = r.partial_sums.last().unwrap().1;
        // 4(qψ)² = 4/q², so the series tends to 4·ζ(2).
        let limit = 4.0 * std::f64::consts::PI.powi(2) / 6.0;
        assert!((last - limit).abs() < 4.0 / (1 << 14) as f64 * 1.01);
    }

    #[test]
    fn height_threshold() {
        for (tau, want) in [(1.6, Verdict::Convergent), (1.5, Verdict::Divergent), (1.4, Verdict::Divergent)] {
            let r = series_partial_sums(&Expr::height(), &PsiFamily::PowerLaw { tau }, 64).unwrap();
            assert_eq!(r.verdict, want, "τ = {tau}");
        }
    }

    #[test]
    fn totient_sieve() {
        assert_eq!(&totients(12)[1..], &[1, 1, 2, 2, 4, 2, 6, 4, 6, 4, 10, 4]);
    }

    #[test]
    fn phi_sums_small() {
        let (lhs, rhs) = euler_phi_sum_exact(|_| BigRational::from_integer(BigInt::from(1)), 10);
        // Σ (φ(q)/q)² for q ≤ 10
        let direct: BigRational = [(1, 1), (1, 2), (2, 3), (2, 4), (4, 5), (2, 6), (6, 7), (4, 8), (6, 9), (4, 10)]
            .iter()
            .map(|&(a, b)| BigRational::new(BigInt::from(a * a), BigInt::from(b * b)))
            .sum();
        assert_eq!(lhs, direct);
        assert_eq!(rhs, BigRational::from_integer(BigInt::from(9)));
        let s = euler_phi_sum_check(|q| 1.0 / q as f64, 2).unwrap();
        assert!((s.lhs - 1.125).abs() < 1e-15 && (s.rhs - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rational_point_is_exact() {
        let x = Vec2::new(1.0 / 3.0, 2.0 / 3.0);
        let b = best_approximations(&Expr::height(), x, 3).unwrap();
        let third = b.all.iter().find(|a| a.q == 3).unwrap();
        assert!(third.value < 1e-15);
        assert_eq!((third.p[0].rem_euclid(3), third.p[1].rem_euclid(3)), (1, 2));
        assert_eq!(b.records.last().unwrap().q, 3);
        let m = best_approximations(&Expr::multiplicative(), x, 3).unwrap();
        assert_eq!(m.all.iter().find(|a| a.q == 3).unwrap().value, 0.0);
    }
}
