//! Planar distance functions as an expression algebra.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A point of the plane.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x1: f64,
    pub x2: f64,
}

impl Vec2 {
    pub const fn new(x1: f64, x2: f64) -> Self {
        Self { x1, x2 }
    }

    /// Rejects NaN and infinite components.
    pub fn checked(x1: f64, x2: f64) -> Result<Self> {
        if x1.is_finite() && x2.is_finite() {
            Ok(Self { x1, x2 })
        } else {
            Err(Error::InvalidInput(format!("non-finite point ({x1}, {x2})")))
        }
    }

    pub fn from_angle(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self::new(c, s)
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x1 * o.x1 + self.x2 * o.x2
    }

    pub fn norm(self) -> f64 {
        self.x1.hypot(self.x2)
    }

    pub fn scale(self, t: f64) -> Self {
        Self::new(self.x1 * t, self.x2 * t)
    }

    pub fn add(self, o: Vec2) -> Self {
        Self::new(self.x1 + o.x1, self.x2 + o.x2)
    }

    pub fn sub(self, o: Vec2) -> Self {
        Self::new(self.x1 - o.x1, self.x2 - o.x2)
    }

    /// Counter-clockwise normal.
    pub fn perp(self) -> Self {
        Self::new(-self.x2, self.x1)
    }

    pub fn unit(self) -> Self {
        self.scale(1.0 / self.norm())
    }
}

/// `(x1, x2) ↦ a·x1 + b·x2` with exact coefficients.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LinearForm {
    a: Scalar,
    b: Scalar,
}

impl LinearForm {
    pub fn new(a: Scalar, b: Scalar) -> Result<Self> {
        if a.is_zero() && b.is_zero() {
            return Err(Error::InvalidInput("linear form with a = b = 0".into()));
        }
        Ok(Self { a, b })
    }

    pub fn ints(a: i64, b: i64) -> Result<Self> {
        Self::new(Scalar::integer(a), Scalar::integer(b))
    }

    pub fn a(&self) -> &Scalar {
        &self.a
    }

    pub fn b(&self) -> &Scalar {
        &self.b
    }

    pub fn is_rational(&self) -> bool {
        self.a.is_rational() && self.b.is_rational()
    }

    pub fn coefficients(&self) -> (f64, f64) {
        (self.a.to_f64(), self.b.to_f64())
    }

    /// True when both forms vanish on the same line.
    pub fn same_kernel(&self, other: &LinearForm) -> bool {
        self.a.mul_exact(&other.b) == self.b.mul_exact(&other.a)
    }

    /// Swaps the roles of `x1` and `x2`.
    pub fn swapped(&self) -> Self {
        Self { a: self.b.clone(), b: self.a.clone() }
    }

    /// Substitutes `x1 ↦ -x1`.
    pub fn reflected_x1(&self) -> Self {
        Self { a: self.a.neg(), b: self.b.clone() }
    }
}

/// Node of a distance-function expression.
///
/// Numeric coefficients are cached as `f64` alongside the exact values so that
/// evaluation stays cheap in sampling loops.
#[derive(Debug, Clone)]
pub enum Expr {
    Abs(Atom),
    Min(Vec<Expr>),
    Max(Vec<Expr>),
    GeoMean(Vec<Expr>),
    Scale(Factor, Box<Expr>),
}

#[derive(Debug, Clone)]
pub struct Atom {
    form: LinearForm,
    a: f64,
    b: f64,
}

impl Atom {
    pub fn new(form: LinearForm) -> Self {
        let (a, b) = form.coefficients();
        Self { form, a, b }
    }

    pub fn form(&self) -> &LinearForm {
        &self.form
    }

    #[inline]
    pub fn eval(&self, x: Vec2) -> f64 {
        (self.a * x.x1 + self.b * x.x2).abs()
    }

    #[inline]
    pub fn signed(&self, x: Vec2) -> f64 {
        self.a * x.x1 + self.b * x.x2
    }
}

/// A positive scaling constant.
#[derive(Debug, Clone)]
pub struct Factor {
    exact: Scalar,
    value: f64,
}

impl Factor {
    pub fn new(c: Scalar) -> Result<Self> {
        if c.signum() <= 0 {
            return Err(Error::InvalidInput(format!("scale factor {c} is not positive")));
        }
        let value = c.to_f64();
        Ok(Self { exact: c, value })
    }

    pub fn exact(&self) -> &Scalar {
        &self.exact
    }

    pub fn value(&self) -> f64 {
        self.value
    }
}

impl PartialEq for Atom {
    fn eq(&self, o: &Self) -> bool {
        self.form == o.form
    }
}

impl PartialEq for Factor {
    fn eq(&self, o: &Self) -> bool {
        self.exact == o.exact
    }
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Expr::Abs(a), Expr::Abs(b)) => a == b,
            (Expr::Min(a), Expr::Min(b)) | (Expr::Max(a), Expr::Max(b)) | (Expr::GeoMean(a), Expr::GeoMean(b)) => {
                a == b
            }
            (Expr::Scale(c, a), Expr::Scale(d, b)) => c == d && a == b,
            _ => false,
        }
    }
}

impl Expr {
    pub fn abs(form: LinearForm) -> Self {
        Expr::Abs(Atom::new(form))
    }

    /// `|a·x1 + b·x2|` for integer coefficients.
    pub fn abs_ints(a: i64, b: i64) -> Self {
        Expr::abs(LinearForm::ints(a, b).expect("nonzero form"))
    }

    pub fn min(children: Vec<Expr>) -> Result<Self> {
        nonempty("min", &children)?;
        Ok(Expr::Min(children))
    }

    pub fn max(children: Vec<Expr>) -> Result<Self> {
        nonempty("max", &children)?;
        Ok(Expr::Max(children))
    }

    pub fn geo_mean(children: Vec<Expr>) -> Result<Self> {
        nonempty("gm", &children)?;
        Ok(Expr::GeoMean(children))
    }

    pub fn scale(c: Scalar, child: Expr) -> Result<Self> {
        Ok(Expr::Scale(Factor::new(c)?, Box::new(child)))
    }

    /// `max(|x1|, |x2|)`.
    pub fn height() -> Self {
        Expr::Max(vec![Expr::abs_ints(1, 0), Expr::abs_ints(0, 1)])
    }

    /// `√(|x1|·|x2|)`.
    pub fn multiplicative() -> Self {
        Expr::GeoMean(vec![Expr::abs_ints(1, 0), Expr::abs_ints(0, 1)])
    }

    /// `min{|x1 x2|, |x1² − x2²|/2}^{1/2}`, written with the factorisation
    /// `|x1² − x2²|/2 = |x1+x2|/√2 · |x1−x2|/√2`.
    pub fn union_jack() -> Self {
        let h = Scalar::inv_sqrt2;
        let rotated = Expr::GeoMean(vec![
            Expr::abs(LinearForm::new(h(), h()).unwrap()),
            Expr::abs(LinearForm::new(h(), h().neg()).unwrap()),
        ]);
        Expr::Min(vec![Expr::multiplicative(), rotated])
    }

    /// `√(|x2 − √2·x1|·|x1|)`: an irrational cusp plus a vertical one.
    pub fn irrational_cusp() -> Self {
        Expr::GeoMean(vec![
            Expr::abs(LinearForm::new(Scalar::sqrt2().neg(), Scalar::integer(1)).unwrap()),
            Expr::abs_ints(1, 0),
        ])
    }

    /// Checks arity and positivity throughout the tree.
    pub fn validate(&self) -> Result<()> {
        match self {
            Expr::Abs(_) => Ok(()),
            Expr::Min(c) | Expr::Max(c) | Expr::GeoMean(c) => {
                nonempty(self.kind(), c)?;
                c.iter().try_for_each(Expr::validate)
            }
            Expr::Scale(f, c) => {
                if f.exact.signum() <= 0 {
                    return Err(Error::InvalidInput("non-positive scale factor".into()));
                }
                c.validate()
            }
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Expr::Abs(_) => "abs",
            Expr::Min(_) => "min",
            Expr::Max(_) => "max",
            Expr::GeoMean(_) => "gm",
            Expr::Scale(..) => "scale",
        }
    }

    pub fn eval(&self, x: Vec2) -> f64 {
        match self {
            Expr::Abs(a) => a.eval(x),
            Expr::Min(c) => c.iter().map(|e| e.eval(x)).fold(f64::INFINITY, f64::min),
            Expr::Max(c) => c.iter().map(|e| e.eval(x)).fold(0.0, f64::max),
            Expr::GeoMean(c) => match c.as_slice() {
                [a] => a.eval(x),
                [a, b] => a.eval(x).sqrt() * b.eval(x).sqrt(),
                _ => {
                    let k = 1.0 / c.len() as f64;
                    c.iter().map(|e| e.eval(x).powf(k)).product()
                }
            },
            Expr::Scale(f, c) => f.value * c.eval(x),
        }
    }

    /// Evaluates the tree with the `i`-th atom (tree order) replaced by
    /// `|vals[i]|`.
    pub fn eval_atoms(&self, vals: &[f64]) -> f64 {
        let mut i = 0;
        self.eval_atoms_at(vals, &mut i)
    }

    fn eval_atoms_at(&self, vals: &[f64], i: &mut usize) -> f64 {
        match self {
            Expr::Abs(_) => {
                let v = vals[*i].abs();
                *i += 1;
                v
            }
            Expr::Min(c) => c.iter().map(|e| e.eval_atoms_at(vals, i)).fold(f64::INFINITY, f64::min),
            Expr::Max(c) => c.iter().map(|e| e.eval_atoms_at(vals, i)).fold(0.0, f64::max),
            Expr::GeoMean(c) => {
                let vs: Vec<f64> = c.iter().map(|e| e.eval_atoms_at(vals, i)).collect();
                match vs.as_slice() {
                    [a] => *a,
                    [a, b] => a.sqrt() * b.sqrt(),
                    _ => {
                        let k = 1.0 / vs.len() as f64;
                        vs.iter().map(|v| v.powf(k)).product()
                    }
                }
            }
            Expr::Scale(f, c) => f.value * c.eval_atoms_at(vals, i),
        }
    }

    /// All linear forms appearing in atoms, in tree order.
    pub fn atoms(&self) -> Vec<&LinearForm> {
        let mut out = Vec::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms<'a>(&'a self, out: &mut Vec<&'a LinearForm>) {
        match self {
            Expr::Abs(a) => out.push(&a.form),
            Expr::Min(c) | Expr::Max(c) | Expr::GeoMean(c) => c.iter().for_each(|e| e.collect_atoms(out)),
            Expr::Scale(_, c) => c.collect_atoms(out),
        }
    }

    /// Rewrites every linear form, keeping the tree shape.
    pub fn map_forms(&self, f: &impl Fn(&LinearForm) -> LinearForm) -> Expr {
        match self {
            Expr::Abs(a) => Expr::abs(f(&a.form)),
            Expr::Min(c) => Expr::Min(c.iter().map(|e| e.map_forms(f)).collect()),
            Expr::Max(c) => Expr::Max(c.iter().map(|e| e.map_forms(f)).collect()),
            Expr::GeoMean(c) => Expr::GeoMean(c.iter().map(|e| e.map_forms(f)).collect()),
            Expr::Scale(k, c) => Expr::Scale(k.clone(), Box::new(c.map_forms(f))),
        }
    }

    /// `F(x2, x1)`.
    pub fn swap_axes(&self) -> Expr {
        self.map_forms(&LinearForm::swapped)
    }

    /// `F(−x1, x2)`.
    pub fn reflect_x1(&self) -> Expr {
        self.map_forms(&LinearForm::reflected_x1)
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Abs(_) => 1,
            Expr::Min(c) | Expr::Max(c) | Expr::GeoMean(c) => 1 + c.iter().map(Expr::depth).max().unwrap_or(0),
            Expr::Scale(_, c) => 1 + c.depth(),
        }
    }
}

fn nonempty(node: &'static str, children: &[Expr]) -> Result<()> {
    if children.is_empty() {
        Err(Error::Arity { node, line: 0, column: 0 })
    } else {
        Ok(())
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Abs(a) => write!(f, "abs({},{})", a.form.a, a.form.b),
            Expr::Min(c) | Expr::Max(c) | Expr::GeoMean(c) => {
                write!(f, "{}(", self.kind())?;
                for (i, e) in c.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{e}")?;
                }
                f.write_str(")")
            }
            Expr::Scale(k, c) => write!(f, "scale({},{})", k.exact, c),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registered_examples() {
        assert_eq!(Expr::height().eval(Vec2::new(0.3, -0.7)), 0.7);
        let m = Expr::multiplicative().eval(Vec2::new(0.2, 0.3));
        assert!((m - 0.06f64.sqrt()).abs() < 1e-15);
        assert!(Expr::union_jack().eval(Vec2::new(1.0, 1.0)) < 1e-15);
    }

    #[test]
    fn union_jack_matches_closed_form() {
        let f = Expr::union_jack();
        for &(x, y) in &[(0.3f64, 0.9f64), (-1.2, 0.4), (2.0, -0.1), (0.5, 0.5001)] {
            let direct = f64::min((x * y).abs(), (x * x - y * y).abs() / 2.0).sqrt();
            assert!((f.eval(Vec2::new(x, y)) - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn kernels_compare_exactly() {
        let a = LinearForm::new(Scalar::inv_sqrt2(), Scalar::inv_sqrt2()).unwrap();
        let b = LinearForm::ints(3, 3).unwrap();
        assert!(a.same_kernel(&b));
        let c = LinearForm::new(Scalar::sqrt2().neg(), Scalar::integer(1)).unwrap();
        let d = LinearForm::ints(-1414, 1000).unwrap();
        assert!(!c.same_kernel(&d));
    }

    #[test]
    fn constructors_reject_bad_input() {
        assert!(Expr::min(vec![]).is_err());
        assert!(Expr::scale(Scalar::integer(-1), Expr::height()).is_err());
        assert!(LinearForm::ints(0, 0).is_err());
        assert!(Vec2::checked(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn axis_swap() {
        let f = Expr::irrational_cusp();
        let g = f.swap_axes();
        let p = Vec2::new(0.37, -1.1);
        assert_eq!(f.eval(p), g.eval(Vec2::new(p.x2, p.x1)));
        let r = f.reflect_x1();
        assert_eq!(f.eval(p), r.eval(Vec2::new(-p.x1, p.x2)));
    }
}
