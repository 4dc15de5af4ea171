//! Text and JSON front ends for distance functions.
//!
//! ```text
//! expr := "abs(" num "," num ")"
//!       | ("min" | "max" | "gm") "(" expr {"," expr} ")"
//!       | "scale(" num "," expr ")"
//! num  := ["-"] (decimal ["/" int] | "sqrt2" | "sqrt3" | "invsqrt2") ["*" ("sqrt2" | "sqrt3")]
//! ```
//!
//! `#` starts a comment running to the end of the line.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::expr::{Expr, LinearForm};
use crate::scalar::{Scalar, Surd};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(String),
    LParen,
    RParen,
    Comma,
    Minus,
    Slash,
    Star,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Number(s) => format!("number `{s}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Star => "`*`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(src: &str) -> Result<Vec<Spanned>> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        let single = match c {
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            ',' => Some(Tok::Comma),
            '-' => Some(Tok::Minus),
            '/' => Some(Tok::Slash),
            '*' => Some(Tok::Star),
            _ => None,
        };
        if let Some(tok) = single {
            out.push(Spanned { tok, line: l0, column: c0 });
            i += 1;
            col += 1;
            continue;
        }
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
        } else if c.is_whitespace() {
            i += 1;
            col += 1;
        } else if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && matches!(chars[i], 'e' | 'E') {
                let mut j = i + 1;
                if j < chars.len() && matches!(chars[j], '+' | '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            col += i - start;
            out.push(Spanned { tok: Tok::Number(text), line: l0, column: c0 });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            col += i - start;
            out.push(Spanned { tok: Tok::Ident(text), line: l0, column: c0 });
        } else {
            return Err(Error::Parse {
                line: l0,
                column: c0,
                expected: vec!["expression".into()],
                found: format!("character `{c}`"),
            });
        }
    }
    out.push(Spanned { tok: Tok::Eof, line, column: col });
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if t.tok != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn fail<T>(&self, expected: &[&str]) -> Result<T> {
        let t = self.peek();
        Err(Error::Parse {
            line: t.line,
            column: t.column,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: t.tok.describe(),
        })
    }

    fn expect(&mut self, tok: Tok) -> Result<()> {
        if self.peek().tok == tok {
            self.bump();
            Ok(())
        } else {
            self.fail(&[&tok.describe()])
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        const HEADS: [&str; 5] = ["`abs`", "`min`", "`max`", "`gm`", "`scale`"];
        let head = self.peek().clone();
        let name = match &head.tok {
            Tok::Ident(s) if matches!(s.as_str(), "abs" | "min" | "max" | "gm" | "scale") => s.clone(),
            _ => return self.fail(&HEADS),
        };
        self.bump();
        self.expect(Tok::LParen)?;
        let node = match name.as_str() {
            "abs" => {
                let a = self.number()?;
                self.expect(Tok::Comma)?;
                let b = self.number()?;
                let form = LinearForm::new(a, b).map_err(|_| Error::Parse {
                    line: head.line,
                    column: head.column,
                    expected: vec!["nonzero linear form".into()],
                    found: "abs(0,0)".into(),
                })?;
                Expr::abs(form)
            }
            "scale" => {
                let at = self.peek().clone();
                let c = self.number()?;
                if c.signum() <= 0 {
                    return Err(Error::Parse {
                        line: at.line,
                        column: at.column,
                        expected: vec!["positive scale factor".into()],
                        found: format!("`{c}`"),
                    });
                }
                self.expect(Tok::Comma)?;
                let child = self.expr()?;
                Expr::scale(c, child)?
            }
            _ => {
                let node: &'static str = match name.as_str() {
                    "min" => "min",
                    "max" => "max",
                    _ => "gm",
                };
                if self.peek().tok == Tok::RParen {
                    return Err(Error::Arity { node, line: head.line, column: head.column });
                }
                let mut children = vec![self.expr()?];
                loop {
                    match self.peek().tok {
                        Tok::Comma => {
                            self.bump();
                            children.push(self.expr()?);
                        }
                        Tok::RParen => break,
                        _ => return self.fail(&["`,`", "`)`"]),
                    }
                }
                match node {
                    "min" => Expr::Min(children),
                    "max" => Expr::Max(children),
                    _ => Expr::GeoMean(children),
                }
            }
        };
        if self.peek().tok != Tok::RParen {
            return self.fail(&["`)`"]);
        }
        self.bump();
        Ok(node)
    }

    fn number(&mut self) -> Result<Scalar> {
        const NUM: [&str; 5] = ["number", "`-`", "`sqrt2`", "`sqrt3`", "`invsqrt2`"];
        let neg = if self.peek().tok == Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        let at = self.peek().clone();
        let mut value = match &at.tok {
            Tok::Number(text) => {
                let v = parse_decimal(text).ok_or_else(|| Error::Parse {
                    line: at.line,
                    column: at.column,
                    expected: vec!["number".into()],
                    found: format!("`{text}`"),
                })?;
                self.bump();
                if self.peek().tok == Tok::Slash {
                    self.bump();
                    let d = self.peek().clone();
                    let den = match &d.tok {
                        Tok::Number(t) => parse_decimal(t).filter(|v| v.is_integer() && !v.is_zero()),
                        _ => None,
                    };
                    let Some(den) = den else {
                        return self.fail(&["nonzero integer denominator"]);
                    };
                    self.bump();
                    Scalar::new(v / den, Surd::One)
                } else {
                    Scalar::new(v, Surd::One)
                }
            }
            Tok::Ident(s) => {
                let v = match s.as_str() {
                    "sqrt2" => Scalar::sqrt2(),
                    "sqrt3" => Scalar::sqrt3(),
                    "invsqrt2" => Scalar::inv_sqrt2(),
                    _ => return self.fail(&NUM),
                };
                self.bump();
                v
            }
            _ => return self.fail(&NUM),
        };
        if self.peek().tok == Tok::Star {
            self.bump();
            let surd = match &self.peek().tok {
                Tok::Ident(s) if s == "sqrt2" => Surd::Sqrt2,
                Tok::Ident(s) if s == "sqrt3" => Surd::Sqrt3,
                _ => return self.fail(&["`sqrt2`", "`sqrt3`"]),
            };
            if !value.is_rational() {
                return self.fail(&["rational factor before `*`"]);
            }
            self.bump();
            value = Scalar::new(value.coef().clone(), surd);
        }
        Ok(if neg { value.neg() } else { value })
    }
}

/// Exact value of a decimal literal such as `12`, `0.25` or `1.5e-3`.
pub fn parse_decimal(text: &str) -> Option<BigRational> {
    let (mantissa, exp) = match text.find(['e', 'E']) {
        Some(i) => (&text[..i], text[i + 1..].parse::<i32>().ok()?),
        None => (text, 0),
    };
    let (int, frac) = match mantissa.split_once('.') {
        Some((a, b)) => (a, b),
        None => (mantissa, ""),
    };
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let digits: BigInt = format!("{int}{frac}").parse().ok()?;
    let shift = exp - i32::try_from(frac.len()).ok()?;
    let ten = BigInt::from(10);
    let r = BigRational::from_integer(digits);
    Some(if shift >= 0 {
        r * BigRational::from_integer(num_traits::pow(ten, shift as usize))
    } else {
        r / BigRational::from_integer(num_traits::pow(ten, (-shift) as usize))
    })
}

/// Parses a number in the DSL's number syntax, e.g. `-3/4` or `invsqrt2`.
pub fn parse_scalar(text: &str) -> Result<Scalar> {
    let mut p = Parser { toks: lex(text)?, pos: 0 };
    let v = p.number()?;
    if p.peek().tok != Tok::Eof {
        return p.fail(&["end of input"]);
    }
    Ok(v)
}

/// Parses the text syntax only.
pub fn parse_dsl(text: &str) -> Result<Expr> {
    let mut p = Parser { toks: lex(text)?, pos: 0 };
    let e = p.expr()?;
    if p.peek().tok != Tok::Eof {
        return p.fail(&["end of input"]);
    }
    Ok(e)
}

/// Parses either syntax; input starting with `{` is read as JSON.
pub fn parse_distance_function(text: &str) -> Result<Expr> {
    if text.trim_start().starts_with('{') {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            expected: vec!["JSON expression tree".into()],
            found: e.to_string(),
        })?;
        from_json(&v)
    } else {
        parse_dsl(text)
    }
}

/// Canonical text form; `parse_dsl(&to_dsl(e)) == e`.
pub fn to_dsl(e: &Expr) -> String {
    e.to_string()
}

pub fn to_json(e: &Expr) -> Value {
    match e {
        Expr::Abs(a) => json!({
            "kind": "abs",
            "a": a.form().a().to_string(),
            "b": a.form().b().to_string(),
        }),
        Expr::Min(c) | Expr::Max(c) | Expr::GeoMean(c) => json!({
            "kind": e.kind(),
            "children": c.iter().map(to_json).collect::<Vec<_>>(),
        }),
        Expr::Scale(k, c) => json!({
            "kind": "scale",
            "c": k.exact().to_string(),
            "child": to_json(c),
        }),
    }
}

fn json_err(msg: impl Into<String>) -> Error {
    Error::InvalidInput(format!("JSON expression: {}", msg.into()))
}

fn json_number(obj: &Map<String, Value>, key: &str) -> Result<Scalar> {
    match obj.get(key) {
        Some(Value::String(s)) => parse_scalar(s),
        Some(Value::Number(n)) => {
            let text = n.to_string();
            let (neg, body) = match text.strip_prefix('-') {
                Some(b) => (true, b),
                None => (false, text.as_str()),
            };
            let v = parse_decimal(body).ok_or_else(|| json_err(format!("bad number {text}")))?;
            let s = Scalar::new(v, Surd::One);
            Ok(if neg { s.neg() } else { s })
        }
        _ => Err(json_err(format!("missing numeric field `{key}`"))),
    }
}

pub fn from_json(v: &Value) -> Result<Expr> {
    let obj = v.as_object().ok_or_else(|| json_err("node is not an object"))?;
    let kind = obj.get("kind").and_then(Value::as_str).ok_or_else(|| json_err("missing `kind`"))?;
    match kind {
        "abs" => Ok(Expr::abs(LinearForm::new(json_number(obj, "a")?, json_number(obj, "b")?)?)),
        "scale" => {
            let child = obj.get("child").ok_or_else(|| json_err("scale without `child`"))?;
            Expr::scale(json_number(obj, "c")?, from_json(child)?)
        }
        "min" | "max" | "gm" => {
            let children = obj
                .get("children")
                .and_then(Value::as_array)
                .ok_or_else(|| json_err(format!("{kind} without `children` array")))?
                .iter()
                .map(from_json)
                .collect::<Result<Vec<_>>>()?;
            match kind {
                "min" => Expr::min(children),
                "max" => Expr::max(children),
                _ => Expr::geo_mean(children),
            }
        }
        other => Err(json_err(format!("unknown kind `{other}`"))),
    }
}
