//! Finite discrete random-variable models for the θ variables of an SRK
//! scheme, with an exact expectation algebra over half-integer powers of
//! the step size `h`.
//!
//! A primitive random variable is `h^(q/2) · ξ` where `ξ` has finite support.
//! Support values may be rational multiples of square roots such as `√3`, so
//! moments are computed in [`Surd`] arithmetic and must come out rational.
//! Polynomials ([`HalfPowerPoly`]) are written in the normalized variables
//! `ξ`; all step-size dependence lives in the `h` exponent of each term.

use crate::rational::{fmt_q, parse_q, q_to_f64, qi};
use crate::{Error, Result, Q};
use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt;

/// Finite sum `Σ r_k √k` over squarefree radicands `k` with rational `r_k`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Surd {
    terms: BTreeMap<u64, Q>,
}

fn squarefree_split(n: u64) -> (u64, u64) {
    // n = g^2 * t with t squarefree
    let mut g = 1u64;
    let mut t = 1u64;
    let mut rest = n;
    let mut p = 2u64;
    while p * p <= rest {
        let mut e = 0;
        while rest % p == 0 {
            rest /= p;
            e += 1;
        }
        g *= p.pow(e / 2);
        if e % 2 == 1 {
            t *= p;
        }
        p += 1;
    }
    (g, t * rest)
}

impl Surd {
    /// The rational `q`.
    pub fn rational(q: Q) -> Self {
        let mut terms = BTreeMap::new();
        if !q.is_zero() {
            terms.insert(1, q);
        }
        Surd { terms }
    }

    /// `coef · √radicand` for a non-negative rational radicand.
    pub fn sqrt_of(coef: Q, radicand: &Q) -> Result<Self> {
        if radicand.is_negative() {
            return Err(Error::Model(format!("square root of negative number {}", fmt_q(radicand))));
        }
        if radicand.is_zero() || coef.is_zero() {
            return Ok(Surd::default());
        }
        let too_big = || Error::Model(format!("radicand {} too large", fmt_q(radicand)));
        let p = radicand.numer().to_u64().ok_or_else(too_big)?;
        let q = radicand.denom().to_u64().ok_or_else(too_big)?;
        let pq = p.checked_mul(q).ok_or_else(too_big)?;
        let (g, t) = squarefree_split(pq);
        let c = coef * Q::new(BigInt::from(g), BigInt::from(q));
        let mut terms = BTreeMap::new();
        terms.insert(t, c);
        Ok(Surd { terms })
    }

    /// Parses `[-][rational][*]sqrt(rational)` or a plain rational.
    pub fn parse(text: &str) -> Result<Self> {
        let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        if let Some(pos) = s.find("sqrt(") {
            if !s.ends_with(')') {
                return Err(Error::Parse(format!("invalid surd `{text}`")));
            }
            let radicand = parse_q(&s[pos + 5..s.len() - 1])?;
            let head = s[..pos].trim_end_matches('*');
            let coef = match head {
                "" | "+" => qi(1),
                "-" => qi(-1),
                h => parse_q(h)?,
            };
            Surd::sqrt_of(coef, &radicand)
        } else {
            Ok(Surd::rational(parse_q(&s)?))
        }
    }

    /// Whether the value is zero.
    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// The value as a rational, if it is one.
    pub fn as_rational(&self) -> Option<Q> {
        match self.terms.len() {
            0 => Some(Q::zero()),
            1 => self.terms.get(&1).cloned(),
            _ => None,
        }
    }

    /// Sum.
    pub fn add(&self, other: &Surd) -> Surd {
        let mut terms = self.terms.clone();
        for (k, v) in &other.terms {
            let e = terms.entry(*k).or_insert_with(Q::zero);
            *e += v;
            if e.is_zero() {
                terms.remove(k);
            }
        }
        Surd { terms }
    }

    /// Product.
    pub fn mul(&self, other: &Surd) -> Surd {
        let mut out = Surd::default();
        for (a, x) in &self.terms {
            for (b, y) in &other.terms {
                let (g, t) = squarefree_split(a * b);
                let mut terms = BTreeMap::new();
                terms.insert(t, x * y * qi(g as i64));
                out = out.add(&Surd { terms });
            }
        }
        out
    }

    /// Product with a rational.
    pub fn scale(&self, q: &Q) -> Surd {
        if q.is_zero() {
            return Surd::default();
        }
        Surd { terms: self.terms.iter().map(|(k, v)| (*k, v * q)).collect() }
    }

    /// Integer power.
    pub fn pow(&self, p: u32) -> Surd {
        let mut acc = Surd::rational(qi(1));
        for _ in 0..p {
            acc = acc.mul(self);
        }
        acc
    }

    /// Nearest float.
    pub fn to_f64(&self) -> f64 {
        self.terms.iter().map(|(k, v)| q_to_f64(v) * (*k as f64).sqrt()).sum()
    }
}

impl fmt::Display for Surd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(k, v)| if *k == 1 { fmt_q(v) } else { format!("{}*sqrt({k})", fmt_q(v)) })
            .collect();
        f.write_str(&parts.join(" + "))
    }
}

/// Monomial in primitive symbols: sorted `(symbol, power)` pairs.
pub type Monomial = Vec<(u32, u32)>;

fn mul_monomials(a: &Monomial, b: &Monomial) -> Monomial {
    let mut out: Monomial = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        if j == b.len() || (i < a.len() && a[i].0 < b[j].0) {
            out.push(a[i]);
            i += 1;
        } else if i == a.len() || b[j].0 < a[i].0 {
            out.push(b[j]);
            j += 1;
        } else {
            out.push((a[i].0, a[i].1 + b[j].1));
            i += 1;
            j += 1;
        }
    }
    out
}

/// Polynomial in primitive symbols and `h^(1/2)` with rational coefficients.
///
/// Terms are keyed by `(h exponent in halves, monomial)`; zero coefficients
/// are never stored.
#[derive(Debug, Clone, PartialEq, Eq, Default, Hash)]
pub struct HalfPowerPoly {
    terms: BTreeMap<(i32, Monomial), Q>,
}

impl HalfPowerPoly {
    /// The zero polynomial.
    pub fn zero() -> Self {
        Self::default()
    }

    /// A rational constant.
    pub fn constant(q: Q) -> Self {
        Self::term(q, 0, Vec::new())
    }

    /// `h^(halves/2)`.
    pub fn h_pow(halves: i32) -> Self {
        Self::term(qi(1), halves, Vec::new())
    }

    /// A single primitive symbol times `h^(halves/2)`.
    pub fn symbol(sym: u32, halves: i32) -> Self {
        Self::term(qi(1), halves, vec![(sym, 1)])
    }

    /// A single term.
    pub fn term(q: Q, halves: i32, mono: Monomial) -> Self {
        let mut terms = BTreeMap::new();
        if !q.is_zero() {
            terms.insert((halves, mono), q);
        }
        HalfPowerPoly { terms }
    }

    /// Iterates `(h exponent in halves, monomial, coefficient)`.
    pub fn terms(&self) -> impl Iterator<Item = (i32, &Monomial, &Q)> {
        self.terms.iter().map(|((e, m), q)| (*e, m, q))
    }

    /// Number of stored terms.
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    /// Whether the polynomial is zero.
    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Whether no primitive symbol occurs.
    pub fn is_deterministic(&self) -> bool {
        self.terms.keys().all(|(_, m)| m.is_empty())
    }

    /// Smallest `h` exponent in halves, or `None` for zero.
    pub fn min_halves(&self) -> Option<i32> {
        self.terms.keys().map(|(e, _)| *e).min()
    }

    /// Coefficient of the symbol-free term `h^(halves/2)`.
    pub fn coefficient(&self, halves: i32) -> Q {
        self.terms.get(&(halves, Vec::new())).cloned().unwrap_or_else(Q::zero)
    }

    /// Terms with `h` exponent below `halves`.
    pub fn truncate_below(&self, halves: i32) -> Self {
        HalfPowerPoly { terms: self.terms.iter().filter(|((e, _), _)| *e < halves).map(|(k, v)| (k.clone(), v.clone())).collect() }
    }

    /// Symbols occurring in the polynomial, sorted.
    pub fn symbols(&self) -> Vec<u32> {
        let mut s: Vec<u32> = self.terms.keys().flat_map(|(_, m)| m.iter().map(|x| x.0)).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    fn add_term(&mut self, key: (i32, Monomial), q: Q) {
        if q.is_zero() {
            return;
        }
        match self.terms.entry(key) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(q);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                *o.get_mut() += q;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    /// Sum.
    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (k, v) in &other.terms {
            out.add_term(k.clone(), v.clone());
        }
        out
    }

    /// In-place sum.
    pub fn add_assign(&mut self, other: &Self) {
        for (k, v) in &other.terms {
            self.add_term(k.clone(), v.clone());
        }
    }

    /// Difference.
    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(&qi(-1)))
    }

    /// Product with a rational.
    pub fn scale(&self, q: &Q) -> Self {
        if q.is_zero() {
            return Self::zero();
        }
        HalfPowerPoly { terms: self.terms.iter().map(|(k, v)| (k.clone(), v * q)).collect() }
    }

    /// Multiplies by `h^(halves/2)`.
    pub fn shift_h(&self, halves: i32) -> Self {
        HalfPowerPoly { terms: self.terms.iter().map(|((e, m), v)| ((e + halves, m.clone()), v.clone())).collect() }
    }

    /// Product.
    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero();
        for ((e1, m1), q1) in &self.terms {
            for ((e2, m2), q2) in &other.terms {
                out.add_term((e1 + e2, mul_monomials(m1, m2)), q1 * q2);
            }
        }
        out
    }

    /// Integer power.
    pub fn pow(&self, p: u32) -> Self {
        let mut acc = Self::constant(qi(1));
        for _ in 0..p {
            acc = acc.mul(self);
        }
        acc
    }

    /// Evaluates with `h` and symbol values given as floats.
    pub fn eval_f64(&self, h: f64, values: &[f64]) -> f64 {
        let sh = h.sqrt();
        self.terms
            .iter()
            .map(|((e, m), q)| {
                let mut v = q_to_f64(q) * sh.powi(*e);
                for &(s, p) in m {
                    v *= values[s as usize].powi(p as i32);
                }
                v
            })
            .sum()
    }

    /// Formats with the given symbol names.
    pub fn display_with(&self, name: &dyn Fn(u32) -> String) -> String {
        if self.terms.is_empty() {
            return "0".into();
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|((e, m), q)| {
                let mut factors: Vec<String> = Vec::new();
                let unit = q.abs().is_one();
                if !unit || (*e == 0 && m.is_empty()) {
                    factors.push(fmt_q(&q.abs()));
                }
                match *e {
                    0 => {}
                    2 => factors.push("h".into()),
                    e if e % 2 == 0 => factors.push(format!("h^{}", e / 2)),
                    e => factors.push(format!("h^({e}/2)")),
                }
                for &(s, p) in m {
                    if p == 1 {
                        factors.push(name(s));
                    } else {
                        factors.push(format!("{}^{p}", name(s)));
                    }
                }
                format!("{}{}", if q.is_negative() { "-" } else { "+" }, factors.join("*"))
            })
            .collect();
        let joined = parts.join(" ");
        joined.strip_prefix('+').unwrap_or(&joined).replace(" +", " + ").replace(" -", " - ")
    }
}

impl fmt::Display for HalfPowerPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display_with(&|s| format!("x{s}")))
    }
}

/// Relation between two index symbols (or an index symbol and a literal).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constraint {
    lhs: IndexArg,
    op: CmpOp,
    rhs: IndexArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CmpOp {
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
}

/// Argument of an indexed symbol: a variable bound by a rule or a literal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IndexArg {
    Var(String),
    Lit(u32),
}

impl IndexArg {
    fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(n) = s.parse::<u32>() {
            Ok(IndexArg::Lit(n))
        } else if !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            Ok(IndexArg::Var(s.to_string()))
        } else {
            Err(Error::Parse(format!("invalid index `{s}`")))
        }
    }

    fn value(&self, b: &HashMap<String, u32>) -> Result<u32> {
        match self {
            IndexArg::Lit(n) => Ok(*n),
            IndexArg::Var(v) => b.get(v).copied().ok_or_else(|| Error::Model(format!("unbound index `{v}`"))),
        }
    }
}

impl Constraint {
    /// Parses `k>l`, `k<l`, `k>=l`, `k<=l`, `k=l`, `k==l` or `k!=l`.
    pub fn parse(s: &str) -> Result<Self> {
        for (tok, op) in [("!=", CmpOp::Ne), ("==", CmpOp::Eq), (">=", CmpOp::Ge), ("<=", CmpOp::Le), ("=", CmpOp::Eq), (">", CmpOp::Gt), ("<", CmpOp::Lt)] {
            if let Some((a, b)) = s.split_once(tok) {
                return Ok(Constraint { lhs: IndexArg::parse(a)?, op, rhs: IndexArg::parse(b)? });
            }
        }
        Err(Error::Parse(format!("invalid index constraint `{s}`")))
    }

    /// Evaluates under the given bindings.
    pub fn holds(&self, b: &HashMap<String, u32>) -> Result<bool> {
        let (x, y) = (self.lhs.value(b)?, self.rhs.value(b)?);
        Ok(match self.op {
            CmpOp::Eq => x == y,
            CmpOp::Ne => x != y,
            CmpOp::Lt => x < y,
            CmpOp::Gt => x > y,
            CmpOp::Le => x <= y,
            CmpOp::Ge => x >= y,
        })
    }
}

/// Index pattern with constraints, e.g. `(k, l)` where `k > l`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexPattern {
    vars: Vec<IndexArg>,
    constraints: Vec<Constraint>,
}

impl IndexPattern {
    /// Builds a pattern from symbol names and constraint strings.
    pub fn new(vars: &[String], constraints: &[String]) -> Result<Self> {
        Ok(IndexPattern {
            vars: vars.iter().map(|v| IndexArg::parse(v)).collect::<Result<_>>()?,
            constraints: constraints.iter().map(|c| Constraint::parse(c)).collect::<Result<_>>()?,
        })
    }

    /// The same pattern with additional constraints.
    pub fn with_constraints(&self, constraints: &[String]) -> Result<Self> {
        let mut out = self.clone();
        for c in constraints {
            out.constraints.push(Constraint::parse(c)?);
        }
        Ok(out)
    }

    /// Number of positions.
    pub fn arity(&self) -> usize {
        self.vars.len()
    }

    /// Extends `bindings` so that the pattern matches `values`; returns
    /// false when a repeated symbol, literal or constraint disagrees.
    pub fn bind(&self, values: &[u32], bindings: &mut HashMap<String, u32>) -> Result<bool> {
        if values.len() != self.vars.len() {
            return Ok(false);
        }
        for (v, &x) in self.vars.iter().zip(values) {
            match v {
                IndexArg::Lit(n) if *n != x => return Ok(false),
                IndexArg::Lit(_) => {}
                IndexArg::Var(name) => match bindings.get(name) {
                    Some(&y) if y != x => return Ok(false),
                    Some(_) => {}
                    None => {
                        bindings.insert(name.clone(), x);
                    }
                },
            }
        }
        Ok(true)
    }

    /// Checks the constraints once all symbols are bound.
    pub fn constraints_hold(&self, bindings: &HashMap<String, u32>) -> Result<bool> {
        for c in &self.constraints {
            if !c.holds(bindings)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Whether `values` match the pattern on its own.
    pub fn matches(&self, values: &[u32]) -> Result<bool> {
        let mut b = HashMap::new();
        Ok(self.bind(values, &mut b)? && self.constraints_hold(&b)?)
    }

    /// All tuples in `{1..m}^arity` matching the pattern, lexicographically.
    pub fn instances(&self, m: u32) -> Result<Vec<Vec<u32>>> {
        let n = self.arity();
        let mut out = Vec::new();
        let mut cur = vec![1u32; n];
        if m == 0 {
            return Ok(out);
        }
        loop {
            if self.matches(&cur)? {
                out.push(cur.clone());
            }
            let mut i = n;
            loop {
                if i == 0 {
                    return Ok(out);
                }
                i -= 1;
                if cur[i] < m {
                    cur[i] += 1;
                    for c in cur.iter_mut().skip(i + 1) {
                        *c = 1;
                    }
                    break;
                }
            }
        }
    }
}

/// Arithmetic expression over `h`, `sqrt(h)`, rationals and indexed symbols.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(Q),
    H,
    SqrtH,
    Call(String, Vec<IndexArg>),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
}

impl Expr {
    /// Parses an expression such as `(I(k)*I(l) + V(k,l))/2`.
    pub fn parse(text: &str) -> Result<Self> {
        let toks = tokenize(text)?;
        let mut p = ExprParser { toks, pos: 0, text };
        let e = p.expr()?;
        if p.pos != p.toks.len() {
            return Err(Error::Parse(format!("trailing input in expression `{text}`")));
        }
        Ok(e)
    }

    /// Names of all indexed symbols referenced.
    pub fn calls(&self, out: &mut Vec<String>) {
        match self {
            Expr::Call(n, _) => out.push(n.clone()),
            Expr::Neg(a) | Expr::Pow(a, _) => a.calls(out),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.calls(out);
                b.calls(out);
            }
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(String),
    Ident(String),
    Sym(char),
}

fn tokenize(text: &str) -> Result<Vec<Tok>> {
    let cs: Vec<char> = text.chars().collect();
    let mut i = 0;
    let mut out = Vec::new();
    while i < cs.len() {
        let c = cs[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let s = i;
            while i < cs.len() && (cs[i].is_ascii_digit() || cs[i] == '.') {
                i += 1;
            }
            out.push(Tok::Num(cs[s..i].iter().collect()));
        } else if c.is_alphabetic() || c == '_' {
            let s = i;
            while i < cs.len() && (cs[i].is_alphanumeric() || cs[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(cs[s..i].iter().collect()));
        } else if "+-*/^(),".contains(c) {
            out.push(Tok::Sym(c));
            i += 1;
        } else {
            return Err(Error::Parse(format!("unexpected `{c}` in expression `{text}`")));
        }
    }
    Ok(out)
}

struct ExprParser<'a> {
    toks: Vec<Tok>,
    pos: usize,
    text: &'a str,
}

impl ExprParser<'_> {
    fn err(&self, what: &str) -> Error {
        Error::Parse(format!("{what} in expression `{}`", self.text))
    }

    fn peek_sym(&self, c: char) -> bool {
        self.toks.get(self.pos) == Some(&Tok::Sym(c))
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.peek_sym(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected `{c}`")))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut e = self.term()?;
        loop {
            if self.peek_sym('+') {
                self.pos += 1;
                e = Expr::Add(Box::new(e), Box::new(self.term()?));
            } else if self.peek_sym('-') {
                self.pos += 1;
                e = Expr::Sub(Box::new(e), Box::new(self.term()?));
            } else {
                return Ok(e);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut e = self.unary()?;
        loop {
            if self.peek_sym('*') {
                self.pos += 1;
                e = Expr::Mul(Box::new(e), Box::new(self.unary()?));
            } else if self.peek_sym('/') {
                self.pos += 1;
                e = Expr::Div(Box::new(e), Box::new(self.unary()?));
            } else {
                return Ok(e);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek_sym('-') {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.peek_sym('+') {
            self.pos += 1;
        }
        let base = self.atom()?;
        if self.peek_sym('^') {
            self.pos += 1;
            match self.toks.get(self.pos) {
                Some(Tok::Num(n)) => {
                    let p: u32 = n.parse().map_err(|_| self.err("exponent must be a non-negative integer"))?;
                    self.pos += 1;
                    return Ok(Expr::Pow(Box::new(base), p));
                }
                _ => return Err(self.err("exponent must be a non-negative integer")),
            }
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.toks.get(self.pos).cloned() {
            Some(Tok::Num(n)) => {
                self.pos += 1;
                Ok(Expr::Num(parse_q(&n)?))
            }
            Some(Tok::Sym('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if name == "h" && !self.peek_sym('(') {
                    return Ok(Expr::H);
                }
                if name == "sqrt" {
                    self.expect('(')?;
                    match self.toks.get(self.pos) {
                        Some(Tok::Ident(x)) if x == "h" => self.pos += 1,
                        _ => return Err(self.err("only sqrt(h) is allowed in expressions")),
                    }
                    self.expect(')')?;
                    return Ok(Expr::SqrtH);
                }
                let mut args = Vec::new();
                if self.peek_sym('(') {
                    self.pos += 1;
                    loop {
                        match self.toks.get(self.pos).cloned() {
                            Some(Tok::Ident(v)) => args.push(IndexArg::Var(v)),
                            Some(Tok::Num(v)) => args.push(IndexArg::parse(&v)?),
                            _ => return Err(self.err("expected an index")),
                        }
                        self.pos += 1;
                        if self.peek_sym(',') {
                            self.pos += 1;
                        } else {
                            self.expect(')')?;
                            break;
                        }
                    }
                }
                Ok(Expr::Call(name, args))
            }
            _ => Err(self.err("expected a value")),
        }
    }
}

/// One support point of a primitive: a surd value and its probability.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportPoint {
    /// Value of the normalized variable, e.g. `"sqrt(3)"` or `"-1"`.
    pub value: String,
    /// Probability as a rational string.
    pub prob: String,
}

/// Family of independent primitive random variables `h^(h_half/2) · ξ`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimitiveSpec {
    pub name: String,
    #[serde(default)]
    pub indices: Vec<String>,
    #[serde(default, rename = "where", skip_serializing_if = "Vec::is_empty")]
    pub constraints: Vec<String>,
    pub h_half: i32,
    pub support: Vec<SupportPoint>,
}

/// Indexed symbol defined by an expression (derived variable or θ).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub name: String,
    #[serde(default)]
    pub indices: Vec<String>,
    #[serde(default, rename = "where", skip_serializing_if = "Vec::is_empty")]
    pub constraints: Vec<String>,
    pub expr: String,
}

/// Serialized form of a random-variable model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub primitives: Vec<PrimitiveSpec>,
    #[serde(default)]
    pub derived: Vec<RuleSpec>,
    pub theta: Vec<RuleSpec>,
}

#[derive(Debug, Clone)]
struct Primitive {
    name: String,
    pattern: IndexPattern,
    h_half: i32,
    support: Vec<(Surd, Q)>,
}

#[derive(Debug, Clone)]
struct Rule {
    name: String,
    pattern: IndexPattern,
    expr: Expr,
}

/// Random-variable model: primitive families, derived symbols and θ rules,
/// all keyed by index patterns so that one model covers every `m`.
#[derive(Debug, Clone)]
pub struct RandomVariableModel {
    spec: ModelSpec,
    primitives: Vec<Primitive>,
    derived: Vec<Rule>,
    theta: Vec<Rule>,
}

impl RandomVariableModel {
    /// Validates a model description.
    pub fn from_spec(spec: ModelSpec) -> Result<Self> {
        let mut primitives = Vec::new();
        for (i, p) in spec.primitives.iter().enumerate() {
            let field = format!("rv_model.primitives[{i}]");
            let pattern = IndexPattern::new(&p.indices, &p.constraints).map_err(|e| Error::scheme(&field, e.to_string()))?;
            let mut support = Vec::new();
            let mut total = Q::zero();
            for pt in &p.support {
                let v = Surd::parse(&pt.value).map_err(|e| Error::scheme(&field, e.to_string()))?;
                let pr = parse_q(&pt.prob).map_err(|e| Error::scheme(&field, e.to_string()))?;
                if !pr.is_positive() {
                    return Err(Error::scheme(&field, "probabilities must be positive"));
                }
                total += &pr;
                support.push((v, pr));
            }
            if total != qi(1) {
                return Err(Error::scheme(&field, format!("probabilities sum to {} instead of 1", fmt_q(&total))));
            }
            primitives.push(Primitive { name: p.name.clone(), pattern, h_half: p.h_half, support });
        }
        let rules = |list: &[RuleSpec], what: &str| -> Result<Vec<Rule>> {
            list.iter()
                .enumerate()
                .map(|(i, r)| {
                    let field = format!("rv_model.{what}[{i}]");
                    Ok(Rule {
                        name: r.name.clone(),
                        pattern: IndexPattern::new(&r.indices, &r.constraints).map_err(|e| Error::scheme(&field, e.to_string()))?,
                        expr: Expr::parse(&r.expr).map_err(|e| Error::scheme(&field, e.to_string()))?,
                    })
                })
                .collect()
        };
        let derived = rules(&spec.derived, "derived")?;
        let theta = rules(&spec.theta, "theta")?;
        Ok(RandomVariableModel { spec, primitives, derived, theta })
    }

    /// The description this model was built from.
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Expands the model for noise dimension `m`.
    pub fn instantiate(&self, m: u32) -> Result<ModelInstance> {
        if m == 0 {
            return Err(Error::Domain("noise dimension m must be at least 1".into()));
        }
        let mut symbols = Vec::new();
        let mut lookup = HashMap::new();
        for (fi, p) in self.primitives.iter().enumerate() {
            for idx in p.pattern.instances(m)? {
                lookup.insert((p.name.clone(), idx.clone()), symbols.len() as u32);
                symbols.push(SymbolInfo { family: fi, indices: idx });
            }
        }
        let mut inst = ModelInstance { model: self.clone(), m, symbols, lookup, thetas: Vec::new() };
        let mut thetas = Vec::new();
        for rule in &self.theta {
            for idx in rule.pattern.instances(m)? {
                if thetas.iter().any(|t: &ThetaInstance| t.name == rule.name && t.indices == idx) {
                    continue;
                }
                let poly = inst.resolve(&rule.name, &idx)?;
                thetas.push(ThetaInstance { name: rule.name.clone(), indices: idx, poly });
            }
        }
        inst.thetas = thetas;
        Ok(inst)
    }
}

#[derive(Debug, Clone)]
struct SymbolInfo {
    family: usize,
    indices: Vec<u32>,
}

/// A θ variable at concrete indices with its polynomial.
#[derive(Debug, Clone)]
pub struct ThetaInstance {
    pub name: String,
    pub indices: Vec<u32>,
    pub poly: HalfPowerPoly,
}

impl ThetaInstance {
    /// Display label such as `T2(1,2)`.
    pub fn label(&self) -> String {
        indexed_label(&self.name, &self.indices)
    }
}

fn indexed_label(name: &str, idx: &[u32]) -> String {
    if idx.is_empty() {
        name.to_string()
    } else {
        let parts: Vec<String> = idx.iter().map(u32::to_string).collect();
        format!("{name}({})", parts.join(","))
    }
}

/// Model expanded for a fixed noise dimension.
#[derive(Debug, Clone)]
pub struct ModelInstance {
    model: RandomVariableModel,
    m: u32,
    symbols: Vec<SymbolInfo>,
    lookup: HashMap<(String, Vec<u32>), u32>,
    thetas: Vec<ThetaInstance>,
}

const MAX_DEPTH: usize = 64;

impl ModelInstance {
    /// Noise dimension.
    pub fn m(&self) -> u32 {
        self.m
    }

    /// Number of primitive symbols.
    pub fn symbol_count(&self) -> usize {
        self.symbols.len()
    }

    /// Name of a primitive symbol, e.g. `I(2)`.
    pub fn symbol_name(&self, s: u32) -> String {
        let info = &self.symbols[s as usize];
        indexed_label(&self.model.primitives[info.family].name, &info.indices)
    }

    /// Support of the normalized variable behind a symbol.
    pub fn support(&self, s: u32) -> &[(Surd, Q)] {
        &self.model.primitives[self.symbols[s as usize].family].support
    }

    /// `h` exponent (in halves) attached to a symbol.
    pub fn symbol_h_half(&self, s: u32) -> i32 {
        self.model.primitives[self.symbols[s as usize].family].h_half
    }

    /// θ variables at this `m`.
    pub fn thetas(&self) -> &[ThetaInstance] {
        &self.thetas
    }

    /// Polynomial of a primitive, derived or θ symbol at concrete indices.
    pub fn resolve(&self, name: &str, idx: &[u32]) -> Result<HalfPowerPoly> {
        self.resolve_depth(name, idx, 0)
    }

    fn resolve_depth(&self, name: &str, idx: &[u32], depth: usize) -> Result<HalfPowerPoly> {
        if depth > MAX_DEPTH {
            return Err(Error::Model(format!("definition of `{name}` is recursive")));
        }
        if let Some(&s) = self.lookup.get(&(name.to_string(), idx.to_vec())) {
            return Ok(HalfPowerPoly::symbol(s, self.symbol_h_half(s)));
        }
        if let Some(p) = self.model.primitives.iter().find(|p| p.name == name) {
            if idx.iter().any(|&j| j == 0 || j > self.m) || p.pattern.arity() == idx.len() {
                return Err(Error::Model(format!("`{}` is not defined for m = {}", indexed_label(name, idx), self.m)));
            }
        }
        for rule in self.model.derived.iter().chain(self.model.theta.iter()) {
            if rule.name != name {
                continue;
            }
            let mut b = HashMap::new();
            if rule.pattern.bind(idx, &mut b)? && rule.pattern.constraints_hold(&b)? {
                return self.eval_depth(&rule.expr, &b, depth + 1);
            }
        }
        Err(Error::Model(format!("unknown symbol `{}`", indexed_label(name, idx))))
    }

    /// Evaluates an expression with the given index bindings.
    pub fn eval(&self, e: &Expr, b: &HashMap<String, u32>) -> Result<HalfPowerPoly> {
        self.eval_depth(e, b, 0)
    }

    fn eval_depth(&self, e: &Expr, b: &HashMap<String, u32>, depth: usize) -> Result<HalfPowerPoly> {
        Ok(match e {
            Expr::Num(q) => HalfPowerPoly::constant(q.clone()),
            Expr::H => HalfPowerPoly::h_pow(2),
            Expr::SqrtH => HalfPowerPoly::h_pow(1),
            Expr::Call(name, args) => {
                let idx = args.iter().map(|a| a.value(b)).collect::<Result<Vec<u32>>>()?;
                self.resolve_depth(name, &idx, depth)?
            }
            Expr::Neg(a) => self.eval_depth(a, b, depth)?.scale(&qi(-1)),
            Expr::Add(x, y) => self.eval_depth(x, b, depth)?.add(&self.eval_depth(y, b, depth)?),
            Expr::Sub(x, y) => self.eval_depth(x, b, depth)?.sub(&self.eval_depth(y, b, depth)?),
            Expr::Mul(x, y) => self.eval_depth(x, b, depth)?.mul(&self.eval_depth(y, b, depth)?),
            Expr::Pow(x, p) => self.eval_depth(x, b, depth)?.pow(*p),
            Expr::Div(x, y) => {
                let num = self.eval_depth(x, b, depth)?;
                let den = self.eval_depth(y, b, depth)?;
                let mut it = den.terms();
                match (it.next(), it.next()) {
                    (Some((e, m, q)), None) if m.is_empty() => num.scale(&q.recip()).shift_h(-e),
                    _ => return Err(Error::Model(format!("division by non-monomial `{den}`"))),
                }
            }
        })
    }

    /// Formats a polynomial with this instance's symbol names.
    pub fn display(&self, p: &HalfPowerPoly) -> String {
        p.display_with(&|s| self.symbol_name(s))
    }

    /// Exact moment `E(ξ_s^p)` of a normalized primitive.
    pub fn moment(&self, s: u32, p: u32) -> Surd {
        self.support(s).iter().fold(Surd::default(), |acc, (v, pr)| acc.add(&v.pow(p).scale(pr)))
    }

    /// Exact expectation, using independence of distinct primitives.
    pub fn expect(&self, expr: &HalfPowerPoly) -> Result<HalfPowerPoly> {
        let mut cache: HashMap<(u32, u32), Surd> = HashMap::new();
        let mut out = HalfPowerPoly::zero();
        for (e, mono, q) in expr.terms() {
            let mut acc = Surd::rational(q.clone());
            for &(s, p) in mono {
                if s as usize >= self.symbols.len() {
                    return Err(Error::Model(format!("unknown primitive symbol x{s}")));
                }
                let m = cache.entry((s, p)).or_insert_with(|| self.moment(s, p));
                acc = acc.mul(m);
                if acc.is_zero() {
                    break;
                }
            }
            let value = acc.as_rational().ok_or_else(|| {
                Error::Model(format!("expectation of term `{}` is irrational: {acc}", self.display(&HalfPowerPoly::term(q.clone(), e, mono.clone()))))
            })?;
            out.add_assign(&HalfPowerPoly::term(value, e, Vec::new()));
        }
        Ok(out)
    }

    /// Precomputes samplers for all primitives at step size `h`.
    pub fn sampler(&self) -> Sampler {
        Sampler {
            prims: self
                .symbols
                .iter()
                .map(|info| {
                    let p = &self.model.primitives[info.family];
                    let mut cum = 0.0;
                    let mut cut = Vec::new();
                    let mut values = Vec::new();
                    for (i, (v, pr)) in p.support.iter().enumerate() {
                        cum += q_to_f64(pr);
                        cut.push(if i + 1 == p.support.len() { f64::INFINITY } else { cum });
                        values.push(v.to_f64());
                    }
                    PrimSampler { cut, values }
                })
                .collect(),
        }
    }

    /// Draws all θ values at step size `h`, in the order of [`Self::thetas`].
    pub fn sample(&self, sampler: &Sampler, h: f64, rng: &mut impl RngCore) -> Result<Vec<f64>> {
        if !(h > 0.0) {
            return Err(Error::Domain(format!("step size must be positive, got {h}")));
        }
        let mut xi = vec![0.0; self.symbols.len()];
        sampler.draw(rng, &mut xi);
        Ok(self.thetas.iter().map(|t| t.poly.eval_f64(h, &xi)).collect())
    }
}

#[derive(Debug, Clone)]
struct PrimSampler {
    cut: Vec<f64>,
    values: Vec<f64>,
}

/// Inverse-CDF samplers for every primitive symbol of an instance.
#[derive(Debug, Clone)]
pub struct Sampler {
    prims: Vec<PrimSampler>,
}

impl Sampler {
    /// Fills `out[s]` with a draw of the normalized variable `ξ_s`.
    #[inline]
    pub fn draw(&self, rng: &mut impl RngCore, out: &mut [f64]) {
        for (p, slot) in self.prims.iter().zip(out.iter_mut()) {
            let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            let mut k = 0;
            while u >= p.cut[k] {
                k += 1;
            }
            *slot = p.values[k];
        }
    }

    /// Number of primitive symbols.
    pub fn len(&self) -> usize {
        self.prims.len()
    }

    /// Whether there is no primitive.
    pub fn is_empty(&self) -> bool {
        self.prims.is_empty()
    }
}

/// Result for one θ monomial of the moment condition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MomentRecord {
    /// Monomial as `(θ index, power)` pairs.
    pub monomial: Vec<(usize, u32)>,
    /// Human-readable monomial.
    pub label: String,
    /// Total power Σp.
    pub total_power: u32,
    /// Lowest `h` exponent (halves) of the expectation; `None` when it vanishes.
    pub lowest_halves: Option<i32>,
    pub pass: bool,
}

/// Report of [`check_moment_condition`].
#[derive(Debug, Clone)]
pub struct MomentReport {
    pub records: Vec<MomentRecord>,
}

impl MomentReport {
    /// Whether every monomial passed.
    pub fn passed(&self) -> bool {
        self.records.iter().all(|r| r.pass)
    }
}

/// Checks that `E(θ_1^p_1 ⋯ θ_κ^p_κ) = O(h^(Σp/2))` for every monomial with
/// `1 ≤ Σp ≤ max_total_power` over the θ variables of `inst`.
pub fn check_moment_condition(inst: &ModelInstance, max_total_power: u32) -> Result<MomentReport> {
    let n = inst.thetas().len();
    let mut records = Vec::new();
    let mut powers_cache: Vec<Vec<HalfPowerPoly>> = inst
        .thetas()
        .iter()
        .map(|t| vec![HalfPowerPoly::constant(qi(1)), t.poly.clone()])
        .collect();
    let mut pow_of = |i: usize, p: u32| -> HalfPowerPoly {
        while powers_cache[i].len() <= p as usize {
            let next = powers_cache[i].last().expect("non-empty").mul(&powers_cache[i][1]);
            powers_cache[i].push(next);
        }
        powers_cache[i][p as usize].clone()
    };
    let mut exps: Vec<Vec<u32>> = Vec::new();
    fn rec(i: usize, left: u32, cur: &mut Vec<u32>, n: usize, out: &mut Vec<Vec<u32>>) {
        if i == n {
            out.push(cur.clone());
            return;
        }
        for p in 0..=left {
            cur.push(p);
            rec(i + 1, left - p, cur, n, out);
            cur.pop();
        }
    }
    rec(0, max_total_power, &mut Vec::new(), n, &mut exps);
    for e in exps {
        let total: u32 = e.iter().sum();
        if total == 0 {
            continue;
        }
        let mut poly = HalfPowerPoly::constant(qi(1));
        let mut mono = Vec::new();
        let mut label = Vec::new();
        for (i, &p) in e.iter().enumerate() {
            if p > 0 {
                poly = poly.mul(&pow_of(i, p));
                mono.push((i, p));
                label.push(if p == 1 { inst.thetas()[i].label() } else { format!("{}^{p}", inst.thetas()[i].label()) });
            }
        }
        let ex = inst.expect(&poly)?;
        let lowest = ex.min_halves();
        records.push(MomentRecord {
            monomial: mono,
            label: label.join("*"),
            total_power: total,
            lowest_halves: lowest,
            pass: lowest.is_none_or(|l| l >= total as i32),
        });
    }
    Ok(MomentReport { records })
}
