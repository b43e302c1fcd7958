//! Scalar expressions over named state variables.
//!
//! Expressions are small immutable trees. Every constructor folds the local
//! identities (`0 + e`, `e * 1`, constant arithmetic, ...) so that the trees
//! produced by repeated differentiation stay compact.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivByZero,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VarTableError {
    #[error("variable table is empty")]
    Empty,
    #[error("duplicate variable name `{0}`")]
    Duplicate(String),
    #[error("invalid variable name `{0}`")]
    InvalidName(String),
}

/// Ordered list of coordinate names. The order fixes the coordinate
/// convention used by every vector and matrix in the crate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarTable {
    names: Vec<String>,
}

impl VarTable {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self, VarTableError> {
        if names.is_empty() {
            return Err(VarTableError::Empty);
        }
        let mut out: Vec<String> = Vec::with_capacity(names.len());
        for name in names {
            let name = name.as_ref();
            if !is_identifier(name) || FUNCTIONS.contains(&name) {
                return Err(VarTableError::InvalidName(name.to_string()));
            }
            if out.iter().any(|n| n == name) {
                return Err(VarTableError::Duplicate(name.to_string()));
            }
            out.push(name.to_string());
        }
        Ok(Self { names: out })
    }

    /// `prefix1 .. prefixN`.
    pub fn numbered(prefix: &str, count: usize) -> Result<Self, VarTableError> {
        let names: Vec<String> = (1..=count).map(|i| format!("{prefix}{i}")).collect();
        Self::new(&names)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// This table followed by `extra`; fails on clashes.
    pub fn extended<S: AsRef<str>>(&self, extra: &[S]) -> Result<Self, VarTableError> {
        let mut names = self.names.clone();
        names.extend(extra.iter().map(|s| s.as_ref().to_string()));
        Self::new(&names)
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

const FUNCTIONS: [&str; 3] = ["sin", "cos", "exp"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Constant(f64),
    Var(usize),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    /// Integer power; the exponent is never 0 or 1 after simplification.
    Pow(Box<Expr>, i32),
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Constant(c)
    }

    pub fn zero() -> Expr {
        Expr::Constant(0.0)
    }

    pub fn one() -> Expr {
        Expr::Constant(1.0)
    }

    pub fn var(index: usize) -> Expr {
        Expr::Var(index)
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Expr::Constant(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_constant() == Some(0.0)
    }

    fn is_one(&self) -> bool {
        self.as_constant() == Some(1.0)
    }

    /// True when the expression contains no variables.
    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Constant(_) => true,
            Expr::Var(_) => false,
            Expr::Unary(_, a) | Expr::Pow(a, _) => a.is_constant(),
            Expr::Binary(_, a, b) => a.is_constant() && b.is_constant(),
        }
    }

    /// Largest variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Constant(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Unary(_, a) | Expr::Pow(a, _) => a.max_var(),
            Expr::Binary(_, a, b) => match (a.max_var(), b.max_var()) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (x, y) => x.or(y),
            },
        }
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Constant(x), Expr::Constant(y)) => Expr::Constant(x + y),
            _ if a.is_zero() => b,
            _ if b.is_zero() => a,
            (_, Expr::Unary(UnaryOp::Neg, inner)) => Expr::sub(a, (**inner).clone()),
            _ => Expr::Binary(BinaryOp::Add, Box::new(a), Box::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Constant(x), Expr::Constant(y)) => Expr::Constant(x - y),
            _ if b.is_zero() => a,
            _ if a.is_zero() => Expr::neg(b),
            _ if a == b => Expr::zero(),
            (_, Expr::Unary(UnaryOp::Neg, inner)) => Expr::add(a, (**inner).clone()),
            _ => Expr::Binary(BinaryOp::Sub, Box::new(a), Box::new(b)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Constant(x), Expr::Constant(y)) => Expr::Constant(x * y),
            _ if a.is_zero() || b.is_zero() => Expr::zero(),
            _ if a.is_one() => b,
            _ if b.is_one() => a,
            (Expr::Constant(c), _) if *c == -1.0 => Expr::neg(b),
            (_, Expr::Constant(c)) if *c == -1.0 => Expr::neg(a),
            _ => Expr::Binary(BinaryOp::Mul, Box::new(a), Box::new(b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Constant(x), Expr::Constant(y)) if *y != 0.0 => Expr::Constant(x / y),
            _ if a.is_zero() => Expr::zero(),
            _ if b.is_one() => a,
            _ => Expr::Binary(BinaryOp::Div, Box::new(a), Box::new(b)),
        }
    }

    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Constant(c) => Expr::Constant(-c),
            Expr::Unary(UnaryOp::Neg, inner) => *inner,
            other => Expr::Unary(UnaryOp::Neg, Box::new(other)),
        }
    }

    pub fn sin(a: Expr) -> Expr {
        match a {
            Expr::Constant(c) => Expr::Constant(c.sin()),
            other => Expr::Unary(UnaryOp::Sin, Box::new(other)),
        }
    }

    pub fn cos(a: Expr) -> Expr {
        match a {
            Expr::Constant(c) => Expr::Constant(c.cos()),
            other => Expr::Unary(UnaryOp::Cos, Box::new(other)),
        }
    }

    pub fn exp(a: Expr) -> Expr {
        match a {
            Expr::Constant(c) => Expr::Constant(c.exp()),
            other => Expr::Unary(UnaryOp::Exp, Box::new(other)),
        }
    }

    pub fn unary(op: UnaryOp, a: Expr) -> Expr {
        match op {
            UnaryOp::Neg => Expr::neg(a),
            UnaryOp::Sin => Expr::sin(a),
            UnaryOp::Cos => Expr::cos(a),
            UnaryOp::Exp => Expr::exp(a),
        }
    }

    pub fn binary(op: BinaryOp, a: Expr, b: Expr) -> Expr {
        match op {
            BinaryOp::Add => Expr::add(a, b),
            BinaryOp::Sub => Expr::sub(a, b),
            BinaryOp::Mul => Expr::mul(a, b),
            BinaryOp::Div => Expr::div(a, b),
        }
    }

    pub fn powi(a: Expr, k: i32) -> Expr {
        if k == 0 {
            return Expr::one();
        }
        if k == 1 {
            return a;
        }
        match a {
            Expr::Constant(c) if c.powi(k).is_finite() => Expr::Constant(c.powi(k)),
            Expr::Pow(inner, j) if j.checked_mul(k).is_some() => Expr::powi(*inner, j * k),
            other => Expr::Pow(Box::new(other), k),
        }
    }

    /// Rebuilds the tree bottom-up through the folding constructors.
    pub fn simplify(&self) -> Expr {
        match self {
            Expr::Constant(_) | Expr::Var(_) => self.clone(),
            Expr::Unary(op, a) => Expr::unary(*op, a.simplify()),
            Expr::Binary(op, a, b) => Expr::binary(*op, a.simplify(), b.simplify()),
            Expr::Pow(a, k) => Expr::powi(a.simplify(), *k),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        Ok(match self {
            Expr::Constant(c) => *c,
            Expr::Var(i) => x[*i],
            Expr::Unary(op, a) => {
                let v = a.eval(x)?;
                match op {
                    UnaryOp::Neg => -v,
                    UnaryOp::Sin => v.sin(),
                    UnaryOp::Cos => v.cos(),
                    UnaryOp::Exp => v.exp(),
                }
            }
            Expr::Binary(op, a, b) => {
                let u = a.eval(x)?;
                let v = b.eval(x)?;
                match op {
                    BinaryOp::Add => u + v,
                    BinaryOp::Sub => u - v,
                    BinaryOp::Mul => u * v,
                    BinaryOp::Div => {
                        if v == 0.0 {
                            return Err(EvalError::DivByZero);
                        }
                        u / v
                    }
                }
            }
            Expr::Pow(a, k) => {
                let v = a.eval(x)?;
                if *k < 0 && v == 0.0 {
                    return Err(EvalError::DivByZero);
                }
                v.powi(*k)
            }
        })
    }

    /// Exact partial derivative with respect to variable `i`.
    pub fn diff(&self, i: usize) -> Expr {
        let d = match self {
            Expr::Constant(_) => Expr::zero(),
            Expr::Var(j) => {
                if *j == i {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Expr::Unary(op, a) => {
                let da = a.diff(i);
                if da.is_zero() {
                    return Expr::zero();
                }
                match op {
                    UnaryOp::Neg => Expr::neg(da),
                    UnaryOp::Sin => Expr::mul(Expr::cos((**a).clone()), da),
                    UnaryOp::Cos => Expr::neg(Expr::mul(Expr::sin((**a).clone()), da)),
                    UnaryOp::Exp => Expr::mul(self.clone(), da),
                }
            }
            Expr::Binary(op, a, b) => {
                let da = a.diff(i);
                let db = b.diff(i);
                match op {
                    BinaryOp::Add => Expr::add(da, db),
                    BinaryOp::Sub => Expr::sub(da, db),
                    BinaryOp::Mul => Expr::add(
                        Expr::mul(da, (**b).clone()),
                        Expr::mul((**a).clone(), db),
                    ),
                    BinaryOp::Div => {
                        if db.is_zero() {
                            Expr::div(da, (**b).clone())
                        } else {
                            Expr::div(
                                Expr::sub(
                                    Expr::mul(da, (**b).clone()),
                                    Expr::mul((**a).clone(), db),
                                ),
                                Expr::powi((**b).clone(), 2),
                            )
                        }
                    }
                }
            }
            Expr::Pow(a, k) => {
                let da = a.diff(i);
                Expr::mul(
                    Expr::mul(Expr::constant(*k as f64), Expr::powi((**a).clone(), k - 1)),
                    da,
                )
            }
        };
        d.simplify()
    }

    /// Replaces `Var(j)` with `table[j]`.
    pub fn substitute(&self, table: &[Expr]) -> Expr {
        match self {
            Expr::Constant(_) => self.clone(),
            Expr::Var(j) => table[*j].clone(),
            Expr::Unary(op, a) => Expr::unary(*op, a.substitute(table)),
            Expr::Binary(op, a, b) => Expr::binary(*op, a.substitute(table), b.substitute(table)),
            Expr::Pow(a, k) => Expr::powi(a.substitute(table), *k),
        }
    }

    /// Fully parenthesized infix text using the names in `vars`.
    pub fn display<'a>(&'a self, vars: &'a VarTable) -> ExprDisplay<'a> {
        ExprDisplay { expr: self, vars }
    }

    pub fn to_text(&self, vars: &VarTable) -> String {
        self.display(vars).to_string()
    }

    pub fn node_count(&self) -> usize {
        match self {
            Expr::Constant(_) | Expr::Var(_) => 1,
            Expr::Unary(_, a) | Expr::Pow(a, _) => 1 + a.node_count(),
            Expr::Binary(_, a, b) => 1 + a.node_count() + b.node_count(),
        }
    }
}

pub struct ExprDisplay<'a> {
    expr: &'a Expr,
    vars: &'a VarTable,
}

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(self.expr, self.vars, f)
    }
}

fn write_expr(e: &Expr, vars: &VarTable, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match e {
        Expr::Constant(c) => {
            if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) {
                write!(f, "(-{:?})", -c)
            } else {
                write!(f, "{c:?}")
            }
        }
        Expr::Var(i) => write!(f, "{}", vars.name(*i)),
        Expr::Unary(op, a) => {
            let name = match op {
                UnaryOp::Neg => {
                    write!(f, "(-")?;
                    write_expr(a, vars, f)?;
                    return write!(f, ")");
                }
                UnaryOp::Sin => "sin",
                UnaryOp::Cos => "cos",
                UnaryOp::Exp => "exp",
            };
            write!(f, "{name}(")?;
            write_expr(a, vars, f)?;
            write!(f, ")")
        }
        Expr::Binary(op, a, b) => {
            let sym = match op {
                BinaryOp::Add => "+",
                BinaryOp::Sub => "-",
                BinaryOp::Mul => "*",
                BinaryOp::Div => "/",
            };
            write!(f, "(")?;
            write_expr(a, vars, f)?;
            write!(f, " {sym} ")?;
            write_expr(b, vars, f)?;
            write!(f, ")")
        }
        Expr::Pow(a, k) => {
            write!(f, "(")?;
            write_expr(a, vars, f)?;
            write!(f, "^{k})")
        }
    }
}

// ---------------------------------------------------------------------------
// Parser

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number { value: f64, integral: bool },
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn lex(text: &str) -> Result<Vec<(usize, Token)>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            '+' => Token::Plus,
            '-' => Token::Minus,
            '*' => Token::Star,
            '/' => Token::Slash,
            '^' => Token::Caret,
            '(' => Token::LParen,
            ')' => Token::RParen,
            c if c.is_ascii_digit() || c == '.' => {
                let mut j = i;
                let mut integral = true;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                if j < chars.len() && chars[j] == '.' {
                    integral = false;
                    j += 1;
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                }
                if j < chars.len() && (chars[j] == 'e' || chars[j] == 'E') {
                    let mut k = j + 1;
                    if k < chars.len() && (chars[k] == '+' || chars[k] == '-') {
                        k += 1;
                    }
                    if k < chars.len() && chars[k].is_ascii_digit() {
                        integral = false;
                        while k < chars.len() && chars[k].is_ascii_digit() {
                            k += 1;
                        }
                        j = k;
                    }
                }
                let literal: String = chars[i..j].iter().collect();
                let value: f64 = literal.parse().map_err(|_| ParseError::Syntax {
                    position: start,
                    message: format!("malformed number `{literal}`"),
                })?;
                i = j;
                out.push((start, Token::Number { value, integral }));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut j = i;
                while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                let name: String = chars[i..j].iter().collect();
                i = j;
                out.push((start, Token::Ident(name)));
                continue;
            }
            other => {
                return Err(ParseError::Syntax {
                    position: start,
                    message: format!("unexpected character `{other}`"),
                })
            }
        };
        out.push((start, tok));
        i += 1;
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    end: usize,
    vars: &'a VarTable,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn position(&self) -> usize {
        self.tokens.get(self.pos).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            position: self.position(),
            message: message.into(),
        })
    }

    fn expression(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.next();
                    lhs = Expr::add(lhs, self.term()?);
                }
                Some(Token::Minus) => {
                    self.next();
                    lhs = Expr::sub(lhs, self.term()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(Token::Star) => {
                    self.next();
                    lhs = Expr::mul(lhs, self.unary()?);
                }
                Some(Token::Slash) => {
                    self.next();
                    lhs = Expr::div(lhs, self.unary()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(Token::Minus) => {
                self.next();
                Ok(Expr::neg(self.unary()?))
            }
            Some(Token::Plus) => {
                self.next();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.peek() == Some(&Token::Caret) {
            self.next();
            let k = self.exponent()?;
            return Ok(Expr::powi(base, k));
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<i32, ParseError> {
        let sign = match self.peek() {
            Some(Token::Minus) => {
                self.next();
                -1i64
            }
            Some(Token::Plus) => {
                self.next();
                1
            }
            _ => 1,
        };
        let k = match self.next() {
            Some(Token::Number {
                value,
                integral: true,
            }) if value <= i32::MAX as f64 => sign * value as i64,
            Some(Token::Ident(name)) => {
                self.pos -= 1;
                if self.vars.index_of(&name).is_none() && !FUNCTIONS.contains(&name.as_str()) {
                    return Err(ParseError::UnknownVariable(name));
                }
                return self.error("exponent must be an integer literal");
            }
            _ => {
                self.pos = self.pos.saturating_sub(1);
                return self.error("exponent must be an integer literal");
            }
        };
        let mut k = k;
        if self.peek() == Some(&Token::Caret) {
            self.next();
            let inner = self.exponent()?;
            k = match k.checked_pow(inner.max(0) as u32) {
                Some(v) if inner >= 0 => v,
                _ => return self.error("exponent out of range"),
            };
        }
        i32::try_from(k).or_else(|_| self.error("exponent out of range"))
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let position = self.position();
        match self.next() {
            Some(Token::Number { value, .. }) => Ok(Expr::Constant(value)),
            Some(Token::LParen) => {
                let e = self.expression()?;
                if self.next() != Some(Token::RParen) {
                    self.pos -= 1;
                    return self.error("expected `)`");
                }
                Ok(e)
            }
            Some(Token::Ident(name)) => {
                if self.peek() == Some(&Token::LParen) {
                    let op = match name.as_str() {
                        "sin" => UnaryOp::Sin,
                        "cos" => UnaryOp::Cos,
                        "exp" => UnaryOp::Exp,
                        _ => {
                            return Err(ParseError::Syntax {
                                position,
                                message: format!("unknown function `{name}`"),
                            })
                        }
                    };
                    self.next();
                    let arg = self.expression()?;
                    if self.next() != Some(Token::RParen) {
                        self.pos -= 1;
                        return self.error("expected `)` after function argument");
                    }
                    return Ok(Expr::unary(op, arg));
                }
                match self.vars.index_of(&name) {
                    Some(i) => Ok(Expr::Var(i)),
                    None => Err(ParseError::UnknownVariable(name)),
                }
            }
            Some(_) => {
                self.pos -= 1;
                self.error("expected a number, variable, function call or `(`")
            }
            None => self.error("unexpected end of input"),
        }
    }
}

/// Parses infix text against `vars`.
pub fn parse(text: &str, vars: &VarTable) -> Result<Expr, ParseError> {
    let tokens = lex(text)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        end: text.chars().count(),
        vars,
    };
    let e = p.expression()?;
    if p.pos < p.tokens.len() {
        return p.error("unexpected trailing input");
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars5() -> VarTable {
        VarTable::numbered("x", 5).unwrap()
    }

    /// Deterministic points in [-1, 1]^n.
    fn points(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        (0..count)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        state = state
                            .wrapping_mul(6364136223846793005)
                            .wrapping_add(1442695040888963407);
                        ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
                    })
                    .collect()
            })
            .collect()
    }

    fn central_difference(e: &Expr, x: &[f64], i: usize, h: f64) -> f64 {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += h;
        xm[i] -= h;
        (e.eval(&xp).unwrap() - e.eval(&xm).unwrap()) / (2.0 * h)
    }

    #[test]
    fn parses_lambda_of_motivating_example() {
        let v = vars5();
        let e = parse("x5 * exp(-x4)", &v).unwrap();
        let expected = Expr::mul(Expr::var(4), Expr::exp(Expr::neg(Expr::var(3))));
        assert_eq!(e, expected);
    }

    #[test]
    fn parses_circle_constraint() {
        let v = VarTable::new(&["x1", "x2", "x3", "w1", "w2"]).unwrap();
        let e = parse("x1^2 + x2^2 - 1", &v).unwrap();
        let x = [0.6, 0.8, 0.0, 0.3, 0.1];
        assert!(e.eval(&x).unwrap().abs() < 1e-15);
    }

    #[test]
    fn unknown_identifier_in_exponent() {
        let err = parse("x4 ^ y", &vars5()).unwrap_err();
        assert_eq!(err, ParseError::UnknownVariable("y".into()));
        assert_eq!(
            parse("x4 + z", &vars5()).unwrap_err(),
            ParseError::UnknownVariable("z".into())
        );
    }

    #[test]
    fn syntax_errors_carry_position() {
        match parse("x1 + * x2", &vars5()).unwrap_err() {
            ParseError::Syntax { position, .. } => assert_eq!(position, 5),
            e => panic!("unexpected {e:?}"),
        }
        assert!(matches!(
            parse("(x1 + x2", &vars5()),
            Err(ParseError::Syntax { .. })
        ));
        assert!(matches!(
            parse("x1 ^ 2.5", &vars5()),
            Err(ParseError::Syntax { .. })
        ));
        assert!(matches!(
            parse("tan(x1)", &vars5()),
            Err(ParseError::Syntax { .. })
        ));
        assert!(matches!(parse("", &vars5()), Err(ParseError::Syntax { .. })));
    }

    #[test]
    fn precedence_rules() {
        let v = vars5();
        let x = [2.0, 3.0, 0.0, 0.0, 0.0];
        // ^ binds tighter than unary minus
        assert_eq!(parse("-x1^2", &v).unwrap().eval(&x).unwrap(), -4.0);
        assert_eq!(parse("x1 - x2 - 1", &v).unwrap().eval(&x).unwrap(), -2.0);
        assert_eq!(parse("x2 / x1 / 2", &v).unwrap().eval(&x).unwrap(), 0.75);
        assert_eq!(parse("2^3^2", &v).unwrap().eval(&x).unwrap(), 512.0);
        assert_eq!(parse("x1^-1", &v).unwrap().eval(&x).unwrap(), 0.5);
        assert_eq!(parse("1 + 2 * x2", &v).unwrap().eval(&x).unwrap(), 7.0);
        assert_eq!(parse("x1^0", &v).unwrap(), Expr::one());
    }

    #[test]
    fn literals_keep_precision() {
        let v = vars5();
        let e = parse("0.1234567890123456789e-3", &v).unwrap();
        assert_eq!(e.as_constant(), Some(0.1234567890123456789e-3));
        assert_eq!(parse("1E5", &v).unwrap().as_constant(), Some(1e5));
    }

    #[test]
    fn eval_examples() {
        let e = parse("x5 * exp(-x4)", &vars5()).unwrap();
        assert_eq!(e.eval(&[0.0; 5]).unwrap(), 0.0);
        let v = e.eval(&[0.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.3678794).abs() < 1e-7);
        let q = parse("x1 / x2", &vars5()).unwrap();
        assert_eq!(q.eval(&[1.0, 0.0, 0.0, 0.0, 0.0]), Err(EvalError::DivByZero));
        let p = parse("x2^-2", &vars5()).unwrap();
        assert_eq!(p.eval(&[0.0; 5]), Err(EvalError::DivByZero));
    }

    #[test]
    fn diff_examples() {
        let v = vars5();
        let e = parse("x5 * exp(-x4)", &v).unwrap();
        let d = e.diff(3);
        for x in points(5, 5, 7) {
            let expected = -x[4] * (-x[3]).exp();
            assert!((d.eval(&x).unwrap() - expected).abs() < 1e-15);
            let fd = central_difference(&e, &x, 3, 1e-6);
            assert!((fd - expected).abs() <= 1e-6 * expected.abs().max(1e-3));
        }
        assert!(Expr::constant(3.0).diff(0).is_zero());
        let cube = parse("x2^3", &v).unwrap().diff(1);
        assert_eq!(
            cube,
            Expr::mul(Expr::constant(3.0), Expr::powi(Expr::var(1), 2))
        );
    }

    #[test]
    fn simplify_examples() {
        let v = vars5();
        let e = Expr::Binary(
            BinaryOp::Add,
            Box::new(Expr::Binary(
                BinaryOp::Mul,
                Box::new(Expr::zero()),
                Box::new(Expr::Unary(UnaryOp::Sin, Box::new(Expr::var(0)))),
            )),
            Box::new(Expr::var(1)),
        );
        assert_eq!(e.simplify(), Expr::var(1));
        let c = Expr::Binary(
            BinaryOp::Mul,
            Box::new(Expr::constant(2.0)),
            Box::new(Expr::constant(3.0)),
        );
        assert_eq!(c.simplify(), Expr::constant(6.0));
        let raw = Expr::Binary(
            BinaryOp::Mul,
            Box::new(Expr::Binary(
                BinaryOp::Sub,
                Box::new(Expr::one()),
                Box::new(Expr::var(3)),
            )),
            Box::new(Expr::one()),
        );
        let s = raw.simplify();
        assert_eq!(s, parse("1 - x4", &v).unwrap());
        for x in points(5, 100, 11) {
            assert_eq!(s.eval(&x).unwrap(), raw.eval(&x).unwrap());
        }
        let nn = Expr::Unary(
            UnaryOp::Neg,
            Box::new(Expr::Unary(UnaryOp::Neg, Box::new(Expr::var(2)))),
        );
        assert_eq!(nn.simplify(), Expr::var(2));
        let p1 = Expr::Pow(Box::new(Expr::var(2)), 1);
        assert_eq!(p1.simplify(), Expr::var(2));
        let zd = Expr::Binary(BinaryOp::Div, Box::new(Expr::zero()), Box::new(Expr::var(0)));
        assert!(zd.simplify().is_zero());
    }

    #[test]
    fn printer_roundtrip() {
        let v = vars5();
        let corpus = [
            "x5 * exp(-x4)",
            "-x3 - x2^3",
            "sin(x1) * cos(x2) / (1 + x3^2)",
            "-(2.5e-3 * x1) + x2^-2",
            "exp(-x1^2) - (-x4)",
        ];
        for text in corpus {
            let e = parse(text, &v).unwrap();
            let printed = e.to_text(&v);
            let back = parse(&printed, &v).unwrap();
            for x in points(5, 20, 3) {
                let (a, b) = (e.eval(&x).unwrap(), back.eval(&x).unwrap());
                assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0), "{text} -> {printed}");
            }
        }
    }

    #[test]
    fn substitution() {
        let y = VarTable::new(&["x1", "x2", "x3", "x4", "x5", "y1", "y2"]).unwrap();
        let e = parse("y2 * exp(-y1)", &y).unwrap();
        let mut table: Vec<Expr> = (0..5).map(Expr::var).collect();
        table.push(Expr::var(3));
        table.push(Expr::var(4));
        let s = e.substitute(&table);
        assert_eq!(s, parse("x5 * exp(-x4)", &vars5()).unwrap());
    }

    #[test]
    fn var_table_validation() {
        assert_eq!(VarTable::new::<&str>(&[]), Err(VarTableError::Empty));
        assert_eq!(
            VarTable::new(&["a", "a"]),
            Err(VarTableError::Duplicate("a".into()))
        );
        assert!(VarTable::new(&["1a"]).is_err());
        assert!(VarTable::new(&["sin"]).is_err());
    }
}
