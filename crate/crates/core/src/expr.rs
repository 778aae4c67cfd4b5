//! Small arithmetic grammar for coefficient functions in configuration files.
//!
//! Precedence from tightest to loosest: `^` (right-associative), unary `-`,
//! `*` `/`, `+` `-`. So `-2^2 == -4` and `2^3^2 == 512`.
//!
//! Variables are restricted to `t`, `s`, `tau`, `x`, `u`. Functions are
//! `exp log tanh sin cos abs` (one argument), `pow` (two) and `min max`
//! (two or more).

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    T,
    S,
    Tau,
    X,
    U,
}

impl Var {
    pub const ALL: [Var; 5] = [Var::T, Var::S, Var::Tau, Var::X, Var::U];

    pub fn name(self) -> &'static str {
        match self {
            Var::T => "t",
            Var::S => "s",
            Var::Tau => "tau",
            Var::X => "x",
            Var::U => "u",
        }
    }

    fn from_name(name: &str) -> Option<Var> {
        Var::ALL.into_iter().find(|v| v.name() == name)
    }

    fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Exp,
    Log,
    Tanh,
    Sin,
    Cos,
    Abs,
    Min,
    Max,
    Pow,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "tanh" => Func::Tanh,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            "pow" => Func::Pow,
            _ => return None,
        })
    }

    fn arity_ok(self, n: usize) -> bool {
        match self {
            Func::Min | Func::Max => n >= 2,
            Func::Pow => n == 2,
            _ => n == 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, PartialEq)]
enum NodeKind {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

#[derive(Debug, Clone, PartialEq)]
struct Node {
    kind: NodeKind,
    span: (usize, usize),
}

/// Values for the free variables of an expression. Unset variables are unbound.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Bindings([Option<f64>; 5]);

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, var: Var, value: f64) -> Self {
        self.0[var.slot()] = Some(value);
        self
    }

    pub fn set(&mut self, var: Var, value: f64) {
        self.0[var.slot()] = Some(value);
    }

    pub fn get(&self, var: Var) -> Option<f64> {
        self.0[var.slot()]
    }
}

/// A parsed coefficient expression. Keeps its source text for error reporting
/// and serialization.
#[derive(Clone)]
pub struct Expr {
    source: String,
    root: Node,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", self.source)
    }
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.source)
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        Expr::parse(&text).map_err(serde::de::Error::custom)
    }
}

impl Expr {
    pub fn parse(source: &str) -> Result<Expr> {
        let mut parser = Parser {
            src: source,
            bytes: source.as_bytes(),
            pos: 0,
        };
        let root = parser.expr()?;
        parser.skip_ws();
        if parser.pos < parser.bytes.len() {
            return Err(parser.error(parser.pos, "unexpected trailing input"));
        }
        Ok(Expr {
            source: source.to_string(),
            root,
        })
    }

    /// Constant expression, mostly for programmatic construction.
    pub fn constant(value: f64) -> Expr {
        Expr {
            source: format!("{value:?}"),
            root: Node {
                kind: NodeKind::Num(value),
                span: (0, 0),
            },
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Free variables referenced anywhere in the expression.
    pub fn variables(&self) -> Vec<Var> {
        let mut out = Vec::new();
        collect_vars(&self.root, &mut out);
        out
    }

    pub fn eval(&self, bindings: &Bindings) -> Result<f64> {
        self.eval_node(&self.root, bindings)
    }

    fn text(&self, node: &Node) -> &str {
        let (a, b) = node.span;
        if b > a && b <= self.source.len() {
            &self.source[a..b]
        } else {
            &self.source
        }
    }

    fn eval_node(&self, node: &Node, b: &Bindings) -> Result<f64> {
        let value = match &node.kind {
            NodeKind::Num(v) => *v,
            NodeKind::Var(v) => b
                .get(*v)
                .ok_or_else(|| Error::Eval(format!("unbound variable '{}'", v.name())))?,
            NodeKind::Neg(inner) => -self.eval_node(inner, b)?,
            NodeKind::Bin(op, l, r) => {
                let lv = self.eval_node(l, b)?;
                let rv = self.eval_node(r, b)?;
                match op {
                    BinOp::Add => lv + rv,
                    BinOp::Sub => lv - rv,
                    BinOp::Mul => lv * rv,
                    BinOp::Div => {
                        if rv == 0.0 {
                            return Err(Error::Eval(format!(
                                "division by zero in '{}'",
                                self.text(node)
                            )));
                        }
                        lv / rv
                    }
                    BinOp::Pow => lv.powf(rv),
                }
            }
            NodeKind::Call(func, args) => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.eval_node(a, b)?);
                }
                match func {
                    Func::Exp => vals[0].exp(),
                    Func::Log => {
                        if vals[0] <= 0.0 {
                            return Err(Error::Eval(format!(
                                "log of non-positive value {} in '{}'",
                                vals[0],
                                self.text(node)
                            )));
                        }
                        vals[0].ln()
                    }
                    Func::Tanh => vals[0].tanh(),
                    Func::Sin => vals[0].sin(),
                    Func::Cos => vals[0].cos(),
                    Func::Abs => vals[0].abs(),
                    Func::Min => vals.iter().copied().fold(f64::INFINITY, f64::min),
                    Func::Max => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    Func::Pow => vals[0].powf(vals[1]),
                }
            }
        };
        if !value.is_finite() {
            return Err(Error::Eval(format!(
                "non-finite value in '{}'",
                self.text(node)
            )));
        }
        Ok(value)
    }
}

fn collect_vars(node: &Node, out: &mut Vec<Var>) {
    match &node.kind {
        NodeKind::Num(_) => {}
        NodeKind::Var(v) => {
            if !out.contains(v) {
                out.push(*v);
            }
        }
        NodeKind::Neg(n) => collect_vars(n, out),
        NodeKind::Bin(_, l, r) => {
            collect_vars(l, out);
            collect_vars(r, out);
        }
        NodeKind::Call(_, args) => args.iter().for_each(|a| collect_vars(a, out)),
    }
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn error(&self, offset: usize, message: impl Into<String>) -> Error {
        let caret = format!("{}\n{}^", self.src, " ".repeat(offset.min(self.src.len())));
        Error::Syntax {
            offset,
            message: message.into(),
            excerpt: caret,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Node> {
        let start = self.peek_pos();
        let mut lhs = self.term()?;
        while let Some(c) = self.peek() {
            let op = match c {
                b'+' => BinOp::Add,
                b'-' => BinOp::Sub,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.term()?;
            let end = rhs.span.1;
            lhs = Node {
                kind: NodeKind::Bin(op, Box::new(lhs), Box::new(rhs)),
                span: (start, end),
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let start = self.peek_pos();
        let mut lhs = self.unary()?;
        while let Some(c) = self.peek() {
            let op = match c {
                b'*' => BinOp::Mul,
                b'/' => BinOp::Div,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.unary()?;
            let end = rhs.span.1;
            lhs = Node {
                kind: NodeKind::Bin(op, Box::new(lhs), Box::new(rhs)),
                span: (start, end),
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        let start = self.peek_pos();
        if self.peek() == Some(b'-') {
            self.pos += 1;
            let inner = self.unary()?;
            let end = inner.span.1;
            return Ok(Node {
                kind: NodeKind::Neg(Box::new(inner)),
                span: (start, end),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let start = self.peek_pos();
        let base = self.primary()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            // exponent binds right-associatively and may carry a sign
            let exponent = self.unary()?;
            let end = exponent.span.1;
            return Ok(Node {
                kind: NodeKind::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)),
                span: (start, end),
            });
        }
        Ok(base)
    }

    fn peek_pos(&mut self) -> usize {
        self.skip_ws();
        self.pos
    }

    fn primary(&mut self) -> Result<Node> {
        let start = self.peek_pos();
        match self.peek() {
            None => Err(self.error(start, "unexpected end of expression")),
            Some(b'(') => {
                self.pos += 1;
                let mut inner = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.error(self.pos, "expected ')'"));
                }
                self.pos += 1;
                inner.span = (start, self.pos);
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(start),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(start),
            Some(c) => Err(self.error(start, format!("unexpected character '{}'", c as char))),
        }
    }

    fn number(&mut self, start: usize) -> Result<Node> {
        let b = self.bytes;
        let mut end = start;
        while end < b.len() && (b[end].is_ascii_digit() || b[end] == b'.') {
            end += 1;
        }
        if end < b.len() && (b[end] == b'e' || b[end] == b'E') {
            let mut k = end + 1;
            if k < b.len() && (b[k] == b'+' || b[k] == b'-') {
                k += 1;
            }
            if k < b.len() && b[k].is_ascii_digit() {
                while k < b.len() && b[k].is_ascii_digit() {
                    k += 1;
                }
                end = k;
            }
        }
        let text = &self.src[start..end];
        let value: f64 = text
            .parse()
            .map_err(|_| self.error(start, format!("malformed number '{text}'")))?;
        self.pos = end;
        Ok(Node {
            kind: NodeKind::Num(value),
            span: (start, end),
        })
    }

    fn identifier(&mut self, start: usize) -> Result<Node> {
        let b = self.bytes;
        let mut end = start;
        while end < b.len() && (b[end].is_ascii_alphanumeric() || b[end] == b'_') {
            end += 1;
        }
        let name = &self.src[start..end];
        self.pos = end;
        if self.peek() == Some(b'(') {
            let func = Func::from_name(name)
                .ok_or_else(|| self.error(start, format!("unknown function '{name}'")))?;
            self.pos += 1;
            let mut args = Vec::new();
            if self.peek() != Some(b')') {
                loop {
                    args.push(self.expr()?);
                    match self.peek() {
                        Some(b',') => self.pos += 1,
                        Some(b')') => break,
                        _ => return Err(self.error(self.pos, "expected ',' or ')'")),
                    }
                }
            }
            self.pos += 1;
            if !func.arity_ok(args.len()) {
                return Err(self.error(
                    start,
                    format!("wrong number of arguments ({}) for '{name}'", args.len()),
                ));
            }
            return Ok(Node {
                kind: NodeKind::Call(func, args),
                span: (start, self.pos),
            });
        }
        let var = Var::from_name(name).ok_or_else(|| {
            self.error(
                start,
                format!("unknown variable '{name}' (allowed: t, s, tau, x, u)"),
            )
        })?;
        Ok(Node {
            kind: NodeKind::Var(var),
            span: (start, end),
        })
    }
}

/// Parses and evaluates in one step.
pub fn eval_expression(text: &str, bindings: &Bindings) -> Result<f64> {
    Expr::parse(text)?.eval(bindings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(text: &str) -> f64 {
        eval_expression(text, &Bindings::new()).unwrap()
    }

    #[test]
    fn tanh_threshold_at_origin() {
        let b = Bindings::new().with(Var::X, 0.0);
        assert_eq!(eval_expression("0.2 + 0.1*tanh(x)", &b).unwrap(), 0.2);
    }

    #[test]
    fn power_is_right_associative() {
        assert_eq!(ev("2^3^2"), 512.0);
    }

    #[test]
    fn min_of_exp() {
        assert_eq!(ev("min(1, exp(0))"), 1.0);
    }

    #[test]
    fn precedence() {
        assert_eq!(ev("-2^2"), -4.0);
        assert_eq!(ev("1 + 2 * 3"), 7.0);
        assert_eq!(ev("(1 + 2) * 3"), 9.0);
        assert_eq!(ev("2^-1"), 0.5);
        assert_eq!(ev("8 / 4 / 2"), 1.0);
        assert_eq!(ev("1 - 2 - 3"), -4.0);
        assert_eq!(ev("max(1, 5, 3)"), 5.0);
        assert_eq!(ev("pow(2, 10)"), 1024.0);
        assert_eq!(ev("1.5e2"), 150.0);
    }

    #[test]
    fn unbound_variable_is_named() {
        let err = eval_expression("x + u", &Bindings::new().with(Var::X, 1.0)).unwrap_err();
        assert!(err.to_string().contains("'u'"), "{err}");
    }

    #[test]
    fn division_by_zero_names_subexpression() {
        let err = eval_expression("1 + 3/(x - 1)", &Bindings::new().with(Var::X, 1.0)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("division by zero"), "{msg}");
        assert!(msg.contains("3/(x - 1)"), "{msg}");
    }

    #[test]
    fn log_of_nonpositive() {
        let err = eval_expression("log(x)", &Bindings::new().with(Var::X, -1.0)).unwrap_err();
        assert!(err.to_string().contains("log of non-positive"));
    }

    #[test]
    fn syntax_error_has_offset_and_caret() {
        match Expr::parse("1 + * 2") {
            Err(Error::Syntax {
                offset, excerpt, ..
            }) => {
                assert_eq!(offset, 4);
                assert!(excerpt.ends_with("    ^"));
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
        assert!(Expr::parse("foo + 1").is_err());
        assert!(Expr::parse("exp(1, 2)").is_err());
        assert!(Expr::parse("(1 + 2").is_err());
        assert!(Expr::parse("1 2").is_err());
    }

    #[test]
    fn variables_listed() {
        let e = Expr::parse("tau + s*x - exp(u)").unwrap();
        let vars = e.variables();
        assert_eq!(vars, vec![Var::Tau, Var::S, Var::X, Var::U]);
    }

    proptest! {
        #[test]
        fn affine_expressions_match_direct_arithmetic(a in -10.0f64..10.0, b in -10.0f64..10.0, x in -5.0f64..5.0) {
            let text = format!("{a:?} + {b:?}*x");
            let v = eval_expression(&text, &Bindings::new().with(Var::X, x)).unwrap();
            prop_assert!((v - (a + b * x)).abs() <= 1e-12 * (1.0 + v.abs()));
        }

        #[test]
        fn source_roundtrip(a in 0.1f64..5.0, k in 1u32..4) {
            let text = format!("max({a:?}, x)^{k} - tanh(x)");
            let e = Expr::parse(&text).unwrap();
            let again = Expr::parse(e.source()).unwrap();
            prop_assert_eq!(e, again);
        }
    }
}
