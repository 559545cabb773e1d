//! Coefficient expressions `alpha_l(mu)`.
//!
//! Grammar, loosest to tightest binding:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?          right associative
//! atom    := number | 'mu' INDEX | FUNC '(' expr ')' | '(' expr ')'
//! FUNC    := exp | cos | sin | sqrt
//! ```
//!
//! `-mu1^2` therefore parses as `-(mu1^2)`, and `2^-1` is accepted.

use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};

/// Highest parameter index accepted by the parser (`mu99`).
pub const MAX_PARAM_INDEX: usize = 99;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Exp,
    Cos,
    Sin,
    Sqrt,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Cos => "cos",
            Func::Sin => "sin",
            Func::Sqrt => "sqrt",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "exp" => Func::Exp,
            "cos" => Func::Cos,
            "sin" => Func::Sin,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Exp => x.exp(),
            Func::Cos => x.cos(),
            Func::Sin => x.sin(),
            Func::Sqrt => x.sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Const(f64),
    /// Zero-based parameter component.
    Param(usize),
    Neg(Box<Node>),
    Binary(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// A parsed coefficient expression together with its source text.
#[derive(Clone, Debug, PartialEq)]
pub struct CoeffExpr {
    source: String,
    root: Node,
}

impl CoeffExpr {
    pub fn parse(src: &str) -> Result<CoeffExpr> {
        parse_coeff_expr(src)
    }

    /// A constant expression, printed with round-trip precision.
    pub fn constant(value: f64) -> CoeffExpr {
        CoeffExpr {
            source: format!("{value:?}"),
            root: Node::Const(value),
        }
    }

    /// The text this expression was parsed from.
    pub fn source(&self) -> &str {
        &self.source
    }

    /// Number of parameter components the expression needs, i.e. the
    /// largest referenced index (one-based); zero for constants.
    pub fn param_dim(&self) -> usize {
        fn walk(n: &Node) -> usize {
            match n {
                Node::Const(_) => 0,
                Node::Param(i) => i + 1,
                Node::Neg(a) | Node::Call(_, a) => walk(a),
                Node::Binary(_, a, b) => walk(a).max(walk(b)),
            }
        }
        walk(&self.root)
    }

    pub fn is_constant(&self) -> bool {
        self.param_dim() == 0
    }

    /// Evaluates at `mu`. Components beyond those referenced are ignored.
    pub fn eval(&self, mu: &[f64]) -> f64 {
        eval_node(&self.root, mu)
    }

    /// Encloses the range of the expression over the axis-aligned box
    /// `intervals`, rejecting division by an interval containing zero,
    /// square roots of negative ranges and fractional powers of
    /// nonpositive bases.
    pub fn range_on_box(&self, intervals: &[(f64, f64)]) -> Result<(f64, f64)> {
        if self.param_dim() > intervals.len() {
            return Err(Error::DimensionMismatch {
                expected: self.param_dim(),
                got: intervals.len(),
            });
        }
        let iv = interval_node(&self.root, intervals).map_err(|msg| {
            Error::invalid(format!("expression `{}` {msg} on the parameter box", self.source))
        })?;
        if !iv.lo.is_finite() || !iv.hi.is_finite() {
            return Err(Error::NonFinite(format!(
                "range of `{}` on the parameter box",
                self.source
            )));
        }
        Ok((iv.lo, iv.hi))
    }

    /// Fully parenthesized rendering that reparses to an equivalent tree.
    pub fn pretty(&self) -> String {
        let mut s = String::new();
        pretty_node(&self.root, &mut s);
        s
    }
}

impl fmt::Display for CoeffExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

fn eval_node(n: &Node, mu: &[f64]) -> f64 {
    match n {
        Node::Const(c) => *c,
        Node::Param(i) => mu.get(*i).copied().unwrap_or(f64::NAN),
        Node::Neg(a) => -eval_node(a, mu),
        Node::Call(f, a) => f.apply(eval_node(a, mu)),
        Node::Binary(op, a, b) => {
            let x = eval_node(a, mu);
            let y = eval_node(b, mu);
            match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => x / y,
                BinOp::Pow => pow(x, y),
            }
        }
    }
}

fn pow(x: f64, y: f64) -> f64 {
    if y.fract() == 0.0 && y.abs() <= i32::MAX as f64 {
        x.powi(y as i32)
    } else {
        x.powf(y)
    }
}

fn pretty_node(n: &Node, out: &mut String) {
    match n {
        Node::Const(c) => out.push_str(&format!("{c:?}")),
        Node::Param(i) => out.push_str(&format!("mu{}", i + 1)),
        Node::Neg(a) => {
            out.push_str("(-");
            pretty_node(a, out);
            out.push(')');
        }
        Node::Call(f, a) => {
            out.push_str(f.name());
            out.push('(');
            pretty_node(a, out);
            out.push(')');
        }
        Node::Binary(op, a, b) => {
            out.push('(');
            pretty_node(a, out);
            out.push(op.symbol());
            pretty_node(b, out);
            out.push(')');
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    fn point(x: f64) -> Self {
        Interval { lo: x, hi: x }
    }

    fn hull(vals: &[f64]) -> Self {
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Interval { lo, hi }
    }

    fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

// True when some `offset + period * k` lies in [lo, hi].
fn hits_lattice(iv: Interval, offset: f64, period: f64) -> bool {
    let k = ((iv.lo - offset) / period).ceil();
    offset + k * period <= iv.hi
}

fn interval_trig(iv: Interval, phase: f64) -> Interval {
    // cos(x + phase): maxima at x = -phase + 2 pi k, minima at x = pi - phase + 2 pi k.
    if iv.hi - iv.lo >= 2.0 * PI {
        return Interval { lo: -1.0, hi: 1.0 };
    }
    let a = (iv.lo + phase).cos();
    let b = (iv.hi + phase).cos();
    let mut out = Interval::hull(&[a, b]);
    if hits_lattice(iv, -phase, 2.0 * PI) {
        out.hi = 1.0;
    }
    if hits_lattice(iv, PI - phase, 2.0 * PI) {
        out.lo = -1.0;
    }
    out
}

fn interval_node(n: &Node, bx: &[(f64, f64)]) -> std::result::Result<Interval, String> {
    Ok(match n {
        Node::Const(c) => Interval::point(*c),
        Node::Param(i) => {
            let (lo, hi) = bx[*i];
            Interval { lo, hi }
        }
        Node::Neg(a) => {
            let x = interval_node(a, bx)?;
            Interval { lo: -x.hi, hi: -x.lo }
        }
        Node::Call(f, a) => {
            let x = interval_node(a, bx)?;
            match f {
                Func::Exp => Interval {
                    lo: x.lo.exp(),
                    hi: x.hi.exp(),
                },
                Func::Sqrt => {
                    if x.lo < 0.0 {
                        return Err("takes the square root of a negative range".into());
                    }
                    Interval {
                        lo: x.lo.sqrt(),
                        hi: x.hi.sqrt(),
                    }
                }
                Func::Cos => interval_trig(x, 0.0),
                Func::Sin => interval_trig(x, -PI / 2.0),
            }
        }
        Node::Binary(op, a, b) => {
            let x = interval_node(a, bx)?;
            let y = interval_node(b, bx)?;
            match op {
                BinOp::Add => Interval {
                    lo: x.lo + y.lo,
                    hi: x.hi + y.hi,
                },
                BinOp::Sub => Interval {
                    lo: x.lo - y.hi,
                    hi: x.hi - y.lo,
                },
                BinOp::Mul => Interval::hull(&[x.lo * y.lo, x.lo * y.hi, x.hi * y.lo, x.hi * y.hi]),
                BinOp::Div => {
                    if y.contains(0.0) {
                        return Err("divides by a range containing zero".into());
                    }
                    Interval::hull(&[x.lo / y.lo, x.lo / y.hi, x.hi / y.lo, x.hi / y.hi])
                }
                BinOp::Pow => interval_pow(x, y)?,
            }
        }
    })
}

fn interval_pow(x: Interval, y: Interval) -> std::result::Result<Interval, String> {
    if y.lo == y.hi && y.lo.fract() == 0.0 {
        let n = y.lo;
        if n < 0.0 && x.contains(0.0) {
            return Err("raises a range containing zero to a negative power".into());
        }
        let ends = [pow(x.lo, n), pow(x.hi, n)];
        let mut out = Interval::hull(&ends);
        // Even powers of a sign-changing range reach zero.
        if (n as i64) % 2 == 0 && n > 0.0 && x.contains(0.0) {
            out.lo = 0.0;
        }
        return Ok(out);
    }
    if x.lo <= 0.0 {
        return Err("raises a nonpositive range to a non-integer power".into());
    }
    let cands = [
        x.lo.powf(y.lo),
        x.lo.powf(y.hi),
        x.hi.powf(y.lo),
        x.hi.powf(y.hi),
    ];
    Ok(Interval::hull(&cands))
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn syntax<T>(&self, offset: usize, message: impl Into<String>) -> Result<T> {
        Err(Error::Syntax {
            offset,
            message: message.into(),
        })
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        match self.peek() {
            Some(b) if b == c => {
                self.pos += 1;
                Ok(())
            }
            Some(b) => self.syntax(self.pos, format!("expected `{}`, found `{}`", c as char, b as char)),
            None => self.syntax(self.pos, format!("expected `{}`, found end of input", c as char)),
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if c == b'+' { BinOp::Add } else { BinOp::Sub };
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(c @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.unary()?;
            let op = if c == b'*' { BinOp::Mul } else { BinOp::Div };
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            let inner = self.unary()?;
            return Ok(Node::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Binary(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        let start = match self.peek() {
            Some(_) => self.pos,
            None => return self.syntax(self.pos, "unexpected end of input"),
        };
        let c = self.bytes[start];
        if c == b'(' {
            self.pos += 1;
            let inner = self.expr()?;
            self.expect(b')')?;
            return Ok(inner);
        }
        if c.is_ascii_digit() || c == b'.' {
            return self.number(start);
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            return self.identifier(start);
        }
        self.syntax(start, format!("unexpected character `{}`", c as char))
    }

    fn number(&mut self, start: usize) -> Result<Node> {
        let b = self.bytes;
        let mut i = start;
        while i < b.len() && (b[i].is_ascii_digit() || b[i] == b'.') {
            i += 1;
        }
        if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
            let mut j = i + 1;
            if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
                j += 1;
            }
            if j < b.len() && b[j].is_ascii_digit() {
                while j < b.len() && b[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        let text = &self.src[start..i];
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => {
                self.pos = i;
                Ok(Node::Const(v))
            }
            _ => self.syntax(start, format!("invalid number `{text}`")),
        }
    }

    fn identifier(&mut self, start: usize) -> Result<Node> {
        let b = self.bytes;
        let mut i = start;
        while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_') {
            i += 1;
        }
        let name = &self.src[start..i];
        self.pos = i;
        if let Some(f) = Func::from_name(name) {
            self.expect(b'(')?;
            let arg = self.expr()?;
            self.expect(b')')?;
            return Ok(Node::Call(f, Box::new(arg)));
        }
        if let Some(digits) = name.strip_prefix("mu") {
            if !digits.is_empty() && digits.bytes().all(|c| c.is_ascii_digit()) {
                let idx: usize = digits.parse().unwrap_or(usize::MAX);
                if idx == 0 || idx > MAX_PARAM_INDEX {
                    return Err(Error::invalid(format!(
                        "parameter index {digits} at byte {start} is outside 1..={MAX_PARAM_INDEX}"
                    )));
                }
                return Ok(Node::Param(idx - 1));
            }
        }
        Err(Error::UnknownIdentifier {
            offset: start,
            name: name.to_string(),
        })
    }
}

/// Parses a coefficient expression such as `0.045*(1-exp(-mu1^2))`.
pub fn parse_coeff_expr(src: &str) -> Result<CoeffExpr> {
    let mut p = Parser {
        src,
        bytes: src.as_bytes(),
        pos: 0,
    };
    if p.peek().is_none() {
        return p.syntax(0, "empty expression");
    }
    let root = p.expr()?;
    if let Some(c) = p.peek() {
        return p.syntax(p.pos, format!("unexpected trailing `{}`", c as char));
    }
    Ok(CoeffExpr {
        source: src.trim().to_string(),
        root,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, mu: &[f64]) -> f64 {
        parse_coeff_expr(src).unwrap().eval(mu)
    }

    #[test]
    fn single_parameter() {
        assert_eq!(ev("mu1", &[3.0]), 3.0);
        assert_eq!(ev("1-exp(-mu2)", &[5.0, 0.0]), 0.0);
        assert_eq!(ev("1", &[]), 1.0);
    }

    #[test]
    fn log_det_coefficient_form() {
        let v = ev("0.045*(1-exp(-mu1^2))", &[2.0]);
        let expect = 0.045 * (1.0 - (-4.0f64).exp());
        assert!((v - expect).abs() < 1e-16);
        assert!((v - 0.044_175_796_25).abs() < 1e-11);
    }

    #[test]
    fn precedence() {
        assert_eq!(ev("-mu1^2", &[3.0]), -9.0);
        assert_eq!(ev("2^3^2", &[]), 512.0);
        assert_eq!(ev("1+2*3", &[]), 7.0);
        assert_eq!(ev("(1+2)*3", &[]), 9.0);
        assert_eq!(ev("8/4/2", &[]), 1.0);
        assert_eq!(ev("2^-1", &[]), 0.5);
        assert_eq!(ev("--mu1", &[2.5]), 2.5);
        assert_eq!(ev("10-4-3", &[]), 3.0);
        assert!((ev("sqrt(mu1)*cos(0)+sin(0)", &[4.0]) - 2.0).abs() < 1e-15);
        assert_eq!(ev("1.5e2 + 2E-1", &[]), 150.2);
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        match parse_coeff_expr("1 + * 2") {
            Err(Error::Syntax { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
        match parse_coeff_expr("(mu1") {
            Err(Error::Syntax { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_coeff_expr("   "), Err(Error::Syntax { .. })));
        assert!(matches!(parse_coeff_expr("mu1 mu2"), Err(Error::Syntax { .. })));
    }

    #[test]
    fn identifier_errors() {
        match parse_coeff_expr("2*log(mu1)") {
            Err(Error::UnknownIdentifier { offset, name }) => {
                assert_eq!(offset, 2);
                assert_eq!(name, "log");
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_coeff_expr("mu0"), Err(Error::InvalidArgument(_))));
        assert!(matches!(parse_coeff_expr("mu100"), Err(Error::InvalidArgument(_))));
        assert!(parse_coeff_expr("mu99").is_ok());
    }

    #[test]
    fn param_dim() {
        assert_eq!(parse_coeff_expr("1").unwrap().param_dim(), 0);
        assert_eq!(parse_coeff_expr("mu3+mu1").unwrap().param_dim(), 3);
    }

    #[test]
    fn interval_enclosure() {
        let e = parse_coeff_expr("1-exp(-mu1)").unwrap();
        let (lo, hi) = e.range_on_box(&[(2.0, 3.0)]).unwrap();
        assert!((lo - (1.0 - (-2.0f64).exp())).abs() < 1e-15);
        assert!((hi - (1.0 - (-3.0f64).exp())).abs() < 1e-15);

        let c = parse_coeff_expr("cos(mu1)").unwrap();
        let (lo, hi) = c.range_on_box(&[(-1.0, 4.0)]).unwrap();
        assert_eq!(hi, 1.0);
        assert_eq!(lo, -1.0);
        let (lo, hi) = c.range_on_box(&[(0.5, 1.0)]).unwrap();
        assert!((lo - 1f64.cos()).abs() < 1e-15 && (hi - 0.5f64.cos()).abs() < 1e-15);

        let s = parse_coeff_expr("sin(mu1)").unwrap();
        let (_, hi) = s.range_on_box(&[(1.0, 2.0)]).unwrap();
        assert_eq!(hi, 1.0);

        let sq = parse_coeff_expr("mu1^2").unwrap();
        let (lo, hi) = sq.range_on_box(&[(-1.0, 2.0)]).unwrap();
        assert_eq!((lo, hi), (0.0, 4.0));
    }

    #[test]
    fn domain_checks() {
        let d = parse_coeff_expr("1/mu1").unwrap();
        assert!(d.range_on_box(&[(1.0, 4.0)]).is_ok());
        assert!(d.range_on_box(&[(-1.0, 4.0)]).is_err());
        let s = parse_coeff_expr("sqrt(mu1-2)").unwrap();
        assert!(s.range_on_box(&[(1.0, 4.0)]).is_err());
        assert!(s.range_on_box(&[(2.0, 4.0)]).is_ok());
        assert!(parse_coeff_expr("mu2").unwrap().range_on_box(&[(0.0, 1.0)]).is_err());
    }

    #[test]
    fn pretty_reparses() {
        for src in ["0.045*(1-exp(-mu1^2))", "-mu1^2", "2^-mu2/3", "1e-300*mu1"] {
            let e = parse_coeff_expr(src).unwrap();
            let again = parse_coeff_expr(&e.pretty()).unwrap();
            assert_eq!(e.root, again.root, "{src} -> {}", e.pretty());
        }
    }
}
