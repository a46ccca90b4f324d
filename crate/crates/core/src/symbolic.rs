//! Symbolic expressions in `x` and `y` for manufactured solutions.
//!
//! Expressions are built through smart constructors that fold constants and
//! drop additive/multiplicative identities, which keeps derivative trees
//! from growing needlessly. Text output uses the same grammar the parser
//! accepts, so `parse_expr(&e.to_string())` reproduces `e`.

use std::f64::consts::PI;
use std::fmt;

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SymbolicError {
    #[error("parse error at position {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("degenerate expression: max |u| on probe grid is {0:e}")]
    Degenerate(f64),
    #[error("expression is not finite on the probe grid")]
    NonFinite,
    #[error("failed to generate a usable solution after {0} attempts")]
    Generation(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Log,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Log => "log",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "sqrt" => Func::Sqrt,
            "log" => Func::Log,
            _ => return None,
        })
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Exp => v.exp(),
            Func::Sqrt => v.sqrt(),
            Func::Log => v.ln(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn constant(c: f64) -> Self {
        Expr::Const(c)
    }

    pub fn x() -> Self {
        Expr::Var(Var::X)
    }

    pub fn y() -> Self {
        Expr::Var(Var::Y)
    }

    fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn binary(op: BinOp, a: Expr, b: Expr) -> Self {
        match (op, a.as_const(), b.as_const()) {
            (BinOp::Add, Some(p), Some(q)) => Expr::Const(p + q),
            (BinOp::Sub, Some(p), Some(q)) => Expr::Const(p - q),
            (BinOp::Mul, Some(p), Some(q)) => Expr::Const(p * q),
            (BinOp::Div, Some(p), Some(q)) if q != 0.0 => Expr::Const(p / q),
            (BinOp::Add, Some(p), _) if p == 0.0 => b,
            (BinOp::Add | BinOp::Sub, _, Some(q)) if q == 0.0 => a,
            (BinOp::Mul, Some(p), _) | (BinOp::Mul, _, Some(p)) if p == 0.0 => Expr::Const(0.0),
            (BinOp::Div, Some(p), _) if p == 0.0 => Expr::Const(0.0),
            (BinOp::Mul, Some(p), _) if p == 1.0 => b,
            (BinOp::Mul | BinOp::Div, _, Some(q)) if q == 1.0 => a,
            _ => Expr::Binary(op, Box::new(a), Box::new(b)),
        }
    }

    pub fn pow(base: Expr, exponent: i32) -> Self {
        match (base.as_const(), exponent) {
            (_, 0) => Expr::Const(1.0),
            (_, 1) => base,
            (Some(c), n) => Expr::Const(c.powi(n)),
            _ => Expr::Pow(Box::new(base), exponent),
        }
    }

    pub fn call(func: Func, arg: Expr) -> Self {
        match arg.as_const() {
            Some(c) => Expr::Const(func.apply(c)),
            None => Expr::Call(func, Box::new(arg)),
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(Var::X) => x,
            Expr::Var(Var::Y) => y,
            Expr::Binary(op, a, b) => {
                let (p, q) = (a.eval(x, y), b.eval(x, y));
                match op {
                    BinOp::Add => p + q,
                    BinOp::Sub => p - q,
                    BinOp::Mul => p * q,
                    BinOp::Div => p / q,
                }
            }
            Expr::Pow(b, n) => b.eval(x, y).powi(*n),
            Expr::Call(f, a) => f.apply(a.eval(x, y)),
        }
    }

    /// Number of nodes in the tree.
    pub fn size(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Binary(_, a, b) => 1 + a.size() + b.size(),
            Expr::Pow(b, _) => 1 + b.size(),
            Expr::Call(_, a) => 1 + a.size(),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Binary(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Pow(..) => 3,
            _ => 4,
        }
    }
}

impl std::ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::binary(BinOp::Add, self, rhs)
    }
}

impl std::ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::binary(BinOp::Sub, self, rhs)
    }
}

impl std::ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::binary(BinOp::Mul, self, rhs)
    }
}

impl std::ops::Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        Expr::binary(BinOp::Div, self, rhs)
    }
}

fn write_number(f: &mut fmt::Formatter<'_>, c: f64) -> fmt::Result {
    if c == PI {
        write!(f, "pi")
    } else if c.fract() == 0.0 && c.abs() < 1e15 {
        write!(f, "{}", c as i64)
    } else {
        write!(f, "{c:?}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn child(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
            if e.precedence() < min_prec {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        }
        match self {
            Expr::Const(c) if c.is_sign_negative() && *c != 0.0 => {
                write!(f, "(0-")?;
                write_number(f, -c)?;
                write!(f, ")")
            }
            Expr::Const(c) => write_number(f, c.abs()),
            Expr::Var(Var::X) => write!(f, "x"),
            Expr::Var(Var::Y) => write!(f, "y"),
            Expr::Binary(op, a, b) => {
                let (sym, prec) = match op {
                    BinOp::Add => ('+', 1),
                    BinOp::Sub => ('-', 1),
                    BinOp::Mul => ('*', 2),
                    BinOp::Div => ('/', 2),
                };
                child(f, a, prec)?;
                write!(f, "{sym}")?;
                child(f, b, prec + 1)
            }
            Expr::Pow(b, n) => {
                child(f, b, 4)?;
                write!(f, "^{n}")
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

pub fn differentiate(e: &Expr, var: Var) -> Expr {
    match e {
        Expr::Const(_) => Expr::Const(0.0),
        Expr::Var(v) => Expr::Const(if *v == var { 1.0 } else { 0.0 }),
        Expr::Binary(op, a, b) => {
            let da = differentiate(a, var);
            let db = differentiate(b, var);
            let (a, b) = ((**a).clone(), (**b).clone());
            match op {
                BinOp::Add => da + db,
                BinOp::Sub => da - db,
                BinOp::Mul => da * b.clone() + a * db,
                BinOp::Div => (da * b.clone() - a * db) / Expr::pow(b, 2),
            }
        }
        Expr::Pow(b, n) => {
            let db = differentiate(b, var);
            Expr::Const(*n as f64) * Expr::pow((**b).clone(), n - 1) * db
        }
        Expr::Call(func, a) => {
            let da = differentiate(a, var);
            let a = (**a).clone();
            match func {
                Func::Sin => Expr::call(Func::Cos, a) * da,
                Func::Cos => Expr::Const(-1.0) * Expr::call(Func::Sin, a) * da,
                Func::Exp => Expr::call(Func::Exp, a) * da,
                Func::Sqrt => da / (Expr::Const(2.0) * Expr::call(Func::Sqrt, a)),
                Func::Log => da / a,
            }
        }
    }
}

/// `d2u/dx2 + d2u/dy2`.
pub fn laplacian(u: &Expr) -> Expr {
    let uxx = differentiate(&differentiate(u, Var::X), Var::X);
    let uyy = differentiate(&differentiate(u, Var::Y), Var::Y);
    uxx + uyy
}

/// Source term `f = -Δu` of the Poisson problem.
pub fn poisson_source(u: &Expr) -> Expr {
    Expr::Const(0.0) - laplacian(u)
}

struct Parser<'a> {
    chars: Vec<(usize, char)>,
    pos: usize,
    src: &'a str,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        let chars = src
            .chars()
            .enumerate()
            .filter(|(_, c)| !c.is_whitespace())
            .collect();
        Self { chars, pos: 0, src }
    }

    fn offset(&self) -> usize {
        self.chars
            .get(self.pos)
            .map(|&(i, _)| i)
            .unwrap_or_else(|| self.src.chars().count())
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, SymbolicError> {
        Err(SymbolicError::Parse {
            position: self.offset(),
            message: message.into(),
        })
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).map(|&(_, c)| c)
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek();
        self.pos += 1;
        c
    }

    fn expect(&mut self, want: char) -> Result<(), SymbolicError> {
        match self.peek() {
            Some(c) if c == want => {
                self.pos += 1;
                Ok(())
            }
            Some(c) => self.error(format!("expected '{want}', found '{c}'")),
            None => self.error(format!("expected '{want}', found end of input")),
        }
    }

    fn expr(&mut self) -> Result<Expr, SymbolicError> {
        let mut lhs = self.term()?;
        while let Some(c @ ('+' | '-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, SymbolicError> {
        let mut lhs = self.factor()?;
        while let Some(c @ ('*' | '/')) = self.peek() {
            self.pos += 1;
            let rhs = self.factor()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr, SymbolicError> {
        let base = self.base()?;
        if self.peek() == Some('^') {
            self.pos += 1;
            let n = self.integer()?;
            return Ok(Expr::pow(base, n));
        }
        Ok(base)
    }

    fn integer(&mut self) -> Result<i32, SymbolicError> {
        let start = self.pos;
        let negative = self.peek() == Some('-');
        if negative {
            self.pos += 1;
        }
        let mut digits = String::new();
        while let Some(c) = self.peek().filter(char::is_ascii_digit) {
            digits.push(c);
            self.pos += 1;
        }
        if digits.is_empty() {
            self.pos = start;
            return self.error("expected integer exponent");
        }
        match digits.parse::<i32>() {
            Ok(v) => Ok(if negative { -v } else { v }),
            Err(_) => {
                self.pos = start;
                self.error("exponent out of range")
            }
        }
    }

    fn number(&mut self) -> Result<Expr, SymbolicError> {
        let start = self.pos;
        let mut text = String::new();
        while let Some(c) = self.peek().filter(|c| c.is_ascii_digit() || *c == '.') {
            text.push(c);
            self.pos += 1;
        }
        if let Some(e @ ('e' | 'E')) = self.peek() {
            let save = self.pos;
            let mut exp = String::from(e);
            self.pos += 1;
            if let Some(s @ ('+' | '-')) = self.peek() {
                exp.push(s);
                self.pos += 1;
            }
            let mut any = false;
            while let Some(c) = self.peek().filter(char::is_ascii_digit) {
                exp.push(c);
                self.pos += 1;
                any = true;
            }
            if any {
                text.push_str(&exp);
            } else {
                self.pos = save;
            }
        }
        match text.parse::<f64>() {
            Ok(v) => Ok(Expr::Const(v)),
            Err(_) => {
                self.pos = start;
                self.error(format!("malformed number '{text}'"))
            }
        }
    }

    fn base(&mut self) -> Result<Expr, SymbolicError> {
        match self.peek() {
            None => self.error("expected expression, found end of input"),
            Some('(') => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect(')')?;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                let mut name = String::new();
                while let Some(c) = self.peek().filter(char::is_ascii_alphanumeric) {
                    name.push(c);
                    self.pos += 1;
                }
                match name.as_str() {
                    "x" => Ok(Expr::x()),
                    "y" => Ok(Expr::y()),
                    "pi" => Ok(Expr::Const(PI)),
                    other => match Func::from_name(other) {
                        Some(func) => {
                            self.expect('(')?;
                            let arg = self.expr()?;
                            self.expect(')')?;
                            Ok(Expr::call(func, arg))
                        }
                        None => {
                            self.pos = start;
                            self.error(format!("unknown identifier '{other}'"))
                        }
                    },
                }
            }
            Some(c) => {
                let _ = self.bump();
                self.pos -= 1;
                self.error(format!("unexpected character '{c}'"))
            }
        }
    }
}

/// Parse an expression in the grammar
///
/// ```text
/// expr   := term (('+'|'-') term)*
/// term   := factor (('*'|'/') factor)*
/// factor := base ('^' integer)?
/// base   := number | 'x' | 'y' | 'pi' | func '(' expr ')' | '(' expr ')'
/// ```
///
/// Whitespace is ignored. Error positions are character offsets into `text`.
pub fn parse_expr(text: &str) -> Result<Expr, SymbolicError> {
    let mut parser = Parser::new(text);
    let e = parser.expr()?;
    if let Some(c) = parser.peek() {
        return parser.error(format!("unexpected trailing '{c}'"));
    }
    Ok(e)
}

/// Which symbol list a bank mirrors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BankKind {
    Train,
    Test,
}

const TRAIN_SYMBOLS: [&str; 31] = [
    "cos(pi*x)",
    "sin(pi*x)",
    "exp(x)",
    "sqrt(x+1)",
    "cos(pi*y)",
    "sin(pi*y)",
    "exp(y)",
    "sqrt(y+1)",
    "cos(pi*x*y)",
    "sin(pi*x*y)",
    "exp(x*y)",
    "sqrt(x*y+1)",
    "cos(pi*(x+y))",
    "sin(pi*(x+y))",
    "exp(x+y)",
    "sqrt(x+y+1)",
    "x^2",
    "y^2",
    "x^2*y^2",
    "x*y",
    "x*y^2",
    "x^2*y",
    "x^3",
    "y^3",
    "x^3*y",
    "x^3*y^2",
    "y^3*x",
    "y^3*x^2",
    "exp(x^2+y^2)",
    "sin(pi*(x^2+y^2))",
    "cos(pi*(x^2+y^2))",
];

const TEST_SYMBOLS: [&str; 14] = [
    "cos(2*pi*x)",
    "sin(2*pi*x)",
    "exp(0-x)",
    "log(sin(pi*x)+1)",
    "cos(2*pi*y)",
    "sin(2*pi*y)",
    "exp(0-y)",
    "log(sin(pi*y)+1)",
    "log(sin(pi*x)*sin(pi*y^2)+1)",
    "log(sin(pi*x^2)*sin(pi*y)+1)",
    "cos(2*pi*x*y)",
    "sin(2*pi*x*y)",
    "x^4",
    "y^4",
];

const BUBBLES: [&str; 4] = [
    "(x-x^2)*(y-y^2)",
    "(x^3-x^2)*(y^3-y^2)",
    "sin(pi*x)*sin(pi*y)",
    "sin(2*pi*x)*sin(2*pi*y)",
];

/// Symbol bank and bubble functions used to draw manufactured solutions.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolBank {
    pub kind: BankKind,
    pub entries: Vec<Expr>,
    pub bubbles: Vec<Expr>,
}

impl SymbolBank {
    pub fn new(kind: BankKind) -> Self {
        let parse_all = |list: &[&str]| -> Vec<Expr> {
            list.iter()
                .map(|s| parse_expr(s).expect("built-in symbol parses"))
                .collect()
        };
        let entries = match kind {
            BankKind::Train => parse_all(&TRAIN_SYMBOLS),
            BankKind::Test => parse_all(&TEST_SYMBOLS),
        };
        Self {
            kind,
            entries,
            bubbles: parse_all(&BUBBLES),
        }
    }

    pub fn train() -> Self {
        Self::new(BankKind::Train)
    }

    pub fn test() -> Self {
        Self::new(BankKind::Test)
    }
}

/// Side of the uniform probe grid used for range scaling.
pub const PROBE_POINTS: usize = 101;

fn probe_max_abs(u: &Expr) -> Result<f64, SymbolicError> {
    let step = 1.0 / (PROBE_POINTS - 1) as f64;
    let mut max = 0.0_f64;
    for j in 0..PROBE_POINTS {
        for i in 0..PROBE_POINTS {
            let v = u.eval(i as f64 * step, j as f64 * step);
            if !v.is_finite() {
                return Err(SymbolicError::NonFinite);
            }
            max = max.max(v.abs());
        }
    }
    Ok(max)
}

/// Divide `u` by its max-abs over the 101 x 101 probe grid of `[0,1]^2`.
pub fn scale_to_unit_range(u: &Expr) -> Result<Expr, SymbolicError> {
    let s = probe_max_abs(u)?;
    if s < 1e-12 {
        return Err(SymbolicError::Degenerate(s));
    }
    Ok(u.clone() / Expr::Const(s))
}

/// Number of draws attempted before giving up.
pub const MAX_GENERATION_ATTEMPTS: usize = 100;

/// Unscaled candidate: 1 to 3 symbols joined left to right by random
/// `+ - *`, times a random bubble.
pub fn random_product<R: Rng + ?Sized>(rng: &mut R, bank: &SymbolBank) -> Expr {
    let count = rng.random_range(1..=3);
    let pick = |rng: &mut R| bank.entries[rng.random_range(0..bank.entries.len())].clone();
    let mut acc = pick(rng);
    for _ in 1..count {
        let op = match rng.random_range(0..3) {
            0 => BinOp::Add,
            1 => BinOp::Sub,
            _ => BinOp::Mul,
        };
        let next = pick(rng);
        acc = Expr::binary(op, acc, next);
    }
    let bubble = bank.bubbles[rng.random_range(0..bank.bubbles.len())].clone();
    acc * bubble
}

/// Draw a manufactured solution vanishing on the boundary, scaled to unit max-abs.
pub fn random_solution<R: Rng + ?Sized>(rng: &mut R, bank: &SymbolBank) -> Result<Expr, SymbolicError> {
    if bank.entries.is_empty() || bank.bubbles.is_empty() {
        return Err(SymbolicError::Generation(0));
    }
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let candidate = random_product(rng, bank);
        if let Ok(u) = scale_to_unit_range(&candidate) {
            return Ok(u);
        }
    }
    Err(SymbolicError::Generation(MAX_GENERATION_ATTEMPTS))
}

/// An analytic solution together with its gradient and Poisson source.
#[derive(Debug, Clone, PartialEq)]
pub struct Manufactured {
    pub u: Expr,
    pub ux: Expr,
    pub uy: Expr,
    pub f: Expr,
}

impl Manufactured {
    pub fn new(u: Expr) -> Self {
        let ux = differentiate(&u, Var::X);
        let uy = differentiate(&u, Var::Y);
        let uxx = differentiate(&ux, Var::X);
        let uyy = differentiate(&uy, Var::Y);
        let f = Expr::Const(0.0) - (uxx + uyy);
        Self { u, ux, uy, f }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn parses_and_evaluates() {
        let e = parse_expr("sin(pi*x)*sin(pi*y)").unwrap();
        assert!(matches!(e, Expr::Binary(BinOp::Mul, ..)));
        assert!((e.eval(0.5, 0.5) - 1.0).abs() < 1e-15);
        assert_eq!(parse_expr("x^2+y").unwrap().eval(2.0, 3.0), 7.0);
        assert_eq!(parse_expr(" 2 * ( x - 1 ) / 4 ").unwrap().eval(3.0, 0.0), 1.0);
        assert_eq!(parse_expr("1.5e1-x^-1").unwrap().eval(2.0, 0.0), 14.5);
        assert_eq!(parse_expr("x-y-1").unwrap().eval(5.0, 1.0), 3.0);
        assert_eq!(parse_expr("x/y/2").unwrap().eval(8.0, 2.0), 2.0);
    }

    #[test]
    fn parse_errors_report_position() {
        match parse_expr("sin(") {
            Err(SymbolicError::Parse { position, .. }) => assert_eq!(position, 4),
            other => panic!("unexpected {other:?}"),
        }
        match parse_expr("x + foo(y)") {
            Err(SymbolicError::Parse { position, message }) => {
                assert_eq!(position, 4);
                assert!(message.contains("foo"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_expr("x^y").is_err());
        assert!(parse_expr("(x").is_err());
        assert!(parse_expr("x)").is_err());
        assert!(parse_expr("").is_err());
        assert!(parse_expr("x $ y").is_err());
    }

    #[test]
    fn derivatives_analytic() {
        let e = parse_expr("sin(pi*x)").unwrap();
        let d = differentiate(&e, Var::X);
        assert!((d.eval(0.0, 0.0) - PI).abs() < 1e-15);
        let d = differentiate(&parse_expr("x*y").unwrap(), Var::X);
        assert_eq!(d, Expr::y());
        let e = parse_expr("log(sin(pi*x)+1)").unwrap();
        let d = differentiate(&e, Var::X).eval(0.25, 0.0);
        let s = (PI / 4.0).sin();
        let exact = PI * (PI / 4.0).cos() / (s + 1.0);
        assert!(close(d, exact, 1e-14));
        let h = 1e-6;
        let fd = (e.eval(0.25 + h, 0.0) - e.eval(0.25 - h, 0.0)) / (2.0 * h);
        assert!(close(d, fd, 1e-8));
    }

    #[test]
    fn laplacians_analytic() {
        let u = parse_expr("sin(pi*x)*sin(pi*y)").unwrap();
        let lap = laplacian(&u);
        for &(x, y) in &[(0.3, 0.7), (0.5, 0.5), (0.1, 0.9)] {
            let exact = -2.0 * PI * PI * (PI * x).sin() * (PI * y).sin();
            assert!(close(lap.eval(x, y), exact, 1e-13));
        }
        let u = parse_expr("(x-x^2)*(y-y^2)").unwrap();
        let lap = laplacian(&u);
        for &(x, y) in &[(0.3, 0.7), (0.25, 0.5)] {
            let exact = -2.0_f64 * (y - y * y) - 2.0 * (x - x * x);
            assert!(close(lap.eval(x, y), exact, 1e-14));
        }
        assert_eq!(poisson_source(&Expr::x()), Expr::Const(0.0));
    }

    fn sample_points(rng: &mut ChaCha8Rng, count: usize) -> Vec<(f64, f64)> {
        (0..count)
            .map(|_| (rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)))
            .collect()
    }

    #[test]
    fn bank_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let points = sample_points(&mut rng, 25);
        let h = 1e-6;
        for bank in [SymbolBank::train(), SymbolBank::test()] {
            for e in bank.entries.iter().chain(bank.bubbles.iter()) {
                for var in [Var::X, Var::Y] {
                    let d = differentiate(e, var);
                    for &(x, y) in &points {
                        let (dx, dy) = if var == Var::X { (h, 0.0) } else { (0.0, h) };
                        let fd = (e.eval(x + dx, y + dy) - e.eval(x - dx, y - dy)) / (2.0 * h);
                        let exact = d.eval(x, y);
                        let err = (exact - fd).abs() / exact.abs().max(1.0);
                        assert!(err < 1e-6, "{e} d/{var:?} at ({x},{y}): {exact} vs {fd}");
                    }
                }
            }
        }
    }

    #[test]
    fn laplacian_of_random_products_matches_stencil() {
        let bank = SymbolBank::train();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let stencil_at = |u: &Expr, x: f64, y: f64, h: f64| {
            (u.eval(x + h, y) + u.eval(x - h, y) + u.eval(x, y + h) + u.eval(x, y - h) - 4.0 * u.eval(x, y))
                / (h * h)
        };
        for _ in 0..10 {
            let u = random_product(&mut rng, &bank);
            let lap = laplacian(&u);
            for (x, y) in sample_points(&mut rng, 5) {
                // Richardson extrapolation of two stencil widths cancels the h^2 term
                let stencil = (4.0 * stencil_at(&u, x, y, 1e-3) - stencil_at(&u, x, y, 2e-3)) / 3.0;
                let exact = lap.eval(x, y);
                let scale = exact.abs().max(u.eval(x, y).abs()).max(1.0);
                assert!((stencil - exact).abs() / scale < 1e-5, "{u}: {exact} vs {stencil}");
            }
        }
    }

    #[test]
    fn bank_sizes() {
        assert_eq!(SymbolBank::train().entries.len(), 31);
        assert_eq!(SymbolBank::test().entries.len(), 14);
        assert_eq!(SymbolBank::train().bubbles.len(), 4);
    }

    #[test]
    fn scaling() {
        let u = parse_expr("5*sin(pi*x)*sin(pi*y)").unwrap();
        let s = scale_to_unit_range(&u).unwrap();
        assert!((s.eval(0.5, 0.5) - 1.0).abs() < 1e-15);
        assert!(matches!(
            scale_to_unit_range(&Expr::Const(0.0)),
            Err(SymbolicError::Degenerate(_))
        ));
        let u = parse_expr("(x-x^2)*(y-y^2)").unwrap();
        let s = scale_to_unit_range(&u).unwrap();
        assert_eq!(s.eval(0.5, 0.5), 1.0);
        assert!(matches!(
            scale_to_unit_range(&parse_expr("log(x)").unwrap()),
            Err(SymbolicError::NonFinite)
        ));
    }

    #[test]
    fn single_symbol_construction() {
        let u = parse_expr("sin(pi*x)").unwrap() * parse_expr("sin(pi*x)*sin(pi*y)").unwrap();
        let scaled = scale_to_unit_range(&u).unwrap();
        // max of sin^2(pi x) sin(pi y) on the grid is 1 at (0.5, 0.5)
        assert!((scaled.eval(0.5, 0.5) - 1.0).abs() < 1e-15);
        assert!((scaled.eval(0.3, 0.6) - u.eval(0.3, 0.6)).abs() < 1e-15);
    }

    #[test]
    fn generated_solutions_vanish_on_boundary_and_are_unit_scaled() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for bank in [SymbolBank::train(), SymbolBank::test()] {
            for _ in 0..20 {
                let u = random_solution(&mut rng, &bank).unwrap();
                for k in 0..25 {
                    let t = k as f64 / 24.0;
                    for (x, y) in [(0.0, t), (1.0, t), (t, 0.0), (t, 1.0)] {
                        assert!(u.eval(x, y).abs() < 1e-14, "{u} at ({x},{y})");
                    }
                }
                let m = probe_max_abs(&u).unwrap();
                assert!((0.99..=1.01).contains(&m));
            }
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let bank = SymbolBank::test();
        let a: Vec<String> = {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            (0..5).map(|_| random_solution(&mut rng, &bank).unwrap().to_string()).collect()
        };
        let b: Vec<String> = {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            (0..5).map(|_| random_solution(&mut rng, &bank).unwrap().to_string()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn empty_bank_is_a_generation_error() {
        let mut bank = SymbolBank::train();
        bank.entries.clear();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            random_solution(&mut rng, &bank),
            Err(SymbolicError::Generation(_))
        ));
    }

    #[test]
    fn display_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let bank = SymbolBank::train();
        for _ in 0..30 {
            let u = random_solution(&mut rng, &bank).unwrap();
            let m = Manufactured::new(u);
            for e in [&m.u, &m.ux, &m.f] {
                let text = e.to_string();
                let back = parse_expr(&text).unwrap();
                assert_eq!(&back, e, "{text}");
            }
        }
        let e = Expr::Const(-2.5) * Expr::x() - (Expr::y() - Expr::Const(1e-7));
        assert_eq!(parse_expr(&e.to_string()).unwrap(), e);
    }
}
