//! Observable expressions over `q`, `p` and `t`.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?          right associative
//! atom    := number | name | name '(' sum ')' | '(' sum ')'
//! ```
//!
//! so `-q^2` is `-(q^2)` and `2^-1` is `2^(-1)`. Names are the variables
//! `q`, `p`, `t`, the constants `pi` and `e`, and the functions `sin`, `cos`,
//! `exp`, `log`, `sqrt`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("syntax error at offset {offset}: {message} (expected one of: {})", expected.join(", "))]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
    pub expected: Vec<&'static str>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    Q,
    P,
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Why a point evaluation failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalFault {
    DivisionByZero,
    LogOfNonPositive,
    SqrtOfNegative,
    NonFinite,
}

impl fmt::Display for EvalFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalFault::DivisionByZero => "division by zero",
            EvalFault::LogOfNonPositive => "log of a non-positive number",
            EvalFault::SqrtOfNegative => "sqrt of a negative number",
            EvalFault::NonFinite => "non-finite result",
        })
    }
}

pub fn parse(source: &str) -> Result<Expr, ParseError> {
    let tokens = lex(source)?;
    let mut parser = Parser { tokens, pos: 0 };
    let expr = parser.sum()?;
    match parser.peek() {
        Tok::End => Ok(expr),
        _ => Err(parser.error("unexpected token", &["operator", "end of input"])),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Name(String),
    Op(char),
    LParen,
    RParen,
    End,
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'+' | b'-' | b'*' | b'/' | b'^' => {
                out.push((Tok::Op(c as char), i));
                i += 1;
            }
            b'(' => {
                out.push((Tok::LParen, i));
                i += 1;
            }
            b')' => {
                out.push((Tok::RParen, i));
                i += 1;
            }
            b'0'..=b'9' | b'.' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut k = i + 1;
                    if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                        k += 1;
                    }
                    if k < bytes.len() && bytes[k].is_ascii_digit() {
                        i = k;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let value: f64 = text.parse().map_err(|_| ParseError {
                    offset: start,
                    message: format!("malformed number `{text}`"),
                    expected: vec!["number"],
                })?;
                out.push((Tok::Num(value), start));
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Name(src[start..i].to_string()), start));
            }
            _ => {
                return Err(ParseError {
                    offset: i,
                    message: format!("unexpected character `{}`", src[i..].chars().next().unwrap()),
                    expected: vec!["number", "identifier", "operator", "(", ")"],
                })
            }
        }
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

struct Parser {
    tokens: Vec<(Tok, usize)>,
    pos: usize,
}

const OPERAND: &[&str] = &["number", "identifier", "(", "-"];

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].0
    }

    fn offset(&self) -> usize {
        self.tokens[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let tok = self.tokens[self.pos].0.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        tok
    }

    fn error(&self, message: &str, expected: &[&'static str]) -> ParseError {
        ParseError {
            offset: self.offset(),
            message: message.to_string(),
            expected: expected.to_vec(),
        }
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek() {
                Tok::Op('+') => BinOp::Add,
                Tok::Op('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.product()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn product(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Op('*') => BinOp::Mul,
                Tok::Op('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if let Tok::Op('-') = self.peek() {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if let Tok::Op('^') = self.peek() {
            self.bump();
            let exponent = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let offset = self.offset();
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Num(v))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.sum()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Tok::Name(name) => {
                self.bump();
                if let Some(func) = Func::from_name(&name) {
                    if *self.peek() != Tok::LParen {
                        return Err(self.error(&format!("function `{name}` needs an argument"), &["("]));
                    }
                    self.bump();
                    let arg = self.sum()?;
                    self.expect_rparen()?;
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                match name.as_str() {
                    "q" => Ok(Expr::Var(Var::Q)),
                    "p" => Ok(Expr::Var(Var::P)),
                    "t" => Ok(Expr::Var(Var::T)),
                    "pi" => Ok(Expr::Num(std::f64::consts::PI)),
                    "e" => Ok(Expr::Num(std::f64::consts::E)),
                    _ => Err(ParseError {
                        offset,
                        message: format!("unknown identifier `{name}`"),
                        expected: vec!["q", "p", "t", "pi", "e", "sin", "cos", "exp", "log", "sqrt"],
                    }),
                }
            }
            Tok::End => Err(self.error("unexpected end of input", OPERAND)),
            _ => Err(self.error("expected an operand", OPERAND)),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        if *self.peek() == Tok::RParen {
            self.bump();
            Ok(())
        } else {
            Err(self.error("unbalanced parenthesis", &[")", "operator"]))
        }
    }
}

/// Prints an expression that re-parses to the same tree. Every compound
/// sub-expression is parenthesised; numbers use the shortest round-trip form.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) => write!(f, "(-{:?})", -v),
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var(Var::Q) => f.write_str("q"),
            Expr::Var(Var::P) => f.write_str("p"),
            Expr::Var(Var::T) => f.write_str("t"),
            Expr::Neg(inner) => write!(f, "(-{inner})"),
            Expr::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Call(func, arg) => write!(f, "{}({arg})", func.name()),
        }
    }
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn depends_on(&self, var: Var) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(v) => *v == var,
            Expr::Neg(a) | Expr::Call(_, a) => a.depends_on(var),
            Expr::Bin(_, a, b) => a.depends_on(var) || b.depends_on(var),
        }
    }

    /// True when the expression folds to the constant zero.
    pub fn is_zero(&self) -> bool {
        matches!(self.simplified(), Expr::Num(v) if v == 0.0)
    }

    /// Direct recursive evaluation.
    pub fn eval(&self, q: f64, p: f64, t: f64) -> Result<f64, EvalFault> {
        let v = match self {
            Expr::Num(v) => *v,
            Expr::Var(Var::Q) => q,
            Expr::Var(Var::P) => p,
            Expr::Var(Var::T) => t,
            Expr::Neg(a) => -a.eval(q, p, t)?,
            Expr::Bin(op, a, b) => apply_bin(*op, a.eval(q, p, t)?, b.eval(q, p, t)?)?,
            Expr::Call(func, a) => apply_func(*func, a.eval(q, p, t)?)?,
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalFault::NonFinite)
        }
    }

    /// Symbolic partial derivative, lightly simplified.
    pub fn derivative(&self, var: Var) -> Expr {
        self.diff(var).simplified()
    }

    fn diff(&self, var: Var) -> Expr {
        use BinOp::*;
        let bx = Box::new;
        match self {
            Expr::Num(_) => Expr::Num(0.0),
            Expr::Var(v) => Expr::Num(if *v == var { 1.0 } else { 0.0 }),
            Expr::Neg(a) => Expr::Neg(bx(a.diff(var))),
            Expr::Bin(Add, a, b) => Expr::Bin(Add, bx(a.diff(var)), bx(b.diff(var))),
            Expr::Bin(Sub, a, b) => Expr::Bin(Sub, bx(a.diff(var)), bx(b.diff(var))),
            Expr::Bin(Mul, a, b) => Expr::Bin(
                Add,
                bx(Expr::Bin(Mul, bx(a.diff(var)), b.clone())),
                bx(Expr::Bin(Mul, a.clone(), bx(b.diff(var)))),
            ),
            Expr::Bin(Div, a, b) => Expr::Bin(
                Div,
                bx(Expr::Bin(
                    Sub,
                    bx(Expr::Bin(Mul, bx(a.diff(var)), b.clone())),
                    bx(Expr::Bin(Mul, a.clone(), bx(b.diff(var)))),
                )),
                bx(Expr::Bin(Pow, b.clone(), bx(Expr::Num(2.0)))),
            ),
            Expr::Bin(Pow, a, b) => {
                if !b.depends_on(var) {
                    // d(a^c) = c a^(c-1) a'
                    Expr::Bin(
                        Mul,
                        bx(Expr::Bin(
                            Mul,
                            b.clone(),
                            bx(Expr::Bin(Pow, a.clone(), bx(Expr::Bin(Sub, b.clone(), bx(Expr::Num(1.0)))))),
                        )),
                        bx(a.diff(var)),
                    )
                } else {
                    // d(a^b) = a^b (b' log a + b a'/a)
                    Expr::Bin(
                        Mul,
                        bx(self.clone()),
                        bx(Expr::Bin(
                            Add,
                            bx(Expr::Bin(Mul, bx(b.diff(var)), bx(Expr::Call(Func::Log, a.clone())))),
                            bx(Expr::Bin(Div, bx(Expr::Bin(Mul, b.clone(), bx(a.diff(var)))), a.clone())),
                        )),
                    )
                }
            }
            Expr::Call(func, a) => {
                let outer = match func {
                    Func::Sin => Expr::Call(Func::Cos, a.clone()),
                    Func::Cos => Expr::Neg(bx(Expr::Call(Func::Sin, a.clone()))),
                    Func::Exp => self.clone(),
                    Func::Log => Expr::Bin(Div, bx(Expr::Num(1.0)), a.clone()),
                    Func::Sqrt => Expr::Bin(Div, bx(Expr::Num(0.5)), bx(self.clone())),
                };
                Expr::Bin(Mul, bx(outer), bx(a.diff(var)))
            }
        }
    }

    /// Constant folding plus the 0/1 identities.
    pub fn simplified(&self) -> Expr {
        use BinOp::*;
        match self {
            Expr::Num(_) | Expr::Var(_) => self.clone(),
            Expr::Neg(a) => match a.simplified() {
                Expr::Num(v) => Expr::Num(-v),
                Expr::Neg(inner) => *inner,
                s => Expr::Neg(Box::new(s)),
            },
            Expr::Call(func, a) => {
                let s = a.simplified();
                if let Expr::Num(v) = s {
                    if let Ok(r) = apply_func(*func, v) {
                        return Expr::Num(r);
                    }
                }
                Expr::Call(*func, Box::new(s))
            }
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.simplified(), b.simplified());
                if let (Expr::Num(x), Expr::Num(y)) = (&a, &b) {
                    if let Ok(r) = apply_bin(*op, *x, *y) {
                        if r.is_finite() {
                            return Expr::Num(r);
                        }
                    }
                }
                let is = |e: &Expr, c: f64| matches!(e, Expr::Num(v) if *v == c);
                match op {
                    Add if is(&a, 0.0) => b,
                    Add | Sub if is(&b, 0.0) => a,
                    Sub if is(&a, 0.0) => Expr::Neg(Box::new(b)).simplified(),
                    Mul if is(&a, 0.0) || is(&b, 0.0) => Expr::Num(0.0),
                    Mul if is(&a, 1.0) => b,
                    Mul | Div if is(&b, 1.0) => a,
                    Div if is(&a, 0.0) => Expr::Num(0.0),
                    Pow if is(&b, 1.0) => a,
                    Pow if is(&b, 0.0) => Expr::Num(1.0),
                    _ => Expr::Bin(*op, Box::new(a), Box::new(b)),
                }
            }
        }
    }

    pub fn compile(&self) -> Program {
        let mut ops = Vec::new();
        let mut depth = 0;
        let mut max_depth = 0;
        emit(self, &mut ops, &mut depth, &mut max_depth);
        Program {
            ops,
            stack: max_depth.max(1),
        }
    }
}

fn apply_bin(op: BinOp, a: f64, b: f64) -> Result<f64, EvalFault> {
    Ok(match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => {
            if b == 0.0 {
                return Err(EvalFault::DivisionByZero);
            }
            a / b
        }
        BinOp::Pow => {
            if b == 2.0 {
                a * a
            } else if b.fract() == 0.0 && b.abs() <= 64.0 {
                if a == 0.0 && b < 0.0 {
                    return Err(EvalFault::DivisionByZero);
                }
                a.powi(b as i32)
            } else {
                a.powf(b)
            }
        }
    })
}

fn apply_func(func: Func, a: f64) -> Result<f64, EvalFault> {
    Ok(match func {
        Func::Sin => a.sin(),
        Func::Cos => a.cos(),
        Func::Exp => a.exp(),
        Func::Log => {
            if a <= 0.0 {
                return Err(EvalFault::LogOfNonPositive);
            }
            a.ln()
        }
        Func::Sqrt => {
            if a < 0.0 {
                return Err(EvalFault::SqrtOfNegative);
            }
            a.sqrt()
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Load(Var),
    Neg,
    Bin(BinOp),
    Call(Func),
}

fn emit(e: &Expr, ops: &mut Vec<Op>, depth: &mut usize, max: &mut usize) {
    match e {
        Expr::Num(v) => {
            ops.push(Op::Const(*v));
            *depth += 1;
        }
        Expr::Var(v) => {
            ops.push(Op::Load(*v));
            *depth += 1;
        }
        Expr::Neg(a) => {
            emit(a, ops, depth, max);
            ops.push(Op::Neg);
        }
        Expr::Call(f, a) => {
            emit(a, ops, depth, max);
            ops.push(Op::Call(*f));
        }
        Expr::Bin(op, a, b) => {
            emit(a, ops, depth, max);
            emit(b, ops, depth, max);
            ops.push(Op::Bin(*op));
            *depth -= 1;
        }
    }
    *max = (*max).max(*depth);
}

/// Postfix form of an expression for fast repeated evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    ops: Vec<Op>,
    stack: usize,
}

impl Program {
    pub fn eval(&self, q: f64, p: f64, t: f64) -> Result<f64, EvalFault> {
        const INLINE: usize = 32;
        if self.stack <= INLINE {
            let mut buf = [0.0f64; INLINE];
            self.run(&mut buf, q, p, t)
        } else {
            let mut buf = vec![0.0; self.stack];
            self.run(&mut buf, q, p, t)
        }
    }

    fn run(&self, stack: &mut [f64], q: f64, p: f64, t: f64) -> Result<f64, EvalFault> {
        let mut sp = 0;
        for op in &self.ops {
            match *op {
                Op::Const(v) => {
                    stack[sp] = v;
                    sp += 1;
                }
                Op::Load(var) => {
                    stack[sp] = match var {
                        Var::Q => q,
                        Var::P => p,
                        Var::T => t,
                    };
                    sp += 1;
                }
                Op::Neg => stack[sp - 1] = -stack[sp - 1],
                Op::Call(f) => stack[sp - 1] = apply_func(f, stack[sp - 1])?,
                Op::Bin(b) => {
                    sp -= 1;
                    stack[sp - 1] = apply_bin(b, stack[sp - 1], stack[sp])?;
                }
            }
        }
        let v = stack[0];
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalFault::NonFinite)
        }
    }
}
