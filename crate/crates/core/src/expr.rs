//! Arithmetic expressions over `t, x1..xd` used for coefficients and payoffs.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?          right associative
//! atom   := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! `-x1^2` parses as `-(x1^2)`. Functions: `exp log sin cos sqrt abs tanh`
//! (one argument) and `min max` (two arguments). The constant `pi` is
//! predefined.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("function `{name}` at byte {offset} takes {expected} argument(s), got {found}")]
    Arity {
        name: String,
        offset: usize,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("log of non-positive argument {0}")]
    LogDomain(f64),
    #[error("sqrt of negative argument {0}")]
    SqrtDomain(f64),
    #[error("non-finite intermediate result")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
    Abs,
    Tanh,
    Min,
    Max,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "tanh" => Func::Tanh,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Tanh => "tanh",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Time,
    /// Zero-based state coordinate (`x1` is `State(0)`).
    State(usize),
    Neg(Box<Node>),
    Binary(BinaryOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

#[inline]
fn finite(v: f64) -> Result<f64, EvalError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFinite)
    }
}

impl Node {
    fn eval(&self, t: f64, x: &[f64]) -> Result<f64, EvalError> {
        match self {
            Node::Const(c) => Ok(*c),
            Node::Time => Ok(t),
            Node::State(i) => Ok(x[*i]),
            Node::Neg(a) => Ok(-a.eval(t, x)?),
            Node::Binary(op, a, b) => {
                let a = a.eval(t, x)?;
                let b = b.eval(t, x)?;
                apply_binary(*op, a, b)
            }
            Node::Call(func, args) => {
                let a = args[0].eval(t, x)?;
                match func {
                    Func::Min => Ok(a.min(args[1].eval(t, x)?)),
                    Func::Max => Ok(a.max(args[1].eval(t, x)?)),
                    _ => apply_unary(*func, a),
                }
            }
        }
    }

    fn uses_time(&self) -> bool {
        match self {
            Node::Time => true,
            Node::Const(_) | Node::State(_) => false,
            Node::Neg(a) => a.uses_time(),
            Node::Binary(_, a, b) => a.uses_time() || b.uses_time(),
            Node::Call(_, args) => args.iter().any(Node::uses_time),
        }
    }

    fn is_constant(&self) -> bool {
        match self {
            Node::Const(_) => true,
            Node::Time | Node::State(_) => false,
            Node::Neg(a) => a.is_constant(),
            Node::Binary(_, a, b) => a.is_constant() && b.is_constant(),
            Node::Call(_, args) => args.iter().all(Node::is_constant),
        }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            // `{:?}` gives the shortest representation that round-trips.
            Node::Const(c) if c.is_sign_negative() => write!(f, "(-{:?})", -c),
            Node::Const(c) => write!(f, "{c:?}"),
            Node::Time => f.write_str("t"),
            Node::State(i) => write!(f, "x{}", i + 1),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Node::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// One instruction of the postfix form evaluated by [`Expression::eval`].
#[derive(Debug, Clone, Copy, PartialEq)]
enum Instr {
    Const(f64),
    Time,
    State(usize),
    Neg,
    Square,
    Binary(BinaryOp),
    /// Binary operation with a constant right operand.
    BinaryConst(BinaryOp, f64),
    Unary(Func),
    MinMax(Func),
}

/// Postfix program and the stack depth it needs.
#[derive(Debug, Clone, PartialEq)]
struct Program {
    code: Vec<Instr>,
    depth: usize,
}

/// Evaluation stack size; deeper programs fall back to the tree walk.
const STACK: usize = 12;

impl Program {
    fn compile(root: &Node) -> Self {
        let mut code = Vec::new();
        let depth = emit(root, &mut code);
        Program { code, depth }
    }

    fn eval(&self, t: f64, x: &[f64]) -> Result<f64, EvalError> {
        let mut stack = [0.0f64; STACK];
        let mut sp = 0;
        for ins in &self.code {
            match *ins {
                Instr::Const(c) => {
                    stack[sp] = c;
                    sp += 1;
                }
                Instr::Time => {
                    stack[sp] = t;
                    sp += 1;
                }
                Instr::State(i) => {
                    stack[sp] = x[i];
                    sp += 1;
                }
                Instr::Neg => stack[sp - 1] = -stack[sp - 1],
                Instr::Square => stack[sp - 1] = finite(stack[sp - 1] * stack[sp - 1])?,
                Instr::Binary(op) => {
                    sp -= 1;
                    stack[sp - 1] = apply_binary(op, stack[sp - 1], stack[sp])?;
                }
                Instr::BinaryConst(op, c) => stack[sp - 1] = apply_binary(op, stack[sp - 1], c)?,
                Instr::Unary(func) => stack[sp - 1] = apply_unary(func, stack[sp - 1])?,
                Instr::MinMax(func) => {
                    sp -= 1;
                    let (a, b) = (stack[sp - 1], stack[sp]);
                    stack[sp - 1] = if func == Func::Min { a.min(b) } else { a.max(b) };
                }
            }
        }
        Ok(stack[0])
    }
}

/// Appends the postfix form of `node` (constant subtrees folded); returns the stack depth used.
fn emit(node: &Node, code: &mut Vec<Instr>) -> usize {
    if !matches!(node, Node::Const(_)) && node.is_constant() {
        if let Ok(c) = node.eval(0.0, &[]) {
            code.push(Instr::Const(c));
            return 1;
        }
    }
    match node {
        Node::Const(c) => {
            code.push(Instr::Const(*c));
            1
        }
        Node::Time => {
            code.push(Instr::Time);
            1
        }
        Node::State(i) => {
            code.push(Instr::State(*i));
            1
        }
        Node::Neg(a) => {
            let d = emit(a, code);
            code.push(Instr::Neg);
            d
        }
        Node::Binary(BinaryOp::Pow, a, b) if matches!(**b, Node::Const(c) if c == 2.0) => {
            let d = emit(a, code);
            code.push(Instr::Square);
            d
        }
        Node::Binary(op, a, b) if b.is_constant() && b.eval(0.0, &[]).is_ok() => {
            let d = emit(a, code);
            let c = b.eval(0.0, &[]).unwrap_or(f64::NAN);
            code.push(Instr::BinaryConst(*op, c));
            d
        }
        Node::Binary(op, a, b) => {
            let da = emit(a, code);
            let db = emit(b, code);
            code.push(Instr::Binary(*op));
            da.max(db + 1)
        }
        Node::Call(func, args) => {
            let mut depth = 0;
            for (k, a) in args.iter().enumerate() {
                depth = depth.max(emit(a, code) + k);
            }
            code.push(if func.arity() == 2 { Instr::MinMax(*func) } else { Instr::Unary(*func) });
            depth
        }
    }
}

fn apply_binary(op: BinaryOp, a: f64, b: f64) -> Result<f64, EvalError> {
    match op {
        BinaryOp::Add => finite(a + b),
        BinaryOp::Sub => finite(a - b),
        BinaryOp::Mul => finite(a * b),
        BinaryOp::Div => {
            if b == 0.0 {
                Err(EvalError::DivisionByZero)
            } else {
                finite(a / b)
            }
        }
        BinaryOp::Pow => {
            if b == 2.0 {
                finite(a * a)
            } else {
                finite(a.powf(b))
            }
        }
    }
}

fn apply_unary(func: Func, a: f64) -> Result<f64, EvalError> {
    match func {
        Func::Exp => finite(a.exp()),
        Func::Log => {
            if a <= 0.0 {
                Err(EvalError::LogDomain(a))
            } else {
                Ok(a.ln())
            }
        }
        Func::Sin => Ok(a.sin()),
        Func::Cos => Ok(a.cos()),
        Func::Sqrt => {
            if a < 0.0 {
                Err(EvalError::SqrtDomain(a))
            } else {
                Ok(a.sqrt())
            }
        }
        Func::Abs => Ok(a.abs()),
        Func::Tanh => Ok(a.tanh()),
        Func::Min | Func::Max => unreachable!("binary functions are applied by the caller"),
    }
}

/// A parsed formula in the variables `t, x1..x{dim}`.
#[derive(Debug, Clone)]
pub struct Expression {
    root: Node,
    program: Program,
    /// Cached value of a constant expression.
    constant: Option<f64>,
    dim: usize,
    source: String,
}

impl PartialEq for Expression {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root && self.dim == other.dim && self.source == other.source
    }
}

impl Expression {
    pub fn parse(src: &str, dim: usize) -> Result<Self, ParseError> {
        let tokens = tokenize(src)?;
        let mut p = Parser {
            tokens: &tokens,
            pos: 0,
            dim,
            src_len: src.len(),
        };
        let root = p.expr()?;
        if let Some(tok) = p.peek() {
            return Err(ParseError::Syntax {
                offset: tok.offset,
                message: format!("unexpected {}", tok.kind.describe()),
            });
        }
        Ok(Expression::from_root(root, dim, src.to_string()))
    }

    pub fn constant(value: f64, dim: usize) -> Self {
        Expression::from_root(Node::Const(value), dim, format!("{value:?}"))
    }

    fn from_root(root: Node, dim: usize, source: String) -> Self {
        let constant = if root.is_constant() { root.eval(0.0, &[]).ok() } else { None };
        Expression {
            program: Program::compile(&root),
            constant,
            root,
            dim,
            source,
        }
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> Result<f64, EvalError> {
        debug_assert!(x.len() >= self.dim);
        if let Some(c) = self.constant {
            return Ok(c);
        }
        if self.program.depth <= STACK {
            self.program.eval(t, x)
        } else {
            self.root.eval(t, x)
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// The text this expression was parsed from.
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn uses_time(&self) -> bool {
        self.root.uses_time()
    }

    /// `Some(c)` when the expression does not depend on `t` or `x`.
    pub fn constant_value(&self) -> Option<f64> {
        self.constant
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

/// Value, spatial gradient and spatial Hessian of an expression at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivatives {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Row-major `d x d`, symmetric.
    pub hessian: Vec<f64>,
}

impl Derivatives {
    pub fn hess(&self, i: usize, j: usize) -> f64 {
        self.hessian[i * self.gradient.len() + j]
    }
}

/// Spatial step used for finite differences at `x`.
pub fn fd_step_at(base: f64, x: &[f64]) -> f64 {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    base * norm.max(1.0)
}

/// Central finite-difference derivatives up to `order` (0, 1 or 2).
pub fn eval_with_derivatives(
    e: &Expression,
    t: f64,
    x: &[f64],
    order: u8,
    fd_step: f64,
) -> Result<Derivatives, EvalError> {
    let d = x.len();
    let value = e.eval(t, x)?;
    let mut gradient = vec![0.0; d];
    let mut hessian = vec![0.0; d * d];
    if order == 0 || e.root.is_constant() {
        return Ok(Derivatives {
            value,
            gradient,
            hessian,
        });
    }
    let h = fd_step_at(fd_step, x);
    let mut y = x.to_vec();
    let mut plus = vec![0.0; d];
    let mut minus = vec![0.0; d];
    for i in 0..d {
        y[i] = x[i] + h;
        plus[i] = e.eval(t, &y)?;
        y[i] = x[i] - h;
        minus[i] = e.eval(t, &y)?;
        y[i] = x[i];
        gradient[i] = (plus[i] - minus[i]) / (2.0 * h);
    }
    if order >= 2 {
        for i in 0..d {
            hessian[i * d + i] = (plus[i] - 2.0 * value + minus[i]) / (h * h);
            for j in (i + 1)..d {
                let mut corner = |si: f64, sj: f64| -> Result<f64, EvalError> {
                    y[i] = x[i] + si * h;
                    y[j] = x[j] + sj * h;
                    let v = e.eval(t, &y);
                    y[i] = x[i];
                    y[j] = x[j];
                    v
                };
                let pp = corner(1.0, 1.0)?;
                let pm = corner(1.0, -1.0)?;
                let mp = corner(-1.0, 1.0)?;
                let mm = corner(-1.0, -1.0)?;
                let hij = (pp - pm - mp + mm) / (4.0 * h * h);
                hessian[i * d + j] = hij;
                hessian[j * d + i] = hij;
            }
        }
    }
    Ok(Derivatives {
        value,
        gradient,
        hessian,
    })
}

/// Central finite difference in time with the same step convention.
pub fn time_derivative(e: &Expression, t: f64, x: &[f64], fd_step: f64) -> Result<f64, EvalError> {
    if !e.uses_time() {
        return Ok(0.0);
    }
    let h = fd_step * t.abs().max(1.0);
    let p = e.eval(t + h, x)?;
    let m = e.eval(t - h, x)?;
    Ok((p - m) / (2.0 * h))
}

// ---------------------------------------------------------------------------
// Lexer and parser

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

impl TokenKind {
    fn describe(&self) -> String {
        match self {
            TokenKind::Number(v) => format!("number {v}"),
            TokenKind::Ident(s) => format!("identifier `{s}`"),
            TokenKind::Plus => "`+`".into(),
            TokenKind::Minus => "`-`".into(),
            TokenKind::Star => "`*`".into(),
            TokenKind::Slash => "`/`".into(),
            TokenKind::Caret => "`^`".into(),
            TokenKind::LParen => "`(`".into(),
            TokenKind::RParen => "`)`".into(),
            TokenKind::Comma => "`,`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    offset: usize,
}

fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let kind = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => TokenKind::Plus,
            b'-' => TokenKind::Minus,
            b'*' => TokenKind::Star,
            b'/' => TokenKind::Slash,
            b'^' => TokenKind::Caret,
            b'(' => TokenKind::LParen,
            b')' => TokenKind::RParen,
            b',' => TokenKind::Comma,
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &src[start..i];
                let v: f64 = text.parse().map_err(|_| ParseError::Syntax {
                    offset: start,
                    message: format!("malformed number `{text}`"),
                })?;
                out.push(Token {
                    kind: TokenKind::Number(v),
                    offset: start,
                });
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push(Token {
                    kind: TokenKind::Ident(src[start..i].to_string()),
                    offset: start,
                });
                continue;
            }
            _ => {
                let ch = src[start..].chars().next().unwrap_or('?');
                return Err(ParseError::Syntax {
                    offset: start,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        };
        i += 1;
        out.push(Token {
            kind,
            offset: start,
        });
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    dim: usize,
    src_len: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn eat(&mut self, kind: &TokenKind) -> bool {
        if self.peek().map(|t| &t.kind) == Some(kind) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn error_here(&self, message: &str) -> ParseError {
        match self.peek() {
            Some(tok) => ParseError::Syntax {
                offset: tok.offset,
                message: format!("{message}, found {}", tok.kind.describe()),
            },
            None => ParseError::Syntax {
                offset: self.src_len,
                message: format!("{message}, found end of input"),
            },
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat(&TokenKind::Plus) {
                BinaryOp::Add
            } else if self.eat(&TokenKind::Minus) {
                BinaryOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat(&TokenKind::Star) {
                BinaryOp::Mul
            } else if self.eat(&TokenKind::Slash) {
                BinaryOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.eat(&TokenKind::Minus) {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if self.eat(&TokenKind::Caret) {
            let exponent = self.unary()?;
            return Ok(Node::Binary(BinaryOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        let Some(tok) = self.peek().cloned() else {
            return Err(self.error_here("expected an operand"));
        };
        match tok.kind {
            TokenKind::Number(v) => {
                self.pos += 1;
                Ok(Node::Const(v))
            }
            TokenKind::LParen => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(&TokenKind::RParen) {
                    return Err(self.error_here("expected `)`"));
                }
                Ok(inner)
            }
            TokenKind::Ident(name) => {
                self.pos += 1;
                if self.peek().map(|t| &t.kind) == Some(&TokenKind::LParen) {
                    return self.call(&name, tok.offset);
                }
                self.variable(&name, tok.offset)
            }
            _ => Err(self.error_here("expected an operand")),
        }
    }

    fn variable(&self, name: &str, offset: usize) -> Result<Node, ParseError> {
        if name == "t" {
            return Ok(Node::Time);
        }
        if name == "pi" {
            return Ok(Node::Const(std::f64::consts::PI));
        }
        if let Some(idx) = name.strip_prefix('x') {
            if let Ok(k) = idx.parse::<usize>() {
                if k >= 1 && k <= self.dim && !idx.starts_with('0') {
                    return Ok(Node::State(k - 1));
                }
            }
        }
        Err(ParseError::UnknownIdentifier {
            name: name.to_string(),
            offset,
        })
    }

    fn call(&mut self, name: &str, offset: usize) -> Result<Node, ParseError> {
        let func = Func::lookup(name).ok_or_else(|| ParseError::UnknownIdentifier {
            name: name.to_string(),
            offset,
        })?;
        // consume '('
        self.pos += 1;
        let mut args = Vec::new();
        if !self.eat(&TokenKind::RParen) {
            loop {
                args.push(self.expr()?);
                if self.eat(&TokenKind::Comma) {
                    continue;
                }
                if self.eat(&TokenKind::RParen) {
                    break;
                }
                return Err(self.error_here("expected `,` or `)`"));
            }
        }
        if args.len() != func.arity() {
            return Err(ParseError::Arity {
                name: name.to_string(),
                offset,
                expected: func.arity(),
                found: args.len(),
            });
        }
        Ok(Node::Call(func, args))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(src: &str, t: f64, x: &[f64]) -> f64 {
        Expression::parse(src, x.len().max(1)).unwrap().eval(t, x).unwrap()
    }

    #[test]
    fn arithmetic_examples() {
        assert_eq!(ev("x1^2 + 1", 0.0, &[2.0]), 5.0);
        assert_eq!(ev("exp(0)", 0.0, &[0.0]), 1.0);
        assert_eq!(ev("min(t, x1)", 0.3, &[0.7]), 0.3);
    }

    #[test]
    fn compiled_form_matches_tree_walk() {
        let sources = [
            "0.8*exp(-(x1^2-6)^2/8)",
            "max(x1, 2*x2) - min(t, 1/(1+x1^2))",
            "sqrt(abs(x1)) * tanh(x2) + log(2 + sin(x1*x2)) ^ 3",
            "-(-x1) ^ 2 + cos(pi * t)",
            "x1 / x2",
            "log(x1)",
            "(1 + 2 * 3) * x1",
        ];
        for src in sources {
            let e = Expression::parse(src, 2).unwrap();
            for &(t, a, b) in &[(0.0, 1.3, -0.7), (0.5, -2.0, 0.0), (1.0, 0.0, 4.5)] {
                assert_eq!(e.eval(t, &[a, b]), e.root().eval(t, &[a, b]), "{src} at {t} {a} {b}");
            }
        }
    }

    #[test]
    fn precedence() {
        assert_eq!(ev("-x1^2", 0.0, &[3.0]), -9.0);
        assert_eq!(ev("2^3^2", 0.0, &[0.0]), 512.0);
        assert_eq!(ev("2^-1", 0.0, &[0.0]), 0.5);
        assert_eq!(ev("1 - 2 - 3", 0.0, &[0.0]), -4.0);
        assert_eq!(ev("8 / 4 / 2", 0.0, &[0.0]), 1.0);
        assert_eq!(ev("2 * -3", 0.0, &[0.0]), -6.0);
        assert_eq!(ev("1 + 2 * 3", 0.0, &[0.0]), 7.0);
        assert_eq!(ev("x1 * x2 - t", 1.0, &[2.0, 3.0]), 5.0);
        assert_eq!(ev("1.5e-1 + 2E1", 0.0, &[0.0]), 20.15);
    }

    #[test]
    fn parse_errors_carry_offsets() {
        match Expression::parse("x1 + * 2", 1) {
            Err(ParseError::Syntax { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("{other:?}"),
        }
        match Expression::parse("x3 + 1", 2) {
            Err(ParseError::UnknownIdentifier { name, offset }) => {
                assert_eq!(name, "x3");
                assert_eq!(offset, 0);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            Expression::parse("foo(1)", 1),
            Err(ParseError::UnknownIdentifier { .. })
        ));
        assert!(matches!(
            Expression::parse("min(1)", 1),
            Err(ParseError::Arity {
                expected: 2,
                found: 1,
                ..
            })
        ));
        assert!(matches!(
            Expression::parse("(1 + 2", 1),
            Err(ParseError::Syntax { offset: 6, .. })
        ));
        assert!(matches!(Expression::parse("", 1), Err(ParseError::Syntax { .. })));
        assert!(matches!(Expression::parse("x0", 1), Err(ParseError::UnknownIdentifier { .. })));
        assert!(matches!(Expression::parse("1 $ 2", 1), Err(ParseError::Syntax { offset: 2, .. })));
    }

    #[test]
    fn domain_errors_are_reported() {
        let e = Expression::parse("1 / x1", 1).unwrap();
        assert_eq!(e.eval(0.0, &[0.0]), Err(EvalError::DivisionByZero));
        let e = Expression::parse("log(x1)", 1).unwrap();
        assert!(matches!(e.eval(0.0, &[-1.0]), Err(EvalError::LogDomain(_))));
        assert!(matches!(e.eval(0.0, &[0.0]), Err(EvalError::LogDomain(_))));
        let e = Expression::parse("sqrt(x1)", 1).unwrap();
        assert!(matches!(e.eval(0.0, &[-1.0]), Err(EvalError::SqrtDomain(_))));
        let e = Expression::parse("x1 ^ 0.5", 1).unwrap();
        assert_eq!(e.eval(0.0, &[-1.0]), Err(EvalError::NonFinite));
        let e = Expression::parse("exp(x1)", 1).unwrap();
        assert_eq!(e.eval(0.0, &[1000.0]), Err(EvalError::NonFinite));
    }

    #[test]
    fn derivative_examples() {
        let e = Expression::parse("x1^2", 1).unwrap();
        let d = eval_with_derivatives(&e, 0.0, &[3.0], 1, 1e-5).unwrap();
        assert_eq!(d.value, 9.0);
        assert!((d.gradient[0] - 6.0).abs() < 1e-6);

        let e = Expression::parse("1", 2).unwrap();
        let d = eval_with_derivatives(&e, 0.4, &[0.3, -2.0], 2, 1e-5).unwrap();
        assert_eq!(d.value, 1.0);
        assert!(d.gradient.iter().all(|&g| g == 0.0));
        assert!(d.hessian.iter().all(|&h| h == 0.0));

        // d²/dx² exp(-x²) = (4x² - 2) exp(-x²), which is -2 at x = 0.
        let e = Expression::parse("exp(-x1^2)", 1).unwrap();
        let d = eval_with_derivatives(&e, 0.0, &[0.0], 2, 1e-5).unwrap();
        assert!((d.hess(0, 0) + 2.0).abs() < 1e-4, "{}", d.hess(0, 0));
    }

    #[test]
    fn mixed_hessian_is_symmetric() {
        let e = Expression::parse("x1^2 * x2 + sin(x2)", 2).unwrap();
        let d = eval_with_derivatives(&e, 0.0, &[0.7, 0.4], 2, 1e-4).unwrap();
        assert!((d.hess(0, 1) - 1.4).abs() < 1e-5);
        assert_eq!(d.hess(0, 1), d.hess(1, 0));
        assert!((d.hess(1, 1) + 0.4f64.sin()).abs() < 1e-4);
        let dt = time_derivative(&Expression::parse("t^2 * x1", 1).unwrap(), 0.5, &[3.0], 1e-5).unwrap();
        assert!((dt - 3.0).abs() < 1e-6);
    }

    #[test]
    fn constants_detected() {
        let e = Expression::parse("2 * (3 + pi)", 1).unwrap();
        assert!(e.constant_value().is_some());
        assert!(!e.uses_time());
        assert!(Expression::parse("t + 1", 1).unwrap().uses_time());
        assert!(Expression::parse("x1", 1).unwrap().constant_value().is_none());
    }

    fn arb_node(dim: usize) -> impl Strategy<Value = Node> {
        let leaf = prop_oneof![
            (-50.0f64..50.0).prop_map(Node::Const),
            Just(Node::Const(-0.0)),
            (1e-9f64..1e-3).prop_map(Node::Const),
            Just(Node::Time),
            (0..dim).prop_map(Node::State),
        ];
        leaf.prop_recursive(5, 40, 3, move |inner| {
            prop_oneof![
                inner.clone().prop_map(|a| Node::Neg(Box::new(a))),
                (
                    prop_oneof![
                        Just(BinaryOp::Add),
                        Just(BinaryOp::Sub),
                        Just(BinaryOp::Mul),
                        Just(BinaryOp::Div),
                        Just(BinaryOp::Pow)
                    ],
                    inner.clone(),
                    inner.clone()
                )
                    .prop_map(|(op, a, b)| Node::Binary(op, Box::new(a), Box::new(b))),
                (
                    prop_oneof![
                        Just(Func::Exp),
                        Just(Func::Log),
                        Just(Func::Sin),
                        Just(Func::Cos),
                        Just(Func::Sqrt),
                        Just(Func::Abs),
                        Just(Func::Tanh)
                    ],
                    inner.clone()
                )
                    .prop_map(|(f, a)| Node::Call(f, vec![a])),
                (prop_oneof![Just(Func::Min), Just(Func::Max)], inner.clone(), inner)
                    .prop_map(|(f, a, b)| Node::Call(f, vec![a, b])),
            ]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn print_then_parse_preserves_evaluation(
            node in arb_node(2),
            points in proptest::collection::vec((-2.0f64..2.0, -3.0f64..3.0, -3.0f64..3.0), 8),
        ) {
            let e = Expression::from_root(node, 2, String::new());
            let printed = e.to_string();
            let back = Expression::parse(&printed, 2).unwrap();
            for (t, a, b) in points {
                let lhs = e.eval(t, &[a, b]);
                let rhs = back.eval(t, &[a, b]);
                match (lhs, rhs) {
                    (Ok(l), Ok(r)) => prop_assert_eq!(l.to_bits(), r.to_bits()),
                    (l, r) => prop_assert_eq!(l.is_err(), r.is_err()),
                }
            }
        }
    }
}
