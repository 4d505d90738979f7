//! Arithmetic expression language for user-defined drift/diffusion entries.
//!
//! The grammar covers real literals, the state variables `x1..xn`, the binary
//! operators `+ - * / ^`, unary minus, and the functions `sqrt`, `abs`,
//! `exp`, `log`, `min`, `max`, `pow`. Precedence is `^` over unary minus over
//! `* /` over `+ -`; every operator is left associative except `^`, which is
//! right associative. There is no implicit multiplication: `2x1` is a parse
//! error.
//!
//! ```text
//! expr   := term { ("+" | "-") term }
//! term   := unary { ("*" | "/") unary }
//! unary  := "-" unary | power
//! power  := atom [ "^" unary ]
//! atom   := number | variable | function "(" expr { "," expr } ")" | "(" expr ")"
//! ```
//!
//! Evaluation is real-valued: `log` of a nonpositive number, division by
//! zero, `sqrt` of a negative number, and `^` with a negative base and
//! non-integer exponent are reported as [`ExprError::Domain`] rather than
//! produced as NaNs.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("unknown variable `{name}` at byte {offset} (dimension is {dim})")]
    UnknownVariable { offset: usize, name: String, dim: usize },
    #[error("unknown function `{name}` at byte {offset}")]
    UnknownFunction { offset: usize, name: String },
    #[error("function `{name}` at byte {offset} takes {expected} argument(s), got {got}")]
    Arity { offset: usize, name: String, expected: usize, got: usize },
    #[error("domain error: {what} in `{expr}`")]
    Domain { what: String, expr: String },
    #[error("dimension mismatch: expression over {expected} variable(s) evaluated at a {got}-vector")]
    DimensionMismatch { expected: usize, got: usize },
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
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }

    fn prec(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sqrt,
    Abs,
    Exp,
    Log,
    Min,
    Max,
    Pow,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Min => "min",
            Func::Max => "max",
            Func::Pow => "pow",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Sqrt | Func::Abs | Func::Exp | Func::Log => 1,
            Func::Min | Func::Max | Func::Pow => 2,
        }
    }

    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "min" => Func::Min,
            "max" => Func::Max,
            "pow" => Func::Pow,
            _ => return None,
        })
    }
}

/// Abstract syntax tree of a coefficient expression. Variables are stored
/// with their 1-based index (`Var(1)` is `x1`).
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Lit(f64),
    Var(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    /// Number of variables the enclosing model provides; every `Var` index is
    /// within `1..=dim` by construction of [`parse`].
    pub fn max_var(&self) -> usize {
        match self {
            Expr::Lit(_) => 0,
            Expr::Var(i) => *i,
            Expr::Neg(e) => e.max_var(),
            Expr::Bin(_, l, r) => l.max_var().max(r.max_var()),
            Expr::Call(_, args) => args.iter().map(Expr::max_var).max().unwrap_or(0),
        }
    }

    /// True when the expression contains no variables.
    pub fn is_constant(&self) -> bool {
        self.max_var() == 0
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64, ExprError> {
        let v = self.eval_inner(x)?;
        if !v.is_finite() {
            return Err(ExprError::Domain {
                what: "non-finite result".into(),
                expr: self.to_string(),
            });
        }
        Ok(v)
    }

    fn eval_inner(&self, x: &[f64]) -> Result<f64, ExprError> {
        match self {
            Expr::Lit(v) => Ok(*v),
            Expr::Var(i) => x.get(*i - 1).copied().ok_or(ExprError::DimensionMismatch {
                expected: *i,
                got: x.len(),
            }),
            Expr::Neg(e) => Ok(-e.eval_inner(x)?),
            Expr::Bin(op, l, r) => {
                let a = l.eval_inner(x)?;
                let b = r.eval_inner(x)?;
                match op {
                    BinOp::Add => Ok(a + b),
                    BinOp::Sub => Ok(a - b),
                    BinOp::Mul => Ok(a * b),
                    BinOp::Div => {
                        if b == 0.0 {
                            Err(self.domain("division by zero"))
                        } else {
                            Ok(a / b)
                        }
                    }
                    BinOp::Pow => self.real_pow(a, b),
                }
            }
            Expr::Call(f, args) => {
                let a = args[0].eval_inner(x)?;
                match f {
                    Func::Sqrt => {
                        if a < 0.0 {
                            Err(self.domain("sqrt of negative"))
                        } else {
                            Ok(a.sqrt())
                        }
                    }
                    Func::Abs => Ok(a.abs()),
                    Func::Exp => Ok(a.exp()),
                    Func::Log => {
                        if a <= 0.0 {
                            Err(self.domain("log of nonpositive"))
                        } else {
                            Ok(a.ln())
                        }
                    }
                    Func::Min => Ok(a.min(args[1].eval_inner(x)?)),
                    Func::Max => Ok(a.max(args[1].eval_inner(x)?)),
                    Func::Pow => {
                        let b = args[1].eval_inner(x)?;
                        self.real_pow(a, b)
                    }
                }
            }
        }
    }

    fn real_pow(&self, base: f64, exp: f64) -> Result<f64, ExprError> {
        if base < 0.0 && exp.fract() != 0.0 {
            return Err(self.domain("negative base with non-integer exponent"));
        }
        if base == 0.0 && exp < 0.0 {
            return Err(self.domain("zero base with negative exponent"));
        }
        Ok(base.powf(exp))
    }

    fn domain(&self, what: &str) -> ExprError {
        ExprError::Domain {
            what: what.into(),
            expr: self.to_string(),
        }
    }

    fn prec(&self) -> u8 {
        match self {
            Expr::Lit(_) | Expr::Var(_) | Expr::Call(..) => 5,
            Expr::Bin(op, ..) => op.prec(),
            Expr::Neg(_) => 3,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        let parens = self.prec() < min_prec;
        if parens {
            write!(f, "(")?;
        }
        match self {
            Expr::Lit(v) => write!(f, "{v:?}")?,
            Expr::Var(i) => write!(f, "x{i}")?,
            Expr::Neg(e) => {
                write!(f, "-")?;
                e.fmt_prec(f, 3)?;
            }
            Expr::Bin(op, l, r) => {
                let p = op.prec();
                if *op == BinOp::Pow {
                    // right associative; the base must be an atom
                    l.fmt_prec(f, 5)?;
                    write!(f, "^")?;
                    r.fmt_prec(f, 3)?;
                } else {
                    l.fmt_prec(f, p)?;
                    write!(f, " {} ", op.symbol())?;
                    r.fmt_prec(f, p + 1)?;
                }
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    a.fmt_prec(f, 0)?;
                }
                write!(f, ")")?;
            }
        }
        if parens {
            write!(f, ")")?;
        }
        Ok(())
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
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

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { src: src.as_bytes(), pos: 0 }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    /// Next token with the byte offset where it starts; `None` at end.
    fn next(&mut self) -> Result<Option<(usize, Tok)>, ExprError> {
        self.skip_ws();
        if self.pos >= self.src.len() {
            return Ok(None);
        }
        let start = self.pos;
        let c = self.src[self.pos];
        let tok = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b',' => Tok::Comma,
            b'0'..=b'9' | b'.' => return Ok(Some((start, self.lex_number()?))),
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut end = self.pos;
                while end < self.src.len()
                    && (self.src[end].is_ascii_alphanumeric() || self.src[end] == b'_')
                {
                    end += 1;
                }
                let name = std::str::from_utf8(&self.src[self.pos..end]).unwrap().to_string();
                self.pos = end;
                return Ok(Some((start, Tok::Ident(name))));
            }
            _ => {
                return Err(ExprError::Parse {
                    offset: start,
                    message: format!("unexpected character `{}`", c as char),
                })
            }
        };
        self.pos += 1;
        Ok(Some((start, tok)))
    }

    fn lex_number(&mut self) -> Result<Tok, ExprError> {
        let start = self.pos;
        let mut end = self.pos;
        while end < self.src.len() && self.src[end].is_ascii_digit() {
            end += 1;
        }
        if end < self.src.len() && self.src[end] == b'.' {
            end += 1;
            while end < self.src.len() && self.src[end].is_ascii_digit() {
                end += 1;
            }
        }
        if end < self.src.len() && (self.src[end] == b'e' || self.src[end] == b'E') {
            let mut probe = end + 1;
            if probe < self.src.len() && (self.src[probe] == b'+' || self.src[probe] == b'-') {
                probe += 1;
            }
            if probe < self.src.len() && self.src[probe].is_ascii_digit() {
                end = probe;
                while end < self.src.len() && self.src[end].is_ascii_digit() {
                    end += 1;
                }
            }
        }
        let text = std::str::from_utf8(&self.src[start..end]).unwrap();
        let value: f64 = text.parse().map_err(|_| ExprError::Parse {
            offset: start,
            message: format!("invalid number `{text}`"),
        })?;
        // No implicit multiplication: reject `2x1` outright.
        if end < self.src.len() && (self.src[end].is_ascii_alphabetic() || self.src[end] == b'_') {
            return Err(ExprError::Parse {
                offset: end,
                message: "implicit multiplication is not allowed".into(),
            });
        }
        self.pos = end;
        Ok(Tok::Num(value))
    }
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    idx: usize,
    dim: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&(usize, Tok)> {
        self.toks.get(self.idx)
    }

    fn advance(&mut self) -> Option<(usize, Tok)> {
        let t = self.toks.get(self.idx).cloned();
        if t.is_some() {
            self.idx += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<usize, ExprError> {
        match self.advance() {
            Some((off, t)) if t == want => Ok(off),
            Some((off, t)) => Err(ExprError::Parse {
                offset: off,
                message: format!("expected {what}, found {t:?}"),
            }),
            None => Err(ExprError::Parse {
                offset: self.len,
                message: format!("expected {what}, found end of input"),
            }),
        }
    }

    fn parse_expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.parse_term()?;
        while let Some((_, tok)) = self.peek() {
            let op = match tok {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => break,
            };
            self.idx += 1;
            let rhs = self.parse_term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.parse_unary()?;
        while let Some((_, tok)) = self.peek() {
            let op = match tok {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => break,
            };
            self.idx += 1;
            let rhs = self.parse_unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self) -> Result<Expr, ExprError> {
        if let Some((_, Tok::Minus)) = self.peek() {
            self.idx += 1;
            let inner = self.parse_unary()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.parse_power()
    }

    fn parse_power(&mut self) -> Result<Expr, ExprError> {
        let base = self.parse_atom()?;
        if let Some((_, Tok::Caret)) = self.peek() {
            self.idx += 1;
            let exp = self.parse_unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn parse_atom(&mut self) -> Result<Expr, ExprError> {
        match self.advance() {
            Some((_, Tok::Num(v))) => Ok(Expr::Lit(v)),
            Some((_, Tok::LParen)) => {
                let inner = self.parse_expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Some((off, Tok::Ident(name))) => self.parse_ident(off, name),
            Some((off, t)) => Err(ExprError::Parse {
                offset: off,
                message: format!("expected a value, found {t:?}"),
            }),
            None => Err(ExprError::Parse {
                offset: self.len,
                message: "expected a value, found end of input".into(),
            }),
        }
    }

    fn parse_ident(&mut self, off: usize, name: String) -> Result<Expr, ExprError> {
        let is_call = matches!(self.peek(), Some((_, Tok::LParen)));
        if is_call {
            let func = Func::lookup(&name).ok_or_else(|| ExprError::UnknownFunction {
                offset: off,
                name: name.clone(),
            })?;
            self.idx += 1; // consume '('
            let mut args = vec![self.parse_expr()?];
            while let Some((_, Tok::Comma)) = self.peek() {
                self.idx += 1;
                args.push(self.parse_expr()?);
            }
            self.expect(Tok::RParen, "`)`")?;
            if args.len() != func.arity() {
                return Err(ExprError::Arity {
                    offset: off,
                    name,
                    expected: func.arity(),
                    got: args.len(),
                });
            }
            return Ok(Expr::Call(func, args));
        }
        if let Some(rest) = name.strip_prefix('x') {
            if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) {
                let idx: usize = rest.parse().map_err(|_| ExprError::UnknownVariable {
                    offset: off,
                    name: name.clone(),
                    dim: self.dim,
                })?;
                if idx == 0 || idx > self.dim {
                    return Err(ExprError::UnknownVariable { offset: off, name, dim: self.dim });
                }
                return Ok(Expr::Var(idx));
            }
        }
        Err(ExprError::UnknownVariable { offset: off, name, dim: self.dim })
    }
}

/// Parse `source` as an expression over the variables `x1..x<n>`.
pub fn parse(source: &str, n: usize) -> Result<Expr, ExprError> {
    if source.trim().is_empty() {
        return Err(ExprError::Parse {
            offset: 0,
            message: "empty expression".into(),
        });
    }
    let mut lexer = Lexer::new(source);
    let mut toks = Vec::new();
    while let Some(t) = lexer.next()? {
        toks.push(t);
    }
    let mut parser = Parser { toks, idx: 0, dim: n, len: source.len() };
    let expr = parser.parse_expr()?;
    if let Some((off, tok)) = parser.peek() {
        return Err(ExprError::Parse {
            offset: *off,
            message: format!("unexpected trailing {tok:?}"),
        });
    }
    Ok(expr)
}
