//! Tiny closed-form expression language for coefficient functions of `(x, t)`.
//!
//! The grammar is fixed: real literals, the variables `x` and `t`, the
//! constants `pi` and `e`, binary `+ - * /`, unary negation, and the
//! functions `exp`, `sin`, `cos`, `sqrt`. Precedence is the usual one
//! (unary minus binds tighter than `*`/`/`, which bind tighter than
//! `+`/`-`). There are no user-defined functions and no conditionals;
//! piecewise coefficients live at the system level as sampled tables.
//!
//! Parsed trees are immutable and evaluation is a pure function of the
//! tree and the point, so `Expr` values can be shared freely across
//! worker threads.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Unary functions admitted by the grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Sin,
    Cos,
    Sqrt,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        match name {
            "exp" => Some(Func::Exp),
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "sqrt" => Some(Func::Sqrt),
            _ => None,
        }
    }
}

/// Abstract syntax tree of a coefficient expression.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    X,
    T,
    Pi,
    E,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Parse failure with the byte offset of the offending token.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdent { offset: usize, name: String },
    #[error("function `{func}` takes 1 argument, got {got} (at byte {offset})")]
    Arity {
        offset: usize,
        func: String,
        got: usize,
    },
}

/// Evaluation failure on otherwise finite inputs.
#[derive(Debug, Clone, Copy, Error, PartialEq)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("sqrt of negative value {0}")]
    NegativeSqrt(f64),
}

impl Expr {
    /// Evaluate at the point `(x, t)` in IEEE-754 double precision.
    pub fn eval(&self, x: f64, t: f64) -> Result<f64, EvalError> {
        match self {
            Expr::Num(v) => Ok(*v),
            Expr::X => Ok(x),
            Expr::T => Ok(t),
            Expr::Pi => Ok(std::f64::consts::PI),
            Expr::E => Ok(std::f64::consts::E),
            Expr::Neg(e) => Ok(-e.eval(x, t)?),
            Expr::Add(a, b) => Ok(a.eval(x, t)? + b.eval(x, t)?),
            Expr::Sub(a, b) => Ok(a.eval(x, t)? - b.eval(x, t)?),
            Expr::Mul(a, b) => Ok(a.eval(x, t)? * b.eval(x, t)?),
            Expr::Div(a, b) => {
                let denom = b.eval(x, t)?;
                if denom == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                Ok(a.eval(x, t)? / denom)
            }
            Expr::Call(f, arg) => {
                let v = arg.eval(x, t)?;
                match f {
                    Func::Exp => Ok(v.exp()),
                    Func::Sin => Ok(v.sin()),
                    Func::Cos => Ok(v.cos()),
                    Func::Sqrt => {
                        if v < 0.0 {
                            return Err(EvalError::NegativeSqrt(v));
                        }
                        Ok(v.sqrt())
                    }
                }
            }
        }
    }

    /// True when the tree references neither `x` nor `t`.
    pub fn is_closed(&self) -> bool {
        match self {
            Expr::Num(_) | Expr::Pi | Expr::E => true,
            Expr::X | Expr::T => false,
            Expr::Neg(e) | Expr::Call(_, e) => e.is_closed(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.is_closed() && b.is_closed()
            }
        }
    }

    /// Numeric value of a closed tree, if it evaluates cleanly.
    pub fn as_constant(&self) -> Option<f64> {
        if self.is_closed() {
            self.eval(0.0, 0.0).ok()
        } else {
            None
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(..) => 3,
            _ => 4,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, parent: u8, is_right: bool) -> fmt::Result {
        let prec = self.precedence();
        // Right operands of -, / need parens at equal precedence.
        let needs_parens = prec < parent || (prec == parent && is_right && parent <= 2);
        if needs_parens {
            write!(f, "(")?;
        }
        match self {
            Expr::Num(v) => {
                if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) {
                    write!(f, "({v})")?;
                } else {
                    write!(f, "{v}")?;
                }
            }
            Expr::X => write!(f, "x")?,
            Expr::T => write!(f, "t")?,
            Expr::Pi => write!(f, "pi")?,
            Expr::E => write!(f, "e")?,
            Expr::Neg(e) => {
                write!(f, "-")?;
                e.fmt_prec(f, 3, false)?;
            }
            Expr::Add(a, b) => {
                a.fmt_prec(f, 1, false)?;
                write!(f, " + ")?;
                b.fmt_prec(f, 1, true)?;
            }
            Expr::Sub(a, b) => {
                a.fmt_prec(f, 1, false)?;
                write!(f, " - ")?;
                b.fmt_prec(f, 1, true)?;
            }
            Expr::Mul(a, b) => {
                a.fmt_prec(f, 2, false)?;
                write!(f, "*")?;
                b.fmt_prec(f, 2, true)?;
            }
            Expr::Div(a, b) => {
                a.fmt_prec(f, 2, false)?;
                write!(f, "/")?;
                b.fmt_prec(f, 2, true)?;
            }
            Expr::Call(func, arg) => {
                write!(f, "{}(", func.name())?;
                arg.fmt_prec(f, 0, false)?;
                write!(f, ")")?;
            }
        }
        if needs_parens {
            write!(f, ")")?;
        }
        Ok(())
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0, false)
    }
}

impl FromStr for Expr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
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
    LParen,
    RParen,
    Comma,
}

struct Lexer<'a> {
    src: &'a str,
    tokens: Vec<(usize, Tok)>,
}

impl<'a> Lexer<'a> {
    fn run(src: &'a str) -> Result<Vec<(usize, Tok)>, ParseError> {
        let mut lx = Lexer {
            src,
            tokens: Vec::new(),
        };
        lx.lex()?;
        Ok(lx.tokens)
    }

    fn lex(&mut self) -> Result<(), ParseError> {
        let bytes = self.src.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i];
            match c {
                b' ' | b'\t' | b'\r' | b'\n' => i += 1,
                b'+' => {
                    self.tokens.push((i, Tok::Plus));
                    i += 1;
                }
                b'-' => {
                    self.tokens.push((i, Tok::Minus));
                    i += 1;
                }
                b'*' => {
                    self.tokens.push((i, Tok::Star));
                    i += 1;
                }
                b'/' => {
                    self.tokens.push((i, Tok::Slash));
                    i += 1;
                }
                b'(' => {
                    self.tokens.push((i, Tok::LParen));
                    i += 1;
                }
                b')' => {
                    self.tokens.push((i, Tok::RParen));
                    i += 1;
                }
                b',' => {
                    self.tokens.push((i, Tok::Comma));
                    i += 1;
                }
                b'0'..=b'9' | b'.' => {
                    let start = i;
                    while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                        i += 1;
                    }
                    // optional exponent, only if followed by digits
                    if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                        let mut j = i + 1;
                        if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                            j += 1;
                        }
                        if j < bytes.len() && bytes[j].is_ascii_digit() {
                            i = j;
                            while i < bytes.len() && bytes[i].is_ascii_digit() {
                                i += 1;
                            }
                        }
                    }
                    let text = &self.src[start..i];
                    let value = f64::from_str(text).map_err(|_| ParseError::Syntax {
                        offset: start,
                        message: format!("invalid number literal `{text}`"),
                    })?;
                    self.tokens.push((start, Tok::Num(value)));
                }
                b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                    let start = i;
                    while i < bytes.len()
                        && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                    {
                        i += 1;
                    }
                    self.tokens
                        .push((start, Tok::Ident(self.src[start..i].to_string())));
                }
                _ => {
                    // report the full char, not just the lead byte
                    let ch = self.src[i..].chars().next().unwrap();
                    return Err(ParseError::Syntax {
                        offset: i,
                        message: format!("unexpected character `{ch}`"),
                    });
                }
            }
        }
        Ok(())
    }
}

struct Parser {
    tokens: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

/// Parse an expression string into its unique AST.
///
/// Whitespace-insensitive; never panics on arbitrary input.
pub fn parse(src: &str) -> Result<Expr, ParseError> {
    let tokens = Lexer::run(src)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        end: src.len(),
    };
    let expr = p.parse_sum()?;
    if let Some((offset, _)) = p.peek() {
        return Err(ParseError::Syntax {
            offset,
            message: "unexpected trailing input".to_string(),
        });
    }
    Ok(expr)
}

impl Parser {
    fn peek(&self) -> Option<(usize, Tok)> {
        self.tokens.get(self.pos).cloned()
    }

    fn bump(&mut self) -> Option<(usize, Tok)> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn here(&self) -> usize {
        self.tokens.get(self.pos).map(|(o, _)| *o).unwrap_or(self.end)
    }

    fn parse_sum(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_term()?;
        loop {
            match self.peek() {
                Some((_, Tok::Plus)) => {
                    self.bump();
                    let rhs = self.parse_term()?;
                    lhs = Expr::Add(Box::new(lhs), Box::new(rhs));
                }
                Some((_, Tok::Minus)) => {
                    self.bump();
                    let rhs = self.parse_term()?;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn parse_term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_factor()?;
        loop {
            match self.peek() {
                Some((_, Tok::Star)) => {
                    self.bump();
                    let rhs = self.parse_factor()?;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(rhs));
                }
                Some((_, Tok::Slash)) => {
                    self.bump();
                    let rhs = self.parse_factor()?;
                    lhs = Expr::Div(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn parse_factor(&mut self) -> Result<Expr, ParseError> {
        if let Some((_, Tok::Minus)) = self.peek() {
            self.bump();
            let inner = self.parse_factor()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.parse_primary()
    }

    fn parse_primary(&mut self) -> Result<Expr, ParseError> {
        match self.bump() {
            Some((_, Tok::Num(v))) => Ok(Expr::Num(v)),
            Some((offset, Tok::Ident(name))) => self.finish_ident(offset, name),
            Some((_, Tok::LParen)) => {
                let inner = self.parse_sum()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Some((offset, tok)) => Err(ParseError::Syntax {
                offset,
                message: format!("expected a value, found `{tok:?}`"),
            }),
            None => Err(ParseError::Syntax {
                offset: self.end,
                message: "unexpected end of input".to_string(),
            }),
        }
    }

    fn finish_ident(&mut self, offset: usize, name: String) -> Result<Expr, ParseError> {
        let calls = matches!(self.peek(), Some((_, Tok::LParen)));
        if calls {
            let func = Func::from_name(&name).ok_or_else(|| match name.as_str() {
                "x" | "t" | "pi" | "e" => ParseError::Syntax {
                    offset,
                    message: format!("`{name}` is not a function"),
                },
                _ => ParseError::UnknownIdent {
                    offset,
                    name: name.clone(),
                },
            })?;
            self.bump(); // consume '('
            let mut args = vec![self.parse_sum()?];
            while let Some((_, Tok::Comma)) = self.peek() {
                self.bump();
                args.push(self.parse_sum()?);
            }
            self.expect_rparen()?;
            if args.len() != 1 {
                return Err(ParseError::Arity {
                    offset,
                    func: name,
                    got: args.len(),
                });
            }
            return Ok(Expr::Call(func, Box::new(args.pop().unwrap())));
        }
        match name.as_str() {
            "x" => Ok(Expr::X),
            "t" => Ok(Expr::T),
            "pi" => Ok(Expr::Pi),
            "e" => Ok(Expr::E),
            "exp" | "sin" | "cos" | "sqrt" => Err(ParseError::Syntax {
                offset,
                message: format!("function `{name}` requires an argument list"),
            }),
            _ => Err(ParseError::UnknownIdent { offset, name }),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        match self.bump() {
            Some((_, Tok::RParen)) => Ok(()),
            Some((offset, tok)) => Err(ParseError::Syntax {
                offset,
                message: format!("expected `)`, found `{tok:?}`"),
            }),
            None => Err(ParseError::Syntax {
                offset: self.here(),
                message: "expected `)`, found end of input".to_string(),
            }),
        }
    }
}
