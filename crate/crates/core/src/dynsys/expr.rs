//! Recursive-descent parser and evaluator for vector-field expressions.
//!
//! Grammar (frozen):
//!
//! ```text
//! expr   := term   (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := '-' factor | power
//! power  := atom ('^' factor)?            // right-associative
//! atom   := number | ident | ident '(' expr ')' | '(' expr ')'
//! ```
//!
//! Identifiers are the state variables `x1 .. x<dim>` and the functions
//! `sin`, `cos`, `exp`, `tanh`. Error positions are 1-based character
//! indices; an unexpected end of input points one past the last character.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Tanh,
}

impl Func {
    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Exp => v.exp(),
            Func::Tanh => v.tanh(),
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "tanh" => Some(Func::Tanh),
            _ => None,
        }
    }
}

/// Parsed expression tree.
#[derive(Debug, Clone)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    /// Evaluate at a state vector.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => x[*i],
            Expr::Neg(e) => -e.eval(x),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Pow(a, b) => a.eval(x).powf(b.eval(x)),
            Expr::Call(f, e) => f.apply(e.eval(x)),
        }
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
}

struct Lexer<'a> {
    src: &'a str,
    chars: Vec<(usize, char)>,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src,
            chars: src.char_indices().collect(),
            pos: 0,
        }
    }

    /// 1-based position of the character at index `i` (or one past the end).
    fn char_pos(&self, i: usize) -> usize {
        i + 1
    }

    fn tokenize(mut self) -> Result<Vec<(Tok, usize)>> {
        let mut out = Vec::new();
        while self.pos < self.chars.len() {
            let (_, c) = self.chars[self.pos];
            let start = self.pos;
            match c {
                ' ' | '\t' => {
                    self.pos += 1;
                }
                '+' => {
                    out.push((Tok::Plus, self.char_pos(start)));
                    self.pos += 1;
                }
                '-' => {
                    out.push((Tok::Minus, self.char_pos(start)));
                    self.pos += 1;
                }
                '*' => {
                    out.push((Tok::Star, self.char_pos(start)));
                    self.pos += 1;
                }
                '/' => {
                    out.push((Tok::Slash, self.char_pos(start)));
                    self.pos += 1;
                }
                '^' => {
                    out.push((Tok::Caret, self.char_pos(start)));
                    self.pos += 1;
                }
                '(' => {
                    out.push((Tok::LParen, self.char_pos(start)));
                    self.pos += 1;
                }
                ')' => {
                    out.push((Tok::RParen, self.char_pos(start)));
                    self.pos += 1;
                }
                c if c.is_ascii_digit() || c == '.' => {
                    let begin = self.chars[self.pos].0;
                    let mut end = begin;
                    let mut seen_e = false;
                    while self.pos < self.chars.len() {
                        let (bi, ch) = self.chars[self.pos];
                        let ok = ch.is_ascii_digit()
                            || ch == '.'
                            || ch == 'e'
                            || ch == 'E'
                            || ((ch == '+' || ch == '-') && seen_e && {
                                let prev = self.src.as_bytes()[bi - 1];
                                prev == b'e' || prev == b'E'
                            });
                        if !ok {
                            break;
                        }
                        if ch == 'e' || ch == 'E' {
                            seen_e = true;
                        }
                        end = bi + ch.len_utf8();
                        self.pos += 1;
                    }
                    let text = &self.src[begin..end];
                    let value = text.parse::<f64>().map_err(|_| Error::Syntax {
                        position: self.char_pos(start),
                        message: format!("invalid number literal `{text}`"),
                    })?;
                    out.push((Tok::Num(value), self.char_pos(start)));
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let begin = self.chars[self.pos].0;
                    let mut end = begin;
                    while self.pos < self.chars.len() {
                        let (bi, ch) = self.chars[self.pos];
                        if ch.is_ascii_alphanumeric() || ch == '_' {
                            end = bi + ch.len_utf8();
                            self.pos += 1;
                        } else {
                            break;
                        }
                    }
                    out.push((Tok::Ident(self.src[begin..end].to_string()), self.char_pos(start)));
                }
                other => {
                    return Err(Error::Syntax {
                        position: self.char_pos(start),
                        message: format!("unexpected character `{other}`"),
                    });
                }
            }
        }
        Ok(out)
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    idx: usize,
    end_pos: usize,
    dim: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.idx).map(|(t, _)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.idx).map_or(self.end_pos, |(_, p)| *p)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.idx).map(|(t, _)| t.clone());
        if t.is_some() {
            self.idx += 1;
        }
        t
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<()> {
        if self.peek() == Some(&tok) {
            self.idx += 1;
            Ok(())
        } else {
            Err(Error::Syntax {
                position: self.pos(),
                message: format!("expected {what}"),
            })
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.idx += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Tok::Minus) => {
                    self.idx += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.idx += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
                }
                Some(Tok::Slash) => {
                    self.idx += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.factor()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        if self.peek() == Some(&Tok::Minus) {
            self.idx += 1;
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek() == Some(&Tok::Caret) {
            self.idx += 1;
            let exp = self.factor()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let pos = self.pos();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Expr::Const(v)),
            Some(Tok::Ident(name)) => {
                if self.peek() == Some(&Tok::LParen) {
                    let func = Func::from_name(&name).ok_or(Error::UnknownIdentifier {
                        name: name.clone(),
                        position: pos,
                    })?;
                    self.idx += 1;
                    let arg = self.expr()?;
                    self.expect(Tok::RParen, "`)`")?;
                    Ok(Expr::Call(func, Box::new(arg)))
                } else {
                    let idx = parse_var(&name, self.dim).ok_or(Error::UnknownIdentifier {
                        name,
                        position: pos,
                    })?;
                    Ok(Expr::Var(idx))
                }
            }
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            _ => Err(Error::Syntax {
                position: pos,
                message: "expected a number, variable, or `(`".into(),
            }),
        }
    }
}

/// `x1 .. x<dim>` to zero-based index.
fn parse_var(name: &str, dim: usize) -> Option<usize> {
    let rest = name.strip_prefix('x')?;
    let i: usize = rest.parse().ok()?;
    if i >= 1 && i <= dim {
        Some(i - 1)
    } else {
        None
    }
}

/// Parse one expression in `dim` state variables.
pub fn parse_expression(src: &str, dim: usize) -> Result<Expr> {
    let toks = Lexer::new(src).tokenize()?;
    let end_pos = src.chars().count() + 1;
    let mut parser = Parser {
        toks,
        idx: 0,
        end_pos,
        dim,
    };
    let expr = parser.expr()?;
    if parser.idx < parser.toks.len() {
        return Err(Error::Syntax {
            position: parser.pos(),
            message: "unexpected trailing input".into(),
        });
    }
    Ok(expr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(src: &str, x: &[f64]) -> f64 {
        parse_expression(src, x.len()).unwrap().eval(x)
    }

    #[test]
    fn arithmetic_and_precedence() {
        assert_eq!(eval("1 + 2*3", &[0.0]), 7.0);
        assert_eq!(eval("(1 + 2)*3", &[0.0]), 9.0);
        assert_eq!(eval("2^3^2", &[0.0]), 512.0); // right-associative
        assert_eq!(eval("-x1^2", &[3.0]), -9.0); // unary binds looser than ^
        assert_eq!(eval("8/4/2", &[0.0]), 1.0);
    }

    #[test]
    fn functions_and_variables() {
        assert_eq!(eval("x1 - x1^3", &[1.0, 1.0]), 0.0);
        assert!((eval("sin(x1)", &[std::f64::consts::PI / 2.0]) - 1.0).abs() < 1e-15);
        assert!((eval("exp(0)", &[0.0]) - 1.0).abs() < 1e-15);
        assert!((eval("tanh(1000)", &[0.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn scientific_literals() {
        assert_eq!(eval("1e-3 + 2.5E2", &[0.0]), 250.001);
    }

    #[test]
    fn error_positions_are_one_based() {
        let err = parse_expression("x1 +", 1).unwrap_err();
        match err {
            Error::Syntax { position, .. } => assert_eq!(position, 5),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_identifiers() {
        let err = parse_expression("x3", 2).unwrap_err();
        match err {
            Error::UnknownIdentifier { name, position } => {
                assert_eq!(name, "x3");
                assert_eq!(position, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
        let err = parse_expression("x1 + foo(x1)", 1).unwrap_err();
        match err {
            Error::UnknownIdentifier { name, position } => {
                assert_eq!(name, "foo");
                assert_eq!(position, 6);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trailing_input_rejected() {
        assert!(parse_expression("1 2", 1).is_err());
        assert!(parse_expression("x1)", 1).is_err());
    }
}
