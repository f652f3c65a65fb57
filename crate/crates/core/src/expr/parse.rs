//! Recursive-descent parser. Errors carry the byte offset of the offending
//! token so callers can point at the exact spot in the source string.

use thiserror::Error;

use super::{Expression, Func};

#[derive(Debug, Clone, PartialEq, Error)]
#[error("parse error at byte {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

fn err<T>(offset: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError {
        offset,
        message: message.into(),
    })
}

/// Parse `src` as a scalar field over `x1..x{arity}`.
pub fn parse(src: &str, arity: usize) -> Result<Expression, ParseError> {
    let mut p = Parser {
        src: src.as_bytes(),
        pos: 0,
        arity,
    };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return err(p.pos, format!("unexpected `{}`", p.src[p.pos] as char));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    arity: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Expression, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = Expression::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = Expression::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expression, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    lhs = Expression::Mul(Box::new(lhs), Box::new(self.factor()?));
                }
                Some(b'/') => {
                    self.pos += 1;
                    lhs = Expression::Div(Box::new(lhs), Box::new(self.factor()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expression, ParseError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Expression::Neg(Box::new(self.factor()?)));
        }
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let k = self.int_literal()?;
            return Ok(Expression::Pow(Box::new(base), k));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expression, ParseError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() == Some(b')') {
                    self.pos += 1;
                    Ok(e)
                } else {
                    err(self.pos, "expected `)`")
                }
            }
            Some(c) if c.is_ascii_digit() => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.word(),
            Some(c) => err(self.pos, format!("unexpected `{}`", c as char)),
            None => err(self.pos, "unexpected end of input"),
        }
    }

    fn number(&mut self) -> Result<Expression, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            let frac_start = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if self.pos == frac_start {
                return err(self.pos, "expected digits after decimal point");
            }
        }
        if matches!(self.src.get(self.pos), Some(&b'e') | Some(&b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(&b'+') | Some(&b'-')) {
                self.pos += 1;
            }
            if !self.src.get(self.pos).is_some_and(|b| b.is_ascii_digit()) {
                // `e` belonged to something else; literals never abut idents,
                // so reject rather than backtrack.
                self.pos = mark;
                return err(mark, "expected digits in exponent");
            }
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        match text.parse::<f64>() {
            Ok(v) => Ok(Expression::Num(v)),
            Err(_) => err(start, format!("invalid number literal `{text}`")),
        }
    }

    fn int_literal(&mut self) -> Result<i32, ParseError> {
        self.skip_ws();
        let start = self.pos;
        if self.src.get(self.pos) == Some(&b'-') {
            self.pos += 1;
        }
        let digits_start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == digits_start {
            return err(start, "expected integer exponent");
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<i32>()
            .map_err(|_| ParseError {
                offset: start,
                message: format!("exponent `{text}` out of range"),
            })
    }

    fn word(&mut self) -> Result<Expression, ParseError> {
        let start = self.pos;
        while self
            .src
            .get(self.pos)
            .is_some_and(|b| b.is_ascii_alphanumeric())
        {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();

        if let Some(rest) = text.strip_prefix('x') {
            if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) {
                if rest.starts_with('0') {
                    return err(start, format!("invalid variable `{text}` (indices start at x1)"));
                }
                let index: usize = rest.parse().map_err(|_| ParseError {
                    offset: start,
                    message: format!("variable index `{text}` out of range"),
                })?;
                if index > self.arity {
                    return err(
                        start,
                        format!("variable `{text}` exceeds arity {}", self.arity),
                    );
                }
                return Ok(Expression::Var(index));
            }
        }

        match Func::from_name(text) {
            Some(f) => {
                if self.peek() != Some(b'(') {
                    return err(self.pos, format!("expected `(` after `{text}`"));
                }
                self.pos += 1;
                let arg = self.expr()?;
                if self.peek() != Some(b')') {
                    return err(self.pos, "expected `)`");
                }
                self.pos += 1;
                Ok(Expression::Call(f, Box::new(arg)))
            }
            None => err(start, format!("unknown identifier `{text}`")),
        }
    }
}
