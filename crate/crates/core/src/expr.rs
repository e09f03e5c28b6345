//! Closed-form coefficient expressions: sums of products of constants and
//! `sin(k)` / `cos(k)` harmonics, where `sin(k1,k2)` means `sin(2 pi (k1 xi_1 + k2 xi_2))`.
//!
//! ```text
//! 1 + 0.3*sin(1,-1) - 0.2*cos(0,2)*sin(1,0)
//! ```

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
enum Factor {
    Const(f64),
    Sin([i64; 2]),
    Cos([i64; 2]),
}

/// A parsed scalar expression.
#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    terms: Vec<(f64, Vec<Factor>)>,
}

impl Expr {
    pub fn parse(input: &str, dim: usize) -> Result<Self> {
        Parser {
            input,
            chars: input.chars().filter(|c| !c.is_whitespace()).collect(),
            pos: 0,
            dim,
        }
        .expr()
    }

    pub fn eval(&self, xi: [f64; 2]) -> f64 {
        self.terms
            .iter()
            .map(|(sign, factors)| {
                factors.iter().fold(*sign, |acc, f| {
                    acc * match f {
                        Factor::Const(c) => *c,
                        Factor::Sin(k) => (2.0 * PI * (k[0] as f64 * xi[0] + k[1] as f64 * xi[1])).sin(),
                        Factor::Cos(k) => (2.0 * PI * (k[0] as f64 * xi[0] + k[1] as f64 * xi[1])).cos(),
                    }
                })
            })
            .sum()
    }
}

struct Parser<'a> {
    input: &'a str,
    chars: Vec<char>,
    pos: usize,
    dim: usize,
}

impl Parser<'_> {
    fn err<T>(&self, reason: impl Into<String>) -> Result<T> {
        Err(Error::Expression {
            input: self.input.to_string(),
            reason: reason.into(),
        })
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn expr(mut self) -> Result<Expr> {
        let mut terms = Vec::new();
        let mut sign = 1.0;
        if let Some(c @ ('+' | '-')) = self.peek() {
            sign = if c == '-' { -1.0 } else { 1.0 };
            self.pos += 1;
        }
        loop {
            terms.push((sign, self.term()?));
            match self.peek() {
                None => break,
                Some('+') => sign = 1.0,
                Some('-') => sign = -1.0,
                Some(c) => return self.err(format!("unexpected `{c}`")),
            }
            self.pos += 1;
        }
        Ok(Expr { terms })
    }

    fn term(&mut self) -> Result<Vec<Factor>> {
        let mut factors = vec![self.factor()?];
        while self.peek() == Some('*') {
            self.pos += 1;
            factors.push(self.factor()?);
        }
        Ok(factors)
    }

    fn factor(&mut self) -> Result<Factor> {
        let rest: String = self.chars[self.pos..].iter().collect();
        for (name, is_sin) in [("sin(", true), ("cos(", false)] {
            if rest.starts_with(name) {
                self.pos += name.len();
                let k = self.modes()?;
                return Ok(if is_sin { Factor::Sin(k) } else { Factor::Cos(k) });
            }
        }
        let start = self.pos;
        while let Some(c) = self.peek() {
            let exponent_sign =
                (c == '-' || c == '+') && self.pos > start && matches!(self.chars[self.pos - 1], 'e' | 'E');
            if c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || exponent_sign {
                self.pos += 1;
            } else {
                break;
            }
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        if text.is_empty() {
            return self.err("expected a number, sin(..) or cos(..)");
        }
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Factor::Const(v)),
            _ => self.err(format!("bad number `{text}`")),
        }
    }

    fn modes(&mut self) -> Result<[i64; 2]> {
        let close = match self.chars[self.pos..].iter().position(|&c| c == ')') {
            Some(off) => self.pos + off,
            None => return self.err("missing `)`"),
        };
        let inner: String = self.chars[self.pos..close].iter().collect();
        self.pos = close + 1;
        let parts: Vec<&str> = inner.split(',').collect();
        if parts.len() != self.dim {
            return self.err(format!("harmonic needs {} integer modes, got `{inner}`", self.dim));
        }
        let mut k = [0i64; 2];
        for (slot, p) in k.iter_mut().zip(&parts) {
            *slot = match p.parse() {
                Ok(v) => v,
                Err(_) => return self.err(format!("bad mode `{p}`")),
            };
        }
        Ok(k)
    }
}

/// Splits `s` at `sep` outside parentheses.
pub(crate) fn split_top_level(s: &str, sep: char) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            c if c == sep && depth == 0 => {
                out.push(&s[start..i]);
                start = i + c.len_utf8();
            }
            _ => {}
        }
    }
    out.push(&s[start..]);
    out
}
