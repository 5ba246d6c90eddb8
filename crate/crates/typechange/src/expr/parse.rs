//! Parser for the expression text syntax used by metric files.
//!
//! Grammar: `+ - * / ^` with integer powers, parentheses, `sqrt(...)`,
//! `cbrt(...)`, function application `f(t)` where `t` is a coordinate, and
//! rational literals written as integers or quotients like `3/2`.

use num_bigint::BigInt;

use super::{ExprError, Rat, ScalarExpr};

#[derive(Debug, thiserror::Error)]
pub enum ParseError {
    #[error("unexpected character `{0}` at byte {1}")]
    UnexpectedChar(char, usize),
    #[error("unexpected end of expression")]
    UnexpectedEnd,
    #[error("expected `{0}` at byte {1}")]
    Expected(&'static str, usize),
    #[error("unknown symbol `{0}`: not a coordinate, and functions must be applied as f(coord)")]
    UnknownSymbol(String),
    #[error("function `{0}` must be applied to a single coordinate")]
    BadFunctionArg(String),
    #[error("exponent must be an integer literal")]
    BadExponent,
    #[error("arithmetic error: {0}")]
    Arithmetic(#[from] ExprError),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(BigInt),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let mut out = Vec::new();
    let bytes = src.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' => i += 1,
            '+' => {
                out.push((Tok::Plus, i));
                i += 1;
            }
            '-' => {
                out.push((Tok::Minus, i));
                i += 1;
            }
            '*' => {
                out.push((Tok::Star, i));
                i += 1;
            }
            '/' => {
                out.push((Tok::Slash, i));
                i += 1;
            }
            '^' => {
                out.push((Tok::Caret, i));
                i += 1;
            }
            '(' => {
                out.push((Tok::LParen, i));
                i += 1;
            }
            ')' => {
                out.push((Tok::RParen, i));
                i += 1;
            }
            '0'..='9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let n: BigInt = src[start..i].parse().expect("digits");
                out.push((Tok::Num(n), start));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
            }
            other => return Err(ParseError::UnexpectedChar(other, i)),
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    coords: &'a [String],
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn here(&self) -> usize {
        self.toks
            .get(self.pos)
            .map(|(_, p)| *p)
            .unwrap_or(usize::MAX)
    }

    fn expect(&mut self, tok: Tok, what: &'static str) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(ParseError::Expected(what, self.here()))
        }
    }

    fn coord_index(&self, name: &str) -> Option<usize> {
        self.coords.iter().position(|c| c == name)
    }

    fn sum(&mut self) -> Result<ScalarExpr, ParseError> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    acc = acc.add(&self.term()?);
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    acc = acc.sub(&self.term()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<ScalarExpr, ParseError> {
        let mut acc = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.pos += 1;
                    acc = acc.mul(&self.unary()?);
                }
                Some(Tok::Slash) => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    acc = acc.div(&rhs)?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn unary(&mut self) -> Result<ScalarExpr, ParseError> {
        if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            return Ok(self.unary()?.neg());
        }
        self.power()
    }

    fn power(&mut self) -> Result<ScalarExpr, ParseError> {
        let base = self.atom()?;
        if self.peek() == Some(&Tok::Caret) {
            self.pos += 1;
            let negative = if self.peek() == Some(&Tok::Minus) {
                self.pos += 1;
                true
            } else {
                false
            };
            let Some(Tok::Num(n)) = self.bump() else {
                return Err(ParseError::BadExponent);
            };
            let e: i64 = n.try_into().map_err(|_| ParseError::BadExponent)?;
            let e = if negative { -e } else { e };
            return Ok(base.powi(e)?);
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<ScalarExpr, ParseError> {
        match self.bump().ok_or(ParseError::UnexpectedEnd)? {
            Tok::Num(n) => Ok(ScalarExpr::from_rat(Rat::from_integer(n))),
            Tok::LParen => {
                let e = self.sum()?;
                self.expect(Tok::RParen, ")")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if self.peek() == Some(&Tok::LParen) {
                    self.pos += 1;
                    if name == "sqrt" || name == "cbrt" || name == "exp" {
                        let inner = self.sum()?;
                        self.expect(Tok::RParen, ")")?;
                        return Ok(match name.as_str() {
                            "sqrt" => inner.sqrt()?,
                            "cbrt" => inner.cbrt()?,
                            _ => ScalarExpr::exp_of(&inner)?,
                        });
                    }
                    // opaque function applied to a coordinate
                    let Some(Tok::Ident(arg)) = self.bump() else {
                        return Err(ParseError::BadFunctionArg(name));
                    };
                    let idx = self
                        .coord_index(&arg)
                        .ok_or(ParseError::BadFunctionArg(name.clone()))?;
                    self.expect(Tok::RParen, ")")?;
                    Ok(ScalarExpr::func(&name, 0, idx))
                } else {
                    match self.coord_index(&name) {
                        Some(i) => Ok(ScalarExpr::coord(i)),
                        None => Err(ParseError::UnknownSymbol(name)),
                    }
                }
            }
            _ => Err(ParseError::Expected("expression", self.here())),
        }
    }
}

/// Parse an expression against a list of coordinate names.
pub fn parse_expr(src: &str, coords: &[String]) -> Result<ScalarExpr, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        coords,
    };
    let e = p.sum()?;
    if p.pos != p.toks.len() {
        return Err(ParseError::Expected("end of expression", p.here()));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        vec!["x1".into(), "x2".into(), "t".into()]
    }

    #[test]
    fn parses_rationals_and_powers() {
        let e = parse_expr("3/2 * x1^2 - 1", &names()).unwrap();
        let direct = ScalarExpr::rational(3, 2)
            .mul(&ScalarExpr::coord(0).pow_u(2))
            .sub(&ScalarExpr::one());
        assert_eq!(e, direct);
    }

    #[test]
    fn parses_functions_and_roots() {
        let e = parse_expr("f(t)^2 + sqrt(1 + t)", &names()).unwrap();
        let f = ScalarExpr::func("f", 0, 2);
        let s = ScalarExpr::one().add(&ScalarExpr::coord(2)).sqrt().unwrap();
        assert_eq!(e, f.pow_u(2).add(&s));
    }

    #[test]
    fn rejects_unknown_symbols() {
        assert!(matches!(
            parse_expr("q + 1", &names()),
            Err(ParseError::UnknownSymbol(_))
        ));
        assert!(parse_expr("x1 +", &names()).is_err());
        assert!(parse_expr("f(2)", &names()).is_err());
    }

    #[test]
    fn negative_powers() {
        let e = parse_expr("t^-1", &names()).unwrap();
        assert_eq!(e, ScalarExpr::one().div(&ScalarExpr::coord(2)).unwrap());
    }
}
