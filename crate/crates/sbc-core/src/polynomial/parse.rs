//! Text syntax for polynomials: `-0.5*x1^3 + x2*(x1 - 2)`.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! expr   := ["+"|"-"] term (("+"|"-") term)*
//! term   := factor ("*" factor)*
//! factor := ["-"] atom ["^" uint]
//! atom   := number | variable | "(" expr ")"
//! ```
//!
//! Variables are `x1`..`xn` and, when the context has one, `t`. Numbers are
//! decimal literals with an optional exponent (`2`, `0.5`, `1.2e-3`); in the
//! rational coefficient mode they are converted exactly.

use super::{Coeff, Polynomial, VarContext};
use num_bigint::BigInt;
use num_rational::BigRational;
use thiserror::Error;

/// Parse failure with the byte offset of the offending token.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at offset {pos}: {msg}")]
pub struct ParseError {
    pub pos: usize,
    pub msg: String,
}

impl ParseError {
    fn new(pos: usize, msg: impl Into<String>) -> Self {
        ParseError {
            pos,
            msg: msg.into(),
        }
    }
}

/// Parse `src` into a polynomial over `ctx`.
pub fn parse_polynomial<C: Coeff>(
    src: &str,
    ctx: &VarContext,
) -> Result<Polynomial<C>, ParseError> {
    let mut p = Parser {
        src: src.as_bytes(),
        pos: 0,
        ctx: *ctx,
    };
    p.skip_ws();
    if p.pos == p.src.len() {
        return Err(ParseError::new(0, "empty polynomial"));
    }
    let poly = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(ParseError::new(
            p.pos,
            format!("unexpected character '{}'", p.src[p.pos] as char),
        ));
    }
    Ok(poly)
}

/// Convert a decimal literal to an exact rational: `"0.5"` becomes 1/2,
/// `"1.2e-3"` becomes 3/2500. Returns `None` for malformed input.
pub fn decimal_to_rational(s: &str) -> Option<BigRational> {
    let (mantissa, exp) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().ok()?),
        None => (s, 0),
    };
    let (int_part, frac_part) = match mantissa.find('.') {
        Some(i) => (&mantissa[..i], &mantissa[i + 1..]),
        None => (mantissa, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    let digits_ok = |d: &str| d.bytes().all(|b| b.is_ascii_digit());
    if !digits_ok(int_part) || !digits_ok(frac_part) {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let numer: BigInt = digits.parse().ok()?;
    let scale = frac_part.len() as i32 - exp;
    let ten = BigInt::from(10);
    let rat = if scale >= 0 {
        BigRational::new(numer, ten.pow(scale as u32))
    } else {
        BigRational::from_integer(numer * ten.pow((-scale) as u32))
    };
    Some(rat)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    ctx: VarContext,
}

impl Parser<'_> {
    fn expr<C: Coeff>(&mut self) -> Result<Polynomial<C>, ParseError> {
        let mut negate = false;
        self.skip_ws();
        if self.peek() == Some(b'+') {
            self.pos += 1;
        } else if self.peek() == Some(b'-') {
            self.pos += 1;
            negate = true;
        }
        let mut acc = self.term::<C>()?;
        if negate {
            acc = acc.neg();
        }
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    acc = acc.add(&self.term::<C>()?);
                }
                Some(b'-') => {
                    self.pos += 1;
                    acc = acc.sub(&self.term::<C>()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term<C: Coeff>(&mut self) -> Result<Polynomial<C>, ParseError> {
        let mut acc = self.factor::<C>()?;
        loop {
            self.skip_ws();
            if self.peek() == Some(b'*') {
                self.pos += 1;
                acc = acc.mul(&self.factor::<C>()?);
            } else {
                return Ok(acc);
            }
        }
    }

    fn factor<C: Coeff>(&mut self) -> Result<Polynomial<C>, ParseError> {
        self.skip_ws();
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(self.factor::<C>()?.neg());
        }
        let mut base = self.atom::<C>()?;
        self.skip_ws();
        if self.peek() == Some(b'^') {
            self.pos += 1;
            self.skip_ws();
            let start = self.pos;
            while self.peek().is_some_and(|b| b.is_ascii_digit()) {
                self.pos += 1;
            }
            if self.pos == start {
                return Err(ParseError::new(self.pos, "expected integer exponent"));
            }
            let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
            let exp: u32 = text
                .parse()
                .map_err(|_| ParseError::new(start, "exponent out of range"))?;
            base = base.pow(exp);
        }
        Ok(base)
    }

    fn atom<C: Coeff>(&mut self) -> Result<Polynomial<C>, ParseError> {
        self.skip_ws();
        match self.peek() {
            None => Err(ParseError::new(self.pos, "unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr::<C>()?;
                self.skip_ws();
                if self.peek() != Some(b')') {
                    return Err(ParseError::new(self.pos, "expected ')'"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(b) if b.is_ascii_digit() || b == b'.' => self.number::<C>(),
            Some(b) if b == b'x' || b == b't' => self.variable::<C>(),
            Some(b) => Err(ParseError::new(
                self.pos,
                format!("unexpected character '{}'", b as char),
            )),
        }
    }

    fn number<C: Coeff>(&mut self) -> Result<Polynomial<C>, ParseError> {
        let start = self.pos;
        while self.peek().is_some_and(|b| b.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.peek() == Some(b'.') {
            self.pos += 1;
            while self.peek().is_some_and(|b| b.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        // Exponent part — only if followed by digits (so `2*t` keeps working
        // when someone writes `2e` as a variable typo we reject it cleanly).
        if self.peek().is_some_and(|b| b == b'e' || b == b'E') {
            let mark = self.pos;
            self.pos += 1;
            if self.peek().is_some_and(|b| b == b'+' || b == b'-') {
                self.pos += 1;
            }
            if self.peek().is_some_and(|b| b.is_ascii_digit()) {
                while self.peek().is_some_and(|b| b.is_ascii_digit()) {
                    self.pos += 1;
                }
            } else {
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let c = C::from_decimal_str(text)
            .ok_or_else(|| ParseError::new(start, format!("malformed number '{text}'")))?;
        Ok(Polynomial::constant(self.ctx, c))
    }

    fn variable<C: Coeff>(&mut self) -> Result<Polynomial<C>, ParseError> {
        let start = self.pos;
        self.pos += 1; // consume 'x' or 't'
        while self.peek().is_some_and(|b| b.is_ascii_digit()) {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        match self.ctx.lookup(name) {
            Some(idx) => Ok(Polynomial::var(self.ctx, idx)),
            None => Err(ParseError::new(
                start,
                format!(
                    "unknown variable '{name}' (context has x1..x{}{})",
                    self.ctx.n_state(),
                    if self.ctx.has_time() { " and t" } else { "" }
                ),
            )),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(|b| b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polynomial::{F64Poly, Monomial, RatPoly};

    #[test]
    fn spec_syntax_example() {
        let ctx = VarContext::state(2);
        let p: F64Poly = parse_polynomial("-0.5*x1^3 + x2", &ctx).unwrap();
        assert_eq!(p.coeff(&Monomial::var_pow(0, 3)), -0.5);
        assert_eq!(p.coeff(&Monomial::var(1)), 1.0);
        assert_eq!(p.num_terms(), 2);
    }

    #[test]
    fn whitespace_insensitive() {
        let ctx = VarContext::state(2);
        let a: F64Poly = parse_polynomial("-0.5*x1^3+x2", &ctx).unwrap();
        let b: F64Poly = parse_polynomial("  - 0.5 * x1 ^ 3  +  x2 ", &ctx).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parentheses_and_products() {
        let ctx = VarContext::state(2);
        let a: RatPoly = parse_polynomial("x2*(x1 - 2)", &ctx).unwrap();
        let b: RatPoly = parse_polynomial("x1*x2 - 2*x2", &ctx).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rational_decimals_are_exact() {
        let r = decimal_to_rational("0.1").unwrap();
        assert_eq!(
            r,
            BigRational::new(BigInt::from(1), BigInt::from(10)),
            "0.1 must be exactly 1/10, not a binary double"
        );
        assert_eq!(
            decimal_to_rational("1.2e-3").unwrap(),
            BigRational::new(BigInt::from(3), BigInt::from(2500))
        );
    }

    #[test]
    fn time_variable_requires_time_context() {
        let no_time = VarContext::state(1);
        let err = parse_polynomial::<f64>("t + x1", &no_time).unwrap_err();
        assert!(err.msg.contains("unknown variable 't'"), "{err}");
        let with_time = VarContext::with_time(1);
        assert!(parse_polynomial::<f64>("t + x1", &with_time).is_ok());
    }

    #[test]
    fn unknown_variable_is_reported_with_position() {
        let ctx = VarContext::state(1);
        let err = parse_polynomial::<f64>("x1 + x7", &ctx).unwrap_err();
        assert_eq!(err.pos, 5);
    }

    #[test]
    fn trailing_garbage_rejected() {
        let ctx = VarContext::state(1);
        let err = parse_polynomial::<f64>("x1 )", &ctx).unwrap_err();
        assert_eq!(err.pos, 3);
    }

    #[test]
    fn empty_input_rejected() {
        let ctx = VarContext::state(1);
        assert!(parse_polynomial::<f64>("   ", &ctx).is_err());
    }
}
