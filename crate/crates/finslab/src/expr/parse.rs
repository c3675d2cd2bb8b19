//! Recursive-descent parser for the chart-expression grammar:
//!
//! ```text
//! expr     := term (("+"|"-") term)*
//! term     := factor (("*"|"/") factor)*
//! factor   := ("-")? base ("^" exponent)?
//! base     := NUMBER | IDENT | "(" expr ")" | FUNC "(" expr ")"
//! IDENT    := ("x"|"y") DIGIT+
//! FUNC     := "sqrt" | "sin" | "cos" | "exp" | "log"
//! exponent := NUMBER | "(" ("-")? NUMBER ("/" NUMBER)? ")"
//! ```

use super::{Axis, Expr, Var};
use num_rational::Rational64;

/// Syntax or validation error, with the byte offset into the input.
#[derive(Debug, Clone, thiserror::Error)]
#[error("parse error at offset {offset}: {message} (expected {expected})")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
    pub expected: String,
}

struct Parser<'a> {
    text: &'a str,
    bytes: &'a [u8],
    pos: usize,
    dim: usize,
}

/// Parse an expression over `x1..x_dim`, `y1..y_dim`.
pub fn parse_expr(text: &str, dim: usize) -> Result<Expr, ParseError> {
    let mut p = Parser { text, bytes: text.as_bytes(), pos: 0, dim };
    p.skip_ws();
    if p.pos >= p.bytes.len() {
        return Err(p.error("empty input", "expression"));
    }
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.bytes.len() {
        return Err(p.error("trailing input", "end of input"));
    }
    Ok(e)
}

impl<'a> Parser<'a> {
    fn error(&self, message: &str, expected: &str) -> ParseError {
        ParseError {
            offset: self.pos.min(self.text.len()),
            message: message.to_string(),
            expected: expected.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error("unexpected token", &format!("`{}`", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.term()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    acc = acc.add(rhs);
                }
                Some(b'-') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    acc = acc.sub(rhs);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.factor()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    let rhs = self.factor()?;
                    acc = acc.mul(rhs);
                }
                Some(b'/') => {
                    self.pos += 1;
                    let rhs = self.factor()?;
                    acc = acc.div(rhs);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        let negated = self.eat(b'-');
        let mut e = self.base()?;
        self.skip_ws();
        if self.eat(b'^') {
            let r = self.exponent()?;
            e = e.pow(r);
        }
        Ok(if negated { e.neg() } else { e })
    }

    fn base(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.skip_ws();
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() => {
                let (v, _) = self.number()?;
                Ok(Expr::constant(v))
            }
            Some(c) if c.is_ascii_alphabetic() => self.ident_or_func(),
            _ => Err(self.error("unexpected token", "number, identifier, `(` or function")),
        }
    }

    fn ident_or_func(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self
            .peek()
            .map(|c| c.is_ascii_alphabetic())
            .unwrap_or(false)
        {
            self.pos += 1;
        }
        let name = &self.text[start..self.pos];
        match name {
            "x" | "y" => {
                let axis = if name == "x" { Axis::X } else { Axis::Y };
                let digits_start = self.pos;
                while self.peek().map(|c| c.is_ascii_digit()).unwrap_or(false) {
                    self.pos += 1;
                }
                if self.pos == digits_start {
                    self.pos = start;
                    return Err(self.error("identifier without index", "`x<digits>` or `y<digits>`"));
                }
                let idx: usize = self.text[digits_start..self.pos].parse().map_err(|_| {
                    self.error("variable index too large", "small positive integer")
                })?;
                if idx == 0 || idx > self.dim {
                    self.pos = start;
                    return Err(self.error(
                        &format!("variable index out of range: {name}{idx} with dimension {}", self.dim),
                        &format!("index in 1..={}", self.dim),
                    ));
                }
                Ok(Expr::var(Var { axis, index: idx - 1 }))
            }
            "sqrt" | "sin" | "cos" | "exp" | "log" => {
                self.skip_ws();
                self.expect(b'(')?;
                let arg = self.expr()?;
                self.skip_ws();
                self.expect(b')')?;
                Ok(match name {
                    "sqrt" => arg.sqrt(),
                    "sin" => arg.sin(),
                    "cos" => arg.cos(),
                    "exp" => arg.exp(),
                    _ => arg.log(),
                })
            }
            _ => {
                self.pos = start;
                Err(self.error(
                    &format!("unknown identifier `{name}`"),
                    "x<i>, y<i>, sqrt, sin, cos, exp or log",
                ))
            }
        }
    }

    /// Decimal literal; returns the value and, when it is exactly
    /// representable, the rational it denotes.
    fn number(&mut self) -> Result<(f64, Option<Rational64>), ParseError> {
        let start = self.pos;
        while self.peek().map(|c| c.is_ascii_digit()).unwrap_or(false) {
            self.pos += 1;
        }
        let int_end = self.pos;
        let mut frac_digits = 0usize;
        if self.eat(b'.') {
            let fs = self.pos;
            while self.peek().map(|c| c.is_ascii_digit()).unwrap_or(false) {
                self.pos += 1;
            }
            frac_digits = self.pos - fs;
            if frac_digits == 0 {
                return Err(self.error("digits required after decimal point", "digit"));
            }
        }
        // optional exponent, for values produced by the printer
        let mantissa_end = self.pos;
        if matches!(self.peek(), Some(b'e') | Some(b'E')) {
            let save = self.pos;
            self.pos += 1;
            let _ = self.eat(b'-') || self.eat(b'+');
            let ds = self.pos;
            while self.peek().map(|c| c.is_ascii_digit()).unwrap_or(false) {
                self.pos += 1;
            }
            if self.pos == ds {
                self.pos = save; // not an exponent, e.g. `2exp(x1)` is an error elsewhere
            }
        }
        if int_end == start && frac_digits == 0 {
            return Err(self.error("malformed number", "digit"));
        }
        let text = &self.text[start..self.pos];
        let v: f64 = text
            .parse()
            .map_err(|_| self.error("malformed number", "decimal literal"))?;
        let rational = if mantissa_end == self.pos && text.len() <= 18 {
            let digits: String = text.chars().filter(|c| *c != '.').collect();
            digits
                .parse::<i64>()
                .ok()
                .map(|n| Rational64::new(n, 10i64.pow(frac_digits as u32)))
        } else {
            None
        };
        Ok((v, rational))
    }

    fn exponent(&mut self) -> Result<Rational64, ParseError> {
        self.skip_ws();
        if self.eat(b'(') {
            self.skip_ws();
            let neg = self.eat(b'-');
            let (_, r) = self.number()?;
            let mut num = r.ok_or_else(|| self.error("exponent must be rational", "rational exponent"))?;
            self.skip_ws();
            if self.eat(b'/') {
                self.skip_ws();
                let (_, r2) = self.number()?;
                let den = r2.ok_or_else(|| self.error("exponent must be rational", "rational exponent"))?;
                if den == Rational64::from_integer(0) {
                    return Err(self.error("zero denominator in exponent", "nonzero denominator"));
                }
                num /= den;
            }
            self.skip_ws();
            self.expect(b')')?;
            Ok(if neg { -num } else { num })
        } else {
            let (_, r) = self.number()?;
            r.ok_or_else(|| self.error("exponent must be rational", "rational exponent"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_products_and_powers() {
        let e = parse_expr("x2*y1^2", 2).unwrap();
        let manual = Expr::x(1).mul(Expr::y(0).powi(2));
        assert_eq!(e, manual);
    }

    #[test]
    fn index_out_of_range() {
        let err = parse_expr("y5", 4).unwrap_err();
        assert!(err.message.contains("out of range"), "{err}");
    }

    #[test]
    fn unknown_identifier() {
        let err = parse_expr("tan(x1)", 2).unwrap_err();
        assert!(err.message.contains("unknown identifier"), "{err}");
    }

    #[test]
    fn reports_offset() {
        let err = parse_expr("x1 + * x2", 2).unwrap_err();
        assert_eq!(err.offset, 5);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(parse_expr("   ", 2).is_err());
    }

    #[test]
    fn rational_exponents() {
        let e = parse_expr("x1^(1/4)", 1).unwrap();
        assert_eq!(e, Expr::x(0).pow(Rational64::new(1, 4)));
        let e = parse_expr("x1^(-3/2)", 1).unwrap();
        assert_eq!(e, Expr::x(0).pow(Rational64::new(-3, 2)));
        let e = parse_expr("x1^2.5", 1).unwrap();
        assert_eq!(e, Expr::x(0).pow(Rational64::new(5, 2)));
    }

    #[test]
    fn unary_minus_binds_looser_than_power() {
        // -x1^2 is -(x1^2)
        let e = parse_expr("-x1^2", 1).unwrap();
        assert_eq!(e, Expr::x(0).powi(2).neg());
    }

    #[test]
    fn left_associativity() {
        let e = parse_expr("x1 - x2 - x1", 2).unwrap();
        let manual = Expr::x(0).sub(Expr::x(1)).sub(Expr::x(0));
        assert_eq!(e, manual);
        let e = parse_expr("8/x1/x2", 2).unwrap();
        let manual = Expr::constant(8.0).div(Expr::x(0)).div(Expr::x(1));
        assert_eq!(e, manual);
    }
}
