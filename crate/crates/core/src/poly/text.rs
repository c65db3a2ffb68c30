//! Text form: `coeff*x1^a*x2^b` terms joined by `+`/`-`.
//!
//! Printing emits one term per monomial in descending graded-lex order with
//! round-trippable coefficients, so `parse(print(p)) == p` bit for bit. The
//! parser also accepts products, powers and parentheses for hand-written
//! configs.

use thiserror::Error;

use super::{Coefficient, Monomial, Poly};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("polynomial parse error at byte {pos}: {msg}")]
pub struct ParsePolyError {
    pub pos: usize,
    pub msg: String,
}

pub fn default_names(nvars: usize) -> Vec<String> {
    (1..=nvars).map(|i| format!("x{i}")).collect()
}

/// Parses with variables named `x1..xn`.
pub fn parse_poly<T: Coefficient>(src: &str, nvars: usize) -> Result<Poly<T>, ParsePolyError> {
    parse_poly_with_names(src, &default_names(nvars))
}

pub fn parse_poly_with_names<T: Coefficient, S: AsRef<str>>(
    src: &str,
    names: &[S],
) -> Result<Poly<T>, ParsePolyError> {
    let mut parser = Parser { src: src.as_bytes(), pos: 0, names, nvars: names.len() };
    let p = parser.expr()?;
    parser.skip_ws();
    if parser.pos != parser.src.len() {
        return Err(parser.error("unexpected trailing input"));
    }
    Ok(p)
}

struct Parser<'a, S> {
    src: &'a [u8],
    pos: usize,
    names: &'a [S],
    nvars: usize,
}

impl<S: AsRef<str>> Parser<'_, S> {
    fn error(&self, msg: &str) -> ParsePolyError {
        ParsePolyError { pos: self.pos, msg: msg.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expr<T: Coefficient>(&mut self) -> Result<Poly<T>, ParsePolyError> {
        let mut acc = self.term()?;
        while let Some(c) = self.peek() {
            match c {
                b'+' => {
                    self.pos += 1;
                    acc = &acc + &self.term()?;
                }
                b'-' => {
                    self.pos += 1;
                    acc = &acc - &self.term()?;
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn term<T: Coefficient>(&mut self) -> Result<Poly<T>, ParsePolyError> {
        let mut acc = self.unary()?;
        while self.peek() == Some(b'*') {
            self.pos += 1;
            acc = &acc * &self.unary()?;
        }
        Ok(acc)
    }

    fn unary<T: Coefficient>(&mut self) -> Result<Poly<T>, ParsePolyError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(-&self.unary()?)
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power<T: Coefficient>(&mut self) -> Result<Poly<T>, ParsePolyError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            self.skip_ws();
            let start = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            let digits = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
            let k: u32 = digits.parse().map_err(|_| self.error("expected non-negative integer exponent"))?;
            return Ok(base.pow(k));
        }
        Ok(base)
    }

    fn atom<T: Coefficient>(&mut self) -> Result<Poly<T>, ParsePolyError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.error("expected ')'"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.variable(),
            Some(_) => Err(self.error("unexpected character")),
            None => Err(self.error("unexpected end of input")),
        }
    }

    fn number<T: Coefficient>(&mut self) -> Result<Poly<T>, ParsePolyError> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < self.src.len() && matches!(self.src[self.pos], b'e' | b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && matches!(self.src[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            let exp_start = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if self.pos == exp_start {
                self.pos = save;
            }
        }
        let lit = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let value = T::parse_literal(lit).ok_or_else(|| ParsePolyError { pos: start, msg: format!("invalid number '{lit}'") })?;
        Ok(Poly::constant(self.nvars, value))
    }

    fn variable<T: Coefficient>(&mut self) -> Result<Poly<T>, ParsePolyError> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
            self.pos += 1;
        }
        let ident = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        match self.names.iter().position(|n| n.as_ref() == ident) {
            Some(i) => Ok(Poly::var(self.nvars, i)),
            None => Err(ParsePolyError { pos: start, msg: format!("unknown variable '{ident}'") }),
        }
    }
}

impl<T: Coefficient> Poly<T> {
    /// Canonical text with variables `x1..xn`.
    pub fn to_text(&self) -> String {
        self.to_text_with_names(&default_names(self.nvars()))
    }

    pub fn to_text_with_names<S: AsRef<str>>(&self, names: &[S]) -> String {
        if self.is_zero() {
            return "0".to_string();
        }
        let mut out = String::new();
        for (i, (m, c)) in self.terms().rev().enumerate() {
            let negative = c.is_negative();
            match (i, negative) {
                (0, true) => out.push('-'),
                (0, false) => {}
                (_, true) => out.push_str(" - "),
                (_, false) => out.push_str(" + "),
            }
            out.push_str(&c.abs().format());
            write_monomial(&mut out, m, names);
        }
        out
    }
}

fn write_monomial<S: AsRef<str>>(out: &mut String, m: &Monomial, names: &[S]) {
    for (i, &e) in m.exponents().iter().enumerate() {
        match e {
            0 => {}
            1 => {
                out.push('*');
                out.push_str(names[i].as_ref());
            }
            _ => {
                out.push('*');
                out.push_str(names[i].as_ref());
                out.push('^');
                out.push_str(&e.to_string());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn canonical_printing() {
        let p: Poly<f64> = parse_poly("x1 + 5*x1^2 + x1^3", 1).unwrap();
        assert_eq!(p.to_text(), "1.0*x1^3 + 5.0*x1^2 + 1.0*x1");
        let q: Poly<f64> = parse_poly("2*(x1^5 - x1^3 - x1 + x1*x2^4)", 2).unwrap();
        assert_eq!(q.to_text(), "2.0*x1^5 + 2.0*x1*x2^4 - 2.0*x1^3 - 2.0*x1");
        assert_eq!(Poly::<f64>::zero(2).to_text(), "0");
        let r: Poly<f64> = parse_poly("-0.5 + x2", 2).unwrap();
        assert_eq!(r.to_text(), "1.0*x2 - 0.5");
    }

    #[test]
    fn parse_errors_carry_location() {
        let e = parse_poly::<f64>("x1 + y", 1).unwrap_err();
        assert_eq!(e.pos, 5);
        assert!(parse_poly::<f64>("(x1 + 1", 1).is_err());
        assert!(parse_poly::<f64>("x1 ^ -2", 1).is_err());
        assert!(parse_poly::<f64>("x1 x1", 1).is_err());
    }

    #[test]
    fn custom_names_and_scientific_literals() {
        let p: Poly<f64> = parse_poly_with_names("x1^3 + a1*x1^2 + 1e-3", &["x1", "a1"]).unwrap();
        assert_eq!(p.coeff(&Monomial::new(vec![2, 1])), 1.0);
        assert_eq!(p.constant_term(), 1e-3);
        assert_eq!(p.to_text_with_names(&["x", "a"]), "1.0*x^3 + 1.0*x^2*a + 0.001");
    }

    fn arb_poly() -> impl Strategy<Value = Poly<f64>> {
        proptest::collection::vec(((0u32..5, 0u32..5), -1e3f64..1e3), 0..8).prop_map(|terms| {
            Poly::from_terms(2, terms.into_iter().map(|((a, b), c)| (Monomial::new(vec![a, b]), c)))
        })
    }

    proptest! {
        #[test]
        fn print_parse_round_trip_is_exact(p in arb_poly()) {
            let text = p.to_text();
            let back: Poly<f64> = parse_poly(&text, 2).unwrap();
            prop_assert_eq!(back, p);
        }
    }
}
