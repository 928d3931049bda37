//! Polynomial potentials `P(x) = Σ p_k x^k` with complex coefficients.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Polynomial {
    /// `coeffs[k]` multiplies `x^k`; trailing zeros are trimmed.
    pub coeffs: Vec<C64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<C64>) -> Self {
        let mut p = Self { coeffs };
        p.trim();
        p
    }

    pub fn from_real(coeffs: &[f64]) -> Self {
        Self::new(coeffs.iter().map(|&c| C64::new(c, 0.0)).collect())
    }

    pub fn zero() -> Self {
        Self { coeffs: vec![] }
    }

    /// The monomial `c x^k`.
    pub fn monomial(k: usize, c: f64) -> Self {
        let mut v = vec![C64::new(0.0, 0.0); k + 1];
        v[k] = C64::new(c, 0.0);
        Self::new(v)
    }

    fn trim(&mut self) {
        while matches!(self.coeffs.last(), Some(c) if *c == C64::new(0.0, 0.0)) {
            self.coeffs.pop();
        }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Degree, with the zero polynomial reported as 0.
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn coeff(&self, k: usize) -> C64 {
        self.coeffs.get(k).copied().unwrap_or_default()
    }

    pub fn leading(&self) -> C64 {
        self.coeffs.last().copied().unwrap_or_default()
    }

    pub fn is_real(&self) -> bool {
        self.coeffs.iter().all(|c| c.im == 0.0)
    }

    pub fn eval(&self, x: C64) -> C64 {
        self.coeffs.iter().rev().fold(C64::new(0.0, 0.0), |acc, &c| acc * x + c)
    }

    pub fn eval_real(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c.re)
    }

    /// `self + other`.
    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let n = self.coeffs.len().max(other.coeffs.len());
        Polynomial::new((0..n).map(|k| self.coeff(k) + other.coeff(k)).collect())
    }

    pub fn scale(&self, s: C64) -> Polynomial {
        Polynomial::new(self.coeffs.iter().map(|&c| c * s).collect())
    }

    /// Nonzero `(power, coefficient)` pairs in increasing power.
    pub fn terms(&self) -> impl Iterator<Item = (usize, C64)> + '_ {
        self.coeffs.iter().enumerate().filter(|(_, c)| c.norm() != 0.0).map(|(k, &c)| (k, c))
    }

    /// Parses expressions such as `x^4 + x^2/2`, `-x^2`, `0.5*x`, `(1+2i)*z^2`.
    pub fn parse(src: &str) -> Result<Self> {
        let s: String = src.chars().filter(|c| !c.is_whitespace()).collect();
        if s.is_empty() {
            return Err(Error::Config("empty polynomial".into()));
        }
        let bytes: Vec<char> = s.chars().collect();
        let mut terms = Vec::new();
        let mut start = 0;
        let mut depth = 0i32;
        for (i, &ch) in bytes.iter().enumerate() {
            match ch {
                '(' => depth += 1,
                ')' => depth -= 1,
                '+' | '-' if depth == 0 && i > start => {
                    let prev = bytes[i - 1];
                    if prev != 'e' && prev != 'E' && prev != '*' && prev != '^' && prev != '/' {
                        terms.push(bytes[start..i].iter().collect::<String>());
                        start = i;
                    }
                }
                _ => {}
            }
        }
        terms.push(bytes[start..].iter().collect::<String>());
        let mut out = Polynomial::zero();
        for t in terms {
            let (k, c) = parse_term(&t)?;
            let mut v = vec![C64::new(0.0, 0.0); k + 1];
            v[k] = c;
            out = out.add(&Polynomial::new(v));
        }
        Ok(out)
    }

    /// Human-readable form, parseable by [`Polynomial::parse`].
    pub fn to_expr(&self) -> String {
        if self.is_zero() {
            return "0".into();
        }
        let mut out = String::new();
        for (k, c) in self.terms().collect::<Vec<_>>().into_iter().rev() {
            let (sign, coef) = if c.im == 0.0 {
                (if c.re < 0.0 { "-" } else { "+" }, format!("{}", c.re.abs()))
            } else {
                ("+", format!("({}{:+}i)", c.re, c.im))
            };
            let term = match k {
                0 => coef,
                1 => format!("{coef}*x"),
                _ => format!("{coef}*x^{k}"),
            };
            if out.is_empty() {
                if sign == "-" {
                    out.push('-');
                }
            } else {
                out.push_str(&format!(" {sign} "));
            }
            out.push_str(&term);
        }
        out
    }
}

fn parse_number(s: &str) -> Result<C64> {
    let bad = || Error::Config(format!("cannot parse coefficient '{s}'"));
    if let Some(inner) = s.strip_prefix('(').and_then(|r| r.strip_suffix(')')) {
        // a+bi, a-bi, bi, a
        if let Some(body) = inner.strip_suffix('i') {
            let cut = body
                .char_indices()
                .skip(1)
                .filter(|&(i, c)| (c == '+' || c == '-') && !matches!(body.as_bytes()[i - 1], b'e' | b'E'))
                .map(|(i, _)| i)
                .last();
            return match cut {
                Some(i) => {
                    let re: f64 = body[..i].parse().map_err(|_| bad())?;
                    let im_s = &body[i..];
                    let im: f64 = match im_s {
                        "+" => 1.0,
                        "-" => -1.0,
                        _ => im_s.parse().map_err(|_| bad())?,
                    };
                    Ok(C64::new(re, im))
                }
                None => {
                    let im: f64 = match body {
                        "" | "+" => 1.0,
                        "-" => -1.0,
                        _ => body.parse().map_err(|_| bad())?,
                    };
                    Ok(C64::new(0.0, im))
                }
            };
        }
        return inner.parse::<f64>().map(|r| C64::new(r, 0.0)).map_err(|_| bad());
    }
    s.parse::<f64>().map(|r| C64::new(r, 0.0)).map_err(|_| bad())
}

fn parse_term(t: &str) -> Result<(usize, C64)> {
    let (sign, body) = match t.strip_prefix('-') {
        Some(r) => (-1.0, r),
        None => (1.0, t.strip_prefix('+').unwrap_or(t)),
    };
    let (body, divisor) = match body.rsplit_once('/') {
        Some((b, d)) if !d.contains(')') => {
            let d: f64 = d.parse().map_err(|_| Error::Config(format!("bad divisor in '{t}'")))?;
            (b, d)
        }
        _ => (body, 1.0),
    };
    let var_pos = body.find(['x', 'z']);
    let (coef, power) = match var_pos {
        None => (parse_number(body)?, 0usize),
        Some(p) => {
            let c = body[..p].trim_end_matches('*');
            let coef = if c.is_empty() { C64::new(1.0, 0.0) } else { parse_number(c)? };
            let rest = &body[p + 1..];
            let power = if rest.is_empty() {
                1
            } else {
                rest.strip_prefix('^')
                    .and_then(|r| r.parse::<usize>().ok())
                    .ok_or_else(|| Error::Config(format!("bad exponent in '{t}'")))?
            };
            (coef, power)
        }
    };
    Ok((power, coef * sign / divisor))
}

/// Quadratic floor `P(x) ≥ C + c x²` for real `x` with `c = ½ inf_{|x|≥x0} P(x)/x²`.
///
/// Returns `None` when no positive `c` exists.
pub fn quadratic_floor(p: &[f64], x0: f64) -> Option<(f64, f64)> {
    let eval = |x: f64| p.iter().rev().fold(0.0, |acc, &c| acc * x + c);
    let deg = p.iter().rposition(|&c| c != 0.0)?;
    if deg < 2 || deg % 2 == 1 || p[deg] <= 0.0 {
        return None;
    }
    let mut inf = f64::INFINITY;
    let n = 4000;
    for i in 0..=n {
        // log-spaced scan on [x0, x0 * 1e6]
        let x = x0 * 10f64.powf(6.0 * i as f64 / n as f64);
        for s in [x, -x] {
            inf = inf.min(eval(s) / (s * s));
        }
    }
    if deg == 2 {
        inf = inf.min(p[2]);
    }
    if inf <= 0.0 {
        return None;
    }
    let c = 0.5 * inf;
    let q = |x: f64| eval(x) - c * x * x;
    let mut best = f64::INFINITY;
    let mut arg = 0.0;
    let r = 50.0;
    for i in 0..=20000 {
        let x = -r + 2.0 * r * i as f64 / 20000.0;
        let v = q(x);
        if v < best {
            best = v;
            arg = x;
        }
    }
    // golden-section refinement around the best grid point
    let (mut lo, mut hi) = (arg - 2.0 * r / 20000.0, arg + 2.0 * r / 20000.0);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let m1 = hi - g * (hi - lo);
        let m2 = lo + g * (hi - lo);
        if q(m1) < q(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    best = best.min(q(0.5 * (lo + hi)));
    Some((c, best))
}

/// Linear floor `P(x) ≥ C + c x` on `x ≥ 0` with `c = ½ inf_{x≥x0} P(x)/x`.
pub fn linear_floor(p: &[f64], x0: f64) -> Option<(f64, f64)> {
    let eval = |x: f64| p.iter().rev().fold(0.0, |acc, &c| acc * x + c);
    let deg = p.iter().rposition(|&c| c != 0.0)?;
    if deg < 1 || p[deg] <= 0.0 {
        return None;
    }
    let mut inf = f64::INFINITY;
    for i in 0..=4000 {
        let x = x0 * 10f64.powf(6.0 * i as f64 / 4000.0);
        inf = inf.min(eval(x) / x);
    }
    if deg == 1 {
        inf = inf.min(p[1]);
    }
    if inf <= 0.0 {
        return None;
    }
    let c = 0.5 * inf;
    let mut best = f64::INFINITY;
    for i in 0..=20000 {
        let x = 50.0 * i as f64 / 20000.0;
        best = best.min(eval(x) - c * x);
    }
    Some((c, best - 1e-9 * (1.0 + best.abs())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_forms() {
        let p = Polynomial::parse("x^4 + x^2/2").unwrap();
        assert_eq!(p, Polynomial::from_real(&[0.0, 0.0, 0.5, 0.0, 1.0]));
        let p = Polynomial::parse("-x^2").unwrap();
        assert_eq!(p, Polynomial::from_real(&[0.0, 0.0, -1.0]));
        let p = Polynomial::parse("(1+2i)*z^2 - 3").unwrap();
        assert_eq!(p.coeff(2), C64::new(1.0, 2.0));
        assert_eq!(p.coeff(0), C64::new(-3.0, 0.0));
        let p = Polynomial::parse("0.5*x + 1e-3x^3").unwrap();
        assert_eq!(p.coeff(3).re, 1e-3);
        let p = Polynomial::parse("(-2i)*z").unwrap();
        assert_eq!(p.coeff(1), C64::new(0.0, -2.0));
        assert!(Polynomial::parse("x^").is_err());
    }

    #[test]
    fn roundtrip_expr() {
        let p = Polynomial::parse("x^4 + 0.5*x^2 - x").unwrap();
        assert_eq!(Polynomial::parse(&p.to_expr()).unwrap(), p);
    }

    #[test]
    fn floors() {
        let (c, cc) = quadratic_floor(&[0.0, 0.0, 0.5], 1.0).unwrap();
        assert!((c - 0.25).abs() < 1e-12);
        assert!(cc.abs() < 1e-9);
        let (c, cc) = quadratic_floor(&[0.0, 0.0, 0.5, 0.0, 1.0], 1.0).unwrap();
        assert!((c - 0.75).abs() < 1e-9);
        // min of x^4 - x^2/4 is -1/64
        assert!((cc + 1.0 / 64.0).abs() < 1e-9);
        assert!(quadratic_floor(&[0.0, 0.0, 0.0, 1.0], 1.0).is_none());
        assert!(quadratic_floor(&[0.0, 0.0, -1.0], 1.0).is_none());
    }
}
