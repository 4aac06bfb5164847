//! Coefficient sequences and overflow-safe evaluation.
//!
//! Every sequence can be evaluated plainly (`eval`) or as a
//! [`LogScaledValue`] (`eval_log`), which keeps `ln|x|` and a unit phase so
//! that products like `e^{n} * e^{-n} n^gamma` never leave the
//! representable range.

use std::ops::{Div, Mul, Neg};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{HwError, Result};

/// `ln|x|` together with a unit-modulus phase. Zero is `ln|x| = -inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogScaledValue {
    pub log_mag: f64,
    pub phase: Complex64,
}

impl LogScaledValue {
    pub const ZERO: LogScaledValue = LogScaledValue {
        log_mag: f64::NEG_INFINITY,
        phase: Complex64::new(1.0, 0.0),
    };
    pub const ONE: LogScaledValue = LogScaledValue {
        log_mag: 0.0,
        phase: Complex64::new(1.0, 0.0),
    };

    /// Positive value `e^{log_mag}`.
    pub fn from_log(log_mag: f64) -> Self {
        LogScaledValue {
            log_mag,
            phase: Complex64::new(1.0, 0.0),
        }
    }

    pub fn from_real(x: f64) -> Self {
        if x == 0.0 {
            Self::ZERO
        } else {
            LogScaledValue {
                log_mag: x.abs().ln(),
                phase: Complex64::new(x.signum(), 0.0),
            }
        }
    }

    pub fn from_complex(z: Complex64) -> Self {
        let m = z.norm();
        if m == 0.0 {
            Self::ZERO
        } else {
            LogScaledValue {
                log_mag: m.ln(),
                phase: z / m,
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.log_mag == f64::NEG_INFINITY
    }

    pub fn to_complex(&self) -> Complex64 {
        if self.is_zero() {
            Complex64::new(0.0, 0.0)
        } else {
            self.phase * self.log_mag.exp()
        }
    }

    pub fn abs(&self) -> f64 {
        self.log_mag.exp()
    }

    pub fn recip(self) -> Self {
        LogScaledValue {
            log_mag: -self.log_mag,
            phase: self.phase.conj(),
        }
    }

    pub fn conj(self) -> Self {
        LogScaledValue {
            log_mag: self.log_mag,
            phase: self.phase.conj(),
        }
    }

    pub fn powi(self, k: i32) -> Self {
        if self.is_zero() {
            return if k == 0 { Self::ONE } else { Self::ZERO };
        }
        LogScaledValue {
            log_mag: self.log_mag * k as f64,
            phase: self.phase.powi(k),
        }
    }

    /// Multiply by the positive number `e^{delta}`.
    pub fn scale_log(self, delta: f64) -> Self {
        if self.is_zero() {
            return self;
        }
        LogScaledValue {
            log_mag: self.log_mag + delta,
            phase: self.phase,
        }
    }

    /// Sum without leaving log scale: the larger operand is factored out.
    pub fn add(self, other: Self) -> Self {
        if self.is_zero() {
            return other;
        }
        if other.is_zero() {
            return self;
        }
        let (big, small) = if self.log_mag >= other.log_mag {
            (self, other)
        } else {
            (other, self)
        };
        let s = big.phase + small.phase * (small.log_mag - big.log_mag).exp();
        let m = s.norm();
        if m == 0.0 {
            return Self::ZERO;
        }
        LogScaledValue {
            log_mag: big.log_mag + m.ln(),
            phase: s / m,
        }
    }

    pub fn sub(self, other: Self) -> Self {
        self.add(-other)
    }
}

impl Mul for LogScaledValue {
    type Output = LogScaledValue;
    fn mul(self, rhs: Self) -> Self {
        if self.is_zero() || rhs.is_zero() {
            return Self::ZERO;
        }
        LogScaledValue {
            log_mag: self.log_mag + rhs.log_mag,
            phase: self.phase * rhs.phase,
        }
    }
}

impl Div for LogScaledValue {
    type Output = LogScaledValue;
    fn div(self, rhs: Self) -> Self {
        self * rhs.recip()
    }
}

impl Neg for LogScaledValue {
    type Output = LogScaledValue;
    fn neg(self) -> Self {
        LogScaledValue {
            log_mag: self.log_mag,
            phase: -self.phase,
        }
    }
}

/// `{"re": .., "im": ..}` on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexJson {
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

impl From<ComplexJson> for Complex64 {
    fn from(c: ComplexJson) -> Self {
        Complex64::new(c.re, c.im)
    }
}

impl From<Complex64> for ComplexJson {
    fn from(c: Complex64) -> Self {
        ComplexJson { re: c.re, im: c.im }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    RealPositive,
    Real,
    Complex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SequenceSpec {
    Constant { c: f64 },
    /// `n^alpha`
    Power { alpha: f64 },
    /// `e^{rate n}`
    #[serde(rename = "exp")]
    Exponential { rate: f64 },
    /// `(-1)^n (n+1)^{-beta}`
    #[serde(rename = "alt_power")]
    AlternatingPower { beta: f64 },
    /// `(n + offset)^alpha`
    ShiftedPower { alpha: f64, offset: f64 },
    Tabulated { start: usize, values: Vec<f64> },
    Product { factors: Vec<SequenceSpec> },
    Scaled {
        factor: ComplexJson,
        inner: Box<SequenceSpec>,
    },
}

fn power_log(base: f64, exponent: f64, n: usize) -> Result<LogScaledValue> {
    if base > 0.0 {
        Ok(LogScaledValue::from_log(exponent * base.ln()))
    } else if base == 0.0 {
        if exponent == 0.0 {
            Ok(LogScaledValue::ONE)
        } else if exponent > 0.0 {
            Ok(LogScaledValue::ZERO)
        } else {
            Err(HwError::NotFinite { n })
        }
    } else if exponent == exponent.trunc() {
        let v = LogScaledValue::from_log(exponent * (-base).ln());
        if (exponent as i64) % 2 == 0 {
            Ok(v)
        } else {
            Ok(-v)
        }
    } else {
        Err(HwError::NotFinite { n })
    }
}

impl SequenceSpec {
    pub fn constant(c: f64) -> Self {
        SequenceSpec::Constant { c }
    }

    pub fn power(alpha: f64) -> Self {
        SequenceSpec::Power { alpha }
    }

    pub fn exponential(rate: f64) -> Self {
        SequenceSpec::Exponential { rate }
    }

    pub fn alternating_power(beta: f64) -> Self {
        SequenceSpec::AlternatingPower { beta }
    }

    pub fn product(factors: Vec<SequenceSpec>) -> Self {
        SequenceSpec::Product { factors }
    }

    pub fn scaled(factor: Complex64, inner: SequenceSpec) -> Self {
        SequenceSpec::Scaled {
            factor: factor.into(),
            inner: Box::new(inner),
        }
    }

    /// Smallest and one-past-largest admissible index (`None` = unbounded).
    pub fn domain(&self) -> (usize, Option<usize>) {
        match self {
            SequenceSpec::Tabulated { start, values } => (*start, Some(start + values.len())),
            SequenceSpec::Product { factors } => {
                factors.iter().fold((0, None), |(lo, hi), f| {
                    let (flo, fhi) = f.domain();
                    let hi = match (hi, fhi) {
                        (Some(a), Some(b)) => Some(a.min(b)),
                        (a, b) => a.or(b),
                    };
                    (lo.max(flo), hi)
                })
            }
            SequenceSpec::Scaled { inner, .. } => inner.domain(),
            _ => (0, None),
        }
    }

    pub fn value_kind(&self) -> ValueKind {
        match self {
            SequenceSpec::Constant { c } if *c > 0.0 => ValueKind::RealPositive,
            SequenceSpec::Constant { .. } => ValueKind::Real,
            SequenceSpec::Power { .. }
            | SequenceSpec::Exponential { .. }
            | SequenceSpec::ShiftedPower { .. } => ValueKind::RealPositive,
            SequenceSpec::AlternatingPower { .. } => ValueKind::Real,
            SequenceSpec::Tabulated { values, .. } => {
                if values.iter().all(|v| *v > 0.0) {
                    ValueKind::RealPositive
                } else {
                    ValueKind::Real
                }
            }
            SequenceSpec::Product { factors } => {
                factors
                    .iter()
                    .map(|f| f.value_kind())
                    .fold(ValueKind::RealPositive, |acc, k| match (acc, k) {
                        (ValueKind::Complex, _) | (_, ValueKind::Complex) => ValueKind::Complex,
                        (ValueKind::Real, _) | (_, ValueKind::Real) => ValueKind::Real,
                        _ => ValueKind::RealPositive,
                    })
            }
            SequenceSpec::Scaled { factor, inner } => {
                if factor.im != 0.0 {
                    ValueKind::Complex
                } else {
                    match inner.value_kind() {
                        ValueKind::RealPositive if factor.re > 0.0 => ValueKind::RealPositive,
                        ValueKind::Complex => ValueKind::Complex,
                        _ => ValueKind::Real,
                    }
                }
            }
        }
    }

    /// True when an exponential factor appears anywhere in the spec.
    pub fn has_exponential(&self) -> bool {
        match self {
            SequenceSpec::Exponential { .. } => true,
            SequenceSpec::Product { factors } => factors.iter().any(|f| f.has_exponential()),
            SequenceSpec::Scaled { inner, .. } => inner.has_exponential(),
            _ => false,
        }
    }

    fn check_domain(&self, n: usize) -> Result<()> {
        let (lo, hi) = self.domain();
        if n < lo || hi.is_some_and(|h| n >= h) {
            return Err(HwError::Domain {
                n,
                lo,
                hi: hi.unwrap_or(usize::MAX),
            });
        }
        Ok(())
    }

    pub fn eval(&self, n: usize) -> Result<Complex64> {
        self.check_domain(n)?;
        let x = n as f64;
        let v = match self {
            SequenceSpec::Constant { c } => Complex64::new(*c, 0.0),
            SequenceSpec::Power { alpha } => {
                if n == 0 && *alpha < 0.0 {
                    return Err(HwError::NotFinite { n });
                }
                Complex64::new(x.powf(*alpha), 0.0)
            }
            SequenceSpec::Exponential { rate } => Complex64::new((rate * x).exp(), 0.0),
            SequenceSpec::AlternatingPower { beta } => {
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                Complex64::new(sign * (x + 1.0).powf(-beta), 0.0)
            }
            SequenceSpec::ShiftedPower { alpha, offset } => {
                let base = x + offset;
                if base > 0.0 {
                    Complex64::new(base.powf(*alpha), 0.0)
                } else {
                    power_log(base, *alpha, n)?.to_complex()
                }
            }
            SequenceSpec::Tabulated { start, values } => Complex64::new(values[n - start], 0.0),
            SequenceSpec::Product { factors } => {
                let mut acc = Complex64::new(1.0, 0.0);
                for f in factors {
                    acc *= f.eval(n)?;
                }
                acc
            }
            SequenceSpec::Scaled { factor, inner } => Complex64::from(*factor) * inner.eval(n)?,
        };
        if !v.re.is_finite() || !v.im.is_finite() {
            return Err(HwError::NotFinite { n });
        }
        Ok(v)
    }

    pub fn eval_log(&self, n: usize) -> Result<LogScaledValue> {
        self.check_domain(n)?;
        let x = n as f64;
        match self {
            SequenceSpec::Constant { c } => Ok(LogScaledValue::from_real(*c)),
            SequenceSpec::Power { alpha } => power_log(x, *alpha, n),
            SequenceSpec::Exponential { rate } => Ok(LogScaledValue::from_log(rate * x)),
            SequenceSpec::AlternatingPower { beta } => {
                let v = LogScaledValue::from_log(-beta * (x + 1.0).ln());
                Ok(if n % 2 == 0 { v } else { -v })
            }
            SequenceSpec::ShiftedPower { alpha, offset } => power_log(x + offset, *alpha, n),
            SequenceSpec::Tabulated { start, values } => {
                Ok(LogScaledValue::from_real(values[n - start]))
            }
            SequenceSpec::Product { factors } => {
                let mut acc = LogScaledValue::ONE;
                for f in factors {
                    acc = acc * f.eval_log(n)?;
                }
                Ok(acc)
            }
            SequenceSpec::Scaled { factor, inner } => {
                Ok(LogScaledValue::from_complex((*factor).into()) * inner.eval_log(n)?)
            }
        }
    }

    /// Reject the spec unless every value on `[lo, hi]` is a positive real.
    pub fn check_positive(&self, lo: usize, hi: usize) -> Result<()> {
        for n in lo..=hi {
            let v = self.eval_log(n)?;
            if v.is_zero() || v.phase.re <= 0.0 || v.phase.im != 0.0 || !v.log_mag.is_finite() {
                return Err(HwError::NotPositive {
                    n,
                    value: format!("{}", v.to_complex()),
                });
            }
        }
        Ok(())
    }

    /// Reject the spec unless every value on `[lo, hi]` is real.
    pub fn check_real(&self, lo: usize, hi: usize) -> Result<()> {
        for n in lo..=hi {
            let v = self.eval_log(n)?;
            if v.phase.im != 0.0 {
                return Err(HwError::InvalidProblem(format!(
                    "value at n = {n} is not real: {}",
                    v.to_complex()
                )));
            }
        }
        Ok(())
    }
}

/// Anything indexable by `n` that yields a complex value.
pub trait Evaluate {
    fn value(&self, n: usize) -> Result<Complex64>;
}

impl Evaluate for SequenceSpec {
    fn value(&self, n: usize) -> Result<Complex64> {
        self.eval(n)
    }
}

/// A finite complex table starting at `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub start: usize,
    pub values: Vec<Complex64>,
}

impl Evaluate for Table {
    fn value(&self, n: usize) -> Result<Complex64> {
        if n < self.start || n >= self.start + self.values.len() {
            return Err(HwError::Domain {
                n,
                lo: self.start,
                hi: self.start + self.values.len(),
            });
        }
        Ok(self.values[n - self.start])
    }
}

/// `a_{n+1} - a_n`
pub fn forward_difference<S: Evaluate + ?Sized>(seq: &S, n: usize) -> Result<Complex64> {
    Ok(seq.value(n + 1)? - seq.value(n)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_values() {
        assert_eq!(SequenceSpec::power(0.5).eval(4).unwrap().re, 2.0);
        assert_eq!(SequenceSpec::alternating_power(1.0).eval(3).unwrap().re, -0.25);
        let e = SequenceSpec::exponential(-1.0).eval(2).unwrap().re;
        assert!((e - 0.1353352832366127).abs() < 1e-15);
    }

    #[test]
    fn log_values_avoid_overflow() {
        let v = SequenceSpec::exponential(1.0).eval_log(800).unwrap();
        assert_eq!(v.log_mag, 800.0);
        assert_eq!(v.phase, Complex64::new(1.0, 0.0));
        assert!(SequenceSpec::constant(0.0).eval_log(5).unwrap().is_zero());
        let p = SequenceSpec::product(vec![
            SequenceSpec::exponential(1.0),
            SequenceSpec::exponential(-1.0),
        ]);
        let v = p.eval_log(50).unwrap();
        assert_eq!(v.log_mag, 0.0);
        assert_eq!(v.phase.re, 1.0);
    }

    #[test]
    fn differences() {
        assert_eq!(forward_difference(&SequenceSpec::constant(7.0), 11).unwrap().re, 0.0);
        assert_eq!(forward_difference(&SequenceSpec::power(1.0), 3).unwrap().re, 1.0);
        assert_eq!(forward_difference(&SequenceSpec::power(2.0), 3).unwrap().re, 7.0);
    }

    #[test]
    fn tabulated_domain() {
        let t = SequenceSpec::Tabulated {
            start: 2,
            values: vec![1.0, 2.0],
        };
        assert!(t.eval(1).is_err());
        assert!(t.eval(4).is_err());
        assert_eq!(t.eval(3).unwrap().re, 2.0);
    }

    #[test]
    fn json_encoding() {
        let s: SequenceSpec = serde_json::from_str(
            r#"{"family":"scaled","factor":{"re":-1,"im":0},"inner":{"family":"product","factors":[{"family":"alt_power","beta":0},{"family":"power","alpha":-1.5}]}}"#,
        )
        .unwrap();
        assert_eq!(s.eval(2).unwrap().re, -(2f64.powf(-1.5)));
        let e: SequenceSpec = serde_json::from_str(r#"{"family":"exp","rate":-1.0}"#).unwrap();
        assert_eq!(e, SequenceSpec::exponential(-1.0));
        let back = serde_json::to_string(&e).unwrap();
        assert_eq!(back, r#"{"family":"exp","rate":-1.0}"#);
    }

    #[test]
    fn positivity() {
        assert!(SequenceSpec::power(2.0).check_positive(1, 100).is_ok());
        assert!(SequenceSpec::power(2.0).check_positive(0, 100).is_err());
        assert!(SequenceSpec::alternating_power(1.0).check_positive(0, 10).is_err());
    }

    #[test]
    fn log_add_cancels() {
        let a = LogScaledValue::from_real(3.0);
        let b = LogScaledValue::from_real(-3.0);
        assert!(a.add(b).is_zero());
        let c = LogScaledValue::from_log(1000.0).add(LogScaledValue::from_log(1000.0));
        assert!((c.log_mag - 1000.0 - 2f64.ln()).abs() < 1e-12);
    }
}
