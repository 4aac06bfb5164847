//! Convergence reports, compensated summation and the settling-window
//! heuristic.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::sequence::ComplexJson;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeriesVerdict {
    Converged,
    Diverged,
    Inconclusive,
}

impl SeriesVerdict {
    pub fn is_converged(self) -> bool {
        self == SeriesVerdict::Converged
    }

    pub fn is_diverged(self) -> bool {
        self == SeriesVerdict::Diverged
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SeriesVerdict::Converged => "Converged",
            SeriesVerdict::Diverged => "Diverged",
            SeriesVerdict::Inconclusive => "Inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub verdict: SeriesVerdict,
    /// Meaningful only when `verdict` is `Converged`.
    pub value: ComplexJson,
    pub error_estimate: f64,
    pub horizon_used: usize,
    pub evidence: String,
    /// Name of the remainder model that certified the verdict, if any.
    pub certificate: Option<String>,
}

impl ConvergenceReport {
    pub fn exact_zero(horizon: usize) -> Self {
        ConvergenceReport {
            verdict: SeriesVerdict::Converged,
            value: Complex64::new(0.0, 0.0).into(),
            error_estimate: 0.0,
            horizon_used: horizon,
            evidence: "all terms vanish".into(),
            certificate: Some("exact".into()),
        }
    }

    pub fn inconclusive(horizon: usize, evidence: impl Into<String>) -> Self {
        ConvergenceReport {
            verdict: SeriesVerdict::Inconclusive,
            value: Complex64::new(f64::NAN, 0.0).into(),
            error_estimate: f64::INFINITY,
            horizon_used: horizon,
            evidence: evidence.into(),
            certificate: None,
        }
    }

    pub fn value(&self) -> Complex64 {
        self.value.into()
    }
}

/// Neumaier-compensated running sum of complex numbers.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: Complex64,
    comp: Complex64,
}

fn neumaier(sum: &mut f64, comp: &mut f64, x: f64) {
    let t = *sum + x;
    if sum.abs() >= x.abs() {
        *comp += (*sum - t) + x;
    } else {
        *comp += (x - t) + *sum;
    }
    *sum = t;
}

impl CompensatedSum {
    pub fn new(init: Complex64) -> Self {
        CompensatedSum {
            sum: init,
            comp: Complex64::new(0.0, 0.0),
        }
    }

    pub fn add(&mut self, x: Complex64) {
        neumaier(&mut self.sum.re, &mut self.comp.re, x.re);
        neumaier(&mut self.sum.im, &mut self.comp.im, x.im);
    }

    pub fn value(&self) -> Complex64 {
        self.sum + self.comp
    }
}

/// Tail of a table: `out[i] = init + sum_{j >= i} terms[j]`, compensated.
pub fn backward_tail_sums(terms: &[Complex64], init: Complex64) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); terms.len() + 1];
    let mut acc = CompensatedSum::new(init);
    out[terms.len()] = init;
    for i in (0..terms.len()).rev() {
        acc.add(terms[i]);
        out[i] = acc.value();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub window: usize,
    pub tol: f64,
    pub growth_bound: f64,
    /// Terms are known to be real and nonnegative.
    pub nonnegative: bool,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            window: 64,
            tol: 1e-9,
            growth_bound: 1e12,
            nonnegative: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub verdict: SeriesVerdict,
    pub value: Complex64,
    /// Width of the settling band actually observed.
    pub band: f64,
    /// Number of pairwise-averaging passes applied before settling.
    pub averaging: usize,
}

/// Settling-window decision on a sequence of partial sums.
///
/// Pairwise averaging of neighbouring partial sums (up to three passes)
/// is tried before giving up, so alternating series settle at windows far
/// shorter than their raw oscillation would allow.
pub fn detect_convergence(partial_sums: &[Complex64], cfg: &DetectConfig) -> Detection {
    let w = cfg.window.max(2);
    let inconclusive = |band| Detection {
        verdict: SeriesVerdict::Inconclusive,
        value: Complex64::new(f64::NAN, 0.0),
        band,
        averaging: 0,
    };
    if partial_sums.len() < w + 1 {
        return inconclusive(f64::INFINITY);
    }
    let tail = &partial_sums[partial_sums.len() - w - 1..];
    if tail.iter().any(|s| !s.re.is_finite() || !s.im.is_finite() || s.norm() > cfg.growth_bound) {
        return Detection {
            verdict: SeriesVerdict::Diverged,
            value: Complex64::new(f64::NAN, 0.0),
            band: f64::INFINITY,
            averaging: 0,
        };
    }

    let mut seq: Vec<Complex64> = partial_sums[partial_sums.len().saturating_sub(w + 4)..].to_vec();
    let mut best_band = f64::INFINITY;
    for level in 0..=3 {
        if seq.len() < w {
            break;
        }
        let last = &seq[seq.len() - w..];
        let center = last[w - 1];
        let band = last.iter().map(|s| (s - center).norm()).fold(0.0, f64::max);
        best_band = best_band.min(band);
        let incr: Vec<f64> = last.windows(2).map(|p| (p[1] - p[0]).norm()).collect();
        let half = incr.len() / 2;
        let first: f64 = incr[..half].iter().sum::<f64>() / half.max(1) as f64;
        let second: f64 = incr[half..].iter().sum::<f64>() / (incr.len() - half).max(1) as f64;
        let decaying = second <= first * (1.0 + 1e-9) + f64::EPSILON * center.norm();
        if band <= cfg.tol * center.norm().max(1.0) && decaying {
            return Detection {
                verdict: SeriesVerdict::Converged,
                value: center,
                band,
                averaging: level,
            };
        }
        seq = seq.windows(2).map(|p| (p[0] + p[1]) * 0.5).collect();
    }

    if cfg.nonnegative {
        let incr_ok = tail.windows(2).all(|p| (p[1] - p[0]).re > cfg.tol);
        if incr_ok {
            return Detection {
                verdict: SeriesVerdict::Diverged,
                value: Complex64::new(f64::NAN, 0.0),
                band: best_band,
                averaging: 0,
            };
        }
    }
    inconclusive(best_band)
}

/// Both sides of the finite summation-by-parts identity
/// `sum_{n<N} (x_{n+1}-x_n) x_n = (x_N^2 - x_0^2)/2 - (1/2) sum_{n<N} (x_{n+1}-x_n)^2`.
pub fn summation_by_parts_check(x: &[f64]) -> (f64, f64) {
    if x.len() < 2 {
        return (0.0, 0.0);
    }
    let mut lhs = CompensatedSum::default();
    let mut sq = CompensatedSum::default();
    for p in x.windows(2) {
        let d = p[1] - p[0];
        lhs.add(Complex64::new(d * p[0], 0.0));
        sq.add(Complex64::new(d * d, 0.0));
    }
    let n = x.len() - 1;
    let rhs = (x[n] * x[n] - x[0] * x[0]) / 2.0 - 0.5 * sq.value().re;
    (lhs.value().re, rhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn partial(terms: impl Iterator<Item = f64>) -> Vec<Complex64> {
        let mut acc = CompensatedSum::default();
        terms
            .map(|t| {
                acc.add(Complex64::new(t, 0.0));
                acc.value()
            })
            .collect()
    }

    #[test]
    fn geometric_settles() {
        let s = partial((1..=120).map(|k| 0.5f64.powi(k)));
        let d = detect_convergence(&s, &DetectConfig::default());
        assert_eq!(d.verdict, SeriesVerdict::Converged);
        assert!((d.value.re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn harmonic_exceeds_bound() {
        let s = partial((1..=100_000).map(|k| 1.0 / k as f64));
        let cfg = DetectConfig {
            growth_bound: 10.0,
            nonnegative: true,
            ..DetectConfig::default()
        };
        assert_eq!(detect_convergence(&s, &cfg).verdict, SeriesVerdict::Diverged);
    }

    #[test]
    fn alternating_harmonic_settles_after_averaging() {
        let s = partial((1..=100_000).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 } / k as f64));
        let d = detect_convergence(&s, &DetectConfig::default());
        assert_eq!(d.verdict, SeriesVerdict::Converged);
        assert!((d.value.re + 2f64.ln()).abs() < 1e-9);
        assert!(d.averaging > 0);
    }

    #[test]
    fn sbp_small_cases() {
        assert_eq!(summation_by_parts_check(&[1.0, 1.0, 1.0, 1.0]), (0.0, 0.0));
        assert_eq!(summation_by_parts_check(&[1.0, 2.0, 3.0]), (3.0, 3.0));
    }

    #[test]
    fn backward_sums() {
        let t = [Complex64::new(1.0, 0.0), Complex64::new(2.0, 0.0)];
        let s = backward_tail_sums(&t, Complex64::new(0.5, 0.0));
        assert_eq!(s[0].re, 3.5);
        assert_eq!(s[1].re, 2.5);
        assert_eq!(s[2].re, 0.5);
    }
}
