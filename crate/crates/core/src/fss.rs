//! Principal and non-principal solutions of the unperturbed equation
//! `Δ(r_{n-1}Δy_{n-1}) = q_n y_n`, stored as log tables.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{HwError, Result};
use crate::problem::{ProblemSpec, LOOKAHEAD};
use crate::sequence::{LogScaledValue, SequenceSpec};
use crate::series::{CompensatedSum, ConvergenceReport, SeriesVerdict};
use crate::tail::{estimate_tail, TailConfig, TailEstimate};

/// `ln(e^a + e^b)`.
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln x_n` for a positive sequence on `[lo, hi]`.
pub fn log_table(seq: &SequenceSpec, lo: usize, hi: usize) -> Result<Vec<f64>> {
    (lo..=hi)
        .map(|n| {
            let v = seq.eval_log(n)?;
            if v.is_zero() || (v.phase.re - 1.0).abs() > 1e-12 || v.phase.im.abs() > 1e-12 {
                return Err(HwError::NotPositive {
                    n,
                    value: format!("{}", v.to_complex()),
                });
            }
            Ok(v.log_mag)
        })
        .collect()
}

/// `y_{n+1}` from `y_{n-1}, y_n` through the expanded recurrence.
pub fn step_unperturbed(
    r: &SequenceSpec,
    q: &SequenceSpec,
    y_prev: Complex64,
    y_curr: Complex64,
    n: usize,
) -> Result<Complex64> {
    if n == 0 {
        return Err(HwError::Domain { n, lo: 1, hi: usize::MAX });
    }
    let rn = r.eval(n)?;
    let rp = r.eval(n - 1)?;
    if rn.re <= 0.0 || rn.im != 0.0 {
        return Err(HwError::NotPositive {
            n,
            value: format!("{rn}"),
        });
    }
    let qn = q.eval(n)?;
    Ok(y_curr + (rp * (y_curr - y_prev) + qn * y_curr) / rn)
}

/// `ln v` on the index range of `log_u` (which starts at `n0`), using
/// `v_{n+1} = u_{n+1} Σ_{k=n0}^{n} 1/(r_k u_k u_{k+1})` and `v_{n0} = 0`.
pub fn nonprincipal_from_principal(log_r: &[f64], log_u: &[f64]) -> Vec<f64> {
    let mut out = vec![f64::NEG_INFINITY; log_u.len()];
    let mut acc = LogScaledValue::ZERO;
    for k in 0..log_u.len().saturating_sub(1) {
        acc = acc.add(LogScaledValue::from_log(-log_r[k] - log_u[k] - log_u[k + 1]));
        out[k + 1] = log_u[k + 1] + acc.log_mag;
    }
    out
}

/// Index (relative to the table start) of the first nonzero entry.
fn first_positive(log_v: &[f64]) -> usize {
    log_v
        .iter()
        .position(|&x| x > f64::NEG_INFINITY)
        .unwrap_or(log_v.len())
}

fn report_from_tail(est: &TailEstimate, value: LogScaledValue, err: f64, horizon: usize) -> ConvergenceReport {
    ConvergenceReport {
        verdict: est.verdict,
        value: value.to_complex().into(),
        error_estimate: err,
        horizon_used: horizon,
        evidence: est.evidence.clone(),
        certificate: est.regime.certificate().map(String::from),
    }
}

/// Principal solution table built from a dominant one.
#[derive(Debug, Clone)]
pub struct PrincipalTable {
    pub log_u: Vec<f64>,
    /// Tail `Σ_{k>=last} 1/(r_k v_k v_{k+1})` as estimated at the end of the table.
    pub tail: TailEstimate,
}

/// `u_n = v_n Σ_{k>=n} 1/(r_k v_k v_{k+1})` on the whole table, summed
/// backward from the estimated tail remainder so that `v_n = 0` entries are
/// handled without division.
pub fn principal_table(log_r: &[f64], log_v: &[f64], start: usize, cfg: &TailConfig) -> PrincipalTable {
    let len = log_v.len();
    let m = first_positive(log_v);
    let last = len - 1;
    let terms: Vec<LogScaledValue> = (m..last)
        .map(|k| LogScaledValue::from_log(-log_r[k] - log_v[k] - log_v[k + 1]))
        .collect();
    let tail = estimate_tail(start + m, &terms, cfg);
    let mut log_u = vec![f64::NEG_INFINITY; len];
    log_u[last] = log_v[last] + tail.remainder.log_mag;
    for n in (0..last).rev() {
        log_u[n] = log_add(-log_r[n] - log_v[n + 1], log_v[n] - log_v[n + 1] + log_u[n + 1]);
    }
    PrincipalTable { log_u, tail }
}

/// `u_n` from a dominant solution tabulated on `[start, start + len)`, as a
/// convergence report whose error comes from the tail estimate.
pub fn principal_from_nonprincipal(
    log_r: &[f64],
    log_v: &[f64],
    start: usize,
    n: usize,
    cfg: &TailConfig,
) -> Result<ConvergenceReport> {
    if n < start || n >= start + log_v.len() {
        return Err(HwError::Domain {
            n,
            lo: start,
            hi: start + log_v.len(),
        });
    }
    let table = principal_table(log_r, log_v, start, cfg);
    let horizon = start + log_v.len() - 1;
    if !table.tail.verdict.is_converged() {
        return Ok(ConvergenceReport {
            verdict: table.tail.verdict,
            ..ConvergenceReport::inconclusive(horizon, table.tail.evidence.clone())
        });
    }
    let i = n - start;
    // The remainder error propagates into u_n scaled by v_n / v_last.
    let err = (log_v[i] + table.tail.error.log_mag).exp();
    Ok(report_from_tail(&table.tail, LogScaledValue::from_log(table.log_u[i]), err, horizon))
}

/// Solve the equation backward from `hi` down to `lo`.
///
/// `log_r` and `coeff` (`q_n + σ_n`) are tables starting at `lo` and covering
/// `[lo, hi]`. The seed is `d_hi = y_{hi+1}/y_hi - 1`. The result covers
/// `[lo, hi + 1]`, normalized so that `y_lo = 1`. With `real_positive`, a
/// sign change is reported as oscillation.
pub fn backward_recurrence(
    log_r: &[f64],
    coeff: &[LogScaledValue],
    lo: usize,
    hi: usize,
    seed: Complex64,
    real_positive: bool,
) -> Result<Vec<LogScaledValue>> {
    let len = hi - lo + 2;
    let mut y = vec![LogScaledValue::ZERO; len];
    y[hi - lo] = LogScaledValue::ONE;
    y[hi - lo + 1] = LogScaledValue::from_complex(Complex64::new(1.0, 0.0) + seed);
    let mut d = seed;
    for n in (lo + 1..=hi).rev() {
        let i = n - lo;
        let ratio = (log_r[i] - log_r[i - 1]).exp();
        let c = coeff[i].scale_log(-log_r[i - 1]).to_complex();
        let big_d = d * ratio - c;
        let one_minus = Complex64::new(1.0, 0.0) - big_d;
        if one_minus.norm() == 0.0 || !one_minus.re.is_finite() || (real_positive && one_minus.re <= 0.0) {
            return Err(HwError::Oscillation { n: n - 1 });
        }
        // ln|1 - D| via log1p keeps small steps accurate.
        let log_mag = 0.5 * (big_d.norm_sqr() - 2.0 * big_d.re).ln_1p();
        let step = LogScaledValue {
            log_mag,
            phase: one_minus / one_minus.norm(),
        };
        y[i - 1] = y[i] * step;
        d = big_d / one_minus;
    }
    let norm = y[0].recip();
    Ok(y.into_iter().map(|v| v * norm).collect())
}

/// Miller-style recessive solution: trial data `(y_{N_big}, y_{N_big+1}) = (1, 0)`
/// run backward and normalized at `n0`. Returns `ln u` on `[n0, N_big]`.
pub fn recessive_by_backward_recurrence(
    r: &SequenceSpec,
    q: &SequenceSpec,
    n0: usize,
    n_big: usize,
) -> Result<Vec<f64>> {
    if n_big <= n0 + 1 {
        return Err(HwError::InvalidProblem("N_big must exceed n0 + 1".into()));
    }
    let log_r = log_table(r, n0, n_big)?;
    let coeff = (n0..=n_big).map(|n| q.eval_log(n)).collect::<Result<Vec<_>>>()?;
    let y = backward_recurrence(&log_r, &coeff, n0, n_big, Complex64::new(-1.0, 0.0), true)?;
    Ok(y[..=n_big - n0].iter().map(|v| v.log_mag).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FssMethod {
    /// `q ≡ 0` and `Σ 1/r` diverges: `u ≡ 1`.
    UnitPrincipal,
    /// `q ≡ 0` and `Σ 1/r` converges: `v ≡ 1`.
    UnitNonprincipal,
    /// Dominant solution stepped forward, principal one summed from its tail.
    Stepped,
}

/// Principal `u` and non-principal `v` with `r_n(v_{n+1}u_n - u_{n+1}v_n) = 1`,
/// tabulated in log form on `[n0, last]`.
#[derive(Debug, Clone)]
pub struct FundamentalSystem {
    pub n0: usize,
    pub method: FssMethod,
    log_r: Vec<f64>,
    log_u: Vec<f64>,
    log_v: Vec<f64>,
    pub wronskian_residual: f64,
    /// The series whose tail fixed the system (`Σ 1/r` or `Σ 1/(r v v)`).
    pub tail: ConvergenceReport,
}

fn q_vanishes(q: &SequenceSpec, lo: usize, hi: usize) -> Result<bool> {
    for n in lo..=hi {
        if q.eval(n)?.norm() != 0.0 {
            return Ok(false);
        }
    }
    Ok(true)
}

impl FundamentalSystem {
    /// Build on `[n0, horizon + LOOKAHEAD]`.
    pub fn build(problem: &ProblemSpec) -> Result<Self> {
        problem.validate()?;
        Self::build_to(problem, problem.horizon() + LOOKAHEAD)
    }

    /// Build on `[n0, last]` without the horizon checks.
    pub fn build_to(problem: &ProblemSpec, last: usize) -> Result<Self> {
        let n0 = problem.n0;
        let cfg = problem.tolerances.tail_config();
        let log_r = log_table(&problem.r, n0, last)?;
        let len = log_r.len();
        if len < cfg.window + 2 {
            return Err(HwError::HorizonTooSmall(format!("only {len} indices")));
        }

        if q_vanishes(&problem.q, n0, last)? {
            let terms: Vec<LogScaledValue> = log_r.iter().map(|&l| LogScaledValue::from_log(-l)).collect();
            let est = estimate_tail(n0, &terms, &cfg);
            match est.verdict {
                SeriesVerdict::Diverged => {
                    let log_u = vec![0.0; len];
                    let log_v = nonprincipal_from_principal(&log_r, &log_u);
                    let tail = report_from_tail(&est, LogScaledValue::ZERO, f64::INFINITY, last);
                    return Ok(Self::assemble(n0, FssMethod::UnitPrincipal, log_r, log_u, log_v, tail));
                }
                SeriesVerdict::Converged => {
                    let log_v = vec![0.0; len];
                    let table = principal_table(&log_r, &log_v, n0, &cfg);
                    let tail = report_from_tail(&est, est.remainder, est.error.abs(), last);
                    return Ok(Self::assemble(n0, FssMethod::UnitNonprincipal, log_r, table.log_u, log_v, tail));
                }
                SeriesVerdict::Inconclusive => {
                    log::debug!("sum of 1/r undecided ({}); stepping the equation", est.evidence);
                }
            }
        }

        let mut log_v = vec![f64::NEG_INFINITY; len];
        if len > 1 {
            log_v[1] = -log_r[0];
        }
        let mut d = 0.0;
        for i in 1..len - 1 {
            let n = n0 + i;
            let q = problem.q.eval(n)?.re;
            let prev = if i == 1 {
                (log_r[0] - log_r[1]).exp()
            } else {
                (log_r[i - 1] - log_r[i]).exp() * d / (1.0 + d)
            };
            d = prev + q * (-log_r[i]).exp();
            if !d.is_finite() || 1.0 + d <= 0.0 {
                return Err(HwError::Oscillation { n: n + 1 });
            }
            log_v[i + 1] = log_v[i] + d.ln_1p();
        }
        let table = principal_table(&log_r, &log_v, n0, &cfg);
        if !table.tail.verdict.is_converged() {
            return Err(HwError::HorizonTooSmall(format!(
                "tail of sum 1/(r v v) is {}: {}",
                table.tail.verdict.as_str(),
                table.tail.evidence
            )));
        }
        let tail = report_from_tail(&table.tail, table.tail.remainder, table.tail.error.abs(), last);
        Ok(Self::assemble(n0, FssMethod::Stepped, log_r, table.log_u, log_v, tail))
    }

    /// Wrap externally supplied tables (`ln r`, `ln u`, `ln v` on `[n0, ...]`).
    pub fn from_tables(n0: usize, log_r: Vec<f64>, log_u: Vec<f64>, log_v: Vec<f64>) -> Result<Self> {
        if log_r.len() != log_u.len() || log_u.len() != log_v.len() || log_r.len() < 2 {
            return Err(HwError::InvalidProblem("tables must have equal length >= 2".into()));
        }
        let last = n0 + log_r.len() - 1;
        Ok(Self::assemble(
            n0,
            FssMethod::Stepped,
            log_r,
            log_u,
            log_v,
            ConvergenceReport::inconclusive(last, "supplied tables"),
        ))
    }

    fn assemble(
        n0: usize,
        method: FssMethod,
        log_r: Vec<f64>,
        log_u: Vec<f64>,
        log_v: Vec<f64>,
        tail: ConvergenceReport,
    ) -> Self {
        let mut fss = FundamentalSystem {
            n0,
            method,
            log_r,
            log_u,
            log_v,
            wronskian_residual: 0.0,
            tail,
        };
        fss.wronskian_residual = (n0..fss.last())
            .map(|n| fss.wronskian_error(n))
            .fold(0.0, f64::max);
        fss
    }

    /// Last tabulated index.
    pub fn last(&self) -> usize {
        self.n0 + self.log_u.len() - 1
    }

    /// First index with `v_n > 0`; everything downstream starts here.
    pub fn first_positive(&self) -> usize {
        self.n0 + first_positive(&self.log_v)
    }

    pub fn log_r(&self, n: usize) -> f64 {
        self.log_r[n - self.n0]
    }

    pub fn log_u(&self, n: usize) -> f64 {
        self.log_u[n - self.n0]
    }

    pub fn log_v(&self, n: usize) -> f64 {
        self.log_v[n - self.n0]
    }

    pub fn u(&self, n: usize) -> f64 {
        self.log_u(n).exp()
    }

    pub fn v(&self, n: usize) -> f64 {
        self.log_v(n).exp()
    }

    pub fn log_r_table(&self) -> &[f64] {
        &self.log_r
    }

    pub fn log_u_table(&self) -> &[f64] {
        &self.log_u
    }

    pub fn log_v_table(&self) -> &[f64] {
        &self.log_v
    }

    /// `|r_n(v_{n+1}u_n - u_{n+1}v_n) - 1|`.
    pub fn wronskian_error(&self, n: usize) -> f64 {
        let lr = self.log_r(n);
        let a = (lr + self.log_v(n + 1) + self.log_u(n)).exp();
        let b = (lr + self.log_u(n + 1) + self.log_v(n)).exp();
        (a - b - 1.0).abs()
    }

    /// The same system with `u` and `v` exchanged; used to exercise the
    /// validator on a system that is not correctly oriented.
    pub fn swapped(&self) -> Self {
        let mut s = self.clone();
        std::mem::swap(&mut s.log_u, &mut s.log_v);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesEvidence {
    pub verdict: SeriesVerdict,
    /// Difference of partial sums at `N` and `N/2`.
    pub half_window_increment: f64,
    /// Spread of the final `convergence_window` partial sums.
    pub last_window_spread: f64,
    pub evidence: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n0: usize,
    pub window: (usize, usize),
    pub wronskian_residual: f64,
    /// Worst `|W - 1| / max(1, r_n u_n v_{n+1})`.
    pub wronskian_scaled: f64,
    pub monotone_uv: bool,
    /// `1 > (u_{n+1}/u_n)(v_n/v_{n+1})` and `r_n u_n v_{n+1} > 1` everywhere.
    pub ratio_inequalities: bool,
    pub sum_ruu_divergent: bool,
    pub sum_rvv_convergent: bool,
    pub sum_ruv_divergent: bool,
    /// Smallest `R_n - (1 - (u_{N+1}v_n)/(v_{N+1}u_n))` over the window, where
    /// `R_n` is the finite remainder of `Σ 1/(r u v_{+1})`; never below zero
    /// in exact arithmetic.
    pub remainder_bound_margin: f64,
    pub ruu: SeriesEvidence,
    pub rvv: SeriesEvidence,
    pub ruv: SeriesEvidence,
}

impl ValidationReport {
    pub fn passed(&self, wronskian_tol: f64) -> bool {
        self.wronskian_scaled <= wronskian_tol
            && self.monotone_uv
            && self.ratio_inequalities
            && self.sum_ruu_divergent
            && self.sum_rvv_convergent
            && self.sum_ruv_divergent
    }
}

fn series_evidence(start: usize, terms: &[LogScaledValue], cfg: &TailConfig) -> SeriesEvidence {
    let mut acc = CompensatedSum::default();
    let partial: Vec<f64> = terms
        .iter()
        .map(|t| {
            acc.add(t.to_complex());
            acc.value().re
        })
        .collect();
    let n = partial.len();
    let half_window_increment = if n >= 2 { partial[n - 1] - partial[n / 2] } else { 0.0 };
    let w = cfg.window.min(n);
    let tail = &partial[n - w..];
    let spread = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - tail.iter().cloned().fold(f64::INFINITY, f64::min);
    let est = estimate_tail(start, terms, cfg);
    SeriesEvidence {
        verdict: est.verdict,
        half_window_increment,
        last_window_spread: spread,
        evidence: est.evidence,
    }
}

/// Report-only checks of a fundamental system on `[first positive v, horizon]`.
pub fn validate_fss(fss: &FundamentalSystem, horizon: usize, cfg: &TailConfig) -> ValidationReport {
    let lo = fss.first_positive();
    let hi = horizon.min(fss.last() - 1);
    let mut wr = 0.0f64;
    let mut ws = 0.0f64;
    for n in fss.n0..=hi {
        let e = fss.wronskian_error(n);
        wr = wr.max(e);
        let scale = (fss.log_r(n) + fss.log_u(n) + fss.log_v(n + 1)).exp().max(1.0);
        ws = ws.max(e / scale);
    }
    let ratio = |n: usize| fss.log_u(n) - fss.log_v(n);
    let monotone_uv = (lo..hi).all(|n| ratio(n + 1) < ratio(n));
    let ratio_inequalities = (lo..hi).all(|n| {
        let x = fss.log_u(n + 1) - fss.log_u(n) + fss.log_v(n) - fss.log_v(n + 1);
        x < 0.0 && fss.log_r(n) + fss.log_u(n) + fss.log_v(n + 1) > 0.0
    });

    let ruu_terms: Vec<LogScaledValue> = (fss.n0..=hi)
        .map(|k| LogScaledValue::from_log(-fss.log_r(k) - fss.log_u(k) - fss.log_u(k + 1)))
        .collect();
    let rvv_terms: Vec<LogScaledValue> = (lo..=hi)
        .map(|k| LogScaledValue::from_log(-fss.log_r(k) - fss.log_v(k) - fss.log_v(k + 1)))
        .collect();
    let ruv_terms: Vec<LogScaledValue> = (lo..=hi)
        .map(|k| LogScaledValue::from_log(-fss.log_r(k) - fss.log_u(k) - fss.log_v(k + 1)))
        .collect();
    let ruu = series_evidence(fss.n0, &ruu_terms, cfg);
    let rvv = series_evidence(lo, &rvv_terms, cfg);
    let ruv = series_evidence(lo, &ruv_terms, cfg);

    // Finite remainders R_n = Σ_{s=n}^{hi} 1/(r_s u_s v_{s+1}) against the
    // telescoped lower bound 1 - (u_{hi+1}/v_{hi+1})/(u_n/v_n).
    let mut margin = f64::INFINITY;
    let mut acc = CompensatedSum::default();
    let end_ratio = ratio(hi + 1);
    for n in (lo..=hi).rev() {
        acc.add(ruv_terms[n - lo].to_complex());
        let bound = -(end_ratio - ratio(n)).exp_m1();
        margin = margin.min(acc.value().re - bound);
    }

    let heuristic_divergent = |e: &SeriesEvidence| e.half_window_increment > 10.0 * cfg.tol;
    let divergent = |e: &SeriesEvidence| {
        e.verdict.is_diverged() || (e.verdict == SeriesVerdict::Inconclusive && heuristic_divergent(e))
    };
    ValidationReport {
        n0: fss.n0,
        window: (lo, hi),
        wronskian_residual: wr,
        wronskian_scaled: ws,
        monotone_uv,
        ratio_inequalities,
        sum_ruu_divergent: divergent(&ruu),
        sum_rvv_convergent: rvv.verdict.is_converged(),
        sum_ruv_divergent: margin >= -1e-9 && divergent(&ruv),
        remainder_bound_margin: margin,
        ruu,
        rvv,
        ruv,
    }
}
