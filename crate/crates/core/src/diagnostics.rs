//! Diagnostic series and tail tables of a perturbation against a
//! fundamental system.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{HwError, Result};
use crate::fss::FundamentalSystem;
use crate::problem::ProblemSpec;
use crate::sequence::{LogScaledValue, SequenceSpec};
use crate::series::{backward_tail_sums, CompensatedSum, ConvergenceReport, SeriesVerdict};
use crate::tail::{estimate_tail, log_slope, TailConfig, TailEstimate};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Bound on `|C_n| - 2 A_n` tolerated before a violation is recorded.
pub const SUP_BOUND_SLACK: f64 = 1e-9;
/// Relative tolerance on `H_n = J_n - C_n`.
pub const IDENTITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LimitVerdict {
    Zero,
    NonZero,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitReport {
    pub verdict: LimitVerdict,
    /// Fitted exponent of `|C_n|` against `n` over the final stretch.
    pub slope: Option<f64>,
    pub last_value: f64,
    pub evidence: String,
}

/// Which formula produced the `C` table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CPath {
    /// `(v_n/u_n) Σ_{k>=n} σ_k u_k²`, summed as `C_n = s_n + ρ_n C_{n+1}`.
    Direct,
    /// `J_n - (v_n/u_n) Σ_{k>=n} J_{k+1}/(r_k v_k v_{k+1})`.
    Stable,
}

/// Every diagnostic of one problem. Tables are indexed from `start` to
/// `horizon + 2`; reported series run over `[start, horizon]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsBundle {
    pub n0: usize,
    pub start: usize,
    pub horizon: usize,
    pub sigma_series: ConvergenceReport,
    pub j: ConvergenceReport,
    pub h: ConvergenceReport,
    pub g: ConvergenceReport,
    pub l: ConvergenceReport,
    pub p: ConvergenceReport,
    pub b: ConvergenceReport,
    pub i: ConvergenceReport,
    /// `Σ |J_{n+1} C_{n+1}| / (r_n u_n v_{n+1})`.
    pub jc_abs: ConvergenceReport,
    /// `Σ A_{n+1} |C_{n+1}| / (r_n u_n v_{n+1})`.
    pub ac_abs: ConvergenceReport,
    /// `Σ |σ_n| A_n u_n v_n`.
    pub sigma_a: ConvergenceReport,
    /// `Σ |σ_n u_n v_n|`.
    pub j_abs: ConvergenceReport,
    pub c_limit: LimitReport,
    pub c_defined: bool,
    /// `A` beyond the horizon uses an uncertified remainder.
    pub a_is_lower_bound: bool,
    pub j_table: Vec<Complex64>,
    pub a_table: Vec<f64>,
    pub c_table: Vec<Complex64>,
    pub c_stable_table: Vec<Complex64>,
    pub h_table: Vec<Complex64>,
    /// `max (|C_n| - 2 A_n)` over the reported window.
    pub sup_bound_excess: f64,
    /// `max |H_n - (J_n - C_n)| / (1 + |J_n|)`.
    pub identity_residual: f64,
    /// `max |C_direct - C_stable| / (1 + |C|)`.
    pub path_disagreement: f64,
    pub warnings: Vec<String>,
}

/// Per-index ingredients shared by all the series.
struct Weights {
    /// `s_k = σ_k u_k v_k` on `[start, top]`.
    s: Vec<LogScaledValue>,
    /// `σ_k u_k²`.
    su2: Vec<LogScaledValue>,
    /// `ρ_k = (v_k u_{k+1}) / (u_k v_{k+1})`.
    rho: Vec<f64>,
    /// `w_k = 1 / (r_k u_k v_{k+1})`.
    w: Vec<f64>,
    /// `ln(v_k / u_k)`.
    log_vu: Vec<f64>,
}

fn weights(fss: &FundamentalSystem, sigma: &SequenceSpec, start: usize, top: usize) -> Result<Weights> {
    if top + 1 > fss.last() {
        return Err(HwError::HorizonTooSmall(format!(
            "fundamental system ends at {}, diagnostics need {}",
            fss.last(),
            top + 1
        )));
    }
    let mut wt = Weights {
        s: Vec::new(),
        su2: Vec::new(),
        rho: Vec::new(),
        w: Vec::new(),
        log_vu: Vec::new(),
    };
    for k in start..=top {
        let sg = sigma.eval_log(k)?;
        let (lu, lv) = (fss.log_u(k), fss.log_v(k));
        wt.s.push(sg.scale_log(lu + lv));
        wt.su2.push(sg.scale_log(2.0 * lu));
        wt.rho.push((lv + fss.log_u(k + 1) - lu - fss.log_v(k + 1)).exp());
        wt.w.push((-fss.log_r(k) - lu - fss.log_v(k + 1)).exp());
        wt.log_vu.push(lv - lu);
    }
    Ok(wt)
}

fn report(
    start: usize,
    terms: &[LogScaledValue],
    cfg: &TailConfig,
    horizon: usize,
) -> (ConvergenceReport, TailEstimate) {
    let est = estimate_tail(start, terms, cfg);
    let mut acc = CompensatedSum::default();
    for t in terms {
        acc.add(t.to_complex());
    }
    let rep = if est.verdict.is_converged() {
        ConvergenceReport {
            verdict: est.verdict,
            value: (acc.value() + est.remainder.to_complex()).into(),
            error_estimate: est.error.abs(),
            horizon_used: horizon,
            evidence: est.evidence.clone(),
            certificate: est.regime.certificate().map(String::from),
        }
    } else {
        ConvergenceReport {
            verdict: est.verdict,
            value: Complex64::new(f64::NAN, 0.0).into(),
            error_estimate: f64::INFINITY,
            horizon_used: horizon,
            evidence: est.evidence.clone(),
            certificate: None,
        }
    };
    (rep, est)
}

fn series_of(start: usize, terms: Vec<Complex64>, cfg: &TailConfig, horizon: usize) -> ConvergenceReport {
    let terms: Vec<LogScaledValue> = terms.into_iter().map(LogScaledValue::from_complex).collect();
    report(start, &terms, cfg, horizon).0
}

/// Suffix supremum `A_k = max(allowance, max_{m>=k} |J_m|)`.
pub fn suffix_sup(abs_j: &[f64], allowance: f64) -> Vec<f64> {
    let mut out = vec![0.0; abs_j.len()];
    let mut running = allowance;
    for i in (0..abs_j.len()).rev() {
        running = running.max(abs_j[i]);
        out[i] = running;
    }
    out
}

/// `C` by `C_n = s_n + ρ_n C_{n+1}` from the anchor `C_top`.
pub fn coefficient_direct(s: &[Complex64], rho: &[f64], c_top: Complex64) -> Vec<Complex64> {
    let mut c = vec![ZERO; s.len()];
    let last = s.len() - 1;
    c[last] = c_top;
    for i in (0..last).rev() {
        c[i] = s[i] + rho[i] * c[i + 1];
    }
    c
}

/// `C = J - Y` with `Y_n = J_{n+1} w_n + ρ_n Y_{n+1}` from the anchor `Y_top`.
pub fn coefficient_stable(j: &[Complex64], rho: &[f64], w: &[f64], y_top: Complex64) -> Vec<Complex64> {
    let last = j.len() - 1;
    let mut y = vec![ZERO; j.len()];
    y[last] = y_top;
    for i in (0..last).rev() {
        y[i] = j[i + 1] * w[i] + rho[i] * y[i + 1];
    }
    j.iter().zip(&y).map(|(a, b)| a - b).collect()
}

fn inconclusive_because(horizon: usize, why: &str) -> ConvergenceReport {
    ConvergenceReport::inconclusive(horizon, why)
}

fn c_limit(start: usize, c: &[Complex64], cfg: &TailConfig) -> LimitReport {
    let last_value = c.last().map(|z| z.norm()).unwrap_or(0.0);
    let vals: Vec<LogScaledValue> = c.iter().map(|&z| LogScaledValue::from_complex(z)).collect();
    let fit = log_slope(start, &vals);
    let slope = fit.map(|f| f.0);
    let (verdict, evidence) = match slope {
        _ if last_value <= cfg.tol => (LimitVerdict::Zero, format!("|C_N| = {last_value:.3e} below tolerance")),
        Some(p) if p < -cfg.margin => (LimitVerdict::Zero, format!("|C_n| decays like n^{p:.3}")),
        Some(p) if p > -cfg.margin / 5.0 => (LimitVerdict::NonZero, format!("|C_n| behaves like n^{p:.3}")),
        Some(p) => (LimitVerdict::Unknown, format!("exponent {p:.3} inside the marginal band")),
        None => (LimitVerdict::Unknown, "too few nonzero values to fit".into()),
    };
    LimitReport {
        verdict,
        slope,
        last_value,
        evidence,
    }
}

impl DiagnosticsBundle {
    pub fn compute(problem: &ProblemSpec, fss: &FundamentalSystem) -> Result<Self> {
        Self::compute_with(problem, fss, CPath::Direct)
    }

    pub fn compute_with(problem: &ProblemSpec, fss: &FundamentalSystem, path: CPath) -> Result<Self> {
        let horizon = problem.horizon();
        let cfg = problem.tolerances.tail_config();
        let start = fss.first_positive();
        let top = horizon + 2;
        if start + cfg.window > horizon {
            return Err(HwError::HorizonTooSmall(format!(
                "window [{start}, {horizon}] shorter than {}",
                cfg.window
            )));
        }
        let wt = weights(fss, &problem.sigma, start, top)?;
        let len = top - start + 1;
        // reported series use [start, horizon]
        let rn = horizon - start + 1;

        let s: Vec<Complex64> = wt.s.iter().map(|x| x.to_complex()).collect();

        // J
        let (j_rep, j_est) = report(start, &wt.s[..rn], &cfg, horizon);
        let j_conv = j_rep.verdict.is_converged();
        let j_rem = if j_conv {
            // remainder past `top` from the same model: subtract the two
            // extra terms already tabulated
            j_est.remainder.to_complex() - s[rn..].iter().sum::<Complex64>()
        } else {
            ZERO
        };
        let j_table = backward_tail_sums(&s, j_rem);
        let j_table = j_table[..len].to_vec();

        // A
        let a_allowance = if j_conv { j_rem.norm() + j_est.error.abs() } else { 0.0 };
        let a_is_lower_bound = !j_conv || j_est.regime.certificate().is_none();
        let a_table = suffix_sup(&j_table.iter().map(|z| z.norm()).collect::<Vec<_>>(), a_allowance);

        // sigma series and C
        let (sigma_rep, sigma_est) = report(start, &wt.su2[..rn], &cfg, horizon);
        let c_defined = sigma_rep.verdict.is_converged();
        let (c_table, c_stable_table) = if c_defined {
            let extra: LogScaledValue = wt.su2[rn..].iter().fold(LogScaledValue::ZERO, |a, &b| a.add(b));
            let beyond = sigma_est.remainder.sub(extra);
            let c_top = wt.s[len - 1].add(beyond.scale_log(wt.log_vu[len - 1])).to_complex();
            let direct = coefficient_direct(&s, &wt.rho, c_top);
            let stable = coefficient_stable(&j_table, &wt.rho, &wt.w, j_table[len - 1] - c_top);
            (direct, stable)
        } else {
            (vec![ZERO; len], vec![ZERO; len])
        };
        let (c_table, c_stable_table) = match path {
            CPath::Direct => (c_table, c_stable_table),
            CPath::Stable => (c_stable_table, c_table),
        };
        let path_disagreement = c_table
            .iter()
            .zip(&c_stable_table)
            .take(rn)
            .map(|(a, b)| (a - b).norm() / (1.0 + a.norm()))
            .fold(0.0, f64::max);

        let undefined = |what: &str| inconclusive_because(horizon, &format!("{what}: C undefined, sum of sigma u^2 not converged"));
        let needs_j = |what: &str| inconclusive_because(horizon, &format!("{what}: J not converged"));

        // H
        let eta: Vec<Complex64> = (0..rn).map(|i| c_table[i + 1] * wt.w[i]).collect();
        let (h_rep, h_table) = if c_defined {
            let terms: Vec<LogScaledValue> = eta.iter().map(|&z| LogScaledValue::from_complex(z)).collect();
            let (rep, est) = report(start, &terms, &cfg, horizon);
            let rem = if rep.verdict.is_converged() { est.remainder.to_complex() } else { ZERO };
            (rep, backward_tail_sums(&eta, rem))
        } else {
            (undefined("H"), vec![ZERO; rn + 1])
        };
        let identity_residual = if h_rep.verdict.is_converged() && j_conv {
            (0..rn)
                .map(|i| (h_table[i] - (j_table[i] - c_table[i])).norm() / (1.0 + j_table[i].norm()))
                .fold(0.0, f64::max)
        } else {
            f64::NAN
        };

        let g = if c_defined {
            series_of(start, (0..rn).map(|i| Complex64::new(c_table[i + 1].norm_sqr() * wt.w[i], 0.0)).collect(), &cfg, horizon)
        } else {
            undefined("G")
        };
        let l = if !j_conv {
            needs_j("L")
        } else if !c_defined {
            undefined("L")
        } else {
            series_of(
                start,
                (0..rn).map(|i| Complex64::new((j_table[i + 1] * c_table[i + 1].conj()).re * wt.w[i], 0.0)).collect(),
                &cfg,
                horizon,
            )
        };
        let p = if c_defined {
            series_of(start, (0..rn).map(|i| Complex64::new((s[i] * c_table[i].conj()).re, 0.0)).collect(), &cfg, horizon)
        } else {
            undefined("P")
        };
        let b = series_of(start, (0..rn).map(|i| Complex64::new(s[i].norm_sqr(), 0.0)).collect(), &cfg, horizon);
        let i_series = if j_conv {
            series_of(start, (0..rn).map(|i| Complex64::new(j_table[i + 1].norm_sqr() * wt.w[i], 0.0)).collect(), &cfg, horizon)
        } else {
            needs_j("I")
        };
        let jc_abs = if j_conv && c_defined {
            series_of(start, (0..rn).map(|i| Complex64::new((j_table[i + 1] * c_table[i + 1]).norm() * wt.w[i], 0.0)).collect(), &cfg, horizon)
        } else {
            needs_j("|JC|")
        };
        let ac_abs = if j_conv && c_defined {
            series_of(start, (0..rn).map(|i| Complex64::new(a_table[i + 1] * c_table[i + 1].norm() * wt.w[i], 0.0)).collect(), &cfg, horizon)
        } else {
            needs_j("A|C|")
        };
        let sigma_a = if j_conv {
            series_of(start, (0..rn).map(|i| Complex64::new(a_table[i] * s[i].norm(), 0.0)).collect(), &cfg, horizon)
        } else {
            needs_j("A|s|")
        };
        let j_abs = {
            let terms: Vec<LogScaledValue> = wt.s[..rn].iter().map(|x| LogScaledValue::from_log(x.log_mag)).collect();
            report(start, &terms, &cfg, horizon).0
        };

        let c_limit = if c_defined {
            c_limit(start, &c_table[..rn], &cfg)
        } else {
            LimitReport {
                verdict: LimitVerdict::Unknown,
                slope: None,
                last_value: f64::NAN,
                evidence: "C undefined".into(),
            }
        };

        let sup_bound_excess = if c_defined {
            (0..rn)
                .map(|i| c_table[i].norm() - 2.0 * a_table[i])
                .fold(f64::NEG_INFINITY, f64::max)
        } else {
            f64::NAN
        };

        let mut bundle = DiagnosticsBundle {
            n0: fss.n0,
            start,
            horizon,
            sigma_series: sigma_rep,
            j: j_rep,
            h: h_rep,
            g,
            l,
            p,
            b,
            i: i_series,
            jc_abs,
            ac_abs,
            sigma_a,
            j_abs,
            c_limit,
            c_defined,
            a_is_lower_bound,
            j_table,
            a_table,
            c_table,
            c_stable_table,
            h_table,
            sup_bound_excess,
            identity_residual,
            path_disagreement,
            warnings: Vec::new(),
        };
        bundle.warnings = bundle.lemma_violations();
        for w in &bundle.warnings {
            log::warn!("{w}");
        }
        Ok(bundle)
    }

    /// Cross-verdict inconsistencies that exact arithmetic rules out.
    /// Inconclusive verdicts never count as violations.
    pub fn lemma_violations(&self) -> Vec<String> {
        use SeriesVerdict::*;
        let mut out = Vec::new();
        let definite = |v: SeriesVerdict| v != Inconclusive;
        if self.j.verdict == Converged {
            if self.sup_bound_excess > SUP_BOUND_SLACK {
                out.push(format!("|C_n| exceeds 2 A_n by {:.3e}", self.sup_bound_excess));
            }
            if self.identity_residual > IDENTITY_TOL {
                out.push(format!("H_n = J_n - C_n off by {:.3e}", self.identity_residual));
            }
            if definite(self.l.verdict) && definite(self.g.verdict) && self.l.verdict != self.g.verdict {
                out.push(format!("L is {} but G is {}", self.l.verdict.as_str(), self.g.verdict.as_str()));
            }
            if definite(self.p.verdict) && definite(self.g.verdict) && definite(self.b.verdict) {
                let gb = self.g.verdict == Converged && self.b.verdict == Converged;
                if (self.p.verdict == Converged) != gb {
                    out.push(format!(
                        "P is {} while G is {} and B is {}",
                        self.p.verdict.as_str(),
                        self.g.verdict.as_str(),
                        self.b.verdict.as_str()
                    ));
                }
            }
        }
        if self.i.verdict == Converged && self.g.verdict == Diverged {
            out.push("I converges but G diverges".into());
        }
        out
    }

    /// Index of the first table entry.
    pub fn index(&self, i: usize) -> usize {
        self.start + i
    }

    pub fn j_at(&self, n: usize) -> Complex64 {
        self.j_table[n - self.start]
    }

    pub fn a_at(&self, n: usize) -> f64 {
        self.a_table[n - self.start]
    }

    pub fn c_at(&self, n: usize) -> Complex64 {
        self.c_table[n - self.start]
    }

    pub fn h_at(&self, n: usize) -> Complex64 {
        self.h_table[n - self.start]
    }

    /// Write `n,J_re,J_im,A,C_re,C_im,H_re,H_im` rows over the reported window.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| HwError::InvalidProblem(format!("csv: {e}"));
        w.write_record(["n", "J_re", "J_im", "A", "C_re", "C_im", "H_re", "H_im"])
            .map_err(io)?;
        for n in self.start..=self.horizon {
            let (j, a, c, h) = (self.j_at(n), self.a_at(n), self.c_at(n), self.h_at(n));
            w.write_record(
                [n as f64, j.re, j.im, a, c.re, c.im, h.re, h.im]
                    .iter()
                    .enumerate()
                    .map(|(k, x)| if k == 0 { format!("{}", *x as usize) } else { format!("{x:e}") }),
            )
            .map_err(io)?;
        }
        w.flush().map_err(|e| HwError::InvalidProblem(format!("csv: {e}")))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suffix_sup_example() {
        let a = suffix_sup(&[3.0, 1.0, 2.0, 0.5], 0.0);
        assert_eq!(a, vec![3.0, 2.0, 2.0, 0.5]);
    }

    #[test]
    fn direct_and_stable_agree_on_wronskian_system() {
        // u = 1, v_n = n on [1, 6], r = 1: ρ_n = n/(n+1), w_n = 1/(n+1)
        let s: Vec<Complex64> = (1..=6).map(|n| Complex64::new(1.0 / (n * n) as f64, 0.0)).collect();
        let rho: Vec<f64> = (1..=6).map(|n| n as f64 / (n + 1) as f64).collect();
        let w: Vec<f64> = (1..=6).map(|n| 1.0 / (n + 1) as f64).collect();
        let j = backward_tail_sums(&s, Complex64::new(0.1, 0.0));
        let c = coefficient_direct(&s, &rho, Complex64::new(0.05, 0.0));
        let cs = coefficient_stable(&j[..6], &rho, &w, j[5] - Complex64::new(0.05, 0.0));
        for (a, b) in c.iter().zip(&cs) {
            assert!((a - b).norm() < 1e-14);
        }
    }
}
