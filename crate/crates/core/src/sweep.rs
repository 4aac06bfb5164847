//! The three reference families, their known phase diagrams, and parallel
//! parameter sweeps over them.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::DiagnosticsBundle;
use crate::error::{HwError, Result};
use crate::fss::FundamentalSystem;
use crate::problem::ProblemSpec;
use crate::sequence::SequenceSpec;
use crate::series::SeriesVerdict;
use crate::solvability::{classify, Status};

pub const DEFAULT_BAND: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `r_n = e^{-n}`, `σ_n = n^γ e^{-n}`, from `n = 0`.
    Exponential,
    /// `r_n = n^α`, `σ_n = n^{-β}`, from `n = 1`.
    Power,
    /// `r_n = n^α`, `σ_n = (-1)^{n-1} n^{-β}`, from `n = 1`.
    Alternating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Expected {
    Solvable,
    NotSolvable,
    /// Known to be beyond what the criteria decide.
    Open,
}

impl Expected {
    pub fn as_str(self) -> &'static str {
        match self {
            Expected::Solvable => "Solvable",
            Expected::NotSolvable => "NotSolvable",
            Expected::Open => "Open",
        }
    }

    pub fn matches(self, status: Status) -> bool {
        match self {
            Expected::Solvable => status.is_solvable(),
            Expected::NotSolvable => status == Status::NotSolvable,
            Expected::Open => status == Status::Indeterminate,
        }
    }
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Exponential, Family::Power, Family::Alternating];

    pub fn name(self) -> &'static str {
        match self {
            Family::Exponential => "exponential",
            Family::Power => "power",
            Family::Alternating => "alternating",
        }
    }

    pub fn from_name(s: &str) -> Option<Family> {
        Family::ALL.into_iter().find(|f| f.name() == s)
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            Family::Exponential => &["gamma"],
            Family::Power | Family::Alternating => &["alpha", "beta"],
        }
    }

    pub fn check_params(self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_names().len() || p.iter().any(|x| !x.is_finite()) {
            return Err(HwError::InvalidProblem(format!(
                "{} expects finite parameters {:?}",
                self.name(),
                self.param_names()
            )));
        }
        match self {
            Family::Power if p[0] < 0.0 => Err(HwError::InvalidProblem("alpha must be >= 0".into())),
            Family::Alternating if !(0.0..1.0).contains(&p[0]) => {
                Err(HwError::InvalidProblem("alpha must lie in [0, 1)".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn problem(self, p: &[f64]) -> Result<ProblemSpec> {
        self.check_params(p)?;
        let zero = SequenceSpec::constant(0.0);
        Ok(match self {
            Family::Exponential => ProblemSpec::new(
                SequenceSpec::exponential(-1.0),
                zero,
                SequenceSpec::product(vec![SequenceSpec::power(p[0]), SequenceSpec::exponential(-1.0)]),
                0,
            ),
            Family::Power => ProblemSpec::new(SequenceSpec::power(p[0]), zero, SequenceSpec::power(-p[1]), 1),
            Family::Alternating => ProblemSpec::new(
                SequenceSpec::power(p[0]),
                zero,
                SequenceSpec::scaled(
                    Complex64::new(-1.0, 0.0),
                    SequenceSpec::product(vec![SequenceSpec::alternating_power(0.0), SequenceSpec::power(-p[1])]),
                ),
                1,
            ),
        })
    }

    pub fn expected(self, p: &[f64]) -> Expected {
        match self {
            Family::Exponential => {
                let g = p[0];
                if g < -1.0 {
                    Expected::Solvable
                } else if (-0.5..0.0).contains(&g) {
                    Expected::Open
                } else {
                    Expected::NotSolvable
                }
            }
            Family::Power => {
                if p[0] + p[1] > 2.0 {
                    Expected::Solvable
                } else {
                    Expected::NotSolvable
                }
            }
            Family::Alternating => {
                if p[0] + p[1] > 1.0 && p[1] > 0.0 {
                    Expected::Solvable
                } else {
                    Expected::NotSolvable
                }
            }
        }
    }

    /// Distance-to-boundary test for cells that are reported but not scored.
    pub fn in_band(self, p: &[f64], band: f64) -> bool {
        match self {
            Family::Exponential => false,
            Family::Power => (p[0] + p[1] - 2.0).abs() <= band,
            Family::Alternating => (p[0] + p[1] - 1.0).abs() <= band || p[1].abs() <= band,
        }
    }

    /// Cells where the alternating family is solvable yet `B` and `P` diverge.
    pub fn in_absolute_gap(self, p: &[f64]) -> bool {
        self == Family::Alternating && p[1] > 1.0 - p[0] && p[1] <= 1.5 - p[0] + 1e-12
    }

    pub fn canonical_grid(self) -> Vec<Vec<f64>> {
        match self {
            Family::Exponential => [-2.0, -1.5, -1.0, -0.75, -0.4, -0.1, 0.0, 1.0]
                .iter()
                .map(|&g| vec![g])
                .collect(),
            Family::Power => grid2(&[0.0, 0.5, 1.0, 1.5, 2.0], &linspace(0.25, 0.25, 12)),
            Family::Alternating => grid2(&[0.0, 0.25, 0.5, 0.75], &linspace(0.2, 0.2, 10)),
        }
    }
}

fn linspace(first: f64, step: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| round12(first + step * i as f64)).collect()
}

fn round12(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

fn grid2(a: &[f64], b: &[f64]) -> Vec<Vec<f64>> {
    a.iter().flat_map(|&x| b.iter().map(move |&y| vec![x, y])).collect()
}

/// Values `a, a+step, ...` up to `b` inclusive (with a small tolerance).
pub fn parse_range(spec: &str) -> Result<Vec<f64>> {
    let bad = || HwError::InvalidProblem(format!("bad grid range '{spec}', expected a:b:step"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    match parts.as_slice() {
        [a] => Ok(vec![*a]),
        [a, b, step] if *step > 0.0 && b >= a => {
            let n = ((b - a) / step + 1e-9).floor() as usize + 1;
            if n > 10_000 {
                return Err(bad());
            }
            Ok(linspace(*a, *step, n))
        }
        _ => Err(bad()),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub params: Vec<f64>,
    pub status: Option<Status>,
    pub error: Option<String>,
    pub expected: Expected,
    pub j_verdict: Option<SeriesVerdict>,
    pub g_verdict: Option<SeriesVerdict>,
    pub b_verdict: Option<SeriesVerdict>,
    pub p_verdict: Option<SeriesVerdict>,
    /// Fitted decay exponent of `|C_n|`.
    pub c_slope: Option<f64>,
    pub scored: bool,
    pub matches: bool,
    pub warnings: Vec<String>,
}

pub fn run_cell(family: Family, params: &[f64], horizon: Option<usize>, band: f64) -> SweepCell {
    let expected = family.expected(params);
    let scored = !family.in_band(params, band);
    let outcome = family.problem(params).and_then(|mut p| {
        if horizon.is_some() {
            p.horizon = horizon;
        }
        let fss = FundamentalSystem::build(&p)?;
        DiagnosticsBundle::compute(&p, &fss)
    });
    match outcome {
        Ok(b) => {
            let v = classify(&b);
            SweepCell {
                params: params.to_vec(),
                status: Some(v.status),
                error: None,
                expected,
                j_verdict: Some(b.j.verdict),
                g_verdict: Some(b.g.verdict),
                b_verdict: Some(b.b.verdict),
                p_verdict: Some(b.p.verdict),
                c_slope: b.c_limit.slope,
                scored,
                matches: expected.matches(v.status),
                warnings: b.warnings.clone(),
            }
        }
        Err(e) => SweepCell {
            params: params.to_vec(),
            status: None,
            error: Some(e.to_string()),
            expected,
            j_verdict: None,
            g_verdict: None,
            b_verdict: None,
            p_verdict: None,
            c_slope: None,
            scored,
            matches: false,
            warnings: vec![],
        },
    }
}

/// Evaluate every grid point in parallel; output order follows the grid.
pub fn sweep(family: Family, grid: &[Vec<f64>], horizon: Option<usize>, band: f64) -> Vec<SweepCell> {
    grid.par_iter().map(|p| run_cell(family, p, horizon, band)).collect()
}

fn verdict_str(v: Option<SeriesVerdict>) -> &'static str {
    v.map(|v| v.as_str()).unwrap_or("error")
}

/// `param1,param2,verdict,expected,J_verdict,G_verdict,match`; one-parameter
/// families leave `param2` empty.
pub fn write_sweep_csv<W: Write>(cells: &[SweepCell], out: W) -> Result<()> {
    let io = |e: csv::Error| HwError::InvalidProblem(format!("csv: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["param1", "param2", "verdict", "expected", "J_verdict", "G_verdict", "match"])
        .map_err(io)?;
    for c in cells {
        let p2 = c.params.get(1).map(|x| x.to_string()).unwrap_or_default();
        let m = if c.scored { c.matches.to_string() } else { "unscored".into() };
        w.write_record([
            c.params[0].to_string(),
            p2,
            c.status.map(|s| s.as_str().to_string()).unwrap_or_else(|| "error".into()),
            c.expected.as_str().to_string(),
            verdict_str(c.j_verdict).to_string(),
            verdict_str(c.g_verdict).to_string(),
            m,
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| HwError::InvalidProblem(format!("csv: {e}")))?;
    Ok(())
}

/// `R_n(β) = Σ_{k>=n} (-1)^k/(k+1)^β` for `n` in `[lo, hi]`.
///
/// Summed backward from `K = 64·hi`; the omitted alternating tail is
/// estimated from the first three omitted terms.
pub fn alternating_remainders(beta: f64, lo: usize, hi: usize) -> Vec<f64> {
    let k_top = 64 * hi.max(1);
    let t = |k: usize| {
        let s = if k % 2 == 0 { 1.0 } else { -1.0 };
        s / ((k + 1) as f64).powf(beta)
    };
    // Euler transform of the omitted tail: (-1)^K [a/2 - Δa/4 + Δ²a/8].
    let a = |k: usize| ((k + 1) as f64).powf(-beta);
    let (a0, a1, a2) = (a(k_top), a(k_top + 1), a(k_top + 2));
    let sign = if k_top % 2 == 0 { 1.0 } else { -1.0 };
    let rem = sign * (a0 / 2.0 - (a1 - a0) / 4.0 + (a2 - 2.0 * a1 + a0) / 8.0);
    let mut acc = crate::series::CompensatedSum::new(Complex64::new(rem, 0.0));
    let mut out = vec![0.0; hi - lo + 1];
    for k in (lo..k_top).rev() {
        acc.add(Complex64::new(t(k), 0.0));
        if k <= hi {
            out[k - lo] = acc.value().re;
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BandCheck {
    pub beta: f64,
    pub min: f64,
    pub max: f64,
    pub ratio: f64,
    pub passed: bool,
}

/// `|R_n(β)|·n^β` over `[50, 5000]` stays inside a band of ratio at most 10.
pub fn remainder_band(beta: f64) -> BandCheck {
    let (lo, hi) = (50, 5000);
    let r = alternating_remainders(beta, lo, hi);
    let scaled: Vec<f64> = r
        .iter()
        .enumerate()
        .map(|(i, x)| x.abs() * ((lo + i) as f64).powf(beta))
        .collect();
    let min = scaled.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = scaled.iter().cloned().fold(0.0, f64::max);
    let ratio = max / min;
    BandCheck {
        beta,
        min,
        max,
        ratio,
        passed: min > 0.0 && ratio <= 10.0,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtraCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReproduceReport {
    pub family: Family,
    pub cells: Vec<SweepCell>,
    pub extra: Vec<ExtraCheck>,
    pub scored: usize,
    pub mismatches: usize,
    pub passed: bool,
}

impl ReproduceReport {
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{}: {} cells, {} scored, {} mismatches\n",
            self.family.name(),
            self.cells.len(),
            self.scored,
            self.mismatches
        );
        for c in &self.cells {
            let flag = if !c.scored {
                "band"
            } else if c.matches {
                "ok"
            } else {
                "MISMATCH"
            };
            s.push_str(&format!(
                "  {:?} -> {} (expected {}) [{}]\n",
                c.params,
                c.status.map(|v| v.as_str()).unwrap_or("error"),
                c.expected.as_str(),
                flag
            ));
        }
        for e in &self.extra {
            s.push_str(&format!("  {}: {} ({})\n", e.name, if e.passed { "PASS" } else { "FAIL" }, e.detail));
        }
        s.push_str(if self.passed { "PASS\n" } else { "FAIL\n" });
        s
    }
}

/// Canonical grid of a family against its known phase diagram.
pub fn reproduce(family: Family) -> ReproduceReport {
    let grid = family.canonical_grid();
    let cells = sweep(family, &grid, None, DEFAULT_BAND);
    let mut extra = Vec::new();
    if family == Family::Alternating {
        for c in cells.iter().filter(|c| family.in_absolute_gap(&c.params)) {
            let ok = c.b_verdict == Some(SeriesVerdict::Diverged) && c.p_verdict == Some(SeriesVerdict::Diverged);
            extra.push(ExtraCheck {
                name: format!("B and P diverge at {:?}", c.params),
                passed: ok,
                detail: format!("B {}, P {}", verdict_str(c.b_verdict), verdict_str(c.p_verdict)),
            });
        }
        for beta in [0.5, 1.0, 1.5] {
            let b = remainder_band(beta);
            extra.push(ExtraCheck {
                name: format!("alternating remainder band, beta = {beta}"),
                passed: b.passed,
                detail: format!("[{:.4}, {:.4}], ratio {:.3}", b.min, b.max, b.ratio),
            });
        }
    }
    let scored = cells.iter().filter(|c| c.scored).count();
    let mismatches = cells.iter().filter(|c| c.scored && !c.matches).count();
    let passed = mismatches == 0 && extra.iter().all(|e| e.passed);
    ReproduceReport {
        family,
        cells,
        extra,
        scored,
        mismatches,
        passed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("0:1:0.25").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(parse_range("2").unwrap(), vec![2.0]);
        assert!(parse_range("1:0:0.1").is_err());
        assert!(parse_range("a:b").is_err());
    }

    #[test]
    fn grid_sizes() {
        assert_eq!(Family::Power.canonical_grid().len(), 60);
        assert_eq!(Family::Alternating.canonical_grid().len(), 40);
        assert_eq!(Family::Exponential.canonical_grid().len(), 8);
    }

    #[test]
    fn alternating_sign_convention() {
        let p = Family::Alternating.problem(&[0.0, 1.0]).unwrap();
        assert!((p.sigma.eval(2).unwrap().re + 0.5).abs() < 1e-15);
        assert!((p.sigma.eval(3).unwrap().re - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn remainder_matches_closed_form_at_beta_one() {
        // Σ_{k>=0} (-1)^k/(k+1) = ln 2
        let r = alternating_remainders(1.0, 0, 10);
        assert!((r[0] - 2f64.ln()).abs() < 1e-9);
    }
}
