use serde::{Deserialize, Serialize};

use crate::error::{HwError, Result};
use crate::sequence::SequenceSpec;
use crate::tail::TailConfig;

/// Extra indices computed past the horizon so that `C_{N+1}`, `v_{N+2}` and
/// friends exist for the operators that look ahead.
pub const LOOKAHEAD: usize = 3;

pub const DEFAULT_POWER_HORIZON: usize = 5000;
pub const DEFAULT_EXP_HORIZON: usize = 700;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub wronskian_tol: f64,
    pub tail_tol: f64,
    pub convergence_window: usize,
    /// Margin on decay exponents separating converged from divergent tails.
    pub decay_margin: f64,
    pub growth_bound: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            wronskian_tol: 1e-10,
            tail_tol: 1e-9,
            convergence_window: 64,
            decay_margin: 0.05,
            growth_bound: 1e12,
        }
    }
}

impl Tolerances {
    pub fn tail_config(&self) -> TailConfig {
        TailConfig {
            window: self.convergence_window,
            margin: self.decay_margin,
            tol: self.tail_tol,
            growth_bound: self.growth_bound,
        }
    }
}

fn zero_sequence() -> SequenceSpec {
    SequenceSpec::constant(0.0)
}

/// `Δ(r_{n-1}Δy_{n-1}) = (q_n + σ_n) y_n` on `n >= n0`, examined up to `horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub r: SequenceSpec,
    #[serde(default = "zero_sequence")]
    pub q: SequenceSpec,
    #[serde(default = "zero_sequence")]
    pub sigma: SequenceSpec,
    #[serde(default)]
    pub n0: usize,
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl ProblemSpec {
    pub fn new(r: SequenceSpec, q: SequenceSpec, sigma: SequenceSpec, n0: usize) -> Self {
        ProblemSpec {
            r,
            q,
            sigma,
            n0,
            horizon: None,
            tolerances: Tolerances::default(),
        }
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = Some(horizon);
        self
    }

    /// The same problem with `σ ≡ 0`.
    pub fn unperturbed(&self) -> Self {
        ProblemSpec {
            sigma: zero_sequence(),
            ..self.clone()
        }
    }

    pub fn has_exponential(&self) -> bool {
        self.r.has_exponential() || self.q.has_exponential() || self.sigma.has_exponential()
    }

    pub fn horizon(&self) -> usize {
        self.horizon.unwrap_or(if self.has_exponential() {
            DEFAULT_EXP_HORIZON
        } else {
            DEFAULT_POWER_HORIZON
        })
    }

    /// Check positivity of `r`, reality of `q` and evaluability of `σ`
    /// on everything the computations will touch.
    pub fn validate(&self) -> Result<()> {
        let n = self.horizon();
        let t = &self.tolerances;
        if t.convergence_window < 8 {
            return Err(HwError::InvalidProblem(
                "convergence_window must be at least 8".into(),
            ));
        }
        if n < self.n0 + t.convergence_window {
            return Err(HwError::InvalidProblem(format!(
                "horizon {n} leaves fewer than {} indices after n0 = {}",
                t.convergence_window, self.n0
            )));
        }
        let hi = n + LOOKAHEAD;
        self.r.check_positive(self.n0, hi)?;
        self.q.check_real(self.n0, hi)?;
        for k in self.n0 + 1..=hi {
            self.sigma.eval_log(k)?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| HwError::InvalidProblem(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_minimal_spec() {
        let p = ProblemSpec::from_json(
            r#"{"r":{"family":"power","alpha":0},"sigma":{"family":"power","alpha":-3},"n0":1}"#,
        )
        .unwrap();
        assert_eq!(p.q, SequenceSpec::constant(0.0));
        assert_eq!(p.horizon(), DEFAULT_POWER_HORIZON);
        assert!(p.validate().is_ok());
    }

    #[test]
    fn exponential_default_horizon() {
        let p = ProblemSpec::new(
            SequenceSpec::exponential(-1.0),
            SequenceSpec::constant(0.0),
            SequenceSpec::constant(0.0),
            0,
        );
        assert_eq!(p.horizon(), DEFAULT_EXP_HORIZON);
    }

    #[test]
    fn zero_coefficient_rejected() {
        let p = ProblemSpec::new(
            SequenceSpec::Tabulated {
                start: 0,
                values: vec![1.0; 100]
                    .into_iter()
                    .enumerate()
                    .map(|(i, v)| if i == 50 { 0.0 } else { v })
                    .collect(),
            },
            SequenceSpec::constant(0.0),
            SequenceSpec::constant(0.0),
            0,
        )
        .with_horizon(90);
        assert!(matches!(p.validate(), Err(HwError::NotPositive { n: 50, .. })));
    }
}
