//! Solvability verdicts derived from a diagnostics bundle.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{DiagnosticsBundle, LimitVerdict};
use crate::series::SeriesVerdict;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tri {
    True,
    False,
    Unknown,
}

impl Tri {
    pub fn from_verdict(v: SeriesVerdict) -> Tri {
        match v {
            SeriesVerdict::Converged => Tri::True,
            SeriesVerdict::Diverged => Tri::False,
            SeriesVerdict::Inconclusive => Tri::Unknown,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Criterion {
    /// One of `Σ|J C|w`, `Σ A|C|w`, `Σ |J|²w` converges.
    I,
    /// `P` converges.
    II,
    /// `Σ |σ| A u v` converges.
    III,
    /// `J` converges absolutely.
    IV,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    NotSolvable,
    NarrowSolvable,
    SolvableAndEquivalent,
    SufficientOnly,
    Indeterminate,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::NotSolvable => "NotSolvable",
            Status::NarrowSolvable => "NarrowSolvable",
            Status::SolvableAndEquivalent => "SolvableAndEquivalent",
            Status::SufficientOnly => "SufficientOnly",
            Status::Indeterminate => "Indeterminate",
        }
    }

    /// Whether the status asserts that the problem is solvable.
    pub fn is_solvable(self) -> bool {
        matches!(
            self,
            Status::NarrowSolvable | Status::SolvableAndEquivalent | Status::SufficientOnly
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reason {
    SigmaDiverges,
    CNotVanishing,
    /// Narrow problem fails while `G` converges, so the full problem fails too.
    NarrowFailsWithEquivalence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Necessary {
    pub holds: Tri,
    pub reason: Option<Reason>,
}

/// The verdict-relevant part of a bundle, separated so that the decision
/// table can be exercised exhaustively.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictInputs {
    pub sigma: SeriesVerdict,
    pub c_limit: LimitVerdict,
    pub j: SeriesVerdict,
    pub g: SeriesVerdict,
    pub l: SeriesVerdict,
    pub criteria: Vec<Criterion>,
}

impl VerdictInputs {
    pub fn from_bundle(b: &DiagnosticsBundle) -> Self {
        VerdictInputs {
            sigma: b.sigma_series.verdict,
            c_limit: b.c_limit.verdict,
            j: b.j.verdict,
            g: b.g.verdict,
            l: b.l.verdict,
            criteria: sufficient_conditions(b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: Status,
    pub reason: Option<Reason>,
    pub criteria: Vec<Criterion>,
    pub evidence: BTreeMap<String, String>,
}

pub fn necessary_from(inputs: &VerdictInputs) -> Necessary {
    use SeriesVerdict::*;
    match (inputs.sigma, inputs.c_limit) {
        (Diverged, _) => Necessary {
            holds: Tri::False,
            reason: Some(Reason::SigmaDiverges),
        },
        (Converged, LimitVerdict::NonZero) => Necessary {
            holds: Tri::False,
            reason: Some(Reason::CNotVanishing),
        },
        (Converged, LimitVerdict::Zero) => Necessary {
            holds: Tri::True,
            reason: None,
        },
        _ => Necessary {
            holds: Tri::Unknown,
            reason: None,
        },
    }
}

/// `G` decides when definite; `L` is consulted only when `G` is not.
fn effective_gl(g: SeriesVerdict, l: SeriesVerdict) -> SeriesVerdict {
    if g != SeriesVerdict::Inconclusive {
        g
    } else {
        l
    }
}

pub fn narrow_from(inputs: &VerdictInputs) -> Tri {
    match inputs.j {
        SeriesVerdict::Diverged => Tri::False,
        SeriesVerdict::Inconclusive => Tri::Unknown,
        SeriesVerdict::Converged => Tri::from_verdict(effective_gl(inputs.g, inputs.l)),
    }
}

pub fn equivalence_from(inputs: &VerdictInputs) -> Tri {
    Tri::from_verdict(inputs.g)
}

pub fn classify_inputs(inputs: &VerdictInputs) -> (Status, Option<Reason>) {
    let nec = necessary_from(inputs);
    if nec.holds == Tri::False {
        return (Status::NotSolvable, nec.reason);
    }
    let narrow = narrow_from(inputs);
    let equiv = equivalence_from(inputs);
    match (narrow, equiv) {
        (Tri::True, Tri::True) => (Status::SolvableAndEquivalent, None),
        (Tri::True, _) => (Status::NarrowSolvable, None),
        (Tri::False, Tri::True) => (Status::NotSolvable, Some(Reason::NarrowFailsWithEquivalence)),
        _ if inputs.j == SeriesVerdict::Converged && !inputs.criteria.is_empty() => (Status::SufficientOnly, None),
        _ => (Status::Indeterminate, None),
    }
}

pub fn necessary_conditions(b: &DiagnosticsBundle) -> Necessary {
    necessary_from(&VerdictInputs::from_bundle(b))
}

pub fn narrow_criterion(b: &DiagnosticsBundle) -> Tri {
    narrow_from(&VerdictInputs::from_bundle(b))
}

pub fn equivalence_criterion(b: &DiagnosticsBundle) -> Tri {
    equivalence_from(&VerdictInputs::from_bundle(b))
}

/// Criteria of the sufficient conditions whose governing series converged.
/// Each presupposes a convergent `J`.
pub fn sufficient_conditions(b: &DiagnosticsBundle) -> Vec<Criterion> {
    let mut out = Vec::new();
    if !b.j.verdict.is_converged() {
        return out;
    }
    if b.jc_abs.verdict.is_converged() || b.ac_abs.verdict.is_converged() || b.i.verdict.is_converged() {
        out.push(Criterion::I);
    }
    if b.p.verdict.is_converged() {
        out.push(Criterion::II);
    }
    if b.sigma_a.verdict.is_converged() {
        out.push(Criterion::III);
    }
    if b.j_abs.verdict.is_converged() {
        out.push(Criterion::IV);
    }
    out
}

pub fn classify(b: &DiagnosticsBundle) -> Verdict {
    let inputs = VerdictInputs::from_bundle(b);
    let (status, reason) = classify_inputs(&inputs);
    let mut evidence = BTreeMap::new();
    evidence.insert("n0".into(), b.n0.to_string());
    evidence.insert("horizon".into(), b.horizon.to_string());
    for (name, rep) in [("sigma", &b.sigma_series), ("J", &b.j), ("G", &b.g), ("L", &b.l)] {
        evidence.insert(name.into(), format!("{}: {}", rep.verdict.as_str(), rep.evidence));
    }
    evidence.insert("C_limit".into(), format!("{:?}: {}", b.c_limit.verdict, b.c_limit.evidence));
    if !b.warnings.is_empty() {
        evidence.insert("warnings".into(), b.warnings.join("; "));
    }
    Verdict {
        status,
        reason,
        criteria: inputs.criteria,
        evidence,
    }
}
