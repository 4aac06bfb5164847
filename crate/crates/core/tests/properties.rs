use num_complex::Complex64;
use proptest::prelude::*;

use hw_core::diagnostics::LimitVerdict;
use hw_core::fss::{validate_fss, FundamentalSystem};
use hw_core::problem::ProblemSpec;
use hw_core::sequence::{forward_difference, SequenceSpec, Table};
use hw_core::series::{summation_by_parts_check, SeriesVerdict};
use hw_core::solvability::{classify_inputs, Status, VerdictInputs};

fn leaf() -> impl Strategy<Value = SequenceSpec> {
    prop_oneof![
        (-3.0..3.0f64).prop_map(SequenceSpec::constant),
        (-3.0..3.0f64).prop_map(SequenceSpec::power),
        (-2.0..0.5f64).prop_map(SequenceSpec::exponential),
        (-2.0..2.0f64).prop_map(SequenceSpec::alternating_power),
    ]
}

fn spec() -> impl Strategy<Value = SequenceSpec> {
    prop_oneof![
        leaf(),
        prop::collection::vec(leaf(), 2..4).prop_map(SequenceSpec::product),
        (-2.0..2.0f64, -2.0..2.0f64, leaf()).prop_map(|(re, im, s)| SequenceSpec::scaled(Complex64::new(re, im), s)),
    ]
}

proptest! {
    #[test]
    fn log_evaluation_matches_plain(s in spec(), n in 1usize..10_000) {
        // plain evaluation refuses values outside the representable range
        let plain = s.eval(n);
        prop_assume!(plain.is_ok());
        let plain = plain.unwrap();
        let mag = plain.norm();
        prop_assume!(mag > 1e-290 && mag < 1e290);
        let logged = s.eval_log(n).unwrap().to_complex();
        prop_assert!((plain - logged).norm() <= 1e-12 * mag, "{plain} vs {logged}");
    }

    #[test]
    fn forward_difference_is_linear(a in prop::collection::vec(-1000i64..1000, 12), b in prop::collection::vec(-1000i64..1000, 12), n in 0usize..11) {
        let ta = Table { start: 0, values: a.iter().map(|&x| Complex64::new(x as f64, 0.0)).collect() };
        let tb = Table { start: 0, values: b.iter().map(|&x| Complex64::new(x as f64, 0.0)).collect() };
        let tab = Table { start: 0, values: ta.values.iter().zip(&tb.values).map(|(x, y)| x + y).collect() };
        let lhs = forward_difference(&tab, n).unwrap();
        let rhs = forward_difference(&ta, n).unwrap() + forward_difference(&tb, n).unwrap();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn nonpositive_coefficient_is_rejected(len in 110usize..140, at in 0usize..100, bad in -5.0..=0.0f64) {
        let mut values = vec![1.0; len];
        values[at] = bad;
        let r = SequenceSpec::Tabulated { start: 0, values };
        let p = ProblemSpec::new(r, SequenceSpec::constant(0.0), SequenceSpec::constant(0.0), 0);
        prop_assert!(p.validate().is_err());
    }

    #[test]
    fn summation_by_parts_holds(x in prop::collection::vec(-1e3..1e3f64, 2..10_000)) {
        let (lhs, rhs) = summation_by_parts_check(&x);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Wronskian normalisation and the pointwise ratio inequalities on
    /// random non-oscillatory power-type systems.
    #[test]
    fn fundamental_system_relations(alpha in 0.0..2.5f64, q_scale in 0.0..0.5f64) {
        let q = SequenceSpec::product(vec![SequenceSpec::constant(q_scale), SequenceSpec::power(alpha - 2.0)]);
        let p = ProblemSpec::new(SequenceSpec::power(alpha), q, SequenceSpec::constant(0.0), 1).with_horizon(1500);
        let fss = FundamentalSystem::build(&p).unwrap();
        for n in fss.first_positive()..=1500 {
            let scale = (fss.log_r(n) + fss.log_u(n) + fss.log_v(n + 1)).exp().max(1.0);
            prop_assert!(fss.wronskian_error(n) <= 1e-10 * scale, "n={} err={:e}", n, fss.wronskian_error(n));
            let (ru, rv) = (fss.log_u(n) - fss.log_v(n), fss.log_u(n + 1) - fss.log_v(n + 1));
            prop_assert!(ru > rv);
            prop_assert!(fss.log_r(n) + fss.log_u(n) + fss.log_v(n + 1) > 0.0);
        }
        let report = validate_fss(&fss, 1500, &p.tolerances.tail_config());
        prop_assert!(report.monotone_uv && report.ratio_inequalities);
    }
}

const SERIES: [SeriesVerdict; 3] = [SeriesVerdict::Converged, SeriesVerdict::Diverged, SeriesVerdict::Inconclusive];
const LIMITS: [LimitVerdict; 3] = [LimitVerdict::Zero, LimitVerdict::NonZero, LimitVerdict::Unknown];

fn all_inputs() -> Vec<VerdictInputs> {
    let mut out = Vec::new();
    for &sigma in &SERIES {
        for &c_limit in &LIMITS {
            for &j in &SERIES {
                for &g in &SERIES {
                    out.push(VerdictInputs { sigma, c_limit, j, g, l: g, criteria: vec![] });
                }
            }
        }
    }
    out
}

#[test]
fn every_evidence_combination_has_one_status() {
    let inputs = all_inputs();
    assert_eq!(inputs.len(), 81);
    for i in &inputs {
        let (status, reason) = classify_inputs(i);
        if status == Status::NotSolvable {
            assert!(reason.is_some(), "{i:?}");
        }
    }
}

#[test]
fn not_solvable_needs_definite_evidence() {
    use SeriesVerdict::*;
    for i in all_inputs() {
        let (status, _) = classify_inputs(&i);
        if status != Status::NotSolvable {
            continue;
        }
        let sigma_fails = i.sigma == Diverged;
        let c_fails = i.sigma == Converged && i.c_limit == LimitVerdict::NonZero;
        let narrow_fails = i.j == Diverged || (i.j == Converged && i.g == Diverged);
        assert!(
            sigma_fails || c_fails || (narrow_fails && i.g == Converged),
            "NotSolvable from {i:?}"
        );
    }
}

/// Making one undecided input definite either keeps the status or moves
/// it out of Indeterminate; it never swaps NotSolvable and NarrowSolvable.
#[test]
fn refining_evidence_is_monotone() {
    use SeriesVerdict::*;
    for i in all_inputs() {
        let (before, _) = classify_inputs(&i);
        let mut refinements = Vec::new();
        for v in [Converged, Diverged] {
            if i.sigma == Inconclusive {
                refinements.push(VerdictInputs { sigma: v, ..i.clone() });
            }
            if i.j == Inconclusive {
                refinements.push(VerdictInputs { j: v, ..i.clone() });
            }
            if i.g == Inconclusive {
                refinements.push(VerdictInputs { g: v, l: v, ..i.clone() });
            }
        }
        for l in [LimitVerdict::Zero, LimitVerdict::NonZero] {
            if i.c_limit == LimitVerdict::Unknown {
                refinements.push(VerdictInputs { c_limit: l, ..i.clone() });
            }
        }
        // a convergent J forces C_n -> 0 and, by Abel's test with the monotone
        // u/v, convergence of Σσu²; other combinations cannot occur
        let consistent =
            |r: &VerdictInputs| r.j != Converged || (r.c_limit != LimitVerdict::NonZero && r.sigma != Diverged);
        for r in refinements.into_iter().filter(consistent) {
            let (after, _) = classify_inputs(&r);
            if before != Status::Indeterminate {
                assert_eq!(before, after, "{i:?} -> {r:?}");
            }
            let swap = matches!(
                (before, after),
                (Status::NotSolvable, Status::NarrowSolvable | Status::SolvableAndEquivalent)
                    | (Status::NarrowSolvable | Status::SolvableAndEquivalent, Status::NotSolvable)
            );
            assert!(!swap, "{i:?} -> {r:?}");
        }
    }
}
