//! One line per acceptance criterion; exits non-zero if any fails.

mod common;

use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{grid_instances, instance};
use hw_core::constructor::{construct, ConstructOptions, SolverConfig};
use hw_core::diagnostics::DiagnosticsBundle;
use hw_core::fss::FundamentalSystem;
use hw_core::problem::ProblemSpec;
use hw_core::sequence::SequenceSpec;
use hw_core::series::{summation_by_parts_check, SeriesVerdict};
use hw_core::solvability::{classify, Status};
use hw_core::sweep::{alternating_remainders, remainder_band, reproduce, Family};

type Outcome = (bool, String);

fn run(id: usize, name: &str, check: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let (passed, detail) = check();
    println!(
        "criterion {id:>2} {} {name}: {detail} ({:.2} s)",
        if passed { "PASS" } else { "FAIL" },
        t.elapsed().as_secs_f64()
    );
    passed
}

fn wronskian_exactness() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for fam in Family::ALL {
        let mut worst: f64 = 0.0;
        let mut builds = 0;
        for inst in grid_instances().iter().filter(|i| i.family == fam) {
            let fss = &inst.fss;
            for n in fss.first_positive()..=inst.problem.horizon() {
                worst = worst.max(fss.wronskian_error(n));
            }
            builds += 1;
        }
        // time one rebuild of the family's default system
        let p = fam.problem(&fam.canonical_grid()[0]).unwrap();
        let t_build = Instant::now();
        FundamentalSystem::build(&p).unwrap();
        let secs = t_build.elapsed().as_secs_f64();
        ok &= worst <= 1e-10 && secs < 1.0;
        parts.push(format!("{} max {worst:.1e} over {builds} cells, build {secs:.3} s", fam.name()));
    }
    (ok, parts.join("; "))
}

fn suffix_sup_bound() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    let mut count = 0;
    for inst in grid_instances().iter().filter(|i| i.diag.j.verdict == SeriesVerdict::Converged) {
        let d = &inst.diag;
        for n in d.start..=d.horizon + 2 {
            worst = worst.max(d.c_at(n).norm() - 2.0 * d.a_at(n));
        }
        count += 1;
    }
    (worst <= 1e-9, format!("max |C_n| - 2A_n = {worst:.2e} over {count} instances with convergent J"))
}

fn identity_suite() -> Outcome {
    // H = J - C
    let mut h_worst: f64 = 0.0;
    for inst in grid_instances().iter().filter(|i| i.diag.j.verdict == SeriesVerdict::Converged) {
        let d = &inst.diag;
        for n in d.start..=d.horizon + 1 {
            let (j, c) = (d.j_at(n), d.c_at(n));
            h_worst = h_worst.max((d.h_at(n) - (j - c)).norm() / (1.0 + j.norm()));
        }
    }
    // summation by parts on seeded random sequences
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut sbp_worst: f64 = 0.0;
    for _ in 0..200 {
        let len = rng.gen_range(2..=10_000);
        let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-1e3..1e3)).collect();
        let (lhs, rhs) = summation_by_parts_check(&x);
        sbp_worst = sbp_worst.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
    }
    // Σ_{k=n}^{N} 1/(r v v_{+1}) + u_{N+1}/v_{N+1} = u_n/v_n, in log form
    let mut tail_worst: f64 = 0.0;
    for inst in grid_instances() {
        let fss = &inst.fss;
        let top = inst.problem.horizon();
        let log_ratio = |n: usize| fss.log_u(n) - fss.log_v(n);
        let mut log_tail = log_ratio(top + 1);
        for n in (fss.first_positive()..=top).rev() {
            log_tail = hw_core::fss::log_add(log_tail, -fss.log_r(n) - fss.log_v(n) - fss.log_v(n + 1));
            tail_worst = tail_worst.max((log_tail - log_ratio(n)).exp_m1().abs());
        }
    }
    (
        h_worst <= 1e-8 && sbp_worst <= 1e-9 && tail_worst <= 1e-9,
        format!("H = J - C {h_worst:.1e}; summation by parts {sbp_worst:.1e}; reciprocal tail {tail_worst:.1e}"),
    )
}

fn lemma_equivalences() -> Outcome {
    use SeriesVerdict::*;
    let definite = |v: SeriesVerdict| v != Inconclusive;
    let mut violations = Vec::new();
    let mut certified = 0;
    let mut families = std::collections::BTreeSet::new();
    for inst in grid_instances() {
        let d = &inst.diag;
        let tag = format!("{} {:?}", inst.family.name(), inst.params);
        if d.i.verdict == Converged && d.g.verdict == Diverged {
            violations.push(format!("{tag}: I converges, G diverges"));
        }
        if d.j.verdict != Converged {
            continue;
        }
        if definite(d.l.verdict) && definite(d.g.verdict) {
            certified += 1;
            families.insert(inst.family.name());
            if d.l.verdict != d.g.verdict {
                violations.push(format!("{tag}: L {:?}, G {:?}", d.l.verdict, d.g.verdict));
            }
        }
        if definite(d.p.verdict) && definite(d.g.verdict) && definite(d.b.verdict) {
            let gb = d.g.verdict == Converged && d.b.verdict == Converged;
            if (d.p.verdict == Converged) != gb {
                violations.push(format!("{tag}: P {:?}, G {:?}, B {:?}", d.p.verdict, d.g.verdict, d.b.verdict));
            }
        }
    }
    let ok = violations.is_empty() && certified >= 20 && families.len() == 3;
    let mut detail = format!("{certified} certified instances over {} families, {} violations", families.len(), violations.len());
    if !violations.is_empty() {
        detail.push_str(&format!(": {}", violations.join("; ")));
    }
    (ok, detail)
}

fn exponential_family() -> Outcome {
    let expected = [
        (-2.0, Status::SolvableAndEquivalent),
        (-1.5, Status::SolvableAndEquivalent),
        (-1.0, Status::NotSolvable),
        (-0.75, Status::NotSolvable),
        (0.0, Status::NotSolvable),
        (1.0, Status::NotSolvable),
        (-0.4, Status::Indeterminate),
        (-0.1, Status::Indeterminate),
    ];
    let mut wrong = Vec::new();
    let mut max_horizon = 0;
    for (gamma, want) in expected {
        let inst = instance(Family::Exponential, &[gamma], None);
        max_horizon = max_horizon.max(inst.problem.horizon());
        let got = classify(&inst.diag).status;
        if got != want {
            wrong.push(format!("γ={gamma}: {got:?}, expected {want:?}"));
        }
    }
    (
        wrong.is_empty() && max_horizon <= 700,
        format!("8 cells, horizon {max_horizon}, {} mismatches {}", wrong.len(), wrong.join("; ")),
    )
}

fn power_family() -> Outcome {
    let r = reproduce(Family::Power);
    let regimes: std::collections::BTreeSet<&str> = r
        .cells
        .iter()
        .filter(|c| c.scored)
        .map(|c| match c.params[0] {
            a if a < 1.0 => "α<1",
            a if a == 1.0 => "α=1",
            _ => "α>1",
        })
        .collect();
    (
        r.passed && regimes.len() == 3 && r.cells.len() == 60,
        format!("{} cells, {} scored, {} mismatches, regimes {:?}", r.cells.len(), r.scored, r.mismatches, regimes),
    )
}

fn alternating_family() -> Outcome {
    let r = reproduce(Family::Alternating);
    let gap: Vec<_> = r.extra.iter().filter(|e| e.name.starts_with("B and P")).collect();
    let gap_ok = gap.iter().all(|e| e.passed);
    let gap_solvable = r
        .cells
        .iter()
        .filter(|c| c.scored && Family::Alternating.in_absolute_gap(&c.params))
        .all(|c| c.status.is_some_and(|s| s.is_solvable()));
    (
        r.mismatches == 0 && gap_ok && gap_solvable && !gap.is_empty() && r.cells.len() == 40,
        format!(
            "{} cells, {} scored, {} mismatches; {} gap cells solvable with B and P divergent: {}",
            r.cells.len(),
            r.scored,
            r.mismatches,
            gap.len(),
            gap_ok && gap_solvable
        ),
    )
}

/// `Σ_{k>=n} (-1)^k/(k+1)^β` by pairing terms and closing with half the
/// first omitted pair.
fn paired_remainder(beta: f64, n: usize) -> f64 {
    let a = |k: usize| ((k + 1) as f64).powf(-beta);
    let pairs = 2_000_000;
    let mut s = 0.0;
    for j in (0..pairs).rev() {
        let k = n + 2 * j;
        s += a(k) - a(k + 1);
    }
    let k = n + 2 * pairs;
    s += 0.5 * a(k);
    if n % 2 == 0 {
        s
    } else {
        -s
    }
}

fn remainder_bands() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for beta in [0.5, 1.0, 1.5] {
        let b = remainder_band(beta);
        let table = alternating_remainders(beta, 50, 5000);
        let spot = [50usize, 51, 777, 5000]
            .iter()
            .map(|&n| (table[n - 50] - paired_remainder(beta, n)).abs() / table[n - 50].abs())
            .fold(0.0, f64::max);
        ok &= b.passed && spot <= 1e-6;
        parts.push(format!("β={beta}: [{:.4}, {:.4}] ratio {:.3}, brute force {spot:.1e}", b.min, b.max, b.ratio));
    }
    (ok, parts.join("; "))
}

fn constructor_end_to_end() -> Outcome {
    let tol = SolverConfig::default().tol;
    let mut ok = true;
    let mut parts = Vec::new();
    for (fam, params, horizon) in [(Family::Power, vec![0.0, 3.0], 5000), (Family::Exponential, vec![-2.0], 1000)] {
        let inst = instance(fam, &params, Some(horizon));
        let c = match construct(&inst.problem, &inst.fss, &inst.diag, &ConstructOptions::default()) {
            Ok(c) => c,
            Err(e) => {
                ok = false;
                parts.push(format!("{} {params:?}: {e}", fam.name()));
                continue;
            }
        };
        let rates = &c.solution.contraction_rates;
        let rate = rates.iter().skip(1).cloned().fold(0.0, f64::max);
        let r = &c.report;
        let oracle = r.oracle_deviation.unwrap_or(f64::INFINITY);
        let restart = r.restart_deviation.unwrap_or(f64::INFINITY);
        let this = rate <= 0.6
            && r.perturbed_residual <= 1e-6
            && r.ratio_u_final_quarter <= 1e-3
            && r.narrow_last_window_variation <= 1e-6
            && oracle <= 1e-5
            && restart <= 10.0 * tol;
        ok &= this;
        parts.push(format!(
            "{} {params:?} N={horizon}: rate {rate:.1e}, residual {:.1e}, ratio {:.1e}, plateau {:.1e}, oracle {oracle:.1e}, restart {restart:.1e}",
            fam.name(),
            r.perturbed_residual,
            r.ratio_u_final_quarter,
            r.narrow_last_window_variation
        ));
    }
    (ok, parts.join("; "))
}

fn trivial_regression() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for r in [SequenceSpec::power(0.5), SequenceSpec::power(1.5), SequenceSpec::exponential(-1.0)] {
        let p = ProblemSpec::new(r.clone(), SequenceSpec::constant(0.0), SequenceSpec::constant(0.0), 1).with_horizon(700);
        let fss = FundamentalSystem::build(&p).unwrap();
        let d = DiagnosticsBundle::compute(&p, &fss).unwrap();
        let zero = Complex64::new(0.0, 0.0);
        let diag_zero = d.j_table.iter().all(|z| *z == zero)
            && d.c_table.iter().all(|z| *z == zero)
            && d.h_table.iter().all(|z| *z == zero)
            && d.a_table.iter().all(|&a| a == 0.0);
        let status = classify(&d).status;
        let c = construct(&p, &fss, &d, &ConstructOptions::default()).unwrap();
        let beta_one = c.solution.beta.iter().all(|b| *b == Complex64::new(1.0, 0.0));
        let n0 = c.window.n0;
        let same_u = (0..c.perturbed.u_tilde.len()).all(|j| c.perturbed.u_tilde[j].log_mag == fss.log_u(n0 + j));
        let v_dev = (1..c.perturbed.v_tilde.len())
            .map(|j| c.perturbed.v_tilde[j].log_mag - fss.log_v(n0 + j))
            .map(|d| d.exp_m1().abs())
            .fold(0.0, f64::max);
        let residual = c.report.perturbed_residual.max(c.report.wronskian_residual);
        let this = diag_zero && status == Status::SolvableAndEquivalent && beta_one && same_u && v_dev <= 1e-12 && residual <= 1e-12;
        ok &= this;
        parts.push(format!(
            "r={r:?}: tables zero {diag_zero}, {status:?}, β≡1 {beta_one}, ũ=u {same_u}, |ṽ/v-1| {v_dev:.1e}, residual {residual:.1e}"
        ));
    }
    (ok, parts.join("; "))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("Wronskian exactness", wronskian_exactness),
        ("|C_n| <= 2 A_n", suffix_sup_bound),
        ("identity suite", identity_suite),
        ("lemma cross-verdicts", lemma_equivalences),
        ("exponential family verdicts", exponential_family),
        ("power family verdicts", power_family),
        ("alternating family verdicts", alternating_family),
        ("alternating remainder band", remainder_bands),
        ("constructor end to end", constructor_end_to_end),
        ("zero perturbation", trivial_regression),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        if !run(i + 1, name, check) {
            failed += 1;
        }
    }
    println!("acceptance: {} of 10 criteria pass", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
