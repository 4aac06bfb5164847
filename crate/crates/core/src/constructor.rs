//! Construction of the perturbed fundamental system `ũ = β u`, with `β`
//! the fixed point of `β = P + Tβ` on a window where the contraction
//! estimates hold.

use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::DiagnosticsBundle;
use crate::error::{HwError, Result};
use crate::fss::{backward_recurrence, log_add, log_table, FundamentalSystem};
use crate::problem::ProblemSpec;
use crate::sequence::LogScaledValue;
use crate::series::CompensatedSum;
use crate::solvability::{narrow_criterion, Tri};
use crate::tail::{estimate_tail, TailConfig};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Seed of the random probe of `‖T‖`; recorded in every report.
pub const NORM_PROBE_SEED: u64 = 0x5eed_0001;
pub const NORM_PROBE_COUNT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-12,
            max_iter: 500,
        }
    }
}

fn sup_norm(x: &[Complex64]) -> f64 {
    x.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructionWindow {
    pub n0: usize,
    pub horizon: usize,
    /// `sup_{n>=n0} |C_n|` over the table.
    pub sup_c: f64,
    pub sup_eta: f64,
    pub a_n0: f64,
    /// `Σ_{k>=n0} |C_{k+1}|² / (r_k u_k v_{k+1})`.
    pub g_tail: f64,
    /// Twice the largest `|P_n / P_k|`, `n0 <= n <= k`, measured on the window.
    pub tau: f64,
}

/// Everything the operators need, tabulated once from `start` (the first
/// diagnostics index) to the horizon.
#[derive(Debug, Clone)]
pub struct Kernel {
    pub start: usize,
    pub horizon: usize,
    /// `ρ_n = v_n u_{n+1} / (u_n v_{n+1})`.
    rho: Vec<f64>,
    /// `(v_n/u_n) / (r_{n+1} v_{n+1} v_{n+2})`.
    kappa: Vec<f64>,
    /// `1 / (r_n v_n u_{n+1})`.
    phi: Vec<f64>,
    /// `1 / (r_n u_n v_{n+1})`.
    w: Vec<f64>,
    /// `C_n` on `[start, horizon + 2]`.
    c: Vec<Complex64>,
    /// `η_n = C_{n+1} w_n`.
    eta: Vec<Complex64>,
    /// `P_n = Π_{k>=n} (1 + η_k)` on `[start, horizon + 1]`.
    p: Vec<Complex64>,
    /// `G_n` on `[start, horizon + 1]`.
    g_tail: Vec<f64>,
    a: Vec<f64>,
    /// `(v_N/u_N) Σ_{k>=N+1} C_{k+1} / (r_k v_k v_{k+1})`, closing `A` at the horizon.
    a_closure: Complex64,
}

impl Kernel {
    pub fn new(fss: &FundamentalSystem, diag: &DiagnosticsBundle) -> Result<Self> {
        let start = diag.start;
        let horizon = diag.horizon;
        if !diag.c_defined {
            return Err(HwError::Precondition("C is undefined".into()));
        }
        let mut k = Kernel {
            start,
            horizon,
            rho: Vec::new(),
            kappa: Vec::new(),
            phi: Vec::new(),
            w: Vec::new(),
            c: diag.c_table.clone(),
            eta: Vec::new(),
            p: Vec::new(),
            g_tail: Vec::new(),
            a: diag.a_table.clone(),
            a_closure: ZERO,
        };
        for n in start..=horizon {
            let (lr, lu, lv) = (fss.log_r(n), fss.log_u(n), fss.log_v(n));
            k.rho.push((lv + fss.log_u(n + 1) - lu - fss.log_v(n + 1)).exp());
            k.kappa.push((lv - lu - fss.log_r(n + 1) - fss.log_v(n + 1) - fss.log_v(n + 2)).exp());
            k.phi.push((-lr - lv - fss.log_u(n + 1)).exp());
            k.w.push((-lr - lu - fss.log_v(n + 1)).exp());
        }
        check_reciprocal_tail(fss, start, horizon + 1)?;
        k.a_closure = a_closure(fss, &k.c, start, horizon);
        k.eta = (0..k.w.len()).map(|i| k.c[i + 1] * k.w[i]).collect();
        k.p = product_tail(&k.eta, diag.h_at(horizon + 1));
        let g_total = if diag.g.verdict.is_converged() {
            diag.g.value().re
        } else {
            f64::INFINITY
        };
        let mut acc = CompensatedSum::default();
        k.g_tail.push(g_total);
        for i in 0..k.w.len() {
            acc.add(Complex64::new(k.c[i + 1].norm_sqr() * k.w[i], 0.0));
            k.g_tail.push((g_total - acc.value().re).max(0.0));
        }
        Ok(k)
    }

    fn i(&self, n: usize) -> usize {
        n - self.start
    }

    pub fn eta(&self, n: usize) -> Complex64 {
        self.eta[self.i(n)]
    }

    pub fn c(&self, n: usize) -> Complex64 {
        self.c[self.i(n)]
    }

    pub fn p(&self, n: usize) -> Complex64 {
        self.p[self.i(n)]
    }

    pub fn g_tail(&self, n: usize) -> f64 {
        self.g_tail[self.i(n)]
    }

    /// Operators restricted to `[n0, horizon]`.
    pub fn window(&self, n0: usize) -> Operators<'_> {
        Operators { k: self, n0 }
    }
}

/// `Σ_{k=K}^{top} 1/(r_k v_k v_{k+1}) + u_{top+1}/v_{top+1} = u_K/v_K` for
/// every `K`; the closure of `A` rests on it.
fn check_reciprocal_tail(fss: &FundamentalSystem, start: usize, top: usize) -> Result<()> {
    let log_ratio = |n: usize| fss.log_u(n) - fss.log_v(n);
    let mut log_tail = log_ratio(top + 1);
    for n in (start..=top).rev() {
        log_tail = log_add(log_tail, -fss.log_r(n) - fss.log_v(n) - fss.log_v(n + 1));
        let err = (log_tail - log_ratio(n)).exp_m1().abs();
        if err > 1e-9 {
            return Err(HwError::Precondition(format!(
                "reciprocal tail identity off by {err:.2e} at n = {n}"
            )));
        }
    }
    Ok(())
}

/// Tail of `A` past the table. The terms `C_{k+1}/(r_k v_k v_{k+1})` are
/// extrapolated by the tail engine; if it cannot certify them, `C` is
/// frozen at `C_{N+2}` and the reciprocal tail is summed exactly.
fn a_closure(fss: &FundamentalSystem, c: &[Complex64], start: usize, horizon: usize) -> Complex64 {
    let term = |k: usize| {
        LogScaledValue::from_complex(c[k + 1 - start]).scale_log(-fss.log_r(k) - fss.log_v(k) - fss.log_v(k + 1))
    };
    let terms: Vec<LogScaledValue> = (start..=horizon + 1).map(term).collect();
    let vu = fss.log_v(horizon) - fss.log_u(horizon);
    let est = estimate_tail(start, &terms, &TailConfig::default());
    if est.verdict.is_converged() {
        log::debug!("A closure: {}", est.evidence);
        return terms[terms.len() - 1].add(est.remainder).scale_log(vu).to_complex();
    }
    log::debug!("A closure frozen at C_(N+2): {}", est.evidence);
    LogScaledValue::from_complex(c[horizon + 2 - start])
        .scale_log(fss.log_u(horizon + 1) - fss.log_v(horizon + 1) + vu)
        .to_complex()
}

/// `P_n = Π_{k>=n}(1 + η_k)` on `[start, start + len]`; the factor past the
/// table is `exp(H_{N+1})`, accurate to `O(Σ|η|²)` which is part of `G`.
pub fn product_tail(eta: &[Complex64], h_after: Complex64) -> Vec<Complex64> {
    let mut p = vec![ZERO; eta.len() + 1];
    p[eta.len()] = h_after.exp();
    for i in (0..eta.len()).rev() {
        p[i] = (ONE + eta[i]) * p[i + 1];
    }
    p
}

/// The maps of the fixed-point problem on `[n0, N]`. Sequences `θ` are
/// given on `[n0, N + 1]`.
pub struct Operators<'a> {
    k: &'a Kernel,
    pub n0: usize,
}

impl Operators<'_> {
    pub fn len(&self) -> usize {
        self.k.horizon - self.n0 + 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn at(&self, j: usize) -> usize {
        self.n0 - self.k.start + j
    }

    /// `(Aθ)_n = (v_n/u_n) Σ_{k>=n+1} C_{k+1} θ_k / (r_k v_k v_{k+1})`.
    /// Past `N` the sum holds `θ` at `θ_{N+1}`.
    pub fn op_a(&self, theta: &[Complex64]) -> Vec<Complex64> {
        let l = self.len();
        let mut out = vec![ZERO; l];
        out[l - 1] = self.k.a_closure * theta[l];
        for j in (0..l - 1).rev() {
            let i = self.at(j);
            out[j] = self.k.kappa[i] * self.k.c[i + 2] * theta[j + 1] + self.k.rho[i] * out[j + 1];
        }
        out
    }

    /// `g_n(θ) = -ρ_n C_{n+1} θ_{n+1}`.
    pub fn op_g(&self, theta: &[Complex64]) -> Vec<Complex64> {
        (0..self.len())
            .map(|j| {
                let i = self.at(j);
                -self.k.rho[i] * self.k.c[i + 1] * theta[j + 1]
            })
            .collect()
    }

    /// `S = (1 + A)^{-1} g(θ)` by Neumann iteration, stopped once the
    /// update is below `tol ‖g‖`. Returns `S`, `g` and the iteration count.
    pub fn neumann_s(&self, theta: &[Complex64], tol: f64) -> (Vec<Complex64>, Vec<Complex64>, usize) {
        let g = self.op_g(theta);
        let gn = sup_norm(&g);
        if gn == 0.0 {
            return (vec![ZERO; self.len()], g, 0);
        }
        let mut s = g.clone();
        let mut iters = 0;
        for _ in 0..200 {
            iters += 1;
            let mut pad = s.clone();
            pad.push(*s.last().unwrap());
            let a = self.op_a(&pad);
            let next: Vec<Complex64> = g.iter().zip(&a).map(|(x, y)| x - y).collect();
            let d = next.iter().zip(&s).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
            s = next;
            if d <= tol * gn {
                break;
            }
        }
        (s, g, iters)
    }

    /// `f_n(θ) = φ_n Σ_{k>=1} (-A)^k g(θ) = φ_n (S - g)_n`.
    pub fn neumann_f(&self, theta: &[Complex64], tol: f64) -> (Vec<Complex64>, usize) {
        let (s, g, iters) = self.neumann_s(theta, tol);
        let f = (0..self.len())
            .map(|j| self.k.phi[self.at(j)] * (s[j] - g[j]))
            .collect();
        (f, iters)
    }

    /// `(Tθ)_n = -Σ_{k>=n} (P_n/P_k) f_k(θ)`, zero at `N + 1`.
    pub fn op_t(&self, theta: &[Complex64], tol: f64) -> Vec<Complex64> {
        let (f, _) = self.neumann_f(theta, tol);
        let l = self.len();
        let mut out = vec![ZERO; l + 1];
        for j in (0..l).rev() {
            out[j] = -f[j] + (ONE + self.k.eta[self.at(j)]) * out[j + 1];
        }
        out
    }

    pub fn p_table(&self) -> Vec<Complex64> {
        (0..=self.len()).map(|j| self.k.p[self.at(j)]).collect()
    }

    /// Largest `‖Tθ‖/‖θ‖` over random unit-modulus `θ`.
    pub fn norm_probe(&self, seed: u64, count: usize, tol: f64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..count {
            let theta: Vec<Complex64> = (0..=self.len())
                .map(|_| Complex64::from_polar(1.0, rng.gen_range(0.0..std::f64::consts::TAU)))
                .collect();
            worst = worst.max(sup_norm(&self.op_t(&theta, tol)));
        }
        worst
    }
}

/// Smallest `n0` with `sup_{m>=n0}|C_m| <= 1/2`, `sup|η| <= 1/2`,
/// `A_{n0} <= 1/4` and `τ G_{n0} <= 1/2`, leaving at least `min_len`
/// indices before the horizon.
pub fn choose_n0(kernel: &Kernel, min_len: usize) -> Result<ConstructionWindow> {
    let n = kernel.w.len();
    let mut sup_c = vec![0.0; n];
    let mut sup_eta = vec![0.0; n];
    let (mut sc, mut se) = (kernel.c[n].norm().max(kernel.c[n + 1].norm()), 0.0f64);
    for i in (0..n).rev() {
        sc = sc.max(kernel.c[i].norm());
        se = se.max(kernel.eta[i].norm());
        sup_c[i] = sc;
        sup_eta[i] = se;
    }
    // τ(n0) = 2 max_{n0<=n<=k<=N+1} exp(x_n - x_k), x = ln|P|
    let x: Vec<f64> = kernel.p.iter().map(|z| z.norm().ln()).collect();
    let mut tau = vec![0.0; n];
    let mut suffix_min = x[n];
    let mut best = 0.0f64;
    for i in (0..n).rev() {
        suffix_min = suffix_min.min(x[i]);
        best = best.max(x[i] - suffix_min);
        tau[i] = 2.0 * best.exp();
    }
    if kernel.p.iter().any(|z| z.norm() < 1e-6) {
        let m = kernel.p.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
        return Err(HwError::DegenerateProduct(m));
    }
    let limit = n.saturating_sub(min_len);
    let ok = |i: usize| {
        sup_c[i] <= 0.5 && sup_eta[i] <= 0.5 && kernel.a[i] <= 0.25 && tau[i] * kernel.g_tail[i] <= 0.5
    };
    let first = (0..limit).find(|&i| ok(i)).ok_or_else(|| {
        HwError::HorizonTooSmall(format!(
            "contraction thresholds unmet before {}: sup|C| {:.3}, A {:.3}, tau*G {:.3} at the last candidate",
            kernel.start + limit,
            sup_c[limit.saturating_sub(1)],
            kernel.a[limit.saturating_sub(1)],
            tau[limit.saturating_sub(1)] * kernel.g_tail[limit.saturating_sub(1)]
        ))
    })?;
    Ok(ConstructionWindow {
        n0: kernel.start + first,
        horizon: kernel.horizon,
        sup_c: sup_c[first],
        sup_eta: sup_eta[first],
        a_n0: kernel.a[first],
        g_tail: kernel.g_tail[first],
        tau: tau[first],
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BetaSolution {
    pub n0: usize,
    /// `β` on `[n0, N + 1]`.
    pub beta: Vec<Complex64>,
    pub iterations: usize,
    pub contraction_rates: Vec<f64>,
    /// `μ_n = r_n v_n u_{n+1} Δβ_n` on `[n0, N]`.
    pub mu: Vec<Complex64>,
    /// `‖β - P - Tβ‖` at termination.
    pub fixed_point_residual: f64,
    /// Largest scaled residual of `Δ(r_{n-1}u_{n-1}u_nΔβ_{n-1}) = σ_n u_n² β_n`.
    pub residual_beta_eq: f64,
}

/// Picard iteration for `β = P + Tβ` starting from `initial` (or `P`).
pub fn solve_beta(ops: &Operators<'_>, initial: Option<&[Complex64]>, cfg: &SolverConfig) -> Result<BetaSolution> {
    let p = ops.p_table();
    let inner_tol = cfg.tol * 1e-2;
    let mut beta = initial.map(|b| b.to_vec()).unwrap_or_else(|| p.clone());
    let mut rates = Vec::new();
    let mut prev_diff = f64::NAN;
    let mut slow = 0;
    let mut iterations = 0;
    loop {
        iterations += 1;
        let t = ops.op_t(&beta, inner_tol);
        let next: Vec<Complex64> = p.iter().zip(&t).map(|(a, b)| a + b).collect();
        let diff = next.iter().zip(&beta).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        beta = next;
        if prev_diff.is_finite() && prev_diff > 1e3 * f64::EPSILON {
            let rate = diff / prev_diff;
            rates.push(rate);
            slow = if rate > 0.9 { slow + 1 } else { 0 };
            if slow >= 5 {
                return Err(HwError::NoContraction(rate));
            }
        }
        prev_diff = diff;
        if diff <= cfg.tol {
            break;
        }
        if iterations >= cfg.max_iter {
            return Err(HwError::MaxIterExceeded(iterations));
        }
    }
    let t = ops.op_t(&beta, inner_tol);
    let fixed_point_residual = p
        .iter()
        .zip(&t)
        .zip(&beta)
        .map(|((a, b), x)| (a + b - x).norm())
        .fold(0.0, f64::max);
    // μ = (1 + A)^{-1} g(β); equal to (β_{n+1} - β_n)/φ_n at the fixed point
    // but free of the cancellation in the difference.
    let (mu, _, _) = ops.neumann_s(&beta, inner_tol);
    Ok(BetaSolution {
        n0: ops.n0,
        beta,
        iterations,
        contraction_rates: rates,
        mu,
        fixed_point_residual,
        residual_beta_eq: 0.0,
    })
}

/// `μ_n - μ_{n-1}/ρ_{n-1} - σ_n u_n v_n β_n`, relative to its largest term,
/// maximized over `[n0 + 1, N]`. This is the β-equation multiplied by `v_n/u_n`.
pub fn beta_equation_residual(
    problem: &ProblemSpec,
    fss: &FundamentalSystem,
    sol: &BetaSolution,
    rho_prev: impl Fn(usize) -> f64,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for j in 1..sol.mu.len() {
        let n = sol.n0 + j;
        let s = problem.sigma.eval_log(n)?.scale_log(fss.log_u(n) + fss.log_v(n)).to_complex() * sol.beta[j];
        let a = sol.mu[j];
        let b = sol.mu[j - 1] / rho_prev(n - 1);
        let scale = a.norm().max(b.norm()).max(s.norm());
        if scale > 0.0 {
            worst = worst.max((a - b - s).norm() / scale);
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbedFss {
    pub n0: usize,
    /// `ũ_n = β_n u_n` on `[n0, N + 1]`.
    pub u_tilde: Vec<LogScaledValue>,
    /// `ṽ_{n+1} = ũ_{n+1} Σ_{k=n0}^{n} 1/(r_k ũ_k ũ_{k+1})`, `ṽ_{n0} = 0`.
    pub v_tilde: Vec<LogScaledValue>,
    pub ratio_u_err: Vec<f64>,
    pub ratio_v_err: Vec<f64>,
    /// Partial sums of `Σ r_n u_n v_{n+1} |Δ(ũ_n/u_n)|²`.
    pub narrow_partial: Vec<f64>,
    pub wronskian_residual: f64,
}

pub fn build_perturbed_fss(fss: &FundamentalSystem, sol: &BetaSolution) -> Result<PerturbedFss> {
    let n0 = sol.n0;
    for (j, b) in sol.beta.iter().enumerate() {
        if b.norm() < 0.5 {
            return Err(HwError::BetaTooSmall {
                n: n0 + j,
                value: b.norm(),
            });
        }
    }
    let len = sol.beta.len();
    let u_tilde: Vec<LogScaledValue> = (0..len)
        .map(|j| LogScaledValue::from_complex(sol.beta[j]).scale_log(fss.log_u(n0 + j)))
        .collect();
    // start from v_{n0}/ũ_{n0} so that ṽ = v when the perturbation vanishes
    let mut sum = LogScaledValue::from_log(fss.log_v(n0)) / u_tilde[0];
    let mut v_tilde = vec![u_tilde[0] * sum; len];
    let mut sums = vec![sum; len];
    for j in 0..len - 1 {
        let term = (u_tilde[j] * u_tilde[j + 1]).recip().scale_log(-fss.log_r(n0 + j));
        sum = sum.add(term);
        sums[j + 1] = sum;
        v_tilde[j + 1] = u_tilde[j + 1] * sum;
    }
    let mut wr: f64 = 0.0;
    for j in 0..len - 1 {
        // r_n ũ_n ũ_{n+1} (S_{n+1} - S_n) - 1
        let d = sums[j + 1].sub(sums[j]);
        let w = (u_tilde[j] * u_tilde[j + 1] * d).scale_log(fss.log_r(n0 + j)).to_complex();
        wr = wr.max((w - ONE).norm());
    }
    let ratio_u_err = sol.beta.iter().map(|b| (b - ONE).norm()).collect();
    let ratio_v_err = (0..len)
        .map(|j| {
            if v_tilde[j].is_zero() {
                f64::NAN
            } else {
                (v_tilde[j].scale_log(-fss.log_v(n0 + j)).to_complex() - ONE).norm()
            }
        })
        .collect();
    let mut acc = CompensatedSum::default();
    let mut narrow_partial = Vec::with_capacity(len - 1);
    for j in 0..len - 1 {
        let n = n0 + j;
        let weight = (fss.log_r(n) + fss.log_u(n) + fss.log_v(n + 1)).exp();
        acc.add(Complex64::new(weight * (sol.beta[j + 1] - sol.beta[j]).norm_sqr(), 0.0));
        narrow_partial.push(acc.value().re);
    }
    Ok(PerturbedFss {
        n0,
        u_tilde,
        v_tilde,
        ratio_u_err,
        ratio_v_err,
        narrow_partial,
        wronskian_residual: wr,
    })
}

/// Largest scaled residual of the perturbed equation for `ũ` over
/// `[n0 + 1, N]`: the five terms of
/// `r_n ũ_{n+1} - (r_n + r_{n-1} + q_n + σ_n) ũ_n + r_{n-1} ũ_{n-1}`
/// summed in log form and divided by the largest of them.
pub fn perturbed_residual(problem: &ProblemSpec, fss: &FundamentalSystem, pf: &PerturbedFss) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for j in 1..pf.u_tilde.len() - 1 {
        let n = pf.n0 + j;
        let lr = fss.log_r(n);
        let lrp = fss.log_r(n - 1);
        let c = problem.q.eval_log(n)?.add(problem.sigma.eval_log(n)?);
        let terms = [
            pf.u_tilde[j + 1].scale_log(lr),
            -pf.u_tilde[j].scale_log(lr),
            -pf.u_tilde[j].scale_log(lrp),
            pf.u_tilde[j - 1].scale_log(lrp),
            -(c * pf.u_tilde[j]),
        ];
        let big = terms.iter().map(|t| t.log_mag).fold(f64::NEG_INFINITY, f64::max);
        let total = terms.iter().fold(LogScaledValue::ZERO, |a, &t| a.add(t));
        if big > f64::NEG_INFINITY {
            worst = worst.max((total.log_mag - big).exp());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AsymptoticsReport {
    pub n0: usize,
    pub horizon: usize,
    /// Largest `|ũ_n/u_n - 1|` over the final quarter of the window.
    pub ratio_u_final_quarter: f64,
    pub ratio_v_final_quarter: f64,
    /// `r_n u_n v_n |ũ_{n+1}/ũ_n - u_{n+1}/u_n|`, largest over the final quarter.
    pub derivative_u_final_quarter: f64,
    /// `r_n u_n v_n |ṽ_{n+1}/ṽ_n - v_{n+1}/v_n|`, largest over the final quarter.
    pub derivative_v_final_quarter: f64,
    pub narrow_sum: f64,
    /// Spread of the narrow partial sums over the final convergence window.
    pub narrow_last_window_variation: f64,
    pub perturbed_residual: f64,
    pub wronskian_residual: f64,
    pub beta_eq_residual: f64,
    pub fixed_point_residual: f64,
    pub tau: f64,
    pub norm_probe: f64,
    pub norm_probe_seed: u64,
    /// Largest relative deviation from the backward-recurrence oracle on `[n0, N/2]`.
    pub oracle_deviation: Option<f64>,
    pub restart_deviation: Option<f64>,
}

pub fn verify_asymptotics(fss: &FundamentalSystem, pf: &PerturbedFss, window: usize) -> AsymptoticsReport {
    let len = pf.u_tilde.len() - 1; // [n0, N]
    let q0 = len - len / 4;
    let fq = |v: &[f64]| v[q0..len].iter().cloned().filter(|x| x.is_finite()).fold(0.0, f64::max);
    let mut du: f64 = 0.0;
    let mut dv: f64 = 0.0;
    for j in q0..len {
        let n = pf.n0 + j;
        let scale = fss.log_r(n) + fss.log_u(n) + fss.log_v(n);
        let ru = (pf.u_tilde[j + 1] / pf.u_tilde[j]).to_complex();
        let uu = (fss.log_u(n + 1) - fss.log_u(n)).exp();
        du = du.max((ru - uu).norm() * scale.exp());
        if !pf.v_tilde[j].is_zero() {
            // compare in log form to keep exponential scales finite
            let rv = pf.v_tilde[j + 1] / pf.v_tilde[j];
            let vv = LogScaledValue::from_log(fss.log_v(n + 1) - fss.log_v(n));
            dv = dv.max(rv.sub(vv).scale_log(scale).abs());
        }
    }
    let w = window.min(pf.narrow_partial.len());
    let tail = &pf.narrow_partial[pf.narrow_partial.len() - w..];
    let variation = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - tail.iter().cloned().fold(f64::INFINITY, f64::min);
    AsymptoticsReport {
        n0: pf.n0,
        horizon: pf.n0 + len - 1,
        ratio_u_final_quarter: fq(&pf.ratio_u_err),
        ratio_v_final_quarter: fq(&pf.ratio_v_err),
        derivative_u_final_quarter: du,
        derivative_v_final_quarter: dv,
        narrow_sum: *pf.narrow_partial.last().unwrap_or(&0.0),
        narrow_last_window_variation: variation,
        perturbed_residual: 0.0,
        wronskian_residual: pf.wronskian_residual,
        beta_eq_residual: 0.0,
        fixed_point_residual: 0.0,
        tau: 0.0,
        norm_probe: 0.0,
        norm_probe_seed: NORM_PROBE_SEED,
        oracle_deviation: None,
        restart_deviation: None,
    }
}

/// Recessive solution of the perturbed equation by backward recurrence from
/// `n_big`, seeded with the ratio `u_{N_big+1}/u_{N_big}` of the unperturbed
/// principal solution. Returns the solution on `[lo, n_big + 1]` normalized
/// to 1 at `lo`.
pub fn oracle_direct_recurrence(problem: &ProblemSpec, lo: usize, n_big: usize) -> Result<Vec<LogScaledValue>> {
    let base = problem.unperturbed().with_horizon(n_big);
    let fss = FundamentalSystem::build_to(&base, n_big + 1)?;
    let seed = Complex64::new((fss.log_u(n_big + 1) - fss.log_u(n_big)).exp_m1(), 0.0);
    let log_r = log_table(&problem.r, lo, n_big)?;
    let coeff = (lo..=n_big)
        .map(|n| Ok(problem.q.eval_log(n)?.add(problem.sigma.eval_log(n)?)))
        .collect::<Result<Vec<_>>>()?;
    backward_recurrence(&log_r, &coeff, lo, n_big, seed, false)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Construction {
    pub window: ConstructionWindow,
    pub solution: BetaSolution,
    pub perturbed: PerturbedFss,
    pub report: AsymptoticsReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstructOptions {
    pub solver: SolverConfig,
    /// Oracle starts at `oracle_factor · N`; zero disables the oracle.
    pub oracle_factor: usize,
    pub restart_check: bool,
}

impl Default for ConstructOptions {
    fn default() -> Self {
        ConstructOptions {
            solver: SolverConfig::default(),
            oracle_factor: 8,
            restart_check: true,
        }
    }
}

fn trivial(fss: &FundamentalSystem, diag: &DiagnosticsBundle, problem: &ProblemSpec) -> Result<Construction> {
    let n0 = diag.start;
    let horizon = diag.horizon;
    let len = horizon - n0 + 1;
    let solution = BetaSolution {
        n0,
        beta: vec![ONE; len + 1],
        iterations: 1,
        contraction_rates: vec![],
        mu: vec![ZERO; len],
        fixed_point_residual: 0.0,
        residual_beta_eq: 0.0,
    };
    let perturbed = build_perturbed_fss(fss, &solution)?;
    let mut report = verify_asymptotics(fss, &perturbed, problem.tolerances.convergence_window);
    report.perturbed_residual = perturbed_residual(problem, fss, &perturbed)?;
    let window = ConstructionWindow {
        n0,
        horizon,
        sup_c: 0.0,
        sup_eta: 0.0,
        a_n0: 0.0,
        g_tail: 0.0,
        tau: 2.0,
    };
    Ok(Construction {
        window,
        solution,
        perturbed,
        report,
    })
}

/// The full pipeline after diagnostics: window, fixed point, perturbed
/// system and its checks.
pub fn construct(
    problem: &ProblemSpec,
    fss: &FundamentalSystem,
    diag: &DiagnosticsBundle,
    opts: &ConstructOptions,
) -> Result<Construction> {
    if narrow_criterion(diag) != Tri::True {
        return Err(HwError::Precondition(format!(
            "narrow criterion not established (J {}, G {}, L {})",
            diag.j.verdict.as_str(),
            diag.g.verdict.as_str(),
            diag.l.verdict.as_str()
        )));
    }
    if diag.c_table.iter().all(|c| *c == ZERO) {
        return trivial(fss, diag, problem);
    }
    let kernel = Kernel::new(fss, diag)?;
    let window = choose_n0(&kernel, problem.tolerances.convergence_window)?;
    let ops = kernel.window(window.n0);
    let cfg = opts.solver;
    let mut solution = solve_beta(&ops, None, &cfg)?;
    let rho_prev = |n: usize| kernel.rho[n - kernel.start];
    solution.residual_beta_eq = beta_equation_residual(problem, fss, &solution, rho_prev)?;
    let perturbed = build_perturbed_fss(fss, &solution)?;
    let mut report = verify_asymptotics(fss, &perturbed, problem.tolerances.convergence_window);
    report.perturbed_residual = perturbed_residual(problem, fss, &perturbed)?;
    report.beta_eq_residual = solution.residual_beta_eq;
    report.fixed_point_residual = solution.fixed_point_residual;
    report.tau = window.tau;
    report.norm_probe = ops.norm_probe(NORM_PROBE_SEED, NORM_PROBE_COUNT, cfg.tol);
    if opts.restart_check {
        let ones = vec![ONE; ops.len() + 1];
        let again = solve_beta(&ops, Some(&ones), &cfg)?;
        report.restart_deviation = Some(
            again
                .beta
                .iter()
                .zip(&solution.beta)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max),
        );
    }
    if opts.oracle_factor > 0 {
        let n_big = opts.oracle_factor * window.horizon;
        match oracle_direct_recurrence(problem, window.n0, n_big) {
            Ok(y) => report.oracle_deviation = Some(oracle_deviation(&perturbed, &y, window.horizon / 2)),
            Err(e) => log::warn!("oracle unavailable: {e}"),
        }
    }
    Ok(Construction {
        window,
        solution,
        perturbed,
        report,
    })
}

/// `max |y_n/ũ_n · ũ_{n0} - 1|` over `[n0, last]`, with `y` normalized at `n0`.
pub fn oracle_deviation(pf: &PerturbedFss, y: &[LogScaledValue], last: usize) -> f64 {
    let base = pf.u_tilde[0];
    (0..=(last - pf.n0).min(pf.u_tilde.len() - 1))
        .map(|j| ((y[j] * base / pf.u_tilde[j]).to_complex() - ONE).norm())
        .fold(0.0, f64::max)
}

impl Construction {
    /// `n,beta_re,beta_im,mu_re,mu_im,u_tilde,v_tilde,ratio_u_err,ratio_v_err,narrow_partial`.
    /// `u_tilde` and `v_tilde` hold real parts.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| HwError::InvalidProblem(format!("csv: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "n",
            "beta_re",
            "beta_im",
            "mu_re",
            "mu_im",
            "u_tilde",
            "v_tilde",
            "ratio_u_err",
            "ratio_v_err",
            "narrow_partial",
        ])
        .map_err(io)?;
        let s = &self.solution;
        let p = &self.perturbed;
        for j in 0..s.mu.len() {
            let row = [
                format!("{}", s.n0 + j),
                format!("{:e}", s.beta[j].re),
                format!("{:e}", s.beta[j].im),
                format!("{:e}", s.mu[j].re),
                format!("{:e}", s.mu[j].im),
                format!("{:e}", p.u_tilde[j].to_complex().re),
                format!("{:e}", p.v_tilde[j].to_complex().re),
                format!("{:e}", p.ratio_u_err[j]),
                format!("{:e}", p.ratio_v_err[j]),
                format!("{:e}", p.narrow_partial[j]),
            ];
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| HwError::InvalidProblem(format!("csv: {e}")))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_of_halving_factors() {
        let eta: Vec<Complex64> = (1..=60).map(|k| Complex64::new(0.5f64.powi(k), 0.0)).collect();
        let p = product_tail(&eta, ZERO);
        assert!((p[0].re - 2.384231029031371).abs() < 1e-12);
    }
}
