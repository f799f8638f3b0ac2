//! Asymptotic overhead analysis.
//!
//! For integer `α`, `Γ_α(x) = (α-1)! e^{-x} Σ_{i<α} x^i/i!`, so
//! `Γ_α(x)/(α-1)!` is the probability that a Poisson(x) variable is below
//! `α`: the chance that a generation has seen fewer than `α` equations. The
//! decoding process converges when
//!
//! ```text
//! x < 1 - Γ_g(r0 + g(1-R)P'(x)) / (g-1)!   for all x in (x0, 1-δ)
//! ```
//!
//! and the overhead is then `ε = r0 / (g(1-δ)R) - 1`.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::outercode::DegreeDistribution;

pub const DEFAULT_GRID_STEP: f64 = 1e-4;
/// Bisection tolerance on `r0` in [`min_r0`].
pub const R0_TOLERANCE: f64 = 1e-4;
/// Upper end of the `r0` search, as a multiple of `g`.
const R0_CEILING: f64 = 11.0;
/// Monotonicity probe distance used during bisection.
const MONOTONE_PROBE: f64 = 0.5;
const TRAJECTORY_STEPS: usize = 10_000;
const TRAJECTORY_TOL: f64 = 1e-12;

const LN_FACTORIAL_TABLE: usize = 4096;

fn ln_factorial(n: u32) -> f64 {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = vec![0.0; LN_FACTORIAL_TABLE];
        for k in 2..LN_FACTORIAL_TABLE {
            t[k] = t[k - 1] + (k as f64).ln();
        }
        t
    });
    match table.get(n as usize) {
        Some(&v) => v,
        None => table[LN_FACTORIAL_TABLE - 1] + (LN_FACTORIAL_TABLE as u32..=n).map(|k| (k as f64).ln()).sum::<f64>(),
    }
}

/// `Pr[Poisson(x) ≤ alpha - 1]`, i.e. `Γ_α(x) / (α-1)!`.
///
/// Sums the Poisson pmf outward from the mode (clamped to `alpha - 1`), so
/// no term underflows before it stops mattering.
pub fn poisson_cdf_below(alpha: u32, x: f64) -> f64 {
    assert!(alpha >= 1, "alpha must be positive");
    if x <= 0.0 {
        return 1.0;
    }
    let top = alpha - 1;
    let mode = (x.floor() as u64).min(top as u64) as u32;
    let ln_pmf = -x + mode as f64 * x.ln() - ln_factorial(mode);
    let start = ln_pmf.exp();
    if start == 0.0 {
        // Mode beyond reach of f64: everything below it is negligible too.
        return if x > top as f64 { 0.0 } else { 1.0 };
    }
    let mut sum = start;
    let mut term = start;
    for i in mode + 1..=top {
        term *= x / i as f64;
        sum += term;
        if term < sum * 1e-18 {
            break;
        }
    }
    term = start;
    for i in (1..=mode).rev() {
        term *= i as f64 / x;
        sum += term;
        if term < sum * 1e-18 {
            break;
        }
    }
    sum.min(1.0)
}

/// `Pr[Poisson(x) ≥ alpha]`, the complement of [`poisson_cdf_below`], summed
/// directly so it stays accurate when tiny.
pub fn poisson_tail_at_least(alpha: u32, x: f64) -> f64 {
    assert!(alpha >= 1, "alpha must be positive");
    if x <= 0.0 {
        return 0.0;
    }
    if x >= alpha as f64 {
        return 1.0 - poisson_cdf_below(alpha, x);
    }
    let mut term = (-x + alpha as f64 * x.ln() - ln_factorial(alpha)).exp();
    let mut sum = term;
    let mut i = alpha;
    while term > sum * 1e-18 {
        i += 1;
        term *= x / i as f64;
        sum += term;
    }
    sum
}

/// `n!` as a running product (overflows to infinity past 170!).
fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// `Γ_α(x) = (α-1)! e^{-x} Σ_{i=0}^{α-1} x^i / i!`.
pub fn gamma_upper(alpha: u32, x: f64) -> f64 {
    if alpha == 0 || x < 0.0 || x.is_nan() {
        panic!("gamma_upper needs alpha >= 1 and x >= 0, got ({alpha}, {x})");
    }
    poisson_cdf_below(alpha, x) * factorial(alpha - 1)
}

/// Bisection for the root of a nonincreasing `f - target` on `[0, ∞)`,
/// run until the bracket stops shrinking in floating point.
fn invert_decreasing(alpha: u32, target: f64, f: impl Fn(f64) -> f64) -> Result<f64> {
    let a = alpha as f64;
    let mut hi = a + 40.0 * a.sqrt();
    while f(hi) > target {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::OutOfRange(target));
        }
    }
    let mut lo = 0.0;
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// The `x ≥ 0` at which `poisson_cdf_below(alpha, x) = u`, for `u ∈ (0, 1]`.
pub fn poisson_cdf_inv(alpha: u32, u: f64) -> Result<f64> {
    if !(u > 0.0 && u <= 1.0) {
        return Err(Error::OutOfRange(u));
    }
    if u == 1.0 {
        return Ok(0.0);
    }
    invert_decreasing(alpha, u, |x| poisson_cdf_below(alpha, x))
}

/// The `x ≥ 0` at which `poisson_tail_at_least(alpha, x) = p`, for `p ∈ [0, 1)`.
pub fn poisson_tail_inv(alpha: u32, p: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::OutOfRange(p));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    invert_decreasing(alpha, -p, |x| -poisson_tail_at_least(alpha, x))
}

/// Inverse of [`gamma_upper`] in its first argument, for `y ∈ (0, (α-1)!]`.
pub fn gamma_inv(alpha: u32, y: f64) -> Result<f64> {
    if alpha == 0 {
        return Err(Error::OutOfRange(y));
    }
    poisson_cdf_inv(alpha, y / factorial(alpha - 1)).map_err(|_| Error::OutOfRange(y))
}

/// Inputs to the convergence condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticParams {
    pub g: u32,
    pub rate: f64,
    pub delta: f64,
    pub dist: DegreeDistribution,
    pub r0: f64,
    pub x0: f64,
}

impl AsymptoticParams {
    pub fn from_r0(g: u32, rate: f64, delta: f64, dist: DegreeDistribution, r0: f64) -> Self {
        let x0 = poisson_tail_at_least(g, r0);
        AsymptoticParams {
            g,
            rate,
            delta,
            dist,
            r0,
            x0,
        }
    }

    pub fn from_x0(g: u32, rate: f64, delta: f64, dist: DegreeDistribution, x0: f64) -> Result<Self> {
        let r0 = poisson_tail_inv(g, x0)?;
        Ok(AsymptoticParams {
            g,
            rate,
            delta,
            dist,
            r0,
            x0,
        })
    }

    pub fn epsilon(&self) -> f64 {
        overhead(self.r0, self.g, self.delta, self.rate)
    }
}

/// `ε = r0 / (g(1-δ)R) - 1`.
pub fn overhead(r0: f64, g: u32, delta: f64, rate: f64) -> f64 {
    r0 / (g as f64 * (1.0 - delta) * rate) - 1.0
}

/// Predicted decoded-generation fraction after one round, given `x`.
pub fn fp_map(x: f64, p: &AsymptoticParams) -> f64 {
    let g = p.g as f64;
    poisson_tail_at_least(p.g, p.r0 + g * (1.0 - p.rate) * p.dist.derivative(x))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub feasible: bool,
    pub epsilon: f64,
    pub r0: f64,
    pub x0: f64,
    /// Smallest `fp_map(x) - x` over the grid.
    pub margin: f64,
    pub trajectory: Vec<f64>,
}

/// Grid `{x0 + k·step} ∩ [x0, end]`, with `end` appended.
pub(crate) fn grid(x0: f64, end: f64, step: f64) -> impl Iterator<Item = f64> {
    let n = ((end - x0) / step).floor() as usize;
    (0..=n)
        .map(move |k| x0 + k as f64 * step)
        .filter(move |&x| x < end)
        .chain(std::iter::once(end))
}

pub(crate) fn grid_margin(p: &AsymptoticParams, step: f64) -> f64 {
    grid(p.x0, 1.0 - p.delta, step)
        .map(|x| fp_map(x, p) - x)
        .fold(f64::INFINITY, f64::min)
}

/// Iterates `x ← fp_map(x)` from 0.
pub fn trajectory(p: &AsymptoticParams) -> Vec<f64> {
    let mut xs = vec![0.0];
    let mut x = 0.0;
    for _ in 0..TRAJECTORY_STEPS {
        let next = fp_map(x, p);
        xs.push(next);
        if (next - x).abs() < TRAJECTORY_TOL {
            break;
        }
        x = next;
    }
    xs
}

/// Checks the convergence condition on a grid of spacing `grid_step`.
pub fn check_convergence(p: &AsymptoticParams, grid_step: f64) -> Result<AnalysisResult> {
    let end = 1.0 - p.delta;
    if !(p.x0 > 0.0 && p.x0 < end) {
        return Err(Error::InvalidInterval {
            x0: p.x0,
            delta: p.delta,
        });
    }
    if !(grid_step > 0.0 && grid_step <= 1e-3) {
        return Err(Error::InvalidParams(format!("grid_step must lie in (0, 1e-3], got {grid_step}")));
    }
    let margin = grid_margin(p, grid_step);
    Ok(AnalysisResult {
        feasible: margin > 0.0,
        epsilon: p.epsilon(),
        r0: p.r0,
        x0: p.x0,
        margin,
        trajectory: trajectory(p),
    })
}

/// Feasibility at `r0`. When `x0 ≥ 1-δ` the interval is empty and the
/// condition holds vacuously.
fn feasible_at(dist: &DegreeDistribution, g: u32, rate: f64, delta: f64, r0: f64, grid_step: f64) -> bool {
    let p = AsymptoticParams::from_r0(g, rate, delta, dist.clone(), r0);
    p.x0 >= 1.0 - p.delta || grid_margin(&p, grid_step) > 0.0
}

/// Smallest `r0` (to within [`R0_TOLERANCE`]) for which the decoder converges.
pub fn min_r0(dist: &DegreeDistribution, g: u32, rate: f64, delta: f64, grid_step: f64) -> Result<AnalysisResult> {
    if g == 0 || !(rate > 0.0 && rate <= 1.0) || !(0.0..1.0).contains(&delta) {
        return Err(Error::InvalidParams(format!(
            "need g >= 1, 0 < R <= 1, 0 <= delta < 1; got g={g}, R={rate}, delta={delta}"
        )));
    }
    let mut hi = R0_CEILING * g as f64;
    if !feasible_at(dist, g, rate, delta, hi, grid_step) {
        return Err(Error::Infeasible(hi));
    }
    let mut lo = 0.0;
    while hi - lo > R0_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if feasible_at(dist, g, rate, delta, mid, grid_step) {
            let probe = mid + MONOTONE_PROBE;
            if !feasible_at(dist, g, rate, delta, probe, grid_step) {
                return Err(Error::MonotonicityViolation(mid, probe));
            }
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let p = AsymptoticParams::from_r0(g, rate, delta, dist.clone(), hi);
    if p.x0 >= 1.0 - delta {
        let margin = fp_map(1.0 - delta, &p) - (1.0 - delta);
        return Ok(AnalysisResult {
            feasible: true,
            epsilon: p.epsilon(),
            r0: p.r0,
            x0: p.x0,
            margin,
            trajectory: trajectory(&p),
        });
    }
    check_convergence(&p, grid_step)
}
