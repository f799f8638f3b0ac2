//! Design search: minimum predicted overhead over `(R, δ, P(x))`.
//!
//! At fixed `(R, δ, r0)` the convergence condition is linear in the `p_i`:
//!
//! ```text
//! g(1-R) Σ i p_i x^{i-1} ≥ h(x) - r0 + slack,   h(x) = Γ_g^{-1}((g-1)!(1-x))
//! ```
//!
//! for every grid point `x`. Feasibility is decided by an LP that maximizes
//! the smallest constraint slack, with constraints added lazily (the most
//! violated grid points first). The smallest feasible `r0` is found by
//! bisection, and `(R, δ)` by exhaustive grid search.

use microlp::{ComparisonOp, OptimizationDirection, Problem, Solution, Variable};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, poisson_tail_at_least, poisson_tail_inv, AsymptoticParams};
use crate::error::{Error, Result};
use crate::outercode::DegreeDistribution;

/// `lo, lo + step, ...` up to `hi` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, step: f64) -> Self {
        GridSpec { lo, hi, step }
    }

    pub fn values(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        // Round to 1e-12 so 0.8 + 3·0.005 prints as 0.815.
        (0..=n)
            .map(|k| ((self.lo + k as f64 * self.step) * 1e12).round() / 1e12)
            .collect()
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.step > 0.0 && self.lo.is_finite() && self.hi >= self.lo) {
            return Err(Error::InvalidParams(format!(
                "{name}: need step > 0 and hi >= lo, got {}:{}:{}",
                self.lo, self.hi, self.step
            )));
        }
        Ok(())
    }
}

impl std::str::FromStr for GridSpec {
    type Err = Error;

    /// Parses `lo:hi:step`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::InvalidParams(format!("grid must be lo:hi:step, got {s:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let v: Vec<f64> = parts.iter().map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_>>()?;
        let g = GridSpec::new(v[0], v[1], v[2]);
        g.validate("grid")?;
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub g: u32,
    pub d_max: usize,
    pub rate_grid: GridSpec,
    pub delta_grid: GridSpec,
    /// Spacing of the initial LP constraint points.
    pub x_grid_step: f64,
    /// Spacing of the grid every design is verified on.
    pub verify_step: f64,
    pub r0_tolerance: f64,
    pub slack: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            g: 25,
            d_max: 15,
            rate_grid: GridSpec::new(0.60, 0.995, 0.005),
            delta_grid: GridSpec::new(0.005, 0.05, 0.005),
            x_grid_step: 1e-3,
            verify_step: analysis::DEFAULT_GRID_STEP,
            r0_tolerance: 1e-4,
            slack: 1e-9,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.g == 0 {
            return Err(Error::InvalidParams("g must be positive".into()));
        }
        if self.d_max < 2 {
            return Err(Error::InvalidParams(format!("d_max must be at least 2, got {}", self.d_max)));
        }
        self.rate_grid.validate("rate_grid")?;
        self.delta_grid.validate("delta_grid")?;
        let rates = self.rate_grid.values();
        if rates.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
            return Err(Error::InvalidParams("rate_grid must lie in (0, 1]".into()));
        }
        if self.delta_grid.values().iter().any(|&d| !(0.0..1.0).contains(&d)) {
            return Err(Error::InvalidParams("delta_grid must lie in [0, 1)".into()));
        }
        for (name, v) in [
            ("x_grid_step", self.x_grid_step),
            ("verify_step", self.verify_step),
            ("r0_tolerance", self.r0_tolerance),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidParams(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if !(self.slack >= 0.0 && self.slack.is_finite()) {
            return Err(Error::InvalidParams(format!("slack must be nonnegative, got {}", self.slack)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizedDesign {
    pub g: u32,
    pub d_max: usize,
    pub epsilon: f64,
    pub rate: f64,
    pub delta: f64,
    pub r0: f64,
    pub x0: f64,
    pub distribution: DegreeDistribution,
}

impl OptimizedDesign {
    pub fn asymptotic_params(&self) -> AsymptoticParams {
        AsymptoticParams::from_r0(self.g, self.rate, self.delta, self.distribution.clone(), self.r0)
    }
}

pub fn export_design(design: &OptimizedDesign) -> String {
    serde_json::to_string_pretty(design).expect("design serializes")
}

pub fn parse_design(json: &str) -> Result<OptimizedDesign> {
    serde_json::from_str(json).map_err(|e| Error::InvalidParams(format!("design JSON: {e}")))
}

/// One `(R, δ)` problem.
#[derive(Debug, Clone, Copy)]
struct Cell {
    g: u32,
    d_max: usize,
    rate: f64,
    delta: f64,
    slack: f64,
}

impl Cell {
    /// Coefficient of `p_i` at `x`: `g(1-R) i x^{i-1}`.
    fn coefficient(&self, i: usize, x: f64) -> f64 {
        self.g as f64 * (1.0 - self.rate) * i as f64 * x.powi(i as i32 - 1)
    }

    /// How far `x` is from satisfying its constraint, in units of `x`;
    /// positive means violated.
    fn violation(&self, dist: &DegreeDistribution, r0: f64, x: f64) -> f64 {
        let intensity = r0 + self.g as f64 * (1.0 - self.rate) * dist.derivative(x) - self.slack;
        x - poisson_tail_at_least(self.g, intensity)
    }
}

const INITIAL_CUTS: usize = 16;
const CUTS_PER_ROUND: usize = 4;
const MAX_ROUNDS: usize = 500;
const MARGIN_BOUND: f64 = 1e3;

/// Max-min-slack LP over a growing set of grid points.
struct CuttingPlane<'a> {
    cell: Cell,
    r0: f64,
    points: &'a [f64],
    p: Vec<Variable>,
    t: Variable,
    used: Vec<bool>,
}

impl<'a> CuttingPlane<'a> {
    fn row(&self, x: f64) -> (Vec<(Variable, f64)>, f64) {
        let mut row: Vec<(Variable, f64)> = self
            .p
            .iter()
            .enumerate()
            .map(|(k, &v)| (v, self.cell.coefficient(k + 2, x)))
            .collect();
        row.push((self.t, -1.0));
        let h = poisson_tail_inv(self.cell.g, x).expect("x in [0, 1)");
        (row, h - self.r0)
    }

    fn solve(cell: Cell, r0: f64, points: &'a [f64]) -> Result<Option<DegreeDistribution>> {
        if points.is_empty() {
            return Ok(Some(DegreeDistribution::single(2)?));
        }
        let mut problem = Problem::new(OptimizationDirection::Maximize);
        let p: Vec<Variable> = (2..=cell.d_max).map(|_| problem.add_var(0.0, (0.0, 1.0))).collect();
        let t = problem.add_var(1.0, (-MARGIN_BOUND, MARGIN_BOUND));
        let ones: Vec<(Variable, f64)> = p.iter().map(|&v| (v, 1.0)).collect();
        problem.add_constraint(ones.as_slice(), ComparisonOp::Eq, 1.0);
        let mut cp = CuttingPlane {
            cell,
            r0,
            points,
            p,
            t,
            used: vec![false; points.len()],
        };
        let n = points.len();
        let initial: Vec<usize> = if n <= INITIAL_CUTS {
            (0..n).collect()
        } else {
            (0..INITIAL_CUTS).map(|k| k * (n - 1) / (INITIAL_CUTS - 1)).collect()
        };
        for &j in &initial {
            cp.used[j] = true;
            let (row, rhs) = cp.row(points[j]);
            problem.add_constraint(row.as_slice(), ComparisonOp::Ge, rhs);
        }
        let mut solution = solved(problem.solve())?;
        for _ in 0..MAX_ROUNDS {
            if solution.objective() < cell.slack {
                return Ok(None);
            }
            let dist = cp.distribution(&solution)?;
            let cuts = cp.worst_points(&dist);
            if cuts.is_empty() {
                return Ok(Some(dist));
            }
            for j in cuts {
                cp.used[j] = true;
                let (row, rhs) = cp.row(points[j]);
                solution = solved(solution.add_constraint(row.as_slice(), ComparisonOp::Ge, rhs))?;
            }
        }
        Err(Error::Solver(format!("no convergence after {MAX_ROUNDS} cutting-plane rounds")))
    }

    fn distribution(&self, solution: &Solution) -> Result<DegreeDistribution> {
        DegreeDistribution::from_weights(
            self.p
                .iter()
                .enumerate()
                .map(|(k, &v)| (k + 2, solution.var_value(v).max(0.0))),
        )
    }

    /// Up to [`CUTS_PER_ROUND`] violated points not yet in the LP, most
    /// violated first, at least a few grid steps apart. Callers re-check the
    /// witness, since rounding can leave an existing cut marginally violated.
    fn worst_points(&self, dist: &DegreeDistribution) -> Vec<usize> {
        let mut bad: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(j, &x)| (self.cell.violation(dist, self.r0, x), j))
            .filter(|&(v, _)| v > 0.0)
            .collect();
        bad.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut picked: Vec<usize> = Vec::new();
        for (_, j) in bad {
            if picked.len() == CUTS_PER_ROUND {
                break;
            }
            if picked.iter().all(|&k| k.abs_diff(j) > 8) {
                picked.push(j);
            }
        }
        picked.retain(|&j| !self.used[j]);
        picked
    }
}

fn solved(outcome: std::result::Result<microlp::SolveOutcome, microlp::Error>) -> Result<Solution> {
    outcome
        .map_err(|e| Error::Solver(e.to_string()))?
        .into_solution()
        .map_err(|_| Error::Solver("LP interrupted".into()))
}

/// Finds `P(x)` of degrees `2..=d_max` meeting the convergence constraint at
/// every point of `x_grid`, or reports `Infeasible(r0)`.
pub fn lp_feasible(g: u32, rate: f64, delta: f64, r0: f64, d_max: usize, x_grid: &[f64], slack: f64) -> Result<DegreeDistribution> {
    if d_max < 2 {
        return Err(Error::InvalidParams(format!("d_max must be at least 2, got {d_max}")));
    }
    let cell = Cell {
        g,
        d_max,
        rate,
        delta,
        slack,
    };
    match CuttingPlane::solve(cell, r0, x_grid)? {
        Some(dist) if x_grid.iter().all(|&x| cell.violation(&dist, r0, x) <= 0.0) => Ok(dist),
        _ => Err(Error::Infeasible(r0)),
    }
}

#[derive(Debug, Clone)]
struct CellResult {
    r0: f64,
    dist: DegreeDistribution,
}

const MONOTONE_PROBE: f64 = 0.5;

fn verification_grid(cell: &Cell, r0: f64, step: f64) -> Vec<f64> {
    let x0 = poisson_tail_at_least(cell.g, r0);
    let end = 1.0 - cell.delta;
    if x0 >= end {
        return Vec::new();
    }
    analysis::grid(x0, end, step).collect()
}

/// Feasibility of `r0` for a cell, with the witness distribution.
fn probe(cell: &Cell, r0: f64, cfg: &OptimizerConfig) -> Result<Option<DegreeDistribution>> {
    let step = cfg.verify_step.min(cfg.x_grid_step);
    let points = verification_grid(cell, r0, step);
    let Some(dist) = CuttingPlane::solve(*cell, r0, &points)? else {
        return Ok(None);
    };
    if points.iter().any(|&x| cell.violation(&dist, r0, x) > 0.0) {
        return Ok(None);
    }
    // Raising r0 only loosens every constraint, so the same witness must
    // still work half a packet higher.
    let higher = r0 + MONOTONE_PROBE;
    if verification_grid(cell, higher, step)
        .iter()
        .any(|&x| cell.violation(&dist, higher, x) > 0.0)
    {
        return Err(Error::MonotonicityViolation(r0, higher));
    }
    Ok(Some(dist))
}

fn solve_cell(cell: Cell, cfg: &OptimizerConfig) -> Result<CellResult> {
    // Above h(1-δ) the interval is empty; below the bound from x = 1-δ
    // with the best single degree nothing can work.
    let end = 1.0 - cell.delta;
    let h_end = poisson_tail_inv(cell.g, end)?;
    let best_slope = (2..=cell.d_max).map(|i| cell.coefficient(i, end)).fold(0.0, f64::max);
    let mut lo = (h_end - best_slope).max(0.0);
    let mut hi = h_end + cfg.r0_tolerance;
    let mut witness = match probe(&cell, hi, cfg)? {
        Some(d) => d,
        None => return Err(Error::Infeasible(hi)),
    };
    while hi - lo > cfg.r0_tolerance {
        let mid = 0.5 * (lo + hi);
        match probe(&cell, mid, cfg)? {
            Some(d) => {
                hi = mid;
                witness = d;
            }
            None => lo = mid,
        }
    }
    Ok(CellResult { r0: hi, dist: witness })
}

/// Searches the `(R, δ)` grid. Cells run on the current rayon pool; the
/// result does not depend on the pool size.
pub fn optimize_design(cfg: &OptimizerConfig) -> Result<OptimizedDesign> {
    cfg.validate()?;
    let cells: Vec<Cell> = cfg
        .rate_grid
        .values()
        .into_iter()
        .flat_map(|rate| {
            cfg.delta_grid.values().into_iter().map(move |delta| (rate, delta))
        })
        .map(|(rate, delta)| Cell {
            g: cfg.g,
            d_max: cfg.d_max,
            rate,
            delta,
            slack: cfg.slack,
        })
        .collect();
    let results: Vec<Result<CellResult>> = cells.par_iter().map(|&c| solve_cell(c, cfg)).collect();

    let mut best: Option<(f64, Cell, CellResult)> = None;
    for (cell, res) in cells.iter().zip(results) {
        let res = match res {
            Ok(r) => r,
            Err(Error::Infeasible(_)) => continue,
            Err(e) => return Err(e),
        };
        let eps = analysis::overhead(res.r0, cell.g, cell.delta, cell.rate);
        if best.as_ref().is_none_or(|(b, _, _)| eps < *b) {
            best = Some((eps, *cell, res));
        }
    }
    let (epsilon, cell, res) = best.ok_or(Error::NothingFeasible)?;
    Ok(OptimizedDesign {
        g: cfg.g,
        d_max: cfg.d_max,
        epsilon,
        rate: cell.rate,
        delta: cell.delta,
        r0: res.r0,
        x0: poisson_tail_at_least(cfg.g, res.r0),
        distribution: res.dist,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::check_convergence;

    fn small_cfg(g: u32, d_max: usize) -> OptimizerConfig {
        OptimizerConfig {
            g,
            d_max,
            rate_grid: GridSpec::new(0.70, 0.80, 0.05),
            delta_grid: GridSpec::new(0.01, 0.03, 0.01),
            ..Default::default()
        }
    }

    #[test]
    fn grid_values() {
        assert_eq!(GridSpec::new(0.8, 0.82, 0.005).values(), vec![0.8, 0.805, 0.81, 0.815, 0.82]);
        assert_eq!(GridSpec::new(0.9, 0.9, 0.005).values(), vec![0.9]);
        assert_eq!("0.9:0.9:0.005".parse::<GridSpec>().unwrap(), GridSpec::new(0.9, 0.9, 0.005));
        assert!("0.9:0.8".parse::<GridSpec>().is_err());
        assert!("0.9:0.8:0.1".parse::<GridSpec>().is_err());
    }

    #[test]
    fn slack_constraints_accept_anything() {
        // r0 above h at the largest grid point: every right-hand side is negative.
        let xs = [0.5, 0.7, 0.9];
        let r0 = poisson_tail_inv(25, 0.9).unwrap() + 1.0;
        let d = lp_feasible(25, 0.9, 0.02, r0, 6, &xs, 1e-9).unwrap();
        assert!((d.entries().iter().map(|e| e.1).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_point_degree_two() {
        // D = 2 forces p2 = 1: feasible iff 2 g (1-R) x ≥ h(x) - r0 + slack.
        let (g, rate, x) = (25u32, 0.8, 0.6);
        let h = poisson_tail_inv(g, x).unwrap();
        for r0 in [h - 6.5, h - 5.5, h - 6.0 + 1e-6, h - 6.0 - 1e-6] {
            let lhs = 2.0 * g as f64 * (1.0 - rate) * x;
            let expect = lhs >= h - r0 + 1e-9;
            let got = lp_feasible(g, rate, 0.02, r0, 2, &[x], 1e-9).is_ok();
            assert_eq!(got, expect, "r0 = h - {}", h - r0);
        }
    }

    #[test]
    fn witness_meets_every_constraint() {
        let cell = Cell {
            g: 25,
            d_max: 10,
            rate: 0.75,
            delta: 0.02,
            slack: 1e-9,
        };
        let cfg = OptimizerConfig::default();
        let res = solve_cell(cell, &cfg).unwrap();
        let p = AsymptoticParams::from_r0(25, 0.75, 0.02, res.dist.clone(), res.r0);
        let r = check_convergence(&p, cfg.verify_step).unwrap();
        assert!(r.feasible);
        // And just below the returned r0 nothing works.
        assert!(probe(&cell, res.r0 - 2.0 * cfg.r0_tolerance, &cfg).unwrap().is_none());
    }

    #[test]
    fn design_round_trips_and_revalidates() {
        let d = optimize_design(&small_cfg(25, 8)).unwrap();
        let json = export_design(&d);
        let back = parse_design(&json).unwrap();
        assert_eq!(back, d);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        let degrees: Vec<u64> = v["distribution"]["degrees"]
            .as_array()
            .unwrap()
            .iter()
            .map(|e| e[0].as_u64().unwrap())
            .collect();
        assert!(degrees.windows(2).all(|w| w[0] < w[1]));
        let r = check_convergence(&back.asymptotic_params(), analysis::DEFAULT_GRID_STEP).unwrap();
        assert!(r.feasible);
        assert!((r.epsilon - d.epsilon).abs() < 1e-8);
    }

    #[test]
    fn single_cell_grid_reproduces_design() {
        let cfg = small_cfg(25, 8);
        let d = optimize_design(&cfg).unwrap();
        let one = OptimizerConfig {
            rate_grid: GridSpec::new(d.rate, d.rate, 0.005),
            delta_grid: GridSpec::new(d.delta, d.delta, 0.005),
            ..cfg
        };
        assert_eq!(optimize_design(&one).unwrap(), d);
    }

    #[test]
    fn larger_degree_cap_never_hurts() {
        let mut last = f64::INFINITY;
        for d_max in [5, 10, 15] {
            let d = optimize_design(&small_cfg(25, d_max)).unwrap();
            assert!(d.epsilon <= last + 2e-4 / 25.0, "D={d_max}: {} after {last}", d.epsilon);
            last = d.epsilon;
        }
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = small_cfg(25, 8);
        cfg.d_max = 1;
        assert!(matches!(optimize_design(&cfg), Err(Error::InvalidParams(_))));
        let mut cfg = small_cfg(25, 8);
        cfg.rate_grid = GridSpec::new(0.9, 1.2, 0.1);
        assert!(matches!(optimize_design(&cfg), Err(Error::InvalidParams(_))));
    }
}
