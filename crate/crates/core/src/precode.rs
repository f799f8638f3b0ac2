//! Right-regular LDPC pre-code of rate `1 - δ`.
//!
//! Variables `0..K` carry the source packets and `K..K'` the pre-code
//! parity. Check `j` always contains parity variable `K + j` plus `d_c - 1`
//! distinct source variables, so the parity part of the check matrix is the
//! identity and encoding never needs resampling. Decoding is peeling
//! followed by Gaussian elimination on whatever peeling leaves behind.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gf::{matrix_solve, EliminationState, Field, FieldElement, SymbolVector};
use crate::rng;
use crate::srlnc::CodeParams;

pub const DEFAULT_ELIMINATION_CAP: usize = 2000;
/// Floor for the default check degree.
pub const MIN_CHECK_DEGREE: usize = 12;
/// Target mean number of checks per source variable for the default degree.
const SOURCE_COVERAGE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrecodeConfig {
    /// Check degree `d_c`; `None` picks one from `δ`.
    pub check_degree: Option<usize>,
    /// Largest residual unknown count handed to elimination after peeling.
    pub elimination_cap: usize,
}

impl Default for PrecodeConfig {
    fn default() -> Self {
        PrecodeConfig {
            check_degree: None,
            elimination_cap: DEFAULT_ELIMINATION_CAP,
        }
    }
}

/// Default `d_c` for `k` sources and `m` checks: at least 12, and large
/// enough that each source sits in about ten checks on average.
pub fn default_check_degree(k: usize, m: usize) -> usize {
    if m == 0 {
        return 0;
    }
    let covering = (SOURCE_COVERAGE * k as f64 / m as f64).ceil() as usize + 1;
    covering.max(MIN_CHECK_DEGREE).min(k + 1)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrecodeCheck {
    pub variables: Vec<u32>,
    pub coefficients: Vec<FieldElement>,
}

#[derive(Debug, Clone)]
pub struct PrecodeGraph {
    field: Field,
    k: usize,
    k_prime: usize,
    check_degree: usize,
    seed: u64,
    checks: Vec<PrecodeCheck>,
    /// Variable → checks containing it.
    adjacency: Vec<Vec<u32>>,
}

impl PrecodeGraph {
    /// Samples the graph for `params` from the pre-code stream of `seed`.
    pub fn build(params: &CodeParams, config: &PrecodeConfig, seed: u64) -> Result<PrecodeGraph> {
        let geo = params.geometry()?;
        let field = params.field()?;
        let (k, k_prime) = (geo.k, geo.k_prime);
        let m = k_prime - k;
        let d_c = match config.check_degree {
            Some(d) => d,
            None => default_check_degree(k, m),
        };
        if m > 0 && (d_c < 2 || d_c > k + 1) {
            return Err(Error::InvalidParams(format!(
                "check degree must lie in [2, {}], got {d_c}",
                k + 1
            )));
        }
        let mut rng = rng::stream(seed, rng::STREAM_PRECODE);
        let sockets = if m > 0 { balanced_sockets(k, m, d_c - 1, &mut rng) } else { Vec::new() };
        let mut checks = Vec::with_capacity(m);
        for j in 0..m {
            let mut variables = sockets[j * (d_c - 1)..(j + 1) * (d_c - 1)].to_vec();
            variables.sort_unstable();
            variables.push((k + j) as u32);
            let coefficients = (0..d_c).map(|_| field.random_nonzero(&mut rng)).collect();
            checks.push(PrecodeCheck { variables, coefficients });
        }
        Ok(Self::assemble(field, k, k_prime, d_c, seed, checks))
    }

    /// A graph with explicit checks. Variables `k..k_prime` are parity.
    pub fn from_checks(field: &Field, k: usize, k_prime: usize, checks: Vec<PrecodeCheck>) -> Result<PrecodeGraph> {
        if checks.len() != k_prime - k {
            return Err(Error::InvalidParams(format!(
                "expected {} checks, got {}",
                k_prime - k,
                checks.len()
            )));
        }
        let d_c = checks.first().map_or(0, |c| c.variables.len());
        for c in &checks {
            let mut v = c.variables.clone();
            v.sort_unstable();
            v.dedup();
            if c.variables.len() != d_c || v.len() != d_c || c.coefficients.len() != d_c {
                return Err(Error::InvalidParams("checks must have d_c distinct variables".into()));
            }
            if v.last().is_some_and(|&x| x as usize >= k_prime) || c.coefficients.iter().any(|x| x.is_zero()) {
                return Err(Error::InvalidParams("check variable out of range or zero coefficient".into()));
            }
        }
        Ok(Self::assemble(field.clone(), k, k_prime, d_c, 0, checks))
    }

    fn assemble(field: Field, k: usize, k_prime: usize, check_degree: usize, seed: u64, checks: Vec<PrecodeCheck>) -> Self {
        let mut adjacency = vec![Vec::new(); k_prime];
        for (j, c) in checks.iter().enumerate() {
            for &v in &c.variables {
                adjacency[v as usize].push(j as u32);
            }
        }
        PrecodeGraph {
            field,
            k,
            k_prime,
            check_degree,
            seed,
            checks,
            adjacency,
        }
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn source_count(&self) -> usize {
        self.k
    }

    pub fn variable_count(&self) -> usize {
        self.k_prime
    }

    pub fn check_count(&self) -> usize {
        self.checks.len()
    }

    pub fn check_degree(&self) -> usize {
        self.check_degree
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn checks(&self) -> &[PrecodeCheck] {
        &self.checks
    }

    pub fn variable_degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn syndrome(&self, check: usize, values: &[SymbolVector]) -> SymbolVector {
        let c = &self.checks[check];
        let mut acc = SymbolVector::zeros(values.first().map_or(0, SymbolVector::len));
        for (&v, &coef) in c.variables.iter().zip(&c.coefficients) {
            self.field.mul_add_assign(acc.as_mut_slice(), values[v as usize].as_slice(), coef);
        }
        acc
    }
}

/// Source endpoints for `m` checks of `per_check` sources each. Every source
/// appears `floor` or `ceil` of the mean number of times, and no check holds
/// the same source twice.
fn balanced_sockets<R: Rng + ?Sized>(k: usize, m: usize, per_check: usize, rng: &mut R) -> Vec<u32> {
    // Each check takes the `per_check` least loaded sources, ties broken at
    // random, so loads never differ by more than one.
    let mut load = vec![0u32; k];
    let mut order: Vec<(u32, u64, u32)> = Vec::with_capacity(k);
    let mut sockets = Vec::with_capacity(m * per_check);
    for _ in 0..m {
        order.clear();
        order.extend((0..k as u32).map(|v| (load[v as usize], rng.gen::<u64>(), v)));
        if per_check < k {
            order.select_nth_unstable(per_check);
        }
        for &(_, _, v) in &order[..per_check] {
            load[v as usize] += 1;
            sockets.push(v);
        }
    }
    sockets
}

/// Extends `source` (K payloads) to the K' pre-code variables.
pub fn precode_encode(source: &[SymbolVector], graph: &PrecodeGraph) -> Result<Vec<SymbolVector>> {
    let (k, k_prime) = (graph.k, graph.k_prime);
    if source.len() != k {
        return Err(Error::DimensionMismatch {
            expected: (k, 0),
            got: (source.len(), 0),
        });
    }
    let payload_len = source.first().map_or(0, SymbolVector::len);
    let mut values = source.to_vec();
    values.resize(k_prime, SymbolVector::zeros(payload_len));
    let m = k_prime - k;
    if m == 0 {
        return Ok(values);
    }
    let field = &graph.field;
    if let Some(order) = diagonal_parity(graph) {
        for (j, &(v, coef)) in order.iter().enumerate() {
            let mut x = graph.syndrome(j, &values);
            field.scale_assign(x.as_mut_slice(), field.inv(coef).expect("nonzero coefficient"));
            values[v] = x;
        }
        return Ok(values);
    }
    let mut a = Vec::with_capacity(m);
    let mut b = Vec::with_capacity(m);
    for (j, c) in graph.checks.iter().enumerate() {
        let mut row = SymbolVector::zeros(m);
        for (&v, &coef) in c.variables.iter().zip(&c.coefficients) {
            if v as usize >= k {
                row[v as usize - k] = coef;
            }
        }
        a.push(row);
        b.push(graph.syndrome(j, &values));
    }
    let parity = matrix_solve(field, &a, &b).map_err(|e| match e {
        Error::Singular => Error::PrecodeSingular,
        e => e,
    })?;
    for (slot, p) in values[k..].iter_mut().zip(parity) {
        *slot = p;
    }
    Ok(values)
}

/// When every check holds exactly one parity variable and no two share one,
/// returns that `(variable, coefficient)` per check.
fn diagonal_parity(graph: &PrecodeGraph) -> Option<Vec<(usize, FieldElement)>> {
    let mut seen = vec![false; graph.checks.len()];
    let mut order = Vec::with_capacity(graph.checks.len());
    for c in &graph.checks {
        let mut parity = c.variables.iter().zip(&c.coefficients).filter(|(&v, _)| v as usize >= graph.k);
        let (&v, &coef) = parity.next()?;
        if parity.next().is_some() || std::mem::replace(&mut seen[v as usize - graph.k], true) {
            return None;
        }
        order.push((v as usize, coef));
    }
    Some(order)
}

/// Which pre-code variables the decoder already holds.
#[derive(Debug, Clone)]
pub struct ErasurePattern {
    values: Vec<Option<SymbolVector>>,
}

impl ErasurePattern {
    pub fn new(variable_count: usize) -> Self {
        ErasurePattern {
            values: vec![None; variable_count],
        }
    }

    /// Keeps the entries of `values` where `known` is set.
    pub fn from_mask(values: &[SymbolVector], known: &[bool]) -> Self {
        ErasurePattern {
            values: values.iter().zip(known).map(|(v, &k)| k.then(|| v.clone())).collect(),
        }
    }

    pub fn set(&mut self, variable: usize, value: SymbolVector) {
        self.values[variable] = Some(value);
    }

    pub fn get(&self, variable: usize) -> Option<&SymbolVector> {
        self.values[variable].as_ref()
    }

    pub fn is_known(&self, variable: usize) -> bool {
        self.values[variable].is_some()
    }

    pub fn known_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PrecodeOutcome {
    /// All sources known. `recovered` counts variables filled in by decoding.
    Recovered { source: Vec<SymbolVector>, recovered: usize },
    /// Sources still unknown after peeling and elimination.
    Stalled { unknown: usize },
}

/// Peeling, then elimination on the residual system when at most
/// `elimination_cap` variables remain unknown. A cap of 0 means peeling only.
pub fn precode_decode(pattern: &ErasurePattern, graph: &PrecodeGraph, elimination_cap: usize) -> PrecodeOutcome {
    let field = &graph.field;
    let k = graph.k;
    let mut values = pattern.values.clone();
    let payload_len = values.iter().flatten().next().map_or(0, SymbolVector::len);
    let m = graph.checks.len();

    // Per check: unknown neighbour count and the sum over known neighbours.
    let mut open = vec![0usize; m];
    let mut partial = vec![SymbolVector::zeros(payload_len); m];
    for (j, c) in graph.checks.iter().enumerate() {
        for (&v, &coef) in c.variables.iter().zip(&c.coefficients) {
            match &values[v as usize] {
                Some(x) => field.mul_add_assign(partial[j].as_mut_slice(), x.as_slice(), coef),
                None => open[j] += 1,
            }
        }
    }
    let mut recovered = 0;
    let mut queue: VecDeque<usize> = (0..m).filter(|&j| open[j] == 1).collect();
    while let Some(j) = queue.pop_front() {
        if open[j] != 1 {
            continue;
        }
        let c = &graph.checks[j];
        let (pos, &v) = c
            .variables
            .iter()
            .enumerate()
            .find(|(_, &v)| values[v as usize].is_none())
            .expect("one open neighbour");
        let mut x = partial[j].clone();
        field.scale_assign(x.as_mut_slice(), field.inv(c.coefficients[pos]).expect("nonzero coefficient"));
        assign(graph, &mut values, &mut open, &mut partial, &mut queue, v as usize, x);
        recovered += 1;
    }

    let unknown: Vec<usize> = (0..graph.k_prime).filter(|&v| values[v].is_none()).collect();
    let unknown_sources = unknown.iter().take_while(|&&v| v < k).count();
    let open_checks = open.iter().filter(|&&c| c > 0).count();
    // Fewer equations than unknown sources cannot pin them all down.
    if unknown_sources > 0 && unknown_sources <= open_checks && unknown.len() <= elimination_cap {
        let mut col = vec![usize::MAX; graph.k_prime];
        for (i, &v) in unknown.iter().enumerate() {
            col[v] = i;
        }
        let mut state = EliminationState::new(field.clone(), unknown.len(), payload_len);
        let mut row = vec![FieldElement::ZERO; unknown.len()];
        for (j, c) in graph.checks.iter().enumerate() {
            if open[j] == 0 {
                continue;
            }
            row.iter_mut().for_each(|x| *x = FieldElement::ZERO);
            for (&v, &coef) in c.variables.iter().zip(&c.coefficients) {
                if col[v as usize] != usize::MAX {
                    row[col[v as usize]] = coef;
                }
            }
            state.insert(&row, partial[j].as_slice()).expect("dimensions match");
            if state.is_full_rank() {
                break;
            }
        }
        for (i, x) in state.determined() {
            values[unknown[i]] = Some(x);
            recovered += 1;
        }
    }

    let missing = values[..k].iter().filter(|v| v.is_none()).count();
    if missing > 0 {
        return PrecodeOutcome::Stalled { unknown: missing };
    }
    values.truncate(k);
    PrecodeOutcome::Recovered {
        source: values.into_iter().map(|v| v.expect("known")).collect(),
        recovered,
    }
}

fn assign(
    graph: &PrecodeGraph,
    values: &mut [Option<SymbolVector>],
    open: &mut [usize],
    partial: &mut [SymbolVector],
    queue: &mut VecDeque<usize>,
    v: usize,
    x: SymbolVector,
) {
    for &j in &graph.adjacency[v] {
        let j = j as usize;
        let c = &graph.checks[j];
        let pos = c.variables.iter().position(|&w| w as usize == v).expect("adjacent");
        graph.field.mul_add_assign(partial[j].as_mut_slice(), x.as_slice(), c.coefficients[pos]);
        open[j] -= 1;
        if open[j] == 1 {
            queue.push_back(j);
        }
    }
    values[v] = Some(x);
}
