//! The random linear outer code.
//!
//! Each of the `M = N - K'` checks is a zero-syndrome constraint over every
//! slot of `i` distinct generations, with `i` drawn from the check degree
//! distribution `P(x) = Σ p_i x^i`. Parity slot values are fixed by solving
//! the `M×M` system restricted to parity columns. During decoding a check
//! whose generations are all decoded but one yields one extra equation for
//! that generation.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gf::{EliminationState, Field, FieldElement, InsertOutcome, SymbolVector};
use crate::rng;
use crate::srlnc::{BlockLayout, SlotRole};

const SUM_TOLERANCE: f64 = 1e-12;
const COEFFICIENT_ATTEMPTS: usize = 100;
const MEMBERSHIP_ATTEMPTS: usize = 100;

/// Check generation-degree distribution `P(x) = Σ_{i≥2} p_i x^i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistributionJson", into = "DistributionJson")]
pub struct DegreeDistribution {
    entries: Vec<(usize, f64)>,
}

#[derive(Serialize, Deserialize)]
struct DistributionJson {
    degrees: Vec<(usize, f64)>,
}

impl TryFrom<DistributionJson> for DegreeDistribution {
    type Error = Error;

    fn try_from(json: DistributionJson) -> Result<Self> {
        DegreeDistribution::new(json.degrees)
    }
}

impl From<DegreeDistribution> for DistributionJson {
    fn from(d: DegreeDistribution) -> Self {
        DistributionJson { degrees: d.entries }
    }
}

impl DegreeDistribution {
    /// `entries` are `(degree, probability)` pairs with strictly increasing
    /// degrees, all at least 2, summing to one.
    pub fn new(entries: Vec<(usize, f64)>) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidDistribution(msg));
        if entries.is_empty() {
            return bad("no degrees given".into());
        }
        for w in entries.windows(2) {
            if w[1].0 <= w[0].0 {
                return bad(format!("degrees must be strictly increasing ({} after {})", w[1].0, w[0].0));
            }
        }
        if let Some(&(d, _)) = entries.iter().find(|(d, _)| *d < 2) {
            return bad(format!("degree {d} is below the minimum of 2"));
        }
        if let Some(&(d, p)) = entries.iter().find(|(_, p)| !(p.is_finite() && *p >= 0.0)) {
            return bad(format!("probability {p} for degree {d} is not a nonnegative number"));
        }
        let sum: f64 = entries.iter().map(|(_, p)| p).sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return bad(format!("probabilities sum to {sum}, expected 1"));
        }
        Ok(DegreeDistribution { entries })
    }

    /// Point mass on one degree.
    pub fn single(degree: usize) -> Result<Self> {
        DegreeDistribution::new(vec![(degree, 1.0)])
    }

    /// Builds a distribution from raw weights, dropping nonpositive entries
    /// and renormalising. Used for solver output, which is only feasible to
    /// within rounding.
    pub fn from_weights(weights: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let kept: Vec<(usize, f64)> = weights.into_iter().filter(|&(_, p)| p > 0.0).collect();
        let sum: f64 = kept.iter().map(|(_, p)| p).sum();
        if kept.is_empty() || sum <= 0.0 {
            return Err(Error::InvalidDistribution("all weights are zero".into()));
        }
        DegreeDistribution::new(kept.into_iter().map(|(d, p)| (d, p / sum)).collect())
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn max_degree(&self) -> usize {
        self.entries.last().expect("nonempty").0
    }

    pub fn probability(&self, degree: usize) -> f64 {
        self.entries
            .iter()
            .find(|(d, _)| *d == degree)
            .map_or(0.0, |(_, p)| *p)
    }

    /// `P(x)`.
    pub fn eval(&self, x: f64) -> f64 {
        self.entries.iter().map(|&(i, p)| p * x.powi(i as i32)).sum()
    }

    /// `P'(x)`.
    pub fn derivative(&self, x: f64) -> f64 {
        self.entries
            .iter()
            .map(|&(i, p)| i as f64 * p * x.powi(i as i32 - 1))
            .sum()
    }

    /// Average check degree `P'(1)`.
    pub fn mean_degree(&self) -> f64 {
        self.derivative(1.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for &(d, p) in &self.entries {
            acc += p;
            if u < acc {
                return d;
            }
        }
        self.max_degree()
    }
}

/// One zero-syndrome constraint over all slots of its generations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckSpec {
    pub id: u32,
    /// Distinct generation indices, ascending.
    pub generations: Vec<u32>,
    /// `g` coefficients per involved generation, in `generations` order.
    pub coefficients: Vec<FieldElement>,
}

impl CheckSpec {
    pub fn degree(&self) -> usize {
        self.generations.len()
    }

    /// The width-`g` coefficient row on the `k`-th involved generation.
    pub fn row(&self, k: usize, g: usize) -> &[FieldElement] {
        &self.coefficients[k * g..(k + 1) * g]
    }

    /// `Σ coeff · slot` over every involved slot of a complete block.
    pub fn syndrome(&self, field: &Field, slots: &[SymbolVector], g: usize) -> SymbolVector {
        let len = slots.first().map_or(0, SymbolVector::len);
        let mut acc = SymbolVector::zeros(len);
        for (k, &gen) in self.generations.iter().enumerate() {
            let base = gen as usize * g;
            for (j, &c) in self.row(k, g).iter().enumerate() {
                field.mul_add_assign(acc.as_mut_slice(), slots[base + j].as_slice(), c);
            }
        }
        acc
    }
}

/// Coefficients for `degree` generations of `g` slots. Over GF(2) a nonzero
/// coefficient is always 1, which would give every check the same row on a
/// generation; there each row is uniform over nonzero binary vectors instead.
fn draw_coefficients<R: Rng + ?Sized>(field: &Field, degree: usize, g: usize, rng: &mut R) -> Vec<FieldElement> {
    if field.is_binary() {
        let mut out = Vec::with_capacity(degree * g);
        for _ in 0..degree {
            loop {
                let row: Vec<FieldElement> = (0..g).map(|_| field.random(rng)).collect();
                if row.iter().any(|c| !c.is_zero()) {
                    out.extend(row);
                    break;
                }
            }
        }
        out
    } else {
        (0..degree * g).map(|_| field.random_nonzero(rng)).collect()
    }
}

fn draw_generations<R: Rng + ?Sized>(n: usize, degree: usize, rng: &mut R) -> Vec<u32> {
    let mut gens: Vec<u32> = index::sample(rng, n, degree).into_iter().map(|i| i as u32).collect();
    gens.sort_unstable();
    gens
}

/// Like [`draw_generations`], but one member is forced to be a generation
/// that still owns a parity column without a pivot, so the redrawn check can
/// raise the rank of the parity system.
fn draw_covering_generations<R: Rng + ?Sized>(
    layout: &BlockLayout,
    rank: &EliminationState,
    degree: usize,
    rng: &mut R,
) -> Vec<u32> {
    let n = layout.generations();
    let deficient: Vec<usize> = (0..n)
        .filter(|&gen| {
            layout.slots_of(gen).any(|slot| match layout.role(slot) {
                SlotRole::Parity(j) => !rank.has_pivot(j as usize),
                SlotRole::Systematic(_) => false,
            })
        })
        .collect();
    let Some(&forced) = deficient.get(rng.gen_range(0..deficient.len().max(1))) else {
        return draw_generations(n, degree, rng);
    };
    let mut gens: Vec<u32> = index::sample(rng, n - 1, degree - 1)
        .into_iter()
        .map(|i| if i >= forced { i + 1 } else { i } as u32)
        .collect();
    gens.push(forced as u32);
    gens.sort_unstable();
    gens
}

/// Draws one check: degree from `dist`, distinct generations uniformly
/// without replacement, coefficients over every involved slot.
pub fn sample_check<R: Rng + ?Sized>(
    field: &Field,
    dist: &DegreeDistribution,
    n: usize,
    g: usize,
    id: u32,
    rng: &mut R,
) -> Result<CheckSpec> {
    let degree = dist.sample(rng);
    if degree > n {
        return Err(Error::DegreeExceedsGenerations {
            degree,
            generations: n,
        });
    }
    let generations = draw_generations(n, degree, rng);
    let coefficients = draw_coefficients(field, degree, g, rng);
    Ok(CheckSpec {
        id,
        generations,
        coefficients,
    })
}

/// The full outer code: `M` checks plus a generation → checks index.
#[derive(Debug, Clone)]
pub struct OuterCode {
    field: Field,
    g: usize,
    seed: u64,
    checks: Vec<CheckSpec>,
    incident: Vec<Vec<u32>>,
    resampled: usize,
}

impl OuterCode {
    /// Samples `M` checks and resamples any check whose parity-column row is
    /// dependent on the rows before it, so that parity encoding always has a
    /// unique solution. Deterministic in `(layout, dist, field, seed)`.
    pub fn build(layout: &BlockLayout, dist: &DegreeDistribution, field: &Field, seed: u64) -> Result<OuterCode> {
        let n = layout.generations();
        let g = layout.g();
        let m = layout.parity_slots().len();
        if m > 0 && dist.max_degree() > n {
            return Err(Error::DegreeExceedsGenerations {
                degree: dist.max_degree(),
                generations: n,
            });
        }
        let mut rng = rng::stream(seed, rng::STREAM_OUTER);
        let mut checks = Vec::with_capacity(m);
        for id in 0..m {
            checks.push(sample_check(field, dist, n, g, id as u32, &mut rng)?);
        }

        let mut resampled = 0;
        let mut rank = EliminationState::new(field.clone(), m, 0);
        let mut row = vec![FieldElement::ZERO; m];
        for check in checks.iter_mut() {
            let mut attempts = 0;
            loop {
                parity_row(check, layout, &mut row);
                if rank.insert(&row, &[])? == InsertOutcome::Innovative {
                    break;
                }
                attempts += 1;
                resampled += 1;
                if attempts > COEFFICIENT_ATTEMPTS + MEMBERSHIP_ATTEMPTS {
                    return Err(Error::EncodingSingular {
                        check: check.id as usize,
                    });
                }
                if attempts > COEFFICIENT_ATTEMPTS {
                    check.generations = draw_covering_generations(layout, &rank, check.degree(), &mut rng);
                }
                check.coefficients = draw_coefficients(field, check.degree(), g, &mut rng);
            }
        }

        let mut incident = vec![Vec::new(); n];
        for check in &checks {
            for &gen in &check.generations {
                incident[gen as usize].push(check.id);
            }
        }
        Ok(OuterCode {
            field: field.clone(),
            g,
            seed,
            checks,
            incident,
            resampled,
        })
    }

    pub fn checks(&self) -> &[CheckSpec] {
        &self.checks
    }

    pub fn check(&self, id: u32) -> &CheckSpec {
        &self.checks[id as usize]
    }

    /// Checks touching a generation.
    pub fn incident(&self, generation: usize) -> &[u32] {
        &self.incident[generation]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn g(&self) -> usize {
        self.g
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    /// How many check draws were rejected during construction.
    pub fn resampled(&self) -> usize {
        self.resampled
    }
}

/// Dense row of a check over the parity columns (indexed by parity number).
fn parity_row(check: &CheckSpec, layout: &BlockLayout, row: &mut [FieldElement]) {
    row.iter_mut().for_each(|c| *c = FieldElement::ZERO);
    let g = layout.g();
    for (k, &gen) in check.generations.iter().enumerate() {
        let coeffs = check.row(k, g);
        for slot in layout.slots_of(gen as usize) {
            if let SlotRole::Parity(j) = layout.role(slot) {
                row[j as usize] = coeffs[slot % g];
            }
        }
    }
}

/// Places the `K'` systematic values into the block and solves for parity so
/// that every check has zero syndrome.
pub fn outer_encode(systematic: &[SymbolVector], code: &OuterCode, layout: &BlockLayout) -> Result<Vec<SymbolVector>> {
    let field = code.field();
    let g = layout.g();
    if systematic.len() != layout.systematic_slots().len() {
        return Err(Error::DimensionMismatch {
            expected: (layout.systematic_slots().len(), 0),
            got: (systematic.len(), 0),
        });
    }
    let payload_len = systematic.first().map_or(0, SymbolVector::len);
    let mut slots = vec![SymbolVector::zeros(payload_len); layout.n_slots()];
    for (value, &slot) in systematic.iter().zip(layout.systematic_slots()) {
        slots[slot as usize] = value.clone();
    }
    let m = layout.parity_slots().len();
    if m == 0 {
        return Ok(slots);
    }

    // Parity slots are still zero, so each syndrome is the systematic part,
    // which is also the right-hand side (characteristic 2).
    let mut state = EliminationState::new(field.clone(), m, payload_len);
    let mut row = vec![FieldElement::ZERO; m];
    for check in code.checks() {
        parity_row(check, layout, &mut row);
        let rhs = check.syndrome(field, &slots, g);
        state.insert(&row, rhs.as_slice())?;
    }
    let parity = state.solution().ok_or(Error::EncodingSingular { check: state.rank() })?;
    for (value, &slot) in parity.into_iter().zip(layout.parity_slots()) {
        slots[slot as usize] = value;
    }
    Ok(slots)
}

/// An extra equation over one generation's `g` slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReleasedEquation {
    pub check: u32,
    pub generation: u32,
    pub coefficients: SymbolVector,
    pub rhs: SymbolVector,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Release {
    Equation(ReleasedEquation),
    /// Two or more involved generations are still undecoded.
    NotReady,
    /// Every involved generation is decoded.
    Spent,
}

/// Substitutes the decoded generations of `check`. `decoded(gen)` returns the
/// slot values of a decoded generation and `None` for an open one.
pub fn try_release<'a, F>(field: &Field, check: &CheckSpec, g: usize, decoded: F) -> Release
where
    F: Fn(u32) -> Option<&'a [SymbolVector]>,
{
    let mut open = None;
    for (k, &gen) in check.generations.iter().enumerate() {
        if decoded(gen).is_none() {
            if open.is_some() {
                return Release::NotReady;
            }
            open = Some(k);
        }
    }
    let Some(open) = open else {
        return Release::Spent;
    };
    let mut rhs: Option<SymbolVector> = None;
    for (k, &gen) in check.generations.iter().enumerate() {
        if k == open {
            continue;
        }
        let values = decoded(gen).expect("decoded");
        let acc = rhs.get_or_insert_with(|| SymbolVector::zeros(values.first().map_or(0, SymbolVector::len)));
        for (c, v) in check.row(k, g).iter().zip(values) {
            field.mul_add_assign(acc.as_mut_slice(), v.as_slice(), *c);
        }
    }
    Release::Equation(ReleasedEquation {
        check: check.id,
        generation: check.generations[open],
        coefficients: SymbolVector(check.row(open, g).to_vec()),
        rhs: rhs.expect("checks touch at least two generations"),
    })
}
