//! Incremental Gauss-Jordan elimination over GF(2^m).
//!
//! Rows are stored augmented: `width` coefficient columns followed by the
//! right-hand side. The row set is kept in reduced row-echelon form after
//! every insert, so the decoder gets an innovative/redundant verdict per
//! equation. Over GF(2) rows are bit-packed into `u64` words and every row
//! operation is a word-wise XOR.

use super::{Field, FieldElement, SymbolVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Innovative,
    Redundant,
}

#[derive(Debug, Clone)]
enum RowStore {
    Binary {
        words: usize,
        data: Vec<u64>,
        pivot_mask: Vec<u64>,
        scratch: Vec<u64>,
    },
    Symbols {
        data: Vec<FieldElement>,
        scratch: Vec<FieldElement>,
    },
}

#[derive(Debug, Clone)]
pub struct EliminationState {
    field: Field,
    width: usize,
    payload_len: usize,
    store: RowStore,
    /// Pivot column of each stored row.
    pivots: Vec<usize>,
    /// Row holding the pivot for each column.
    row_of_col: Vec<Option<u32>>,
}

#[inline]
fn get_bit(words: &[u64], i: usize) -> bool {
    words[i >> 6] >> (i & 63) & 1 == 1
}

#[inline]
fn xor_into(dst: &mut [u64], src: &[u64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d ^= s;
    }
}

impl EliminationState {
    pub fn new(field: Field, width: usize, payload_len: usize) -> Self {
        let stride = width + payload_len;
        let store = if field.is_binary() {
            let words = stride.div_ceil(64);
            RowStore::Binary {
                words,
                data: Vec::new(),
                pivot_mask: vec![0; width.div_ceil(64)],
                scratch: vec![0; words],
            }
        } else {
            RowStore::Symbols {
                data: Vec::new(),
                scratch: vec![FieldElement::ZERO; stride],
            }
        };
        EliminationState {
            field,
            width,
            payload_len,
            store,
            pivots: Vec::new(),
            row_of_col: vec![None; width],
        }
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn payload_len(&self) -> usize {
        self.payload_len
    }

    pub fn rank(&self) -> usize {
        self.pivots.len()
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank() == self.width
    }

    pub fn has_pivot(&self, col: usize) -> bool {
        self.row_of_col[col].is_some()
    }

    /// Reduces `(coefficients | rhs)` against the current pivots and installs
    /// a new pivot if anything survives.
    pub fn insert(&mut self, coefficients: &[FieldElement], rhs: &[FieldElement]) -> Result<InsertOutcome> {
        if coefficients.len() != self.width || rhs.len() != self.payload_len {
            return Err(Error::DimensionMismatch {
                expected: (self.width, self.payload_len),
                got: (coefficients.len(), rhs.len()),
            });
        }
        if self.is_full_rank() {
            return Ok(InsertOutcome::Redundant);
        }
        let width = self.width;
        let stride = width + self.payload_len;
        let field = self.field.clone();
        let pivot = match &mut self.store {
            RowStore::Binary {
                words,
                data,
                pivot_mask,
                scratch,
            } => {
                let words = *words;
                scratch.iter_mut().for_each(|w| *w = 0);
                for (i, c) in coefficients.iter().chain(rhs).enumerate() {
                    debug_assert!(c.0 <= 1, "non-binary symbol in GF(2) row");
                    if c.0 & 1 == 1 {
                        scratch[i >> 6] |= 1 << (i & 63);
                    }
                }
                // Pivot rows are zero in every other pivot column, so only the
                // pivot bits present in the incoming row need clearing.
                for (wi, &mask) in pivot_mask.iter().enumerate() {
                    let mut hits = scratch[wi] & mask;
                    while hits != 0 {
                        let col = wi * 64 + hits.trailing_zeros() as usize;
                        hits &= hits - 1;
                        let r = self.row_of_col[col].expect("pivot mask in sync") as usize;
                        xor_into(scratch, &data[r * words..(r + 1) * words]);
                    }
                }
                let lead = (0..width.div_ceil(64)).find_map(|wi| {
                    let mut w = scratch[wi];
                    if wi == width / 64 && width % 64 != 0 {
                        w &= (1u64 << (width % 64)) - 1;
                    }
                    (w != 0).then(|| wi * 64 + w.trailing_zeros() as usize)
                });
                let Some(p) = lead else {
                    return Ok(InsertOutcome::Redundant);
                };
                let rows = self.pivots.len();
                for r in 0..rows {
                    if get_bit(&data[r * words..(r + 1) * words], p) {
                        xor_into(&mut data[r * words..(r + 1) * words], scratch);
                    }
                }
                data.extend_from_slice(scratch);
                pivot_mask[p >> 6] |= 1 << (p & 63);
                p
            }
            RowStore::Symbols { data, scratch } => {
                scratch[..width].copy_from_slice(coefficients);
                scratch[width..].copy_from_slice(rhs);
                for col in 0..width {
                    let c = scratch[col];
                    if c.is_zero() {
                        continue;
                    }
                    if let Some(r) = self.row_of_col[col] {
                        let r = r as usize;
                        field.mul_add_assign(scratch, &data[r * stride..(r + 1) * stride], c);
                    }
                }
                let Some(p) = (0..width).find(|&c| !scratch[c].is_zero()) else {
                    return Ok(InsertOutcome::Redundant);
                };
                let inv = field.inv(scratch[p])?;
                field.scale_assign(scratch, inv);
                let rows = self.pivots.len();
                for r in 0..rows {
                    let row = &mut data[r * stride..(r + 1) * stride];
                    let c = row[p];
                    if !c.is_zero() {
                        field.mul_add_assign(row, scratch, c);
                    }
                }
                data.extend_from_slice(scratch);
                p
            }
        };
        self.row_of_col[pivot] = Some(self.pivots.len() as u32);
        self.pivots.push(pivot);
        Ok(InsertOutcome::Innovative)
    }

    /// The `i`-th stored row as `(coefficients, rhs)`.
    pub fn row(&self, i: usize) -> (SymbolVector, SymbolVector) {
        let stride = self.width + self.payload_len;
        let full: Vec<FieldElement> = match &self.store {
            RowStore::Binary { words, data, .. } => {
                let row = &data[i * words..(i + 1) * words];
                (0..stride).map(|c| FieldElement(get_bit(row, c) as u16)).collect()
            }
            RowStore::Symbols { data, .. } => data[i * stride..(i + 1) * stride].to_vec(),
        };
        let rhs = full[self.width..].to_vec();
        let mut coeffs = full;
        coeffs.truncate(self.width);
        (SymbolVector(coeffs), SymbolVector(rhs))
    }

    pub fn pivot_columns(&self) -> &[usize] {
        &self.pivots
    }

    fn row_rhs(&self, r: usize) -> SymbolVector {
        let stride = self.width + self.payload_len;
        match &self.store {
            RowStore::Binary { words, data, .. } => {
                let row = &data[r * words..(r + 1) * words];
                SymbolVector(
                    (self.width..stride)
                        .map(|c| FieldElement(get_bit(row, c) as u16))
                        .collect(),
                )
            }
            RowStore::Symbols { data, .. } => SymbolVector(data[r * stride + self.width..(r + 1) * stride].to_vec()),
        }
    }

    fn row_is_singleton(&self, r: usize) -> bool {
        let p = self.pivots[r];
        let stride = self.width + self.payload_len;
        match &self.store {
            RowStore::Binary { words, data, .. } => {
                let row = &data[r * words..(r + 1) * words];
                (0..self.width).all(|c| c == p || !get_bit(row, c))
            }
            RowStore::Symbols { data, .. } => data[r * stride..r * stride + self.width]
                .iter()
                .enumerate()
                .all(|(c, v)| c == p || v.is_zero()),
        }
    }

    /// Unknowns whose value is already pinned down: pivot rows with no other
    /// nonzero coefficient.
    pub fn determined(&self) -> Vec<(usize, SymbolVector)> {
        (0..self.rank())
            .filter(|&r| self.row_is_singleton(r))
            .map(|r| (self.pivots[r], self.row_rhs(r)))
            .collect()
    }

    /// The unique solution, one vector per unknown in column order, or `None`
    /// while the system is not full rank.
    pub fn solution(&self) -> Option<Vec<SymbolVector>> {
        if !self.is_full_rank() {
            return None;
        }
        Some(
            (0..self.width)
                .map(|c| self.row_rhs(self.row_of_col[c].expect("full rank") as usize))
                .collect(),
        )
    }
}

/// Solves `a·X = b` for square `a` (M×M) and `b` (M×L).
pub fn matrix_solve(field: &Field, a: &[SymbolVector], b: &[SymbolVector]) -> Result<Vec<SymbolVector>> {
    let m = a.len();
    let payload = b.first().map_or(0, SymbolVector::len);
    if b.len() != m {
        return Err(Error::DimensionMismatch {
            expected: (m, payload),
            got: (b.len(), payload),
        });
    }
    let mut state = EliminationState::new(field.clone(), m, payload);
    for (row, rhs) in a.iter().zip(b) {
        state.insert(row.as_slice(), rhs.as_slice())?;
    }
    state.solution().ok_or(Error::Singular)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sv(v: &[u16]) -> SymbolVector {
        SymbolVector::from_values(v.iter().copied())
    }

    fn gf(m: u8) -> Field {
        Field::new(m).unwrap()
    }

    /// Independent rank oracle: textbook elimination on a copy of the rows.
    fn oracle_rank(field: &Field, rows: &[Vec<FieldElement>]) -> usize {
        let mut rows: Vec<Vec<FieldElement>> = rows.to_vec();
        let width = rows.first().map_or(0, Vec::len);
        let mut rank = 0;
        for col in 0..width {
            let Some(pr) = (rank..rows.len()).find(|&r| !rows[r][col].is_zero()) else {
                continue;
            };
            rows.swap(rank, pr);
            let inv = field.inv(rows[rank][col]).unwrap();
            let pivot: Vec<FieldElement> = rows[rank].iter().map(|&x| field.mul(x, inv)).collect();
            for r in 0..rows.len() {
                if r != rank {
                    let c = rows[r][col];
                    for k in 0..width {
                        rows[r][k] = field.add(rows[r][k], field.mul(c, pivot[k]));
                    }
                }
            }
            rank += 1;
        }
        rank
    }

    #[test]
    fn unit_row_then_duplicate() {
        for m in [1, 8] {
            let mut s = EliminationState::new(gf(m), 4, 1);
            assert_eq!(s.insert(&sv(&[1, 0, 0, 0]).0, &sv(&[1]).0).unwrap(), InsertOutcome::Innovative);
            assert_eq!(s.rank(), 1);
            assert_eq!(s.insert(&sv(&[1, 0, 0, 0]).0, &sv(&[1]).0).unwrap(), InsertOutcome::Redundant);
            assert_eq!(s.rank(), 1);
        }
    }

    #[test]
    fn gf2_width_two_sequence() {
        let mut s = EliminationState::new(gf(1), 2, 0);
        let seq: Vec<_> = [[1, 1], [0, 1], [1, 0]]
            .iter()
            .map(|r| s.insert(&sv(r).0, &[]).unwrap())
            .collect();
        assert_eq!(
            seq,
            [InsertOutcome::Innovative, InsertOutcome::Innovative, InsertOutcome::Redundant]
        );
    }

    #[test]
    fn dimension_mismatch() {
        let mut s = EliminationState::new(gf(8), 3, 2);
        assert!(matches!(
            s.insert(&sv(&[1, 2]).0, &sv(&[0, 0]).0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            s.insert(&sv(&[1, 2, 3]).0, &sv(&[0]).0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn solution_cases() {
        let mut s = EliminationState::new(gf(8), 1, 2);
        s.insert(&sv(&[1]).0, &sv(&[7, 9]).0).unwrap();
        assert_eq!(s.solution().unwrap(), vec![sv(&[7, 9])]);

        let mut s = EliminationState::new(gf(8), 2, 1);
        s.insert(&sv(&[3, 4]).0, &sv(&[1]).0).unwrap();
        assert!(s.solution().is_none());

        // Hand elimination over GF(2): x3 = c, x2 = b + c, x1 = a + b + c.
        let (a, b, c) = (1u16, 0u16, 1u16);
        let mut s = EliminationState::new(gf(1), 3, 1);
        s.insert(&sv(&[1, 1, 0]).0, &sv(&[a]).0).unwrap();
        s.insert(&sv(&[0, 1, 1]).0, &sv(&[b]).0).unwrap();
        s.insert(&sv(&[0, 0, 1]).0, &sv(&[c]).0).unwrap();
        assert_eq!(s.solution().unwrap(), vec![sv(&[a ^ b ^ c]), sv(&[b ^ c]), sv(&[c])]);
    }

    #[test]
    fn rows_stay_in_rref() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in [1, 4, 8] {
            let f = gf(m);
            let mut s = EliminationState::new(f.clone(), 9, 2);
            for _ in 0..12 {
                let c = f.random_vector(9, &mut rng);
                let r = f.random_vector(2, &mut rng);
                s.insert(c.as_slice(), r.as_slice()).unwrap();
                for (i, &p) in s.pivot_columns().iter().enumerate() {
                    for j in 0..s.rank() {
                        let (coeffs, _) = s.row(j);
                        let expect = if i == j { FieldElement::ONE } else { FieldElement::ZERO };
                        assert_eq!(coeffs[p], expect);
                    }
                }
            }
        }
    }

    #[test]
    fn matrix_solve_cases() {
        let f = gf(8);
        let id = vec![sv(&[1, 0]), sv(&[0, 1])];
        let b = vec![sv(&[5, 6]), sv(&[7, 8])];
        assert_eq!(matrix_solve(&f, &id, &b).unwrap(), b);

        let g2 = gf(1);
        let a = vec![sv(&[1, 1]), sv(&[0, 1])];
        let b = vec![sv(&[1, 0]), sv(&[1, 1])];
        let x = matrix_solve(&g2, &a, &b).unwrap();
        for (row, rhs) in a.iter().zip(&b) {
            for k in 0..2 {
                let col: Vec<FieldElement> = x.iter().map(|v| v[k]).collect();
                assert_eq!(g2.dot(row.as_slice(), &col), rhs[k]);
            }
        }

        let zero = vec![sv(&[0, 0]), sv(&[0, 0])];
        assert!(matches!(matrix_solve(&f, &zero, &b), Err(Error::Singular)));
    }

    #[test]
    fn gf2_two_by_two_full_rank_fraction() {
        let f = gf(1);
        let mut full = 0;
        for bits in 0u16..16 {
            let mut s = EliminationState::new(f.clone(), 2, 0);
            for r in 0..2 {
                let row = sv(&[bits >> (2 * r) & 1, bits >> (2 * r + 1) & 1]);
                s.insert(row.as_slice(), &[]).unwrap();
            }
            full += s.is_full_rank() as u32;
        }
        assert_eq!(full, 6);
        let product: f64 = (1..=2).map(|i| 1.0 - 0.5f64.powi(i)).product();
        assert_eq!(full as f64 / 16.0, product);
    }

    #[test]
    fn wide_binary_rows_cross_word_boundaries() {
        let f = gf(1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let width = 150;
        let mut s = EliminationState::new(f.clone(), width, 70);
        let mut rows = Vec::new();
        let truth: Vec<SymbolVector> = (0..width).map(|_| f.random_vector(70, &mut rng)).collect();
        while !s.is_full_rank() {
            let c = f.random_vector(width, &mut rng);
            let mut rhs = SymbolVector::zeros(70);
            for (k, t) in truth.iter().enumerate() {
                f.mul_add_assign(rhs.as_mut_slice(), t.as_slice(), c[k]);
            }
            s.insert(c.as_slice(), rhs.as_slice()).unwrap();
            rows.push(c.0);
            assert_eq!(s.rank(), oracle_rank(&f, &rows));
        }
        assert_eq!(s.solution().unwrap(), truth);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn rank_matches_oracle(seed in any::<u64>(), width in 1usize..=12, binary in any::<bool>()) {
            let f = gf(if binary { 1 } else { 8 });
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = EliminationState::new(f.clone(), width, 1);
            let mut rows = Vec::new();
            for _ in 0..(width + 4) {
                // Sparse rows make dependencies common.
                let c = SymbolVector((0..width).map(|_| if rng.gen_bool(0.35) { f.random(&mut rng) } else { FieldElement::ZERO }).collect());
                let before = s.rank();
                let out = s.insert(c.as_slice(), &[FieldElement::ZERO]).unwrap();
                rows.push(c.0);
                prop_assert_eq!(s.rank(), oracle_rank(&f, &rows));
                prop_assert_eq!(out == InsertOutcome::Innovative, s.rank() == before + 1);
            }
        }

        #[test]
        fn solution_satisfies_every_equation(seed in any::<u64>(), width in 1usize..=10, binary in any::<bool>()) {
            let f = gf(if binary { 1 } else { 8 });
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth: Vec<SymbolVector> = (0..width).map(|_| f.random_vector(3, &mut rng)).collect();
            let mut s = EliminationState::new(f.clone(), width, 3);
            let mut eqs = Vec::new();
            while !s.is_full_rank() {
                let c = f.random_vector(width, &mut rng);
                let mut rhs = SymbolVector::zeros(3);
                for (k, t) in truth.iter().enumerate() {
                    f.mul_add_assign(rhs.as_mut_slice(), t.as_slice(), c[k]);
                }
                s.insert(c.as_slice(), rhs.as_slice()).unwrap();
                eqs.push((c, rhs));
            }
            let x = s.solution().unwrap();
            for (c, rhs) in &eqs {
                let mut acc = SymbolVector::zeros(3);
                for (k, xk) in x.iter().enumerate() {
                    f.mul_add_assign(acc.as_mut_slice(), xk.as_slice(), c[k]);
                }
                prop_assert_eq!(&acc, rhs);
            }
        }
    }
}
