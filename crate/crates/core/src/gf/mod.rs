//! Arithmetic over the binary extension fields GF(2^m), m ∈ {1, 4, 8, 16}.
//!
//! Every field is table driven: `exp`/`log` tables are built once per `m` and
//! shared behind an `Arc`, so cloning a [`Field`] is cheap. Addition is XOR in
//! all of these fields, and so is subtraction.

mod elimination;

pub use elimination::{matrix_solve, EliminationState, InsertOutcome};

use std::fmt;
use std::sync::{Arc, OnceLock};

use rand::Rng;

use crate::error::{Error, Result};

/// Extension degrees with a published reduction polynomial.
pub const SUPPORTED_DEGREES: [u8; 4] = [1, 4, 8, 16];

/// Reduction polynomial for `m`, as a bit mask including the leading term.
pub fn reduction_polynomial(m: u8) -> Option<u32> {
    match m {
        1 => Some(0x3),
        4 => Some(0x13),
        8 => Some(0x11D),
        16 => Some(0x1100B),
        _ => None,
    }
}

/// An element of GF(2^m). The owning [`Field`] decides which values are valid.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(transparent)]
pub struct FieldElement(pub u16);

impl FieldElement {
    pub const ZERO: FieldElement = FieldElement(0);
    pub const ONE: FieldElement = FieldElement(1);

    #[inline]
    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl fmt::LowerHex for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::LowerHex::fmt(&self.0, f)
    }
}

impl From<u16> for FieldElement {
    fn from(v: u16) -> Self {
        FieldElement(v)
    }
}

/// A packet payload or a coefficient row.
#[derive(Debug, Default, Clone, PartialEq, Eq, Hash)]
pub struct SymbolVector(pub Vec<FieldElement>);

impl SymbolVector {
    pub fn zeros(len: usize) -> Self {
        SymbolVector(vec![FieldElement::ZERO; len])
    }

    pub fn from_values<I: IntoIterator<Item = u16>>(values: I) -> Self {
        SymbolVector(values.into_iter().map(FieldElement).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|e| e.is_zero())
    }

    pub fn as_slice(&self) -> &[FieldElement] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [FieldElement] {
        &mut self.0
    }

    pub fn values(&self) -> impl Iterator<Item = u16> + '_ {
        self.0.iter().map(|e| e.0)
    }
}

impl std::ops::Index<usize> for SymbolVector {
    type Output = FieldElement;

    fn index(&self, i: usize) -> &FieldElement {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for SymbolVector {
    fn index_mut(&mut self, i: usize) -> &mut FieldElement {
        &mut self.0[i]
    }
}

struct Tables {
    m: u8,
    polynomial: u32,
    // exp has 2(q-1) entries so log(a) + log(b) never needs a reduction.
    exp: Vec<u16>,
    log: Vec<u16>,
}

impl Tables {
    fn build(m: u8, polynomial: u32) -> Tables {
        let q = 1usize << m;
        let order = q - 1;
        let generator: u32 = if m == 1 { 1 } else { 2 };
        let mut exp = vec![0u16; 2 * order];
        let mut log = vec![0u16; q];
        let mut seen = vec![false; q];
        let mut x: u32 = 1;
        for i in 0..order {
            assert!(!seen[x as usize], "generator is not primitive for m={m}");
            seen[x as usize] = true;
            exp[i] = x as u16;
            exp[i + order] = x as u16;
            log[x as usize] = i as u16;
            x = carryless_mul_mod(x, generator, polynomial, m);
        }
        assert_eq!(x, 1, "multiplicative order mismatch for m={m}");
        Tables { m, polynomial, exp, log }
    }
}

/// Shift-and-add multiplication modulo `polynomial`; used to seed the tables
/// and as a reference in tests.
pub(crate) fn carryless_mul_mod(a: u32, b: u32, polynomial: u32, m: u8) -> u32 {
    let mut acc: u32 = 0;
    let mut a = a;
    let mut b = b;
    while b != 0 {
        if b & 1 != 0 {
            acc ^= a;
        }
        b >>= 1;
        a <<= 1;
        if a & (1 << m) != 0 {
            a ^= polynomial;
        }
    }
    acc
}

/// Handle to GF(2^m). Cheap to clone; tables are built once per process.
#[derive(Clone)]
pub struct Field {
    tables: Arc<Tables>,
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GF(2^{})", self.tables.m)
    }
}

impl PartialEq for Field {
    fn eq(&self, other: &Self) -> bool {
        self.tables.m == other.tables.m
    }
}

impl Eq for Field {}

static FIELDS: [OnceLock<Field>; 4] = [
    OnceLock::new(),
    OnceLock::new(),
    OnceLock::new(),
    OnceLock::new(),
];

impl Field {
    pub fn new(m: u8) -> Result<Field> {
        let slot = SUPPORTED_DEGREES
            .iter()
            .position(|&d| d == m)
            .ok_or(Error::UnsupportedField(m))?;
        let polynomial = reduction_polynomial(m).expect("supported degree");
        Ok(FIELDS[slot]
            .get_or_init(|| Field {
                tables: Arc::new(Tables::build(m, polynomial)),
            })
            .clone())
    }

    /// Field size `q`, from the field size rather than the degree.
    pub fn with_size(q: u32) -> Result<Field> {
        if !q.is_power_of_two() || q < 2 {
            return Err(Error::UnsupportedFieldSize(q));
        }
        let m = q.trailing_zeros() as u8;
        Field::new(m).map_err(|_| Error::UnsupportedFieldSize(q))
    }

    pub fn m(&self) -> u8 {
        self.tables.m
    }

    pub fn q(&self) -> u32 {
        1 << self.tables.m
    }

    pub fn polynomial(&self) -> u32 {
        self.tables.polynomial
    }

    pub fn is_binary(&self) -> bool {
        self.tables.m == 1
    }

    #[inline]
    pub fn contains(&self, a: FieldElement) -> bool {
        (a.0 as u32) < self.q()
    }

    #[inline]
    pub fn add(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        FieldElement(a.0 ^ b.0)
    }

    #[inline]
    pub fn mul(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        if a.0 == 0 || b.0 == 0 {
            return FieldElement::ZERO;
        }
        let t = &self.tables;
        FieldElement(t.exp[t.log[a.0 as usize] as usize + t.log[b.0 as usize] as usize])
    }

    pub fn inv(&self, a: FieldElement) -> Result<FieldElement> {
        if a.0 == 0 {
            return Err(Error::ZeroInverse);
        }
        let t = &self.tables;
        let order = t.exp.len() / 2;
        let l = t.log[a.0 as usize] as usize;
        Ok(FieldElement(t.exp[(order - l) % order]))
    }

    /// `dst[i] += c * src[i]` for every `i`.
    pub fn mul_add_assign(&self, dst: &mut [FieldElement], src: &[FieldElement], c: FieldElement) {
        debug_assert_eq!(dst.len(), src.len());
        if c.0 == 0 {
            return;
        }
        if c.0 == 1 {
            for (d, s) in dst.iter_mut().zip(src) {
                d.0 ^= s.0;
            }
            return;
        }
        let t = &self.tables;
        let lc = t.log[c.0 as usize] as usize;
        for (d, s) in dst.iter_mut().zip(src) {
            if s.0 != 0 {
                d.0 ^= t.exp[t.log[s.0 as usize] as usize + lc];
            }
        }
    }

    pub fn scale_assign(&self, dst: &mut [FieldElement], c: FieldElement) {
        if c.0 == 1 {
            return;
        }
        for d in dst.iter_mut() {
            *d = self.mul(*d, c);
        }
    }

    /// Inner product `Σ a[i]·b[i]`.
    pub fn dot(&self, a: &[FieldElement], b: &[FieldElement]) -> FieldElement {
        a.iter()
            .zip(b)
            .fold(FieldElement::ZERO, |acc, (&x, &y)| self.add(acc, self.mul(x, y)))
    }

    pub fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> FieldElement {
        FieldElement(rng.gen_range(0..self.q()) as u16)
    }

    pub fn random_nonzero<R: Rng + ?Sized>(&self, rng: &mut R) -> FieldElement {
        FieldElement(rng.gen_range(1..self.q()) as u16)
    }

    pub fn random_vector<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> SymbolVector {
        SymbolVector((0..len).map(|_| self.random(rng)).collect())
    }

    /// Bytes needed to hold `len` symbols packed `m` bits each.
    pub fn packed_len(&self, len: usize) -> usize {
        (len * self.m() as usize).div_ceil(8)
    }

    /// Packs symbols little-endian, `m` bits each, least significant bit first.
    pub fn pack_into(&self, symbols: &[FieldElement], out: &mut Vec<u8>) {
        let m = self.m() as usize;
        let start = out.len();
        out.resize(start + self.packed_len(symbols.len()), 0);
        let buf = &mut out[start..];
        match m {
            8 => {
                for (b, s) in buf.iter_mut().zip(symbols) {
                    *b = s.0 as u8;
                }
            }
            16 => {
                for (chunk, s) in buf.chunks_exact_mut(2).zip(symbols) {
                    chunk.copy_from_slice(&s.0.to_le_bytes());
                }
            }
            _ => {
                for (i, s) in symbols.iter().enumerate() {
                    let bit = i * m;
                    buf[bit / 8] |= (s.0 as u8) << (bit % 8);
                }
            }
        }
    }

    /// Inverse of [`Field::pack_into`]; `bytes` must hold at least
    /// `packed_len(len)` bytes.
    pub fn unpack(&self, bytes: &[u8], len: usize) -> SymbolVector {
        let m = self.m() as usize;
        let mask = ((1u32 << m) - 1) as u8;
        let out = match m {
            8 => bytes[..len].iter().map(|&b| FieldElement(b as u16)).collect(),
            16 => bytes[..2 * len]
                .chunks_exact(2)
                .map(|c| FieldElement(u16::from_le_bytes([c[0], c[1]])))
                .collect(),
            _ => (0..len)
                .map(|i| {
                    let bit = i * m;
                    FieldElement(((bytes[bit / 8] >> (bit % 8)) & mask) as u16)
                })
                .collect(),
        };
        SymbolVector(out)
    }
}
