//! Generation-based sparse random linear network coding.
//!
//! A block of `N` slots is split into `n` generations of `g` slots. Every
//! coded packet mixes the slots of one uniformly chosen generation with
//! coefficients drawn uniformly from the whole field (zero included).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gf::{EliminationState, Field, FieldElement, InsertOutcome, SymbolVector};

/// `ceil(x)`, treating values within floating-point noise of an integer as
/// that integer, so `1280 / (0.8 * 8)` gives 200 rather than 201.
pub(crate) fn ceil_tolerant(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// The user-facing parameter set. Everything else is derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeParams {
    /// Source packet count `K`.
    pub k: usize,
    /// Symbols per packet.
    pub payload_len: usize,
    /// Field extension degree; `q = 2^m`.
    pub m: u8,
    /// Pre-code redundancy fraction; `0` disables the pre-code.
    pub delta: f64,
    /// Outer code rate `R`.
    pub rate: f64,
    /// Generation size `g`.
    pub g: usize,
    /// Largest check generation-degree `D`.
    pub d_max: usize,
}

/// Block geometry derived from [`CodeParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Geometry {
    pub k: usize,
    /// Pre-code output count `K'`.
    pub k_prime: usize,
    /// Block size `N`, a whole number of generations.
    pub n_slots: usize,
    /// Generation count `n`.
    pub generations: usize,
    /// Outer check count `M = N - K'`.
    pub checks: usize,
    pub g: usize,
}

impl CodeParams {
    pub fn field(&self) -> Result<Field> {
        Field::new(self.m)
    }

    pub fn q(&self) -> u32 {
        1 << self.m
    }

    pub fn k_prime(&self) -> usize {
        if self.delta == 0.0 {
            self.k
        } else {
            ceil_tolerant(self.k as f64 / (1.0 - self.delta))
        }
    }

    /// Validates the parameters and derives `K'`, `N`, `n` and `M`.
    pub fn geometry(&self) -> Result<Geometry> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.k == 0 {
            return bad("k must be positive".into());
        }
        if self.payload_len == 0 {
            return bad("payload_len must be positive".into());
        }
        self.field()?;
        if !(0.0..1.0).contains(&self.delta) {
            return bad(format!("delta must lie in [0, 1), got {}", self.delta));
        }
        if !(self.rate > 0.0 && self.rate <= 1.0) {
            return bad(format!("rate must lie in (0, 1], got {}", self.rate));
        }
        if self.g == 0 || self.g > u16::MAX as usize {
            return bad(format!("g must lie in [1, 65535], got {}", self.g));
        }
        if self.d_max < 2 {
            return bad(format!("d_max must be at least 2, got {}", self.d_max));
        }
        let k_prime = self.k_prime();
        let generations = ceil_tolerant(k_prime as f64 / (self.rate * self.g as f64));
        let n_slots = generations * self.g;
        let checks = n_slots - k_prime;
        if checks > 0 && self.d_max > generations {
            return bad(format!(
                "d_max={} exceeds the generation count n={}",
                self.d_max, generations
            ));
        }
        Ok(Geometry {
            k: self.k,
            k_prime,
            n_slots,
            generations,
            checks,
            g: self.g,
        })
    }

    /// Largest source count whose derived block size is exactly `n_slots`.
    pub fn for_block_size(
        n_slots: usize,
        payload_len: usize,
        m: u8,
        delta: f64,
        rate: f64,
        g: usize,
        d_max: usize,
    ) -> Result<CodeParams> {
        let mut p = CodeParams {
            k: 1,
            payload_len,
            m,
            delta,
            rate,
            g,
            d_max,
        };
        let mut k = ((n_slots as f64) * rate * (1.0 - delta)).floor() as usize + 1;
        while k > 0 {
            p.k = k;
            if let Ok(geo) = p.geometry() {
                if geo.n_slots == n_slots {
                    return Ok(p);
                }
                if geo.n_slots < n_slots {
                    break;
                }
            }
            k -= 1;
        }
        Err(Error::InvalidParams(format!(
            "no source count gives a block of exactly {n_slots} slots"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotRole {
    /// Carries pre-code output symbol `i`.
    Systematic(u32),
    /// Holds outer-code parity `j`.
    Parity(u32),
}

/// Assignment of the `N` block slots to generations, positions and roles.
///
/// Slot `s` lives in generation `s / g` at position `s % g`. Parity slots
/// are dealt round-robin over generations and sit at each generation's tail.
/// Systematic indices are dealt position-major (position 0 of every
/// generation first), which spreads consecutive pre-code symbols across
/// generations.
#[derive(Debug, Clone)]
pub struct BlockLayout {
    g: usize,
    generations: usize,
    parity_per_gen: Vec<u32>,
    roles: Vec<SlotRole>,
    systematic: Vec<u32>,
    parity: Vec<u32>,
}

impl BlockLayout {
    pub fn build(params: &CodeParams) -> Result<BlockLayout> {
        let geo = params.geometry()?;
        Ok(BlockLayout::from_geometry(&geo))
    }

    pub fn from_geometry(geo: &Geometry) -> BlockLayout {
        let (g, n, m) = (geo.g, geo.generations, geo.checks);
        let parity_per_gen: Vec<u32> = (0..n).map(|i| (m / n + usize::from(i < m % n)) as u32).collect();
        let mut roles = vec![SlotRole::Systematic(0); n * g];
        let mut parity = vec![0u32; m];
        for (j, slot) in parity.iter_mut().enumerate() {
            let gen = j % n;
            let pos = g - parity_per_gen[gen] as usize + j / n;
            *slot = (gen * g + pos) as u32;
            roles[gen * g + pos] = SlotRole::Parity(j as u32);
        }
        let mut systematic = Vec::with_capacity(geo.k_prime);
        for pos in 0..g {
            for (gen, &par) in parity_per_gen.iter().enumerate() {
                if pos < g - par as usize {
                    let slot = gen * g + pos;
                    roles[slot] = SlotRole::Systematic(systematic.len() as u32);
                    systematic.push(slot as u32);
                }
            }
        }
        debug_assert_eq!(systematic.len(), geo.k_prime);
        BlockLayout {
            g,
            generations: n,
            parity_per_gen,
            roles,
            systematic,
            parity,
        }
    }

    pub fn g(&self) -> usize {
        self.g
    }

    pub fn generations(&self) -> usize {
        self.generations
    }

    pub fn n_slots(&self) -> usize {
        self.roles.len()
    }

    pub fn role(&self, slot: usize) -> SlotRole {
        self.roles[slot]
    }

    pub fn systematic_slots(&self) -> &[u32] {
        &self.systematic
    }

    pub fn parity_slots(&self) -> &[u32] {
        &self.parity
    }

    pub fn parity_count(&self, generation: usize) -> usize {
        self.parity_per_gen[generation] as usize
    }

    pub fn systematic_count(&self, generation: usize) -> usize {
        self.g - self.parity_count(generation)
    }

    pub fn generation_of(&self, slot: usize) -> usize {
        slot / self.g
    }

    /// Slot range of a generation.
    pub fn slots_of(&self, generation: usize) -> std::ops::Range<usize> {
        generation * self.g..(generation + 1) * self.g
    }
}

/// One SRLNC packet as it travels on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodedPacket {
    pub generation: u32,
    pub coefficients: SymbolVector,
    pub payload: SymbolVector,
}

impl CodedPacket {
    /// Little-endian `u32` generation index, then the coefficient and payload
    /// vectors bit-packed `m` bits per symbol, each padded to a byte boundary.
    pub fn to_bytes(&self, field: &Field) -> Vec<u8> {
        let mut out = Vec::with_capacity(
            4 + field.packed_len(self.coefficients.len()) + field.packed_len(self.payload.len()),
        );
        out.extend_from_slice(&self.generation.to_le_bytes());
        field.pack_into(self.coefficients.as_slice(), &mut out);
        field.pack_into(self.payload.as_slice(), &mut out);
        out
    }

    pub fn from_bytes(field: &Field, g: usize, payload_len: usize, bytes: &[u8]) -> Result<CodedPacket> {
        let clen = field.packed_len(g);
        let plen = field.packed_len(payload_len);
        if bytes.len() != 4 + clen + plen {
            return Err(Error::MalformedStream(format!(
                "packet record of {} bytes, expected {}",
                bytes.len(),
                4 + clen + plen
            )));
        }
        let generation = u32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"));
        Ok(CodedPacket {
            generation,
            coefficients: field.unpack(&bytes[4..4 + clen], g),
            payload: field.unpack(&bytes[4 + clen..], payload_len),
        })
    }
}

/// `Σ coeff_j · slot_j`.
pub fn combine(field: &Field, coefficients: &[FieldElement], slots: &[SymbolVector]) -> SymbolVector {
    let len = slots.first().map_or(0, SymbolVector::len);
    let mut acc = SymbolVector::zeros(len);
    for (c, s) in coefficients.iter().zip(slots) {
        field.mul_add_assign(acc.as_mut_slice(), s.as_slice(), *c);
    }
    acc
}

/// Draws one coded packet from a fully populated block of `n·g` slots.
pub fn encode_packet<R: Rng + ?Sized>(field: &Field, slots: &[SymbolVector], g: usize, rng: &mut R) -> CodedPacket {
    let n = slots.len() / g;
    let generation = rng.gen_range(0..n);
    let coefficients = field.random_vector(g, rng);
    let payload = combine(field, coefficients.as_slice(), &slots[generation * g..(generation + 1) * g]);
    CodedPacket {
        generation: generation as u32,
        coefficients,
        payload,
    }
}

/// Intermediate-node recoding: a fresh random combination of buffered packets
/// from a single generation.
pub fn recode_packets<R: Rng + ?Sized>(field: &Field, buffer: &[CodedPacket], rng: &mut R) -> Result<CodedPacket> {
    let first = buffer.first().ok_or(Error::EmptyBuffer)?;
    if let Some(p) = buffer.iter().find(|p| p.generation != first.generation) {
        return Err(Error::MixedGenerations(first.generation, p.generation));
    }
    let mut coefficients = SymbolVector::zeros(first.coefficients.len());
    let mut payload = SymbolVector::zeros(first.payload.len());
    for p in buffer {
        let c = field.random(rng);
        field.mul_add_assign(coefficients.as_mut_slice(), p.coefficients.as_slice(), c);
        field.mul_add_assign(payload.as_mut_slice(), p.payload.as_slice(), c);
    }
    Ok(CodedPacket {
        generation: first.generation,
        coefficients,
        payload,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestOutcome {
    Innovative,
    Redundant,
    AlreadyDecoded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenerationStatus {
    Open,
    Decoded,
}

/// Per-generation elimination state.
#[derive(Debug, Clone)]
pub struct GenerationDecoder {
    index: u32,
    elimination: EliminationState,
}

impl GenerationDecoder {
    pub fn new(field: Field, index: u32, g: usize, payload_len: usize) -> Self {
        GenerationDecoder {
            index,
            elimination: EliminationState::new(field, g, payload_len),
        }
    }

    pub fn index(&self) -> u32 {
        self.index
    }

    pub fn rank(&self) -> usize {
        self.elimination.rank()
    }

    pub fn status(&self) -> GenerationStatus {
        if self.elimination.is_full_rank() {
            GenerationStatus::Decoded
        } else {
            GenerationStatus::Open
        }
    }

    pub fn is_decoded(&self) -> bool {
        self.status() == GenerationStatus::Decoded
    }

    pub fn ingest(&mut self, packet: &CodedPacket) -> Result<IngestOutcome> {
        if packet.generation != self.index {
            return Err(Error::WrongGeneration {
                expected: self.index,
                got: packet.generation,
            });
        }
        self.ingest_equation(packet.coefficients.as_slice(), packet.payload.as_slice())
    }

    /// Adds any linear equation over this generation's slots.
    pub fn ingest_equation(&mut self, coefficients: &[FieldElement], rhs: &[FieldElement]) -> Result<IngestOutcome> {
        if self.is_decoded() {
            return Ok(IngestOutcome::AlreadyDecoded);
        }
        Ok(match self.elimination.insert(coefficients, rhs)? {
            InsertOutcome::Innovative => IngestOutcome::Innovative,
            InsertOutcome::Redundant => IngestOutcome::Redundant,
        })
    }

    /// Slot values once the generation is decoded.
    pub fn solution(&self) -> Option<Vec<SymbolVector>> {
        self.elimination.solution()
    }

    /// The reduced equations collected so far, as `(coefficients, rhs)`.
    pub fn rows(&self) -> impl Iterator<Item = (SymbolVector, SymbolVector)> + '_ {
        (0..self.rank()).map(|i| self.elimination.row(i))
    }

    /// Slots (by position in the generation) already pinned down while the
    /// generation is still open.
    pub fn determined(&self) -> Vec<(usize, SymbolVector)> {
        self.elimination.determined()
    }
}
