//! End-to-end Gamma codec.
//!
//! Encoding: pre-code the `K` sources into `K'` variables, place them in the
//! block and solve the outer-code parity, then emit SRLNC packets.
//!
//! Decoding is event driven. Each packet goes to its generation's
//! elimination; when a generation becomes full rank, every unspent check on
//! it is offered for release, and released equations are fed to their target
//! generations, depth first, until nothing more decodes. Once enough
//! systematic slots are known the pre-code finishes the job.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gf::{EliminationState, Field, FieldElement, SymbolVector};
use crate::outercode::{outer_encode, try_release, DegreeDistribution, OuterCode, Release};
use crate::precode::{precode_decode, precode_encode, ErasurePattern, PrecodeConfig, PrecodeGraph, PrecodeOutcome};
use crate::rng;
use crate::srlnc::{encode_packet, BlockLayout, CodeParams, CodedPacket, Geometry, GenerationDecoder, IngestOutcome, SlotRole};

pub const DEFAULT_HANDOFF_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecConfig {
    pub precode: PrecodeConfig,
    /// Pre-code decoding is tried once the known systematic fraction
    /// reaches `1 - δ(1 - margin)`.
    pub handoff_margin: f64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            precode: PrecodeConfig::default(),
            handoff_margin: DEFAULT_HANDOFF_MARGIN,
        }
    }
}

/// Everything both ends derive from `(params, dist, config, seed)`.
#[derive(Debug)]
pub struct GammaCode {
    params: CodeParams,
    geometry: Geometry,
    field: Field,
    layout: BlockLayout,
    outer: OuterCode,
    pre: PrecodeGraph,
    config: CodecConfig,
    seed: u64,
}

impl GammaCode {
    pub fn build(params: &CodeParams, dist: &DegreeDistribution, config: &CodecConfig, seed: u64) -> Result<Arc<GammaCode>> {
        let geometry = params.geometry()?;
        let field = params.field()?;
        let layout = BlockLayout::from_geometry(&geometry);
        let outer = OuterCode::build(&layout, dist, &field, seed)?;
        let pre = PrecodeGraph::build(params, &config.precode, seed)?;
        Ok(Arc::new(GammaCode {
            params: params.clone(),
            geometry,
            field,
            layout,
            outer,
            pre,
            config: *config,
            seed,
        }))
    }

    pub fn params(&self) -> &CodeParams {
        &self.params
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn field(&self) -> &Field {
        &self.field
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn outer(&self) -> &OuterCode {
        &self.outer
    }

    pub fn precode(&self) -> &PrecodeGraph {
        &self.pre
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Known systematic slots needed before the pre-code is tried early.
    fn handoff_threshold(&self) -> usize {
        let k_prime = self.geometry.k_prime as f64;
        let target = k_prime * (1.0 - self.params.delta * (1.0 - self.config.handoff_margin));
        (target.ceil() as usize).min(self.geometry.k_prime)
    }
}

/// The encoded block and the packet stream over it.
#[derive(Debug, Clone)]
pub struct GammaEncoder {
    code: Arc<GammaCode>,
    block: Vec<SymbolVector>,
    rng: ChaCha8Rng,
}

impl GammaEncoder {
    pub fn new(code: Arc<GammaCode>, source: &[SymbolVector]) -> Result<GammaEncoder> {
        let k = code.geometry.k;
        let len = code.params.payload_len;
        if source.len() != k || source.iter().any(|s| s.len() != len) {
            return Err(Error::DimensionMismatch {
                expected: (k, len),
                got: (source.len(), source.first().map_or(0, SymbolVector::len)),
            });
        }
        let variables = precode_encode(source, &code.pre)?;
        let block = outer_encode(&variables, &code.outer, &code.layout)?;
        let rng = rng::stream(code.seed, rng::STREAM_PACKETS);
        Ok(GammaEncoder { code, block, rng })
    }

    pub fn code(&self) -> &Arc<GammaCode> {
        &self.code
    }

    pub fn block(&self) -> &[SymbolVector] {
        &self.block
    }

    /// Next packet of the rateless stream.
    pub fn next_packet(&mut self) -> CodedPacket {
        encode_packet(&self.code.field, &self.block, self.code.layout.g(), &mut self.rng)
    }
}

/// Builds the code from `seed` and encodes `source`.
pub fn gamma_encode_block(
    source: &[SymbolVector],
    params: &CodeParams,
    dist: &DegreeDistribution,
    config: &CodecConfig,
    seed: u64,
) -> Result<GammaEncoder> {
    GammaEncoder::new(GammaCode::build(params, dist, config, seed)?, source)
}

/// Pseudorandom source payloads for a seed.
pub fn random_source(params: &CodeParams, seed: u64) -> Result<Vec<SymbolVector>> {
    let field = params.field()?;
    let mut rng = rng::stream(seed, rng::STREAM_SOURCE);
    Ok((0..params.k).map(|_| field.random_vector(params.payload_len, &mut rng)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Phase {
    Collecting,
    Success(Vec<SymbolVector>),
    Failure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct StepReport {
    pub innovative: bool,
    pub newly_decoded: usize,
    pub releases: usize,
    pub finished: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeReport {
    pub success: bool,
    pub packets_used: usize,
    pub overhead: f64,
    pub generations_decoded_by_srlnc_alone: usize,
    pub generations_decoded_by_release: usize,
    pub released_equations_used: usize,
    pub precode_recovered_count: usize,
}

#[derive(Debug, Clone)]
pub struct GammaDecoder {
    code: Arc<GammaCode>,
    generations: Vec<GenerationDecoder>,
    decoded: Vec<Option<Vec<SymbolVector>>>,
    spent: Vec<bool>,
    pattern: ErasurePattern,
    known_systematic: usize,
    last_attempt: usize,
    /// Missing rank summed over open generations.
    deficit: usize,
    unspent: usize,
    last_joint: usize,
    packets: usize,
    by_packets: usize,
    by_release: usize,
    releases_used: usize,
    precode_recovered: usize,
    phase: Phase,
}

impl GammaDecoder {
    pub fn new(code: Arc<GammaCode>) -> GammaDecoder {
        let n = code.layout.generations();
        let generations = (0..n)
            .map(|i| GenerationDecoder::new(code.field.clone(), i as u32, code.layout.g(), code.params.payload_len))
            .collect();
        GammaDecoder {
            generations,
            decoded: vec![None; n],
            spent: vec![false; code.outer.checks().len()],
            pattern: ErasurePattern::new(code.geometry.k_prime),
            known_systematic: 0,
            last_attempt: 0,
            deficit: n * code.layout.g(),
            unspent: code.outer.checks().len(),
            last_joint: usize::MAX,
            packets: 0,
            by_packets: 0,
            by_release: 0,
            releases_used: 0,
            precode_recovered: 0,
            phase: Phase::Collecting,
            code,
        }
    }

    pub fn phase(&self) -> &Phase {
        &self.phase
    }

    pub fn packets_consumed(&self) -> usize {
        self.packets
    }

    pub fn decoded_generations(&self) -> usize {
        self.by_packets + self.by_release
    }

    pub fn generation(&self, index: usize) -> &GenerationDecoder {
        &self.generations[index]
    }

    pub fn known_systematic(&self) -> usize {
        self.known_systematic
    }

    pub fn source(&self) -> Option<&[SymbolVector]> {
        match &self.phase {
            Phase::Success(s) => Some(s),
            _ => None,
        }
    }

    pub fn push_packet(&mut self, packet: &CodedPacket) -> Result<StepReport> {
        if self.phase != Phase::Collecting {
            return Err(Error::WrongPhase);
        }
        let gen = packet.generation as usize;
        if gen >= self.generations.len() {
            return Err(Error::MalformedStream(format!(
                "generation {gen} out of range (n = {})",
                self.generations.len()
            )));
        }
        self.packets += 1;
        let outcome = self.generations[gen].ingest(packet)?;
        let mut report = StepReport {
            innovative: outcome == IngestOutcome::Innovative,
            ..Default::default()
        };
        if report.innovative {
            self.deficit -= 1;
        }
        if report.innovative && self.generations[gen].is_decoded() {
            self.by_packets += 1;
            report.newly_decoded = 1;
            self.cascade(gen, &mut report)?;
            let all = self.decoded_generations() == self.generations.len();
            if all || (self.known_systematic >= self.code.handoff_threshold() && self.known_systematic > self.last_attempt) {
                self.last_attempt = self.known_systematic;
                self.handoff();
            }
        }
        if report.innovative && self.phase == Phase::Collecting && self.joint_worthwhile() {
            self.last_joint = self.deficit;
            self.joint_handoff();
        }
        report.finished = self.phase != Phase::Collecting;
        Ok(report)
    }

    /// Depth-first release cascade starting from a freshly decoded generation.
    fn cascade(&mut self, start: usize, report: &mut StepReport) -> Result<()> {
        let g = self.code.layout.g();
        let mut stack = vec![start];
        while let Some(gen) = stack.pop() {
            self.record(gen);
            let code = Arc::clone(&self.code);
            for &check_id in code.outer.incident(gen) {
                if self.spent[check_id as usize] {
                    continue;
                }
                let check = code.outer.check(check_id);
                let decoded = &self.decoded;
                match try_release(&code.field, check, g, |i| decoded[i as usize].as_deref()) {
                    Release::NotReady => {}
                    Release::Spent => {
                        self.spent[check_id as usize] = true;
                        self.unspent -= 1;
                    }
                    Release::Equation(eq) => {
                        self.spent[check_id as usize] = true;
                        self.unspent -= 1;
                        report.releases += 1;
                        let target = eq.generation as usize;
                        let dec = &mut self.generations[target];
                        if dec.ingest_equation(eq.coefficients.as_slice(), eq.rhs.as_slice())? == IngestOutcome::Innovative {
                            self.releases_used += 1;
                            self.deficit -= 1;
                            if dec.is_decoded() {
                                self.by_release += 1;
                                report.newly_decoded += 1;
                                stack.push(target);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn record(&mut self, gen: usize) {
        let values = self.generations[gen].solution().expect("decoded generation");
        let layout = &self.code.layout;
        for (slot, value) in layout.slots_of(gen).zip(&values) {
            if let SlotRole::Systematic(i) = layout.role(slot) {
                self.pattern.set(i as usize, value.clone());
                self.known_systematic += 1;
            }
        }
        self.decoded[gen] = Some(values);
    }

    /// Pre-code decoding on the fully known systematic slots.
    fn handoff(&mut self) -> bool {
        match precode_decode(&self.pattern, &self.code.pre, self.code.config.precode.elimination_cap) {
            PrecodeOutcome::Recovered { source, recovered } => {
                self.precode_recovered = recovered;
                self.phase = Phase::Success(source);
                true
            }
            PrecodeOutcome::Stalled { .. } => false,
        }
    }

    fn open_slots(&self) -> usize {
        (self.generations.len() - self.decoded_generations()) * self.code.layout.g()
    }

    /// The joint system can only close the gap if there are at least as many
    /// extra equations as missing rank.
    fn joint_worthwhile(&self) -> bool {
        let extra = self.code.pre.check_count() + self.unspent;
        self.deficit <= extra && self.deficit < self.last_joint && self.open_slots() <= self.code.config.precode.elimination_cap
    }

    /// Joint elimination over every slot of the open generations: their
    /// partial rows, the outer checks still touching two or more of them, and
    /// all pre-code checks, with decoded slots substituted.
    fn joint_handoff(&mut self) -> bool {
        let code = Arc::clone(&self.code);
        let (field, layout, g) = (&code.field, &code.layout, code.layout.g());
        let payload_len = code.params.payload_len;
        let mut column = vec![usize::MAX; self.generations.len()];
        let mut width = 0;
        for (gen, d) in self.decoded.iter().enumerate() {
            if d.is_none() {
                column[gen] = width;
                width += g;
            }
        }
        if width > code.config.precode.elimination_cap {
            return false;
        }
        let mut state = EliminationState::new(field.clone(), width, payload_len);
        let mut coeffs = vec![FieldElement::ZERO; width];
        let mut insert = |coeffs: &mut [FieldElement], rhs: &SymbolVector| {
            if coeffs.iter().any(|c| !c.is_zero()) {
                state.insert(coeffs, rhs.as_slice()).expect("row width matches");
            }
            coeffs.fill(FieldElement::ZERO);
        };
        for (gen, dec) in self.generations.iter().enumerate() {
            if self.decoded[gen].is_some() {
                continue;
            }
            let base = column[gen];
            for (row, rhs) in dec.rows() {
                coeffs[base..base + g].copy_from_slice(row.as_slice());
                insert(&mut coeffs, &rhs);
            }
        }
        for (check, _) in code.outer.checks().iter().zip(&self.spent).filter(|(_, &s)| !s) {
            let mut rhs = SymbolVector::zeros(payload_len);
            for (k, &gen) in check.generations.iter().enumerate() {
                let row = check.row(k, g);
                match &self.decoded[gen as usize] {
                    Some(values) => {
                        for (c, v) in row.iter().zip(values) {
                            field.mul_add_assign(rhs.as_mut_slice(), v.as_slice(), *c);
                        }
                    }
                    None => {
                        let base = column[gen as usize];
                        coeffs[base..base + g].copy_from_slice(row);
                    }
                }
            }
            insert(&mut coeffs, &rhs);
        }
        let systematic = layout.systematic_slots();
        for check in code.pre.checks() {
            let mut rhs = SymbolVector::zeros(payload_len);
            for (&v, &c) in check.variables.iter().zip(&check.coefficients) {
                let slot = systematic[v as usize] as usize;
                let gen = slot / g;
                match &self.decoded[gen] {
                    Some(values) => field.mul_add_assign(rhs.as_mut_slice(), values[slot % g].as_slice(), c),
                    None => coeffs[column[gen] + slot % g] = c,
                }
            }
            insert(&mut coeffs, &rhs);
        }
        drop(insert);

        let mut solved: Vec<Option<SymbolVector>> = vec![None; width];
        for (col, value) in state.determined() {
            solved[col] = Some(value);
        }
        let k = code.geometry.k;
        let mut source = Vec::with_capacity(k);
        let mut recovered = 0;
        for (i, &slot) in systematic.iter().take(k).enumerate() {
            if let Some(v) = self.pattern.get(i) {
                source.push(v.clone());
                continue;
            }
            let slot = slot as usize;
            match solved[column[slot / g] + slot % g].take() {
                Some(v) => {
                    source.push(v);
                    recovered += 1;
                }
                None => return false,
            }
        }
        self.precode_recovered = recovered;
        self.phase = Phase::Success(source);
        true
    }

    /// Final attempt after the stream ends; failure if it does not succeed.
    pub fn finish(&mut self) {
        if self.phase == Phase::Collecting && !self.handoff() && !self.joint_handoff() {
            self.phase = Phase::Failure;
        }
    }

    pub fn report(&self) -> DecodeReport {
        let k = self.code.geometry.k;
        DecodeReport {
            success: matches!(self.phase, Phase::Success(_)),
            packets_used: self.packets,
            overhead: (self.packets as f64 - k as f64) / k as f64,
            generations_decoded_by_srlnc_alone: self.by_packets,
            generations_decoded_by_release: self.by_release,
            released_equations_used: self.releases_used,
            precode_recovered_count: self.precode_recovered,
        }
    }
}

/// Feeds packets until success or the iterator runs out.
pub fn decode_stream<I>(decoder: &mut GammaDecoder, packets: I) -> Result<DecodeReport>
where
    I: IntoIterator<Item = CodedPacket>,
{
    for packet in packets {
        if decoder.push_packet(&packet)?.finished {
            break;
        }
    }
    decoder.finish();
    Ok(decoder.report())
}

/// A packet stream that stops after `limit` packets.
pub fn packet_stream(encoder: &mut GammaEncoder, limit: usize) -> impl Iterator<Item = CodedPacket> + '_ {
    (0..limit).map(move |_| encoder.next_packet())
}

/// Shuffled reception order for tests and tools that need erasures.
pub fn drop_packets<R: Rng + ?Sized>(packets: Vec<CodedPacket>, keep: f64, rng: &mut R) -> Vec<CodedPacket> {
    packets.into_iter().filter(|_| rng.gen_bool(keep)).collect()
}
