//! Monte Carlo reception-overhead campaigns for the Gamma codec and the plain
//! SRLNC baseline.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::outercode::DegreeDistribution;
use crate::pipeline::{random_source, CodecConfig, GammaCode, GammaDecoder, GammaEncoder};
use crate::rng;
use crate::srlnc::{encode_packet, BlockLayout, CodeParams, GenerationDecoder};

/// Trials abort as failures after `PACKET_CAP_FACTOR * K` packets.
pub const PACKET_CAP_FACTOR: usize = 3;

pub const CSV_HEADER: &str = "trial,seed,success,packets_used,overhead";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub success: bool,
    pub packets_used: usize,
    pub overhead: f64,
}

impl TrialResult {
    fn new(trial: usize, seed: u64, success: bool, packets_used: usize, k: usize) -> TrialResult {
        TrialResult {
            trial,
            seed,
            success,
            packets_used,
            overhead: (packets_used as f64 - k as f64) / k as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    Gamma,
    Srlnc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub mode: SimMode,
    pub params: CodeParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distribution: Option<DegreeDistribution>,
    pub base_seed: u64,
    pub trials: usize,
    /// Statistics run over every trial; failed trials count at the packet cap.
    pub mean_overhead: f64,
    pub std_overhead: f64,
    pub success_rate: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub results: Vec<TrialResult>,
}

impl SimSummary {
    fn from_results(mode: SimMode, params: &CodeParams, dist: Option<&DegreeDistribution>, base_seed: u64, results: Vec<TrialResult>) -> SimSummary {
        let n = results.len() as f64;
        let mean = results.iter().map(|t| t.overhead).sum::<f64>() / n;
        let var = if results.len() > 1 {
            results.iter().map(|t| (t.overhead - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let mut sorted: Vec<f64> = results.iter().map(|t| t.overhead).collect();
        sorted.sort_by(f64::total_cmp);
        SimSummary {
            mode,
            params: params.clone(),
            distribution: dist.cloned(),
            base_seed,
            trials: results.len(),
            mean_overhead: mean,
            std_overhead: var.sqrt(),
            success_rate: results.iter().filter(|t| t.success).count() as f64 / n,
            p50: percentile(&sorted, 0.50),
            p90: percentile(&sorted, 0.90),
            p99: percentile(&sorted, 0.99),
            results,
        }
    }

    /// Standard error of the mean overhead.
    pub fn std_error(&self) -> f64 {
        self.std_overhead / (self.trials as f64).sqrt()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for t in &self.results {
            writeln!(out, "{},{},{},{},{}", t.trial, t.seed, t.success, t.packets_used, t.overhead)?;
        }
        Ok(())
    }
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = (p * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// One Gamma trial: random source, fresh code and decoder, packets pushed one
/// at a time until the source is recovered or the cap is hit.
pub fn run_trial(params: &CodeParams, dist: &DegreeDistribution, config: &CodecConfig, trial: usize, seed: u64) -> Result<TrialResult> {
    let code = GammaCode::build(params, dist, config, seed)?;
    let source = random_source(params, seed)?;
    let mut encoder = GammaEncoder::new(Arc::clone(&code), &source)?;
    let mut decoder = GammaDecoder::new(code);
    let cap = PACKET_CAP_FACTOR * params.k;
    while decoder.packets_consumed() < cap {
        if decoder.push_packet(&encoder.next_packet())?.finished {
            break;
        }
    }
    let success = decoder.source().is_some_and(|s| s == source.as_slice());
    Ok(TrialResult::new(trial, seed, success, decoder.packets_consumed(), params.k))
}

/// Plain SRLNC: no pre-code, no outer code. Success once every generation is
/// individually full rank.
pub fn run_baseline_trial(params: &CodeParams, trial: usize, seed: u64) -> Result<TrialResult> {
    let params = baseline_params(params);
    let geo = params.geometry()?;
    let field = params.field()?;
    let layout = BlockLayout::from_geometry(&geo);
    let block = random_source(&params, seed)?;
    let mut slots = vec![crate::gf::SymbolVector::zeros(params.payload_len); geo.n_slots];
    for (i, &slot) in layout.systematic_slots().iter().enumerate() {
        slots[slot as usize] = block[i].clone();
    }
    let mut rng = rng::stream(seed, rng::STREAM_PACKETS);
    let mut gens: Vec<GenerationDecoder> = (0..geo.generations)
        .map(|i| GenerationDecoder::new(field.clone(), i as u32, geo.g, params.payload_len))
        .collect();
    let mut open = geo.generations;
    let cap = PACKET_CAP_FACTOR * params.k;
    let mut used = 0;
    while open > 0 && used < cap {
        let packet = encode_packet(&field, &slots, geo.g, &mut rng);
        used += 1;
        let dec = &mut gens[packet.generation as usize];
        if !dec.is_decoded() {
            dec.ingest(&packet)?;
            open -= dec.is_decoded() as usize;
        }
    }
    Ok(TrialResult::new(trial, seed, open == 0, used, params.k))
}

/// Same g, q and block size with the outer code and pre-code removed.
pub fn baseline_params(params: &CodeParams) -> CodeParams {
    let n_slots = params.geometry().map_or(params.k, |g| g.n_slots);
    CodeParams {
        k: n_slots,
        delta: 0.0,
        rate: 1.0,
        ..params.clone()
    }
}

fn campaign<F>(trials: usize, base_seed: u64, threads: Option<usize>, trial: F) -> Result<Vec<TrialResult>>
where
    F: Fn(usize, u64) -> Result<TrialResult> + Sync,
{
    if trials == 0 {
        return Err(Error::InvalidParams("trials must be at least 1".into()));
    }
    let run = || -> Result<Vec<TrialResult>> {
        (0..trials)
            .into_par_iter()
            .map(|t| trial(t, base_seed ^ t as u64))
            .collect()
    };
    match threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::InvalidParams(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    }
}

/// Trial `t` uses seed `base_seed ^ t`; results do not depend on `threads`.
pub fn run_campaign(
    params: &CodeParams,
    dist: &DegreeDistribution,
    config: &CodecConfig,
    trials: usize,
    base_seed: u64,
    threads: Option<usize>,
) -> Result<SimSummary> {
    params.geometry()?;
    let results = campaign(trials, base_seed, threads, |t, seed| run_trial(params, dist, config, t, seed))?;
    Ok(SimSummary::from_results(SimMode::Gamma, params, Some(dist), base_seed, results))
}

pub fn run_baseline_srlnc(params: &CodeParams, trials: usize, base_seed: u64, threads: Option<usize>) -> Result<SimSummary> {
    let base = baseline_params(params);
    base.geometry()?;
    let results = campaign(trials, base_seed, threads, |t, seed| run_baseline_trial(&base, t, seed))?;
    Ok(SimSummary::from_results(SimMode::Srlnc, &base, None, base_seed, results))
}
