use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use gammanc::analysis::{check_convergence, min_r0, AnalysisResult, AsymptoticParams};
use gammanc::gf::{Field, SymbolVector};
use gammanc::optimizer::{export_design, optimize_design, GridSpec};
use gammanc::pipeline::{decode_stream, GammaCode, GammaDecoder, GammaEncoder};
use gammanc::sim::{run_baseline_srlnc, run_campaign, SimMode};
use gammanc::Error;

mod config;
mod stream;

use config::{load_config, ConfigError, R0Choice, RunConfig};
use stream::{Header, Records};

#[derive(Parser)]
#[command(name = "gammanc", version, about = "Gamma network codes: analysis, optimization, simulation and a file codec")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output path; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the convergence condition or find the smallest feasible r0.
    Analyze,
    /// Search (R, δ, P(x)) for the lowest asymptotic overhead.
    Optimize {
        /// Rate grid as lo:hi:step.
        #[arg(long = "R-grid")]
        rate_grid: Option<GridSpec>,
        /// δ grid as lo:hi:step.
        #[arg(long = "delta-grid")]
        delta_grid: Option<GridSpec>,
    },
    /// Monte Carlo overhead campaign; writes per-trial CSV.
    Simulate {
        /// Where to write the summary JSON. Defaults to stdout when the CSV
        /// goes to a file.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Encode a file into a packet stream.
    Encode {
        #[arg(long)]
        input: PathBuf,
    },
    /// Recover a file from a packet stream.
    Decode {
        #[arg(long)]
        input: PathBuf,
    },
}

enum Failure {
    /// Bad config, malformed input or I/O trouble.
    Invalid(String),
    /// Infeasible design or failed decode.
    Unsuccessful(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Invalid(e.0)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Infeasible(_) | Error::NothingFeasible | Error::MonotonicityViolation(..) => Failure::Unsuccessful(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure::Invalid(format!("{}: {e}", path.display()))
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, bytes).map_err(|e| io_failure(path, e)),
        None => io::stdout().write_all(bytes).map_err(|e| Failure::Invalid(e.to_string())),
    }
}

fn json_line<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Unsuccessful(msg)) => {
            eprintln!("gammanc: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Invalid(msg)) => {
            eprintln!("gammanc: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let g = &cli.global;
    if let Some(k) = g.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| Failure::Invalid(format!("--threads: {e}")))?;
    }
    let mut cfg = match &g.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if g.seed.is_some() {
        cfg.seed = g.seed;
    }
    let out = g.out.as_deref();
    match cli.command {
        Command::Analyze => analyze(&cfg, out),
        Command::Optimize { rate_grid, delta_grid } => {
            if let Some(grid) = rate_grid {
                cfg.optimizer.rate_grid = grid;
            }
            if let Some(grid) = delta_grid {
                cfg.optimizer.delta_grid = grid;
            }
            optimize(&cfg, out)
        }
        Command::Simulate { summary } => simulate(&cfg, out, summary.as_deref(), g.threads),
        Command::Encode { input } => encode(&cfg, &input, out),
        Command::Decode { input } => decode(&cfg, &input, out),
    }
}

fn analyze(cfg: &RunConfig, out: Option<&Path>) -> Result<(), Failure> {
    let r = cfg.resolve()?;
    let dist = r.distribution()?.clone();
    let g = r.g()? as u32;
    let (rate, delta) = (r.rate()?, r.delta()?);
    let step = cfg.analysis.grid_step;
    let result: AnalysisResult = match &cfg.analysis.r0 {
        R0Choice::Value(r0) => {
            if !(r0.is_finite() && *r0 > 0.0) {
                return Err(Failure::Invalid(format!("analysis.r0: must be positive, got {r0}")));
            }
            check_convergence(&AsymptoticParams::from_r0(g, rate, delta, dist, *r0), step)
                .map_err(|e| Failure::Invalid(format!("analysis: {e}")))?
        }
        R0Choice::Keyword(k) if k == "minimize" => min_r0(&dist, g, rate, delta, step)?,
        R0Choice::Keyword(k) => {
            return Err(Failure::Invalid(format!("analysis.r0: expected a number or \"minimize\", got {k:?}")));
        }
    };
    emit(out, &json_line(&result))?;
    if result.feasible {
        Ok(())
    } else {
        Err(Failure::Unsuccessful(format!("infeasible at r0 = {}", result.r0)))
    }
}

fn optimize(cfg: &RunConfig, out: Option<&Path>) -> Result<(), Failure> {
    cfg.optimizer.validate().map_err(|e| Failure::Invalid(format!("optimizer: {e}")))?;
    let design = optimize_design(&cfg.optimizer)?;
    let mut text = export_design(&design);
    text.push('\n');
    emit(out, text.as_bytes())
}

fn simulate(cfg: &RunConfig, out: Option<&Path>, summary_path: Option<&Path>, threads: Option<usize>) -> Result<(), Failure> {
    let r = cfg.resolve()?;
    let params = r.params()?;
    let seed = cfg.seed.unwrap_or(0);
    let trials = cfg.simulation.trials;
    if trials == 0 {
        return Err(Failure::Invalid("simulation.trials: must be at least 1".into()));
    }
    let summary = match cfg.simulation.mode {
        SimMode::Gamma => run_campaign(&params, r.distribution()?, &cfg.codec, trials, seed, threads)?,
        SimMode::Srlnc => run_baseline_srlnc(&params, trials, seed, threads)?,
    };
    let mut csv = Vec::new();
    summary.write_csv(&mut csv).expect("write to memory");
    emit(out, &csv)?;
    let json = json_line(&summary);
    match (summary_path, out) {
        (Some(path), _) => fs::write(path, json).map_err(|e| io_failure(path, e)),
        (None, Some(_)) => emit(None, &json),
        (None, None) => Ok(()),
    }
}

/// Bytes that fit in the source block: whole bytes of K·payload_len·m bits.
fn capacity(params: &gammanc::srlnc::CodeParams) -> usize {
    params.k * params.payload_len * params.m as usize / 8
}

/// The file is stored with a u64 length prefix so padding can be stripped.
fn file_to_source(data: &[u8], params: &gammanc::srlnc::CodeParams, field: &Field) -> Result<Vec<SymbolVector>, Failure> {
    let cap = capacity(params);
    if data.len() + 8 > cap {
        return Err(Failure::Invalid(format!(
            "input of {} bytes exceeds block capacity of {} bytes (including an 8 byte length prefix)",
            data.len(),
            cap
        )));
    }
    let total = params.k * params.payload_len;
    let mut buf = Vec::with_capacity(field.packed_len(total));
    buf.extend_from_slice(&(data.len() as u64).to_le_bytes());
    buf.extend_from_slice(data);
    buf.resize(field.packed_len(total), 0);
    let symbols = field.unpack(&buf, total);
    Ok(symbols.0.chunks(params.payload_len).map(|c| SymbolVector(c.to_vec())).collect())
}

fn source_to_file(source: &[SymbolVector], field: &Field) -> Result<Vec<u8>, Failure> {
    let symbols: Vec<_> = source.iter().flat_map(|s| s.0.iter().copied()).collect();
    let mut buf = Vec::new();
    field.pack_into(&symbols, &mut buf);
    let len = u64::from_le_bytes(buf[..8].try_into().expect("8 bytes")) as usize;
    if 8 + len > buf.len() {
        return Err(Failure::Invalid("decoded length prefix exceeds block".into()));
    }
    Ok(buf[8..8 + len].to_vec())
}

fn encode(cfg: &RunConfig, input: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let r = cfg.resolve()?;
    let params = r.params()?;
    let field = params.field()?;
    let geo = params.geometry()?;
    let data = fs::read(input).map_err(|e| io_failure(input, e))?;
    let source = file_to_source(&data, &params, &field)?;
    let seed = cfg.seed.unwrap_or(0);
    let code = GammaCode::build(&params, r.distribution()?, &cfg.codec, seed)?;
    let mut encoder = GammaEncoder::new(code, &source)?;
    let count = cfg.stream.count.unwrap_or((1.15 * params.k as f64).ceil() as usize);
    let mut bytes = Vec::new();
    Header {
        m: params.m,
        g: params.g as u16,
        n: geo.generations as u32,
        k: params.k as u32,
        payload_len: params.payload_len as u32,
        seed,
    }
    .write(&mut bytes);
    for _ in 0..count {
        stream::write_record(&mut bytes, &encoder.next_packet(), &field);
    }
    emit(out, &bytes)
}

fn decode(cfg: &RunConfig, input: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let data = fs::read(input).map_err(|e| io_failure(input, e))?;
    let header = Header::read(&data)?;
    let r = cfg.resolve()?;
    let params = r.params()?;
    let geo = params.geometry()?;
    let expected = (params.m, params.g, geo.generations, params.k, params.payload_len);
    let got = (
        header.m,
        header.g as usize,
        header.n as usize,
        header.k as usize,
        header.payload_len as usize,
    );
    if expected != got {
        return Err(Error::MalformedStream(format!(
            "header (m, g, n, K, payload_len) = {got:?} does not match the config's {expected:?}"
        ))
        .into());
    }
    let field = params.field()?;
    let code = GammaCode::build(&params, r.distribution()?, &cfg.codec, header.seed)?;
    let mut decoder = GammaDecoder::new(Arc::clone(&code));
    let packets: Vec<_> = Records::new(&data, field.clone(), params.g, params.payload_len).collect::<Result<_, _>>()?;
    let report = decode_stream(&mut decoder, packets)?;
    match decoder.source() {
        Some(source) => emit(out, &source_to_file(source, &field)?),
        None => {
            io::stdout()
                .write_all(&json_line(&report))
                .map_err(|e| Failure::Invalid(e.to_string()))?;
            Err(Failure::Unsuccessful(format!(
                "decoding failed after {} packets",
                report.packets_used
            )))
        }
    }
}
