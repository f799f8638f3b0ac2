//! Run configuration: one JSON file shared by every subcommand.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use gammanc::optimizer::{parse_design, OptimizedDesign, OptimizerConfig};
use gammanc::outercode::DegreeDistribution;
use gammanc::pipeline::CodecConfig;
use gammanc::sim::SimMode;
use gammanc::srlnc::CodeParams;
use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn invalid(field: &str, msg: impl fmt::Display) -> ConfigError {
    ConfigError(format!("{field}: {msg}"))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeSection {
    /// Source packet count. Mutually exclusive with `n_slots`.
    pub k: Option<usize>,
    /// Block size N; K is derived as the largest count giving exactly N.
    pub n_slots: Option<usize>,
    pub payload_len: Option<usize>,
    pub q: Option<u32>,
    pub delta: Option<f64>,
    #[serde(alias = "R")]
    pub rate: Option<f64>,
    pub g: Option<usize>,
    #[serde(alias = "D")]
    pub d_max: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum R0Choice {
    Value(f64),
    Keyword(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    /// A number, or `"minimize"` to search for the smallest feasible r0.
    pub r0: R0Choice,
    pub grid_step: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            r0: R0Choice::Keyword("minimize".into()),
            grid_step: gammanc::analysis::DEFAULT_GRID_STEP,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub mode: SimMode,
    pub trials: usize,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            mode: SimMode::Gamma,
            trials: 200,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSection {
    /// Packets written by `encode`; default ceil(1.15 K).
    pub count: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub code: CodeSection,
    pub distribution: Option<DegreeDistribution>,
    /// Path to an `optimize` output; supplies R, δ, g, D and the distribution
    /// unless set explicitly. Relative to the config file.
    pub design: Option<PathBuf>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub codec: CodecConfig,
    #[serde(default)]
    pub stream: StreamSection,
}

/// Parses a config, reporting the JSON path and position of the first error.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let field = if path == "." { "config".to_string() } else { path };
        ConfigError(format!("{field}: {inner}"))
    })
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let mut cfg = parse_config(&text).map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)))?;
    if let Some(design) = &cfg.design {
        if design.is_relative() {
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            cfg.design = Some(base.join(design));
        }
    }
    Ok(cfg)
}

/// Config with the design file (if any) merged in.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub code: CodeSection,
    pub distribution: Option<DegreeDistribution>,
}

impl RunConfig {
    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let mut code = self.code.clone();
        let mut distribution = self.distribution.clone();
        if let Some(path) = &self.design {
            let text = fs::read_to_string(path).map_err(|e| invalid("design", format!("{}: {e}", path.display())))?;
            let d: OptimizedDesign = parse_design(&text).map_err(|e| invalid("design", e))?;
            code.rate = code.rate.or(Some(d.rate));
            code.delta = code.delta.or(Some(d.delta));
            code.g = code.g.or(Some(d.g as usize));
            code.d_max = code.d_max.or(Some(d.d_max));
            distribution = distribution.or(Some(d.distribution));
        }
        Ok(Resolved { code, distribution })
    }
}

impl Resolved {
    pub fn distribution(&self) -> Result<&DegreeDistribution, ConfigError> {
        self.distribution
            .as_ref()
            .ok_or_else(|| invalid("distribution", "missing (give `distribution` or `design`)"))
    }

    fn require<T: Copy>(value: Option<T>, field: &str) -> Result<T, ConfigError> {
        value.ok_or_else(|| invalid(field, "missing"))
    }

    pub fn g(&self) -> Result<usize, ConfigError> {
        Self::require(self.code.g, "code.g")
    }

    pub fn rate(&self) -> Result<f64, ConfigError> {
        let r = Self::require(self.code.rate, "code.rate")?;
        if !(r > 0.0 && r <= 1.0) {
            return Err(invalid("code.rate", format!("must lie in (0, 1], got {r}")));
        }
        Ok(r)
    }

    pub fn delta(&self) -> Result<f64, ConfigError> {
        let d = self.code.delta.unwrap_or(0.0);
        if !(0.0..1.0).contains(&d) {
            return Err(invalid("code.delta", format!("must lie in [0, 1), got {d}")));
        }
        Ok(d)
    }

    pub fn params(&self) -> Result<CodeParams, ConfigError> {
        let q = self.code.q.unwrap_or(256);
        let field = gammanc::gf::Field::with_size(q).map_err(|e| invalid("code.q", e))?;
        let payload_len = self.code.payload_len.unwrap_or(1);
        let g = self.g()?;
        let rate = self.rate()?;
        let delta = self.delta()?;
        let d_max = self
            .code
            .d_max
            .or_else(|| self.distribution.as_ref().map(|d| d.max_degree()))
            .ok_or_else(|| invalid("code.d_max", "missing"))?;
        let params = match (self.code.k, self.code.n_slots) {
            (Some(_), Some(_)) => return Err(invalid("code.k", "give either k or n_slots, not both")),
            (None, None) => return Err(invalid("code.k", "missing (or give n_slots)")),
            (Some(k), None) => CodeParams {
                k,
                payload_len,
                m: field.m(),
                delta,
                rate,
                g,
                d_max,
            },
            (None, Some(n)) => CodeParams::for_block_size(n, payload_len, field.m(), delta, rate, g, d_max)
                .map_err(|e| invalid("code.n_slots", e))?,
        };
        params.geometry().map_err(|e| invalid("code", e))?;
        if let Some(dist) = &self.distribution {
            if dist.max_degree() > d_max {
                return Err(invalid(
                    "distribution",
                    format!("degree {} exceeds code.d_max = {d_max}", dist.max_degree()),
                ));
            }
        }
        Ok(params)
    }
}
