//! Run configuration: one TOML block per module, overridden by flags.

use std::path::{Path, PathBuf};

use fpa_core::competition::HillConfig;
use fpa_core::detect::DetectionConfig;
use fpa_core::endogenous::DiscriminationConfig;
use fpa_core::numeric::DEFAULT_GRID_SIZE;
use fpa_core::recovery::{PipelineConfig, RecoveryConfig};
use fpa_core::simulate::{CovariateSpec, InstrumentPoint, ModelSpec, SimConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub input: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub simulate: Option<SimulateBlock>,
    pub detection: DetectionConfig,
    pub hill: HillConfig,
    pub recovery: RecoveryConfig,
    pub estimate: EstimateBlock,
    pub endogenous: EndogenousBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    pub model: ModelSpec<f64>,
    pub sample_size: usize,
    #[serde(default)]
    pub instruments: Option<Vec<InstrumentPoint<f64>>>,
    #[serde(default)]
    pub covariates: Option<CovariateSpec<f64>>,
    #[serde(default)]
    pub per_bid: bool,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default = "default_outcomes")]
    pub output: String,
}

fn default_grid_size() -> usize {
    DEFAULT_GRID_SIZE
}

fn default_outcomes() -> String {
    "outcomes.csv".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateBlock {
    pub theta: f64,
    pub n_lo: usize,
    pub min_sample: usize,
    pub quantile_points: usize,
}

impl Default for EstimateBlock {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self { theta: p.theta, n_lo: p.n_lo, min_sample: p.min_sample, quantile_points: p.quantile_points }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndogenousBlock {
    pub discrimination: DiscriminationConfig,
    /// Share of the price range used for the slope at the upper bound.
    pub gamma_tail_fraction: f64,
    pub levels: usize,
    pub binomial_tolerance: f64,
    pub entry_grid: usize,
}

impl Default for EndogenousBlock {
    fn default() -> Self {
        Self {
            discrimination: DiscriminationConfig::default(),
            gamma_tail_fraction: 0.05,
            levels: 201,
            binomial_tolerance: 0.05,
            entry_grid: 401,
        }
    }
}

/// Flag values; `None` keeps the file value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub input: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub h0: Option<f64>,
    pub h1: Option<f64>,
    pub epsilon: Option<f64>,
    pub m_range: Option<(usize, usize)>,
    pub theta: Option<f64>,
    pub alpha_min: Option<f64>,
    pub n_lo: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| CliError::validation("config", format!("{}: {}", path.display(), e.message())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        if o.input.is_some() {
            self.input = o.input.clone();
        }
        if o.out_dir.is_some() {
            self.out_dir = o.out_dir.clone();
        }
        for det in [&mut self.detection, &mut self.endogenous.discrimination.detection] {
            if let Some(h) = o.h0 {
                det.h0 = h;
            }
            if let Some(h) = o.h1 {
                det.h1 = h;
            }
            if let Some(e) = o.epsilon {
                det.epsilon = e;
            }
        }
        if o.m_range.is_some() {
            self.hill.m_range = o.m_range;
        }
        if let Some(t) = o.theta {
            self.estimate.theta = t;
        }
        if let Some(a) = o.alpha_min {
            self.recovery.alpha_min = a;
        }
        if let Some(n) = o.n_lo {
            self.estimate.n_lo = n;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.detection.validate().map_err(|e| field_error("detection", e))?;
        self.endogenous
            .discrimination
            .detection
            .validate()
            .map_err(|e| field_error("endogenous.discrimination.detection", e))?;
        let est = &self.estimate;
        if !(est.theta > 0.0 && est.theta <= 1.0) {
            return Err(CliError::validation("estimate.theta", format!("need 0 < theta <= 1, got {}", est.theta)));
        }
        if est.n_lo < 2 {
            return Err(CliError::validation("estimate.n_lo", format!("need at least 2, got {}", est.n_lo)));
        }
        if !(self.recovery.alpha_min > 0.0 && self.recovery.alpha_min < 1.0) {
            return Err(CliError::validation(
                "recovery.alpha_min",
                format!("need 0 < alpha_min < 1, got {}", self.recovery.alpha_min),
            ));
        }
        if let Some((a, b)) = self.hill.m_range {
            if a < 2 || a > b {
                return Err(CliError::validation("hill.m_range", format!("need 2 <= lo <= hi, got {a}:{b}")));
            }
        }
        let en = &self.endogenous;
        if !(en.gamma_tail_fraction > 0.0 && en.gamma_tail_fraction < 1.0) {
            return Err(CliError::validation("endogenous.gamma_tail_fraction", "must lie in (0, 1)"));
        }
        if en.levels < 2 || en.entry_grid < 2 {
            return Err(CliError::validation("endogenous.levels", "levels and entry_grid need at least 2 points"));
        }
        if let Some(input) = &self.input {
            if !input.is_file() {
                return Err(CliError::validation("input", format!("{} is not a readable file", input.display())));
            }
        }
        Ok(())
    }

    pub fn input(&self) -> Result<&Path> {
        self.input
            .as_deref()
            .ok_or_else(|| CliError::validation("input", "no input file given (--input or `input` in the config)"))
    }

    pub fn out_dir(&self) -> &Path {
        self.out_dir.as_deref().unwrap_or(Path::new("."))
    }

    pub fn sim_config(&self) -> Result<(SimConfig<f64>, &str)> {
        let block = self
            .simulate
            .as_ref()
            .ok_or_else(|| CliError::validation("simulate", "the config has no [simulate] block"))?;
        let mut cfg = SimConfig::new(block.model.clone(), block.sample_size, self.seed.unwrap_or(0));
        cfg.instruments = block.instruments.clone();
        cfg.covariates = block.covariates.clone();
        cfg.per_bid = block.per_bid;
        cfg.grid_size = block.grid_size;
        Ok((cfg, &block.output))
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            detection: self.detection,
            recovery: self.recovery,
            theta: self.estimate.theta,
            n_lo: self.estimate.n_lo,
            min_sample: self.estimate.min_sample,
            quantile_points: self.estimate.quantile_points,
        }
    }

    /// SHA-256 of the effective parameters in canonical JSON; paths are left out.
    pub fn hash(&self) -> String {
        let params = Self { input: None, out_dir: None, ..self.clone() };
        let json = serde_json::to_vec(&params).expect("config serializes");
        format!("{:x}", Sha256::digest(json))
    }
}

fn field_error(block: &str, e: fpa_core::Error) -> CliError {
    match e {
        fpa_core::Error::Invalid { field, message } => CliError::validation(format!("{block}.{field}"), message),
        other => CliError::validation(block, other.to_string()),
    }
}

pub fn parse_m_range(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once([':', ',']).ok_or_else(|| format!("expected LO:HI, got `{s}`"))?;
    let lo = a.trim().parse().map_err(|_| format!("bad lower bound `{a}`"))?;
    let hi = b.trim().parse().map_err(|_| format!("bad upper bound `{b}`"))?;
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let mut cfg: RunConfig = toml::from_str("seed = 3\n[detection]\nh0 = 0.25\n[estimate]\ntheta = 0.5\n").unwrap();
        assert_eq!(cfg.detection.h1, DetectionConfig::default().h1);
        let before = cfg.hash();
        cfg.apply(&Overrides { h0: Some(0.3), m_range: Some((10, 40)), ..Default::default() });
        assert_eq!((cfg.seed, cfg.detection.h0, cfg.estimate.theta), (Some(3), 0.3, 0.5));
        assert_eq!(cfg.endogenous.discrimination.detection.h0, 0.3);
        assert_eq!(cfg.hill.m_range, Some((10, 40)));
        assert_ne!(before, cfg.hash());
    }

    #[test]
    fn unknown_keys_and_bad_ranges_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[detection]\nhzero = 0.3\n").is_err());
        let mut cfg = RunConfig::default();
        cfg.apply(&Overrides { theta: Some(1.5), ..Default::default() });
        assert!(matches!(cfg.validate(), Err(CliError::Validation { ref field, .. }) if field == "estimate.theta"));
        let mut cfg = RunConfig::default();
        cfg.apply(&Overrides { h0: Some(0.5), ..Default::default() });
        assert!(matches!(cfg.validate(), Err(CliError::Validation { ref field, .. }) if field == "detection.h0"));
    }

    #[test]
    fn m_range_syntax() {
        assert_eq!(parse_m_range("10:200"), Ok((10, 200)));
        assert_eq!(parse_m_range("10, 200"), Ok((10, 200)));
        assert!(parse_m_range("10").is_err());
    }
}
