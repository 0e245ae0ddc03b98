//! Experiment configuration: a strict JSON document.

use std::path::{Path, PathBuf};

use anyhow::Result;
use proposal_programs::trainer::AdamConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ValidationError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub proposal: ProposalConfig,
    pub training: TrainingConfig,
    pub inference: InferenceConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(rename = "N")]
    pub n: usize,
    pub x_grid: XGrid,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XGrid {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    RansacNn,
    Nn,
}

impl ProposalKind {
    pub fn name(self) -> &'static str {
        match self {
            ProposalKind::RansacNn => "ransac_nn",
            ProposalKind::Nn => "nn",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalConfig {
    pub kind: ProposalKind,
    pub hidden_width: usize,
    pub iter_support: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub iterations: usize,
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub adam: AdamSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sgd_step: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamSection {
    #[serde(rename = "α", alias = "alpha")]
    pub alpha: f64,
    #[serde(rename = "β1", alias = "beta1")]
    pub beta1: f64,
    #[serde(rename = "β2", alias = "beta2")]
    pub beta2: f64,
    #[serde(rename = "ε", alias = "eps")]
    pub eps: f64,
}

impl Default for AdamSection {
    fn default() -> Self {
        let d = AdamConfig::default();
        Self {
            alpha: d.alpha,
            beta1: d.beta1,
            beta2: d.beta2,
            eps: d.eps,
        }
    }
}

impl From<AdamSection> for AdamConfig {
    fn from(a: AdamSection) -> Self {
        AdamConfig {
            alpha: a.alpha,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    #[serde(rename = "N_particles")]
    pub n_particles: usize,
    #[serde(rename = "K")]
    pub k: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

fn check(ok: bool, message: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(ValidationError(message()).into())
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ValidationError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let config: Config =
            serde_json::from_str(text).map_err(|e| ValidationError(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        check(d.n >= 2, || format!("dataset.N must be at least 2, got {}", d.n))?;
        check(
            d.x_grid.lo.is_finite() && d.x_grid.hi.is_finite() && d.x_grid.lo < d.x_grid.hi,
            || format!("dataset.x_grid needs finite lo < hi, got [{}, {}]", d.x_grid.lo, d.x_grid.hi),
        )?;
        let p = &self.proposal;
        check(p.hidden_width >= 1, || "proposal.hidden_width must be at least 1".into())?;
        check(p.iter_support >= 1, || "proposal.iter_support must be at least 1".into())?;
        let t = &self.training;
        check(t.k >= 2, || format!("training.K must be at least 2, got {}", t.k))?;
        check(t.m >= 1, || "training.M must be at least 1".into())?;
        let a = &t.adam;
        check(a.alpha > 0.0 && a.alpha.is_finite(), || "training.adam.α must be positive".into())?;
        check((0.0..1.0).contains(&a.beta1), || "training.adam.β1 must lie in [0, 1)".into())?;
        check((0.0..1.0).contains(&a.beta2), || "training.adam.β2 must lie in [0, 1)".into())?;
        check(a.eps > 0.0 && a.eps.is_finite(), || "training.adam.ε must be positive".into())?;
        match (t.optimizer, t.sgd_step) {
            (OptimizerKind::Sgd, Some(s)) => check(s > 0.0 && s.is_finite(), || "training.sgd_step must be positive".into())?,
            (OptimizerKind::Sgd, None) => return Err(ValidationError("sgd optimizer needs training.sgd_step".into()).into()),
            (OptimizerKind::Adam, _) => {}
        }
        let i = &self.inference;
        check(i.n_particles >= 1, || "inference.N_particles must be at least 1".into())?;
        check(i.k >= 1, || "inference.K must be at least 1".into())?;
        Ok(())
    }

    /// SHA-256 of the canonical serialization, so formatting differences in
    /// the source file do not change it.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}
