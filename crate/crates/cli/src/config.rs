use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use kinsynth_core::caae::CaaeConfig;
use kinsynth_core::dnanet::DnaNetConfig;
use kinsynth_core::numerics::adam::AdamConfig;
use kinsynth_core::numerics::graph::NormKind;

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormChoice {
    L1,
    L2,
}

impl From<NormChoice> for NormKind {
    fn from(c: NormChoice) -> NormKind {
        match c {
            NormChoice::L1 => NormKind::L1,
            NormChoice::L2 => NormKind::L2,
        }
    }
}

/// One flat JSON document drives every command; a resolved copy is written
/// into each output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub config_version: u32,

    // dimensions
    pub image_side: usize,
    /// Feature dimension n.
    pub feature_dim: usize,
    /// Gene dimension m (equal to n unless overridden).
    pub gene_dim: usize,
    pub conv_widths: [usize; 4],
    pub dimg_widths: [usize; 3],
    pub dnanet_hidden: [usize; 2],

    // optimization
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,

    // loss weights
    pub weight_recon: f64,
    pub weight_dz: f64,
    pub weight_dimg: f64,
    pub weight_dh: f64,
    pub norm: NormChoice,

    // seeds
    pub seed_world: u64,
    pub seed_training: u64,
    pub seed_sampling: u64,

    // data
    pub labeled_dir: Option<PathBuf>,
    pub triplets_csv: Option<PathBuf>,
    pub output_dir: PathBuf,

    // synthetic world
    pub synth_families: usize,
    pub synth_gene_dim: usize,
    pub test_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            config_version: CONFIG_VERSION,
            image_side: 64,
            feature_dim: 100,
            gene_dim: 100,
            conv_widths: [32, 64, 128, 256],
            dimg_widths: [32, 64, 128],
            dnanet_hidden: [128, 128],
            learning_rate: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 32,
            epochs: 20,
            weight_recon: 1.0,
            weight_dz: 1.0,
            weight_dimg: 1.0,
            weight_dh: 0.1,
            norm: NormChoice::L2,
            seed_world: 1,
            seed_training: 2,
            seed_sampling: 3,
            labeled_dir: None,
            triplets_csv: None,
            output_dir: PathBuf::from("out"),
            synth_families: 100,
            synth_gene_dim: 8,
            test_fraction: 0.2,
        }
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
        if config.config_version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "config_version: expected {CONFIG_VERSION}, got {}",
                config.config_version
            )));
        }
        Ok(config)
    }

    /// Field-level validation; every problem is reported at once.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut problems = Vec::new();
        if self.image_side < 32 || !self.image_side.is_power_of_two() {
            problems.push(format!(
                "image_side: {} must be a power of two >= 32",
                self.image_side
            ));
        }
        for (name, v) in [
            ("feature_dim", self.feature_dim),
            ("gene_dim", self.gene_dim),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("synth_families", self.synth_families),
            ("synth_gene_dim", self.synth_gene_dim),
        ] {
            if v == 0 {
                problems.push(format!("{name}: must be positive"));
            }
        }
        if self.conv_widths.iter().any(|&w| w == 0)
            || self.dimg_widths.iter().any(|&w| w == 0)
            || self.dnanet_hidden.iter().any(|&w| w == 0)
        {
            problems.push("conv_widths/dimg_widths/dnanet_hidden: zero width".into());
        }
        if self.learning_rate <= 0.0 {
            problems.push(format!("learning_rate: {} must be positive", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                problems.push(format!("{name}: {b} must lie in [0, 1)"));
            }
        }
        for (name, w) in [
            ("weight_recon", self.weight_recon),
            ("weight_dz", self.weight_dz),
            ("weight_dimg", self.weight_dimg),
            ("weight_dh", self.weight_dh),
        ] {
            if !w.is_finite() || w < 0.0 {
                problems.push(format!("{name}: {w} must be finite and non-negative"));
            }
        }
        if !(0.0 < self.test_fraction && self.test_fraction < 1.0) {
            problems.push(format!(
                "test_fraction: {} must lie in (0, 1)",
                self.test_fraction
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(problems.join("; ")))
        }
    }

    pub fn caae_config(&self) -> CaaeConfig {
        CaaeConfig {
            image_side: self.image_side,
            feature_dim: self.feature_dim,
            conv_widths: self.conv_widths,
            dimg_widths: self.dimg_widths,
            dz_hidden: [64, 32],
            leaky_slope: 0.2,
        }
    }

    pub fn dnanet_config(&self) -> DnaNetConfig {
        DnaNetConfig {
            feature_dim: self.feature_dim,
            gene_dim: self.gene_dim,
            hidden: self.dnanet_hidden,
            dh_hidden: [64, 32],
            leaky_slope: 0.2,
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: 1e-8,
        }
    }

    /// Pretty JSON snapshot written into output directories.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Optional command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct ConfigOverrides {
    /// Config file to start from (defaults used when absent).
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub labeled_dir: Option<PathBuf>,
    #[arg(long)]
    pub triplets_csv: Option<PathBuf>,
    #[arg(long)]
    pub image_side: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed_world: Option<u64>,
    #[arg(long)]
    pub seed_training: Option<u64>,
    #[arg(long)]
    pub seed_sampling: Option<u64>,
    /// Number of synthetic families for synth-data.
    #[arg(long)]
    pub families: Option<usize>,
}

impl ConfigOverrides {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => RunConfig::from_path(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.output_dir {
            config.output_dir = v.clone();
        }
        if let Some(v) = &self.labeled_dir {
            config.labeled_dir = Some(v.clone());
        }
        if let Some(v) = &self.triplets_csv {
            config.triplets_csv = Some(v.clone());
        }
        if let Some(v) = self.image_side {
            config.image_side = v;
        }
        if let Some(v) = self.batch_size {
            config.batch_size = v;
        }
        if let Some(v) = self.epochs {
            config.epochs = v;
        }
        if let Some(v) = self.learning_rate {
            config.learning_rate = v;
        }
        if let Some(v) = self.seed_world {
            config.seed_world = v;
        }
        if let Some(v) = self.seed_training {
            config.seed_training = v;
        }
        if let Some(v) = self.seed_sampling {
            config.seed_sampling = v;
        }
        if let Some(v) = self.families {
            config.synth_families = v;
        }
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn json_roundtrip() {
        let config = RunConfig::default();
        let json = config.to_json();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.feature_dim, config.feature_dim);
        assert_eq!(back.norm, config.norm);
    }

    #[test]
    fn validation_reports_fields() {
        let mut config = RunConfig::default();
        config.image_side = 48;
        config.learning_rate = -1.0;
        match config.validate() {
            Err(CliError::Config(msg)) => {
                assert!(msg.contains("image_side"), "{msg}");
                assert!(msg.contains("learning_rate"), "{msg}");
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_field_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"not_a_field": 1}"#);
        assert!(err.is_err());
    }
}
