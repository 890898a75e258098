//! Experiment configuration: one strict TOML document, overridable by flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use envdiff_core::denoiser::{FitOptions, Preconditioning};
use envdiff_core::metrics::PesqHook;
use envdiff_core::pipeline::EnhanceSetup;
use envdiff_core::sampler::{SamplerConfig, SamplerKind};
use envdiff_core::schedule::ScheduleParams;
use envdiff_core::simulate::{Condition, DatasetOptions, SnrReference, SynthOptions};
use envdiff_core::spectral::StftConfig;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct ExperimentConfig {
    /// Root seed; every random stream is derived from it by name.
    pub seed: u64,
    pub schedule: ScheduleParams,
    pub stft: StftConfig,
    pub sampler: SamplerConfig,
    pub dataset: DatasetSection,
    pub denoiser: DenoiserSection,
    pub fit: FitSection,
    pub evaluate: EvaluateSection,
    pub sweep: SweepSection,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Output directory of `simulate`.
    pub root: PathBuf,
    /// Generate stand-in databases instead of reading manifests.
    pub synthetic: bool,
    /// One CSV manifest per database, five per kind.
    pub manifests: Vec<PathBuf>,
    /// Training databases per kind, 1 or 4.
    pub n_train: usize,
    /// 1-based fold indices to render.
    pub folds: Vec<usize>,
    pub train_hours: f64,
    pub test_hours: f64,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    pub max_noise_sources: usize,
    pub snr_reference: SnrReference,
    pub synth: SynthOptions,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let d = DatasetOptions::default();
        Self {
            root: PathBuf::from("data"),
            synthetic: false,
            manifests: Vec::new(),
            n_train: 1,
            folds: vec![1],
            train_hours: d.train_hours,
            test_hours: d.test_hours,
            snr_min_db: d.snr_min_db,
            snr_max_db: d.snr_max_db,
            max_noise_sources: d.max_noise_sources,
            snr_reference: d.snr_reference,
            synth: SynthOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DenoiserKind {
    /// Posterior mean over the mixture's own environmental noise.
    Oracle,
    /// Shrinkage under a zero-mean Gaussian prior.
    Gaussian,
    /// Fitted model file.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserSection {
    pub kind: DenoiserKind,
    pub model: Option<PathBuf>,
    pub sigma_prior: f64,
    pub sigma_data: f64,
}

impl Default for DenoiserSection {
    fn default() -> Self {
        Self {
            kind: DenoiserKind::Linear,
            model: None,
            sigma_prior: 0.1,
            sigma_data: Preconditioning::default().sigma_data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub n_sigma_bins: usize,
    pub draws_per_pair: usize,
    pub per_frequency: bool,
    pub stratified: bool,
    /// Cap on the number of training mixtures used.
    pub max_pairs: Option<usize>,
}

impl Default for FitSection {
    fn default() -> Self {
        let f = FitOptions::default();
        Self {
            n_sigma_bins: f.n_sigma_bins,
            draws_per_pair: f.draws_per_pair,
            per_frequency: f.per_frequency,
            stratified: f.stratified,
            max_pairs: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    /// External PESQ scorer with `{ref}` and `{deg}` placeholders.
    pub pesq_command: Option<String>,
    /// Conditions to enhance and score; both test conditions when empty.
    pub conditions: Vec<Condition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub n_steps: Vec<usize>,
    pub samplers: Vec<SamplerKind>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            n_steps: vec![4, 8, 16, 32, 64],
            samplers: vec![SamplerKind::Pc, SamplerKind::Edm],
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: Self = toml::from_str(&text).map_err(|source| CliError::Toml {
            path: path.to_path_buf(),
            source,
        })?;
        // relative paths in the file are relative to the file
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(cfg.rebased(base))
    }

    fn rebased(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset.root);
        self.dataset.manifests.iter_mut().for_each(fix);
        if let Some(m) = self.denoiser.model.as_mut() {
            fix(m);
        }
        self
    }

    /// Structural checks plus existence of every referenced input path.
    pub fn validate(&self) -> Result<()> {
        self.enhance_setup().validate()?;
        self.dataset_options().validate()?;
        let d = &self.dataset;
        if d.n_train != 1 && d.n_train != 4 {
            return Err(CliError::Config(format!("dataset.n_train must be 1 or 4, got {}", d.n_train)));
        }
        if d.folds.is_empty() || d.folds.iter().any(|f| !(1..=5).contains(f)) {
            return Err(CliError::Config(format!("dataset.folds must lie in 1..=5, got {:?}", d.folds)));
        }
        for m in &d.manifests {
            if !m.is_file() {
                return Err(CliError::Config(format!("manifest {} does not exist", m.display())));
            }
        }
        if let Some(m) = &self.denoiser.model {
            if self.denoiser.kind == DenoiserKind::Linear && !m.is_file() {
                return Err(CliError::Config(format!("model file {} does not exist", m.display())));
            }
        }
        if !(self.denoiser.sigma_prior > 0.0) || !(self.denoiser.sigma_data > 0.0) {
            return Err(CliError::Config("denoiser sigma_prior and sigma_data must be positive".into()));
        }
        if self.fit.n_sigma_bins == 0 || self.fit.draws_per_pair == 0 {
            return Err(CliError::Config("fit.n_sigma_bins and fit.draws_per_pair must be positive".into()));
        }
        if self.sweep.n_steps.contains(&0) || self.sweep.samplers.is_empty() {
            return Err(CliError::Config("sweep needs samplers and positive step counts".into()));
        }
        if let Some(cmd) = &self.evaluate.pesq_command {
            PesqHook::new(cmd.clone())?;
        }
        if self.evaluate.conditions.contains(&Condition::Train) {
            log::warn!("evaluating the training condition");
        }
        Ok(())
    }

    pub fn enhance_setup(&self) -> EnhanceSetup {
        EnhanceSetup {
            schedule: self.schedule,
            stft: self.stft,
            sampler: self.sampler,
        }
    }

    pub fn dataset_options(&self) -> DatasetOptions {
        let d = &self.dataset;
        DatasetOptions {
            seed: self.seed,
            train_hours: d.train_hours,
            test_hours: d.test_hours,
            snr_min_db: d.snr_min_db,
            snr_max_db: d.snr_max_db,
            max_noise_sources: d.max_noise_sources,
            snr_reference: d.snr_reference,
        }
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            n_sigma_bins: self.fit.n_sigma_bins,
            draws_per_pair: self.fit.draws_per_pair,
            per_frequency: self.fit.per_frequency,
            stratified: self.fit.stratified,
        }
    }

    pub fn test_conditions(&self) -> Vec<Condition> {
        if self.evaluate.conditions.is_empty() {
            vec![Condition::Matched, Condition::Mismatched]
        } else {
            self.evaluate.conditions.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg: ExperimentConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ExperimentConfig>("sed = 1").is_err());
        assert!(toml::from_str::<ExperimentConfig>("[sampler]\nsteps = 4").is_err());
        assert!(toml::from_str::<ExperimentConfig>("[schedule]\nnu = 1.0\nmu = 2").is_err());
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg: ExperimentConfig =
            toml::from_str("seed = 9\n[sampler]\nkind = \"pc\"\nn_steps = 8\n[schedule]\nbeta_max = 5.0").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.sampler.kind, SamplerKind::Pc);
        assert_eq!(cfg.sampler.r, 0.5);
        assert_eq!(cfg.schedule.beta_max, 5.0);
        assert_eq!(cfg.schedule.nu, 1.5);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let mut cfg = ExperimentConfig::default();
        cfg.dataset.n_train = 3;
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        let mut cfg = ExperimentConfig::default();
        cfg.dataset.manifests = vec![PathBuf::from("/nonexistent/speech1.csv")];
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        let mut cfg = ExperimentConfig::default();
        cfg.sampler.n_steps = 0;
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
    }
}
