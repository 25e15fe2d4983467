use std::path::{Path, PathBuf};

use fparma::estimate::RegularizationConfig;
use fparma::model::ModelDocument;
use fparma::presets::Example42Params;
use fparma::FparmaModel;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Validate,
    Simulate,
    Covariance,
    Estimate,
    Rates,
    Decay,
    Example42,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Simulate => "simulate",
            Command::Covariance => "covariance",
            Command::Estimate => "estimate",
            Command::Rates => "rates",
            Command::Decay => "decay",
            Command::Example42 => "example42",
        }
    }

    fn is_stochastic(self) -> bool {
        matches!(
            self,
            Command::Simulate | Command::Estimate | Command::Rates | Command::Decay
        )
    }
}

/// A model given inline or as a path to a model JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    Path(PathBuf),
    Inline(Box<ModelDocument>),
}

/// Experiment configuration file. Unknown fields are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Option<Command>,
    pub model: Option<ModelSource>,
    /// Builds the packaged diagonal-plus-coupling test model instead of `model`.
    pub example42: Option<Example42Params>,
    /// Sample sizes in cycles; `simulate` and `estimate` use the first.
    #[serde(default)]
    pub n_cycles: Vec<usize>,
    pub n_seeds: Option<usize>,
    pub h_max: Option<usize>,
    #[serde(default)]
    pub m_values: Vec<usize>,
    #[serde(default)]
    pub regularization: RegularizationConfig,
    pub output_dir: Option<PathBuf>,
    pub master_seed: Option<u64>,
    /// Burn-in in time steps; defaults to the model-derived value.
    pub burn_in: Option<usize>,
    /// Coupled pairs per `m` for `decay`.
    pub n_paths: Option<usize>,
    /// Moment order for `decay` (default 2).
    pub tau: Option<f64>,
    /// Sample path CSV for `estimate`; simulated from the model when absent.
    pub input: Option<PathBuf>,
    /// Period of `input` when no model is given.
    pub period: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    /// Reads a config; relative model and input paths are resolved against
    /// the config file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(ModelSource::Path(p)) = &mut cfg.model {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = &mut cfg.input {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Reconciles the command given on the command line with the file.
    pub fn resolve_command(&self, cli: Option<Command>) -> CliResult<Command> {
        match (cli, self.command) {
            (Some(a), Some(b)) if a != b => Err(CliError::Config(format!(
                "command line says `{}` but config says `{}`",
                a.name(),
                b.name()
            ))),
            (Some(a), _) | (None, Some(a)) => Ok(a),
            (None, None) => Err(CliError::Config("no command given".into())),
        }
    }

    /// Command-specific required fields.
    pub fn check_required(&self, command: Command) -> CliResult<()> {
        let missing = |what: &str| Err(CliError::Config(format!("`{}` requires `{what}`", command.name())));
        if command.is_stochastic() && self.master_seed.is_none() {
            return missing("master_seed");
        }
        if self.model.is_some() && self.example42.is_some() {
            return Err(CliError::Config("give either `model` or `example42`, not both".into()));
        }
        let has_model = self.model.is_some() || self.example42.is_some();
        match command {
            Command::Validate | Command::Covariance | Command::Decay if !has_model => missing("model"),
            Command::Simulate if !has_model => missing("model"),
            Command::Simulate | Command::Estimate if self.input.is_none() && self.n_cycles.is_empty() => {
                missing("n_cycles")
            }
            Command::Estimate if !has_model && (self.input.is_none() || self.period.is_none()) => {
                missing("model, or input and period")
            }
            Command::Rates if !has_model => missing("model"),
            Command::Rates if self.n_cycles.is_empty() => missing("n_cycles"),
            Command::Rates if self.n_seeds.is_none_or(|n| n < 20) => {
                Err(CliError::Config("`rates` requires n_seeds >= 20".into()))
            }
            Command::Decay if self.m_values.is_empty() || self.n_paths.is_none() => missing("m_values and n_paths"),
            _ => Ok(()),
        }
    }

    pub fn model(&self) -> CliResult<Option<FparmaModel>> {
        if let Some(p) = &self.example42 {
            return Ok(Some(p.model()?));
        }
        let doc = match &self.model {
            None => return Ok(None),
            Some(ModelSource::Inline(doc)) => (**doc).clone(),
            Some(ModelSource::Path(path)) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("cannot read model {}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("invalid model file: {e}")))?
            }
        };
        Ok(Some(FparmaModel::from_document(&doc)?))
    }

    /// Model document without validation, for `validate`.
    pub fn model_unchecked(&self) -> CliResult<Option<ModelDocument>> {
        if let Some(p) = &self.example42 {
            p.validate()?;
            return Ok(Some(p.model()?.to_document()));
        }
        match &self.model {
            None => Ok(None),
            Some(ModelSource::Inline(doc)) => Ok(Some((**doc).clone())),
            Some(ModelSource::Path(path)) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("cannot read model {}: {e}", path.display())))?;
                Ok(Some(
                    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("invalid model file: {e}")))?,
                ))
            }
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}
