//! Optional TOML configuration file. Any long flag can be set here under
//! its kebab-case name; values given on the command line win.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use qppnet::train::{GroupWeighting, HoldoutSpec};

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FileConfig {
    // paths
    pub corpus: Option<PathBuf>,
    pub encoder: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub stats: Option<PathBuf>,
    pub cdf: Option<PathBuf>,
    pub out: Option<PathBuf>,
    // shared
    pub seed: Option<u64>,
    pub strict: Option<bool>,
    pub per_node: Option<bool>,
    pub baseline: Option<bool>,
    pub quiet: Option<bool>,
    // synthesis
    pub plans: Option<usize>,
    pub templates: Option<usize>,
    pub noise_sigma: Option<f64>,
    pub depth_min: Option<usize>,
    pub depth_max: Option<usize>,
    pub fanout_min: Option<usize>,
    pub fanout_max: Option<usize>,
    pub rows_min: Option<f64>,
    pub rows_max: Option<f64>,
    // training
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub holdout_fraction: Option<f64>,
    pub holdout_template_fraction: Option<f64>,
    pub holdout_templates: Option<usize>,
    pub weighting: Option<GroupWeighting>,
    pub hidden_layers: Option<usize>,
    pub hidden_width: Option<usize>,
    pub data_width: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config file {}", path.display()))
    }
}

/// A path that must come from the flag or the config file.
pub fn require_path(cli: Option<PathBuf>, file: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    cli.or(file)
        .ok_or_else(|| anyhow::anyhow!("--{flag} is required (set it or add `{flag}` to the config file)"))
}

/// Collapses the three mutually exclusive holdout flags into one spec.
/// Command-line flags override the whole file-level choice.
pub fn resolve_holdout(
    cli: (Option<f64>, Option<f64>, Option<usize>),
    file: &FileConfig,
) -> Result<Option<HoldoutSpec>> {
    if let Some(spec) = pick_holdout(cli.0, cli.1, cli.2)? {
        return Ok(Some(spec));
    }
    pick_holdout(
        file.holdout_fraction,
        file.holdout_template_fraction,
        file.holdout_templates,
    )
}

fn pick_holdout(
    fraction: Option<f64>,
    template_fraction: Option<f64>,
    template_count: Option<usize>,
) -> Result<Option<HoldoutSpec>> {
    let set = fraction.is_some() as u8 + template_fraction.is_some() as u8
        + template_count.is_some() as u8;
    if set > 1 {
        bail!(
            "choose at most one of holdout-fraction, holdout-template-fraction, holdout-templates"
        );
    }
    Ok(fraction
        .map(HoldoutSpec::RandomFraction)
        .or(template_fraction.map(HoldoutSpec::TemplateFraction))
        .or(template_count.map(HoldoutSpec::TemplateCount)))
}
