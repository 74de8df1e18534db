//! Run configuration: a JSON file of optional keys layered over preset
//! defaults, then command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::Context;
use dstc_core::optim::AdamConfig;
use dstc_core::train::{EarlyStop, TrainConfig};
use dstc_core::{ArchPreset, Metric, PresetName};
use serde::{Deserialize, Serialize};

use crate::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PresetChoice {
    /// 128-64 encoders, 64-32-64 translators
    #[default]
    Compact,
    Audioset,
    Wikipedia,
    Pascal,
}

impl PresetChoice {
    pub fn arch(self, x_dim: usize, y_dim: usize, classes: usize) -> ArchPreset {
        match self {
            PresetChoice::Compact => ArchPreset::compact(x_dim, y_dim, classes),
            PresetChoice::Audioset => ArchPreset::audioset(x_dim, y_dim, classes),
            PresetChoice::Wikipedia => ArchPreset::wikipedia(x_dim, y_dim, classes),
            PresetChoice::Pascal => ArchPreset::pascal(x_dim, y_dim, classes),
        }
    }

    fn name(self) -> PresetName {
        match self {
            PresetChoice::Compact => PresetName::Custom,
            PresetChoice::Audioset => PresetName::Audioset,
            PresetChoice::Wikipedia => PresetName::Wikipedia,
            PresetChoice::Pascal => PresetName::Pascal,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Stage1File {
    epochs: Option<usize>,
    lr: Option<f64>,
    batch_size: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsFile {
    alpha: Option<f64>,
    beta: Option<f64>,
    gamma: Option<f64>,
    delta: Option<f64>,
    pointwise_metric: Option<Metric>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Stage2File {
    epochs: Option<usize>,
    lr: Option<f64>,
    batch_size: Option<usize>,
    weights: Option<WeightsFile>,
    include_ce: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EarlyStopFile {
    enabled: Option<bool>,
    patience: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    preset: Option<PresetChoice>,
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    stage1: Option<Stage1File>,
    stage2: Option<Stage2File>,
    early_stop: Option<EarlyStopFile>,
    adam: Option<AdamConfig>,
}

/// Fully resolved run settings, echoed as `config.json` next to the outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: PresetChoice,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub train: TrainConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub preset: Option<PresetChoice>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub stage2_weights: Option<[f64; 4]>,
    pub train_metric: Option<Metric>,
    pub stage1_epochs: Option<usize>,
    pub stage2_epochs: Option<usize>,
    pub stage2_lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub no_early_stop: bool,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>, ov: &Overrides) -> anyhow::Result<Self> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str::<ConfigFile>(&text).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?
            }
            None => ConfigFile::default(),
        };
        let preset = ov.preset.or(file.preset).unwrap_or_default();
        let mut t = TrainConfig::for_preset(preset.name());
        set(&mut t.seed, file.seed);
        if let Some(s) = file.stage1 {
            set(&mut t.stage1.epochs, s.epochs);
            set(&mut t.stage1.lr, s.lr);
            set(&mut t.stage1.batch_size, s.batch_size);
        }
        if let Some(s) = file.stage2 {
            set(&mut t.stage2.epochs, s.epochs);
            set(&mut t.stage2.lr, s.lr);
            set(&mut t.stage2.batch_size, s.batch_size);
            set(&mut t.stage2.include_ce, s.include_ce);
            if let Some(w) = s.weights {
                let tw = &mut t.stage2.weights;
                set(&mut tw.alpha, w.alpha);
                set(&mut tw.beta, w.beta);
                set(&mut tw.gamma, w.gamma);
                set(&mut tw.delta, w.delta);
                set(&mut tw.pointwise_metric, w.pointwise_metric);
            }
        }
        if let Some(es) = file.early_stop {
            let patience = es.patience.unwrap_or(EarlyStop::default().patience);
            t.early_stop = match es.enabled {
                Some(false) => None,
                _ => Some(EarlyStop { patience }),
            };
        }
        set(&mut t.adam, file.adam);

        set(&mut t.seed, ov.seed);
        if let Some([a, b, c, d]) = ov.stage2_weights {
            let w = &mut t.stage2.weights;
            (w.alpha, w.beta, w.gamma, w.delta) = (a, b, c, d);
        }
        set(&mut t.stage2.weights.pointwise_metric, ov.train_metric);
        set(&mut t.stage1.epochs, ov.stage1_epochs);
        set(&mut t.stage2.epochs, ov.stage2_epochs);
        set(&mut t.stage2.lr, ov.stage2_lr);
        if let Some(b) = ov.batch_size {
            t.stage1.batch_size = b;
            t.stage2.batch_size = b;
        }
        if ov.no_early_stop {
            t.early_stop = None;
        }
        t.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(Self {
            preset,
            data: ov.data.clone().or(file.data),
            out: ov.out.clone().or(file.out),
            train: t,
        })
    }

    pub fn data_path(&self) -> anyhow::Result<PathBuf> {
        let p = self.data.clone().ok_or_else(|| ConfigError("no dataset given (--data or \"data\")".into()))?;
        Ok(manifest_path(&p))
    }

    pub fn out_dir(&self) -> anyhow::Result<PathBuf> {
        Ok(self.out.clone().ok_or_else(|| ConfigError("no output directory given (--out or \"out\")".into()))?)
    }
}

/// A dataset directory stands for its `manifest.txt`.
pub fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("manifest.txt")
    } else {
        p.to_path_buf()
    }
}

/// `a,b,c,d` into (alpha, beta, gamma, delta).
pub fn parse_weights(s: &str) -> Result<[f64; 4], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(format!("expected four comma-separated weights, got {}", parts.len()));
    }
    let mut out = [0.0; 4];
    for (slot, p) in out.iter_mut().zip(&parts) {
        let v: f64 = p.parse().map_err(|_| format!("`{p}` is not a number"))?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(format!("weight {v} must be finite and non-negative"));
        }
        *slot = v;
    }
    Ok(out)
}

pub fn parse_metric(s: &str) -> Result<Metric, String> {
    Metric::parse(s).ok_or_else(|| format!("unknown metric `{s}` (expected euc or cos)"))
}
