use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dec_core::digest::sha256_hex;
use dec_core::ensemble::EnsembleOptions;
use dec_core::segtrain::OptimizerKind;
use dec_core::{ClassTaxonomy, DivisionStrategy, TrainConfig};
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "DEC_SEED";
pub const DEFAULT_CATEGORY_ITERS: usize = 1500;
pub const DEFAULT_ENSEMBLE_ITERS: usize = 3000;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// `cityscapes19` or a taxonomy TOML path.
    #[serde(default = "default_taxonomy")]
    pub taxonomy: String,
    /// Preset name or strategy TOML path.
    pub strategy: String,
    pub sources: Vec<PathBuf>,
    #[serde(default)]
    pub target: Option<PathBuf>,
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ensemble: EnsembleOptions,
    #[serde(default)]
    pub stages: Stages,
}

fn default_taxonomy() -> String {
    "cityscapes19".into()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stages {
    #[serde(default)]
    pub category_sl: StageOverrides,
    #[serde(default)]
    pub category_uda: StageOverrides,
    #[serde(default)]
    pub ensemble: StageOverrides,
    #[serde(default)]
    pub monolithic_sl: StageOverrides,
    #[serde(default)]
    pub monolithic_uda: StageOverrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Full,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageOverrides {
    #[serde(default)]
    pub preset: Preset,
    pub iterations: Option<usize>,
    pub base_lr: Option<f64>,
    pub warmup_iters: Option<usize>,
    pub batch_size: Option<usize>,
    pub ema_alpha: Option<f64>,
    pub pseudo_threshold: Option<f64>,
    pub grad_clip: Option<f64>,
    pub crop: Option<(u32, u32)>,
    pub optimizer: Option<OptimizerKind>,
}

impl StageOverrides {
    fn resolve(&self, ensemble: bool, iterations_flag: Option<usize>) -> TrainConfig {
        let iterations = iterations_flag.or(self.iterations);
        let mut cfg = match (self.preset, ensemble) {
            (Preset::Desk, false) => TrainConfig::category_desk(iterations.unwrap_or(DEFAULT_CATEGORY_ITERS)),
            (Preset::Desk, true) => TrainConfig::ensemble_desk(iterations.unwrap_or(DEFAULT_ENSEMBLE_ITERS)),
            (Preset::Full, false) => TrainConfig::category_full_scale(),
            (Preset::Full, true) => TrainConfig::ensemble_full_scale(),
        };
        if self.preset == Preset::Full {
            if let Some(n) = iterations {
                cfg.iterations = n;
                cfg.warmup_iters = cfg.warmup_iters.min(n);
            }
        }
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { cfg.$f = v; })* };
        }
        set!(base_lr, warmup_iters, batch_size, ema_alpha, pseudo_threshold, optimizer);
        if self.grad_clip.is_some() {
            cfg.grad_clip = self.grad_clip;
        }
        if self.crop.is_some() {
            cfg.crop = self.crop;
        }
        cfg
    }
}

/// A run config with paths made absolute and taxonomy/strategy resolved.
pub struct Loaded {
    pub config: RunConfig,
    pub file_hash: String,
    pub taxonomy: ClassTaxonomy,
    pub strategy: DivisionStrategy,
}

fn absolutize(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn load_taxonomy(spec: &str, base: &Path) -> Result<ClassTaxonomy> {
    if spec.eq_ignore_ascii_case("cityscapes19") {
        return Ok(ClassTaxonomy::cityscapes19());
    }
    let path = absolutize(base, Path::new(spec));
    ClassTaxonomy::load(&path).with_context(|| format!("loading taxonomy {}", path.display()))
}

pub fn load_strategy(spec: &str, base: &Path, taxonomy: &ClassTaxonomy) -> Result<DivisionStrategy> {
    let candidate = absolutize(base, Path::new(spec));
    let spec = if candidate.exists() {
        candidate.display().to_string()
    } else {
        spec.to_string()
    };
    let strategy = DivisionStrategy::resolve(&spec, taxonomy)?;
    dec_core::validate_strategy(taxonomy, &strategy).into_result()?;
    Ok(strategy)
}

impl Loaded {
    pub fn open(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path
            .canonicalize()
            .with_context(|| format!("resolving {}", path.display()))?
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        config.sources = config.sources.iter().map(|p| absolutize(&base, p)).collect();
        config.target = config.target.as_deref().map(|p| absolutize(&base, p));
        config.output = absolutize(&base, &config.output);
        if let Ok(seed) = std::env::var(SEED_ENV) {
            config.seed = seed
                .trim()
                .parse()
                .with_context(|| format!("{SEED_ENV}=`{seed}` is not an unsigned integer"))?;
        }
        if config.sources.is_empty() {
            bail!("config lists no source datasets");
        }
        for p in config.sources.iter().chain(config.target.as_ref()) {
            if !p.exists() {
                bail!("dataset root {} does not exist", p.display());
            }
        }
        let taxonomy = load_taxonomy(&config.taxonomy, &base)?;
        let strategy = load_strategy(&config.strategy, &base, &taxonomy)?;
        Ok(Self {
            config,
            file_hash: sha256_hex(text.as_bytes()),
            taxonomy,
            strategy,
        })
    }

    pub fn train_config(&self, stage: &StageOverrides, ensemble: bool, iterations: Option<usize>) -> TrainConfig {
        stage.resolve(ensemble, iterations).with_seed(self.config.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_iterations_rescale_preset() {
        let o = StageOverrides {
            iterations: Some(200),
            ..Default::default()
        };
        let c = o.resolve(false, None);
        assert_eq!(c.iterations, 200);
        assert_eq!(c.warmup_iters, 10);
        assert_eq!(o.resolve(false, Some(40)).iterations, 40);
    }

    #[test]
    fn full_preset_keeps_values_but_caps_warmup() {
        let o = StageOverrides {
            preset: Preset::Full,
            iterations: Some(500),
            ..Default::default()
        };
        let c = o.resolve(true, None);
        assert_eq!(c.iterations, 500);
        assert_eq!(c.warmup_iters, 500);
        assert_eq!(c.ema_alpha, 0.9999);
    }

    #[test]
    fn overrides_apply() {
        let o = StageOverrides {
            base_lr: Some(0.5),
            grad_clip: Some(2.0),
            ..Default::default()
        };
        let c = o.resolve(false, Some(10));
        assert_eq!(c.base_lr, 0.5);
        assert_eq!(c.grad_clip, Some(2.0));
    }
}
