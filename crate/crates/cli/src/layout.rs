//! Output-root layout shared by every command.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dec_core::segtrain::TOOLKIT_VERSION;
use dec_core::DivisionStrategy;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelStage {
    CategorySl,
    CategoryUda,
    Ensemble,
    MonolithicSl,
    MonolithicUda,
}

impl ModelStage {
    pub fn dir_name(self) -> &'static str {
        match self {
            ModelStage::CategorySl => "category-sl",
            ModelStage::CategoryUda => "category-uda",
            ModelStage::Ensemble => "ensemble",
            ModelStage::MonolithicSl => "monolithic-sl",
            ModelStage::MonolithicUda => "monolithic-uda",
        }
    }
}

pub fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
        }
    }

    pub fn category_dir_name(strategy: &DivisionStrategy, j: usize) -> String {
        format!("{j}-{}", slug(&strategy.categories[j].name))
    }

    pub fn remap_dir(&self, source: usize, strategy: &DivisionStrategy, j: usize) -> PathBuf {
        self.root
            .join("remap")
            .join(format!("source{source}"))
            .join(Self::category_dir_name(strategy, j))
    }

    pub fn checkpoint_dir(&self, stage: ModelStage, category: Option<(&DivisionStrategy, usize)>) -> PathBuf {
        let dir = self.root.join("checkpoints").join(stage.dir_name());
        match category {
            Some((s, j)) => dir.join(Self::category_dir_name(s, j)),
            None => dir,
        }
    }

    pub fn manifest_path(&self, name: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{name}.json"))
    }
}

/// Provenance record written by every command.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub toolkit_version: &'static str,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub metrics: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            toolkit_version: TOOLKIT_VERSION,
            seed: None,
            config_hash: None,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            metrics: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, key: impl Into<String>, hash: impl Into<String>) -> &mut Self {
        self.inputs.insert(key.into(), hash.into());
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.display().to_string());
        self
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

/// SHA-256 of a file, for manifest inputs.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(dec_core::digest::sha256_hex(&bytes))
}
