//! Checkpoint directories: `weights.bin`, `weights.idx` and `manifest.json`.
//!
//! `weights.idx` has one line per tensor: `name<TAB>shape<TAB>dtype<TAB>offset`
//! where `shape` is `x`-separated and `offset` is in bytes into `weights.bin`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::nn::{ArchSpec, ParamStore, SegNet};
use crate::scalar::{decode_le, Scalar};

pub const WEIGHTS_FILE: &str = "weights.bin";
pub const INDEX_FILE: &str = "weights.idx";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Category { index: usize, name: String },
    Monolithic,
    Ensemble,
}

/// Which stored network answers `predict`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceRole {
    Student,
    Teacher,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub model: ModelKind,
    pub arch: ArchSpec,
    pub dtype: String,
    pub config_hash: String,
    pub taxonomy_hash: String,
    #[serde(default)]
    pub strategy_hash: Option<String>,
    /// Weight hashes of the category models an ensemble was trained against.
    #[serde(default)]
    pub category_model_hashes: Vec<String>,
    /// Input normalization an ensemble expects.
    #[serde(default)]
    pub normalization: Option<String>,
    pub iterations: usize,
    pub seed: u64,
    pub inference: InferenceRole,
    pub weights_hash: String,
    #[serde(default)]
    pub final_loss: Option<f64>,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
    pub toolkit_version: String,
}

impl CheckpointManifest {
    /// Manifest skeleton; `weights_hash` and `dtype` are filled in on save.
    pub fn new(model: ModelKind, arch: ArchSpec, config_hash: String, taxonomy_hash: String) -> Self {
        Self {
            model,
            arch,
            dtype: String::new(),
            config_hash,
            taxonomy_hash,
            strategy_hash: None,
            category_model_hashes: Vec::new(),
            normalization: None,
            iterations: 0,
            seed: 0,
            inference: InferenceRole::Student,
            weights_hash: String::new(),
            final_loss: None,
            metrics: BTreeMap::new(),
            toolkit_version: TOOLKIT_VERSION.to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub manifest: CheckpointManifest,
    pub student: SegNet<T>,
    pub teacher: Option<SegNet<T>>,
}

fn encode<T: Scalar>(nets: &[(&str, &SegNet<T>)]) -> (Vec<u8>, String) {
    let mut bytes = Vec::new();
    let mut index = String::new();
    for (prefix, net) in nets {
        let store = net.params();
        for e in store.entries() {
            let shape: Vec<String> = e.shape.iter().map(usize::to_string).collect();
            writeln!(index, "{prefix}/{}\t{}\t{}\t{}", e.name, shape.join("x"), T::DTYPE, bytes.len()).unwrap();
            for &v in &store.as_slice()[e.offset..e.offset + e.numel()] {
                v.to_le_bytes_vec(&mut bytes);
            }
        }
    }
    (bytes, index)
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(manifest: CheckpointManifest, student: SegNet<T>, teacher: Option<SegNet<T>>) -> Self {
        let mut ckpt = Self {
            manifest,
            student,
            teacher,
        };
        ckpt.manifest.dtype = T::DTYPE.to_string();
        ckpt.manifest.weights_hash = ckpt.weights_hash();
        ckpt
    }

    pub fn inference_net(&self) -> &SegNet<T> {
        match (self.manifest.inference, &self.teacher) {
            (InferenceRole::Teacher, Some(t)) => t,
            _ => &self.student,
        }
    }

    fn nets(&self) -> Vec<(&str, &SegNet<T>)> {
        let mut nets = vec![("student", &self.student)];
        if let Some(t) = &self.teacher {
            nets.push(("teacher", t));
        }
        nets
    }

    /// SHA-256 of the serialized weight bytes.
    pub fn weights_hash(&self) -> String {
        sha256_hex(&encode(&self.nets()).0)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (bytes, index) = encode(&self.nets());
        let mut manifest = self.manifest.clone();
        manifest.dtype = T::DTYPE.to_string();
        manifest.weights_hash = sha256_hex(&bytes);
        let write = |name: &str, data: &[u8]| {
            let p = dir.join(name);
            fs::write(&p, data).map_err(|e| Error::io(&p, e))
        };
        write(WEIGHTS_FILE, &bytes)?;
        write(INDEX_FILE, index.as_bytes())?;
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write(MANIFEST_FILE, json.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read(&p).map_err(|e| Error::io(&p, e))
        };
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest: CheckpointManifest =
            serde_json::from_slice(&read(MANIFEST_FILE)?).map_err(|e| Error::format(&manifest_path, e))?;
        let bytes = read(WEIGHTS_FILE)?;
        let idx_path = dir.join(INDEX_FILE);
        if sha256_hex(&bytes) != manifest.weights_hash {
            return Err(Error::format(dir.join(WEIGHTS_FILE), "weights hash does not match manifest"));
        }
        let index = String::from_utf8(read(INDEX_FILE)?).map_err(|e| Error::format(&idx_path, e))?;

        let mut stores: BTreeMap<String, ParamStore<T>> = BTreeMap::new();
        for (line_no, line) in index.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = |msg: &str| Error::format(&idx_path, format!("line {}: {msg}", line_no + 1));
            let fields: Vec<&str> = line.split('\t').collect();
            let [name, shape, dtype, offset] = fields[..] else {
                return Err(bad("expected 4 tab-separated fields"));
            };
            let (prefix, tensor) = name.split_once('/').ok_or_else(|| bad("name lacks a network prefix"))?;
            let shape: Vec<usize> = shape
                .split('x')
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|_| bad("bad shape"))?;
            let offset: usize = offset.parse().map_err(|_| bad("bad offset"))?;
            let width = match dtype {
                "f32" => 4,
                "f64" => 8,
                _ => return Err(bad("unknown dtype")),
            };
            let end = offset + width * shape.iter().product::<usize>();
            let raw = bytes.get(offset..end).ok_or_else(|| bad("tensor extends past weights file"))?;
            let values = decode_le::<T>(dtype, raw).ok_or_else(|| bad("undecodable tensor"))?;
            stores
                .entry(prefix.to_string())
                .or_default()
                .push(tensor.to_string(), shape, &values);
        }
        let mut take = |role: &str| -> Result<Option<SegNet<T>>> {
            stores
                .remove(role)
                .map(|p| SegNet::from_params(manifest.arch.clone(), p))
                .transpose()
        };
        let student = take("student")?.ok_or_else(|| Error::format(&idx_path, "no student tensors"))?;
        let teacher = take("teacher")?;
        if manifest.inference == InferenceRole::Teacher && teacher.is_none() {
            return Err(Error::format(&manifest_path, "inference role is teacher but no teacher is stored"));
        }
        Ok(Self {
            manifest,
            student,
            teacher,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint<f32> {
        let arch = ArchSpec::category(3);
        let mut student = SegNet::<f32>::new(arch.clone(), 1).unwrap();
        student.params_mut().as_mut_slice()[0] = f32::MIN_POSITIVE / 3.0;
        let teacher = SegNet::new(arch.clone(), 2).unwrap();
        let mut m = CheckpointManifest::new(
            ModelKind::Category {
                index: 1,
                name: "vehicle".into(),
            },
            arch,
            "cfg".into(),
            "tax".into(),
        );
        m.inference = InferenceRole::Teacher;
        Checkpoint::new(m, student, Some(teacher))
    }

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = sample();
        ckpt.save(dir.path()).unwrap();
        let back = Checkpoint::<f32>::load(dir.path()).unwrap();
        assert_eq!(back.student.params(), ckpt.student.params());
        assert_eq!(back.teacher.as_ref().unwrap().params(), ckpt.teacher.as_ref().unwrap().params());
        assert_eq!(back.manifest, ckpt.manifest);
        assert_eq!(back.weights_hash(), ckpt.manifest.weights_hash);
    }

    #[test]
    fn f32_weights_widen_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = sample();
        ckpt.save(dir.path()).unwrap();
        let wide = Checkpoint::<f64>::load(dir.path()).unwrap();
        for (a, b) in wide.student.params().as_slice().iter().zip(ckpt.student.params().as_slice()) {
            assert_eq!(*a, f64::from(*b));
        }
    }

    #[test]
    fn tampered_weights_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        sample().save(dir.path()).unwrap();
        let p = dir.path().join(WEIGHTS_FILE);
        let mut bytes = fs::read(&p).unwrap();
        bytes[10] ^= 1;
        fs::write(&p, bytes).unwrap();
        assert!(matches!(Checkpoint::<f32>::load(dir.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn index_lists_prefixed_names() {
        let dir = tempfile::tempdir().unwrap();
        sample().save(dir.path()).unwrap();
        let idx = fs::read_to_string(dir.path().join(INDEX_FILE)).unwrap();
        let first = idx.lines().next().unwrap();
        assert!(first.starts_with("student/enc0.conv_a.weight\t12x3x3x3\tf32\t0"), "{first}");
        assert!(idx.contains("teacher/head.bias"));
    }

    #[test]
    fn inference_net_follows_role() {
        let ckpt = sample();
        assert_eq!(ckpt.inference_net().params(), ckpt.teacher.as_ref().unwrap().params());
    }
}
