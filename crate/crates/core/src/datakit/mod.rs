//! Datasets: on-disk layout, multi-source composition, sample loading and the
//! procedural toy scene generator.

mod codec;
mod toy;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::imageops::{self, FilterType};
use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

pub use codec::{read_label, read_rgb, write_label, write_rgb};
pub use toy::{generate_toy_dataset, toy_palette, DomainParams, SceneSpec};

use crate::error::{Error, Result};
use crate::mask::LabelMask;
use crate::nn::Tensor3;
use crate::scalar::Scalar;
use crate::taxonomy::ClassTaxonomy;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const TAXONOMY_FILE: &str = "taxonomy.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ResolutionPolicy {
    #[default]
    None,
    /// Bilinear for images, nearest neighbour for labels.
    Resize { width: u32, height: u32 },
    /// Centred crop.
    Crop { width: u32, height: u32 },
}

#[derive(Debug, Clone)]
pub enum ImageRef {
    File(PathBuf),
    Memory(Arc<RgbImage>),
}

#[derive(Debug, Clone)]
pub enum LabelRef {
    File(PathBuf),
    Memory(Arc<LabelMask>),
}

#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub id: String,
    pub source_tag: String,
    pub image: ImageRef,
    pub label: Option<LabelRef>,
    pub policy: ResolutionPolicy,
}

/// An ordered list of items sharing one taxonomy.
#[derive(Debug, Clone)]
pub struct Dataset {
    items: Vec<DatasetItem>,
    taxonomy_hash: String,
}

/// A decoded image in `[0, 1]` with its label, if any.
#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub image: Tensor3<T>,
    pub label: Option<LabelMask>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    taxonomy: String,
    taxonomy_hash: String,
    source_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    images_root: Option<String>,
    #[serde(default)]
    policy: ResolutionPolicy,
    labeled: bool,
    items: Vec<String>,
}

impl Dataset {
    pub fn new(items: Vec<DatasetItem>, taxonomy: &ClassTaxonomy) -> Self {
        Self {
            items,
            taxonomy_hash: taxonomy.hash(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[DatasetItem] {
        &self.items
    }

    pub fn taxonomy_hash(&self) -> &str {
        &self.taxonomy_hash
    }

    pub fn is_labeled(&self) -> bool {
        self.items.iter().all(|i| i.label.is_some())
    }

    pub fn with_policy(mut self, policy: ResolutionPolicy) -> Self {
        for item in &mut self.items {
            item.policy = policy;
        }
        self
    }

    /// Same images with labels dropped (an unlabelled target split).
    pub fn without_labels(mut self) -> Self {
        for item in &mut self.items {
            item.label = None;
        }
        self
    }

    /// Items `range`, in order.
    pub fn subset(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            items: self.items[range].to_vec(),
            taxonomy_hash: self.taxonomy_hash.clone(),
        }
    }

    /// Opens a dataset root (`images/`, `labels/`, `manifest.toml`).
    pub fn open(root: &Path) -> Result<(Self, ClassTaxonomy)> {
        let manifest_path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest =
            toml::from_str(&text).map_err(|e| Error::format(&manifest_path, e))?;
        let taxonomy_path = resolve(root, &manifest.taxonomy);
        let taxonomy = ClassTaxonomy::load(&taxonomy_path)?;
        if taxonomy.hash() != manifest.taxonomy_hash {
            return Err(Error::format(
                &manifest_path,
                format!("taxonomy {} does not match the recorded hash", taxonomy_path.display()),
            ));
        }
        let images_root = manifest
            .images_root
            .as_deref()
            .map_or_else(|| root.to_path_buf(), |p| resolve(root, p));
        let items = manifest
            .items
            .iter()
            .map(|id| DatasetItem {
                id: id.clone(),
                source_tag: manifest.source_tag.clone(),
                image: ImageRef::File(images_root.join("images").join(format!("{id}.png"))),
                label: manifest
                    .labeled
                    .then(|| LabelRef::File(root.join("labels").join(format!("{id}.png")))),
                policy: manifest.policy,
            })
            .collect();
        Ok((Self::new(items, &taxonomy), taxonomy))
    }

    /// Writes every item as PNG files plus a manifest and a taxonomy copy.
    pub fn write(&self, root: &Path, taxonomy: &ClassTaxonomy) -> Result<()> {
        self.check_taxonomy(taxonomy)?;
        let tag = self.items.first().map_or("", |i| i.source_tag.as_str());
        std::fs::create_dir_all(root.join("images")).map_err(|e| Error::io(root, e))?;
        let labeled = self.is_labeled();
        if labeled {
            std::fs::create_dir_all(root.join("labels")).map_err(|e| Error::io(root, e))?;
        }
        for (i, item) in self.items.iter().enumerate() {
            write_rgb(&root.join("images").join(format!("{}.png", item.id)), &self.raw_image(i)?)?;
            if labeled {
                let label = self.raw_label(i, taxonomy)?.expect("labeled");
                write_label(&root.join("labels").join(format!("{}.png", item.id)), &label)?;
            }
        }
        write_taxonomy(root, taxonomy)?;
        let manifest = Manifest {
            taxonomy: TAXONOMY_FILE.into(),
            taxonomy_hash: taxonomy.hash(),
            source_tag: tag.to_string(),
            images_root: None,
            policy: self.items.first().map(|i| i.policy).unwrap_or_default(),
            labeled,
            items: self.items.iter().map(|i| i.id.clone()).collect(),
        };
        write_manifest(root, &manifest)
    }

    pub(crate) fn check_taxonomy(&self, taxonomy: &ClassTaxonomy) -> Result<()> {
        if self.taxonomy_hash != taxonomy.hash() {
            return Err(Error::Contract("dataset was built for a different taxonomy".into()));
        }
        Ok(())
    }

    fn item(&self, index: usize) -> Result<&DatasetItem> {
        self.items.get(index).ok_or(Error::Range {
            what: "dataset index",
            value: index,
            bound: self.items.len(),
        })
    }

    /// The stored image before the resolution policy.
    pub fn raw_image(&self, index: usize) -> Result<RgbImage> {
        match &self.item(index)?.image {
            ImageRef::File(p) => read_rgb(p),
            ImageRef::Memory(img) => Ok((**img).clone()),
        }
    }

    /// The stored label before the resolution policy, validated.
    pub fn raw_label(&self, index: usize, taxonomy: &ClassTaxonomy) -> Result<Option<LabelMask>> {
        let label = match &self.item(index)?.label {
            None => return Ok(None),
            Some(LabelRef::File(p)) => read_label(p)?,
            Some(LabelRef::Memory(m)) => (**m).clone(),
        };
        if let Some(&bad) = label.as_slice().iter().find(|&&v| !taxonomy.is_valid_label(v)) {
            return Err(Error::Data(format!(
                "label of item `{}` holds value {bad}, not a class id or the ignore id",
                self.items[index].id
            )));
        }
        Ok(Some(label))
    }

    /// Decodes item `index`, applies its resolution policy and validates the
    /// label against `taxonomy`.
    pub fn load_sample<T: Scalar>(&self, index: usize, taxonomy: &ClassTaxonomy) -> Result<Sample<T>> {
        self.check_taxonomy(taxonomy)?;
        let item = self.item(index)?;
        let image = apply_policy_rgb(self.raw_image(index)?, item.policy);
        let label = self
            .raw_label(index, taxonomy)?
            .map(|l| apply_policy_label(l, item.policy));
        if let Some(l) = &label {
            if (l.width() as u32, l.height() as u32) != image.dimensions() {
                return Err(Error::Data(format!(
                    "item `{}`: label is {}x{} but image is {}x{}",
                    item.id,
                    l.width(),
                    l.height(),
                    image.width(),
                    image.height()
                )));
            }
        }
        Ok(Sample {
            image: rgb_to_tensor(&image),
            label,
        })
    }
}

/// Concatenates datasets in order, keeping each item's source tag.
pub fn compose_sources(datasets: &[Dataset]) -> Result<Dataset> {
    let first = datasets
        .first()
        .ok_or_else(|| Error::Contract("no datasets to compose".into()))?;
    let mut items = Vec::with_capacity(datasets.iter().map(Dataset::len).sum());
    for ds in datasets {
        if ds.taxonomy_hash != first.taxonomy_hash {
            return Err(Error::Contract("datasets use different taxonomies".into()));
        }
        items.extend(ds.items.iter().cloned());
    }
    Ok(Dataset {
        items,
        taxonomy_hash: first.taxonomy_hash.clone(),
    })
}

/// Writes only label files for an existing image root (used for remapped
/// category labels).
pub fn write_label_set(
    root: &Path,
    images_root: &Path,
    source_tag: &str,
    taxonomy_file: &Path,
    taxonomy: &ClassTaxonomy,
    labels: &[(String, LabelMask)],
) -> Result<()> {
    let dir = root.join("labels");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (id, label) in labels {
        write_label(&dir.join(format!("{id}.png")), label)?;
    }
    let manifest = Manifest {
        taxonomy: absolute(taxonomy_file).display().to_string(),
        taxonomy_hash: taxonomy.hash(),
        source_tag: source_tag.to_string(),
        images_root: Some(absolute(images_root).display().to_string()),
        policy: ResolutionPolicy::None,
        labeled: true,
        items: labels.iter().map(|(id, _)| id.clone()).collect(),
    };
    write_manifest(root, &manifest)
}

fn write_manifest(root: &Path, manifest: &Manifest) -> Result<()> {
    let path = root.join(MANIFEST_FILE);
    let text = toml::to_string(manifest).map_err(|e| Error::format(&path, e))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn write_taxonomy(root: &Path, taxonomy: &ClassTaxonomy) -> Result<()> {
    let path = root.join(TAXONOMY_FILE);
    std::fs::write(&path, taxonomy.to_toml_string()).map_err(|e| Error::io(&path, e))
}

fn resolve(root: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

fn apply_policy_rgb(img: RgbImage, policy: ResolutionPolicy) -> RgbImage {
    match policy {
        ResolutionPolicy::None => img,
        ResolutionPolicy::Resize { width, height } => {
            if img.dimensions() == (width, height) {
                img
            } else {
                imageops::resize(&img, width, height, FilterType::Triangle)
            }
        }
        ResolutionPolicy::Crop { width, height } => {
            let (x, y, w, h) = crop_box(img.width(), img.height(), width, height);
            imageops::crop_imm(&img, x, y, w, h).to_image()
        }
    }
}

fn apply_policy_label(label: LabelMask, policy: ResolutionPolicy) -> LabelMask {
    let gray = || {
        GrayImage::from_raw(label.width() as u32, label.height() as u32, label.as_slice().to_vec())
            .expect("mask dimensions")
    };
    let out = match policy {
        ResolutionPolicy::None => return label,
        ResolutionPolicy::Resize { width, height } => {
            imageops::resize(&gray(), width, height, FilterType::Nearest)
        }
        ResolutionPolicy::Crop { width, height } => {
            let (x, y, w, h) = crop_box(label.width() as u32, label.height() as u32, width, height);
            imageops::crop_imm(&gray(), x, y, w, h).to_image()
        }
    };
    let (w, h) = out.dimensions();
    LabelMask::new(h as usize, w as usize, out.into_raw()).expect("mask dimensions")
}

fn crop_box(w: u32, h: u32, cw: u32, ch: u32) -> (u32, u32, u32, u32) {
    let cw = cw.min(w);
    let ch = ch.min(h);
    ((w - cw) / 2, (h - ch) / 2, cw, ch)
}

/// Paints each label with its taxonomy colour; ignore pixels are black.
pub fn colorize(label: &LabelMask, taxonomy: &ClassTaxonomy) -> RgbImage {
    let mut img = RgbImage::new(label.width() as u32, label.height() as u32);
    for (px, &v) in img.pixels_mut().zip(label.as_slice()) {
        if usize::from(v) < taxonomy.num_classes() {
            *px = image::Rgb(taxonomy.color(v));
        }
    }
    img
}

pub fn rgb_to_tensor<T: Scalar>(img: &RgbImage) -> Tensor3<T> {
    let (w, h) = img.dimensions();
    let plane = (w * h) as usize;
    let mut data = vec![T::zero(); 3 * plane];
    let scale = T::from_f64_lossy(1.0 / 255.0);
    for (p, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + p] = T::from_f64_lossy(f64::from(px[c])) * scale;
        }
    }
    Tensor3::from_vec(3, h as usize, w as usize, data).expect("tensor shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(tag: &str, n: usize, tax: &ClassTaxonomy) -> Dataset {
        let items = (0..n)
            .map(|i| DatasetItem {
                id: format!("{tag}{i}"),
                source_tag: tag.into(),
                image: ImageRef::Memory(Arc::new(RgbImage::new(4, 4))),
                label: Some(LabelRef::Memory(Arc::new(LabelMask::filled(4, 4, (i % 19) as u8)))),
                policy: ResolutionPolicy::None,
            })
            .collect();
        Dataset::new(items, tax)
    }

    #[test]
    fn compose_concatenates_in_order() {
        let tax = ClassTaxonomy::cityscapes19();
        let a = tiny("a", 3, &tax);
        let b = tiny("b", 5, &tax);
        let c = compose_sources(&[a.clone(), b]).unwrap();
        assert_eq!(c.len(), 8);
        let tags: Vec<&str> = c.items().iter().map(|i| i.source_tag.as_str()).collect();
        assert_eq!(tags, ["a", "a", "a", "b", "b", "b", "b", "b"]);
        assert_eq!(c.items()[4].id, "b1");
        let same = compose_sources(&[a.clone()]).unwrap();
        assert_eq!(same.len(), a.len());
    }

    #[test]
    fn compose_rejects_mixed_taxonomies() {
        let tax = ClassTaxonomy::cityscapes19();
        let mut classes = tax.classes().to_vec();
        classes.pop();
        let other = ClassTaxonomy::new(classes, 255).unwrap();
        assert!(compose_sources(&[tiny("a", 1, &tax), tiny("b", 1, &other)]).is_err());
    }

    #[test]
    fn index_out_of_range() {
        let tax = ClassTaxonomy::cityscapes19();
        let ds = tiny("a", 2, &tax);
        assert!(matches!(
            ds.load_sample::<f32>(2, &tax),
            Err(Error::Range { value: 2, bound: 2, .. })
        ));
    }

    #[test]
    fn invalid_label_value_is_data_error() {
        let tax = ClassTaxonomy::cityscapes19();
        let item = DatasetItem {
            id: "x".into(),
            source_tag: "t".into(),
            image: ImageRef::Memory(Arc::new(RgbImage::new(2, 2))),
            label: Some(LabelRef::Memory(Arc::new(LabelMask::filled(2, 2, 40)))),
            policy: ResolutionPolicy::None,
        };
        let ds = Dataset::new(vec![item], &tax);
        assert!(matches!(ds.load_sample::<f32>(0, &tax), Err(Error::Data(_))));
    }

    #[test]
    fn resize_policy_keeps_value_set() {
        let tax = ClassTaxonomy::cityscapes19();
        let data: Vec<u8> = (0..128 * 256).map(|p| ((p % 256) / 64) as u8 * 3).collect();
        let label = LabelMask::new(128, 256, data).unwrap();
        let item = DatasetItem {
            id: "r".into(),
            source_tag: "t".into(),
            image: ImageRef::Memory(Arc::new(RgbImage::new(256, 128))),
            label: Some(LabelRef::Memory(Arc::new(label.clone()))),
            policy: ResolutionPolicy::Resize { width: 128, height: 64 },
        };
        let ds = Dataset::new(vec![item], &tax);
        let s = ds.load_sample::<f32>(0, &tax).unwrap();
        assert_eq!((s.image.height(), s.image.width()), (64, 128));
        let l = s.label.unwrap();
        assert_eq!(l.dims(), (64, 128));
        let before: std::collections::BTreeSet<u8> = label.as_slice().iter().copied().collect();
        let after: std::collections::BTreeSet<u8> = l.as_slice().iter().copied().collect();
        assert!(after.is_subset(&before));
    }

    #[test]
    fn crop_policy_centres() {
        assert_eq!(crop_box(10, 8, 4, 4), (3, 2, 4, 4));
        assert_eq!(crop_box(3, 3, 8, 8), (0, 0, 3, 3));
    }
}
