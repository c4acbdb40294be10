//! Stacks category masks into a pseudo-image and fuses them with a small
//! segmentation network trained against global labels.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{CategoryMask, LabelMask};
use crate::nn::{ArchSpec, SegNet, Tensor3};
use crate::scalar::Scalar;
use crate::segtrain::{
    predict_category, train_with_teacher, train_with_teacher_mapped, Checkpoint, CheckpointManifest, InferenceRole,
    ModelKind, TrainConfig, TrainOutcome, TrainSet,
};
use crate::taxonomy::{build_remap_tables, ClassTaxonomy, DivisionStrategy, RemapTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// One min/max over the whole stacked tensor.
    #[default]
    Global,
    /// Min/max per channel.
    PerChannel,
}

impl Normalization {
    pub fn as_str(self) -> &'static str {
        match self {
            Normalization::Global => "global",
            Normalization::PerChannel => "per_channel",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "global" => Some(Normalization::Global),
            "per_channel" => Some(Normalization::PerChannel),
            _ => None,
        }
    }
}

/// `N_G` planes in `[0, 1]`, one per category in strategy order.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoImage<T>(Tensor3<T>);

impl<T: Scalar> PseudoImage<T> {
    pub fn as_tensor(&self) -> &Tensor3<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor3<T> {
        self.0
    }
}

fn min_max_inplace<T: Scalar>(values: &mut [T]) {
    let (lo, hi) = values
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if values.is_empty() || hi == lo {
        values.iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    let span = hi - lo;
    for v in values.iter_mut() {
        *v = (*v - lo) / span;
    }
}

/// Stacks category masks (strategy order, prediction-valued) and min-max
/// normalizes the result.
pub fn stack_masks<T: Scalar>(
    masks: &[CategoryMask],
    strategy: &DivisionStrategy,
    normalization: Normalization,
) -> Result<PseudoImage<T>> {
    if masks.len() != strategy.num_categories() {
        return Err(Error::Contract(format!(
            "expected {} category masks, got {}",
            strategy.num_categories(),
            masks.len()
        )));
    }
    let (h, w) = masks.first().map(CategoryMask::dims).unwrap_or((0, 0));
    let mut out = Tensor3::zeros(masks.len(), h, w);
    for (j, (mask, cat)) in masks.iter().zip(&strategy.categories).enumerate() {
        if mask.category_index() != j {
            return Err(Error::Contract(format!(
                "mask at position {j} belongs to category {}",
                mask.category_index()
            )));
        }
        if mask.dims() != (h, w) {
            return Err(Error::Contract(format!(
                "mask {j} is {}x{}, expected {h}x{w}",
                mask.height(),
                mask.width()
            )));
        }
        if let Some(&v) = mask.as_slice().iter().find(|&&v| usize::from(v) >= cat.n_out()) {
            return Err(Error::Contract(format!(
                "mask {j} holds {v}, not a prediction of category `{}`",
                cat.name
            )));
        }
        for (dst, &v) in out.plane_mut(j).iter_mut().zip(mask.as_slice()) {
            *dst = T::from_f64_lossy(f64::from(v));
        }
    }
    match normalization {
        Normalization::Global => min_max_inplace(out.as_mut_slice()),
        Normalization::PerChannel => (0..masks.len()).for_each(|j| min_max_inplace(out.plane_mut(j))),
    }
    Ok(PseudoImage(out))
}

/// Ground-truth category masks; ignore pixels become each category's
/// `other` index so that the stack stays prediction-valued.
pub fn oracle_masks(label: &LabelMask, tables: &[RemapTable], ignore_id: u8) -> Result<Vec<CategoryMask>> {
    tables
        .iter()
        .map(|t| {
            let data = label
                .as_slice()
                .iter()
                .map(|&v| match v {
                    v if v == ignore_id => Ok(t.other_index()),
                    v => t.get(v).ok_or_else(|| Error::Data(format!("label value {v} is not a taxonomy id"))),
                })
                .collect::<Result<Vec<u8>>>()?;
            CategoryMask::new(t.category_index(), label.height(), label.width(), data)
        })
        .collect()
}

/// Runs every category model on `image`.
pub fn predict_category_masks<T: Scalar>(models: &[Checkpoint<T>], image: &Tensor3<T>) -> Result<Vec<CategoryMask>> {
    models
        .iter()
        .enumerate()
        .map(|(j, m)| predict_category(m.inference_net(), image, j))
        .collect()
}

/// Where the ensemble's training inputs come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Category models run on every batch.
    #[default]
    Online,
    /// Category models run once per image before training.
    Precompute,
    /// Ground-truth category masks; no category models.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleOptions {
    pub normalization: Normalization,
    pub masks: MaskMode,
}

/// Trained fuser. Inference uses the EMA teacher.
#[derive(Debug, Clone)]
pub struct EnsembleModel<T> {
    checkpoint: Checkpoint<T>,
    normalization: Normalization,
}

impl<T: Scalar> EnsembleModel<T> {
    pub fn from_checkpoint(checkpoint: Checkpoint<T>) -> Result<Self> {
        if checkpoint.manifest.model != ModelKind::Ensemble {
            return Err(Error::Contract("checkpoint is not an ensemble model".into()));
        }
        if checkpoint.manifest.strategy_hash.is_none() {
            return Err(Error::Contract("ensemble checkpoint lacks a strategy hash".into()));
        }
        let normalization = match checkpoint.manifest.normalization.as_deref() {
            None => Normalization::Global,
            Some(s) => Normalization::parse(s)
                .ok_or_else(|| Error::Contract(format!("unknown normalization `{s}`")))?,
        };
        Ok(Self {
            checkpoint,
            normalization,
        })
    }

    pub fn checkpoint(&self) -> &Checkpoint<T> {
        &self.checkpoint
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn net(&self) -> &SegNet<T> {
        self.checkpoint.inference_net()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.checkpoint.save(dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(dir)?)
    }

    pub fn check_strategy(&self, strategy: &DivisionStrategy) -> Result<()> {
        let expected = self.checkpoint.manifest.strategy_hash.as_deref().unwrap_or_default();
        if strategy.hash() != expected {
            return Err(Error::Contract(format!(
                "ensemble was trained for a different division strategy than `{}`",
                strategy.name
            )));
        }
        Ok(())
    }

    /// Argmax over the global classes of the teacher's scores.
    pub fn fuse(&self, masks: &[CategoryMask], strategy: &DivisionStrategy) -> Result<LabelMask> {
        self.check_strategy(strategy)?;
        let x = stack_masks::<T>(masks, strategy, self.normalization)?;
        let data = self.net().predict(x.as_tensor())?;
        LabelMask::new(x.0.height(), x.0.width(), data)
    }
}

fn check_category_models<T: Scalar>(models: &[Checkpoint<T>], strategy: &DivisionStrategy) -> Result<()> {
    if models.len() != strategy.num_categories() {
        return Err(Error::Contract(format!(
            "strategy `{}` has {} categories but {} category models were given",
            strategy.name,
            strategy.num_categories(),
            models.len()
        )));
    }
    let hash = strategy.hash();
    for (j, (m, cat)) in models.iter().zip(&strategy.categories).enumerate() {
        if m.student.n_out() != cat.n_out() {
            return Err(Error::Contract(format!(
                "category model {j} has {} outputs, category `{}` needs {}",
                m.student.n_out(),
                cat.name,
                cat.n_out()
            )));
        }
        if let ModelKind::Category { index, .. } = &m.manifest.model {
            if *index != j {
                return Err(Error::Contract(format!("model at position {j} was trained for category {index}")));
            }
        }
        if matches!(&m.manifest.strategy_hash, Some(h) if *h != hash) {
            return Err(Error::Contract(format!("category model {j} was trained under a different strategy")));
        }
    }
    Ok(())
}

/// Trains the fuser against global labels. `source` holds RGB images and
/// global labels; in [`MaskMode::Oracle`] the category models are unused and
/// may be empty.
pub fn train_ensemble<T: Scalar>(
    category_models: &[Checkpoint<T>],
    source: &TrainSet<T>,
    strategy: &DivisionStrategy,
    taxonomy: &ClassTaxonomy,
    config: &TrainConfig,
    options: EnsembleOptions,
) -> Result<(EnsembleModel<T>, TrainOutcome<T>)> {
    let tables = build_remap_tables(taxonomy, strategy)?;
    if options.masks != MaskMode::Oracle {
        check_category_models(category_models, strategy)?;
    }
    let arch = ArchSpec::ensemble(strategy.num_categories(), taxonomy.num_classes());
    let net = SegNet::<T>::new(arch.clone(), config.seed)?;
    let stack = |masks: &[CategoryMask]| stack_masks::<T>(masks, strategy, options.normalization).map(PseudoImage::into_tensor);

    let outcome = match options.masks {
        MaskMode::Online => {
            let transform = |x: &Tensor3<T>| stack(&predict_category_masks(category_models, x)?);
            train_with_teacher_mapped(net, source, config, &transform)?
        }
        MaskMode::Precompute | MaskMode::Oracle => {
            let mut inputs = Vec::with_capacity(source.len());
            for (x, y) in source.inputs().iter().zip(source.labels()) {
                let masks = if options.masks == MaskMode::Oracle {
                    let label = LabelMask::new(x.height(), x.width(), y.clone())?;
                    oracle_masks(&label, &tables, taxonomy.ignore_id())?
                } else {
                    predict_category_masks(category_models, x)?
                };
                inputs.push(stack(&masks)?);
            }
            let data = TrainSet::new(inputs, source.labels().to_vec(), source.ignore_id())?;
            train_with_teacher(net, &data, config)?
        }
    };

    let mut manifest = CheckpointManifest::new(ModelKind::Ensemble, arch, config.hash(), taxonomy.hash());
    manifest.strategy_hash = Some(strategy.hash());
    if options.masks != MaskMode::Oracle {
        manifest.category_model_hashes = category_models.iter().map(|m| m.manifest.weights_hash.clone()).collect();
    }
    manifest.normalization = Some(options.normalization.as_str().to_string());
    manifest.iterations = config.iterations;
    manifest.seed = config.seed;
    manifest.inference = InferenceRole::Teacher;
    manifest.final_loss = outcome.final_loss();
    let teacher = outcome.teacher.clone().unwrap_or_else(|| outcome.student.clone());
    let checkpoint = Checkpoint::new(manifest, outcome.student.clone(), Some(teacher));
    Ok((EnsembleModel::from_checkpoint(checkpoint)?, outcome))
}

/// Category predictions fused by the ensemble.
pub fn infer_pipeline<T: Scalar>(
    category_models: &[Checkpoint<T>],
    ensemble: &EnsembleModel<T>,
    image: &Tensor3<T>,
    strategy: &DivisionStrategy,
) -> Result<LabelMask> {
    check_category_models(category_models, strategy)?;
    ensemble.fuse(&predict_category_masks(category_models, image)?, strategy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::preset_strategy;

    fn table_i() -> DivisionStrategy {
        preset_strategy("B+V+H+T", &ClassTaxonomy::cityscapes19()).unwrap()
    }

    fn masks_from(values: [&[u8]; 4], h: usize, w: usize) -> Vec<CategoryMask> {
        values
            .iter()
            .enumerate()
            .map(|(j, v)| CategoryMask::new(j, h, w, v.to_vec()).unwrap())
            .collect()
    }

    #[test]
    fn worked_normalization_example() {
        let masks = masks_from([&[8, 0], &[4, 4], &[4, 4], &[3, 3]], 1, 2);
        let x = stack_masks::<f64>(&masks, &table_i(), Normalization::Global).unwrap();
        let t = x.as_tensor();
        let px: Vec<f64> = (0..4).map(|c| t.at(c, 0, 0)).collect();
        assert_eq!(px, vec![1.0, 0.5, 0.5, 0.375]);
    }

    #[test]
    fn degenerate_stack_is_zero() {
        let masks = masks_from([&[0; 6], &[0; 6], &[0; 6], &[0; 6]], 2, 3);
        let x = stack_masks::<f32>(&masks, &table_i(), Normalization::Global).unwrap();
        assert!(x.as_tensor().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ignore_and_order_violations() {
        let s = table_i();
        let mut masks = masks_from([&[255], &[0], &[0], &[0]], 1, 1);
        assert!(matches!(stack_masks::<f32>(&masks, &s, Normalization::Global), Err(Error::Contract(_))));
        masks = masks_from([&[0], &[0], &[0], &[0]], 1, 1);
        masks.swap(1, 2);
        assert!(matches!(stack_masks::<f32>(&masks, &s, Normalization::Global), Err(Error::Contract(_))));
        let mut uneven = masks_from([&[0], &[0], &[0], &[0]], 1, 1);
        uneven[3] = CategoryMask::new(3, 1, 2, vec![0, 1]).unwrap();
        assert!(matches!(stack_masks::<f32>(&uneven, &s, Normalization::Global), Err(Error::Contract(_))));
    }

    #[test]
    fn per_channel_scales_each_plane() {
        let masks = masks_from([&[8, 0], &[4, 2], &[1, 1], &[3, 0]], 1, 2);
        let x = stack_masks::<f64>(&masks, &table_i(), Normalization::PerChannel).unwrap();
        let t = x.as_tensor();
        assert_eq!(t.plane(1), &[1.0, 0.0]);
        assert_eq!(t.plane(2), &[0.0, 0.0]);
    }

    #[test]
    fn oracle_masks_keep_ignore_out_of_stack() {
        let tax = ClassTaxonomy::cityscapes19();
        let tables = build_remap_tables(&tax, &table_i()).unwrap();
        let label = LabelMask::new(1, 3, vec![13, 255, 0]).unwrap();
        let m = oracle_masks(&label, &tables, 255).unwrap();
        assert_eq!(m[1].as_slice(), &[0, 4, 4]);
        assert_eq!(m[0].as_slice(), &[8, 8, 0]);
    }
}
