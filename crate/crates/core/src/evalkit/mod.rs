//! Confusion matrices, IoU reports, throughput benchmarks and report files.

mod report;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::LabelMask;
use crate::taxonomy::ClassTaxonomy;

pub use report::{render_iou_chart, write_bench_csv, write_metrics_csv, write_summary_csv, BenchRow, SummaryRow};

/// `counts[g * n + p]`: pixels of ground-truth class `g` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n_classes: usize,
    ignore_id: u8,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize, ignore_id: u8) -> Self {
        Self {
            n_classes,
            ignore_id,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn for_taxonomy(taxonomy: &ClassTaxonomy) -> Self {
        Self::new(taxonomy.num_classes(), taxonomy.ignore_id())
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.n_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accumulate(&mut self, pred: &LabelMask, gt: &LabelMask) -> Result<()> {
        self.accumulate_slices(pred.as_slice(), gt.as_slice(), pred.dims() == gt.dims())
    }

    /// Flat-slice form of [`accumulate`](Self::accumulate).
    pub fn accumulate_raw(&mut self, pred: &[u8], gt: &[u8]) -> Result<()> {
        self.accumulate_slices(pred, gt, true)
    }

    fn accumulate_slices(&mut self, pred: &[u8], gt: &[u8], same_dims: bool) -> Result<()> {
        if !same_dims || pred.len() != gt.len() {
            return Err(Error::Contract("prediction and ground truth differ in size".into()));
        }
        let n = self.n_classes;
        if let Some(&p) = pred.iter().find(|&&p| usize::from(p) >= n) {
            return Err(Error::Contract(format!("prediction holds {p}, outside 0..{n}")));
        }
        if let Some(&g) = gt.iter().find(|&&g| g != self.ignore_id && usize::from(g) >= n) {
            return Err(Error::Data(format!("ground truth holds {g}, outside 0..{n}")));
        }
        for (&p, &g) in pred.iter().zip(gt) {
            if g != self.ignore_id {
                self.counts[usize::from(g) * n + usize::from(p)] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.n_classes != self.n_classes {
            return Err(Error::Contract(format!(
                "cannot merge {}-class and {}-class matrices",
                self.n_classes, other.n_classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn merged(mut self, other: &Self) -> Result<Self> {
        self.merge(other)?;
        Ok(self)
    }

    pub fn iou_report(&self, taxonomy: &ClassTaxonomy) -> IouReport {
        let n = self.n_classes;
        let classes: Vec<ClassIou> = (0..n)
            .map(|c| {
                let inter = self.count(c, c);
                let row: u64 = (0..n).map(|p| self.count(c, p)).sum();
                let col: u64 = (0..n).map(|g| self.count(g, c)).sum();
                let union = row + col - inter;
                ClassIou {
                    class: c,
                    name: taxonomy.name(c as u8).unwrap_or("?").to_string(),
                    intersection: inter,
                    union,
                    iou: (union > 0).then(|| inter as f64 / union as f64),
                }
            })
            .collect();
        let defined: Vec<f64> = classes.iter().filter_map(|c| c.iou).collect();
        let miou = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        IouReport {
            classes,
            miou,
            pixels: self.total(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassIou {
    pub class: usize,
    pub name: String,
    pub intersection: u64,
    pub union: u64,
    /// `None` when the class never occurs in prediction or ground truth.
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouReport {
    pub classes: Vec<ClassIou>,
    pub miou: Option<f64>,
    pub pixels: u64,
}

impl IouReport {
    pub fn iou_of(&self, name: &str) -> Option<f64> {
        self.classes.iter().find(|c| c.name == name).and_then(|c| c.iou)
    }
}

/// Accumulates `(prediction, ground truth)` pairs into one matrix.
pub fn confusion_of<'a>(
    taxonomy: &ClassTaxonomy,
    pairs: impl IntoIterator<Item = (&'a LabelMask, &'a LabelMask)>,
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::for_taxonomy(taxonomy);
    for (p, g) in pairs {
        cm.accumulate(p, g)?;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub params: usize,
    pub imgs_per_s: f64,
    pub repetitions: usize,
    /// Images per timed repetition.
    pub batch: usize,
}

/// Times `run` (one call processes `batch` images). The first repetition is
/// a discarded warmup.
pub fn bench(params: usize, batch: usize, repetitions: usize, mut run: impl FnMut() -> Result<()>) -> Result<BenchResult> {
    if repetitions < 3 {
        return Err(Error::Contract(format!("benchmark needs at least 3 repetitions, got {repetitions}")));
    }
    if batch == 0 {
        return Err(Error::Contract("benchmark batch must be at least 1".into()));
    }
    run()?;
    let start = Instant::now();
    for _ in 1..repetitions {
        run()?;
    }
    let secs = start.elapsed().as_secs_f64().max(1e-12);
    Ok(BenchResult {
        params,
        imgs_per_s: ((repetitions - 1) * batch) as f64 / secs,
        repetitions,
        batch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tax() -> ClassTaxonomy {
        ClassTaxonomy::cityscapes19()
    }

    fn mask(v: &[u8]) -> LabelMask {
        LabelMask::new(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn worked_example() {
        let mut cm = ConfusionMatrix::new(2, 255);
        cm.accumulate(&mask(&[0, 1, 1, 1]), &mask(&[0, 0, 1, 1])).unwrap();
        let tax = ClassTaxonomy::new(
            vec![
                crate::ClassInfo { id: 0, name: "a".into(), color: [0; 3] },
                crate::ClassInfo { id: 1, name: "b".into(), color: [0; 3] },
            ],
            255,
        )
        .unwrap();
        let r = cm.iou_report(&tax);
        assert_eq!(r.classes[0].iou, Some(0.5));
        assert!((r.classes[1].iou.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.miou.unwrap() - 7.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_prediction_diagonal_only() {
        let l = mask(&[0, 3, 3, 7, 18]);
        let cm = confusion_of(&tax(), [(&l, &l)]).unwrap();
        let r = cm.iou_report(&tax());
        assert_eq!(r.miou, Some(1.0));
        assert_eq!(r.classes.iter().filter(|c| c.iou.is_some()).count(), 4);
        assert_eq!(cm.total(), 5);
    }

    #[test]
    fn all_ignore_leaves_matrix_unchanged() {
        let mut cm = ConfusionMatrix::for_taxonomy(&tax());
        cm.accumulate(&mask(&[1, 2, 3]), &mask(&[255; 3])).unwrap();
        assert_eq!(cm, ConfusionMatrix::for_taxonomy(&tax()));
        assert_eq!(cm.iou_report(&tax()).miou, None);
    }

    #[test]
    fn zero_intersection_scores_zero() {
        let cm = confusion_of(&tax(), [(&mask(&[0, 0]), &mask(&[0, 16]))]).unwrap();
        let r = cm.iou_report(&tax());
        assert_eq!(r.iou_of("train"), Some(0.0));
        assert_eq!(r.iou_of("bus"), None);
    }

    #[test]
    fn ignore_in_prediction_is_contract_error() {
        let mut cm = ConfusionMatrix::for_taxonomy(&tax());
        assert!(matches!(cm.accumulate(&mask(&[255]), &mask(&[0])), Err(Error::Contract(_))));
        assert!(matches!(cm.accumulate(&mask(&[0, 1]), &mask(&[0])), Err(Error::Contract(_))));
        assert!(matches!(cm.accumulate(&mask(&[0]), &mask(&[40])), Err(Error::Data(_))));
    }

    #[test]
    fn merge_size_mismatch() {
        let mut a = ConfusionMatrix::new(3, 255);
        assert!(a.merge(&ConfusionMatrix::new(4, 255)).is_err());
    }

    #[test]
    fn bench_requires_three_repetitions() {
        assert!(bench(1, 1, 2, || Ok(())).is_err());
        let r = bench(7, 2, 3, || Ok(())).unwrap();
        assert_eq!(r.params, 7);
        assert!(r.imgs_per_s > 0.0);
    }
}
