use std::path::Path;

use image::{Rgb, RgbImage};
use serde::Serialize;

use super::IouReport;
use crate::error::{Error, Result};
use crate::taxonomy::ClassTaxonomy;

#[derive(Serialize)]
struct MetricsRow<'a> {
    class: &'a str,
    name: &'a str,
    iou: String,
    defined: bool,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::format(path, e))
}

fn finish(path: &Path, mut w: csv::Writer<std::fs::File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// One row per class, then a `miou` row.
pub fn write_metrics_csv(path: &Path, report: &IouReport) -> Result<()> {
    let mut w = writer(path)?;
    for c in &report.classes {
        let id = c.class.to_string();
        w.serialize(MetricsRow {
            class: &id,
            name: &c.name,
            iou: fmt_opt(c.iou),
            defined: c.iou.is_some(),
        })
        .map_err(|e| Error::format(path, e))?;
    }
    w.serialize(MetricsRow {
        class: "miou",
        name: "mean",
        iou: fmt_opt(report.miou),
        defined: report.miou.is_some(),
    })
    .map_err(|e| Error::format(path, e))?;
    finish(path, w)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub run: String,
    pub miou: Option<f64>,
    pub pixels: u64,
    pub images: usize,
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = writer(path)?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::format(path, e))?;
    }
    finish(path, w)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub model: String,
    pub params: usize,
    pub imgs_per_s: f64,
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut w = writer(path)?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::format(path, e))?;
    }
    finish(path, w)
}

/// Per-class IoU bars in taxonomy colours on a light grid; undefined classes
/// get a short grey stub.
pub fn render_iou_chart(path: &Path, report: &IouReport, taxonomy: &ClassTaxonomy) -> Result<()> {
    const BAR: u32 = 16;
    const GAP: u32 = 4;
    const H: u32 = 200;
    let n = report.classes.len() as u32;
    let width = GAP + n * (BAR + GAP);
    let mut img = RgbImage::from_pixel(width, H + 2 * GAP, Rgb([255, 255, 255]));
    for tick in 0..=4 {
        let y = GAP + H - tick * H / 4;
        for x in 0..width {
            img.put_pixel(x, y, Rgb([220, 220, 220]));
        }
    }
    for (i, c) in report.classes.iter().enumerate() {
        let (height, color) = match c.iou {
            Some(v) => ((v.clamp(0.0, 1.0) * H as f64).round() as u32, taxonomy.color(c.class as u8)),
            None => (3, [160, 160, 160]),
        };
        let color = Rgb(color);
        let x0 = GAP + i as u32 * (BAR + GAP);
        for y in (GAP + H - height)..(GAP + H) {
            for x in x0..x0 + BAR {
                img.put_pixel(x, y, color);
            }
        }
    }
    img.save(path).map_err(|e| Error::format(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalkit::ConfusionMatrix;
    use crate::mask::LabelMask;

    #[test]
    fn metrics_file_has_class_rows_and_mean() {
        let tax = ClassTaxonomy::cityscapes19();
        let l = LabelMask::new(1, 3, vec![0, 1, 1]).unwrap();
        let mut cm = ConfusionMatrix::for_taxonomy(&tax);
        cm.accumulate(&l, &l).unwrap();
        let report = cm.iou_report(&tax);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metrics.csv");
        write_metrics_csv(&p, &report).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "class,name,iou,defined");
        assert_eq!(lines[1], "0,road,1.000000,true");
        assert_eq!(lines[3], "2,building,,false");
        assert_eq!(lines.last().unwrap(), &"miou,mean,1.000000,true");

        let chart = dir.path().join("iou.png");
        render_iou_chart(&chart, &report, &tax).unwrap();
        assert!(image::open(&chart).is_ok());
    }
}
