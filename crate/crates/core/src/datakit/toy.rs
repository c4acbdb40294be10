//! Procedural street-like scenes with exact labels.
//!
//! Geometry (and therefore the label) depends only on the seed and item index.
//! The domain parameters change pixel appearance only, so a source and a
//! target spec sharing a seed produce identical labels.

use std::collections::BTreeMap;
use std::sync::Arc;

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetItem, ImageRef, LabelRef, ResolutionPolicy};
use crate::error::{Error, Result};
use crate::mask::LabelMask;
use crate::taxonomy::ClassTaxonomy;

/// Appearance shift applied on top of the scene colours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainParams {
    /// Std-dev of additive Gaussian noise, in `[0, 1]` intensity units.
    pub noise_sigma: f64,
    /// Global hue rotation in degrees.
    pub hue_shift: f64,
    /// Multiplicative brightness factor.
    pub brightness: f64,
}

impl DomainParams {
    pub fn source() -> Self {
        Self {
            noise_sigma: 0.04,
            hue_shift: 0.0,
            brightness: 1.0,
        }
    }

    pub fn target() -> Self {
        Self {
            noise_sigma: 0.12,
            hue_shift: 10.0,
            brightness: 0.75,
        }
    }
}

impl Default for DomainParams {
    fn default() -> Self {
        Self::source()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    /// Inclusive shape-count range per foreground category
    /// (`vehicle`, `human_cycle`, `traffic`).
    pub n_shapes: BTreeMap<String, (u32, u32)>,
    /// Inclusive range of the base shape size, in pixels.
    pub shape_size: (u32, u32),
    pub domain: DomainParams,
    pub seed: u64,
    #[serde(default = "default_tag")]
    pub tag: String,
}

fn default_tag() -> String {
    "toy".into()
}

impl Default for SceneSpec {
    fn default() -> Self {
        let n_shapes = FOREGROUND
            .iter()
            .map(|(name, _)| ((*name).to_string(), (1, 2)))
            .collect();
        Self {
            width: 32,
            height: 32,
            n_shapes,
            shape_size: (6, 14),
            domain: DomainParams::source(),
            seed: 0,
            tag: default_tag(),
        }
    }
}

impl SceneSpec {
    pub fn with_domain(mut self, domain: DomainParams) -> Self {
        self.domain = domain;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = tag.into();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 32 || self.height < 32 {
            return Err(Error::Contract(format!(
                "canvas {}x{} too small: width and height must be at least 32",
                self.width, self.height
            )));
        }
        for (name, (lo, hi)) in &self.n_shapes {
            if lo > hi {
                return Err(Error::Contract(format!("shape count range for `{name}` is empty")));
            }
            if !FOREGROUND.iter().any(|(n, _)| n == name) {
                return Err(Error::Contract(format!("unknown foreground category `{name}`")));
            }
        }
        let (smin, smax) = self.shape_size;
        if smin == 0 || smin > smax {
            return Err(Error::Contract("shape size range must satisfy 1 <= min <= max".into()));
        }
        let d = self.domain;
        if !(d.noise_sigma >= 0.0) || !(d.brightness > 0.0) || !d.hue_shift.is_finite() {
            return Err(Error::Contract(
                "domain needs noise_sigma >= 0, brightness > 0 and a finite hue shift".into(),
            ));
        }
        Ok(())
    }
}

/// Foreground categories in paint order, with their classes.
const FOREGROUND: [(&str, &[&str]); 3] = [
    ("vehicle", &["car", "truck", "bus", "train"]),
    ("human_cycle", &["person", "rider", "motorcycle", "bicycle"]),
    ("traffic", &["traffic light", "traffic sign", "pole"]),
];

const BAND: [(&str, u32); 5] = [
    ("building", 3),
    ("vegetation", 3),
    ("wall", 1),
    ("fence", 1),
    ("terrain", 1),
];

/// Scene colours in `[0, 1]`, chosen to be pairwise well separated.
const PALETTE: [(&str, [f64; 3]); 19] = [
    ("road", [0.35, 0.35, 0.40]),
    ("sidewalk", [0.80, 0.55, 0.80]),
    ("building", [0.55, 0.40, 0.30]),
    ("wall", [0.62, 0.62, 0.28]),
    ("fence", [0.92, 0.80, 0.58]),
    ("pole", [0.12, 0.12, 0.12]),
    ("traffic light", [1.00, 0.55, 0.00]),
    ("traffic sign", [0.95, 0.95, 0.15]),
    ("vegetation", [0.15, 0.55, 0.12]),
    ("terrain", [0.62, 0.90, 0.50]),
    ("sky", [0.45, 0.72, 0.98]),
    ("person", [0.92, 0.10, 0.35]),
    ("rider", [0.55, 0.00, 0.05]),
    ("car", [0.10, 0.10, 0.75]),
    ("truck", [0.05, 0.40, 0.38]),
    ("bus", [0.00, 0.80, 0.80]),
    ("train", [0.50, 0.20, 0.85]),
    ("motorcycle", [0.40, 0.95, 0.05]),
    ("bicycle", [1.00, 1.00, 1.00]),
];

/// Scene colour per class id; classes without a built-in colour use their
/// taxonomy colour.
pub fn toy_palette(taxonomy: &ClassTaxonomy) -> Vec<[f64; 3]> {
    taxonomy
        .classes()
        .iter()
        .map(|c| {
            PALETTE
                .iter()
                .find(|(n, _)| c.name.eq_ignore_ascii_case(n))
                .map(|(_, rgb)| *rgb)
                .unwrap_or_else(|| c.color.map(|v| f64::from(v) / 255.0))
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            Shape::Ellipse { cx, cy, rx, ry } => {
                let dx = (x - cx) / rx;
                let dy = (y - cy) / ry;
                dx * dx + dy * dy <= 1.0
            }
        }
    }
}

struct Canvas {
    width: usize,
    height: usize,
    label: Vec<u8>,
    color: Vec<[f64; 3]>,
}

impl Canvas {
    fn paint(&mut self, shape: Shape, class: u8, color: [f64; 3]) {
        for y in 0..self.height {
            for x in 0..self.width {
                if shape.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    let p = y * self.width + x;
                    self.label[p] = class;
                    self.color[p] = color;
                }
            }
        }
    }
}

struct Ids<'a> {
    taxonomy: &'a ClassTaxonomy,
}

impl Ids<'_> {
    fn get(&self, name: &str) -> Result<u8> {
        self.taxonomy
            .id_of(name)
            .ok_or_else(|| Error::Contract(format!("toy scenes need a `{name}` class in the taxonomy")))
    }
}

fn jittered(base: [f64; 3], rng: &mut ChaCha8Rng) -> [f64; 3] {
    base.map(|v| (v + rng.gen_range(-0.04..0.04)).clamp(0.0, 1.0))
}

fn compose_scene(
    spec: &SceneSpec,
    ids: &Ids<'_>,
    palette: &[[f64; 3]],
    rng: &mut ChaCha8Rng,
) -> Result<Canvas> {
    let (w, h) = (spec.width as usize, spec.height as usize);
    let (wf, hf) = (w as f64, h as f64);
    let mut canvas = Canvas {
        width: w,
        height: h,
        label: vec![0; w * h],
        color: vec![[0.0; 3]; w * h],
    };
    let paint = |canvas: &mut Canvas, rng: &mut ChaCha8Rng, shape: Shape, class: u8| {
        let color = jittered(palette[usize::from(class)], rng);
        canvas.paint(shape, class, color);
    };

    let sky_end = hf * rng.gen_range(0.15..0.30);
    let ground = hf * rng.gen_range(0.50..0.65);
    paint(&mut canvas, rng, Shape::Rect { x0: 0.0, y0: 0.0, x1: wf, y1: ground }, ids.get("sky")?);

    let weights: Vec<(u8, u32)> = BAND
        .iter()
        .map(|(n, wt)| Ok((ids.get(n)?, *wt)))
        .collect::<Result<_>>()?;
    let terrain = ids.get("terrain")?;
    let (vegetation, building) = (ids.get("vegetation")?, ids.get("building")?);
    let mut x = 0.0;
    while x < wf {
        let seg = rng.gen_range(wf / 6.0..wf / 2.0);
        let class = weights
            .choose_weighted(rng, |(_, wt)| *wt)
            .expect("non-empty weights")
            .0;
        let top = if class == building || class == vegetation {
            (sky_end - rng.gen_range(0.0..hf * 0.15)).max(0.0)
        } else if class == terrain {
            ground - rng.gen_range(hf * 0.05..hf * 0.12)
        } else {
            ground - rng.gen_range(hf * 0.10..hf * 0.22)
        };
        paint(&mut canvas, rng, Shape::Rect { x0: x, y0: top, x1: x + seg, y1: ground }, class);
        x += seg;
    }

    paint(&mut canvas, rng, Shape::Rect { x0: 0.0, y0: ground, x1: wf, y1: hf }, ids.get("road")?);
    let sidewalk = ids.get("sidewalk")?;
    for side in [0, 1] {
        if rng.gen_bool(0.3) {
            continue;
        }
        let class = if rng.gen_bool(0.25) { terrain } else { sidewalk };
        let base = rng.gen_range(wf * 0.05..wf * 0.15);
        let slope = rng.gen_range(0.1..0.5);
        let color = jittered(palette[usize::from(class)], rng);
        for y in ground.ceil() as usize..h {
            let width = base + slope * (y as f64 - ground);
            let (x0, x1) = if side == 0 { (0.0, width) } else { (wf - width, wf) };
            canvas.paint(Shape::Rect { x0, y0: y as f64, x1, y1: y as f64 + 1.0 }, class, color);
        }
    }

    let (smin, smax) = spec.shape_size;
    for (cat, names) in FOREGROUND {
        let (lo, hi) = spec.n_shapes.get(cat).copied().unwrap_or((0, 0));
        let count = rng.gen_range(lo..=hi);
        for _ in 0..count {
            let name = *names.choose(rng).expect("non-empty category");
            let class = ids.get(name)?;
            let s = f64::from(rng.gen_range(smin..=smax));
            let cx = rng.gen_range(0.0..wf);
            let bottom = rng.gen_range(ground..hf);
            let rect = |rw: f64, rh: f64| Shape::Rect {
                x0: cx - rw / 2.0,
                y0: bottom - rh.max(1.0),
                x1: cx + rw.max(1.0) / 2.0,
                y1: bottom,
            };
            let ellipse = |rx: f64, ry: f64| Shape::Ellipse {
                cx,
                cy: bottom - ry,
                rx: rx.max(0.8),
                ry: ry.max(0.8),
            };
            let shape = match name {
                "car" => rect(1.5 * s, 0.7 * s),
                "truck" => rect(1.7 * s, 1.0 * s),
                "bus" => rect(2.2 * s, 1.1 * s),
                "train" => rect(3.0 * s, 1.0 * s),
                "person" => ellipse(0.18 * s, 0.55 * s),
                "rider" => ellipse(0.25 * s, 0.45 * s),
                "motorcycle" => ellipse(0.5 * s, 0.3 * s),
                "bicycle" => ellipse(0.45 * s, 0.28 * s),
                "pole" => {
                    let top = rng.gen_range(sky_end * 0.3..ground);
                    let pw = (0.12 * s).max(1.0);
                    Shape::Rect { x0: cx, y0: top, x1: cx + pw, y1: bottom }
                }
                "traffic light" => {
                    let cy = rng.gen_range(sky_end * 0.5..ground);
                    Shape::Rect { x0: cx, y0: cy, x1: cx + (0.3 * s).max(1.5), y1: cy + (0.6 * s).max(2.0) }
                }
                _ => {
                    let cy = rng.gen_range(sky_end * 0.5..ground);
                    let r = (0.3 * s).max(1.0);
                    Shape::Ellipse { cx, cy, rx: r, ry: r }
                }
            };
            paint(&mut canvas, rng, shape, class);
        }
    }
    Ok(canvas)
}

fn rotate_hue(rgb: [f64; 3], degrees: f64) -> [f64; 3] {
    if degrees == 0.0 {
        return rgb;
    }
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    if delta <= 0.0 {
        return rgb;
    }
    let hue = if max == r {
        60.0 * (((g - b) / delta).rem_euclid(6.0))
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let hue = (hue + degrees).rem_euclid(360.0);
    let c = delta;
    let x = c * (1.0 - ((hue / 60.0).rem_euclid(2.0) - 1.0).abs());
    let (r1, g1, b1) = match (hue / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r1 + min, g1 + min, b1 + min]
}

fn render(canvas: &Canvas, domain: DomainParams, rng: &mut ChaCha8Rng) -> RgbImage {
    let noise = Normal::new(0.0, domain.noise_sigma.max(0.0)).expect("valid sigma");
    let mut img = RgbImage::new(canvas.width as u32, canvas.height as u32);
    for (p, px) in img.pixels_mut().enumerate() {
        let shifted = rotate_hue(canvas.color[p], domain.hue_shift);
        let mut out = [0u8; 3];
        for c in 0..3 {
            let n = if domain.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
            let v = (shifted[c] * domain.brightness + n).clamp(0.0, 1.0);
            out[c] = (v * 255.0).round() as u8;
        }
        *px = Rgb(out);
    }
    img
}

/// Generates `n_items` scenes. Item `i` draws its geometry from stream `2i`
/// and its pixel noise from stream `2i + 1` of a generator seeded by
/// `spec.seed`.
pub fn generate_toy_dataset(spec: &SceneSpec, n_items: usize, taxonomy: &ClassTaxonomy) -> Result<Dataset> {
    spec.validate()?;
    if n_items == 0 {
        return Err(Error::Contract("toy dataset needs at least one item".into()));
    }
    let ids = Ids { taxonomy };
    let palette = toy_palette(taxonomy);
    let mut items = Vec::with_capacity(n_items);
    for i in 0..n_items {
        let mut geo = ChaCha8Rng::seed_from_u64(spec.seed);
        geo.set_stream(2 * i as u64);
        let canvas = compose_scene(spec, &ids, &palette, &mut geo)?;
        let mut pix = ChaCha8Rng::seed_from_u64(spec.seed);
        pix.set_stream(2 * i as u64 + 1);
        let image = render(&canvas, spec.domain, &mut pix);
        let label = LabelMask::new(canvas.height, canvas.width, canvas.label)?;
        items.push(DatasetItem {
            id: format!("{i:06}"),
            source_tag: spec.tag.clone(),
            image: ImageRef::Memory(Arc::new(image)),
            label: Some(LabelRef::Memory(Arc::new(label))),
            policy: ResolutionPolicy::None,
        });
    }
    Ok(Dataset::new(items, taxonomy))
}
