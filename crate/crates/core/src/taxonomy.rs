//! Global class set, division strategies and category remapping.
//!
//! A [`DivisionStrategy`] partitions the taxonomy's classes into ordered
//! categories. Each category gets a [`RemapTable`] that sends member classes to
//! their position inside the category and every other class to a trailing
//! `other` index. [`overlay_fuse`] inverts the remapping by painting categories
//! in strategy order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::digest::hash_json;
use crate::error::{Error, Result};
use crate::mask::{CategoryMask, LabelMask};

pub const DEFAULT_IGNORE_ID: u8 = 255;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub id: u8,
    pub name: String,
    pub color: [u8; 3],
}

/// The ordered global class set plus the reserved ignore id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTaxonomy {
    classes: Vec<ClassInfo>,
    ignore_id: u8,
}

/// Cityscapes evaluation classes with their conventional palette.
const CITYSCAPES_19: [(&str, [u8; 3]); 19] = [
    ("road", [128, 64, 128]),
    ("sidewalk", [244, 35, 232]),
    ("building", [70, 70, 70]),
    ("wall", [102, 102, 156]),
    ("fence", [190, 153, 153]),
    ("pole", [153, 153, 153]),
    ("traffic light", [250, 170, 30]),
    ("traffic sign", [220, 220, 0]),
    ("vegetation", [107, 142, 35]),
    ("terrain", [152, 251, 152]),
    ("sky", [70, 130, 180]),
    ("person", [220, 20, 60]),
    ("rider", [255, 0, 0]),
    ("car", [0, 0, 142]),
    ("truck", [0, 0, 70]),
    ("bus", [0, 60, 100]),
    ("train", [0, 80, 100]),
    ("motorcycle", [0, 0, 230]),
    ("bicycle", [119, 11, 32]),
];

impl ClassTaxonomy {
    pub fn new(mut classes: Vec<ClassInfo>, ignore_id: u8) -> Result<Self> {
        classes.sort_by_key(|c| c.id);
        if classes.is_empty() {
            return Err(Error::Contract("taxonomy has no classes".into()));
        }
        for (expected, class) in classes.iter().enumerate() {
            if usize::from(class.id) != expected {
                return Err(Error::Contract(format!(
                    "class ids must be unique and contiguous from 0; expected {expected}, found {}",
                    class.id
                )));
            }
        }
        if usize::from(ignore_id) < classes.len() {
            return Err(Error::Contract(format!(
                "ignore id {ignore_id} collides with class ids 0..{}",
                classes.len()
            )));
        }
        let mut names = BTreeSet::new();
        for class in &classes {
            if class.name.trim().is_empty() {
                return Err(Error::Contract(format!("class {} has an empty name", class.id)));
            }
            if !names.insert(class.name.as_str()) {
                return Err(Error::Contract(format!("duplicate class name `{}`", class.name)));
            }
        }
        Ok(Self { classes, ignore_id })
    }

    /// The 19 Cityscapes evaluation classes, ids 0..=18, ignore id 255.
    pub fn cityscapes19() -> Self {
        let classes = CITYSCAPES_19
            .iter()
            .enumerate()
            .map(|(id, (name, color))| ClassInfo {
                id: id as u8,
                name: (*name).to_string(),
                color: *color,
            })
            .collect();
        Self::new(classes, DEFAULT_IGNORE_ID).expect("built-in taxonomy is valid")
    }

    pub fn from_toml_str(text: &str) -> std::result::Result<Self, String> {
        let raw: TaxonomyFile = toml::from_str(text).map_err(|e| e.to_string())?;
        Self::new(raw.classes, raw.ignore_id).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|m| Error::format(path, m))
    }

    pub fn to_toml_string(&self) -> String {
        let raw = TaxonomyFile {
            ignore_id: self.ignore_id,
            classes: self.classes.clone(),
        };
        toml::to_string(&raw).expect("taxonomy serializes")
    }

    pub fn classes(&self) -> &[ClassInfo] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn ignore_id(&self) -> u8 {
        self.ignore_id
    }

    pub fn name(&self, id: u8) -> Option<&str> {
        self.classes.get(usize::from(id)).map(|c| c.name.as_str())
    }

    pub fn id_of(&self, name: &str) -> Option<u8> {
        self.classes
            .iter()
            .find(|c| c.name.eq_ignore_ascii_case(name))
            .map(|c| c.id)
    }

    pub fn color(&self, id: u8) -> [u8; 3] {
        self.classes
            .get(usize::from(id))
            .map_or([0, 0, 0], |c| c.color)
    }

    /// True when `v` is a class id or the ignore id.
    pub fn is_valid_label(&self, v: u8) -> bool {
        usize::from(v) < self.classes.len() || v == self.ignore_id
    }

    pub fn hash(&self) -> String {
        hash_json(self)
    }
}

impl Default for ClassTaxonomy {
    fn default() -> Self {
        Self::cityscapes19()
    }
}

#[derive(Serialize, Deserialize)]
struct TaxonomyFile {
    #[serde(default = "default_ignore")]
    ignore_id: u8,
    classes: Vec<ClassInfo>,
}

fn default_ignore() -> u8 {
    DEFAULT_IGNORE_ID
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub members: Vec<u8>,
}

impl Category {
    pub fn new(name: impl Into<String>, members: Vec<u8>) -> Self {
        Self {
            name: name.into(),
            members,
        }
    }

    /// Number of category-local outputs: members plus `other`.
    pub fn n_out(&self) -> usize {
        self.members.len() + 1
    }

    pub fn other_index(&self) -> usize {
        self.members.len()
    }

    /// Category-local classes: the members in order, then `other`.
    pub fn local_taxonomy(&self, taxonomy: &ClassTaxonomy) -> Result<ClassTaxonomy> {
        let mut classes: Vec<ClassInfo> = self
            .members
            .iter()
            .enumerate()
            .map(|(pos, &id)| ClassInfo {
                id: pos as u8,
                name: taxonomy.name(id).map_or_else(|| format!("class {id}"), str::to_string),
                color: taxonomy.color(id),
            })
            .collect();
        classes.push(ClassInfo {
            id: self.members.len() as u8,
            name: "other".into(),
            color: [0, 0, 0],
        });
        ClassTaxonomy::new(classes, taxonomy.ignore_id())
    }
}

/// An ordered partition of the taxonomy into categories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DivisionStrategy {
    pub name: String,
    pub categories: Vec<Category>,
}

impl DivisionStrategy {
    pub fn new(name: impl Into<String>, categories: Vec<Category>) -> Self {
        Self {
            name: name.into(),
            categories,
        }
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn hash(&self) -> String {
        hash_json(self)
    }

    /// Parses a strategy file whose members are class names or ids.
    pub fn from_toml_str(text: &str, taxonomy: &ClassTaxonomy) -> std::result::Result<Self, String> {
        let raw: StrategyFile = toml::from_str(text).map_err(|e| e.to_string())?;
        let mut categories = Vec::with_capacity(raw.categories.len());
        for cat in raw.categories {
            let mut members = Vec::with_capacity(cat.members.len());
            for m in cat.members {
                let id = match m {
                    ClassRef::Id(id) => u8::try_from(id)
                        .map_err(|_| format!("class id {id} in `{}` exceeds 255", cat.name))?,
                    ClassRef::Name(name) => taxonomy
                        .id_of(&name)
                        .ok_or_else(|| format!("unknown class `{name}` in `{}`", cat.name))?,
                };
                members.push(id);
            }
            categories.push(Category::new(cat.name, members));
        }
        Ok(Self::new(raw.name, categories))
    }

    pub fn load(path: &Path, taxonomy: &ClassTaxonomy) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, taxonomy).map_err(|m| Error::format(path, m))
    }

    /// Writes the strategy with members spelled as class names.
    pub fn to_toml_string(&self, taxonomy: &ClassTaxonomy) -> String {
        let raw = StrategyFile {
            name: self.name.clone(),
            categories: self
                .categories
                .iter()
                .map(|c| CategoryFile {
                    name: c.name.clone(),
                    members: c
                        .members
                        .iter()
                        .map(|&id| match taxonomy.name(id) {
                            Some(n) => ClassRef::Name(n.to_string()),
                            None => ClassRef::Id(u32::from(id)),
                        })
                        .collect(),
                })
                .collect(),
        };
        toml::to_string(&raw).expect("strategy serializes")
    }

    /// Resolves a preset name, or loads the strategy from a file path.
    pub fn resolve(spec: &str, taxonomy: &ClassTaxonomy) -> Result<Self> {
        match preset_strategy(spec, taxonomy) {
            Ok(s) => Ok(s),
            Err(e @ Error::UnknownPreset { .. }) => {
                let path = Path::new(spec);
                if path.exists() {
                    Self::load(path, taxonomy)
                } else {
                    Err(e)
                }
            }
            Err(e) => Err(e),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct StrategyFile {
    name: String,
    categories: Vec<CategoryFile>,
}

#[derive(Serialize, Deserialize)]
struct CategoryFile {
    name: String,
    members: Vec<ClassRef>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ClassRef {
    Id(u32),
    Name(String),
}

/// One way a strategy fails to partition the taxonomy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NoCategories,
    EmptyCategory { category: String },
    DuplicateId { id: u8, categories: Vec<String> },
    MissingId { id: u8 },
    UnknownId { id: u8, category: String },
    /// A category's `other` index equals the ignore id.
    IgnoreCollision { category: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoCategories => write!(f, "strategy has no categories"),
            Violation::EmptyCategory { category } => write!(f, "empty category `{category}`"),
            Violation::DuplicateId { id, categories } => {
                write!(f, "duplicate id {id} in categories {}", categories.join(", "))
            }
            Violation::MissingId { id } => write!(f, "missing id {id}"),
            Violation::UnknownId { id, category } => {
                write!(f, "unknown id {id} in category `{category}`")
            }
            Violation::IgnoreCollision { category } => {
                write!(f, "`other` index of `{category}` equals the ignore id")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            let msgs: Vec<String> = self.violations.iter().map(ToString::to_string).collect();
            Err(Error::Contract(format!("invalid strategy: {}", msgs.join("; "))))
        }
    }
}

/// Checks that `strategy` partitions the taxonomy. Violations are returned as
/// data rather than errors.
pub fn validate_strategy(taxonomy: &ClassTaxonomy, strategy: &DivisionStrategy) -> ValidationReport {
    let mut violations = Vec::new();
    if strategy.categories.is_empty() {
        violations.push(Violation::NoCategories);
    }
    let n = taxonomy.num_classes();
    let mut owners: BTreeMap<u8, Vec<String>> = BTreeMap::new();
    for cat in &strategy.categories {
        if cat.members.is_empty() {
            violations.push(Violation::EmptyCategory {
                category: cat.name.clone(),
            });
        }
        if cat.other_index() == usize::from(taxonomy.ignore_id()) {
            violations.push(Violation::IgnoreCollision {
                category: cat.name.clone(),
            });
        }
        for &id in &cat.members {
            if usize::from(id) >= n {
                violations.push(Violation::UnknownId {
                    id,
                    category: cat.name.clone(),
                });
                continue;
            }
            owners.entry(id).or_default().push(cat.name.clone());
        }
    }
    for (&id, cats) in &owners {
        if cats.len() > 1 {
            violations.push(Violation::DuplicateId {
                id,
                categories: cats.clone(),
            });
        }
    }
    for id in 0..n {
        let id = id as u8;
        if !owners.contains_key(&id) {
            violations.push(Violation::MissingId { id });
        }
    }
    ValidationReport { violations }
}

/// Total old-id to new-id lookup for one category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemapTable {
    category_index: usize,
    lookup: Vec<Option<u8>>,
    n_out: usize,
    other_index: u8,
}

impl RemapTable {
    pub fn category_index(&self) -> usize {
        self.category_index
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn other_index(&self) -> u8 {
        self.other_index
    }

    /// `None` when `id` is outside the table's domain.
    pub fn get(&self, id: u8) -> Option<u8> {
        self.lookup[usize::from(id)]
    }
}

pub fn build_remap_table(
    taxonomy: &ClassTaxonomy,
    strategy: &DivisionStrategy,
    category_index: usize,
) -> Result<RemapTable> {
    validate_strategy(taxonomy, strategy).into_result()?;
    let category = strategy.categories.get(category_index).ok_or(Error::Range {
        what: "category index",
        value: category_index,
        bound: strategy.num_categories(),
    })?;
    let other = category.other_index() as u8;
    let mut lookup = vec![None; 256];
    for id in 0..taxonomy.num_classes() {
        lookup[id] = Some(other);
    }
    for (pos, &id) in category.members.iter().enumerate() {
        lookup[usize::from(id)] = Some(pos as u8);
    }
    lookup[usize::from(taxonomy.ignore_id())] = Some(taxonomy.ignore_id());
    Ok(RemapTable {
        category_index,
        lookup,
        n_out: category.n_out(),
        other_index: other,
    })
}

/// One table per category, in strategy order.
pub fn build_remap_tables(
    taxonomy: &ClassTaxonomy,
    strategy: &DivisionStrategy,
) -> Result<Vec<RemapTable>> {
    (0..strategy.num_categories())
        .map(|j| build_remap_table(taxonomy, strategy, j))
        .collect()
}

pub fn remap_label(label: &LabelMask, table: &RemapTable) -> Result<CategoryMask> {
    let data = label
        .as_slice()
        .iter()
        .map(|&v| {
            table
                .get(v)
                .ok_or_else(|| Error::Data(format!("label value {v} is not a taxonomy id or the ignore id")))
        })
        .collect::<Result<Vec<u8>>>()?;
    CategoryMask::new(table.category_index, label.height(), label.width(), data)
}

/// Remaps `label` through every table.
pub fn remap_all(label: &LabelMask, tables: &[RemapTable]) -> Result<Vec<CategoryMask>> {
    tables.iter().map(|t| remap_label(label, t)).collect()
}

/// Deterministic baseline fuser: categories paint in strategy order, later
/// categories overwrite earlier ones. Pixels where every category predicts
/// `other` receive the first member of the first category.
pub fn overlay_fuse(masks: &[CategoryMask], strategy: &DivisionStrategy) -> Result<LabelMask> {
    if masks.len() != strategy.num_categories() {
        return Err(Error::Contract(format!(
            "expected {} category masks, got {}",
            strategy.num_categories(),
            masks.len()
        )));
    }
    let first = strategy
        .categories
        .first()
        .ok_or_else(|| Error::Contract("strategy has no categories".into()))?;
    let fallback = *first
        .members
        .first()
        .ok_or_else(|| Error::Contract(format!("category `{}` is empty", first.name)))?;
    let (h, w) = masks[0].dims();
    let mut out = vec![fallback; h * w];
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
        let other = cat.other_index();
        for (p, &v) in mask.as_slice().iter().enumerate() {
            let v = usize::from(v);
            if v == other {
                continue;
            }
            let global = *cat.members.get(v).ok_or_else(|| {
                Error::Contract(format!(
                    "mask {j} holds {v}, outside category `{}` (n_out {})",
                    cat.name,
                    cat.n_out()
                ))
            })?;
            out[p] = global;
        }
    }
    LabelMask::new(h, w, out)
}

const BASE_CATEGORIES: [(&str, char, &[&str]); 4] = [
    (
        "background",
        'B',
        &[
            "road",
            "sidewalk",
            "building",
            "wall",
            "fence",
            "vegetation",
            "terrain",
            "sky",
        ],
    ),
    ("vehicle", 'V', &["car", "truck", "bus", "train"]),
    (
        "human_cycle",
        'H',
        &["person", "rider", "motorcycle", "bicycle"],
    ),
    ("traffic", 'T', &["traffic light", "traffic sign", "pole"]),
];

const MERGED_PRESETS: [&str; 8] = [
    "B+V+H+T", "BV+HT", "BT+VH", "B+V+HT", "B+VT+H", "BV+H+T", "BT+V+H", "BVT+H",
];

const RANDOM_PRESETS: [[&[&str]; 4]; 4] = [
    [
        &[
            "pole",
            "train",
            "terrain",
            "traffic light",
            "truck",
            "bicycle",
            "road",
            "wall",
        ],
        &["motorcycle", "sky", "person", "building"],
        &["vegetation", "traffic sign", "sidewalk", "fence"],
        &["bus", "rider", "car"],
    ],
    [
        &[
            "bicycle",
            "traffic sign",
            "person",
            "fence",
            "truck",
            "sidewalk",
            "car",
            "traffic light",
        ],
        &["rider", "pole", "building", "terrain"],
        &["bus", "motorcycle", "wall", "train"],
        &["road", "vegetation", "sky"],
    ],
    [
        &[
            "motorcycle",
            "pole",
            "bus",
            "traffic sign",
            "sky",
            "terrain",
            "sidewalk",
            "fence",
        ],
        &["car", "train", "truck", "wall"],
        &["person", "traffic light", "rider", "building"],
        &["vegetation", "bicycle", "road"],
    ],
    [
        &[
            "rider",
            "traffic light",
            "motorcycle",
            "car",
            "truck",
            "traffic sign",
            "pole",
            "vegetation",
        ],
        &["wall", "road", "bicycle", "sky"],
        &["bus", "person", "train", "building"],
        &["sidewalk", "fence", "terrain"],
    ],
];

/// Every preset name accepted by [`preset_strategy`].
pub fn preset_names() -> Vec<String> {
    MERGED_PRESETS
        .iter()
        .map(|s| (*s).to_string())
        .chain((1..=RANDOM_PRESETS.len()).map(|i| format!("random-{i}")))
        .collect()
}

fn resolve_names(taxonomy: &ClassTaxonomy, names: &[&str]) -> Result<Vec<u8>> {
    names
        .iter()
        .map(|n| {
            taxonomy
                .id_of(n)
                .ok_or_else(|| Error::Contract(format!("taxonomy has no class named `{n}`")))
        })
        .collect()
}

/// Builds a named preset against `taxonomy` (class names are resolved, so any
/// contiguous id assignment works).
pub fn preset_strategy(name: &str, taxonomy: &ClassTaxonomy) -> Result<DivisionStrategy> {
    if MERGED_PRESETS.contains(&name) {
        let mut categories = Vec::new();
        for group in name.split('+') {
            let mut members = Vec::new();
            let mut parts = Vec::new();
            // merged members follow B, V, H, T order regardless of spelling
            for (cat_name, letter, names) in BASE_CATEGORIES {
                if group.contains(letter) {
                    members.extend(resolve_names(taxonomy, names)?);
                    parts.push(cat_name);
                }
            }
            let cat_name = if parts.len() == 1 {
                parts[0].to_string()
            } else {
                group.to_string()
            };
            categories.push(Category::new(cat_name, members));
        }
        return Ok(DivisionStrategy::new(name, categories));
    }
    if let Some(idx) = name
        .strip_prefix("random-")
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|i| (1..=RANDOM_PRESETS.len()).contains(i))
    {
        let categories = RANDOM_PRESETS[idx - 1]
            .iter()
            .enumerate()
            .map(|(j, names)| Ok(Category::new(format!("group{}", j + 1), resolve_names(taxonomy, names)?)))
            .collect::<Result<Vec<_>>>()?;
        return Ok(DivisionStrategy::new(name, categories));
    }
    Err(Error::UnknownPreset {
        name: name.to_string(),
        available: preset_names(),
    })
}

/// A single category holding every class in id order.
pub fn single_category_strategy(taxonomy: &ClassTaxonomy) -> DivisionStrategy {
    DivisionStrategy::new(
        "single",
        vec![Category::new(
            "all",
            (0..taxonomy.num_classes()).map(|i| i as u8).collect(),
        )],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tax() -> ClassTaxonomy {
        ClassTaxonomy::cityscapes19()
    }

    fn table_i() -> DivisionStrategy {
        preset_strategy("B+V+H+T", &tax()).unwrap()
    }

    #[test]
    fn table_i_validates() {
        assert!(validate_strategy(&tax(), &table_i()).is_ok());
    }

    #[test]
    fn every_preset_is_a_partition() {
        for name in preset_names() {
            let s = preset_strategy(&name, &tax()).unwrap();
            let report = validate_strategy(&tax(), &s);
            assert!(report.is_ok(), "{name}: {:?}", report.violations);
        }
    }

    #[test]
    fn missing_class_is_reported() {
        let t = tax();
        let mut s = table_i();
        let train = t.id_of("train").unwrap();
        s.categories[1].members.retain(|&m| m != train);
        let report = validate_strategy(&t, &s);
        assert_eq!(report.violations, vec![Violation::MissingId { id: train }]);
    }

    #[test]
    fn duplicate_class_is_reported() {
        let t = tax();
        let mut s = table_i();
        let car = t.id_of("car").unwrap();
        s.categories[0].members.push(car);
        let report = validate_strategy(&t, &s);
        assert!(matches!(
            report.violations.as_slice(),
            [Violation::DuplicateId { id, .. }] if *id == car
        ));
    }

    #[test]
    fn unknown_and_empty_are_reported() {
        let mut s = table_i();
        s.categories.push(Category::new("empty", vec![]));
        s.categories[1].members.push(42);
        let report = validate_strategy(&tax(), &s);
        assert!(report
            .violations
            .contains(&Violation::EmptyCategory { category: "empty".into() }));
        assert!(report.violations.iter().any(|v| matches!(v, Violation::UnknownId { id: 42, .. })));
    }

    #[test]
    fn vehicle_table_matches_member_order() {
        let table = build_remap_table(&tax(), &table_i(), 1).unwrap();
        assert_eq!(table.n_out(), 5);
        assert_eq!(table.other_index(), 4);
        for (id, expected) in [(13u8, 0u8), (14, 1), (15, 2), (16, 3)] {
            assert_eq!(table.get(id), Some(expected));
        }
        for id in 0..13u8 {
            assert_eq!(table.get(id), Some(4));
        }
        for id in 17..19u8 {
            assert_eq!(table.get(id), Some(4));
        }
        assert_eq!(table.get(255), Some(255));
        assert_eq!(table.get(19), None);
    }

    #[test]
    fn background_table_has_nine_outputs() {
        let table = build_remap_table(&tax(), &table_i(), 0).unwrap();
        assert_eq!(table.n_out(), 9);
        assert_eq!(table.other_index(), 8);
    }

    #[test]
    fn single_category_is_identity() {
        let s = single_category_strategy(&tax());
        let table = build_remap_table(&tax(), &s, 0).unwrap();
        for id in 0..19u8 {
            assert_eq!(table.get(id), Some(id));
        }
        assert_eq!(table.other_index(), 19);
    }

    #[test]
    fn category_index_out_of_range() {
        let err = build_remap_table(&tax(), &table_i(), 4).unwrap_err();
        assert!(matches!(err, Error::Range { value: 4, bound: 4, .. }));
    }

    #[test]
    fn remap_row_example() {
        let table = build_remap_table(&tax(), &table_i(), 1).unwrap();
        let label = LabelMask::new(1, 4, vec![0, 13, 16, 255]).unwrap();
        let out = remap_label(&label, &table).unwrap();
        assert_eq!(out.as_slice(), &[4, 0, 3, 255]);
    }

    #[test]
    fn remap_all_ignore() {
        let table = build_remap_table(&tax(), &table_i(), 2).unwrap();
        let label = LabelMask::filled(3, 5, 255);
        let out = remap_label(&label, &table).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 255));
    }

    #[test]
    fn remap_rejects_foreign_value() {
        let table = build_remap_table(&tax(), &table_i(), 0).unwrap();
        let label = LabelMask::new(1, 2, vec![3, 77]).unwrap();
        let err = remap_label(&label, &table).unwrap_err();
        assert!(err.to_string().contains("77"));
    }

    #[test]
    fn overlay_conflict_later_category_wins() {
        let s = table_i();
        let road = CategoryMask::new(0, 1, 1, vec![0]).unwrap();
        let car = CategoryMask::new(1, 1, 1, vec![0]).unwrap();
        let h = CategoryMask::new(2, 1, 1, vec![4]).unwrap();
        let t = CategoryMask::new(3, 1, 1, vec![3]).unwrap();
        let fused = overlay_fuse(&[road, car, h, t], &s).unwrap();
        assert_eq!(fused.as_slice(), &[13]);
    }

    #[test]
    fn overlay_all_other_falls_back() {
        let s = table_i();
        let masks = vec![
            CategoryMask::new(0, 1, 1, vec![8]).unwrap(),
            CategoryMask::new(1, 1, 1, vec![4]).unwrap(),
            CategoryMask::new(2, 1, 1, vec![4]).unwrap(),
            CategoryMask::new(3, 1, 1, vec![3]).unwrap(),
        ];
        let fused = overlay_fuse(&masks, &s).unwrap();
        assert_eq!(fused.as_slice(), &[0]);
    }

    #[test]
    fn overlay_contract_errors() {
        let s = table_i();
        let one = CategoryMask::new(0, 2, 2, vec![0; 4]).unwrap();
        assert!(matches!(overlay_fuse(&[one.clone()], &s), Err(Error::Contract(_))));
        let masks = vec![
            one,
            CategoryMask::new(1, 2, 2, vec![4; 4]).unwrap(),
            CategoryMask::new(2, 2, 2, vec![4; 4]).unwrap(),
            CategoryMask::new(3, 1, 4, vec![3; 4]).unwrap(),
        ];
        assert!(matches!(overlay_fuse(&masks, &s), Err(Error::Contract(_))));
    }

    #[test]
    fn preset_member_counts() {
        let counts = |name: &str| -> Vec<usize> {
            preset_strategy(name, &tax())
                .unwrap()
                .categories
                .iter()
                .map(|c| c.members.len())
                .collect()
        };
        assert_eq!(counts("B+V+H+T"), vec![8, 4, 4, 3]);
        assert_eq!(counts("BV+HT"), vec![12, 7]);
        assert_eq!(counts("BVT+H"), vec![15, 4]);
        assert_eq!(counts("random-1"), vec![8, 4, 4, 3]);
    }

    #[test]
    fn random_one_first_row() {
        let t = tax();
        let s = preset_strategy("random-1", &t).unwrap();
        let names: Vec<&str> = s.categories[0]
            .members
            .iter()
            .map(|&id| t.name(id).unwrap())
            .collect();
        assert_eq!(
            names,
            ["pole", "train", "terrain", "traffic light", "truck", "bicycle", "road", "wall"]
        );
    }

    #[test]
    fn merged_members_follow_bvht_order() {
        let t = tax();
        let s = preset_strategy("BT+VH", &t).unwrap();
        let first: Vec<&str> = s.categories[0]
            .members
            .iter()
            .map(|&id| t.name(id).unwrap())
            .collect();
        assert_eq!(first[..8], ["road", "sidewalk", "building", "wall", "fence", "vegetation", "terrain", "sky"]);
        assert_eq!(first[8..], ["traffic light", "traffic sign", "pole"]);
    }

    #[test]
    fn unknown_preset_lists_available() {
        let err = preset_strategy("B+X", &tax()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("BV+HT") && msg.contains("random-4"));
    }

    #[test]
    fn strategy_file_round_trip() {
        let t = tax();
        let s = table_i();
        let text = s.to_toml_string(&t);
        assert_eq!(DivisionStrategy::from_toml_str(&text, &t).unwrap(), s);
        let mixed = "name = \"mixed\"\n[[categories]]\nname = \"a\"\nmembers = [\"road\", 1]\n";
        let parsed = DivisionStrategy::from_toml_str(mixed, &t).unwrap();
        assert_eq!(parsed.categories[0].members, vec![0, 1]);
    }

    #[test]
    fn local_taxonomy_appends_other() {
        let tax = ClassTaxonomy::cityscapes19();
        let s = preset_strategy("B+V+H+T", &tax).unwrap();
        let v = s.categories[1].local_taxonomy(&tax).unwrap();
        assert_eq!(v.num_classes(), 5);
        assert_eq!(v.name(0), Some("car"));
        assert_eq!(v.name(4), Some("other"));
        assert_eq!(v.ignore_id(), 255);
    }

    #[test]
    fn taxonomy_round_trip_and_invariants() {
        let t = tax();
        assert_eq!(ClassTaxonomy::from_toml_str(&t.to_toml_string()).unwrap(), t);
        let bad = vec![ClassInfo { id: 1, name: "a".into(), color: [0; 3] }];
        assert!(ClassTaxonomy::new(bad, 255).is_err());
        let collide = vec![ClassInfo { id: 0, name: "a".into(), color: [0; 3] }];
        assert!(ClassTaxonomy::new(collide, 0).is_err());
    }
}
