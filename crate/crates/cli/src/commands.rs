use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use dec_core::datakit::{
    colorize, compose_sources, generate_toy_dataset, read_label, read_rgb, rgb_to_tensor, write_label, write_label_set,
    write_rgb, write_taxonomy, Dataset, DomainParams, ImageRef, SceneSpec, MANIFEST_FILE, TAXONOMY_FILE,
};
use dec_core::ensemble::{infer_pipeline, predict_category_masks, train_ensemble};
use dec_core::evalkit::{
    bench, render_iou_chart, write_bench_csv, write_metrics_csv, write_summary_csv, BenchRow, ConfusionMatrix,
    SummaryRow,
};
use dec_core::segtrain::{
    load_images, predict_label, train_selftrain, train_supervised, write_train_log, CheckpointManifest,
    InferenceRole, ModelKind, TrainOutcome,
};
use dec_core::{
    build_remap_table, overlay_fuse, remap_label, ArchSpec, CategoryMask, Checkpoint32, ClassTaxonomy,
    DivisionStrategy, EnsembleModel32, LabelMask, SegNet32, Tensor32, TrainConfig, TrainSet32,
};

use crate::config::{load_strategy, load_taxonomy, Loaded};
use crate::layout::{file_hash, Layout, ModelStage, RunManifest};

/// `all` or one category index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CategorySel {
    All,
    One(usize),
}

impl std::str::FromStr for CategorySel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(CategorySel::All);
        }
        s.parse()
            .map(CategorySel::One)
            .map_err(|_| format!("expected `all` or a category index, got `{s}`"))
    }
}

impl CategorySel {
    fn indices(self, strategy: &DivisionStrategy) -> Result<Vec<usize>> {
        let n = strategy.num_categories();
        match self {
            CategorySel::All => Ok((0..n).collect()),
            CategorySel::One(j) if j < n => Ok(vec![j]),
            CategorySel::One(j) => Err(dec_core::Error::Range {
                what: "category index",
                value: j,
                bound: n,
            }
            .into()),
        }
    }
}

fn open_dataset(root: &Path, taxonomy: &ClassTaxonomy) -> Result<Dataset> {
    let (ds, tax) = Dataset::open(root).with_context(|| format!("opening dataset {}", root.display()))?;
    ensure!(
        tax.hash() == taxonomy.hash(),
        "dataset {} uses a different taxonomy than the run config",
        root.display()
    );
    Ok(ds)
}

fn record_datasets(run: &mut RunManifest, roots: &[PathBuf]) -> Result<()> {
    for root in roots {
        run.input(root.display().to_string(), file_hash(&root.join(MANIFEST_FILE))?);
    }
    Ok(())
}

fn base_manifest(loaded: &Loaded, command: &str) -> RunManifest {
    let mut run = RunManifest::new(command);
    run.seed = Some(loaded.config.seed);
    run.config_hash = Some(loaded.file_hash.clone());
    run.input("taxonomy", loaded.taxonomy.hash());
    run.input("strategy", loaded.strategy.hash());
    run
}

pub fn validate(config: Option<&Path>, taxonomy: Option<&str>, strategy: Option<&str>) -> Result<()> {
    if let Some(path) = config {
        let loaded = Loaded::open(path)?;
        let s = &loaded.strategy;
        println!(
            "ok: strategy `{}` partitions {} classes into {} categories",
            s.name,
            loaded.taxonomy.num_classes(),
            s.num_categories()
        );
        for (j, c) in s.categories.iter().enumerate() {
            println!("  {j} {:<14} n_out={}", c.name, c.n_out());
        }
        let mut run = base_manifest(&loaded, "validate");
        record_datasets(&mut run, &loaded.config.sources)?;
        return run.write(&Layout::new(&loaded.config.output).manifest_path("validate"));
    }
    let here = Path::new(".");
    let tax = load_taxonomy(taxonomy.unwrap_or("cityscapes19"), here)?;
    let spec = strategy.ok_or_else(|| anyhow!("pass --config or --strategy"))?;
    let s = load_strategy(spec, here, &tax)?;
    println!(
        "ok: strategy `{}` partitions {} classes into {} categories",
        s.name,
        tax.num_classes(),
        s.num_categories()
    );
    Ok(())
}

pub struct ToygenArgs {
    pub out: PathBuf,
    pub n: usize,
    pub domain: String,
    pub seed: Option<u64>,
    pub spec: Option<PathBuf>,
    pub size: Option<(u32, u32)>,
    pub taxonomy: String,
}

pub fn toygen(args: ToygenArgs) -> Result<()> {
    let tax = load_taxonomy(&args.taxonomy, Path::new("."))?;
    let mut spec = match &args.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<SceneSpec>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SceneSpec::default(),
    };
    if args.spec.is_none() || args.domain != "source" {
        spec.domain = match args.domain.as_str() {
            "source" => DomainParams::source(),
            "target" => DomainParams::target(),
            other => bail!("unknown domain `{other}` (expected source or target)"),
        };
        spec.tag = args.domain.clone();
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some((w, h)) = args.size {
        spec.width = w;
        spec.height = h;
    }
    let ds = generate_toy_dataset(&spec, args.n, &tax)?;
    ds.write(&args.out, &tax)?;
    let spec_path = args.out.join("scene.toml");
    std::fs::write(&spec_path, toml::to_string(&spec)?)?;
    let mut run = RunManifest::new("toygen");
    run.seed = Some(spec.seed);
    run.input("scene", dec_core::digest::hash_json(&spec));
    run.output(&args.out);
    run.write(&args.out.join("run_manifest.json"))?;
    println!("wrote {} {} items to {}", args.n, spec.tag, args.out.display());
    Ok(())
}

fn images_root_of(ds: &Dataset, fallback: &Path) -> PathBuf {
    match ds.items().first().map(|i| &i.image) {
        Some(ImageRef::File(p)) => p
            .parent()
            .and_then(Path::parent)
            .map_or_else(|| fallback.to_path_buf(), Path::to_path_buf),
        _ => fallback.to_path_buf(),
    }
}

pub fn remap(loaded: &Loaded, sel: CategorySel) -> Result<()> {
    let layout = Layout::new(&loaded.config.output);
    let (tax, strategy) = (&loaded.taxonomy, &loaded.strategy);
    let indices = sel.indices(strategy)?;
    let mut run = base_manifest(loaded, "remap");
    record_datasets(&mut run, &loaded.config.sources)?;
    for (si, root) in loaded.config.sources.iter().enumerate() {
        let ds = open_dataset(root, tax)?;
        ensure!(ds.is_labeled(), "source {} has no labels to remap", root.display());
        let labels: Vec<LabelMask> = (0..ds.len())
            .map(|i| Ok(ds.raw_label(i, tax)?.expect("labeled")))
            .collect::<Result<_>>()?;
        let tag = ds.items().first().map_or(String::new(), |i| i.source_tag.clone());
        for &j in &indices {
            let table = build_remap_table(tax, strategy, j)?;
            let local = strategy.categories[j].local_taxonomy(tax)?;
            let remapped = ds
                .items()
                .iter()
                .zip(&labels)
                .map(|(item, l)| {
                    let m = remap_label(l, &table)?;
                    Ok((item.id.clone(), LabelMask::new(l.height(), l.width(), m.into_vec())?))
                })
                .collect::<Result<Vec<_>>>()?;
            let dir = layout.remap_dir(si, strategy, j);
            std::fs::create_dir_all(&dir)?;
            write_taxonomy(&dir, &local)?;
            write_label_set(&dir, &images_root_of(&ds, root), &tag, &dir.join(TAXONOMY_FILE), &local, &remapped)?;
            println!("remapped {} labels -> {}", remapped.len(), dir.display());
            run.output(&dir);
        }
    }
    let name = match sel {
        CategorySel::All => "remap".to_string(),
        CategorySel::One(j) => format!("remap-{j}"),
    };
    run.write(&layout.manifest_path(&name))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    CategorySl,
    CategoryUda,
    Ensemble,
    MonolithicSl,
    MonolithicUda,
    Pipeline,
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "category-sl" => Stage::CategorySl,
            "category-uda" => Stage::CategoryUda,
            "ensemble" => Stage::Ensemble,
            "monolithic-sl" => Stage::MonolithicSl,
            "monolithic-uda" => Stage::MonolithicUda,
            "pipeline" => Stage::Pipeline,
            other => {
                return Err(format!(
                    "unknown stage `{other}`; expected category-sl, category-uda, ensemble, monolithic-sl, \
                     monolithic-uda or pipeline"
                ))
            }
        })
    }
}

fn target_images(loaded: &Loaded) -> Result<(Vec<Tensor32>, PathBuf)> {
    let root = loaded
        .config
        .target
        .clone()
        .ok_or_else(|| anyhow!("adaptation stages need `target` in the run config"))?;
    let ds = open_dataset(&root, &loaded.taxonomy)?;
    Ok((load_images(&ds, &loaded.taxonomy)?, root))
}

fn save_model(
    dir: &Path,
    kind: ModelKind,
    loaded: &Loaded,
    cfg: &TrainConfig,
    outcome: TrainOutcome<f32>,
    role: InferenceRole,
) -> Result<Checkpoint32> {
    let mut m = CheckpointManifest::new(kind, outcome.student.arch().clone(), cfg.hash(), loaded.taxonomy.hash());
    m.strategy_hash = Some(loaded.strategy.hash());
    m.iterations = cfg.iterations;
    m.seed = cfg.seed;
    m.inference = role;
    m.final_loss = outcome.final_loss();
    let ckpt = Checkpoint32::new(m, outcome.student, outcome.teacher);
    ckpt.save(dir)?;
    write_train_log(&dir.join("train_log.csv"), &outcome.log)?;
    std::fs::write(dir.join("train_config.toml"), toml::to_string(cfg)?)?;
    Ok(ckpt)
}

fn train_category(loaded: &Loaded, j: usize, uda: bool, iterations: Option<usize>) -> Result<()> {
    let layout = Layout::new(&loaded.config.output);
    let (tax, strategy) = (&loaded.taxonomy, &loaded.strategy);
    let category = &strategy.categories[j];
    let local = category.local_taxonomy(tax)?;
    let mut parts = Vec::new();
    let mut roots = Vec::new();
    for si in 0..loaded.config.sources.len() {
        let dir = layout.remap_dir(si, strategy, j);
        if !dir.join(MANIFEST_FILE).exists() {
            bail!(
                "missing remapped labels for category {j} (`{}`) at {}; run `dec remap` first",
                category.name,
                dir.display()
            );
        }
        parts.push(open_dataset(&dir, &local)?);
        roots.push(dir);
    }
    let data = TrainSet32::from_dataset(&compose_sources(&parts)?, &local, None)?;
    let stage = if uda { ModelStage::CategoryUda } else { ModelStage::CategorySl };
    let overrides = if uda {
        &loaded.config.stages.category_uda
    } else {
        &loaded.config.stages.category_sl
    };
    let cfg = loaded.train_config(overrides, false, iterations);
    let net = SegNet32::new(ArchSpec::category(category.n_out()), cfg.seed)?;
    let mut run = base_manifest(loaded, &format!("train {} {j}", stage.dir_name()));
    record_datasets(&mut run, &roots)?;
    println!(
        "training {} model for `{}` ({} images, {} steps)",
        stage.dir_name(),
        category.name,
        data.len(),
        cfg.iterations
    );
    let (outcome, role) = if uda {
        let (target, root) = target_images(loaded)?;
        record_datasets(&mut run, &[root])?;
        (train_selftrain(net, &data, &target, &cfg)?, InferenceRole::Teacher)
    } else {
        (train_supervised(net, &data, &cfg)?, InferenceRole::Student)
    };
    let kind = ModelKind::Category {
        index: j,
        name: category.name.clone(),
    };
    let dir = layout.checkpoint_dir(stage, Some((strategy, j)));
    let ckpt = save_model(&dir, kind, loaded, &cfg, outcome, role)?;
    report_done(&dir, &ckpt);
    finish_train(run, &layout, &dir, &ckpt, &format!("train-{}-{j}", stage.dir_name()))
}

fn report_done(dir: &Path, ckpt: &Checkpoint32) {
    match ckpt.manifest.final_loss {
        Some(l) => println!("  saved {} (final loss {l:.4})", dir.display()),
        None => println!("  saved {}", dir.display()),
    }
}

fn finish_train(mut run: RunManifest, layout: &Layout, dir: &Path, ckpt: &Checkpoint32, name: &str) -> Result<()> {
    if let Some(l) = ckpt.manifest.final_loss {
        run.metrics.insert("final_loss".into(), l);
    }
    run.input("train_config", ckpt.manifest.config_hash.clone());
    run.output(dir);
    run.write(&layout.manifest_path(name))
}

fn train_monolithic(loaded: &Loaded, uda: bool, iterations: Option<usize>) -> Result<()> {
    let layout = Layout::new(&loaded.config.output);
    let tax = &loaded.taxonomy;
    let parts = loaded
        .config
        .sources
        .iter()
        .map(|r| open_dataset(r, tax))
        .collect::<Result<Vec<_>>>()?;
    let data = TrainSet32::from_dataset(&compose_sources(&parts)?, tax, None)?;
    let (stage, overrides) = if uda {
        (ModelStage::MonolithicUda, &loaded.config.stages.monolithic_uda)
    } else {
        (ModelStage::MonolithicSl, &loaded.config.stages.monolithic_sl)
    };
    let cfg = loaded.train_config(overrides, false, iterations);
    let net = SegNet32::new(ArchSpec::category(tax.num_classes()), cfg.seed)?;
    let mut run = base_manifest(loaded, &format!("train {}", stage.dir_name()));
    record_datasets(&mut run, &loaded.config.sources)?;
    println!("training {} model ({} images, {} steps)", stage.dir_name(), data.len(), cfg.iterations);
    let (outcome, role) = if uda {
        let (target, root) = target_images(loaded)?;
        record_datasets(&mut run, &[root])?;
        (train_selftrain(net, &data, &target, &cfg)?, InferenceRole::Teacher)
    } else {
        (train_supervised(net, &data, &cfg)?, InferenceRole::Student)
    };
    let dir = layout.checkpoint_dir(stage, None);
    let ckpt = save_model(&dir, ModelKind::Monolithic, loaded, &cfg, outcome, role)?;
    report_done(&dir, &ckpt);
    finish_train(run, &layout, &dir, &ckpt, &format!("train-{}", stage.dir_name()))
}

fn load_category_models(loaded: &Loaded, stage: ModelStage) -> Result<Vec<Checkpoint32>> {
    let layout = Layout::new(&loaded.config.output);
    (0..loaded.strategy.num_categories())
        .map(|j| {
            let dir = layout.checkpoint_dir(stage, Some((&loaded.strategy, j)));
            if !dir.join(dec_core::segtrain::MANIFEST_FILE).exists() {
                bail!(
                    "missing {} checkpoint for category {j} at {}; run `dec train --stage {} --category {j}` first",
                    stage.dir_name(),
                    dir.display(),
                    stage.dir_name()
                );
            }
            let ckpt = Checkpoint32::load(&dir)?;
            ensure!(
                ckpt.manifest.taxonomy_hash == loaded.taxonomy.hash(),
                "checkpoint {} was trained under a different taxonomy",
                dir.display()
            );
            Ok(ckpt)
        })
        .collect()
}

fn train_ensemble_stage(loaded: &Loaded, iterations: Option<usize>) -> Result<()> {
    let layout = Layout::new(&loaded.config.output);
    let tax = &loaded.taxonomy;
    let models = load_category_models(loaded, ModelStage::CategorySl)?;
    let parts = loaded
        .config
        .sources
        .iter()
        .map(|r| open_dataset(r, tax))
        .collect::<Result<Vec<_>>>()?;
    let data = TrainSet32::from_dataset(&compose_sources(&parts)?, tax, None)?;
    let cfg = loaded.train_config(&loaded.config.stages.ensemble, true, iterations);
    let mut run = base_manifest(loaded, "train ensemble");
    record_datasets(&mut run, &loaded.config.sources)?;
    for (j, m) in models.iter().enumerate() {
        run.input(format!("category_model_{j}"), m.manifest.weights_hash.clone());
    }
    println!("training ensemble ({} images, {} steps)", data.len(), cfg.iterations);
    let (model, outcome) = train_ensemble(&models, &data, &loaded.strategy, tax, &cfg, loaded.config.ensemble)?;
    let dir = layout.checkpoint_dir(ModelStage::Ensemble, None);
    model.save(&dir)?;
    write_train_log(&dir.join("train_log.csv"), &outcome.log)?;
    std::fs::write(dir.join("train_config.toml"), toml::to_string(&cfg)?)?;
    report_done(&dir, model.checkpoint());
    finish_train(run, &layout, &dir, model.checkpoint(), "train-ensemble")
}

pub fn train(loaded: &Loaded, stage: Stage, sel: CategorySel, iterations: Option<usize>) -> Result<()> {
    match stage {
        Stage::CategorySl | Stage::CategoryUda => {
            for j in sel.indices(&loaded.strategy)? {
                train_category(loaded, j, stage == Stage::CategoryUda, iterations)?;
            }
            Ok(())
        }
        Stage::MonolithicSl => train_monolithic(loaded, false, iterations),
        Stage::MonolithicUda => train_monolithic(loaded, true, iterations),
        Stage::Ensemble => train_ensemble_stage(loaded, iterations),
        Stage::Pipeline => {
            remap(loaded, CategorySel::All)?;
            for j in 0..loaded.strategy.num_categories() {
                train_category(loaded, j, false, iterations)?;
            }
            for j in 0..loaded.strategy.num_categories() {
                train_category(loaded, j, true, iterations)?;
            }
            train_ensemble_stage(loaded, None)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Fuser {
    Ensemble,
    Overlay,
    Monolithic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum CategoryModels {
    Sl,
    Uda,
}

pub struct InferArgs {
    pub images: Option<PathBuf>,
    pub out: PathBuf,
    pub fuser: Fuser,
    pub models: CategoryModels,
    pub color: bool,
    pub masks_from_dir: Option<PathBuf>,
}

/// `(id, image)` pairs from a dataset root or a directory of PNG files.
fn list_images(dir: &Path, taxonomy: &ClassTaxonomy) -> Result<Vec<(String, Tensor32)>> {
    if dir.join(MANIFEST_FILE).exists() {
        let ds = open_dataset(dir, taxonomy)?;
        return ds
            .items()
            .iter()
            .enumerate()
            .map(|(i, item)| Ok((item.id.clone(), ds.load_sample::<f32>(i, taxonomy)?.image)))
            .collect();
    }
    png_stems(dir)?
        .into_iter()
        .map(|(id, path)| Ok((id, rgb_to_tensor(&read_rgb(&path)?))))
        .collect()
}

fn png_stems(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            out.push((stem, path));
        }
    }
    out.sort();
    Ok(out)
}

fn mask_dir(root: &Path, strategy: &DivisionStrategy, j: usize) -> Result<PathBuf> {
    let name = &strategy.categories[j].name;
    [
        root.join(Layout::category_dir_name(strategy, j)),
        root.join(j.to_string()),
        root.join(name),
    ]
    .into_iter()
    .find(|p| p.is_dir())
    .ok_or_else(|| anyhow!("no mask directory for category {j} (`{name}`) under {}", root.display()))
}

fn read_category_masks(root: &Path, strategy: &DivisionStrategy, id: &str) -> Result<Vec<CategoryMask>> {
    (0..strategy.num_categories())
        .map(|j| {
            let l = read_label(&mask_dir(root, strategy, j)?.join(format!("{id}.png")))?;
            Ok(CategoryMask::new(j, l.height(), l.width(), l.into_vec())?)
        })
        .collect()
}

pub fn infer(loaded: &Loaded, args: InferArgs) -> Result<()> {
    let layout = Layout::new(&loaded.config.output);
    let (tax, strategy) = (&loaded.taxonomy, &loaded.strategy);
    let mut run = base_manifest(loaded, "infer");

    let inputs: Vec<(String, Option<Tensor32>)> = match (&args.images, &args.masks_from_dir) {
        (Some(dir), _) => list_images(dir, tax)?.into_iter().map(|(id, x)| (id, Some(x))).collect(),
        (None, Some(masks)) => png_stems(&mask_dir(masks, strategy, 0)?)?
            .into_iter()
            .map(|(id, _)| (id, None))
            .collect(),
        (None, None) => bail!("pass --images or --masks-from-dir"),
    };
    ensure!(!inputs.is_empty(), "no input images found");
    if args.masks_from_dir.is_some() && args.fuser == Fuser::Monolithic {
        bail!("--masks-from-dir fuses category masks; it cannot be combined with --fuser monolithic");
    }

    let ensemble = match args.fuser {
        Fuser::Ensemble => {
            let dir = layout.checkpoint_dir(ModelStage::Ensemble, None);
            if !dir.join(dec_core::segtrain::MANIFEST_FILE).exists() {
                bail!("missing ensemble checkpoint at {}; run `dec train --stage ensemble` first", dir.display());
            }
            let e = EnsembleModel32::load(&dir)?;
            e.check_strategy(strategy)?;
            ensure!(
                e.checkpoint().manifest.taxonomy_hash == tax.hash(),
                "ensemble was trained under a different taxonomy"
            );
            run.input("ensemble", e.checkpoint().manifest.weights_hash.clone());
            Some(e)
        }
        _ => None,
    };
    let monolithic = match args.fuser {
        Fuser::Monolithic => {
            let dir = layout.checkpoint_dir(ModelStage::MonolithicUda, None);
            let dir = if dir.join(dec_core::segtrain::MANIFEST_FILE).exists() {
                dir
            } else {
                layout.checkpoint_dir(ModelStage::MonolithicSl, None)
            };
            if !dir.join(dec_core::segtrain::MANIFEST_FILE).exists() {
                bail!("missing monolithic checkpoint; run `dec train --stage monolithic-uda` first");
            }
            let m = Checkpoint32::load(&dir)?;
            run.input("monolithic", m.manifest.weights_hash.clone());
            Some(m)
        }
        _ => None,
    };
    let models = if args.masks_from_dir.is_none() && monolithic.is_none() {
        let stage = match args.models {
            CategoryModels::Sl => ModelStage::CategorySl,
            CategoryModels::Uda => ModelStage::CategoryUda,
        };
        let models = load_category_models(loaded, stage)?;
        for (j, m) in models.iter().enumerate() {
            run.input(format!("category_model_{j}"), m.manifest.weights_hash.clone());
        }
        models
    } else {
        Vec::new()
    };

    std::fs::create_dir_all(&args.out)?;
    if args.color {
        std::fs::create_dir_all(args.out.join("color"))?;
    }
    for (id, image) in &inputs {
        let fused = match (&monolithic, &args.masks_from_dir, image) {
            (Some(m), _, Some(x)) => predict_label(m.inference_net(), x)?,
            (_, Some(dir), _) => {
                let masks = read_category_masks(dir, strategy, id)?;
                match &ensemble {
                    Some(e) => e.fuse(&masks, strategy)?,
                    None => overlay_fuse(&masks, strategy)?,
                }
            }
            (None, None, Some(x)) => match &ensemble {
                Some(e) => infer_pipeline(&models, e, x, strategy)?,
                None => overlay_fuse(&predict_category_masks(&models, x)?, strategy)?,
            },
            _ => unreachable!("inputs without images only come from --masks-from-dir"),
        };
        write_label(&args.out.join(format!("{id}.png")), &fused)?;
        if args.color {
            write_rgb(&args.out.join("color").join(format!("{id}.png")), &colorize(&fused, tax))?;
        }
    }
    println!("wrote {} label maps to {}", inputs.len(), args.out.display());
    run.output(&args.out);
    run.write(&args.out.join("run_manifest.json"))
}

/// Ground-truth labels keyed by id, from a dataset root or a PNG directory.
fn gt_labels(dir: &Path, taxonomy: &ClassTaxonomy) -> Result<BTreeMap<String, Gt>> {
    if dir.join(MANIFEST_FILE).exists() {
        let ds = open_dataset(dir, taxonomy)?;
        ensure!(ds.is_labeled(), "dataset {} has no labels", dir.display());
        return Ok((0..ds.len()).map(|i| (ds.items()[i].id.clone(), Gt::Dataset(ds.clone(), i))).collect());
    }
    Ok(png_stems(dir)?.into_iter().map(|(id, p)| (id, Gt::File(p))).collect())
}

enum Gt {
    Dataset(Dataset, usize),
    File(PathBuf),
}

impl Gt {
    fn load(&self, taxonomy: &ClassTaxonomy) -> Result<LabelMask> {
        match self {
            Gt::Dataset(ds, i) => Ok(ds.load_sample::<f32>(*i, taxonomy)?.label.expect("labeled")),
            Gt::File(p) => Ok(read_label(p)?),
        }
    }
}

pub fn eval(pred: &Path, gt: &Path, out: &Path, taxonomy: &ClassTaxonomy, run_name: &str) -> Result<()> {
    let preds: BTreeMap<String, PathBuf> = png_stems(pred)?.into_iter().collect();
    let gts = gt_labels(gt, taxonomy)?;
    let missing_gt: Vec<&String> = preds.keys().filter(|k| !gts.contains_key(*k)).collect();
    let missing_pred: Vec<&String> = gts.keys().filter(|k| !preds.contains_key(*k)).collect();
    if preds.keys().all(|k| !gts.contains_key(k)) {
        bail!(
            "prediction directory {} and ground truth {} share no file names",
            pred.display(),
            gt.display()
        );
    }
    if !missing_gt.is_empty() || !missing_pred.is_empty() {
        let fmt = |v: &[&String]| v.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ");
        bail!(
            "unmatched files; without ground truth: [{}]; without prediction: [{}]",
            fmt(&missing_gt),
            fmt(&missing_pred)
        );
    }
    let mut cm = ConfusionMatrix::for_taxonomy(taxonomy);
    for (id, path) in &preds {
        let p = read_label(path)?;
        let g = gts[id].load(taxonomy)?;
        cm.accumulate(&p, &g).with_context(|| format!("scoring `{id}`"))?;
    }
    let report = cm.iou_report(taxonomy);
    std::fs::create_dir_all(out)?;
    write_metrics_csv(&out.join("metrics.csv"), &report)?;
    write_summary_csv(
        &out.join("summary.csv"),
        &[SummaryRow {
            run: run_name.to_string(),
            miou: report.miou,
            pixels: report.pixels,
            images: preds.len(),
        }],
    )?;
    render_iou_chart(&out.join("iou.png"), &report, taxonomy)?;
    match report.miou {
        Some(m) => println!("mIoU {:.2} over {} images ({} pixels)", 100.0 * m, preds.len(), report.pixels),
        None => println!("mIoU undefined: no scored pixels"),
    }
    let mut run = RunManifest::new("eval");
    run.input("taxonomy", taxonomy.hash());
    for (id, path) in &preds {
        run.input(format!("pred/{id}"), file_hash(path)?);
    }
    if let Some(m) = report.miou {
        run.metrics.insert("miou".into(), m);
    }
    run.output(out);
    run.write(&out.join("run_manifest.json"))
}

pub struct BenchArgs {
    pub height: usize,
    pub width: usize,
    pub batch: usize,
    pub repetitions: usize,
    pub out: PathBuf,
}

pub fn bench_cmd(taxonomy: &ClassTaxonomy, strategy: &DivisionStrategy, args: BenchArgs) -> Result<()> {
    let mut arches: Vec<(String, ArchSpec)> = strategy
        .categories
        .iter()
        .map(|c| (format!("category:{}", c.name), ArchSpec::category(c.n_out())))
        .collect();
    arches.push(("monolithic".into(), ArchSpec::category(taxonomy.num_classes())));
    arches.push((
        "ensemble".into(),
        ArchSpec::ensemble(strategy.num_categories(), taxonomy.num_classes()),
    ));
    let mut rows = Vec::new();
    for (name, arch) in arches {
        let stride = arch.stride();
        if args.height % stride != 0 || args.width % stride != 0 {
            return Err(dec_core::Error::Contract(format!(
                "bench input {}x{} must be multiples of {stride}",
                args.width, args.height
            ))
            .into());
        }
        let net = SegNet32::new(arch.clone(), 0)?;
        let x = Tensor32::zeros(arch.in_channels, args.height, args.width);
        let r = bench(net.param_count(), args.batch, args.repetitions, || {
            for _ in 0..args.batch {
                net.predict(&x)?;
            }
            Ok(())
        })?;
        println!("{name:<24} params {:>8}  {:>9.1} img/s", r.params, r.imgs_per_s);
        rows.push(BenchRow {
            model: name,
            params: r.params,
            imgs_per_s: r.imgs_per_s,
        });
    }
    std::fs::create_dir_all(&args.out)?;
    write_bench_csv(&args.out.join("bench.csv"), &rows)?;
    let mut run = RunManifest::new("bench");
    run.input("taxonomy", taxonomy.hash());
    run.input("strategy", strategy.hash());
    for r in &rows {
        run.metrics.insert(format!("{}/params", r.model), r.params as f64);
    }
    run.output(&args.out);
    run.write(&args.out.join("run_manifest.json"))
}
