//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for invalid input or arguments, 2 for
//! filesystem failures. Errors are reported as a single line on stderr.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::eval::{evaluate, recall_curve, EvalParams, IouType};
use crate::geometry::rasterize_polygon;
use crate::io::bank::read_bank;
use crate::io::coco::{read_coco, write_coco, write_json, AnnotationSet};
use crate::io::config::JobConfig;
use crate::io::features::read_feature_file;
use crate::io::gallery::{read_gallery, write_gallery};
use crate::io::regions::read_regions;
use crate::io::{read_results, write_results};
use crate::math::LabelGrid;
use crate::ovscore::classify_detections;
use crate::pseudo::{build_gallery, run_parse, NamingMode, ParseOptions};
use crate::taxonomy::{PromptTemplate, Taxonomy};

#[derive(Parser, Debug)]
#[command(name = "ovparts", version, about = "Open-vocabulary part parsing, scoring and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Inspect a taxonomy file.
    Taxonomy {
        #[command(subcommand)]
        action: TaxonomyAction,
    },
    /// Pack base features and COCO part labels into a gallery file.
    BuildGallery(BuildGalleryArgs),
    /// Produce pseudo part annotations for novel images.
    Parse(ParseArgs),
    /// Classify region embeddings against a text embedding bank.
    Score(ScoreArgs),
    /// COCO-style AP for boxes or masks.
    Eval(EvalArgs),
    /// Class-agnostic recall of proposals at several budgets.
    Recall(RecallArgs),
    /// Write label rasters (PGM) per image for inspection.
    ExportOverlays(OverlayArgs),
}

#[derive(Subcommand, Debug)]
enum TaxonomyAction {
    /// Check a taxonomy file and summarize it.
    Validate { path: PathBuf },
    /// List categories, optionally only one object's parts at one level.
    List {
        path: PathBuf,
        #[arg(long)]
        object: Option<String>,
        #[arg(long, default_value_t = 0, requires = "object")]
        level: usize,
    },
    /// Print the base/novel split.
    Split { path: PathBuf },
    /// Render every category's text prompt.
    Prompts {
        path: PathBuf,
        #[arg(long, default_value = "object-part")]
        prompt: String,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Job configuration JSON; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (default: all logical cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args, Debug)]
struct BuildGalleryArgs {
    #[arg(long)]
    features: Option<PathBuf>,
    /// COCO document with the base images' part masks.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct ParseArgs {
    #[arg(long)]
    gallery: Option<PathBuf>,
    /// Feature file of the images to parse.
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// COCO document whose images give sizes and object names.
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    min_score: Option<f64>,
    /// Use detector predictions for base-object images.
    #[arg(long)]
    hybrid: bool,
    /// COCO results file with detector predictions.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    tau: Option<f64>,
    /// Part naming: base or novel.
    #[arg(long)]
    naming: Option<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    regions: Option<PathBuf>,
    #[arg(long)]
    bank: Option<PathBuf>,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// object-part or part-of-object; must match the bank.
    #[arg(long)]
    prompt: Option<String>,
    /// Comma-separated vocabulary, e.g. "dog: head,dog: tail,cat".
    #[arg(long)]
    vocab: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    score_threshold: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    dets: PathBuf,
    #[arg(long, default_value = "box")]
    mode: String,
    /// Taxonomy whose split gives the Base/Novel columns.
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// Also write the full report as JSON here.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Count crowd annotations as ordinary ground truth.
    #[arg(long)]
    no_crowd: bool,
    #[arg(long, default_value_t = 100)]
    max_dets: usize,
    /// List per-category AP after the summary table.
    #[arg(long)]
    per_category: bool,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args, Debug)]
struct RecallArgs {
    #[arg(long)]
    gt: PathBuf,
    /// Proposals as a COCO results file; categories are ignored.
    #[arg(long)]
    dets: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "30,100,300,1000")]
    k: Vec<usize>,
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
}

#[derive(Args, Debug)]
struct OverlayArgs {
    /// COCO document to paint (segmentations, else boxes).
    #[arg(long, conflicts_with = "gallery", required_unless_present = "gallery")]
    annotations: Option<PathBuf>,
    /// Gallery file whose label grids are written as-is.
    #[arg(long)]
    gallery: Option<PathBuf>,
    #[arg(long)]
    output_dir: PathBuf,
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I: IntoIterator<Item = OsString>>(args: I) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("{first} (see --help)");
            return 1;
        }
    };
    match dispatch(cli.command) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            if e.is_io() {
                2
            } else {
                1
            }
        }
    }
}

fn load_config(common: &Common) -> Result<JobConfig> {
    let mut cfg = match &common.config {
        Some(p) => JobConfig::load(p)?,
        None => JobConfig::default(),
    };
    if common.workers.is_some() {
        cfg.workers = common.workers;
    }
    Ok(cfg)
}

fn need(value: Option<PathBuf>, fallback: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    value
        .or_else(|| fallback.clone())
        .ok_or_else(|| Error::InvalidConfig(format!("missing --{flag} (or \"{}\" in --config)", flag.replace('-', "_"))))
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if workers == Some(0) {
        return Err(Error::InvalidConfig("--workers must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    pool.install(f)
}

fn dispatch(cmd: Command) -> Result<String> {
    match cmd {
        Command::Taxonomy { action } => taxonomy(action),
        Command::BuildGallery(a) => build(a),
        Command::Parse(a) => parse(a),
        Command::Score(a) => score(a),
        Command::Eval(a) => eval(a),
        Command::Recall(a) => recall(a),
        Command::ExportOverlays(a) => overlays(a),
    }
}

fn taxonomy(action: TaxonomyAction) -> Result<String> {
    let mut out = String::new();
    match action {
        TaxonomyAction::Validate { path } => {
            let t = Taxonomy::load(&path)?;
            let split = match t.split() {
                Some(s) => format!(", {} base / {} novel", s.base.len(), s.novel.len()),
                None => String::new(),
            };
            let _ = writeln!(out, "ok: {} objects, {} parts{split}", t.objects().len(), t.parts().len());
        }
        TaxonomyAction::List { path, object, level } => {
            let t = Taxonomy::load(&path)?;
            match object {
                Some(o) => {
                    for p in t.parts_of_object(&o, level)? {
                        let _ = writeln!(out, "{}\t{}", p.id, p.key());
                    }
                }
                None => {
                    for (id, name) in t.categories() {
                        let kind = match t.granularity(id) {
                            Some(l) => format!("part/{l}"),
                            None => "object".into(),
                        };
                        let _ = writeln!(out, "{id}\t{kind}\t{name}");
                    }
                }
            }
        }
        TaxonomyAction::Split { path } => {
            let t = Taxonomy::load(&path)?;
            let s = t
                .split()
                .ok_or_else(|| Error::InvalidTaxonomy("taxonomy has no base/novel split".into()))?;
            for (tag, ids) in [("base", &s.base), ("novel", &s.novel)] {
                for id in ids {
                    let _ = writeln!(out, "{tag}\t{id}\t{}", t.category_name(*id).unwrap_or_default());
                }
            }
        }
        TaxonomyAction::Prompts { path, prompt } => {
            let t = Taxonomy::load(&path)?;
            let template: PromptTemplate = prompt.parse()?;
            for (id, _) in t.categories() {
                let text = crate::ovscore::TextEmbeddingBank::expected_prompt(&t, id, template)?;
                let _ = writeln!(out, "{id}\t{text}");
            }
        }
    }
    Ok(out)
}

fn build(a: BuildGalleryArgs) -> Result<String> {
    let cfg = load_config(&a.common)?;
    let features = need(a.features, &cfg.gallery_features, "features")?;
    let labels = need(a.labels, &cfg.gallery_labels, "labels")?;
    let tax = Taxonomy::load(need(a.taxonomy, &cfg.taxonomy, "taxonomy")?)?;
    let output = need(a.output, &cfg.gallery, "output")?;
    let file = read_feature_file(&features)?;
    let coco = read_coco(&labels)?;
    let gallery = build_gallery(&file.grids, &coco, &tax)?;
    gallery.validate_labels(&tax)?;
    write_gallery(&output, &gallery, &file.metadata)?;
    Ok(format!("wrote {} gallery entries\n", gallery.len()))
}

fn parse(a: ParseArgs) -> Result<String> {
    let cfg = load_config(&a.common)?;
    let gallery_path = need(a.gallery, &cfg.gallery, "gallery")?;
    let features = need(a.features, &cfg.novel_features, "features")?;
    let tax = Taxonomy::load(need(a.taxonomy, &cfg.taxonomy, "taxonomy")?)?;
    let output = need(a.output, &cfg.output, "output")?;
    let opts = ParseOptions {
        min_score: a.min_score.unwrap_or(cfg.min_score),
        naming: match a.naming {
            Some(n) => n.parse::<NamingMode>()?,
            None => cfg.naming,
        },
        hybrid: a.hybrid,
        tau: a.tau.unwrap_or(cfg.tau),
    };
    let checked = JobConfig {
        min_score: opts.min_score,
        tau: opts.tau,
        ..cfg.clone()
    };
    checked.validate()?;

    let (gallery, _) = read_gallery(&gallery_path)?;
    gallery.validate_labels(&tax)?;
    let novel = read_feature_file(&features)?;
    let images = a.images.or(cfg.images.clone()).map(read_coco).transpose()?;
    let predictions = a.predictions.or(cfg.predictions.clone()).map(read_results).transpose()?;

    let report = with_workers(cfg.workers, || {
        run_parse(
            &novel.grids,
            images.as_ref().map(|s| s.images.as_slice()),
            &gallery,
            &tax,
            predictions.as_ref(),
            &opts,
        )
    })?;
    for (image, key) in &report.dropped {
        eprintln!("warning: image {image}: no category {key:?}; transferred part dropped");
    }
    write_coco(&report.annotations, &output)?;
    Ok(format!(
        "wrote {} annotations for {} images\n",
        report.annotations.annotations.len(),
        report.annotations.images.len()
    ))
}

fn score(a: ScoreArgs) -> Result<String> {
    let cfg = load_config(&a.common)?;
    let regions = read_regions(need(a.regions, &cfg.regions, "regions")?)?;
    let bank = read_bank(need(a.bank, &cfg.bank, "bank")?)?;
    let tax = Taxonomy::load(need(a.taxonomy, &cfg.taxonomy, "taxonomy")?)?;
    let output = need(a.output, &cfg.output, "output")?;
    let template = match a.prompt {
        Some(p) => p.parse()?,
        None => cfg.prompt,
    };
    let checked = JobConfig {
        temperature: a.temperature.unwrap_or(cfg.temperature),
        top_k: a.top_k.unwrap_or(cfg.top_k),
        score_threshold: a.score_threshold.unwrap_or(cfg.score_threshold),
        prompt: template,
        ..cfg.clone()
    };
    checked.validate()?;
    if bank.template() != template {
        return Err(Error::Vocabulary(format!(
            "bank was rendered with the {} template, not {template}",
            bank.template()
        )));
    }
    bank.validate_against(&tax)?;
    let bank = match a.vocab {
        Some(v) => {
            let terms: Vec<&str> = v.split(',').filter(|t| !t.trim().is_empty()).collect();
            let sel = tax.filter_by_prompt(&terms)?;
            for t in &sel.unknown {
                eprintln!("warning: unknown vocabulary term {t:?}");
            }
            bank.restrict(&sel)?
        }
        None => bank,
    };
    let dets = with_workers(cfg.workers, || {
        classify_detections(&regions, &bank, checked.temperature, checked.top_k, checked.score_threshold)
    })?;
    write_results(&dets, &output)?;
    Ok(format!("wrote {} detections\n", dets.len()))
}

fn eval(a: EvalArgs) -> Result<String> {
    let mode: IouType = a.mode.parse()?;
    let gt = read_coco(&a.gt)?;
    let dets = read_results(&a.dets)?;
    let tax = a.taxonomy.as_ref().map(Taxonomy::load).transpose()?;
    if a.max_dets == 0 {
        return Err(Error::InvalidConfig("--max-dets must be at least 1".into()));
    }
    let params = EvalParams {
        max_dets: a.max_dets,
        use_crowd: !a.no_crowd,
        ..EvalParams::default()
    };
    let split = tax.as_ref().and_then(|t| t.split());
    let report = with_workers(a.workers, || evaluate(&gt, &dets, mode, split, &params))?;
    if let Some(path) = &a.json {
        write_json(path, &report, true)?;
    }
    let mut out = report.to_table();
    if a.per_category {
        for c in &report.categories {
            let ap = c.ap.map_or("-".to_string(), |v| format!("{:.1}", v * 100.0));
            let _ = writeln!(out, "{:>6}  {:>6}  {}", c.id, ap, c.name);
        }
    }
    Ok(out)
}

fn recall(a: RecallArgs) -> Result<String> {
    if !(0.0..=1.0).contains(&a.iou) {
        return Err(Error::InvalidConfig(format!("--iou {} outside [0, 1]", a.iou)));
    }
    let gt = read_coco(&a.gt)?;
    let dets = read_results(&a.dets)?;
    let mut out = String::new();
    for r in recall_curve(&gt, &dets, &a.k, a.iou) {
        let _ = writeln!(out, "AR@{}\t{:.1}", r.k, r.recall * 100.0);
    }
    Ok(out)
}

/// Plain-text PGM of a label raster (label values are gray levels).
fn write_pgm(path: &Path, labels: &LabelGrid) -> Result<()> {
    let max = labels.as_slice().iter().copied().max().unwrap_or(0).clamp(1, 65535);
    let mut s = format!("P2\n{} {}\n{max}\n", labels.width(), labels.height());
    for r in 0..labels.height() {
        let row: Vec<String> = (0..labels.width()).map(|c| labels.get(r, c).min(65535).to_string()).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn paint(set: &AnnotationSet, image_id: u64, size: (usize, usize)) -> Result<LabelGrid> {
    let mut anns: Vec<_> = set.annotations.iter().filter(|a| a.image_id == image_id).collect();
    let mut masks = Vec::with_capacity(anns.len());
    anns.sort_by_key(|a| a.id);
    for a in anns {
        let m = match &a.segmentation {
            Some(s) => s.to_mask(size)?,
            None => {
                let b = a.bbox;
                rasterize_polygon(&[(b.x, b.y), (b.x + b.w, b.y), (b.x + b.w, b.y + b.h), (b.x, b.y + b.h)], size)?
            }
        };
        masks.push((m.area(), a.id, a.category_id, m));
    }
    masks.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut g = LabelGrid::filled(size.0, size.1, 0)?;
    for (_, _, cat, m) in masks {
        for r in 0..size.0 {
            for c in 0..size.1 {
                if m.get(r, c) {
                    g.set(r, c, cat);
                }
            }
        }
    }
    Ok(g)
}

fn overlays(a: OverlayArgs) -> Result<String> {
    std::fs::create_dir_all(&a.output_dir).map_err(|e| Error::io(&a.output_dir, e))?;
    let mut n = 0;
    if let Some(path) = &a.annotations {
        let set = read_coco(path)?;
        for im in &set.images {
            let g = paint(&set, im.id, (im.height, im.width))?;
            write_pgm(&a.output_dir.join(format!("{}.pgm", im.id)), &g)?;
            n += 1;
        }
    } else if let Some(path) = &a.gallery {
        let (gallery, _) = read_gallery(path)?;
        for e in gallery.entries() {
            write_pgm(&a.output_dir.join(format!("{}.pgm", e.image_id())), e.labels())?;
            n += 1;
        }
    }
    Ok(format!("wrote {n} overlays\n"))
}
