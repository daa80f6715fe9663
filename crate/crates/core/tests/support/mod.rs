//! Fixtures and independent reference implementations shared by the
//! integration tests. Nothing here calls the library's matching, AP,
//! correspondence or RLE code; the references are written from the
//! definitions.

#![allow(dead_code)]

pub mod oracle_eval;

use std::path::{Path, PathBuf};
use std::process::Command;

use ovparts::correspondence::{BaseGallery, GalleryEntry};
use ovparts::geometry::{BoundingBox, RleMask};
use ovparts::io::coco::{Annotation, AnnotationSet, CategoryInfo, Detection, DetectionSet, ImageInfo, Segmentation};
use ovparts::{Embedding, FeatureGrid, LabelGrid, Taxonomy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn animal_taxonomy() -> Taxonomy {
    Taxonomy::load(fixture_path("animal_parts.json")).unwrap()
}

/// Uniform components in [-1, 1], rejecting near-zero vectors.
pub fn random_vec(rng: &mut impl Rng, d: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        if v.iter().map(|x| x * x).sum::<f32>() > 1e-3 {
            return v;
        }
    }
}

pub fn random_grid(rng: &mut impl Rng, image_id: u64, h: usize, w: usize, d: usize) -> FeatureGrid {
    let cells: Vec<f32> = (0..h * w).flat_map(|_| random_vec(rng, d)).collect();
    let token = Embedding::new(random_vec(rng, d)).unwrap();
    FeatureGrid::new(image_id, h, w, cells, token).unwrap()
}

pub fn scaled(g: &FeatureGrid, k: f32) -> FeatureGrid {
    let cells = g.cells().iter().map(|x| x * k).collect();
    let token = g.class_token().as_slice().iter().map(|x| x * k).collect();
    FeatureGrid::new(g.image_id(), g.height(), g.width(), cells, Embedding::new(token).unwrap()).unwrap()
}

fn cos(a: &[f32], b: &[f32]) -> f64 {
    let mut ab = 0.0f64;
    let mut aa = 0.0f64;
    let mut bb = 0.0f64;
    for i in 0..a.len() {
        ab += a[i] as f64 * b[i] as f64;
        aa += a[i] as f64 * a[i] as f64;
        bb += b[i] as f64 * b[i] as f64;
    }
    ab / (aa.sqrt() * bb.sqrt())
}

/// Exhaustive double loop over base cells: first strict maximum wins.
pub fn oracle_dense(novel: &FeatureGrid, base: &FeatureGrid) -> Vec<((usize, usize), f64)> {
    let d = novel.dim();
    let mut out = Vec::new();
    for x in 0..novel.height() {
        for y in 0..novel.width() {
            let f = &novel.cells()[(x * novel.width() + y) * d..][..d];
            let mut best = ((0, 0), f64::NEG_INFINITY);
            for p in 0..base.height() {
                for q in 0..base.width() {
                    let g = &base.cells()[(p * base.width() + q) * d..][..d];
                    let s = cos(f, g);
                    if s > best.1 {
                        best = ((p, q), s);
                    }
                }
            }
            out.push(best);
        }
    }
    out
}

/// Image id of the entry whose class token is most similar; ties to the
/// lowest id.
pub fn oracle_nearest(novel: &FeatureGrid, grids: &[FeatureGrid]) -> u64 {
    let mut sorted: Vec<&FeatureGrid> = grids.iter().collect();
    sorted.sort_by_key(|g| g.image_id());
    let mut best = (u64::MAX, f64::NEG_INFINITY);
    for g in sorted {
        let s = cos(novel.class_token().as_slice(), g.class_token().as_slice());
        if s > best.1 {
            best = (g.image_id(), s);
        }
    }
    best.0
}

/// Random label grid over `labels` with roughly half background.
pub fn random_labels(rng: &mut impl Rng, h: usize, w: usize, labels: &[u32]) -> LabelGrid {
    let data = (0..h * w)
        .map(|_| if rng.random_bool(0.5) { 0 } else { labels[rng.random_range(0..labels.len())] })
        .collect();
    LabelGrid::new(h, w, data).unwrap()
}

/// Gallery of random entries, one object each, labeled with that object's
/// root parts.
pub fn random_gallery(rng: &mut impl Rng, tax: &Taxonomy, objects: &[&str], d: usize) -> BaseGallery {
    let entries = objects
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let (h, w) = (rng.random_range(2..=6), rng.random_range(2..=6));
            let parts: Vec<u32> = tax.parts_of_object(o, 0).unwrap().iter().map(|p| p.id).collect();
            let grid = random_grid(rng, 100 + i as u64, h, w, d);
            GalleryEntry::new(grid, random_labels(rng, h, w, &parts), *o).unwrap()
        })
        .collect();
    BaseGallery::new(entries).unwrap()
}

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ovparts"))
}

/// Run the binary, returning exit code, stdout and stderr.
pub fn run_bin(args: &[&str]) -> (i32, String, String) {
    let out = bin().args(args).output().expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Column-major runs of a mask given as a row-major predicate.
pub fn rle_of(h: usize, w: usize, inside: impl Fn(usize, usize) -> bool) -> RleMask {
    let mut counts = Vec::new();
    let (mut current, mut run) = (false, 0u32);
    for c in 0..w {
        for r in 0..h {
            if inside(r, c) != current {
                counts.push(run);
                run = 0;
                current = !current;
            }
            run += 1;
        }
    }
    counts.push(run);
    RleMask { size: [h, w], counts }
}

fn rect_rle(h: usize, w: usize, b: [f64; 4], hole: Option<(usize, usize)>) -> Segmentation {
    let inside = move |r: usize, c: usize| {
        let (x, y) = (c as f64, r as f64);
        x >= b[0] && x < b[0] + b[2] && y >= b[1] && y < b[1] + b[3] && hole != Some((r, c))
    };
    Segmentation::Rle(rle_of(h, w, inside))
}

pub const EVAL_SIZE: usize = 40;

/// Random ground truth and detections over five images and three categories.
/// Scores are coarse so ties occur; some ground truth is crowd and category 3
/// is sometimes left without ground truth.
pub fn eval_fixture(seed: u64, masks: bool) -> (AnnotationSet, DetectionSet) {
    let mut r = rng(seed);
    let n = EVAL_SIZE;
    let mut gt = AnnotationSet {
        images: (1..=5).map(|id| ImageInfo::new(id, n, n)).collect(),
        annotations: Vec::new(),
        categories: (1..=3).map(|id| CategoryInfo { id, name: format!("cat{id}") }).collect(),
    };
    let mut dets = Vec::new();
    let skip_cat3 = r.random_bool(0.3);
    let mut next_id = 1;
    for image_id in 1..=5u64 {
        for cat in 1..=3u32 {
            let n_gt = if cat == 3 && skip_cat3 { 0 } else { r.random_range(0..=3) };
            for _ in 0..n_gt {
                let w = r.random_range(4..=16) as f64;
                let h = r.random_range(4..=16) as f64;
                let x = r.random_range(0..=(n - 16)) as f64;
                let y = r.random_range(0..=(n - 16)) as f64;
                let b = [x, y, w, h];
                let crowd = r.random_bool(0.1);
                gt.annotations.push(Annotation {
                    id: next_id,
                    image_id,
                    category_id: cat,
                    bbox: BoundingBox::new(x, y, w, h),
                    segmentation: masks.then(|| rect_rle(n, n, b, None)),
                    area: None,
                    iscrowd: crowd as u8,
                    score: None,
                });
                next_id += 1;
                if r.random_bool(0.75) {
                    let j = |r: &mut ChaCha8Rng| r.random_range(-3i32..=3) as f64;
                    let jb = [(x + j(&mut r)).max(0.0), (y + j(&mut r)).max(0.0), (w + j(&mut r)).max(1.0), (h + j(&mut r)).max(1.0)];
                    let hole = Some((jb[1] as usize, jb[0] as usize));
                    dets.push(Detection {
                        image_id,
                        category_id: cat,
                        bbox: BoundingBox::new(jb[0], jb[1], jb[2], jb[3]),
                        score: (r.random_range(1..=20) as f64) * 0.05,
                        segmentation: masks.then(|| rect_rle(n, n, jb, hole)),
                    });
                }
            }
            for _ in 0..r.random_range(0..=2) {
                let b = [
                    r.random_range(0..=(n - 10)) as f64,
                    r.random_range(0..=(n - 10)) as f64,
                    r.random_range(2..=10) as f64,
                    r.random_range(2..=10) as f64,
                ];
                dets.push(Detection {
                    image_id,
                    category_id: cat,
                    bbox: BoundingBox::new(b[0], b[1], b[2], b[3]),
                    score: (r.random_range(1..=20) as f64) * 0.05,
                    segmentation: masks.then(|| rect_rle(n, n, b, None)),
                });
            }
        }
    }
    (gt, DetectionSet::new(dets))
}

/// Detections that reproduce the ground truth exactly.
pub fn perfect_detections(gt: &AnnotationSet) -> DetectionSet {
    DetectionSet::new(
        gt.annotations
            .iter()
            .map(|a| Detection {
                image_id: a.image_id,
                category_id: a.category_id,
                bbox: a.bbox,
                score: 0.9,
                segmentation: a.segmentation.clone(),
            })
            .collect(),
    )
}

/// Files for an end-to-end parse job.
pub struct ParseFixture {
    pub dir: PathBuf,
    pub taxonomy: PathBuf,
    pub gallery: PathBuf,
    pub features: PathBuf,
    pub images: PathBuf,
    pub predictions: PathBuf,
}

/// Base gallery of cats, cows, horses and birds; eight images to parse, six
/// of novel objects (dog, sheep) and two of base objects with detector
/// predictions.
pub fn write_parse_fixture(dir: &Path, seed: u64) -> ParseFixture {
    use ovparts::io::coco::write_results;
    use ovparts::io::features::{write_feature_file, FeatureMetadata};
    use ovparts::io::gallery::write_gallery;

    let mut r = rng(seed);
    let tax = animal_taxonomy();
    let d = 8;
    let gallery = random_gallery(&mut r, &tax, &["cat", "cow", "horse", "bird", "cat", "cow"], d);
    let meta = FeatureMetadata::new("fixture", "random", Some(8));
    let gallery_path = dir.join("gallery.pgl");
    write_gallery(&gallery_path, &gallery, &meta).unwrap();

    let objects = ["dog", "sheep", "cat", "dog", "cow", "sheep", "dog", "sheep"];
    let mut grids = Vec::new();
    let mut images = Vec::new();
    for (i, o) in objects.iter().enumerate() {
        let id = 10 + i as u64;
        let (h, w) = (r.random_range(2..=6), r.random_range(2..=6));
        grids.push(random_grid(&mut r, id, h, w, d));
        let mut info = ImageInfo::new(id, h * 8, w * 8);
        info.object = Some(o.to_string());
        images.push(info);
    }
    let features = dir.join("novel.pft");
    write_feature_file(&features, &grids, &meta).unwrap();
    let manifest = AnnotationSet {
        images: images.clone(),
        annotations: Vec::new(),
        categories: Vec::new(),
    };
    let images_path = dir.join("images.json");
    ovparts::io::coco::write_coco(&manifest, &images_path).unwrap();

    let mut preds = Vec::new();
    for im in images.iter().filter(|im| matches!(im.object.as_deref(), Some("cat" | "cow"))) {
        let parts = tax.parts_of_object(im.object.as_deref().unwrap(), 0).unwrap();
        for (k, p) in parts.iter().enumerate() {
            preds.push(Detection {
                image_id: im.id,
                category_id: p.id,
                bbox: BoundingBox::new(k as f64, 2.0, 6.0, 5.0),
                score: 0.3 + 0.15 * k as f64,
                segmentation: None,
            });
        }
    }
    let predictions = dir.join("predictions.json");
    write_results(&DetectionSet::new(preds), &predictions).unwrap();

    let taxonomy = dir.join("taxonomy.json");
    std::fs::copy(fixture_path("animal_parts.json"), &taxonomy).unwrap();
    ParseFixture {
        dir: dir.to_path_buf(),
        taxonomy,
        gallery: gallery_path,
        features,
        images: images_path,
        predictions,
    }
}

/// Random grid with height and width drawn from 1..=max.
pub fn any_grid(rng: &mut impl Rng, image_id: u64, max: usize, d: usize) -> FeatureGrid {
    let (h, w) = (rng.random_range(1..=max), rng.random_range(1..=max));
    random_grid(rng, image_id, h, w, d)
}
