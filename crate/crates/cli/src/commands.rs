//! One function per subcommand. Each takes the merged run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use carbq_core::analytics::{analyze_image, emit_report, ImageAnalysis};
use carbq_core::dataset::{manifest_root, resolve, ClassLabel, Manifest, ManifestEntry, Split, SplitRatios};
use carbq_core::fsutil;
use carbq_core::imageio::{stitch_tiles, GrayImage, GridManifest};
use carbq_core::masking::{curated_mask, BinaryMask};
use carbq_core::metrics::{confusion, iou, overlay, pixel_accuracy, ConfusionCounts, OverlayImage};
use carbq_core::synth::write_dataset;
use carbq_core::unet::{load_params_file, predict_masks, save_params_file, train_with};
use serde::Deserialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MODEL_FILE: &str = "model.cseg";

fn load_manifest(cfg: &RunConfig) -> CliResult<(PathBuf, PathBuf, Manifest)> {
    let path = cfg.existing_manifest()?.to_path_buf();
    let root = manifest_root(&path);
    let m = Manifest::load(&path)?;
    Ok((path, root, m))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    Ok(fsutil::write_atomic(path, text.as_bytes())?)
}

fn write_json(path: &Path, v: &serde_json::Value) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(v).map_err(|e| CliError::runtime(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelRow {
    image: String,
    class_label: ClassLabel,
    magnification: u32,
    #[serde(default)]
    grid: Option<String>,
}

/// Path text for the manifest: relative to `root` when the file lies under
/// it, absolute otherwise.
fn manifest_path_text(root: &Path, file: &Path) -> CliResult<String> {
    let abs = file
        .canonicalize()
        .map_err(|e| CliError::runtime(format!("cannot resolve {}: {e}", file.display())))?;
    let root = root.canonicalize().unwrap_or_else(|_| root.to_path_buf());
    let text = match abs.strip_prefix(&root) {
        Ok(rel) => rel.to_string_lossy().replace('\\', "/"),
        Err(_) => abs.to_string_lossy().into_owned(),
    };
    Ok(text)
}

/// Builds a fresh manifest from a directory of PGM images and a labels CSV
/// with columns `image,class_label,magnification[,grid]`.
pub fn ingest(cfg: &RunConfig, images: &Path, labels: &Path, force: bool) -> CliResult<Manifest> {
    let manifest_path = cfg.require_manifest()?;
    if !images.is_dir() {
        return Err(CliError::config(format!("image directory not found: {}", images.display())));
    }
    if !labels.is_file() {
        return Err(CliError::config(format!("labels file not found: {}", labels.display())));
    }
    if manifest_path.exists() && !force {
        return Err(CliError::runtime(format!(
            "{} already exists; pass --force to replace it",
            manifest_path.display()
        )));
    }
    let root = manifest_root(manifest_path);
    std::fs::create_dir_all(&root).map_err(|e| CliError::runtime(format!("{}: {e}", root.display())))?;

    let mut m = Manifest::default();
    if let Some(ts) = cfg.thresholds()? {
        m.default_threshold_set = ts;
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(labels)
        .map_err(|e| CliError::runtime(format!("{}: {e}", labels.display())))?;
    for (line, row) in reader.deserialize::<LabelRow>().enumerate() {
        let row = row.map_err(|e| CliError::runtime(format!("{} row {}: {e}", labels.display(), line + 1)))?;
        let file = images.join(&row.image);
        // Decoding up front rejects unreadable images at ingest time.
        GrayImage::load(&file)?;
        let id = Path::new(&row.image)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| CliError::runtime(format!("cannot derive an id from `{}`", row.image)))?;
        let mut e = ManifestEntry::new(id, manifest_path_text(&root, &file)?, row.class_label, row.magnification);
        e.nm_per_px = cfg.nm_per_px.get(&row.magnification).copied();
        e.grid = row.grid;
        m.entries.push(e);
    }
    m.validate()?;
    m.save(manifest_path)?;
    eprintln!("ingest: {} entries -> {}", m.entries.len(), manifest_path.display());
    Ok(m)
}

/// Writes the denoised candidate mask for every threshold of every image to
/// `<out>/<id>/t<threshold>.pgm`, plus a `candidates.csv` tally.
pub fn make_masks(cfg: &RunConfig, only: Option<&str>) -> CliResult<usize> {
    let (_, root, m) = load_manifest(cfg)?;
    let out = cfg.require_out()?;
    let ts = cfg.thresholds()?.unwrap_or(m.default_threshold_set);
    let mut csv = String::from("image_id,threshold,carbide_px\n");
    let mut written = 0;
    for e in &m.entries {
        if only.is_some_and(|id| id != e.id) {
            continue;
        }
        let img = GrayImage::load(&resolve(&root, &e.image_path))?;
        for &t in ts.values() {
            let mask = curated_mask(&img, t);
            mask.save(&out.join(&e.id).join(format!("t{t:03}.pgm")))?;
            let _ = writeln!(csv, "{},{t},{}", e.id, mask.carbide_count());
            written += 1;
        }
    }
    if let Some(id) = only {
        m.entry(id)?;
    }
    write_text(&out.join("candidates.csv"), &csv)?;
    eprintln!("make-masks: {written} masks -> {}", out.display());
    Ok(written)
}

pub fn parse_ratios(text: &str) -> CliResult<SplitRatios> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::config(format!("ratios must be three numbers like 0.8,0.1,0.1, got `{text}`")))?;
    let [train, val, test] = parts[..] else {
        return Err(CliError::config(format!("ratios need exactly three values, got `{text}`")));
    };
    let r = SplitRatios { train, val, test };
    r.validate().map_err(|e| CliError::config(e.to_string()))?;
    Ok(r)
}

pub fn split(cfg: &RunConfig, ratios: Option<SplitRatios>) -> CliResult<Manifest> {
    let (path, _, m) = load_manifest(cfg)?;
    let ratios = ratios.unwrap_or(cfg.split);
    let seed = cfg.seed.unwrap_or(0);
    let s = m.split(ratios, seed)?;
    s.save(&path)?;
    let c = s.split_counts();
    eprintln!(
        "split: train={} val={} test={} (seed {seed})",
        c.get("train").copied().unwrap_or(0),
        c.get("val").copied().unwrap_or(0),
        c.get("test").copied().unwrap_or(0)
    );
    Ok(s)
}

/// Trains on the train split, validating on val, and writes the weights and
/// `history.csv` into the output directory.
pub fn train(cfg: &RunConfig, epochs: Option<usize>) -> CliResult<PathBuf> {
    let (_, root, m) = load_manifest(cfg)?;
    let out = cfg.require_out()?;
    let mut model = cfg.model.clone();
    if let Some(s) = cfg.seed {
        model.seed = s;
    }
    if let Some(e) = epochs {
        model.epochs = e;
    }
    model.validate().map_err(|e| CliError::config(e.to_string()))?;
    let train_pairs = m.load_pairs(&root, Split::Train, model.input_w, model.input_h)?;
    let val_pairs = m.load_pairs(&root, Split::Val, model.input_w, model.input_h)?;
    if train_pairs.is_empty() {
        return Err(CliError::runtime("train split is empty; run `split` first"));
    }
    eprintln!(
        "train: {} train / {} val images, {} epochs",
        train_pairs.len(),
        val_pairs.len(),
        model.epochs
    );
    let (params, history) = train_with(&model, &train_pairs, &val_pairs, |r| {
        let val = match (r.val_loss, r.val_acc) {
            (Some(l), Some(a)) => format!(" val_loss={l:.5} val_acc={a:.5}"),
            _ => String::new(),
        };
        eprintln!(
            "epoch {}/{} train_loss={:.5} train_acc={:.5}{val}",
            r.epoch, model.epochs, r.train_loss, r.train_acc
        );
    })?;
    let model_path = out.join(MODEL_FILE);
    save_params_file(&params, &model_path)?;
    write_text(&out.join("history.csv"), &history.to_csv())?;
    Ok(model_path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub n_images: usize,
    pub counts: ConfusionCounts,
    pub pixel_accuracy: f64,
    pub mean_iou: f64,
}

/// Predicts every image of `split`, compares against the curated masks at
/// model input size, and writes `metrics.csv`, `eval_summary.json`,
/// `palette.json`, overlays and predicted masks.
pub fn eval(cfg: &RunConfig, model_path: Option<&Path>, split: Split) -> CliResult<EvalSummary> {
    let out = cfg.require_out()?;
    let model_path = model_path.map(Path::to_path_buf).unwrap_or_else(|| out.join(MODEL_FILE));
    if !model_path.is_file() {
        return Err(CliError::config(format!("model file not found: {}", model_path.display())));
    }
    let (_, root, m) = load_manifest(cfg)?;
    let params = load_params_file(&model_path)?;
    let pairs = m.load_pairs(&root, split, params.config.input_w, params.config.input_h)?;
    if pairs.is_empty() {
        return Err(CliError::runtime(format!("split `{split}` has no entries to evaluate")));
    }
    let images: Vec<&GrayImage> = pairs.iter().map(|p| &p.image).collect();
    let preds = predict_masks(&params, &images, true)?;

    let mut csv = String::from("image_id,split,tp,fp,fn,tn,accuracy,iou\n");
    let mut pooled = ConfusionCounts::default();
    let mut ious = Vec::with_capacity(pairs.len());
    for (p, pred) in pairs.iter().zip(&preds) {
        let c = confusion(pred, &p.mask)?;
        let acc = pixel_accuracy(&c)?;
        let j = iou(&c);
        let _ = writeln!(csv, "{},{split},{},{},{},{},{acc},{j}", p.id, c.tp, c.fp, c.fn_, c.tn);
        pooled = pooled.merge(c);
        ious.push(j);
        let ov = overlay(pred, &p.mask)?;
        fsutil::write_atomic(&out.join("overlays").join(format!("{}.ppm", p.id)), &ov.to_ppm())?;
        pred.save(&out.join("predictions").join(format!("{}.pgm", p.id)))?;
    }
    let summary = EvalSummary {
        n_images: pairs.len(),
        counts: pooled,
        pixel_accuracy: pixel_accuracy(&pooled)?,
        mean_iou: ious.iter().sum::<f64>() / ious.len() as f64,
    };
    write_text(&out.join("metrics.csv"), &csv)?;
    write_json(
        &out.join("eval_summary.json"),
        &json!({
            "split": split.as_str(),
            "n_images": summary.n_images,
            "tp": pooled.tp,
            "fp": pooled.fp,
            "fn": pooled.fn_,
            "tn": pooled.tn,
            "pixel_accuracy": summary.pixel_accuracy,
            "mean_iou": summary.mean_iou,
        }),
    )?;
    write_json(&out.join("palette.json"), &json!(OverlayImage::palette()))?;
    eprintln!(
        "eval: {} images, pixel_accuracy={:.5} mean_iou={:.5}",
        summary.n_images, summary.pixel_accuracy, summary.mean_iou
    );
    Ok(summary)
}

/// Which masks `analyze` measures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MaskSource {
    /// Curated masks recorded in the manifest.
    Curated,
    /// `<dir>/<id>.pgm`, as written by `eval`.
    Predictions(PathBuf),
}

pub fn analyze(cfg: &RunConfig, source: &MaskSource, split: Option<Split>) -> CliResult<Vec<ImageAnalysis>> {
    let (_, root, m) = load_manifest(cfg)?;
    let out = cfg.require_out()?;
    let mut analyses = Vec::new();
    for e in &m.entries {
        if split.is_some_and(|s| s != e.split) {
            continue;
        }
        let mask = match source {
            MaskSource::Curated => {
                let Some(rel) = &e.mask_path else { continue };
                BinaryMask::load(&resolve(&root, rel))?
            }
            MaskSource::Predictions(dir) => {
                let p = dir.join(format!("{}.pgm", e.id));
                if !p.is_file() {
                    return Err(CliError::runtime(format!("no prediction for `{}` at {}", e.id, p.display())));
                }
                BinaryMask::load(&p)?
            }
        };
        analyses.push(analyze_image(&e.id, e.class_label, &mask, e.nm_per_px)?);
    }
    emit_report(out, &analyses, cfg.size_bin_width)?;
    eprintln!("analyze: {} images -> {}", analyses.len(), out.display());
    Ok(analyses)
}

pub fn synth(cfg: &RunConfig, n_images: Option<usize>) -> CliResult<Manifest> {
    let out = cfg.require_out()?;
    let mut spec = cfg.synth.clone();
    if let Some(s) = cfg.seed {
        spec.seed = s;
    }
    if let Some(n) = n_images {
        spec.n_images = n;
    }
    spec.validate().map_err(|e| CliError::config(e.to_string()))?;
    let m = write_dataset(&spec, out, cfg.split)?;
    eprintln!("synth: {} images -> {}", m.entries.len(), out.display());
    Ok(m)
}

/// Stitches the tiles listed in a grid file into one raster at `output`.
pub fn stitch(grid_path: &Path, output: &Path) -> CliResult<(usize, usize)> {
    if !grid_path.is_file() {
        return Err(CliError::config(format!("grid file not found: {}", grid_path.display())));
    }
    let grid = GridManifest::load(grid_path)?;
    let tiles = grid
        .resolved_paths(grid_path)
        .iter()
        .map(|p| GrayImage::load(p))
        .collect::<Result<Vec<_>, _>>()?;
    let img = stitch_tiles(&tiles, grid.cols, grid.rows)?;
    img.save(output)?;
    eprintln!("stitch: {}x{} -> {}", img.width(), img.height(), output.display());
    Ok((img.width(), img.height()))
}
