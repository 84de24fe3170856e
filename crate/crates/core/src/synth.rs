//! Synthetic micrographs with exactly known masks and per-blob geometry.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::analytics::{format_sig6, BIN_WIDTH_DEG, ORIENTATION_BINS};
use crate::dataset::{ClassLabel, Manifest, ManifestEntry, SplitRatios};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::imageio::{round_intensity, GrayImage};
use crate::masking::{curated_mask, BinaryMask, ThresholdSet, NOISE_MIN_AREA};
use crate::metrics::{confusion, iou};
use crate::morphology::normalize_angle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlobKind {
    Rect,
    Ellipse,
}

/// Law of the long-axis direction, in degrees on [-90, 90).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum OrientationLaw {
    Uniform,
    /// Gaussian about `mean_deg` wrapped onto the 180° circle of axis
    /// directions: θ = wrap(mean + sigma·Z), Z standard normal.
    Concentrated { mean_deg: f64, sigma_deg: f64 },
}

impl OrientationLaw {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            OrientationLaw::Uniform => rng.random_range(-90.0..90.0),
            OrientationLaw::Concentrated { mean_deg, sigma_deg } => {
                let z: f64 = StandardNormal.sample(rng);
                normalize_angle(mean_deg + sigma_deg * z)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_images: usize,
    pub image_w: usize,
    pub image_h: usize,
    /// Inclusive range.
    pub blobs_per_image: (usize, usize),
    /// Each blob's shape is drawn uniformly from this list.
    pub kinds: Vec<BlobKind>,
    /// Long-axis length range in pixels.
    pub long_axis: (f64, f64),
    /// Long over short axis range, at least 1.
    pub aspect: (f64, f64),
    pub orientation: OrientationLaw,
    pub carbide_mean: f64,
    pub carbide_std: f64,
    pub matrix_mean: f64,
    pub matrix_std: f64,
    /// Per-pixel additive Gaussian noise.
    pub noise_std: f64,
    pub seed: u64,
    /// Placement attempts per image before giving up.
    pub max_attempts: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_images: 200,
            image_w: 128,
            image_h: 96,
            blobs_per_image: (3, 7),
            kinds: vec![BlobKind::Rect, BlobKind::Ellipse],
            long_axis: (16.0, 30.0),
            aspect: (1.5, 2.2),
            orientation: OrientationLaw::Uniform,
            carbide_mean: 190.0,
            carbide_std: 10.0,
            matrix_mean: 75.0,
            matrix_std: 8.0,
            noise_std: 10.0,
            seed: 0,
            max_attempts: 2000,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("synth spec: {m}")));
        if self.image_w < 3 || self.image_h < 3 {
            return bad("images must be at least 3x3");
        }
        if self.blobs_per_image.0 > self.blobs_per_image.1 {
            return bad("blobs_per_image range is empty");
        }
        if self.kinds.is_empty() && self.blobs_per_image.1 > 0 {
            return bad("no blob kinds given");
        }
        let (l0, l1) = self.long_axis;
        if !(l0 > 0.0 && l0 <= l1 && l1.is_finite()) {
            return bad("long_axis range must be positive and nonempty");
        }
        let (a0, a1) = self.aspect;
        if !(a0 >= 1.0 && a0 <= a1 && a1.is_finite()) {
            return bad("aspect range must start at 1 or more and be nonempty");
        }
        for s in [self.carbide_std, self.matrix_std, self.noise_std] {
            if !(s >= 0.0 && s.is_finite()) {
                return bad("standard deviations must be non-negative");
            }
        }
        if let OrientationLaw::Concentrated { mean_deg, sigma_deg } = self.orientation {
            if !(mean_deg.is_finite() && sigma_deg >= 0.0 && sigma_deg.is_finite()) {
                return bad("concentrated law needs a finite mean and non-negative sigma");
            }
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be positive");
        }
        Ok(())
    }
}

/// Generation parameters of one blob plus its rendered pixel count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthFeature {
    pub kind: BlobKind,
    pub center_x: f64,
    pub center_y: f64,
    pub long_axis: f64,
    pub short_axis: f64,
    pub angle_deg: f64,
    pub aspect: f64,
    pub area_px: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecord {
    pub image: GrayImage,
    pub truth_mask: BinaryMask,
    pub truth_features: Vec<TruthFeature>,
}

/// Pixels whose centers fall inside the shape.
fn render(kind: BlobKind, cx: f64, cy: f64, long: f64, short: f64, angle_deg: f64, w: usize, h: usize) -> Vec<(usize, usize)> {
    let t = angle_deg.to_radians();
    // Long axis direction as displayed (y down) and its normal.
    let (ux, uy) = (t.cos(), -t.sin());
    let (vx, vy) = (-uy, ux);
    let (a, b) = (long / 2.0, short / 2.0);
    let r = (a * a + b * b).sqrt() + 1.0;
    let x0 = (cx - r).floor().max(0.0) as usize;
    let y0 = (cy - r).floor().max(0.0) as usize;
    let x1 = ((cx + r).ceil() as usize).min(w - 1);
    let y1 = ((cy + r).ceil() as usize).min(h - 1);
    let mut px = Vec::new();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let p = dx * ux + dy * uy;
            let q = dx * vx + dy * vy;
            let inside = match kind {
                BlobKind::Rect => p.abs() <= a && q.abs() <= b,
                BlobKind::Ellipse => (p / a).powi(2) + (q / b).powi(2) <= 1.0,
            };
            if inside {
                px.push((x, y));
            }
        }
    }
    px
}

fn normal(mean: f64, std: f64) -> Normal<f64> {
    Normal::new(mean, std).expect("validated std")
}

fn generate_one(spec: &SynthSpec, index: usize) -> Result<SynthRecord> {
    let (w, h) = (spec.image_w, spec.image_h);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);

    let matrix_level = normal(spec.matrix_mean, spec.matrix_std).sample(&mut rng);
    let n_blobs = rng.random_range(spec.blobs_per_image.0..=spec.blobs_per_image.1);
    let mut label = vec![0u32; w * h];
    // Cells taken by a blob or its one-pixel ring, so blobs never touch.
    let mut blocked = vec![false; w * h];
    let mut feats = Vec::with_capacity(n_blobs);
    let mut attempts = 0;

    while feats.len() < n_blobs {
        attempts += 1;
        if attempts > spec.max_attempts {
            return Err(Error::Placement {
                image: index,
                attempts: spec.max_attempts,
            });
        }
        let kind = spec.kinds[rng.random_range(0..spec.kinds.len())];
        let long = rng.random_range(spec.long_axis.0..=spec.long_axis.1);
        let aspect = rng.random_range(spec.aspect.0..=spec.aspect.1);
        let angle = spec.orientation.sample(&mut rng);
        let cx = rng.random_range(0.0..w as f64);
        let cy = rng.random_range(0.0..h as f64);
        let short = long / aspect;
        let px = render(kind, cx, cy, long, short, angle, w, h);
        if px.len() < NOISE_MIN_AREA {
            continue;
        }
        let clear = px
            .iter()
            .all(|&(x, y)| x > 0 && y > 0 && x < w - 1 && y < h - 1 && !blocked[y * w + x]);
        if !clear {
            continue;
        }
        let id = feats.len() as u32 + 1;
        for &(x, y) in &px {
            label[y * w + x] = id;
            for ny in y - 1..=y + 1 {
                for nx in x - 1..=x + 1 {
                    blocked[ny * w + nx] = true;
                }
            }
        }
        feats.push(TruthFeature {
            kind,
            center_x: cx,
            center_y: cy,
            long_axis: long,
            short_axis: short,
            angle_deg: angle,
            aspect,
            area_px: px.len(),
        });
    }

    let levels: Vec<f64> = (0..feats.len())
        .map(|_| normal(spec.carbide_mean, spec.carbide_std).sample(&mut rng))
        .collect();
    let noise = normal(0.0, spec.noise_std);
    let mut pixels = Vec::with_capacity(w * h);
    for &l in &label {
        let base = if l == 0 { matrix_level } else { levels[l as usize - 1] };
        let n = if spec.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        pixels.push(round_intensity(base + n));
    }
    Ok(SynthRecord {
        image: GrayImage::new(w, h, pixels)?,
        truth_mask: BinaryMask::new(w, h, label.iter().map(|&l| u8::from(l != 0)).collect())?,
        truth_features: feats,
    })
}

/// Renders every image of `spec`. Image `i` draws from its own generator
/// stream, so any image can be reproduced in isolation.
pub fn generate(spec: &SynthSpec) -> Result<Vec<SynthRecord>> {
    spec.validate()?;
    (0..spec.n_images).map(|i| generate_one(spec, i)).collect()
}

/// Expected share of the fullest 10° orientation bin under `law`, by
/// Simpson integration of the wrapped density over each bin.
pub fn concentration_expectation(law: &OrientationLaw) -> f64 {
    let (mean, sigma) = match *law {
        OrientationLaw::Uniform => return 1.0 / ORIENTATION_BINS as f64,
        OrientationLaw::Concentrated { mean_deg, sigma_deg } => (mean_deg, sigma_deg),
    };
    if sigma == 0.0 {
        return 1.0;
    }
    let wraps = (8.0 * sigma / 180.0).ceil() as i64 + 1;
    let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let density = |theta: f64| -> f64 {
        (-wraps..=wraps)
            .map(|k| {
                let z = (theta - mean + 180.0 * k as f64) / sigma;
                (-0.5 * z * z).exp()
            })
            .sum::<f64>()
            * norm
    };
    // Simpson panels per bin; enough to resolve sigma down to a few tenths
    // of a degree.
    let panels = 2 * (50.0 * BIN_WIDTH_DEG / sigma).clamp(50.0, 5000.0).ceil() as usize;
    let step = BIN_WIDTH_DEG / panels as f64;
    (0..ORIENTATION_BINS)
        .map(|b| {
            let a = -90.0 + BIN_WIDTH_DEG * b as f64;
            let mut s = density(a) + density(a + BIN_WIDTH_DEG);
            for i in 1..panels {
                let wgt = if i % 2 == 1 { 4.0 } else { 2.0 };
                s += wgt * density(a + step * i as f64);
            }
            s * step / 3.0
        })
        .fold(0.0, f64::max)
}

/// Threshold in `set` whose curation mask best matches `truth` by IoU;
/// the smallest such threshold on ties.
pub fn best_threshold(image: &GrayImage, truth: &BinaryMask, set: &ThresholdSet) -> Result<(u8, f64)> {
    let mut best = (set.values()[0], f64::NEG_INFINITY);
    for &t in set.values() {
        let j = iou(&confusion(&curated_mask(image, t), truth)?);
        if j > best.1 {
            best = (t, j);
        }
    }
    Ok(best)
}

pub fn truth_features_csv(ids: &[String], records: &[SynthRecord]) -> String {
    let mut s = String::from("image_id,blob,kind,center_x,center_y,long_axis,short_axis,angle_deg,aspect,area_px\n");
    for (id, r) in ids.iter().zip(records) {
        for (i, f) in r.truth_features.iter().enumerate() {
            let kind = match f.kind {
                BlobKind::Rect => "rect",
                BlobKind::Ellipse => "ellipse",
            };
            let _ = writeln!(
                s,
                "{id},{},{kind},{},{},{},{},{},{},{}",
                i + 1,
                format_sig6(f.center_x),
                format_sig6(f.center_y),
                format_sig6(f.long_axis),
                format_sig6(f.short_axis),
                format_sig6(f.angle_deg),
                format_sig6(f.aspect),
                f.area_px
            );
        }
    }
    s
}

/// Writes images, truth masks, `truth_features.csv` and `manifest.json`
/// under `out_dir`. Masks are the exact truth; each entry's recorded
/// threshold is the set member whose curation mask matches truth best.
/// Class labels alternate LB, TM, ... and curated entries are split with
/// `ratios` using `spec.seed`.
pub fn write_dataset(spec: &SynthSpec, out_dir: &Path, ratios: SplitRatios) -> Result<Manifest> {
    let records = generate(spec)?;
    let ids: Vec<String> = (0..records.len()).map(|i| format!("syn{i:04}")).collect();
    let mut manifest = Manifest::default();
    for (i, (id, r)) in ids.iter().zip(&records).enumerate() {
        let image_rel = format!("images/{id}.pgm");
        let mask_rel = format!("masks/{id}.pgm");
        r.image.save(&out_dir.join(&image_rel))?;
        r.truth_mask.save(&out_dir.join(&mask_rel))?;
        let label = if i % 2 == 0 { ClassLabel::LB } else { ClassLabel::TM };
        let mut e = ManifestEntry::new(id.clone(), image_rel, label, 10000);
        let (t, _) = best_threshold(&r.image, &r.truth_mask, &manifest.default_threshold_set)?;
        e.chosen_threshold = Some(t);
        e.mask_path = Some(mask_rel);
        manifest.entries.push(e);
    }
    if manifest.entries.len() >= 3 {
        manifest = manifest.split(ratios, spec.seed)?;
    }
    fsutil::write_atomic(&out_dir.join("truth_features.csv"), truth_features_csv(&ids, &records).as_bytes())?;
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::threshold_mask;
    use crate::morphology::{connected_components, Connectivity};

    fn small(n: usize) -> SynthSpec {
        SynthSpec {
            n_images: n,
            seed: 17,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn zero_blobs_give_empty_masks() {
        let spec = SynthSpec { blobs_per_image: (0, 0), ..small(3) };
        for r in generate(&spec).unwrap() {
            assert_eq!(r.truth_mask.carbide_count(), 0);
            assert!(r.truth_features.is_empty());
        }
    }

    #[test]
    fn separated_laws_threshold_exactly() {
        let spec = SynthSpec {
            carbide_mean: 200.0,
            carbide_std: 0.0,
            matrix_mean: 60.0,
            matrix_std: 0.0,
            noise_std: 0.0,
            ..small(5)
        };
        for r in generate(&spec).unwrap() {
            assert_eq!(threshold_mask(&r.image, 130), r.truth_mask);
            let (_, j) = best_threshold(&r.image, &r.truth_mask, &ThresholdSet::default()).unwrap();
            assert_eq!(j, 1.0);
        }
    }

    #[test]
    fn generation_is_deterministic_per_image() {
        let a = generate(&small(4)).unwrap();
        assert_eq!(a, generate(&small(4)).unwrap());
        // Image 2 does not depend on how many images precede or follow it.
        let b = generate(&small(3)).unwrap();
        assert_eq!(a[2], b[2]);
        let c = generate(&SynthSpec { seed: 18, ..small(4) }).unwrap();
        assert_ne!(a[0], c[0]);
    }

    #[test]
    fn blobs_are_separate_and_areas_match() {
        for r in generate(&small(10)).unwrap() {
            let comps = connected_components(&r.truth_mask, Connectivity::Eight);
            assert_eq!(comps.len(), r.truth_features.len());
            let mut got: Vec<usize> = comps.iter().map(|c| c.area_px()).collect();
            let mut want: Vec<usize> = r.truth_features.iter().map(|f| f.area_px).collect();
            got.sort_unstable();
            want.sort_unstable();
            assert_eq!(got, want);
            assert!(want.iter().all(|&a| a >= NOISE_MIN_AREA));
            let (w, h) = (r.truth_mask.width(), r.truth_mask.height());
            for x in 0..w {
                assert!(!r.truth_mask.get(x, 0) && !r.truth_mask.get(x, h - 1));
            }
            for y in 0..h {
                assert!(!r.truth_mask.get(0, y) && !r.truth_mask.get(w - 1, y));
            }
        }
    }

    #[test]
    fn crowded_spec_reports_placement_failure() {
        let spec = SynthSpec {
            blobs_per_image: (40, 40),
            long_axis: (30.0, 30.0),
            max_attempts: 200,
            ..small(1)
        };
        assert!(matches!(generate(&spec), Err(Error::Placement { .. })));
    }

    #[test]
    fn expectation_limits() {
        assert_eq!(concentration_expectation(&OrientationLaw::Uniform), 1.0 / 18.0);
        let delta = OrientationLaw::Concentrated { mean_deg: 37.0, sigma_deg: 0.0 };
        assert_eq!(concentration_expectation(&delta), 1.0);
        // Very wide laws approach the uniform value.
        let wide = OrientationLaw::Concentrated { mean_deg: 0.0, sigma_deg: 400.0 };
        assert!((concentration_expectation(&wide) - 1.0 / 18.0).abs() < 1e-6);
        // Centred in a bin with sigma 5: mass of |Z| < 1.
        let centred = OrientationLaw::Concentrated { mean_deg: 35.0, sigma_deg: 5.0 };
        assert!((concentration_expectation(&centred) - 0.682689492).abs() < 1e-6);
    }

    #[test]
    fn expectation_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for law in [
            OrientationLaw::Concentrated { mean_deg: 35.0, sigma_deg: 6.0 },
            OrientationLaw::Concentrated { mean_deg: -88.0, sigma_deg: 9.0 },
            OrientationLaw::Concentrated { mean_deg: 12.5, sigma_deg: 25.0 },
        ] {
            let mut counts = [0u64; ORIENTATION_BINS];
            let draws = 1_000_000;
            for _ in 0..draws {
                let a = law.sample(&mut rng);
                counts[crate::analytics::orientation_bin(a).unwrap()] += 1;
            }
            let mc = *counts.iter().max().unwrap() as f64 / draws as f64;
            let exact = concentration_expectation(&law);
            assert!((mc - exact).abs() < 0.01, "{law:?}: {mc} vs {exact}");
        }
    }

    #[test]
    fn dataset_files_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_dataset(&small(10), dir.path(), SplitRatios::default()).unwrap();
        assert_eq!(m.curated_count(), 10);
        let counts = m.split_counts();
        assert_eq!((counts["train"], counts["val"], counts["test"]), (8, 1, 1));
        assert_eq!(Manifest::load(&dir.path().join("manifest.json")).unwrap(), m);
        let csv = std::fs::read_to_string(dir.path().join("truth_features.csv")).unwrap();
        assert!(csv.starts_with("image_id,blob,kind,"));
        let e = &m.entries[1];
        assert_eq!(e.class_label, ClassLabel::TM);
        let mask = BinaryMask::load(&dir.path().join(e.mask_path.as_ref().unwrap())).unwrap();
        assert_eq!(mask, generate(&small(10)).unwrap()[1].truth_mask);
    }
}
