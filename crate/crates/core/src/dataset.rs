//! The dataset ledger: images, class labels, curated thresholds and splits.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::imageio::{resize, GrayImage, ResizeMode};
use crate::masking::{curated_mask, BinaryMask, ThresholdSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassLabel {
    /// Lower bainite.
    LB,
    /// Tempered martensite.
    TM,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 2] = [ClassLabel::LB, ClassLabel::TM];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::LB => "LB",
            ClassLabel::TM => "TM",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ClassLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "LB" => Ok(ClassLabel::LB),
            "TM" => Ok(ClassLabel::TM),
            other => Err(Error::Invalid(format!("class label must be LB or TM, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            other => Err(Error::Invalid(format!("unknown split `{other}`"))),
        }
    }
}

/// `chosen_threshold` is stored as an integer, or the string "uncurated".
mod chosen {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<u8>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(t) => s.serialize_u8(*t),
            None => s.serialize_str("uncurated"),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Int(u8),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<u8>, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Int(t) => Ok(Some(t)),
            Raw::Str(s) if s == "uncurated" => Ok(None),
            Raw::Str(s) => Err(de::Error::custom(format!(
                "chosen_threshold must be an intensity or \"uncurated\", got \"{s}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the manifest's directory unless absolute.
    pub image_path: String,
    pub class_label: ClassLabel,
    pub magnification: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nm_per_px: Option<f64>,
    #[serde(with = "chosen")]
    pub chosen_threshold: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
    pub split: Split,
    /// Tile-grid file this image belongs to, for stitching.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<String>,
}

impl ManifestEntry {
    pub fn new(id: impl Into<String>, image_path: impl Into<String>, class_label: ClassLabel, magnification: u32) -> Self {
        Self {
            id: id.into(),
            image_path: image_path.into(),
            class_label,
            magnification,
            nm_per_px: None,
            chosen_threshold: None,
            mask_path: None,
            split: Split::Unassigned,
            grid: None,
        }
    }

    pub fn is_curated(&self) -> bool {
        self.chosen_threshold.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// Revision counter, bumped on every mutation.
    pub version: u64,
    pub default_threshold_set: ThresholdSet,
    pub entries: Vec<ManifestEntry>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            version: 1,
            default_threshold_set: ThresholdSet::default(),
            entries: Vec::new(),
        }
    }
}

/// Fractions of curated entries per split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Invalid(format!("split ratios must be non-negative: {parts:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!("split ratios must sum to 1: {parts:?}")));
        }
        Ok(())
    }
}

/// A network training pair at model input size.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub id: String,
    pub image: GrayImage,
    pub mask: BinaryMask,
}

/// Resolves a manifest-relative path.
pub fn resolve(root: &Path, rel: &str) -> PathBuf {
    root.join(rel)
}

/// Directory that manifest paths are relative to.
pub fn manifest_root(manifest_path: &Path) -> PathBuf {
    match manifest_path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if e.id.is_empty() {
                return Err(Error::Manifest("entry with empty id".into()));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate entry id `{}`", e.id)));
            }
            if e.magnification == 0 {
                return Err(Error::Manifest(format!("entry `{}`: magnification must be positive", e.id)));
            }
            if let Some(s) = e.nm_per_px {
                if !(s > 0.0 && s.is_finite()) {
                    return Err(Error::Manifest(format!("entry `{}`: nm_per_px must be positive", e.id)));
                }
            }
            match (e.chosen_threshold, &e.mask_path) {
                (Some(t), Some(_)) if !self.default_threshold_set.contains(t) => {
                    return Err(Error::Manifest(format!(
                        "entry `{}`: chosen threshold {t} is not in the threshold set",
                        e.id
                    )));
                }
                (Some(_), None) => {
                    return Err(Error::Manifest(format!("entry `{}` is curated but has no mask_path", e.id)));
                }
                (None, Some(_)) => {
                    return Err(Error::Manifest(format!("entry `{}` has a mask_path but is uncurated", e.id)));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn from_json(bytes: &[u8], context: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_slice(bytes).map_err(|e| Error::json(context, e))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::json("manifest", e))?;
        s.push('\n');
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fsutil::read(path)?, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        fsutil::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn entry(&self, id: &str) -> Result<&ManifestEntry> {
        self.entries
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    }

    pub fn curated_count(&self) -> usize {
        self.entries.iter().filter(|e| e.is_curated()).count()
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Stores the curator's threshold for `id` and regenerates its mask from
    /// the image. Re-curating overwrites the previous choice and mask.
    pub fn record_curation(&mut self, root: &Path, id: &str, threshold: u8) -> Result<()> {
        if !self.default_threshold_set.contains(threshold) {
            return Err(Error::ThresholdNotInSet(threshold));
        }
        let idx = self
            .entries
            .iter()
            .position(|e| e.id == id)
            .ok_or_else(|| Error::UnknownId(id.to_string()))?;
        let entry = &self.entries[idx];
        let img = GrayImage::load(&resolve(root, &entry.image_path))?;
        let mask_rel = entry
            .mask_path
            .clone()
            .unwrap_or_else(|| format!("masks/{id}.pgm"));
        curated_mask(&img, threshold).save(&resolve(root, &mask_rel))?;
        let entry = &mut self.entries[idx];
        entry.chosen_threshold = Some(threshold);
        entry.mask_path = Some(mask_rel);
        self.version += 1;
        Ok(())
    }

    /// Shuffles the curated entries (in manifest order) with `seed` and
    /// assigns `floor(n·val)` to val, `floor(n·test)` to test and the rest to
    /// train. Uncurated entries become unassigned.
    pub fn split(&self, ratios: SplitRatios, seed: u64) -> Result<Manifest> {
        ratios.validate()?;
        let mut curated: Vec<usize> = (0..self.entries.len())
            .filter(|&i| self.entries[i].is_curated())
            .collect();
        if curated.len() < 3 {
            return Err(Error::Manifest(format!(
                "splitting needs at least 3 curated entries, found {}",
                curated.len()
            )));
        }
        let n = curated.len() as f64;
        // Guards against products like 0.29·100 landing just below an integer.
        let n_val = (n * ratios.val + 1e-9).floor() as usize;
        let n_test = (n * ratios.test + 1e-9).floor() as usize;
        curated.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

        let mut out = self.clone();
        for e in &mut out.entries {
            e.split = Split::Unassigned;
        }
        for (k, &i) in curated.iter().enumerate() {
            out.entries[i].split = if k < n_val {
                Split::Val
            } else if k < n_val + n_test {
                Split::Test
            } else {
                Split::Train
            };
        }
        let changed = out.entries.iter().zip(&self.entries).any(|(a, b)| a.split != b.split);
        if changed {
            out.version += 1;
        }
        Ok(out)
    }

    pub fn split_counts(&self) -> BTreeMap<&'static str, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.split.as_str()).or_insert(0) += 1;
        }
        counts
    }

    /// Loads one curated entry's image and mask at their stored size.
    pub fn load_entry(&self, root: &Path, e: &ManifestEntry) -> Result<(GrayImage, BinaryMask)> {
        let mask_rel = match (&e.chosen_threshold, &e.mask_path) {
            (Some(_), Some(p)) => p,
            _ => {
                return Err(Error::Manifest(format!(
                    "entry `{}` is in split {} but has no curated mask",
                    e.id, e.split
                )))
            }
        };
        let img = GrayImage::load(&resolve(root, &e.image_path))?;
        let mask = BinaryMask::load(&resolve(root, mask_rel))?;
        if img.width() != mask.width() || img.height() != mask.height() {
            return Err(Error::Dimension(format!(
                "entry `{}`: image is {}x{}, mask is {}x{}",
                e.id,
                img.width(),
                img.height(),
                mask.width(),
                mask.height()
            )));
        }
        Ok((img, mask))
    }

    /// Training pairs of one split in manifest order, with images resized
    /// bilinearly and masks by nearest neighbour to `input_w x input_h`.
    pub fn load_pairs(&self, root: &Path, split: Split, input_w: usize, input_h: usize) -> Result<Vec<SamplePair>> {
        self.in_split(split)
            .map(|e| {
                let (img, mask) = self.load_entry(root, e)?;
                Ok(SamplePair {
                    id: e.id.clone(),
                    image: resize(&img, input_w, input_h, ResizeMode::Bilinear)?,
                    mask: resize(&mask, input_w, input_h, ResizeMode::Nearest)?,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::{denoise, threshold_mask, NOISE_MIN_AREA};
    use crate::morphology::Connectivity;

    fn curated_entry(i: usize) -> ManifestEntry {
        let mut e = ManifestEntry::new(format!("img{i:02}"), format!("images/img{i:02}.pgm"), ClassLabel::LB, 5000);
        e.chosen_threshold = Some(150);
        e.mask_path = Some(format!("masks/img{i:02}.pgm"));
        e
    }

    fn manifest_of(n: usize) -> Manifest {
        Manifest {
            entries: (0..n).map(curated_entry).collect(),
            ..Manifest::default()
        }
    }

    fn tags(m: &Manifest) -> Vec<Split> {
        m.entries.iter().map(|e| e.split).collect()
    }

    #[test]
    fn split_eighty_ten_ten() {
        let m = manifest_of(10);
        let a = m.split(SplitRatios::default(), 7).unwrap();
        let counts = a.split_counts();
        assert_eq!((counts["train"], counts["val"], counts["test"]), (8, 1, 1));
        assert_eq!(tags(&a), tags(&m.split(SplitRatios::default(), 7).unwrap()));
        // Idempotent: splitting the result again changes nothing.
        assert_eq!(a.split(SplitRatios::default(), 7).unwrap(), a);
    }

    #[test]
    fn all_train_is_valid() {
        let r = SplitRatios { train: 1.0, val: 0.0, test: 0.0 };
        let a = manifest_of(5).split(r, 1).unwrap();
        assert!(a.entries.iter().all(|e| e.split == Split::Train));
    }

    #[test]
    fn seeds_change_membership_not_counts() {
        let m = manifest_of(40);
        let a = m.split(SplitRatios::default(), 1).unwrap();
        let b = m.split(SplitRatios::default(), 2).unwrap();
        assert_eq!(a.split_counts(), b.split_counts());
        assert_ne!(tags(&a), tags(&b));
    }

    #[test]
    fn split_rules() {
        assert!(manifest_of(2).split(SplitRatios::default(), 0).is_err());
        let bad = SplitRatios { train: 0.5, val: 0.1, test: 0.1 };
        assert!(manifest_of(5).split(bad, 0).is_err());
        let neg = SplitRatios { train: 1.2, val: -0.1, test: -0.1 };
        assert!(manifest_of(5).split(neg, 0).is_err());

        let mut m = manifest_of(6);
        m.entries[2].chosen_threshold = None;
        m.entries[2].mask_path = None;
        m.entries[2].split = Split::Train;
        let s = m.split(SplitRatios::default(), 3).unwrap();
        assert_eq!(s.entries[2].split, Split::Unassigned);
        assert!(s.entries.iter().filter(|e| e.is_curated()).all(|e| e.split != Split::Unassigned));
    }

    #[test]
    fn json_round_trip_and_schema() {
        let mut m = manifest_of(2);
        m.entries[1].chosen_threshold = None;
        m.entries[1].mask_path = None;
        m.entries[0].nm_per_px = Some(2.5);
        let text = m.to_json().unwrap();
        assert!(text.contains("\"uncurated\""));
        assert_eq!(Manifest::from_json(text.as_bytes(), "t").unwrap(), m);
        let order: Vec<usize> = ["\"version\"", "\"default_threshold_set\"", "\"entries\""]
            .iter()
            .map(|k| text.find(k).unwrap())
            .collect();
        assert!(order.windows(2).all(|w| w[0] < w[1]));

        let extra = text.replacen("\"version\"", "\"bogus\": 1, \"version\"", 1);
        assert!(Manifest::from_json(extra.as_bytes(), "t").is_err());
        let dup = Manifest {
            entries: vec![curated_entry(1), curated_entry(1)],
            ..Manifest::default()
        };
        assert!(Manifest::from_json(dup.to_json().unwrap().as_bytes(), "t").is_err());
        let mut off_set = manifest_of(1);
        off_set.entries[0].chosen_threshold = Some(97);
        assert!(off_set.validate().is_err());
    }

    fn write_fixture(dir: &Path) -> Manifest {
        let img = GrayImage::new(
            12,
            10,
            (0..120).map(|i| if (i % 12) < 7 && (i / 12) < 6 { 200 } else { (i % 50) as u8 }).collect(),
        )
        .unwrap();
        img.save(&dir.join("images/a1.pgm")).unwrap();
        let mut m = Manifest::default();
        m.entries.push(ManifestEntry::new("a1", "images/a1.pgm", ClassLabel::TM, 10000));
        m
    }

    #[test]
    fn curation_writes_denoised_mask() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = write_fixture(dir.path());
        assert!(matches!(
            m.record_curation(dir.path(), "a1", 97),
            Err(Error::ThresholdNotInSet(97))
        ));
        assert!(matches!(m.record_curation(dir.path(), "zz", 150), Err(Error::UnknownId(_))));
        assert_eq!(m.version, 1);

        m.record_curation(dir.path(), "a1", 150).unwrap();
        assert_eq!(m.version, 2);
        let e = m.entry("a1").unwrap();
        assert_eq!(e.chosen_threshold, Some(150));
        assert_eq!(e.mask_path.as_deref(), Some("masks/a1.pgm"));
        let img = GrayImage::load(&dir.path().join("images/a1.pgm")).unwrap();
        let stored = BinaryMask::load(&dir.path().join("masks/a1.pgm")).unwrap();
        let expect = denoise(&threshold_mask(&img, 150), NOISE_MIN_AREA, Connectivity::Eight);
        assert_eq!(stored, expect);
        assert_eq!(stored.carbide_count(), 42);

        m.record_curation(dir.path(), "a1", 220).unwrap();
        assert_eq!(m.version, 3);
        assert_eq!(m.curated_count(), 1);
        assert_eq!(BinaryMask::load(&dir.path().join("masks/a1.pgm")).unwrap().carbide_count(), 0);
    }

    #[test]
    fn pairs_follow_manifest_order_and_stay_binary() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = write_fixture(dir.path());
        m.record_curation(dir.path(), "a1", 150).unwrap();
        m.entries[0].split = Split::Test;
        let same = m.load_pairs(dir.path(), Split::Test, 12, 10).unwrap();
        assert_eq!(same.len(), 1);
        assert_eq!(same[0].image, GrayImage::load(&dir.path().join("images/a1.pgm")).unwrap());
        let small = m.load_pairs(dir.path(), Split::Test, 8, 4).unwrap();
        assert_eq!((small[0].mask.width(), small[0].mask.height()), (8, 4));
        assert!(small[0].mask.data().iter().all(|&v| v <= 1));
        assert!(m.load_pairs(dir.path(), Split::Train, 8, 4).unwrap().is_empty());

        m.entries.push(ManifestEntry::new("b2", "images/a1.pgm", ClassLabel::LB, 5000));
        m.entries[1].split = Split::Test;
        let err = m.load_pairs(dir.path(), Split::Test, 12, 10).unwrap_err();
        assert!(err.to_string().contains("b2"));
    }
}
