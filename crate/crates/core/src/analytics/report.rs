use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use super::{aggregate_class, ClassSummary, ImageAnalysis, MeanStd, OrientationHistogram};
use crate::dataset::ClassLabel;
use crate::error::{Error, Result};
use crate::fsutil;

/// Six significant digits in the style of C's `%g`: fixed notation for
/// decimal exponents in [-4, 6), scientific otherwise, trailing zeros dropped.
pub fn format_sig6(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn rounded(v: f64) -> Value {
    json!(format_sig6(v).parse::<f64>().expect("formatted number parses"))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(format_sig6).unwrap_or_default()
}

/// Paths of every file written by [`emit_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub image_stats: PathBuf,
    pub features: PathBuf,
    pub summary: PathBuf,
    pub orientation_histogram: PathBuf,
    pub size_histogram: PathBuf,
}

fn mean_std_json(m: Option<MeanStd>) -> Value {
    match m {
        Some(m) => json!({ "mean": rounded(m.mean), "std": rounded(m.std) }),
        None => Value::Null,
    }
}

fn summary_json(summaries: &[(ClassLabel, Option<ClassSummary>)]) -> Value {
    let mut root = Map::new();
    for (label, s) in summaries {
        let entry = match s {
            Some(s) => json!({
                "fraction": mean_std_json(Some(s.fraction)),
                "k": mean_std_json(s.k),
                "aspect": mean_std_json(s.aspect),
                "n_images": s.n_images,
                "n_carbides": s.n_carbides,
            }),
            None => json!({
                "fraction": Value::Null,
                "k": Value::Null,
                "aspect": Value::Null,
                "n_images": 0,
                "n_carbides": 0,
            }),
        };
        root.insert(label.as_str().to_string(), entry);
    }
    Value::Object(root)
}

/// Writes per-image statistics, per-carbide features, class summaries and
/// the orientation and size histograms into `out_dir`. Output depends only
/// on the inputs, so unchanged inputs give byte-identical files.
pub fn emit_report(out_dir: &Path, images: &[ImageAnalysis], size_bin_width: f64) -> Result<ReportFiles> {
    let files = ReportFiles {
        image_stats: out_dir.join("image_stats.csv"),
        features: out_dir.join("features.csv"),
        summary: out_dir.join("summary.json"),
        orientation_histogram: out_dir.join("orientation_histogram.csv"),
        size_histogram: out_dir.join("size_histogram.csv"),
    };

    let mut stats = String::from("image_id,class_label,carbide_fraction,n_carbides,alignment_k,mean_aspect\n");
    let mut feats = String::from(
        "image_id,component_label,area_px,area_nm2,angle_deg,aspect_ratio,center_x,center_y,long_edge,short_edge\n",
    );
    for a in images {
        let s = &a.stats;
        let _ = writeln!(
            stats,
            "{},{},{},{},{},{}",
            csv_field(&s.image_id),
            s.class_label,
            format_sig6(s.carbide_fraction),
            s.n_carbides,
            opt(s.alignment_k),
            opt(s.mean_aspect)
        );
        for f in &a.features {
            let _ = writeln!(
                feats,
                "{},{},{},{},{},{},{},{},{},{}",
                csv_field(&s.image_id),
                f.label,
                f.area_px,
                opt(f.area_nm2),
                format_sig6(f.angle_deg),
                format_sig6(f.aspect_ratio),
                format_sig6(f.rect.center.x),
                format_sig6(f.rect.center.y),
                format_sig6(f.rect.long_edge),
                format_sig6(f.rect.short_edge)
            );
        }
    }

    let mut summaries = Vec::new();
    for label in ClassLabel::ALL {
        let present = images.iter().any(|a| a.stats.class_label == label);
        let s = if present {
            Some(aggregate_class(images, label, size_bin_width)?)
        } else {
            None
        };
        summaries.push((label, s));
    }

    let mut orient = String::from("class_label,bin_start,bin_end,count\n");
    let mut sizes = String::from("class_label,unit,bin_start,bin_end,count\n");
    let edges = OrientationHistogram::bin_edges();
    for (label, s) in &summaries {
        let Some(s) = s else { continue };
        for (i, c) in s.orientation.counts.iter().enumerate() {
            let _ = writeln!(orient, "{label},{},{},{c}", edges[i], edges[i + 1]);
        }
        for (i, c) in s.sizes.counts.iter().enumerate() {
            let w = s.sizes.bin_width;
            let _ = writeln!(
                sizes,
                "{label},{},{},{},{c}",
                s.sizes.unit.as_str(),
                format_sig6(i as f64 * w),
                format_sig6((i + 1) as f64 * w)
            );
        }
    }

    let mut summary =
        serde_json::to_string_pretty(&summary_json(&summaries)).map_err(|e| Error::json("summary", e))?;
    summary.push('\n');

    fsutil::write_atomic(&files.image_stats, stats.as_bytes())?;
    fsutil::write_atomic(&files.features, feats.as_bytes())?;
    fsutil::write_atomic(&files.summary, summary.as_bytes())?;
    fsutil::write_atomic(&files.orientation_histogram, orient.as_bytes())?;
    fsutil::write_atomic(&files.size_histogram, sizes.as_bytes())?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::analyze_image;
    use crate::masking::BinaryMask;

    #[test]
    fn sig6_formatting() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (0.5, "0.5"),
            (1.0 / 3.0, "0.333333"),
            (2.0 / 3.0, "0.666667"),
            (123456.0, "123456"),
            (1234567.0, "1.23457e+06"),
            (0.0001234567, "0.000123457"),
            (0.00001234567, "1.23457e-05"),
            (-45.0, "-45"),
            (999999.5, "1e+06"),
            (1.0 / 18.0, "0.0555556"),
        ];
        for (v, s) in cases {
            assert_eq!(format_sig6(v), s, "{v}");
        }
    }

    #[test]
    fn csv_quoting() {
        assert_eq!(csv_field("plain"), "plain");
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("q\"x"), "\"q\"\"x\"");
    }

    #[test]
    fn empty_dataset_gives_headers_and_null_summary() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(dir.path(), &[], 10.0).unwrap();
        for p in [&files.image_stats, &files.features, &files.orientation_histogram, &files.size_histogram] {
            assert_eq!(std::fs::read_to_string(p).unwrap().lines().count(), 1);
        }
        let v: Value = serde_json::from_slice(&std::fs::read(&files.summary).unwrap()).unwrap();
        assert_eq!(v["LB"]["n_images"], 0);
        assert!(v["TM"]["fraction"].is_null());
    }

    #[test]
    fn rerun_is_byte_identical() {
        let m = BinaryMask::from_fn(40, 30, |x, y| (x / 8 + y / 8) % 3 == 0 && x % 8 < 6 && y % 8 < 6).unwrap();
        let a = analyze_image("one", ClassLabel::LB, &m, Some(1.5)).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let f1 = emit_report(d1.path(), &[a.clone()], 25.0).unwrap();
        let f2 = emit_report(d2.path(), &[a], 25.0).unwrap();
        for (p, q) in [(&f1.features, &f2.features), (&f1.summary, &f2.summary), (&f1.size_histogram, &f2.size_histogram)] {
            assert_eq!(std::fs::read(p).unwrap(), std::fs::read(q).unwrap());
        }
        let orient = std::fs::read_to_string(&f1.orientation_histogram).unwrap();
        assert_eq!(orient.lines().count(), 19);
        assert!(orient.contains("LB,-90,-80,"));
    }
}
