//! CSV writers for reports, curves, features, and PCA projections —
//! plotting happens elsewhere; these emit the data files.

use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::metrics::{CurveSet, EvalReport};

fn create(path: &Path) -> Result<std::fs::File> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(std::fs::File::create(path)?)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.4}"))
}

/// Per-class score rows plus macro and overall lines.
pub fn write_report_csv(path: &Path, report: &EvalReport, class_names: &[&str]) -> Result<()> {
    let mut f = create(path)?;
    writeln!(f, "class,accuracy,sensitivity,precision,f1,sen_ci_lo,sen_ci_hi")?;
    for (i, c) in report.scores.per_class.iter().enumerate() {
        let name = class_names.get(i).copied().unwrap_or("?");
        let (lo, hi) = c
            .sensitivity_ci95
            .map_or((String::new(), String::new()), |(l, h)| {
                (format!("{l:.4}"), format!("{h:.4}"))
            });
        writeln!(
            f,
            "{name},{:.4},{},{},{},{lo},{hi}",
            c.accuracy,
            fmt_opt(c.sensitivity),
            fmt_opt(c.precision),
            fmt_opt(c.f1),
        )?;
    }
    writeln!(
        f,
        "macro,{:.4},{},{},{},,",
        report.scores.macro_accuracy,
        fmt_opt(report.scores.macro_sensitivity),
        fmt_opt(report.scores.macro_precision),
        fmt_opt(report.scores.macro_f1),
    )?;
    writeln!(f, "overall,{:.4},,,,,", report.scores.overall_accuracy)?;
    Ok(())
}

/// Long-format curve export: curve kind, class, x, y.
pub fn write_curves_csv(path: &Path, curves: &CurveSet, class_names: &[&str]) -> Result<()> {
    let mut f = create(path)?;
    writeln!(f, "curve,class,x,y")?;
    for (i, roc) in curves.roc.iter().enumerate() {
        if let Some(r) = roc {
            let name = class_names.get(i).copied().unwrap_or("?");
            for (x, y) in &r.points {
                writeln!(f, "roc,{name},{x},{y}")?;
            }
        }
    }
    for (i, pr) in curves.pr.iter().enumerate() {
        if let Some(p) = pr {
            let name = class_names.get(i).copied().unwrap_or("?");
            for (x, y) in &p.points {
                writeln!(f, "pr,{name},{x},{y}")?;
            }
        }
    }
    Ok(())
}

/// One row per sample: label then the feature vector.
pub fn write_features_csv(path: &Path, features: &[Vec<f64>], labels: &[usize]) -> Result<()> {
    let mut f = create(path)?;
    let dims = features.first().map_or(0, |r| r.len());
    let header: Vec<String> = (0..dims).map(|i| format!("f{i}")).collect();
    writeln!(f, "label,{}", header.join(","))?;
    for (row, &label) in features.iter().zip(labels.iter()) {
        let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(f, "{label},{}", vals.join(","))?;
    }
    Ok(())
}

/// One row per sample: k projected coordinates then the label.
pub fn write_pca_csv(path: &Path, projections: &[Vec<f64>], labels: &[usize]) -> Result<()> {
    let mut f = create(path)?;
    let k = projections.first().map_or(0, |r| r.len());
    let header: Vec<String> = (0..k).map(|i| format!("pc{}", i + 1)).collect();
    writeln!(f, "{},label", header.join(","))?;
    for (row, &label) in projections.iter().zip(labels.iter()) {
        let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(f, "{},{label}", vals.join(","))?;
    }
    Ok(())
}
