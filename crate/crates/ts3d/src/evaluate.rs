//! Metric reports over prediction and ground-truth label sets.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use ts3d_core::eval::{evaluate_class, Difficulty, IouMode};
use ts3d_core::label::ObjectLabel;

use crate::error::{Error, Result};
use crate::kitti::read_labels;

/// `(class, IoU threshold)` pairs reported in both BEV and 3D. Cars are
/// also reported at 0.5, the threshold that desk-scale runs are judged on.
pub const REPORTED: [(&str, f64); 3] = [("Car", 0.7), ("Car", 0.5), ("Pedestrian", 0.5)];

/// Frames of `(predictions, ground truth)`.
pub type FramePairs = Vec<(Vec<ObjectLabel>, Vec<ObjectLabel>)>;

/// Named metrics in report order; AP values are percentages over a single
/// difficulty bucket holding every labelled object.
pub fn evaluate(pairs: &[(Vec<ObjectLabel>, Vec<ObjectLabel>)]) -> Result<Vec<(String, f64)>> {
    let mut out = vec![("frames".to_string(), pairs.len() as f64)];
    for class in ["Car", "Pedestrian"] {
        let count = |f: fn(&(Vec<ObjectLabel>, Vec<ObjectLabel>)) -> &Vec<ObjectLabel>| {
            pairs.iter().map(|p| f(p).iter().filter(|l| l.kind == class).count()).sum::<usize>() as f64
        };
        let key = class.to_lowercase();
        out.push((format!("{key}.gt"), count(|p| &p.1)));
        out.push((format!("{key}.pred"), count(|p| &p.0)));
    }
    for (class, thr) in REPORTED {
        for (mode, name) in [(IouMode::Bev, "bev"), (IouMode::ThreeD, "3d")] {
            let r = evaluate_class(pairs, class, thr, mode, &Difficulty::ALL)?;
            out.push((format!("{}.{name}_ap@{thr:.2}", class.to_lowercase()), r.ap));
        }
    }
    Ok(out)
}

/// AP of one class at one threshold.
pub fn class_ap(pairs: &[(Vec<ObjectLabel>, Vec<ObjectLabel>)], class: &str, thr: f64, mode: IouMode) -> Result<f64> {
    Ok(evaluate_class(pairs, class, thr, mode, &Difficulty::ALL)?.ap)
}

pub fn format_metrics(metrics: &[(String, f64)]) -> String {
    let mut s = String::new();
    for (k, v) in metrics {
        if v.fract() == 0.0 && k.contains(|c: char| c == '.' || k == "frames") && !k.contains("_ap@") {
            let _ = writeln!(s, "{k}={v}");
        } else {
            let _ = writeln!(s, "{k}={v:.4}");
        }
    }
    s
}

/// Pairs every ground-truth file with the same-named prediction file; a
/// missing prediction file means no detections for that frame.
pub fn read_pairs(pred_dir: &Path, gt_dir: &Path) -> Result<FramePairs> {
    let mut names: Vec<String> = std::fs::read_dir(gt_dir)
        .map_err(|e| Error::io(gt_dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".txt"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Format(format!("{}: no label files", gt_dir.display())));
    }
    if !pred_dir.is_dir() {
        return Err(Error::io(pred_dir, std::io::Error::new(std::io::ErrorKind::NotFound, "prediction directory not found")));
    }
    names
        .par_iter()
        .map(|n| {
            let gt = read_labels(&gt_dir.join(n))?;
            let p = pred_dir.join(n);
            let pred = if p.exists() { read_labels(&p)? } else { Vec::new() };
            Ok((pred, gt))
        })
        .collect()
}
