//! KITTI object label and calibration text files.

use std::fmt::Write as _;
use std::path::Path;

use ts3d_core::label::{Calibration, ObjectLabel, Projection};

use crate::error::{read_text, write, Error, Result};

/// Parses label lines: 15 fields, or 16 with a trailing score.
pub fn parse_labels(text: &str, path: &Path) -> Result<Vec<ObjectLabel>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 15 && fields.len() != 16 {
            return Err(Error::parse(path, i + 1, format!("expected 15 or 16 fields, found {}", fields.len())));
        }
        let num = |k: usize| -> Result<f64> {
            fields[k].parse::<f64>().map_err(|_| Error::parse(path, i + 1, format!("field {} `{}` is not a number", k + 1, fields[k])))
        };
        let occluded = fields[2]
            .parse::<i32>()
            .map_err(|_| Error::parse(path, i + 1, format!("occlusion `{}` is not an integer", fields[2])))?;
        out.push(ObjectLabel {
            kind: fields[0].to_string(),
            truncated: num(1)?,
            occluded,
            alpha: num(3)?,
            bbox: [num(4)?, num(5)?, num(6)?, num(7)?],
            dimensions: [num(8)?, num(9)?, num(10)?],
            location: [num(11)?, num(12)?, num(13)?],
            rotation_y: num(14)?,
            score: if fields.len() == 16 { Some(num(15)?) } else { None },
        });
    }
    Ok(out)
}

pub fn format_labels(labels: &[ObjectLabel]) -> String {
    let mut s = String::new();
    for l in labels {
        let _ = write!(s, "{} {} {} {}", l.kind, l.truncated, l.occluded, l.alpha);
        for v in l.bbox.iter().chain(&l.dimensions).chain(&l.location) {
            let _ = write!(s, " {v}");
        }
        let _ = write!(s, " {}", l.rotation_y);
        if let Some(score) = l.score {
            let _ = write!(s, " {score}");
        }
        s.push('\n');
    }
    s
}

pub fn read_labels(path: &Path) -> Result<Vec<ObjectLabel>> {
    parse_labels(&read_text(path)?, path)
}

pub fn write_labels(path: &Path, labels: &[ObjectLabel]) -> Result<()> {
    write(path, format_labels(labels))
}

fn parse_matrix(values: &[f64]) -> Projection {
    let mut p = [[0.0; 4]; 3];
    for (k, v) in values.iter().enumerate() {
        p[k / 4][k % 4] = *v;
    }
    p
}

/// Reads `P2` and `P3` from a calibration file; other rows are skipped.
pub fn parse_calib(text: &str, path: &Path) -> Result<Calibration> {
    let (mut p2, mut p3) = (None, None);
    for (i, line) in text.lines().enumerate() {
        let Some((key, rest)) = line.split_once(':') else { continue };
        let slot = match key.trim() {
            "P2" => &mut p2,
            "P3" => &mut p3,
            _ => continue,
        };
        let values = rest
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|_| Error::parse(path, i + 1, format!("`{v}` is not a number"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != 12 {
            return Err(Error::parse(path, i + 1, format!("{} needs 12 values, found {}", key.trim(), values.len())));
        }
        *slot = Some(parse_matrix(&values));
    }
    let missing = |k: &str| Error::parse(path, text.lines().count(), format!("missing {k} row"));
    let calib = Calibration { p2: p2.ok_or_else(|| missing("P2"))?, p3: p3.ok_or_else(|| missing("P3"))? };
    calib.validate()?;
    Ok(calib)
}

pub fn format_calib(calib: &Calibration) -> String {
    let row = |p: &Projection| p.iter().flatten().map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
    let eye = "1 0 0 0 1 0 0 0 1";
    let tr = "1 0 0 0 0 1 0 0 0 0 1 0";
    format!(
        "P0: {}\nP1: {}\nP2: {}\nP3: {}\nR0_rect: {eye}\nTr_velo_to_cam: {tr}\nTr_imu_to_velo: {tr}\n",
        row(&calib.p2),
        row(&calib.p2),
        row(&calib.p2),
        row(&calib.p3)
    )
}

pub fn read_calib(path: &Path) -> Result<Calibration> {
    parse_calib(&read_text(path)?, path)
}

pub fn write_calib(path: &Path, calib: &Calibration) -> Result<()> {
    write(path, format_calib(calib))
}
