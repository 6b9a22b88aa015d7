//! Positional-encoding similarity maps for a probe pixel.

use std::path::Path;

use ts3d_core::model::QUERY_STRIDE;
use ts3d_core::synth::StereoFrame;
use ts3d_core::Tensor;

use crate::error::{Error, Result};
use crate::image::{write_pgm, write_ppm};
use crate::infer::Predictor;

/// Cosine similarity between the probe cell's query encoding and every
/// cell's, min-max scaled to `[0, 1]`. Returns `(columns, rows, values)`
/// on the query grid.
pub fn pe_similarity(pred: &Predictor, frame: &StereoFrame, probe: (usize, usize)) -> Result<(usize, usize, Vec<f32>)> {
    let (wq, hq) = pred.cfg.model.query_grid();
    let (u, v) = probe;
    if u >= pred.cfg.model.width || v >= pred.cfg.model.height {
        return Err(Error::Config(format!("probe pixel ({u}, {v}) lies outside the {}x{} image", pred.cfg.model.width, pred.cfg.model.height)));
    }
    let k = (v / QUERY_STRIDE) * wq + u / QUERY_STRIDE;
    let pe = pred.with_forward(frame, |g, fwd| {
        let pe = fwd.pe.ok_or_else(|| Error::Config("model.pe=none has no positional encoding to visualise".into()))?;
        Ok(g.value(pe).data().to_vec())
    })?;
    let c = pe.len() / (wq * hq);
    let rows: Vec<&[f32]> = pe.chunks_exact(c).collect();
    let norm = |r: &[f32]| r.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt().max(1e-12);
    let probe_row = rows[k];
    let pn = norm(probe_row);
    let sims: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().zip(probe_row).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum::<f64>() / (norm(r) * pn))
        .collect();
    let (lo, hi) = sims.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    let span = (hi - lo).max(1e-12);
    Ok((wq, hq, sims.iter().map(|&s| ((s - lo) / span) as f32).collect()))
}

/// Nearest-neighbour upsampling of a query-grid map to image resolution.
pub fn upsample(wq: usize, hq: usize, values: &[f32], width: usize, height: usize) -> Vec<f32> {
    (0..width * height)
        .map(|i| {
            let (y, x) = (i / width, i % width);
            values[(y / QUERY_STRIDE).min(hq - 1) * wq + (x / QUERY_STRIDE).min(wq - 1)]
        })
        .collect()
}

/// Writes `heatmap.pgm` at image resolution and `masked.ppm`, the left
/// image weighted by the similarity.
pub fn write_heatmap(out: &Path, pred: &Predictor, frame: &StereoFrame, probe: (usize, usize)) -> Result<()> {
    let (wq, hq, sims) = pe_similarity(pred, frame, probe)?;
    let (w, h) = (pred.cfg.model.width, pred.cfg.model.height);
    let full = upsample(wq, hq, &sims, w, h);
    write_pgm(&out.join("heatmap.pgm"), w, h, &full)?;
    let left = frame.left.data();
    let masked = Tensor::from_fn(frame.left.shape(), |i| left[i] * full[i / 3]);
    write_ppm(&out.join("masked.ppm"), &masked)
}
