use alloc::vec::Vec;

use super::anchors::iou_2d;
use super::coder::Detection3D;

/// Greedy suppression on 2D boxes: detections below `score_threshold` are
/// dropped, the rest are visited by descending score (ties keep input
/// order) and kept unless they overlap a kept box by more than
/// `iou_threshold`.
pub fn nms_2d(mut dets: Vec<Detection3D>, iou_threshold: f64, score_threshold: f64) -> Vec<Detection3D> {
    dets.retain(|d| d.score >= score_threshold);
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut kept: Vec<Detection3D> = Vec::new();
    for d in dets {
        if kept.iter().all(|k| iou_2d(&k.bbox, &d.bbox) <= iou_threshold) {
            kept.push(d);
        }
    }
    kept
}
