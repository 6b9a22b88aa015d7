//! Anchors, target assignment, detection heads, box coding, losses and
//! non-maximum suppression.

mod anchors;
mod coder;
mod heads;
mod loss;
mod nms;

pub use anchors::{
    anchor_shapes, assign_targets, estimate_priors, generate_anchors, iou_2d, Anchor, AnchorPriors, AnchorShape, Assignment,
};
pub use coder::{decode_box, decode_predictions, encode_box, Detection3D, REG_DIMS};
pub use heads::DetectionHeads;
pub use loss::{
    build_targets, classification_loss, focal_loss, layer_loss, orientation_bce, orientation_loss, regression_loss, smooth_l1,
    total_loss, DetectionTargets, LayerLoss,
};
pub use nms::nms_2d;
