//! The assembled detector: backbone, cost-volume pyramid, disparity head,
//! positional encoding, decoder and detection heads.

use alloc::vec::Vec;

use rand::RngCore;

use crate::backbone::{Backbone, UnaryPyramids};
use crate::config::{LossConfig, ModelConfig};
use crate::decoder::{query_encoding, Decoder, NpaQuery, QuerySet};
use crate::detect::{
    anchor_shapes, decode_predictions, generate_anchors, layer_loss, nms_2d, total_loss, Anchor, AnchorPriors, AnchorShape,
    Detection3D, DetectionHeads, DetectionTargets,
};
use crate::disphead::{stereo_focal_loss, DisparityField, DisparityHead, DisparityMap};
use crate::label::Calibration;
use crate::spfpn::{Spfpn, StereoFeaturePyramid};
use crate::tensor::{Element, Graph, ParamBuilder, ParamStore, Var};
use crate::{Error, Result};

/// Query-grid stride relative to the input image.
pub const QUERY_STRIDE: usize = 16;
/// Stride of the disparity supervision map.
pub const SUPERVISION_STRIDE: usize = 4;

#[derive(Debug, Clone)]
pub struct Ts3d {
    pub cfg: ModelConfig,
    pub backbone: Backbone,
    pub spfpn: Spfpn,
    pub disphead: DisparityHead,
    pub query: NpaQuery,
    pub decoder: Decoder,
    pub heads: DetectionHeads,
    pub shapes: Vec<AnchorShape>,
    pub anchors: Vec<Anchor>,
    pub priors: AnchorPriors,
}

/// Every intermediate of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub unary: UnaryPyramids,
    pub pyramid: StereoFeaturePyramid,
    pub disparity: DisparityField,
    pub queries: QuerySet,
    pub pe: Option<Var>,
    /// Decoder outputs, one per layer.
    pub layers: Vec<Var>,
    /// `(class logits, regression)` per supervised layer, last layer last.
    /// Without decoder layers the heads read the queries directly.
    pub heads: Vec<(Var, Var)>,
}

/// Ground truth of one frame.
#[derive(Debug, Clone)]
pub struct FrameTargets {
    pub detection: DetectionTargets,
    /// Disparity at the supervision stride, in supervision-grid bins.
    pub disparity: Option<DisparityMap>,
}

/// Graph handles and scalar values of the loss terms.
#[derive(Debug, Clone, Copy)]
pub struct LossOutput {
    pub total: Var,
    pub cls: f64,
    pub reg: f64,
    pub orient: f64,
    pub disp: f64,
    pub disp_valid: usize,
}

impl Ts3d {
    /// Registers all parameters in `store`. Priors start at defaults and
    /// are normally replaced by dataset statistics.
    pub fn new<T: Element>(cfg: &ModelConfig, store: &mut ParamStore<T>, rng: &mut dyn RngCore) -> Result<Self> {
        cfg.validate()?;
        let mut pb = ParamBuilder::new(store, rng);
        let channels = cfg.stereo_channels();
        let backbone = Backbone::new(&mut pb, cfg.backbone_channels, cfg.blocks_per_stage)?;
        let spfpn = Spfpn::new(&mut pb, cfg)?;
        let disphead = DisparityHead::new(&mut pb, channels[2], cfg.c_dec, cfg.c_disp)?;
        let query = NpaQuery::new(&mut pb, channels[2], cfg.c_dec)?;
        let decoder = Decoder::new(&mut pb, cfg.n_dec, cfg.c_dec, cfg.heads, 3, cfg.points, cfg.ffn_mult)?;
        let a = cfg.anchors_per_cell();
        let heads = DetectionHeads::new(&mut pb, cfg.c_dec, a, cfg.num_classes)?;
        let shapes = anchor_shapes(&cfg.anchor_scales, &cfg.anchor_ratios);
        let (wq, hq) = cfg.query_grid();
        let anchors = generate_anchors(wq, hq, QUERY_STRIDE as f64, &shapes);
        let priors = AnchorPriors::defaults(shapes.len(), cfg.num_classes);
        Ok(Ts3d { cfg: cfg.clone(), backbone, spfpn, disphead, query, decoder, heads, shapes, anchors, priors })
    }

    pub fn set_priors(&mut self, priors: AnchorPriors) -> Result<()> {
        if priors.shape_z.len() != self.shapes.len() || priors.class_size.len() != self.cfg.num_classes {
            return Err(Error::config(alloc::format!(
                "priors cover {} anchor shapes and {} classes, model has {} and {}",
                priors.shape_z.len(),
                priors.class_size.len(),
                self.shapes.len(),
                self.cfg.num_classes
            )));
        }
        self.priors = priors;
        Ok(())
    }

    /// Runs the network on `[H, W, 3]` left and right images. With
    /// `supervise_all` the heads run on every decoder layer, otherwise on
    /// the last one only.
    pub fn forward<T: Element>(&self, g: &mut Graph<'_, T>, left: Var, right: Var, supervise_all: bool) -> Result<Forward> {
        let s = g.shape(left);
        if s.len() != 3 || s[0] != self.cfg.height || s[1] != self.cfg.width {
            return Err(Error::shape(
                "ts3d",
                alloc::format!("input {:?} does not match the configured {}x{}", s, self.cfg.width, self.cfg.height),
            ));
        }
        let unary = self.backbone.extract_unary_pyramids(g, left, right)?;
        let pyramid = self.spfpn.forward(g, &unary)?;
        let disparity = self.disphead.forward(g, pyramid.aggregated[2])?;
        let queries = self.query.forward(g, pyramid.aggregated[2])?;
        let pe = query_encoding(g, self.cfg.pe, disparity.logits_q, self.cfg.c_dec)?;
        let layers = self.decoder.forward(g, &queries, pe, &pyramid.projected)?;
        let supervised: Vec<Var> = match layers.split_last() {
            None => alloc::vec![queries.x_q],
            Some((&last, _)) if !supervise_all => alloc::vec![last],
            Some(_) => layers.clone(),
        };
        let heads = supervised.iter().map(|&q| self.heads.forward(g, q)).collect::<Result<Vec<_>>>()?;
        Ok(Forward { unary, pyramid, disparity, queries, pe, layers, heads })
    }

    /// Total training loss of a forward pass made with the supervision
    /// setting of the configuration.
    pub fn loss<T: Element>(
        &self,
        g: &mut Graph<'_, T>,
        fwd: &Forward,
        targets: &FrameTargets,
        cfg: &LossConfig,
    ) -> Result<LossOutput> {
        let mut layers = Vec::with_capacity(fwd.heads.len());
        let (mut cls, mut reg, mut orient) = (0.0, 0.0, 0.0);
        for &(c, r) in &fwd.heads {
            let l = layer_loss(g, c, r, &targets.detection, cfg)?;
            cls += g.value(l.cls).item().as_f64();
            reg += g.value(l.reg).item().as_f64();
            orient += g.value(l.orient).item().as_f64();
            layers.push(l);
        }
        let (disp_var, disp, disp_valid) = match &targets.disparity {
            Some(map) => {
                let sf = stereo_focal_loss(g, fwd.disparity.logits_sup, &map.disparity, &map.valid, cfg.disp_sigma)?;
                (Some(sf.loss), g.value(sf.loss).item().as_f64(), sf.valid_pixels)
            }
            None => (None, 0.0, 0),
        };
        let n = targets.detection.num_objects;
        let total = total_loss(g, &layers, disp_var, n, cfg.disp_weight)?;
        let norm = 1.0 / n.max(1) as f64;
        Ok(LossOutput { total, cls: cls * norm, reg: reg * norm, orient: orient * norm, disp, disp_valid })
    }

    /// Scored, suppressed detections from the last layer of a forward pass.
    pub fn detections<T: Element>(
        &self,
        g: &Graph<'_, T>,
        fwd: &Forward,
        calib: &Calibration,
        min_score: f64,
        nms_iou: f64,
    ) -> Result<Vec<Detection3D>> {
        let &(c, r) = fwd.heads.last().ok_or_else(|| Error::config("forward pass has no head outputs"))?;
        let cls: Vec<f64> = g.value(c).data().iter().map(|v| v.as_f64()).collect();
        let reg: Vec<f64> = g.value(r).data().iter().map(|v| v.as_f64()).collect();
        let dets = decode_predictions(&cls, &reg, &self.anchors, self.cfg.num_classes, &self.priors, calib, min_score)?;
        Ok(nms_2d(dets, nms_iou, min_score))
    }
}
