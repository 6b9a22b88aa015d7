use super::coder::REG_DIMS;
use crate::nn::Linear;
use crate::tensor::{Element, Graph, ParamBuilder, Var};
use crate::Result;

/// Classification and regression stacks shared by every decoder layer.
#[derive(Debug, Clone)]
pub struct DetectionHeads {
    cls: [Linear; 2],
    reg: [Linear; 2],
    pub anchors_per_cell: usize,
    pub num_classes: usize,
}

/// Initial foreground probability of every class channel.
const PRIOR_PROB: f64 = 0.01;

impl DetectionHeads {
    pub fn new<T: Element>(
        pb: &mut ParamBuilder<'_, T>,
        c: usize,
        anchors_per_cell: usize,
        num_classes: usize,
    ) -> Result<Self> {
        let mut p = pb.sub("head");
        let bias = -libm::log((1.0 - PRIOR_PROB) / PRIOR_PROB);
        Ok(DetectionHeads {
            cls: [
                Linear::new(&mut p, "cls.hidden", c, c)?,
                Linear::constant(&mut p, "cls.out", c, anchors_per_cell * (num_classes + 1), bias)?,
            ],
            reg: [
                Linear::new(&mut p, "reg.hidden", c, c)?,
                Linear::constant(&mut p, "reg.out", c, anchors_per_cell * REG_DIMS, 0.0)?,
            ],
            anchors_per_cell,
            num_classes,
        })
    }

    /// Class logits `[Nq·A, K+1]` and regression `[Nq·A, 13]` of `[Nq, C]` queries.
    pub fn forward<T: Element>(&self, g: &mut Graph<'_, T>, q: Var) -> Result<(Var, Var)> {
        let n = g.shape(q)[0] * self.anchors_per_cell;
        let h = self.cls[0].forward(g, q)?;
        let h = g.relu(h);
        let cls = self.cls[1].forward(g, h)?;
        let cls = g.reshape(cls, &[n, self.num_classes + 1])?;
        let h = self.reg[0].forward(g, q)?;
        let h = g.relu(h);
        let reg = self.reg[1].forward(g, h)?;
        let reg = g.reshape(reg, &[n, REG_DIMS])?;
        Ok((cls, reg))
    }
}
