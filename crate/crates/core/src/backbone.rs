//! Weight-shared residual encoder with a top-down lateral pyramid.
//!
//! The primary pyramid holds the encoder outputs at strides 4, 8 and 16; the
//! enhanced pyramid is the top-down fusion of those levels (1×1 laterals,
//! nearest upsampling, 3×3 smoothing). Both views run through the same
//! parameters.

use alloc::format;
use alloc::vec::Vec;

use crate::nn::{Conv2d, ConvNorm};
use crate::tensor::{Element, Graph, ParamBuilder, Var};
use crate::{Error, Result};

/// Pyramid levels of one view, finest first (strides 4, 8, 16).
#[derive(Debug, Clone, Copy)]
pub struct UnaryPyramid {
    pub primary: [Var; 3],
    pub enhanced: [Var; 3],
}

/// Left and right pyramids produced by the shared backbone.
#[derive(Debug, Clone, Copy)]
pub struct UnaryPyramids {
    pub left: UnaryPyramid,
    pub right: UnaryPyramid,
}

#[derive(Debug, Clone)]
struct ResBlock {
    a: ConvNorm,
    b: ConvNorm,
    skip: Option<ConvNorm>,
}

impl ResBlock {
    fn new<T: Element>(pb: &mut ParamBuilder<'_, T>, name: &str, c: usize, stride: usize) -> Result<Self> {
        let mut p = pb.sub(name);
        let a = ConvNorm::new(&mut p, "a", c, c, 3, stride)?;
        let b = ConvNorm::new(&mut p, "b", c, c, 3, 1)?;
        let skip = if stride > 1 { Some(ConvNorm::new(&mut p, "skip", c, c, 1, stride)?) } else { None };
        Ok(ResBlock { a, b, skip })
    }

    fn forward<T: Element>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let y = self.a.forward(g, x)?;
        let y = g.relu(y);
        let y = self.b.forward(g, y)?;
        let s = match &self.skip {
            Some(skip) => skip.forward(g, x)?,
            None => x,
        };
        let y = g.add(y, s)?;
        Ok(g.relu(y))
    }
}

#[derive(Debug, Clone)]
pub struct Backbone {
    stem: [ConvNorm; 2],
    stages: Vec<Vec<ResBlock>>,
    laterals: Vec<Conv2d>,
    smooth: Vec<Conv2d>,
    pub channels: usize,
}

impl Backbone {
    pub fn new<T: Element>(pb: &mut ParamBuilder<'_, T>, channels: usize, blocks_per_stage: usize) -> Result<Self> {
        let mut p = pb.sub("backbone");
        let half = (channels / 2).max(1);
        let stem = [
            ConvNorm::new(&mut p, "stem0", 3, half, 3, 2)?,
            ConvNorm::new(&mut p, "stem1", half, channels, 3, 2)?,
        ];
        let mut stages = Vec::new();
        for s in 0..3 {
            let mut blocks = Vec::new();
            for b in 0..blocks_per_stage {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                blocks.push(ResBlock::new(&mut p, &format!("stage{s}.block{b}"), channels, stride)?);
            }
            stages.push(blocks);
        }
        let mut laterals = Vec::new();
        let mut smooth = Vec::new();
        for l in 0..3 {
            laterals.push(Conv2d::new(&mut p, &format!("fpn.lateral{l}"), channels, channels, 1, 1, true)?);
            smooth.push(Conv2d::new(&mut p, &format!("fpn.smooth{l}"), channels, channels, 3, 1, true)?);
        }
        Ok(Backbone { stem, stages, laterals, smooth, channels })
    }

    /// Primary and enhanced pyramids of one `[H, W, 3]` image.
    pub fn forward<T: Element>(&self, g: &mut Graph<'_, T>, image: Var) -> Result<UnaryPyramid> {
        let s = g.shape(image).to_vec();
        if s.len() != 3 || s[2] != 3 {
            return Err(Error::shape("backbone", format!("image must be [H, W, 3], got {s:?}")));
        }
        if s[0] % 16 != 0 || s[1] % 16 != 0 {
            return Err(Error::config(format!("image extents {}x{} must be divisible by 16", s[1], s[0])));
        }
        let mut x = image;
        for conv in &self.stem {
            x = conv.forward(g, x)?;
            x = g.relu(x);
        }
        let mut primary = [x; 3];
        for (level, blocks) in self.stages.iter().enumerate() {
            for block in blocks {
                x = block.forward(g, x)?;
            }
            primary[level] = x;
        }
        let mut lat = [x; 3];
        for l in 0..3 {
            lat[l] = self.laterals[l].forward(g, primary[l])?;
        }
        let mut merged = [lat[2]; 3];
        for l in (0..2).rev() {
            let up = g.upsample2x(merged[l + 1])?;
            merged[l] = g.add(lat[l], up)?;
        }
        let mut enhanced = merged;
        for l in 0..3 {
            enhanced[l] = self.smooth[l].forward(g, merged[l])?;
        }
        Ok(UnaryPyramid { primary, enhanced })
    }

    /// Runs both views through the same parameters.
    pub fn extract_unary_pyramids<T: Element>(&self, g: &mut Graph<'_, T>, left: Var, right: Var) -> Result<UnaryPyramids> {
        if g.shape(left) != g.shape(right) {
            return Err(Error::shape("backbone", format!("left {:?} and right {:?} differ", g.shape(left), g.shape(right))));
        }
        let left = self.forward(g, left)?;
        let right = self.forward(g, right)?;
        Ok(UnaryPyramids { left, right })
    }
}
