//! Parameterised layers. Layers only hold [`ParamId`]s, so one model
//! description serves both `f32` training and `f64` gradient checks.

use crate::tensor::{Element, Graph, ParamBuilder, ParamId, Var};
use crate::Result;

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    /// Square `k×k` kernel with "same" padding.
    pub fn new<T: Element>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        bias: bool,
    ) -> Result<Self> {
        let mut p = pb.sub(name);
        let weight = p.kaiming("weight", &[k, k, cin, cout], k * k * cin)?;
        let bias = if bias { Some(p.zeros("bias", &[cout])?) } else { None };
        Ok(Conv2d { weight, bias, stride, padding: k / 2 })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.conv2d(x, w, b, self.stride, self.padding)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Element>(pb: &mut ParamBuilder<'_, T>, name: &str, din: usize, dout: usize) -> Result<Self> {
        let mut p = pb.sub(name);
        let bound = libm::sqrt(1.0 / din as f64);
        let weight = p.uniform("weight", &[din, dout], bound)?;
        let bias = Some(p.zeros("bias", &[dout])?);
        Ok(Linear { weight, bias })
    }

    /// Zero weight and the given constant bias; used where training should
    /// start from a fixed output.
    pub fn constant<T: Element>(pb: &mut ParamBuilder<'_, T>, name: &str, din: usize, dout: usize, bias: f64) -> Result<Self> {
        let mut p = pb.sub(name);
        let weight = p.zeros("weight", &[din, dout])?;
        let bias = Some(p.constant("bias", &[dout], bias)?);
        Ok(Linear { weight, bias })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.linear(x, w, b)
    }
}

/// Affine normalisation parameters shared by `channel_norm` and `layer_norm`.
#[derive(Debug, Clone)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn new<T: Element>(pb: &mut ParamBuilder<'_, T>, name: &str, channels: usize) -> Result<Self> {
        let mut p = pb.sub(name);
        Ok(Norm { gamma: p.constant("gamma", &[channels], 1.0)?, beta: p.zeros("beta", &[channels])? })
    }

    pub fn channel<T: Element>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (gamma, beta) = (g.param(self.gamma), g.param(self.beta));
        g.channel_norm(x, gamma, beta)
    }

    pub fn layer<T: Element>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (gamma, beta) = (g.param(self.gamma), g.param(self.beta));
        g.layer_norm(x, gamma, beta)
    }
}

/// Convolution without bias followed by channel normalisation.
#[derive(Debug, Clone)]
pub struct ConvNorm {
    pub conv: Conv2d,
    pub norm: Norm,
}

impl ConvNorm {
    pub fn new<T: Element>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
    ) -> Result<Self> {
        let mut p = pb.sub(name);
        let conv = Conv2d::new(&mut p, "conv", cin, cout, k, stride, false)?;
        let norm = Norm::new(&mut p, "norm", cout)?;
        Ok(ConvNorm { conv, norm })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(g, x)?;
        self.norm.channel(g, y)
    }
}
