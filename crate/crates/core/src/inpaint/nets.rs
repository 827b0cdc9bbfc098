//! Generator (U-Net with skip connections) and DCGAN-style discriminator,
//! with explicit forward traces for reverse-mode differentiation.

use super::layers::{
    leaky_relu, leaky_relu_backward, sigmoid, sigmoid_backward, sigmoid_tensor, upsample2,
    upsample2_backward, Conv2d, InstanceNorm, Linear, NormCache,
};
use super::tensor::Tensor;
use super::{DiscConfig, UNetConfig};
use crate::error::{Error, Result};
use rand_chacha::ChaCha12Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Act {
    Leaky,
    Sigmoid,
}

/// Conv + optional instance norm + activation.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub norm: Option<InstanceNorm>,
    pub act: Act,
}

pub struct BlockTrace {
    x: Tensor,
    norm_cache: Option<NormCache>,
    pre_act: Tensor,
    out: Tensor,
}

impl ConvBlock {
    fn new(
        in_c: usize,
        out_c: usize,
        stride: usize,
        norm: bool,
        act: Act,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        Self {
            conv: Conv2d::init(in_c, out_c, 3, stride, rng),
            norm: norm.then(|| InstanceNorm::new(out_c)),
            act,
        }
    }

    pub fn forward(&self, x: &Tensor) -> BlockTrace {
        let conv_out = self.conv.forward(x);
        let (pre_act, norm_cache) = match &self.norm {
            Some(n) => {
                let (y, cache) = n.forward(&conv_out);
                (y, Some(cache))
            }
            None => (conv_out, None),
        };
        let out = match self.act {
            Act::Leaky => leaky_relu(&pre_act),
            Act::Sigmoid => sigmoid_tensor(&pre_act),
        };
        BlockTrace {
            x: x.clone(),
            norm_cache,
            pre_act,
            out,
        }
    }

    /// Backward through activation, norm, conv. Appends (weight, bias[, gain,
    /// shift]) gradients to `grads` in parameter order.
    pub fn backward(
        &self,
        trace: &BlockTrace,
        grad_out: &Tensor,
        grads: &mut Vec<Vec<f64>>,
    ) -> Tensor {
        let grad_pre = match self.act {
            Act::Leaky => leaky_relu_backward(&trace.pre_act, grad_out),
            Act::Sigmoid => sigmoid_backward(&trace.out, grad_out),
        };
        let (grad_conv_out, norm_grads) = match (&self.norm, &trace.norm_cache) {
            (Some(n), Some(cache)) => {
                let (gx, gg, gb) = n.backward(cache, &grad_pre);
                (gx, Some((gg, gb)))
            }
            _ => (grad_pre, None),
        };
        let (grad_x, gw, gb) = self.conv.backward(&trace.x, &grad_conv_out);
        // Pushed in within-block reverse order: the caller accumulates grads
        // during a reverse traversal and flips the whole list at the end.
        if let Some((gg, gsh)) = norm_grads {
            grads.push(gsh);
            grads.push(gg);
        }
        grads.push(gb);
        grads.push(gw);
        grad_x
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Vec<f64>)) {
        f(&self.conv.weight);
        f(&self.conv.bias);
        if let Some(n) = &self.norm {
            f(&n.gain);
            f(&n.bias);
        }
    }

    fn visit_mut(&mut self, f: &mut impl FnMut(&mut Vec<f64>)) {
        f(&mut self.conv.weight);
        f(&mut self.conv.bias);
        if let Some(n) = &mut self.norm {
            f(&mut n.gain);
            f(&mut n.bias);
        }
    }
}

/// Per-slot parameter gradients, ordered like the owning net's visitors.
#[derive(Clone, Debug)]
pub struct Grads(pub Vec<Vec<f64>>);

impl Grads {
    pub fn add(&mut self, other: &Grads) {
        assert_eq!(self.0.len(), other.0.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for slot in &mut self.0 {
            for v in slot.iter_mut() {
                *v *= s;
            }
        }
    }
}

/// U-Net generator over concatenated (obfuscated, rendered) inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub cfg: UNetConfig,
    enc0: ConvBlock,
    downs: Vec<ConvBlock>,
    /// One (upsample conv, fuse conv) pair per level, deepest first.
    ups: Vec<(ConvBlock, ConvBlock)>,
    out: ConvBlock,
}

pub struct GenTrace {
    enc0: BlockTrace,
    downs: Vec<BlockTrace>,
    ups: Vec<(BlockTrace, BlockTrace)>,
    out: BlockTrace,
}

impl GenTrace {
    pub fn output(&self) -> &Tensor {
        &self.out.out
    }
}

fn level_width(base: usize, level: usize) -> usize {
    base * (1 << level.min(3))
}

impl Generator {
    pub fn init(cfg: &UNetConfig, rng: &mut ChaCha12Rng) -> Result<Self> {
        cfg.validate()?;
        let w = cfg.base_width;
        let enc0 = ConvBlock::new(cfg.input_channels, w, 1, false, Act::Leaky, rng);
        let mut downs = Vec::with_capacity(cfg.depth);
        for l in 0..cfg.depth {
            let cin = level_width(w, l);
            let cout = level_width(w, l + 1);
            downs.push(ConvBlock::new(cin, cout, 2, true, Act::Leaky, rng));
        }
        let mut ups = Vec::with_capacity(cfg.depth);
        for l in (0..cfg.depth).rev() {
            let deep = level_width(w, l + 1);
            let skip = level_width(w, l);
            let upconv = ConvBlock::new(deep, skip, 1, true, Act::Leaky, rng);
            let fuse = ConvBlock::new(2 * skip, skip, 1, true, Act::Leaky, rng);
            ups.push((upconv, fuse));
        }
        let out = ConvBlock::new(w, 3, 1, false, Act::Sigmoid, rng);
        Ok(Self {
            cfg: cfg.clone(),
            enc0,
            downs,
            ups,
            out,
        })
    }

    pub fn forward(&self, input: &Tensor) -> Result<GenTrace> {
        if input.c != self.cfg.input_channels
            || input.h != self.cfg.resolution
            || input.w != self.cfg.resolution
        {
            return Err(Error::invalid(format!(
                "generator input must be {}x{}x{}, got {}x{}x{}",
                self.cfg.input_channels,
                self.cfg.resolution,
                self.cfg.resolution,
                input.c,
                input.h,
                input.w
            )));
        }
        let enc0 = self.enc0.forward(input);
        let mut skips: Vec<&Tensor> = vec![&enc0.out];
        let mut downs: Vec<BlockTrace> = Vec::with_capacity(self.cfg.depth);
        for (i, d) in self.downs.iter().enumerate() {
            let x = if i == 0 { &enc0.out } else { &downs[i - 1].out };
            let t = d.forward(x);
            downs.push(t);
        }
        for t in downs.iter().take(self.cfg.depth.saturating_sub(1)) {
            skips.push(&t.out);
        }
        let mut bottom = downs
            .last()
            .map(|t| t.out.clone())
            .unwrap_or_else(|| enc0.out.clone());
        let mut ups = Vec::with_capacity(self.cfg.depth);
        for (step, (upconv, fuse)) in self.ups.iter().enumerate() {
            let level = self.cfg.depth - 1 - step;
            let upsampled = upsample2(&bottom);
            let a = upconv.forward(&upsampled);
            let cat = Tensor::concat(&a.out, skips[level]);
            let f = fuse.forward(&cat);
            bottom = f.out.clone();
            ups.push((a, f));
        }
        let out = self.out.forward(&bottom);
        Ok(GenTrace {
            enc0,
            downs,
            ups,
            out,
        })
    }

    /// Reverse-mode pass from a gradient on the output image; returns the
    /// parameter gradients in visitor order.
    pub fn backward(&self, trace: &GenTrace, grad_output: &Tensor) -> Grads {
        let depth = self.cfg.depth;
        // Gradients are appended in reverse visit order, then reversed.
        let mut rev: Vec<Vec<f64>> = Vec::new();
        let mut skip_grads: Vec<Option<Tensor>> = vec![None; depth.max(1)];

        let mut g = self.out.backward(&trace.out, grad_output, &mut rev);
        for (step, (upconv, fuse)) in self.ups.iter().enumerate().rev() {
            let level = depth - 1 - step;
            let (a_trace, f_trace) = &trace.ups[step];
            let g_cat = fuse.backward(f_trace, &g, &mut rev);
            // Split concat gradient into the up-branch and the skip branch.
            let skip_c = g_cat.c / 2;
            let plane = g_cat.h * g_cat.w;
            let mut g_a = Tensor::zeros(skip_c, g_cat.h, g_cat.w);
            let mut g_skip = Tensor::zeros(skip_c, g_cat.h, g_cat.w);
            g_a.data.copy_from_slice(&g_cat.data[..skip_c * plane]);
            g_skip.data.copy_from_slice(&g_cat.data[skip_c * plane..]);
            skip_grads[level] = Some(match skip_grads[level].take() {
                Some(mut acc) => {
                    for (x, y) in acc.data.iter_mut().zip(&g_skip.data) {
                        *x += y;
                    }
                    acc
                }
                None => g_skip,
            });
            let g_up = upconv.backward(a_trace, &g_a, &mut rev);
            g = upsample2_backward(&g_up);
        }
        // g is now the gradient at the bottom (last down output).
        for (i, d) in self.downs.iter().enumerate().rev() {
            // The output of downs[i] is skip level i+1 when not the bottom.
            if i + 1 < depth {
                if let Some(sg) = &skip_grads[i + 1] {
                    for (x, y) in g.data.iter_mut().zip(&sg.data) {
                        *x += y;
                    }
                }
            }
            g = d.backward(&trace.downs[i], &g, &mut rev);
        }
        if let Some(sg) = &skip_grads[0] {
            for (x, y) in g.data.iter_mut().zip(&sg.data) {
                *x += y;
            }
        }
        let _ = self.enc0.backward(&trace.enc0, &g, &mut rev);

        rev.reverse();
        Grads(rev)
    }

    pub fn visit_params<'a>(&'a self, f: &mut impl FnMut(&'a Vec<f64>)) {
        self.enc0.visit(f);
        for d in &self.downs {
            d.visit(f);
        }
        for (a, b) in &self.ups {
            a.visit(f);
            b.visit(f);
        }
        self.out.visit(f);
    }

    pub fn visit_params_mut(&mut self, f: &mut impl FnMut(&mut Vec<f64>)) {
        self.enc0.visit_mut(f);
        for d in &mut self.downs {
            d.visit_mut(f);
        }
        for (a, b) in &mut self.ups {
            a.visit_mut(f);
            b.visit_mut(f);
        }
        self.out.visit_mut(f);
    }

    pub fn zero_grads(&self) -> Grads {
        let mut slots = Vec::new();
        self.visit_params(&mut |p| slots.push(vec![0.0; p.len()]));
        Grads(slots)
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.len());
        n
    }
}

/// Stride-2 convolutional discriminator with a scalar sigmoid head.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub cfg: DiscConfig,
    blocks: Vec<ConvBlock>,
    linear: Linear,
}

pub struct DiscTrace {
    blocks: Vec<BlockTrace>,
    flat: Vec<f64>,
    pub logit: f64,
    pub prob: f64,
}

impl Discriminator {
    pub fn init(cfg: &DiscConfig, rng: &mut ChaCha12Rng) -> Result<Self> {
        cfg.validate()?;
        let w = cfg.base_width;
        let mut blocks = Vec::with_capacity(cfg.depth);
        for l in 0..cfg.depth {
            let cin = if l == 0 { 3 } else { level_width(w, l - 1) };
            let cout = level_width(w, l);
            blocks.push(ConvBlock::new(cin, cout, 2, l > 0, Act::Leaky, rng));
        }
        let side = cfg.resolution >> cfg.depth;
        let flat_dim = level_width(w, cfg.depth - 1) * side * side;
        let linear = Linear::init(flat_dim, rng);
        Ok(Self {
            cfg: cfg.clone(),
            blocks,
            linear,
        })
    }

    pub fn forward(&self, image: &Tensor) -> Result<DiscTrace> {
        if image.c != 3 || image.h != self.cfg.resolution || image.w != self.cfg.resolution {
            return Err(Error::invalid(format!(
                "discriminator input must be 3x{}x{}, got {}x{}x{}",
                self.cfg.resolution, self.cfg.resolution, image.c, image.h, image.w
            )));
        }
        let mut traces = Vec::with_capacity(self.blocks.len());
        let mut x = image.clone();
        for b in &self.blocks {
            let t = b.forward(&x);
            x = t.out.clone();
            traces.push(t);
        }
        let flat = x.data.clone();
        let logit = self.linear.forward(&flat);
        let prob = sigmoid(logit);
        Ok(DiscTrace {
            blocks: traces,
            flat,
            logit,
            prob,
        })
    }

    /// Backward from a gradient on the logit. Returns the gradient with
    /// respect to the input image and the parameter gradients.
    pub fn backward_logit(&self, trace: &DiscTrace, grad_logit: f64) -> (Tensor, Grads) {
        let mut rev: Vec<Vec<f64>> = Vec::new();
        let (flat_grad, gw, gb) = self.linear.backward(&trace.flat, grad_logit);
        rev.push(vec![gb]);
        rev.push(gw);
        let last = trace.blocks.last().unwrap();
        let mut g = Tensor {
            c: last.out.c,
            h: last.out.h,
            w: last.out.w,
            data: flat_grad,
        };
        for (b, t) in self.blocks.iter().zip(&trace.blocks).rev() {
            g = b.backward(t, &g, &mut rev);
        }
        rev.reverse();
        (g, Grads(rev))
    }

    pub fn visit_params<'a>(&'a self, f: &mut impl FnMut(&'a Vec<f64>)) {
        for b in &self.blocks {
            b.visit(f);
        }
        f(&self.linear.weight);
        f(&self.linear.bias);
    }

    pub fn visit_params_mut(&mut self, f: &mut impl FnMut(&mut Vec<f64>)) {
        for b in &mut self.blocks {
            b.visit_mut(f);
        }
        f(&mut self.linear.weight);
        f(&mut self.linear.bias);
    }

    pub fn zero_grads(&self) -> Grads {
        let mut slots = Vec::new();
        self.visit_params(&mut |p| slots.push(vec![0.0; p.len()]));
        Grads(slots)
    }
}
