//! ViT-B/16 and ConvNeXt-Tiny backbones (torchvision parameter names).

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{
    init, join, missing_cache, AdaptiveAvgPool2d, ChannelLayerNorm, Conv2d, Flatten, Gelu, LayerNorm, Linear, Module,
    MultiheadAttention, Param, Sequential, Tensor, TrainCtx, Visitor, VisitorMut,
};

const LN_EPS: f32 = 1e-6;

pub const VIT_B16_DIM: usize = 768;
const VIT_PATCH: usize = 16;
const VIT_DEPTH: usize = 12;
const VIT_HEADS: usize = 12;
const VIT_MLP: usize = 3072;
const VIT_IMAGE: usize = 224;

/// Pre-norm transformer block: `x + attn(ln_1(x))`, then `y + mlp(ln_2(y))`.
struct EncoderBlock {
    ln_1: LayerNorm,
    self_attention: MultiheadAttention,
    ln_2: LayerNorm,
    mlp: Sequential,
}

impl EncoderBlock {
    fn new(rng: &mut impl Rng) -> Self {
        Self {
            ln_1: LayerNorm::new(VIT_B16_DIM, LN_EPS),
            self_attention: MultiheadAttention::new(VIT_B16_DIM, VIT_HEADS, rng),
            ln_2: LayerNorm::new(VIT_B16_DIM, LN_EPS),
            mlp: Sequential::new()
                .with("0", Linear::new(VIT_B16_DIM, VIT_MLP, rng))
                .with("1", Gelu::new())
                .with("3", Linear::new(VIT_MLP, VIT_B16_DIM, rng)),
        }
    }
}

impl Module for EncoderBlock {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = self.self_attention.forward(&self.ln_1.forward(x)?)?;
        y.add_assign(x)?;
        let mut z = self.mlp.forward(&self.ln_2.forward(&y)?)?;
        z.add_assign(&y)?;
        Ok(z)
    }

    fn forward_train(&mut self, x: &Tensor, ctx: &mut TrainCtx) -> Result<Tensor> {
        let h = self.ln_1.forward_train(x, ctx)?;
        let mut y = self.self_attention.forward_train(&h, ctx)?;
        y.add_assign(x)?;
        let h = self.ln_2.forward_train(&y, ctx)?;
        let mut z = self.mlp.forward_train(&h, ctx)?;
        z.add_assign(&y)?;
        Ok(z)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mut gy = self.ln_2.backward(&self.mlp.backward(grad)?)?;
        gy.add_assign(grad)?;
        let mut gx = self.ln_1.backward(&self.self_attention.backward(&gy)?)?;
        gx.add_assign(&gy)?;
        Ok(gx)
    }

    fn visit(&self, path: &str, v: &mut dyn Visitor) {
        self.ln_1.visit(&join(path, "ln_1"), v);
        self.self_attention.visit(&join(path, "self_attention"), v);
        self.ln_2.visit(&join(path, "ln_2"), v);
        self.mlp.visit(&join(path, "mlp"), v);
    }

    fn visit_mut(&mut self, path: &str, v: &mut dyn VisitorMut) {
        self.ln_1.visit_mut(&join(path, "ln_1"), v);
        self.self_attention.visit_mut(&join(path, "self_attention"), v);
        self.ln_2.visit_mut(&join(path, "ln_2"), v);
        self.mlp.visit_mut(&join(path, "mlp"), v);
    }
}

/// Patch embedding, class token, 12 encoder blocks and the final layer
/// norm; outputs the class-token embedding `[N, 768]`.
pub struct VitBackbone {
    conv_proj: Conv2d,
    class_token: Param,
    pos_embedding: Param,
    layers: Vec<EncoderBlock>,
    ln: LayerNorm,
    grid: Option<(usize, usize)>,
}

impl VitBackbone {
    pub fn new(rng: &mut impl Rng) -> Self {
        let tokens = (VIT_IMAGE / VIT_PATCH).pow(2) + 1;
        Self {
            conv_proj: Conv2d::new(3, VIT_B16_DIM, VIT_PATCH, VIT_PATCH, 0, 1, true, rng),
            class_token: Param::new(Tensor::zeros(&[1, 1, VIT_B16_DIM])),
            pos_embedding: Param::new(init::normal(&[1, tokens, VIT_B16_DIM], 0.02, rng)),
            layers: (0..VIT_DEPTH).map(|_| EncoderBlock::new(rng)).collect(),
            ln: LayerNorm::new(VIT_B16_DIM, LN_EPS),
            grid: None,
        }
    }

    fn tokens(&self, patches: &Tensor) -> Result<Tensor> {
        let (n, d, gh, gw) = patches.dims4()?;
        let l = gh * gw + 1;
        if l * d != self.pos_embedding.numel() {
            return Err(Error::Shape(format!(
                "ViT-B/16 expects {VIT_IMAGE}x{VIT_IMAGE} input ({} tokens), got a {gh}x{gw} patch grid",
                self.pos_embedding.shape()[1]
            )));
        }
        let seq = patches.clone().reshape(&[n, d, gh * gw])?.permute(&[0, 2, 1]);
        let mut out = vec![0f32; n * l * d];
        let cls = self.class_token.value.data();
        let pos = self.pos_embedding.value.data();
        for s in 0..n {
            let dst = &mut out[s * l * d..(s + 1) * l * d];
            dst[..d].copy_from_slice(cls);
            dst[d..].copy_from_slice(&seq.data()[s * (l - 1) * d..(s + 1) * (l - 1) * d]);
            for (o, p) in dst.iter_mut().zip(pos) {
                *o += p;
            }
        }
        Tensor::new(&[n, l, d], out)
    }

    fn class_rows(x: &Tensor) -> Result<Tensor> {
        let (n, l, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let mut out = Vec::with_capacity(n * d);
        for s in 0..n {
            out.extend_from_slice(&x.data()[s * l * d..s * l * d + d]);
        }
        Tensor::new(&[n, d], out)
    }
}

impl Module for VitBackbone {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.tokens(&self.conv_proj.forward(x)?)?;
        for layer in &self.layers {
            h = layer.forward(&h)?;
        }
        Self::class_rows(&self.ln.forward(&h)?)
    }

    fn forward_train(&mut self, x: &Tensor, ctx: &mut TrainCtx) -> Result<Tensor> {
        let patches = self.conv_proj.forward_train(x, ctx)?;
        let (_, _, gh, gw) = patches.dims4()?;
        self.grid = Some((gh, gw));
        let mut h = self.tokens(&patches)?;
        for layer in &mut self.layers {
            h = layer.forward_train(&h, ctx)?;
        }
        Self::class_rows(&self.ln.forward_train(&h, ctx)?)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let (gh, gw) = self.grid.take().ok_or_else(|| missing_cache("vit"))?;
        let (n, d) = (grad.shape()[0], grad.shape()[1]);
        let l = gh * gw + 1;
        let mut g = Tensor::zeros(&[n, l, d]);
        for s in 0..n {
            g.data_mut()[s * l * d..s * l * d + d].copy_from_slice(&grad.data()[s * d..(s + 1) * d]);
        }
        let mut g = self.ln.backward(&g)?;
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        if self.pos_embedding.trainable {
            let pg = self.pos_embedding.grad_mut();
            for row in g.data().chunks(l * d) {
                for (a, b) in pg.iter_mut().zip(row) {
                    *a += b;
                }
            }
        }
        if self.class_token.trainable {
            let cg = self.class_token.grad_mut();
            for row in g.data().chunks(l * d) {
                for (a, b) in cg.iter_mut().zip(&row[..d]) {
                    *a += b;
                }
            }
        }
        let mut patches = Vec::with_capacity(n * (l - 1) * d);
        for row in g.data().chunks(l * d) {
            patches.extend_from_slice(&row[d..]);
        }
        let gp = Tensor::new(&[n, l - 1, d], patches)?.permute(&[0, 2, 1]).reshape(&[n, d, gh, gw])?;
        self.conv_proj.backward(&gp)
    }

    fn visit(&self, path: &str, v: &mut dyn Visitor) {
        v.param(&join(path, "class_token"), &self.class_token);
        self.conv_proj.visit(&join(path, "conv_proj"), v);
        v.param(&join(path, "encoder.pos_embedding"), &self.pos_embedding);
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit(&join(path, &format!("encoder.layers.encoder_layer_{i}")), v);
        }
        self.ln.visit(&join(path, "encoder.ln"), v);
    }

    fn visit_mut(&mut self, path: &str, v: &mut dyn VisitorMut) {
        v.param(&join(path, "class_token"), &mut self.class_token);
        self.conv_proj.visit_mut(&join(path, "conv_proj"), v);
        v.param(&join(path, "encoder.pos_embedding"), &mut self.pos_embedding);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&join(path, &format!("encoder.layers.encoder_layer_{i}")), v);
        }
        self.ln.visit_mut(&join(path, "encoder.ln"), v);
    }
}

pub const CONVNEXT_TINY_DIM: usize = 768;
const CONVNEXT_TINY_DEPTHS: [usize; 4] = [3, 3, 9, 3];
const CONVNEXT_TINY_DIMS: [usize; 4] = [96, 192, 384, 768];
const LAYER_SCALE_INIT: f32 = 1e-6;

/// Depthwise 7x7 conv, channels-last layer norm, inverted MLP and a learned
/// per-channel layer scale on the residual branch. Stochastic depth is not
/// applied.
struct CnBlock {
    dwconv: Conv2d,
    norm: LayerNorm,
    pw1: Linear,
    act: Gelu,
    pw2: Linear,
    layer_scale: Param,
    branch: Option<Tensor>,
}

impl CnBlock {
    fn new(dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            dwconv: Conv2d::new(dim, dim, 7, 1, 3, dim, true, rng),
            norm: LayerNorm::new(dim, LN_EPS),
            pw1: Linear::new(dim, 4 * dim, rng),
            act: Gelu::new(),
            pw2: Linear::new(4 * dim, dim, rng),
            layer_scale: Param::new(Tensor::full(&[dim, 1, 1], LAYER_SCALE_INIT)),
            branch: None,
        }
    }

    fn scale_add(&self, branch: &Tensor, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let hw = h * w;
        let s = self.layer_scale.value.data();
        let mut out = x.clone();
        for (i, (o, b)) in out.data_mut().iter_mut().zip(branch.data()).enumerate() {
            *o += s[(i / hw) % c] * b;
        }
        debug_assert_eq!(out.numel(), n * c * hw);
        Ok(out)
    }
}

impl Module for CnBlock {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.dwconv.forward(x)?.permute(&[0, 2, 3, 1]);
        let h = self.pw2.forward(&self.act.forward(&self.pw1.forward(&self.norm.forward(&h)?)?)?)?;
        self.scale_add(&h.permute(&[0, 3, 1, 2]), x)
    }

    fn forward_train(&mut self, x: &Tensor, ctx: &mut TrainCtx) -> Result<Tensor> {
        let h = self.dwconv.forward_train(x, ctx)?.permute(&[0, 2, 3, 1]);
        let h = self.norm.forward_train(&h, ctx)?;
        let h = self.pw1.forward_train(&h, ctx)?;
        let h = self.act.forward_train(&h, ctx)?;
        let h = self.pw2.forward_train(&h, ctx)?.permute(&[0, 3, 1, 2]);
        let out = self.scale_add(&h, x)?;
        self.branch = Some(h);
        Ok(out)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let branch = self.branch.take().ok_or_else(|| missing_cache("convnext_block"))?;
        let (_, c, h, w) = grad.dims4()?;
        let hw = h * w;
        let s = self.layer_scale.value.data().to_vec();
        let mut gb = grad.clone();
        let mut ds = vec![0f32; c];
        for (i, (g, b)) in gb.data_mut().iter_mut().zip(branch.data()).enumerate() {
            let ch = (i / hw) % c;
            ds[ch] += *g * b;
            *g *= s[ch];
        }
        if self.layer_scale.trainable {
            for (a, d) in self.layer_scale.grad_mut().iter_mut().zip(&ds) {
                *a += d;
            }
        }
        let g = gb.permute(&[0, 2, 3, 1]);
        let g = self.pw2.backward(&g)?;
        let g = self.act.backward(&g)?;
        let g = self.pw1.backward(&g)?;
        let g = self.norm.backward(&g)?.permute(&[0, 3, 1, 2]);
        let mut dx = self.dwconv.backward(&g)?;
        dx.add_assign(grad)?;
        Ok(dx)
    }

    fn visit(&self, path: &str, v: &mut dyn Visitor) {
        v.param(&join(path, "layer_scale"), &self.layer_scale);
        self.dwconv.visit(&join(path, "block.0"), v);
        self.norm.visit(&join(path, "block.2"), v);
        self.pw1.visit(&join(path, "block.3"), v);
        self.pw2.visit(&join(path, "block.5"), v);
    }

    fn visit_mut(&mut self, path: &str, v: &mut dyn VisitorMut) {
        v.param(&join(path, "layer_scale"), &mut self.layer_scale);
        self.dwconv.visit_mut(&join(path, "block.0"), v);
        self.norm.visit_mut(&join(path, "block.2"), v);
        self.pw1.visit_mut(&join(path, "block.3"), v);
        self.pw2.visit_mut(&join(path, "block.5"), v);
    }
}

/// Stem, four stages with downsampling, global pooling and the
/// pre-classifier layer norm; outputs `[N, 768]`.
pub fn convnext_tiny_backbone(rng: &mut impl Rng) -> Sequential {
    let mut features = Sequential::new().with(
        "0",
        Sequential::new()
            .with("0", Conv2d::new(3, CONVNEXT_TINY_DIMS[0], 4, 4, 0, 1, true, rng))
            .with("1", ChannelLayerNorm::new(CONVNEXT_TINY_DIMS[0], LN_EPS)),
    );
    let mut idx = 1;
    for (stage, (&depth, &dim)) in CONVNEXT_TINY_DEPTHS.iter().zip(&CONVNEXT_TINY_DIMS).enumerate() {
        let mut blocks = Sequential::new();
        for b in 0..depth {
            blocks.push(b.to_string(), CnBlock::new(dim, rng));
        }
        features.push(idx.to_string(), blocks);
        idx += 1;
        if stage + 1 < CONVNEXT_TINY_DIMS.len() {
            let next = CONVNEXT_TINY_DIMS[stage + 1];
            features.push(
                idx.to_string(),
                Sequential::new()
                    .with("0", ChannelLayerNorm::new(dim, LN_EPS))
                    .with("1", Conv2d::new(dim, next, 2, 2, 0, 1, true, rng)),
            );
            idx += 1;
        }
    }
    Sequential::new()
        .with("features", features)
        .with("avgpool", AdaptiveAvgPool2d::global())
        .with("classifier.0", ChannelLayerNorm::new(CONVNEXT_TINY_DIM, LN_EPS))
        .with("flatten", Flatten::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn convnext_block_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut block = CnBlock::new(4, &mut rng);
        block.layer_scale.value.data_mut().fill(0.7);
        let x = init::normal(&[2, 4, 5, 5], 1.0, &mut rng);
        let w = init::normal(&[2, 4, 5, 5], 1.0, &mut rng);
        let mut ctx = TrainCtx { rng: ChaCha8Rng::seed_from_u64(0) };
        block.forward_train(&x, &mut ctx).unwrap();
        let dx = block.backward(&w).unwrap();
        let f = |t: &Tensor| -> f64 {
            block.forward(t).unwrap().data().iter().zip(w.data()).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
        };
        let h = 1e-2;
        for i in [0, 17, 58, 199] {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h as f64);
            assert!((fd - dx.data()[i] as f64).abs() < 1e-2, "{fd} vs {}", dx.data()[i]);
        }
    }
}
