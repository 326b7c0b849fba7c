//! ResNet-50 (torchvision layout, stride on the 3x3 convolution).

use rand::Rng;

use crate::error::Result;
use crate::nn::{
    join, AdaptiveAvgPool2d, Conv2d, Flatten, MaxPool2d, Module, Norm, NormKind, Relu, Sequential, Tensor, TrainCtx,
    Visitor, VisitorMut,
};

pub const RESNET50_BLOCKS: [usize; 4] = [3, 4, 6, 3];
pub const RESNET50_FEATURES: usize = 2048;
const EXPANSION: usize = 4;

/// conv1x1 -> conv3x3 -> conv1x1 with an identity or projected shortcut.
pub struct Bottleneck {
    conv1: Conv2d,
    bn1: Norm,
    relu1: Relu,
    conv2: Conv2d,
    bn2: Norm,
    relu2: Relu,
    conv3: Conv2d,
    bn3: Norm,
    downsample: Option<(Conv2d, Norm)>,
    relu_out: Relu,
}

impl Bottleneck {
    pub fn new(cin: usize, planes: usize, stride: usize, norm: NormKind, rng: &mut impl Rng) -> Result<Self> {
        let cout = planes * EXPANSION;
        let downsample = if stride != 1 || cin != cout {
            Some((Conv2d::new(cin, cout, 1, stride, 0, 1, false, rng), Norm::new(norm, cout)?))
        } else {
            None
        };
        Ok(Self {
            conv1: Conv2d::new(cin, planes, 1, 1, 0, 1, false, rng),
            bn1: Norm::new(norm, planes)?,
            relu1: Relu::new(),
            conv2: Conv2d::new(planes, planes, 3, stride, 1, 1, false, rng),
            bn2: Norm::new(norm, planes)?,
            relu2: Relu::new(),
            conv3: Conv2d::new(planes, cout, 1, 1, 0, 1, false, rng),
            bn3: Norm::new(norm, cout)?,
            downsample,
            relu_out: Relu::new(),
        })
    }
}

impl Module for Bottleneck {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.relu1.forward(&self.bn1.forward(&self.conv1.forward(x)?)?)?;
        let h = self.relu2.forward(&self.bn2.forward(&self.conv2.forward(&h)?)?)?;
        let mut h = self.bn3.forward(&self.conv3.forward(&h)?)?;
        match &self.downsample {
            Some((c, n)) => h.add_assign(&n.forward(&c.forward(x)?)?)?,
            None => h.add_assign(x)?,
        }
        self.relu_out.forward(&h)
    }

    fn forward_train(&mut self, x: &Tensor, ctx: &mut TrainCtx) -> Result<Tensor> {
        let h = self.conv1.forward_train(x, ctx)?;
        let h = self.relu1.forward_train(&self.bn1.forward_train(&h, ctx)?, ctx)?;
        let h = self.conv2.forward_train(&h, ctx)?;
        let h = self.relu2.forward_train(&self.bn2.forward_train(&h, ctx)?, ctx)?;
        let h = self.conv3.forward_train(&h, ctx)?;
        let mut h = self.bn3.forward_train(&h, ctx)?;
        match &mut self.downsample {
            Some((c, n)) => {
                let s = c.forward_train(x, ctx)?;
                h.add_assign(&n.forward_train(&s, ctx)?)?
            }
            None => h.add_assign(x)?,
        }
        self.relu_out.forward_train(&h, ctx)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let g = self.relu_out.backward(grad)?;
        let skip = match &mut self.downsample {
            Some((c, n)) => c.backward(&n.backward(&g)?)?,
            None => g.clone(),
        };
        let h = self.conv3.backward(&self.bn3.backward(&g)?)?;
        let h = self.conv2.backward(&self.bn2.backward(&self.relu2.backward(&h)?)?)?;
        let mut dx = self.conv1.backward(&self.bn1.backward(&self.relu1.backward(&h)?)?)?;
        dx.add_assign(&skip)?;
        Ok(dx)
    }

    fn visit(&self, path: &str, v: &mut dyn Visitor) {
        self.conv1.visit(&join(path, "conv1"), v);
        self.bn1.visit(&join(path, "bn1"), v);
        self.conv2.visit(&join(path, "conv2"), v);
        self.bn2.visit(&join(path, "bn2"), v);
        self.conv3.visit(&join(path, "conv3"), v);
        self.bn3.visit(&join(path, "bn3"), v);
        if let Some((c, n)) = &self.downsample {
            c.visit(&join(path, "downsample.0"), v);
            n.visit(&join(path, "downsample.1"), v);
        }
    }

    fn visit_mut(&mut self, path: &str, v: &mut dyn VisitorMut) {
        self.conv1.visit_mut(&join(path, "conv1"), v);
        self.bn1.visit_mut(&join(path, "bn1"), v);
        self.conv2.visit_mut(&join(path, "conv2"), v);
        self.bn2.visit_mut(&join(path, "bn2"), v);
        self.conv3.visit_mut(&join(path, "conv3"), v);
        self.bn3.visit_mut(&join(path, "bn3"), v);
        if let Some((c, n)) = &mut self.downsample {
            c.visit_mut(&join(path, "downsample.0"), v);
            n.visit_mut(&join(path, "downsample.1"), v);
        }
    }
}

/// Everything up to the pooled 2048-d feature vector.
pub fn resnet50_backbone(norm: NormKind, rng: &mut impl Rng) -> Result<Sequential> {
    let mut net = Sequential::new()
        .with("conv1", Conv2d::new(3, 64, 7, 2, 3, 1, false, rng))
        .with("bn1", Norm::new(norm, 64)?)
        .with("relu", Relu::new())
        .with("maxpool", MaxPool2d::new(3, 2, 1));
    let mut cin = 64;
    for (stage, (&blocks, planes)) in RESNET50_BLOCKS.iter().zip([64, 128, 256, 512]).enumerate() {
        let mut layer = Sequential::new();
        for b in 0..blocks {
            let stride = if b == 0 && stage > 0 { 2 } else { 1 };
            layer.push(b.to_string(), Bottleneck::new(cin, planes, stride, norm, rng)?);
            cin = planes * EXPANSION;
        }
        net.push(format!("layer{}", stage + 1), layer);
    }
    net.push("avgpool", AdaptiveAvgPool2d::global());
    net.push("flatten", Flatten::new());
    Ok(net)
}
