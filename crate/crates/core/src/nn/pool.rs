use super::{missing_cache, Module, Tensor, TrainCtx, Visitor, VisitorMut};
use crate::error::{Error, Result};

/// Max pooling; padded positions never win.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    kernel: usize,
    stride: usize,
    padding: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
            cache: None,
        }
    }

    fn run(&self, x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        let (n, c, h, w) = x.dims4()?;
        if h + 2 * self.padding < self.kernel || w + 2 * self.padding < self.kernel {
            return Err(Error::Shape(format!("max pool input {h}x{w} too small")));
        }
        let ho = (h + 2 * self.padding - self.kernel) / self.stride + 1;
        let wo = (w + 2 * self.padding - self.kernel) / self.stride + 1;
        let mut out = Tensor::zeros(&[n, c, ho, wo]);
        let mut arg = vec![0usize; n * c * ho * wo];
        let src = x.data();
        let dst = out.data_mut();
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_i = usize::MAX;
                    for ky in 0..self.kernel {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..self.kernel {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let i = base + iy as usize * w + ix as usize;
                            if src[i] > best || best_i == usize::MAX {
                                best = src[i];
                                best_i = i;
                            }
                        }
                    }
                    let o = (plane * ho + oy) * wo + ox;
                    dst[o] = best;
                    arg[o] = best_i;
                }
            }
        }
        Ok((out, arg))
    }
}

impl Module for MaxPool2d {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.run(x).map(|(y, _)| y)
    }

    fn forward_train(&mut self, x: &Tensor, _ctx: &mut TrainCtx) -> Result<Tensor> {
        let (y, arg) = self.run(x)?;
        self.cache = Some((x.shape().to_vec(), arg));
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let (shape, arg) = self.cache.take().ok_or_else(|| missing_cache("max_pool"))?;
        let mut dx = Tensor::zeros(&shape);
        let d = dx.data_mut();
        for (g, &i) in grad.data().iter().zip(&arg) {
            d[i] += g;
        }
        Ok(dx)
    }

    fn visit(&self, _: &str, _: &mut dyn Visitor) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn VisitorMut) {}
}

/// Average pooling onto a fixed output grid (PyTorch bin boundaries).
#[derive(Debug, Clone)]
pub struct AdaptiveAvgPool2d {
    out_h: usize,
    out_w: usize,
    input_shape: Option<Vec<usize>>,
}

fn bins(len: usize, out: usize) -> Vec<(usize, usize)> {
    (0..out)
        .map(|i| (i * len / out, ((i + 1) * len).div_ceil(out)))
        .collect()
}

impl AdaptiveAvgPool2d {
    pub fn new(out_h: usize, out_w: usize) -> Self {
        Self {
            out_h,
            out_w,
            input_shape: None,
        }
    }

    /// Global average pooling.
    pub fn global() -> Self {
        Self::new(1, 1)
    }
}

impl Module for AdaptiveAvgPool2d {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let (by, bx) = (bins(h, self.out_h), bins(w, self.out_w));
        let mut out = Tensor::zeros(&[n, c, self.out_h, self.out_w]);
        let src = x.data();
        let dst = out.data_mut();
        for plane in 0..n * c {
            let base = plane * h * w;
            for (oy, &(y0, y1)) in by.iter().enumerate() {
                for (ox, &(x0, x1)) in bx.iter().enumerate() {
                    let mut acc = 0.0f64;
                    for iy in y0..y1 {
                        for ix in x0..x1 {
                            acc += src[base + iy * w + ix] as f64;
                        }
                    }
                    dst[(plane * self.out_h + oy) * self.out_w + ox] =
                        (acc / ((y1 - y0) * (x1 - x0)) as f64) as f32;
                }
            }
        }
        Ok(out)
    }

    fn forward_train(&mut self, x: &Tensor, _ctx: &mut TrainCtx) -> Result<Tensor> {
        self.input_shape = Some(x.shape().to_vec());
        self.forward(x)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let shape = self.input_shape.take().ok_or_else(|| missing_cache("avg_pool"))?;
        let (h, w) = (shape[2], shape[3]);
        let (by, bx) = (bins(h, self.out_h), bins(w, self.out_w));
        let mut dx = Tensor::zeros(&shape);
        let d = dx.data_mut();
        let g = grad.data();
        for plane in 0..shape[0] * shape[1] {
            let base = plane * h * w;
            for (oy, &(y0, y1)) in by.iter().enumerate() {
                for (ox, &(x0, x1)) in bx.iter().enumerate() {
                    let share = g[(plane * self.out_h + oy) * self.out_w + ox]
                        / ((y1 - y0) * (x1 - x0)) as f32;
                    for iy in y0..y1 {
                        for ix in x0..x1 {
                            d[base + iy * w + ix] += share;
                        }
                    }
                }
            }
        }
        Ok(dx)
    }

    fn visit(&self, _: &str, _: &mut dyn Visitor) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn VisitorMut) {}
}

/// Collapse every axis after the first.
#[derive(Debug, Clone, Default)]
pub struct Flatten {
    input_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Module for Flatten {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let n = x.shape()[0];
        let rest = x.numel() / n.max(1);
        x.clone().reshape(&[n, rest])
    }

    fn forward_train(&mut self, x: &Tensor, _ctx: &mut TrainCtx) -> Result<Tensor> {
        self.input_shape = Some(x.shape().to_vec());
        self.forward(x)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let shape = self.input_shape.take().ok_or_else(|| missing_cache("flatten"))?;
        grad.clone().reshape(&shape)
    }

    fn visit(&self, _: &str, _: &mut dyn Visitor) {}
    fn visit_mut(&mut self, _: &str, _: &mut dyn VisitorMut) {}
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adaptive_bins_follow_pytorch() {
        assert_eq!(bins(7, 7), (0..7).map(|i| (i, i + 1)).collect::<Vec<_>>());
        assert_eq!(bins(5, 3), vec![(0, 2), (1, 4), (3, 5)]);
        assert_eq!(bins(1, 7), vec![(0, 1); 7]);
    }

    #[test]
    fn max_pool_routes_gradient_to_winner() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0, 5.0, 3.0, 2.0]).unwrap();
        let mut p = MaxPool2d::new(2, 2, 0);
        let mut ctx = super::super::TrainCtx {
            rng: rand::SeedableRng::seed_from_u64(0),
        };
        let y = p.forward_train(&x, &mut ctx).unwrap();
        assert_eq!(y.data(), &[5.0]);
        let dx = p.backward(&Tensor::full(&[1, 1, 1, 1], 2.0)).unwrap();
        assert_eq!(dx.data(), &[0.0, 2.0, 0.0, 0.0]);
    }
}
