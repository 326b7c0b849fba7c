use rand::Rng;

use super::gemm::{gemm, MatRef};
use super::{init, join, missing_cache, Module, Param, Tensor, TrainCtx, Visitor, VisitorMut};
use crate::error::{Error, Result};

/// Upper bound on the im2col scratch buffer, in elements.
const COLS_BUDGET: usize = 8 << 20;

/// 2-D convolution with square kernels, zero padding and channel groups.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    stride: usize,
    padding: usize,
    groups: usize,
    input: Option<Tensor>,
}

struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    ho: usize,
    wo: usize,
}

impl Conv2d {
    pub fn new(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(groups > 0 && cin % groups == 0 && cout % groups == 0);
        let shape = [cout, cin / groups, kernel, kernel];
        let fan_in = cin / groups * kernel * kernel;
        Self {
            weight: Param::new(init::kaiming_normal_fan_out(&shape, rng)),
            bias: bias.then(|| Param::new(init::uniform_fan_in(&[cout], fan_in, rng))),
            stride,
            padding,
            groups,
            input: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1] * self.groups
    }

    fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    fn geometry(&self, x: &Tensor) -> Result<Geometry> {
        let (n, cin, h, w) = x.dims4()?;
        if cin != self.in_channels() {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {cin}",
                self.in_channels()
            )));
        }
        let k = self.kernel();
        if h + 2 * self.padding < k || w + 2 * self.padding < k {
            return Err(Error::Shape(format!(
                "input {h}x{w} smaller than kernel {k} with padding {}",
                self.padding
            )));
        }
        Ok(Geometry {
            n,
            cin,
            h,
            w,
            cout: self.out_channels(),
            k,
            ho: (h + 2 * self.padding - k) / self.stride + 1,
            wo: (w + 2 * self.padding - k) / self.stride + 1,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.kernel() == 1 && self.stride == 1 && self.padding == 0 && self.groups == 1
    }

    fn is_depthwise(&self) -> bool {
        self.groups > 1 && self.weight.shape()[1] == 1 && self.groups == self.out_channels()
    }

    fn chunk_len(&self, g: &Geometry) -> usize {
        let rows = g.cin / self.groups * g.k * g.k;
        (COLS_BUDGET / (rows * g.ho * g.wo).max(1)).clamp(1, g.n.max(1))
    }

    /// im2col for samples `s0..s0+ns` of group `grp`: `[cin_g*k*k, ns*ho*wo]`.
    fn im2col(&self, x: &[f32], g: &Geometry, grp: usize, s0: usize, ns: usize, cols: &mut [f32]) {
        let cin_g = g.cin / self.groups;
        let p = g.ho * g.wo;
        let width = ns * p;
        for ci in 0..cin_g {
            let c = grp * cin_g + ci;
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let row = (ci * g.k + ky) * g.k + kx;
                    let dst = &mut cols[row * width..(row + 1) * width];
                    for sl in 0..ns {
                        let plane = &x[((s0 + sl) * g.cin + c) * g.h * g.w..][..g.h * g.w];
                        for oy in 0..g.ho {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            let out_row = &mut dst[sl * p + oy * g.wo..sl * p + (oy + 1) * g.wo];
                            if iy < 0 || iy >= g.h as isize {
                                out_row.fill(0.0);
                                continue;
                            }
                            let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                            for (ox, o) in out_row.iter_mut().enumerate() {
                                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                                *o = if ix < 0 || ix >= g.w as isize {
                                    0.0
                                } else {
                                    src_row[ix as usize]
                                };
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f32], g: &Geometry, grp: usize, s0: usize, ns: usize, dx: &mut [f32]) {
        let cin_g = g.cin / self.groups;
        let p = g.ho * g.wo;
        let width = ns * p;
        for ci in 0..cin_g {
            let c = grp * cin_g + ci;
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let row = (ci * g.k + ky) * g.k + kx;
                    let src = &cols[row * width..(row + 1) * width];
                    for sl in 0..ns {
                        let plane = &mut dx[((s0 + sl) * g.cin + c) * g.h * g.w..][..g.h * g.w];
                        for oy in 0..g.ho {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            if iy < 0 || iy >= g.h as isize {
                                continue;
                            }
                            let base = iy as usize * g.w;
                            for ox in 0..g.wo {
                                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                                if ix >= 0 && (ix as usize) < g.w {
                                    plane[base + ix as usize] += src[sl * p + oy * g.wo + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn forward_impl(&self, x: &Tensor) -> Result<Tensor> {
        let g = self.geometry(x)?;
        let mut out = Tensor::zeros(&[g.n, g.cout, g.ho, g.wo]);
        let p = g.ho * g.wo;
        let xd = x.data();
        let wd = self.weight.value.data();
        if self.is_depthwise() {
            self.depthwise_forward(xd, &g, out.data_mut());
        } else if self.is_pointwise() {
            let wm = MatRef::new(wd, g.cout, g.cin);
            let od = out.data_mut();
            for s in 0..g.n {
                let xs = MatRef::new(&xd[s * g.cin * p..(s + 1) * g.cin * p], g.cin, p);
                gemm(wm, xs, &mut od[s * g.cout * p..(s + 1) * g.cout * p], false);
            }
        } else {
            let cin_g = g.cin / self.groups;
            let cout_g = g.cout / self.groups;
            let rows = cin_g * g.k * g.k;
            let chunk = self.chunk_len(&g);
            let mut cols = vec![0.0f32; rows * chunk * p];
            let mut prod = vec![0.0f32; cout_g * chunk * p];
            let od = out.data_mut();
            for s0 in (0..g.n).step_by(chunk) {
                let ns = chunk.min(g.n - s0);
                let width = ns * p;
                for grp in 0..self.groups {
                    self.im2col(xd, &g, grp, s0, ns, &mut cols[..rows * width]);
                    let wm = MatRef::new(&wd[grp * cout_g * rows..(grp + 1) * cout_g * rows], cout_g, rows);
                    gemm(wm, MatRef::new(&cols[..rows * width], rows, width), &mut prod[..cout_g * width], false);
                    for o in 0..cout_g {
                        for sl in 0..ns {
                            let dst = ((s0 + sl) * g.cout + grp * cout_g + o) * p;
                            od[dst..dst + p].copy_from_slice(&prod[o * width + sl * p..o * width + (sl + 1) * p]);
                        }
                    }
                }
            }
        }
        if let Some(b) = &self.bias {
            let bd = b.value.data();
            for (i, plane) in out.data_mut().chunks_mut(p).enumerate() {
                let bias = bd[i % g.cout];
                plane.iter_mut().for_each(|v| *v += bias);
            }
        }
        Ok(out)
    }

    fn depthwise_forward(&self, xd: &[f32], g: &Geometry, od: &mut [f32]) {
        let wd = self.weight.value.data();
        let kk = g.k * g.k;
        for s in 0..g.n {
            for c in 0..g.cin {
                let plane = &xd[(s * g.cin + c) * g.h * g.w..][..g.h * g.w];
                let wk = &wd[c * kk..(c + 1) * kk];
                let out = &mut od[(s * g.cout + c) * g.ho * g.wo..][..g.ho * g.wo];
                for oy in 0..g.ho {
                    for ox in 0..g.wo {
                        let mut acc = 0.0f32;
                        for ky in 0..g.k {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            if iy < 0 || iy >= g.h as isize {
                                continue;
                            }
                            for kx in 0..g.k {
                                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                                if ix >= 0 && (ix as usize) < g.w {
                                    acc += wk[ky * g.k + kx] * plane[iy as usize * g.w + ix as usize];
                                }
                            }
                        }
                        out[oy * g.wo + ox] = acc;
                    }
                }
            }
        }
    }

    fn depthwise_backward(&mut self, xd: &[f32], gd: &[f32], g: &Geometry, dx: &mut [f32]) {
        let kk = g.k * g.k;
        let need_w = self.weight.trainable;
        let wd = self.weight.value.data().to_vec();
        let mut dw = vec![0.0f32; wd.len()];
        for s in 0..g.n {
            for c in 0..g.cin {
                let plane = &xd[(s * g.cin + c) * g.h * g.w..][..g.h * g.w];
                let dplane = &mut dx[(s * g.cin + c) * g.h * g.w..][..g.h * g.w];
                let gout = &gd[(s * g.cout + c) * g.ho * g.wo..][..g.ho * g.wo];
                for oy in 0..g.ho {
                    for ox in 0..g.wo {
                        let go = gout[oy * g.wo + ox];
                        for ky in 0..g.k {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            if iy < 0 || iy >= g.h as isize {
                                continue;
                            }
                            for kx in 0..g.k {
                                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                                if ix >= 0 && (ix as usize) < g.w {
                                    let idx = iy as usize * g.w + ix as usize;
                                    dplane[idx] += wd[c * kk + ky * g.k + kx] * go;
                                    dw[c * kk + ky * g.k + kx] += plane[idx] * go;
                                }
                            }
                        }
                    }
                }
            }
        }
        if need_w {
            for (a, b) in self.weight.grad_mut().iter_mut().zip(&dw) {
                *a += b;
            }
        }
    }
}

impl Module for Conv2d {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_impl(x)
    }

    fn forward_train(&mut self, x: &Tensor, _ctx: &mut TrainCtx) -> Result<Tensor> {
        let y = self.forward_impl(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let x = self.input.take().ok_or_else(|| missing_cache("conv2d"))?;
        let g = self.geometry(&x)?;
        let p = g.ho * g.wo;
        if grad.shape() != [g.n, g.cout, g.ho, g.wo] {
            return Err(Error::Shape(format!(
                "conv gradient {:?} does not match output {:?}",
                grad.shape(),
                [g.n, g.cout, g.ho, g.wo]
            )));
        }
        let gd = grad.data();
        let xd = x.data();
        if let Some(b) = self.bias.as_mut().filter(|b| b.trainable) {
            let bg = b.grad_mut();
            for (i, plane) in gd.chunks(p).enumerate() {
                bg[i % g.cout] += plane.iter().sum::<f32>();
            }
        }
        let mut dx = Tensor::zeros(x.shape());
        if self.is_depthwise() {
            self.depthwise_backward(xd, gd, &g, dx.data_mut());
            return Ok(dx);
        }
        let need_w = self.weight.trainable;
        let wd = self.weight.value.data().to_vec();
        if self.is_pointwise() {
            let wm = MatRef::new(&wd, g.cout, g.cin);
            let mut dw = vec![0.0f32; wd.len()];
            let dxd = dx.data_mut();
            for s in 0..g.n {
                let gs = MatRef::new(&gd[s * g.cout * p..(s + 1) * g.cout * p], g.cout, p);
                let xs = MatRef::new(&xd[s * g.cin * p..(s + 1) * g.cin * p], g.cin, p);
                if need_w {
                    gemm(gs, xs.t(), &mut dw, true);
                }
                gemm(wm.t(), gs, &mut dxd[s * g.cin * p..(s + 1) * g.cin * p], false);
            }
            if need_w {
                for (a, b) in self.weight.grad_mut().iter_mut().zip(&dw) {
                    *a += b;
                }
            }
            return Ok(dx);
        }
        let cin_g = g.cin / self.groups;
        let cout_g = g.cout / self.groups;
        let rows = cin_g * g.k * g.k;
        let chunk = self.chunk_len(&g);
        let mut cols = vec![0.0f32; rows * chunk * p];
        let mut gsub = vec![0.0f32; cout_g * chunk * p];
        let mut dw = vec![0.0f32; if need_w { wd.len() } else { 0 }];
        for s0 in (0..g.n).step_by(chunk) {
            let ns = chunk.min(g.n - s0);
            let width = ns * p;
            for grp in 0..self.groups {
                for o in 0..cout_g {
                    for sl in 0..ns {
                        let src = ((s0 + sl) * g.cout + grp * cout_g + o) * p;
                        gsub[o * width + sl * p..o * width + (sl + 1) * p].copy_from_slice(&gd[src..src + p]);
                    }
                }
                let gm = MatRef::new(&gsub[..cout_g * width], cout_g, width);
                let wrange = grp * cout_g * rows..(grp + 1) * cout_g * rows;
                if need_w {
                    self.im2col(xd, &g, grp, s0, ns, &mut cols[..rows * width]);
                    gemm(gm, MatRef::new(&cols[..rows * width], rows, width).t(), &mut dw[wrange.clone()], true);
                }
                let wm = MatRef::new(&wd[wrange], cout_g, rows);
                gemm(wm.t(), gm, &mut cols[..rows * width], false);
                self.col2im(&cols[..rows * width], &g, grp, s0, ns, dx.data_mut());
            }
        }
        if need_w {
            for (a, b) in self.weight.grad_mut().iter_mut().zip(&dw) {
                *a += b;
            }
        }
        Ok(dx)
    }

    fn visit(&self, path: &str, v: &mut dyn Visitor) {
        v.weight_layer(path);
        v.param(&join(path, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            v.param(&join(path, "bias"), b);
        }
    }

    fn visit_mut(&mut self, path: &str, v: &mut dyn VisitorMut) {
        v.weight_layer(path);
        v.param(&join(path, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            v.param(&join(path, "bias"), b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct six-loop convolution used as the reference.
    fn reference(conv: &Conv2d, x: &Tensor) -> Tensor {
        let (n, cin, h, w) = x.dims4().unwrap();
        let cout = conv.out_channels();
        let k = conv.kernel();
        let (s, pad, groups) = (conv.stride, conv.padding, conv.groups);
        let ho = (h + 2 * pad - k) / s + 1;
        let wo = (w + 2 * pad - k) / s + 1;
        let cin_g = cin / groups;
        let cout_g = cout / groups;
        let wd = conv.weight.value.data();
        Tensor::from_fn(&[n, cout, ho, wo], |idx| {
            let ox = idx % wo;
            let oy = idx / wo % ho;
            let co = idx / (wo * ho) % cout;
            let b = idx / (wo * ho * cout);
            let grp = co / cout_g;
            let mut acc = conv.bias.as_ref().map_or(0.0, |b| b.value.data()[co]);
            for ci in 0..cin_g {
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * s + ky) as isize - pad as isize;
                        let ix = (ox * s + kx) as isize - pad as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            acc += wd[((co * cin_g + ci) * k + ky) * k + kx]
                                * x.data()[((b * cin + grp * cin_g + ci) * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
            }
            acc
        })
    }

    fn check(cin: usize, cout: usize, k: usize, s: usize, p: usize, groups: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut conv = Conv2d::new(cin, cout, k, s, p, groups, true, &mut rng);
        let x = init::normal(&[2, cin, 7, 6], 1.0, &mut rng);
        let y = conv.forward(&x).unwrap();
        let want = reference(&conv, &x);
        assert_eq!(y.shape(), want.shape());
        for (a, b) in y.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
        // gradient check against the reference on a linear functional
        let wgt = init::normal(y.shape(), 1.0, &mut rng);
        let mut ctx = TrainCtx { rng: ChaCha8Rng::seed_from_u64(0) };
        conv.forward_train(&x, &mut ctx).unwrap();
        let dx = conv.backward(&wgt).unwrap();
        let f = |c: &Conv2d, t: &Tensor| -> f64 {
            reference(c, t).data().iter().zip(wgt.data()).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
        };
        let h = 1e-2;
        for i in [0, 13, x.numel() - 1] {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (f(&conv, &xp) - f(&conv, &xm)) / (2.0 * h as f64);
            assert!((fd - dx.data()[i] as f64).abs() < 1e-2, "dx {fd} vs {}", dx.data()[i]);
        }
        let dw = conv.weight.grad().unwrap().clone();
        for i in [0, dw.numel() / 2, dw.numel() - 1] {
            let mut cp = conv.clone();
            cp.weight.value.data_mut()[i] += h;
            let mut cm = conv.clone();
            cm.weight.value.data_mut()[i] -= h;
            let fd = (f(&cp, &x) - f(&cm, &x)) / (2.0 * h as f64);
            assert!((fd - dw.data()[i] as f64).abs() < 1e-2, "dw {fd} vs {}", dw.data()[i]);
        }
    }

    #[test]
    fn general_conv_matches_reference() {
        check(3, 4, 3, 1, 1, 1);
        check(4, 6, 3, 2, 1, 2);
        check(3, 5, 7, 2, 3, 1);
    }

    #[test]
    fn pointwise_and_depthwise_paths_match_reference() {
        check(4, 6, 1, 1, 0, 1);
        check(4, 4, 7, 1, 3, 4);
        check(5, 3, 1, 2, 0, 1);
    }

    #[test]
    fn frozen_weight_gets_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv2d::new(2, 2, 3, 1, 1, 1, false, &mut rng);
        conv.weight.trainable = false;
        let x = init::normal(&[1, 2, 4, 4], 1.0, &mut rng);
        let mut ctx = TrainCtx { rng };
        let y = conv.forward_train(&x, &mut ctx).unwrap();
        conv.backward(&y).unwrap();
        assert!(conv.weight.grad().is_none());
    }
}
