//! Image-shaped ops over NCHW tensors: convolution, transposed convolution,
//! pooling and instance normalization.
//!
//! Convolutions lower to GEMM through an im2col buffer per image; the buffer
//! is kept for the backward pass of `conv2d`.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Source pixel for kernel tap `k` at output coordinate `o`, if in bounds.
    #[inline]
    fn src(&self, o: usize, k: usize, limit: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < limit).then_some(pos as usize)
    }
}

fn im2col<T: Scalar>(src: &[T], g: &Geometry) -> Vec<T> {
    let cols = g.cols();
    let mut out = vec![T::zero(); g.rows() * cols];
    for c in 0..g.channels {
        let plane = &src[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let Some(iy) = g.src(oy, ki, g.height) else {
                        continue;
                    };
                    let line = &plane[iy * g.width..(iy + 1) * g.width];
                    for ox in 0..g.out_w {
                        if let Some(ix) = g.src(ox, kj, g.width) {
                            dst[oy * g.out_w + ox] = line[ix];
                        }
                    }
                }
            }
        }
    }
    out
}

fn col2im_add<T: Scalar>(cols_buf: &[T], g: &Geometry, dst: &mut [T]) {
    let cols = g.cols();
    for c in 0..g.channels {
        let plane = &mut dst[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols_buf[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let Some(iy) = g.src(oy, ki, g.height) else {
                        continue;
                    };
                    for ox in 0..g.out_w {
                        if let Some(ix) = g.src(ox, kj, g.width) {
                            plane[iy * g.width + ix] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

fn expect_rank4<T: Scalar>(op: &'static str, x: &Tensor<T>) -> Result<[usize; 4]> {
    match *x.shape() {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::InvalidShape {
            op,
            shape: x.shape().to_vec(),
            reason: "expected N x C x H x W".into(),
        }),
    }
}

fn check_bias<T: Scalar>(op: &'static str, bias: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    match bias {
        Some(b) if b.shape() != [channels] => Err(Error::ShapeMismatch {
            op,
            lhs: vec![channels],
            rhs: b.shape().to_vec(),
        }),
        _ => Ok(()),
    }
}

fn bias_grad<T: Scalar>(g: &[T], n: usize, channels: usize, plane: usize) -> Vec<T> {
    let mut gb = vec![T::zero(); channels];
    for img in 0..n {
        for (c, acc) in gb.iter_mut().enumerate() {
            let off = (img * channels + c) * plane;
            *acc += g[off..off + plane].iter().copied().sum::<T>();
        }
    }
    gb
}

impl<T: Scalar> Tensor<T> {
    /// 2-D cross-correlation. `weight` is `[C_out, C_in, kh, kw]`.
    pub fn conv2d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor<T>> {
        let [n, cin, h, w] = expect_rank4("conv2d", self)?;
        let [cout, wcin, kh, kw] = expect_rank4("conv2d", weight)?;
        if wcin != cin {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: self.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        if stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::InvalidShape {
                op: "conv2d",
                shape: self.shape().to_vec(),
                reason: format!("kernel {kh}x{kw} with padding {pad} does not fit"),
            });
        }
        check_bias("conv2d", bias, cout)?;
        let geo = Geometry {
            channels: cin,
            height: h,
            width: w,
            kh,
            kw,
            stride,
            pad,
            out_h: (h + 2 * pad - kh) / stride + 1,
            out_w: (w + 2 * pad - kw) / stride + 1,
        };
        let (k, l) = (geo.rows(), geo.cols());
        let in_plane = cin * h * w;
        let mut out = vec![T::zero(); n * cout * l];
        let mut saved_cols = Vec::with_capacity(n);
        for img in 0..n {
            let cols = im2col(&self.data()[img * in_plane..(img + 1) * in_plane], &geo);
            let dst = &mut out[img * cout * l..(img + 1) * cout * l];
            if let Some(b) = bias {
                for (c, &bv) in b.data().iter().enumerate() {
                    dst[c * l..(c + 1) * l].fill(bv);
                }
            }
            T::gemm(
                cout,
                k,
                l,
                T::one(),
                weight.data(),
                k as isize,
                1,
                &cols,
                l as isize,
                1,
                if bias.is_some() { T::one() } else { T::zero() },
                dst,
                l as isize,
                1,
            );
            saved_cols.push(cols);
        }

        let mut parents = vec![self.clone(), weight.clone()];
        parents.extend(bias.cloned());
        let wc = weight.clone();
        Ok(Tensor::from_op(
            "conv2d",
            vec![n, cout, geo.out_h, geo.out_w],
            out,
            parents,
            Box::new(move |g, needs| {
                let gx = needs[0].then(|| {
                    let mut gx = vec![T::zero(); n * in_plane];
                    let mut dcols = vec![T::zero(); k * l];
                    for img in 0..n {
                        let gi = &g[img * cout * l..(img + 1) * cout * l];
                        // W^T [k, cout] x G [cout, l]
                        T::gemm(
                            k,
                            cout,
                            l,
                            T::one(),
                            wc.data(),
                            1,
                            k as isize,
                            gi,
                            l as isize,
                            1,
                            T::zero(),
                            &mut dcols,
                            l as isize,
                            1,
                        );
                        col2im_add(&dcols, &geo, &mut gx[img * in_plane..(img + 1) * in_plane]);
                    }
                    gx
                });
                let gw = needs[1].then(|| {
                    let mut gw = vec![T::zero(); cout * k];
                    for (img, cols) in saved_cols.iter().enumerate() {
                        let gi = &g[img * cout * l..(img + 1) * cout * l];
                        // G [cout, l] x cols^T [l, k]
                        T::gemm(
                            cout,
                            l,
                            k,
                            T::one(),
                            gi,
                            l as isize,
                            1,
                            cols,
                            1,
                            l as isize,
                            T::one(),
                            &mut gw,
                            k as isize,
                            1,
                        );
                    }
                    gw
                });
                let mut grads = vec![gx, gw];
                if needs.len() > 2 {
                    grads.push(needs[2].then(|| bias_grad(g, n, cout, l)));
                }
                grads
            }),
        ))
    }

    /// Transposed convolution (adjoint of `conv2d`). `weight` is
    /// `[C_in, C_out, kh, kw]`; output side is `(H - 1) * stride - 2 * pad + kh`.
    pub fn conv_transpose2d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor<T>> {
        let [n, cin, h, w] = expect_rank4("conv_transpose2d", self)?;
        let [wcin, cout, kh, kw] = expect_rank4("conv_transpose2d", weight)?;
        if wcin != cin {
            return Err(Error::ShapeMismatch {
                op: "conv_transpose2d",
                lhs: self.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        if stride == 0 || (h - 1) * stride + kh <= 2 * pad || (w - 1) * stride + kw <= 2 * pad {
            return Err(Error::InvalidShape {
                op: "conv_transpose2d",
                shape: self.shape().to_vec(),
                reason: format!("padding {pad} leaves no output"),
            });
        }
        check_bias("conv_transpose2d", bias, cout)?;
        let out_h = (h - 1) * stride + kh - 2 * pad;
        let out_w = (w - 1) * stride + kw - 2 * pad;
        // Geometry of the forward conv that maps the output back onto the input grid.
        let geo = Geometry {
            channels: cout,
            height: out_h,
            width: out_w,
            kh,
            kw,
            stride,
            pad,
            out_h: h,
            out_w: w,
        };
        let (k, l) = (geo.rows(), geo.cols());
        let in_plane = cin * l;
        let out_plane = cout * out_h * out_w;
        let mut out = vec![T::zero(); n * out_plane];
        let mut cols = vec![T::zero(); k * l];
        for img in 0..n {
            // W^T [k, cin] x X [cin, l]
            T::gemm(
                k,
                cin,
                l,
                T::one(),
                weight.data(),
                1,
                k as isize,
                &self.data()[img * in_plane..(img + 1) * in_plane],
                l as isize,
                1,
                T::zero(),
                &mut cols,
                l as isize,
                1,
            );
            let dst = &mut out[img * out_plane..(img + 1) * out_plane];
            col2im_add(&cols, &geo, dst);
            if let Some(b) = bias {
                let plane = out_h * out_w;
                for (c, &bv) in b.data().iter().enumerate() {
                    for v in &mut dst[c * plane..(c + 1) * plane] {
                        *v += bv;
                    }
                }
            }
        }

        let mut parents = vec![self.clone(), weight.clone()];
        parents.extend(bias.cloned());
        let (xc, wc) = (self.clone(), weight.clone());
        Ok(Tensor::from_op(
            "conv_transpose2d",
            vec![n, cout, out_h, out_w],
            out,
            parents,
            Box::new(move |g, needs| {
                let mut gx = needs[0].then(|| vec![T::zero(); n * in_plane]);
                let mut gw = needs[1].then(|| vec![T::zero(); cin * k]);
                for img in 0..n {
                    let gcols = im2col(&g[img * out_plane..(img + 1) * out_plane], &geo);
                    if let Some(gx) = gx.as_mut() {
                        // W [cin, k] x gcols [k, l]
                        T::gemm(
                            cin,
                            k,
                            l,
                            T::one(),
                            wc.data(),
                            k as isize,
                            1,
                            &gcols,
                            l as isize,
                            1,
                            T::zero(),
                            &mut gx[img * in_plane..(img + 1) * in_plane],
                            l as isize,
                            1,
                        );
                    }
                    if let Some(gw) = gw.as_mut() {
                        // X [cin, l] x gcols^T [l, k]
                        T::gemm(
                            cin,
                            l,
                            k,
                            T::one(),
                            &xc.data()[img * in_plane..(img + 1) * in_plane],
                            l as isize,
                            1,
                            &gcols,
                            1,
                            l as isize,
                            T::one(),
                            gw,
                            k as isize,
                            1,
                        );
                    }
                }
                let mut grads = vec![gx, gw];
                if needs.len() > 2 {
                    grads.push(needs[2].then(|| bias_grad(g, n, cout, out_h * out_w)));
                }
                grads
            }),
        ))
    }

    /// Non-overlapping average pooling with a `k x k` window.
    pub fn avg_pool2d(&self, k: usize) -> Result<Tensor<T>> {
        let [n, c, h, w] = expect_rank4("avg_pool2d", self)?;
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(Error::InvalidShape {
                op: "avg_pool2d",
                shape: self.shape().to_vec(),
                reason: format!("spatial size not divisible by window {k}"),
            });
        }
        let (oh, ow) = (h / k, w / k);
        let inv = T::one() / T::from_usize(k * k).expect("window fits in float");
        let xs = self.data();
        let mut out = vec![T::zero(); n * c * oh * ow];
        for p in 0..n * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = T::zero();
                    for dy in 0..k {
                        for dx in 0..k {
                            acc += xs[p * h * w + (oy * k + dy) * w + ox * k + dx];
                        }
                    }
                    out[(p * oh + oy) * ow + ox] = acc * inv;
                }
            }
        }
        Ok(Tensor::from_op(
            "avg_pool2d",
            vec![n, c, oh, ow],
            out,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![T::zero(); n * c * h * w];
                for p in 0..n * c {
                    for y in 0..h {
                        for x in 0..w {
                            gx[(p * h + y) * w + x] = g[(p * oh + y / k) * ow + x / k] * inv;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Non-overlapping max pooling with a `k x k` window; ties route the
    /// gradient to the first maximal element in raster order.
    pub fn max_pool2d(&self, k: usize) -> Result<Tensor<T>> {
        let [n, c, h, w] = expect_rank4("max_pool2d", self)?;
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(Error::InvalidShape {
                op: "max_pool2d",
                shape: self.shape().to_vec(),
                reason: format!("spatial size not divisible by window {k}"),
            });
        }
        let (oh, ow) = (h / k, w / k);
        let xs = self.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for p in 0..n * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = (T::neg_infinity(), 0);
                    for dy in 0..k {
                        for dx in 0..k {
                            let idx = p * h * w + (oy * k + dy) * w + ox * k + dx;
                            if xs[idx] > best.0 {
                                best = (xs[idx], idx);
                            }
                        }
                    }
                    out.push(best.0);
                    argmax.push(best.1);
                }
            }
        }
        let total = self.numel();
        Ok(Tensor::from_op(
            "max_pool2d",
            vec![n, c, oh, ow],
            out,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![T::zero(); total];
                for (o, &i) in argmax.iter().enumerate() {
                    gx[i] += g[o];
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Per-image, per-channel normalization to zero mean and unit variance
    /// (biased variance, no affine parameters).
    pub fn instance_norm(&self, eps: T) -> Result<Tensor<T>> {
        let [n, c, h, w] = expect_rank4("instance_norm", self)?;
        let m = h * w;
        let inv_m = T::one() / T::from_usize(m).expect("plane fits in float");
        let xs = self.data();
        let mut out = vec![T::zero(); xs.len()];
        let mut inv_std = vec![T::zero(); n * c];
        for p in 0..n * c {
            let plane = &xs[p * m..(p + 1) * m];
            let mean = plane.iter().copied().sum::<T>() * inv_m;
            let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_m;
            let s = T::one() / (var + eps).sqrt();
            inv_std[p] = s;
            for (o, &v) in out[p * m..(p + 1) * m].iter_mut().zip(plane) {
                *o = (v - mean) * s;
            }
        }
        let normalized = out.clone();
        Ok(Tensor::from_op(
            "instance_norm",
            vec![n, c, h, w],
            out,
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut gx = vec![T::zero(); g.len()];
                for p in 0..n * c {
                    let gp = &g[p * m..(p + 1) * m];
                    let xh = &normalized[p * m..(p + 1) * m];
                    let mean_g = gp.iter().copied().sum::<T>() * inv_m;
                    let mean_gx = gp.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() * inv_m;
                    for i in 0..m {
                        gx[p * m + i] = inv_std[p] * (gp[i] - mean_g - xh[i] * mean_gx);
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }
}
