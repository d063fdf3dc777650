//! 2-D convolution with stride, asymmetric padding and channel groups.
//!
//! The general path lowers a chunk of samples to one column matrix and runs
//! a single GEMM per group, which keeps the GEMM wide even when feature maps
//! are small. The backward pass recomputes column matrices from the cached
//! input rather than holding them. Depthwise convolutions (one filter per
//! channel) use direct loops with a bounds-check-free interior span.

use super::{init_uniform, join, Layer, Param};
use crate::rng::Stream;
use crate::tensor::{matmul, matmul_a_bt, matmul_at_b, Tensor};

/// Column-matrix budget per chunk, in f32 elements (128 MB).
const COL_BUDGET: usize = 32 * 1024 * 1024;

pub struct Conv2d {
    weight: Param,
    bias: Option<Param>,
    in_channels: usize,
    out_channels: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
    groups: usize,
    cached_input: Option<Tensor>,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        groups: usize,
        bias: bool,
        rng: &mut Stream,
    ) -> Self {
        assert!(in_channels >= 1 && out_channels >= 1);
        assert!(in_channels.is_multiple_of(groups) && out_channels.is_multiple_of(groups));
        let cg = in_channels / groups;
        let fan_in = cg * kernel.0 * kernel.1;
        let weight = Param::new(init_uniform(
            &[out_channels, cg, kernel.0, kernel.1],
            fan_in,
            rng,
        ));
        let bias = bias.then(|| Param::new(Tensor::zeros(&[out_channels])));
        Conv2d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            groups,
            cached_input: None,
        }
    }

    /// Square-kernel convenience constructor.
    pub fn square(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut Stream,
    ) -> Self {
        Conv2d::new(
            in_channels,
            out_channels,
            (kernel, kernel),
            (stride, stride),
            (padding, padding),
            1,
            bias,
            rng,
        )
    }

    pub fn out_spatial(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.padding.0 - self.kernel.0) / self.stride.0 + 1;
        let ow = (w + 2 * self.padding.1 - self.kernel.1) / self.stride.1 + 1;
        (oh, ow)
    }

    fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.out_channels == self.in_channels
    }

    fn chunk_size(&self, n: usize, k: usize, ohw: usize) -> usize {
        (COL_BUDGET / (k * ohw)).clamp(1, n)
    }

    fn forward_impl(&self, x: &Tensor) -> Tensor {
        let (n, c, h, w) = x.dims4();
        assert_eq!(c, self.in_channels, "conv input channels");
        let (oh, ow) = self.out_spatial(h, w);
        assert!(oh >= 1 && ow >= 1, "conv output collapsed to zero size");
        let mut out = Tensor::zeros(&[n, self.out_channels, oh, ow]);

        if self.is_depthwise() {
            self.forward_depthwise(x, &mut out, oh, ow);
        } else {
            let cg = self.in_channels / self.groups;
            let og = self.out_channels / self.groups;
            let k = cg * self.kernel.0 * self.kernel.1;
            let ohw = oh * ow;
            let chunk = self.chunk_size(n, k, ohw);
            let mut col = vec![0.0f32; k * chunk * ohw];
            let mut out_lin = vec![0.0f32; og * chunk * ohw];
            let mut start = 0usize;
            while start < n {
                let cb = chunk.min(n - start);
                for g in 0..self.groups {
                    self.im2col_chunk(x, start, cb, g * cg, cg, oh, ow, &mut col);
                    let w_g = &self.weight.value.data()[g * og * k..(g + 1) * og * k];
                    matmul(og, k, cb * ohw, w_g, &col[..k * cb * ohw], &mut out_lin[..og * cb * ohw], false);
                    // scatter [og, cb*ohw] rows into NCHW output
                    let od = out.data_mut();
                    for oc in 0..og {
                        for s in 0..cb {
                            let src = &out_lin[oc * cb * ohw + s * ohw..oc * cb * ohw + (s + 1) * ohw];
                            let dst_off = ((start + s) * self.out_channels + g * og + oc) * ohw;
                            od[dst_off..dst_off + ohw].copy_from_slice(src);
                        }
                    }
                }
                start += cb;
            }
        }

        if let Some(b) = &self.bias {
            let plane = oh * ow;
            let od = out.data_mut();
            for i in 0..n {
                for oc in 0..self.out_channels {
                    let bv = b.value.data()[oc];
                    let off = (i * self.out_channels + oc) * plane;
                    for v in &mut od[off..off + plane] {
                        *v += bv;
                    }
                }
            }
        }
        out
    }

    fn forward_depthwise(&self, x: &Tensor, out: &mut Tensor, oh: usize, ow: usize) {
        let (n, c, h, w) = x.dims4();
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        let xd = x.data();
        let wd = self.weight.value.data();

        let compute_plane = |i: usize, ch: usize, plane: &mut [f32]| {
            let x_off = (i * c + ch) * h * w;
            let w_off = ch * kh * kw;
            let kernel = &wd[w_off..w_off + kh * kw];
            for oy in 0..oh {
                let iy0 = (oy * sh) as isize - ph as isize;
                let full_y = iy0 >= 0 && iy0 + kh as isize <= h as isize;
                // widest run of ox where every x tap is in range
                let ox_lo = pw.div_ceil(sw).min(ow);
                let ox_hi = if w + pw >= kw {
                    (((w + pw - kw) / sw) + 1).min(ow)
                } else {
                    0
                };
                let row_out = &mut plane[oy * ow..(oy + 1) * ow];
                if full_y && ox_lo < ox_hi {
                    for ox in 0..ox_lo {
                        row_out[ox] = self.dw_tap_checked(xd, x_off, kernel, h, w, oy, ox);
                    }
                    let iy0 = iy0 as usize;
                    for ox in ox_lo..ox_hi {
                        let ix0 = ox * sw - pw;
                        let mut acc = 0.0f32;
                        for ky in 0..kh {
                            let src = &xd[x_off + (iy0 + ky) * w + ix0..];
                            let ker = &kernel[ky * kw..(ky + 1) * kw];
                            for kx in 0..kw {
                                acc += ker[kx] * src[kx];
                            }
                        }
                        row_out[ox] = acc;
                    }
                    for ox in ox_hi..ow {
                        row_out[ox] = self.dw_tap_checked(xd, x_off, kernel, h, w, oy, ox);
                    }
                } else {
                    for ox in 0..ow {
                        row_out[ox] = self.dw_tap_checked(xd, x_off, kernel, h, w, oy, ox);
                    }
                }
            }
        };

        let planes: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (0..c).map(move |ch| (i, ch)))
            .collect();
        let plane_len = oh * ow;
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            out.data_mut()
                .par_chunks_mut(plane_len)
                .zip(planes.par_iter())
                .for_each(|(plane, &(i, ch))| compute_plane(i, ch, plane));
        }
        #[cfg(not(feature = "parallel"))]
        {
            for (plane, &(i, ch)) in out.data_mut().chunks_mut(plane_len).zip(planes.iter()) {
                compute_plane(i, ch, plane);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    #[inline]
    fn dw_tap_checked(
        &self,
        xd: &[f32],
        x_off: usize,
        kernel: &[f32],
        h: usize,
        w: usize,
        oy: usize,
        ox: usize,
    ) -> f32 {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        let mut acc = 0.0f32;
        for ky in 0..kh {
            let iy = (oy * sh + ky) as isize - ph as isize;
            if iy < 0 || iy >= h as isize {
                continue;
            }
            for kx in 0..kw {
                let ix = (ox * sw + kx) as isize - pw as isize;
                if ix < 0 || ix >= w as isize {
                    continue;
                }
                acc += kernel[ky * kw + kx] * xd[x_off + iy as usize * w + ix as usize];
            }
        }
        acc
    }

    /// Lowers samples `[start, start+cb)`, channel slab `[c0, c0+cg)`, to a
    /// column matrix of shape `[cg*kh*kw, cb*oh*ow]` with columns ordered
    /// (sample, position).
    #[allow(clippy::too_many_arguments)]
    fn im2col_chunk(
        &self,
        x: &Tensor,
        start: usize,
        cb: usize,
        c0: usize,
        cg: usize,
        oh: usize,
        ow: usize,
        col: &mut [f32],
    ) {
        let (_, c, h, w) = x.dims4();
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        let xd = x.data();
        let ohw = oh * ow;
        let row_len = cb * ohw;
        let one_to_one = kh == 1 && kw == 1 && sh == 1 && sw == 1 && ph == 0 && pw == 0;
        if one_to_one {
            // 1x1 convolution: each column row is the channel plane itself
            for cc in 0..cg {
                let dst = &mut col[cc * row_len..(cc + 1) * row_len];
                for s in 0..cb {
                    let x_off = ((start + s) * c + c0 + cc) * h * w;
                    dst[s * ohw..(s + 1) * ohw].copy_from_slice(&xd[x_off..x_off + ohw]);
                }
            }
            return;
        }
        let mut row = 0usize;
        for cc in 0..cg {
            for ky in 0..kh {
                for kx in 0..kw {
                    let dst = &mut col[row * row_len..(row + 1) * row_len];
                    row += 1;
                    for s in 0..cb {
                        let x_off = ((start + s) * c + c0 + cc) * h * w;
                        let sample_dst = &mut dst[s * ohw..(s + 1) * ohw];
                        for oy in 0..oh {
                            let iy = (oy * sh + ky) as isize - ph as isize;
                            let drow = &mut sample_dst[oy * ow..(oy + 1) * ow];
                            if iy < 0 || iy >= h as isize {
                                drow.iter_mut().for_each(|v| *v = 0.0);
                                continue;
                            }
                            let src_row = x_off + iy as usize * w;
                            // contiguous interior copy where no x tap pads
                            let ox_lo = (pw.saturating_sub(kx)).div_ceil(sw).min(ow);
                            let ox_hi = if w + pw > kx {
                                (((w + pw - kx - 1) / sw) + 1).min(ow)
                            } else {
                                0
                            };
                            for (ox, d) in drow.iter_mut().enumerate().take(ox_lo.min(ow)) {
                                let ix = (ox * sw + kx) as isize - pw as isize;
                                *d = if ix < 0 { 0.0 } else { xd[src_row + ix as usize] };
                            }
                            if sw == 1 && ox_lo < ox_hi {
                                let ix0 = ox_lo + kx - pw;
                                drow[ox_lo..ox_hi]
                                    .copy_from_slice(&xd[src_row + ix0..src_row + ix0 + (ox_hi - ox_lo)]);
                            } else {
                                for ox in ox_lo..ox_hi {
                                    let ix = ox * sw + kx - pw;
                                    drow[ox] = xd[src_row + ix];
                                }
                            }
                            for ox in ox_hi..ow {
                                let ix = (ox * sw + kx) as isize - pw as isize;
                                drow[ox] = if ix >= w as isize { 0.0 } else { xd[src_row + ix as usize] };
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds a chunk's column-matrix gradient back into the input
    /// gradient; the inverse indexing of [`Self::im2col_chunk`].
    #[allow(clippy::too_many_arguments)]
    fn col2im_chunk(
        &self,
        dcol: &[f32],
        start: usize,
        cb: usize,
        c0: usize,
        cg: usize,
        oh: usize,
        ow: usize,
        dx: &mut Tensor,
    ) {
        let (_, c, h, w) = dx.dims4();
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        let dxd = dx.data_mut();
        let ohw = oh * ow;
        let row_len = cb * ohw;
        let mut row = 0usize;
        for cc in 0..cg {
            for ky in 0..kh {
                for kx in 0..kw {
                    let src_all = &dcol[row * row_len..(row + 1) * row_len];
                    row += 1;
                    for s in 0..cb {
                        let x_off = ((start + s) * c + c0 + cc) * h * w;
                        let src = &src_all[s * ohw..(s + 1) * ohw];
                        for oy in 0..oh {
                            let iy = (oy * sh + ky) as isize - ph as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let dst_row = x_off + iy as usize * w;
                            for ox in 0..ow {
                                let ix = (ox * sw + kx) as isize - pw as isize;
                                if ix >= 0 && ix < w as isize {
                                    dxd[dst_row + ix as usize] += src[oy * ow + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn backward_depthwise(&mut self, x: &Tensor, grad: &Tensor) -> Tensor {
        let (n, c, h, w) = x.dims4();
        let (_, _, oh, ow) = grad.dims4();
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        let mut dx = Tensor::zeros(x.shape());
        let xd = x.data();
        let gd = grad.data();
        let wd = self.weight.value.data();
        let dwd = self.weight.grad.data_mut();
        let dxd = dx.data_mut();
        let ox_lo = pw.div_ceil(sw).min(ow);
        let ox_hi = if w + pw >= kw {
            (((w + pw - kw) / sw) + 1).min(ow)
        } else {
            0
        };
        let mut wacc = vec![0.0f32; kh * kw];
        for i in 0..n {
            for ch in 0..c {
                let x_off = (i * c + ch) * h * w;
                let g_off = (i * c + ch) * oh * ow;
                let w_off = ch * kh * kw;
                let kernel = &wd[w_off..w_off + kh * kw];
                wacc.iter_mut().for_each(|v| *v = 0.0);
                for oy in 0..oh {
                    let iy0 = (oy * sh) as isize - ph as isize;
                    let full_y = iy0 >= 0 && iy0 + kh as isize <= h as isize;
                    let grow = &gd[g_off + oy * ow..g_off + (oy + 1) * ow];
                    let (edge_lo, edge_hi) = if full_y && ox_lo < ox_hi {
                        (ox_lo, ox_hi)
                    } else {
                        (0, 0)
                    };
                    // bounds-checked edges
                    for ox in (0..edge_lo).chain(edge_hi..ow) {
                        let g = grow[ox];
                        if g == 0.0 {
                            continue;
                        }
                        for ky in 0..kh {
                            let iy = (oy * sh + ky) as isize - ph as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * sw + kx) as isize - pw as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let xi = x_off + iy as usize * w + ix as usize;
                                wacc[ky * kw + kx] += g * xd[xi];
                                dxd[xi] += g * kernel[ky * kw + kx];
                            }
                        }
                    }
                    if edge_lo < edge_hi {
                        let iy0 = iy0 as usize;
                        for ox in edge_lo..edge_hi {
                            let g = grow[ox];
                            if g == 0.0 {
                                continue;
                            }
                            let ix0 = ox * sw - pw;
                            for ky in 0..kh {
                                let base = x_off + (iy0 + ky) * w + ix0;
                                for kx in 0..kw {
                                    wacc[ky * kw + kx] += g * xd[base + kx];
                                    dxd[base + kx] += g * kernel[ky * kw + kx];
                                }
                            }
                        }
                    }
                }
                for t in 0..kh * kw {
                    dwd[w_off + t] += wacc[t];
                }
            }
        }
        dx
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, x: Tensor, train: bool) -> Tensor {
        let out = self.forward_impl(&x);
        self.cached_input = train.then_some(x);
        out
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let x = self.cached_input.take().expect("conv backward without train forward");
        let (n, _, _, _) = x.dims4();
        let (_, _, oh, ow) = grad.dims4();

        if let Some(b) = &mut self.bias {
            let plane = oh * ow;
            let gd = grad.data();
            let bg = b.grad.data_mut();
            for i in 0..n {
                for oc in 0..self.out_channels {
                    let off = (i * self.out_channels + oc) * plane;
                    bg[oc] += gd[off..off + plane].iter().sum::<f32>();
                }
            }
        }

        if self.is_depthwise() {
            return self.backward_depthwise(&x, &grad);
        }

        let cg = self.in_channels / self.groups;
        let og = self.out_channels / self.groups;
        let k = cg * self.kernel.0 * self.kernel.1;
        let ohw = oh * ow;
        let chunk = self.chunk_size(n, k.max(og), ohw);
        let mut col = vec![0.0f32; k * chunk * ohw];
        let mut dcol = vec![0.0f32; k * chunk * ohw];
        let mut g_lin = vec![0.0f32; og * chunk * ohw];
        let mut dx = Tensor::zeros(x.shape());
        let mut start = 0usize;
        while start < n {
            let cb = chunk.min(n - start);
            for g in 0..self.groups {
                self.im2col_chunk(&x, start, cb, g * cg, cg, oh, ow, &mut col);
                // gather NCHW grad rows into [og, cb*ohw]
                for oc in 0..og {
                    for s in 0..cb {
                        let src_off = ((start + s) * self.out_channels + g * og + oc) * ohw;
                        g_lin[oc * cb * ohw + s * ohw..oc * cb * ohw + (s + 1) * ohw]
                            .copy_from_slice(&grad.data()[src_off..src_off + ohw]);
                    }
                }
                // dW[og,k] += dOut[og,cb*ohw] * col[k,cb*ohw]^T
                matmul_a_bt(
                    og,
                    cb * ohw,
                    k,
                    &g_lin[..og * cb * ohw],
                    &col[..k * cb * ohw],
                    &mut self.weight.grad.data_mut()[g * og * k..(g + 1) * og * k],
                    true,
                );
                // dcol[k,cb*ohw] = W[og,k]^T * dOut[og,cb*ohw]
                matmul_at_b(
                    k,
                    og,
                    cb * ohw,
                    &self.weight.value.data()[g * og * k..(g + 1) * og * k],
                    &g_lin[..og * cb * ohw],
                    &mut dcol[..k * cb * ohw],
                    false,
                );
                self.col2im_chunk(&dcol, start, cb, g * cg, cg, oh, ow, &mut dx);
            }
            start += cb;
        }
        dx
    }

    fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        f(join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(join(prefix, "bias"), b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> Stream {
        Stream::derive(42, "conv-test")
    }

    #[test]
    fn identity_kernel_passes_through() {
        let mut r = rng();
        let mut conv = Conv2d::square(1, 1, 1, 1, 0, false, &mut r);
        conv.weight.value.data_mut()[0] = 1.0;
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let y = conv.forward(x.clone(), false);
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn known_3x3_sum_kernel() {
        let mut r = rng();
        let mut conv = Conv2d::square(1, 1, 3, 1, 1, false, &mut r);
        conv.weight.value.fill(1.0);
        let x = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv.forward(x, false);
        // center sees all 9 ones, corners see 4, edges see 6
        assert_eq!(y.data()[4], 9.0);
        assert_eq!(y.data()[0], 4.0);
        assert_eq!(y.data()[1], 6.0);
    }

    #[test]
    fn stride_and_padding_shapes() {
        let mut r = rng();
        let conv = Conv2d::square(3, 8, 3, 2, 1, false, &mut r);
        assert_eq!(conv.out_spatial(224, 224), (112, 112));
        let conv = Conv2d::square(3, 8, 7, 2, 3, false, &mut r);
        assert_eq!(conv.out_spatial(224, 224), (112, 112));
        let conv = Conv2d::new(3, 8, (1, 7), (1, 1), (0, 3), 1, false, &mut r);
        assert_eq!(conv.out_spatial(17, 17), (17, 17));
    }

    /// Scalar reference convolution for cross-checking the GEMM path.
    fn reference_conv(conv: &Conv2d, x: &Tensor) -> Tensor {
        let (n, c, h, w) = x.dims4();
        let (kh, kw) = conv.kernel;
        let (sh, sw) = conv.stride;
        let (ph, pw) = conv.padding;
        let (oh, ow) = conv.out_spatial(h, w);
        let cg = conv.in_channels / conv.groups;
        let og = conv.out_channels / conv.groups;
        let mut out = Tensor::zeros(&[n, conv.out_channels, oh, ow]);
        let od = out.data_mut();
        for i in 0..n {
            for g in 0..conv.groups {
                for oc in 0..og {
                    let oc_abs = g * og + oc;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = conv.bias.as_ref().map_or(0.0, |b| b.value.data()[oc_abs]);
                            for cc in 0..cg {
                                for ky in 0..kh {
                                    for kx in 0..kw {
                                        let iy = (oy * sh + ky) as isize - ph as isize;
                                        let ix = (ox * sw + kx) as isize - pw as isize;
                                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                            continue;
                                        }
                                        let xv = x.data()
                                            [(i * c + g * cg + cc) * h * w + iy as usize * w + ix as usize];
                                        let wv = conv.weight.value.data()
                                            [((oc_abs * cg) + cc) * kh * kw + ky * kw + kx];
                                        acc += xv * wv;
                                    }
                                }
                            }
                            od[(i * conv.out_channels + oc_abs) * oh * ow + oy * ow + ox] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn gemm_path_matches_reference_across_shapes() {
        let mut r = rng();
        let cases = [
            (3usize, 8usize, (3usize, 3usize), (1usize, 1usize), (1usize, 1usize), 1usize, true, 2usize, 7usize, 9usize),
            (4, 6, (3, 3), (2, 2), (1, 1), 2, false, 3, 8, 8),
            (2, 5, (1, 7), (1, 1), (0, 3), 1, false, 2, 9, 9),
            (2, 5, (7, 1), (1, 1), (3, 0), 1, true, 1, 9, 9),
            (8, 8, (1, 1), (1, 1), (0, 0), 1, false, 4, 5, 6),
            (3, 4, (5, 5), (2, 2), (2, 2), 1, false, 2, 11, 13),
            (6, 4, (3, 3), (2, 2), (0, 0), 2, false, 2, 10, 10),
        ];
        for (ci, co, k, s, p, g, bias, n, h, w) in cases {
            let mut conv = Conv2d::new(ci, co, k, s, p, g, bias, &mut r);
            if let Some(b) = &mut conv.bias {
                for (i, v) in b.value.data_mut().iter_mut().enumerate() {
                    *v = (i as f32) * 0.1 - 0.2;
                }
            }
            let x_data: Vec<f32> = (0..n * ci * h * w).map(|i| ((i as f32) * 0.13).sin()).collect();
            let x = Tensor::from_vec(&[n, ci, h, w], x_data);
            let fast = conv.forward(x.clone(), false);
            let slow = reference_conv(&conv, &x);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data().iter()) {
                assert!((a - b).abs() < 1e-4, "{a} vs {b} case {ci}->{co} k{k:?}");
            }
        }
    }

    #[test]
    fn depthwise_matches_reference() {
        let mut r = rng();
        for (stride, h, w) in [(1usize, 6usize, 6usize), (2, 7, 9), (1, 3, 3), (2, 4, 4)] {
            let mut conv = Conv2d::new(5, 5, (3, 3), (stride, stride), (1, 1), 5, false, &mut r);
            let x_data: Vec<f32> = (0..2 * 5 * h * w).map(|i| ((i * 7 % 13) as f32) - 6.0).collect();
            let x = Tensor::from_vec(&[2, 5, h, w], x_data);
            let fast = conv.forward(x.clone(), false);
            let slow = reference_conv(&conv, &x);
            for (a, b) in fast.data().iter().zip(slow.data().iter()) {
                assert!((a - b).abs() < 1e-4, "{a} vs {b} stride {stride}");
            }
        }
    }

    #[test]
    fn grouped_conv_isolates_channel_slabs() {
        let mut r = rng();
        let mut grouped = Conv2d::new(4, 4, (3, 3), (1, 1), (1, 1), 2, false, &mut r);
        let x_data: Vec<f32> = (0..4 * 5 * 5).map(|i| (i as f32 * 0.37).sin()).collect();
        let x = Tensor::from_vec(&[1, 4, 5, 5], x_data.clone());
        let y = grouped.forward(x, false);

        // group 0 only sees channels 0..2; feeding zeros there must zero outputs 0..2
        let mut x0 = Tensor::from_vec(&[1, 4, 5, 5], x_data);
        x0.data_mut()[..2 * 25].iter_mut().for_each(|v| *v = 0.0);
        let y0 = grouped.forward(x0, false);
        assert_eq!(&y0.data()[..2 * 25], vec![0.0; 50].as_slice());
        assert_eq!(&y0.data()[2 * 25..], &y.data()[2 * 25..]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut r = rng();
        let mut conv = Conv2d::square(2, 3, 3, 1, 1, true, &mut r);
        let x_data: Vec<f32> = (0..2 * 2 * 4 * 4).map(|i| ((i as f32) * 0.3).cos()).collect();
        let x = Tensor::from_vec(&[2, 2, 4, 4], x_data);

        // loss = sum(out^2) / 2 so dLoss/dOut = out
        let out = conv.forward(x.clone(), true);
        let dx = conv.backward(out.clone());

        let loss = |c: &mut Conv2d, x: &Tensor| -> f64 {
            let y = c.forward_impl(x);
            y.data().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / 2.0
        };

        let eps = 1e-2f32;
        for idx in [0usize, 7, 13, 31, 40, 63] {
            let mut xp = x.clone();
            xp.data_mut()[idx] += eps;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= eps;
            let fd = (loss(&mut conv, &xp) - loss(&mut conv, &xm)) / (2.0 * eps as f64);
            let an = dx.data()[idx] as f64;
            assert!((fd - an).abs() / fd.abs().max(1.0) < 1e-3, "dx[{idx}]: {an} vs {fd}");
        }
        for idx in [0usize, 5, 17, 53] {
            let orig = conv.weight.value.data()[idx];
            conv.weight.value.data_mut()[idx] = orig + eps;
            let lp = loss(&mut conv, &x);
            conv.weight.value.data_mut()[idx] = orig - eps;
            let lm = loss(&mut conv, &x);
            conv.weight.value.data_mut()[idx] = orig;
            let fd = (lp - lm) / (2.0 * eps as f64);
            let an = conv.weight.grad.data()[idx] as f64;
            assert!((fd - an).abs() / fd.abs().max(1.0) < 1e-3, "dw[{idx}]: {an} vs {fd}");
        }
        for idx in 0..3 {
            let orig = conv.bias.as_ref().unwrap().value.data()[idx];
            conv.bias.as_mut().unwrap().value.data_mut()[idx] = orig + eps;
            let lp = loss(&mut conv, &x);
            conv.bias.as_mut().unwrap().value.data_mut()[idx] = orig - eps;
            let lm = loss(&mut conv, &x);
            conv.bias.as_mut().unwrap().value.data_mut()[idx] = orig;
            let fd = (lp - lm) / (2.0 * eps as f64);
            let an = conv.bias.as_ref().unwrap().grad.data()[idx] as f64;
            assert!((fd - an).abs() / fd.abs().max(1.0) < 1e-3, "db[{idx}]: {an} vs {fd}");
        }
    }

    #[test]
    fn depthwise_backward_matches_finite_differences() {
        let mut r = rng();
        let mut conv = Conv2d::new(3, 3, (3, 3), (1, 1), (1, 1), 3, false, &mut r);
        let x_data: Vec<f32> = (0..3 * 5 * 5).map(|i| ((i as f32) * 0.21).sin()).collect();
        let x = Tensor::from_vec(&[1, 3, 5, 5], x_data);
        let out = conv.forward(x.clone(), true);
        let dx = conv.backward(out);

        let loss = |c: &Conv2d, x: &Tensor| -> f64 {
            let y = c.forward_impl(x);
            y.data().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / 2.0
        };
        let eps = 1e-2f32;
        for idx in [0usize, 24, 50, 74] {
            let mut xp = x.clone();
            xp.data_mut()[idx] += eps;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= eps;
            let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * eps as f64);
            let an = dx.data()[idx] as f64;
            assert!((fd - an).abs() / fd.abs().max(1.0) < 1e-3, "dx[{idx}]: {an} vs {fd}");
        }
    }

    #[test]
    fn chunked_path_equals_single_chunk() {
        // force multi-chunk execution by a large batch on a small conv
        let mut r = rng();
        let mut conv = Conv2d::square(2, 3, 3, 1, 1, false, &mut r);
        let n = 9;
        let x_data: Vec<f32> = (0..n * 2 * 6 * 6).map(|i| ((i as f32) * 0.11).sin()).collect();
        let x = Tensor::from_vec(&[n, 2, 6, 6], x_data);
        let whole = conv.forward(x.clone(), false);
        // per-sample forwards must agree with the batched result
        for i in 0..n {
            let plane = 2 * 36;
            let xi = Tensor::from_vec(&[1, 2, 6, 6], x.data()[i * plane..(i + 1) * plane].to_vec());
            let yi = conv.forward(xi, false);
            let oplane = 3 * 36;
            for (a, b) in yi.data().iter().zip(&whole.data()[i * oplane..(i + 1) * oplane]) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }
}
