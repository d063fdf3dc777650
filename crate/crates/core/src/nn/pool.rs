//! Spatial pooling layers.

use super::Layer;
use crate::tensor::Tensor;

/// Max pooling. The backward pass routes each output gradient to the input
/// position that won the forward max.
pub struct MaxPool2d {
    kernel: usize,
    stride: usize,
    padding: usize,
    cache: Option<(Vec<u32>, Vec<usize>)>, // (argmax flat indices, input shape)
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        MaxPool2d {
            kernel,
            stride,
            padding,
            cache: None,
        }
    }

    pub fn out_spatial(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.padding - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.padding - self.kernel) / self.stride + 1;
        (oh, ow)
    }
}

impl Layer for MaxPool2d {
    fn forward(&mut self, x: Tensor, train: bool) -> Tensor {
        let (n, c, h, w) = x.dims4();
        let (oh, ow) = self.out_spatial(h, w);
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        let mut argmax = if train {
            vec![0u32; n * c * oh * ow]
        } else {
            Vec::new()
        };
        let xd = x.data();
        let od = out.data_mut();
        for i in 0..n {
            for ch in 0..c {
                let x_off = (i * c + ch) * h * w;
                let o_off = (i * c + ch) * oh * ow;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f32::NEG_INFINITY;
                        let mut best_idx = 0usize;
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
                                let idx = x_off + iy as usize * w + ix as usize;
                                if xd[idx] > best {
                                    best = xd[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        od[o_off + oy * ow + ox] = best;
                        if train {
                            argmax[o_off + oy * ow + ox] = best_idx as u32;
                        }
                    }
                }
            }
        }
        self.cache = train.then_some((argmax, x.shape().to_vec()));
        out
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let (argmax, shape) = self.cache.take().expect("maxpool backward without train forward");
        let mut dx = Tensor::zeros(&shape);
        let dxd = dx.data_mut();
        for (g, &src) in grad.data().iter().zip(argmax.iter()) {
            dxd[src as usize] += g;
        }
        dx
    }
}

/// Average pooling with zero padding counted in the divisor (fixed `k*k`).
pub struct AvgPool2d {
    kernel: usize,
    stride: usize,
    padding: usize,
    input_shape: Option<Vec<usize>>,
}

impl AvgPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        AvgPool2d {
            kernel,
            stride,
            padding,
            input_shape: None,
        }
    }

    pub fn out_spatial(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.padding - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.padding - self.kernel) / self.stride + 1;
        (oh, ow)
    }
}

impl Layer for AvgPool2d {
    fn forward(&mut self, x: Tensor, train: bool) -> Tensor {
        let (n, c, h, w) = x.dims4();
        let (oh, ow) = self.out_spatial(h, w);
        let norm = 1.0 / (self.kernel * self.kernel) as f32;
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        let xd = x.data();
        let od = out.data_mut();
        for i in 0..n {
            for ch in 0..c {
                let x_off = (i * c + ch) * h * w;
                let o_off = (i * c + ch) * oh * ow;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0f32;
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
                                acc += xd[x_off + iy as usize * w + ix as usize];
                            }
                        }
                        od[o_off + oy * ow + ox] = acc * norm;
                    }
                }
            }
        }
        self.input_shape = train.then(|| x.shape().to_vec());
        out
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let shape = self.input_shape.take().expect("avgpool backward without train forward");
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let (_, _, oh, ow) = grad.dims4();
        let norm = 1.0 / (self.kernel * self.kernel) as f32;
        let mut dx = Tensor::zeros(&shape);
        let dxd = dx.data_mut();
        let gd = grad.data();
        for i in 0..n {
            for ch in 0..c {
                let x_off = (i * c + ch) * h * w;
                let o_off = (i * c + ch) * oh * ow;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g = gd[o_off + oy * ow + ox] * norm;
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
                                dxd[x_off + iy as usize * w + ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Adaptive average pooling to 1x1, flattened to `[batch, channels]`.
pub struct GlobalAvgPool {
    input_shape: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        GlobalAvgPool { input_shape: None }
    }
}

impl Default for GlobalAvgPool {
    fn default() -> Self {
        Self::new()
    }
}

impl Layer for GlobalAvgPool {
    fn forward(&mut self, x: Tensor, train: bool) -> Tensor {
        let (n, c, h, w) = x.dims4();
        let norm = 1.0 / (h * w) as f32;
        let mut out = Tensor::zeros(&[n, c]);
        let xd = x.data();
        let od = out.data_mut();
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * h * w;
                od[i * c + ch] = xd[off..off + h * w].iter().sum::<f32>() * norm;
            }
        }
        self.input_shape = train.then(|| x.shape().to_vec());
        out
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let shape = self.input_shape.take().expect("gap backward without train forward");
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let norm = 1.0 / (h * w) as f32;
        let mut dx = Tensor::zeros(&shape);
        let dxd = dx.data_mut();
        for i in 0..n {
            for ch in 0..c {
                let g = grad.data()[i * c + ch] * norm;
                let off = (i * c + ch) * h * w;
                dxd[off..off + h * w].iter_mut().for_each(|v| *v = g);
            }
        }
        dx
    }
}
