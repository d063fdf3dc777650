//! InceptionV3 feature extractor (multi-branch blocks, truncated before the
//! classifier; the auxiliary classifier branch is not materialized since no
//! loss is ever routed through it).

use crate::nn::{join, AvgPool2d, BatchNorm2d, Conv2d, Layer, MaxPool2d, Param, Relu, Sequential};
use crate::rng::Stream;
use crate::tensor::Tensor;

/// conv -> batch norm (eps 1e-3) -> rectifier.
struct BasicConv2d {
    conv: Conv2d,
    bn: BatchNorm2d,
    act: Relu,
}

impl BasicConv2d {
    fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: (usize, usize),
        rng: &mut Stream,
    ) -> Self {
        BasicConv2d {
            conv: Conv2d::new(in_ch, out_ch, kernel, (stride, stride), padding, 1, false, rng),
            bn: BatchNorm2d::with_eps(out_ch, 1e-3),
            act: Relu::new(),
        }
    }

    fn square(in_ch: usize, out_ch: usize, k: usize, stride: usize, pad: usize, rng: &mut Stream) -> Self {
        Self::new(in_ch, out_ch, (k, k), stride, (pad, pad), rng)
    }
}

impl Layer for BasicConv2d {
    fn forward(&mut self, x: Tensor, train: bool) -> Tensor {
        let h = self.conv.forward(x, train);
        let h = self.bn.forward(h, train);
        self.act.forward(h, train)
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let g = self.act.backward(grad);
        let g = self.bn.backward(g);
        self.conv.backward(g)
    }

    fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        self.conv.for_each_param(&join(prefix, "conv"), f);
        self.bn.for_each_param(&join(prefix, "bn"), f);
    }

    fn for_each_buffer(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.bn.for_each_buffer(&join(prefix, "bn"), f);
    }
}

/// Runs named branches on the same input and concatenates their outputs
/// along the channel dimension.
struct ParallelConcat {
    branches: Vec<(String, Sequential)>,
    widths: Option<Vec<usize>>,
}

impl ParallelConcat {
    fn new(branches: Vec<(String, Sequential)>) -> Self {
        ParallelConcat {
            branches,
            widths: None,
        }
    }
}

fn concat_channels(parts: &[Tensor]) -> Tensor {
    let (n, _, h, w) = parts[0].dims4();
    let total: usize = parts.iter().map(|p| p.dims4().1).sum();
    let mut out = Tensor::zeros(&[n, total, h, w]);
    let plane = h * w;
    let od = out.data_mut();
    for i in 0..n {
        let mut c0 = 0usize;
        for p in parts {
            let pc = p.dims4().1;
            let src = &p.data()[i * pc * plane..(i + 1) * pc * plane];
            let dst_off = (i * total + c0) * plane;
            od[dst_off..dst_off + pc * plane].copy_from_slice(src);
            c0 += pc;
        }
    }
    out
}

fn split_channels(grad: &Tensor, widths: &[usize]) -> Vec<Tensor> {
    let (n, total, h, w) = grad.dims4();
    debug_assert_eq!(widths.iter().sum::<usize>(), total);
    let plane = h * w;
    let mut parts: Vec<Tensor> = widths.iter().map(|&c| Tensor::zeros(&[n, c, h, w])).collect();
    for i in 0..n {
        let mut c0 = 0usize;
        for (p, &pc) in parts.iter_mut().zip(widths) {
            let src_off = (i * total + c0) * plane;
            let dst = &mut p.data_mut()[i * pc * plane..(i + 1) * pc * plane];
            dst.copy_from_slice(&grad.data()[src_off..src_off + pc * plane]);
            c0 += pc;
        }
    }
    parts
}

impl Layer for ParallelConcat {
    fn forward(&mut self, x: Tensor, train: bool) -> Tensor {
        let outs: Vec<Tensor> = self
            .branches
            .iter_mut()
            .map(|(_, b)| b.forward(x.clone(), train))
            .collect();
        if train {
            self.widths = Some(outs.iter().map(|t| t.dims4().1).collect());
        }
        concat_channels(&outs)
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let widths = self.widths.take().expect("concat backward without train forward");
        let parts = split_channels(&grad, &widths);
        let mut dx: Option<Tensor> = None;
        for ((_, branch), part) in self.branches.iter_mut().zip(parts) {
            let d = branch.backward(part);
            match &mut dx {
                Some(acc) => acc.add_assign(&d),
                None => dx = Some(d),
            }
        }
        dx.expect("at least one branch")
    }

    fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        for (name, b) in self.branches.iter_mut() {
            b.for_each_param(&join(prefix, name), f);
        }
    }

    fn for_each_buffer(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (name, b) in self.branches.iter_mut() {
            b.for_each_buffer(&join(prefix, name), f);
        }
    }
}

fn seq1(name: &str, layer: impl Layer + 'static) -> (String, Sequential) {
    let mut s = Sequential::new();
    s.push("0", layer);
    (name.to_string(), s)
}

/// 256/288-channel block: 1x1, 5x5, double-3x3 and pooled branches.
fn inception_a(in_ch: usize, pool_features: usize, rng: &mut Stream) -> ParallelConcat {
    let branch1x1 = seq1("branch1x1", BasicConv2d::square(in_ch, 64, 1, 1, 0, rng));

    let mut b5 = Sequential::new();
    b5.push("0", BasicConv2d::square(in_ch, 48, 1, 1, 0, rng));
    b5.push("1", BasicConv2d::square(48, 64, 5, 1, 2, rng));

    let mut b3 = Sequential::new();
    b3.push("0", BasicConv2d::square(in_ch, 64, 1, 1, 0, rng));
    b3.push("1", BasicConv2d::square(64, 96, 3, 1, 1, rng));
    b3.push("2", BasicConv2d::square(96, 96, 3, 1, 1, rng));

    let mut bp = Sequential::new();
    bp.push("pool", AvgPool2d::new(3, 1, 1));
    bp.push("1", BasicConv2d::square(in_ch, pool_features, 1, 1, 0, rng));

    ParallelConcat::new(vec![
        branch1x1,
        ("branch5x5".into(), b5),
        ("branch3x3dbl".into(), b3),
        ("branch_pool".into(), bp),
    ])
}

/// Stride-2 reduction block to 768 channels.
fn inception_b(in_ch: usize, rng: &mut Stream) -> ParallelConcat {
    let branch3x3 = seq1("branch3x3", BasicConv2d::square(in_ch, 384, 3, 2, 0, rng));

    let mut b3 = Sequential::new();
    b3.push("0", BasicConv2d::square(in_ch, 64, 1, 1, 0, rng));
    b3.push("1", BasicConv2d::square(64, 96, 3, 1, 1, rng));
    b3.push("2", BasicConv2d::square(96, 96, 3, 2, 0, rng));

    let mut bp = Sequential::new();
    bp.push("pool", MaxPool2d::new(3, 2, 0));

    ParallelConcat::new(vec![
        branch3x3,
        ("branch3x3dbl".into(), b3),
        ("branch_pool".into(), bp),
    ])
}

/// 768-channel block with factorized 7x7 branches.
fn inception_c(in_ch: usize, c7: usize, rng: &mut Stream) -> ParallelConcat {
    let branch1x1 = seq1("branch1x1", BasicConv2d::square(in_ch, 192, 1, 1, 0, rng));

    let mut b7 = Sequential::new();
    b7.push("0", BasicConv2d::square(in_ch, c7, 1, 1, 0, rng));
    b7.push("1", BasicConv2d::new(c7, c7, (1, 7), 1, (0, 3), rng));
    b7.push("2", BasicConv2d::new(c7, 192, (7, 1), 1, (3, 0), rng));

    let mut b7d = Sequential::new();
    b7d.push("0", BasicConv2d::square(in_ch, c7, 1, 1, 0, rng));
    b7d.push("1", BasicConv2d::new(c7, c7, (7, 1), 1, (3, 0), rng));
    b7d.push("2", BasicConv2d::new(c7, c7, (1, 7), 1, (0, 3), rng));
    b7d.push("3", BasicConv2d::new(c7, c7, (7, 1), 1, (3, 0), rng));
    b7d.push("4", BasicConv2d::new(c7, 192, (1, 7), 1, (0, 3), rng));

    let mut bp = Sequential::new();
    bp.push("pool", AvgPool2d::new(3, 1, 1));
    bp.push("1", BasicConv2d::square(in_ch, 192, 1, 1, 0, rng));

    ParallelConcat::new(vec![
        branch1x1,
        ("branch7x7".into(), b7),
        ("branch7x7dbl".into(), b7d),
        ("branch_pool".into(), bp),
    ])
}

/// Stride-2 reduction block to 1280 channels.
fn inception_d(in_ch: usize, rng: &mut Stream) -> ParallelConcat {
    let mut b3 = Sequential::new();
    b3.push("0", BasicConv2d::square(in_ch, 192, 1, 1, 0, rng));
    b3.push("1", BasicConv2d::square(192, 320, 3, 2, 0, rng));

    let mut b7 = Sequential::new();
    b7.push("0", BasicConv2d::square(in_ch, 192, 1, 1, 0, rng));
    b7.push("1", BasicConv2d::new(192, 192, (1, 7), 1, (0, 3), rng));
    b7.push("2", BasicConv2d::new(192, 192, (7, 1), 1, (3, 0), rng));
    b7.push("3", BasicConv2d::square(192, 192, 3, 2, 0, rng));

    let mut bp = Sequential::new();
    bp.push("pool", MaxPool2d::new(3, 2, 0));

    ParallelConcat::new(vec![
        ("branch3x3".into(), b3),
        ("branch7x7x3".into(), b7),
        ("branch_pool".into(), bp),
    ])
}

/// 2048-channel block with fanned-out 1x3/3x1 pairs.
fn inception_e(in_ch: usize, rng: &mut Stream) -> ParallelConcat {
    let branch1x1 = seq1("branch1x1", BasicConv2d::square(in_ch, 320, 1, 1, 0, rng));

    let mut b3 = Sequential::new();
    b3.push("0", BasicConv2d::square(in_ch, 384, 1, 1, 0, rng));
    let fan = ParallelConcat::new(vec![
        seq1("a", BasicConv2d::new(384, 384, (1, 3), 1, (0, 1), rng)),
        seq1("b", BasicConv2d::new(384, 384, (3, 1), 1, (1, 0), rng)),
    ]);
    b3.push("fan", fan);

    let mut b3d = Sequential::new();
    b3d.push("0", BasicConv2d::square(in_ch, 448, 1, 1, 0, rng));
    b3d.push("1", BasicConv2d::square(448, 384, 3, 1, 1, rng));
    let fan = ParallelConcat::new(vec![
        seq1("a", BasicConv2d::new(384, 384, (1, 3), 1, (0, 1), rng)),
        seq1("b", BasicConv2d::new(384, 384, (3, 1), 1, (1, 0), rng)),
    ]);
    b3d.push("fan", fan);

    let mut bp = Sequential::new();
    bp.push("pool", AvgPool2d::new(3, 1, 1));
    bp.push("1", BasicConv2d::square(in_ch, 192, 1, 1, 0, rng));

    ParallelConcat::new(vec![
        branch1x1,
        ("branch3x3".into(), b3),
        ("branch3x3dbl".into(), b3d),
        ("branch_pool".into(), bp),
    ])
}

/// Full stem and mixed-block stack; output is a 2048-channel map which the
/// caller pools to a feature vector.
pub fn build_inceptionv3(rng: &mut Stream) -> Sequential {
    let mut seq = Sequential::new();
    seq.push("conv1a", BasicConv2d::square(3, 32, 3, 2, 0, rng));
    seq.push("conv2a", BasicConv2d::square(32, 32, 3, 1, 0, rng));
    seq.push("conv2b", BasicConv2d::square(32, 64, 3, 1, 1, rng));
    seq.push("pool1", MaxPool2d::new(3, 2, 0));
    seq.push("conv3b", BasicConv2d::square(64, 80, 1, 1, 0, rng));
    seq.push("conv4a", BasicConv2d::square(80, 192, 3, 1, 0, rng));
    seq.push("pool2", MaxPool2d::new(3, 2, 0));
    seq.push("mixed5b", inception_a(192, 32, rng));
    seq.push("mixed5c", inception_a(256, 64, rng));
    seq.push("mixed5d", inception_a(288, 64, rng));
    seq.push("mixed6a", inception_b(288, rng));
    seq.push("mixed6b", inception_c(768, 128, rng));
    seq.push("mixed6c", inception_c(768, 160, rng));
    seq.push("mixed6d", inception_c(768, 160, rng));
    seq.push("mixed6e", inception_c(768, 192, rng));
    seq.push("mixed7a", inception_d(768, rng));
    seq.push("mixed7b", inception_e(1280, rng));
    seq.push("mixed7c", inception_e(2048, rng));
    seq
}
