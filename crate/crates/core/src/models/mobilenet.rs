//! MobileNetV2 feature extractor (inverted residual blocks, classifier removed).

use crate::nn::{join, BatchNorm2d, Conv2d, Layer, Param, Relu6, Sequential};
use crate::rng::Stream;
use crate::tensor::Tensor;

/// conv -> batch norm -> clipped rectifier, the standard mobile block unit.
struct ConvBnRelu6 {
    conv: Conv2d,
    bn: BatchNorm2d,
    act: Relu6,
}

impl ConvBnRelu6 {
    fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        rng: &mut Stream,
    ) -> Self {
        let padding = kernel / 2;
        ConvBnRelu6 {
            conv: Conv2d::new(
                in_ch,
                out_ch,
                (kernel, kernel),
                (stride, stride),
                (padding, padding),
                groups,
                false,
                rng,
            ),
            bn: BatchNorm2d::new(out_ch),
            act: Relu6::new(),
        }
    }
}

impl Layer for ConvBnRelu6 {
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

struct InvertedResidual {
    expand: Option<ConvBnRelu6>,
    depthwise: ConvBnRelu6,
    project_conv: Conv2d,
    project_bn: BatchNorm2d,
    use_residual: bool,
}

impl InvertedResidual {
    fn new(in_ch: usize, out_ch: usize, stride: usize, expand_ratio: usize, rng: &mut Stream) -> Self {
        let hidden = in_ch * expand_ratio;
        let expand =
            (expand_ratio != 1).then(|| ConvBnRelu6::new(in_ch, hidden, 1, 1, 1, rng));
        InvertedResidual {
            expand,
            depthwise: ConvBnRelu6::new(hidden, hidden, 3, stride, hidden, rng),
            project_conv: Conv2d::square(hidden, out_ch, 1, 1, 0, false, rng),
            project_bn: BatchNorm2d::new(out_ch),
            use_residual: stride == 1 && in_ch == out_ch,
        }
    }
}

impl Layer for InvertedResidual {
    fn forward(&mut self, x: Tensor, train: bool) -> Tensor {
        let skip = self.use_residual.then(|| x.clone());
        let h = match &mut self.expand {
            Some(e) => e.forward(x, train),
            None => x,
        };
        let h = self.depthwise.forward(h, train);
        let h = self.project_conv.forward(h, train);
        let mut h = self.project_bn.forward(h, train);
        if let Some(skip) = skip {
            h.add_assign(&skip);
        }
        h
    }

    fn backward(&mut self, grad: Tensor) -> Tensor {
        let d_skip = self.use_residual.then(|| grad.clone());
        let d = self.project_bn.backward(grad);
        let d = self.project_conv.backward(d);
        let d = self.depthwise.backward(d);
        let mut dx = match &mut self.expand {
            Some(e) => e.backward(d),
            None => d,
        };
        if let Some(ds) = d_skip {
            dx.add_assign(&ds);
        }
        dx
    }

    fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        if let Some(e) = &mut self.expand {
            e.for_each_param(&join(prefix, "expand"), f);
        }
        self.depthwise.for_each_param(&join(prefix, "depthwise"), f);
        self.project_conv.for_each_param(&join(prefix, "project.conv"), f);
        self.project_bn.for_each_param(&join(prefix, "project.bn"), f);
    }

    fn for_each_buffer(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        if let Some(e) = &mut self.expand {
            e.for_each_buffer(&join(prefix, "expand"), f);
        }
        self.depthwise.for_each_buffer(&join(prefix, "depthwise"), f);
        self.project_bn.for_each_buffer(&join(prefix, "project.bn"), f);
    }
}

/// Inverted-residual schedule `(expand, channels, repeats, first stride)`.
const SCHEDULE: [(usize, usize, usize, usize); 7] = [
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
];

/// Stem, seventeen inverted residual blocks, and the 1280-channel tail conv.
pub fn build_mobilenetv2(rng: &mut Stream) -> Sequential {
    let mut seq = Sequential::new();
    seq.push("features.0", ConvBnRelu6::new(3, 32, 3, 2, 1, rng));
    let mut in_ch = 32;
    let mut index = 1;
    for &(t, c, n, s) in &SCHEDULE {
        for i in 0..n {
            let stride = if i == 0 { s } else { 1 };
            seq.push(
                format!("features.{index}"),
                InvertedResidual::new(in_ch, c, stride, t, rng),
            );
            in_ch = c;
            index += 1;
        }
    }
    seq.push("features.18", ConvBnRelu6::new(in_ch, 1280, 1, 1, 1, rng));
    seq
}
