//! ResNet50 feature extractor (bottleneck residual blocks, classifier removed).

use crate::nn::{join, BatchNorm2d, Conv2d, Layer, MaxPool2d, Param, Relu, Sequential};
use crate::rng::Stream;
use crate::tensor::Tensor;

struct Bottleneck {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    relu1: Relu,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    relu2: Relu,
    conv3: Conv2d,
    bn3: BatchNorm2d,
    down: Option<(Conv2d, BatchNorm2d)>,
    out_mask: Option<Vec<u8>>,
}

impl Bottleneck {
    fn new(in_ch: usize, mid: usize, out_ch: usize, stride: usize, rng: &mut Stream) -> Self {
        let down = (stride != 1 || in_ch != out_ch).then(|| {
            (
                Conv2d::square(in_ch, out_ch, 1, stride, 0, false, rng),
                BatchNorm2d::new(out_ch),
            )
        });
        Bottleneck {
            conv1: Conv2d::square(in_ch, mid, 1, 1, 0, false, rng),
            bn1: BatchNorm2d::new(mid),
            relu1: Relu::new(),
            conv2: Conv2d::square(mid, mid, 3, stride, 1, false, rng),
            bn2: BatchNorm2d::new(mid),
            relu2: Relu::new(),
            conv3: Conv2d::square(mid, out_ch, 1, 1, 0, false, rng),
            bn3: BatchNorm2d::new(out_ch),
            down,
            out_mask: None,
        }
    }
}

impl Layer for Bottleneck {
    fn forward(&mut self, x: Tensor, train: bool) -> Tensor {
        let skip = match &mut self.down {
            Some((conv, bn)) => bn.forward(conv.forward(x.clone(), train), train),
            None => x.clone(),
        };
        let h = self.conv1.forward(x, train);
        let h = self.relu1.forward(self.bn1.forward(h, train), train);
        let h = self.conv2.forward(h, train);
        let h = self.relu2.forward(self.bn2.forward(h, train), train);
        let h = self.conv3.forward(h, train);
        let mut h = self.bn3.forward(h, train);
        h.add_assign(&skip);
        // final rectifier, inlined to keep its mask next to the residual add
        if train {
            let mut mask = vec![0u8; h.len()];
            for (v, m) in h.data_mut().iter_mut().zip(mask.iter_mut()) {
                if *v > 0.0 {
                    *m = 1;
                } else {
                    *v = 0.0;
                }
            }
            self.out_mask = Some(mask);
        } else {
            for v in h.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        h
    }

    fn backward(&mut self, mut grad: Tensor) -> Tensor {
        let mask = self.out_mask.take().expect("bottleneck backward without train forward");
        for (g, m) in grad.data_mut().iter_mut().zip(mask.iter()) {
            if *m == 0 {
                *g = 0.0;
            }
        }
        let d_skip = grad.clone();
        let d = self.bn3.backward(grad);
        let d = self.conv3.backward(d);
        let d = self.bn2.backward(self.relu2.backward(d));
        let d = self.conv2.backward(d);
        let d = self.bn1.backward(self.relu1.backward(d));
        let mut dx = self.conv1.backward(d);
        match &mut self.down {
            Some((conv, bn)) => dx.add_assign(&conv.backward(bn.backward(d_skip))),
            None => dx.add_assign(&d_skip),
        }
        dx
    }

    fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        self.conv1.for_each_param(&join(prefix, "conv1"), f);
        self.bn1.for_each_param(&join(prefix, "bn1"), f);
        self.conv2.for_each_param(&join(prefix, "conv2"), f);
        self.bn2.for_each_param(&join(prefix, "bn2"), f);
        self.conv3.for_each_param(&join(prefix, "conv3"), f);
        self.bn3.for_each_param(&join(prefix, "bn3"), f);
        if let Some((conv, bn)) = &mut self.down {
            conv.for_each_param(&join(prefix, "downsample.0"), f);
            bn.for_each_param(&join(prefix, "downsample.1"), f);
        }
    }

    fn for_each_buffer(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.bn1.for_each_buffer(&join(prefix, "bn1"), f);
        self.bn2.for_each_buffer(&join(prefix, "bn2"), f);
        self.bn3.for_each_buffer(&join(prefix, "bn3"), f);
        if let Some((_, bn)) = &mut self.down {
            bn.for_each_buffer(&join(prefix, "downsample.1"), f);
        }
    }
}

fn stage(
    seq: &mut Sequential,
    name: &str,
    blocks: usize,
    in_ch: usize,
    mid: usize,
    out_ch: usize,
    stride: usize,
    rng: &mut Stream,
) {
    let mut inner = Sequential::new();
    inner.push("0", Bottleneck::new(in_ch, mid, out_ch, stride, rng));
    for b in 1..blocks {
        inner.push(format!("{b}"), Bottleneck::new(out_ch, mid, out_ch, 1, rng));
    }
    seq.push(name, inner);
}

/// Stem plus the four bottleneck stages; output is a 2048-channel map at
/// 1/32 of the input side.
pub fn build_resnet50(rng: &mut Stream) -> Sequential {
    let mut seq = Sequential::new();
    seq.push("conv1", Conv2d::square(3, 64, 7, 2, 3, false, rng));
    seq.push("bn1", BatchNorm2d::new(64));
    seq.push("relu", Relu::new());
    seq.push("maxpool", MaxPool2d::new(3, 2, 1));
    stage(&mut seq, "layer1", 3, 64, 64, 256, 1, rng);
    stage(&mut seq, "layer2", 4, 256, 128, 512, 2, rng);
    stage(&mut seq, "layer3", 6, 512, 256, 1024, 2, rng);
    stage(&mut seq, "layer4", 3, 1024, 512, 2048, 2, rng);
    seq
}
