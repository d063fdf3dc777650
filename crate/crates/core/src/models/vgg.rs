//! VGG16 feature extractor (thirteen 3x3 convolutions, classifier removed).

use crate::nn::{Conv2d, MaxPool2d, Relu, Sequential};
use crate::rng::Stream;

/// Channel plan; zero marks a max-pool.
const PLAN: [usize; 18] = [64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0];

/// The thirteen-conv feature stack; output is a 512-channel map at 1/32 of
/// the input side.
pub fn build_vgg16(rng: &mut Stream) -> Sequential {
    let mut seq = Sequential::new();
    let mut in_ch = 3;
    let mut conv_idx = 0;
    let mut pool_idx = 0;
    for &c in &PLAN {
        if c == 0 {
            seq.push(format!("pool{pool_idx}"), MaxPool2d::new(2, 2, 0));
            pool_idx += 1;
        } else {
            seq.push(
                format!("conv{conv_idx}"),
                Conv2d::square(in_ch, c, 3, 1, 1, true, rng),
            );
            seq.push(format!("relu{conv_idx}"), Relu::new());
            conv_idx += 1;
            in_ch = c;
        }
    }
    seq
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;
    use crate::tensor::Tensor;

    #[test]
    fn output_shape_at_min_side() {
        let mut rng = Stream::derive(0, "vgg-test");
        let mut net = build_vgg16(&mut rng);
        let x = Tensor::full(&[1, 3, 32, 32], 0.1);
        let y = net.forward(x, false);
        assert_eq!(y.shape(), &[1, 512, 1, 1]);
    }

    #[test]
    fn parameter_count_matches_reference() {
        let mut rng = Stream::derive(0, "vgg-test");
        let mut net = build_vgg16(&mut rng);
        let mut count = 0u64;
        net.for_each_param("", &mut |_, p| count += p.value.len() as u64);
        // torchvision vgg16 features-only parameter count
        assert_eq!(count, 14_714_688);
    }
}
