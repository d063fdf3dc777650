//! Shared-backbone, four-head multi-task networks.
//!
//! Four backbone families are supported. Three of them expose a spatial
//! feature map consumed by convolutional task heads; the inception family is
//! truncated after global pooling and uses plain fully connected heads.

mod heads;
mod inception;
mod mobilenet;
mod resnet;
mod vgg;

pub use heads::{build_task_head, ConvHead, FcHead, HeadStyle, TaskHead};

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{GlobalAvgPool, Layer, Param, Sequential};
use crate::rng::Stream;
use crate::taxonomy::{TaskTaxonomy, TASKS};
use crate::tensor::Tensor;

/// Supported backbone architectures.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    Resnet50,
    Mobilenetv2,
    Vgg16,
    Inceptionv3,
}

pub const ARCHS: [Arch; 4] = [
    Arch::Resnet50,
    Arch::Mobilenetv2,
    Arch::Vgg16,
    Arch::Inceptionv3,
];

impl Arch {
    pub fn parse(name: &str) -> Result<Arch> {
        match name.trim().to_ascii_lowercase().as_str() {
            "resnet50" => Ok(Arch::Resnet50),
            "mobilenetv2" => Ok(Arch::Mobilenetv2),
            "vgg16" => Ok(Arch::Vgg16),
            "inceptionv3" => Ok(Arch::Inceptionv3),
            other => Err(Error::UnknownArch(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Arch::Resnet50 => "resnet50",
            Arch::Mobilenetv2 => "mobilenetv2",
            Arch::Vgg16 => "vgg16",
            Arch::Inceptionv3 => "inceptionv3",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Arch::Resnet50 => "ResNet50",
            Arch::Mobilenetv2 => "MobileNetV2",
            Arch::Vgg16 => "VGG16",
            Arch::Inceptionv3 => "InceptionV3",
        }
    }

    /// Channels of the truncated backbone's output.
    pub fn feature_channels(self) -> usize {
        match self {
            Arch::Resnet50 => 2048,
            Arch::Mobilenetv2 => 1280,
            Arch::Vgg16 => 512,
            Arch::Inceptionv3 => 2048,
        }
    }

    /// Smallest input side the stem tolerates without collapsing a feature
    /// map to zero size.
    pub fn min_input_side(self) -> usize {
        match self {
            Arch::Resnet50 | Arch::Mobilenetv2 | Arch::Vgg16 => 32,
            Arch::Inceptionv3 => 75,
        }
    }

    pub fn head_style(self) -> HeadStyle {
        match self {
            Arch::Inceptionv3 => HeadStyle::Fc,
            _ => HeadStyle::Conv,
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Model construction parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub arch: Arch,
    pub pretrained: bool,
    pub freeze_backbone: bool,
    pub input_side: usize,
    /// Seed for head (and scratch backbone) initialization.
    pub init_seed: u64,
}

impl ModelSpec {
    pub fn new(arch: Arch) -> Self {
        ModelSpec {
            arch,
            pretrained: false,
            freeze_backbone: false,
            input_side: 224,
            init_seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.freeze_backbone && !self.pretrained {
            return Err(Error::InvalidSpec(
                "freeze_backbone requires pretrained weights".into(),
            ));
        }
        if self.input_side < self.arch.min_input_side() {
            return Err(Error::InvalidSpec(format!(
                "input_side {} below {} minimum {}",
                self.input_side,
                self.arch.name(),
                self.arch.min_input_side()
            )));
        }
        Ok(())
    }
}

/// Backbone output: a spatial map for conv-head architectures, a pooled
/// vector for fc-head architectures.
#[derive(Clone, Debug)]
pub enum Features {
    Spatial(Tensor),
    Pooled(Tensor),
}

impl Features {
    pub fn batch(&self) -> usize {
        match self {
            Features::Spatial(t) => t.shape()[0],
            Features::Pooled(t) => t.shape()[0],
        }
    }

    /// Elementwise sum of gradients flowing back from several heads.
    pub fn add_assign(&mut self, other: &Features) {
        match (self, other) {
            (Features::Spatial(a), Features::Spatial(b)) => a.add_assign(b),
            (Features::Pooled(a), Features::Pooled(b)) => a.add_assign(b),
            _ => panic!("mismatched feature variants"),
        }
    }
}

/// Truncated feature extractor.
pub struct BackboneNet {
    body: Sequential,
    global_pool: Option<GlobalAvgPool>,
    channels: usize,
}

impl BackboneNet {
    pub fn build(arch: Arch, rng: &mut Stream) -> Self {
        let (body, global_pool) = match arch {
            Arch::Resnet50 => (resnet::build_resnet50(rng), None),
            Arch::Mobilenetv2 => (mobilenet::build_mobilenetv2(rng), None),
            Arch::Vgg16 => (vgg::build_vgg16(rng), None),
            Arch::Inceptionv3 => (inception::build_inceptionv3(rng), Some(GlobalAvgPool::new())),
        };
        BackboneNet {
            body,
            global_pool,
            channels: arch.feature_channels(),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn forward(&mut self, x: Tensor, train: bool) -> Features {
        let out = self.body.forward(x, train);
        match &mut self.global_pool {
            Some(pool) => Features::Pooled(pool.forward(out, train)),
            None => Features::Spatial(out),
        }
    }

    pub fn backward(&mut self, grad: Features) -> Tensor {
        let g = match (grad, &mut self.global_pool) {
            (Features::Pooled(g), Some(pool)) => pool.backward(g),
            (Features::Spatial(g), None) => g,
            _ => panic!("feature variant does not match backbone kind"),
        };
        self.body.backward(g)
    }

    pub fn for_each_param(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        self.body.for_each_param(prefix, f);
    }

    pub fn for_each_buffer(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.body.for_each_buffer(prefix, f);
    }
}

/// Four per-task logit matrices sharing a batch dimension.
#[derive(Clone, Debug)]
pub struct LogitsBundle {
    tensors: [Tensor; 4],
}

impl LogitsBundle {
    pub fn new(tensors: [Tensor; 4]) -> Self {
        let batch = tensors[0].shape()[0];
        for t in &tensors {
            assert_eq!(t.shape()[0], batch, "logits batch dims disagree");
        }
        LogitsBundle { tensors }
    }

    pub fn batch(&self) -> usize {
        self.tensors[0].shape()[0]
    }

    /// Logits for the canonical task index (0 = dynasty .. 3 = type).
    pub fn task(&self, index: usize) -> &Tensor {
        &self.tensors[index]
    }

    /// Per-task class counts.
    pub fn widths(&self) -> [usize; 4] {
        [
            self.tensors[0].shape()[1],
            self.tensors[1].shape()[1],
            self.tensors[2].shape()[1],
            self.tensors[3].shape()[1],
        ]
    }
}

/// Shared backbone plus one head per task.
pub struct MultiTaskModel {
    pub spec: ModelSpec,
    backbone: BackboneNet,
    heads: [TaskHead; 4],
    taxonomy_fingerprint: String,
}

/// Builds the full multi-task network for a spec.
///
/// With `pretrained`, backbone weights are loaded from an archive named
/// `<arch>.weights` inside `weights_dir` (falling back to the
/// `PORCELAIN_WEIGHTS_DIR` environment variable); heads are always freshly
/// initialized. With `freeze_backbone`, backbone parameters are removed from
/// the trainable set and backbone batch-norm statistics are frozen too.
pub fn build_model(
    spec: &ModelSpec,
    taxonomy: &TaskTaxonomy,
    weights_dir: Option<&Path>,
) -> Result<MultiTaskModel> {
    spec.validate()?;
    let mut backbone_rng = Stream::derive(spec.init_seed, &format!("backbone-{}", spec.arch));
    let mut backbone = BackboneNet::build(spec.arch, &mut backbone_rng);

    if spec.pretrained {
        crate::weights::load_pretrained_backbone(&mut backbone, spec.arch, weights_dir)?;
    }
    if spec.freeze_backbone {
        backbone.for_each_param("", &mut |_, p| p.trainable = false);
    }

    let mut heads = Vec::with_capacity(4);
    for (t, task) in TASKS.iter().enumerate() {
        let mut rng = Stream::derive(spec.init_seed, &format!("head-{}-{}", spec.arch, task));
        let head = build_task_head(
            backbone.channels(),
            taxonomy.tasks()[t].cardinality(),
            spec.arch.head_style(),
            &mut rng,
        )?;
        heads.push(head);
    }
    let heads: [TaskHead; 4] = heads.try_into().map_err(|_| unreachable!()).unwrap();

    Ok(MultiTaskModel {
        spec: spec.clone(),
        backbone,
        heads,
        taxonomy_fingerprint: taxonomy.fingerprint(),
    })
}

impl MultiTaskModel {
    /// One shared backbone pass, then all four heads.
    pub fn forward(&mut self, batch: &Tensor, train: bool) -> Result<LogitsBundle> {
        let (_, c, h, w) = batch.dims4();
        if c != 3 || h != self.spec.input_side || w != self.spec.input_side {
            return Err(Error::ShapeMismatch {
                expected: format!("[N, 3, {0}, {0}]", self.spec.input_side),
                got: format!("{:?}", batch.shape()),
            });
        }
        // A frozen backbone never trains: its normalization statistics stay
        // fixed and no caches are kept for a backward pass that will not run.
        let backbone_train = train && !self.spec.freeze_backbone;
        let features = self.backbone.forward(batch.clone(), backbone_train);
        let logits: Vec<Tensor> = self
            .heads
            .iter_mut()
            .map(|head| head.forward(&features, train))
            .collect();
        Ok(LogitsBundle::new(logits.try_into().unwrap()))
    }

    /// Backward pass from per-task logit gradients. Head gradients always
    /// flow; the backbone only participates when it is trainable.
    pub fn backward(&mut self, logit_grads: [Tensor; 4]) {
        let mut grads = self.heads.iter_mut().zip(logit_grads).map(|(head, g)| head.backward(g));
        let mut total = grads.next().expect("four heads");
        for g in grads {
            total.add_assign(&g);
        }
        if !self.spec.freeze_backbone {
            self.backbone.backward(total);
        }
    }

    pub fn taxonomy_fingerprint(&self) -> &str {
        &self.taxonomy_fingerprint
    }

    pub fn for_each_param(&mut self, f: &mut dyn FnMut(String, &mut Param)) {
        self.backbone.for_each_param("backbone", f);
        for (t, head) in self.heads.iter_mut().enumerate() {
            head.for_each_param(&format!("heads.{}", TASKS[t]), f);
        }
    }

    pub fn for_each_buffer(&mut self, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.backbone.for_each_buffer("backbone", f);
        for (t, head) in self.heads.iter_mut().enumerate() {
            head.for_each_buffer(&format!("heads.{}", TASKS[t]), f);
        }
    }

    pub fn zero_grad(&mut self) {
        self.for_each_param(&mut |_, p| p.zero_grad());
    }

    pub fn parameter_report(&mut self) -> ParameterReport {
        let mut components: Vec<ComponentCount> = Vec::new();
        {
            let mut backbone = ComponentCount::new("backbone");
            self.backbone.for_each_param("", &mut |_, p| backbone.add(p));
            components.push(backbone);
        }
        for (t, head) in self.heads.iter_mut().enumerate() {
            let mut count = ComponentCount::new(&format!("head.{}", TASKS[t]));
            head.for_each_param("", &mut |_, p| count.add(p));
            components.push(count);
        }
        ParameterReport { components }
    }
}

/// Trainable/frozen parameter counts for one component.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComponentCount {
    pub name: String,
    pub trainable: u64,
    pub frozen: u64,
}

impl ComponentCount {
    fn new(name: &str) -> Self {
        ComponentCount {
            name: name.to_string(),
            trainable: 0,
            frozen: 0,
        }
    }

    fn add(&mut self, p: &Param) {
        if p.trainable {
            self.trainable += p.value.len() as u64;
        } else {
            self.frozen += p.value.len() as u64;
        }
    }

    pub fn total(&self) -> u64 {
        self.trainable + self.frozen
    }
}

/// Per-component parameter counts; totals partition the whole model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParameterReport {
    pub components: Vec<ComponentCount>,
}

impl ParameterReport {
    pub fn total(&self) -> u64 {
        self.components.iter().map(|c| c.total()).sum()
    }

    pub fn trainable_total(&self) -> u64 {
        self.components.iter().map(|c| c.trainable).sum()
    }

    pub fn component(&self, name: &str) -> Option<&ComponentCount> {
        self.components.iter().find(|c| c.name == name)
    }

    pub fn render(&self) -> String {
        let mut out = String::from("component\ttrainable\tfrozen\ttotal\n");
        for c in &self.components {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                c.name,
                c.trainable,
                c.frozen,
                c.total()
            ));
        }
        out.push_str(&format!(
            "total\t{}\t{}\t{}\n",
            self.trainable_total(),
            self.total() - self.trainable_total(),
            self.total()
        ));
        out
    }
}
