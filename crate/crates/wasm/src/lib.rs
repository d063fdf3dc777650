//! Browser demo: explore the synthetic cue space, train a small multi-task
//! model live, and inspect per-task confusion matrices.

use wasm_bindgen::prelude::*;

use porcelain_core::dataset::{
    augment_image, preprocess_image, render_sample, AugmentSpec, PreprocessSpec, RgbImage,
    SYNTH_IMAGE_SIDE,
};
use porcelain_core::metrics::{argmax, confusion_matrix};
use porcelain_core::models::{build_model, Arch, ModelSpec, MultiTaskModel};
use porcelain_core::objective::{total_loss, total_loss_with_grad, TaskTargets};
use porcelain_core::rng::Stream;
use porcelain_core::taxonomy::{build_taxonomy, TaskTaxonomy, TASKS};
use porcelain_core::tensor::Tensor;
use porcelain_core::training::Adam;

const INPUT_SIDE: usize = 64;

fn json_str_array(items: &[String]) -> String {
    let quoted: Vec<String> = items.iter().map(|s| format!("\"{s}\"")).collect();
    format!("[{}]", quoted.join(","))
}

/// Task names and ordered category vocabularies as JSON.
#[wasm_bindgen]
pub fn taxonomy_json() -> String {
    let tax = build_taxonomy();
    let tasks: Vec<String> = tax
        .tasks()
        .iter()
        .map(|spec| {
            format!(
                "{{\"name\":\"{}\",\"categories\":{}}}",
                spec.name,
                json_str_array(&spec.categories)
            )
        })
        .collect();
    format!("[{}]", tasks.join(","))
}

/// Side length in pixels of rendered samples.
#[wasm_bindgen]
pub fn sample_side() -> u32 {
    SYNTH_IMAGE_SIDE
}

fn rgba_bytes(img: &RgbImage) -> Vec<u8> {
    let mut out = Vec::with_capacity((img.width() * img.height() * 4) as usize);
    for px in img.pixels() {
        out.extend_from_slice(&[px.0[0], px.0[1], px.0[2], 255]);
    }
    out
}

/// Renders one synthetic sample as RGBA bytes for a canvas.
#[wasm_bindgen]
pub fn render_sample_rgba(
    dynasty: usize,
    ware: usize,
    glaze: usize,
    typ: usize,
    seed: u64,
    index: usize,
) -> Vec<u8> {
    let labels = [dynasty.min(1), ware.min(9), glaze.min(7), typ.min(11)];
    rgba_bytes(&render_sample(&labels, seed, index))
}

/// Renders a sample and applies the train-time augmentation (horizontal
/// flip probability plus bounded rotation), as RGBA bytes.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn render_augmented_rgba(
    dynasty: usize,
    ware: usize,
    glaze: usize,
    typ: usize,
    seed: u64,
    index: usize,
    flip_prob: f32,
    rotation_max: f32,
    draw: u64,
) -> Vec<u8> {
    let labels = [dynasty.min(1), ware.min(9), glaze.min(7), typ.min(11)];
    let img = render_sample(&labels, seed, index);
    let spec = AugmentSpec {
        horizontal_flip_prob: flip_prob.clamp(0.0, 1.0),
        rotation_max_degrees: rotation_max.max(0.0),
    };
    let mut rng = Stream::derive(seed, &format!("demo-augment:{index}:{draw}"));
    rgba_bytes(&augment_image(&img, &spec, &mut rng))
}

struct DemoSample {
    image: RgbImage,
    labels: [usize; 4],
}

/// In-browser trainer: a scratch MobileNetV2 with four heads on an
/// in-memory synthetic dataset, stepped one mini-batch at a time.
#[wasm_bindgen]
pub struct DemoTrainer {
    taxonomy: TaskTaxonomy,
    model: MultiTaskModel,
    optimizer: Adam,
    train: Vec<DemoSample>,
    holdout: Vec<DemoSample>,
    preprocess: PreprocessSpec,
    augment: AugmentSpec,
    seed: u64,
    batch_size: usize,
    order: Vec<usize>,
    cursor: usize,
    epoch: usize,
    step_count: usize,
}

#[wasm_bindgen]
impl DemoTrainer {
    /// Builds the dataset and the model. Roughly one in five samples is
    /// held out for evaluation.
    #[wasm_bindgen(constructor)]
    pub fn new(n_samples: usize, seed: u64, batch_size: usize) -> DemoTrainer {
        let n = n_samples.clamp(12, 512);
        let taxonomy = build_taxonomy();
        let cards = taxonomy.cardinalities();
        let mut label_rng = Stream::derive(seed, "synthetic-labels");
        let mut samples = Vec::with_capacity(n);
        for i in 0..n {
            let labels = [
                label_rng.below(cards[0]),
                label_rng.below(cards[1]),
                label_rng.below(cards[2]),
                label_rng.below(cards[3]),
            ];
            samples.push(DemoSample {
                image: render_sample(&labels, seed, i),
                labels,
            });
        }
        let holdout_every = 5;
        let mut train = Vec::new();
        let mut holdout = Vec::new();
        for (i, s) in samples.into_iter().enumerate() {
            if (i + 1) % holdout_every == 0 {
                holdout.push(s);
            } else {
                train.push(s);
            }
        }

        let mut spec = ModelSpec::new(Arch::Mobilenetv2);
        spec.input_side = INPUT_SIDE;
        spec.init_seed = seed;
        let model = build_model(&spec, &taxonomy, None).expect("scratch model builds");
        let order: Vec<usize> = (0..train.len()).collect();
        DemoTrainer {
            taxonomy,
            model,
            optimizer: Adam::new(0.001),
            train,
            holdout,
            preprocess: PreprocessSpec::with_side(INPUT_SIDE),
            augment: AugmentSpec::default(),
            seed,
            batch_size: batch_size.clamp(1, 32),
            order,
            cursor: 0,
            epoch: 1,
            step_count: 0,
        }
    }

    pub fn train_size(&self) -> usize {
        self.train.len()
    }

    pub fn holdout_size(&self) -> usize {
        self.holdout.len()
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.train.len().div_ceil(self.batch_size)
    }

    fn batch_tensor(&self, indices: &[usize], augment: bool) -> (Tensor, TaskTargets) {
        let side = INPUT_SIDE;
        let mut batch = Tensor::zeros(&[indices.len(), 3, side, side]);
        let mut targets: TaskTargets = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
        let plane = 3 * side * side;
        for (row, &i) in indices.iter().enumerate() {
            let sample = &self.train[i];
            let img = if augment {
                let mut rng = Stream::derive(
                    self.seed,
                    &format!("demo-train-aug:{}:{}", i, self.epoch),
                );
                augment_image(&sample.image, &self.augment, &mut rng)
            } else {
                sample.image.clone()
            };
            let t = preprocess_image(&img, &self.preprocess).expect("preprocess");
            batch.data_mut()[row * plane..(row + 1) * plane].copy_from_slice(t.data());
            for task in 0..4 {
                targets[task].push(sample.labels[task]);
            }
        }
        (batch, targets)
    }

    /// One mini-batch optimization step. Returns JSON:
    /// `{"epoch":e,"step":s,"loss":..,"per_task":[..]}`.
    pub fn step(&mut self) -> String {
        if self.cursor == 0 {
            let mut rng = Stream::derive(self.seed, &format!("epoch-shuffle:{}", self.epoch));
            rng.shuffle(&mut self.order);
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let indices: Vec<usize> = self.order[self.cursor..end].to_vec();
        let (batch, targets) = self.batch_tensor(&indices, true);
        let bundle = self.model.forward(&batch, true).expect("forward");
        let (breakdown, grads) = total_loss_with_grad(&bundle, &targets).expect("loss");
        self.model.zero_grad();
        self.model.backward(grads);
        self.optimizer.step(&mut self.model);

        self.step_count += 1;
        self.cursor = end;
        let epoch = self.epoch;
        if self.cursor >= self.order.len() {
            self.cursor = 0;
            self.epoch += 1;
        }
        let t = breakdown.per_task();
        format!(
            "{{\"epoch\":{},\"step\":{},\"loss\":{:.6},\"per_task\":[{:.6},{:.6},{:.6},{:.6}]}}",
            epoch, self.step_count, breakdown.total, t[0], t[1], t[2], t[3]
        )
    }

    /// Holdout loss and per-task accuracy plus confusion matrices, as JSON.
    pub fn evaluate(&mut self) -> String {
        let widths = self.taxonomy.cardinalities();
        let side = INPUT_SIDE;
        let plane = 3 * side * side;
        let mut predictions: Vec<Vec<usize>> = vec![Vec::new(); 4];
        let mut targets: Vec<Vec<usize>> = vec![Vec::new(); 4];
        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        for chunk in self.holdout.chunks(8) {
            let mut batch = Tensor::zeros(&[chunk.len(), 3, side, side]);
            let mut chunk_targets: TaskTargets = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
            for (row, sample) in chunk.iter().enumerate() {
                let t = preprocess_image(&sample.image, &self.preprocess).expect("preprocess");
                batch.data_mut()[row * plane..(row + 1) * plane].copy_from_slice(t.data());
                for task in 0..4 {
                    chunk_targets[task].push(sample.labels[task]);
                }
            }
            let bundle = self.model.forward(&batch, false).expect("forward");
            let breakdown = total_loss(&bundle, &chunk_targets).expect("loss");
            loss_sum += breakdown.total * chunk.len() as f64;
            seen += chunk.len();
            for task in 0..4 {
                let logits = bundle.task(task);
                let (_, k) = logits.dims2();
                for row in 0..chunk.len() {
                    predictions[task].push(argmax(&logits.data()[row * k..(row + 1) * k]));
                    targets[task].push(chunk_targets[task][row]);
                }
            }
        }

        let mut task_blobs = Vec::new();
        for (t, task) in TASKS.iter().enumerate() {
            let matrix = confusion_matrix(&predictions[t], &targets[t], widths[t]).expect("matrix");
            let correct = predictions[t]
                .iter()
                .zip(&targets[t])
                .filter(|(p, y)| p == y)
                .count();
            let mut rows = Vec::new();
            for true_cat in 0..widths[t] {
                let row: Vec<String> = (0..widths[t])
                    .map(|p| matrix.get(true_cat, p).to_string())
                    .collect();
                rows.push(format!("[{}]", row.join(",")));
            }
            task_blobs.push(format!(
                "{{\"task\":\"{}\",\"accuracy\":{:.6},\"matrix\":[{}]}}",
                task,
                correct as f64 / targets[t].len().max(1) as f64,
                rows.join(",")
            ));
        }
        format!(
            "{{\"holdout_loss\":{:.6},\"n\":{},\"tasks\":[{}]}}",
            loss_sum / seen.max(1) as f64,
            seen,
            task_blobs.join(",")
        )
    }

    /// Trainable/frozen parameter counts per component, as JSON.
    pub fn parameter_report(&mut self) -> String {
        let report = self.model.parameter_report();
        let comps: Vec<String> = report
            .components
            .iter()
            .map(|c| {
                format!(
                    "{{\"name\":\"{}\",\"trainable\":{},\"frozen\":{}}}",
                    c.name, c.trainable, c.frozen
                )
            })
            .collect();
        format!(
            "{{\"total\":{},\"components\":[{}]}}",
            report.total(),
            comps.join(",")
        )
    }
}
