//! Training and evaluation harness: Adam with per-epoch linear learning
//! rate decay, train-only augmentation (random resized crop, horizontal
//! flip), loss/accuracy history, and confusion-matrix evaluation with
//! retained softmax rows for ROC.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{bilinear_resize, ImageSample};
use crate::error::Error;
use crate::tensor::{
    adam_step, softmax_cross_entropy, softmax_cross_entropy_backward, softmax_rows, AdamConfig,
    Tensor,
};
use crate::Result;

use super::arch::Model;
use super::metrics::ConfusionMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub augment: bool,
}

impl Default for TrainRun {
    fn default() -> Self {
        TrainRun {
            epochs: 100,
            batch_size: 8,
            lr_initial: 1e-3,
            lr_final: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 1,
            augment: true,
        }
    }
}

impl TrainRun {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(self.lr_final > 0.0 && self.lr_final <= self.lr_initial) {
            return Err(Error::Config(
                "learning rates must satisfy 0 < lr_final <= lr_initial".into(),
            ));
        }
        Ok(())
    }

    /// Linear per-epoch interpolation from `lr_initial` to `lr_final`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.lr_initial;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        self.lr_initial * (1.0 - t) + self.lr_final * t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub train_accuracy: f64,
    pub optimizer_steps: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

/// Random resized crop (area scale 0.6..1.0, aspect 3/4..4/3, resized back
/// to the source size) followed by a coin-flip horizontal mirror.
fn augment_sample(tensor: &Tensor, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let [c, h, w]: [usize; 3] = tensor
        .shape()
        .try_into()
        .map_err(|_| Error::Shape("augment expects C×H×W".into()))?;
    // sample a crop rectangle, falling back to the full frame
    let mut rect = None;
    for _ in 0..10 {
        let area = rng.gen_range(0.6..=1.0) * (h * w) as f64;
        let log_ratio: f64 = rng.gen_range((3f64 / 4.0).ln()..=(4f64 / 3.0).ln());
        let ratio = log_ratio.exp();
        let cw = (area * ratio).sqrt().round() as usize;
        let ch = (area / ratio).sqrt().round() as usize;
        if cw >= 1 && ch >= 1 && cw <= w && ch <= h {
            let x0 = rng.gen_range(0..=(w - cw));
            let y0 = rng.gen_range(0..=(h - ch));
            rect = Some((x0, y0, cw, ch));
            break;
        }
    }
    let (x0, y0, cw, ch) = rect.unwrap_or((0, 0, w, h));
    let mut crop = vec![0.0; c * ch * cw];
    for ci in 0..c {
        for y in 0..ch {
            for x in 0..cw {
                crop[(ci * ch + y) * cw + x] = tensor.data()[(ci * h + y0 + y) * w + x0 + x];
            }
        }
    }
    let cropped = Tensor::from_vec(&[c, ch, cw], crop)?;
    let mut resized = bilinear_resize(&cropped, h, w)?;
    if rng.gen_bool(0.5) {
        let data = resized.data_mut();
        for ci in 0..c {
            for y in 0..h {
                let row = &mut data[(ci * h + y) * w..(ci * h + y) * w + w];
                row.reverse();
            }
        }
    }
    Ok(resized)
}

fn stack_batch(samples: &[&Tensor]) -> Result<Tensor> {
    let shape = samples[0].shape();
    let mut data = Vec::with_capacity(samples.len() * samples[0].len());
    for s in samples {
        if s.shape() != shape {
            return Err(Error::Shape("batch samples differ in shape".into()));
        }
        data.extend_from_slice(s.data());
    }
    let mut full = vec![samples.len()];
    full.extend_from_slice(shape);
    Tensor::from_vec(&full, data)
}

/// Trains in place. Samples are shuffled per epoch with a seeded RNG;
/// augmentation applies to training inputs only. Trailing batches of one
/// sample are skipped (BN train mode needs at least two). Fixed seed means
/// a reproducible history.
pub fn train(model: &mut Model, samples: &[ImageSample], run: &TrainRun) -> Result<TrainHistory> {
    run.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let expect_shape = [
        model.config.input.0,
        model.config.input.1,
        model.config.input.2,
    ];
    for s in samples {
        if s.tensor.shape() != expect_shape {
            return Err(Error::Shape(format!(
                "sample shape {:?}, model expects {expect_shape:?}",
                s.tensor.shape()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut history = TrainHistory::default();

    for epoch in 0..run.epochs {
        let lr = run.lr_at(epoch);
        let adam = AdamConfig {
            lr,
            beta1: run.beta1,
            beta2: run.beta2,
            eps: run.eps,
        };
        let mut order: Vec<usize> = (0..samples.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut loss_batches = 0usize;
        let mut correct = 0usize;
        let mut seen = 0usize;
        let mut steps = 0usize;
        for batch in order.chunks(run.batch_size) {
            if batch.len() < 2 {
                continue; // bn train mode needs a real batch
            }
            let mut augmented: Vec<Tensor> = Vec::with_capacity(batch.len());
            for &i in batch {
                let t = if run.augment {
                    augment_sample(&samples[i].tensor, &mut rng)?
                } else {
                    samples[i].tensor.clone()
                };
                augmented.push(t);
            }
            let refs: Vec<&Tensor> = augmented.iter().collect();
            let input = stack_batch(&refs)?;
            let labels: Vec<usize> = batch.iter().map(|&i| samples[i].label).collect();

            let (logits, cache) = model.forward_train(&input)?;
            let (loss, loss_cache) = softmax_cross_entropy(&logits, &labels)?;
            let grad = softmax_cross_entropy_backward(&loss_cache)?;
            model.zero_grads();
            model.backward(&grad, &cache)?;
            adam_step(&mut model.parameters_mut(), &adam)?;

            loss_sum += loss;
            loss_batches += 1;
            steps += 1;
            let k = model.config.num_classes;
            for (ni, &label) in labels.iter().enumerate() {
                let row = &logits.data()[ni * k..(ni + 1) * k];
                let pred = argmax(row);
                if pred == label {
                    correct += 1;
                }
                seen += 1;
            }
        }
        if steps == 0 {
            return Err(Error::Config(
                "no trainable batch (need at least 2 samples per batch)".into(),
            ));
        }
        history.epochs.push(EpochStats {
            epoch,
            lr,
            mean_loss: loss_sum / loss_batches as f64,
            train_accuracy: correct as f64 / seen as f64,
            optimizer_steps: steps,
        });
    }
    Ok(history)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Evaluation output: confusion matrix plus the full softmax vector per
/// sample (for ROC curves).
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub score_rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

/// Runs the model in eval mode over every sample, in order, batching for
/// throughput. The matrix total always equals the sample count.
pub fn evaluate(model: &mut Model, samples: &[ImageSample]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let k = model.config.num_classes;
    let mut confusion = ConfusionMatrix::new(k);
    let mut score_rows = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    for batch in samples.chunks(32) {
        let refs: Vec<&Tensor> = batch.iter().map(|s| &s.tensor).collect();
        let input = stack_batch(&refs)?;
        let logits = model.forward_eval(&input)?;
        let probs = softmax_rows(&logits)?;
        for (ni, sample) in batch.iter().enumerate() {
            let row = probs.data()[ni * k..(ni + 1) * k].to_vec();
            confusion.record(sample.label, argmax(&row));
            score_rows.push(row);
            labels.push(sample.label);
        }
    }
    Ok(Evaluation {
        confusion,
        score_rows,
        labels,
    })
}
