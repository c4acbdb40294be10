//! Supervised, self-training and EMA-teacher optimisation loops.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{lr_schedule, EmaMode, TrainConfig};
use super::ema::{ema_update, ema_update_from_previous};
use super::optim::Optimizer;
use crate::datakit::Dataset;
use crate::error::{Error, Result};
use crate::mask::{CategoryMask, LabelMask};
use crate::nn::{pseudo_labels, softmax_cross_entropy, Mode, SegNet, Tensor3};
use crate::scalar::Scalar;
use crate::taxonomy::{remap_label, ClassTaxonomy, RemapTable};

/// In-memory inputs with per-pixel integer targets.
#[derive(Debug, Clone)]
pub struct TrainSet<T> {
    inputs: Vec<Tensor3<T>>,
    labels: Vec<Vec<u8>>,
    ignore_id: u8,
}

impl<T: Scalar> TrainSet<T> {
    pub fn new(inputs: Vec<Tensor3<T>>, labels: Vec<Vec<u8>>, ignore_id: u8) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::Contract(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        for (i, (x, y)) in inputs.iter().zip(&labels).enumerate() {
            if x.plane_len() != y.len() {
                return Err(Error::Contract(format!("sample {i}: label size does not match input")));
            }
        }
        Ok(Self {
            inputs,
            labels,
            ignore_id,
        })
    }

    /// Loads every labelled item, optionally remapping labels into one
    /// category's index space.
    pub fn from_dataset(dataset: &Dataset, taxonomy: &ClassTaxonomy, remap: Option<&RemapTable>) -> Result<Self> {
        let mut inputs = Vec::with_capacity(dataset.len());
        let mut labels = Vec::with_capacity(dataset.len());
        for i in 0..dataset.len() {
            let sample = dataset.load_sample::<T>(i, taxonomy)?;
            let label = sample.label.ok_or_else(|| {
                Error::Contract(format!("item `{}` has no label", dataset.items()[i].id))
            })?;
            let label = match remap {
                Some(table) => remap_label(&label, table)?.into_vec(),
                None => label.into_vec(),
            };
            inputs.push(sample.image);
            labels.push(label);
        }
        Self::new(inputs, labels, taxonomy.ignore_id())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[Tensor3<T>] {
        &self.inputs
    }

    pub fn labels(&self) -> &[Vec<u8>] {
        &self.labels
    }

    pub fn ignore_id(&self) -> u8 {
        self.ignore_id
    }

    fn check_targets(&self, n_out: usize) -> Result<()> {
        for (i, y) in self.labels.iter().enumerate() {
            if let Some(&bad) = y.iter().find(|&&v| v != self.ignore_id && usize::from(v) >= n_out) {
                return Err(Error::Data(format!(
                    "sample {i} holds label {bad}, model has {n_out} outputs"
                )));
            }
        }
        Ok(())
    }
}

/// Decodes every image of `dataset` (labels are not required).
pub fn load_images<T: Scalar>(dataset: &Dataset, taxonomy: &ClassTaxonomy) -> Result<Vec<Tensor3<T>>> {
    (0..dataset.len())
        .map(|i| dataset.load_sample::<T>(i, taxonomy).map(|s| s.image))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    /// Pseudo-label loss on the target batch (self-training only).
    pub target_loss: Option<f64>,
    /// Fraction of target pixels that passed the confidence gate.
    pub pseudo_fraction: Option<f64>,
}

pub struct TrainOutcome<T> {
    pub student: SegNet<T>,
    pub teacher: Option<SegNet<T>>,
    pub log: Vec<StepLog>,
}

impl<T: Scalar> TrainOutcome<T> {
    /// Mean loss over the last 50 steps (or fewer); `None` without steps.
    pub fn final_loss(&self) -> Option<f64> {
        let tail = &self.log[self.log.len().saturating_sub(50)..];
        (!tail.is_empty()).then(|| tail.iter().map(|s| s.loss).sum::<f64>() / tail.len() as f64)
    }
}

/// Epoch-wise shuffled index stream.
struct BatchSampler {
    n: usize,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    fn new(n: usize, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            n,
            order: Vec::new(),
            pos: 0,
            rng,
        }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order = (0..self.n).collect();
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

/// Random crop of `(width, height)` rounded down to the network stride.
struct Cropper {
    size: Option<(usize, usize)>,
    stride: usize,
    rng: ChaCha8Rng,
}

impl Cropper {
    fn new(size: Option<(u32, u32)>, stride: usize, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            size: size.map(|(w, h)| (w as usize, h as usize)),
            stride,
            rng,
        }
    }

    fn window(&mut self, h: usize, w: usize) -> Option<(usize, usize, usize, usize)> {
        let (cw, ch) = self.size?;
        let cw = (cw.min(w) / self.stride) * self.stride;
        let ch = (ch.min(h) / self.stride) * self.stride;
        if (cw, ch) == (w, h) || cw == 0 || ch == 0 {
            return None;
        }
        let y0 = self.rng.gen_range(0..=h - ch);
        let x0 = self.rng.gen_range(0..=w - cw);
        Some((y0, x0, ch, cw))
    }
}

fn crop_tensor<T: Scalar>(x: &Tensor3<T>, (y0, x0, ch, cw): (usize, usize, usize, usize)) -> Tensor3<T> {
    let mut out = Tensor3::zeros(x.channels(), ch, cw);
    for c in 0..x.channels() {
        let src = x.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..ch {
            let s = (y0 + y) * x.width() + x0;
            dst[y * cw..(y + 1) * cw].copy_from_slice(&src[s..s + cw]);
        }
    }
    out
}

fn crop_labels(y: &[u8], width: usize, (y0, x0, ch, cw): (usize, usize, usize, usize)) -> Vec<u8> {
    let mut out = Vec::with_capacity(ch * cw);
    for row in 0..ch {
        let s = (y0 + row) * width + x0;
        out.extend_from_slice(&y[s..s + cw]);
    }
    out
}

/// Accumulates the gradient of the mean cross-entropy over one batch into
/// `grads`; returns (loss sum, scored pixel count).
fn batch_gradient<T: Scalar>(
    net: &SegNet<T>,
    batch: impl Iterator<Item = (Tensor3<T>, Vec<u8>)>,
    ignore: u8,
    grads: &mut [T],
) -> Result<(f64, usize)> {
    let mut loss = 0.0;
    let mut count = 0;
    for (x, y) in batch {
        let (out, cache) = net.forward_cached(&x)?;
        let ce = softmax_cross_entropy(&out, &y, ignore)?;
        if ce.count > 0 {
            net.backward(&cache, &ce.grad, grads);
        }
        loss += ce.loss_sum;
        count += ce.count;
    }
    if count > 0 {
        let inv = T::from_f64_lossy(1.0 / count as f64);
        for g in grads.iter_mut() {
            *g *= inv;
        }
    }
    Ok((loss, count))
}

struct Loop<'a, T> {
    config: &'a TrainConfig,
    source: &'a TrainSet<T>,
    target: Option<&'a [Tensor3<T>]>,
    use_teacher: bool,
    transform: Option<&'a InputTransform<'a, T>>,
}

/// Maps each (cropped) source input to the tensor the network consumes.
pub type InputTransform<'a, T> = dyn Fn(&Tensor3<T>) -> Result<Tensor3<T>> + 'a;

impl<T: Scalar> Loop<'_, T> {
    fn run(self, mut student: SegNet<T>) -> Result<TrainOutcome<T>> {
        let cfg = self.config;
        cfg.validate()?;
        if self.source.is_empty() {
            return Err(Error::Contract("training set is empty".into()));
        }
        self.source.check_targets(student.n_out())?;
        if self.transform.is_none() {
            for x in self.source.inputs.iter().chain(self.target.unwrap_or(&[])) {
                student.check_input(x)?;
            }
        }
        if matches!(self.target, Some(t) if t.is_empty()) {
            return Err(Error::Contract("target image set is empty".into()));
        }

        let ignore = self.source.ignore_id;
        let stride = student.arch().stride();
        let mut source_batches = BatchSampler::new(self.source.len(), cfg.seed, 0);
        let mut target_batches = BatchSampler::new(self.target.map_or(0, <[_]>::len), cfg.seed, 1);
        let mut source_crops = Cropper::new(cfg.crop, stride, cfg.seed, 2);
        let mut target_crops = Cropper::new(cfg.crop, stride, cfg.seed, 3);

        let n_params = student.param_count();
        let mut optimizer = Optimizer::new(cfg.optimizer, n_params);
        let mut teacher = self.use_teacher.then(|| student.clone());
        let mut previous = (cfg.ema_mode == EmaMode::PreviousStudent && self.use_teacher)
            .then(|| student.params().as_slice().to_vec());
        let alpha = T::from_f64_lossy(cfg.ema_alpha);
        let mut grads = vec![T::zero(); n_params];
        let mut target_grads = vec![T::zero(); if self.target.is_some() { n_params } else { 0 }];
        let mut log = Vec::with_capacity(cfg.iterations);

        student.set_mode(Mode::Train);
        for step in 0..cfg.iterations {
            let lr = lr_schedule(step, cfg)?;
            grads.iter_mut().for_each(|g| *g = T::zero());
            let batch = source_batches.next_batch(cfg.batch_size);
            let mut samples = Vec::with_capacity(batch.len());
            for &i in &batch {
                let (x, y) = (&self.source.inputs[i], &self.source.labels[i]);
                let (x, y) = match source_crops.window(x.height(), x.width()) {
                    Some(win) => (crop_tensor(x, win), crop_labels(y, x.width(), win)),
                    None => (x.clone(), y.clone()),
                };
                let x = match self.transform {
                    Some(f) => f(&x)?,
                    None => x,
                };
                samples.push((x, y));
            }
            let (loss_sum, count) = batch_gradient(&student, samples.into_iter(), ignore, &mut grads)?;
            if count == 0 {
                return Err(Error::Divergence {
                    step,
                    reason: "batch has no supervised pixels".into(),
                });
            }
            let mut loss = loss_sum / count as f64;

            let mut target_loss = None;
            let mut pseudo_fraction = None;
            if let (Some(images), Some(teacher)) = (self.target, teacher.as_ref()) {
                target_grads.iter_mut().for_each(|g| *g = T::zero());
                let mut total = 0usize;
                let mut pseudo = Vec::with_capacity(cfg.batch_size);
                for i in target_batches.next_batch(cfg.batch_size) {
                    let x = &images[i];
                    let x = match target_crops.window(x.height(), x.width()) {
                        Some(win) => crop_tensor(x, win),
                        None => x.clone(),
                    };
                    let y = pseudo_labels(&teacher.forward(&x)?, cfg.pseudo_threshold, ignore);
                    total += y.len();
                    pseudo.push((x, y));
                }
                let (tl, tc) = batch_gradient(&student, pseudo.into_iter(), ignore, &mut target_grads)?;
                pseudo_fraction = Some(tc as f64 / total.max(1) as f64);
                if tc > 0 {
                    let mean = tl / tc as f64;
                    target_loss = Some(mean);
                    loss += mean;
                    for (g, t) in grads.iter_mut().zip(&target_grads) {
                        *g += *t;
                    }
                }
            }

            if !loss.is_finite() {
                return Err(Error::Divergence {
                    step,
                    reason: format!("loss is {loss}"),
                });
            }
            if let Some(clip) = cfg.grad_clip {
                let norm = grads.iter().map(|g| g.to_f64_lossy().powi(2)).sum::<f64>().sqrt();
                if norm > clip {
                    let scale = T::from_f64_lossy(clip / norm);
                    grads.iter_mut().for_each(|g| *g *= scale);
                }
            }
            optimizer.step(student.params_mut().as_mut_slice(), &grads, lr);
            if let Some(teacher) = teacher.as_mut() {
                let current = student.params().as_slice();
                match previous.as_mut() {
                    Some(prev) => {
                        ema_update_from_previous(teacher.params_mut().as_mut_slice(), prev, current, alpha)?;
                        prev.copy_from_slice(current);
                    }
                    None => ema_update(teacher.params_mut().as_mut_slice(), current, alpha)?,
                }
            }
            log.push(StepLog {
                step,
                lr,
                loss,
                target_loss,
                pseudo_fraction,
            });
        }
        student.set_mode(Mode::Eval);
        Ok(TrainOutcome {
            student,
            teacher,
            log,
        })
    }
}

/// Minimises pixel-wise cross-entropy on labelled data for
/// `config.iterations` steps.
pub fn train_supervised<T: Scalar>(model: SegNet<T>, data: &TrainSet<T>, config: &TrainConfig) -> Result<TrainOutcome<T>> {
    Loop {
        config,
        source: data,
        target: None,
        use_teacher: false,
        transform: None,
    }
    .run(model)
}

/// Supervised training with an EMA teacher that follows the student after
/// every step.
pub fn train_with_teacher<T: Scalar>(model: SegNet<T>, data: &TrainSet<T>, config: &TrainConfig) -> Result<TrainOutcome<T>> {
    Loop {
        config,
        source: data,
        target: None,
        use_teacher: true,
        transform: None,
    }
    .run(model)
}

/// [`train_with_teacher`] where every source input passes through
/// `transform` before the forward pass.
pub fn train_with_teacher_mapped<T: Scalar>(
    model: SegNet<T>,
    data: &TrainSet<T>,
    config: &TrainConfig,
    transform: &InputTransform<'_, T>,
) -> Result<TrainOutcome<T>> {
    Loop {
        config,
        source: data,
        target: None,
        use_teacher: true,
        transform: Some(transform),
    }
    .run(model)
}

/// Mean-teacher self-training: each step adds cross-entropy on target images
/// against the teacher's confident argmax predictions.
pub fn train_selftrain<T: Scalar>(
    model: SegNet<T>,
    source: &TrainSet<T>,
    target: &[Tensor3<T>],
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    Loop {
        config,
        source,
        target: Some(target),
        use_teacher: true,
        transform: None,
    }
    .run(model)
}

/// Category-local prediction.
pub fn predict_category<T: Scalar>(net: &SegNet<T>, image: &Tensor3<T>, category_index: usize) -> Result<CategoryMask> {
    let data = net.predict(image)?;
    CategoryMask::new(category_index, image.height(), image.width(), data)
}

/// Global-class prediction of a monolithic model.
pub fn predict_label<T: Scalar>(net: &SegNet<T>, image: &Tensor3<T>) -> Result<LabelMask> {
    let data = net.predict(image)?;
    LabelMask::new(image.height(), image.width(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ArchSpec;

    fn micro_arch(n_out: usize) -> ArchSpec {
        ArchSpec {
            in_channels: 3,
            encoder: vec![4, 6],
            decoder: vec![4],
            n_out,
        }
    }

    /// Two-class toy: label is 1 where the red channel is bright.
    fn bright_red(n: usize, seed: u64) -> TrainSet<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let mut x = Tensor3::zeros(3, 8, 8);
            let mut y = vec![0u8; 64];
            for p in 0..64 {
                let on = rng.gen_bool(0.5);
                x.plane_mut(0)[p] = if on { 0.9 } else { 0.1 };
                x.plane_mut(1)[p] = rng.gen_range(0.0..1.0);
                y[p] = u8::from(on);
            }
            inputs.push(x);
            labels.push(y);
        }
        TrainSet::new(inputs, labels, 255).unwrap()
    }

    fn quick(n: usize) -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            ..TrainConfig::category_desk(n)
        }
    }

    #[test]
    fn zero_iterations_returns_initialisation() {
        let net = SegNet::<f32>::new(micro_arch(2), 4).unwrap();
        let out = train_supervised(net.clone(), &bright_red(3, 0), &quick(0)).unwrap();
        assert_eq!(out.student.params(), net.params());
        assert!(out.final_loss().is_none());
    }

    #[test]
    fn learns_a_colour_rule() {
        let net = SegNet::<f32>::new(micro_arch(2), 4).unwrap();
        let out = train_supervised(net, &bright_red(8, 1), &quick(300)).unwrap();
        assert!(out.final_loss().unwrap() < 0.1, "{:?}", out.final_loss());
    }

    #[test]
    fn all_ignore_labels_fail_at_step_zero() {
        let mut data = bright_red(2, 0);
        for y in &mut data.labels {
            y.fill(255);
        }
        let net = SegNet::<f32>::new(micro_arch(2), 0).unwrap();
        match train_supervised(net, &data, &quick(5)) {
            Err(Error::Divergence { step: 0, .. }) => {}
            other => panic!("expected divergence at step 0, got {:?}", other.map(|o| o.log.len())),
        }
    }

    #[test]
    fn label_beyond_outputs_is_data_error() {
        let mut data = bright_red(2, 0);
        data.labels[1][3] = 7;
        let net = SegNet::<f32>::new(micro_arch(2), 0).unwrap();
        assert!(matches!(train_supervised(net, &data, &quick(5)), Err(Error::Data(_))));
    }

    #[test]
    fn exploding_rate_reports_divergence() {
        let net = SegNet::<f32>::new(micro_arch(2), 0).unwrap();
        let mut cfg = quick(200);
        cfg.base_lr = 1e30;
        cfg.optimizer = crate::segtrain::OptimizerKind::Sgd { momentum: 0.0, weight_decay: 0.0 };
        assert!(matches!(train_supervised(net, &bright_red(4, 0), &cfg), Err(Error::Divergence { .. })));
    }

    #[test]
    fn same_seed_same_parameters() {
        let data = bright_red(4, 2);
        let a = train_supervised(SegNet::<f32>::new(micro_arch(2), 1).unwrap(), &data, &quick(20)).unwrap();
        let b = train_supervised(SegNet::<f32>::new(micro_arch(2), 1).unwrap(), &data, &quick(20)).unwrap();
        assert_eq!(a.student.params(), b.student.params());
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn closed_gate_matches_supervised() {
        let data = bright_red(4, 3);
        let target: Vec<_> = bright_red(3, 9).inputs;
        let mut cfg = quick(15);
        cfg.pseudo_threshold = 1.0;
        let sup = train_supervised(SegNet::<f32>::new(micro_arch(2), 1).unwrap(), &data, &cfg).unwrap();
        let st = train_selftrain(SegNet::<f32>::new(micro_arch(2), 1).unwrap(), &data, &target, &cfg).unwrap();
        assert_eq!(sup.student.params(), st.student.params());
        assert!(st.log.iter().all(|s| s.pseudo_fraction == Some(0.0)));
    }

    #[test]
    fn alpha_zero_teacher_tracks_student() {
        let data = bright_red(4, 3);
        let target: Vec<_> = bright_red(3, 9).inputs;
        let mut cfg = quick(10);
        cfg.ema_alpha = 0.0;
        let st = train_selftrain(SegNet::<f32>::new(micro_arch(2), 1).unwrap(), &data, &target, &cfg).unwrap();
        assert_eq!(st.teacher.unwrap().params(), st.student.params());
    }

    #[test]
    fn crops_respect_stride() {
        let data = bright_red(3, 0);
        let mut cfg = quick(4);
        cfg.crop = Some((5, 7));
        let out = train_supervised(SegNet::<f32>::new(micro_arch(2), 1).unwrap(), &data, &cfg).unwrap();
        assert_eq!(out.log.len(), 4);
    }
}
