//! U-shaped encoder-decoder segmentation network with skip connections.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ops::{
    avg_pool2, avg_pool2_backward, conv2d, conv2d_backward, relu_backward_inplace, relu_inplace,
    upsample2, upsample2_backward,
};
use super::params::ParamStore;
use super::tensor::Tensor3;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Network shape: one encoder stage per entry of `encoder` (two 3×3 convs
/// each, 2×2 average pooling between stages) and one decoder stage per skip
/// connection, finished by a 1×1 head producing `n_out` scores.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub in_channels: usize,
    pub encoder: Vec<usize>,
    /// `decoder[d]` is the width of the stage that merges encoder stage `d`.
    pub decoder: Vec<usize>,
    pub n_out: usize,
}

impl ArchSpec {
    /// Default preset for RGB category and monolithic models.
    pub fn category(n_out: usize) -> Self {
        Self {
            in_channels: 3,
            encoder: vec![12, 24, 32],
            decoder: vec![12, 24],
            n_out,
        }
    }

    /// Default (smaller) preset for the fusion network.
    pub fn ensemble(n_categories: usize, n_classes: usize) -> Self {
        Self {
            in_channels: n_categories,
            encoder: vec![24, 24],
            decoder: vec![24],
            n_out: n_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.is_empty() {
            return Err(Error::Contract("architecture needs at least one encoder stage".into()));
        }
        if self.decoder.len() + 1 != self.encoder.len() {
            return Err(Error::Contract(format!(
                "{} encoder stages need {} decoder widths, got {}",
                self.encoder.len(),
                self.encoder.len() - 1,
                self.decoder.len()
            )));
        }
        if self.in_channels == 0
            || self.n_out == 0
            || self.n_out > 256
            || self.encoder.iter().chain(&self.decoder).any(|&w| w == 0)
        {
            return Err(Error::Contract("architecture widths must be positive (n_out ≤ 256)".into()));
        }
        Ok(())
    }

    /// Spatial dimensions must be multiples of this value.
    pub fn stride(&self) -> usize {
        1 << (self.encoder.len() - 1)
    }

    fn stages(&self) -> usize {
        self.encoder.len()
    }

    /// Conv layers in parameter order.
    fn convs(&self) -> Vec<ConvSpec> {
        let s = self.stages();
        let mut convs = Vec::with_capacity(3 * s);
        let mut prev = self.in_channels;
        for (i, &w) in self.encoder.iter().enumerate() {
            convs.push(ConvSpec::new(format!("enc{i}.conv_a"), prev, w, 3));
            convs.push(ConvSpec::new(format!("enc{i}.conv_b"), w, w, 3));
            prev = w;
        }
        let mut cur = self.encoder[s - 1];
        for d in (0..s - 1).rev() {
            convs.push(ConvSpec::new(
                format!("dec{d}.conv"),
                cur + self.encoder[d],
                self.decoder[d],
                3,
            ));
            cur = self.decoder[d];
        }
        convs.push(ConvSpec::new("head".to_string(), cur, self.n_out, 1));
        convs
    }

    /// Exact number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.convs()
            .iter()
            .map(|c| c.out_c * c.in_c * c.k * c.k + c.out_c)
            .sum()
    }
}

#[derive(Debug, Clone)]
struct ConvSpec {
    name: String,
    in_c: usize,
    out_c: usize,
    k: usize,
}

impl ConvSpec {
    fn new(name: String, in_c: usize, out_c: usize, k: usize) -> Self {
        Self {
            name,
            in_c,
            out_c,
            k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Activations saved by a training forward pass.
pub struct Cache<T> {
    inputs: Vec<Option<Tensor3<T>>>,
    outputs: Vec<Option<Tensor3<T>>>,
}

#[derive(Debug, Clone)]
pub struct SegNet<T> {
    arch: ArchSpec,
    convs: Vec<ConvSpec>,
    /// (weight offset, bias offset) per conv into the flat parameter vector.
    offsets: Vec<(usize, usize)>,
    params: ParamStore<T>,
    mode: Mode,
}

impl<T: Scalar> SegNet<T> {
    /// He-normal weights and zero biases from a seeded generator.
    pub fn new(arch: ArchSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let convs = arch.convs();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut offsets = Vec::with_capacity(convs.len());
        for c in &convs {
            let fan_in = (c.in_c * c.k * c.k) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            let w: Vec<T> = (0..c.out_c * c.in_c * c.k * c.k)
                .map(|_| T::from_f64_lossy(normal.sample(&mut rng)))
                .collect();
            let wo = params.push(format!("{}.weight", c.name), vec![c.out_c, c.in_c, c.k, c.k], &w);
            let bo = params.push(format!("{}.bias", c.name), vec![c.out_c], &vec![T::zero(); c.out_c]);
            offsets.push((wo, bo));
        }
        Ok(Self {
            arch,
            convs,
            offsets,
            params,
            mode: Mode::Eval,
        })
    }

    /// Rebuilds a network around an existing parameter store, checking that
    /// names and shapes match the architecture.
    pub fn from_params(arch: ArchSpec, params: ParamStore<T>) -> Result<Self> {
        let mut net = Self::new(arch, 0)?;
        if !net.params.same_layout(&params) {
            return Err(Error::Contract(
                "parameter names or shapes do not match the architecture".into(),
            ));
        }
        net.params = params;
        Ok(net)
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn n_out(&self) -> usize {
        self.arch.n_out
    }

    pub fn check_input(&self, x: &Tensor3<T>) -> Result<()> {
        if x.channels() != self.arch.in_channels {
            return Err(Error::Contract(format!(
                "network expects {} input channels, got {}",
                self.arch.in_channels,
                x.channels()
            )));
        }
        let stride = self.arch.stride();
        if x.height() == 0 || x.width() == 0 || x.height() % stride != 0 || x.width() % stride != 0 {
            return Err(Error::Contract(format!(
                "input {}x{} not supported: height and width must be positive multiples of {stride}",
                x.height(),
                x.width()
            )));
        }
        Ok(())
    }

    /// Class scores, `n_out × H × W`.
    pub fn forward(&self, x: &Tensor3<T>) -> Result<Tensor3<T>> {
        self.check_input(x)?;
        Ok(self.run(x, None))
    }

    pub fn forward_cached(&self, x: &Tensor3<T>) -> Result<(Tensor3<T>, Cache<T>)> {
        self.check_input(x)?;
        let n = self.convs.len();
        let mut cache = Cache {
            inputs: vec![None; n],
            outputs: vec![None; n],
        };
        let out = self.run(x, Some(&mut cache));
        Ok((out, cache))
    }

    /// Per-pixel argmax of the scores. Requires eval mode.
    pub fn predict(&self, x: &Tensor3<T>) -> Result<Vec<u8>> {
        if self.mode != Mode::Eval {
            return Err(Error::Contract("predict requires a model in eval mode".into()));
        }
        Ok(self.forward(x)?.argmax_channels())
    }

    fn conv(&self, idx: usize, x: &Tensor3<T>) -> Tensor3<T> {
        let c = &self.convs[idx];
        let (wo, bo) = self.offsets[idx];
        let data = self.params.as_slice();
        conv2d(
            x,
            &data[wo..wo + c.out_c * c.in_c * c.k * c.k],
            &data[bo..bo + c.out_c],
            c.out_c,
            c.k,
        )
    }

    fn conv_relu(&self, idx: usize, x: Tensor3<T>, cache: &mut Option<&mut Cache<T>>) -> Tensor3<T> {
        let mut y = self.conv(idx, &x);
        relu_inplace(&mut y);
        if let Some(c) = cache.as_deref_mut() {
            c.inputs[idx] = Some(x);
            c.outputs[idx] = Some(y.clone());
        }
        y
    }

    fn run(&self, x: &Tensor3<T>, mut cache: Option<&mut Cache<T>>) -> Tensor3<T> {
        let s = self.arch.stages();
        let mut skips: Vec<Tensor3<T>> = Vec::with_capacity(s);
        let mut cur = x.clone();
        for stage in 0..s {
            if stage > 0 {
                cur = avg_pool2(&cur);
            }
            let a = self.conv_relu(2 * stage, cur, &mut cache);
            let b = self.conv_relu(2 * stage + 1, a, &mut cache);
            skips.push(b.clone());
            cur = b;
        }
        let mut idx = 2 * s;
        for d in (0..s - 1).rev() {
            let merged = upsample2(&cur).concat(&skips[d]);
            cur = self.conv_relu(idx, merged, &mut cache);
            idx += 1;
        }
        let logits = self.conv(idx, &cur);
        if let Some(c) = cache.as_deref_mut() {
            c.inputs[idx] = Some(cur);
        }
        logits
    }

    fn conv_backward(&self, idx: usize, input: &Tensor3<T>, dout: &Tensor3<T>, grads: &mut [T], want_input: bool) -> Option<Tensor3<T>> {
        let c = &self.convs[idx];
        let (wo, bo) = self.offsets[idx];
        let wlen = c.out_c * c.in_c * c.k * c.k;
        debug_assert_eq!(bo, wo + wlen);
        let weight = &self.params.as_slice()[wo..wo + wlen];
        let (dw, rest) = grads[wo..].split_at_mut(wlen);
        let db = &mut rest[..c.out_c];
        let mut din = want_input.then(|| Tensor3::zeros(input.channels(), input.height(), input.width()));
        conv2d_backward(input, weight, dout, c.k, dw, db, din.as_mut());
        din
    }

    /// Accumulates parameter gradients of `<dlogits, logits>` into `grads`.
    pub fn backward(&self, cache: &Cache<T>, dlogits: &Tensor3<T>, grads: &mut [T]) {
        assert_eq!(grads.len(), self.params.len(), "gradient buffer length");
        let s = self.arch.stages();
        let head = 3 * s - 1;
        let input_of = |i: usize| cache.inputs[i].as_ref().expect("cached input");
        let output_of = |i: usize| cache.outputs[i].as_ref().expect("cached output");

        let mut dcur = self
            .conv_backward(head, input_of(head), dlogits, grads, true)
            .expect("input gradient");
        let mut dskips: Vec<Option<Tensor3<T>>> = vec![None; s];
        // decoder convs were created for d = s-2 .. 0, so dec d sits at 2s + (s-2-d)
        for d in 0..s - 1 {
            let idx = 2 * s + (s - 2 - d);
            relu_backward_inplace(output_of(idx), &mut dcur);
            let dmerged = self
                .conv_backward(idx, input_of(idx), &dcur, grads, true)
                .expect("input gradient");
            let up_channels = dmerged.channels() - self.arch.encoder[d];
            let (dup, dskip) = dmerged.split(up_channels);
            dskips[d] = Some(dskip);
            dcur = upsample2_backward(&dup);
        }
        add_into(&mut dskips[s - 1], dcur);

        let mut carry: Option<Tensor3<T>> = None;
        for stage in (0..s).rev() {
            let mut g = dskips[stage].take().expect("skip gradient");
            if let Some(c) = carry.take() {
                for (a, b) in g.as_mut_slice().iter_mut().zip(c.as_slice()) {
                    *a += *b;
                }
            }
            let (ia, ib) = (2 * stage, 2 * stage + 1);
            relu_backward_inplace(output_of(ib), &mut g);
            let mut da = self
                .conv_backward(ib, input_of(ib), &g, grads, true)
                .expect("input gradient");
            relu_backward_inplace(output_of(ia), &mut da);
            let dx = self.conv_backward(ia, input_of(ia), &da, grads, stage > 0);
            if let Some(dx) = dx {
                carry = Some(avg_pool2_backward(&dx));
            }
        }
    }
}

fn add_into<T: Scalar>(slot: &mut Option<Tensor3<T>>, t: Tensor3<T>) {
    match slot {
        Some(existing) => {
            for (a, b) in existing.as_mut_slice().iter_mut().zip(t.as_slice()) {
                *a += *b;
            }
        }
        None => *slot = Some(t),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_shape_and_argmax_range() {
        let arch = ArchSpec::category(5);
        let net: SegNet<f32> = SegNet::new(arch, 3).unwrap();
        let x = Tensor3::from_vec(3, 8, 12, (0..288).map(|i| (i % 7) as f32 / 7.0).collect()).unwrap();
        let y = net.forward(&x).unwrap();
        assert_eq!((y.channels(), y.height(), y.width()), (5, 8, 12));
        let p = net.predict(&x).unwrap();
        assert!(p.iter().all(|&v| v < 5));
        assert_eq!(p, net.predict(&x).unwrap());
    }

    #[test]
    fn stride_violation_names_divisor() {
        let net: SegNet<f32> = SegNet::new(ArchSpec::category(3), 0).unwrap();
        let err = net.forward(&Tensor3::zeros(3, 6, 8)).unwrap_err();
        assert!(err.to_string().contains("multiples of 4"));
    }

    #[test]
    fn predict_refuses_train_mode() {
        let mut net: SegNet<f32> = SegNet::new(ArchSpec::category(3), 0).unwrap();
        net.set_mode(Mode::Train);
        assert!(net.predict(&Tensor3::zeros(3, 4, 4)).is_err());
    }

    #[test]
    fn param_count_matches_store() {
        for arch in [ArchSpec::category(9), ArchSpec::ensemble(4, 19)] {
            let net: SegNet<f64> = SegNet::new(arch.clone(), 0).unwrap();
            assert_eq!(net.param_count(), arch.param_count());
        }
        assert!(ArchSpec::ensemble(4, 19).param_count() < ArchSpec::category(5).param_count());
    }

    #[test]
    fn single_stage_network_runs() {
        let arch = ArchSpec {
            in_channels: 2,
            encoder: vec![3],
            decoder: vec![],
            n_out: 2,
        };
        let net: SegNet<f64> = SegNet::new(arch, 1).unwrap();
        let y = net.forward(&Tensor3::zeros(2, 3, 5)).unwrap();
        assert_eq!(y.channels(), 2);
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        use crate::nn::loss::softmax_cross_entropy;
        use rand::Rng;

        let arch = ArchSpec {
            in_channels: 3,
            encoder: vec![3, 4],
            decoder: vec![3],
            n_out: 2,
        };
        let mut net: SegNet<f64> = SegNet::new(arch, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // nudge biases off zero so ReLU kinks are not sitting on the probe points
        for v in net.params_mut().as_mut_slice() {
            *v += rng.gen_range(-0.05..0.05);
        }
        let x = Tensor3::from_vec(3, 4, 4, (0..48).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let labels: Vec<u8> = (0..16).map(|_| rng.gen_range(0..2)).collect();

        let loss = |net: &SegNet<f64>| {
            let y = net.forward(&x).unwrap();
            softmax_cross_entropy(&y, &labels, 255).unwrap().loss_sum
        };
        let (y, cache) = net.forward_cached(&x).unwrap();
        let ce = softmax_cross_entropy(&y, &labels, 255).unwrap();
        let mut grads = vec![0.0; net.param_count()];
        net.backward(&cache, &ce.grad, &mut grads);

        let eps = 1e-6;
        let mut num = vec![0.0; grads.len()];
        for i in 0..grads.len() {
            let orig = net.params().as_slice()[i];
            net.params_mut().as_mut_slice()[i] = orig + eps;
            let up = loss(&net);
            net.params_mut().as_mut_slice()[i] = orig - eps;
            let down = loss(&net);
            net.params_mut().as_mut_slice()[i] = orig;
            num[i] = (up - down) / (2.0 * eps);
        }
        let diff: f64 = grads.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = num.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(diff / scale <= 1e-4, "relative error {}", diff / scale);
    }
}
