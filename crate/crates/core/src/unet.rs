//! UNet encoder/decoder built from [`crate::tensorcore`] layers, its training
//! loop with k-fold cross-validation, and mask prediction.

use std::cell::RefCell;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::error::{Error, Result};
use crate::imgio::{
    resize_bilinear, resize_nearest, BinaryMask, DatasetEntry, GrayImage, SplitSpec,
};
use crate::metrics;
use crate::tensorcore::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
use crate::tensorcore::{
    adam_step, bce_logits_grad, bce_loss, concat_channels, concat_channels_backward, conv2d,
    conv2d_backward, conv_transpose2d, conv_transpose2d_backward, maxpool2d, maxpool2d_backward,
    relu, relu_backward, sigmoid, sigmoid_backward, soft_dice_grad, soft_dice_loss, AdamConfig,
    Parameter, Scalar, Tensor,
};

/// Smoothing term of the soft Dice loss.
pub const DICE_SMOOTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UNetConfig {
    /// Number of down-sampling levels.
    pub depth: usize,
    /// Channels at the first level; doubled at every level below.
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Square working resolution; must be divisible by `2^depth`.
    pub input_size: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            base_channels: 8,
            in_channels: 1,
            out_channels: 1,
            input_size: 128,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 || self.base_channels < 1 {
            return Err(Error::InvalidConfig(
                "depth and base_channels must be >= 1".into(),
            ));
        }
        if self.in_channels < 1 || self.out_channels < 1 {
            return Err(Error::InvalidConfig("channel counts must be >= 1".into()));
        }
        if self.depth >= usize::BITS as usize - 1 {
            return Err(Error::InvalidConfig(format!(
                "depth {} too large",
                self.depth
            )));
        }
        let step = 1usize << self.depth;
        if self.input_size == 0 || !self.input_size.is_multiple_of(step) {
            return Err(Error::InvalidConfig(format!(
                "input size {} is not divisible by 2^{} = {step}",
                self.input_size, self.depth
            )));
        }
        Ok(())
    }

    /// Channels produced at encoder level `level` (the bottleneck is level `depth`).
    pub fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

#[derive(Debug, Clone)]
struct ConvLayer<T> {
    weight: Parameter<T>,
    bias: Parameter<T>,
    padding: usize,
}

impl<T: Scalar> ConvLayer<T> {
    fn new(rng: &mut SplitMix64, in_c: usize, out_c: usize, k: usize) -> Self {
        let fan_in = (in_c * k * k) as f64;
        Self {
            weight: Parameter::new(he_uniform(rng, [out_c, in_c, k, k], fan_in)),
            bias: Parameter::new(Tensor::zeros([out_c, 1, 1, 1])),
            padding: k / 2,
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(
            x,
            &self.weight.value,
            self.bias.value.data(),
            self.padding,
            1,
        )
    }

    fn backward(&mut self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g = conv2d_backward(x, &self.weight.value, grad_out, self.padding, 1)?;
        self.weight.accumulate(g.weight.data());
        self.bias.accumulate(&g.bias);
        Ok(g.input)
    }
}

/// Two 3x3 conv + ReLU stages.
#[derive(Debug, Clone)]
struct DoubleConv<T> {
    first: ConvLayer<T>,
    second: ConvLayer<T>,
}

struct DoubleConvCache<T> {
    input: Tensor<T>,
    pre_first: Tensor<T>,
    act_first: Tensor<T>,
    pre_second: Tensor<T>,
}

impl<T: Scalar> DoubleConv<T> {
    fn new(rng: &mut SplitMix64, in_c: usize, out_c: usize) -> Self {
        Self {
            first: ConvLayer::new(rng, in_c, out_c, 3),
            second: ConvLayer::new(rng, out_c, out_c, 3),
        }
    }

    fn forward(&self, x: Tensor<T>) -> Result<(Tensor<T>, DoubleConvCache<T>)> {
        let pre_first = self.first.forward(&x)?;
        let act_first = relu(&pre_first);
        let pre_second = self.second.forward(&act_first)?;
        let out = relu(&pre_second);
        Ok((
            out,
            DoubleConvCache {
                input: x,
                pre_first,
                act_first,
                pre_second,
            },
        ))
    }

    fn backward(&mut self, cache: &DoubleConvCache<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g = relu_backward(&cache.pre_second, grad_out);
        let g = self.second.backward(&cache.act_first, &g)?;
        let g = relu_backward(&cache.pre_first, &g);
        self.first.backward(&cache.input, &g)
    }

    fn params(&self) -> [&Parameter<T>; 4] {
        [
            &self.first.weight,
            &self.first.bias,
            &self.second.weight,
            &self.second.bias,
        ]
    }

    fn params_mut(&mut self) -> [&mut Parameter<T>; 4] {
        [
            &mut self.first.weight,
            &mut self.first.bias,
            &mut self.second.weight,
            &mut self.second.bias,
        ]
    }
}

/// 2x2 stride-2 transposed conv followed by skip concatenation and a double conv.
#[derive(Debug, Clone)]
struct UpLevel<T> {
    up_weight: Parameter<T>,
    up_bias: Parameter<T>,
    block: DoubleConv<T>,
}

fn he_uniform<T: Scalar>(rng: &mut SplitMix64, shape: [usize; 4], fan_in: f64) -> Tensor<T> {
    let bound = (6.0 / fan_in).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..bound)))
}

/// The segmentation network. `T` is `f32` for training and `f64` for
/// gradient checks.
#[derive(Debug, Clone)]
pub struct UNet<T> {
    cfg: UNetConfig,
    encoder: Vec<DoubleConv<T>>,
    bottleneck: DoubleConv<T>,
    /// Indexed by level, like `encoder`; level 0 is the shallowest.
    decoder: Vec<UpLevel<T>>,
    head: ConvLayer<T>,
}

/// Activations kept from a forward pass for the backward pass.
pub struct ForwardCache<T> {
    encoder: Vec<(DoubleConvCache<T>, [usize; 4], Vec<usize>)>,
    skip_channels: Vec<usize>,
    bottleneck: DoubleConvCache<T>,
    decoder: Vec<(Tensor<T>, DoubleConvCache<T>)>,
    head_input: Tensor<T>,
    probs: Tensor<T>,
}

impl<T> ForwardCache<T> {
    pub fn probs(&self) -> &Tensor<T> {
        &self.probs
    }
}

impl<T: Scalar> UNet<T> {
    /// Builds the network with He-uniform weights drawn from a SplitMix64
    /// stream seeded with `seed`; biases start at zero.
    pub fn new(cfg: UNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SplitMix64::seed_from_u64(seed);
        let mut encoder = Vec::with_capacity(cfg.depth);
        let mut in_c = cfg.in_channels;
        for level in 0..cfg.depth {
            let out_c = cfg.channels_at(level);
            encoder.push(DoubleConv::new(&mut rng, in_c, out_c));
            in_c = out_c;
        }
        let bottleneck = DoubleConv::new(&mut rng, in_c, cfg.channels_at(cfg.depth));
        let mut decoder: Vec<UpLevel<T>> = Vec::with_capacity(cfg.depth);
        for level in (0..cfg.depth).rev() {
            let (from, to) = (cfg.channels_at(level + 1), cfg.channels_at(level));
            decoder.push(UpLevel {
                up_weight: Parameter::new(he_uniform(&mut rng, [from, to, 2, 2], from as f64)),
                up_bias: Parameter::new(Tensor::zeros([to, 1, 1, 1])),
                block: DoubleConv::new(&mut rng, 2 * to, to),
            });
        }
        decoder.reverse();
        let head = ConvLayer::new(&mut rng, cfg.base_channels, cfg.out_channels, 1);
        Ok(Self {
            cfg,
            encoder,
            bottleneck,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.cfg
    }

    /// Parameters in declaration order: encoder levels, bottleneck, decoder
    /// levels from deepest to shallowest, head.
    pub fn params(&self) -> Vec<&Parameter<T>> {
        let mut out: Vec<&Parameter<T>> = Vec::new();
        for block in &self.encoder {
            out.extend(block.params());
        }
        out.extend(self.bottleneck.params());
        for up in self.decoder.iter().rev() {
            out.push(&up.up_weight);
            out.push(&up.up_bias);
            out.extend(up.block.params());
        }
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out: Vec<&mut Parameter<T>> = Vec::new();
        for block in &mut self.encoder {
            out.extend(block.params_mut());
        }
        out.extend(self.bottleneck.params_mut());
        for up in self.decoder.iter_mut().rev() {
            out.push(&mut up.up_weight);
            out.push(&mut up.up_bias);
            out.extend(up.block.params_mut());
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Mutable access to the final 1x1 layer's weight and bias.
    pub fn head_mut(&mut self) -> (&mut Parameter<T>, &mut Parameter<T>) {
        (&mut self.head.weight, &mut self.head.bias)
    }

    pub fn flat_params(&self) -> Vec<T> {
        self.params()
            .iter()
            .flat_map(|p| p.value.data().to_vec())
            .collect()
    }

    pub fn set_flat_params(&mut self, values: &[T]) {
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.value
                .data_mut()
                .copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, values.len(), "flat parameter length");
    }

    /// Accumulated gradients in declaration order (zeros where none).
    pub fn flat_grads(&self) -> Vec<T> {
        self.params()
            .iter()
            .flat_map(|p| match &p.grad {
                Some(g) => g.data().to_vec(),
                None => vec![T::zero(); p.len()],
            })
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [_, c, h, w] = x.shape();
        let s = self.cfg.input_size;
        if c != self.cfg.in_channels || h != s || w != s {
            return Err(Error::ShapeMismatch(format!(
                "input {:?}, model expects [N, {}, {s}, {s}]",
                x.shape(),
                self.cfg.in_channels
            )));
        }
        Ok(())
    }

    pub fn forward_cached(&self, x: &Tensor<T>) -> Result<ForwardCache<T>> {
        self.check_input(x)?;
        let mut encoder = Vec::with_capacity(self.cfg.depth);
        let mut skips = Vec::with_capacity(self.cfg.depth);
        let mut current = x.clone();
        for block in &self.encoder {
            let (out, cache) = block.forward(current)?;
            let pooled = maxpool2d(&out)?;
            encoder.push((cache, out.shape(), pooled.argmax));
            skips.push(out);
            current = pooled.output;
        }
        let (mut current, bottleneck) = self.bottleneck.forward(current)?;
        let mut decoder = Vec::with_capacity(self.cfg.depth);
        let mut skip_channels = vec![0; self.cfg.depth];
        for level in (0..self.cfg.depth).rev() {
            let up = &self.decoder[level];
            let upsampled =
                conv_transpose2d(&current, &up.up_weight.value, up.up_bias.value.data())?;
            skip_channels[level] = upsampled.channels();
            let joined = concat_channels(&upsampled, &skips[level])?;
            let (out, cache) = up.block.forward(joined)?;
            decoder.push((current, cache));
            current = out;
        }
        decoder.reverse();
        let logits = self.head.forward(&current)?;
        let probs = sigmoid(&logits);
        Ok(ForwardCache {
            encoder,
            skip_channels,
            bottleneck,
            decoder,
            head_input: current,
            probs,
        })
    }

    /// Per-pixel lung probabilities, same shape as the input.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_cached(x)?.probs)
    }

    /// Backpropagates `grad_logits` (gradient with respect to the pre-sigmoid
    /// output) and accumulates parameter gradients.
    pub fn backward(&mut self, cache: &ForwardCache<T>, grad_logits: &Tensor<T>) -> Result<()> {
        let mut g = self.head.backward(&cache.head_input, grad_logits)?;
        let mut skip_grads = Vec::with_capacity(self.cfg.depth);
        // decoder ran deepest-first, so unwind it shallowest-first
        for level in 0..self.cfg.depth {
            let (up_input, block_cache) = &cache.decoder[level];
            let up = &mut self.decoder[level];
            let g_joined = up.block.backward(block_cache, &g)?;
            let (g_up, g_skip) = concat_channels_backward(&g_joined, cache.skip_channels[level])?;
            skip_grads.push(g_skip);
            let gt = conv_transpose2d_backward(up_input, &up.up_weight.value, &g_up)?;
            up.up_weight.accumulate(gt.weight.data());
            up.up_bias.accumulate(&gt.bias);
            g = gt.input;
        }
        g = self.bottleneck.backward(&cache.bottleneck, &g)?;
        for level in (0..self.cfg.depth).rev() {
            let (block_cache, out_shape, argmax) = &cache.encoder[level];
            let mut g_out = maxpool2d_backward(&g, argmax, *out_shape)?;
            g_out.add_assign(&skip_grads[level]);
            g = self.encoder[level].backward(block_cache, &g_out)?;
        }
        Ok(())
    }

    /// Mixed loss `mix * BCE + (1 - mix) * softDice` of the model's prediction.
    pub fn loss(&self, x: &Tensor<T>, target: &Tensor<T>, mix: f64) -> Result<T> {
        let probs = self.forward(x)?;
        mixed_loss(&probs, target, mix)
    }

    /// Forward pass, mixed loss and backward pass; gradients accumulate into
    /// the parameters. Returns the loss.
    pub fn loss_and_backward(&mut self, x: &Tensor<T>, target: &Tensor<T>, mix: f64) -> Result<T> {
        let cache = self.forward_cached(x)?;
        let probs = &cache.probs;
        let loss = mixed_loss(probs, target, mix)?;
        let grad_logits = mixed_loss_logits_grad(probs, target, mix)?;
        self.backward(&cache, &grad_logits)?;
        Ok(loss)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            depth: self.cfg.depth as u32,
            base_channels: self.cfg.base_channels as u32,
            tensors: self.params().iter().map(|p| p.value.cast()).collect(),
        }
    }

    /// Rebuilds a model from a checkpoint; the working size is not stored in
    /// the file and comes from the caller.
    pub fn from_checkpoint(ckpt: &Checkpoint, input_size: usize) -> Result<Self> {
        let cfg = UNetConfig {
            depth: ckpt.depth as usize,
            base_channels: ckpt.base_channels as usize,
            input_size,
            ..UNetConfig::default()
        };
        let mut model = Self::new(cfg, 0)?;
        let params = model.params_mut();
        if params.len() != ckpt.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "{} tensors for a model with {} parameters",
                ckpt.tensors.len(),
                params.len()
            )));
        }
        for (p, t) in params.into_iter().zip(&ckpt.tensors) {
            if p.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor shape {:?}, expected {:?}",
                    t.shape(),
                    p.shape()
                )));
            }
            p.value = t.cast();
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::Write {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        write_checkpoint(BufWriter::new(file), &self.to_checkpoint())
    }

    pub fn load(path: &Path, input_size: usize) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::FileMissing(path.to_path_buf()));
        }
        let ckpt = read_checkpoint(BufReader::new(File::open(path)?))?;
        Self::from_checkpoint(&ckpt, input_size)
    }
}

pub fn mixed_loss<T: Scalar>(probs: &Tensor<T>, target: &Tensor<T>, mix: f64) -> Result<T> {
    let bce = bce_loss(probs, target)?;
    let dice = soft_dice_loss(probs, target, T::of(DICE_SMOOTH))?;
    Ok(T::of(mix) * bce + T::of(1.0 - mix) * dice)
}

/// Gradient of [`mixed_loss`] with respect to the logits behind `probs`.
pub fn mixed_loss_logits_grad<T: Scalar>(
    probs: &Tensor<T>,
    target: &Tensor<T>,
    mix: f64,
) -> Result<Tensor<T>> {
    let mut g = bce_logits_grad(probs, target)?.map(|v| v * T::of(mix));
    let dice = soft_dice_grad(probs, target, T::of(DICE_SMOOTH))?;
    let dice = sigmoid_backward(probs, &dice).map(|v| v * T::of(1.0 - mix));
    g.add_assign(&dice);
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of BCE in `mix * BCE + (1 - mix) * softDice`.
    pub loss_mix: f64,
    pub folds: usize,
    pub seed: u64,
    /// Probability threshold used for validation Dice.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 4,
            loss_mix: 0.5,
            folds: 10,
            seed: 42,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.loss_mix) {
            return Err(Error::InvalidConfig(format!(
                "loss_mix {} outside [0, 1]",
                self.loss_mix
            )));
        }
        if self.folds < 2 {
            return Err(Error::InvalidConfig(format!(
                "folds must be >= 2, got {}",
                self.folds
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(
                "learning_rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-epoch training telemetry. `fold` is `None` for the final retrain on the
/// whole train+val pool, whose validation columns are measured on that pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRecord {
    pub fold: Option<usize>,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_dice: f64,
}

impl fmt::Display for TrainRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.fold {
            Some(k) => write!(f, "{k}")?,
            None => write!(f, "final")?,
        }
        write!(
            f,
            ",{},{:?},{:?},{:?}",
            self.epoch, self.train_loss, self.val_loss, self.val_dice
        )
    }
}

pub const RECORD_CSV_HEADER: &str = "fold,epoch,train_loss,val_loss,val_dice";

pub fn records_to_csv(records: &[TrainRecord]) -> String {
    let mut out = String::from(RECORD_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_string());
        out.push('\n');
    }
    out
}

/// A training example at working resolution: flattened image and 0/1 mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub id: String,
    pub image: Vec<f32>,
    pub mask: Vec<f32>,
}

impl TrainSample {
    pub fn from_entry(entry: &DatasetEntry, size: usize) -> Result<Self> {
        let mask = entry
            .mask
            .as_ref()
            .ok_or_else(|| Error::MissingMask(entry.id.clone()))?;
        let image = resize_bilinear(&entry.image, size, size)?;
        let mask = resize_nearest(mask, size, size)?;
        Ok(Self {
            id: entry.id.clone(),
            image: image.data().to_vec(),
            mask: mask
                .data()
                .iter()
                .map(|&v| if v { 1.0 } else { 0.0 })
                .collect(),
        })
    }
}

pub fn prepare_samples(entries: &[DatasetEntry], size: usize) -> Result<Vec<TrainSample>> {
    if entries.is_empty() {
        return Err(Error::EmptyDataset);
    }
    entries
        .iter()
        .map(|e| TrainSample::from_entry(e, size))
        .collect()
}

/// Indexed access to training samples. Training only reads data through this
/// trait, so wrappers can audit which entries were touched.
pub trait SampleSource {
    fn len(&self) -> usize;
    fn sample(&self, index: usize) -> &TrainSample;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SampleSource for [TrainSample] {
    fn len(&self) -> usize {
        <[TrainSample]>::len(self)
    }

    fn sample(&self, index: usize) -> &TrainSample {
        &self[index]
    }
}

impl SampleSource for Vec<TrainSample> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn sample(&self, index: usize) -> &TrainSample {
        &self[index]
    }
}

/// Records every index read from the wrapped source.
pub struct AccessLog<'a, S: ?Sized> {
    inner: &'a S,
    log: RefCell<Vec<usize>>,
}

impl<'a, S: SampleSource + ?Sized> AccessLog<'a, S> {
    pub fn new(inner: &'a S) -> Self {
        Self {
            inner,
            log: RefCell::new(Vec::new()),
        }
    }

    pub fn accessed(&self) -> Vec<usize> {
        self.log.borrow().clone()
    }
}

impl<S: SampleSource + ?Sized> SampleSource for AccessLog<'_, S> {
    fn len(&self) -> usize {
        self.inner.len()
    }

    fn sample(&self, index: usize) -> &TrainSample {
        self.log.borrow_mut().push(index);
        self.inner.sample(index)
    }
}

/// Partitions `pool` into `k` folds after a seeded shuffle; fold sizes differ
/// by at most one and each fold is sorted. A pool smaller than `k` leaves the
/// trailing folds empty.
pub fn cv_folds(pool: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("folds must be >= 2, got {k}")));
    }
    let mut order = pool.to_vec();
    order.shuffle(&mut SplitMix64::seed_from_u64(seed));
    let (base, extra) = (order.len() / k, order.len() % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut fold = order[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    Ok(folds)
}

fn batch_tensors<S: SampleSource + ?Sized>(
    data: &S,
    indices: &[usize],
    size: usize,
) -> (Tensor<f32>, Tensor<f32>) {
    let n = indices.len();
    let mut x = Vec::with_capacity(n * size * size);
    let mut y = Vec::with_capacity(n * size * size);
    for &i in indices {
        let s = data.sample(i);
        x.extend_from_slice(&s.image);
        y.extend_from_slice(&s.mask);
    }
    (
        Tensor::new([n, 1, size, size], x).expect("sample size matches model"),
        Tensor::new([n, 1, size, size], y).expect("sample size matches model"),
    )
}

fn check_samples<S: SampleSource + ?Sized>(data: &S, indices: &[usize], size: usize) -> Result<()> {
    for &i in indices {
        if i >= data.len() {
            return Err(Error::InvalidConfig(format!(
                "index {i} beyond dataset of {}",
                data.len()
            )));
        }
        let s = data.sample(i);
        if s.image.len() != size * size || s.mask.len() != size * size {
            return Err(Error::ShapeMismatch(format!(
                "sample {} is not {size}x{size}",
                s.id
            )));
        }
    }
    Ok(())
}

/// Mean loss and mean hard Dice of the model over `indices`.
pub fn evaluate<S: SampleSource + ?Sized>(
    model: &UNet<f32>,
    data: &S,
    indices: &[usize],
    tcfg: &TrainConfig,
) -> Result<(f64, f64)> {
    if indices.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let size = model.config().input_size;
    let (mut loss, mut dice) = (0.0f64, 0.0f64);
    for chunk in indices.chunks(tcfg.batch_size) {
        let (x, y) = batch_tensors(data, chunk, size);
        let probs = model.forward(&x)?;
        loss += f64::from(mixed_loss(&probs, &y, tcfg.loss_mix)?) * chunk.len() as f64;
        for b in 0..chunk.len() {
            let pred = threshold_probs(probs.item(b), size, tcfg.threshold);
            let truth = BinaryMask::new(size, size, y.item(b).iter().map(|&v| v > 0.5).collect())?;
            dice += metrics::dice(&pred, &truth)?;
        }
    }
    let n = indices.len() as f64;
    Ok((loss / n, dice / n))
}

fn threshold_probs(probs: &[f32], size: usize, threshold: f64) -> BinaryMask {
    BinaryMask::new(
        size,
        size,
        probs.iter().map(|&p| f64::from(p) > threshold).collect(),
    )
    .expect("probability map matches working size")
}

/// Trains a fresh model on `train_idx` for `tcfg.epochs` epochs, evaluating on
/// `val_idx` after each epoch.
pub fn train_single<S: SampleSource + ?Sized>(
    ucfg: &UNetConfig,
    data: &S,
    train_idx: &[usize],
    val_idx: &[usize],
    tcfg: &TrainConfig,
    fold: Option<usize>,
) -> Result<(UNet<f32>, Vec<TrainRecord>)> {
    tcfg.validate()?;
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let size = ucfg.input_size;
    check_samples(data, train_idx, size)?;
    check_samples(data, val_idx, size)?;
    let mut model = UNet::<f32>::new(*ucfg, tcfg.seed)?;
    let adam = AdamConfig::with_lr(tcfg.learning_rate);
    let mut records = Vec::with_capacity(tcfg.epochs);
    for epoch in 0..tcfg.epochs {
        let mut order = train_idx.to_vec();
        order.shuffle(&mut SplitMix64::seed_from_u64(
            tcfg.seed.wrapping_add(epoch as u64),
        ));
        let mut epoch_loss = 0.0f64;
        for chunk in order.chunks(tcfg.batch_size) {
            let (x, y) = batch_tensors(data, chunk, size);
            model.zero_grad();
            let loss = model.loss_and_backward(&x, &y, tcfg.loss_mix)?;
            for p in model.params_mut() {
                adam_step(p, &adam)?;
            }
            epoch_loss += f64::from(loss) * chunk.len() as f64;
        }
        let (val_loss, val_dice) = evaluate(&model, data, val_idx, tcfg)?;
        let record = TrainRecord {
            fold,
            epoch,
            train_loss: epoch_loss / order.len() as f64,
            val_loss,
            val_dice,
        };
        log::debug!("{record}");
        records.push(record);
    }
    model.zero_grad();
    Ok((model, records))
}

/// Result of [`train`].
pub struct TrainOutcome {
    pub model: UNet<f32>,
    pub records: Vec<TrainRecord>,
    pub folds: Vec<Vec<usize>>,
}

/// Runs k-fold cross-validation over the split's train+val pool, then
/// retrains on the whole pool. Test indices are never read.
pub fn train<S: SampleSource + ?Sized>(
    ucfg: &UNetConfig,
    data: &S,
    split: &SplitSpec,
    tcfg: &TrainConfig,
) -> Result<TrainOutcome> {
    ucfg.validate()?;
    tcfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    split.validate(data.len())?;
    let pool = split.pool();
    let folds = cv_folds(&pool, tcfg.folds, tcfg.seed)?;
    let mut records = Vec::new();
    for (k, held_out) in folds.iter().enumerate() {
        if held_out.is_empty() {
            log::warn!("fold {} is empty and is skipped", k + 1);
            continue;
        }
        let train_idx: Vec<usize> = pool
            .iter()
            .copied()
            .filter(|i| !held_out.contains(i))
            .collect();
        log::info!(
            "fold {}/{}: {} train, {} val",
            k + 1,
            folds.len(),
            train_idx.len(),
            held_out.len()
        );
        let (_, recs) = train_single(ucfg, data, &train_idx, held_out, tcfg, Some(k))?;
        records.extend(recs);
    }
    log::info!("final retrain on {} pooled entries", pool.len());
    let (model, recs) = train_single(ucfg, data, &pool, &pool, tcfg, None)?;
    records.extend(recs);
    Ok(TrainOutcome {
        model,
        records,
        folds,
    })
}

/// Segments `img` at the model's working size; the mask is resized back to the
/// source dims. A pixel is lung iff its probability is strictly above
/// `threshold`.
pub fn predict_mask(model: &UNet<f32>, img: &GrayImage, threshold: f64) -> Result<BinaryMask> {
    let size = model.config().input_size;
    let small = resize_bilinear(img, size, size)?;
    let x = Tensor::new([1, 1, size, size], small.data().to_vec())?;
    let probs = model.forward(&x)?;
    let mask = threshold_probs(probs.data(), size, threshold);
    resize_nearest(&mask, img.width(), img.height())
}
