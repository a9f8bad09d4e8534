//! The assembled network: buffer ("stem") convolution, inception block,
//! depthwise-separable stack, global average pooling, linear head.

mod checkpoint;

pub use checkpoint::{load, save, Checkpoint};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::nn::{
    BatchNorm, BatchStats, ConvBnRelu, DepthwiseSeparable, Inception, InceptionSpec, Linear,
};
use crate::tensor::{Mode, Scalar, Tape, Tensor, Var};
use crate::Result;

/// Architecture description. The topology is fixed (stem → inception →
/// depthwise-separable stack → pooling → linear); this chooses the widths,
/// strides and class count.
#[derive(Clone, Debug, PartialEq)]
pub struct MobincepConfig {
    pub input_channels: usize,
    /// Side length the data pipeline resizes to (224 for the full model).
    pub input_size: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stem_out: usize,
    pub inception: InceptionSpec,
    /// `(out_channels, stride)` per depthwise-separable layer.
    pub ds_stack: Vec<(usize, usize)>,
    pub num_classes: usize,
    /// Trainable-parameter window asserted at build time, when present.
    pub budget: Option<(usize, usize)>,
}

impl MobincepConfig {
    /// Full-size network. The depthwise-separable stack follows the
    /// MobileNet-style doubling schedule and lands at ~4.3M trainable
    /// parameters with the default 15-class head.
    pub fn full(num_classes: usize) -> Self {
        MobincepConfig {
            input_channels: 3,
            input_size: 224,
            stem_kernel: 3,
            stem_stride: 2,
            stem_out: 32,
            inception: InceptionSpec {
                a_out: 32,
                b_reduce: 32,
                b_out: 48,
                c_reduce: 16,
                c_out: 24,
                d_out: 24,
            },
            ds_stack: vec![
                (128, 1),
                (256, 2),
                (256, 1),
                (512, 2),
                (512, 1),
                (512, 1),
                (512, 1),
                (512, 1),
                (512, 1),
                (1024, 2),
                (1024, 1),
                (1024, 1),
            ],
            num_classes,
            budget: Some((3_900_000, 4_700_000)),
        }
    }

    /// Every channel width divided by `divisor` (floored at 1), smaller
    /// input, no budget assertion. Used for desk-scale runs and gradient
    /// checks.
    pub fn width_reduced(num_classes: usize, divisor: usize, input_size: usize) -> Self {
        let full = Self::full(num_classes);
        MobincepConfig {
            input_channels: full.input_channels,
            input_size,
            stem_kernel: full.stem_kernel,
            stem_stride: full.stem_stride,
            stem_out: (full.stem_out / divisor).max(1),
            inception: full.inception.scaled_down(divisor),
            ds_stack: full
                .ds_stack
                .iter()
                .map(|&(c, s)| ((c / divisor).max(1), s))
                .collect(),
            num_classes,
            budget: None,
        }
    }

    /// Dimension of the pooled feature vector feeding the linear head.
    pub fn latent_dim(&self) -> usize {
        self.ds_stack
            .last()
            .map(|&(c, _)| c)
            .expect("non-empty ds stack")
    }

    /// Spatial extent after each stage, starting from `input_size`.
    /// Errors when any stage collapses to zero.
    pub fn spatial_trace(&self) -> Result<Vec<usize>> {
        let mut sizes = Vec::with_capacity(2 + self.ds_stack.len());
        let mut s = self.input_size as i64;
        let stage = |s: i64, k: i64, stride: i64, pad: i64| -> Result<i64> {
            let out = (s + 2 * pad - k).div_euclid(stride) + 1;
            if s + 2 * pad < k || out < 1 {
                return Err(Error::config(format!(
                    "spatial extent {s} collapses under kernel {k}, stride {stride}, pad {pad}"
                )));
            }
            Ok(out)
        };
        let pad = (self.stem_kernel as i64 - 1) / 2;
        s = stage(s, self.stem_kernel as i64, self.stem_stride as i64, pad)?;
        sizes.push(s as usize);
        // inception: stride 1, same padding (incl. the 5x5 branch)
        let _ = stage(s, 5, 1, 2)?;
        sizes.push(s as usize);
        for &(_, stride) in &self.ds_stack {
            s = stage(s, 3, stride as i64, 1)?;
            sizes.push(s as usize);
        }
        Ok(sizes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.input_channels == 0 || self.stem_out == 0 || self.ds_stack.is_empty() {
            return Err(Error::config("empty architecture"));
        }
        if self.stem_kernel.is_multiple_of(2) {
            return Err(Error::config(format!(
                "stem kernel must be odd, got {}",
                self.stem_kernel
            )));
        }
        for (i, &(c, s)) in self.ds_stack.iter().enumerate() {
            if c == 0 || s == 0 {
                return Err(Error::config(format!(
                    "ds layer {i} has zero channels or stride"
                )));
            }
        }
        self.spatial_trace()?;
        Ok(())
    }
}

/// One layer of the stack: depthwise conv → BN → ReLU → pointwise conv →
/// BN → ReLU.
#[derive(Clone, Debug)]
struct DsBlock<T> {
    sep: DepthwiseSeparable<T>,
    bn_depth: BatchNorm<T>,
    bn_point: BatchNorm<T>,
}

impl<T: Scalar> DsBlock<T> {
    fn new(c_in: usize, c_out: usize, stride: usize, rng: &mut impl rand::Rng) -> Self {
        DsBlock {
            sep: DepthwiseSeparable::new(c_in, c_out, 3, stride, rng),
            bn_depth: BatchNorm::new(c_in),
            bn_point: BatchNorm::new(c_out),
        }
    }

    fn forward_train(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        name: &str,
    ) -> Result<(Var, [BatchStats<T>; 2])> {
        let h = self.sep.forward_depthwise(tape, x, Mode::Train, name)?;
        let (h, s1) = self
            .bn_depth
            .forward_train(tape, h, &format!("{name}.bn1"))?;
        let h = tape.relu(h);
        let h = self.sep.forward_pointwise(tape, h, Mode::Train, name)?;
        let (h, s2) = self
            .bn_point
            .forward_train(tape, h, &format!("{name}.bn2"))?;
        Ok((tape.relu(h), [s1, s2]))
    }

    fn forward_infer(&self, tape: &mut Tape<T>, x: Var, name: &str) -> Result<Var> {
        let h = self.sep.forward_depthwise(tape, x, Mode::Infer, name)?;
        let h = self.bn_depth.forward_infer(tape, h)?;
        let h = tape.relu(h);
        let h = self.sep.forward_pointwise(tape, h, Mode::Infer, name)?;
        let h = self.bn_point.forward_infer(tape, h)?;
        Ok(tape.relu(h))
    }

    fn forward_frozen(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        stats: &[BatchStats<T>; 2],
        name: &str,
    ) -> Result<Var> {
        let h = self.sep.forward_depthwise(tape, x, Mode::Train, name)?;
        let h = self
            .bn_depth
            .forward_with_stats(tape, h, &stats[0], &format!("{name}.bn1"))?;
        let h = tape.relu(h);
        let h = self.sep.forward_pointwise(tape, h, Mode::Train, name)?;
        let h = self
            .bn_point
            .forward_with_stats(tape, h, &stats[1], &format!("{name}.bn2"))?;
        Ok(tape.relu(h))
    }
}

/// Logits (pre-softmax) and the pooled latent vector that feeds the head.
pub struct ForwardOutput {
    pub logits: Var,
    pub latent: Var,
}

/// Batch statistics of every batch norm in one training forward, in
/// traversal order. Feed back via [`MobincepNet::apply_bn_updates`].
pub struct TrainStats<T> {
    stats: Vec<BatchStats<T>>,
}

impl<T: Scalar> TrainStats<T> {
    /// Smallest per-channel batch variance seen across all batch norms; a
    /// diagnostic for collapsing activations.
    pub fn min_batch_variance(&self) -> T {
        let mut min = T::from_f64(f64::INFINITY);
        for s in &self.stats {
            for &v in s.var.data() {
                if v < min {
                    min = v;
                }
            }
        }
        min
    }
}

/// The full network.
#[derive(Clone, Debug)]
pub struct MobincepNet<T> {
    pub config: MobincepConfig,
    stem: ConvBnRelu<T>,
    inception: Inception<T>,
    blocks: Vec<DsBlock<T>>,
    head: Linear<T>,
}

impl<T: Scalar> MobincepNet<T> {
    /// Deterministic build: all conv/linear weights Kaiming-uniform from a
    /// ChaCha stream seeded with `seed`; batch-norm gamma 1, beta 0.
    pub fn build(config: MobincepConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stem = ConvBnRelu::new(
            config.input_channels,
            config.stem_out,
            config.stem_kernel,
            config.stem_stride,
            (config.stem_kernel - 1) / 2,
            &mut rng,
        );
        let inception = Inception::new(config.stem_out, config.inception, &mut rng);
        let mut blocks = Vec::with_capacity(config.ds_stack.len());
        let mut c_in = config.inception.out_channels();
        for &(c_out, stride) in &config.ds_stack {
            blocks.push(DsBlock::new(c_in, c_out, stride, &mut rng));
            c_in = c_out;
        }
        let head = Linear::new(config.latent_dim(), config.num_classes, &mut rng);
        let net = MobincepNet {
            config,
            stem,
            inception,
            blocks,
            head,
        };
        if let Some((lo, hi)) = net.config.budget {
            let count = net.param_count();
            if count < lo || count > hi {
                return Err(Error::config(format!(
                    "parameter count {count} outside budget window [{lo}, {hi}]"
                )));
            }
        }
        Ok(net)
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Total trainable scalar parameters (running statistics excluded).
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, t| n += t.len());
        n
    }

    /// Training-mode forward without side effects. Returns the batch-norm
    /// statistics so a real optimization step can fold them into the
    /// running estimates; a pure evaluation (e.g. the finite-difference
    /// oracle) just drops them.
    pub fn forward_train(
        &self,
        tape: &mut Tape<T>,
        batch: Var,
    ) -> Result<(ForwardOutput, TrainStats<T>)> {
        self.check_input(tape, batch)?;
        let mut all = Vec::new();
        let (h, s) = self.stem.forward_train(tape, batch, "stem")?;
        all.push(s);
        let (mut h, ss) = self.inception.forward_train(tape, h, "inception")?;
        all.extend(ss);
        for (i, block) in self.blocks.iter().enumerate() {
            let (out, [s1, s2]) = block.forward_train(tape, h, &format!("ds{i}"))?;
            all.push(s1);
            all.push(s2);
            h = out;
        }
        let latent = tape.global_avg_pool(h)?;
        let logits = self.head.forward(tape, latent, Mode::Train, "head")?;
        Ok((ForwardOutput { logits, latent }, TrainStats { stats: all }))
    }

    /// Fold batch statistics from [`MobincepNet::forward_train`] into the
    /// running estimates (same traversal order).
    pub fn apply_bn_updates(&mut self, stats: &TrainStats<T>) {
        let mut it = stats.stats.iter();
        self.stem.bn.apply_update(it.next().expect("stem stats"));
        let inception_stats: Vec<BatchStats<T>> = it.by_ref().take(6).cloned().collect();
        self.inception.apply_updates(&inception_stats);
        for block in &mut self.blocks {
            block.bn_depth.apply_update(it.next().expect("bn1 stats"));
            block.bn_point.apply_update(it.next().expect("bn2 stats"));
        }
        assert!(it.next().is_none(), "stats cardinality mismatch");
    }

    /// Training-mode forward with every batch norm's statistics pinned to
    /// the values in `stats` (usually captured from a prior
    /// [`MobincepNet::forward_train`] on the same batch). At that point the
    /// outputs coincide with the training forward; the difference is that
    /// no gradient flows through the statistics, which keeps the loss
    /// surface tame enough for whole-model finite-difference probes.
    pub fn forward_train_frozen_stats(
        &self,
        tape: &mut Tape<T>,
        batch: Var,
        stats: &TrainStats<T>,
    ) -> Result<ForwardOutput> {
        self.check_input(tape, batch)?;
        let mut it = stats.stats.iter();
        let stem_stats = it.next().expect("stem stats").clone();
        let h = self.stem.forward_frozen(tape, batch, &stem_stats, "stem")?;
        let inception_stats: Vec<BatchStats<T>> = it.by_ref().take(6).cloned().collect();
        let mut h = self
            .inception
            .forward_frozen(tape, h, &inception_stats, "inception")?;
        for (i, block) in self.blocks.iter().enumerate() {
            let s1 = it.next().expect("bn1 stats").clone();
            let s2 = it.next().expect("bn2 stats").clone();
            h = block.forward_frozen(tape, h, &[s1, s2], &format!("ds{i}"))?;
        }
        let latent = tape.global_avg_pool(h)?;
        let logits = self.head.forward(tape, latent, Mode::Train, "head")?;
        Ok(ForwardOutput { logits, latent })
    }

    /// Inference-mode forward: running statistics, no tape recording, no
    /// mutation anywhere.
    pub fn forward_infer(&self, tape: &mut Tape<T>, batch: Var) -> Result<ForwardOutput> {
        self.check_input(tape, batch)?;
        let h = self.stem.forward_infer(tape, batch, "stem")?;
        let mut h = self.inception.forward_infer(tape, h, "inception")?;
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.forward_infer(tape, h, &format!("ds{i}"))?;
        }
        let latent = tape.global_avg_pool(h)?;
        let logits = self.head.forward(tape, latent, Mode::Infer, "head")?;
        Ok(ForwardOutput { logits, latent })
    }

    fn check_input(&self, tape: &Tape<T>, batch: Var) -> Result<()> {
        let s = tape.shape(batch);
        if s.len() != 4 {
            return Err(Error::shape(format!(
                "model input must be [N,C,H,W], got {s:?}"
            )));
        }
        if s[1] != self.config.input_channels {
            return Err(Error::shape(format!(
                "model expects {} input channels, got {}",
                self.config.input_channels, s[1]
            )));
        }
        Ok(())
    }

    /// Visit every trainable parameter as `(name, tensor)` in the fixed
    /// traversal order used everywhere (tape registration, optimizer,
    /// checkpoints).
    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f("stem.conv.weight", &self.stem.conv.weight);
        f("stem.bn.gamma", &self.stem.bn.gamma);
        f("stem.bn.beta", &self.stem.bn.beta);
        let branches = [
            ("inception.a", &self.inception.branch_a),
            ("inception.b_reduce", &self.inception.branch_b_reduce),
            ("inception.b", &self.inception.branch_b),
            ("inception.c_reduce", &self.inception.branch_c_reduce),
            ("inception.c", &self.inception.branch_c),
            ("inception.d", &self.inception.branch_d),
        ];
        for (name, cbr) in branches {
            f(&format!("{name}.conv.weight"), &cbr.conv.weight);
            f(&format!("{name}.bn.gamma"), &cbr.bn.gamma);
            f(&format!("{name}.bn.beta"), &cbr.bn.beta);
        }
        for (i, b) in self.blocks.iter().enumerate() {
            f(&format!("ds{i}.depthwise"), &b.sep.depthwise);
            f(&format!("ds{i}.bn1.gamma"), &b.bn_depth.gamma);
            f(&format!("ds{i}.bn1.beta"), &b.bn_depth.beta);
            f(&format!("ds{i}.pointwise"), &b.sep.pointwise);
            f(&format!("ds{i}.bn2.gamma"), &b.bn_point.gamma);
            f(&format!("ds{i}.bn2.beta"), &b.bn_point.beta);
        }
        f("head.weight", &self.head.weight);
        f("head.bias", &self.head.bias);
    }

    /// Mutable variant of [`MobincepNet::visit_params`], same order.
    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f("stem.conv.weight", &mut self.stem.conv.weight);
        f("stem.bn.gamma", &mut self.stem.bn.gamma);
        f("stem.bn.beta", &mut self.stem.bn.beta);
        let branches = [
            ("inception.a", &mut self.inception.branch_a),
            ("inception.b_reduce", &mut self.inception.branch_b_reduce),
            ("inception.b", &mut self.inception.branch_b),
            ("inception.c_reduce", &mut self.inception.branch_c_reduce),
            ("inception.c", &mut self.inception.branch_c),
            ("inception.d", &mut self.inception.branch_d),
        ];
        for (name, cbr) in branches {
            f(&format!("{name}.conv.weight"), &mut cbr.conv.weight);
            f(&format!("{name}.bn.gamma"), &mut cbr.bn.gamma);
            f(&format!("{name}.bn.beta"), &mut cbr.bn.beta);
        }
        for (i, b) in self.blocks.iter_mut().enumerate() {
            f(&format!("ds{i}.depthwise"), &mut b.sep.depthwise);
            f(&format!("ds{i}.bn1.gamma"), &mut b.bn_depth.gamma);
            f(&format!("ds{i}.bn1.beta"), &mut b.bn_depth.beta);
            f(&format!("ds{i}.pointwise"), &mut b.sep.pointwise);
            f(&format!("ds{i}.bn2.gamma"), &mut b.bn_point.gamma);
            f(&format!("ds{i}.bn2.beta"), &mut b.bn_point.beta);
        }
        f("head.weight", &mut self.head.weight);
        f("head.bias", &mut self.head.bias);
    }

    /// Visit the non-trainable running statistics (checkpoint payload).
    pub fn visit_buffers(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        let mut bns: Vec<(String, &BatchNorm<T>)> = vec![("stem.bn".into(), &self.stem.bn)];
        bns.push(("inception.a.bn".into(), &self.inception.branch_a.bn));
        bns.push((
            "inception.b_reduce.bn".into(),
            &self.inception.branch_b_reduce.bn,
        ));
        bns.push(("inception.b.bn".into(), &self.inception.branch_b.bn));
        bns.push((
            "inception.c_reduce.bn".into(),
            &self.inception.branch_c_reduce.bn,
        ));
        bns.push(("inception.c.bn".into(), &self.inception.branch_c.bn));
        bns.push(("inception.d.bn".into(), &self.inception.branch_d.bn));
        for (i, b) in self.blocks.iter().enumerate() {
            bns.push((format!("ds{i}.bn1"), &b.bn_depth));
            bns.push((format!("ds{i}.bn2"), &b.bn_point));
        }
        for (name, bn) in bns {
            f(&format!("{name}.running_mean"), &bn.running_mean);
            f(&format!("{name}.running_var"), &bn.running_var);
        }
    }

    pub fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f("stem.bn.running_mean", &mut self.stem.bn.running_mean);
        f("stem.bn.running_var", &mut self.stem.bn.running_var);
        let branches = [
            ("inception.a.bn", &mut self.inception.branch_a),
            ("inception.b_reduce.bn", &mut self.inception.branch_b_reduce),
            ("inception.b.bn", &mut self.inception.branch_b),
            ("inception.c_reduce.bn", &mut self.inception.branch_c_reduce),
            ("inception.c.bn", &mut self.inception.branch_c),
            ("inception.d.bn", &mut self.inception.branch_d),
        ];
        for (name, cbr) in branches {
            f(&format!("{name}.running_mean"), &mut cbr.bn.running_mean);
            f(&format!("{name}.running_var"), &mut cbr.bn.running_var);
        }
        for (i, b) in self.blocks.iter_mut().enumerate() {
            f(
                &format!("ds{i}.bn1.running_mean"),
                &mut b.bn_depth.running_mean,
            );
            f(
                &format!("ds{i}.bn1.running_var"),
                &mut b.bn_depth.running_var,
            );
            f(
                &format!("ds{i}.bn2.running_mean"),
                &mut b.bn_point.running_mean,
            );
            f(
                &format!("ds{i}.bn2.running_var"),
                &mut b.bn_point.running_var,
            );
        }
    }
}
