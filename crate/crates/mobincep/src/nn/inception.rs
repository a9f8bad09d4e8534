//! Inception block: four parallel branches with different receptive fields,
//! channel-concatenated in fixed order.

use rand::Rng;

use super::{BatchStats, ConvBnRelu};
use crate::tensor::{Scalar, Tape, Var};
use crate::Result;

/// Output channels of each branch stage. All branches run stride 1 with
/// same-padding so the spatial extents line up for concatenation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InceptionSpec {
    pub a_out: usize,    // branch A: 1x1
    pub b_reduce: usize, // branch B: 1x1 reduce ...
    pub b_out: usize,    //           ... then 3x3
    pub c_reduce: usize, // branch C: 1x1 reduce ...
    pub c_out: usize,    //           ... then 5x5
    pub d_out: usize,    // branch D: 3x3 avg pool then 1x1
}

impl InceptionSpec {
    pub fn out_channels(&self) -> usize {
        self.a_out + self.b_out + self.c_out + self.d_out
    }

    pub fn scaled_down(&self, divisor: usize) -> Self {
        let s = |v: usize| (v / divisor).max(1);
        InceptionSpec {
            a_out: s(self.a_out),
            b_reduce: s(self.b_reduce),
            b_out: s(self.b_out),
            c_reduce: s(self.c_reduce),
            c_out: s(self.c_out),
            d_out: s(self.d_out),
        }
    }
}

/// The four-branch block. Every convolution is followed by batch norm and
/// ReLU, matching the rest of the network.
#[derive(Clone, Debug)]
pub struct Inception<T> {
    pub branch_a: ConvBnRelu<T>,
    pub branch_b_reduce: ConvBnRelu<T>,
    pub branch_b: ConvBnRelu<T>,
    pub branch_c_reduce: ConvBnRelu<T>,
    pub branch_c: ConvBnRelu<T>,
    pub branch_d: ConvBnRelu<T>,
}

impl<T: Scalar> Inception<T> {
    pub fn new(c_in: usize, spec: InceptionSpec, rng: &mut impl Rng) -> Self {
        Inception {
            branch_a: ConvBnRelu::new(c_in, spec.a_out, 1, 1, 0, rng),
            branch_b_reduce: ConvBnRelu::new(c_in, spec.b_reduce, 1, 1, 0, rng),
            branch_b: ConvBnRelu::new(spec.b_reduce, spec.b_out, 3, 1, 1, rng),
            branch_c_reduce: ConvBnRelu::new(c_in, spec.c_reduce, 1, 1, 0, rng),
            branch_c: ConvBnRelu::new(spec.c_reduce, spec.c_out, 5, 1, 2, rng),
            branch_d: ConvBnRelu::new(c_in, spec.d_out, 1, 1, 0, rng),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.branch_a.conv.out_channels()
            + self.branch_b.conv.out_channels()
            + self.branch_c.conv.out_channels()
            + self.branch_d.conv.out_channels()
    }

    pub fn param_count(&self) -> usize {
        self.branch_a.param_count()
            + self.branch_b_reduce.param_count()
            + self.branch_b.param_count()
            + self.branch_c_reduce.param_count()
            + self.branch_c.param_count()
            + self.branch_d.param_count()
    }

    pub fn forward_train(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        name: &str,
    ) -> Result<(Var, Vec<BatchStats<T>>)> {
        let mut stats = Vec::with_capacity(6);
        let (a, s) = self.branch_a.forward_train(tape, x, &format!("{name}.a"))?;
        stats.push(s);
        let (b, s) = self
            .branch_b_reduce
            .forward_train(tape, x, &format!("{name}.b_reduce"))?;
        stats.push(s);
        let (b, s) = self.branch_b.forward_train(tape, b, &format!("{name}.b"))?;
        stats.push(s);
        let (c, s) = self
            .branch_c_reduce
            .forward_train(tape, x, &format!("{name}.c_reduce"))?;
        stats.push(s);
        let (c, s) = self.branch_c.forward_train(tape, c, &format!("{name}.c"))?;
        stats.push(s);
        let pooled = tape.avg_pool(x, (3, 3), (1, 1), (1, 1))?;
        let (d, s) = self
            .branch_d
            .forward_train(tape, pooled, &format!("{name}.d"))?;
        stats.push(s);
        let out = tape.concat_channels(&[a, b, c, d])?;
        Ok((out, stats))
    }

    /// Training-mode pass with pinned batch-norm statistics, same stat
    /// order as [`Inception::forward_train`].
    pub fn forward_frozen(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        stats: &[BatchStats<T>],
        name: &str,
    ) -> Result<Var> {
        let a = self
            .branch_a
            .forward_frozen(tape, x, &stats[0], &format!("{name}.a"))?;
        let b =
            self.branch_b_reduce
                .forward_frozen(tape, x, &stats[1], &format!("{name}.b_reduce"))?;
        let b = self
            .branch_b
            .forward_frozen(tape, b, &stats[2], &format!("{name}.b"))?;
        let c =
            self.branch_c_reduce
                .forward_frozen(tape, x, &stats[3], &format!("{name}.c_reduce"))?;
        let c = self
            .branch_c
            .forward_frozen(tape, c, &stats[4], &format!("{name}.c"))?;
        let pooled = tape.avg_pool(x, (3, 3), (1, 1), (1, 1))?;
        let d = self
            .branch_d
            .forward_frozen(tape, pooled, &stats[5], &format!("{name}.d"))?;
        tape.concat_channels(&[a, b, c, d])
    }

    pub fn forward_infer(&self, tape: &mut Tape<T>, x: Var, name: &str) -> Result<Var> {
        let a = self.branch_a.forward_infer(tape, x, &format!("{name}.a"))?;
        let b = self
            .branch_b_reduce
            .forward_infer(tape, x, &format!("{name}.b_reduce"))?;
        let b = self.branch_b.forward_infer(tape, b, &format!("{name}.b"))?;
        let c = self
            .branch_c_reduce
            .forward_infer(tape, x, &format!("{name}.c_reduce"))?;
        let c = self.branch_c.forward_infer(tape, c, &format!("{name}.c"))?;
        let pooled = tape.avg_pool(x, (3, 3), (1, 1), (1, 1))?;
        let d = self
            .branch_d
            .forward_infer(tape, pooled, &format!("{name}.d"))?;
        tape.concat_channels(&[a, b, c, d])
    }

    /// Stats must come from [`Inception::forward_train`], same order.
    pub fn apply_updates(&mut self, stats: &[BatchStats<T>]) {
        let blocks = [
            &mut self.branch_a,
            &mut self.branch_b_reduce,
            &mut self.branch_b,
            &mut self.branch_c_reduce,
            &mut self.branch_c,
            &mut self.branch_d,
        ];
        for (block, s) in blocks.into_iter().zip(stats) {
            block.bn.apply_update(s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn default_spec() -> InceptionSpec {
        InceptionSpec {
            a_out: 32,
            b_reduce: 32,
            b_out: 48,
            c_reduce: 16,
            c_out: 24,
            d_out: 24,
        }
    }

    #[test]
    fn concat_channel_arithmetic() {
        assert_eq!(default_spec().out_channels(), 128);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = default_spec().scaled_down(8);
        let block = Inception::<f32>::new(4, spec, &mut rng);
        assert_eq!(block.out_channels(), spec.out_channels());
    }

    #[test]
    fn spatial_extent_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = default_spec().scaled_down(8);
        let block = Inception::<f32>::new(4, spec, &mut rng);
        let x = Tensor::from_fn(&[2, 4, 12, 12], |i| (i as f32 * 0.37).sin());
        let mut tape = Tape::new();
        let xv = tape.constant(&x);
        let y = block.forward_infer(&mut tape, xv, "inc").unwrap();
        assert_eq!(tape.shape(y), &[2, spec.out_channels(), 12, 12]);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        // default-initialized batch norms keep beta = 0, so every branch of
        // a zero input stays zero (training mode would reject zero variance
        // only if it produced NaN; it does not - var=0 plus epsilon)
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = default_spec().scaled_down(8);
        let block = Inception::<f64>::new(4, spec, &mut rng);
        let x = Tensor::zeros(&[1, 4, 8, 8]);
        let mut tape = Tape::new();
        let xv = tape.constant(&x);
        let y = block.forward_infer(&mut tape, xv, "inc").unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }
}
