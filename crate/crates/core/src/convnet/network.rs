use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{axpy, dot, Scalar};

/// Shape of the 1-D convolutional network.
///
/// Each block is a same-padded stride-1 convolution, ReLU, max-pool and
/// dropout; the last block's output is flattened into a single sigmoid unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkArch {
    pub n_blocks: usize,
    pub filters: usize,
    pub kernel_size: usize,
    pub pool_size: usize,
    pub dropout_rate: f64,
    pub input_channels: usize,
    pub input_length: usize,
}

impl Default for NetworkArch {
    fn default() -> Self {
        Self {
            n_blocks: 5,
            filters: 128,
            kernel_size: 3,
            pool_size: 2,
            dropout_rate: 0.25,
            input_channels: 6,
            input_length: 160,
        }
    }
}

impl NetworkArch {
    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 || self.filters == 0 || self.input_channels == 0 {
            return Err(Error::Architecture("blocks, filters and input channels must be positive".into()));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Architecture(format!("kernel size {} must be odd", self.kernel_size)));
        }
        if self.pool_size < 1 {
            return Err(Error::Architecture("pool size must be >= 1".into()));
        }
        let factor = self
            .pool_size
            .checked_pow(self.n_blocks as u32)
            .ok_or_else(|| Error::Architecture("pooling factor overflows".into()))?;
        if self.input_length == 0 || self.input_length % factor != 0 {
            return Err(Error::Architecture(format!(
                "input length {} not divisible by pool_size^n_blocks = {factor}",
                self.input_length
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Architecture(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    /// Spatial length entering block `b` (before its pool).
    pub fn block_length(&self, b: usize) -> usize {
        self.input_length / self.pool_size.pow(b as u32)
    }

    pub fn block_in_channels(&self, b: usize) -> usize {
        if b == 0 {
            self.input_channels
        } else {
            self.filters
        }
    }

    pub fn dense_inputs(&self) -> usize {
        self.filters * self.block_length(self.n_blocks)
    }

    pub fn input_size(&self) -> usize {
        self.input_channels * self.input_length
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct BlockOffsets {
    pub weights: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub blocks: Vec<BlockOffsets>,
    pub dense_weights: usize,
    pub dense_bias: usize,
    pub total: usize,
}

impl Layout {
    fn new(arch: &NetworkArch) -> Self {
        let mut off = 0;
        let mut blocks = Vec::with_capacity(arch.n_blocks);
        for b in 0..arch.n_blocks {
            let w = off;
            off += arch.filters * arch.block_in_channels(b) * arch.kernel_size;
            let bias = off;
            off += arch.filters;
            blocks.push(BlockOffsets { weights: w, bias });
        }
        let dense_weights = off;
        off += arch.dense_inputs();
        let dense_bias = off;
        off += 1;
        Self {
            blocks,
            dense_weights,
            dense_bias,
            total: off,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Network parameters in one flat vector, in declaration order: per block
/// conv weights `[filter][in_channel][tap]` then biases, then the dense
/// weights and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    arch: NetworkArch,
    layout: Layout,
    params: Vec<T>,
    /// Bumped on every parameter update; caches remember the value they saw.
    generation: u64,
}

/// Intermediate values of one sample's forward pass.
#[derive(Debug, Clone)]
pub struct SampleCache<T> {
    /// Input to each block, `in_channels × length`.
    pub block_inputs: Vec<Vec<T>>,
    /// Post-ReLU, pre-pool feature maps, `filters × length`.
    pub activations: Vec<Vec<T>>,
    pub(crate) argmax: Vec<Vec<u32>>,
    pub(crate) masks: Vec<Option<Vec<T>>>,
    pub(crate) flat: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct ForwardPass<T> {
    pub scores: Vec<T>,
    pub caches: Vec<SampleCache<T>>,
    pub(crate) generation: u64,
}

/// Parameter gradients laid out exactly like [`Network::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub values: Vec<T>,
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Network<T> {
    /// Fan-in scaled uniform weights (He for convolutions, LeCun for the
    /// dense unit), zero biases.
    pub fn new(arch: NetworkArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let mut params = vec![T::zero(); layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (b, off) in layout.blocks.iter().enumerate() {
            let fan_in = (arch.block_in_channels(b) * arch.kernel_size) as f64;
            let limit = (6.0 / fan_in).sqrt();
            for p in &mut params[off.weights..off.bias] {
                *p = T::of(rng.random_range(-limit..limit));
            }
        }
        let limit = (3.0 / arch.dense_inputs() as f64).sqrt();
        for p in &mut params[layout.dense_weights..layout.dense_bias] {
            *p = T::of(rng.random_range(-limit..limit));
        }
        Ok(Self {
            arch,
            layout,
            params,
            generation: 0,
        })
    }

    pub fn from_params(arch: NetworkArch, params: Vec<T>) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        if params.len() != layout.total {
            return Err(Error::Architecture(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Self {
            arch,
            layout,
            params,
            generation: 0,
        })
    }

    pub fn arch(&self) -> &NetworkArch {
        &self.arch
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    /// Mutable parameter access; invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [T] {
        self.generation += 1;
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    #[cfg(test)]
    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn conv_weights(&self, block: usize) -> &[T] {
        let o = self.layout.blocks[block];
        &self.params[o.weights..o.bias]
    }

    pub fn dense_weights(&self) -> &[T] {
        &self.params[self.layout.dense_weights..self.layout.dense_bias]
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.arch.input_size() {
            return Err(Error::Argument(format!(
                "input has {} values, network expects {} × {}",
                x.len(),
                self.arch.input_channels,
                self.arch.input_length
            )));
        }
        Ok(())
    }

    fn forward_sample(&self, x: &[T], rng: Option<&mut ChaCha8Rng>, keep: bool) -> (T, Option<SampleCache<T>>) {
        let a = &self.arch;
        let k = a.kernel_size;
        let pad = k / 2;
        let keep_prob = 1.0 - a.dropout_rate;
        let scale = T::of(1.0 / keep_prob);
        let mut rng = rng;
        let mut cache = keep.then(|| SampleCache {
            block_inputs: Vec::with_capacity(a.n_blocks),
            activations: Vec::with_capacity(a.n_blocks),
            argmax: Vec::with_capacity(a.n_blocks),
            masks: Vec::with_capacity(a.n_blocks),
            flat: Vec::new(),
        });
        let mut input = x.to_vec();
        for b in 0..a.n_blocks {
            let len = a.block_length(b);
            let cin = a.block_in_channels(b);
            let off = self.layout.blocks[b];
            let w = &self.params[off.weights..off.bias];
            let bias = &self.params[off.bias..off.bias + a.filters];
            let mut act = vec![T::zero(); a.filters * len];
            for f in 0..a.filters {
                let out = &mut act[f * len..(f + 1) * len];
                out.iter_mut().for_each(|o| *o = bias[f]);
                for c in 0..cin {
                    let xc = &input[c * len..(c + 1) * len];
                    for t in 0..k {
                        let wt = w[(f * cin + c) * k + t];
                        let (lo, hi) = tap_range(t, pad, len);
                        if lo < hi {
                            let s = lo + t - pad;
                            axpy(wt, &xc[s..s + (hi - lo)], &mut out[lo..hi]);
                        }
                    }
                }
                for o in out.iter_mut() {
                    if *o < T::zero() {
                        *o = T::zero();
                    }
                }
            }
            let plen = len / a.pool_size;
            let mut pooled = vec![T::zero(); a.filters * plen];
            let mut arg = vec![0u32; a.filters * plen];
            for f in 0..a.filters {
                for i in 0..plen {
                    let base = f * len + i * a.pool_size;
                    let mut best = base;
                    for j in base + 1..base + a.pool_size {
                        if act[j] > act[best] {
                            best = j;
                        }
                    }
                    pooled[f * plen + i] = act[best];
                    arg[f * plen + i] = best as u32;
                }
            }
            let mask = match (rng.as_deref_mut(), a.dropout_rate > 0.0) {
                (Some(r), true) => {
                    let m: Vec<T> = (0..pooled.len())
                        .map(|_| if r.random::<f64>() < keep_prob { scale } else { T::zero() })
                        .collect();
                    for (p, &mk) in pooled.iter_mut().zip(&m) {
                        *p *= mk;
                    }
                    Some(m)
                }
                _ => None,
            };
            if let Some(c) = cache.as_mut() {
                c.block_inputs.push(std::mem::take(&mut input));
                c.activations.push(act);
                c.argmax.push(arg);
                c.masks.push(mask);
            }
            input = pooled;
        }
        let logit = dot(&input, self.dense_weights()) + self.params[self.layout.dense_bias];
        let score = sigmoid(logit);
        if let Some(c) = cache.as_mut() {
            c.flat = input;
        }
        (score, cache)
    }

    /// Batch forward pass. Train mode draws inverted-dropout masks from
    /// `dropout_seed`; infer mode is deterministic and mask-free.
    pub fn forward(&self, batch: &[&[T]], mode: Mode, dropout_seed: u64) -> Result<ForwardPass<T>> {
        for x in batch {
            self.check_input(x)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
        let mut scores = Vec::with_capacity(batch.len());
        let mut caches = Vec::with_capacity(batch.len());
        for x in batch {
            let r = (mode == Mode::Train).then_some(&mut rng);
            let (s, c) = self.forward_sample(x, r, true);
            scores.push(s);
            caches.push(c.expect("cache requested"));
        }
        Ok(ForwardPass {
            scores,
            caches,
            generation: self.generation,
        })
    }

    /// Inference score for one input.
    pub fn predict(&self, x: &[T]) -> Result<T> {
        self.check_input(x)?;
        Ok(self.forward_sample(x, None, false).0)
    }

    /// Inference score plus post-ReLU, pre-pool feature maps of every block.
    pub fn activations(&self, x: &[T]) -> Result<(T, Vec<Vec<T>>)> {
        self.check_input(x)?;
        let (s, c) = self.forward_sample(x, None, true);
        Ok((s, c.expect("cache requested").activations))
    }

    /// Gradients of the mean binary cross-entropy of `pass` w.r.t. every
    /// parameter. Max-pool routes to the first maximal position; the ReLU
    /// derivative is zero at and below zero.
    pub fn backward(&self, pass: &ForwardPass<T>, labels: &[u8]) -> Result<Gradients<T>> {
        if pass.generation != self.generation {
            return Err(Error::Contract(format!(
                "forward cache from parameter generation {} used with generation {}",
                pass.generation, self.generation
            )));
        }
        if labels.len() != pass.scores.len() {
            return Err(Error::Argument(format!(
                "{} labels for {} scores",
                labels.len(),
                pass.scores.len()
            )));
        }
        let a = &self.arch;
        let k = a.kernel_size;
        let pad = k / 2;
        let n = T::of(pass.scores.len() as f64);
        let mut g = vec![T::zero(); self.params.len()];
        let (dw_off, db_off) = (self.layout.dense_weights, self.layout.dense_bias);
        for ((&p, &y), cache) in pass.scores.iter().zip(labels).zip(&pass.caches) {
            let dlogit = (p - T::of(y as f64)) / n;
            axpy(dlogit, &cache.flat, &mut g[dw_off..db_off]);
            g[db_off] += dlogit;
            let mut dout: Vec<T> = self.dense_weights().iter().map(|&w| w * dlogit).collect();
            for b in (0..a.n_blocks).rev() {
                let len = a.block_length(b);
                let cin = a.block_in_channels(b);
                if let Some(mask) = &cache.masks[b] {
                    for (d, &m) in dout.iter_mut().zip(mask) {
                        *d *= m;
                    }
                }
                let act = &cache.activations[b];
                let mut dz = vec![T::zero(); a.filters * len];
                for (d, &idx) in dout.iter().zip(&cache.argmax[b]) {
                    dz[idx as usize] += *d;
                }
                for (d, &v) in dz.iter_mut().zip(act) {
                    if v <= T::zero() {
                        *d = T::zero();
                    }
                }
                let off = self.layout.blocks[b];
                let x = &cache.block_inputs[b];
                let need_dx = b > 0;
                let mut dx = if need_dx { vec![T::zero(); cin * len] } else { Vec::new() };
                let w = &self.params[off.weights..off.bias];
                for f in 0..a.filters {
                    let dzf = &dz[f * len..(f + 1) * len];
                    g[off.bias + f] += dzf.iter().copied().sum::<T>();
                    for c in 0..cin {
                        let xc = &x[c * len..(c + 1) * len];
                        for t in 0..k {
                            let (lo, hi) = tap_range(t, pad, len);
                            if lo >= hi {
                                continue;
                            }
                            let s = lo + t - pad;
                            let widx = (f * cin + c) * k + t;
                            g[off.weights + widx] += dot(&dzf[lo..hi], &xc[s..s + (hi - lo)]);
                            if need_dx {
                                axpy(w[widx], &dzf[lo..hi], &mut dx[c * len + s..c * len + s + (hi - lo)]);
                            }
                        }
                    }
                }
                if need_dx {
                    // dx is the gradient w.r.t. the previous block's pooled output.
                    dout = dx;
                }
            }
        }
        Ok(Gradients { values: g })
    }

    pub(crate) fn bump_generation(&mut self) {
        self.generation += 1;
    }

    pub(crate) fn params_mut_silent(&mut self) -> &mut [T] {
        &mut self.params
    }
}

/// Output positions `[lo, hi)` for which tap `t` reads inside the input.
#[inline]
fn tap_range(t: usize, pad: usize, len: usize) -> (usize, usize) {
    // Output i reads input i + t - pad.
    let lo = pad.saturating_sub(t);
    let hi = (len + pad).saturating_sub(t).min(len);
    (lo, hi)
}

/// Mean binary cross-entropy with scores clamped to `[ε, 1 − ε]`.
pub fn bce_loss<T: Scalar>(scores: &[T], labels: &[u8]) -> T {
    let eps = T::of(1e-12).max(T::epsilon());
    let n = T::of(scores.len().max(1) as f64);
    let total: T = scores
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.max(eps).min(T::one() - eps);
            if y == 1 {
                -p.ln()
            } else {
                -(T::one() - p).ln()
            }
        })
        .sum();
    total / n
}
