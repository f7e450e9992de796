//! FC-DenseNet ("tiramisu") 1D autoencoder: parameters, forward pass and
//! reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::ops::{self, BnCache, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Kernel,
    Bias,
    BnScale,
    BnShift,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

/// Flat, ordered store of named tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
    pub kinds: Vec<ParamKind>,
    pub values: Vec<Vec<T>>,
}

impl<T: Scalar> ParamStore<T> {
    fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            shapes: Vec::new(),
            kinds: Vec::new(),
            values: Vec::new(),
        }
    }

    fn push(&mut self, name: String, shape: Vec<usize>, kind: ParamKind, values: Vec<T>) -> usize {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.names.push(name);
        self.shapes.push(shape);
        self.kinds.push(kind);
        self.values.push(values);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn zeros_like(&self) -> Vec<Vec<T>> {
        self.values.iter().map(|v| vec![T::zero(); v.len()]).collect()
    }

    /// `Σ ‖kernel‖²` over convolution kernels.
    pub fn kernel_sq_norm(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.kinds)
            .filter(|(_, k)| **k == ParamKind::Kernel)
            .flat_map(|(v, _)| v.iter())
            .map(|x| x.to_f64().unwrap().powi(2))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Conv {
    w: usize,
    b: usize,
    cin: usize,
    cout: usize,
    k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Bn {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

/// BN → ReLU → conv → dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Unit {
    bn: Bn,
    conv: Conv,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct DenseBlock {
    layers: Vec<Unit>,
    /// Down-path blocks emit `input ⊕ new maps`; others only the new maps.
    keep_input: bool,
    in_channels: usize,
}

impl DenseBlock {
    fn out_channels(&self, growth: usize) -> usize {
        let new = self.layers.len() * growth;
        if self.keep_input {
            self.in_channels + new
        } else {
            new
        }
    }
}

/// Summary of the built architecture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelAudit {
    pub convolutions: usize,
    pub transitions_down: usize,
    pub transitions_up: usize,
    pub skip_channels: Vec<usize>,
    pub bottleneck_out: usize,
    pub trainable_parameters: usize,
}

/// Forward-pass mode: inference uses running BN statistics and no dropout.
pub enum Mode<'a> {
    Inference,
    /// Batch statistics; dropout drawn from `rng` when present.
    Train { dropout_rng: Option<&'a mut ChaCha8Rng> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TiramisuModel<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    first: Conv,
    down: Vec<DenseBlock>,
    td: Vec<Unit>,
    bottleneck: DenseBlock,
    tu: Vec<Conv>,
    up: Vec<DenseBlock>,
    last: Conv,
}

/// Initialisation policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// He-uniform kernels, zero biases, BN scale 1 / shift 0.
    HeUniform { seed: u64 },
    /// All kernels and biases zero.
    Zero,
}

struct Builder<T> {
    store: ParamStore<T>,
    rng: Option<ChaCha8Rng>,
}

impl<T: Scalar> Builder<T> {
    fn kernel(&mut self, name: &str, shape: Vec<usize>, fan_in: usize) -> usize {
        let n: usize = shape.iter().product();
        let values = match &mut self.rng {
            Some(rng) => {
                let limit = (6.0 / fan_in as f64).sqrt();
                (0..n).map(|_| T::c(rng.random_range(-limit..limit))).collect()
            }
            None => vec![T::zero(); n],
        };
        self.store.push(format!("{name}.kernel"), shape, ParamKind::Kernel, values)
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Conv {
        let w = self.kernel(name, vec![cout, cin, k], cin * k);
        let b = self
            .store
            .push(format!("{name}.bias"), vec![cout], ParamKind::Bias, vec![T::zero(); cout]);
        Conv { w, b, cin, cout, k }
    }

    fn conv_transpose(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Conv {
        let w = self.kernel(name, vec![cin, cout, k], cin * k);
        let b = self
            .store
            .push(format!("{name}.bias"), vec![cout], ParamKind::Bias, vec![T::zero(); cout]);
        Conv { w, b, cin, cout, k }
    }

    fn bn(&mut self, name: &str, c: usize) -> Bn {
        let mut p = |suffix: &str, kind, v: T| self.store.push(format!("{name}.{suffix}"), vec![c], kind, vec![v; c]);
        Bn {
            gamma: p("gamma", ParamKind::BnScale, T::one()),
            beta: p("beta", ParamKind::BnShift, T::zero()),
            mean: p("moving_mean", ParamKind::RunningMean, T::zero()),
            var: p("moving_var", ParamKind::RunningVar, T::one()),
        }
    }

    fn unit(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Unit {
        Unit {
            bn: self.bn(&format!("{name}.bn"), cin),
            conv: self.conv(&format!("{name}.conv"), cin, cout, k),
        }
    }

    fn block(&mut self, name: &str, n: usize, cin: usize, growth: usize, k: usize, keep_input: bool) -> DenseBlock {
        let layers = (0..n)
            .map(|j| self.unit(&format!("{name}.layer{j}"), cin + j * growth, growth, k))
            .collect();
        DenseBlock {
            layers,
            keep_input,
            in_channels: cin,
        }
    }
}

impl<T: Scalar> TiramisuModel<T> {
    pub fn build(config: &ModelConfig, init: Init) -> Result<TiramisuModel<T>> {
        config.validate()?;
        let rng = match init {
            Init::HeUniform { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            Init::Zero => None,
        };
        let mut bld = Builder {
            store: ParamStore::new(),
            rng,
        };
        let (g, k) = (config.growth_rate, config.kernel_size);
        let first = bld.conv("first.conv", 1, config.initial_filters, k);

        let mut c = config.initial_filters;
        let mut down = Vec::new();
        let mut td = Vec::new();
        let mut skips = Vec::new();
        for (i, &n) in config.down_block_layers.iter().enumerate() {
            let blk = bld.block(&format!("down{i}"), n, c, g, k, true);
            c = blk.out_channels(g);
            down.push(blk);
            skips.push(c);
            td.push(bld.unit(&format!("td{i}"), c, c, 1));
        }
        let bottleneck = bld.block("bottleneck", config.bottleneck_layers, c, g, k, false);
        c = bottleneck.out_channels(g);

        let mut tu = Vec::new();
        let mut up = Vec::new();
        for (i, &n) in config.up_block_layers.iter().enumerate() {
            tu.push(bld.conv_transpose(&format!("tu{i}.convt"), c, c, k));
            let cin = c + skips[skips.len() - 1 - i];
            let blk = bld.block(&format!("up{i}"), n, cin, g, k, false);
            c = blk.out_channels(g);
            up.push(blk);
        }
        let last = bld.conv("final.conv", c, 1, k);
        Ok(TiramisuModel {
            config: config.clone(),
            store: bld.store,
            first,
            down,
            td,
            bottleneck,
            tu,
            up,
            last,
        })
    }

    /// Sets the output convolution to zero so the model emits `tanh(0) = 0`.
    pub fn zero_head(&mut self) {
        for idx in [self.last.w, self.last.b] {
            self.store.values[idx].fill(T::zero());
        }
    }

    pub fn audit(&self) -> ModelAudit {
        let convolutions = 2
            + self.td.len()
            + self.tu.len()
            + self.down.iter().chain(&self.up).map(|b| b.layers.len()).sum::<usize>()
            + self.bottleneck.layers.len();
        ModelAudit {
            convolutions,
            transitions_down: self.td.len(),
            transitions_up: self.tu.len(),
            skip_channels: self.down.iter().map(|b| b.out_channels(self.config.growth_rate)).collect(),
            bottleneck_out: self.bottleneck.out_channels(self.config.growth_rate),
            trainable_parameters: self.parameter_count(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.store
            .values
            .iter()
            .zip(&self.store.kinds)
            .filter(|(_, k)| k.trainable())
            .map(|(v, _)| v.len())
            .sum()
    }

    /// Denoise one window (inference mode).
    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        self.check_len(input.len())?;
        let x = Tensor::from_vec(input.to_vec(), 1, 1, input.len());
        Ok(self.forward_batch(&x, Mode::Inference)?.0.data)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.config.window_len {
            return Err(Error::Shape(format!(
                "input window has {len} samples, model expects {}",
                self.config.window_len
            )));
        }
        Ok(())
    }

    /// Forward a `[batch, 1, window_len]` tensor. A trace for
    /// [`TiramisuModel::backward`] is returned in training mode.
    pub fn forward_batch(&self, x: &Tensor<T>, mut mode: Mode<'_>) -> Result<(Tensor<T>, Option<Trace<T>>)> {
        self.check_len(x.len)?;
        if x.channels != 1 || x.batch == 0 {
            return Err(Error::Shape(format!(
                "expected a [batch >= 1, 1, len] input, got [{}, {}, {}]",
                x.batch, x.channels, x.len
            )));
        }
        let training = matches!(mode, Mode::Train { .. });
        let mut trace = Trace::default();

        let mut h = self.conv(&self.first, x);
        if training {
            trace.first_in = Some(x.clone());
        }
        let mut skips = Vec::new();
        for (blk, td) in self.down.iter().zip(&self.td) {
            let (out, bt) = self.block_forward(blk, h, &mut mode);
            trace.down.push(bt);
            skips.push(out.clone());
            let (t, ut) = self.unit_forward(td, &out, &mut mode);
            let (pooled, arg) = ops::max_pool2(&t);
            if let Some(unit) = ut {
                trace.td.push(TdTrace {
                    unit,
                    pool_arg: arg,
                    pre_pool_len: t.len,
                });
            }
            h = pooled;
        }
        let (mut h, bt) = self.block_forward(&self.bottleneck, h, &mut mode);
        trace.bottleneck = bt;
        for (i, (tu, blk)) in self.tu.iter().zip(&self.up).enumerate() {
            let skip = &skips[skips.len() - 1 - i];
            let st = &self.store.values;
            let u = ops::conv_transpose1d(&h, &st[tu.w], &st[tu.b], tu.cout, tu.k, 2, skip.len);
            if training {
                trace.tu_in.push(h);
            }
            let cat = ops::concat(&[&u, skip]);
            let (out, bt) = self.block_forward(blk, cat, &mut mode);
            trace.up.push(bt);
            h = out;
        }
        let mut y = self.conv(&self.last, &h);
        for v in &mut y.data {
            *v = v.tanh();
        }
        if training {
            trace.last_in = Some(h);
            trace.out = Some(y.clone());
            Ok((y, Some(trace)))
        } else {
            Ok((y, None))
        }
    }

    fn conv(&self, c: &Conv, x: &Tensor<T>) -> Tensor<T> {
        ops::conv1d(x, &self.store.values[c.w], &self.store.values[c.b], c.cout, c.k)
    }

    fn unit_forward(&self, u: &Unit, x: &Tensor<T>, mode: &mut Mode<'_>) -> (Tensor<T>, Option<UnitTrace<T>>) {
        let st = &self.store.values;
        let eps = T::c(self.config.bn_eps);
        match mode {
            Mode::Inference => {
                let mut a = ops::batch_norm_infer(x, &st[u.bn.gamma], &st[u.bn.beta], &st[u.bn.mean], &st[u.bn.var], eps);
                ops::relu_inplace(&mut a);
                (self.conv(&u.conv, &a), None)
            }
            Mode::Train { dropout_rng } => {
                let (mut a, bn) = ops::batch_norm_train(x, &st[u.bn.gamma], &st[u.bn.beta], eps);
                ops::relu_inplace(&mut a);
                let mut h = self.conv(&u.conv, &a);
                let mask = match dropout_rng {
                    Some(rng) if self.config.dropout_p > 0.0 => {
                        Some(ops::dropout_inplace(&mut h, self.config.dropout_p, *rng))
                    }
                    _ => None,
                };
                (
                    h,
                    Some(UnitTrace {
                        bn,
                        act: a,
                        mask,
                    }),
                )
            }
        }
    }

    fn block_forward(&self, blk: &DenseBlock, x: Tensor<T>, mode: &mut Mode<'_>) -> (Tensor<T>, BlockTrace<T>) {
        let mut feats = x;
        let mut units = Vec::new();
        for u in &blk.layers {
            let (h, ut) = self.unit_forward(u, &feats, mode);
            feats = ops::concat(&[&feats, &h]);
            units.extend(ut);
        }
        let out = if blk.keep_input {
            feats
        } else {
            feats.channel_slice(blk.in_channels, feats.channels)
        };
        (out, BlockTrace { units })
    }

    /// Gradients of a scalar loss w.r.t. every store entry, given
    /// `d loss / d output`. Running statistics get zero gradient.
    pub fn backward(&self, trace: &Trace<T>, dout: &Tensor<T>) -> Vec<Vec<T>> {
        let mut grads = self.store.zeros_like();
        let y = trace.out.as_ref().expect("trace from a training-mode forward");
        let mut d = dout.clone();
        for (g, &v) in d.data.iter_mut().zip(&y.data) {
            *g *= T::one() - v * v;
        }
        let mut d = self.conv_backward(&self.last, trace.last_in.as_ref().unwrap(), &d, &mut grads);

        let n = self.up.len();
        let mut skip_grads: Vec<Option<Tensor<T>>> = vec![None; n];
        for i in (0..n).rev() {
            let dcat = self.block_backward(&self.up[i], &trace.up[i], &d, &mut grads);
            let tu = &self.tu[i];
            let du = dcat.channel_slice(0, tu.cout);
            skip_grads[n - 1 - i] = Some(dcat.channel_slice(tu.cout, dcat.channels));
            let st = &self.store.values;
            let (gw, gb) = two_mut(&mut grads, tu.w, tu.b);
            d = ops::conv_transpose1d_backward(&trace.tu_in[i], &st[tu.w], &du, tu.k, 2, gw, gb);
        }
        d = self.block_backward(&self.bottleneck, &trace.bottleneck, &d, &mut grads);
        for i in (0..self.down.len()).rev() {
            let tt = &trace.td[i];
            let dt = ops::max_pool2_backward(&d, &tt.pool_arg, tt.pre_pool_len);
            let mut dskip = self.unit_backward(&self.td[i], &tt.unit, dt, &mut grads);
            if let Some(s) = skip_grads[i].take() {
                dskip.add_assign(&s);
            }
            d = self.block_backward(&self.down[i], &trace.down[i], &dskip, &mut grads);
        }
        self.conv_backward(&self.first, trace.first_in.as_ref().unwrap(), &d, &mut grads);
        grads
    }

    fn conv_backward(&self, c: &Conv, x: &Tensor<T>, dout: &Tensor<T>, grads: &mut [Vec<T>]) -> Tensor<T> {
        let (gw, gb) = two_mut(grads, c.w, c.b);
        ops::conv1d_backward(x, &self.store.values[c.w], dout, c.k, gw, gb)
    }

    fn unit_backward(&self, u: &Unit, t: &UnitTrace<T>, mut dh: Tensor<T>, grads: &mut [Vec<T>]) -> Tensor<T> {
        if let Some(mask) = &t.mask {
            ops::apply_mask_inplace(&mut dh, mask);
        }
        let mut da = self.conv_backward(&u.conv, &t.act, &dh, grads);
        ops::relu_backward_inplace(&mut da, &t.act);
        let (gg, gb) = two_mut(grads, u.bn.gamma, u.bn.beta);
        ops::batch_norm_backward(&da, &t.bn, &self.store.values[u.bn.gamma], gg, gb)
    }

    /// Returns the gradient w.r.t. the block input.
    fn block_backward(&self, blk: &DenseBlock, bt: &BlockTrace<T>, dout: &Tensor<T>, grads: &mut [Vec<T>]) -> Tensor<T> {
        let g = self.config.growth_rate;
        let total = blk.in_channels + blk.layers.len() * g;
        let mut dfeats = if blk.keep_input {
            dout.clone()
        } else {
            let mut full = Tensor::zeros(dout.batch, total, dout.len);
            full.add_channels(blk.in_channels, dout);
            full
        };
        for (j, (u, ut)) in blk.layers.iter().zip(&bt.units).enumerate().rev() {
            let lo = blk.in_channels + j * g;
            let dh = dfeats.channel_slice(lo, lo + g);
            let din = self.unit_backward(u, ut, dh, grads);
            dfeats.add_channels(0, &din);
        }
        dfeats.channel_slice(0, blk.in_channels)
    }

    /// Indices and fresh batch statistics to fold into the running averages.
    pub fn running_stat_updates(&self, trace: &Trace<T>) -> Vec<(usize, usize, Vec<T>, Vec<T>)> {
        let mut out = Vec::new();
        let mut push = |u: &Unit, t: &UnitTrace<T>| {
            out.push((u.bn.mean, u.bn.var, t.bn.batch_mean.clone(), t.bn.batch_var.clone()));
        };
        for (blk, bt) in self.down.iter().zip(&trace.down) {
            blk.layers.iter().zip(&bt.units).for_each(|(u, t)| push(u, t));
        }
        for (u, t) in self.td.iter().zip(&trace.td) {
            push(u, &t.unit);
        }
        self.bottleneck
            .layers
            .iter()
            .zip(&trace.bottleneck.units)
            .for_each(|(u, t)| push(u, t));
        for (blk, bt) in self.up.iter().zip(&trace.up) {
            blk.layers.iter().zip(&bt.units).for_each(|(u, t)| push(u, t));
        }
        out
    }

    pub fn update_running_stats(&mut self, trace: &Trace<T>) {
        let m = T::c(self.config.bn_momentum);
        for (mi, vi, bm, bv) in self.running_stat_updates(trace) {
            for (r, b) in self.store.values[mi].iter_mut().zip(bm) {
                *r = m * *r + (T::one() - m) * b;
            }
            for (r, b) in self.store.values[vi].iter_mut().zip(bv) {
                *r = m * *r + (T::one() - m) * b;
            }
        }
    }

    /// Normalised pre-activations (`xhat`) of every BN layer in the trace.
    pub fn normalized_preactivations<'a>(&self, trace: &'a Trace<T>) -> Vec<&'a Tensor<T>> {
        let blocks = trace.down.iter().chain(std::iter::once(&trace.bottleneck)).chain(&trace.up);
        blocks
            .flat_map(|b| b.units.iter())
            .chain(trace.td.iter().map(|t| &t.unit))
            .map(|u| &u.bn.xhat)
            .collect()
    }

    /// Convert every tensor to another scalar type.
    pub fn cast<U: Scalar>(&self) -> TiramisuModel<U> {
        TiramisuModel {
            config: self.config.clone(),
            store: ParamStore {
                names: self.store.names.clone(),
                shapes: self.store.shapes.clone(),
                kinds: self.store.kinds.clone(),
                values: self
                    .store
                    .values
                    .iter()
                    .map(|v| v.iter().map(|x| U::from_f64(x.to_f64().unwrap()).unwrap()).collect())
                    .collect(),
            },
            first: self.first,
            down: self.down.clone(),
            td: self.td.clone(),
            bottleneck: self.bottleneck.clone(),
            tu: self.tu.clone(),
            up: self.up.clone(),
            last: self.last,
        }
    }
}

fn two_mut<T>(v: &mut [Vec<T>], a: usize, b: usize) -> (&mut [T], &mut [T]) {
    assert!(a < b, "kernel index precedes bias index");
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

#[derive(Debug, Clone)]
pub struct UnitTrace<T> {
    bn: BnCache<T>,
    act: Tensor<T>,
    mask: Option<Vec<T>>,
}

#[derive(Debug, Clone, Default)]
pub struct BlockTrace<T> {
    units: Vec<UnitTrace<T>>,
}

#[derive(Debug, Clone)]
pub struct TdTrace<T> {
    unit: UnitTrace<T>,
    pool_arg: Vec<bool>,
    pre_pool_len: usize,
}

/// Intermediate values recorded by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    first_in: Option<Tensor<T>>,
    down: Vec<BlockTrace<T>>,
    td: Vec<TdTrace<T>>,
    bottleneck: BlockTrace<T>,
    tu_in: Vec<Tensor<T>>,
    up: Vec<BlockTrace<T>>,
    last_in: Option<Tensor<T>>,
    out: Option<Tensor<T>>,
}

impl<T> Default for Trace<T> {
    fn default() -> Self {
        Trace {
            first_in: None,
            down: Vec::new(),
            td: Vec::new(),
            bottleneck: BlockTrace { units: Vec::new() },
            tu_in: Vec::new(),
            up: Vec::new(),
            last_in: None,
            out: None,
        }
    }
}
