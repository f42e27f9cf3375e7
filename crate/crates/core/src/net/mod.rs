//! Built networks: module/branch structures, forward and backward passes,
//! parameter walking, and step-mask sampling.
//!
//! A built [`Network`] is immutable during a pass. Train-mode forward takes
//! presampled [`StepMasks`] (dropout and DropConnect draws for one step) and
//! returns the cache the backward pass consumes; batch-norm running
//! statistics are folded in afterwards by [`Network::update_running`], so
//! the training loop stays the single writer.

pub mod checkpoint;
pub mod spec;

use crate::error::{Error, Result};
use crate::layers::conv::{conv_backward_with_weights, conv_forward_with_weights};
use crate::layers::{
    batchnorm_backward, batchnorm_forward, batchnorm_update_running, conv_backward, conv_forward,
    dropout_backward, dropout_forward, dropout_mask, global_avg_pool, global_avg_pool_backward,
    maxpool3_backward, maxpool3_forward, pooled_size, relu_backward, relu_forward, BatchNormLayer,
    BnCache, BnGrads, ConvGrads, ConvLayer, MaxoutCache, MaxoutJoin, Mode, PoolCache,
};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

pub use spec::{
    micro_competitive_spec, micro_inception_spec, preset, Combiner, DownsamplerSpec, ModuleSpec,
    NetworkSpec, PresetName, WidthProfile,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BranchLabel {
    Filter(usize),
    Pool,
}

impl std::fmt::Display for BranchLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BranchLabel::Filter(k) => write!(f, "{k}x{k}"),
            BranchLabel::Pool => write!(f, "pool"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Branch<T: Scalar = f32> {
    pub label: BranchLabel,
    /// Pool path: 3x3 stride-1 max pool ahead of the 1x1 convolution.
    pub pre_pool: bool,
    /// 1x1 reduction ahead of the main convolution (concat-style modules).
    pub bottleneck: Option<ConvLayer<T>>,
    pub conv: ConvLayer<T>,
    pub bn: Option<BatchNormLayer<T>>,
}

#[derive(Debug, Clone)]
pub enum BuiltCombiner {
    Maxout(MaxoutJoin),
    Concat(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct Module<T: Scalar = f32> {
    pub block: usize,
    pub index: usize,
    pub branches: Vec<Branch<T>>,
    pub combiner: BuiltCombiner,
    pub relu_after: bool,
    pub dropconnect_rate: Option<f64>,
    pub in_channels: usize,
    pub out_channels: usize,
}

#[derive(Debug, Clone)]
pub struct Network<T: Scalar = f32> {
    pub spec: NetworkSpec,
    pub blocks: Vec<Vec<Module<T>>>,
}

// ---------------------------------------------------------------------------
// caches

#[derive(Debug, Clone)]
pub struct BranchCache<T: Scalar> {
    pool: Option<PoolCache>,
    relu_bott: Option<Vec<u8>>,
    /// Input of the main convolution when it is not the module input
    /// (pooled or bottleneck-transformed).
    x_conv: Option<Tensor4<T>>,
    /// Input of the batch-norm unit (the main convolution's output).
    x_bn: Option<Tensor4<T>>,
    bn: Option<BnCache<T>>,
    relu_out: Option<Vec<u8>>,
}

#[derive(Debug, Clone)]
pub enum JoinCache {
    Maxout(MaxoutCache),
    Concat,
}

#[derive(Debug, Clone)]
pub struct ModuleCache<T: Scalar> {
    input: Tensor4<T>,
    branches: Vec<BranchCache<T>>,
    join: JoinCache,
}

#[derive(Debug, Clone)]
pub struct DownCache {
    pool: Option<PoolCache>,
}

#[derive(Debug, Clone)]
pub struct NetCache<T: Scalar> {
    modules: Vec<Vec<ModuleCache<T>>>,
    downs: Vec<DownCache>,
    gap_in_dims: (usize, usize, usize, usize),
}

/// One training step's random draws: DropConnect keep-masks per module
/// branch and dropout keep-masks per between-block junction. Sampling them
/// up front keeps the forward/backward pair a pure function of
/// (parameters, input, masks), which the finite-difference checks rely on.
#[derive(Debug, Clone)]
pub struct StepMasks {
    /// [block][module] -> per-branch keep masks over conv weights.
    pub dropconnect: Vec<Vec<Option<Vec<Vec<u8>>>>>,
    /// One entry per between-block junction.
    pub dropout: Vec<Option<Vec<u8>>>,
}

// ---------------------------------------------------------------------------
// gradients

#[derive(Debug, Clone)]
pub struct BranchGrads<T: Scalar = f32> {
    pub bottleneck: Option<ConvGrads<T>>,
    pub conv: ConvGrads<T>,
    pub bn: Option<BnGrads<T>>,
}

#[derive(Debug, Clone)]
pub struct ModuleGrads<T: Scalar = f32> {
    pub branches: Vec<BranchGrads<T>>,
}

#[derive(Debug, Clone)]
pub struct GradSet<T: Scalar = f32> {
    pub modules: Vec<Vec<ModuleGrads<T>>>,
}

/// Which parameter tensor of a branch an entry refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamPart {
    BottleneckWeights,
    BottleneckBias,
    ConvWeights,
    ConvBias,
    Gamma,
    Beta,
}

impl ParamPart {
    fn as_str(&self) -> &'static str {
        match self {
            ParamPart::BottleneckWeights => "bottleneck.weights",
            ParamPart::BottleneckBias => "bottleneck.bias",
            ParamPart::ConvWeights => "conv.weights",
            ParamPart::ConvBias => "conv.bias",
            ParamPart::Gamma => "bn.gamma",
            ParamPart::Beta => "bn.beta",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId {
    pub block: usize,
    pub module: usize,
    pub branch: usize,
    pub part: ParamPart,
}

fn path_of(block: usize, module: usize, label: &BranchLabel) -> String {
    format!("b{block}.m{module}.{label}")
}

fn with_path(e: Error, path: &str) -> Error {
    match e {
        Error::Shape { where_, detail } => Error::Shape {
            where_: format!("{path}: {where_}"),
            detail,
        },
        other => other,
    }
}

// ---------------------------------------------------------------------------
// channel concat/split

pub fn concat_channels<T: Scalar>(parts: &[Tensor4<T>]) -> Result<Tensor4<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat_channels", "no inputs"))?;
    let (n, _, h, w) = first.dims();
    let mut total_c = 0usize;
    for p in parts {
        let (pn, pc, ph, pw) = p.dims();
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::shape(
                "concat_channels",
                format!("dims {:?} vs {:?}", p.dims(), first.dims()),
            ));
        }
        total_c += pc;
    }
    let mut out = Tensor4::zeros((n, total_c, h, w))?;
    for ni in 0..n {
        let mut co = 0usize;
        for p in parts {
            for pc in 0..p.c() {
                out.plane_mut(ni, co).copy_from_slice(p.plane(ni, pc));
                co += 1;
            }
        }
    }
    Ok(out)
}

pub fn split_channels<T: Scalar>(t: &Tensor4<T>, widths: &[usize]) -> Result<Vec<Tensor4<T>>> {
    let (n, c, h, w) = t.dims();
    if widths.iter().sum::<usize>() != c {
        return Err(Error::shape(
            "split_channels",
            format!("widths {widths:?} do not sum to {c}"),
        ));
    }
    let mut parts = Vec::with_capacity(widths.len());
    let mut base = 0usize;
    for &cw in widths {
        let mut p = Tensor4::zeros((n, cw, h, w))?;
        for ni in 0..n {
            for pc in 0..cw {
                p.plane_mut(ni, pc).copy_from_slice(t.plane(ni, base + pc));
            }
        }
        parts.push(p);
        base += cw;
    }
    Ok(parts)
}

// ---------------------------------------------------------------------------
// building

impl<T: Scalar> Network<T> {
    /// Build and initialize a network: conv weights are normal(0, init_std),
    /// biases 0, gamma 1, beta 0, running statistics (0, 1). Deterministic
    /// given the rng.
    pub fn build(spec: &NetworkSpec, rng: &mut SplitMix64) -> Result<Self> {
        spec.validate()?;
        let mut blocks = Vec::with_capacity(spec.blocks.len());
        let mut in_ch = spec.input_shape.0;
        for (b, block_spec) in spec.blocks.iter().enumerate() {
            let mut modules = Vec::with_capacity(block_spec.len());
            for (m, mspec) in block_spec.iter().enumerate() {
                let module = Module::build(mspec, b, m, in_ch, spec, rng)?;
                in_ch = module.out_channels;
                modules.push(module);
            }
            blocks.push(modules);
        }
        Ok(Network {
            spec: spec.clone(),
            blocks,
        })
    }

    pub fn modules(&self) -> impl Iterator<Item = &Module<T>> {
        self.blocks.iter().flatten()
    }

    pub fn class_count(&self) -> usize {
        self.spec.class_count
    }
}

impl<T: Scalar> Module<T> {
    fn build(
        mspec: &ModuleSpec,
        block: usize,
        index: usize,
        in_ch: usize,
        net: &NetworkSpec,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        mspec.validate()?;
        let widths = mspec.effective_branch_widths()?;
        let frame = mspec.largest_filter();
        let mut branches = Vec::with_capacity(mspec.branch_count());

        for (bi, &k) in mspec.filter_sizes.iter().enumerate() {
            let width = widths[bi];
            let bottleneck = match mspec.bottleneck_1x1 {
                Some(bw) if k >= 3 => Some(ConvLayer::new(bw, in_ch, 1, net.init_std, rng)?),
                _ => None,
            };
            let conv_in = bottleneck.as_ref().map_or(in_ch, |b| b.out_ch());
            let mut conv = if mspec.deterministic_masks {
                let mut c = ConvLayer::new(width, conv_in, frame, net.init_std, rng)?;
                let mask = crate::analysis::make_center_mask(frame, k)?;
                c.set_spatial_mask(&mask.pattern)?;
                c
            } else {
                ConvLayer::new(width, conv_in, k, net.init_std, rng)?
            };
            conv.apply_mask();
            let bn = if mspec.per_branch_bn {
                Some(BatchNormLayer::new(width, net.bn_eps, net.bn_momentum)?)
            } else {
                None
            };
            branches.push(Branch {
                label: BranchLabel::Filter(k),
                pre_pool: false,
                bottleneck,
                conv,
                bn,
            });
        }

        if mspec.include_pool_path {
            let width = widths[mspec.filter_sizes.len()];
            let conv = ConvLayer::new(width, in_ch, 1, net.init_std, rng)?;
            let bn = if mspec.per_branch_bn {
                Some(BatchNormLayer::new(width, net.bn_eps, net.bn_momentum)?)
            } else {
                None
            };
            branches.push(Branch {
                label: BranchLabel::Pool,
                pre_pool: true,
                bottleneck: None,
                conv,
                bn,
            });
        }

        let combiner = match mspec.combiner {
            Combiner::Maxout => BuiltCombiner::Maxout(MaxoutJoin::new(branches.len())?),
            Combiner::Concat => BuiltCombiner::Concat(widths),
        };
        Ok(Module {
            block,
            index,
            branches,
            combiner,
            relu_after: mspec.relu_after,
            dropconnect_rate: mspec.dropconnect_rate,
            in_channels: in_ch,
            out_channels: mspec.output_channels(),
        })
    }
}

// ---------------------------------------------------------------------------
// forward

impl<T: Scalar> Branch<T> {
    fn effective_weights(&self, dc_mask: Option<&[u8]>) -> Option<Vec<T>> {
        dc_mask.map(|mask| {
            self.conv
                .weights
                .iter()
                .zip(mask.iter())
                .map(|(&w, &m)| if m == 1 { w } else { T::ZERO })
                .collect()
        })
    }

    fn forward_train(
        &self,
        input: &Tensor4<T>,
        relu_after: bool,
        dc_mask: Option<&[u8]>,
    ) -> Result<(Tensor4<T>, BranchCache<T>)> {
        let mut cache = BranchCache {
            pool: None,
            relu_bott: None,
            x_conv: None,
            x_bn: None,
            bn: None,
            relu_out: None,
        };
        let mut h: Option<Tensor4<T>> = None;
        if self.pre_pool {
            let (p, pc) = maxpool3_forward(input, 1)?;
            cache.pool = Some(pc);
            h = Some(p);
        }
        if let Some(bott) = &self.bottleneck {
            let mut b = conv_forward(bott, h.as_ref().unwrap_or(input))?;
            if relu_after {
                let (r, mask) = relu_forward(&b);
                cache.relu_bott = Some(mask);
                b = r;
            }
            h = Some(b);
        }
        if let Some(pre) = h {
            cache.x_conv = Some(pre);
        }
        let conv_in = cache.x_conv.as_ref().unwrap_or(input);
        let mut out = match self.effective_weights(dc_mask) {
            Some(w) => conv_forward_with_weights(&self.conv, conv_in, &w)?,
            None => conv_forward(&self.conv, conv_in)?,
        };
        if let Some(bn) = &self.bn {
            let x_bn = out;
            let (y, bn_cache) = batchnorm_forward(bn, &x_bn, Mode::Train)?;
            cache.x_bn = Some(x_bn);
            cache.bn = bn_cache;
            out = y;
        }
        if relu_after {
            let (r, mask) = relu_forward(&out);
            cache.relu_out = Some(mask);
            out = r;
        }
        Ok((out, cache))
    }

    fn forward_eval(
        &self,
        input: &Tensor4<T>,
        relu_after: bool,
        dc_rate: Option<f64>,
    ) -> Result<Tensor4<T>> {
        let mut h: Option<Tensor4<T>> = None;
        if self.pre_pool {
            let (p, _) = maxpool3_forward(input, 1)?;
            h = Some(p);
        }
        if let Some(bott) = &self.bottleneck {
            let mut b = conv_forward(bott, h.as_ref().unwrap_or(input))?;
            if relu_after {
                b = relu_forward(&b).0;
            }
            h = Some(b);
        }
        let conv_in = h.as_ref().unwrap_or(input);
        let mut out = match dc_rate {
            // Mean-field DropConnect inference: scale weights by the keep
            // probability instead of sampling. Deterministic, no rng use.
            Some(rate) => {
                let keep = T::from_f64(1.0 - rate);
                let w: Vec<T> = self.conv.weights.iter().map(|&v| v * keep).collect();
                conv_forward_with_weights(&self.conv, conv_in, &w)?
            }
            None => conv_forward(&self.conv, conv_in)?,
        };
        if let Some(bn) = &self.bn {
            out = batchnorm_forward(bn, &out, Mode::Eval)?.0;
        }
        if relu_after {
            out = relu_forward(&out).0;
        }
        Ok(out)
    }

    fn backward(
        &self,
        module_input: &Tensor4<T>,
        cache: &BranchCache<T>,
        relu_after: bool,
        dc_mask: Option<&[u8]>,
        grad_out: &Tensor4<T>,
    ) -> Result<(Tensor4<T>, BranchGrads<T>)> {
        let mut g = grad_out.clone();
        if relu_after {
            let mask = cache
                .relu_out
                .as_ref()
                .ok_or_else(|| Error::shape("branch backward", "missing relu cache"))?;
            g = relu_backward(mask, &g);
        }
        let mut bn_grads = None;
        if let Some(bn) = &self.bn {
            let x_bn = cache
                .x_bn
                .as_ref()
                .ok_or_else(|| Error::shape("branch backward", "missing bn input cache"))?;
            let (gx, gb) = batchnorm_backward(bn, x_bn, cache.bn.as_ref(), &g)?;
            bn_grads = Some(gb);
            g = gx;
        }
        let conv_in = cache.x_conv.as_ref().unwrap_or(module_input);
        let (mut g, mut conv_grads) = match self.effective_weights(dc_mask) {
            Some(w) => conv_backward_with_weights(&self.conv, conv_in, &g, &w)?,
            None => conv_backward(&self.conv, conv_in, &g)?,
        };
        if let Some(mask) = dc_mask {
            // Dropped weights were effectively zero this step; their stored
            // values got no say in the output, so they receive no gradient.
            for (gw, &m) in conv_grads.weights.data_mut().iter_mut().zip(mask.iter()) {
                if m == 0 {
                    *gw = T::ZERO;
                }
            }
        }
        let mut bott_grads = None;
        if let Some(bott) = &self.bottleneck {
            if relu_after {
                let mask = cache
                    .relu_bott
                    .as_ref()
                    .ok_or_else(|| Error::shape("branch backward", "missing bottleneck relu cache"))?;
                g = relu_backward(mask, &g);
            }
            let bott_in = if self.pre_pool {
                unreachable!("pool path never carries a bottleneck")
            } else {
                module_input
            };
            let (gx, gb) = conv_backward(bott, bott_in, &g)?;
            bott_grads = Some(gb);
            g = gx;
        }
        if self.pre_pool {
            let pc = cache
                .pool
                .as_ref()
                .ok_or_else(|| Error::shape("branch backward", "missing pool cache"))?;
            g = maxpool3_backward(pc, &g)?;
        }
        Ok((
            g,
            BranchGrads {
                bottleneck: bott_grads,
                conv: conv_grads,
                bn: bn_grads,
            },
        ))
    }
}

impl<T: Scalar> Module<T> {
    fn forward_train(
        &self,
        input: Tensor4<T>,
        dc_masks: Option<&Vec<Vec<u8>>>,
    ) -> Result<(Tensor4<T>, ModuleCache<T>)> {
        let mut outs = Vec::with_capacity(self.branches.len());
        let mut caches = Vec::with_capacity(self.branches.len());
        for (bi, branch) in self.branches.iter().enumerate() {
            let dc = dc_masks.map(|m| m[bi].as_slice());
            let (o, c) = branch
                .forward_train(&input, self.relu_after, dc)
                .map_err(|e| with_path(e, &path_of(self.block, self.index, &branch.label)))?;
            outs.push(o);
            caches.push(c);
        }
        let (out, join) = match &self.combiner {
            BuiltCombiner::Maxout(join) => {
                let (o, c) = join
                    .forward(&outs)
                    .map_err(|e| with_path(e, &format!("b{}.m{}", self.block, self.index)))?;
                (o, JoinCache::Maxout(c))
            }
            BuiltCombiner::Concat(_) => (concat_channels(&outs)?, JoinCache::Concat),
        };
        Ok((
            out,
            ModuleCache {
                input,
                branches: caches,
                join,
            },
        ))
    }

    fn forward_eval(
        &self,
        input: &Tensor4<T>,
        winner_counts: Option<&mut Vec<u64>>,
    ) -> Result<Tensor4<T>> {
        let mut outs = Vec::with_capacity(self.branches.len());
        for branch in &self.branches {
            let o = branch
                .forward_eval(input, self.relu_after, self.dropconnect_rate)
                .map_err(|e| with_path(e, &path_of(self.block, self.index, &branch.label)))?;
            outs.push(o);
        }
        match &self.combiner {
            BuiltCombiner::Maxout(join) => {
                let (o, cache) = join.forward(&outs)?;
                if let Some(counts) = winner_counts {
                    for &w in &cache.winners {
                        counts[w as usize] += 1;
                    }
                }
                Ok(o)
            }
            BuiltCombiner::Concat(_) => concat_channels(&outs),
        }
    }

    fn backward(
        &self,
        cache: &ModuleCache<T>,
        dc_masks: Option<&Vec<Vec<u8>>>,
        grad_out: &Tensor4<T>,
    ) -> Result<(Tensor4<T>, ModuleGrads<T>)> {
        let branch_grads_in: Vec<Tensor4<T>> = match (&self.combiner, &cache.join) {
            (BuiltCombiner::Maxout(join), JoinCache::Maxout(jc)) => join.backward(jc, grad_out)?,
            (BuiltCombiner::Concat(widths), JoinCache::Concat) => {
                split_channels(grad_out, widths)?
            }
            _ => {
                return Err(Error::shape(
                    format!("b{}.m{} backward", self.block, self.index),
                    "cache does not match combiner",
                ))
            }
        };
        let mut grad_input = Tensor4::zeros(cache.input.dims())?;
        let mut grads = Vec::with_capacity(self.branches.len());
        for (bi, branch) in self.branches.iter().enumerate() {
            let dc = dc_masks.map(|m| m[bi].as_slice());
            let (gx, bg) = branch
                .backward(
                    &cache.input,
                    &cache.branches[bi],
                    self.relu_after,
                    dc,
                    &branch_grads_in[bi],
                )
                .map_err(|e| with_path(e, &path_of(self.block, self.index, &branch.label)))?;
            for (acc, &v) in grad_input.data_mut().iter_mut().zip(gx.iter()) {
                *acc += v;
            }
            grads.push(bg);
        }
        Ok((grad_input, ModuleGrads { branches: grads }))
    }
}

impl<T: Scalar> Network<T> {
    fn junction_count(&self) -> usize {
        self.blocks.len().saturating_sub(1)
    }

    /// Channel/spatial dims of the activation entering each between-block
    /// junction, for a given batch size.
    fn junction_dims(&self, batch: usize) -> Vec<(usize, usize, usize, usize)> {
        let (_, mut h, mut w) = self.spec.input_shape;
        let mut dims = Vec::new();
        for (b, block) in self.blocks.iter().enumerate() {
            let c = block.last().expect("non-empty block").out_channels;
            if b + 1 < self.blocks.len() {
                if self.spec.downsampler.pool3_stride2 {
                    h = pooled_size(h, 2);
                    w = pooled_size(w, 2);
                }
                dims.push((batch, c, h, w));
            }
        }
        dims
    }

    /// Draw one training step's dropout and DropConnect masks.
    pub fn sample_step_masks(&self, batch: usize, rng: &mut SplitMix64) -> Result<StepMasks> {
        let mut dropconnect = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let mut per_module = Vec::with_capacity(block.len());
            for module in block {
                let masks = match module.dropconnect_rate {
                    Some(rate) => {
                        let mut per_branch = Vec::with_capacity(module.branches.len());
                        for branch in &module.branches {
                            per_branch.push(dropout_mask(branch.conv.weights.len(), rate, rng)?);
                        }
                        Some(per_branch)
                    }
                    None => None,
                };
                per_module.push(masks);
            }
            dropconnect.push(per_module);
        }
        let mut dropout = Vec::new();
        if let Some(rate) = self.spec.downsampler.dropout {
            for (n, c, h, w) in self.junction_dims(batch) {
                dropout.push(Some(dropout_mask(n * c * h * w, rate, rng)?));
            }
        } else {
            dropout = vec![None; self.junction_count()];
        }
        Ok(StepMasks {
            dropconnect,
            dropout,
        })
    }

    /// Masks for a step with no stochastic regularization anywhere (valid
    /// only when the network uses neither DropConnect nor dropout).
    pub fn empty_masks(&self) -> StepMasks {
        StepMasks {
            dropconnect: self
                .blocks
                .iter()
                .map(|b| vec![None; b.len()])
                .collect(),
            dropout: vec![None; self.junction_count()],
        }
    }

    pub fn forward_train(
        &self,
        x: &Tensor4<T>,
        masks: &StepMasks,
    ) -> Result<(Tensor4<T>, NetCache<T>)> {
        self.check_input(x)?;
        let mut h = x.clone();
        let mut modules = Vec::with_capacity(self.blocks.len());
        let mut downs = Vec::new();
        for (b, block) in self.blocks.iter().enumerate() {
            let mut mcaches = Vec::with_capacity(block.len());
            for (m, module) in block.iter().enumerate() {
                let (out, mc) = module.forward_train(h, masks.dropconnect[b][m].as_ref())?;
                h = out;
                mcaches.push(mc);
            }
            modules.push(mcaches);
            if b + 1 < self.blocks.len() {
                let mut dc = DownCache { pool: None };
                if self.spec.downsampler.pool3_stride2 {
                    let (p, pc) = maxpool3_forward(&h, 2)?;
                    h = p;
                    dc.pool = Some(pc);
                }
                if let Some(rate) = self.spec.downsampler.dropout {
                    let mask = masks.dropout[b]
                        .as_ref()
                        .ok_or_else(|| Error::shape("forward_train", "missing dropout mask"))?;
                    h = dropout_forward(&h, mask, rate);
                }
                downs.push(dc);
            }
        }
        let gap_in_dims = h.dims();
        let logits = global_avg_pool(&h);
        Ok((
            logits,
            NetCache {
                modules,
                downs,
                gap_in_dims,
            },
        ))
    }

    pub fn forward_eval(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.forward_eval_impl(x, None)
    }

    /// Eval-mode forward that also tallies maxout winner counts per module
    /// branch (for the co-adaptation report).
    pub fn forward_eval_counting(
        &self,
        x: &Tensor4<T>,
        counts: &mut WinnerCounts,
    ) -> Result<Tensor4<T>> {
        self.forward_eval_impl(x, Some(counts))
    }

    fn forward_eval_impl(
        &self,
        x: &Tensor4<T>,
        mut counts: Option<&mut WinnerCounts>,
    ) -> Result<Tensor4<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        let mut flat = 0usize;
        for (b, block) in self.blocks.iter().enumerate() {
            for module in block.iter() {
                let wc = counts
                    .as_deref_mut()
                    .map(|c| &mut c.per_module[flat]);
                h = module.forward_eval(&h, wc)?;
                flat += 1;
            }
            if b + 1 < self.blocks.len() && self.spec.downsampler.pool3_stride2 {
                h = maxpool3_forward(&h, 2)?.0;
            }
        }
        Ok(global_avg_pool(&h))
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        let (c, h, w) = self.spec.input_shape;
        if (x.c(), x.h(), x.w()) != (c, h, w) {
            return Err(Error::shape(
                "network forward",
                format!(
                    "input dims {:?}, network expects (_, {c}, {h}, {w})",
                    x.dims()
                ),
            ));
        }
        Ok(())
    }

    pub fn backward(
        &self,
        cache: &NetCache<T>,
        masks: &StepMasks,
        grad_logits: &Tensor4<T>,
    ) -> Result<GradSet<T>> {
        let mut grads = self.zero_grads();
        let mut g = global_avg_pool_backward(cache.gap_in_dims, grad_logits)?;
        for b in (0..self.blocks.len()).rev() {
            if b + 1 < self.blocks.len() {
                if let Some(rate) = self.spec.downsampler.dropout {
                    let mask = masks.dropout[b]
                        .as_ref()
                        .ok_or_else(|| Error::shape("backward", "missing dropout mask"))?;
                    g = dropout_backward(mask, rate, &g);
                }
                if let Some(pc) = &cache.downs[b].pool {
                    g = maxpool3_backward(pc, &g)?;
                }
            }
            for m in (0..self.blocks[b].len()).rev() {
                let module = &self.blocks[b][m];
                let (gx, mg) =
                    module.backward(&cache.modules[b][m], masks.dropconnect[b][m].as_ref(), &g)?;
                grads.modules[b][m] = mg;
                g = gx;
            }
        }
        Ok(grads)
    }

    /// Fold the batch statistics of a train-mode forward into the running
    /// averages. Call once per optimizer step.
    pub fn update_running(&mut self, cache: &NetCache<T>) {
        for (block, bcaches) in self.blocks.iter_mut().zip(cache.modules.iter()) {
            for (module, mcache) in block.iter_mut().zip(bcaches.iter()) {
                for (branch, bc) in module.branches.iter_mut().zip(mcache.branches.iter()) {
                    if let (Some(bn), Some(stats)) = (branch.bn.as_mut(), bc.bn.as_ref()) {
                        batchnorm_update_running(bn, stats);
                    }
                }
            }
        }
    }

    pub fn zero_grads(&self) -> GradSet<T> {
        GradSet {
            modules: self
                .blocks
                .iter()
                .map(|block| {
                    block
                        .iter()
                        .map(|module| ModuleGrads {
                            branches: module
                                .branches
                                .iter()
                                .map(|br| BranchGrads {
                                    bottleneck: br.bottleneck.as_ref().map(|c| c.zero_grads()),
                                    conv: br.conv.zero_grads(),
                                    bn: br.bn.as_ref().map(|b| b.zero_grads()),
                                })
                                .collect(),
                        })
                        .collect()
                })
                .collect(),
        }
    }

    /// Canonical parameter order: blocks, modules, branches; within a branch
    /// bottleneck weights/bias, conv weights/bias, gamma, beta.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for (b, block) in self.blocks.iter().enumerate() {
            for (m, module) in block.iter().enumerate() {
                for (br, branch) in module.branches.iter().enumerate() {
                    let mut push = |part| {
                        ids.push(ParamId {
                            block: b,
                            module: m,
                            branch: br,
                            part,
                        })
                    };
                    if branch.bottleneck.is_some() {
                        push(ParamPart::BottleneckWeights);
                        push(ParamPart::BottleneckBias);
                    }
                    push(ParamPart::ConvWeights);
                    push(ParamPart::ConvBias);
                    if branch.bn.is_some() {
                        push(ParamPart::Gamma);
                        push(ParamPart::Beta);
                    }
                }
            }
        }
        ids
    }

    pub fn param_name(&self, id: &ParamId) -> String {
        let label = &self.blocks[id.block][id.module].branches[id.branch].label;
        format!(
            "{}.{}",
            path_of(id.block, id.module, label),
            id.part.as_str()
        )
    }

    pub fn param_slice(&self, id: &ParamId) -> &[T] {
        let branch = &self.blocks[id.block][id.module].branches[id.branch];
        match id.part {
            ParamPart::BottleneckWeights => branch.bottleneck.as_ref().unwrap().weights.data(),
            ParamPart::BottleneckBias => &branch.bottleneck.as_ref().unwrap().bias,
            ParamPart::ConvWeights => branch.conv.weights.data(),
            ParamPart::ConvBias => &branch.conv.bias,
            ParamPart::Gamma => &branch.bn.as_ref().unwrap().gamma,
            ParamPart::Beta => &branch.bn.as_ref().unwrap().beta,
        }
    }

    pub fn param_slice_mut(&mut self, id: &ParamId) -> &mut [T] {
        let branch = &mut self.blocks[id.block][id.module].branches[id.branch];
        match id.part {
            ParamPart::BottleneckWeights => branch.bottleneck.as_mut().unwrap().weights.data_mut(),
            ParamPart::BottleneckBias => &mut branch.bottleneck.as_mut().unwrap().bias,
            ParamPart::ConvWeights => branch.conv.weights.data_mut(),
            ParamPart::ConvBias => &mut branch.conv.bias,
            ParamPart::Gamma => &mut branch.bn.as_mut().unwrap().gamma,
            ParamPart::Beta => &mut branch.bn.as_mut().unwrap().beta,
        }
    }

    /// Total learnable scalar count of the built network.
    pub fn scalar_param_count(&self) -> usize {
        self.param_ids()
            .iter()
            .map(|id| self.param_slice(id).len())
            .sum()
    }
}

impl<T: Scalar> GradSet<T> {
    pub fn slice(&self, id: &ParamId) -> &[T] {
        let branch = &self.modules[id.block][id.module].branches[id.branch];
        match id.part {
            ParamPart::BottleneckWeights => branch.bottleneck.as_ref().unwrap().weights.data(),
            ParamPart::BottleneckBias => &branch.bottleneck.as_ref().unwrap().bias,
            ParamPart::ConvWeights => branch.conv.weights.data(),
            ParamPart::ConvBias => &branch.conv.bias,
            ParamPart::Gamma => &branch.bn.as_ref().unwrap().gamma,
            ParamPart::Beta => &branch.bn.as_ref().unwrap().beta,
        }
    }

    pub fn slice_mut(&mut self, id: &ParamId) -> &mut [T] {
        let branch = &mut self.modules[id.block][id.module].branches[id.branch];
        match id.part {
            ParamPart::BottleneckWeights => branch.bottleneck.as_mut().unwrap().weights.data_mut(),
            ParamPart::BottleneckBias => &mut branch.bottleneck.as_mut().unwrap().bias,
            ParamPart::ConvWeights => branch.conv.weights.data_mut(),
            ParamPart::ConvBias => &mut branch.conv.bias,
            ParamPart::Gamma => &mut branch.bn.as_mut().unwrap().gamma,
            ParamPart::Beta => &mut branch.bn.as_mut().unwrap().beta,
        }
    }
}

/// Maxout winner tallies per module (flat order) and branch.
#[derive(Debug, Clone)]
pub struct WinnerCounts {
    pub per_module: Vec<Vec<u64>>,
}

impl WinnerCounts {
    pub fn for_network<T: Scalar>(net: &Network<T>) -> Self {
        WinnerCounts {
            per_module: net
                .modules()
                .map(|m| vec![0u64; m.branches.len()])
                .collect(),
        }
    }
}
