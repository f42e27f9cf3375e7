//! Declarative network description: modules, blocks, presets.
//!
//! A module is a set of parallel branches — one convolution per filter size,
//! each batch-normalized, plus an optional max-pool path — joined either
//! competitively (maxout) or collaboratively (channel concatenation with
//! ReLU, the inception arrangement). A network is three-ish blocks of
//! modules with a stride-2 pool between blocks and a global-average-pool +
//! softmax head; the final module's channel count is the class count.

use serde::{Deserialize, Serialize};

use crate::analysis::dropconnect_rate_for;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combiner {
    /// Elementwise maximum: all branches share the module width.
    Maxout,
    /// Channel concatenation: branch widths sum to the module width.
    Concat,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleSpec {
    /// Odd filter sizes, one convolution branch per entry (repeats allowed:
    /// the single-scale modules use e.g. four 7x7 branches).
    pub filter_sizes: Vec<usize>,
    /// Output channels of the module.
    pub out_channels: usize,
    /// Add the max-pool -> 1x1 conv -> BN branch.
    #[serde(default)]
    pub include_pool_path: bool,
    pub combiner: Combiner,
    #[serde(default = "default_true")]
    pub per_branch_bn: bool,
    /// ReLU after every convolution (concatenation-style modules).
    #[serde(default)]
    pub relu_after: bool,
    /// Width of a 1x1 reduction placed before each branch with k >= 3.
    #[serde(default)]
    pub bottleneck_1x1: Option<usize>,
    /// Stochastic weight dropping: per-step Bernoulli keep masks on the
    /// branch convolutions. Mutually exclusive with `deterministic_masks`.
    #[serde(default)]
    pub dropconnect_rate: Option<f64>,
    /// Store every branch at the largest frame size with a fixed centered
    /// keep-mask, instead of natively small filters.
    #[serde(default)]
    pub deterministic_masks: bool,
    /// Explicit per-branch widths for concatenation (pool path last).
    #[serde(default)]
    pub branch_widths: Option<Vec<usize>>,
}

impl ModuleSpec {
    pub fn competitive(filter_sizes: Vec<usize>, out_channels: usize, pool_path: bool) -> Self {
        ModuleSpec {
            filter_sizes,
            out_channels,
            include_pool_path: pool_path,
            combiner: Combiner::Maxout,
            per_branch_bn: true,
            relu_after: false,
            bottleneck_1x1: None,
            dropconnect_rate: None,
            deterministic_masks: false,
            branch_widths: None,
        }
    }

    pub fn branch_count(&self) -> usize {
        self.filter_sizes.len() + usize::from(self.include_pool_path)
    }

    pub fn output_channels(&self) -> usize {
        self.out_channels
    }

    pub fn largest_filter(&self) -> usize {
        self.filter_sizes.iter().copied().max().unwrap_or(1)
    }

    /// Width of each branch in order (pool path last when present).
    pub fn effective_branch_widths(&self) -> Result<Vec<usize>> {
        match self.combiner {
            Combiner::Maxout => Ok(vec![self.out_channels; self.branch_count()]),
            Combiner::Concat => match &self.branch_widths {
                Some(w) => Ok(w.clone()),
                None => default_concat_widths(
                    &self.filter_sizes,
                    self.include_pool_path,
                    self.out_channels,
                ),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.filter_sizes.is_empty() {
            return Err(Error::Config("module needs at least one filter size".into()));
        }
        for &k in &self.filter_sizes {
            if k == 0 || k % 2 == 0 {
                return Err(Error::Config(format!("filter sizes must be odd, got {k}")));
            }
        }
        if self.out_channels == 0 {
            return Err(Error::Config("module out_channels must be >= 1".into()));
        }
        if let Some(r) = self.dropconnect_rate {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::Config(format!(
                    "dropconnect rate must be in (0,1), got {r}"
                )));
            }
            if self.deterministic_masks {
                return Err(Error::Config(
                    "dropconnect_rate and deterministic_masks are mutually exclusive".into(),
                ));
            }
        }
        if let Some(b) = self.bottleneck_1x1 {
            if b == 0 {
                return Err(Error::Config("bottleneck width must be >= 1".into()));
            }
        }
        match self.combiner {
            Combiner::Maxout => {
                if let Some(w) = &self.branch_widths {
                    if w.iter().any(|&x| x != self.out_channels) {
                        return Err(Error::Config(
                            "maxout branches must all have the module width".into(),
                        ));
                    }
                }
            }
            Combiner::Concat => {
                let widths = self.effective_branch_widths()?;
                if widths.len() != self.branch_count() {
                    return Err(Error::Config(format!(
                        "{} branch widths for {} branches",
                        widths.len(),
                        self.branch_count()
                    )));
                }
                if widths.iter().any(|&w| w == 0) {
                    return Err(Error::Config("concat branch widths must be >= 1".into()));
                }
                let sum: usize = widths.iter().sum();
                if sum != self.out_channels {
                    return Err(Error::Config(format!(
                        "concat branch widths sum to {sum}, module declares {}",
                        self.out_channels
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Split `out` channels across branches, favoring the 3x3 and 5x5 filters,
/// by largest-remainder allocation with a floor of one channel per branch.
fn default_concat_widths(sizes: &[usize], pool_path: bool, out: usize) -> Result<Vec<usize>> {
    let mut weights: Vec<usize> = sizes
        .iter()
        .map(|&k| match k {
            3 | 5 => 2,
            _ => 1,
        })
        .collect();
    if pool_path {
        weights.push(1);
    }
    let branches = weights.len();
    if out < branches {
        return Err(Error::Config(format!(
            "cannot split {out} channels across {branches} branches"
        )));
    }
    let total: usize = weights.iter().sum();
    let mut widths: Vec<usize> = weights.iter().map(|&w| (out * w) / total).collect();
    for w in widths.iter_mut() {
        if *w == 0 {
            *w = 1;
        }
    }
    // Fix up the rounding drift deterministically: largest remainders first.
    let mut assigned: isize = widths.iter().sum::<usize>() as isize;
    let mut order: Vec<usize> = (0..branches).collect();
    order.sort_by_key(|&i| std::cmp::Reverse((out * weights[i]) % total));
    let mut cursor = 0usize;
    while assigned < out as isize {
        widths[order[cursor % branches]] += 1;
        assigned += 1;
        cursor += 1;
    }
    while assigned > out as isize {
        let i = order[cursor % branches];
        if widths[i] > 1 {
            widths[i] -= 1;
            assigned -= 1;
        }
        cursor += 1;
    }
    Ok(widths)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownsamplerSpec {
    /// 3x3 stride-2 max pool between blocks.
    #[serde(default = "default_true")]
    pub pool3_stride2: bool,
    /// Optional dropout after the pool. Off by default; the training
    /// protocol here keeps regularization in the module structure itself.
    #[serde(default)]
    pub dropout: Option<f64>,
}

impl Default for DownsamplerSpec {
    fn default() -> Self {
        DownsamplerSpec {
            pool3_stride2: true,
            dropout: None,
        }
    }
}

fn default_bn_eps() -> f64 {
    1e-5
}
fn default_bn_momentum() -> f64 {
    0.1
}
fn default_init_std() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// (channels, height, width) of one input sample.
    pub input_shape: (usize, usize, usize),
    pub class_count: usize,
    /// blocks -> modules.
    pub blocks: Vec<Vec<ModuleSpec>>,
    #[serde(default)]
    pub downsampler: DownsamplerSpec,
    #[serde(default = "default_bn_eps")]
    pub bn_eps: f64,
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
    /// Std of the normal(0, std^2) weight initialization; biases start at 0.
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() || self.blocks.iter().any(|b| b.is_empty()) {
            return Err(Error::Config("network needs non-empty blocks".into()));
        }
        let (c, h, w) = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!(
                "input shape must be positive, got {:?}",
                self.input_shape
            )));
        }
        if self.class_count < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        for (b, block) in self.blocks.iter().enumerate() {
            for (m, module) in block.iter().enumerate() {
                module
                    .validate()
                    .map_err(|e| Error::Config(format!("block {b} module {m}: {e}")))?;
            }
        }
        let last = self.blocks.last().unwrap().last().unwrap();
        if last.output_channels() != self.class_count {
            return Err(Error::Config(format!(
                "final module has {} output channels, class count is {}",
                last.output_channels(),
                self.class_count
            )));
        }
        if let Some(r) = self.downsampler.dropout {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::Config(format!(
                    "downsampler dropout must be in (0,1), got {r}"
                )));
            }
        }
        if !(self.init_std > 0.0) {
            return Err(Error::Config("init_std must be positive".into()));
        }
        Ok(())
    }

    pub fn module_count(&self) -> usize {
        self.blocks.iter().map(|b| b.len()).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let spec: NetworkSpec =
            serde_json::from_str(json).map_err(|e| Error::Config(format!("bad spec JSON: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetName {
    CompetitiveMultiscale,
    CompetitiveInception,
    InceptionStyle,
    CompetitiveSinglescale,
    CompetitiveDropconnect,
    LargestFilterRelu,
}

impl PresetName {
    pub const ALL: [PresetName; 6] = [
        PresetName::CompetitiveMultiscale,
        PresetName::CompetitiveInception,
        PresetName::InceptionStyle,
        PresetName::CompetitiveSinglescale,
        PresetName::CompetitiveDropconnect,
        PresetName::LargestFilterRelu,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PresetName::CompetitiveMultiscale => "competitive-multiscale",
            PresetName::CompetitiveInception => "competitive-inception",
            PresetName::InceptionStyle => "inception-style",
            PresetName::CompetitiveSinglescale => "competitive-singlescale",
            PresetName::CompetitiveDropconnect => "competitive-dropconnect",
            PresetName::LargestFilterRelu => "largest-filter-relu",
        }
    }
}

impl std::str::FromStr for PresetName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PresetName::ALL
            .iter()
            .copied()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown preset '{s}' (expected one of: {})",
                    PresetName::ALL.map(|p| p.as_str()).join(", ")
                ))
            })
    }
}

impl std::fmt::Display for PresetName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-module output widths. The final module's width is always replaced by
/// the class count at preset time (the head averages each channel into one
/// class node).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthProfile {
    pub name: String,
    pub per_module: Vec<usize>,
}

impl WidthProfile {
    /// Small widths for CPU-scale runs.
    pub fn desk() -> Self {
        WidthProfile {
            name: "desk".into(),
            per_module: vec![12; 9],
        }
    }

    /// NIN-family widths (96 in block 1, 192 after); parameter totals at
    /// these widths are reported next to the reference totals, not asserted.
    pub fn full() -> Self {
        WidthProfile {
            name: "full".into(),
            per_module: vec![96, 96, 96, 192, 192, 192, 192, 192, 192],
        }
    }

    pub fn uniform(width: usize, modules: usize) -> Self {
        WidthProfile {
            name: format!("uniform-{width}"),
            per_module: vec![width; modules],
        }
    }

    /// "desk", "full", a single integer (uniform), or a comma list with one
    /// width per module.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => return Ok(Self::desk()),
            "full" => return Ok(Self::full()),
            _ => {}
        }
        let parts: Vec<&str> = s.split(',').collect();
        let widths: Vec<usize> = parts
            .iter()
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad width '{p}' in profile '{s}'")))
            })
            .collect::<Result<_>>()?;
        if widths.len() == 1 {
            return Ok(Self::uniform(widths[0], 9));
        }
        Ok(WidthProfile {
            name: format!("custom-{s}"),
            per_module: widths,
        })
    }
}

/// The multi-scale filter sizes per (block, module): {1,3,5,7} in the first
/// module of blocks 1-2, {1,3,5} opening block 3, {1,3} elsewhere.
fn multiscale_sizes() -> [[Vec<usize>; 3]; 3] {
    [
        [vec![1, 3, 5, 7], vec![1, 3], vec![1, 3]],
        [vec![1, 3, 5, 7], vec![1, 3], vec![1, 3]],
        [vec![1, 3, 5], vec![1, 3], vec![1, 3]],
    ]
}

/// Single-scale mirror: the same branch count per module, every branch at
/// the module's largest size (four 7x7, three 5x5, two 3x3).
fn singlescale_sizes() -> [[Vec<usize>; 3]; 3] {
    multiscale_sizes().map(|block| block.map(|sizes| vec![*sizes.iter().max().unwrap(); sizes.len()]))
}

/// Build one of the named architectures at the given widths.
pub fn preset(
    name: PresetName,
    profile: &WidthProfile,
    input_shape: (usize, usize, usize),
    class_count: usize,
) -> Result<NetworkSpec> {
    let module_total = 9usize;
    if profile.per_module.len() != module_total {
        return Err(Error::Config(format!(
            "width profile '{}' has {} entries, presets have {module_total} modules",
            profile.name,
            profile.per_module.len()
        )));
    }
    let width = |b: usize, m: usize| -> usize {
        if b == 2 && m == 2 {
            class_count
        } else {
            profile.per_module[b * 3 + m]
        }
    };

    let mut blocks: Vec<Vec<ModuleSpec>> = Vec::with_capacity(3);
    match name {
        PresetName::CompetitiveMultiscale | PresetName::CompetitiveInception => {
            let pool = name == PresetName::CompetitiveInception;
            let sizes = multiscale_sizes();
            for (b, block) in sizes.iter().enumerate() {
                blocks.push(
                    block
                        .iter()
                        .enumerate()
                        .map(|(m, s)| ModuleSpec::competitive(s.clone(), width(b, m), pool))
                        .collect(),
                );
            }
        }
        PresetName::CompetitiveSinglescale | PresetName::CompetitiveDropconnect => {
            let sizes = singlescale_sizes();
            for (b, block) in sizes.iter().enumerate() {
                blocks.push(
                    block
                        .iter()
                        .enumerate()
                        .map(|(m, s)| ModuleSpec::competitive(s.clone(), width(b, m), false))
                        .collect(),
                );
            }
            if name == PresetName::CompetitiveDropconnect {
                // Rate chosen so that on average as many weights survive per
                // step as the multi-scale module trains: 112/196 for the
                // {1,3,5,7} family embedded in 7x7 frames.
                let rate = dropconnect_rate_for(&[1, 3, 5, 7])?.value();
                blocks[0][0].dropconnect_rate = Some(rate);
                blocks[1][0].dropconnect_rate = Some(rate);
            }
        }
        PresetName::InceptionStyle => {
            let sizes = multiscale_sizes();
            for (b, block) in sizes.iter().enumerate() {
                let mut modules = Vec::with_capacity(3);
                for (m, s) in block.iter().enumerate() {
                    let last = b == 2 && m == 2;
                    let w = width(b, m);
                    let spec = if last {
                        // The head is a single 3x3 node so no concatenated
                        // path maps directly onto a subset of the classes.
                        ModuleSpec {
                            filter_sizes: vec![3],
                            out_channels: w,
                            include_pool_path: false,
                            combiner: Combiner::Concat,
                            per_branch_bn: true,
                            relu_after: true,
                            bottleneck_1x1: None,
                            dropconnect_rate: None,
                            deterministic_masks: false,
                            branch_widths: None,
                        }
                    } else {
                        ModuleSpec {
                            filter_sizes: s.clone(),
                            out_channels: w,
                            include_pool_path: true,
                            combiner: Combiner::Concat,
                            per_branch_bn: true,
                            relu_after: true,
                            bottleneck_1x1: Some((w / 2).max(1)),
                            dropconnect_rate: None,
                            deterministic_masks: false,
                            branch_widths: None,
                        }
                    };
                    modules.push(spec);
                }
                blocks.push(modules);
            }
        }
        PresetName::LargestFilterRelu => {
            // Maxout replaced by ReLU; only the largest filter size of each
            // module survives.
            let sizes = multiscale_sizes();
            for (b, block) in sizes.iter().enumerate() {
                blocks.push(
                    block
                        .iter()
                        .enumerate()
                        .map(|(m, s)| ModuleSpec {
                            filter_sizes: vec![*s.iter().max().unwrap()],
                            out_channels: width(b, m),
                            include_pool_path: false,
                            combiner: Combiner::Concat,
                            per_branch_bn: true,
                            relu_after: true,
                            bottleneck_1x1: None,
                            dropconnect_rate: None,
                            deterministic_masks: false,
                            branch_widths: None,
                        })
                        .collect(),
                );
            }
        }
    }

    let spec = NetworkSpec {
        input_shape,
        class_count,
        blocks,
        downsampler: DownsamplerSpec::default(),
        bn_eps: default_bn_eps(),
        bn_momentum: default_bn_momentum(),
        init_std: default_init_std(),
    };
    spec.validate()?;
    Ok(spec)
}

/// Two-module competitive network small enough for finite-difference
/// checking of every parameter: 8x8 two-channel input, 3 classes, one
/// module per block with the pool path exercised in the first.
pub fn micro_competitive_spec() -> NetworkSpec {
    NetworkSpec {
        input_shape: (2, 8, 8),
        class_count: 3,
        blocks: vec![
            vec![ModuleSpec::competitive(vec![1, 3], 6, true)],
            vec![ModuleSpec::competitive(vec![1, 3], 3, false)],
        ],
        downsampler: DownsamplerSpec::default(),
        bn_eps: default_bn_eps(),
        bn_momentum: default_bn_momentum(),
        init_std: 0.3,
    }
}

/// Concatenation-style micro network covering the bottleneck, ReLU and
/// concat paths.
pub fn micro_inception_spec() -> NetworkSpec {
    NetworkSpec {
        input_shape: (2, 8, 8),
        class_count: 3,
        blocks: vec![
            vec![ModuleSpec {
                filter_sizes: vec![1, 3],
                out_channels: 6,
                include_pool_path: true,
                combiner: Combiner::Concat,
                per_branch_bn: true,
                relu_after: true,
                bottleneck_1x1: Some(2),
                dropconnect_rate: None,
                deterministic_masks: false,
                branch_widths: None,
            }],
            vec![ModuleSpec {
                filter_sizes: vec![3],
                out_channels: 3,
                include_pool_path: false,
                combiner: Combiner::Concat,
                per_branch_bn: true,
                relu_after: true,
                bottleneck_1x1: None,
                dropconnect_rate: None,
                deterministic_masks: false,
                branch_widths: None,
            }],
        ],
        downsampler: DownsamplerSpec::default(),
        bn_eps: default_bn_eps(),
        bn_momentum: default_bn_momentum(),
        init_std: 0.3,
    }
}
