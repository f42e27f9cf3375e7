//! Diagnostic instruments: parameter counting, deterministic center masks
//! and DropConnect rate arithmetic, per-branch gamma importance, and
//! co-adaptation metrics (filter cosine similarity and maxout winner usage).

use crate::error::{Error, Result};
use crate::net::{Network, NetworkSpec, ParamPart, WinnerCounts};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

// ---------------------------------------------------------------------------
// deterministic masks

/// A centered keep-pattern: an `inner` x `inner` block of ones inside an
/// `outer` x `outer` frame of zeros. A small filter is exactly a large
/// filter with its border connections dropped to zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSpec {
    pub outer: usize,
    pub inner: usize,
    /// Row-major outer*outer pattern, 1 keep / 0 drop.
    pub pattern: Vec<u8>,
}

impl MaskSpec {
    pub fn ones(&self) -> usize {
        self.pattern.iter().filter(|&&v| v == 1).count()
    }

    pub fn zeros(&self) -> usize {
        self.pattern.len() - self.ones()
    }
}

pub fn make_center_mask(outer: usize, inner: usize) -> Result<MaskSpec> {
    if outer % 2 == 0 || inner % 2 == 0 || outer == 0 || inner == 0 {
        return Err(Error::arg(
            "make_center_mask",
            format!("sizes must be odd and positive, got outer={outer}, inner={inner}"),
        ));
    }
    if inner > outer {
        return Err(Error::arg(
            "make_center_mask",
            format!("inner {inner} exceeds outer {outer}"),
        ));
    }
    let margin = (outer - inner) / 2;
    let mut pattern = vec![0u8; outer * outer];
    for y in margin..margin + inner {
        for x in margin..margin + inner {
            pattern[y * outer + x] = 1;
        }
    }
    Ok(MaskSpec {
        outer,
        inner,
        pattern,
    })
}

// ---------------------------------------------------------------------------
// DropConnect arithmetic

/// Exact dropped/total weight ratio as integers, so e.g. {1,3,5,7} gives
/// 112/196 with no floating-point involvement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DropRate {
    pub dropped: usize,
    pub total: usize,
}

impl DropRate {
    pub fn value(&self) -> f64 {
        self.dropped as f64 / self.total as f64
    }
}

/// The rate at which embedding the given filter sizes in the largest frame
/// deterministically drops weights: sum(frame^2 - k^2) / (count * frame^2).
pub fn dropconnect_rate_for(sizes: &[usize]) -> Result<DropRate> {
    let frame = *sizes
        .iter()
        .max()
        .ok_or_else(|| Error::arg("dropconnect_rate_for", "no filter sizes"))?;
    dropconnect_rate_in_frame(sizes, frame)
}

/// Same arithmetic with an explicit frame (e.g. a lone 1x1 filter embedded
/// in a 7x7 frame drops 48/49).
pub fn dropconnect_rate_in_frame(sizes: &[usize], frame: usize) -> Result<DropRate> {
    if sizes.is_empty() {
        return Err(Error::arg("dropconnect_rate_for", "no filter sizes"));
    }
    if frame == 0 || frame % 2 == 0 {
        return Err(Error::arg(
            "dropconnect_rate_for",
            format!("frame must be odd, got {frame}"),
        ));
    }
    for &k in sizes {
        if k == 0 || k % 2 == 0 || k > frame {
            return Err(Error::arg(
                "dropconnect_rate_for",
                format!("filter sizes must be odd and fit the {frame}x{frame} frame, got {k}"),
            ));
        }
    }
    let dropped = sizes.iter().map(|&k| frame * frame - k * k).sum();
    Ok(DropRate {
        dropped,
        total: sizes.len() * frame * frame,
    })
}

/// i.i.d. Bernoulli(1 - rate) keep-mask over `len` weights, resampled per
/// training step by the caller.
pub fn sample_dropconnect_mask(len: usize, rate: f64, rng: &mut SplitMix64) -> Result<Vec<u8>> {
    crate::layers::dropout_mask(len, rate, rng)
}

// ---------------------------------------------------------------------------
// parameter counting

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCountRow {
    /// "b{block}.m{module}.{branch}.{unit}"
    pub path: String,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    pub rows: Vec<ParamCountRow>,
}

impl ParamCount {
    pub fn per_module(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for row in &self.rows {
            let module: String = row.path.splitn(3, '.').take(2).collect::<Vec<_>>().join(".");
            match out.last_mut() {
                Some((m, count)) if *m == module => *count += row.params,
                _ => out.push((module, row.params)),
            }
        }
        out
    }
}

/// Count learnable scalars from the spec alone: a convolution contributes
/// out*(in*k^2 + 1), a batch-norm unit 2*channels (gamma and beta; running
/// statistics are not learned). Modules built with deterministic masks store
/// frame-sized filters, and the pinned zeros are stored scalars, so they
/// count at the frame size — mirroring how the stochastic-masking variant
/// keeps the full parameter count of its single-scale base.
pub fn count_params(spec: &NetworkSpec) -> Result<ParamCount> {
    spec.validate()?;
    let mut rows = Vec::new();
    let mut total = 0usize;
    let mut in_ch = spec.input_shape.0;
    for (b, block) in spec.blocks.iter().enumerate() {
        for (m, mspec) in block.iter().enumerate() {
            let widths = mspec.effective_branch_widths()?;
            let frame = mspec.largest_filter();
            let mut push = |path: String, params: usize, total: &mut usize| {
                *total += params;
                rows.push(ParamCountRow { path, params });
            };
            for (bi, &k) in mspec.filter_sizes.iter().enumerate() {
                let width = widths[bi];
                let label = format!("b{b}.m{m}.{k}x{k}");
                let mut conv_in = in_ch;
                if let Some(bw) = mspec.bottleneck_1x1 {
                    if k >= 3 {
                        push(format!("{label}.bottleneck"), bw * (in_ch + 1), &mut total);
                        conv_in = bw;
                    }
                }
                let stored_k = if mspec.deterministic_masks { frame } else { k };
                push(
                    format!("{label}.conv"),
                    width * (conv_in * stored_k * stored_k + 1),
                    &mut total,
                );
                if mspec.per_branch_bn {
                    push(format!("{label}.bn"), 2 * width, &mut total);
                }
            }
            if mspec.include_pool_path {
                let width = widths[mspec.filter_sizes.len()];
                push(format!("b{b}.m{m}.pool.conv"), width * (in_ch + 1), &mut total);
                if mspec.per_branch_bn {
                    push(format!("b{b}.m{m}.pool.bn"), 2 * width, &mut total);
                }
            }
            in_ch = mspec.output_channels();
        }
    }
    Ok(ParamCount { total, rows })
}

/// Main-convolution weight counts (no biases, bottlenecks or pool paths) per
/// module in flat order; the multi-scale vs single-scale weight ratio falls
/// out of these.
pub fn conv_weight_counts(spec: &NetworkSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    let mut out = Vec::new();
    let mut in_ch = spec.input_shape.0;
    for block in &spec.blocks {
        for mspec in block {
            let widths = mspec.effective_branch_widths()?;
            let frame = mspec.largest_filter();
            let mut count = 0usize;
            for (bi, &k) in mspec.filter_sizes.iter().enumerate() {
                let conv_in = match mspec.bottleneck_1x1 {
                    Some(bw) if k >= 3 => bw,
                    _ => in_ch,
                };
                let stored_k = if mspec.deterministic_masks { frame } else { k };
                count += widths[bi] * conv_in * stored_k * stored_k;
            }
            out.push(count);
            in_ch = mspec.output_channels();
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// gamma importance

#[derive(Debug, Clone)]
pub struct GammaRow {
    pub block: usize,
    pub module: usize,
    pub branch: usize,
    /// "1x1", "3x3", ..., or "pool".
    pub label: String,
    pub mean_abs_gamma: f64,
    pub std_abs_gamma: f64,
}

#[derive(Debug, Clone)]
pub struct GammaReport {
    pub rows: Vec<GammaRow>,
}

impl GammaReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("block,module,branch,filter_size,mean,std\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.6},{:.6}\n",
                r.block, r.module, r.branch, r.label, r.mean_abs_gamma, r.std_abs_gamma
            ));
        }
        out
    }
}

/// Mean and standard deviation of |gamma| per batch-norm unit, one row per
/// (block, module, branch). |gamma| is used because a sign flip is absorbed
/// by downstream weights; the magnitude is the importance estimate.
pub fn gamma_report<T: Scalar>(net: &Network<T>) -> Result<GammaReport> {
    let mut rows = Vec::new();
    for block in &net.blocks {
        for module in block {
            for (bi, branch) in module.branches.iter().enumerate() {
                if let Some(bn) = &branch.bn {
                    let abs: Vec<f64> = bn.gamma.iter().map(|&g| g.to_f64().abs()).collect();
                    let n = abs.len() as f64;
                    let mean = abs.iter().sum::<f64>() / n;
                    let std = if abs.len() > 1 {
                        let var =
                            abs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
                        var.sqrt()
                    } else {
                        0.0
                    };
                    rows.push(GammaRow {
                        block: module.block,
                        module: module.index,
                        branch: bi,
                        label: branch.label.to_string(),
                        mean_abs_gamma: mean,
                        std_abs_gamma: std,
                    });
                }
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Data("network has no batch-norm units".into()));
    }
    Ok(GammaReport { rows })
}

// ---------------------------------------------------------------------------
// co-adaptation

#[derive(Debug, Clone)]
pub struct CosineRow {
    pub module: usize,
    pub branch_i: usize,
    pub branch_j: usize,
    pub channel: usize,
    pub cosine: f64,
}

#[derive(Debug, Clone)]
pub struct WinnerRow {
    pub module: usize,
    pub branch: usize,
    pub label: String,
    pub count: u64,
}

#[derive(Debug, Clone)]
pub struct EntropyRow {
    pub module: usize,
    /// Winner-distribution entropy in nats; ln(branches) is uniform use.
    pub entropy: f64,
}

#[derive(Debug, Clone)]
pub struct CoadaptReport {
    pub cosines: Vec<CosineRow>,
    pub winners: Vec<WinnerRow>,
    pub entropy: Vec<EntropyRow>,
}

impl CoadaptReport {
    pub fn cosines_csv(&self) -> String {
        let mut out = String::from("module,branch_i,branch_j,channel,cosine\n");
        for r in &self.cosines {
            out.push_str(&format!(
                "{},{},{},{},{:.6}\n",
                r.module, r.branch_i, r.branch_j, r.channel, r.cosine
            ));
        }
        out
    }

    pub fn winners_csv(&self) -> String {
        let mut out = String::from("module,branch,count\n");
        for r in &self.winners {
            out.push_str(&format!("{},{},{}\n", r.module, r.branch, r.count));
        }
        out
    }

    pub fn entropy_csv(&self) -> String {
        let mut out = String::from("module,entropy_nats\n");
        for r in &self.entropy {
            out.push_str(&format!("{},{:.6}\n", r.module, r.entropy));
        }
        out
    }
}

/// Embed one output-channel filter (in_ch, k, k) centered in an
/// (in_ch, frame, frame) frame, flattened.
fn embed_filter<T: Scalar>(conv: &crate::layers::ConvLayer<T>, ch: usize, frame: usize) -> Vec<f64> {
    let (k, in_ch) = (conv.k(), conv.in_ch());
    let margin = (frame - k) / 2;
    let mut out = vec![0.0f64; in_ch * frame * frame];
    for c in 0..in_ch {
        for y in 0..k {
            for x in 0..k {
                out[c * frame * frame + (y + margin) * frame + (x + margin)] =
                    conv.weights.at(ch, c, y, x).to_f64();
            }
        }
    }
    out
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    if a == b {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (na * nb)
}

/// Pairwise cosine similarity between branch filters embedded in a shared
/// frame, plus maxout winner usage over a probe set. Branch pairs whose
/// convolutions see different input widths (bottlenecked branches) are
/// skipped — their weight spaces are not comparable.
pub fn coadapt_report<T: Scalar>(
    net: &Network<T>,
    probe: &Tensor4<T>,
    batch_size: usize,
) -> Result<CoadaptReport> {
    if probe.n() == 0 || batch_size == 0 {
        return Err(Error::Data("co-adaptation probe set is empty".into()));
    }
    let mut cosines = Vec::new();
    for (flat, module) in net.modules().enumerate() {
        let frame = module
            .branches
            .iter()
            .map(|b| b.conv.k())
            .max()
            .unwrap_or(1);
        for i in 0..module.branches.len() {
            for j in i + 1..module.branches.len() {
                let (bi, bj) = (&module.branches[i], &module.branches[j]);
                if bi.conv.in_ch() != bj.conv.in_ch() {
                    continue;
                }
                let channels = bi.conv.out_ch().min(bj.conv.out_ch());
                for ch in 0..channels {
                    let va = embed_filter(&bi.conv, ch, frame);
                    let vb = embed_filter(&bj.conv, ch, frame);
                    cosines.push(CosineRow {
                        module: flat,
                        branch_i: i,
                        branch_j: j,
                        channel: ch,
                        cosine: cosine(&va, &vb),
                    });
                }
            }
        }
    }

    let mut counts = WinnerCounts::for_network(net);
    let n = probe.n();
    let mut start = 0usize;
    while start < n {
        let end = (start + batch_size).min(n);
        let batch = slice_samples(probe, start, end)?;
        net.forward_eval_counting(&batch, &mut counts)?;
        start = end;
    }

    let mut winners = Vec::new();
    let mut entropy = Vec::new();
    for (flat, module) in net.modules().enumerate() {
        let tallies = &counts.per_module[flat];
        let total: u64 = tallies.iter().sum();
        for (bi, (&count, branch)) in tallies.iter().zip(module.branches.iter()).enumerate() {
            winners.push(WinnerRow {
                module: flat,
                branch: bi,
                label: branch.label.to_string(),
                count,
            });
        }
        let h = if total > 0 {
            tallies
                .iter()
                .filter(|&&c| c > 0)
                .map(|&c| {
                    let p = c as f64 / total as f64;
                    -p * p.ln()
                })
                .sum()
        } else {
            0.0
        };
        entropy.push(EntropyRow {
            module: flat,
            entropy: h,
        });
    }
    Ok(CoadaptReport {
        cosines,
        winners,
        entropy,
    })
}

fn slice_samples<T: Scalar>(t: &Tensor4<T>, start: usize, end: usize) -> Result<Tensor4<T>> {
    let (_, c, h, w) = t.dims();
    let per = c * h * w;
    Tensor4::from_vec(
        (end - start, c, h, w),
        t.data()[start * per..end * per].to_vec(),
    )
}

/// Test-support oracle surface: enumerate every learnable scalar of a built
/// network by walking its parameter tensors.
pub fn enumerate_built_params<T: Scalar>(net: &Network<T>) -> Vec<(String, usize)> {
    net.param_ids()
        .iter()
        .map(|id| (net.param_name(id), net.param_slice(id).len()))
        .collect()
}

/// Gamma/beta positions in a built network, for cross-checking that the
/// formula-based count excludes running statistics.
pub fn built_bn_param_count<T: Scalar>(net: &Network<T>) -> usize {
    net.param_ids()
        .iter()
        .filter(|id| matches!(id.part, ParamPart::Gamma | ParamPart::Beta))
        .map(|id| net.param_slice(id).len())
        .sum()
}
