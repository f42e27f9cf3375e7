//! Same-padded 2-D convolution with optional per-weight masking.
//!
//! Filter sizes are odd and the zero padding is (k-1)/2, so spatial
//! dimensions are preserved — branches of different filter sizes can be
//! joined elementwise downstream. Masked weight positions are pinned to
//! exactly zero: at initialization, in the gradient, and after every
//! optimizer step.

use crate::error::{Error, Result};
use crate::parallel::for_each_chunk;
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T = f32> {
    /// (out_ch, in_ch, k, k)
    pub weights: Tensor4<T>,
    pub bias: Vec<T>,
    /// Keep-mask over `weights` (1 keep, 0 drop), same length.
    pub mask: Option<Vec<u8>>,
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T = f32> {
    pub weights: Tensor4<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn new(
        out_ch: usize,
        in_ch: usize,
        k: usize,
        init_std: f64,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        check_k(k)?;
        Ok(ConvLayer {
            weights: Tensor4::gaussian((out_ch, in_ch, k, k), init_std, rng)?,
            bias: vec![T::ZERO; out_ch],
            mask: None,
        })
    }

    pub fn zeroed(out_ch: usize, in_ch: usize, k: usize) -> Result<Self> {
        check_k(k)?;
        Ok(ConvLayer {
            weights: Tensor4::zeros((out_ch, in_ch, k, k))?,
            bias: vec![T::ZERO; out_ch],
            mask: None,
        })
    }

    #[inline]
    pub fn out_ch(&self) -> usize {
        self.weights.n()
    }
    #[inline]
    pub fn in_ch(&self) -> usize {
        self.weights.c()
    }
    #[inline]
    pub fn k(&self) -> usize {
        self.weights.h()
    }
    #[inline]
    pub fn pad(&self) -> usize {
        (self.k() - 1) / 2
    }

    /// Install a spatial keep-pattern (length k*k), tiled over every
    /// (out, in) filter, and zero the dropped weights immediately.
    pub fn set_spatial_mask(&mut self, pattern: &[u8]) -> Result<()> {
        let k = self.k();
        if pattern.len() != k * k {
            return Err(Error::arg(
                "ConvLayer::set_spatial_mask",
                format!("pattern length {} != k*k = {}", pattern.len(), k * k),
            ));
        }
        let per_filter = self.in_ch() * k * k;
        let mut mask = Vec::with_capacity(self.weights.len());
        for _ in 0..self.out_ch() {
            for _ in 0..self.in_ch() {
                mask.extend_from_slice(pattern);
            }
        }
        debug_assert_eq!(mask.len(), self.out_ch() * per_filter);
        self.mask = Some(mask);
        self.apply_mask();
        Ok(())
    }

    /// Force masked weights to exactly zero.
    pub fn apply_mask(&mut self) {
        if let Some(mask) = &self.mask {
            for (w, &m) in self.weights.data_mut().iter_mut().zip(mask.iter()) {
                if m == 0 {
                    *w = T::ZERO;
                }
            }
        }
    }

    /// Learnable scalar count: weights (masked positions included, they are
    /// stored even though pinned) plus biases.
    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn zero_grads(&self) -> ConvGrads<T> {
        ConvGrads {
            weights: Tensor4::zeros(self.weights.dims()).expect("dims already valid"),
            bias: vec![T::ZERO; self.bias.len()],
        }
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 || k % 2 == 0 {
        return Err(Error::arg(
            "ConvLayer",
            format!("filter size must be odd and positive, got {k}"),
        ));
    }
    Ok(())
}

/// dst[y][x] += scale * src[y + sy][x + sx] over the in-bounds region.
/// Both planes are h*w row-major.
#[inline]
fn accumulate_shifted<T: Scalar>(
    dst: &mut [T],
    src: &[T],
    h: usize,
    w: usize,
    scale: T,
    sy: isize,
    sx: isize,
) {
    let y0 = (-sy).max(0) as usize;
    let y1 = ((h as isize - sy).min(h as isize)).max(0) as usize;
    let x0 = (-sx).max(0) as usize;
    let x1 = ((w as isize - sx).min(w as isize)).max(0) as usize;
    if x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let sy_row = ((y as isize + sy) as usize) * w;
        let sx_off = (x0 as isize + sx) as usize;
        let d = &mut dst[y * w + x0..y * w + x1];
        let s = &src[sy_row + sx_off..sy_row + sx_off + (x1 - x0)];
        for (dv, &sv) in d.iter_mut().zip(s.iter()) {
            *dv += scale * sv;
        }
    }
}

/// sum over the in-bounds region of a[y][x] * b[y + sy][x + sx].
#[inline]
fn dot_shifted<T: Scalar>(a: &[T], b: &[T], h: usize, w: usize, sy: isize, sx: isize) -> T {
    let y0 = (-sy).max(0) as usize;
    let y1 = ((h as isize - sy).min(h as isize)).max(0) as usize;
    let x0 = (-sx).max(0) as usize;
    let x1 = ((w as isize - sx).min(w as isize)).max(0) as usize;
    let mut acc = T::ZERO;
    if x0 >= x1 {
        return acc;
    }
    for y in y0..y1 {
        let by_row = ((y as isize + sy) as usize) * w;
        let bx_off = (x0 as isize + sx) as usize;
        let av = &a[y * w + x0..y * w + x1];
        let bv = &b[by_row + bx_off..by_row + bx_off + (x1 - x0)];
        let mut row = T::ZERO;
        for (&x, &y) in av.iter().zip(bv.iter()) {
            row += x * y;
        }
        acc += row;
    }
    acc
}

fn check_input<T: Scalar>(layer: &ConvLayer<T>, x: &Tensor4<T>, op: &'static str) -> Result<()> {
    if x.c() != layer.in_ch() {
        return Err(Error::shape(
            op,
            format!(
                "input has {} channels, layer expects {}",
                x.c(),
                layer.in_ch()
            ),
        ));
    }
    Ok(())
}

/// out[n, o] = bias[o] + sum over (c, dy, dx) of w[o, c, dy, dx] * x
/// shifted by (dy - pad, dx - pad). Spatial size preserved.
pub fn conv_forward<T: Scalar>(layer: &ConvLayer<T>, x: &Tensor4<T>) -> Result<Tensor4<T>> {
    conv_forward_with_weights(layer, x, layer.weights.data())
}

/// Forward with substituted weights (the DropConnect path masks or rescales
/// a copy of the stored weights).
pub fn conv_forward_with_weights<T: Scalar>(
    layer: &ConvLayer<T>,
    x: &Tensor4<T>,
    weights: &[T],
) -> Result<Tensor4<T>> {
    check_input(layer, x, "conv_forward")?;
    debug_assert_eq!(weights.len(), layer.weights.len());
    let (n, in_ch, h, w) = x.dims();
    let (out_ch, k, pad) = (layer.out_ch(), layer.k(), layer.pad());
    let mut out = Tensor4::zeros((n, out_ch, h, w))?;
    let plane = h * w;
    let bias = &layer.bias;

    for_each_chunk(out.data_mut(), plane, |idx, out_plane| {
        let ni = idx / out_ch;
        let o = idx % out_ch;
        out_plane.fill(bias[o]);
        for c in 0..in_ch {
            let xplane = x.plane(ni, c);
            let wbase = (o * in_ch + c) * k * k;
            for dy in 0..k {
                for dx in 0..k {
                    let wv = weights[wbase + dy * k + dx];
                    if wv == T::ZERO {
                        continue;
                    }
                    accumulate_shifted(
                        out_plane,
                        xplane,
                        h,
                        w,
                        wv,
                        dy as isize - pad as isize,
                        dx as isize - pad as isize,
                    );
                }
            }
        }
    });
    Ok(out)
}

/// Gradients of the forward map: (grad_x, grads{weights, bias}).
/// Gradients at masked weight positions are zeroed.
pub fn conv_backward<T: Scalar>(
    layer: &ConvLayer<T>,
    x: &Tensor4<T>,
    grad_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, ConvGrads<T>)> {
    conv_backward_with_weights(layer, x, grad_out, layer.weights.data())
}

pub fn conv_backward_with_weights<T: Scalar>(
    layer: &ConvLayer<T>,
    x: &Tensor4<T>,
    grad_out: &Tensor4<T>,
    weights: &[T],
) -> Result<(Tensor4<T>, ConvGrads<T>)> {
    check_input(layer, x, "conv_backward")?;
    let (n, in_ch, h, w) = x.dims();
    let (out_ch, k, pad) = (layer.out_ch(), layer.k(), layer.pad());
    if grad_out.dims() != (n, out_ch, h, w) {
        return Err(Error::shape(
            "conv_backward",
            format!(
                "grad_out dims {:?}, expected {:?}",
                grad_out.dims(),
                (n, out_ch, h, w)
            ),
        ));
    }
    let plane = h * w;

    // grad wrt input: per (sample, input-channel) plane.
    let mut grad_x = Tensor4::zeros((n, in_ch, h, w))?;
    for_each_chunk(grad_x.data_mut(), plane, |idx, gx_plane| {
        let ni = idx / in_ch;
        let c = idx % in_ch;
        for o in 0..out_ch {
            let gplane = grad_out.plane(ni, o);
            let wbase = (o * in_ch + c) * k * k;
            for dy in 0..k {
                for dx in 0..k {
                    let wv = weights[wbase + dy * k + dx];
                    if wv == T::ZERO {
                        continue;
                    }
                    accumulate_shifted(
                        gx_plane,
                        gplane,
                        h,
                        w,
                        wv,
                        pad as isize - dy as isize,
                        pad as isize - dx as isize,
                    );
                }
            }
        }
    });

    // grad wrt weights: each output channel owns a disjoint slice; samples
    // are accumulated sequentially inside it, so results do not depend on
    // the parallel schedule.
    let mut grads = layer.zero_grads();
    let per_o = in_ch * k * k;
    for_each_chunk(grads.weights.data_mut(), per_o, |o, gw| {
        for c in 0..in_ch {
            for dy in 0..k {
                for dx in 0..k {
                    let mut acc = T::ZERO;
                    for ni in 0..n {
                        acc += dot_shifted(
                            grad_out.plane(ni, o),
                            x.plane(ni, c),
                            h,
                            w,
                            dy as isize - pad as isize,
                            dx as isize - pad as isize,
                        );
                    }
                    gw[c * k * k + dy * k + dx] = acc;
                }
            }
        }
    });

    for o in 0..out_ch {
        let mut acc = T::ZERO;
        for ni in 0..n {
            for &g in grad_out.plane(ni, o) {
                acc += g;
            }
        }
        grads.bias[o] = acc;
    }

    if let Some(mask) = &layer.mask {
        for (g, &m) in grads.weights.data_mut().iter_mut().zip(mask.iter()) {
            if m == 0 {
                *g = T::ZERO;
            }
        }
    }
    Ok((grad_x, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force oracle: materialize the zero-padded input, then sum with
    /// seven nested loops. Deliberately naive and independent of the
    /// sliced kernel above.
    fn conv_oracle(layer: &ConvLayer<f64>, x: &Tensor4<f64>) -> Tensor4<f64> {
        let (n, in_ch, h, w) = x.dims();
        let (out_ch, k, pad) = (layer.out_ch(), layer.k(), layer.pad());
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let mut padded = Tensor4::<f64>::zeros((n, in_ch, ph, pw)).unwrap();
        for ni in 0..n {
            for c in 0..in_ch {
                for y in 0..h {
                    for xx in 0..w {
                        *padded.at_mut(ni, c, y + pad, xx + pad) = x.at(ni, c, y, xx);
                    }
                }
            }
        }
        let mut out = Tensor4::<f64>::zeros((n, out_ch, h, w)).unwrap();
        for ni in 0..n {
            for o in 0..out_ch {
                for y in 0..h {
                    for xx in 0..w {
                        let mut acc = layer.bias[o];
                        for c in 0..in_ch {
                            for dy in 0..k {
                                for dx in 0..k {
                                    acc += layer.weights.at(o, c, dy, dx)
                                        * padded.at(ni, c, y + dy, xx + dx);
                                }
                            }
                        }
                        *out.at_mut(ni, o, y, xx) = acc;
                    }
                }
            }
        }
        out
    }

    fn random_input(dims: (usize, usize, usize, usize), seed: u64) -> Tensor4<f64> {
        Tensor4::gaussian(dims, 1.0, &mut SplitMix64::new(seed)).unwrap()
    }

    #[test]
    fn identity_one_by_one_kernel() {
        let mut layer = ConvLayer::<f64>::zeroed(1, 1, 1).unwrap();
        layer.weights.data_mut()[0] = 1.0;
        let x = random_input((2, 1, 4, 4), 3);
        let y = conv_forward(&layer, &x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn zero_weights_give_constant_bias() {
        let mut layer = ConvLayer::<f64>::zeroed(2, 3, 3).unwrap();
        layer.bias = vec![1.5, -2.0];
        let x = random_input((1, 3, 5, 5), 4);
        let y = conv_forward(&layer, &x).unwrap();
        for o in 0..2 {
            for v in y.plane(0, o) {
                assert_eq!(*v, layer.bias[o]);
            }
        }
    }

    #[test]
    fn ones_filter_on_ones_input_counts_window_overlap() {
        // 3x3 all-ones filter over a 3x3 all-ones input with zero padding:
        // center sees 9 cells, edge-centers 6, corners 4.
        let mut layer = ConvLayer::<f64>::zeroed(1, 1, 3).unwrap();
        layer.weights.data_mut().fill(1.0);
        let x = Tensor4::from_vec((1, 1, 3, 3), vec![1.0; 9]).unwrap();
        let y = conv_forward(&layer, &x).unwrap();
        let expected = [4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0];
        assert_eq!(y.data(), &expected);
        // And the independent oracle agrees.
        assert_eq!(conv_oracle(&layer, &x).data(), &expected);
    }

    #[test]
    fn forward_matches_oracle_on_random_cases() {
        for (seed, k, in_ch, out_ch) in [(1u64, 1, 2, 3), (2, 3, 3, 2), (3, 5, 2, 2), (4, 7, 1, 2)]
        {
            let mut rng = SplitMix64::new(seed);
            let layer = ConvLayer::<f64>::new(out_ch, in_ch, k, 0.5, &mut rng).unwrap();
            let x = random_input((2, in_ch, 8, 6), seed + 100);
            let got = conv_forward(&layer, &x).unwrap();
            let want = conv_oracle(&layer, &x);
            for (a, b) in got.iter().zip(want.iter()) {
                assert!((a - b).abs() < 1e-12, "k={k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let layer = ConvLayer::<f64>::zeroed(1, 2, 3).unwrap();
        let x = Tensor4::<f64>::zeros((1, 3, 4, 4)).unwrap();
        assert!(conv_forward(&layer, &x).is_err());
    }

    #[test]
    fn even_filter_size_rejected() {
        assert!(ConvLayer::<f32>::zeroed(1, 1, 4).is_err());
        assert!(ConvLayer::<f32>::zeroed(1, 1, 0).is_err());
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let mut rng = SplitMix64::new(5);
        let layer = ConvLayer::<f64>::new(2, 2, 3, 0.5, &mut rng).unwrap();
        let x = random_input((2, 2, 4, 4), 6);
        let gout = Tensor4::<f64>::zeros((2, 2, 4, 4)).unwrap();
        let (gx, grads) = conv_backward(&layer, &x, &gout).unwrap();
        assert!(gx.iter().all(|&v| v == 0.0));
        assert!(grads.weights.iter().all(|&v| v == 0.0));
        assert!(grads.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_kernel_passes_grad_through() {
        let mut layer = ConvLayer::<f64>::zeroed(1, 1, 1).unwrap();
        layer.weights.data_mut()[0] = 1.0;
        let x = random_input((1, 1, 3, 3), 7);
        let gout = random_input((1, 1, 3, 3), 8);
        let (gx, _) = conv_backward(&layer, &x, &gout).unwrap();
        assert_eq!(gx.data(), gout.data());
    }

    #[test]
    fn backward_matches_finite_differences() {
        // Central differences on a random 5x5 case in f64; the loss is a
        // fixed random projection of the output.
        let mut rng = SplitMix64::new(9);
        let layer = ConvLayer::<f64>::new(2, 2, 5, 0.5, &mut rng).unwrap();
        let x = random_input((2, 2, 6, 6), 10);
        let proj = random_input((2, 2, 6, 6), 11);
        let loss = |l: &ConvLayer<f64>, xt: &Tensor4<f64>| -> f64 {
            conv_forward(l, xt)
                .unwrap()
                .iter()
                .zip(proj.iter())
                .map(|(a, b)| a * b)
                .sum()
        };
        let (gx, grads) = conv_backward(&layer, &x, &proj).unwrap();
        let h = 1e-5;
        // weights
        for i in 0..layer.weights.len() {
            let mut lp = layer.clone();
            lp.weights.data_mut()[i] += h;
            let mut lm = layer.clone();
            lm.weights.data_mut()[i] -= h;
            let fd = (loss(&lp, &x) - loss(&lm, &x)) / (2.0 * h);
            let an = grads.weights.data()[i];
            let denom = an.abs().max(fd.abs()).max(1e-8);
            assert!(((an - fd) / denom).abs() < 1e-6, "w[{i}]: {an} vs {fd}");
        }
        // bias
        for i in 0..layer.bias.len() {
            let mut lp = layer.clone();
            lp.bias[i] += h;
            let mut lm = layer.clone();
            lm.bias[i] -= h;
            let fd = (loss(&lp, &x) - loss(&lm, &x)) / (2.0 * h);
            let an = grads.bias[i];
            assert!(((an - fd) / an.abs().max(fd.abs()).max(1e-8)).abs() < 1e-6);
        }
        // input
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (loss(&layer, &xp) - loss(&layer, &xm)) / (2.0 * h);
            let an = gx.data()[i];
            assert!(((an - fd) / an.abs().max(fd.abs()).max(1e-8)).abs() < 1e-6);
        }
    }

    #[test]
    fn masked_positions_have_zero_grad_and_zero_weight() {
        let mut rng = SplitMix64::new(12);
        let mut layer = ConvLayer::<f64>::new(2, 1, 3, 0.5, &mut rng).unwrap();
        // keep only the center position
        let pattern = vec![0, 0, 0, 0, 1, 0, 0, 0, 0];
        layer.set_spatial_mask(&pattern).unwrap();
        for (i, &w) in layer.weights.iter().enumerate() {
            if pattern[i % 9] == 0 {
                assert_eq!(w, 0.0);
            }
        }
        let x = random_input((1, 1, 4, 4), 13);
        let gout = random_input((1, 2, 4, 4), 14);
        let (_, grads) = conv_backward(&layer, &x, &gout).unwrap();
        for (i, &g) in grads.weights.iter().enumerate() {
            if pattern[i % 9] == 0 {
                assert_eq!(g, 0.0);
            } else {
                assert!(g != 0.0);
            }
        }
    }
}
