//! Pooling: 3x3 max pooling (stride 1 inside modules, stride 2 between
//! blocks) and global average pooling for the network head.
//!
//! Max pooling pads with zeros, and the padding zeros take part in the max,
//! so an all-negative window produces 0 (and drops its gradient). Window
//! positions are scanned in row-major order and ties keep the first winner.

use crate::error::{Error, Result};
use crate::parallel::{for_each_chunk, for_each_chunk2};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Flat index (within the input plane) of each output element's winner;
/// `PAD_WON` means a padding zero won and no gradient flows.
pub const PAD_WON: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct PoolCache {
    pub src_index: Vec<u32>,
    pub in_dims: (usize, usize, usize, usize),
    pub stride: usize,
}

/// Output spatial size of a 3x3/pad-1 pool: equal at stride 1,
/// ceil(dim / 2) at stride 2.
pub fn pooled_size(dim: usize, stride: usize) -> usize {
    match stride {
        1 => dim,
        2 => dim.div_ceil(2),
        _ => unreachable!("only strides 1 and 2 are used"),
    }
}

pub fn maxpool3_forward<T: Scalar>(
    x: &Tensor4<T>,
    stride: usize,
) -> Result<(Tensor4<T>, PoolCache)> {
    if stride != 1 && stride != 2 {
        return Err(Error::arg(
            "maxpool3_forward",
            format!("stride must be 1 or 2, got {stride}"),
        ));
    }
    let (n, c, h, w) = x.dims();
    let (oh, ow) = (pooled_size(h, stride), pooled_size(w, stride));
    let mut out = Tensor4::zeros((n, c, oh, ow))?;
    let mut src_index = vec![0u32; out.len()];
    let out_plane = oh * ow;

    for_each_chunk2(out.data_mut(), &mut src_index, out_plane, |idx, ov, sv| {
        let ni = idx / c;
        let ch = idx % c;
        let xplane = x.plane(ni, ch);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::ZERO; // the padding value
                let mut best_src = PAD_WON;
                let mut first = true;
                for dy in 0..3usize {
                    let y = (oy * stride + dy) as isize - 1;
                    for dx in 0..3usize {
                        let xx = (ox * stride + dx) as isize - 1;
                        let (v, src) = if y >= 0 && (y as usize) < h && xx >= 0 && (xx as usize) < w
                        {
                            let flat = y as usize * w + xx as usize;
                            (xplane[flat], flat as u32)
                        } else {
                            (T::ZERO, PAD_WON)
                        };
                        if first || v > best {
                            best = v;
                            best_src = src;
                            first = false;
                        }
                    }
                }
                ov[oy * ow + ox] = best;
                sv[oy * ow + ox] = best_src;
            }
        }
    });

    Ok((
        out,
        PoolCache {
            src_index,
            in_dims: (n, c, h, w),
            stride,
        },
    ))
}

pub fn maxpool3_backward<T: Scalar>(cache: &PoolCache, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    let (n, c, h, w) = cache.in_dims;
    let (oh, ow) = (pooled_size(h, cache.stride), pooled_size(w, cache.stride));
    if grad_out.dims() != (n, c, oh, ow) {
        return Err(Error::shape(
            "maxpool3_backward",
            format!("grad_out dims {:?}, expected {:?}", grad_out.dims(), (n, c, oh, ow)),
        ));
    }
    let mut grad_x = Tensor4::zeros((n, c, h, w))?;
    let in_plane = h * w;
    let out_plane = oh * ow;
    for_each_chunk(grad_x.data_mut(), in_plane, |idx, gx_plane| {
        let base = idx * out_plane;
        let srcs = &cache.src_index[base..base + out_plane];
        let gouts = &grad_out.data()[base..base + out_plane];
        for (&src, &g) in srcs.iter().zip(gouts.iter()) {
            if src != PAD_WON {
                gx_plane[src as usize] += g;
            }
        }
    });
    Ok(grad_x)
}

/// Per-channel spatial mean: (n, c, h, w) -> (n, c, 1, 1).
pub fn global_avg_pool<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let (n, c, h, w) = x.dims();
    let mut out = Tensor4::zeros((n, c, 1, 1)).expect("valid dims");
    let inv = T::ONE / T::from_usize(h * w);
    for ni in 0..n {
        for ch in 0..c {
            let mut acc = T::ZERO;
            for &v in x.plane(ni, ch) {
                acc += v;
            }
            *out.at_mut(ni, ch, 0, 0) = acc * inv;
        }
    }
    out
}

pub fn global_avg_pool_backward<T: Scalar>(
    in_dims: (usize, usize, usize, usize),
    grad_out: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    let (n, c, h, w) = in_dims;
    if grad_out.dims() != (n, c, 1, 1) {
        return Err(Error::shape(
            "global_avg_pool_backward",
            format!("grad_out dims {:?}, expected {:?}", grad_out.dims(), (n, c, 1, 1)),
        ));
    }
    let mut grad_x = Tensor4::zeros(in_dims)?;
    let inv = T::ONE / T::from_usize(h * w);
    for ni in 0..n {
        for ch in 0..c {
            let g = grad_out.at(ni, ch, 0, 0) * inv;
            for v in grad_x.plane_mut(ni, ch) {
                *v = g;
            }
        }
    }
    Ok(grad_x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    /// Nested-loop oracle over an explicitly padded plane.
    fn pool_oracle(x: &Tensor4<f64>, stride: usize) -> Tensor4<f64> {
        let (n, c, h, w) = x.dims();
        let (oh, ow) = (pooled_size(h, stride), pooled_size(w, stride));
        let mut out = Tensor4::zeros((n, c, oh, ow)).unwrap();
        for ni in 0..n {
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut vals = Vec::new();
                        for dy in 0..3isize {
                            for dx in 0..3isize {
                                let y = oy as isize * stride as isize + dy - 1;
                                let xx = ox as isize * stride as isize + dx - 1;
                                if y >= 0 && y < h as isize && xx >= 0 && xx < w as isize {
                                    vals.push(x.at(ni, ch, y as usize, xx as usize));
                                } else {
                                    vals.push(0.0);
                                }
                            }
                        }
                        *out.at_mut(ni, ch, oy, ox) =
                            vals.into_iter().fold(f64::NEG_INFINITY, f64::max);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn positive_constant_is_preserved_at_stride_1() {
        let x = Tensor4::from_vec((1, 1, 4, 4), vec![2.5; 16]).unwrap();
        let (y, _) = maxpool3_forward(&x, 1).unwrap();
        assert!(y.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn central_peak_floods_a_3x3_input() {
        let mut x = Tensor4::<f64>::zeros((1, 1, 3, 3)).unwrap();
        *x.at_mut(0, 0, 1, 1) = 9.0;
        let (y, _) = maxpool3_forward(&x, 1).unwrap();
        assert!(y.iter().all(|&v| v == 9.0));
    }

    #[test]
    fn matches_oracle_on_random_input() {
        let mut rng = SplitMix64::new(19);
        let x = Tensor4::gaussian((2, 3, 8, 8), 1.0, &mut rng).unwrap();
        for stride in [1, 2] {
            let (y, _) = maxpool3_forward(&x, stride).unwrap();
            let want = pool_oracle(&x, stride);
            assert_eq!(y.dims(), want.dims());
            for (a, b) in y.iter().zip(want.iter()) {
                assert_eq!(a, b);
            }
        }
        // odd sizes downsample with ceil division
        let x = Tensor4::<f64>::gaussian((1, 1, 7, 5), 1.0, &mut rng).unwrap();
        let (y, _) = maxpool3_forward(&x, 2).unwrap();
        assert_eq!(y.dims(), (1, 1, 4, 3));
    }

    #[test]
    fn backward_routes_to_argmax() {
        let x = Tensor4::from_vec(
            (1, 1, 3, 3),
            vec![0.1, 0.2, 0.3, 0.4, 5.0, 0.6, 0.7, 0.8, 0.9],
        )
        .unwrap();
        let (_, cache) = maxpool3_forward(&x, 1).unwrap();
        let gout = Tensor4::from_vec((1, 1, 3, 3), vec![1.0; 9]).unwrap();
        let gx = maxpool3_backward::<f64>(&cache, &gout).unwrap();
        // 5.0 at the center wins every window.
        assert_eq!(gx.at(0, 0, 1, 1), 9.0);
        assert_eq!(gx.iter().sum::<f64>(), 9.0);
    }

    #[test]
    fn all_negative_window_loses_to_padding() {
        let x = Tensor4::from_vec((1, 1, 2, 2), vec![-1.0, -2.0, -3.0, -4.0]).unwrap();
        let (y, cache) = maxpool3_forward(&x, 1).unwrap();
        // Every 3x3 window includes a padding zero.
        assert!(y.iter().all(|&v| v == 0.0));
        assert!(cache.src_index.iter().all(|&s| s == PAD_WON));
        let gout = Tensor4::from_vec((1, 1, 2, 2), vec![1.0; 4]).unwrap();
        let gx = maxpool3_backward::<f64>(&cache, &gout).unwrap();
        assert!(gx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tie_prefers_first_in_scan_order() {
        // Two equal maxima: the window scan (row-major over dy, dx) must
        // keep the first one it sees.
        let x = Tensor4::from_vec(
            (1, 1, 3, 3),
            vec![7.0, 0.0, 7.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        )
        .unwrap();
        let (_, cache) = maxpool3_forward(&x, 1).unwrap();
        // Output (1,1) covers the whole input; both corners hold 7.0.
        assert_eq!(cache.src_index[1 * 3 + 1], 0);
    }

    #[test]
    fn pool_backward_matches_finite_differences() {
        let mut rng = SplitMix64::new(20);
        let x = Tensor4::gaussian((1, 2, 5, 5), 1.0, &mut rng).unwrap();
        for stride in [1usize, 2] {
            let (y0, cache) = maxpool3_forward(&x, stride).unwrap();
            let proj = Tensor4::gaussian(y0.dims(), 1.0, &mut rng).unwrap();
            let gx = maxpool3_backward::<f64>(&cache, &proj).unwrap();
            let h = 1e-6;
            for i in 0..x.len() {
                let mut xp = x.clone();
                xp.data_mut()[i] += h;
                let mut xm = x.clone();
                xm.data_mut()[i] -= h;
                let (yp, _) = maxpool3_forward(&xp, stride).unwrap();
                let (ym, _) = maxpool3_forward(&xm, stride).unwrap();
                let lp: f64 = yp.iter().zip(proj.iter()).map(|(a, b)| a * b).sum();
                let lm: f64 = ym.iter().zip(proj.iter()).map(|(a, b)| a * b).sum();
                let fd = (lp - lm) / (2.0 * h);
                let an = gx.data()[i];
                assert!(
                    (an - fd).abs() < 1e-6,
                    "stride {stride}, x[{i}]: {an} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn gap_examples_and_oracle() {
        let x = Tensor4::from_vec((1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = global_avg_pool(&x);
        assert_eq!(y.dims(), (1, 1, 1, 1));
        assert!((y.data()[0] - 2.5).abs() < 1e-12);

        let c = Tensor4::from_vec((1, 1, 3, 3), vec![0.7; 9]).unwrap();
        assert!((global_avg_pool(&c).data()[0] - 0.7).abs() < 1e-12);

        let mut rng = SplitMix64::new(21);
        let x = Tensor4::gaussian((2, 3, 4, 5), 1.0, &mut rng).unwrap();
        let y = global_avg_pool(&x);
        for ni in 0..2 {
            for ch in 0..3 {
                let want: f64 = x.plane(ni, ch).iter().sum::<f64>() / 20.0;
                assert!((y.at(ni, ch, 0, 0) - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn gap_backward_spreads_gradient() {
        let gout = Tensor4::from_vec((1, 2, 1, 1), vec![4.0, -8.0]).unwrap();
        let gx = global_avg_pool_backward((1, 2, 2, 2), &gout).unwrap();
        assert!(gx.plane(0, 0).iter().all(|&v| v == 1.0));
        assert!(gx.plane(0, 1).iter().all(|&v| v == -2.0));
    }
}
