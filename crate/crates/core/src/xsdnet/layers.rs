//! Layer primitives on `[C, H, W]` feature maps. Every function takes the
//! layer name so shape errors can point at it.

use rayon::prelude::*;

use super::tensor::Tensor;
use crate::error::{Error, Result};

fn feature_map(layer: &str, x: &Tensor) -> Result<(usize, usize, usize)> {
    x.chw().ok_or_else(|| {
        Error::layer(
            layer,
            format!("expected a [C, H, W] feature map, got shape {:?}", x.shape),
        )
    })
}

fn expect_shape(layer: &str, what: &str, t: &Tensor, shape: &[usize]) -> Result<()> {
    if t.shape != shape {
        return Err(Error::layer(
            layer,
            format!("{what} has shape {:?}, expected {:?}", t.shape, shape),
        ));
    }
    Ok(())
}

/// Zero-padded 2D cross-correlation. `weight` is `[out, in, k, k]`.
pub fn conv2d(layer: &str, x: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (c_in, h, w) = feature_map(layer, x)?;
    let [c_out, wc_in, k, k2] = weight.shape[..] else {
        return Err(Error::layer(
            layer,
            format!("weight must be 4D, got {:?}", weight.shape),
        ));
    };
    if wc_in != c_in || k != k2 || k == 0 {
        return Err(Error::layer(
            layer,
            format!("weight {:?} does not fit a {c_in}-channel input", weight.shape),
        ));
    }
    expect_shape(layer, "bias", bias, &[c_out])?;
    if stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
        return Err(Error::layer(
            layer,
            format!("kernel {k} with pad {pad} does not fit {h}x{w}"),
        ));
    }
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0f32; c_out * ho * wo];
    out.par_chunks_mut(ho * wo).enumerate().for_each(|(o, plane)| {
        plane.iter_mut().for_each(|v| *v = bias.data[o]);
        for i in 0..c_in {
            let src = x.channel(i);
            for ky in 0..k {
                for kx in 0..k {
                    let wv = weight.data[((o * c_in + i) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    // output columns whose input column lies inside the image
                    let x_lo = pad.saturating_sub(kx).div_ceil(stride);
                    let x_hi = ((w + pad).saturating_sub(kx)).div_ceil(stride).min(wo);
                    if x_lo >= x_hi {
                        continue;
                    }
                    for yo in 0..ho {
                        let iy = (yo * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &src[iy as usize * w..(iy as usize + 1) * w];
                        let dst = &mut plane[yo * wo..(yo + 1) * wo];
                        let start = x_lo * stride + kx - pad;
                        if stride == 1 {
                            for (d, s) in dst[x_lo..x_hi].iter_mut().zip(&row[start..]) {
                                *d += wv * s;
                            }
                        } else {
                            for (j, d) in dst[x_lo..x_hi].iter_mut().enumerate() {
                                *d += wv * row[start + j * stride];
                            }
                        }
                    }
                }
            }
        }
    });
    Tensor::new(vec![c_out, ho, wo], out)
}

pub const BATCHNORM_EPS: f32 = 1e-5;

/// Inference batch normalization with running statistics.
pub fn batchnorm(
    layer: &str,
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mean: &Tensor,
    var: &Tensor,
    eps: f32,
) -> Result<Tensor> {
    let (c, _, _) = feature_map(layer, x)?;
    for (name, t) in [("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)] {
        expect_shape(layer, name, t, &[c])?;
    }
    let mut out = x.clone();
    for ch in 0..c {
        let scale = gamma.data[ch] / (var.data[ch] + eps).sqrt();
        let shift = beta.data[ch] - mean.data[ch] * scale;
        out.channel_mut(ch).iter_mut().for_each(|v| *v = *v * scale + shift);
    }
    Ok(out)
}

pub const LEAKY_SLOPE: f32 = 0.01;

pub fn leaky_relu(x: &Tensor, slope: f32) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| if v >= 0.0 { v } else { slope * v }).collect(),
    }
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
pub fn maxpool2(layer: &str, x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = feature_map(layer, x)?;
    let (ho, wo) = (h / 2, w / 2);
    if ho == 0 || wo == 0 {
        return Err(Error::layer(layer, format!("cannot pool a {h}x{w} map")));
    }
    let mut out = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        let s = x.channel(ch);
        for y in 0..ho {
            for xx in 0..wo {
                let i = 2 * y * w + 2 * xx;
                out.push(s[i].max(s[i + 1]).max(s[i + w]).max(s[i + w + 1]));
            }
        }
    }
    Tensor::new(vec![c, ho, wo], out)
}

pub fn upsample_nearest2(layer: &str, x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = feature_map(layer, x)?;
    let mut out = Vec::with_capacity(c * 4 * h * w);
    for ch in 0..c {
        let s = x.channel(ch);
        for y in 0..2 * h {
            for xx in 0..2 * w {
                out.push(s[(y / 2) * w + xx / 2]);
            }
        }
    }
    Tensor::new(vec![c, 2 * h, 2 * w], out)
}

pub fn concat_channels(layer: &str, parts: &[&Tensor]) -> Result<Tensor> {
    let mut hw = None;
    let mut channels = 0;
    for p in parts {
        let (c, h, w) = feature_map(layer, p)?;
        if *hw.get_or_insert((h, w)) != (h, w) {
            return Err(Error::layer(
                layer,
                format!("cannot concatenate {h}x{w} with {:?}", hw.expect("set above")),
            ));
        }
        channels += c;
    }
    let (h, w) = hw.ok_or_else(|| Error::layer(layer, "nothing to concatenate"))?;
    let data = parts.iter().flat_map(|p| p.data.iter().copied()).collect();
    Tensor::new(vec![channels, h, w], data)
}

/// Softmax over the channel axis at every pixel.
pub fn softmax_channels(layer: &str, x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = feature_map(layer, x)?;
    let n = h * w;
    let mut out = x.clone();
    for p in 0..n {
        let m = (0..c).map(|ch| x.data[ch * n + p]).fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f64;
        for ch in 0..c {
            let e = ((x.data[ch * n + p] - m) as f64).exp();
            out.data[ch * n + p] = e as f32;
            sum += e;
        }
        for ch in 0..c {
            out.data[ch * n + p] = (out.data[ch * n + p] as f64 / sum) as f32;
        }
    }
    Ok(out)
}

/// 1 where `x > threshold`, else 0.
pub fn binarize(x: &Tensor, threshold: f32) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| if v > threshold { 1.0 } else { 0.0 }).collect(),
    }
}

/// Affine map of a vector: `weight` is `[out, in]`.
pub fn linear(layer: &str, z: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [n_out, n_in] = weight.shape[..] else {
        return Err(Error::layer(
            layer,
            format!("weight must be 2D, got {:?}", weight.shape),
        ));
    };
    expect_shape(layer, "input", z, &[n_in])?;
    expect_shape(layer, "bias", bias, &[n_out])?;
    let data = (0..n_out)
        .map(|o| {
            let row = &weight.data[o * n_in..(o + 1) * n_in];
            bias.data[o] + row.iter().zip(&z.data).map(|(a, b)| a * b).sum::<f32>()
        })
        .collect();
    Tensor::new(vec![n_out], data)
}

pub fn global_avg_pool(layer: &str, x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = feature_map(layer, x)?;
    let n = (h * w) as f64;
    let data = (0..c)
        .map(|ch| (x.channel(ch).iter().map(|&v| v as f64).sum::<f64>() / n) as f32)
        .collect();
    Tensor::new(vec![c], data)
}

/// FiLM: `gamma(z) * x + beta(z)` per channel, with `gamma` and `beta`
/// affine in the modality vector `z`.
pub fn film_modulate(
    layer: &str,
    x: &Tensor,
    z: &Tensor,
    gamma_weight: &Tensor,
    gamma_bias: &Tensor,
    beta_weight: &Tensor,
    beta_bias: &Tensor,
) -> Result<Tensor> {
    let (c, _, _) = feature_map(layer, x)?;
    let gamma = linear(layer, z, gamma_weight, gamma_bias)?;
    let beta = linear(layer, z, beta_weight, beta_bias)?;
    if gamma.len() != c || beta.len() != c {
        return Err(Error::layer(
            layer,
            format!("modulation has {} channels, feature map has {c}", gamma.len()),
        ));
    }
    let mut out = x.clone();
    for ch in 0..c {
        let (g, b) = (gamma.data[ch], beta.data[ch]);
        out.channel_mut(ch).iter_mut().for_each(|v| *v = g * *v + b);
    }
    Ok(out)
}

/// Reflect padding (no edge repeat) on the bottom and right edges.
pub fn reflect_pad(layer: &str, x: &Tensor, bottom: usize, right: usize) -> Result<Tensor> {
    let (c, h, w) = feature_map(layer, x)?;
    if bottom >= h || right >= w {
        return Err(Error::layer(
            layer,
            format!("cannot reflect-pad {h}x{w} by {bottom}x{right}"),
        ));
    }
    let (hn, wn) = (h + bottom, w + right);
    let reflect = |i: usize, n: usize| if i < n { i } else { 2 * (n - 1) - i };
    let mut out = Vec::with_capacity(c * hn * wn);
    for ch in 0..c {
        let s = x.channel(ch);
        for y in 0..hn {
            for xx in 0..wn {
                out.push(s[reflect(y, h) * w + reflect(xx, w)]);
            }
        }
    }
    Tensor::new(vec![c, hn, wn], out)
}

/// Top-left `height x width` window of every channel.
pub fn crop(layer: &str, x: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (c, h, w) = feature_map(layer, x)?;
    if height > h || width > w {
        return Err(Error::layer(layer, format!("cannot crop {h}x{w} to {height}x{width}")));
    }
    let mut out = Vec::with_capacity(c * height * width);
    for ch in 0..c {
        let s = x.channel(ch);
        for y in 0..height {
            out.extend_from_slice(&s[y * w..y * w + width]);
        }
    }
    Tensor::new(vec![c, height, width], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Vec<usize>, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect()).unwrap()
    }

    fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
        let (ci, h, wd) = x.chw().unwrap();
        let (co, k) = (w.shape[0], w.shape[2]);
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0f32; co * ho * wo];
        for o in 0..co {
            for y in 0..ho {
                for xx in 0..wo {
                    let mut acc = b.data[o] as f64;
                    for i in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += w.data[((o * ci + i) * k + ky) * k + kx] as f64
                                        * x.data[(i * h + iy as usize) * wd + ix as usize] as f64;
                                }
                            }
                        }
                    }
                    out[(o * ho + y) * wo + xx] = acc as f32;
                }
            }
        }
        Tensor::new(vec![co, ho, wo], out).unwrap()
    }

    #[test]
    fn conv_matches_nested_loops() {
        let x = random(vec![4, 9, 9], 1);
        for (k, stride, pad) in [(3, 1, 1), (3, 2, 1), (1, 1, 0), (5, 1, 2), (3, 1, 0), (4, 2, 1)] {
            let w = random(vec![5, 4, k, k], 2 + k as u64);
            let b = random(vec![5], 3);
            let fast = conv2d("c", &x, &w, &b, stride, pad).unwrap();
            let slow = naive_conv(&x, &w, &b, stride, pad);
            assert_eq!(fast.shape, slow.shape);
            assert!(fast.max_abs_diff(&slow) < 1e-5, "{k} {stride} {pad}");
        }
    }

    #[test]
    fn identity_kernel_is_a_no_op() {
        let x = random(vec![1, 7, 5], 4);
        let w = Tensor::filled(vec![1, 1, 1, 1], 1.0);
        let out = conv2d("id", &x, &w, &Tensor::zeros(vec![1]), 1, 0).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn conv_errors_name_the_layer() {
        let x = random(vec![2, 5, 5], 0);
        let w = random(vec![3, 4, 3, 3], 0);
        let err = conv2d("enc0", &x, &w, &Tensor::zeros(vec![3]), 1, 1).unwrap_err();
        assert!(err.to_string().contains("enc0"));
        let w = random(vec![3, 2, 3, 3], 0);
        assert!(conv2d("enc0", &x, &w, &Tensor::zeros(vec![2]), 1, 1).is_err());
    }

    #[test]
    fn batchnorm_matches_definition() {
        let x = random(vec![3, 4, 4], 5);
        let (g, b, m) = (random(vec![3], 6), random(vec![3], 7), random(vec![3], 8));
        let v = Tensor::new(vec![3], vec![0.5, 1.0, 2.0]).unwrap();
        let out = batchnorm("bn", &x, &g, &b, &m, &v, BATCHNORM_EPS).unwrap();
        for c in 0..3 {
            for p in 0..16 {
                let i = c * 16 + p;
                let want = (g.data[c] as f64) * (x.data[i] as f64 - m.data[c] as f64)
                    / (v.data[c] as f64 + 1e-5).sqrt()
                    + b.data[c] as f64;
                assert!((out.data[i] as f64 - want).abs() < 1e-5);
            }
        }
        assert!(batchnorm("bn", &x, &g, &b, &m, &random(vec![2], 0), 1e-5).is_err());
    }

    #[test]
    fn leaky_relu_slope() {
        let x = Tensor::new(vec![4], vec![-2.0, -0.0, 0.5, 3.0]).unwrap();
        assert_eq!(leaky_relu(&x, 0.01).data, vec![-0.02, 0.0, 0.5, 3.0]);
    }

    #[test]
    fn pooling_and_upsampling() {
        let x = random(vec![2, 6, 4], 9);
        let p = maxpool2("p", &x).unwrap();
        assert_eq!(p.shape, vec![2, 3, 2]);
        for c in 0..2 {
            for y in 0..3 {
                for xx in 0..2 {
                    let mut m = f32::MIN;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            m = m.max(x.data[(c * 6 + 2 * y + dy) * 4 + 2 * xx + dx]);
                        }
                    }
                    assert_eq!(p.data[(c * 3 + y) * 2 + xx], m);
                }
            }
        }
        let u = upsample_nearest2("u", &p).unwrap();
        assert_eq!(u.shape, vec![2, 6, 4]);
        assert_eq!(u.data[(6 + 5) * 4 + 3], p.data[(3 + 2) * 2 + 1]);
        assert_eq!(maxpool2("p", &u).unwrap(), p);
    }

    #[test]
    fn concat_stacks_channels() {
        let a = random(vec![1, 3, 3], 1);
        let b = random(vec![2, 3, 3], 2);
        let c = concat_channels("cat", &[&a, &b]).unwrap();
        assert_eq!(c.shape, vec![3, 3, 3]);
        assert_eq!(c.channel(2), b.channel(1));
        assert!(concat_channels("cat", &[&a, &random(vec![1, 2, 3], 0)]).is_err());
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut x = random(vec![4, 5, 5], 3);
        x.data[0] = 80.0;
        x.data[1] = -80.0;
        let s = softmax_channels("sm", &x).unwrap();
        for p in 0..25 {
            let sum: f64 = (0..4).map(|c| s.data[c * 25 + p] as f64).sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
        assert!(s.is_finite());
    }

    #[test]
    fn linear_and_film_match_definition() {
        let z = random(vec![8], 1);
        let (gw, gb, bw, bb) = (
            random(vec![3, 8], 2),
            random(vec![3], 3),
            random(vec![3, 8], 4),
            random(vec![3], 5),
        );
        let x = random(vec![3, 2, 2], 6);
        let out = film_modulate("film", &x, &z, &gw, &gb, &bw, &bb).unwrap();
        for c in 0..3 {
            let g: f64 = gb.data[c] as f64 + (0..8).map(|j| (gw.data[c * 8 + j] * z.data[j]) as f64).sum::<f64>();
            let b: f64 = bb.data[c] as f64 + (0..8).map(|j| (bw.data[c * 8 + j] * z.data[j]) as f64).sum::<f64>();
            for p in 0..4 {
                let want = g * x.data[c * 4 + p] as f64 + b;
                assert!((out.data[c * 4 + p] as f64 - want).abs() < 1e-5);
            }
        }
        assert!(film_modulate("film", &random(vec![2, 2, 2], 0), &z, &gw, &gb, &bw, &bb).is_err());
    }

    #[test]
    fn global_pool_is_channel_mean() {
        let x = random(vec![2, 3, 3], 8);
        let g = global_avg_pool("gap", &x).unwrap();
        let m: f32 = x.channel(1).iter().sum::<f32>() / 9.0;
        assert!((g.data[1] - m).abs() < 1e-6);
    }

    #[test]
    fn reflect_pad_then_crop_round_trips() {
        let x = random(vec![2, 5, 6], 1);
        let p = reflect_pad("pad", &x, 3, 2).unwrap();
        assert_eq!(p.shape, vec![2, 8, 8]);
        // row 5 mirrors row 3, column 6 mirrors column 4
        assert_eq!(p.data[5 * 8 + 1], x.data[3 * 6 + 1]);
        assert_eq!(p.data[8 + 6], x.data[6 + 4]);
        assert_eq!(crop("crop", &p, 5, 6).unwrap(), x);
        assert!(reflect_pad("pad", &x, 5, 0).is_err());
    }

    #[test]
    fn binarize_is_idempotent() {
        let x = random(vec![3, 4, 4], 2);
        let b = binarize(&x, 0.5);
        assert!(b.data.iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(binarize(&b, 0.5), b);
    }
}
