//! Periodized orthogonal Daubechies-4 wavelet transform in 2D.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::types::C64;

/// Daubechies-4 scaling filter (8 taps, 4 vanishing moments).
pub const DB4: [f64; 8] = [
    0.230_377_813_308_855_23,
    0.714_846_570_552_541_5,
    0.630_880_767_929_590_4,
    -0.027_983_769_416_983_85,
    -0.187_034_811_718_881_14,
    0.030_841_381_835_986_965,
    0.032_883_011_666_982_945,
    -0.010_597_401_784_997_278,
];

fn high_pass() -> [f64; 8] {
    let mut g = [0.0; 8];
    for k in 0..8 {
        let s = if k % 2 == 0 { 1.0 } else { -1.0 };
        g[k] = s * DB4[7 - k];
    }
    g
}

fn analyze(x: &[C64], out: &mut [C64]) {
    let n = x.len();
    let half = n / 2;
    let g = high_pass();
    for i in 0..half {
        let (mut a, mut d) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
        for k in 0..8 {
            let v = x[(2 * i + k) % n];
            a += v * DB4[k];
            d += v * g[k];
        }
        out[i] = a;
        out[half + i] = d;
    }
}

fn synthesize(c: &[C64], out: &mut [C64]) {
    let n = c.len();
    let half = n / 2;
    let g = high_pass();
    out.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
    for i in 0..half {
        for k in 0..8 {
            out[(2 * i + k) % n] += c[i] * DB4[k] + c[half + i] * g[k];
        }
    }
}

fn check(rows: usize, cols: usize, levels: usize) -> Result<()> {
    let block = 1usize << levels;
    if levels == 0 || !rows.is_multiple_of(block) || !cols.is_multiple_of(block) {
        return Err(Error::InvalidConfig(format!(
            "{rows}x{cols} image is not divisible by 2^{levels}"
        )));
    }
    Ok(())
}

fn apply_2d(x: &mut Array2<C64>, rows: usize, cols: usize, f: fn(&[C64], &mut [C64])) {
    let mut buf = vec![C64::new(0.0, 0.0); rows.max(cols)];
    let mut out = buf.clone();
    for r in 0..rows {
        for c in 0..cols {
            buf[c] = x[[r, c]];
        }
        f(&buf[..cols], &mut out[..cols]);
        for c in 0..cols {
            x[[r, c]] = out[c];
        }
    }
    for c in 0..cols {
        for r in 0..rows {
            buf[r] = x[[r, c]];
        }
        f(&buf[..rows], &mut out[..rows]);
        for r in 0..rows {
            x[[r, c]] = out[r];
        }
    }
}

/// Multi-level forward transform; the coarsest approximation ends up in the
/// top-left corner.
pub fn forward(image: &Array2<C64>, levels: usize) -> Result<Array2<C64>> {
    let (rows, cols) = image.dim();
    check(rows, cols, levels)?;
    let mut x = image.clone();
    for l in 0..levels {
        apply_2d(&mut x, rows >> l, cols >> l, analyze);
    }
    Ok(x)
}

pub fn inverse(coeffs: &Array2<C64>, levels: usize) -> Result<Array2<C64>> {
    let (rows, cols) = coeffs.dim();
    check(rows, cols, levels)?;
    let mut x = coeffs.clone();
    for l in (0..levels).rev() {
        let (r, c) = (rows >> l, cols >> l);
        // columns were transformed last, so undo them first
        let mut buf = vec![C64::new(0.0, 0.0); r.max(c)];
        let mut out = buf.clone();
        for j in 0..c {
            for i in 0..r {
                buf[i] = x[[i, j]];
            }
            synthesize(&buf[..r], &mut out[..r]);
            for i in 0..r {
                x[[i, j]] = out[i];
            }
        }
        for i in 0..r {
            for j in 0..c {
                buf[j] = x[[i, j]];
            }
            synthesize(&buf[..c], &mut out[..c]);
            for j in 0..c {
                x[[i, j]] = out[j];
            }
        }
    }
    Ok(x)
}

/// Complex soft threshold `v * max(0, 1 - t/|v|)`.
pub fn soft_threshold(v: C64, t: f64) -> C64 {
    let m = v.norm();
    if m <= t {
        C64::new(0.0, 0.0)
    } else {
        v * ((m - t) / m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| {
            C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        })
    }

    fn norm(a: &Array2<C64>) -> f64 {
        a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    #[test]
    fn filter_is_orthonormal() {
        let g = high_pass();
        for shift in 0..4 {
            let hh: f64 = (0..8 - 2 * shift).map(|k| DB4[k] * DB4[k + 2 * shift]).sum();
            let hg: f64 = (0..8 - 2 * shift).map(|k| DB4[k] * g[k + 2 * shift]).sum();
            assert!((hh - if shift == 0 { 1.0 } else { 0.0 }).abs() < 1e-12, "{shift} {hh}");
            assert!(hg.abs() < 1e-12);
        }
        let dc: f64 = DB4.iter().sum();
        assert!((dc - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn isometry_and_perfect_reconstruction() {
        for (i, &(r, c, l)) in [(64, 64, 3), (32, 16, 2), (8, 8, 3), (128, 128, 3)].iter().enumerate() {
            let x = random(r, c, i as u64);
            let w = forward(&x, l).unwrap();
            assert!((norm(&w) - norm(&x)).abs() < 1e-9 * norm(&x));
            let back = inverse(&w, l).unwrap();
            let err = norm(&(&back - &x));
            assert!(err < 1e-10 * norm(&x), "{err}");
        }
    }

    #[test]
    fn constant_image_compacts_to_approximation() {
        let x = Array2::from_elem((32, 32), C64::new(1.0, 0.0));
        let w = forward(&x, 3).unwrap();
        let approx: f64 = w.slice(ndarray::s![..4, ..4]).iter().map(|v| v.norm_sqr()).sum();
        assert!((approx - 1024.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_indivisible_sizes() {
        let x = Array2::zeros((12, 12));
        assert!(forward(&x, 3).is_err());
        assert!(inverse(&x, 0).is_err());
    }

    #[test]
    fn soft_threshold_shrinks_magnitude() {
        let v = C64::new(3.0, 4.0);
        assert_eq!(soft_threshold(v, 6.0), C64::new(0.0, 0.0));
        let s = soft_threshold(v, 1.0);
        assert!((s.norm() - 4.0).abs() < 1e-12);
        assert!((s.arg() - v.arg()).abs() < 1e-12);
    }
}
