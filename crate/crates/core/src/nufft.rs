//! Non-uniform FFT by Kaiser-Bessel convolution gridding.
//!
//! Sign and index conventions: an `N x N` image `x[r, c]` is indexed about the
//! grid center, `m = (r - N/2, c - N/2)`, and a sample at `k = (kx, ky)`
//! (cycles/pixel) is
//!
//! ```text
//! y(k) = sum_m x[m] exp(-2 pi i (kx m_c + ky m_r))
//! ```
//!
//! The forward operator deapodizes, zero-pads onto an oversampled grid, takes
//! an FFT and interpolates with a separable Kaiser-Bessel kernel. The adjoint
//! runs the same steps transposed and is exact to machine precision.

use ndarray::{Array2, ArrayView2};
use num_complex::Complex32;
use rayon::prelude::*;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::types::C64;

/// Modified Bessel function of the first kind, order zero (power series).
pub fn bessel_i0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > 1e-17 * sum {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

/// Kaiser-Bessel kernel of width `width` (grid cells) and shape `beta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KaiserBessel {
    pub width: f64,
    pub beta: f64,
    norm: f64,
}

impl KaiserBessel {
    pub fn new(width: f64, beta: f64) -> Self {
        let mut kb = Self { width, beta, norm: 1.0 };
        kb.norm = kb.transform_unnormalized(0.0);
        kb
    }

    /// Standard shape parameter for a given oversampling ratio and width
    /// (Beatty, Nishimura and Pauly 2005).
    pub fn optimal_beta(oversampling: f64, width: f64) -> f64 {
        let a = width * width / (oversampling * oversampling) * (oversampling - 0.5).powi(2) - 0.8;
        PI * a.max(0.0).sqrt()
    }

    /// Kernel value at offset `t` in grid cells, normalized so that the
    /// kernel integrates to one.
    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        let u = 2.0 * t / self.width;
        if u.abs() > 1.0 {
            return 0.0;
        }
        bessel_i0(self.beta * (1.0 - u * u).sqrt()) / self.norm
    }

    fn transform_unnormalized(&self, xi: f64) -> f64 {
        let w = self.width;
        let a = self.beta * self.beta - (PI * w * xi).powi(2);
        if a > 1e-12 {
            let z = a.sqrt();
            w * z.sinh() / z
        } else if a < -1e-12 {
            let z = (-a).sqrt();
            w * z.sin() / z
        } else {
            w
        }
    }

    /// Continuous Fourier transform at `xi` cycles/cell, normalized to 1 at 0.
    pub fn transform(&self, xi: f64) -> f64 {
        self.transform_unnormalized(xi) / self.norm
    }
}

/// Precomputed interpolation geometry for one set of sample positions.
#[derive(Clone, Debug)]
pub struct GriddingPlan {
    grid_size: usize,
    oversampled: usize,
    oversampling: f64,
    kernel_width: usize,
    kernel: KaiserBessel,
    positions: Vec<[f64; 2]>,
    idx_x: Vec<u32>,
    idx_y: Vec<u32>,
    w_x: Vec<f64>,
    w_y: Vec<f64>,
    deapod: Vec<f64>,
    fft: Fft2,
}

pub const DEFAULT_OVERSAMPLING: f64 = 2.0;
pub const DEFAULT_KERNEL_WIDTH: usize = 6;

impl GriddingPlan {
    /// `positions` are `(kx, ky)` in cycles/pixel and must lie in
    /// `[-0.5, 0.5]`; `+0.5` is the same DFT frequency as `-0.5`.
    pub fn new(positions: &[[f64; 2]], grid_size: usize, oversampling: f64, kernel_width: usize) -> Result<Self> {
        if grid_size == 0 {
            return Err(Error::InvalidConfig("grid_size must be positive".into()));
        }
        if !(oversampling >= 1.25) {
            return Err(Error::InvalidConfig(format!("oversampling {oversampling} below 1.25")));
        }
        if kernel_width < 2 {
            return Err(Error::InvalidConfig(format!("kernel width {kernel_width} below 2")));
        }
        if let Some((index, p)) = positions
            .iter()
            .enumerate()
            .find(|(_, p)| !(p[0].abs() <= 0.5 && p[1].abs() <= 0.5))
        {
            return Err(Error::SampleOutOfBounds {
                index,
                kx: p[0],
                ky: p[1],
            });
        }

        let mut oversampled = (oversampling * grid_size as f64).ceil() as usize;
        oversampled += oversampled % 2;
        let ratio = oversampled as f64 / grid_size as f64;
        let width = kernel_width as f64;
        let kernel = KaiserBessel::new(width, KaiserBessel::optimal_beta(ratio, width));

        let n = positions.len();
        let mut idx_x = Vec::with_capacity(n * kernel_width);
        let mut idx_y = Vec::with_capacity(n * kernel_width);
        let mut w_x = Vec::with_capacity(n * kernel_width);
        let mut w_y = Vec::with_capacity(n * kernel_width);
        let g = oversampled as f64;
        for p in positions {
            for (k, idx, w) in [(p[0], &mut idx_x, &mut w_x), (p[1], &mut idx_y, &mut w_y)] {
                let s = k * g;
                let start = (s - width / 2.0).floor() as i64 + 1;
                for j in 0..kernel_width as i64 {
                    let u = start + j;
                    w.push(kernel.eval(s - u as f64));
                    idx.push(u.rem_euclid(oversampled as i64) as u32);
                }
            }
        }

        let half = (grid_size / 2) as f64;
        let profile: Vec<f64> = (0..grid_size)
            .map(|i| 1.0 / kernel.transform((i as f64 - half) / g))
            .collect();
        let mut deapod = Vec::with_capacity(grid_size * grid_size);
        for r in 0..grid_size {
            for c in 0..grid_size {
                deapod.push(profile[r] * profile[c]);
            }
        }

        Ok(Self {
            grid_size,
            oversampled,
            oversampling: ratio,
            kernel_width,
            kernel,
            positions: positions.to_vec(),
            idx_x,
            idx_y,
            w_x,
            w_y,
            deapod,
            fft: Fft2::new(oversampled, oversampled),
        })
    }

    /// Plan with the default oversampling (2) and kernel width (6).
    pub fn with_defaults(positions: &[[f64; 2]], grid_size: usize) -> Result<Self> {
        Self::new(positions, grid_size, DEFAULT_OVERSAMPLING, DEFAULT_KERNEL_WIDTH)
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn n_samples(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn oversampling(&self) -> f64 {
        self.oversampling
    }

    pub fn kernel(&self) -> &KaiserBessel {
        &self.kernel
    }

    pub fn kernel_width(&self) -> usize {
        self.kernel_width
    }

    /// Sum of the separable interpolation weights of one sample.
    pub fn weight_sum(&self, sample: usize) -> f64 {
        let w = self.kernel_width;
        let sx: f64 = self.w_x[sample * w..(sample + 1) * w].iter().sum();
        let sy: f64 = self.w_y[sample * w..(sample + 1) * w].iter().sum();
        sx * sy
    }

    #[inline]
    fn grid_index(&self, i: usize) -> usize {
        let half = self.grid_size / 2;
        (i + self.oversampled - half) % self.oversampled
    }

    fn check_image(&self, dim: (usize, usize)) -> Result<()> {
        if dim != (self.grid_size, self.grid_size) {
            return Err(Error::shape(
                "nufft image",
                format!("{0}x{0}", self.grid_size),
                format!("{}x{}", dim.0, dim.1),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, image: ArrayView2<'_, C64>) -> Result<Vec<C64>> {
        self.check_image(image.dim())?;
        let g = self.oversampled;
        let n = self.grid_size;
        let mut grid = vec![C64::new(0.0, 0.0); g * g];
        for r in 0..n {
            let gr = self.grid_index(r);
            for c in 0..n {
                grid[gr * g + self.grid_index(c)] = image[[r, c]] * self.deapod[r * n + c];
            }
        }
        self.fft.forward(&mut grid);

        let w = self.kernel_width;
        Ok((0..self.positions.len())
            .into_par_iter()
            .map(|j| {
                let ix = &self.idx_x[j * w..(j + 1) * w];
                let wx = &self.w_x[j * w..(j + 1) * w];
                let iy = &self.idx_y[j * w..(j + 1) * w];
                let wy = &self.w_y[j * w..(j + 1) * w];
                let mut acc = C64::new(0.0, 0.0);
                for a in 0..w {
                    let row = iy[a] as usize * g;
                    let mut line = C64::new(0.0, 0.0);
                    for b in 0..w {
                        line += grid[row + ix[b] as usize] * wx[b];
                    }
                    acc += line * wy[a];
                }
                acc
            })
            .collect())
    }

    /// Adjoint of [`forward`](Self::forward); with `weights`, each sample is
    /// scaled before spreading (density-compensated gridding).
    pub fn adjoint(&self, samples: &[C64], weights: Option<&[f64]>) -> Result<Array2<C64>> {
        if samples.len() != self.positions.len() {
            return Err(Error::shape("nufft samples", self.positions.len(), samples.len()));
        }
        if let Some(wt) = weights {
            if wt.len() != samples.len() {
                return Err(Error::shape("density weights", samples.len(), wt.len()));
            }
        }
        let g = self.oversampled;
        let w = self.kernel_width;
        let mut grid = vec![C64::new(0.0, 0.0); g * g];
        for (j, &y) in samples.iter().enumerate() {
            let y = match weights {
                Some(wt) => y * wt[j],
                None => y,
            };
            let ix = &self.idx_x[j * w..(j + 1) * w];
            let wx = &self.w_x[j * w..(j + 1) * w];
            let iy = &self.idx_y[j * w..(j + 1) * w];
            let wy = &self.w_y[j * w..(j + 1) * w];
            for a in 0..w {
                let row = iy[a] as usize * g;
                let ya = y * wy[a];
                for b in 0..w {
                    grid[row + ix[b] as usize] += ya * wx[b];
                }
            }
        }
        self.fft.inverse(&mut grid);

        let n = self.grid_size;
        let mut out = Array2::zeros((n, n));
        for r in 0..n {
            let gr = self.grid_index(r);
            for c in 0..n {
                out[[r, c]] = grid[gr * g + self.grid_index(c)] * self.deapod[r * n + c];
            }
        }
        Ok(out)
    }

    /// Single-precision storage variant of [`forward`](Self::forward).
    pub fn forward_c32(&self, image: ArrayView2<'_, Complex32>) -> Result<Vec<Complex32>> {
        let wide = image.mapv(|v| C64::new(v.re as f64, v.im as f64));
        Ok(self
            .forward(wide.view())?
            .into_iter()
            .map(|v| Complex32::new(v.re as f32, v.im as f32))
            .collect())
    }

    /// Single-precision storage variant of [`adjoint`](Self::adjoint).
    pub fn adjoint_c32(&self, samples: &[Complex32], weights: Option<&[f64]>) -> Result<Array2<Complex32>> {
        let wide: Vec<C64> = samples.iter().map(|v| C64::new(v.re as f64, v.im as f64)).collect();
        Ok(self
            .adjoint(&wide, weights)?
            .mapv(|v| Complex32::new(v.re as f32, v.im as f32)))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct evaluation of the non-uniform DFT, independent of the gridding path.
    pub(crate) fn direct_dft(image: &Array2<C64>, positions: &[[f64; 2]]) -> Vec<C64> {
        let n = image.nrows();
        let half = (n / 2) as f64;
        positions
            .iter()
            .map(|k| {
                let mut acc = C64::new(0.0, 0.0);
                for r in 0..n {
                    for c in 0..n {
                        let ph = -2.0 * PI * (k[0] * (c as f64 - half) + k[1] * (r as f64 - half));
                        acc += image[[r, c]] * C64::from_polar(1.0, ph);
                    }
                }
                acc
            })
            .collect()
    }

    pub(crate) fn random_image(n: usize, rng: &mut ChaCha8Rng) -> Array2<C64> {
        Array2::from_shape_fn((n, n), |_| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    fn random_positions(m: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
        (0..m)
            .map(|_| [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)])
            .collect()
    }

    fn rel_l2(a: &[C64], b: &[C64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den).sqrt()
    }

    fn dot(a: &[C64], b: &[C64]) -> C64 {
        a.iter().zip(b).map(|(x, y)| x * y.conj()).sum()
    }

    #[test]
    fn bessel_i0_reference_values() {
        // Abramowitz & Stegun table 9.8
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-14);
        assert!((bessel_i0(5.0) - 27.239_871_823_604_45).abs() < 1e-11);
    }

    #[test]
    fn kernel_transform_matches_quadrature() {
        let kb = KaiserBessel::new(6.0, KaiserBessel::optimal_beta(2.0, 6.0));
        for &xi in &[0.0, 0.1, 0.25, 0.4, 0.6] {
            // midpoint rule on the compact support
            let steps = 20_000;
            let h = 6.0 / steps as f64;
            let mut acc = 0.0;
            for i in 0..steps {
                let t = -3.0 + (i as f64 + 0.5) * h;
                acc += kb.eval(t) * (2.0 * PI * xi * t).cos() * h;
            }
            assert!(
                (acc - kb.transform(xi)).abs() < 1e-7,
                "xi={xi}: {acc} vs {}",
                kb.transform(xi)
            );
        }
    }

    #[test]
    fn kernel_weights_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pos = random_positions(200, &mut rng);
        let plan = GriddingPlan::with_defaults(&pos, 32).unwrap();
        for j in 0..pos.len() {
            // exact up to aliasing of the kernel spectrum
            assert!((plan.weight_sum(j) - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn adjoint_dot_test() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 64;
        let pos = random_positions(3000, &mut rng);
        let plan = GriddingPlan::with_defaults(&pos, n).unwrap();
        for _ in 0..20 {
            let x = random_image(n, &mut rng);
            let y: Vec<C64> = (0..pos.len())
                .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let fx = plan.forward(x.view()).unwrap();
            let fhy = plan.adjoint(&y, None).unwrap();
            let lhs = dot(&fx, &y);
            let rhs = dot(x.as_slice().unwrap(), fhy.as_slice().unwrap());
            let xn = x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            let yn = y.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            assert!((lhs - rhs).norm() / (xn * yn) < 1e-6);
        }
    }

    #[test]
    fn matches_direct_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 32;
        let x = random_image(n, &mut rng);
        let pos = random_positions(400, &mut rng);
        let exact = direct_dft(&x, &pos);
        let plan = GriddingPlan::new(&pos, n, 2.0, 6).unwrap();
        let err = rel_l2(&plan.forward(x.view()).unwrap(), &exact);
        assert!(err < 1e-3, "os2 w6: {err}");
        let plan = GriddingPlan::new(&pos, n, 1.5, 4).unwrap();
        let err = rel_l2(&plan.forward(x.view()).unwrap(), &exact);
        assert!(err < 1e-2, "os1.5 w4: {err}");
    }

    #[test]
    fn centered_impulse_has_flat_spectrum() {
        let n = 64;
        let mut x = Array2::zeros((n, n));
        x[[n / 2, n / 2]] = C64::new(1.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pos = random_positions(500, &mut rng);
        let exact = direct_dft(&x, &pos);
        let y = GriddingPlan::with_defaults(&pos, n).unwrap().forward(x.view()).unwrap();
        for (a, b) in y.iter().zip(&exact) {
            assert!((a - b).norm() < 1e-3);
            assert!((b.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_positions_reproduce_fft() {
        let n = 32;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_image(n, &mut rng);
        let pos: Vec<[f64; 2]> = (0..n)
            .flat_map(|r| (0..n).map(move |c| [(c as f64 - 16.0) / n as f64, (r as f64 - 16.0) / n as f64]))
            .collect();
        let exact = direct_dft(&x, &pos);
        let y = GriddingPlan::with_defaults(&pos, n).unwrap().forward(x.view()).unwrap();
        let scale = exact.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let max_err = y.iter().zip(&exact).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(max_err / scale < 1e-5, "{}", max_err / scale);
    }

    #[test]
    fn linearity_and_zero() {
        let n = 32;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let pos = random_positions(300, &mut rng);
        let plan = GriddingPlan::with_defaults(&pos, n).unwrap();
        let x = random_image(n, &mut rng);
        let z = random_image(n, &mut rng);
        let (a, b) = (C64::new(0.3, -1.2), C64::new(-2.0, 0.5));
        let combo = x.mapv(|v| v * a) + z.mapv(|v| v * b);
        let lhs = plan.forward(combo.view()).unwrap();
        let fx = plan.forward(x.view()).unwrap();
        let fz = plan.forward(z.view()).unwrap();
        for j in 0..pos.len() {
            assert!((lhs[j] - (a * fx[j] + b * fz[j])).norm() < 1e-9);
        }
        let zero = plan.forward(Array2::zeros((n, n)).view()).unwrap();
        assert!(zero.iter().all(|v| v.norm() == 0.0));
        let back = plan.adjoint(&vec![C64::new(0.0, 0.0); pos.len()], None).unwrap();
        assert!(back.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn empty_plan_and_duplicates() {
        let plan = GriddingPlan::with_defaults(&[], 16).unwrap();
        assert!(plan.forward(Array2::zeros((16, 16)).view()).unwrap().is_empty());

        let p = [0.1, -0.2];
        let single = GriddingPlan::with_defaults(&[p], 16).unwrap();
        let double = GriddingPlan::with_defaults(&[p, p], 16).unwrap();
        let one = C64::new(1.0, 0.5);
        let a = single.adjoint(&[one], None).unwrap();
        let b = double.adjoint(&[one, one], None).unwrap();
        for (u, v) in a.iter().zip(b.iter()) {
            assert!((u * 2.0 - v).norm() < 1e-12);
        }
    }

    #[test]
    fn dc_sample_gives_flat_image() {
        let n = 64;
        let plan = GriddingPlan::with_defaults(&[[0.0, 0.0]], n).unwrap();
        let img = plan.adjoint(&[C64::new(1.0, 0.0)], None).unwrap();
        let (mut lo, mut hi) = (f64::MAX, f64::MIN);
        for r in n / 4..3 * n / 4 {
            for c in n / 4..3 * n / 4 {
                lo = lo.min(img[[r, c]].norm());
                hi = hi.max(img[[r, c]].norm());
            }
        }
        assert!(hi / lo < 1.01, "{}", hi / lo);
    }

    #[test]
    fn rejects_out_of_bounds() {
        let err = GriddingPlan::with_defaults(&[[0.0, 0.0], [0.2, 0.51]], 16).unwrap_err();
        match err {
            Error::SampleOutOfBounds { index, .. } => assert_eq!(index, 1),
            e => panic!("unexpected {e}"),
        }
        assert!(GriddingPlan::new(&[], 16, 1.2, 6).is_err());
        let plan = GriddingPlan::with_defaults(&[[0.0, 0.0]], 16).unwrap();
        assert!(plan.forward(Array2::zeros((8, 8)).view()).is_err());
        assert!(plan.adjoint(&[], None).is_err());
    }

    #[test]
    fn positive_nyquist_edge_wraps() {
        let n = 16;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_image(n, &mut rng);
        let pos = [[0.5, 0.2], [-0.5, 0.2]];
        let y = GriddingPlan::with_defaults(&pos, n).unwrap().forward(x.view()).unwrap();
        let exact = direct_dft(&x, &pos);
        assert!((exact[0] - exact[1]).norm() < 1e-9);
        assert!((y[0] - y[1]).norm() < 1e-9);
    }

    #[test]
    fn repeated_application_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pos = random_positions(500, &mut rng);
        let plan = GriddingPlan::with_defaults(&pos, 32).unwrap();
        let x = random_image(32, &mut rng);
        assert_eq!(plan.forward(x.view()).unwrap(), plan.forward(x.view()).unwrap());
    }
}
