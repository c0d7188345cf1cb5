//! Coil sensitivity estimation: temporal-average gridding and Walsh
//! adaptive combination.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::acquisition::RawAcquisition;
use crate::error::{Error, Result};
use crate::nufft::GriddingPlan;
use crate::phantom::CoilSet;
use crate::trajectory::{density_weights, Trajectory};
use crate::types::C64;

/// Coil maps `[coil][row][col]` with the region where they are valid.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityMaps {
    pub n_coils: usize,
    pub grid_size: usize,
    pub maps: Vec<C64>,
    pub mask: Vec<bool>,
}

impl SensitivityMaps {
    /// Uses known sensitivities as they are, valid everywhere.
    pub fn from_coils(coils: &CoilSet) -> Self {
        Self {
            n_coils: coils.n_coils,
            grid_size: coils.grid_size,
            maps: coils.maps.clone(),
            mask: vec![true; coils.grid_size * coils.grid_size],
        }
    }

    pub fn coil(&self, c: usize) -> ArrayView2<'_, C64> {
        let len = self.grid_size * self.grid_size;
        ArrayView2::from_shape((self.grid_size, self.grid_size), &self.maps[c * len..(c + 1) * len]).expect("coil view")
    }

    pub fn mask_view(&self) -> ArrayView2<'_, bool> {
        ArrayView2::from_shape((self.grid_size, self.grid_size), &self.mask).expect("mask view")
    }
}

/// Gridding plan and density weights over every arm of every orientation.
pub struct UnionGridder {
    pub plan: GriddingPlan,
    pub weights: Vec<f64>,
}

impl UnionGridder {
    pub fn new(trajectory: &Trajectory, grid_size: usize, pixel_size: f64) -> Result<Self> {
        let pos = trajectory.union_positions(pixel_size);
        let weights = density_weights(&pos, trajectory.samples_per_arm);
        Ok(Self {
            plan: GriddingPlan::with_defaults(&pos, grid_size)?,
            weights,
        })
    }

    pub fn for_acquisition(raw: &RawAcquisition) -> Result<Self> {
        Self::new(&raw.trajectory, raw.grid_size, raw.pixel_size)
    }

    /// Density-weighted adjoint of union-ordered samples.
    pub fn grid(&self, samples: &[C64]) -> Result<Array2<C64>> {
        self.plan.adjoint(samples, Some(&self.weights))
    }
}

/// Per coil, averages each union arm over all frames that acquired it and
/// grids the pooled data with union density weights.
pub fn temporal_average(raw: &RawAcquisition, gridder: &UnionGridder) -> Result<Vec<Array2<C64>>> {
    let traj = &raw.trajectory;
    let per = traj.arms_per_frame * traj.samples_per_arm;
    let n_orient = traj.n_orientations();
    let mut counts = vec![0usize; n_orient];
    for f in 0..raw.n_frames {
        counts[raw.orientation(f)] += 1;
    }
    if let Some(o) = counts.iter().position(|&c| c == 0) {
        return Err(Error::InsufficientCoverage(format!(
            "orientation {o} never acquired in {} frames; need at least {}",
            raw.n_frames,
            n_orient * traj.frames_per_orientation
        )));
    }
    if gridder.plan.n_samples() != n_orient * per {
        return Err(Error::shape(
            "union gridder",
            (n_orient * per).to_string(),
            gridder.plan.n_samples().to_string(),
        ));
    }
    (0..raw.n_coils)
        .into_par_iter()
        .map(|c| {
            let mut pooled = vec![C64::new(0.0, 0.0); n_orient * per];
            for f in 0..raw.n_frames {
                let o = raw.orientation(f);
                let dst = &mut pooled[o * per..(o + 1) * per];
                for (d, s) in dst.iter_mut().zip(raw.coil_frame(f, c)) {
                    *d += C64::new(s.re as f64, s.im as f64);
                }
            }
            for (o, chunk) in pooled.chunks_mut(per).enumerate() {
                let inv = 1.0 / counts[o] as f64;
                chunk.iter_mut().for_each(|v| *v *= inv);
            }
            gridder.grid(&pooled)
        })
        .collect()
}

pub const DEFAULT_BLOCK_SIZE: usize = 8;
pub const DEFAULT_DIVISOR: usize = 4;
/// Low-resolution pixels whose local energy is below this fraction of the
/// maximum are left out of the mask.
pub const DEFAULT_MASK_THRESHOLD: f64 = 0.01;

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 10_000;

/// Dominant eigenvector of a Hermitian positive semi-definite matrix
/// (row-major, `n x n`) by power iteration from the all-ones vector.
///
/// The iteration runs on `A^(2^SQUARINGS)` (built by repeated squaring) so a
/// small eigengap still converges to the 1e-10 step tolerance quickly.
/// Returns `None` for a zero matrix. The result has unit norm and the first
/// non-negligible entry real and positive.
pub fn dominant_eigenvector(matrix: &[C64], n: usize) -> Option<Vec<C64>> {
    const SQUARINGS: usize = 5;
    let mut a = matrix.to_vec();
    for _ in 0..SQUARINGS {
        let scale = a.iter().map(|x| x.norm()).fold(0.0, f64::max);
        if scale == 0.0 || !scale.is_finite() {
            return None;
        }
        a.iter_mut().for_each(|x| *x /= scale);
        let mut sq = vec![C64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for k in 0..n {
                let aik = a[i * n + k];
                for j in 0..n {
                    sq[i * n + j] += aik * a[k * n + j];
                }
            }
        }
        a = sq;
    }
    let mut v = vec![C64::new(1.0 / (n as f64).sqrt(), 0.0); n];
    let mut next = vec![C64::new(0.0, 0.0); n];
    for _ in 0..POWER_MAX_ITERS {
        for (i, out) in next.iter_mut().enumerate() {
            *out = (0..n).map(|j| a[i * n + j] * v[j]).sum();
        }
        let norm = next.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return None;
        }
        next.iter_mut().for_each(|x| *x /= norm);
        anchor_phase(&mut next);
        let change = v.iter().zip(&next).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        std::mem::swap(&mut v, &mut next);
        if change < POWER_TOL {
            break;
        }
    }
    Some(v)
}

/// Rotates the global phase so that the first non-negligible entry is real
/// and positive.
fn anchor_phase(v: &mut [C64]) {
    let scale = v.iter().map(|x| x.norm()).fold(0.0, f64::max);
    if let Some(a) = v.iter().find(|x| x.norm() > 1e-12 * scale).copied() {
        let rot = a.conj() / a.norm();
        v.iter_mut().for_each(|x| *x *= rot);
    }
}

/// Walsh adaptive coil maps.
///
/// Sensitivities are estimated on a grid coarser by `divisor`: at each coarse
/// point the coil covariance over a `block_size` x `block_size` block of
/// full-resolution pixels gives the local sensitivity as its dominant
/// eigenvector. Estimates are bilinearly interpolated back and normalized to
/// unit root-sum-of-squares.
pub fn walsh_maps(coil_images: &[Array2<C64>], block_size: usize, divisor: usize) -> Result<SensitivityMaps> {
    walsh_maps_with_threshold(coil_images, block_size, divisor, DEFAULT_MASK_THRESHOLD)
}

pub fn walsh_maps_with_threshold(
    coil_images: &[Array2<C64>],
    block_size: usize,
    divisor: usize,
    mask_threshold: f64,
) -> Result<SensitivityMaps> {
    let nc = coil_images.len();
    if nc == 0 {
        return Err(Error::InvalidConfig("walsh_maps needs at least one coil".into()));
    }
    if block_size < 2 || divisor == 0 {
        return Err(Error::InvalidConfig(format!(
            "block_size must be >= 2 and divisor >= 1 (got {block_size}, {divisor})"
        )));
    }
    let (n, w) = coil_images[0].dim();
    if n != w || n % divisor != 0 {
        return Err(Error::shape(
            "walsh coil images",
            format!("square, divisible by {divisor}"),
            format!("{n}x{w}"),
        ));
    }
    for (c, img) in coil_images.iter().enumerate() {
        if img.dim() != (n, n) {
            return Err(Error::shape(
                format!("coil image {c}"),
                format!("{n}x{n}"),
                format!("{:?}", img.dim()),
            ));
        }
    }

    let m = n / divisor;
    // covariance over a block_size x block_size full-resolution block centred
    // on each point of the coarse grid
    let estimates: Vec<(Option<Vec<C64>>, f64)> = (0..m * m)
        .into_par_iter()
        .map(|idx| {
            let (r, c) = (idx / m, idx % m);
            // block start and length, centred on the coarse point (doubled
            // coordinates keep odd/even combinations symmetric)
            let span = |i: usize| {
                let start2 = (2 * i * divisor + divisor - 1) as isize - (block_size as isize - 1);
                if start2.rem_euclid(2) == 0 {
                    (start2 / 2, block_size as isize)
                } else {
                    ((start2 - 1) / 2, block_size as isize + 1)
                }
            };
            let ((r0, rl), (c0, cl)) = (span(r), span(c));
            let mut cov = vec![C64::new(0.0, 0.0); nc * nc];
            let mut x = vec![C64::new(0.0, 0.0); nc];
            for rr in r0.max(0)..(r0 + rl).min(n as isize) {
                for cc in c0.max(0)..(c0 + cl).min(n as isize) {
                    for (k, img) in coil_images.iter().enumerate() {
                        x[k] = img[[rr as usize, cc as usize]];
                    }
                    for i in 0..nc {
                        for j in 0..nc {
                            cov[i * nc + j] += x[i] * x[j].conj();
                        }
                    }
                }
            }
            let energy: f64 = (0..nc).map(|i| cov[i * nc + i].re).sum();
            (dominant_eigenvector(&cov, nc), energy)
        })
        .collect();

    let max_energy = estimates.iter().map(|e| e.1).fold(0.0, f64::max);
    let low_mask: Vec<bool> = estimates
        .iter()
        .map(|(v, e)| v.is_some() && max_energy > 0.0 && *e >= mask_threshold * max_energy)
        .collect();
    let zero = vec![C64::new(0.0, 0.0); nc];
    let low_maps: Vec<&[C64]> = estimates
        .iter()
        .zip(&low_mask)
        .map(|((v, _), &ok)| if ok { v.as_deref().unwrap() } else { &zero[..] })
        .collect();

    let mut maps = vec![C64::new(0.0, 0.0); nc * n * n];
    let mut mask = vec![false; n * n];
    // coarse point i sits at full-resolution coordinate i*divisor + (divisor-1)/2;
    // outside the outermost points the interpolation extrapolates linearly
    let coord = |i: usize| {
        let t = (i as f64 - (divisor as f64 - 1.0) / 2.0) / divisor as f64;
        let i0 = (t.floor().max(0.0) as usize).min(m.saturating_sub(2));
        (i0, (i0 + 1).min(m - 1), t - i0 as f64)
    };
    for r in 0..n {
        let (y0, y1, fy) = coord(r);
        for c in 0..n {
            let (x0, x1, fx) = coord(c);
            let nearest = (r / divisor) * m + c / divisor;
            if !low_mask[nearest] {
                continue;
            }
            // align each neighbour's free global phase with the nearest
            // estimate so the blend does not depend on the anchoring
            let reference = low_maps[nearest];
            let mut v = vec![C64::new(0.0, 0.0); nc];
            for (idx, wgt) in [
                (y0 * m + x0, (1.0 - fy) * (1.0 - fx)),
                (y0 * m + x1, (1.0 - fy) * fx),
                (y1 * m + x0, fy * (1.0 - fx)),
                (y1 * m + x1, fy * fx),
            ] {
                let u = low_maps[idx];
                let ip: C64 = reference.iter().zip(u).map(|(a, b)| a.conj() * b).sum();
                if ip.norm() == 0.0 {
                    continue;
                }
                let rot = ip.conj() / ip.norm() * wgt;
                for k in 0..nc {
                    v[k] += u[k] * rot;
                }
            }
            let rss = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            if rss > 1e-12 {
                v.iter_mut().for_each(|x| *x /= rss);
                anchor_phase(&mut v);
                mask[r * n + c] = true;
                for k in 0..nc {
                    maps[k * n * n + r * n + c] = v[k];
                }
            }
        }
    }
    Ok(SensitivityMaps {
        n_coils: nc,
        grid_size: n,
        maps,
        mask,
    })
}

/// Sensitivity-weighted coil combination `sum_c conj(s_c) x_c` (the
/// optimal combination for unit-rss maps); zero outside the mask.
pub fn combine(coil_images: &[Array2<C64>], maps: &SensitivityMaps) -> Array2<C64> {
    let n = maps.grid_size;
    Array2::from_shape_fn((n, n), |(r, c)| {
        if !maps.mask[r * n + c] {
            return C64::new(0.0, 0.0);
        }
        coil_images
            .iter()
            .enumerate()
            .map(|(k, img)| maps.maps[k * n * n + r * n + c].conj() * img[[r, c]])
            .sum()
    })
}

/// Root-sum-of-squares coil combination.
pub fn rss_combine(coil_images: &[Array2<C64>]) -> Array2<f64> {
    let (h, w) = coil_images.first().map(|a| a.dim()).unwrap_or((0, 0));
    Array2::from_shape_fn((h, w), |ij| {
        coil_images.iter().map(|img| img[ij].norm_sqr()).sum::<f64>().sqrt()
    })
}
