use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::acquisition::RawAcquisition;
use crate::coils::SensitivityMaps;
use crate::error::{Error, Result};
use crate::nufft::GriddingPlan;
use crate::trajectory::{density_weights, Trajectory};
use crate::types::C64;

/// Multi-coil encoding `d_c = F(s_c x)` for one sampling pattern.
///
/// Data vectors are coil-major: `[coil][sample]`.
#[derive(Clone)]
pub struct EncodingOperator {
    maps: Arc<SensitivityMaps>,
    plan: Arc<GriddingPlan>,
    sqrt_weights: Option<Arc<Vec<f64>>>,
}

impl EncodingOperator {
    pub fn new(maps: Arc<SensitivityMaps>, plan: Arc<GriddingPlan>) -> Result<Self> {
        if maps.grid_size != plan.grid_size() {
            return Err(Error::shape("encoding grid", plan.grid_size(), maps.grid_size));
        }
        if maps.n_coils == 0 {
            return Err(Error::InvalidConfig("encoding needs at least one coil".into()));
        }
        Ok(Self {
            maps,
            plan,
            sqrt_weights: None,
        })
    }

    /// Weights every sample by `sqrt(w)` on both sides, so the normal
    /// operator becomes `E^H W E`.
    pub fn with_density_weighting(mut self, weights: &[f64]) -> Result<Self> {
        if weights.len() != self.plan.n_samples() {
            return Err(Error::shape("density weights", self.plan.n_samples(), weights.len()));
        }
        self.sqrt_weights = Some(Arc::new(weights.iter().map(|w| w.max(0.0).sqrt()).collect()));
        Ok(self)
    }

    fn with_sqrt_weights(mut self, sqrt_weights: Arc<Vec<f64>>) -> Self {
        self.sqrt_weights = Some(sqrt_weights);
        self
    }

    pub fn is_weighted(&self) -> bool {
        self.sqrt_weights.is_some()
    }

    pub fn maps(&self) -> &SensitivityMaps {
        &self.maps
    }

    pub fn plan(&self) -> &GriddingPlan {
        &self.plan
    }

    pub fn grid_size(&self) -> usize {
        self.plan.grid_size()
    }

    pub fn n_coils(&self) -> usize {
        self.maps.n_coils
    }

    pub fn data_len(&self) -> usize {
        self.maps.n_coils * self.plan.n_samples()
    }

    pub fn forward(&self, image: ArrayView2<'_, C64>) -> Result<Vec<C64>> {
        let n = self.grid_size();
        if image.dim() != (n, n) {
            return Err(Error::shape("encoding image", n * n, image.len()));
        }
        let mask = self.maps.mask_view();
        let per_coil: Vec<Result<Vec<C64>>> = (0..self.n_coils())
            .into_par_iter()
            .map(|c| {
                let mut x = Array2::zeros((n, n));
                Zip::from(&mut x)
                    .and(image)
                    .and(self.maps.coil(c))
                    .and(mask)
                    .for_each(|o, &v, &s, &m| {
                        if m {
                            *o = v * s;
                        }
                    });
                let mut y = self.plan.forward(x.view())?;
                if let Some(w) = &self.sqrt_weights {
                    y.iter_mut().zip(w.iter()).for_each(|(v, &w)| *v *= w);
                }
                Ok(y)
            })
            .collect();
        let mut out = Vec::with_capacity(self.data_len());
        for y in per_coil {
            out.extend(y?);
        }
        Ok(out)
    }

    pub fn adjoint(&self, data: &[C64]) -> Result<Array2<C64>> {
        if data.len() != self.data_len() {
            return Err(Error::shape("encoding data", self.data_len(), data.len()));
        }
        let ns = self.plan.n_samples();
        let per_coil: Vec<Result<Array2<C64>>> = (0..self.n_coils())
            .into_par_iter()
            .map(|c| {
                let chunk = &data[c * ns..(c + 1) * ns];
                let img = match &self.sqrt_weights {
                    Some(w) => self.plan.adjoint(chunk, Some(w))?,
                    None => self.plan.adjoint(chunk, None)?,
                };
                Ok(img)
            })
            .collect();
        let n = self.grid_size();
        let mask = self.maps.mask_view();
        let mut out = Array2::zeros((n, n));
        for (c, img) in per_coil.into_iter().enumerate() {
            let img = img?;
            Zip::from(&mut out)
                .and(&img)
                .and(self.maps.coil(c))
                .and(mask)
                .for_each(|o, &v, &s, &m| {
                    if m {
                        *o += s.conj() * v;
                    }
                });
        }
        Ok(out)
    }

    /// Applies `sqrt(w)` to measured data when the operator is weighted.
    pub fn weight_data(&self, data: &[C64]) -> Result<Vec<C64>> {
        if data.len() != self.data_len() {
            return Err(Error::shape("encoding data", self.data_len(), data.len()));
        }
        let mut d = data.to_vec();
        if let Some(w) = &self.sqrt_weights {
            for chunk in d.chunks_mut(w.len()) {
                chunk.iter_mut().zip(w.iter()).for_each(|(v, &w)| *v *= w);
            }
        }
        Ok(d)
    }

    /// Whether both operators encode with the same maps, plan and weights.
    pub fn shares_encoding(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.maps, &other.maps)
            && Arc::ptr_eq(&self.plan, &other.plan)
            && match (&self.sqrt_weights, &other.sqrt_weights) {
                (None, None) => true,
                (Some(a), Some(b)) => Arc::ptr_eq(a, b),
                _ => false,
            }
    }

    pub fn normal(&self, image: ArrayView2<'_, C64>) -> Result<Array2<C64>> {
        self.adjoint(&self.forward(image)?)
    }

    /// Largest eigenvalue of `E^H E` by power iteration from a seeded
    /// random start.
    pub fn normal_norm(&self, iters: usize, seed: u64) -> Result<f64> {
        let n = self.grid_size();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::from_shape_fn((n, n), |_| {
            C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        let mut lambda = 0.0;
        for _ in 0..iters.max(1) {
            let nx = norm(&x);
            if nx == 0.0 {
                return Ok(0.0);
            }
            x.mapv_inplace(|v| v / nx);
            let y = self.normal(x.view())?;
            lambda = dot(&x, &y).re;
            x = y;
        }
        Ok(lambda)
    }
}

/// Gridding plans and density weights per orientation of an acquisition.
pub struct FramePlans {
    pub plans: Vec<Arc<GriddingPlan>>,
    pub weights: Vec<Arc<Vec<f64>>>,
    sqrt_weights: Vec<Arc<Vec<f64>>>,
}

impl FramePlans {
    pub fn new(trajectory: &Trajectory, grid_size: usize, pixel_size: f64) -> Result<Self> {
        let mut plans = Vec::new();
        let mut weights = Vec::new();
        for o in 0..trajectory.n_orientations() {
            let pos = trajectory.orientation_positions(o, pixel_size);
            weights.push(Arc::new(density_weights(&pos, trajectory.samples_per_arm)));
            plans.push(Arc::new(GriddingPlan::with_defaults(&pos, grid_size)?));
        }
        let sqrt_weights = weights
            .iter()
            .map(|w| Arc::new(w.iter().map(|v| v.max(0.0).sqrt()).collect()))
            .collect();
        Ok(Self {
            plans,
            weights,
            sqrt_weights,
        })
    }

    pub fn for_acquisition(raw: &RawAcquisition) -> Result<Self> {
        Self::new(&raw.trajectory, raw.grid_size, raw.pixel_size)
    }

    /// One encoding operator per frame, sharing plans between frames of the
    /// same orientation.
    pub fn operators(
        &self,
        raw: &RawAcquisition,
        maps: &Arc<SensitivityMaps>,
        density_weighting: bool,
    ) -> Result<Vec<EncodingOperator>> {
        (0..raw.n_frames)
            .map(|f| {
                let o = raw.orientation(f);
                let op = EncodingOperator::new(maps.clone(), self.plans[o].clone())?;
                Ok(if density_weighting {
                    op.with_sqrt_weights(self.sqrt_weights[o].clone())
                } else {
                    op
                })
            })
            .collect()
    }
}

/// Coil-major samples of one frame.
pub fn frame_data(raw: &RawAcquisition, frame: usize) -> Vec<C64> {
    raw.frame(frame)
        .iter()
        .map(|v| C64::new(v.re as f64, v.im as f64))
        .collect()
}

pub(crate) fn dot(a: &Array2<C64>, b: &Array2<C64>) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

pub(crate) fn norm(a: &Array2<C64>) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

pub(crate) fn vec_norm(a: &[C64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}
