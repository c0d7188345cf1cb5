//! Frame reconstructions: density-weighted gridding, CG-SENSE, l1-wavelet
//! FISTA and low-rank plus sparse.

mod lrs;
mod operator;
pub mod wavelet;

use std::sync::Arc;

use ndarray::{Array2, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::acquisition::RawAcquisition;
use crate::coils::SensitivityMaps;
use crate::error::{Error, Result};
use crate::nufft::GriddingPlan;
use crate::types::C64;

pub use lrs::{casorati_singular_values, lrs, series_norm, LrsParams};
pub use operator::{frame_data, EncodingOperator, FramePlans};
use operator::{norm, vec_norm};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gridding,
    CgSense,
    L1Wavelet,
    LowRankSparse,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconResult {
    pub method: Method,
    /// One image per frame.
    pub images: Vec<Array2<C64>>,
    /// Data-consistency norm `||E x - d||`, starting with the initial guess.
    pub residual_history: Vec<f64>,
    /// Penalized objective per iteration (FISTA only).
    pub objective_history: Vec<f64>,
    pub parameters: serde_json::Value,
    pub low_rank: Option<Vec<Array2<C64>>>,
    pub sparse: Option<Vec<Array2<C64>>>,
}

impl ReconResult {
    fn single(method: Method, image: Array2<C64>, parameters: serde_json::Value) -> Self {
        Self {
            method,
            images: vec![image],
            residual_history: Vec::new(),
            objective_history: Vec::new(),
            parameters,
            low_rank: None,
            sparse: None,
        }
    }

    pub fn image(&self) -> &Array2<C64> {
        &self.images[0]
    }

    pub fn history_json(&self) -> serde_json::Value {
        json!({
            "method": self.method,
            "parameters": self.parameters,
            "residual_history": self.residual_history,
            "objective_history": self.objective_history,
        })
    }
}

/// How coil images are merged after gridding.
#[derive(Clone, Copy, Debug)]
pub enum CoilCombine<'a> {
    Rss,
    /// `sum conj(s_c) x_c / sum |s_c|^2`, which keeps the object's scale when
    /// the maps are not normalized.
    Sensitivity(&'a SensitivityMaps),
}

fn check_finite(data: &[C64]) -> Result<()> {
    if data.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("k-space data".into()))
    }
}

/// Density-weighted adjoint of each coil followed by coil combination.
/// `data` is coil-major.
pub fn gridding_recon(
    data: &[C64],
    plan: &GriddingPlan,
    weights: &[f64],
    combine: CoilCombine<'_>,
) -> Result<Array2<C64>> {
    let ns = plan.n_samples();
    if ns == 0 || !data.len().is_multiple_of(ns) {
        return Err(Error::shape("gridding data", ns, data.len()));
    }
    let n_coils = data.len() / ns;
    let images = data
        .chunks(ns)
        .map(|chunk| plan.adjoint(chunk, Some(weights)))
        .collect::<Result<Vec<_>>>()?;
    let n = plan.grid_size();
    match combine {
        CoilCombine::Rss => Ok(crate::coils::rss_combine(&images).mapv(|v| C64::new(v, 0.0))),
        CoilCombine::Sensitivity(maps) => {
            if maps.n_coils != n_coils || maps.grid_size != n {
                return Err(Error::shape("gridding maps", n_coils, maps.n_coils));
            }
            let mut num = Array2::<C64>::zeros((n, n));
            let mut den = Array2::<f64>::zeros((n, n));
            for (c, img) in images.iter().enumerate() {
                Zip::from(&mut num)
                    .and(&mut den)
                    .and(img)
                    .and(maps.coil(c))
                    .for_each(|o, d, &v, &s| {
                        *o += s.conj() * v;
                        *d += s.norm_sqr();
                    });
            }
            Zip::from(&mut num)
                .and(&den)
                .and(maps.mask_view())
                .for_each(|o, &d, &m| {
                    *o = if m && d > 0.0 { *o / d } else { C64::new(0.0, 0.0) };
                });
            Ok(num)
        }
    }
}

pub fn gridding_result(
    data: &[C64],
    plan: &GriddingPlan,
    weights: &[f64],
    combine: CoilCombine<'_>,
) -> Result<ReconResult> {
    let rss = matches!(combine, CoilCombine::Rss);
    let image = gridding_recon(data, plan, weights, combine)?;
    Ok(ReconResult::single(
        Method::Gridding,
        image,
        json!({ "combine": if rss { "rss" } else { "sensitivity" } }),
    ))
}

/// Conjugate gradients on `E^H E x = E^H d` from `x = 0`, in the
/// least-squares (CGLS) arrangement so the data residual is tracked
/// directly. A weighted operator solves `E^H W E x = E^H W d` instead.
pub fn cg_sense(data: &[C64], op: &EncodingOperator, iters: usize) -> Result<ReconResult> {
    check_finite(data)?;
    let n = op.grid_size();
    let mut s = op.weight_data(data)?;
    let mut x = Array2::<C64>::zeros((n, n));
    let mut r = op.adjoint(&s)?;
    let mut p = r.clone();
    let mut gamma = norm(&r).powi(2);
    let mut history = vec![vec_norm(&s)];
    for _ in 0..iters {
        if gamma == 0.0 {
            break;
        }
        let q = op.forward(p.view())?;
        let qq: f64 = q.iter().map(|v| v.norm_sqr()).sum();
        if qq == 0.0 {
            break;
        }
        let alpha = gamma / qq;
        x.scaled_add(C64::new(alpha, 0.0), &p);
        s.iter_mut().zip(&q).for_each(|(a, b)| *a -= b * alpha);
        history.push(vec_norm(&s));
        r = op.adjoint(&s)?;
        let gamma_next = norm(&r).powi(2);
        let beta = gamma_next / gamma;
        Zip::from(&mut p).and(&r).for_each(|p, &r| *p = r + *p * beta);
        gamma = gamma_next;
        if !gamma.is_finite() || x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("CG-SENSE iterate".into()));
        }
    }
    let mut out = ReconResult::single(
        Method::CgSense,
        x,
        json!({ "iters": iters, "density_weighting": op.is_weighted() }),
    );
    out.residual_history = history;
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FistaParams {
    pub lambda: f64,
    pub iters: usize,
    pub levels: usize,
    pub power_iters: usize,
}

impl Default for FistaParams {
    fn default() -> Self {
        Self {
            lambda: 0.002,
            iters: 30,
            levels: 3,
            power_iters: 20,
        }
    }
}

/// FISTA on `1/2 ||E x - d||^2 + lambda ||W x||_1` with an orthogonal db4
/// wavelet `W`. A step that would raise the objective is rejected and the
/// momentum restarted, so the objective never increases.
pub fn fista_l1wavelet(data: &[C64], op: &EncodingOperator, params: &FistaParams) -> Result<ReconResult> {
    if !(params.lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "lambda must be non-negative, got {}",
            params.lambda
        )));
    }
    check_finite(data)?;
    let n = op.grid_size();
    // validates divisibility before any work
    wavelet::forward(&Array2::zeros((n, n)), params.levels)?;
    let d = op.weight_data(data)?;
    let lip = 1.05 * op.normal_norm(params.power_iters, 0)?;
    if !(lip > 0.0) {
        return Err(Error::InvalidConfig("encoding operator is zero".into()));
    }
    let step = 1.0 / lip;
    let zero = C64::new(0.0, 0.0);

    let mut x = Array2::<C64>::zeros((n, n));
    let mut ex = vec![zero; d.len()];
    let mut y = x.clone();
    let mut ey = ex.clone();
    let mut t = 1.0f64;
    let mut fx = 0.5 * vec_norm(&d).powi(2);
    let mut residuals = vec![vec_norm(&d)];
    let mut objective = vec![fx];

    for _ in 0..params.iters {
        let diff: Vec<C64> = ey.iter().zip(&d).map(|(a, b)| a - b).collect();
        let grad = op.adjoint(&diff)?;
        let mut z = y.clone();
        z.scaled_add(C64::new(-step, 0.0), &grad);
        let coeffs = wavelet::forward(&z, params.levels)?.mapv(|v| wavelet::soft_threshold(v, params.lambda * step));
        let z = wavelet::inverse(&coeffs, params.levels)?;
        let ez = op.forward(z.view())?;
        let res_z: f64 = ez.iter().zip(&d).map(|(a, b)| (a - b).norm_sqr()).sum();
        let fz = 0.5 * res_z + params.lambda * coeffs.iter().map(|v| v.norm()).sum::<f64>();
        if !fz.is_finite() {
            return Err(Error::NonFinite("FISTA objective".into()));
        }
        if fz <= fx {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            let x_prev = std::mem::replace(&mut x, z);
            let ex_prev = std::mem::replace(&mut ex, ez);
            fx = fz;
            y = &x + &((&x - &x_prev) * C64::new(beta, 0.0));
            ey = ex.iter().zip(&ex_prev).map(|(a, b)| a + (a - b) * beta).collect();
            t = t_next;
            residuals.push(res_z.sqrt());
        } else {
            t = 1.0;
            y = x.clone();
            ey = ex.clone();
            residuals.push(*residuals.last().unwrap());
        }
        objective.push(fx);
    }
    let mut out = ReconResult::single(
        Method::L1Wavelet,
        x,
        json!({
            "lambda": params.lambda,
            "iters": params.iters,
            "levels": params.levels,
            "step": step,
        }),
    );
    out.residual_history = residuals;
    out.objective_history = objective;
    Ok(out)
}

/// `||E x - d||` for an image against coil-major data.
pub fn data_residual(op: &EncodingOperator, image: &Array2<C64>, data: &[C64]) -> Result<f64> {
    let d = op.weight_data(data)?;
    let ex = op.forward(image.view())?;
    Ok(ex.iter().zip(&d).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt())
}

/// Per-frame reconstruction settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum FrameMethod {
    /// Density-weighted adjoint with root-sum-of-squares combination.
    Gridding,
    CgSense {
        iters: usize,
        density_weighting: bool,
    },
    L1Wavelet(FistaParams),
}

/// Reconstructs the listed frames independently, on the rayon pool when
/// `parallel` is set. Results do not depend on the schedule.
pub fn reconstruct_frames(
    raw: &RawAcquisition,
    plans: &FramePlans,
    maps: &Arc<SensitivityMaps>,
    method: &FrameMethod,
    frames: &[usize],
    parallel: bool,
) -> Result<Vec<ReconResult>> {
    if let Some(&f) = frames.iter().find(|&&f| f >= raw.n_frames) {
        return Err(Error::InvalidConfig(format!(
            "frame {f} out of range ({} frames)",
            raw.n_frames
        )));
    }
    let run = |f: usize| -> Result<ReconResult> {
        let o = raw.orientation(f);
        let data = frame_data(raw, f);
        let encoding = |weighted: bool| -> Result<EncodingOperator> {
            let op = EncodingOperator::new(maps.clone(), plans.plans[o].clone())?;
            if weighted {
                op.with_density_weighting(&plans.weights[o])
            } else {
                Ok(op)
            }
        };
        match method {
            FrameMethod::Gridding => gridding_result(&data, &plans.plans[o], &plans.weights[o], CoilCombine::Rss),
            FrameMethod::CgSense {
                iters,
                density_weighting,
            } => cg_sense(&data, &encoding(*density_weighting)?, *iters),
            FrameMethod::L1Wavelet(p) => fista_l1wavelet(&data, &encoding(false)?, p),
        }
    };
    if parallel {
        frames.par_iter().map(|&f| run(f)).collect()
    } else {
        frames.iter().map(|&f| run(f)).collect()
    }
}
