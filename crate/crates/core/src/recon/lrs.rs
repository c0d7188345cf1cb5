use nalgebra::DMatrix;
use ndarray::Array2;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::operator::{vec_norm, EncodingOperator};
use super::wavelet::soft_threshold;
use super::{check_finite, Method, ReconResult};
use crate::error::{Error, Result};
use crate::types::C64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrsParams {
    /// Singular value threshold as a fraction of the largest one.
    pub lambda_l: f64,
    /// Temporal-spectrum threshold as a fraction of the largest temporal
    /// Fourier coefficient of the current iterate.
    pub lambda_s: f64,
    pub iters: usize,
    /// Stops once the relative change of the iterate drops below this.
    pub tol: f64,
    pub power_iters: usize,
}

impl Default for LrsParams {
    fn default() -> Self {
        Self {
            lambda_l: 0.02,
            lambda_s: 0.05,
            iters: 30,
            tol: 1e-6,
            power_iters: 12,
        }
    }
}

pub fn series_norm(x: &[Array2<C64>]) -> f64 {
    x.iter()
        .flat_map(|a| a.iter())
        .map(|v| v.norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Orthonormal DFT along the frame axis of every pixel.
fn temporal_fft(x: &[Array2<C64>], inverse: bool) -> Vec<Array2<C64>> {
    let nt = x.len();
    let dim = x[0].dim();
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(nt)
    } else {
        planner.plan_fft_forward(nt)
    };
    let scale = 1.0 / (nt as f64).sqrt();
    let npix = dim.0 * dim.1;
    let mut buf = vec![C64::new(0.0, 0.0); npix * nt];
    for (t, frame) in x.iter().enumerate() {
        for (p, v) in frame.iter().enumerate() {
            buf[p * nt + t] = *v;
        }
    }
    buf.par_chunks_mut(nt * 64).for_each(|c| fft.process(c));
    let mut out = vec![Array2::zeros(dim); nt];
    for (t, frame) in out.iter_mut().enumerate() {
        for (p, v) in frame.iter_mut().enumerate() {
            *v = buf[p * nt + t] * scale;
        }
    }
    out
}

fn casorati(x: &[Array2<C64>]) -> DMatrix<C64> {
    let npix = x[0].len();
    DMatrix::from_fn(npix, x.len(), |p, t| {
        x[t].as_slice_memory_order().expect("standard layout")[p]
    })
}

fn uncasorati(m: &DMatrix<C64>, dim: (usize, usize)) -> Vec<Array2<C64>> {
    (0..m.ncols())
        .map(|t| Array2::from_shape_vec(dim, m.column(t).iter().copied().collect()).expect("frame shape"))
        .collect()
}

/// Singular values of the Casorati matrix of a series, largest first.
pub fn casorati_singular_values(x: &[Array2<C64>]) -> Vec<f64> {
    let mut s: Vec<f64> = casorati(x).singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

fn svt(x: &[Array2<C64>], fraction: f64) -> Vec<Array2<C64>> {
    let mut svd = casorati(x).svd(true, true);
    let top = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let t = fraction * top;
    svd.singular_values.iter_mut().for_each(|s| *s = (*s - t).max(0.0));
    let m = svd.recompose().expect("u and v were computed");
    uncasorati(&m, x[0].dim())
}

fn lipschitz(ops: &[EncodingOperator], iters: usize) -> Result<f64> {
    let mut seen: Vec<&EncodingOperator> = Vec::new();
    for op in ops {
        if !seen.iter().any(|o| o.shares_encoding(op)) {
            seen.push(op);
        }
    }
    let norms = seen
        .par_iter()
        .map(|op| op.normal_norm(iters, 0))
        .collect::<Result<Vec<_>>>()?;
    Ok(norms.into_iter().fold(0.0, f64::max))
}

/// Low-rank plus sparse decomposition of a frame series `M = L + S`:
/// singular value thresholding of the Casorati matrix for `L`, soft
/// thresholding of the temporal spectrum for `S`, and a gradient step on
/// the data consistency of `L + S` each iteration.
pub fn lrs(data: &[Vec<C64>], ops: &[EncodingOperator], params: &LrsParams) -> Result<ReconResult> {
    if data.len() < 2 {
        return Err(Error::InvalidConfig(
            "low rank plus sparse needs at least two frames".into(),
        ));
    }
    if ops.len() != data.len() {
        return Err(Error::shape("lrs operators", data.len(), ops.len()));
    }
    if !(params.lambda_l >= 0.0) || !(params.lambda_s >= 0.0) {
        return Err(Error::InvalidConfig("thresholds must be non-negative".into()));
    }
    let n = ops[0].grid_size();
    if ops.iter().any(|o| o.grid_size() != n) {
        return Err(Error::InvalidConfig("operators disagree on grid size".into()));
    }
    for d in data {
        check_finite(d)?;
    }
    let d: Vec<Vec<C64>> = data
        .iter()
        .zip(ops)
        .map(|(d, op)| op.weight_data(d))
        .collect::<Result<_>>()?;
    let lip = lipschitz(ops, params.power_iters)?;
    if !(lip > 0.0) {
        return Err(Error::InvalidConfig("encoding operator is zero".into()));
    }
    let step = 0.9 / lip;
    let nt = data.len();

    let mut m: Vec<Array2<C64>> = ops
        .par_iter()
        .zip(&d)
        .map(|(op, d)| op.adjoint(d).map(|x| x * C64::new(step, 0.0)))
        .collect::<Result<_>>()?;
    let mut l_prev = m.clone();
    let mut s: Vec<Array2<C64>> = vec![Array2::zeros((n, n)); nt];
    let mut l = m.clone();
    let mut residuals = vec![d.iter().map(|v| vec_norm(v).powi(2)).sum::<f64>().sqrt()];

    for _ in 0..params.iters {
        let m_minus_s: Vec<Array2<C64>> = m.iter().zip(&s).map(|(a, b)| a - b).collect();
        l = svt(&m_minus_s, params.lambda_l);
        let s_threshold = params.lambda_s
            * temporal_fft(&m, false)
                .iter()
                .flat_map(|a| a.iter())
                .map(|v| v.norm())
                .fold(0.0, f64::max);
        let m_minus_l: Vec<Array2<C64>> = m.iter().zip(&l_prev).map(|(a, b)| a - b).collect();
        let spectrum = temporal_fft(&m_minus_l, false)
            .into_iter()
            .map(|a| a.mapv(|v| soft_threshold(v, s_threshold)))
            .collect::<Vec<_>>();
        s = temporal_fft(&spectrum, true);
        let x: Vec<Array2<C64>> = l.iter().zip(&s).map(|(a, b)| a + b).collect();
        let steps: Vec<(Array2<C64>, f64)> = ops
            .par_iter()
            .zip(&x)
            .zip(&d)
            .map(|((op, x), d)| {
                let mut r = op.forward(x.view())?;
                r.iter_mut().zip(d).for_each(|(a, b)| *a -= b);
                let res = r.iter().map(|v| v.norm_sqr()).sum::<f64>();
                let g = op.adjoint(&r)?;
                Ok((x - &(g * C64::new(step, 0.0)), res))
            })
            .collect::<Result<_>>()?;
        let residual = steps.iter().map(|(_, r)| r).sum::<f64>().sqrt();
        if !residual.is_finite() {
            return Err(Error::NonFinite("low rank plus sparse iterate".into()));
        }
        residuals.push(residual);
        let m_next: Vec<Array2<C64>> = steps.into_iter().map(|(a, _)| a).collect();
        let change = m_next
            .iter()
            .zip(&m)
            .map(|(a, b)| (a - b).mapv(|v| v.norm_sqr()).sum())
            .sum::<f64>()
            .sqrt();
        let scale = series_norm(&m);
        m = m_next;
        l_prev = l.clone();
        if scale > 0.0 && change < params.tol * scale {
            break;
        }
    }
    let images: Vec<Array2<C64>> = l.iter().zip(&s).map(|(a, b)| a + b).collect();
    Ok(ReconResult {
        method: Method::LowRankSparse,
        images,
        residual_history: residuals,
        objective_history: Vec::new(),
        parameters: json!({
            "lambda_l": params.lambda_l,
            "lambda_s": params.lambda_s,
            "iters": params.iters,
            "step": step,
        }),
        low_rank: Some(l),
        sparse: Some(s),
    })
}
