//! Agreement and image quality metrics.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    pub n: usize,
    pub bias: f64,
    /// Sample standard deviation of the differences.
    pub sd: f64,
    pub loa_low: f64,
    pub loa_high: f64,
}

/// Bias and 95% limits of agreement of `a - b`.
pub fn bland_altman(a: &[f64], b: &[f64]) -> Result<BlandAltman> {
    if a.len() != b.len() {
        return Err(Error::Stats(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Stats("at least two pairs are required".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let bias = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - bias).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    Ok(BlandAltman {
        n,
        bias,
        sd,
        loa_low: bias - 1.96 * sd,
        loa_high: bias + 1.96 * sd,
    })
}

/// Per-pair CSV: `a,b,mean,difference`.
pub fn bland_altman_csv(a: &[f64], b: &[f64]) -> Result<String> {
    bland_altman(a, b)?;
    let mut out = String::from("a,b,mean,difference\n");
    for (x, y) in a.iter().zip(b) {
        writeln!(out, "{x},{y},{},{}", 0.5 * (x + y), x - y).expect("write to string");
    }
    Ok(out)
}

fn same_len(x: usize, y: usize) -> Result<()> {
    if x != y {
        return Err(Error::Stats(format!("shape mismatch: {x} vs {y} elements")));
    }
    Ok(())
}

/// `||x - ref|| / ||ref||`.
pub fn nrmse(x: &[f64], reference: &[f64]) -> Result<f64> {
    same_len(x.len(), reference.len())?;
    let den: f64 = reference.iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(Error::Stats("reference has zero norm".into()));
    }
    let num: f64 = x.iter().zip(reference).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((num / den).sqrt())
}

/// `20 log10(max|ref| / rmse)`; infinite for identical inputs.
pub fn psnr(x: &[f64], reference: &[f64]) -> Result<f64> {
    same_len(x.len(), reference.len())?;
    if x.is_empty() {
        return Err(Error::Stats("empty input".into()));
    }
    let peak = reference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mse = x.iter().zip(reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64;
    Ok(20.0 * (peak / mse.sqrt()).log10())
}

/// Overlap of one class; 1 when neither mask contains it.
pub fn dice(a: &[u8], b: &[u8], class: u8) -> Result<f64> {
    same_len(a.len(), b.len())?;
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        let (ia, ib) = (x == class, y == class);
        na += ia as usize;
        nb += ib as usize;
        inter += (ia && ib) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}
