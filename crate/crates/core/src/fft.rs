//! Thin 2D wrapper around `rustfft`. Transforms are unnormalized.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::types::C64;

#[derive(Clone)]
pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .finish()
    }
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    /// `X[u,v] = sum x[m,n] exp(-2 pi i (u m / rows + v n / cols))`
    pub fn forward(&self, data: &mut [C64]) {
        self.apply(data, &self.row_fwd, &self.col_fwd);
    }

    /// Unnormalized inverse (positive exponent).
    pub fn inverse(&self, data: &mut [C64]) {
        self.apply(data, &self.row_inv, &self.col_inv);
    }

    fn apply(&self, data: &mut [C64], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.len(), self.rows * self.cols);
        let chunk = self.cols * 16;
        data.par_chunks_mut(chunk).for_each(|c| row.process(c));
        let mut t = transpose(data, self.rows, self.cols);
        let chunk = self.rows * 16;
        t.par_chunks_mut(chunk).for_each(|c| col.process(c));
        let back = transpose(&t, self.cols, self.rows);
        data.copy_from_slice(&back);
    }
}

fn transpose(src: &[C64], rows: usize, cols: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); src.len()];
    const B: usize = 32;
    for rb in (0..rows).step_by(B) {
        for cb in (0..cols).step_by(B) {
            for r in rb..(rb + B).min(rows) {
                for c in cb..(cb + B).min(cols) {
                    out[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn matches_direct_dft_on_rectangular_grid() {
        let (rows, cols) = (6, 10);
        let x: Vec<C64> = (0..rows * cols)
            .map(|i| C64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let mut y = x.clone();
        Fft2::new(rows, cols).forward(&mut y);
        for u in 0..rows {
            for v in 0..cols {
                let mut acc = C64::new(0.0, 0.0);
                for m in 0..rows {
                    for n in 0..cols {
                        let ph = -2.0 * PI * ((u * m) as f64 / rows as f64 + (v * n) as f64 / cols as f64);
                        acc += x[m * cols + n] * C64::from_polar(1.0, ph);
                    }
                }
                assert!((acc - y[u * cols + v]).norm() < 1e-10);
            }
        }
        Fft2::new(rows, cols).inverse(&mut y);
        for (a, b) in x.iter().zip(&y) {
            assert!((a * (rows * cols) as f64 - b).norm() < 1e-9);
        }
    }
}
