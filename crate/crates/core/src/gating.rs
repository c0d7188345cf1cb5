//! Self-gating from the k-space centre of every arm, cardiac cycle
//! detection and segmented binning of multi-orientation acquisitions.

use ndarray::Array2;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::acquisition::RawAcquisition;
use crate::coils::{rss_combine, UnionGridder};
use crate::error::{Error, Result};
use crate::types::C64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatingParams {
    /// Moving-median window for detrending, ms.
    pub detrend_window: f64,
    /// Band-pass for peak picking, Hz.
    pub band: (f64, f64),
    /// ms
    pub min_peak_distance: f64,
    /// Peaks below this fraction of the 95th percentile of the band-passed
    /// signal are ignored.
    pub peak_fraction: f64,
    /// Peaks are refined to the maximum of a wider-band signal within this
    /// many ms.
    pub refine_window: f64,
    /// Upper cutoff of the refinement signal, Hz.
    pub refine_cutoff: f64,
}

impl Default for GatingParams {
    fn default() -> Self {
        Self {
            detrend_window: 2000.0,
            band: (0.5, 3.0),
            min_peak_distance: 400.0,
            peak_fraction: 0.3,
            refine_window: 100.0,
            refine_cutoff: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatingSignal {
    /// rss-over-coils magnitude of the first sample of every arm, in
    /// acquisition order (frame-major).
    pub dc_per_arm: Vec<f64>,
    /// `dc_per_arm` minus its moving median.
    pub detrended: Vec<f64>,
    /// ms
    pub sample_times: Vec<f64>,
}

impl GatingSignal {
    /// Spacing of consecutive arms, ms.
    pub fn interval(&self) -> f64 {
        if self.sample_times.len() < 2 {
            return 0.0;
        }
        (self.sample_times[self.sample_times.len() - 1] - self.sample_times[0]) / (self.sample_times.len() - 1) as f64
    }

    pub fn mean_dc(&self) -> f64 {
        self.dc_per_arm.iter().sum::<f64>() / self.dc_per_arm.len().max(1) as f64
    }
}

pub fn extract_gating(raw: &RawAcquisition, params: &GatingParams) -> Result<GatingSignal> {
    if !raw.trajectory.starts_at_center() {
        return Err(Error::Gating(
            "self-gating needs every arm to start at the k-space centre".into(),
        ));
    }
    let arms = raw.arms_per_frame();
    let mut dc = Vec::with_capacity(raw.total_arms());
    let mut times = Vec::with_capacity(raw.total_arms());
    for f in 0..raw.n_frames {
        for a in 0..arms {
            let e: f64 = (0..raw.n_coils)
                .map(|c| {
                    let v = raw.arm(f, c, a)[0];
                    (v.re as f64).powi(2) + (v.im as f64).powi(2)
                })
                .sum();
            dc.push(e.sqrt());
            times.push(raw.arm_time(f, a));
        }
    }
    let dt = raw.frame_dt / arms as f64;
    let half = ((params.detrend_window / dt) / 2.0).round().max(1.0) as usize;
    let median = moving_median(&dc, half);
    let detrended = dc.iter().zip(&median).map(|(v, m)| v - m).collect();
    Ok(GatingSignal {
        dc_per_arm: dc,
        detrended,
        sample_times: times,
    })
}

/// Median over `[i - half, i + half]`, truncated at the ends.
pub fn moving_median(x: &[f64], half: usize) -> Vec<f64> {
    (0..x.len())
        .into_par_iter()
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(x.len());
            let mut w: Vec<f64> = x[lo..hi].to_vec();
            w.sort_by(|a, b| a.total_cmp(b));
            let n = w.len();
            if n % 2 == 1 {
                w[n / 2]
            } else {
                0.5 * (w[n / 2 - 1] + w[n / 2])
            }
        })
        .collect()
}

/// Zero-phase FFT band-pass; `fs` in Hz.
pub fn band_pass(x: &[f64], fs: f64, low: f64, high: f64) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<C64> = x.iter().map(|&v| C64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (i, v) in buf.iter_mut().enumerate() {
        let bin = i.min(n - i) as f64;
        let f = bin * fs / n as f64;
        if f < low || f > high {
            *v = C64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|v| v.re / n as f64).collect()
}

/// Frequency (Hz) of the largest non-DC bin of the amplitude spectrum.
pub fn dominant_frequency(x: &[f64], fs: f64) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n.max(1) as f64;
    let mut buf: Vec<C64> = x.iter().map(|&v| C64::new(v - mean, 0.0)).collect();
    FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buf);
    let k = (1..=n / 2)
        .max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()))
        .unwrap_or(0);
    k as f64 * fs / n as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleDetection {
    /// Peak times, ms; consecutive peaks bound one cardiac cycle.
    pub boundaries: Vec<f64>,
    /// Indices of the peaks in the gating signal.
    pub peak_indices: Vec<usize>,
}

impl CycleDetection {
    pub fn spacings(&self) -> Vec<f64> {
        self.boundaries.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

pub fn detect_cycles(signal: &GatingSignal, params: &GatingParams) -> Result<CycleDetection> {
    let dt = signal.interval();
    if signal.detrended.len() < 3 || dt <= 0.0 {
        return Err(Error::Gating("gating signal too short".into()));
    }
    let fs = 1000.0 / dt;
    let filtered = band_pass(&signal.detrended, fs, params.band.0, params.band.1);
    let refine = band_pass(&signal.detrended, fs, params.band.0, params.refine_cutoff);

    let mut sorted: Vec<f64> = filtered.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let p95 = sorted[((sorted.len() - 1) as f64 * 0.95) as usize];
    let floor = params.peak_fraction * p95;

    let mut candidates: Vec<usize> = (1..filtered.len() - 1)
        .filter(|&i| filtered[i] > filtered[i - 1] && filtered[i] >= filtered[i + 1])
        .filter(|&i| filtered[i] > floor && filtered[i] > 0.0)
        .collect();
    candidates.sort_by(|&a, &b| filtered[b].total_cmp(&filtered[a]).then(a.cmp(&b)));
    let min_sep = (params.min_peak_distance / dt).ceil() as usize;
    let mut peaks: Vec<usize> = Vec::new();
    for c in candidates {
        if peaks.iter().all(|&p| p.abs_diff(c) >= min_sep) {
            peaks.push(c);
        }
    }
    peaks.sort_unstable();
    if peaks.len() < 2 {
        return Err(Error::Gating(format!(
            "found {} cardiac peak(s); acquire at least two full cycles",
            peaks.len()
        )));
    }

    let w = (params.refine_window / dt).round() as usize;
    let refined: Vec<usize> = peaks
        .iter()
        .map(|&p| {
            let lo = p.saturating_sub(w);
            let hi = (p + w + 1).min(refine.len());
            (lo..hi)
                .max_by(|&a, &b| refine[a].total_cmp(&refine[b]).then(b.cmp(&a)))
                .unwrap()
        })
        .collect();
    Ok(CycleDetection {
        boundaries: refined.iter().map(|&i| signal.sample_times[i]).collect(),
        peak_indices: refined,
    })
}

/// Cycles used for binning: consecutive boundary pairs, plus one
/// extrapolated cycle at each end when it fits inside `[0, duration]`.
pub fn binning_cycles(boundaries: &[f64], duration: f64) -> Vec<(f64, f64)> {
    let mut b = boundaries.to_vec();
    if b.len() >= 2 {
        let first = b[0] - (b[1] - b[0]);
        if first >= 0.0 {
            b.insert(0, first);
        }
        let n = b.len();
        let last = b[n - 1] + (b[n - 1] - b[n - 2]);
        if last <= duration {
            b.push(last);
        }
    }
    b.windows(2).map(|w| (w[0], w[1])).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub phase: usize,
    pub arm_count: usize,
    pub distinct_arms: usize,
    pub completeness: f64,
    pub missing_orientations: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentedSet {
    pub phase_count: usize,
    /// ms
    pub cycles: Vec<(f64, f64)>,
    /// Per phase: every assigned `(frame, arm)`.
    pub assignments: Vec<Vec<(usize, usize)>>,
    pub phases: Vec<PhaseSummary>,
}

impl SegmentedSet {
    pub fn completeness(&self) -> Vec<f64> {
        self.phases.iter().map(|p| p.completeness).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.phases.iter().all(|p| p.completeness >= 1.0)
    }
}

/// Assigns every arm inside a detected cycle to the phase bin of its
/// fractional position in that cycle.
pub fn segment(raw: &RawAcquisition, boundaries: &[f64], phase_count: usize) -> Result<SegmentedSet> {
    if phase_count == 0 {
        return Err(Error::InvalidConfig("phase_count must be at least 1".into()));
    }
    let duration = raw.n_frames as f64 * raw.frame_dt;
    let cycles = binning_cycles(boundaries, duration);
    let arms = raw.arms_per_frame();
    let n_orient = raw.trajectory.n_orientations();
    let mut assignments = vec![Vec::new(); phase_count];
    for f in 0..raw.n_frames {
        for a in 0..arms {
            let t = raw.arm_time(f, a);
            let k = cycles.partition_point(|c| c.0 <= t);
            if k == 0 || t >= cycles[k - 1].1 {
                continue;
            }
            let (s, e) = cycles[k - 1];
            let p = (((t - s) / (e - s)) * phase_count as f64) as usize;
            assignments[p.min(phase_count - 1)].push((f, a));
        }
    }
    let phases = assignments
        .iter()
        .enumerate()
        .map(|(p, list)| {
            let mut seen = vec![false; n_orient * arms];
            for &(f, a) in list {
                seen[raw.orientation(f) * arms + a] = true;
            }
            let distinct = seen.iter().filter(|&&s| s).count();
            let missing_orientations = (0..n_orient)
                .filter(|&o| seen[o * arms..(o + 1) * arms].iter().any(|&s| !s))
                .collect();
            PhaseSummary {
                phase: p,
                arm_count: list.len(),
                distinct_arms: distinct,
                completeness: distinct as f64 / seen.len() as f64,
                missing_orientations,
            }
        })
        .collect();
    Ok(SegmentedSet {
        phase_count,
        cycles,
        assignments,
        phases,
    })
}

/// Fully sampled image per phase: per coil and per union arm the assigned
/// occurrences are averaged, then gridded with union density weights.
pub struct SegmentedImages {
    /// `[phase][coil]`
    pub coil_images: Vec<Vec<Array2<C64>>>,
    /// root-sum-of-squares per phase
    pub combined: Vec<Array2<f64>>,
}

pub fn bin_segmented(
    raw: &RawAcquisition,
    boundaries: &[f64],
    phase_count: usize,
    gridder: &UnionGridder,
) -> Result<(SegmentedSet, SegmentedImages)> {
    let set = segment(raw, boundaries, phase_count)?;
    if let Some(p) = set.phases.iter().find(|p| p.completeness < 1.0) {
        return Err(Error::IncompleteSegment {
            phase: p.phase,
            missing: p.missing_orientations.clone(),
        });
    }
    let arms = raw.arms_per_frame();
    let spa = raw.samples_per_arm();
    let n_union = raw.trajectory.n_orientations() * arms;
    let coil_images: Vec<Vec<Array2<C64>>> = set
        .assignments
        .par_iter()
        .map(|list| {
            let mut counts = vec![0usize; n_union];
            for &(f, a) in list {
                counts[raw.orientation(f) * arms + a] += 1;
            }
            (0..raw.n_coils)
                .map(|c| {
                    let mut pooled = vec![C64::new(0.0, 0.0); n_union * spa];
                    for &(f, a) in list {
                        let slot = raw.orientation(f) * arms + a;
                        for (d, s) in pooled[slot * spa..(slot + 1) * spa].iter_mut().zip(raw.arm(f, c, a)) {
                            *d += C64::new(s.re as f64, s.im as f64);
                        }
                    }
                    for (slot, chunk) in pooled.chunks_mut(spa).enumerate() {
                        let inv = 1.0 / counts[slot] as f64;
                        chunk.iter_mut().for_each(|v| *v *= inv);
                    }
                    gridder.grid(&pooled)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let combined = coil_images.iter().map(|imgs| rss_combine(imgs)).collect();
    Ok((set, SegmentedImages { coil_images, combined }))
}
