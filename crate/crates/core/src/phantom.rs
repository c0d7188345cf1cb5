//! Analytic beating-heart phantom, synthetic coil sensitivities and
//! multi-coil spiral acquisition.

use ndarray::{Array2, ArrayView2};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::acquisition::RawAcquisition;
use crate::error::{Error, Result};
use crate::nufft::GriddingPlan;
use crate::trajectory::Trajectory;
use crate::types::{label, ImageSeries, SegmentationMask, C64};

pub mod intensity {
    pub const BLOOD: f64 = 1.0;
    pub const MYOCARDIUM: f64 = 0.35;
    pub const CHEST_WALL: f64 = 0.6;
    pub const FAT: f64 = 0.8;
    pub const LUNG: f64 = 0.0;
}

/// Minor/major axis ratio of the ventricle ellipses.
pub const LV_ASPECT: f64 = 0.9;
/// Apex slice radii relative to the base slice.
pub const APEX_SCALE: f64 = 0.4;
/// Edge blur, pixels.
pub const BLUR_SIGMA: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub grid_size: usize,
    /// mm
    pub pixel_size: f64,
    pub n_slices: usize,
    /// mm
    pub slice_thickness: f64,
    /// ms
    pub heart_period: f64,
    pub n_frames: usize,
    /// ms
    pub frame_dt: f64,
    /// LV endocardial semi-major axis at end-diastole, basal slice, mm.
    pub lv_radius_ed: f64,
    /// Same at end-systole.
    pub lv_radius_es: f64,
    /// Myocardial wall thickness at end-diastole, basal slice, mm.
    pub wall_thickness: f64,
    /// Position of end-systole within the cycle, fraction of the period.
    pub systole_fraction: f64,
    /// Each cycle length is drawn uniformly from `period * (1 +- jitter)`.
    pub arrhythmia_jitter: f64,
    /// mm
    pub breathing_amplitude: f64,
    /// Breathing period in heart periods.
    pub breathing_periods: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            grid_size: 128,
            pixel_size: 1.29,
            n_slices: 10,
            slice_thickness: 8.0,
            heart_period: 1000.0,
            n_frames: 40,
            frame_dt: 48.0,
            lv_radius_ed: 24.0,
            lv_radius_es: 24.0 * 0.4f64.sqrt(),
            wall_thickness: 7.0,
            systole_fraction: 0.35,
            arrhythmia_jitter: 0.0,
            breathing_amplitude: 0.0,
            breathing_periods: 10.0,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    /// Sets the end-systolic radius so that the analytic stack volume has the
    /// requested ejection fraction (0..1).
    pub fn with_ejection_fraction(mut self, ef: f64) -> Self {
        self.lv_radius_es = self.lv_radius_ed * (1.0 - ef).sqrt();
        self
    }

    pub fn extent(&self) -> f64 {
        self.grid_size as f64 * self.pixel_size
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.grid_size < 8 || self.n_slices == 0 || self.n_frames == 0 {
            return bad("grid_size >= 8, n_slices >= 1 and n_frames >= 1 required".into());
        }
        if !(self.pixel_size > 0.0 && self.slice_thickness > 0.0) {
            return bad("pixel_size and slice_thickness must be positive".into());
        }
        if !(self.frame_dt > 0.0) || !(self.heart_period >= 2.0 * self.frame_dt) {
            return bad(format!(
                "need frame_dt > 0 and heart_period >= 2 frame_dt (got {} and {})",
                self.frame_dt, self.heart_period
            ));
        }
        let half = self.extent() / 2.0;
        if !(self.lv_radius_es > 0.0 && self.lv_radius_es <= self.lv_radius_ed && self.lv_radius_ed < half) {
            return bad(format!(
                "need 0 < lv_radius_es <= lv_radius_ed < {half} mm (got {} and {})",
                self.lv_radius_es, self.lv_radius_ed
            ));
        }
        if !(self.wall_thickness > 0.0) {
            return bad("wall_thickness must be positive".into());
        }
        if !(0.0..1.0).contains(&self.arrhythmia_jitter) {
            return bad("arrhythmia_jitter must be in [0, 1)".into());
        }
        if !(self.systole_fraction > 0.0 && self.systole_fraction < 1.0) {
            return bad("systole_fraction must be in (0, 1)".into());
        }
        if self.breathing_amplitude != 0.0 && self.breathing_periods < 10.0 {
            return bad("breathing period must be at least 10 heart periods".into());
        }
        let reach = Anatomy::new(self).max_reach() + self.breathing_amplitude.abs();
        if reach > 0.42 * self.extent() {
            return Err(Error::InvalidConfig(format!(
                "heart extends {reach:.1} mm from the grid center, beyond the body support ({:.1} mm)",
                0.42 * self.extent()
            )));
        }
        Ok(())
    }
}

/// Fixed geometry derived from a config.
#[derive(Clone, Debug)]
struct Anatomy {
    r_ed: f64,
    /// fixed annulus area at scale 1, mm^2
    wall_area: f64,
    center: [f64; 2],
    body: [f64; 2],
    fat: f64,
    lung_center: [f64; 2],
    lung: [f64; 2],
}

impl Anatomy {
    fn new(cfg: &PhantomConfig) -> Self {
        let e = cfg.extent();
        let r_ed = cfg.lv_radius_ed;
        let outer = r_ed + cfg.wall_thickness;
        Self {
            r_ed,
            wall_area: PI * LV_ASPECT * (outer * outer - r_ed * r_ed),
            center: [0.06 * e, 0.03 * e],
            body: [0.47 * e, 0.38 * e],
            fat: 0.025 * e,
            lung_center: [0.25 * e, -0.04 * e],
            lung: [0.15 * e, 0.26 * e],
        }
    }

    fn outer_radius(&self, r: f64) -> f64 {
        (r * r + self.wall_area / (PI * LV_ASPECT)).sqrt()
    }

    fn rv_center(&self, scale: f64) -> [f64; 2] {
        let o = self.outer_radius(self.r_ed) * scale;
        [self.center[0] - 0.75 * o, self.center[1] - 0.1 * o]
    }

    /// Largest distance of the heart from the grid center at ED, mm.
    fn max_reach(&self) -> f64 {
        let o = self.outer_radius(self.r_ed);
        let rv = self.rv_center(1.0);
        (self.center[0].abs() + o)
            .max(rv[0].abs() + 1.1 * o)
            .max(rv[1].abs() + o)
            .max(self.center[1].abs() + o)
    }
}

fn inside(p: [f64; 2], c: [f64; 2], a: f64, b: f64) -> bool {
    let dx = (p[0] - c[0]) / a;
    let dy = (p[1] - c[1]) / b;
    dx * dx + dy * dy <= 1.0
}

/// Slice scale from base (1) to apex.
pub fn slice_scale(slice: usize, n_slices: usize) -> f64 {
    if n_slices <= 1 {
        1.0
    } else {
        1.0 - (1.0 - APEX_SCALE) * slice as f64 / (n_slices - 1) as f64
    }
}

/// Cardiac timing: cycle start times and lengths, ms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CardiacTiming {
    pub starts: Vec<f64>,
    pub lengths: Vec<f64>,
}

impl CardiacTiming {
    fn simulate(cfg: &PhantomConfig, duration: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (mut starts, mut lengths) = (Vec::new(), Vec::new());
        let mut t = 0.0;
        while t <= duration {
            let u: f64 = if cfg.arrhythmia_jitter > 0.0 {
                rng.random_range(-1.0..=1.0)
            } else {
                0.0
            };
            let len = cfg.heart_period * (1.0 + cfg.arrhythmia_jitter * u);
            starts.push(t);
            lengths.push(len);
            t += len;
        }
        Self { starts, lengths }
    }

    /// Cycle index and fractional phase at time `t`.
    pub fn phase_at(&self, t: f64) -> (usize, f64) {
        let k = self.starts.partition_point(|&s| s <= t).saturating_sub(1);
        (k, ((t - self.starts[k]) / self.lengths[k]).clamp(0.0, 1.0))
    }
}

/// Raised-cosine contraction: `r_ed` at phase 0, `r_es` at the systolic
/// fraction, back to `r_ed` at phase 1.
pub fn lv_radius(r_ed: f64, r_es: f64, systole_fraction: f64, phase: f64) -> f64 {
    let w = if phase < systole_fraction {
        0.5 * (1.0 - (PI * phase / systole_fraction).cos())
    } else {
        0.5 * (1.0 + (PI * (phase - systole_fraction) / (1.0 - systole_fraction)).cos())
    };
    r_ed - (r_ed - r_es) * w
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicPhantom {
    pub config: PhantomConfig,
    pub images: ImageSeries<f64>,
    pub masks: SegmentationMask,
    /// LV blood pool volume per frame, mL, from the analytic ellipse areas.
    pub true_volume_curve: Vec<f64>,
    /// First frame of each cardiac cycle.
    pub cycle_boundaries: Vec<usize>,
    pub timing: CardiacTiming,
}

impl DynamicPhantom {
    /// Frame center time, ms.
    pub fn frame_time(&self, frame: usize) -> f64 {
        (frame as f64 + 0.5) * self.config.frame_dt
    }

    /// Analytic LV blood-pool area in one slice, mm^2.
    pub fn lv_area(&self, slice: usize, frame: usize) -> f64 {
        let r = self.lv_radius_at(self.frame_time(frame)) * slice_scale(slice, self.config.n_slices);
        PI * LV_ASPECT * r * r
    }

    pub fn lv_radius_at(&self, t: f64) -> f64 {
        let (_, phase) = self.timing.phase_at(t);
        lv_radius(
            self.config.lv_radius_ed,
            self.config.lv_radius_es,
            self.config.systole_fraction,
            phase,
        )
    }

    /// Analytic end-diastolic and end-systolic stack volumes, mL.
    pub fn analytic_edv_esv(&self) -> (f64, f64) {
        let c = &self.config;
        let s2: f64 = (0..c.n_slices).map(|s| slice_scale(s, c.n_slices).powi(2)).sum();
        let v = |r: f64| PI * LV_ASPECT * r * r * s2 * c.slice_thickness * 1e-3;
        (v(c.lv_radius_ed), v(c.lv_radius_es))
    }
}

pub fn generate_phantom(config: &PhantomConfig) -> Result<DynamicPhantom> {
    config.validate()?;
    let cfg = config.clone();
    let n = cfg.grid_size;
    let duration = cfg.n_frames as f64 * cfg.frame_dt;
    let timing = CardiacTiming::simulate(&cfg, duration);
    let anatomy = Anatomy::new(&cfg);

    let mut images = ImageSeries::<f64>::zeros(n, n, cfg.n_frames, cfg.n_slices, cfg.pixel_size, cfg.slice_thickness);
    let mut masks = SegmentationMask::zeros(n, n, cfg.n_frames, cfg.n_slices, cfg.pixel_size, cfg.slice_thickness);
    let frame_len = n * n;

    let partial = DynamicPhantom {
        config: cfg.clone(),
        images: ImageSeries::zeros(0, 0, 0, 0, cfg.pixel_size, cfg.slice_thickness),
        masks: SegmentationMask::zeros(0, 0, 0, 0, cfg.pixel_size, cfg.slice_thickness),
        true_volume_curve: Vec::new(),
        cycle_boundaries: Vec::new(),
        timing: timing.clone(),
    };

    images
        .data
        .par_chunks_mut(frame_len)
        .zip(masks.data.par_chunks_mut(frame_len))
        .enumerate()
        .for_each(|(i, (img, msk))| {
            let (slice, frame) = (i / cfg.n_frames, i % cfg.n_frames);
            let t = partial.frame_time(frame);
            let r = partial.lv_radius_at(t);
            let shift = cfg.breathing_amplitude * (2.0 * PI * t / (cfg.breathing_periods * cfg.heart_period)).sin();
            render_slice(&cfg, &anatomy, slice_scale(slice, cfg.n_slices), r, shift, img, msk);
            blur(img, n, BLUR_SIGMA);
        });

    let true_volume_curve = (0..cfg.n_frames)
        .map(|f| (0..cfg.n_slices).map(|s| partial.lv_area(s, f)).sum::<f64>() * cfg.slice_thickness * 1e-3)
        .collect();
    let mut cycle_boundaries: Vec<usize> = timing
        .starts
        .iter()
        .filter(|&&s| s < duration)
        .map(|&s| ((s / cfg.frame_dt).round() as usize).min(cfg.n_frames - 1))
        .collect();
    cycle_boundaries.dedup();

    Ok(DynamicPhantom {
        images,
        masks,
        true_volume_curve,
        cycle_boundaries,
        ..partial
    })
}

fn render_slice(cfg: &PhantomConfig, an: &Anatomy, scale: f64, r: f64, shift: f64, img: &mut [f64], msk: &mut [u8]) {
    let n = cfg.grid_size;
    let half = n as f64 / 2.0;
    let c = [an.center[0], an.center[1] + shift];
    let r_in = r * scale;
    let r_out = an.outer_radius(r) * scale;
    let rv_c = {
        let base = an.rv_center(scale);
        [base[0], base[1] + shift]
    };
    let rv_a = 1.1 * an.outer_radius(r) * scale;
    let rv_b = 0.95 * an.outer_radius(r) * scale;
    let guard = 2.0;
    for row in 0..n {
        for col in 0..n {
            let p = [
                (col as f64 - half) * cfg.pixel_size,
                (row as f64 - half) * cfg.pixel_size,
            ];
            let i = row * n + col;
            let (lab, val) = if inside(p, c, r_in, LV_ASPECT * r_in) {
                (label::LV, intensity::BLOOD)
            } else if inside(p, c, r_out, LV_ASPECT * r_out) {
                (label::MYOCARDIUM, intensity::MYOCARDIUM)
            } else if inside(p, rv_c, rv_a, rv_b) && !inside(p, c, r_out + guard, LV_ASPECT * r_out + guard) {
                (label::RV, intensity::BLOOD)
            } else {
                let body = inside(p, [0.0, 0.0], an.body[0], an.body[1]);
                let core = inside(p, [0.0, 0.0], an.body[0] - an.fat, an.body[1] - an.fat);
                let lung = inside(p, an.lung_center, an.lung[0], an.lung[1])
                    || inside(p, [-an.lung_center[0], an.lung_center[1]], an.lung[0], an.lung[1]);
                let v = if !body {
                    0.0
                } else if !core {
                    intensity::FAT
                } else if lung {
                    intensity::LUNG
                } else {
                    intensity::CHEST_WALL
                };
                (label::BACKGROUND, v)
            };
            msk[i] = lab;
            img[i] = val;
        }
    }
}

/// Separable Gaussian blur with clamped edges.
fn blur(img: &mut [f64], n: usize, sigma: f64) {
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.iter().map(|t| t / total).collect();
    let mut tmp = vec![0.0; n * n];
    let clamp = |v: isize| v.clamp(0, n as isize - 1) as usize;
    for r in 0..n {
        for c in 0..n {
            tmp[r * n + c] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * img[r * n + clamp(c as isize + k as isize - radius)])
                .sum();
        }
    }
    for r in 0..n {
        for c in 0..n {
            img[r * n + c] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * tmp[clamp(r as isize + k as isize - radius) * n + c])
                .sum();
        }
    }
}

/// Complex coil sensitivities, `[coil][row][col]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilSet {
    pub n_coils: usize,
    pub grid_size: usize,
    pub maps: Vec<C64>,
}

impl CoilSet {
    /// One coil with unit sensitivity everywhere.
    pub fn uniform(grid_size: usize) -> Self {
        Self {
            n_coils: 1,
            grid_size,
            maps: vec![C64::new(1.0, 0.0); grid_size * grid_size],
        }
    }

    pub fn coil(&self, c: usize) -> ArrayView2<'_, C64> {
        let len = self.grid_size * self.grid_size;
        ArrayView2::from_shape((self.grid_size, self.grid_size), &self.maps[c * len..(c + 1) * len]).expect("coil view")
    }

    pub fn rss(&self) -> Array2<f64> {
        let n = self.grid_size;
        Array2::from_shape_fn((n, n), |(r, c)| {
            (0..self.n_coils)
                .map(|k| self.maps[k * n * n + r * n + c].norm_sqr())
                .sum::<f64>()
                .sqrt()
        })
    }

    /// Largest magnitude of the second finite difference along rows or
    /// columns over all coils.
    pub fn max_second_difference(&self) -> f64 {
        let n = self.grid_size;
        let mut worst: f64 = 0.0;
        for k in 0..self.n_coils {
            let m = self.coil(k);
            for r in 0..n {
                for c in 0..n {
                    if c >= 1 && c + 1 < n {
                        worst = worst.max((m[[r, c - 1]] - m[[r, c]] * 2.0 + m[[r, c + 1]]).norm());
                    }
                    if r >= 1 && r + 1 < n {
                        worst = worst.max((m[[r - 1, c]] - m[[r, c]] * 2.0 + m[[r + 1, c]]).norm());
                    }
                }
            }
        }
        worst
    }
}

/// Gaussian surface-coil lobes centred just outside the grid border, evenly
/// spread around it with a seeded angular jitter, each with a random linear
/// phase.
pub fn generate_coils(n_coils: usize, grid_size: usize, seed: u64) -> Result<CoilSet> {
    if n_coils == 0 {
        return Err(Error::InvalidConfig("n_coils must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid_size as f64;
    let half = n / 2.0;
    let mut maps = Vec::with_capacity(n_coils * grid_size * grid_size);
    for k in 0..n_coils {
        let jitter: f64 = rng.random_range(-0.25..0.25);
        let angle = 2.0 * PI * (k as f64 + jitter) / n_coils as f64;
        let center = [half + 0.6 * n * angle.cos(), half + 0.6 * n * angle.sin()];
        let width = rng.random_range(0.45..0.6) * n;
        // cycles per FOV
        let slope: [f64; 2] = [rng.random_range(-0.25..0.25), rng.random_range(-0.25..0.25)];
        let phase0: f64 = rng.random_range(0.0..2.0 * PI);
        for r in 0..grid_size {
            for c in 0..grid_size {
                let d2 = (c as f64 - center[0]).powi(2) + (r as f64 - center[1]).powi(2);
                let mag = (-d2 / (2.0 * width * width)).exp();
                let phase = phase0 + 2.0 * PI * (slope[0] * c as f64 + slope[1] * r as f64) / n;
                maps.push(C64::from_polar(mag, phase));
            }
        }
    }
    Ok(CoilSet {
        n_coils,
        grid_size,
        maps,
    })
}

/// Simulates a multi-coil acquisition of one phantom slice.
///
/// Frame `f` is sampled along the arms of orientation
/// `trajectory.orientation_of_frame(f)`. Complex white noise has total
/// standard deviation `noise_sigma * mean |signal|`.
pub fn simulate_kspace(
    phantom: &DynamicPhantom,
    slice: usize,
    coils: &CoilSet,
    trajectory: &Trajectory,
    noise_sigma: f64,
    seed: u64,
) -> Result<RawAcquisition> {
    simulate_series_kspace(
        &phantom.images,
        phantom.config.frame_dt,
        slice,
        coils,
        trajectory,
        noise_sigma,
        seed,
    )
}

/// [`simulate_kspace`] for an arbitrary square image series, e.g. one read
/// back from disk.
pub fn simulate_series_kspace(
    images: &ImageSeries<f64>,
    frame_dt: f64,
    slice: usize,
    coils: &CoilSet,
    trajectory: &Trajectory,
    noise_sigma: f64,
    seed: u64,
) -> Result<RawAcquisition> {
    let n = images.height;
    if images.width != n {
        return Err(Error::shape(
            "phantom frame",
            format!("{n}x{n}"),
            format!("{n}x{}", images.width),
        ));
    }
    if coils.grid_size != n {
        return Err(Error::shape(
            "coil maps",
            format!("{n}x{n}"),
            format!("{0}x{0}", coils.grid_size),
        ));
    }
    if slice >= images.n_slices {
        return Err(Error::InvalidConfig(format!(
            "slice {slice} out of {}",
            images.n_slices
        )));
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::InvalidConfig("noise_sigma must be non-negative".into()));
    }
    let plans = (0..trajectory.n_orientations())
        .map(|o| GriddingPlan::with_defaults(&trajectory.orientation_positions(o, images.pixel_size), n))
        .collect::<Result<Vec<_>>>()?;
    let per_frame = trajectory.arms_per_frame * trajectory.samples_per_arm;

    let frames: Vec<Vec<C64>> = (0..images.n_frames)
        .into_par_iter()
        .map(|f| -> Result<Vec<C64>> {
            let plan = &plans[trajectory.orientation_of_frame(f)];
            let img = images.frame(slice, f);
            let mut out = Vec::with_capacity(coils.n_coils * per_frame);
            for c in 0..coils.n_coils {
                let weighted = Array2::from_shape_fn((n, n), |ij| coils.coil(c)[ij] * img[ij]);
                out.extend(plan.forward(weighted.view())?);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut data: Vec<C64> = frames.into_iter().flatten().collect();

    if noise_sigma > 0.0 && !data.is_empty() {
        let mean = data.iter().map(|v| v.norm()).sum::<f64>() / data.len() as f64;
        let normal = Normal::new(0.0, noise_sigma * mean / 2f64.sqrt()).expect("finite noise std");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in data.iter_mut() {
            *v += C64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }

    RawAcquisition::new(
        trajectory.clone(),
        images.n_frames,
        coils.n_coils,
        frame_dt,
        n,
        images.pixel_size,
        data.into_iter()
            .map(|v| Complex::new(v.re as f32, v.im as f32))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{build_schedule, design_spiral, SpiralDesign};

    fn small() -> PhantomConfig {
        PhantomConfig {
            n_slices: 2,
            n_frames: 24,
            ..Default::default()
        }
    }

    #[test]
    fn labels_and_intensities_agree_away_from_edges() {
        let p = generate_phantom(&small()).unwrap();
        let n = p.config.grid_size;
        for s in 0..2 {
            for f in [0, 7] {
                let m = p.masks.frame(s, f);
                let img = p.images.frame(s, f);
                for r in 2..n - 2 {
                    for c in 2..n - 2 {
                        let l = m[[r, c]];
                        assert!(l < label::COUNT as u8);
                        let same = (r - 2..=r + 2).all(|rr| (c - 2..=c + 2).all(|cc| m[[rr, cc]] == l));
                        if !same {
                            continue;
                        }
                        match l {
                            label::LV | label::RV => assert!((img[[r, c]] - intensity::BLOOD).abs() < 1e-9),
                            label::MYOCARDIUM => {
                                assert!((img[[r, c]] - intensity::MYOCARDIUM).abs() < 1e-9)
                            }
                            _ => {}
                        }
                    }
                }
                assert!(m.iter().any(|&l| l == label::RV));
                assert!(m.iter().any(|&l| l == label::MYOCARDIUM));
            }
        }
    }

    /// Ellipse-stack volume computed independently of the phantom code.
    fn oracle_volume(cfg: &PhantomConfig, t: f64) -> f64 {
        let period = cfg.heart_period;
        let phase = (t % period) / period;
        let sf = cfg.systole_fraction;
        let w = if phase < sf {
            (1.0 - (PI * phase / sf).cos()) / 2.0
        } else {
            (1.0 + (PI * (phase - sf) / (1.0 - sf)).cos()) / 2.0
        };
        let r = cfg.lv_radius_ed + (cfg.lv_radius_es - cfg.lv_radius_ed) * w;
        let mut v = 0.0;
        for s in 0..cfg.n_slices {
            let k = 1.0 - 0.6 * s as f64 / (cfg.n_slices.max(2) - 1) as f64;
            v += PI * (r * k) * (0.9 * r * k) * cfg.slice_thickness;
        }
        v / 1000.0
    }

    #[test]
    fn true_volume_matches_ellipse_oracle_and_ef() {
        let cfg = PhantomConfig::default().with_ejection_fraction(0.6);
        let p = generate_phantom(&cfg).unwrap();
        for (f, v) in p.true_volume_curve.iter().enumerate() {
            assert!((v - oracle_volume(&cfg, (f as f64 + 0.5) * 48.0)).abs() < 1e-9);
        }
        let max = p.true_volume_curve.iter().cloned().fold(f64::MIN, f64::max);
        let min = p.true_volume_curve.iter().cloned().fold(f64::MAX, f64::min);
        let ef = 100.0 * (max - min) / max;
        assert!((59.0..=61.0).contains(&ef), "{ef}");
    }

    #[test]
    fn mask_area_tracks_analytic_volume() {
        let p = generate_phantom(&small()).unwrap();
        let px = p.config.pixel_size * p.config.pixel_size;
        for f in 0..p.config.n_frames {
            let count: usize = (0..2)
                .map(|s| p.masks.frame(s, f).iter().filter(|&&l| l == label::LV).count())
                .sum();
            let v = count as f64 * px * p.config.slice_thickness * 1e-3;
            let rel = (v - p.true_volume_curve[f]).abs() / p.true_volume_curve[f];
            assert!(rel < 0.02, "frame {f}: {rel}");
        }
    }

    #[test]
    fn periodic_and_static_curves() {
        let cfg = PhantomConfig {
            n_frames: 70,
            n_slices: 1,
            heart_period: 960.0,
            ..Default::default()
        };
        let p = generate_phantom(&cfg).unwrap();
        // 960 ms = 20 frames
        for f in 0..50 {
            assert!((p.true_volume_curve[f] - p.true_volume_curve[f + 20]).abs() < 1e-9);
        }
        assert_eq!(p.cycle_boundaries, vec![0, 20, 40, 60]);
        let stat = generate_phantom(&PhantomConfig {
            lv_radius_es: cfg.lv_radius_ed,
            ..cfg
        })
        .unwrap();
        let v0 = stat.true_volume_curve[0];
        assert!(stat.true_volume_curve.iter().all(|v| (v - v0).abs() < 1e-12));
        assert!(stat.images.frame(0, 0) == stat.images.frame(0, 33));
    }

    #[test]
    fn extrema_at_configured_phases() {
        let cfg = PhantomConfig {
            n_frames: 21,
            n_slices: 1,
            heart_period: 1008.0,
            ..Default::default()
        };
        let p = generate_phantom(&cfg).unwrap();
        let argmin = (0..21)
            .min_by(|&a, &b| p.true_volume_curve[a].partial_cmp(&p.true_volume_curve[b]).unwrap())
            .unwrap();
        let es_frame = 0.35 * 1008.0 / 48.0 - 0.5;
        assert!((argmin as f64 - es_frame).abs() <= 1.0);
    }

    #[test]
    fn jitter_changes_cycle_lengths() {
        let cfg = PhantomConfig {
            n_frames: 200,
            n_slices: 1,
            arrhythmia_jitter: 0.2,
            seed: 5,
            ..Default::default()
        };
        let p = generate_phantom(&cfg).unwrap();
        assert!(p.timing.lengths.iter().all(|&l| (800.0..=1200.0).contains(&l)));
        assert!(p.timing.lengths.windows(2).any(|w| (w[0] - w[1]).abs() > 1.0));
        assert_eq!(generate_phantom(&cfg).unwrap(), p);
    }

    #[test]
    fn breathing_translates_heart() {
        let cfg = PhantomConfig {
            n_frames: 60,
            n_slices: 1,
            lv_radius_es: 24.0,
            breathing_amplitude: 8.0,
            ..Default::default()
        };
        let p = generate_phantom(&cfg).unwrap();
        let centroid = |f: usize| {
            let m = p.masks.frame(0, f);
            let (mut sum, mut cnt) = (0.0, 0.0);
            for ((r, _), &l) in m.indexed_iter() {
                if l == label::LV {
                    sum += r as f64;
                    cnt += 1.0;
                }
            }
            sum / cnt
        };
        // quarter breathing period is 2500 ms, about frame 52
        let d = (centroid(52) - centroid(0)) * 1.29;
        assert!((d - 8.0).abs() < 2.0, "{d}");
    }

    #[test]
    fn invalid_geometry_rejected() {
        let too_big = PhantomConfig {
            lv_radius_ed: 60.0,
            lv_radius_es: 40.0,
            ..Default::default()
        };
        assert!(matches!(generate_phantom(&too_big), Err(Error::InvalidConfig(_))));
        let inverted = PhantomConfig {
            lv_radius_es: 30.0,
            ..Default::default()
        };
        assert!(generate_phantom(&inverted).is_err());
        let fast = PhantomConfig {
            heart_period: 80.0,
            ..Default::default()
        };
        assert!(generate_phantom(&fast).is_err());
        let slow_breath = PhantomConfig {
            breathing_amplitude: 2.0,
            breathing_periods: 4.0,
            ..Default::default()
        };
        assert!(generate_phantom(&slow_breath).is_err());
    }

    #[test]
    fn coils_smooth_and_cover_support() {
        let coils = generate_coils(8, 128, 1).unwrap();
        assert!(coils.max_second_difference() < 0.01);
        let rss = coils.rss();
        assert!(rss.iter().all(|&v| v > 0.05));
        assert_eq!(generate_coils(8, 128, 1).unwrap(), coils);
        assert_ne!(generate_coils(8, 128, 2).unwrap(), coils);
        assert!(generate_coils(0, 128, 1).is_err());
    }

    fn spiral_traj(orientations: usize, per: usize) -> Trajectory {
        let set = design_spiral(&SpiralDesign::default()).unwrap();
        Trajectory::from_schedule(&set, &build_schedule(&set, orientations, per).unwrap())
    }

    #[test]
    fn static_frames_with_same_orientation_match() {
        let cfg = PhantomConfig {
            n_slices: 1,
            n_frames: 6,
            lv_radius_es: 24.0,
            ..Default::default()
        };
        let p = generate_phantom(&cfg).unwrap();
        let coils = generate_coils(2, 128, 0).unwrap();
        let raw = simulate_kspace(&p, 0, &coils, &spiral_traj(2, 1), 0.0, 0).unwrap();
        assert_eq!(raw.frame(0), raw.frame(2));
        assert_eq!(raw.frame(1), raw.frame(5));
        assert_ne!(raw.frame(0), raw.frame(1));
        let again = simulate_kspace(&p, 0, &coils, &spiral_traj(2, 1), 0.0, 0).unwrap();
        assert_eq!(again, raw);
    }

    #[test]
    fn zero_image_gives_zero_samples() {
        let mut p = generate_phantom(&PhantomConfig {
            n_slices: 1,
            n_frames: 2,
            ..Default::default()
        })
        .unwrap();
        p.images.data.iter_mut().for_each(|v| *v = 0.0);
        let raw = simulate_kspace(&p, 0, &CoilSet::uniform(128), &spiral_traj(1, 1), 0.0, 0).unwrap();
        assert!(raw.data.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn impulse_matches_direct_dft() {
        let mut p = generate_phantom(&PhantomConfig {
            n_slices: 1,
            n_frames: 1,
            ..Default::default()
        })
        .unwrap();
        p.images.data.iter_mut().for_each(|v| *v = 0.0);
        let (r0, c0) = (70usize, 51usize);
        p.images.data[r0 * 128 + c0] = 1.0;
        let traj = spiral_traj(1, 1);
        let raw = simulate_kspace(&p, 0, &CoilSet::uniform(128), &traj, 0.0, 0).unwrap();
        let pos = traj.orientation_positions(0, 1.29);
        for (k, v) in pos.iter().zip(raw.frame(0)) {
            let arg = -2.0 * PI * (k[0] * (c0 as f64 - 64.0) + k[1] * (r0 as f64 - 64.0));
            let exact = C64::from_polar(1.0, arg);
            assert!((C64::new(v.re as f64, v.im as f64) - exact).norm() < 1e-3);
        }
    }

    #[test]
    fn dc_sample_is_coil_weighted_sum() {
        let p = generate_phantom(&PhantomConfig {
            n_slices: 1,
            n_frames: 1,
            ..Default::default()
        })
        .unwrap();
        let coils = generate_coils(3, 128, 4).unwrap();
        let traj = spiral_traj(1, 1);
        let raw = simulate_kspace(&p, 0, &coils, &traj, 0.0, 0).unwrap();
        for c in 0..3 {
            let sum: C64 = coils
                .coil(c)
                .iter()
                .zip(p.images.frame(0, 0).iter())
                .map(|(m, v)| m * v)
                .sum();
            for a in 0..traj.arms_per_frame {
                let dc = raw.arm(0, c, a)[0];
                assert!((C64::new(dc.re as f64, dc.im as f64) - sum).norm() < 1e-4 * sum.norm());
            }
        }
    }

    #[test]
    fn noise_level_and_reproducibility() {
        let p = generate_phantom(&PhantomConfig {
            n_slices: 1,
            n_frames: 2,
            ..Default::default()
        })
        .unwrap();
        let coils = generate_coils(2, 128, 0).unwrap();
        let traj = spiral_traj(1, 1);
        let clean = simulate_kspace(&p, 0, &coils, &traj, 0.0, 0).unwrap();
        let noisy = simulate_kspace(&p, 0, &coils, &traj, 0.05, 3).unwrap();
        assert_eq!(noisy, simulate_kspace(&p, 0, &coils, &traj, 0.05, 3).unwrap());
        let mean = clean.data.iter().map(|v| v.norm() as f64).sum::<f64>() / clean.data.len() as f64;
        let var = clean
            .data
            .iter()
            .zip(&noisy.data)
            .map(|(a, b)| (a - b).norm_sqr() as f64)
            .sum::<f64>()
            / clean.data.len() as f64;
        assert!((var.sqrt() / mean - 0.05).abs() < 0.002);
    }
}
