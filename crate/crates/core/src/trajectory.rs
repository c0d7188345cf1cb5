//! Spiral interleave design, largest-gap rotation schedule, GSTF correction
//! and density compensation.
//!
//! k-space positions are stored in cycles/FOV, where FOV is the design field
//! of view of the interleave set (the FOV for which `n_arms` interleaves are
//! Nyquist sampled). Use [`to_cycles_per_pixel`] to map them onto a
//! reconstruction grid.

use num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::types::C64;

/// Proton gyromagnetic ratio, Hz/T.
pub const GAMMA_HZ_PER_T: f64 = 42.577_478_5e6;

/// k increment (cycles/FOV) produced by 1 mT/m held for `dwell_us`.
pub fn k_per_gradient_step(fov_mm: f64, dwell_us: f64) -> f64 {
    GAMMA_HZ_PER_T * 1e-3 * dwell_us * 1e-6 * fov_mm * 1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpiralArm {
    /// (kx, ky), cycles/FOV.
    pub samples: Vec<[f64; 2]>,
    /// µs
    pub dwell_time: f64,
    /// mT/m. `gradient[i]` is held over `[t_i, t_i + dwell)`, so
    /// `k[i] = scale * sum_{m < i} gradient[m]`.
    pub gradient: Vec<[f64; 2]>,
    /// Moment-nulling rewinder played after the readout; carries no samples.
    pub rewinder: Vec<[f64; 2]>,
    /// Design FOV in mm.
    pub fov: f64,
}

impl SpiralArm {
    pub fn k_max(&self) -> f64 {
        self.samples.iter().map(|k| k[0].hypot(k[1])).fold(0.0, f64::max)
    }

    pub fn rotated(&self, angle: f64) -> Vec<[f64; 2]> {
        let (s, c) = angle.sin_cos();
        self.samples
            .iter()
            .map(|k| [c * k[0] - s * k[1], s * k[0] + c * k[1]])
            .collect()
    }

    /// Re-derives the sampled k positions from the stored gradient.
    pub fn integrate_gradient(&self) -> Vec<[f64; 2]> {
        integrate(&self.gradient, self.samples.len(), self.fov, self.dwell_time)
    }
}

fn integrate(gradient: &[[f64; 2]], n: usize, fov: f64, dwell: f64) -> Vec<[f64; 2]> {
    let scale = k_per_gradient_step(fov, dwell);
    let mut out = Vec::with_capacity(n);
    let mut acc = [0.0, 0.0];
    for i in 0..n {
        out.push([acc[0] * scale, acc[1] * scale]);
        if let Some(g) = gradient.get(i) {
            acc[0] += g[0];
            acc[1] += g[1];
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpiralDesign {
    /// Design FOV, mm.
    pub fov: f64,
    /// mm; k_max = 1 / (2 resolution).
    pub resolution: f64,
    pub n_arms: usize,
    /// mT/m
    pub max_gradient: f64,
    /// T/m/s
    pub max_slew: f64,
    /// µs
    pub dwell_time: f64,
    /// Readouts longer than this are reported as infeasible, µs.
    pub max_readout: f64,
}

impl Default for SpiralDesign {
    fn default() -> Self {
        // 13 arms at 1.29 mm; a 64 mm design FOV undersamples a 320 mm FOV
        // about five-fold.
        Self {
            fov: 64.0,
            resolution: 1.29,
            n_arms: 13,
            max_gradient: 40.0,
            max_slew: 180.0,
            dwell_time: 2.0,
            max_readout: 20_000.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterleaveSet {
    pub base_arm: SpiralArm,
    pub n_arms: usize,
    /// radians, `2 pi j / n_arms`
    pub angles: Vec<f64>,
}

impl InterleaveSet {
    /// `n_arms` copies of `base_arm` at equal angular spacing.
    pub fn new(base_arm: SpiralArm, n_arms: usize) -> Self {
        let angles = (0..n_arms).map(|j| 2.0 * PI * j as f64 / n_arms as f64).collect();
        Self {
            base_arm,
            n_arms,
            angles,
        }
    }

    pub fn arm(&self, j: usize) -> Vec<[f64; 2]> {
        self.base_arm.rotated(self.angles[j])
    }

    pub fn arm_spacing(&self) -> f64 {
        2.0 * PI / self.n_arms as f64
    }
}

/// Archimedean spiral-out with slew- and amplitude-limited angular velocity.
pub fn design_spiral(design: &SpiralDesign) -> Result<InterleaveSet> {
    let SpiralDesign {
        fov,
        resolution,
        n_arms,
        max_gradient,
        max_slew,
        dwell_time,
        max_readout,
    } = *design;
    if !(resolution > 0.0) || !(fov >= resolution) {
        return Err(Error::InvalidConfig(format!(
            "need resolution > 0 and fov >= resolution (fov {fov}, resolution {resolution})"
        )));
    }
    if n_arms == 0 {
        return Err(Error::InvalidConfig("n_arms must be at least 1".into()));
    }
    if !(max_gradient > 0.0 && max_slew > 0.0 && dwell_time > 0.0) {
        return Err(Error::InfeasibleDesign(
            "gradient, slew and dwell limits must be positive".into(),
        ));
    }

    let fov_m = fov * 1e-3;
    // cycles/FOV per radian of the Archimedean spiral k = lambda theta e^{i theta}
    let lambda = n_arms as f64 / (2.0 * PI);
    let k_max = fov / (2.0 * resolution);
    let theta_max = k_max / lambda;
    let v_max = GAMMA_HZ_PER_T * max_gradient * 1e-3 * fov_m;
    let a_max = GAMMA_HZ_PER_T * max_slew * fov_m;

    let dt = dwell_time * 1e-6;
    let substeps = 32;
    let h = dt / substeps as f64;
    let max_samples = (max_readout / dwell_time).ceil() as usize + 1;

    // integrate theta(t) on the fine grid until k_max is passed
    let max_steps = max_samples * substeps;
    let mut fine = vec![0.0f64];
    let (mut theta, mut omega) = (0.0f64, 0.0f64);
    while theta < theta_max {
        let a = Complex::new(1.0, theta);
        let b = Complex::new(-theta, 2.0) * (omega * omega);
        let c = a_max / lambda;
        let rab = (a * b.conj()).re;
        let na = a.norm_sqr();
        let disc = rab * rab - na * (b.norm_sqr() - c * c);
        let accel = if disc > 0.0 {
            (-rab + disc.sqrt()) / na
        } else {
            -rab / na
        };
        let cap = v_max / (lambda * (1.0 + theta * theta).sqrt());
        let next = (omega + accel * h).min(cap).max(0.0);
        theta += 0.5 * (omega + next) * h;
        omega = next;
        fine.push(theta);
        if fine.len() > max_steps {
            return Err(Error::InfeasibleDesign(format!(
                "readout exceeds {max_readout} us before reaching k_max = {:.4} 1/mm",
                1.0 / (2.0 * resolution)
            )));
        }
    }
    // time at which theta_max is reached, in substeps
    let m = fine.len() - 1;
    let t_end = (m - 1) as f64 + (theta_max - fine[m - 1]) / (fine[m] - fine[m - 1]);
    // traverse the same path slightly slower so the last sample lands on k_max
    let n_dwell = (t_end / substeps as f64).ceil().max(1.0) as usize;
    let thetas: Vec<f64> = (0..=n_dwell)
        .map(|i| {
            let t = t_end * i as f64 / n_dwell as f64;
            let j = (t.floor() as usize).min(m - 1);
            let f = t - j as f64;
            if i == n_dwell {
                theta_max
            } else {
                fine[j] + f * (fine[j + 1] - fine[j])
            }
        })
        .collect();

    let nominal: Vec<[f64; 2]> = thetas
        .iter()
        .map(|&t| [lambda * t * t.cos(), lambda * t * t.sin()])
        .collect();
    let scale = k_per_gradient_step(fov, dwell_time);
    let mut gradient: Vec<[f64; 2]> = nominal
        .windows(2)
        .map(|w| [(w[1][0] - w[0][0]) / scale, (w[1][1] - w[0][1]) / scale])
        .collect();
    // the last sample's interval continues into the rewinder
    let tail = *gradient.last().unwrap_or(&[0.0, 0.0]);
    gradient.push(tail);
    let samples = integrate(&gradient, nominal.len(), fov, dwell_time);
    let end_k = [
        samples.last().unwrap()[0] + scale * tail[0],
        samples.last().unwrap()[1] + scale * tail[1],
    ];
    let rewinder = design_rewinder(tail, end_k, max_gradient, max_slew, dwell_time, scale);

    let base_arm = SpiralArm {
        samples,
        dwell_time,
        gradient,
        rewinder,
        fov,
    };
    Ok(InterleaveSet::new(base_arm, n_arms))
}

/// Per axis: ramp the end gradient to zero, then a triangle (or trapezoid)
/// that returns the zeroth moment to zero.
fn design_rewinder(g_end: [f64; 2], k_end: [f64; 2], g_max: f64, s_max: f64, dwell: f64, scale: f64) -> Vec<[f64; 2]> {
    // slew in mT/m per dwell
    let step = s_max * dwell * 1e-3;
    let axis = |g0: f64, k0: f64| -> Vec<f64> {
        let n_ramp = (g0.abs() / step).ceil() as usize;
        let mut w: Vec<f64> = (1..=n_ramp).map(|i| g0 * (1.0 - i as f64 / n_ramp as f64)).collect();
        let area: f64 = k0 / scale + w.iter().sum::<f64>();
        if area.abs() < 1e-12 {
            return w;
        }
        // lobe of opposite sign; trapezoid if the triangle would exceed g_max
        let peak = (area.abs() * step).sqrt().min(g_max);
        let n_up = (peak / step).ceil().max(1.0) as usize;
        let up: Vec<f64> = (1..=n_up).map(|i| peak * i as f64 / n_up as f64).collect();
        let ramp_area = 2.0 * up.iter().sum::<f64>() - peak;
        let flat = ((area.abs() - ramp_area) / peak).max(0.0).ceil() as usize;
        let mut lobe: Vec<f64> = up.clone();
        lobe.extend(std::iter::repeat_n(peak, flat));
        lobe.extend(up.iter().rev().skip(1));
        lobe.push(0.0);
        let lobe_area: f64 = lobe.iter().sum();
        let fix = -area / lobe_area;
        w.extend(lobe.into_iter().map(|v| v * fix));
        w
    };
    let wx = axis(g_end[0], k_end[0]);
    let wy = axis(g_end[1], k_end[1]);
    let n = wx.len().max(wy.len());
    (0..n)
        .map(|i| [wx.get(i).copied().unwrap_or(0.0), wy.get(i).copied().unwrap_or(0.0)])
        .collect()
}

/// Per-frame pattern rotation plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationSchedule {
    pub n_orientations: usize,
    pub frames_per_orientation: usize,
    /// radians, in `[0, 2 pi / n_arms)`
    pub orientation_offsets: Vec<f64>,
    pub n_arms: usize,
}

impl RotationSchedule {
    /// Orientation used for `frame`. After the last orientation the schedule
    /// starts over.
    pub fn orientation_of_frame(&self, frame: usize) -> usize {
        (frame / self.frames_per_orientation.max(1)) % self.n_orientations
    }

    pub fn frame_assignment(&self, n_frames: usize) -> Vec<usize> {
        (0..n_frames).map(|f| self.orientation_of_frame(f)).collect()
    }

    /// All arm angles used by the schedule, orientation-major.
    pub fn arm_angles(&self) -> Vec<f64> {
        let spacing = 2.0 * PI / self.n_arms as f64;
        self.orientation_offsets
            .iter()
            .flat_map(|&o| (0..self.n_arms).map(move |j| o + spacing * j as f64))
            .collect()
    }
}

/// Greedy schedule: each new offset sits in the middle of the largest gap
/// left by all previously used arm angles. Ties go to the smallest offset.
pub fn build_schedule(
    interleaves: &InterleaveSet,
    n_orientations: usize,
    frames_per_orientation: usize,
) -> Result<RotationSchedule> {
    if n_orientations == 0 {
        return Err(Error::InvalidConfig("n_orientations must be at least 1".into()));
    }
    let period = interleaves.arm_spacing();
    // the union is invariant under rotation by `period`, so work modulo it
    let mut offsets = vec![0.0];
    while offsets.len() < n_orientations {
        let mut sorted = offsets.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut best: Option<(f64, f64)> = None;
        for (i, &lo) in sorted.iter().enumerate() {
            let hi = sorted.get(i + 1).copied().unwrap_or(sorted[0] + period);
            let gap = hi - lo;
            let mid = (lo + 0.5 * gap) % period;
            best = match best {
                Some((g, m)) if gap < g * (1.0 - 1e-12) => Some((g, m)),
                Some((g, m)) if gap <= g * (1.0 + 1e-12) && m <= mid => Some((g, m)),
                _ => Some((gap, mid)),
            };
        }
        offsets.push(best.unwrap().1);
    }
    Ok(RotationSchedule {
        n_orientations,
        frames_per_orientation,
        orientation_offsets: offsets,
        n_arms: interleaves.n_arms,
    })
}

/// Complex frequency response of the gradient chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GstfModel {
    /// Hz, ascending, starting at 0.
    pub frequencies: Vec<f64>,
    /// `[x, y]` responses sampled at `frequencies`.
    pub response: [Vec<C64>; 2],
    /// µs
    pub delay: f64,
}

impl GstfModel {
    pub fn new(frequencies: Vec<f64>, response: [Vec<C64>; 2], delay: f64) -> Result<Self> {
        if frequencies.len() < 2 || frequencies[0] != 0.0 {
            return Err(Error::IncompatibleGstf(
                "frequency grid must start at 0 Hz and have at least two points".into(),
            ));
        }
        if frequencies.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::IncompatibleGstf("frequency grid not ascending".into()));
        }
        for r in &response {
            if r.len() != frequencies.len() {
                return Err(Error::IncompatibleGstf(format!(
                    "response has {} points for {} frequencies",
                    r.len(),
                    frequencies.len()
                )));
            }
            if let Some(v) = r.iter().find(|v| v.norm() > 1.0 + 1e-6) {
                return Err(Error::InvalidConfig(format!(
                    "transfer function magnitude {} exceeds 1",
                    v.norm()
                )));
            }
        }
        Ok(Self {
            frequencies,
            response,
            delay,
        })
    }

    fn grid(max_freq: f64) -> Vec<f64> {
        let n = 1025;
        (0..n).map(|i| max_freq * i as f64 / (n - 1) as f64).collect()
    }

    pub fn identity(max_freq: f64) -> Self {
        Self::pure_delay(0.0, max_freq)
    }

    pub fn pure_delay(delay: f64, max_freq: f64) -> Self {
        let f = Self::grid(max_freq);
        let ones = vec![C64::new(1.0, 0.0); f.len()];
        Self::new(f, [ones.clone(), ones], delay).expect("valid delay model")
    }

    /// `H(f) = 1 / (1 + i f / cutoff)` on both axes.
    pub fn first_order_low_pass(cutoff: f64, delay: f64, max_freq: f64) -> Self {
        let f = Self::grid(max_freq);
        let h: Vec<C64> = f
            .iter()
            .map(|&v| C64::new(1.0, 0.0) / C64::new(1.0, v / cutoff))
            .collect();
        Self::new(f, [h.clone(), h], delay).expect("valid low-pass model")
    }

    pub fn max_frequency(&self) -> f64 {
        *self.frequencies.last().unwrap()
    }

    /// Response at signed frequency `f` (Hz), including the delay term.
    pub fn response_at(&self, axis: usize, f: f64) -> C64 {
        let a = f.abs();
        let fr = &self.frequencies;
        let r = &self.response[axis];
        let i = fr.partition_point(|&v| v <= a).clamp(1, fr.len() - 1);
        let t = ((a - fr[i - 1]) / (fr[i] - fr[i - 1])).clamp(0.0, 1.0);
        let mut h = r[i - 1] * (1.0 - t) + r[i] * t;
        if f < 0.0 {
            h = h.conj();
        }
        h * C64::from_polar(1.0, -2.0 * PI * f * self.delay * 1e-6)
    }
}

/// Applies the transfer function to the nominal gradient (readout plus
/// rewinder) and re-integrates the sampled k positions.
pub fn gstf_correct(arm: &SpiralArm, model: &GstfModel) -> Result<SpiralArm> {
    if arm.gradient.is_empty() {
        return Err(Error::InvalidConfig("arm has no gradient waveform".into()));
    }
    let nyquist = 0.5 / (arm.dwell_time * 1e-6);
    if model.max_frequency() < nyquist * (1.0 - 1e-9) {
        return Err(Error::IncompatibleGstf(format!(
            "model covers {} Hz, waveform needs {nyquist} Hz",
            model.max_frequency()
        )));
    }
    let n_read = arm.gradient.len();
    let wave: Vec<[f64; 2]> = arm.gradient.iter().chain(&arm.rewinder).copied().collect();
    let len = (2 * wave.len()).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let mut corrected = vec![[0.0; 2]; wave.len()];
    for axis in 0..2 {
        let mut buf: Vec<C64> = (0..len)
            .map(|i| C64::new(wave.get(i).map_or(0.0, |g| g[axis]), 0.0))
            .collect();
        fwd.process(&mut buf);
        for (i, v) in buf.iter_mut().enumerate() {
            let bin = if i <= len / 2 { i as f64 } else { i as f64 - len as f64 };
            let f = bin / (len as f64 * arm.dwell_time * 1e-6);
            *v *= model.response_at(axis, f);
        }
        inv.process(&mut buf);
        for (i, c) in corrected.iter_mut().enumerate() {
            c[axis] = buf[i].re / len as f64;
        }
    }
    let gradient = corrected[..n_read].to_vec();
    let rewinder = corrected[n_read..].to_vec();
    let samples = integrate(&gradient, arm.samples.len(), arm.fov, arm.dwell_time);
    Ok(SpiralArm {
        samples,
        dwell_time: arm.dwell_time,
        gradient,
        rewinder,
        fov: arm.fov,
    })
}

/// Converts cycles/FOV positions into cycles/pixel for a grid with
/// `pixel_size` mm pixels.
pub fn to_cycles_per_pixel(k: &[[f64; 2]], fov: f64, pixel_size: f64) -> Vec<[f64; 2]> {
    let s = pixel_size / fov;
    k.iter().map(|p| [p[0] * s, p[1] * s]).collect()
}

/// Polar-area density weights for a set of center-out arms of equal length
/// laid out contiguously.
///
/// Each sample gets `|k| * |dk/dt| * |cos(angle(k) - angle(dk/dt))|`, which
/// is the area element swept between neighbouring arms; the center sample
/// takes its neighbour's weight. Weights are normalized so that they sum to
/// the area of the disk of radius `max |k|`, which makes the weighted adjoint
/// an approximate inverse with unit DC gain.
pub fn density_weights(positions: &[[f64; 2]], samples_per_arm: usize) -> Vec<f64> {
    if positions.is_empty() || samples_per_arm == 0 {
        return Vec::new();
    }
    let mut w = Vec::with_capacity(positions.len());
    for arm in positions.chunks(samples_per_arm) {
        let n = arm.len();
        let start = w.len();
        for i in 0..n {
            let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
            let span = (b - a).max(1) as f64;
            let v = [(arm[b][0] - arm[a][0]) / span, (arm[b][1] - arm[a][1]) / span];
            w.push((arm[i][0] * v[0] + arm[i][1] * v[1]).abs());
        }
        if n > 1 {
            w[start] = w[start + 1];
        }
    }
    let k_max = positions.iter().map(|k| k[0].hypot(k[1])).fold(0.0, f64::max);
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        let s = PI * k_max * k_max / total;
        w.iter_mut().for_each(|v| *v *= s);
    }
    w
}

/// Density weights for the arms of one orientation of a schedule.
pub fn density_compensation(
    interleaves: &InterleaveSet,
    schedule: &RotationSchedule,
    orientation: usize,
    pixel_size: f64,
) -> Vec<f64> {
    let traj = Trajectory::from_schedule(interleaves, schedule);
    let pos = traj.orientation_positions(orientation, pixel_size);
    density_weights(&pos, traj.samples_per_arm)
}

/// Sampled geometry of an acquisition: every orientation of a schedule
/// applied to one interleave set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Design FOV (mm) that defines the cycles/FOV unit.
    pub fov: f64,
    /// µs
    pub dwell_time: f64,
    pub arms_per_frame: usize,
    pub samples_per_arm: usize,
    pub frames_per_orientation: usize,
    pub orientation_offsets: Vec<f64>,
    /// `[orientation][arm][sample]`, cycles/FOV
    pub k: Vec<[f64; 2]>,
}

impl Trajectory {
    pub fn from_schedule(interleaves: &InterleaveSet, schedule: &RotationSchedule) -> Self {
        let mut k = Vec::new();
        for &offset in &schedule.orientation_offsets {
            for &angle in &interleaves.angles {
                k.extend(interleaves.base_arm.rotated(angle + offset));
            }
        }
        Self {
            fov: interleaves.base_arm.fov,
            dwell_time: interleaves.base_arm.dwell_time,
            arms_per_frame: interleaves.n_arms,
            samples_per_arm: interleaves.base_arm.samples.len(),
            frames_per_orientation: schedule.frames_per_orientation,
            orientation_offsets: schedule.orientation_offsets.clone(),
            k,
        }
    }

    pub fn n_orientations(&self) -> usize {
        self.orientation_offsets.len()
    }

    pub fn n_arms_total(&self) -> usize {
        self.n_orientations() * self.arms_per_frame
    }

    pub fn orientation_of_frame(&self, frame: usize) -> usize {
        (frame / self.frames_per_orientation.max(1)) % self.n_orientations().max(1)
    }

    pub fn arm(&self, orientation: usize, arm: usize) -> &[[f64; 2]] {
        let start = (orientation * self.arms_per_frame + arm) * self.samples_per_arm;
        &self.k[start..start + self.samples_per_arm]
    }

    /// All arms of one orientation in cycles/pixel.
    pub fn orientation_positions(&self, orientation: usize, pixel_size: f64) -> Vec<[f64; 2]> {
        let per = self.arms_per_frame * self.samples_per_arm;
        let start = orientation * per;
        to_cycles_per_pixel(&self.k[start..start + per], self.fov, pixel_size)
    }

    /// All arms of all orientations in cycles/pixel.
    pub fn union_positions(&self, pixel_size: f64) -> Vec<[f64; 2]> {
        to_cycles_per_pixel(&self.k, self.fov, pixel_size)
    }

    /// Whether every arm starts at the k-space center.
    pub fn starts_at_center(&self) -> bool {
        self.k
            .chunks(self.samples_per_arm.max(1))
            .all(|arm| arm[0][0].hypot(arm[0][1]) <= 1e-9)
    }

    /// Replaces the base arm (e.g. after GSTF correction), keeping the
    /// rotation pattern.
    pub fn with_base_arm(&self, arm: &SpiralArm) -> Self {
        let spacing = 2.0 * PI / self.arms_per_frame as f64;
        let mut k = Vec::with_capacity(self.n_arms_total() * arm.samples.len());
        for &offset in &self.orientation_offsets {
            for j in 0..self.arms_per_frame {
                k.extend(arm.rotated(offset + spacing * j as f64));
            }
        }
        Self {
            fov: arm.fov,
            dwell_time: arm.dwell_time,
            samples_per_arm: arm.samples.len(),
            k,
            ..self.clone()
        }
    }

    /// Reconstructs the unrotated base arm from orientation 0, arm 0, with
    /// the gradient re-derived by differencing.
    pub fn base_arm(&self) -> SpiralArm {
        let samples = self.arm(0, 0).to_vec();
        let scale = k_per_gradient_step(self.fov, self.dwell_time);
        let mut gradient: Vec<[f64; 2]> = samples
            .windows(2)
            .map(|w| [(w[1][0] - w[0][0]) / scale, (w[1][1] - w[0][1]) / scale])
            .collect();
        gradient.push(*gradient.last().unwrap_or(&[0.0, 0.0]));
        SpiralArm {
            samples,
            dwell_time: self.dwell_time,
            gradient,
            rewinder: Vec::new(),
            fov: self.fov,
        }
    }
}
