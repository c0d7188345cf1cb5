//! Multi-coil spiral raw data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::Trajectory;
use crate::types::{C32, C64};

/// Complex k-space samples stored `[frame][coil][arm][sample]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawAcquisition {
    pub trajectory: Trajectory,
    pub n_frames: usize,
    pub n_coils: usize,
    /// ms
    pub frame_dt: f64,
    /// Reconstruction grid the data were simulated for.
    pub grid_size: usize,
    /// mm
    pub pixel_size: f64,
    pub data: Vec<C32>,
}

/// Shape summary, also used as the RAWK header body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionDims {
    pub n_frames: usize,
    pub n_coils: usize,
    pub n_arms: usize,
    pub samples_per_arm: usize,
    pub dwell_time: f64,
    pub frame_dt: f64,
    pub grid_size: usize,
    pub pixel_size: f64,
}

impl RawAcquisition {
    pub fn new(
        trajectory: Trajectory,
        n_frames: usize,
        n_coils: usize,
        frame_dt: f64,
        grid_size: usize,
        pixel_size: f64,
        data: Vec<C32>,
    ) -> Result<Self> {
        let expected = n_frames * n_coils * trajectory.arms_per_frame * trajectory.samples_per_arm;
        if data.len() != expected {
            return Err(Error::shape(
                "raw samples",
                expected.to_string(),
                data.len().to_string(),
            ));
        }
        Ok(Self {
            trajectory,
            n_frames,
            n_coils,
            frame_dt,
            grid_size,
            pixel_size,
            data,
        })
    }

    pub fn dims(&self) -> AcquisitionDims {
        AcquisitionDims {
            n_frames: self.n_frames,
            n_coils: self.n_coils,
            n_arms: self.trajectory.arms_per_frame,
            samples_per_arm: self.trajectory.samples_per_arm,
            dwell_time: self.trajectory.dwell_time,
            frame_dt: self.frame_dt,
            grid_size: self.grid_size,
            pixel_size: self.pixel_size,
        }
    }

    pub fn arms_per_frame(&self) -> usize {
        self.trajectory.arms_per_frame
    }

    pub fn samples_per_arm(&self) -> usize {
        self.trajectory.samples_per_arm
    }

    fn per_coil(&self) -> usize {
        self.arms_per_frame() * self.samples_per_arm()
    }

    /// All coils of one frame.
    pub fn frame(&self, f: usize) -> &[C32] {
        let len = self.n_coils * self.per_coil();
        &self.data[f * len..(f + 1) * len]
    }

    pub fn coil_frame(&self, f: usize, c: usize) -> &[C32] {
        let len = self.per_coil();
        let start = (f * self.n_coils + c) * len;
        &self.data[start..start + len]
    }

    pub fn arm(&self, f: usize, c: usize, a: usize) -> &[C32] {
        let s = self.samples_per_arm();
        &self.coil_frame(f, c)[a * s..(a + 1) * s]
    }

    /// One coil of one frame promoted to double precision.
    pub fn coil_frame_c64(&self, f: usize, c: usize) -> Vec<C64> {
        self.coil_frame(f, c)
            .iter()
            .map(|v| C64::new(v.re as f64, v.im as f64))
            .collect()
    }

    pub fn orientation(&self, f: usize) -> usize {
        self.trajectory.orientation_of_frame(f)
    }

    /// Sample positions of frame `f` in cycles/pixel.
    pub fn frame_positions(&self, f: usize) -> Vec<[f64; 2]> {
        self.trajectory
            .orientation_positions(self.orientation(f), self.pixel_size)
    }

    /// Acquisition time of the k-space centre of arm `a` in frame `f`, ms.
    /// Arms are spread evenly over the frame.
    pub fn arm_time(&self, f: usize, a: usize) -> f64 {
        (f as f64 + (a as f64 + 0.5) / self.arms_per_frame() as f64) * self.frame_dt
    }

    pub fn total_arms(&self) -> usize {
        self.n_frames * self.arms_per_frame()
    }

    /// Keeps frames `start..end`.
    pub fn frames(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_frames {
            return Err(Error::InvalidConfig(format!(
                "frame range {start}..{end} outside 0..{}",
                self.n_frames
            )));
        }
        let len = self.n_coils * self.per_coil();
        if !start.is_multiple_of(self.trajectory.frames_per_orientation.max(1)) {
            return Err(Error::InvalidConfig(format!(
                "frame range must start on an orientation block boundary (multiple of {})",
                self.trajectory.frames_per_orientation
            )));
        }
        // renumber orientations so frame 0 of the subset keeps its pattern
        let mut trajectory = self.trajectory.clone();
        let o = self.orientation(start);
        let per = trajectory.arms_per_frame * trajectory.samples_per_arm;
        trajectory.orientation_offsets.rotate_left(o);
        trajectory.k.rotate_left(o * per);
        Self::new(
            trajectory,
            end - start,
            self.n_coils,
            self.frame_dt,
            self.grid_size,
            self.pixel_size,
            self.data[start * len..end * len].to_vec(),
        )
    }
}
