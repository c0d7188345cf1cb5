//! Shared inputs for the benchmarks.

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spiralcine::acquisition::RawAcquisition;
use spiralcine::coils::SensitivityMaps;
use spiralcine::phantom::{generate_coils, generate_phantom, simulate_kspace, PhantomConfig};
use spiralcine::recon::{EncodingOperator, FramePlans};
use spiralcine::trajectory::{build_schedule, design_spiral, SpiralDesign, Trajectory};
use spiralcine::xsdnet::Tensor;
use spiralcine::C64;

/// 13-arm spiral with eight orientations, one frame each.
pub fn trajectory() -> Trajectory {
    let set = design_spiral(&SpiralDesign::default()).expect("default design is feasible");
    Trajectory::from_schedule(&set, &build_schedule(&set, 8, 1).expect("valid schedule"))
}

pub fn random_image(n: usize, seed: u64) -> Array2<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, n), |_| {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    })
}

pub fn random_tensor(shape: Vec<usize>, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).expect("consistent shape")
}

/// Default phantom, 8 coils, 8 frames of the mid slice.
pub struct Acquisition {
    pub raw: RawAcquisition,
    pub maps: Arc<SensitivityMaps>,
    pub plans: FramePlans,
}

impl Acquisition {
    pub fn new() -> Self {
        let cfg = PhantomConfig {
            n_frames: 8,
            ..PhantomConfig::default()
        };
        let phantom = generate_phantom(&cfg).expect("default phantom");
        let coils = generate_coils(8, cfg.grid_size, 5).expect("coil maps");
        let raw = simulate_kspace(&phantom, 4, &coils, &trajectory(), 0.01, 1).expect("simulation");
        let plans = FramePlans::for_acquisition(&raw).expect("plans");
        Self {
            maps: Arc::new(SensitivityMaps::from_coils(&coils)),
            raw,
            plans,
        }
    }

    pub fn operators(&self) -> Vec<EncodingOperator> {
        self.plans.operators(&self.raw, &self.maps, false).expect("operators")
    }
}

impl Default for Acquisition {
    fn default() -> Self {
        Self::new()
    }
}
