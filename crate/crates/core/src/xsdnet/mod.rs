//! xSDNet inference: anatomy/modality disentanglement, segmentation, FiLM
//! decoding and the fusion U-Net, driven by the manifest in a weights file.

mod graph;
mod layers;
mod tensor;
mod weights;

use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;

pub use graph::{
    interface, parameters, random_weights, tensor_name, Graph, GraphInterface, Layer, Manifest, ModelConfig, Op,
    ValueKind, FORMAT_NAME, MANIFEST_VERSION,
};
pub use layers::{
    batchnorm, binarize, concat_channels, conv2d, crop, film_modulate, global_avg_pool, leaky_relu, linear, maxpool2,
    reflect_pad, softmax_channels, upsample_nearest2, BATCHNORM_EPS, LEAKY_SLOPE,
};
pub use tensor::Tensor;
pub use weights::{WeightStore, MAGIC as XSDW_MAGIC, MANIFEST_TENSOR};

use crate::error::{Error, Result};
use crate::types::label;

/// Binary anatomical factors, `[8, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnatomyFactors(pub Tensor);

impl AnatomyFactors {
    pub fn is_binary(&self) -> bool {
        self.0.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

/// Posterior mean of the modality encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityVector(pub Vec<f32>);

#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    /// `[4, H, W]` class probabilities.
    pub probabilities: Tensor,
    /// Argmax labels.
    pub mask: Array2<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceOutput {
    pub segmentation: Segmentation,
    pub reconstruction: Array2<f32>,
    pub factors: AnatomyFactors,
    pub modality: ModalityVector,
    pub decoded: Array2<f32>,
}

/// Validated weights ready for inference.
#[derive(Clone, Debug)]
pub struct XsdNet {
    store: WeightStore,
}

fn image_tensor(image: &Array2<f32>) -> Tensor {
    let (h, w) = image.dim();
    Tensor::from_image(h, w, image.iter().copied().collect()).expect("image shape")
}

fn tensor_image(t: &Tensor) -> Array2<f32> {
    let (_, h, w) = t.chw().expect("feature map");
    Array2::from_shape_vec((h, w), t.channel(0).to_vec()).expect("image shape")
}

fn argmax_mask(p: &Tensor) -> Array2<u8> {
    let (c, h, w) = p.chw().expect("feature map");
    Array2::from_shape_fn((h, w), |(y, x)| {
        let i = y * w + x;
        (1..c).fold(0, |best, k| {
            if p.data[k * h * w + i] > p.data[best * h * w + i] {
                k
            } else {
                best
            }
        }) as u8
    })
}

impl XsdNet {
    pub fn from_store(store: WeightStore) -> Result<Self> {
        store.validate()?;
        Ok(Self { store })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_store(WeightStore::load(path)?)
    }

    pub fn store(&self) -> &WeightStore {
        &self.store
    }

    pub fn config(&self) -> &ModelConfig {
        &self.store.manifest().config
    }

    fn run(&self, graph: &str, inputs: &[(&str, Tensor)]) -> Result<Tensor> {
        self.store.manifest().graphs[graph].evaluate(graph, &self.store, inputs)
    }

    /// Size after padding up to a multiple of `2^depth`.
    pub fn padded_size(&self, height: usize, width: usize) -> (usize, usize) {
        let m = 1usize << self.config().depth;
        (height.div_ceil(m) * m, width.div_ceil(m) * m)
    }

    /// Runs a U-Net graph on inputs padded to its stride, cropping back.
    fn run_padded(&self, graph: &str, inputs: &[(&str, &Tensor)]) -> Result<Tensor> {
        let (_, h, w) = inputs[0]
            .1
            .chw()
            .ok_or_else(|| Error::layer(graph, "input is not a feature map"))?;
        let (hp, wp) = self.padded_size(h, w);
        let padded = inputs
            .iter()
            .map(|(n, t)| {
                if (hp, wp) == (h, w) {
                    Ok((*n, (*t).clone()))
                } else {
                    reflect_pad(&format!("{graph}.pad"), t, hp - h, wp - w).map(|p| (*n, p))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let out = self.run(graph, &padded)?;
        if (hp, wp) == (h, w) {
            Ok(out)
        } else {
            crop(&format!("{graph}.crop"), &out, h, w)
        }
    }

    pub fn anatomy_encode(&self, image: &Array2<f32>) -> Result<AnatomyFactors> {
        Ok(AnatomyFactors(
            self.run_padded("anatomy", &[("image", &image_tensor(image))])?,
        ))
    }

    pub fn segment(&self, factors: &AnatomyFactors) -> Result<Segmentation> {
        let probabilities = self.run("segmenter", &[("factors", factors.0.clone())])?;
        let mask = argmax_mask(&probabilities);
        debug_assert!(mask.iter().all(|&v| (v as usize) < label::COUNT));
        Ok(Segmentation { probabilities, mask })
    }

    pub fn modality_encode(&self, image: &Array2<f32>, factors: &AnatomyFactors) -> Result<ModalityVector> {
        let z = self.run(
            "modality",
            &[("image", image_tensor(image)), ("factors", factors.0.clone())],
        )?;
        Ok(ModalityVector(z.data))
    }

    pub fn film_decode(&self, factors: &AnatomyFactors, z: &ModalityVector) -> Result<Array2<f32>> {
        let z = Tensor::new(vec![z.0.len()], z.0.clone())?;
        let out = self.run("decoder", &[("factors", factors.0.clone()), ("z", z)])?;
        Ok(tensor_image(&out))
    }

    /// Fusion U-Net over the decoded image stacked with the interim.
    pub fn fuse(&self, decoded: &Array2<f32>, image: &Array2<f32>) -> Result<Array2<f32>> {
        if decoded.dim() != image.dim() {
            return Err(Error::shape(
                "fusion inputs",
                format!("{:?}", image.dim()),
                format!("{:?}", decoded.dim()),
            ));
        }
        let out = self.run_padded(
            "fusion",
            &[("decoded", &image_tensor(decoded)), ("image", &image_tensor(image))],
        )?;
        Ok(tensor_image(&out))
    }

    /// Full forward pass on a magnitude interim image.
    pub fn infer(&self, image: &Array2<f32>) -> Result<InferenceOutput> {
        if image.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("interim image".into()));
        }
        let factors = self.anatomy_encode(image)?;
        let segmentation = self.segment(&factors)?;
        let modality = self.modality_encode(image, &factors)?;
        let decoded = self.film_decode(&factors, &modality)?;
        let reconstruction = self.fuse(&decoded, image)?;
        Ok(InferenceOutput {
            segmentation,
            reconstruction,
            factors,
            modality,
            decoded,
        })
    }

    /// Independent frames, in parallel when `parallel` is set.
    pub fn infer_frames(&self, frames: &[Array2<f32>], parallel: bool) -> Result<Vec<InferenceOutput>> {
        if parallel {
            frames.par_iter().map(|f| self.infer(f)).collect()
        } else {
            frames.iter().map(|f| self.infer(f)).collect()
        }
    }
}

/// Scales a magnitude frame so its 99th percentile is 1.
pub fn normalize_interim(image: &Array2<f64>) -> Array2<f32> {
    let mut v: Vec<f64> = image.iter().copied().filter(|x| x.is_finite()).collect();
    let scale = if v.is_empty() {
        1.0
    } else {
        let k = ((v.len() - 1) as f64 * 0.99).round() as usize;
        let (_, p, _) = v.select_nth_unstable_by(k, f64::total_cmp);
        if *p > 0.0 {
            *p
        } else {
            1.0
        }
    };
    image.mapv(|x| (x / scale) as f32)
}

#[cfg(test)]
mod tests;
