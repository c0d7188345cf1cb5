//! The checked-in tiny XSDW fixture and its reference outputs are written by
//! `fixtures/make_tiny_xsdw.py` with an independent NumPy forward pass.

use std::path::PathBuf;

use ndarray::Array2;
use serde::Deserialize;
use spiralcine::xsdnet::{Manifest, ModelConfig, WeightStore, XsdNet};

#[derive(Deserialize)]
struct Expected {
    height: usize,
    width: usize,
    image: Vec<f64>,
    factors: Vec<u8>,
    probabilities: Vec<f64>,
    z: Vec<f64>,
    decoded: Vec<f64>,
    reconstruction: Vec<f64>,
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn expected() -> Expected {
    serde_json::from_slice(&std::fs::read(fixture("tiny_expected.json")).unwrap()).unwrap()
}

fn max_diff(a: impl IntoIterator<Item = f32>, b: &[f64]) -> f64 {
    let a: Vec<f32> = a.into_iter().collect();
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (*x as f64 - y).abs()).fold(0.0, f64::max)
}

#[test]
fn fixture_manifest_is_the_standard_tiny_topology() {
    let store = WeightStore::load(&fixture("tiny.xsdw")).unwrap();
    let config = ModelConfig {
        depth: 2,
        base_channels: 2,
        segmenter_channels: 4,
        decoder_channels: 4,
        film_blocks: 2,
        ..ModelConfig::default()
    };
    assert_eq!(store.manifest(), &Manifest::standard(&config));
}

#[test]
fn fixture_round_trips_byte_identical() {
    let bytes = std::fs::read(fixture("tiny.xsdw")).unwrap();
    let store = WeightStore::from_bytes(&bytes, "tiny.xsdw").unwrap();
    assert_eq!(store.to_bytes(), bytes);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("copy.xsdw");
    store.save(&out).unwrap();
    assert_eq!(std::fs::read(out).unwrap(), bytes);
}

#[test]
fn forward_pass_matches_numpy_reference() {
    let net = XsdNet::load(&fixture("tiny.xsdw")).unwrap();
    let e = expected();
    let image = Array2::from_shape_vec((e.height, e.width), e.image.iter().map(|&v| v as f32).collect()).unwrap();
    let out = net.infer(&image).unwrap();

    let factors: Vec<u8> = out.factors.0.data.iter().map(|&v| v as u8).collect();
    assert_eq!(factors, e.factors);
    assert!(e.factors.contains(&1));
    let tol = 1e-4;
    let d = max_diff(out.segmentation.probabilities.data.iter().copied(), &e.probabilities);
    assert!(d < tol, "probabilities {d}");
    let d = max_diff(out.modality.0.iter().copied(), &e.z);
    assert!(d < tol, "modality {d}");
    let d = max_diff(out.decoded.iter().copied(), &e.decoded);
    assert!(d < tol, "decoded {d}");
    let d = max_diff(out.reconstruction.iter().copied(), &e.reconstruction);
    assert!(d < tol, "reconstruction {d}");
}

#[test]
fn truncated_fixture_is_rejected() {
    let bytes = std::fs::read(fixture("tiny.xsdw")).unwrap();
    assert!(WeightStore::from_bytes(&bytes[..bytes.len() - 9], "cut").is_err());
}
