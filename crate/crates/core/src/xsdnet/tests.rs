use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small() -> ModelConfig {
    ModelConfig {
        depth: 2,
        base_channels: 4,
        segmenter_channels: 4,
        decoder_channels: 4,
        film_blocks: 2,
        ..ModelConfig::default()
    }
}

fn net(config: &ModelConfig, seed: u64) -> XsdNet {
    XsdNet::from_store(random_weights(&Manifest::standard(config), seed).unwrap()).unwrap()
}

fn image(h: usize, w: usize, seed: u64) -> Array2<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((h, w), |_| rng.random::<f32>())
}

#[test]
fn standard_manifest_validates_and_serializes() {
    let m = Manifest::standard(&ModelConfig::default());
    m.validate().unwrap();
    let text = serde_json::to_string(&m).unwrap();
    let back: Manifest = serde_json::from_str(&text).unwrap();
    assert_eq!(back, m);
    // segmenter: three convolutions then softmax
    let seg = &m.graphs["segmenter"];
    let convs = seg.layers.iter().filter(|l| matches!(l.op, Op::Conv2d { .. })).count();
    assert_eq!(convs, 3);
}

#[test]
fn manifest_rejects_wrong_interface() {
    let mut m = Manifest::standard(&small());
    m.config.n_factors = 6;
    assert!(m.validate().is_err());
    let mut m = Manifest::standard(&small());
    m.graphs.shift_remove("decoder");
    assert!(matches!(m.validate(), Err(Error::Weights(msg)) if msg.contains("decoder")));
    let mut m = Manifest::standard(&small());
    let seg = m.graphs.get_mut("segmenter").unwrap();
    seg.output = "logits".into();
    assert!(m.validate().is_err());
}

#[test]
fn inference_is_deterministic_and_shaped() {
    let n = net(&small(), 1);
    let img = image(20, 24, 2);
    let a = n.infer(&img).unwrap();
    let b = n.infer(&img).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.reconstruction.dim(), (20, 24));
    assert_eq!(a.segmentation.probabilities.shape, vec![4, 20, 24]);
    assert_eq!(a.segmentation.mask.dim(), (20, 24));
    assert_eq!(a.factors.0.shape, vec![8, 20, 24]);
    assert!(a.factors.is_binary());
    assert_eq!(a.modality.0.len(), 8);
    assert!(a.modality.0.iter().all(|v| v.is_finite()));
    assert!(a.decoded.iter().all(|v| v.is_finite()));
    let par = n.infer_frames(&[img.clone(), image(20, 24, 3)], true).unwrap();
    assert_eq!(par[0], a);
}

#[test]
fn default_topology_shape_contract() {
    let n = net(&ModelConfig::default(), 7);
    let out = n.infer(&image(128, 128, 8)).unwrap();
    assert_eq!(out.reconstruction.dim(), (128, 128));
    assert_eq!(out.segmentation.probabilities.shape, vec![4, 128, 128]);
}

#[test]
fn probabilities_sum_to_one() {
    let n = net(&small(), 4);
    let out = n.infer(&image(16, 16, 5)).unwrap();
    let p = &out.segmentation.probabilities;
    for i in 0..256 {
        let s: f32 = (0..4).map(|c| p.data[c * 256 + i]).sum();
        assert!((s - 1.0).abs() < 1e-5, "{s}");
    }
    for (i, &m) in out.segmentation.mask.iter().enumerate() {
        let best = (0..4).map(|c| p.data[c * 256 + i]).fold(f32::MIN, f32::max);
        assert_eq!(p.data[m as usize * 256 + i], best);
    }
}

#[test]
fn zero_factors_give_constant_probabilities() {
    let n = net(&small(), 9);
    let seg = n.segment(&AnatomyFactors(Tensor::zeros(vec![8, 12, 10]))).unwrap();
    let p = &seg.probabilities;
    for c in 0..4 {
        let ch = p.channel(c);
        assert!(ch.iter().all(|&v| v == ch[0]));
    }
}

#[test]
fn kernel_one_segmenter_is_pixel_equivariant() {
    let config = ModelConfig {
        kernel_size: 1,
        ..small()
    };
    let n = net(&config, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (h, w) = (6, 7);
    let data: Vec<f32> = (0..8 * h * w).map(|_| rng.random_range(0..2) as f32).collect();
    let x = Tensor::new(vec![8, h, w], data).unwrap();
    let (a, b) = (3, 29);
    let mut xs = x.clone();
    for c in 0..8 {
        xs.channel_mut(c).swap(a, b);
    }
    let p = n.segment(&AnatomyFactors(x)).unwrap().probabilities;
    let q = n.segment(&AnatomyFactors(xs)).unwrap().probabilities;
    for c in 0..4 {
        let mut pc = p.channel(c).to_vec();
        pc.swap(a, b);
        assert_eq!(pc, q.channel(c));
    }
}

#[test]
fn identity_film_decodes_as_plain_stack() {
    let config = small();
    let mut store = random_weights(&Manifest::standard(&config), 12).unwrap();
    let decoder = store.manifest().graphs["decoder"].clone();
    for layer in &decoder.layers {
        if let Op::Film { .. } = layer.op {
            for (p, fill) in [
                ("gamma_weight", 0.0),
                ("gamma_bias", 1.0),
                ("beta_weight", 0.0),
                ("beta_bias", 0.0),
            ] {
                store
                    .get_mut(&tensor_name("decoder", &layer.name, p))
                    .unwrap()
                    .data
                    .fill(fill);
            }
        }
    }
    let n = XsdNet::from_store(store.clone()).unwrap();
    let factors = n.anatomy_encode(&image(16, 16, 13)).unwrap();
    let out = n.film_decode(&factors, &ModalityVector(vec![0.7; 8])).unwrap();
    let other = n.film_decode(&factors, &ModalityVector(vec![-3.0; 8])).unwrap();
    assert_eq!(out, other);

    // the same stack with the FiLM layers removed
    let mut x = factors.0.clone();
    for layer in &decoder.layers {
        let name = |p: &str| store.get(&tensor_name("decoder", &layer.name, p)).unwrap();
        x = match &layer.op {
            Op::Conv2d { stride, pad, .. } => conv2d("c", &x, name("weight"), name("bias"), *stride, *pad).unwrap(),
            Op::LeakyRelu { slope } => leaky_relu(&x, *slope),
            Op::Film { .. } => x,
            other => panic!("unexpected {other:?}"),
        };
    }
    let diff = out.iter().zip(&x.data).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
    assert!(diff < 1e-6, "{diff}");
}

#[test]
fn random_film_output_is_finite() {
    let n = net(&small(), 14);
    let factors = n.anatomy_encode(&image(16, 16, 15)).unwrap();
    let out = n.film_decode(&factors, &ModalityVector(vec![0.5; 8])).unwrap();
    assert!(out.iter().all(|v| v.is_finite()));
}

#[test]
fn binarization_is_a_fixed_point() {
    let n = net(&small(), 16);
    let f = n.anatomy_encode(&image(16, 16, 17)).unwrap();
    assert!(f.is_binary());
    assert_eq!(binarize(&f.0, n.config().threshold), f.0);
}

#[test]
fn non_finite_activations_name_the_layer() {
    let mut store = random_weights(&Manifest::standard(&small()), 18).unwrap();
    store.get_mut("segmenter.logits.bias").unwrap().data[0] = f32::INFINITY;
    let n = XsdNet::from_store(store).unwrap();
    match n.segment(&AnatomyFactors(Tensor::zeros(vec![8, 4, 4]))) {
        Err(Error::Layer { layer, .. }) => assert!(layer.starts_with("segmenter."), "{layer}"),
        other => panic!("{other:?}"),
    }
    let bad = image(16, 16, 0).mapv(|_| f32::NAN);
    assert!(matches!(n.infer(&bad), Err(Error::NonFinite(_))));
}

#[test]
fn wrong_factor_channels_is_a_shape_error() {
    let n = net(&small(), 19);
    assert!(matches!(
        n.segment(&AnatomyFactors(Tensor::zeros(vec![7, 4, 4]))),
        Err(Error::Layer { .. })
    ));
}

#[test]
fn weights_round_trip_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let store = random_weights(&Manifest::standard(&small()), 20).unwrap();
    let path = dir.path().join("w.xsdw");
    store.save(&path).unwrap();
    let first = std::fs::read(&path).unwrap();
    assert_eq!(&first[..4], b"XSDW");
    let loaded = WeightStore::load(&path).unwrap();
    assert_eq!(loaded, store);
    loaded.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
}

#[test]
fn missing_tensor_is_named() {
    let mut store = random_weights(&Manifest::standard(&small()), 21).unwrap();
    store.remove("decoder.film1.beta_bias").unwrap();
    let bytes = store.to_bytes();
    match WeightStore::from_bytes(&bytes, "w") {
        Err(Error::Weights(msg)) => assert!(msg.contains("decoder.film1.beta_bias"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn wrong_shape_is_named() {
    let mut store = random_weights(&Manifest::standard(&small()), 22).unwrap();
    *store.get_mut("anatomy.head.bias").unwrap() = Tensor::zeros(vec![3]);
    match XsdNet::from_store(store) {
        Err(Error::Weights(msg)) => assert!(msg.contains("anatomy.head.bias"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn checksum_failure_is_reported() {
    let store = random_weights(&Manifest::standard(&small()), 23).unwrap();
    let mut bytes = store.to_bytes();
    let n = bytes.len();
    bytes[n - 100] ^= 1;
    assert!(
        matches!(WeightStore::from_bytes(&bytes, "w"), Err(Error::Format { message, .. }) if message.contains("CRC"))
    );
}

#[test]
fn manifest_padding_is_spaces() {
    let store = random_weights(&Manifest::standard(&small()), 24).unwrap();
    let bytes = store.to_bytes();
    let name_len = u16::from_le_bytes([bytes[12], bytes[13]]) as usize;
    assert_eq!(&bytes[14..14 + name_len], MANIFEST_TENSOR.as_bytes());
    let words = u32::from_le_bytes(bytes[15 + name_len..19 + name_len].try_into().unwrap()) as usize;
    let text = &bytes[19 + name_len..19 + name_len + 4 * words];
    assert_eq!(text[0], b'{');
    let trimmed = std::str::from_utf8(text).unwrap().trim_end_matches(' ');
    assert!(trimmed.ends_with('}'));
    assert!(text.len() - trimmed.len() < 4);
}

#[test]
fn normalize_interim_scales_percentile() {
    let img = Array2::from_shape_fn((10, 10), |(y, x)| (y * 10 + x) as f64);
    let n = normalize_interim(&img);
    assert!((n[[9, 8]] - 1.0).abs() < 1e-6);
    assert_eq!(normalize_interim(&Array2::zeros((3, 3))), Array2::<f32>::zeros((3, 3)));
}
