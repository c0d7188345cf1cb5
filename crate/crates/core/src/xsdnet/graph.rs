//! Graph manifest: the network topology as data, shared with the trainer.

use std::collections::HashMap;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers;
use super::tensor::Tensor;
use super::weights::WeightStore;
use crate::error::{Error, Result};

pub const FORMAT_NAME: &str = "xsdnet";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Number of 2x2 poolings in the U-Nets; inputs are padded to a
    /// multiple of `2^depth`.
    pub depth: usize,
    pub base_channels: usize,
    pub n_factors: usize,
    pub z_dim: usize,
    pub n_classes: usize,
    pub kernel_size: usize,
    pub segmenter_channels: usize,
    pub decoder_channels: usize,
    pub film_blocks: usize,
    pub leaky_slope: f32,
    pub threshold: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            base_channels: 16,
            n_factors: 8,
            z_dim: 8,
            n_classes: 4,
            kernel_size: 3,
            segmenter_channels: 16,
            decoder_channels: 16,
            film_blocks: 3,
            leaky_slope: layers::LEAKY_SLOPE,
            threshold: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueKind {
    Map { channels: usize },
    Vector { len: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        channels: usize,
        #[serde(default = "default_eps")]
        eps: f32,
    },
    LeakyRelu {
        slope: f32,
    },
    MaxPool2,
    Upsample2,
    Concat,
    Softmax,
    Binarize {
        threshold: f32,
    },
    Film {
        channels: usize,
        z_dim: usize,
    },
    Linear {
        in_features: usize,
        out_features: usize,
    },
    GlobalAvgPool,
}

fn default_eps() -> f32 {
    layers::BATCHNORM_EPS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub name: String,
    pub inputs: Vec<String>,
    #[serde(flatten)]
    pub op: Op,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub inputs: IndexMap<String, ValueKind>,
    pub output: String,
    pub layers: Vec<Layer>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub graphs: IndexMap<String, Graph>,
}

/// Parameter tensors of a layer: name suffix and shape.
pub fn parameters(op: &Op) -> Vec<(&'static str, Vec<usize>)> {
    match *op {
        Op::Conv2d {
            in_channels,
            out_channels,
            kernel,
            ..
        } => vec![
            ("weight", vec![out_channels, in_channels, kernel, kernel]),
            ("bias", vec![out_channels]),
        ],
        Op::BatchNorm { channels, .. } => vec![
            ("gamma", vec![channels]),
            ("beta", vec![channels]),
            ("mean", vec![channels]),
            ("var", vec![channels]),
        ],
        Op::Film { channels, z_dim } => vec![
            ("gamma_weight", vec![channels, z_dim]),
            ("gamma_bias", vec![channels]),
            ("beta_weight", vec![channels, z_dim]),
            ("beta_bias", vec![channels]),
        ],
        Op::Linear {
            in_features,
            out_features,
        } => vec![
            ("weight", vec![out_features, in_features]),
            ("bias", vec![out_features]),
        ],
        _ => Vec::new(),
    }
}

pub fn tensor_name(graph: &str, layer: &str, param: &str) -> String {
    format!("{graph}.{layer}.{param}")
}

impl Graph {
    /// Kind of every value, checking wiring and channel counts.
    pub fn infer_kinds(&self, graph: &str) -> Result<HashMap<String, ValueKind>> {
        let mut kinds: HashMap<String, ValueKind> = self.inputs.iter().map(|(k, v)| (k.clone(), *v)).collect();
        for layer in &self.layers {
            let full = format!("{graph}.{}", layer.name);
            let err = |m: String| Error::layer(full.clone(), m);
            if kinds.contains_key(&layer.name) {
                return Err(err("name is already defined".into()));
            }
            let ins = layer
                .inputs
                .iter()
                .map(|i| kinds.get(i).copied().ok_or_else(|| err(format!("unknown input `{i}`"))))
                .collect::<Result<Vec<_>>>()?;
            let arity = match layer.op {
                Op::Concat => None,
                Op::Film { .. } => Some(2),
                _ => Some(1),
            };
            if arity.is_some_and(|a| a != ins.len()) || ins.is_empty() {
                return Err(err(format!("wrong number of inputs ({})", ins.len())));
            }
            let map = |k: ValueKind| match k {
                ValueKind::Map { channels } => Ok(channels),
                ValueKind::Vector { .. } => Err(err("expects a feature map".into())),
            };
            let out = match layer.op {
                Op::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    ..
                } => {
                    if map(ins[0])? != in_channels {
                        return Err(err(format!(
                            "input has {} channels, layer expects {in_channels}",
                            map(ins[0])?
                        )));
                    }
                    if kernel == 0 || stride == 0 {
                        return Err(err("kernel and stride must be positive".into()));
                    }
                    ValueKind::Map { channels: out_channels }
                }
                Op::BatchNorm { channels, .. } => {
                    if map(ins[0])? != channels {
                        return Err(err(format!(
                            "input has {} channels, layer expects {channels}",
                            map(ins[0])?
                        )));
                    }
                    ins[0]
                }
                Op::Film { channels, z_dim } => {
                    if map(ins[0])? != channels || ins[1] != (ValueKind::Vector { len: z_dim }) {
                        return Err(err("inputs must be a feature map and the modality vector".into()));
                    }
                    ins[0]
                }
                Op::Linear {
                    in_features,
                    out_features,
                } => {
                    if ins[0] != (ValueKind::Vector { len: in_features }) {
                        return Err(err(format!("expects a vector of length {in_features}")));
                    }
                    ValueKind::Vector { len: out_features }
                }
                Op::Concat => ValueKind::Map {
                    channels: ins.iter().map(|&k| map(k)).sum::<Result<usize>>()?,
                },
                Op::GlobalAvgPool => ValueKind::Vector { len: map(ins[0])? },
                Op::MaxPool2 | Op::Upsample2 | Op::Softmax => {
                    map(ins[0])?;
                    ins[0]
                }
                Op::LeakyRelu { .. } | Op::Binarize { .. } => ins[0],
            };
            kinds.insert(layer.name.clone(), out);
        }
        if !kinds.contains_key(&self.output) {
            return Err(Error::Weights(format!(
                "graph `{graph}` output `{}` is undefined",
                self.output
            )));
        }
        Ok(kinds)
    }

    pub fn output_kind(&self, graph: &str) -> Result<ValueKind> {
        Ok(self.infer_kinds(graph)?[&self.output])
    }

    fn output_layer(&self) -> Option<&Layer> {
        self.layers.iter().find(|l| l.name == self.output)
    }

    /// Runs the layers the output depends on.
    pub fn evaluate(&self, graph: &str, store: &WeightStore, inputs: &[(&str, Tensor)]) -> Result<Tensor> {
        let mut needed = vec![false; self.layers.len()];
        let index: HashMap<&str, usize> = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| (l.name.as_str(), i))
            .collect();
        let mut stack = vec![self.output.as_str()];
        while let Some(name) = stack.pop() {
            if let Some(&i) = index.get(name) {
                if !needed[i] {
                    needed[i] = true;
                    stack.extend(self.layers[i].inputs.iter().map(String::as_str));
                }
            }
        }
        let mut last_use: HashMap<&str, usize> = HashMap::new();
        for (i, l) in self.layers.iter().enumerate().filter(|(i, _)| needed[*i]) {
            for inp in &l.inputs {
                last_use.insert(inp.as_str(), i);
            }
        }

        let mut values: HashMap<String, Tensor> = HashMap::new();
        for (name, kind) in &self.inputs {
            let t = inputs
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::layer(format!("{graph}.{name}"), "input not supplied"))?;
            let ok = match (*kind, t.shape.as_slice()) {
                (ValueKind::Map { channels }, [c, _, _]) => *c == channels,
                (ValueKind::Vector { len }, [n]) => *n == len,
                _ => false,
            };
            if !ok {
                return Err(Error::layer(
                    format!("{graph}.{name}"),
                    format!("input shape {:?} does not match {kind:?}", t.shape),
                ));
            }
            values.insert(name.clone(), t);
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if !needed[i] {
                continue;
            }
            let full = format!("{graph}.{}", layer.name);
            let param = |p: &str| store.get(&tensor_name(graph, &layer.name, p));
            let x = |k: usize| -> Result<&Tensor> {
                values
                    .get(&layer.inputs[k])
                    .ok_or_else(|| Error::layer(full.clone(), format!("input `{}` unavailable", layer.inputs[k])))
            };
            let out = match &layer.op {
                Op::Conv2d { stride, pad, .. } => {
                    layers::conv2d(&full, x(0)?, param("weight")?, param("bias")?, *stride, *pad)?
                }
                Op::BatchNorm { eps, .. } => layers::batchnorm(
                    &full,
                    x(0)?,
                    param("gamma")?,
                    param("beta")?,
                    param("mean")?,
                    param("var")?,
                    *eps,
                )?,
                Op::LeakyRelu { slope } => layers::leaky_relu(x(0)?, *slope),
                Op::MaxPool2 => layers::maxpool2(&full, x(0)?)?,
                Op::Upsample2 => layers::upsample_nearest2(&full, x(0)?)?,
                Op::Concat => {
                    let parts = (0..layer.inputs.len()).map(x).collect::<Result<Vec<_>>>()?;
                    layers::concat_channels(&full, &parts)?
                }
                Op::Softmax => layers::softmax_channels(&full, x(0)?)?,
                Op::Binarize { threshold } => layers::binarize(x(0)?, *threshold),
                Op::Film { .. } => layers::film_modulate(
                    &full,
                    x(0)?,
                    x(1)?,
                    param("gamma_weight")?,
                    param("gamma_bias")?,
                    param("beta_weight")?,
                    param("beta_bias")?,
                )?,
                Op::Linear { .. } => layers::linear(&full, x(0)?, param("weight")?, param("bias")?)?,
                Op::GlobalAvgPool => layers::global_avg_pool(&full, x(0)?)?,
            };
            if !out.is_finite() {
                return Err(Error::layer(full, "non-finite activations"));
            }
            for inp in &layer.inputs {
                if last_use.get(inp.as_str()) == Some(&i) && *inp != self.output {
                    values.remove(inp);
                }
            }
            values.insert(layer.name.clone(), out);
        }
        values
            .remove(&self.output)
            .ok_or_else(|| Error::layer(format!("{graph}.{}", self.output), "output was not produced"))
    }
}

/// Name, inputs, output kind and the op of the output layer of one graph.
pub type GraphInterface = (&'static str, Vec<(&'static str, ValueKind)>, ValueKind, &'static str);

/// Required graphs.
pub fn interface(config: &ModelConfig) -> Vec<GraphInterface> {
    let map = |channels| ValueKind::Map { channels };
    let z = ValueKind::Vector { len: config.z_dim };
    vec![
        ("anatomy", vec![("image", map(1))], map(config.n_factors), "binarize"),
        (
            "segmenter",
            vec![("factors", map(config.n_factors))],
            map(config.n_classes),
            "softmax",
        ),
        (
            "modality",
            vec![("image", map(1)), ("factors", map(config.n_factors))],
            z,
            "linear",
        ),
        (
            "decoder",
            vec![("factors", map(config.n_factors)), ("z", z)],
            map(1),
            "",
        ),
        ("fusion", vec![("decoded", map(1)), ("image", map(1))], map(1), ""),
    ]
}

fn op_tag(op: &Op) -> &'static str {
    match op {
        Op::Conv2d { .. } => "conv2d",
        Op::BatchNorm { .. } => "batch_norm",
        Op::LeakyRelu { .. } => "leaky_relu",
        Op::MaxPool2 => "max_pool2",
        Op::Upsample2 => "upsample2",
        Op::Concat => "concat",
        Op::Softmax => "softmax",
        Op::Binarize { .. } => "binarize",
        Op::Film { .. } => "film",
        Op::Linear { .. } => "linear",
        Op::GlobalAvgPool => "global_avg_pool",
    }
}

impl Manifest {
    /// Checks the manifest against the fixed xSDNet interfaces.
    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT_NAME || self.version != MANIFEST_VERSION {
            return Err(Error::Weights(format!(
                "manifest is `{}` version {}, expected `{FORMAT_NAME}` version {MANIFEST_VERSION}",
                self.format, self.version
            )));
        }
        let c = &self.config;
        if (c.n_factors, c.z_dim, c.n_classes) != (8, 8, 4) {
            return Err(Error::Weights(format!(
                "expected 8 anatomy factors, modality length 8 and 4 classes, got {}, {}, {}",
                c.n_factors, c.z_dim, c.n_classes
            )));
        }
        for (name, inputs, output, last_op) in interface(c) {
            let g = self
                .graphs
                .get(name)
                .ok_or_else(|| Error::Weights(format!("manifest lacks graph `{name}`")))?;
            let declared: Vec<(&str, ValueKind)> = g.inputs.iter().map(|(k, v)| (k.as_str(), *v)).collect();
            if declared != inputs {
                return Err(Error::Weights(format!(
                    "graph `{name}` declares inputs {declared:?}, expected {inputs:?}"
                )));
            }
            let got = g.output_kind(name)?;
            if got != output {
                return Err(Error::Weights(format!(
                    "graph `{name}` produces {got:?}, expected {output:?}"
                )));
            }
            if !last_op.is_empty() {
                let op = g.output_layer().map(|l| op_tag(&l.op)).unwrap_or("input");
                if op != last_op {
                    return Err(Error::Weights(format!(
                        "graph `{name}` must end in {last_op}, ends in {op}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Every parameter tensor the manifest needs, in graph and layer order.
    pub fn required_tensors(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (g, graph) in &self.graphs {
            for layer in &graph.layers {
                for (p, shape) in parameters(&layer.op) {
                    out.push((tensor_name(g, &layer.name, p), shape));
                }
            }
        }
        out
    }

    /// The standard topology for a configuration.
    pub fn standard(config: &ModelConfig) -> Self {
        let c = config;
        let mut graphs = IndexMap::new();

        let mut b = Builder::new(c);
        b.unet("image", 1, c.n_factors);
        b.push("softmax", vec!["head".into()], Op::Softmax);
        b.push(
            "factors",
            vec!["softmax".into()],
            Op::Binarize { threshold: c.threshold },
        );
        graphs.insert("anatomy".into(), b.finish(&[("image", 1)], "factors"));

        let mut b = Builder::new(c);
        let mut x = "factors".to_string();
        let mut ch = c.n_factors;
        for i in 0..2 {
            x = b.block(&format!("conv{i}"), &x, ch, c.segmenter_channels, c.kernel_size, 1);
            ch = c.segmenter_channels;
        }
        b.conv("logits", &x, ch, c.n_classes, 1, 1);
        b.push("probabilities", vec!["logits".into()], Op::Softmax);
        graphs.insert(
            "segmenter".into(),
            b.finish(&[("factors", c.n_factors)], "probabilities"),
        );

        let mut b = Builder::new(c);
        b.push("input", vec!["image".into(), "factors".into()], Op::Concat);
        let mut x = "input".to_string();
        let mut ch = c.n_factors + 1;
        for i in 0..3 {
            let out = c.base_channels << i;
            x = b.block(&format!("down{i}"), &x, ch, out, c.kernel_size, 2);
            ch = out;
        }
        b.push("pool", vec![x], Op::GlobalAvgPool);
        b.push(
            "hidden",
            vec!["pool".into()],
            Op::Linear {
                in_features: ch,
                out_features: 2 * c.z_dim.max(16),
            },
        );
        b.push(
            "hidden_act",
            vec!["hidden".into()],
            Op::LeakyRelu { slope: c.leaky_slope },
        );
        for head in ["z_mean", "z_logvar"] {
            b.push(
                head,
                vec!["hidden_act".into()],
                Op::Linear {
                    in_features: 2 * c.z_dim.max(16),
                    out_features: c.z_dim,
                },
            );
        }
        graphs.insert(
            "modality".into(),
            b.finish(&[("image", 1), ("factors", c.n_factors)], "z_mean"),
        );

        let mut b = Builder::new(c);
        let mut x = "factors".to_string();
        let mut ch = c.n_factors;
        for i in 0..c.film_blocks {
            let conv = format!("conv{i}");
            b.conv(&conv, &x, ch, c.decoder_channels, c.kernel_size, 1);
            b.push(
                &format!("film{i}"),
                vec![conv, "z".into()],
                Op::Film {
                    channels: c.decoder_channels,
                    z_dim: c.z_dim,
                },
            );
            x = format!("act{i}");
            b.push(&x, vec![format!("film{i}")], Op::LeakyRelu { slope: c.leaky_slope });
            ch = c.decoder_channels;
        }
        b.conv("image_out", &x, ch, 1, 1, 1);
        let mut g = b.finish(&[("factors", c.n_factors)], "image_out");
        g.inputs.insert("z".into(), ValueKind::Vector { len: c.z_dim });
        graphs.insert("decoder".into(), g);

        let mut b = Builder::new(c);
        b.push("input", vec!["decoded".into(), "image".into()], Op::Concat);
        b.unet("input", 2, 1);
        graphs.insert("fusion".into(), b.finish(&[("decoded", 1), ("image", 1)], "head"));

        Manifest {
            format: FORMAT_NAME.into(),
            version: MANIFEST_VERSION,
            config: config.clone(),
            graphs,
        }
    }
}

struct Builder<'a> {
    config: &'a ModelConfig,
    layers: Vec<Layer>,
}

impl<'a> Builder<'a> {
    fn new(config: &'a ModelConfig) -> Self {
        Self {
            config,
            layers: Vec::new(),
        }
    }

    fn push(&mut self, name: &str, inputs: Vec<String>, op: Op) {
        self.layers.push(Layer {
            name: name.into(),
            inputs,
            op,
        });
    }

    fn conv(&mut self, name: &str, input: &str, cin: usize, cout: usize, kernel: usize, stride: usize) {
        self.push(
            name,
            vec![input.into()],
            Op::Conv2d {
                in_channels: cin,
                out_channels: cout,
                kernel,
                stride,
                pad: kernel / 2,
            },
        );
    }

    /// conv, batch norm, leaky ReLU; returns the activation name.
    fn block(&mut self, name: &str, input: &str, cin: usize, cout: usize, kernel: usize, stride: usize) -> String {
        self.conv(name, input, cin, cout, kernel, stride);
        let bn = format!("{name}_bn");
        self.push(
            &bn,
            vec![name.into()],
            Op::BatchNorm {
                channels: cout,
                eps: layers::BATCHNORM_EPS,
            },
        );
        let act = format!("{name}_act");
        self.push(
            &act,
            vec![bn],
            Op::LeakyRelu {
                slope: self.config.leaky_slope,
            },
        );
        act
    }

    /// U-Net from `input` ending in a 1x1 conv named `head`.
    fn unet(&mut self, input: &str, cin: usize, cout: usize) {
        let (k, base, depth) = (self.config.kernel_size, self.config.base_channels, self.config.depth);
        let mut x = input.to_string();
        let mut ch = cin;
        let mut skips = Vec::new();
        for l in 0..depth {
            let c = base << l;
            x = self.block(&format!("enc{l}a"), &x, ch, c, k, 1);
            x = self.block(&format!("enc{l}b"), &x, c, c, k, 1);
            skips.push((x.clone(), c));
            let pool = format!("pool{l}");
            self.push(&pool, vec![x], Op::MaxPool2);
            x = pool;
            ch = c;
        }
        let c = base << depth;
        x = self.block("mid_a", &x, ch, c, k, 1);
        x = self.block("mid_b", &x, c, c, k, 1);
        ch = c;
        for l in (0..depth).rev() {
            let (skip, sc) = skips[l].clone();
            let up = format!("up{l}");
            self.push(&up, vec![x], Op::Upsample2);
            let cat = format!("cat{l}");
            self.push(&cat, vec![up, skip], Op::Concat);
            let c = base << l;
            x = self.block(&format!("dec{l}a"), &cat, ch + sc, c, k, 1);
            x = self.block(&format!("dec{l}b"), &x, c, c, k, 1);
            ch = c;
        }
        self.conv("head", &x, ch, cout, 1, 1);
    }

    fn finish(self, inputs: &[(&str, usize)], output: &str) -> Graph {
        Graph {
            inputs: inputs
                .iter()
                .map(|(n, c)| (n.to_string(), ValueKind::Map { channels: *c }))
                .collect(),
            output: output.into(),
            layers: self.layers,
        }
    }
}

/// He-initialized weights for every tensor the manifest needs; batch norm
/// starts as identity and FiLM as `gamma = 1`, `beta = 0` plus small noise.
pub fn random_weights(manifest: &Manifest, seed: u64) -> Result<WeightStore> {
    manifest.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::new(manifest)?;
    for (g, graph) in &manifest.graphs {
        for layer in &graph.layers {
            for (p, shape) in parameters(&layer.op) {
                let n: usize = shape.iter().product();
                let fan_in = match (&layer.op, p) {
                    (
                        Op::Conv2d {
                            in_channels, kernel, ..
                        },
                        "weight",
                    ) => (in_channels * kernel * kernel) as f64,
                    (Op::Linear { in_features, .. }, "weight") => *in_features as f64,
                    (Op::Film { z_dim, .. }, _) => 100.0 * *z_dim as f64,
                    _ => 0.0,
                };
                let data: Vec<f32> = match p {
                    "gamma" | "var" | "gamma_bias" => vec![1.0; n],
                    _ if fan_in > 0.0 => {
                        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
                        (0..n).map(|_| normal.sample(&mut rng) as f32).collect()
                    }
                    _ => vec![0.0; n],
                };
                store.insert(tensor_name(g, &layer.name, p), Tensor::new(shape, data)?)?;
            }
        }
    }
    Ok(store)
}
