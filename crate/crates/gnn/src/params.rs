//! Parameter tensors, initialization and the checkpoint text format.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::batch::{FEATURE_SCHEMA, FEATURE_WIDTH};
use crate::config::{NetworkConfig, Pooling};
use crate::scalar::Scalar;
use crate::GnnError;

/// Edge types known to the embedding table.
pub const EDGE_TYPES: usize = jobshop_core::EdgeType::COUNT;

const MAGIC: &str = "jobshop-params 1";

/// Row-major matrix (biases and vectors are single rows).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LayerIdx {
    pub w_src: usize,
    pub b_src: usize,
    pub w_dst: usize,
    pub w_edge: usize,
    pub att: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Positions of the named tensors inside [`Params::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub machine: usize,
    pub embed: Vec<(usize, usize)>,
    pub global: Option<usize>,
    pub edge: usize,
    pub layers: Vec<LayerIdx>,
    pub action_w: usize,
    pub action_b: usize,
    pub value_w1: usize,
    pub value_b1: usize,
    pub value_w2: usize,
    pub value_b2: usize,
}

#[derive(Clone, Copy)]
enum Init {
    Zero,
    Uniform(f64),
    Glorot(f64),
}

struct Spec {
    name: String,
    rows: usize,
    cols: usize,
    init: Init,
}

fn specs(c: &NetworkConfig) -> (Vec<Spec>, Layout) {
    let d = c.hidden_dim;
    let kd = c.n_heads * d;
    let mut out: Vec<Spec> = Vec::new();
    let mut add = |name: String, rows: usize, cols: usize, init: Init| {
        out.push(Spec { name, rows, cols, init });
        out.len() - 1
    };
    let machine = add("embed.machine".into(), c.max_machines, c.machine_dim, Init::Uniform(0.5));
    let mut embed = Vec::new();
    let mut fan_in = FEATURE_WIDTH + c.machine_dim;
    for i in 0..c.embedder_depth {
        let w = add(format!("embed.{i}.w"), fan_in, d, Init::Glorot(1.0));
        let b = add(format!("embed.{i}.b"), 1, d, Init::Zero);
        embed.push((w, b));
        fan_in = d;
    }
    let global = (c.pooling == Pooling::LearnedNode)
        .then(|| add("embed.global".into(), 1, d, Init::Uniform(0.5)));
    let edge = add("embed.edge".into(), EDGE_TYPES, d, Init::Uniform(0.5));
    // Residual branches start small so that deep stacks stay well scaled.
    let branch_gain = if c.residual { 1.0 / (c.n_layers as f64).sqrt() } else { 1.0 };
    let layers = (0..c.n_layers)
        .map(|l| LayerIdx {
            w_src: add(format!("layer.{l}.w_src"), d, kd, Init::Glorot(1.0)),
            b_src: add(format!("layer.{l}.b_src"), 1, kd, Init::Zero),
            w_dst: add(format!("layer.{l}.w_dst"), d, kd, Init::Glorot(1.0)),
            w_edge: add(format!("layer.{l}.w_edge"), d, kd, Init::Glorot(1.0)),
            att: add(format!("layer.{l}.att"), c.n_heads, d, Init::Glorot(1.0)),
            w1: add(format!("layer.{l}.ffn.w1"), kd, d, Init::Glorot(1.0)),
            b1: add(format!("layer.{l}.ffn.b1"), 1, d, Init::Zero),
            w2: add(format!("layer.{l}.ffn.w2"), d, d, Init::Glorot(branch_gain)),
            b2: add(format!("layer.{l}.ffn.b2"), 1, d, Init::Zero),
        })
        .collect();
    let action_w = add("action.w".into(), c.action_input_width(), 1, Init::Glorot(0.01));
    let action_b = add("action.b".into(), 1, 1, Init::Zero);
    let summary = (c.n_layers + 1) * d;
    let value_w1 = add("value.w1".into(), summary, d, Init::Glorot(1.0));
    let value_b1 = add("value.b1".into(), 1, d, Init::Zero);
    let value_w2 = add("value.w2".into(), d, 1, Init::Glorot(1.0));
    let value_b2 = add("value.b2".into(), 1, 1, Init::Zero);
    let layout = Layout {
        machine,
        embed,
        global,
        edge,
        layers,
        action_w,
        action_b,
        value_w1,
        value_b1,
        value_w2,
        value_b2,
    };
    (out, layout)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params<S> {
    config: NetworkConfig,
    pub tensors: Vec<Tensor<S>>,
    pub(crate) layout: Layout,
}

impl<S: Scalar> Params<S> {
    pub fn init(config: &NetworkConfig, seed: u64) -> Result<Self, GnnError> {
        config.validate()?;
        let (specs, layout) = specs(config);
        let mut rng = jobshop_core::seed::rng_for(seed, &[jobshop_core::seed::stream::INIT]);
        let tensors = specs
            .into_iter()
            .map(|s| {
                let bound = match s.init {
                    Init::Zero => 0.0,
                    Init::Uniform(a) => a,
                    Init::Glorot(gain) => gain * (6.0 / (s.rows + s.cols) as f64).sqrt(),
                };
                let data = (0..s.rows * s.cols)
                    .map(|_| {
                        if bound == 0.0 {
                            S::zero()
                        } else {
                            S::from_f64(rng.random_range(-bound..bound))
                        }
                    })
                    .collect();
                Tensor {
                    name: s.name,
                    rows: s.rows,
                    cols: s.cols,
                    data,
                }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            tensors,
            layout,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in &mut z.tensors {
            t.data.fill(S::zero());
        }
        z
    }

    pub fn cast<T: Scalar>(&self) -> Params<T> {
        Params {
            config: self.config.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    rows: t.rows,
                    cols: t.cols,
                    data: t.data.iter().map(|v| T::from_f64(v.as_f64())).collect(),
                })
                .collect(),
            layout: self.layout.clone(),
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<S>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &S> {
        self.tensors.iter().flat_map(|t| t.data.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut S> {
        self.tensors.iter_mut().flat_map(|t| t.data.iter_mut())
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &Self, alpha: S) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a = *a + alpha * *b;
        }
    }

    pub fn scale(&mut self, alpha: S) {
        for a in self.iter_mut() {
            *a = *a * alpha;
        }
    }

    /// Euclidean norm, accumulated in double precision.
    pub fn norm(&self) -> f64 {
        self.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{MAGIC}").unwrap();
        writeln!(out, "features {FEATURE_SCHEMA}").unwrap();
        writeln!(out, "config {}", serde_json::to_string(&self.config).unwrap()).unwrap();
        for t in &self.tensors {
            writeln!(out, "tensor {} {} {}", t.name, t.rows, t.cols).unwrap();
            for row in t.data.chunks(t.cols.max(1)) {
                let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(out, "{}", cells.join(" ")).unwrap();
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, GnnError> {
        let err = |line: usize, message: String| GnnError::Checkpoint { line, message };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| err(text.lines().count(), format!("unexpected end of file, expected {what}")))
        };
        let (no, magic) = next("header")?;
        if magic != MAGIC {
            return Err(err(no, format!("expected {MAGIC:?}, found {magic:?}")));
        }
        let (no, schema) = next("feature schema")?;
        let found: u32 = schema
            .strip_prefix("features ")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err(no, "expected \"features <version>\"".into()))?;
        if found != FEATURE_SCHEMA {
            return Err(GnnError::SchemaMismatch {
                found,
                expected: FEATURE_SCHEMA,
            });
        }
        let (no, cfg) = next("config")?;
        let config: NetworkConfig = cfg
            .strip_prefix("config ")
            .ok_or_else(|| err(no, "expected \"config <json>\"".into()))
            .and_then(|j| serde_json::from_str(j).map_err(|e| err(no, e.to_string())))?;
        config.validate().map_err(|e| err(no, e.to_string()))?;
        let (specs, layout) = specs(&config);
        let mut tensors = Vec::with_capacity(specs.len());
        for s in specs {
            let (no, head) = next("tensor header")?;
            let want = format!("tensor {} {} {}", s.name, s.rows, s.cols);
            if head != want {
                return Err(err(no, format!("expected {want:?}, found {head:?}")));
            }
            let mut data = Vec::with_capacity(s.rows * s.cols);
            for _ in 0..s.rows {
                let (no, row) = next("tensor row")?;
                let before = data.len();
                for tok in row.split_whitespace() {
                    data.push(
                        tok.parse::<S>()
                            .map_err(|_| err(no, format!("not a number: {tok:?}")))?,
                    );
                }
                if data.len() - before != s.cols {
                    return Err(err(no, format!("expected {} values in row", s.cols)));
                }
            }
            tensors.push(Tensor {
                name: s.name,
                rows: s.rows,
                cols: s.cols,
                data,
            });
        }
        if let Some((no, _)) = lines.find(|(_, l)| !l.is_empty()) {
            return Err(err(no, "unexpected trailing content".into()));
        }
        Ok(Self {
            config,
            tensors,
            layout,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GnnError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GnnError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
