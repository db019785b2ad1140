//! Differentiable predictors producing one [`LogitVector`] per sample.
//!
//! Three architectures live behind the [`Model`] trait and are selected by
//! name (`rbf_linear`, `mlp`, `cnn3`). Each supports a learned drainage head
//! (the output layer carries `C + 1` rows) or a constant one (the output
//! layer carries `C` rows and a fixed drainage logit is injected per sample,
//! receiving no gradient).
//!
//! Backpropagation is layer-wise over cached activations; there is no
//! general tape. Gradient-check tests guard every architecture.

pub mod layers;
mod cnn3;
mod mlp;
mod rbf_linear;

pub use cnn3::Cnn3;
pub use mlp::Mlp;
pub use rbf_linear::RbfLinear;

use crate::loss::LossGrad;
use crate::mat::Matrix;
use crate::numerics::LogitVector;
use crate::{Error, Result};
use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

/// How the drainage logit is produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DrainageHead {
    /// The output layer has a `C + 1`-th row that is trained like any class.
    Learned,
    /// The drainage logit is a fixed constant for every sample; it receives
    /// no gradient.
    Constant(f64),
}

impl DrainageHead {
    /// Width of the trainable output layer.
    pub fn output_width(&self, num_classes: usize) -> usize {
        match self {
            DrainageHead::Learned => num_classes + 1,
            DrainageHead::Constant(_) => num_classes,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s == "learned" {
            return Ok(DrainageHead::Learned);
        }
        if let Some(v) = s.strip_prefix("constant:") {
            let value: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad drainage constant '{v}'")))?;
            if !value.is_finite() {
                return Err(Error::Config("drainage constant must be finite".into()));
            }
            return Ok(DrainageHead::Constant(value));
        }
        Err(Error::Config(format!(
            "bad drainage head '{s}'; expected 'learned' or 'constant:<value>'"
        )))
    }
}

impl std::fmt::Display for DrainageHead {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DrainageHead::Learned => write!(f, "learned"),
            DrainageHead::Constant(v) => write!(f, "constant:{v}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: &str, kind: ParamKind, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            name: name.to_string(),
            kind,
            shape,
            data: vec![0.0; len],
        }
    }
}

/// Flat list of named tensors; doubles as the gradient container.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet {
    pub tensors: Vec<Tensor>,
}

impl ParameterSet {
    pub fn zeros_like(&self) -> ParameterSet {
        ParameterSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(&t.name, t.kind, t.shape.clone()))
                .collect(),
        }
    }

    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Accumulates `other` scaled by `factor`; shapes must match.
    pub fn add_scaled(&mut self, other: &ParameterSet, factor: f64) {
        debug_assert_eq!(self.tensors.len(), other.tensors.len());
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            debug_assert_eq!(a.shape, b.shape);
            for (av, bv) in a.data.iter_mut().zip(&b.data) {
                *av += factor * bv;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            for v in &mut t.data {
                *v *= factor;
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Cached activations from a `forward_cached` pass; consumed by `backward`.
/// The layout of `stages` is private to each model.
pub struct ForwardCache {
    batch_rows: usize,
    stages: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub(crate) fn new(batch_rows: usize, stages: Vec<Vec<f64>>) -> Self {
        ForwardCache { batch_rows, stages }
    }

    pub(crate) fn check(&self, batch: &Matrix, expected_stages: usize) -> Result<()> {
        if self.batch_rows != batch.rows() || self.stages.len() != expected_stages {
            return Err(Error::StaleCache(format!(
                "cache built for {} rows / {} stages, batch has {} rows",
                self.batch_rows,
                self.stages.len(),
                batch.rows()
            )));
        }
        Ok(())
    }

    pub(crate) fn stage(&self, i: usize) -> &[f64] {
        &self.stages[i]
    }
}

/// A differentiable predictor. `backward` returns the gradient of the MEAN
/// per-sample loss with respect to every trainable parameter.
pub trait Model: Send + Sync {
    fn kind(&self) -> &'static str;
    fn spec(&self) -> ModelSpec;
    fn input_dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn drainage_head(&self) -> DrainageHead;
    fn params(&self) -> &ParameterSet;
    fn params_mut(&mut self) -> &mut ParameterSet;

    fn forward_batch(&self, batch: &Matrix) -> Result<Vec<LogitVector>>;
    fn forward_cached(&self, batch: &Matrix) -> Result<(Vec<LogitVector>, ForwardCache)>;
    fn backward(
        &self,
        batch: &Matrix,
        cache: &ForwardCache,
        loss_grads: &[LossGrad],
    ) -> Result<ParameterSet>;

    fn forward_one(&self, x: &[f64]) -> Result<LogitVector> {
        let batch = Matrix::from_rows(&[x.to_vec()])?;
        Ok(self.forward_batch(&batch)?.remove(0))
    }
}

pub(crate) fn check_batch(batch: &Matrix, input_dim: usize) -> Result<()> {
    if batch.cols() != input_dim {
        return Err(Error::ShapeMismatch(format!(
            "batch feature width {} does not match model input {}",
            batch.cols(),
            input_dim
        )));
    }
    Ok(())
}

/// Builds the final logit vector, injecting the constant drainage logit when
/// the head is constant.
pub(crate) fn assemble_logits(raw: &[f64], head: DrainageHead) -> Result<LogitVector> {
    match head {
        DrainageHead::Learned => LogitVector::from_raw(raw.to_vec()),
        DrainageHead::Constant(v) => LogitVector::new(raw, v),
    }
}

// ---------------------------------------------------------------------------
// Model specs and the name registry
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct RbfLinearSpec {
    pub num_classes: usize,
    pub grid: usize,
    pub span: f64,
    pub gamma: f64,
    pub drainage: DrainageHead,
    pub init_seed: u64,
}

impl Default for RbfLinearSpec {
    fn default() -> Self {
        RbfLinearSpec {
            num_classes: 4,
            grid: 20,
            span: 5.0,
            gamma: 0.25,
            drainage: DrainageHead::Learned,
            init_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    pub drainage: DrainageHead,
    pub init_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cnn3Spec {
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub conv_channels: [usize; 3],
    pub fc_hidden: usize,
    pub num_classes: usize,
    pub drainage: DrainageHead,
    pub init_seed: u64,
}

impl Cnn3Spec {
    /// The standard backbone: 3×3 kernels, channels 32/64/64, 2×2 pooling,
    /// one hidden affine of width 128.
    pub fn standard(height: usize, width: usize, num_classes: usize) -> Self {
        Cnn3Spec {
            height,
            width,
            in_channels: 1,
            conv_channels: [32, 64, 64],
            fc_hidden: 128,
            num_classes,
            drainage: DrainageHead::Learned,
            init_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    RbfLinear(RbfLinearSpec),
    Mlp(MlpSpec),
    Cnn3(Cnn3Spec),
}

impl ModelSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelSpec::RbfLinear(_) => "rbf_linear",
            ModelSpec::Mlp(_) => "mlp",
            ModelSpec::Cnn3(_) => "cnn3",
        }
    }

    pub fn drainage(&self) -> DrainageHead {
        match self {
            ModelSpec::RbfLinear(s) => s.drainage,
            ModelSpec::Mlp(s) => s.drainage,
            ModelSpec::Cnn3(s) => s.drainage,
        }
    }

    pub fn set_drainage(&mut self, head: DrainageHead) {
        match self {
            ModelSpec::RbfLinear(s) => s.drainage = head,
            ModelSpec::Mlp(s) => s.drainage = head,
            ModelSpec::Cnn3(s) => s.drainage = head,
        }
    }

    pub fn set_num_classes(&mut self, c: usize) {
        match self {
            ModelSpec::RbfLinear(s) => s.num_classes = c,
            ModelSpec::Mlp(s) => s.num_classes = c,
            ModelSpec::Cnn3(s) => s.num_classes = c,
        }
    }

    pub fn set_init_seed(&mut self, seed: u64) {
        match self {
            ModelSpec::RbfLinear(s) => s.init_seed = seed,
            ModelSpec::Mlp(s) => s.init_seed = seed,
            ModelSpec::Cnn3(s) => s.init_seed = seed,
        }
    }

    /// Serializes to the flat `model.*` key-value lines understood by
    /// [`ModelSpec::from_pairs`]; also embedded in checkpoints.
    pub fn to_config_lines(&self) -> String {
        let mut s = format!("model.kind = {}\n", self.kind());
        match self {
            ModelSpec::RbfLinear(m) => {
                s += &format!("model.num_classes = {}\n", m.num_classes);
                s += &format!("model.rbf_grid = {}\n", m.grid);
                s += &format!("model.rbf_span = {}\n", m.span);
                s += &format!("model.rbf_gamma = {}\n", m.gamma);
                s += &format!("model.drainage = {}\n", m.drainage);
                s += &format!("model.init_seed = {}\n", m.init_seed);
            }
            ModelSpec::Mlp(m) => {
                s += &format!("model.num_classes = {}\n", m.num_classes);
                s += &format!("model.input_dim = {}\n", m.input_dim);
                let hidden: Vec<String> = m.hidden.iter().map(|h| h.to_string()).collect();
                s += &format!("model.hidden = {}\n", hidden.join(","));
                s += &format!("model.drainage = {}\n", m.drainage);
                s += &format!("model.init_seed = {}\n", m.init_seed);
            }
            ModelSpec::Cnn3(m) => {
                s += &format!("model.num_classes = {}\n", m.num_classes);
                s += &format!(
                    "model.image = {}x{}x{}\n",
                    m.height, m.width, m.in_channels
                );
                s += &format!(
                    "model.conv_channels = {},{},{}\n",
                    m.conv_channels[0], m.conv_channels[1], m.conv_channels[2]
                );
                s += &format!("model.fc_hidden = {}\n", m.fc_hidden);
                s += &format!("model.drainage = {}\n", m.drainage);
                s += &format!("model.init_seed = {}\n", m.init_seed);
            }
        }
        s
    }

    /// Parses `model.*` pairs, removing every key it consumes.
    pub fn from_pairs(pairs: &mut BTreeMap<String, String>) -> Result<ModelSpec> {
        let kind = pairs
            .remove("model.kind")
            .ok_or_else(|| Error::Config("missing model.kind".into()))?;
        let require = |pairs: &mut BTreeMap<String, String>, key: &str| {
            pairs
                .remove(key)
                .ok_or_else(|| Error::Config(format!("missing {key}")))
        };

        let drainage = match pairs.remove("model.drainage") {
            Some(s) => DrainageHead::parse(&s)?,
            None => DrainageHead::Learned,
        };
        let init_seed: u64 = match pairs.remove("model.init_seed") {
            Some(s) => parse_num(&s, "model.init_seed")?,
            None => 0,
        };
        let num_classes: usize =
            parse_num(&require(pairs, "model.num_classes")?, "model.num_classes")?;

        match kind.as_str() {
            "rbf_linear" => {
                let d = RbfLinearSpec::default();
                Ok(ModelSpec::RbfLinear(RbfLinearSpec {
                    num_classes,
                    grid: opt_num(pairs.remove("model.rbf_grid"), d.grid, "model.rbf_grid")?,
                    span: opt_num(pairs.remove("model.rbf_span"), d.span, "model.rbf_span")?,
                    gamma: opt_num(pairs.remove("model.rbf_gamma"), d.gamma, "model.rbf_gamma")?,
                    drainage,
                    init_seed,
                }))
            }
            "mlp" => {
                let input_dim = parse_num(&require(pairs, "model.input_dim")?, "model.input_dim")?;
                let hidden = match pairs.remove("model.hidden") {
                    Some(s) if !s.trim().is_empty() => s
                        .split(',')
                        .map(|v| parse_num(v, "model.hidden"))
                        .collect::<Result<Vec<usize>>>()?,
                    _ => vec![],
                };
                Ok(ModelSpec::Mlp(MlpSpec {
                    input_dim,
                    hidden,
                    num_classes,
                    drainage,
                    init_seed,
                }))
            }
            "cnn3" => {
                let image = require(pairs, "model.image")?;
                let dims: Vec<usize> = image
                    .split('x')
                    .map(|v| parse_num(v, "model.image"))
                    .collect::<Result<Vec<usize>>>()?;
                if dims.len() != 3 {
                    return Err(Error::Config(format!(
                        "model.image must be HxWxC, got '{image}'"
                    )));
                }
                let std = Cnn3Spec::standard(dims[0], dims[1], num_classes);
                let conv = match pairs.remove("model.conv_channels") {
                    Some(s) => {
                        let v: Vec<usize> = s
                            .split(',')
                            .map(|x| parse_num(x, "model.conv_channels"))
                            .collect::<Result<Vec<usize>>>()?;
                        if v.len() != 3 {
                            return Err(Error::Config(
                                "model.conv_channels needs exactly 3 values".into(),
                            ));
                        }
                        [v[0], v[1], v[2]]
                    }
                    None => std.conv_channels,
                };
                Ok(ModelSpec::Cnn3(Cnn3Spec {
                    height: dims[0],
                    width: dims[1],
                    in_channels: dims[2],
                    conv_channels: conv,
                    fc_hidden: opt_num(
                        pairs.remove("model.fc_hidden"),
                        std.fc_hidden,
                        "model.fc_hidden",
                    )?,
                    num_classes,
                    drainage,
                    init_seed,
                }))
            }
            other => Err(Error::Config(format!(
                "unknown model '{other}'; available: {}",
                names().join(", ")
            ))),
        }
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, key: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{s}' for {key}")))
}

fn opt_num<T: std::str::FromStr>(v: Option<String>, default: T, key: &str) -> Result<T> {
    match v {
        Some(s) => parse_num(&s, key),
        None => Ok(default),
    }
}

/// Names of all registered model kinds.
pub fn names() -> Vec<&'static str> {
    vec!["rbf_linear", "mlp", "cnn3"]
}

/// Builds and initializes the model described by the spec.
pub fn build(spec: &ModelSpec) -> Result<Box<dyn Model>> {
    match spec {
        ModelSpec::RbfLinear(s) => Ok(Box::new(RbfLinear::new(s.clone())?)),
        ModelSpec::Mlp(s) => Ok(Box::new(Mlp::new(s.clone())?)),
        ModelSpec::Cnn3(s) => Ok(Box::new(Cnn3::new(s.clone())?)),
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"DRNC";
const CHECKPOINT_VERSION: u32 = 1;

/// Writes a versioned binary checkpoint: the model spec as config lines plus
/// every tensor with its shape and little-endian f64 payload. Round-trips
/// bit-exactly.
pub fn save_checkpoint(model: &dyn Model, path: impl AsRef<Path>) -> Result<()> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());

    let spec = model.spec().to_config_lines();
    out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    out.extend_from_slice(spec.as_bytes());

    let params = model.params();
    out.extend_from_slice(&(params.tensors.len() as u32).to_le_bytes());
    for t in &params.tensors {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(match t.kind {
            ParamKind::Weight => 0,
            ParamKind::Bias => 1,
        });
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a checkpoint back into a freshly built model.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Box<dyn Model>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let fail = |pos: usize, msg: &str| Error::Ingest {
        path: path.display().to_string(),
        offset: pos as u64,
        message: msg.into(),
    };
    let need = |pos: usize, n: usize| {
        if pos + n > bytes.len() {
            Err(fail(pos, "truncated checkpoint"))
        } else {
            Ok(())
        }
    };

    need(pos, 8)?;
    if &bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(fail(0, "bad checkpoint magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(fail(4, &format!("unsupported checkpoint version {version}")));
    }
    pos = 8;

    need(pos, 4)?;
    let spec_len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
    pos += 4;
    need(pos, spec_len)?;
    let spec_text = std::str::from_utf8(&bytes[pos..pos + spec_len])
        .map_err(|_| fail(pos, "spec is not utf-8"))?;
    pos += spec_len;

    let mut pairs = BTreeMap::new();
    for line in spec_text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            pairs.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let spec = ModelSpec::from_pairs(&mut pairs)?;
    let mut model = build(&spec)?;

    need(pos, 4)?;
    let n_tensors = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
    pos += 4;
    if n_tensors != model.params().tensors.len() {
        return Err(fail(
            pos,
            &format!(
                "checkpoint has {n_tensors} tensors, model needs {}",
                model.params().tensors.len()
            ),
        ));
    }

    for i in 0..n_tensors {
        need(pos, 2)?;
        let name_len = u16::from_le_bytes(bytes[pos..pos + 2].try_into().unwrap()) as usize;
        pos += 2;
        need(pos, name_len + 2)?;
        let name = std::str::from_utf8(&bytes[pos..pos + name_len])
            .map_err(|_| fail(pos, "tensor name is not utf-8"))?
            .to_string();
        pos += name_len;
        let kind = match bytes[pos] {
            0 => ParamKind::Weight,
            1 => ParamKind::Bias,
            k => return Err(fail(pos, &format!("bad tensor kind {k}"))),
        };
        pos += 1;
        let ndim = bytes[pos] as usize;
        pos += 1;
        need(pos, ndim * 4)?;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize);
            pos += 4;
        }
        let len: usize = shape.iter().product();
        need(pos, len * 8)?;
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap()));
            pos += 8;
        }

        let slot = &mut model.params_mut().tensors[i];
        if slot.name != name || slot.shape != shape || slot.kind != kind {
            return Err(fail(
                pos,
                &format!(
                    "tensor {i} mismatch: checkpoint {name} {shape:?} vs model {} {:?}",
                    slot.name, slot.shape
                ),
            ));
        }
        slot.data = data;
    }
    if pos != bytes.len() {
        return Err(fail(pos, "trailing bytes after last tensor"));
    }
    Ok(model)
}

// Shared initializer: uniform in ±sqrt(6 / (fan_in + fan_out)).
pub(crate) fn glorot_uniform(
    rng: &mut rand_chacha::ChaCha8Rng,
    fan_in: usize,
    fan_out: usize,
    len: usize,
) -> Vec<f64> {
    use rand::Rng;
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..len).map(|_| rng.gen_range(-s..=s)).collect()
}
