//! Typed layer graph with exact integer shape inference and parameter counting.
//!
//! Geometry is square (one kernel/stride/padding value per layer) and the batch
//! dimension is fixed at 1, so a tensor is fully described by `C x H x W`.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const GRAPH_SCHEMA_VERSION: u32 = 1;

/// Name, layers, edges, inputs and outputs of a graph.
pub type GraphParts = (String, Vec<LayerSpec>, Vec<(String, String)>, Vec<String>, Vec<String>);

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid geometry{}: {detail}", at_layer(.layer))]
    InvalidGeometry { layer: Option<String>, detail: String },
    #[error("shape mismatch at layer `{layer}`: {detail}")]
    ShapeMismatch { layer: String, detail: String },
    #[error("duplicate layer id `{0}`")]
    DuplicateId(String),
    #[error("edge references unknown layer `{0}`")]
    UnknownLayer(String),
    #[error("cycle detected among layers: {0:?}")]
    Cycle(Vec<String>),
    #[error("invalid graph structure at `{layer}`: {detail}")]
    Structure { layer: String, detail: String },
    #[error("invalid layer `{layer}`: {detail}")]
    InvalidLayer { layer: String, detail: String },
    #[error("model json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported model schema version {0}")]
    Version(u32),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn at_layer(layer: &Option<String>) -> String {
    match layer {
        Some(id) => format!(" at layer `{id}`"),
        None => String::new(),
    }
}

fn geometry(detail: impl Into<String>) -> GraphError {
    GraphError::InvalidGeometry {
        layer: None,
        detail: detail.into(),
    }
}

impl GraphError {
    fn with_layer(self, id: &str) -> GraphError {
        match self {
            GraphError::InvalidGeometry { layer: None, detail } => GraphError::InvalidGeometry {
                layer: Some(id.to_string()),
                detail,
            },
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DataType {
    #[serde(rename = "FP32")]
    Fp32,
    #[serde(rename = "FP16")]
    Fp16,
    #[serde(rename = "INT8")]
    Int8,
}

impl DataType {
    pub fn as_str(self) -> &'static str {
        match self {
            DataType::Fp32 => "FP32",
            DataType::Fp16 => "FP16",
            DataType::Int8 => "INT8",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl TensorShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Result<Self, GraphError> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(geometry(format!(
                "tensor dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        Ok(TensorShape {
            channels,
            height,
            width,
        })
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Half-open range `[start, end)` of positions in a linearized layer order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LayerRange {
    pub start: usize,
    pub end: usize,
}

impl LayerRange {
    pub fn new(start: usize, end: usize) -> Self {
        LayerRange { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, index: usize) -> bool {
        self.start <= index && index < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activation {
    LeakyReLU,
    ReLU,
    Tanh,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PoolMode {
    Max,
    Avg,
}

/// Hyperparameters shared by convolution and transposed convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvParams {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    #[serde(default = "one")]
    pub dilation: usize,
    #[serde(default = "one")]
    pub groups: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    #[serde(default)]
    pub has_bias: bool,
}

fn one() -> usize {
    1
}

impl ConvParams {
    /// Plain (undilated, ungrouped) square convolution geometry.
    pub fn square(kernel: usize, stride: usize, padding: usize, in_channels: usize, out_channels: usize) -> Self {
        ConvParams {
            kernel,
            stride,
            padding,
            dilation: 1,
            groups: 1,
            in_channels,
            out_channels,
            has_bias: false,
        }
    }

    pub fn with_bias(mut self, has_bias: bool) -> Self {
        self.has_bias = has_bias;
        self
    }

    fn effective_kernel(&self) -> usize {
        self.dilation * (self.kernel - 1) + 1
    }

    fn weight_count(&self) -> u64 {
        let k = self.kernel as u64;
        let per_group_in = (self.in_channels / self.groups) as u64;
        let mut n = k * k * per_group_in * self.out_channels as u64;
        if self.has_bias {
            n += self.out_channels as u64;
        }
        n
    }

    fn validate(&self) -> Result<(), GraphError> {
        if self.kernel == 0 || self.stride == 0 || self.dilation == 0 || self.groups == 0 {
            return Err(geometry("kernel, stride, dilation and groups must be positive"));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(geometry("channel counts must be positive"));
        }
        if !self.in_channels.is_multiple_of(self.groups) || !self.out_channels.is_multiple_of(self.groups) {
            return Err(geometry(format!(
                "channels {}->{} not divisible by groups {}",
                self.in_channels, self.out_channels, self.groups
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolParams {
    pub mode: PoolMode,
    pub kernel: usize,
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
}

/// Layer operator with the hyperparameters that apply to it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum LayerOp {
    Conv(ConvParams),
    Deconv(ConvParams),
    BatchNorm { channels: usize },
    Activation(Activation),
    Pool(PoolParams),
    Crop { border: usize },
    Concat,
    Dropout,
    Slice { output: TensorShape },
    Equal,
}

impl LayerOp {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerOp::Conv(_) => "Conv",
            LayerOp::Deconv(_) => "Deconv",
            LayerOp::BatchNorm { .. } => "BatchNorm",
            LayerOp::Activation(_) => "Activation",
            LayerOp::Pool(_) => "Pool",
            LayerOp::Crop { .. } => "Crop",
            LayerOp::Concat => "Concat",
            LayerOp::Dropout => "Dropout",
            LayerOp::Slice { .. } => "Slice",
            LayerOp::Equal => "Equal",
        }
    }

    /// Kind tag plus the sub-kind (activation function, pool mode) where one exists.
    pub fn kind_names(&self) -> Vec<&'static str> {
        let mut names = vec![self.kind_name()];
        match self {
            LayerOp::Activation(a) => names.push(match a {
                Activation::LeakyReLU => "LeakyReLU",
                Activation::ReLU => "ReLU",
                Activation::Tanh => "Tanh",
                Activation::Softmax => "Softmax",
            }),
            LayerOp::Pool(p) => names.push(match p.mode {
                PoolMode::Max => "MaxPool",
                PoolMode::Avg => "AvgPool",
            }),
            _ => {}
        }
        names
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LayerSpec {
    pub id: String,
    pub op: LayerOp,
    pub dtype: DataType,
}

impl LayerSpec {
    pub fn new(id: impl Into<String>, op: LayerOp, dtype: DataType) -> Self {
        LayerSpec {
            id: id.into(),
            op,
            dtype,
        }
    }

    /// Numeric hyperparameter by field name, `None` when the layer kind has no such field.
    pub fn field(&self, name: &str) -> Option<Value> {
        if name == "dtype" {
            return Some(Value::from(self.dtype.as_str()));
        }
        if name == "kind" {
            return Some(Value::from(self.op.kind_name()));
        }
        let n = match (&self.op, name) {
            (LayerOp::Conv(c) | LayerOp::Deconv(c), _) => match name {
                "kernel" => c.kernel,
                "stride" => c.stride,
                "padding" => c.padding,
                "dilation" => c.dilation,
                "groups" => c.groups,
                "in_channels" => c.in_channels,
                "out_channels" => c.out_channels,
                "has_bias" => return Some(Value::from(c.has_bias)),
                _ => return None,
            },
            (LayerOp::Pool(p), "kernel") => p.kernel,
            (LayerOp::Pool(p), "stride") => p.stride,
            (LayerOp::Pool(p), "padding") => p.padding,
            (LayerOp::BatchNorm { channels }, "channels") => *channels,
            (LayerOp::Crop { border }, "crop_border") => *border,
            _ => return None,
        };
        Some(Value::from(n as u64))
    }

    pub fn is_padded_deconv(&self) -> bool {
        matches!(&self.op, LayerOp::Deconv(c) if c.padding > 0)
    }

    fn validate(&self) -> Result<(), GraphError> {
        let res = match &self.op {
            LayerOp::Conv(c) | LayerOp::Deconv(c) => c.validate(),
            LayerOp::Pool(p) if p.kernel == 0 || p.stride == 0 => {
                Err(geometry("pool kernel and stride must be positive"))
            }
            LayerOp::BatchNorm { channels: 0 } => Err(geometry("batchnorm channels must be positive")),
            LayerOp::Crop { border: 0 } => Err(geometry("crop border must be at least 1")),
            LayerOp::Slice { output } => TensorShape::new(output.channels, output.height, output.width).map(|_| ()),
            _ => Ok(()),
        };
        res.map_err(|e| e.with_layer(&self.id))
    }
}

/// Transposed-convolution output size: `s·(n−1) + k − 2p`.
pub fn deconv_output_size(n: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize, GraphError> {
    if n == 0 || kernel == 0 || stride == 0 {
        return Err(geometry(format!(
            "deconv requires n, k, s >= 1 (n={n}, k={kernel}, s={stride})"
        )));
    }
    let out = (stride * (n - 1) + kernel) as i64 - 2 * padding as i64;
    if out < 1 {
        return Err(geometry(format!(
            "deconv n={n} k={kernel} s={stride} p={padding} yields non-positive size {out}"
        )));
    }
    Ok(out as usize)
}

/// Convolution output size: `floor((n − k + 2p)/s) + 1`.
pub fn conv_output_size(n: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize, GraphError> {
    if n == 0 || kernel == 0 || stride == 0 {
        return Err(geometry(format!(
            "conv requires n, k, s >= 1 (n={n}, k={kernel}, s={stride})"
        )));
    }
    let padded = n + 2 * padding;
    if padded < kernel {
        return Err(geometry(format!(
            "window {kernel} larger than padded input {padded} (n={n}, p={padding})"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

pub fn crop_output_size(n: usize, border: usize) -> Result<usize, GraphError> {
    if n <= 2 * border {
        return Err(geometry(format!("crop border {border} consumes input of size {n}")));
    }
    Ok(n - 2 * border)
}

/// Validated, immutable layer DAG.
///
/// Construction checks endpoints, fan-in rules and acyclicity, and caches the
/// canonical topological order.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    name: String,
    layers: IndexMap<String, LayerSpec>,
    edges: Vec<(String, String)>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    order: Vec<String>,
}

impl PartialEq for ModelGraph {
    fn eq(&self, other: &Self) -> bool {
        let mut a = self.edges.clone();
        let mut b = other.edges.clone();
        a.sort();
        b.sort();
        self.name == other.name
            && self.layers == other.layers
            && a == b
            && self.inputs == other.inputs
            && self.outputs == other.outputs
    }
}

impl ModelGraph {
    pub fn new(
        name: impl Into<String>,
        layers: Vec<LayerSpec>,
        edges: Vec<(String, String)>,
        inputs: Vec<String>,
        outputs: Vec<String>,
    ) -> Result<Self, GraphError> {
        let mut map = IndexMap::with_capacity(layers.len());
        for layer in layers {
            layer.validate()?;
            if map.contains_key(&layer.id) {
                return Err(GraphError::DuplicateId(layer.id));
            }
            map.insert(layer.id.clone(), layer);
        }
        for (src, dst) in &edges {
            for end in [src, dst] {
                if !map.contains_key(end) {
                    return Err(GraphError::UnknownLayer(end.clone()));
                }
            }
        }
        for id in inputs.iter().chain(outputs.iter()) {
            if !map.contains_key(id) {
                return Err(GraphError::UnknownLayer(id.clone()));
            }
        }

        let mut fan_in: HashMap<&str, usize> = HashMap::new();
        for (_, dst) in &edges {
            *fan_in.entry(dst.as_str()).or_default() += 1;
        }
        for (id, layer) in &map {
            let preds = fan_in.get(id.as_str()).copied().unwrap_or(0);
            let is_input = inputs.contains(id);
            let structure = |detail: String| GraphError::Structure {
                layer: id.clone(),
                detail,
            };
            if is_input && preds > 0 {
                return Err(structure(format!("graph input has {preds} incoming edges")));
            }
            if !is_input && preds == 0 {
                return Err(structure("layer is not reachable from any input".into()));
            }
            match layer.op {
                LayerOp::Concat if preds < 2 && !is_input => {
                    return Err(structure(format!("concat needs at least 2 inputs, has {preds}")));
                }
                LayerOp::Concat => {}
                _ if preds > 1 => {
                    return Err(structure(format!("{} layer has {preds} inputs", layer.op.kind_name())));
                }
                _ => {}
            }
            if is_input && matches!(layer.op, LayerOp::Concat) {
                return Err(structure("concat cannot consume the graph input directly".into()));
            }
        }

        let order = topological_order(&map, &edges)?;
        Ok(ModelGraph {
            name: name.into(),
            layers: map,
            edges,
            inputs,
            outputs,
            order,
        })
    }

    /// A graph with no layers: its output is the input.
    pub fn empty(name: impl Into<String>) -> Self {
        ModelGraph {
            name: name.into(),
            layers: IndexMap::new(),
            edges: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            order: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layer(&self, id: &str) -> Option<&LayerSpec> {
        self.layers.get(id)
    }

    /// Layers in insertion order.
    pub fn layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.values()
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn edges(&self) -> &[(String, String)] {
        &self.edges
    }

    pub fn inputs(&self) -> &[String] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[String] {
        &self.outputs
    }

    pub fn predecessors<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges
            .iter()
            .filter(move |(_, dst)| dst == id)
            .map(|(src, _)| src.as_str())
    }

    pub fn successors<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges
            .iter()
            .filter(move |(src, _)| src == id)
            .map(|(_, dst)| dst.as_str())
    }

    /// Deconstructs into owned parts for graph rewriting.
    pub fn into_parts(self) -> GraphParts {
        (
            self.name,
            self.layers.into_values().collect(),
            self.edges,
            self.inputs,
            self.outputs,
        )
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let doc: GraphDoc = serde_json::from_str(text)?;
        doc.into_graph()
    }

    pub fn to_json(&self) -> String {
        let doc = GraphDoc::from_graph(self);
        let mut s = serde_json::to_string_pretty(&doc).expect("graph document serializes");
        s.push('\n');
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GraphError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| GraphError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

/// Kahn's algorithm, always popping the lexicographically smallest ready id.
fn topological_order(
    layers: &IndexMap<String, LayerSpec>,
    edges: &[(String, String)],
) -> Result<Vec<String>, GraphError> {
    let mut indegree: HashMap<&str, usize> = layers.keys().map(|k| (k.as_str(), 0)).collect();
    let mut succ: HashMap<&str, Vec<&str>> = HashMap::new();
    for (src, dst) in edges {
        *indegree.get_mut(dst.as_str()).expect("endpoint checked") += 1;
        succ.entry(src.as_str()).or_default().push(dst.as_str());
    }
    let mut ready: BinaryHeap<Reverse<&str>> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(k, _)| Reverse(*k))
        .collect();
    let mut order = Vec::with_capacity(layers.len());
    while let Some(Reverse(id)) = ready.pop() {
        order.push(id.to_string());
        for next in succ.get(id).into_iter().flatten() {
            let d = indegree.get_mut(next).expect("endpoint checked");
            *d -= 1;
            if *d == 0 {
                ready.push(Reverse(*next));
            }
        }
    }
    if order.len() != layers.len() {
        let mut stuck: Vec<String> = indegree
            .into_iter()
            .filter(|(_, d)| *d > 0)
            .map(|(k, _)| k.to_string())
            .collect();
        stuck.sort();
        return Err(GraphError::Cycle(stuck));
    }
    Ok(order)
}

/// Deterministic topological order, ties broken by lexicographic id.
pub fn linearize(graph: &ModelGraph) -> &[String] {
    &graph.order
}

pub type ShapeMap = BTreeMap<String, TensorShape>;

/// Output shape of every layer for a single graph-input shape.
pub fn infer_shapes(graph: &ModelGraph, input: TensorShape) -> Result<ShapeMap, GraphError> {
    match infer_shapes_partial(graph, input) {
        (shapes, None) => Ok(shapes),
        (_, Some(err)) => Err(err),
    }
}

/// Like [`infer_shapes`] but returns the shapes inferred before the first failure.
pub fn infer_shapes_partial(graph: &ModelGraph, input: TensorShape) -> (ShapeMap, Option<GraphError>) {
    let mut shapes = ShapeMap::new();
    if let Err(e) = TensorShape::new(input.channels, input.height, input.width) {
        return (shapes, Some(e));
    }
    for id in linearize(graph) {
        let layer = &graph.layers[id];
        let preds: Vec<TensorShape> = if graph.inputs.contains(id) {
            vec![input]
        } else {
            graph.predecessors(id).map(|p| shapes[p]).collect()
        };
        match layer_output_shape(layer, &preds) {
            Ok(out) => {
                shapes.insert(id.clone(), out);
            }
            Err(e) => return (shapes, Some(e.with_layer(id))),
        }
    }
    (shapes, None)
}

/// Shapes of the declared graph outputs; an empty graph passes its input through.
pub fn output_shapes(graph: &ModelGraph, input: TensorShape) -> Result<Vec<TensorShape>, GraphError> {
    if graph.outputs.is_empty() {
        return Ok(vec![input]);
    }
    let shapes = infer_shapes(graph, input)?;
    Ok(graph.outputs.iter().map(|o| shapes[o]).collect())
}

fn layer_output_shape(layer: &LayerSpec, preds: &[TensorShape]) -> Result<TensorShape, GraphError> {
    let mismatch = |detail: String| GraphError::ShapeMismatch {
        layer: layer.id.clone(),
        detail,
    };
    if let LayerOp::Concat = layer.op {
        let first = preds[0];
        let mut channels = 0;
        for p in preds {
            if (p.height, p.width) != (first.height, first.width) {
                return Err(mismatch(format!("concat spatial dims differ: {first} vs {p}")));
            }
            channels += p.channels;
        }
        return Ok(TensorShape { channels, ..first });
    }
    let x = preds[0];
    let spatial = |f: &dyn Fn(usize) -> Result<usize, GraphError>| -> Result<(usize, usize), GraphError> {
        Ok((f(x.height)?, f(x.width)?))
    };
    match &layer.op {
        LayerOp::Conv(c) => {
            if c.in_channels != x.channels {
                return Err(mismatch(format!(
                    "expects {} input channels, got {}",
                    c.in_channels, x.channels
                )));
            }
            let k = c.effective_kernel();
            let (h, w) = spatial(&|n| conv_output_size(n, k, c.stride, c.padding))?;
            TensorShape::new(c.out_channels, h, w)
        }
        LayerOp::Deconv(c) => {
            if c.in_channels != x.channels {
                return Err(mismatch(format!(
                    "expects {} input channels, got {}",
                    c.in_channels, x.channels
                )));
            }
            let k = c.effective_kernel();
            let (h, w) = spatial(&|n| deconv_output_size(n, k, c.stride, c.padding))?;
            TensorShape::new(c.out_channels, h, w)
        }
        LayerOp::Pool(p) => {
            let (h, w) = spatial(&|n| conv_output_size(n, p.kernel, p.stride, p.padding))?;
            TensorShape::new(x.channels, h, w)
        }
        LayerOp::Crop { border } => {
            let (h, w) = spatial(&|n| crop_output_size(n, *border))?;
            TensorShape::new(x.channels, h, w)
        }
        LayerOp::BatchNorm { channels } => {
            if *channels != x.channels {
                return Err(mismatch(format!(
                    "batchnorm declares {channels} channels, input has {}",
                    x.channels
                )));
            }
            Ok(x)
        }
        LayerOp::Slice { output } => Ok(*output),
        LayerOp::Activation(_) | LayerOp::Dropout | LayerOp::Equal => Ok(x),
        LayerOp::Concat => unreachable!("handled above"),
    }
}

/// Parameter contribution of one layer (batchnorm counts scale, shift and both running statistics).
pub fn layer_param_count(layer: &LayerSpec) -> u64 {
    match &layer.op {
        LayerOp::Conv(c) | LayerOp::Deconv(c) => c.weight_count(),
        LayerOp::BatchNorm { channels } => 4 * *channels as u64,
        _ => 0,
    }
}

pub fn param_count(graph: &ModelGraph) -> u64 {
    graph.layers().map(layer_param_count).sum()
}

// ---- JSON document -------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDoc {
    name: String,
    layers: Vec<LayerDoc>,
    edges: Vec<(String, String)>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    version: u32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    id: String,
    kind: String,
    #[serde(default = "empty_params")]
    params: Value,
    dtype: DataType,
}

fn empty_params() -> Value {
    Value::Object(Default::default())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoParams {}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelsParams {
    channels: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FunctionParams {
    function: Activation,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BorderParams {
    border: usize,
}

impl LayerDoc {
    fn from_layer(layer: &LayerSpec) -> Self {
        let params = match &layer.op {
            LayerOp::Conv(c) | LayerOp::Deconv(c) => serde_json::to_value(c),
            LayerOp::BatchNorm { channels } => serde_json::to_value(ChannelsParams { channels: *channels }),
            LayerOp::Activation(a) => serde_json::to_value(FunctionParams { function: *a }),
            LayerOp::Pool(p) => serde_json::to_value(p),
            LayerOp::Crop { border } => serde_json::to_value(BorderParams { border: *border }),
            LayerOp::Slice { output } => serde_json::to_value(output),
            LayerOp::Concat | LayerOp::Dropout | LayerOp::Equal => Ok(empty_params()),
        }
        .expect("layer params serialize");
        LayerDoc {
            id: layer.id.clone(),
            kind: layer.op.kind_name().to_string(),
            params,
            dtype: layer.dtype,
        }
    }

    fn into_layer(self) -> Result<LayerSpec, GraphError> {
        let invalid = |detail: String| GraphError::InvalidLayer {
            layer: self.id.clone(),
            detail,
        };
        let params = self.params.clone();
        let parse_err = |e: serde_json::Error| invalid(format!("params for {}: {e}", self.kind));
        let op = match self.kind.as_str() {
            "Conv" => LayerOp::Conv(serde_json::from_value(params).map_err(parse_err)?),
            "Deconv" => LayerOp::Deconv(serde_json::from_value(params).map_err(parse_err)?),
            "BatchNorm" => {
                let p: ChannelsParams = serde_json::from_value(params).map_err(parse_err)?;
                LayerOp::BatchNorm { channels: p.channels }
            }
            "Activation" => {
                let p: FunctionParams = serde_json::from_value(params).map_err(parse_err)?;
                LayerOp::Activation(p.function)
            }
            "Pool" => LayerOp::Pool(serde_json::from_value(params).map_err(parse_err)?),
            "Crop" => {
                let p: BorderParams = serde_json::from_value(params).map_err(parse_err)?;
                LayerOp::Crop { border: p.border }
            }
            "Slice" => LayerOp::Slice {
                output: serde_json::from_value(params).map_err(parse_err)?,
            },
            "Concat" | "Dropout" | "Equal" => {
                let _: NoParams = serde_json::from_value(params).map_err(parse_err)?;
                match self.kind.as_str() {
                    "Concat" => LayerOp::Concat,
                    "Dropout" => LayerOp::Dropout,
                    _ => LayerOp::Equal,
                }
            }
            other => return Err(invalid(format!("unknown layer kind `{other}`"))),
        };
        Ok(LayerSpec {
            id: self.id,
            op,
            dtype: self.dtype,
        })
    }
}

impl GraphDoc {
    fn from_graph(graph: &ModelGraph) -> Self {
        GraphDoc {
            name: graph.name.clone(),
            layers: graph.layers().map(LayerDoc::from_layer).collect(),
            edges: graph.edges.clone(),
            inputs: graph.inputs.clone(),
            outputs: graph.outputs.clone(),
            version: GRAPH_SCHEMA_VERSION,
        }
    }

    fn into_graph(self) -> Result<ModelGraph, GraphError> {
        if self.version != GRAPH_SCHEMA_VERSION {
            return Err(GraphError::Version(self.version));
        }
        let layers = self
            .layers
            .into_iter()
            .map(LayerDoc::into_layer)
            .collect::<Result<Vec<_>, _>>()?;
        if layers.is_empty() {
            return Ok(ModelGraph::empty(self.name));
        }
        ModelGraph::new(self.name, layers, self.edges, self.inputs, self.outputs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(id: &str, k: usize, s: usize, p: usize, cin: usize, cout: usize) -> LayerSpec {
        LayerSpec::new(
            id,
            LayerOp::Conv(ConvParams::square(k, s, p, cin, cout)),
            DataType::Fp16,
        )
    }

    fn relu(id: &str) -> LayerSpec {
        LayerSpec::new(id, LayerOp::Activation(Activation::ReLU), DataType::Fp16)
    }

    fn e(a: &str, b: &str) -> (String, String) {
        (a.to_string(), b.to_string())
    }

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    /// Number of valid placements of a k-window with stride s on a padded line.
    fn sliding_windows(n: usize, k: usize, s: usize, p: usize) -> usize {
        let padded = n + 2 * p;
        (0..padded).step_by(s).filter(|start| start + k <= padded).count()
    }

    #[test]
    fn deconv_size_examples() {
        assert_eq!(deconv_output_size(128, 4, 2, 1).unwrap(), 256);
        assert_eq!(deconv_output_size(63, 4, 2, 0).unwrap(), 128);
        assert_eq!(deconv_output_size(1, 1, 1, 0).unwrap(), 1);
        assert!(matches!(
            deconv_output_size(1, 1, 1, 1),
            Err(GraphError::InvalidGeometry { .. })
        ));
    }

    #[test]
    fn conv_size_examples() {
        assert_eq!(conv_output_size(130, 3, 1, 0).unwrap(), 128);
        for n in [1, 7, 256] {
            assert_eq!(conv_output_size(n, 1, 1, 0).unwrap(), n);
        }
        assert_eq!(sliding_windows(7, 4, 2, 1), 3);
        assert_eq!(conv_output_size(7, 4, 2, 1).unwrap(), 3);
        assert!(conv_output_size(2, 5, 1, 1).is_err());
    }

    #[test]
    fn conv_size_matches_brute_force() {
        for n in 1..40 {
            for k in 1..6 {
                for st in 1..4 {
                    for p in 0..3 {
                        let got = conv_output_size(n, k, st, p);
                        if n + 2 * p < k {
                            assert!(got.is_err());
                        } else {
                            assert_eq!(got.unwrap(), sliding_windows(n, k, st, p), "n={n} k={k} s={st} p={p}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn crop_shape() {
        let g = ModelGraph::new(
            "crop",
            vec![LayerSpec::new("c", LayerOp::Crop { border: 1 }, DataType::Fp16)],
            vec![],
            s(&["c"]),
            s(&["c"]),
        )
        .unwrap();
        let shapes = infer_shapes(&g, TensorShape::new(3, 258, 258).unwrap()).unwrap();
        assert_eq!(shapes["c"], TensorShape::new(3, 256, 256).unwrap());
    }

    #[test]
    fn empty_graph_passthrough() {
        let g = ModelGraph::empty("nothing");
        let input = TensorShape::new(3, 10, 12).unwrap();
        assert!(infer_shapes(&g, input).unwrap().is_empty());
        assert_eq!(output_shapes(&g, input).unwrap(), vec![input]);
    }

    #[test]
    fn single_conv_params() {
        let g = ModelGraph::new("one", vec![conv("c", 3, 1, 1, 3, 3)], vec![], s(&["c"]), s(&["c"])).unwrap();
        assert_eq!(param_count(&g), 9 * 3 * 3);
    }

    #[test]
    fn linearize_chain_and_diamond() {
        let chain = ModelGraph::new(
            "chain",
            vec![relu("c"), relu("a"), relu("b")],
            vec![e("a", "b"), e("b", "c")],
            s(&["a"]),
            s(&["c"]),
        )
        .unwrap();
        assert_eq!(linearize(&chain), s(&["a", "b", "c"]).as_slice());

        let diamond = ModelGraph::new(
            "diamond",
            vec![
                relu("a"),
                relu("c"),
                relu("b"),
                LayerSpec::new("d", LayerOp::Concat, DataType::Fp16),
            ],
            vec![e("a", "c"), e("a", "b"), e("c", "d"), e("b", "d")],
            s(&["a"]),
            s(&["d"]),
        )
        .unwrap();
        assert_eq!(linearize(&diamond), s(&["a", "b", "c", "d"]).as_slice());
        let shapes = infer_shapes(&diamond, TensorShape::new(4, 8, 8).unwrap()).unwrap();
        assert_eq!(shapes["d"].channels, 8);
    }

    #[test]
    fn cycle_is_rejected() {
        let err = ModelGraph::new(
            "cyc",
            vec![
                relu("in"),
                relu("a"),
                LayerSpec::new("b", LayerOp::Concat, DataType::Fp16),
            ],
            vec![e("in", "b"), e("b", "a"), e("a", "b")],
            s(&["in"]),
            s(&["b"]),
        )
        .unwrap_err();
        assert!(matches!(err, GraphError::Cycle(_)), "{err}");
    }

    #[test]
    fn concat_spatial_mismatch() {
        let g = ModelGraph::new(
            "m",
            vec![
                relu("a"),
                conv("down", 3, 2, 1, 2, 2),
                relu("b"),
                LayerSpec::new("cat", LayerOp::Concat, DataType::Fp16),
            ],
            vec![e("a", "down"), e("a", "b"), e("down", "cat"), e("b", "cat")],
            s(&["a"]),
            s(&["cat"]),
        )
        .unwrap();
        let err = infer_shapes(&g, TensorShape::new(2, 8, 8).unwrap()).unwrap_err();
        assert!(matches!(err, GraphError::ShapeMismatch { ref layer, .. } if layer == "cat"));
    }

    #[test]
    fn invalid_geometry_names_layer() {
        let g = ModelGraph::new("g", vec![conv("big", 9, 1, 0, 1, 1)], vec![], s(&["big"]), s(&["big"])).unwrap();
        let err = infer_shapes(&g, TensorShape::new(1, 4, 4).unwrap()).unwrap_err();
        match err {
            GraphError::InvalidGeometry { layer, .. } => assert_eq!(layer.as_deref(), Some("big")),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn structural_errors() {
        assert!(matches!(
            ModelGraph::new("g", vec![relu("a"), relu("a")], vec![], s(&["a"]), s(&["a"])),
            Err(GraphError::DuplicateId(_))
        ));
        assert!(matches!(
            ModelGraph::new("g", vec![relu("a")], vec![e("a", "zz")], s(&["a"]), s(&["a"])),
            Err(GraphError::UnknownLayer(_))
        ));
        assert!(matches!(
            ModelGraph::new("g", vec![relu("a"), relu("b")], vec![], s(&["a"]), s(&["b"])),
            Err(GraphError::Structure { .. })
        ));
        assert!(matches!(
            ModelGraph::new(
                "g",
                vec![relu("a"), LayerSpec::new("cat", LayerOp::Concat, DataType::Fp16)],
                vec![e("a", "cat")],
                s(&["a"]),
                s(&["cat"])
            ),
            Err(GraphError::Structure { .. })
        ));
    }

    #[test]
    fn json_rejects_unknown_fields() {
        let ok = r#"{"name":"g","layers":[{"id":"a","kind":"Activation","params":{"function":"ReLU"},"dtype":"FP16"}],
            "edges":[],"inputs":["a"],"outputs":["a"],"version":1}"#;
        assert_eq!(ModelGraph::from_json(ok).unwrap().len(), 1);
        let extra_top = ok.replace("\"version\":1", "\"version\":1,\"extra\":0");
        assert!(ModelGraph::from_json(&extra_top).is_err());
        let extra_param = ok.replace("\"function\":\"ReLU\"", "\"function\":\"ReLU\",\"alpha\":0.2");
        assert!(ModelGraph::from_json(&extra_param).is_err());
        let bad_version = ok.replace("\"version\":1", "\"version\":2");
        assert!(matches!(
            ModelGraph::from_json(&bad_version),
            Err(GraphError::Version(2))
        ));
    }

    #[test]
    fn json_round_trip() {
        let g = ModelGraph::new(
            "rt",
            vec![
                conv("c", 4, 2, 1, 3, 8),
                LayerSpec::new("bn", LayerOp::BatchNorm { channels: 8 }, DataType::Fp32),
                LayerSpec::new(
                    "p",
                    LayerOp::Pool(PoolParams {
                        mode: PoolMode::Max,
                        kernel: 2,
                        stride: 2,
                        padding: 0,
                    }),
                    DataType::Int8,
                ),
                LayerSpec::new("cr", LayerOp::Crop { border: 1 }, DataType::Fp16),
            ],
            vec![e("c", "bn"), e("bn", "p"), e("p", "cr")],
            s(&["c"]),
            s(&["cr"]),
        )
        .unwrap();
        let back = ModelGraph::from_json(&g.to_json()).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.to_json(), g.to_json());
    }
}
