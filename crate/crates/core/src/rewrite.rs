//! Replace padded deconvolutions with an unpadded deconvolution followed by a
//! border-trimming layer, keeping every downstream shape intact.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph_ir::{
    conv_output_size, crop_output_size, deconv_output_size, infer_shapes, infer_shapes_partial, linearize, ConvParams,
    GraphError, LayerOp, LayerSpec, ModelGraph, TensorShape,
};

/// Only the 4x4 stride-2 padding-1 geometry has a proven one-layer equivalent.
const SUPPORTED: (usize, usize, usize) = (4, 2, 1);
/// Input sizes over which each substitution is re-derived before it is applied.
const GUARD_SIZES: std::ops::RangeInclusive<usize> = 1..=512;

#[derive(Debug, Error)]
pub enum RewriteError {
    #[error("deconv `{layer}` has unsupported geometry k={kernel} s={stride} p={padding}")]
    UnsupportedGeometry {
        layer: String,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    #[error("substitution at `{layer}` does not preserve shape for input size {size}")]
    ShapeEquivalence { layer: String, size: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubstitutionStrategy {
    /// Unpadded deconv + Crop(border 1).
    CropBorder,
    /// Unpadded deconv + bias-free 3x3 stride-1 unpadded Conv.
    Conv3x3,
}

impl SubstitutionStrategy {
    fn suffix(self) -> &'static str {
        match self {
            SubstitutionStrategy::CropBorder => "crop",
            SubstitutionStrategy::Conv3x3 => "conv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Substitution {
    pub original: String,
    pub inserted: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteReport {
    pub strategy: SubstitutionStrategy,
    pub substitutions: Vec<Substitution>,
    pub param_delta: i64,
    pub shape_preserved: bool,
}

impl RewriteReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn trimming_layer(deconv: &LayerSpec, params: &ConvParams, strategy: SubstitutionStrategy) -> LayerSpec {
    let id = format!("{}.{}", deconv.id, strategy.suffix());
    let op = match strategy {
        SubstitutionStrategy::CropBorder => LayerOp::Crop { border: 1 },
        SubstitutionStrategy::Conv3x3 => {
            let c = params.out_channels;
            LayerOp::Conv(ConvParams::square(3, 1, 0, c, c))
        }
    };
    LayerSpec::new(id, op, deconv.dtype)
}

/// Spatial output of `unpadded deconv -> trimming layer` for input size `n`.
fn substituted_size(n: usize, params: &ConvParams, trim: &LayerOp) -> Result<usize, GraphError> {
    let widened = deconv_output_size(n, params.kernel, params.stride, 0)?;
    match trim {
        LayerOp::Crop { border } => crop_output_size(widened, *border),
        LayerOp::Conv(c) => conv_output_size(widened, c.kernel, c.stride, c.padding),
        _ => unreachable!("only crop and conv trim"),
    }
}

pub fn substitute_deconv_padding(
    graph: &ModelGraph,
    strategy: SubstitutionStrategy,
) -> Result<(ModelGraph, RewriteReport), RewriteError> {
    let mut substitutions = Vec::new();
    let mut param_delta = 0i64;
    let (name, layers, mut edges, inputs, mut outputs) = graph.clone().into_parts();
    let mut rewritten = Vec::with_capacity(layers.len());

    for layer in layers {
        let params = match &layer.op {
            LayerOp::Deconv(c) if c.padding > 0 => *c,
            _ => {
                rewritten.push(layer);
                continue;
            }
        };
        if (params.kernel, params.stride, params.padding) != SUPPORTED || params.dilation != 1 {
            return Err(RewriteError::UnsupportedGeometry {
                layer: layer.id.clone(),
                kernel: params.kernel,
                stride: params.stride,
                padding: params.padding,
            });
        }
        let trim = trimming_layer(&layer, &params, strategy);
        for n in GUARD_SIZES {
            let expected = deconv_output_size(n, params.kernel, params.stride, params.padding)?;
            if substituted_size(n, &params, &trim.op)? != expected {
                return Err(RewriteError::ShapeEquivalence {
                    layer: layer.id.clone(),
                    size: n,
                });
            }
        }

        for (src, _) in edges.iter_mut().filter(|(src, _)| *src == layer.id) {
            *src = trim.id.clone();
        }
        for out in outputs.iter_mut().filter(|o| **o == layer.id) {
            *out = trim.id.clone();
        }
        edges.push((layer.id.clone(), trim.id.clone()));
        param_delta += crate::graph_ir::layer_param_count(&trim) as i64;
        substitutions.push(Substitution {
            original: layer.id.clone(),
            inserted: vec![trim.id.clone()],
        });

        let unpadded = LayerSpec::new(
            layer.id,
            LayerOp::Deconv(ConvParams { padding: 0, ..params }),
            layer.dtype,
        );
        rewritten.push(unpadded);
        rewritten.push(trim);
    }

    if substitutions.is_empty() {
        let report = RewriteReport {
            strategy,
            substitutions,
            param_delta: 0,
            shape_preserved: true,
        };
        return Ok((graph.clone(), report));
    }
    let out = ModelGraph::new(name, rewritten, edges, inputs, outputs)?;
    let report = RewriteReport {
        strategy,
        substitutions,
        param_delta,
        shape_preserved: true,
    };
    Ok((out, report))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeDiff {
    pub layer_id: String,
    pub original: Option<TensorShape>,
    pub rewritten: Option<TensorShape>,
}

#[derive(Debug, Error)]
pub enum EquivalenceError {
    #[error("graphs declare different interfaces: {0}")]
    Interface(String),
    #[error("shape diverges at `{}`: {:?} vs {:?}", .0.layer_id, .0.original, .0.rewritten)]
    Diverged(ShapeDiff),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Layer in `rewritten` that carries the output of original layer `id`: the
/// inserted trimming layer when one follows it, otherwise the layer itself.
fn carrier<'a>(rewritten: &'a ModelGraph, id: &'a str) -> &'a str {
    let mut succ = rewritten.successors(id);
    if let (Some(only), None) = (succ.next(), succ.next()) {
        for suffix in ["crop", "conv"] {
            if only.strip_prefix(id).and_then(|r| r.strip_prefix('.')) == Some(suffix) {
                return only;
            }
        }
    }
    id
}

/// Checks that every original layer still exists and produces the same shape
/// (through its inserted trimming layer, if any), and that graph outputs agree.
pub fn verify_equivalence(
    original: &ModelGraph,
    rewritten: &ModelGraph,
    input: TensorShape,
) -> Result<(), EquivalenceError> {
    if original.inputs() != rewritten.inputs() {
        return Err(EquivalenceError::Interface(format!(
            "inputs {:?} vs {:?}",
            original.inputs(),
            rewritten.inputs()
        )));
    }
    if original.outputs().len() != rewritten.outputs().len() {
        return Err(EquivalenceError::Interface(format!(
            "{} outputs vs {}",
            original.outputs().len(),
            rewritten.outputs().len()
        )));
    }
    let before = infer_shapes(original, input)?;
    let (after, _) = infer_shapes_partial(rewritten, input);
    for id in linearize(original) {
        let got = rewritten
            .layer(id)
            .and_then(|_| after.get(carrier(rewritten, id)).copied());
        if got != Some(before[id]) {
            return Err(EquivalenceError::Diverged(ShapeDiff {
                layer_id: id.clone(),
                original: Some(before[id]),
                rewritten: got,
            }));
        }
    }
    for (o, r) in original.outputs().iter().zip(rewritten.outputs()) {
        if Some(&before[o]) != after.get(r) {
            return Err(EquivalenceError::Diverged(ShapeDiff {
                layer_id: r.clone(),
                original: Some(before[o]),
                rewritten: after.get(r).copied(),
            }));
        }
    }
    Ok(())
}
