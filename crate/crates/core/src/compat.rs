//! Declarative per-layer accelerator eligibility rules and DLA subgraph segmentation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::graph_ir::{linearize, DataType, LayerRange, LayerSpec, ModelGraph};

pub const DEFAULT_SUBGRAPH_LIMIT: usize = 16;

#[derive(Debug, Error)]
pub enum CompatError {
    #[error("{count} DLA subgraphs exceed the limit of {limit}")]
    SubgraphLimit { count: usize, limit: usize },
    #[error("rule `{rule_id}`: {detail}")]
    InvalidRule { rule_id: String, detail: String },
    #[error("rule set json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleOp {
    In,
    Eq,
    Range,
}

/// One or several kind names a rule applies to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KindFilter {
    One(String),
    Any(Vec<String>),
}

impl KindFilter {
    fn matches(&self, layer: &LayerSpec) -> bool {
        let names = layer.op.kind_names();
        match self {
            KindFilter::One(k) => names.contains(&k.as_str()),
            KindFilter::Any(ks) => ks.iter().any(|k| names.contains(&k.as_str())),
        }
    }
}

/// Requirement on one layer field. A layer that matches the kind filter and
/// carries the field violates the rule when the field fails the constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompatRule {
    pub rule_id: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<KindFilter>,
    pub field: String,
    pub op: RuleOp,
    pub value: Value,
}

impl CompatRule {
    fn validate(&self) -> Result<(), CompatError> {
        let bad = |detail: &str| CompatError::InvalidRule {
            rule_id: self.rule_id.clone(),
            detail: detail.to_string(),
        };
        match self.op {
            RuleOp::In if !self.value.is_array() => Err(bad("`in` expects an array value")),
            RuleOp::Range => match self.value.as_array().map(|a| a.as_slice()) {
                Some([lo, hi]) if lo.as_f64().is_some() && hi.as_f64().is_some() => Ok(()),
                _ => Err(bad("`range` expects [lo, hi] numbers")),
            },
            _ => Ok(()),
        }
    }

    /// `true` when the rule applies to `layer` and the layer fails it.
    pub fn violated_by(&self, layer: &LayerSpec) -> bool {
        if let Some(kind) = &self.kind {
            if !kind.matches(layer) {
                return false;
            }
        }
        let Some(actual) = layer.field(&self.field) else {
            return false;
        };
        !self.satisfied(&actual)
    }

    fn satisfied(&self, actual: &Value) -> bool {
        match self.op {
            RuleOp::Eq => values_equal(actual, &self.value),
            RuleOp::In => self
                .value
                .as_array()
                .is_some_and(|vs| vs.iter().any(|v| values_equal(actual, v))),
            RuleOp::Range => {
                let bounds = self
                    .value
                    .as_array()
                    .and_then(|a| Some((a.first()?.as_f64()?, a.get(1)?.as_f64()?)));
                match (actual.as_f64(), bounds) {
                    (Some(x), Some((lo, hi))) => lo <= x && x <= hi,
                    _ => false,
                }
            }
        }
    }
}

fn values_equal(a: &Value, b: &Value) -> bool {
    match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) => x == y,
        _ => a == b,
    }
}

fn rule(rule_id: &str, description: &str, kind: Option<&[&str]>, field: &str, op: RuleOp, value: Value) -> CompatRule {
    CompatRule {
        rule_id: rule_id.into(),
        description: description.into(),
        kind: kind.map(|ks| match ks {
            [one] => KindFilter::One(one.to_string()),
            many => KindFilter::Any(many.iter().map(|k| k.to_string()).collect()),
        }),
        field: field.into(),
        op,
        value,
    }
}

/// Known DLA restrictions. The list is partial: the hardware documents more
/// constraints (buffer sizes, channel limits) that are not modelled.
pub fn default_dla_rules() -> Vec<CompatRule> {
    use serde_json::json;
    vec![
        rule(
            "R1",
            "only FP16 and INT8 are supported",
            None,
            "dtype",
            RuleOp::In,
            json!(["FP16", "INT8"]),
        ),
        rule(
            "R2",
            "equal requires INT8",
            Some(&["Equal"]),
            "dtype",
            RuleOp::Eq,
            json!("INT8"),
        ),
        rule(
            "R3",
            "slice and softmax require FP16",
            Some(&["Slice", "Softmax"]),
            "dtype",
            RuleOp::Eq,
            json!("FP16"),
        ),
        rule(
            "R4",
            "deconvolution padding must be zero",
            Some(&["Deconv"]),
            "padding",
            RuleOp::Eq,
            json!(0),
        ),
        rule(
            "R5",
            "kernel size must be within 1..=32",
            None,
            "kernel",
            RuleOp::Range,
            json!([1, 32]),
        ),
        rule(
            "R6-dilation",
            "dilated deconvolution is unsupported",
            Some(&["Deconv"]),
            "dilation",
            RuleOp::Eq,
            json!(1),
        ),
        rule(
            "R6-groups",
            "grouped deconvolution is unsupported",
            Some(&["Deconv"]),
            "groups",
            RuleOp::Eq,
            json!(1),
        ),
    ]
}

pub fn parse_rules(text: &str) -> Result<Vec<CompatRule>, CompatError> {
    let rules: Vec<CompatRule> = serde_json::from_str(text)?;
    for r in &rules {
        r.validate()?;
    }
    Ok(rules)
}

pub fn load_rules(path: impl AsRef<Path>) -> Result<Vec<CompatRule>, CompatError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CompatError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_rules(&text)
}

pub fn rules_to_json(rules: &[CompatRule]) -> String {
    let mut s = serde_json::to_string_pretty(rules).expect("rules serialize");
    s.push('\n');
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckOptions {
    /// Treat FP32 layers as if deployed in FP16.
    pub coerce_fp32: bool,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions { coerce_fp32: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub layer_id: String,
    pub compatible: bool,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompatReport {
    pub model_name: String,
    /// One verdict per layer, in linearized order.
    pub verdicts: Vec<Verdict>,
    /// Maximal runs of compatible layers over the linearized order.
    pub dla_subgraphs: Vec<LayerRange>,
    pub subgraph_count: usize,
}

impl CompatReport {
    pub fn incompatible_count(&self) -> usize {
        self.verdicts.iter().filter(|v| !v.compatible).count()
    }

    pub fn violations_of(&self, rule_id: &str) -> usize {
        self.verdicts
            .iter()
            .filter(|v| v.violations.iter().any(|r| r == rule_id))
            .count()
    }

    pub fn compatible_mask(&self) -> Vec<bool> {
        self.verdicts.iter().map(|v| v.compatible).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Maximal runs of `true` in `mask`.
pub fn compatible_runs(mask: &[bool]) -> Vec<LayerRange> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &ok) in mask.iter().enumerate() {
        match (ok, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                runs.push(LayerRange::new(s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        runs.push(LayerRange::new(s, mask.len()));
    }
    runs
}

pub fn check_graph(graph: &ModelGraph, rules: &[CompatRule], opts: CheckOptions) -> CompatReport {
    let verdicts: Vec<Verdict> = linearize(graph)
        .iter()
        .map(|id| {
            let mut layer = graph.layer(id).expect("linearized id exists").clone();
            if opts.coerce_fp32 && layer.dtype == DataType::Fp32 {
                layer.dtype = DataType::Fp16;
            }
            let violations: Vec<String> = rules
                .iter()
                .filter(|r| r.violated_by(&layer))
                .map(|r| r.rule_id.clone())
                .collect();
            Verdict {
                layer_id: id.clone(),
                compatible: violations.is_empty(),
                violations,
            }
        })
        .collect();
    let mask: Vec<bool> = verdicts.iter().map(|v| v.compatible).collect();
    let dla_subgraphs = compatible_runs(&mask);
    CompatReport {
        model_name: graph.name().to_string(),
        subgraph_count: dla_subgraphs.len(),
        verdicts,
        dla_subgraphs,
    }
}

/// Fails only when the subgraph count exceeds `limit`.
pub fn assert_subgraph_limit(report: &CompatReport, limit: usize) -> Result<(), CompatError> {
    if report.subgraph_count > limit {
        return Err(CompatError::SubgraphLimit {
            count: report.subgraph_count,
            limit,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_ir::{ConvParams, LayerOp, TensorShape};
    use crate::zoo::{build_pix2pix_generator, Pix2PixVariant};

    fn layer(op: LayerOp, dtype: DataType) -> LayerSpec {
        LayerSpec::new("x", op, dtype)
    }

    fn fired(l: &LayerSpec) -> Vec<String> {
        default_dla_rules()
            .iter()
            .filter(|r| r.violated_by(l))
            .map(|r| r.rule_id.clone())
            .collect()
    }

    fn report_with(count: usize) -> CompatReport {
        CompatReport {
            model_name: "m".into(),
            verdicts: vec![],
            dla_subgraphs: vec![],
            subgraph_count: count,
        }
    }

    #[test]
    fn default_rules() {
        let rules = default_dla_rules();
        assert!(rules.len() >= 6);
        let padded = layer(LayerOp::Deconv(ConvParams::square(4, 2, 1, 8, 8)), DataType::Fp16);
        assert_eq!(fired(&padded), vec!["R4"]);
        let conv = layer(LayerOp::Conv(ConvParams::square(4, 2, 1, 8, 8)), DataType::Fp16);
        assert!(fired(&conv).is_empty());
    }

    #[test]
    fn each_rule_fires() {
        use crate::graph_ir::Activation;
        assert_eq!(fired(&layer(LayerOp::Dropout, DataType::Fp32)), vec!["R1"]);
        assert_eq!(fired(&layer(LayerOp::Equal, DataType::Fp16)), vec!["R2"]);
        assert!(fired(&layer(LayerOp::Equal, DataType::Int8)).is_empty());
        let slice = LayerOp::Slice {
            output: TensorShape::new(1, 1, 1).unwrap(),
        };
        assert_eq!(fired(&layer(slice, DataType::Int8)), vec!["R3"]);
        assert_eq!(
            fired(&layer(LayerOp::Activation(Activation::Softmax), DataType::Int8)),
            vec!["R3"]
        );
        assert!(fired(&layer(LayerOp::Activation(Activation::ReLU), DataType::Int8)).is_empty());
        let big = layer(LayerOp::Conv(ConvParams::square(33, 1, 0, 1, 1)), DataType::Fp16);
        assert_eq!(fired(&big), vec!["R5"]);
        let dilated = ConvParams {
            dilation: 2,
            groups: 2,
            ..ConvParams::square(3, 1, 0, 4, 4)
        };
        assert_eq!(
            fired(&layer(LayerOp::Deconv(dilated), DataType::Fp16)),
            vec!["R6-dilation", "R6-groups"]
        );
        // Grouped plain convolutions are not restricted.
        assert!(fired(&layer(LayerOp::Conv(dilated), DataType::Fp16)).is_empty());
    }

    #[test]
    fn pix2pix_verdicts() {
        let rules = default_dla_rules();
        let original = check_graph(
            &build_pix2pix_generator(Pix2PixVariant::Original),
            &rules,
            CheckOptions::default(),
        );
        assert_eq!(original.incompatible_count(), 8);
        assert_eq!(original.violations_of("R4"), 8);
        // One run before the first padded deconv, seven between, one trailing tanh.
        assert_eq!(original.subgraph_count, 9);

        for v in [Pix2PixVariant::CropSubstituted, Pix2PixVariant::ConvSubstituted] {
            let r = check_graph(&build_pix2pix_generator(v), &rules, CheckOptions::default());
            assert_eq!(r.incompatible_count(), 0);
            assert_eq!(r.subgraph_count, 1);
            assert!(assert_subgraph_limit(&r, DEFAULT_SUBGRAPH_LIMIT).is_ok());
        }
    }

    #[test]
    fn coercion_can_be_disabled() {
        let rules = default_dla_rules();
        let g = build_pix2pix_generator(Pix2PixVariant::CropSubstituted);
        let strict = check_graph(&g, &rules, CheckOptions { coerce_fp32: false });
        assert_eq!(strict.incompatible_count(), g.len());
        assert_eq!(strict.subgraph_count, 0);
    }

    #[test]
    fn subgraph_limit_boundary() {
        assert!(assert_subgraph_limit(&report_with(1), 16).is_ok());
        assert!(assert_subgraph_limit(&report_with(16), 16).is_ok());
        match assert_subgraph_limit(&report_with(17), 16) {
            Err(CompatError::SubgraphLimit { count: 17, limit: 16 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn runs() {
        assert_eq!(compatible_runs(&[]), vec![]);
        assert_eq!(
            compatible_runs(&[true, true, false, true, false, false, true]),
            vec![LayerRange::new(0, 2), LayerRange::new(3, 4), LayerRange::new(6, 7)]
        );
    }

    #[test]
    fn rule_set_json() {
        let rules = default_dla_rules();
        assert_eq!(parse_rules(&rules_to_json(&rules)).unwrap(), rules);
        let bad = r#"[{"rule_id":"X","description":"d","field":"kernel","op":"range","value":5}]"#;
        assert!(matches!(parse_rules(bad), Err(CompatError::InvalidRule { .. })));
        let unknown = r#"[{"rule_id":"X","description":"d","field":"kernel","op":"eq","value":5,"severity":1}]"#;
        assert!(parse_rules(unknown).is_err());
    }
}
