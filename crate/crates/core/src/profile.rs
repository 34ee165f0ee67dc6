//! Per-layer engine latencies, transition costs and contention, plus prefix sums
//! for constant-time segment queries.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compat::CompatReport;
use crate::graph_ir::LayerRange;

pub const PROFILE_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_TRANSITION_MS: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("profile json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported profile schema version {0}")]
    Version(u32),
    #[error("invalid profile field `{field}`: {detail}")]
    Invalid { field: String, detail: String },
    #[error("profile has {profile} entries but the model has {model} layers")]
    LengthMismatch { profile: usize, model: usize },
    #[error("entry {index}: profile layer `{profile}` does not match model layer `{model}`")]
    LayerMismatch {
        index: usize,
        profile: String,
        model: String,
    },
    #[error("layer `{layer}`: {detail}")]
    Consistency { layer: String, detail: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(field: impl Into<String>, detail: impl Into<String>) -> ProfileError {
    ProfileError::Invalid {
        field: field.into(),
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileEntry {
    pub layer_id: String,
    pub gpu_ms: f64,
    /// Absent when the layer cannot run on the DLA.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dla_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyProfile {
    pub model_name: String,
    pub entries: Vec<ProfileEntry>,
    #[serde(default = "default_transition")]
    pub transition_dla_to_gpu_ms: f64,
    #[serde(default = "default_transition")]
    pub transition_gpu_to_dla_ms: f64,
    #[serde(default = "default_gamma")]
    pub contention_gamma: f64,
    pub version: u32,
}

fn default_transition() -> f64 {
    DEFAULT_TRANSITION_MS
}

fn default_gamma() -> f64 {
    1.0
}

impl LatencyProfile {
    /// Profile with default transitions and no contention.
    pub fn new(model_name: impl Into<String>, entries: Vec<ProfileEntry>) -> Self {
        LatencyProfile {
            model_name: model_name.into(),
            entries,
            transition_dla_to_gpu_ms: DEFAULT_TRANSITION_MS,
            transition_gpu_to_dla_ms: DEFAULT_TRANSITION_MS,
            contention_gamma: 1.0,
            version: PROFILE_SCHEMA_VERSION,
        }
    }

    /// Builds anonymous entries `l0, l1, ...` from parallel latency lists.
    pub fn from_latencies(model_name: impl Into<String>, gpu_ms: &[f64], dla_ms: &[Option<f64>]) -> Self {
        assert_eq!(gpu_ms.len(), dla_ms.len(), "latency lists must align");
        let entries = gpu_ms
            .iter()
            .zip(dla_ms)
            .enumerate()
            .map(|(i, (&g, &d))| ProfileEntry {
                layer_id: format!("l{i}"),
                gpu_ms: g,
                dla_ms: d,
            })
            .collect();
        Self::new(model_name, entries)
    }

    pub fn with_transitions(mut self, dla_to_gpu_ms: f64, gpu_to_dla_ms: f64) -> Self {
        self.transition_dla_to_gpu_ms = dla_to_gpu_ms;
        self.transition_gpu_to_dla_ms = gpu_to_dla_ms;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.contention_gamma = gamma;
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dla_compatible(&self, index: usize) -> bool {
        self.entries[index].dla_ms.is_some()
    }

    pub fn compatible_mask(&self) -> Vec<bool> {
        self.entries.iter().map(|e| e.dla_ms.is_some()).collect()
    }

    pub fn total_gpu_ms(&self) -> f64 {
        self.entries.iter().map(|e| e.gpu_ms).sum()
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        if self.version != PROFILE_SCHEMA_VERSION {
            return Err(ProfileError::Version(self.version));
        }
        if self.entries.is_empty() {
            return Err(invalid("entries", "profile needs at least one entry"));
        }
        for (i, e) in self.entries.iter().enumerate() {
            if !(e.gpu_ms.is_finite() && e.gpu_ms > 0.0) {
                return Err(invalid(
                    format!("entries[{i}].gpu_ms"),
                    format!("must be positive, got {}", e.gpu_ms),
                ));
            }
            if let Some(d) = e.dla_ms {
                if !(d.is_finite() && d > 0.0) {
                    return Err(invalid(
                        format!("entries[{i}].dla_ms"),
                        format!("must be positive, got {d}"),
                    ));
                }
            }
        }
        for (name, v) in [
            ("transition_dla_to_gpu_ms", self.transition_dla_to_gpu_ms),
            ("transition_gpu_to_dla_ms", self.transition_gpu_to_dla_ms),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, format!("must be non-negative, got {v}")));
            }
        }
        if !(self.contention_gamma.is_finite() && self.contention_gamma >= 1.0) {
            return Err(invalid(
                "contention_gamma",
                format!("must be >= 1, got {}", self.contention_gamma),
            ));
        }
        Ok(())
    }

    /// Checks layer order and DLA availability against a compatibility report
    /// for the same model.
    pub fn validate_against(&self, report: &CompatReport) -> Result<(), ProfileError> {
        if self.entries.len() != report.verdicts.len() {
            return Err(ProfileError::LengthMismatch {
                profile: self.entries.len(),
                model: report.verdicts.len(),
            });
        }
        for (i, (e, v)) in self.entries.iter().zip(&report.verdicts).enumerate() {
            if e.layer_id != v.layer_id {
                return Err(ProfileError::LayerMismatch {
                    index: i,
                    profile: e.layer_id.clone(),
                    model: v.layer_id.clone(),
                });
            }
            match (e.dla_ms.is_some(), v.compatible) {
                (true, false) => {
                    return Err(ProfileError::Consistency {
                        layer: e.layer_id.clone(),
                        detail: format!("has dla_ms but violates {}", v.violations.join(", ")),
                    })
                }
                (false, true) => {
                    return Err(ProfileError::Consistency {
                        layer: e.layer_id.clone(),
                        detail: "DLA-compatible layer is missing dla_ms".into(),
                    })
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ProfileError> {
        let p: LatencyProfile = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("profile serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ProfileError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| ProfileError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

pub fn load_profile(path: impl AsRef<Path>) -> Result<LatencyProfile, ProfileError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ProfileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    LatencyProfile::from_json(&text)
}

/// Seeded synthetic profile: GPU latencies uniform in `[0.5, 1.5]·gpu_mean_ms`,
/// DLA latency `gpu_ms / dla_speed_ratio` on compatible layers only.
pub fn synthesize_profile(report: &CompatReport, seed: u64, gpu_mean_ms: f64, dla_speed_ratio: f64) -> LatencyProfile {
    assert!(dla_speed_ratio > 0.0, "dla_speed_ratio must be positive");
    assert!(gpu_mean_ms > 0.0, "gpu_mean_ms must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = report
        .verdicts
        .iter()
        .map(|v| {
            let gpu_ms = gpu_mean_ms * rng.gen_range(0.5..1.5);
            ProfileEntry {
                layer_id: v.layer_id.clone(),
                gpu_ms,
                dla_ms: v.compatible.then(|| gpu_ms / dla_speed_ratio),
            }
        })
        .collect();
    LatencyProfile::new(report.model_name.clone(), entries)
}

/// Cumulative per-engine latencies with a leading zero, so that the cost of
/// `[i, j)` is `prefix[j] - prefix[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixSums {
    gpu: Vec<f64>,
    dla: Vec<f64>,
    /// Running count of DLA-incompatible layers.
    blocked: Vec<usize>,
}

impl PrefixSums {
    pub fn len(&self) -> usize {
        self.gpu.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cumulative GPU latency through each layer (no leading zero).
    pub fn gpu_cumulative(&self) -> &[f64] {
        &self.gpu[1..]
    }

    pub fn dla_cumulative(&self) -> &[f64] {
        &self.dla[1..]
    }

    pub fn gpu(&self, r: LayerRange) -> f64 {
        self.gpu[r.end] - self.gpu[r.start]
    }

    /// DLA latency of `r`; incompatible layers contribute nothing, check
    /// [`PrefixSums::dla_feasible`] first.
    pub fn dla(&self, r: LayerRange) -> f64 {
        self.dla[r.end] - self.dla[r.start]
    }

    pub fn dla_feasible(&self, r: LayerRange) -> bool {
        self.blocked[r.end] == self.blocked[r.start]
    }

    /// Length of the longest all-compatible prefix.
    pub fn compatible_prefix(&self) -> usize {
        self.blocked.iter().skip(1).take_while(|&&b| b == 0).count()
    }

    /// Start of the longest all-compatible suffix.
    pub fn compatible_suffix_start(&self) -> usize {
        let n = self.len();
        let total = self.blocked[n];
        (0..=n).find(|&i| self.blocked[i] == total).unwrap_or(n)
    }
}

pub fn prefix_sums(profile: &LatencyProfile) -> PrefixSums {
    let n = profile.entries.len();
    let mut gpu = Vec::with_capacity(n + 1);
    let mut dla = Vec::with_capacity(n + 1);
    let mut blocked = Vec::with_capacity(n + 1);
    gpu.push(0.0);
    dla.push(0.0);
    blocked.push(0);
    for e in &profile.entries {
        gpu.push(gpu.last().unwrap() + e.gpu_ms);
        dla.push(dla.last().unwrap() + e.dla_ms.unwrap_or(0.0));
        blocked.push(blocked.last().unwrap() + usize::from(e.dla_ms.is_none()));
    }
    PrefixSums { gpu, dla, blocked }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compat::{check_graph, default_dla_rules, CheckOptions};
    use crate::zoo::{build_chain, build_pix2pix_generator, Pix2PixVariant};
    use proptest::prelude::*;

    fn pix2pix_report() -> CompatReport {
        check_graph(
            &build_pix2pix_generator(Pix2PixVariant::Original),
            &default_dla_rules(),
            CheckOptions::default(),
        )
    }

    #[test]
    fn prefix_examples() {
        let p = LatencyProfile::from_latencies("m", &[1.0, 2.0, 3.0], &[Some(1.0), None, Some(3.0)]);
        let ps = prefix_sums(&p);
        assert_eq!(ps.gpu_cumulative(), &[1.0, 3.0, 6.0]);
        assert_eq!(ps.gpu(LayerRange::new(1, 3)), 2.0 + 3.0);
        assert_eq!(ps.gpu(LayerRange::new(2, 2)), 0.0);
        assert!(!ps.dla_feasible(LayerRange::new(0, 2)));
        assert!(ps.dla_feasible(LayerRange::new(2, 3)));
        assert_eq!(ps.compatible_prefix(), 1);
        assert_eq!(ps.compatible_suffix_start(), 2);
    }

    #[test]
    fn synthesized_profiles() {
        let report = pix2pix_report();
        let a = synthesize_profile(&report, 7, 0.2, 0.5);
        assert_eq!(a, synthesize_profile(&report, 7, 0.2, 0.5));
        assert_ne!(a, synthesize_profile(&report, 8, 0.2, 0.5));
        for (e, v) in a.entries.iter().zip(&report.verdicts) {
            assert_eq!(e.dla_ms.is_some(), v.compatible);
            if let Some(d) = e.dla_ms {
                assert_eq!(d, e.gpu_ms / 0.5);
            }
        }
        a.validate_against(&report).unwrap();
    }

    #[test]
    fn round_trip() {
        let p = synthesize_profile(&pix2pix_report(), 3, 0.3, 0.8).with_transitions(0.25, 0.5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        p.save(&path).unwrap();
        assert_eq!(load_profile(&path).unwrap(), p);
    }

    #[test]
    fn cross_check_errors() {
        let chain = check_graph(&build_chain("m", 6), &default_dla_rules(), CheckOptions::default());
        let short = LatencyProfile::new(
            "m",
            chain.verdicts[..5]
                .iter()
                .map(|v| ProfileEntry {
                    layer_id: v.layer_id.clone(),
                    gpu_ms: 1.0,
                    dla_ms: Some(1.0),
                })
                .collect(),
        );
        assert!(matches!(
            short.validate_against(&chain),
            Err(ProfileError::LengthMismatch { profile: 5, model: 6 })
        ));

        let report = pix2pix_report();
        let mut p = synthesize_profile(&report, 1, 0.2, 0.5);
        let deconv = p.entries.iter().position(|e| e.layer_id == "up1.deconv").unwrap();
        p.entries[deconv].dla_ms = Some(0.1);
        assert!(matches!(
            p.validate_against(&report),
            Err(ProfileError::Consistency { .. })
        ));
    }

    #[test]
    fn schema_validation() {
        let good = LatencyProfile::from_latencies("m", &[1.0], &[None]);
        assert!(LatencyProfile::from_json(&good.to_json()).is_ok());
        let bad_gamma = good.clone().with_gamma(0.5);
        assert!(LatencyProfile::from_json(&bad_gamma.to_json()).is_err());
        let zero = LatencyProfile::from_latencies("m", &[0.0], &[None]);
        assert!(LatencyProfile::from_json(&zero.to_json()).is_err());
        let extra = good
            .to_json()
            .replacen("\"model_name\"", "\"bogus\": 1, \"model_name\"", 1);
        assert!(LatencyProfile::from_json(&extra).is_err());
    }

    proptest! {
        #[test]
        fn prefix_matches_direct_sum(
            lat in prop::collection::vec(0.001f64..10.0, 1..80),
            a in 0usize..80,
            b in 0usize..80,
        ) {
            let n = lat.len();
            let (i, j) = { let (x, y) = (a % (n + 1), b % (n + 1)); (x.min(y), x.max(y)) };
            let dla: Vec<Option<f64>> = lat.iter().map(|&x| Some(x * 2.0)).collect();
            let ps = prefix_sums(&LatencyProfile::from_latencies("m", &lat, &dla));
            let direct: f64 = lat[i..j].iter().sum();
            let got = ps.gpu(LayerRange::new(i, j));
            let scale = lat.iter().sum::<f64>().max(1.0);
            prop_assert!((got - direct).abs() <= 1e-12 * scale, "{} vs {}", got, direct);
            let direct_dla: f64 = dla[i..j].iter().map(|d| d.unwrap()).sum();
            prop_assert!((ps.dla(LayerRange::new(i, j)) - direct_dla).abs() <= 2e-12 * scale);
        }
    }
}
