//! Run reports: per-model and per-engine summaries of a simulation, plus
//! input digests so a report can be tied back to the exact files it used.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::scheduler::{Engine, Schedule, ScheduleKind};
use crate::simulator::SimResult;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("model names disagree: schedule has {schedule:?}, simulation has {simulation:?}")]
    ModelMismatch {
        schedule: Vec<String>,
        simulation: Vec<String>,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRow {
    pub name: String,
    /// Engine of the model's first segment.
    pub home_engine: Engine,
    pub fps: f64,
    pub frames_completed: usize,
    pub fallback_segments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineRow {
    pub engine: Engine,
    /// Models whose first segment runs on this engine.
    pub models: Vec<String>,
    pub fps: f64,
    pub utilization: f64,
    pub idle_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub label: String,
    pub kind: ScheduleKind,
    pub horizon_ms: f64,
    pub models: Vec<ModelRow>,
    pub engines: Vec<EngineRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSummary {
    pub name: String,
    pub layers: usize,
    pub param_count: u64,
    pub incompatible_layers: usize,
    pub subgraph_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub invocation: Vec<String>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub graphs: Vec<GraphSummary>,
    pub scenarios: Vec<Scenario>,
    pub version: u32,
}

impl RunReport {
    pub fn empty() -> Self {
        RunReport {
            invocation: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            graphs: Vec::new(),
            scenarios: Vec::new(),
            version: REPORT_SCHEMA_VERSION,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Plain-text tables, one block per scenario.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        for g in &self.graphs {
            out.push_str(&format!(
                "graph {:<16} layers {:>4}  params {:>12}  incompatible {:>3}  subgraphs {:>3}\n",
                g.name, g.layers, g.param_count, g.incompatible_layers, g.subgraph_count
            ));
        }
        for s in &self.scenarios {
            out.push_str(&format!(
                "\n[{}] {:?} horizon {:.3} ms\n",
                s.label, s.kind, s.horizon_ms
            ));
            out.push_str("engine  models              fps        util    idle_ms\n");
            for e in &s.engines {
                out.push_str(&format!(
                    "{:<6}  {:<18}  {:>9.3}  {:>6.4}  {:>9.3}\n",
                    e.engine,
                    e.models.join(","),
                    e.fps,
                    e.utilization,
                    e.idle_ms
                ));
            }
        }
        out
    }
}

fn model_names(schedule: &Schedule) -> BTreeSet<String> {
    schedule.models.iter().map(|m| m.name.clone()).collect()
}

/// Summarize one simulation of `schedule`. A simulation with no models at
/// all (nothing ran) yields zero rows for every scheduled model.
pub fn scenario(label: &str, schedule: &Schedule, sim: &SimResult) -> Result<Scenario, ReportError> {
    let scheduled = model_names(schedule);
    let simulated: BTreeSet<String> = sim.fps.keys().cloned().collect();
    if !simulated.is_empty() && scheduled != simulated {
        return Err(ReportError::ModelMismatch {
            schedule: scheduled.into_iter().collect(),
            simulation: simulated.into_iter().collect(),
        });
    }
    let mut models: Vec<ModelRow> = schedule
        .models
        .iter()
        .map(|m| ModelRow {
            name: m.name.clone(),
            home_engine: m.segments.first().map_or(Engine::GPU, |s| s.engine),
            fps: sim.fps.get(&m.name).copied().unwrap_or(0.0),
            frames_completed: sim.frames_completed.get(&m.name).copied().unwrap_or(0),
            fallback_segments: m.segments.iter().filter(|s| s.fallback).count(),
        })
        .collect();
    models.sort_by(|a, b| a.name.cmp(&b.name));
    let engines = Engine::ALL
        .iter()
        .map(|&engine| {
            let homed: Vec<&ModelRow> = models.iter().filter(|m| m.home_engine == engine).collect();
            EngineRow {
                engine,
                models: homed.iter().map(|m| m.name.clone()).collect(),
                fps: homed.iter().map(|m| m.fps).sum(),
                utilization: sim.utilization.get(&engine).copied().unwrap_or(0.0),
                idle_ms: sim.idle_ms.get(&engine).copied().unwrap_or(0.0),
            }
        })
        .collect();
    Ok(Scenario {
        label: label.to_string(),
        kind: schedule.kind,
        horizon_ms: sim.horizon_ms,
        models,
        engines,
    })
}

pub fn report(schedule: &Schedule, sim: &SimResult) -> Result<RunReport, ReportError> {
    let mut r = RunReport::empty();
    r.scenarios.push(scenario("run", schedule, sim)?);
    Ok(r)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of a file, recorded under `label` rather than its absolute path.
pub fn digest_file(path: impl AsRef<Path>, label: impl Into<String>) -> Result<InputDigest, ReportError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(InputDigest {
        path: label.into(),
        sha256: sha256_hex(&bytes),
    })
}
