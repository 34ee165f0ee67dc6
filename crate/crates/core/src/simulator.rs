//! Deterministic discrete-event simulation of up to two streaming models over
//! the two serial engines.
//!
//! Execution model:
//! - each model is a closed-loop source with one frame in flight; the next
//!   frame is requested the instant the previous one completes;
//! - each engine is a serial resource serving requests FIFO by request time,
//!   ties broken by model name;
//! - a segment whose engine differs from the previous segment of the same frame
//!   first runs the model's transition on the destination engine;
//! - while both engines are busy, in-flight work progresses at `1/gamma` of its
//!   nominal rate (gamma taken from the owning model's profile).
//!
//! Sources keep admitting frames until every model has completed the requested
//! count; in-flight frames then drain and the horizon is the last completion.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph_ir::LayerRange;
use crate::profile::{prefix_sums, LatencyProfile};
use crate::scheduler::{Engine, ModelSchedule, Schedule, ScheduleError};

pub const DEFAULT_WARMUP_FRAMES: usize = 3;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("frame count must be positive")]
    ZeroFrames,
    #[error("simulation supports one or two models, got {0}")]
    ModelCount(usize),
    #[error("model `{0}` appears in more than one schedule")]
    DuplicateModel(String),
    #[error(transparent)]
    Infeasible(#[from] ScheduleError),
    #[error("unsupported timeline format `{0}` (expected json, text or svg)")]
    Format(String),
    #[error("timeline json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EntryKind {
    Exec,
    Transition,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimelineEntry {
    pub engine: Engine,
    pub model_name: String,
    pub frame: usize,
    pub layer_range: LayerRange,
    pub start_ms: f64,
    pub end_ms: f64,
    pub kind: EntryKind,
}

impl TimelineEntry {
    pub fn duration_ms(&self) -> f64 {
        self.end_ms - self.start_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    /// Frames every model must complete.
    pub frames: usize,
    /// Leading completions per model excluded from the fps measurement.
    pub warmup: usize,
}

impl SimOptions {
    pub fn new(frames: usize) -> Self {
        SimOptions {
            frames,
            warmup: DEFAULT_WARMUP_FRAMES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub fps: BTreeMap<String, f64>,
    pub utilization: BTreeMap<Engine, f64>,
    pub idle_ms: BTreeMap<Engine, f64>,
    pub frames_completed: BTreeMap<String, usize>,
    pub horizon_ms: f64,
    pub timeline: Vec<TimelineEntry>,
}

impl SimResult {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("sim result serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Steady-state period of a model in milliseconds.
    pub fn period_ms(&self, model: &str) -> Option<f64> {
        self.fps.get(model).filter(|f| **f > 0.0).map(|f| 1000.0 / f)
    }
}

struct Plan<'a> {
    name: &'a str,
    segments: &'a [crate::scheduler::Segment],
    /// Nominal execution time of each segment on its engine.
    durations: Vec<f64>,
    profile: &'a LatencyProfile,
}

impl Plan<'_> {
    fn transition_into(&self, seg: usize) -> f64 {
        if seg == 0 || self.segments[seg - 1].engine == self.segments[seg].engine {
            return 0.0;
        }
        match self.segments[seg].engine {
            Engine::GPU => self.profile.transition_dla_to_gpu_ms,
            Engine::DLA => self.profile.transition_gpu_to_dla_ms,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Request {
    model: usize,
    frame: usize,
    seg: usize,
    at: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Stage {
    Transition,
    Exec,
}

#[derive(Debug, Clone, Copy)]
struct Running {
    req: Request,
    stage: Stage,
    started: f64,
    remaining: f64,
}

pub fn simulate(schedules: &[Schedule], profiles: &[LatencyProfile], opts: SimOptions) -> Result<SimResult, SimError> {
    if opts.frames == 0 {
        return Err(SimError::ZeroFrames);
    }
    let profile_refs: Vec<&LatencyProfile> = profiles.iter().collect();
    let mut models: Vec<&ModelSchedule> = Vec::new();
    for s in schedules {
        s.validate(&profile_refs)?;
        for m in &s.models {
            if models.iter().any(|x| x.name == m.name) {
                return Err(SimError::DuplicateModel(m.name.clone()));
            }
            models.push(m);
        }
    }
    if models.is_empty() || models.len() > 2 {
        return Err(SimError::ModelCount(models.len()));
    }
    models.sort_by(|a, b| a.name.cmp(&b.name));

    let plans: Vec<Plan> = models
        .iter()
        .map(|m| {
            let profile = profiles.iter().find(|p| p.model_name == m.name).expect("validated");
            let ps = prefix_sums(profile);
            let durations = m
                .segments
                .iter()
                .map(|s| match s.engine {
                    Engine::GPU => ps.gpu(s.range()),
                    Engine::DLA => ps.dla(s.range()),
                })
                .collect();
            Plan {
                name: &m.name,
                segments: &m.segments,
                durations,
                profile,
            }
        })
        .collect();

    Simulation::new(&plans, opts).run()
}

struct Simulation<'a> {
    plans: &'a [Plan<'a>],
    opts: SimOptions,
    now: f64,
    running: [Option<Running>; 2],
    queues: [Vec<Request>; 2],
    completions: Vec<Vec<f64>>,
    timeline: Vec<TimelineEntry>,
}

impl<'a> Simulation<'a> {
    fn new(plans: &'a [Plan<'a>], opts: SimOptions) -> Self {
        Simulation {
            plans,
            opts,
            now: 0.0,
            running: [None, None],
            queues: [Vec::new(), Vec::new()],
            completions: vec![Vec::new(); plans.len()],
            timeline: Vec::new(),
        }
    }

    fn admitting(&self) -> bool {
        self.completions.iter().any(|c| c.len() < self.opts.frames)
    }

    fn request(&mut self, model: usize, frame: usize, seg: usize) {
        let engine = self.plans[model].segments[seg].engine;
        self.queues[engine.index()].push(Request {
            model,
            frame,
            seg,
            at: self.now,
        });
    }

    fn dispatch(&mut self) {
        for engine in Engine::ALL {
            let e = engine.index();
            if self.running[e].is_some() || self.queues[e].is_empty() {
                continue;
            }
            let plans = self.plans;
            let (pos, _) = self.queues[e]
                .iter()
                .enumerate()
                .min_by(|(_, x), (_, y)| {
                    x.at.total_cmp(&y.at)
                        .then_with(|| plans[x.model].name.cmp(plans[y.model].name))
                        .then_with(|| x.frame.cmp(&y.frame))
                })
                .expect("queue is non-empty");
            let req = self.queues[e].remove(pos);
            let plan = &self.plans[req.model];
            let transition = plan.transition_into(req.seg);
            self.running[e] = Some(if transition > 0.0 {
                Running {
                    req,
                    stage: Stage::Transition,
                    started: self.now,
                    remaining: transition,
                }
            } else {
                Running {
                    req,
                    stage: Stage::Exec,
                    started: self.now,
                    remaining: plan.durations[req.seg],
                }
            });
        }
    }

    /// Progress-rate slowdown of the task on `engine` at the current instant.
    fn stretch(&self, run: &Running) -> f64 {
        let both_busy = self.running.iter().all(Option::is_some);
        let gamma = self.plans[run.req.model].profile.contention_gamma;
        if both_busy && gamma > 1.0 {
            gamma
        } else {
            1.0
        }
    }

    fn record(&mut self, engine: Engine, run: &Running) {
        let plan = &self.plans[run.req.model];
        let seg = plan.segments[run.req.seg];
        let kind = match (run.stage, seg.fallback) {
            (Stage::Transition, _) => EntryKind::Transition,
            (Stage::Exec, true) => EntryKind::Fallback,
            (Stage::Exec, false) => EntryKind::Exec,
        };
        self.timeline.push(TimelineEntry {
            engine,
            model_name: plan.name.to_string(),
            frame: run.req.frame,
            layer_range: seg.range(),
            start_ms: run.started,
            end_ms: self.now,
            kind,
        });
    }

    /// Returns the finished request when this completed a whole frame.
    fn complete(&mut self, engine: Engine, run: Running) -> Option<Request> {
        self.record(engine, &run);
        let e = engine.index();
        let req = run.req;
        if run.stage == Stage::Transition {
            self.running[e] = Some(Running {
                req,
                stage: Stage::Exec,
                started: self.now,
                remaining: self.plans[req.model].durations[req.seg],
            });
            return None;
        }
        self.running[e] = None;
        if req.seg + 1 < self.plans[req.model].segments.len() {
            self.request(req.model, req.frame, req.seg + 1);
            return None;
        }
        self.completions[req.model].push(self.now);
        Some(req)
    }

    fn run(mut self) -> Result<SimResult, SimError> {
        for m in 0..self.plans.len() {
            self.request(m, 0, 0);
        }
        self.dispatch();
        loop {
            let finishes: Vec<Option<f64>> = self
                .running
                .iter()
                .map(|r| r.as_ref().map(|run| self.now + run.remaining * self.stretch(run)))
                .collect();
            let Some(next) = finishes.iter().flatten().copied().min_by(f64::total_cmp) else {
                break;
            };
            let dt = next - self.now;
            let mut done = Vec::new();
            for engine in Engine::ALL {
                let e = engine.index();
                let Some(mut run) = self.running[e] else { continue };
                // Finishes within rounding noise of each other complete together.
                if finishes[e].is_some_and(|f| f - next <= 1e-9 * next.max(1.0)) {
                    done.push((engine, run));
                } else {
                    run.remaining -= dt / self.stretch(&run);
                    self.running[e] = Some(run);
                }
            }
            self.now = next;
            let finished: Vec<Request> = done.into_iter().filter_map(|(e, run)| self.complete(e, run)).collect();
            // Admission is decided after every simultaneous completion is counted.
            if self.admitting() {
                for req in finished {
                    self.request(req.model, req.frame + 1, 0);
                }
            }
            self.dispatch();
        }
        debug_assert!(self.queues.iter().all(Vec::is_empty));
        Ok(self.finish())
    }

    fn finish(mut self) -> SimResult {
        self.timeline.sort_by(|a, b| {
            a.start_ms
                .total_cmp(&b.start_ms)
                .then_with(|| a.engine.cmp(&b.engine))
                .then_with(|| a.end_ms.total_cmp(&b.end_ms))
        });
        let horizon = self.completions.iter().flatten().copied().fold(0.0, f64::max);
        let mut fps = BTreeMap::new();
        let mut frames_completed = BTreeMap::new();
        for (plan, done) in self.plans.iter().zip(&self.completions) {
            let counted = &done[..done.len().min(self.opts.frames)];
            fps.insert(plan.name.to_string(), steady_fps(counted, self.opts.warmup, horizon));
            frames_completed.insert(plan.name.to_string(), done.len());
        }
        let mut utilization = BTreeMap::new();
        let mut idle_ms = BTreeMap::new();
        for engine in Engine::ALL {
            let busy: f64 = self
                .timeline
                .iter()
                .filter(|t| t.engine == engine)
                .map(TimelineEntry::duration_ms)
                .sum();
            utilization.insert(engine, if horizon > 0.0 { busy / horizon } else { 0.0 });
            idle_ms.insert(engine, horizon - busy);
        }
        SimResult {
            fps,
            utilization,
            idle_ms,
            frames_completed,
            horizon_ms: horizon,
            timeline: self.timeline,
        }
    }
}

/// Completion rate after the warm-up frames; falls back to the whole-horizon
/// rate when too few frames completed.
fn steady_fps(completions: &[f64], warmup: usize, horizon: f64) -> f64 {
    let n = completions.len();
    if n > warmup {
        let t0 = if warmup == 0 { 0.0 } else { completions[warmup - 1] };
        let span = completions[n - 1] - t0;
        if span > 0.0 {
            return 1000.0 * (n - warmup) as f64 / span;
        }
    }
    if horizon > 0.0 {
        1000.0 * n as f64 / horizon
    } else {
        0.0
    }
}

// ---- export ---------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimelineFormat {
    Json,
    TextGantt,
    Svg,
}

impl std::str::FromStr for TimelineFormat {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(TimelineFormat::Json),
            "text" | "text_gantt" | "txt" => Ok(TimelineFormat::TextGantt),
            "svg" => Ok(TimelineFormat::Svg),
            other => Err(SimError::Format(other.to_string())),
        }
    }
}

pub fn export_timeline(timeline: &[TimelineEntry], format: TimelineFormat) -> String {
    match format {
        TimelineFormat::Json => {
            let mut s = serde_json::to_string_pretty(timeline).expect("timeline serializes");
            s.push('\n');
            s
        }
        TimelineFormat::TextGantt => text_gantt(timeline, 1.0),
        TimelineFormat::Svg => svg_gantt(timeline),
    }
}

pub fn import_timeline(json: &str) -> Result<Vec<TimelineEntry>, SimError> {
    Ok(serde_json::from_str(json)?)
}

fn model_names(timeline: &[TimelineEntry]) -> Vec<&str> {
    let mut names: Vec<&str> = timeline.iter().map(|t| t.model_name.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    names
}

/// One row per engine, one glyph per `ms_per_glyph` slot. Models are lettered
/// `A`, `B`, ... in name order (lowercase for GPU fallback), `~` marks a
/// transition and `.` an idle slot. Each slot shows whatever covers its midpoint.
pub fn text_gantt(timeline: &[TimelineEntry], ms_per_glyph: f64) -> String {
    if timeline.is_empty() {
        return String::new();
    }
    let names = model_names(timeline);
    let horizon = timeline.iter().map(|t| t.end_ms).fold(0.0, f64::max);
    let slots = (horizon / ms_per_glyph).ceil() as usize;
    let mut out = String::new();
    for (k, name) in names.iter().enumerate() {
        let _ = writeln!(out, "{} = {name}", (b'A' + k as u8) as char);
    }
    for engine in Engine::ALL {
        let mut row = format!("{engine:<4}|");
        for slot in 0..slots {
            let mid = (slot as f64 + 0.5) * ms_per_glyph;
            let glyph = timeline
                .iter()
                .find(|t| t.engine == engine && t.start_ms <= mid && mid < t.end_ms)
                .map(|t| {
                    let letter = b'A' + names.iter().position(|n| *n == t.model_name).unwrap_or(0) as u8;
                    match t.kind {
                        EntryKind::Transition => '~',
                        EntryKind::Fallback => letter.to_ascii_lowercase() as char,
                        EntryKind::Exec => letter as char,
                    }
                })
                .unwrap_or('.');
            row.push(glyph);
        }
        row.push('|');
        out.push_str(&row);
        out.push('\n');
    }
    out
}

const PALETTE: [&str; 4] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759"];

fn svg_gantt(timeline: &[TimelineEntry]) -> String {
    const ROW: f64 = 30.0;
    const LABEL: f64 = 50.0;
    const WIDTH: f64 = 1000.0;
    let horizon = timeline.iter().map(|t| t.end_ms).fold(0.0, f64::max);
    let scale = if horizon > 0.0 { WIDTH / horizon } else { 0.0 };
    let names = model_names(timeline);
    let height = ROW * 2.0 + 20.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}" viewBox="0 0 {} {height}">"#,
        WIDTH + LABEL,
        WIDTH + LABEL
    );
    for engine in Engine::ALL {
        let y = engine.index() as f64 * ROW + 10.0;
        let _ = writeln!(
            out,
            r#"  <text x="4" y="{}" font-size="12">{engine}</text>"#,
            y + ROW * 0.6
        );
    }
    for t in timeline {
        let y = t.engine.index() as f64 * ROW + 10.0;
        let k = names.iter().position(|n| *n == t.model_name).unwrap_or(0);
        let fill = match t.kind {
            EntryKind::Transition => "#bbbbbb",
            _ => PALETTE[k % PALETTE.len()],
        };
        let opacity = if t.kind == EntryKind::Fallback { 0.5 } else { 1.0 };
        let _ = writeln!(
            out,
            r#"  <rect x="{:.3}" y="{y}" width="{:.3}" height="{}" fill="{fill}" fill-opacity="{opacity}"><title>{} frame {} [{}, {}) {:?}</title></rect>"#,
            LABEL + t.start_ms * scale,
            t.duration_ms() * scale,
            ROW - 4.0,
            t.model_name,
            t.frame,
            t.layer_range.start,
            t.layer_range.end,
            t.kind
        );
    }
    out.push_str("</svg>\n");
    out
}
