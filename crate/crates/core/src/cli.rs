//! Command-line front end. `run` parses arguments, dispatches to a
//! subcommand and maps the outcome to a process exit code
//! (0 success, 1 domain error, 2 usage error).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compat::{self, CheckOptions, CompatError, CompatReport, CompatRule, DEFAULT_SUBGRAPH_LIMIT};
use crate::graph_ir::{self, GraphError, ModelGraph, TensorShape};
use crate::metrics::{self, MetricsError, SsimParams};
use crate::profile::{self, LatencyProfile, ProfileError, DEFAULT_TRANSITION_MS};
use crate::report::{self, GraphSummary, ReportError, RunReport};
use crate::rewrite::{self, EquivalenceError, RewriteError, SubstitutionStrategy};
use crate::scheduler::{self, Schedule, ScheduleError};
use crate::simulator::{self, SimError, SimOptions, SimResult, TimelineFormat, DEFAULT_WARMUP_FRAMES};
use crate::zoo::{self, Pix2PixVariant};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Compat(#[from] CompatError),
    #[error(transparent)]
    Rewrite(#[from] RewriteError),
    #[error(transparent)]
    Equivalence(#[from] EquivalenceError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("config {path}: {detail}")]
    Config { path: String, detail: String },
    #[error("invalid value for --{flag}: {detail}")]
    InvalidArg { flag: &'static str, detail: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Parser)]
#[command(
    name = "accelsched",
    version,
    about = "GPU/DLA compatibility, rewriting, scheduling and simulation"
)]
pub struct Cli {
    /// Seed for synthesized profiles.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON config file supplying defaults for unset flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a zoo model and write its graph JSON.
    BuildModel(BuildModelArgs),
    /// Check a graph against DLA compatibility rules.
    Check(CheckArgs),
    /// Replace padded deconvolutions with an equivalent DLA-compatible form.
    Rewrite(RewriteArgs),
    /// Synthesize a latency profile for a graph.
    SynthProfile(SynthProfileArgs),
    /// Build a naive or swap schedule for two models.
    Schedule(ScheduleArgs),
    /// Simulate one or two scheduled models.
    Simulate(SimulateArgs),
    /// Compare two PGM images.
    Metrics(MetricsArgs),
    /// Summarize a schedule and its simulation.
    Report(ReportArgs),
    /// Run the whole pipeline end to end into a directory.
    Demo(DemoArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Original,
    Crop,
    Conv,
}

impl From<VariantArg> for Pix2PixVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Original => Pix2PixVariant::Original,
            VariantArg::Crop => Pix2PixVariant::CropSubstituted,
            VariantArg::Conv => Pix2PixVariant::ConvSubstituted,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Crop,
    Conv,
}

impl From<StrategyArg> for SubstitutionStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Crop => SubstitutionStrategy::CropBorder,
            StrategyArg::Conv => SubstitutionStrategy::Conv3x3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Naive,
    Swap,
}

#[derive(Debug, Args)]
pub struct BuildModelArgs {
    #[arg(long, value_enum, conflicts_with = "chain")]
    pub variant: Option<VariantArg>,
    /// Build a ReLU chain with this many layers instead of Pix2Pix.
    #[arg(long)]
    pub chain: Option<usize>,
    /// Name of the chain model.
    #[arg(long, default_value = "yolo")]
    pub name: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Rule-set JSON; the built-in DLA rules when omitted.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long)]
    pub limit: Option<usize>,
    /// Treat FP32 layers as-is instead of assuming FP16 conversion.
    #[arg(long)]
    pub no_coerce_fp32: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RewriteArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub strategy: StrategyArg,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Input shape CxHxW used to verify shape equivalence.
    #[arg(long)]
    pub verify_input: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthProfileArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long)]
    pub gpu_mean_ms: Option<f64>,
    /// DLA speed relative to GPU (dla_ms = gpu_ms / ratio).
    #[arg(long)]
    pub dla_ratio: Option<f64>,
    #[arg(long)]
    pub transition_ms: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    /// Graph of model A, cross-checked against its profile when given.
    #[arg(long)]
    pub model_a: Option<PathBuf>,
    #[arg(long)]
    pub profile_a: PathBuf,
    #[arg(long)]
    pub model_b: Option<PathBuf>,
    #[arg(long)]
    pub profile_b: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub schedule: PathBuf,
    #[arg(long, num_args = 1..=2, required = true)]
    pub profiles: Vec<PathBuf>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Timeline export; format from the extension (.svg, .json, otherwise text).
    #[arg(long)]
    pub gantt: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub k1: Option<f64>,
    #[arg(long)]
    pub k2: Option<f64>,
    /// Sliding SSIM window side; whole-image statistics when omitted.
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub schedule: PathBuf,
    #[arg(long)]
    pub sim: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub frames: Option<usize>,
}

/// Values a `--config` file may supply. Flags win over these; built-in
/// defaults apply to anything left unset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub frames: Option<usize>,
    pub warmup: Option<usize>,
    pub subgraph_limit: Option<usize>,
    pub gpu_mean_ms: Option<f64>,
    pub dla_ratio: Option<f64>,
    pub transition_ms: Option<f64>,
    pub gamma: Option<f64>,
    pub k1: Option<f64>,
    pub k2: Option<f64>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, CliError> {
        let text = read_text(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::Config {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
    }
}

pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_FRAMES: usize = 200;
pub const DEFAULT_GPU_MEAN_MS: f64 = 0.5;
pub const DEFAULT_DLA_RATIO: f64 = 0.8;

fn pick<T>(flag: Option<T>, config: Option<T>, default: T) -> T {
    flag.or(config).unwrap_or(default)
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn to_json_line<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_shape(s: &str) -> Result<TensorShape, CliError> {
    let bad = |detail: String| CliError::InvalidArg {
        flag: "verify-input",
        detail,
    };
    let dims: Vec<usize> = s
        .split('x')
        .map(|d| {
            d.trim()
                .parse::<usize>()
                .map_err(|_| bad(format!("`{s}` is not CxHxW")))
        })
        .collect::<Result<_, _>>()?;
    match dims[..] {
        [c, h, w] => TensorShape::new(c, h, w).map_err(|e| bad(e.to_string())),
        _ => Err(bad(format!("`{s}` is not CxHxW"))),
    }
}

fn rules_from(path: Option<&Path>) -> Result<Vec<CompatRule>, CliError> {
    Ok(match path {
        Some(p) => compat::load_rules(p)?,
        None => compat::default_dla_rules(),
    })
}

fn positive(flag: &'static str, v: f64) -> Result<f64, CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(CliError::InvalidArg {
            flag,
            detail: format!("{v} is not a positive number"),
        })
    }
}

#[derive(Serialize)]
struct ModelSummary<'a> {
    name: &'a str,
    layers: usize,
    param_count: u64,
}

fn graph_summary(g: &ModelGraph, c: &CompatReport) -> GraphSummary {
    GraphSummary {
        name: g.name().to_string(),
        layers: g.len(),
        param_count: graph_ir::param_count(g),
        incompatible_layers: c.incompatible_count(),
        subgraph_count: c.subgraph_count,
    }
}

/// Parse `args` (program name first) and execute. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let echo: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli, echo) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn execute(cli: Cli, invocation: Vec<String>) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let seed = pick(cli.seed, config.seed, DEFAULT_SEED);
    match cli.command {
        Command::BuildModel(a) => {
            let g = match (a.variant, a.chain) {
                (_, Some(0)) => {
                    return Err(CliError::InvalidArg {
                        flag: "chain",
                        detail: "a chain needs at least one layer".into(),
                    })
                }
                (_, Some(n)) => zoo::build_chain(&a.name, n),
                (v, None) => zoo::build_pix2pix_generator(v.unwrap_or(VariantArg::Original).into()),
            };
            write_text(&a.out, &g.to_json())?;
            let summary = ModelSummary {
                name: g.name(),
                layers: g.len(),
                param_count: graph_ir::param_count(&g),
            };
            eprintln!(
                "{}: {} layers, {} parameters",
                summary.name, summary.layers, summary.param_count
            );
            print!("{}", to_json_line(&summary));
        }
        Command::Check(a) => {
            let g = ModelGraph::load(&a.model)?;
            let rules = rules_from(a.rules.as_deref())?;
            let opts = CheckOptions {
                coerce_fp32: !a.no_coerce_fp32,
            };
            let report = compat::check_graph(&g, &rules, opts);
            emit(a.out.as_deref(), &report.to_json())?;
            eprintln!(
                "{}: {} incompatible layers, {} DLA subgraphs",
                report.model_name,
                report.incompatible_count(),
                report.subgraph_count
            );
            for v in report.verdicts.iter().filter(|v| !v.compatible) {
                eprintln!("  {} violates {}", v.layer_id, v.violations.join(", "));
            }
            let limit = pick(a.limit, config.subgraph_limit, DEFAULT_SUBGRAPH_LIMIT);
            compat::assert_subgraph_limit(&report, limit)?;
        }
        Command::Rewrite(a) => {
            let g = ModelGraph::load(&a.model)?;
            let (rewritten, rep) = rewrite::substitute_deconv_padding(&g, a.strategy.into())?;
            if let Some(s) = &a.verify_input {
                rewrite::verify_equivalence(&g, &rewritten, parse_shape(s)?)?;
            }
            write_text(&a.out, &rewritten.to_json())?;
            emit(a.report.as_deref(), &rep.to_json())?;
            eprintln!(
                "{}: {} substitutions, parameter delta {:+}",
                rewritten.name(),
                rep.substitutions.len(),
                rep.param_delta
            );
        }
        Command::SynthProfile(a) => {
            let g = ModelGraph::load(&a.model)?;
            let rules = rules_from(a.rules.as_deref())?;
            let report = compat::check_graph(&g, &rules, CheckOptions::default());
            let mean = positive(
                "gpu-mean-ms",
                pick(a.gpu_mean_ms, config.gpu_mean_ms, DEFAULT_GPU_MEAN_MS),
            )?;
            let ratio = positive("dla-ratio", pick(a.dla_ratio, config.dla_ratio, DEFAULT_DLA_RATIO))?;
            let t = pick(a.transition_ms, config.transition_ms, DEFAULT_TRANSITION_MS);
            let gamma = pick(a.gamma, config.gamma, 1.0);
            let p = profile::synthesize_profile(&report, seed, mean, ratio)
                .with_transitions(t, t)
                .with_gamma(gamma);
            p.validate()?;
            write_text(&a.out, &p.to_json())?;
        }
        Command::Schedule(a) => {
            let pa = profile::load_profile(&a.profile_a)?;
            let pb = profile::load_profile(&a.profile_b)?;
            for (model, p) in [(&a.model_a, &pa), (&a.model_b, &pb)] {
                if let Some(path) = model {
                    let g = ModelGraph::load(path)?;
                    p.validate_against(&compat::check_graph(
                        &g,
                        &compat::default_dla_rules(),
                        CheckOptions::default(),
                    ))?;
                }
            }
            let schedule = match a.mode {
                ModeArg::Naive => scheduler::naive_schedule(&pa, &pb),
                ModeArg::Swap => {
                    let plan = scheduler::search_swap(&pa, &pb)?;
                    eprintln!(
                        "swap at i={} j={}: period {:.4} ms ({:.2} fps per model)",
                        plan.i, plan.j, plan.estimate.period_ms, plan.estimate.fps_per_model
                    );
                    plan.schedule
                }
            };
            write_text(&a.out, &schedule.to_json())?;
        }
        Command::Simulate(a) => {
            let schedule = Schedule::load(&a.schedule)?;
            let profiles = a
                .profiles
                .iter()
                .map(profile::load_profile)
                .collect::<Result<Vec<_>, _>>()?;
            let opts = SimOptions {
                frames: pick(a.frames, config.frames, DEFAULT_FRAMES),
                warmup: pick(a.warmup, config.warmup, DEFAULT_WARMUP_FRAMES),
            };
            let result = simulator::simulate(&[schedule], &profiles, opts)?;
            emit(a.out.as_deref(), &result.to_json())?;
            if let Some(path) = &a.gantt {
                let fmt = match path.extension().and_then(|e| e.to_str()) {
                    Some("svg") => TimelineFormat::Svg,
                    Some("json") => TimelineFormat::Json,
                    _ => TimelineFormat::TextGantt,
                };
                write_text(path, &simulator::export_timeline(&result.timeline, fmt))?;
            }
            for (m, fps) in &result.fps {
                eprintln!("{m}: {fps:.3} fps");
            }
        }
        Command::Metrics(a) => {
            let o = metrics::load_pgm(&a.reference)?;
            let t = metrics::load_pgm(&a.test)?;
            let d = SsimParams::default();
            let params = SsimParams {
                k1: pick(a.k1, config.k1, d.k1),
                k2: pick(a.k2, config.k2, d.k2),
                window: a.window,
            };
            print!("{}", to_json_line(&metrics::compare(&o, &t, &params)?));
        }
        Command::Report(a) => {
            let schedule = Schedule::load(&a.schedule)?;
            let sim = SimResult::from_json(&read_text(&a.sim)?)?;
            let mut r = report::report(&schedule, &sim)?;
            r.invocation = invocation;
            r.inputs = vec![
                report::digest_file(&a.schedule, a.schedule.display().to_string())?,
                report::digest_file(&a.sim, a.sim.display().to_string())?,
            ];
            if let Some(out) = &a.out {
                r.outputs.push(out.display().to_string());
            }
            eprint!("{}", r.render_table());
            emit(a.out.as_deref(), &r.to_json())?;
        }
        Command::Demo(a) => {
            let opts = DemoOptions {
                seed,
                frames: pick(a.frames, config.frames, DEFAULT_FRAMES),
                warmup: config.warmup.unwrap_or(DEFAULT_WARMUP_FRAMES),
                gpu_mean_ms: config.gpu_mean_ms.unwrap_or(DEFAULT_GPU_MEAN_MS),
                dla_ratio: config.dla_ratio.unwrap_or(DEFAULT_DLA_RATIO),
                transition_ms: config.transition_ms.unwrap_or(DEFAULT_TRANSITION_MS),
            };
            let r = run_demo(&a.out_dir, &opts)?;
            eprint!("{}", r.render_table());
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoOptions {
    pub seed: u64,
    pub frames: usize,
    pub warmup: usize,
    pub gpu_mean_ms: f64,
    pub dla_ratio: f64,
    pub transition_ms: f64,
}

impl Default for DemoOptions {
    fn default() -> Self {
        DemoOptions {
            seed: DEFAULT_SEED,
            frames: DEFAULT_FRAMES,
            warmup: DEFAULT_WARMUP_FRAMES,
            gpu_mean_ms: DEFAULT_GPU_MEAN_MS,
            dla_ratio: DEFAULT_DLA_RATIO,
            transition_ms: DEFAULT_TRANSITION_MS,
        }
    }
}

/// Layer count of the GPU-resident companion model in the demo.
pub const DEMO_CHAIN_LAYERS: usize = 64;

/// build → check → rewrite → synthesize profiles → schedule → simulate →
/// report, with every artifact written under `out_dir`. Artifact names in the
/// report are relative to `out_dir`, so two runs with the same options agree
/// byte for byte wherever they are written.
pub fn run_demo(out_dir: &Path, opts: &DemoOptions) -> Result<RunReport, CliError> {
    let mut outputs = Vec::new();
    let mut put = |name: &str, text: &str| -> Result<(), CliError> {
        write_text(&out_dir.join(name), text)?;
        outputs.push(name.to_string());
        Ok(())
    };
    let rules = compat::default_dla_rules();
    let check = |g: &ModelGraph| compat::check_graph(g, &rules, CheckOptions::default());

    let original = zoo::build_pix2pix_generator(Pix2PixVariant::Original);
    let original_check = check(&original);
    put("pix2pix.json", &original.to_json())?;
    put("pix2pix.check.json", &original_check.to_json())?;

    let (rewritten, rewrite_report) = rewrite::substitute_deconv_padding(&original, SubstitutionStrategy::CropBorder)?;
    rewrite::verify_equivalence(&original, &rewritten, TensorShape::new(3, 256, 256)?)?;
    let rewritten_check = check(&rewritten);
    compat::assert_subgraph_limit(&rewritten_check, DEFAULT_SUBGRAPH_LIMIT)?;
    put("pix2pix-crop.json", &rewritten.to_json())?;
    put("pix2pix-crop.rewrite.json", &rewrite_report.to_json())?;
    put("pix2pix-crop.check.json", &rewritten_check.to_json())?;

    let companion = zoo::build_chain("yolo", DEMO_CHAIN_LAYERS);
    let companion_check = check(&companion);
    put("yolo.json", &companion.to_json())?;

    let t = opts.transition_ms;
    let synth = |c: &CompatReport, seed: u64| -> Result<LatencyProfile, CliError> {
        let p = profile::synthesize_profile(c, seed, opts.gpu_mean_ms, opts.dla_ratio).with_transitions(t, t);
        p.validate()?;
        Ok(p)
    };
    let p_original = synth(&original_check, opts.seed)?;
    let p_rewritten = synth(&rewritten_check, opts.seed)?;
    let p_companion = synth(&companion_check, opts.seed.wrapping_add(1))?;
    put("pix2pix.profile.json", &p_original.to_json())?;
    put("pix2pix-crop.profile.json", &p_rewritten.to_json())?;
    put("yolo.profile.json", &p_companion.to_json())?;

    let sim_opts = SimOptions {
        frames: opts.frames,
        warmup: opts.warmup,
    };
    let naive = scheduler::naive_schedule(&p_original, &p_companion);
    let naive_sim = simulator::simulate(
        std::slice::from_ref(&naive),
        &[p_original.clone(), p_companion.clone()],
        sim_opts,
    )?;
    let swap = scheduler::search_swap(&p_rewritten, &p_companion)?;
    let swap_sim = simulator::simulate(
        std::slice::from_ref(&swap.schedule),
        &[p_rewritten.clone(), p_companion.clone()],
        sim_opts,
    )?;
    put("naive.schedule.json", &naive.to_json())?;
    put("naive.sim.json", &naive_sim.to_json())?;
    put("swap.schedule.json", &swap.schedule.to_json())?;
    put("swap.sim.json", &swap_sim.to_json())?;
    put(
        "swap.gantt.svg",
        &simulator::export_timeline(&swap_sim.timeline, TimelineFormat::Svg),
    )?;

    let mut r = RunReport::empty();
    r.invocation = vec![
        "demo".into(),
        "--seed".into(),
        opts.seed.to_string(),
        "--frames".into(),
        opts.frames.to_string(),
    ];
    r.graphs = vec![
        graph_summary(&original, &original_check),
        graph_summary(&rewritten, &rewritten_check),
        graph_summary(&companion, &companion_check),
    ];
    r.scenarios = vec![
        report::scenario("naive/original", &naive, &naive_sim)?,
        report::scenario("swap/rewritten", &swap.schedule, &swap_sim)?,
    ];
    for name in [
        "naive.schedule.json",
        "naive.sim.json",
        "swap.schedule.json",
        "swap.sim.json",
    ] {
        r.inputs.push(report::digest_file(out_dir.join(name), name)?);
    }
    outputs.push("report.json".into());
    r.outputs = outputs;
    write_text(&out_dir.join("report.json"), &r.to_json())?;
    Ok(r)
}
