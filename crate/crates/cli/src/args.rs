//! Command-line flags and the config files they override.
//!
//! Precedence, lowest first: built-in defaults, `--config` file, `MVBOX_*`
//! environment variables, command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use mvbox::dataio::sim::{SimSpec, TrajectoryPattern};
use mvbox::eval::{EvalConfig, EvalMode, IouBackend};
use mvbox::geometry::Intrinsics;
use mvbox::stream::PipelineConfig;

#[derive(Debug, Parser)]
#[command(name = "mvbox", version, about = "Streaming multi-view fusion of single-view 3D box proposals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stream frames through the pipeline and write the fused scene.
    Run(RunArgs),
    /// Generate a synthetic detection stream and its ground truth.
    Simulate(SimulateArgs),
    /// Score a snapshot against ground truth (AP per IoU threshold).
    Eval(EvalArgs),
    /// Rank snapshot objects by similarity to a query embedding.
    Retrieve(RetrieveArgs),
    /// Measure per-frame latency and throughput.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct ConfigFlags {
    /// JSON config file; flags and environment variables override it.
    #[arg(long, env = "MVBOX_CONFIG", value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Write the effective config to PATH before running.
    #[arg(long, value_name = "PATH")]
    pub emit_config: Option<PathBuf>,
    /// Print the effective config as JSON and exit.
    #[arg(long)]
    pub print_config: bool,
}

/// One flag per `PipelineConfig` field. Angles are radians.
#[derive(Debug, Args, Default)]
pub struct PipelineFlags {
    #[arg(long, env = "MVBOX_TAU_3D")]
    pub tau_3d: Option<f64>,
    #[arg(long, env = "MVBOX_TAU_2D")]
    pub tau_2d: Option<f64>,
    #[arg(long, env = "MVBOX_TAU_R")]
    pub tau_r: Option<f64>,
    #[arg(long, env = "MVBOX_TAU_T")]
    pub tau_t: Option<f64>,
    #[arg(long, env = "MVBOX_O_N")]
    pub o_n: Option<usize>,
    #[arg(long, env = "MVBOX_N_CAND_MAX")]
    pub n_cand_max: Option<usize>,
    #[arg(long, env = "MVBOX_N_PST")]
    pub n_pst: Option<usize>,
    #[arg(long, env = "MVBOX_K_MAX")]
    pub k_max: Option<usize>,
    #[arg(long, env = "MVBOX_SIGMA_INIT_POS")]
    pub sigma_init_pos: Option<f64>,
    #[arg(long, env = "MVBOX_SIGMA_INIT_SIZE")]
    pub sigma_init_size: Option<f64>,
    #[arg(long, env = "MVBOX_SHRINK")]
    pub shrink: Option<f64>,
    #[arg(long, env = "MVBOX_MIN_SIGMA")]
    pub min_sigma: Option<f64>,
    #[arg(long, env = "MVBOX_EPSILON_F")]
    pub epsilon_f: Option<f64>,
    #[arg(long, env = "MVBOX_TAU_BOX")]
    pub tau_box: Option<usize>,
    #[arg(long, env = "MVBOX_XI")]
    pub xi: Option<f64>,
    #[arg(long, env = "MVBOX_THETA_KF")]
    pub theta_kf: Option<f64>,
    #[arg(long, env = "MVBOX_D_KF")]
    pub d_kf: Option<f64>,
    #[arg(long, env = "MVBOX_FUSION_ENABLED", value_name = "BOOL")]
    pub fusion_enabled: Option<bool>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl PipelineFlags {
    pub fn apply(&self, cfg: &mut PipelineConfig) {
        let a = &mut cfg.association;
        set(&mut a.tau_3d, self.tau_3d);
        set(&mut a.tau_2d, self.tau_2d);
        set(&mut a.tau_r, self.tau_r);
        set(&mut a.tau_t, self.tau_t);
        set(&mut a.o_n, self.o_n);
        set(&mut a.n_cand_max, self.n_cand_max);
        let f = &mut cfg.fusion;
        set(&mut f.n_pst, self.n_pst);
        set(&mut f.k_max, self.k_max);
        set(&mut f.sigma_init_pos, self.sigma_init_pos);
        set(&mut f.sigma_init_size, self.sigma_init_size);
        set(&mut f.shrink, self.shrink);
        set(&mut f.min_sigma, self.min_sigma);
        set(&mut f.epsilon_f, self.epsilon_f);
        set(&mut f.tau_box, self.tau_box);
        set(&mut f.xi, self.xi);
        set(&mut cfg.keyframe.theta_kf, self.theta_kf);
        set(&mut cfg.keyframe.d_kf, self.d_kf);
        set(&mut cfg.fusion_enabled, self.fusion_enabled);
    }
}

/// One flag per `SimSpec` field except the seed, which is shared.
#[derive(Debug, Args, Default)]
pub struct SimFlags {
    #[arg(long, env = "MVBOX_N_OBJECTS")]
    pub n_objects: Option<usize>,
    /// Room extents x,y,z in meters.
    #[arg(long, env = "MVBOX_ROOM", value_delimiter = ',', num_args = 3, value_name = "X,Y,Z")]
    pub room: Option<Vec<f64>>,
    #[arg(long, env = "MVBOX_N_FRAMES")]
    pub n_frames: Option<usize>,
    /// orbit or lawnmower.
    #[arg(long, env = "MVBOX_PATTERN")]
    pub pattern: Option<TrajectoryPattern>,
    #[arg(long, env = "MVBOX_CENTER_SIGMA_REL")]
    pub center_sigma_rel: Option<f64>,
    #[arg(long, env = "MVBOX_SCALE_SIGMA")]
    pub scale_sigma: Option<f64>,
    /// Radians.
    #[arg(long, env = "MVBOX_ROT_JITTER")]
    pub rot_jitter: Option<f64>,
    #[arg(long, env = "MVBOX_DROPOUT_P")]
    pub dropout_p: Option<f64>,
    #[arg(long, env = "MVBOX_SCORE_BASE")]
    pub score_base: Option<f64>,
    #[arg(long, env = "MVBOX_SCORE_NOISE")]
    pub score_noise: Option<f64>,
    #[arg(long, env = "MVBOX_FEATURE_NOISE")]
    pub feature_noise: Option<f64>,
    /// Pinhole intrinsics fx,fy,cx,cy,width,height in pixels.
    #[arg(long, env = "MVBOX_INTRINSICS", value_delimiter = ',', num_args = 6, value_name = "FX,FY,CX,CY,W,H")]
    pub intrinsics: Option<Vec<f64>>,
    /// Embedding dimension; 0 disables features.
    #[arg(long, env = "MVBOX_FEATURE_DIM")]
    pub feature_dim: Option<usize>,
}

impl SimFlags {
    pub fn apply(&self, spec: &mut SimSpec) {
        set(&mut spec.n_objects, self.n_objects);
        if let Some(r) = &self.room {
            spec.room = [r[0], r[1], r[2]];
        }
        set(&mut spec.n_frames, self.n_frames);
        set(&mut spec.pattern, self.pattern);
        let n = &mut spec.noise;
        set(&mut n.center_sigma_rel, self.center_sigma_rel);
        set(&mut n.scale_sigma, self.scale_sigma);
        set(&mut n.rot_jitter, self.rot_jitter);
        set(&mut n.dropout_p, self.dropout_p);
        set(&mut n.score_base, self.score_base);
        set(&mut n.score_noise, self.score_noise);
        set(&mut n.feature_noise, self.feature_noise);
        if let Some(k) = &self.intrinsics {
            spec.intrinsics = Intrinsics { fx: k[0], fy: k[1], cx: k[2], cy: k[3], width: k[4], height: k[5] };
        }
        set(&mut spec.feature_dim, self.feature_dim);
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Oriented,
    AxisAligned,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BackendArg {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Args, Default)]
pub struct EvalFlags {
    /// Ascending IoU thresholds in (0, 1).
    #[arg(long, env = "MVBOX_IOU_THRESHOLDS", value_delimiter = ',', value_name = "T,...")]
    pub iou_thresholds: Option<Vec<f64>>,
    #[arg(long, env = "MVBOX_MODE", value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, env = "MVBOX_BACKEND", value_enum)]
    pub backend: Option<BackendArg>,
    /// Samples per box for the monte-carlo backend.
    #[arg(long, env = "MVBOX_MC_SAMPLES")]
    pub mc_samples: Option<usize>,
    #[arg(long, env = "MVBOX_MC_SEED")]
    pub mc_seed: Option<u64>,
}

const DEFAULT_MC_SAMPLES: usize = 8192;

impl EvalFlags {
    pub fn apply(&self, cfg: &mut EvalConfig) {
        if let Some(t) = &self.iou_thresholds {
            cfg.iou_thresholds = t.clone();
        }
        if let Some(m) = self.mode {
            cfg.mode = match m {
                ModeArg::Oriented => EvalMode::Oriented,
                ModeArg::AxisAligned => EvalMode::AxisAligned,
            };
        }
        let (o_n, seed) = match cfg.backend {
            IouBackend::MonteCarlo { o_n, seed } => (o_n, seed),
            IouBackend::Exact => (DEFAULT_MC_SAMPLES, 0),
        };
        let monte_carlo = match self.backend {
            Some(BackendArg::MonteCarlo) => true,
            Some(BackendArg::Exact) => false,
            None => matches!(cfg.backend, IouBackend::MonteCarlo { .. }),
        };
        if monte_carlo {
            cfg.backend = IouBackend::MonteCarlo { o_n: self.mc_samples.unwrap_or(o_n), seed: self.mc_seed.unwrap_or(seed) };
        } else {
            cfg.backend = IouBackend::Exact;
        }
    }
}

/// Where `run` and `bench` read frames from.
#[derive(Debug, Args)]
pub struct InputFlags {
    /// Detection stream (NDJSON).
    #[arg(long, env = "MVBOX_INPUT", value_name = "PATH")]
    pub input: Option<PathBuf>,
    /// Generate the stream with the simulator instead of reading a file.
    #[arg(long)]
    pub simulate: bool,
    /// Global seed: pipeline sampling and, with --simulate, the simulator.
    #[arg(long, env = "MVBOX_SEED")]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub sim: SimFlags,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOutputs {
    pub snapshot: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub stats: Option<PathBuf>,
    pub obj: Option<PathBuf>,
    pub state: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

/// Everything that determines a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub simulate: Option<SimSpec>,
    pub groundtruth: Option<PathBuf>,
    /// Scene state to resume from.
    pub resume: Option<PathBuf>,
    pub pipeline: PipelineConfig,
    pub eval: EvalConfig,
    pub outputs: RunOutputs,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        match (&self.input, &self.simulate) {
            (Some(_), Some(_)) => bail!("give either an input stream or a simulator spec, not both"),
            (None, None) => bail!("no input: pass --input PATH or --simulate"),
            _ => {}
        }
        if let Some(spec) = &self.simulate {
            spec.noise.validate().map_err(anyhow::Error::msg).context("invalid noise model")?;
        }
        self.pipeline.validate().context("invalid pipeline config")?;
        self.eval.validate().map_err(anyhow::Error::msg).context("invalid eval config")?;
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigFlags,
    #[command(flatten)]
    pub input: InputFlags,
    /// Ground truth for an evaluation report (simulated runs use their own).
    #[arg(long, env = "MVBOX_GROUNDTRUTH", value_name = "PATH")]
    pub groundtruth: Option<PathBuf>,
    /// Resume from a saved scene state.
    #[arg(long, value_name = "PATH")]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub eval: EvalFlags,
    /// Fused objects (JSON).
    #[arg(long, value_name = "PATH")]
    pub snapshot: Option<PathBuf>,
    /// Per-frame event log (NDJSON).
    #[arg(long, value_name = "PATH")]
    pub events: Option<PathBuf>,
    /// Run statistics (JSON).
    #[arg(long, value_name = "PATH")]
    pub stats: Option<PathBuf>,
    /// Box edges as a Wavefront OBJ line set.
    #[arg(long, value_name = "PATH")]
    pub obj: Option<PathBuf>,
    /// Final scene state (JSON), loadable with --resume.
    #[arg(long, value_name = "PATH")]
    pub state: Option<PathBuf>,
    /// AP report (JSON); needs ground truth.
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

pub fn read_config<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

/// Applies the input, seed and pipeline flags.
fn apply_input(input: &InputFlags, cfg: &mut RunConfig) -> Result<()> {
    let file_seed = cfg.simulate.is_some();
    if let Some(p) = &input.input {
        cfg.input = Some(p.clone());
        cfg.simulate = None;
    }
    if input.simulate {
        if input.input.is_some() {
            bail!("--input and --simulate are mutually exclusive");
        }
        if input.seed.is_none() && !file_seed {
            bail!("simulator runs need an explicit --seed");
        }
        cfg.input = None;
        cfg.simulate.get_or_insert_with(SimSpec::default);
    }
    if let Some(spec) = cfg.simulate.as_mut() {
        input.sim.apply(spec);
        set(&mut spec.seed, input.seed);
    }
    set(&mut cfg.pipeline.seed, input.seed);
    input.pipeline.apply(&mut cfg.pipeline);
    Ok(())
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg: RunConfig = read_config(self.config.config.as_deref())?;
        apply_input(&self.input, &mut cfg)?;
        if self.groundtruth.is_some() {
            cfg.groundtruth = self.groundtruth.clone();
        }
        if self.resume.is_some() {
            cfg.resume = self.resume.clone();
        }
        self.eval.apply(&mut cfg.eval);
        let o = &mut cfg.outputs;
        for (slot, flag) in [
            (&mut o.snapshot, &self.snapshot),
            (&mut o.events, &self.events),
            (&mut o.stats, &self.stats),
            (&mut o.obj, &self.obj),
            (&mut o.state, &self.state),
            (&mut o.report, &self.report),
        ] {
            if flag.is_some() {
                *slot = flag.clone();
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub spec: SimSpec,
    pub stream: Option<PathBuf>,
    pub groundtruth: Option<PathBuf>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { spec: SimSpec::default(), stream: None, groundtruth: None }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub config: ConfigFlags,
    #[arg(long, env = "MVBOX_SEED")]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub sim: SimFlags,
    /// Detection stream to write (NDJSON).
    #[arg(long, value_name = "PATH")]
    pub stream: Option<PathBuf>,
    /// Ground-truth boxes to write (JSON).
    #[arg(long, value_name = "PATH")]
    pub groundtruth: Option<PathBuf>,
}

impl SimulateArgs {
    pub fn resolve(&self) -> Result<SimulateConfig> {
        let from_file = self.config.config.is_some();
        let mut cfg: SimulateConfig = read_config(self.config.config.as_deref())?;
        if self.seed.is_none() && !from_file && !self.config.print_config {
            bail!("simulator runs need an explicit --seed");
        }
        set(&mut cfg.spec.seed, self.seed);
        self.sim.apply(&mut cfg.spec);
        if self.stream.is_some() {
            cfg.stream = self.stream.clone();
        }
        if self.groundtruth.is_some() {
            cfg.groundtruth = self.groundtruth.clone();
        }
        cfg.spec.noise.validate().map_err(anyhow::Error::msg).context("invalid noise model")?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalRunConfig {
    pub snapshot: Option<PathBuf>,
    pub groundtruth: Option<PathBuf>,
    pub eval: EvalConfig,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigFlags,
    #[arg(long, value_name = "PATH")]
    pub snapshot: Option<PathBuf>,
    #[arg(long, env = "MVBOX_GROUNDTRUTH", value_name = "PATH")]
    pub groundtruth: Option<PathBuf>,
    #[command(flatten)]
    pub eval: EvalFlags,
    /// AP report to write (JSON).
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

impl EvalArgs {
    pub fn resolve(&self) -> Result<EvalRunConfig> {
        let mut cfg: EvalRunConfig = read_config(self.config.config.as_deref())?;
        if self.snapshot.is_some() {
            cfg.snapshot = self.snapshot.clone();
        }
        if self.groundtruth.is_some() {
            cfg.groundtruth = self.groundtruth.clone();
        }
        if self.report.is_some() {
            cfg.report = self.report.clone();
        }
        self.eval.apply(&mut cfg.eval);
        cfg.eval.validate().map_err(anyhow::Error::msg).context("invalid eval config")?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long, value_name = "PATH")]
    pub snapshot: PathBuf,
    /// Query embedding: `{label, embedding}` or a bare array.
    #[arg(long, value_name = "PATH", required_unless_present = "classify")]
    pub query: Option<PathBuf>,
    #[arg(long, env = "MVBOX_TOP_K", default_value_t = 5)]
    pub top_k: usize,
    /// Label bank `[{label, embedding}, ...]`: label every featured object instead.
    #[arg(long, value_name = "PATH")]
    pub classify: Option<PathBuf>,
    /// Write results as JSON instead of printing them.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub config: ConfigFlags,
    #[command(flatten)]
    pub input: InputFlags,
    /// Keep only the highest-scoring proposals of each frame.
    #[arg(long, env = "MVBOX_MAX_PROPOSALS", value_name = "N")]
    pub max_proposals: Option<usize>,
    /// Latency report to write (JSON).
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

impl BenchArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg: RunConfig = read_config(self.config.config.as_deref())?;
        apply_input(&self.input, &mut cfg)?;
        Ok(cfg)
    }
}
