use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use mvbox::dataio::sim::simulate;
use mvbox::dataio::{
    load_groundtruth, load_label_bank, load_query, load_snapshot, load_stream, write_groundtruth, write_obj_lines,
    write_snapshot, write_stream,
};
use mvbox::eval::{evaluate, EvalReport};
use mvbox::geometry::OrientedBox3D;
use mvbox::semantics::{classify, retrieve};
use mvbox::stream::{FrameInput, Pipeline, PipelineStats, SceneState};

use crate::args::{BenchArgs, EvalArgs, RetrieveArgs, RunArgs, RunConfig, SimulateArgs};

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush().with_context(|| format!("cannot write {}", path.display()))
}

/// Handles `--print-config` and `--emit-config`. Returns true when the
/// command should stop here.
pub fn config_actions<T: Serialize>(cfg: &T, print: bool, emit: Option<&Path>) -> Result<bool> {
    if let Some(path) = emit {
        write_json(cfg, path)?;
    }
    if print {
        println!("{}", serde_json::to_string_pretty(cfg)?);
    }
    Ok(print)
}

/// Peak resident set size of this process, if the platform reports it.
fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kib: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kib * 1024)
}

struct Source {
    frames: Box<dyn Iterator<Item = Result<FrameInput>>>,
    groundtruth: Option<Vec<OrientedBox3D>>,
}

fn open_source(cfg: &RunConfig) -> Result<Source> {
    let external_gt = match &cfg.groundtruth {
        Some(p) => Some(load_groundtruth(p)?.objects.iter().map(|o| o.bbox).collect()),
        None => None,
    };
    if let Some(spec) = &cfg.simulate {
        let run = simulate(spec)?;
        let gt = run.scene.objects.iter().map(|o| o.bbox).collect();
        let frames: Vec<FrameInput> = run.frames.into_iter().map(|f| f.frame).collect();
        return Ok(Source { frames: Box::new(frames.into_iter().map(Ok)), groundtruth: external_gt.or(Some(gt)) });
    }
    let path = cfg.input.as_ref().expect("validated: input or simulate");
    let reader = load_stream(path)?;
    Ok(Source { frames: Box::new(reader.map(|r| r.map_err(Into::into))), groundtruth: external_gt })
}

fn make_pipeline(cfg: &RunConfig) -> Result<Pipeline> {
    Ok(match &cfg.resume {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            let state: SceneState =
                serde_json::from_str(&text).with_context(|| format!("invalid scene state {}", path.display()))?;
            if !state.registry_consistent() {
                bail!("scene state {} has an inconsistent frame registry", path.display());
            }
            Pipeline::with_state(cfg.pipeline, state)?
        }
        None => Pipeline::new(cfg.pipeline)?,
    })
}

#[derive(Debug, Serialize)]
struct Latency {
    frames: usize,
    mean_ms: f64,
    median_ms: f64,
    p95_ms: f64,
    max_ms: f64,
}

impl Latency {
    fn from_samples(mut ms: Vec<f64>) -> Self {
        ms.sort_by(f64::total_cmp);
        let n = ms.len();
        let at = |q: f64| if n == 0 { 0.0 } else { ms[((q * n as f64).ceil() as usize).clamp(1, n) - 1] };
        let median = if n == 0 {
            0.0
        } else if n % 2 == 1 {
            ms[n / 2]
        } else {
            0.5 * (ms[n / 2 - 1] + ms[n / 2])
        };
        Self {
            frames: n,
            mean_ms: if n == 0 { 0.0 } else { ms.iter().sum::<f64>() / n as f64 },
            median_ms: median,
            p95_ms: at(0.95),
            max_ms: ms.last().copied().unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Serialize)]
struct RunStats {
    frames: u64,
    keyframes: u64,
    objects: usize,
    /// Latency over keyframes only; other frames return immediately.
    keyframe_latency: Latency,
    wall_s: f64,
    peak_rss_bytes: Option<u64>,
    pipeline: PipelineStats,
}

pub fn run(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    if config_actions(&cfg, args.config.print_config, args.config.emit_config.as_deref())? {
        return Ok(());
    }
    cfg.validate()?;
    let out = &cfg.outputs;
    if out.report.is_some() && cfg.groundtruth.is_none() && cfg.simulate.is_none() {
        bail!("--report needs ground truth (--groundtruth PATH)");
    }
    let source = open_source(&cfg)?;
    let mut pipeline = make_pipeline(&cfg)?;
    let mut events = out.events.as_deref().map(create).transpose()?;
    let mut latencies = Vec::new();
    let start = Instant::now();
    for frame in source.frames {
        let ev = pipeline.process_frame(frame?)?;
        if ev.keyframe {
            latencies.push(ev.timings.total);
        }
        if let Some(w) = events.as_mut() {
            serde_json::to_writer(&mut *w, &ev)?;
            writeln!(w)?;
        }
    }
    if let Some(mut w) = events {
        w.flush()?;
    }
    let wall_s = start.elapsed().as_secs_f64();
    let snapshot = pipeline.snapshot();

    if let Some(p) = &out.snapshot {
        write_snapshot(&snapshot, p)?;
    }
    if let Some(p) = &out.obj {
        let boxes: Vec<OrientedBox3D> = snapshot.objects.iter().map(|o| o.bbox).collect();
        write_obj_lines(&boxes, p)?;
    }
    if let Some(p) = &out.state {
        write_json(pipeline.state(), p)?;
    }
    let state = pipeline.state();
    let stats = RunStats {
        frames: state.stats.frames_seen,
        keyframes: state.stats.keyframes,
        objects: snapshot.objects.len(),
        keyframe_latency: Latency::from_samples(latencies),
        wall_s,
        peak_rss_bytes: peak_rss_bytes(),
        pipeline: state.stats.clone(),
    };
    if let Some(p) = &out.stats {
        write_json(&stats, p)?;
    }
    println!(
        "frames {} keyframes {} objects {} median {:.2} ms p95 {:.2} ms",
        stats.frames, stats.keyframes, stats.objects, stats.keyframe_latency.median_ms, stats.keyframe_latency.p95_ms
    );
    if let Some(gt) = &source.groundtruth {
        let report = evaluate(&snapshot, gt, &cfg.eval);
        print_report(&report);
        if let Some(p) = &out.report {
            write_json(&report, p)?;
        }
    }
    Ok(())
}

fn print_report(report: &EvalReport) {
    for t in &report.thresholds {
        let ap = if t.ap_undefined { "undefined".to_string() } else { format!("{:.4}", t.ap) };
        println!("AP@{:.2} {ap} (tp {} det {} gt {})", t.iou_threshold, t.n_tp, t.n_det, t.n_gt);
    }
}

pub fn simulate_cmd(args: &SimulateArgs) -> Result<()> {
    let cfg = args.resolve()?;
    if config_actions(&cfg, args.config.print_config, args.config.emit_config.as_deref())? {
        return Ok(());
    }
    let Some(stream) = &cfg.stream else { bail!("nothing to write: pass --stream PATH") };
    let run = simulate(&cfg.spec)?;
    write_stream(run.inputs(), stream)?;
    if let Some(p) = &cfg.groundtruth {
        write_groundtruth(&run.scene, p)?;
    }
    let n_props: usize = run.frames.iter().map(|f| f.frame.proposals.len()).sum();
    println!("frames {} objects {} proposals {}", run.frames.len(), run.scene.objects.len(), n_props);
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let cfg = args.resolve()?;
    if config_actions(&cfg, args.config.print_config, args.config.emit_config.as_deref())? {
        return Ok(());
    }
    let Some(snap) = &cfg.snapshot else { bail!("missing --snapshot PATH") };
    let Some(gt) = &cfg.groundtruth else { bail!("missing --groundtruth PATH") };
    let snapshot = load_snapshot(snap)?;
    let gts: Vec<OrientedBox3D> = load_groundtruth(gt)?.objects.iter().map(|o| o.bbox).collect();
    let report = evaluate(&snapshot, &gts, &cfg.eval);
    print_report(&report);
    if let Some(p) = &cfg.report {
        write_json(&report, p)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Hit {
    object_id: u64,
    similarity: f64,
}

#[derive(Serialize)]
struct Label {
    object_id: u64,
    label: String,
    label_index: usize,
    similarity: f64,
}

pub fn retrieve_cmd(args: &RetrieveArgs) -> Result<()> {
    let snapshot = load_snapshot(&args.snapshot)?;
    if let Some(bank) = &args.classify {
        let bank = load_label_bank(bank)?;
        let labels: Vec<Label> = classify(&snapshot, &bank)?
            .into_iter()
            .map(|c| Label { object_id: c.object_id, label: c.label, label_index: c.label_index, similarity: c.similarity })
            .collect();
        match &args.out {
            Some(p) => write_json(&labels, p)?,
            None => {
                for l in &labels {
                    println!("{} {} {:.6}", l.object_id, l.label, l.similarity);
                }
            }
        }
        return Ok(());
    }
    let query = load_query(args.query.as_deref().expect("clap requires --query without --classify"))?;
    let hits: Vec<Hit> = retrieve(&snapshot, &query, args.top_k)?
        .into_iter()
        .map(|(object_id, similarity)| Hit { object_id, similarity })
        .collect();
    match &args.out {
        Some(p) => write_json(&hits, p)?,
        None => {
            for h in &hits {
                println!("{} {:.6}", h.object_id, h.similarity);
            }
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct BenchReport {
    frames: usize,
    keyframes: usize,
    max_proposals: Option<usize>,
    max_objects: usize,
    threads_available: usize,
    keyframe_latency: Latency,
    frames_per_s: f64,
    fusions_run: u64,
    peak_rss_bytes: Option<u64>,
}

pub fn bench(args: &BenchArgs) -> Result<()> {
    let cfg = args.resolve()?;
    if config_actions(&cfg, args.config.print_config, args.config.emit_config.as_deref())? {
        return Ok(());
    }
    cfg.validate()?;
    // load everything up front so parsing stays out of the timings
    let frames: Vec<FrameInput> = open_source(&cfg)?
        .frames
        .map(|f| {
            f.map(|mut f| {
                if let Some(k) = args.max_proposals {
                    f.proposals.sort_by(|a, b| b.score.total_cmp(&a.score));
                    f.proposals.truncate(k);
                }
                f
            })
        })
        .collect::<Result<_>>()?;
    let mut pipeline = make_pipeline(&cfg)?;
    let n = frames.len();
    let mut latencies = Vec::new();
    let mut max_objects = 0;
    let start = Instant::now();
    for frame in frames {
        let ev = pipeline.process_frame(frame)?;
        if ev.keyframe {
            latencies.push(ev.timings.total);
        }
        max_objects = max_objects.max(pipeline.state().globals.objects.len());
    }
    let wall = start.elapsed().as_secs_f64();
    let report = BenchReport {
        frames: n,
        keyframes: latencies.len(),
        max_proposals: args.max_proposals,
        max_objects,
        threads_available: std::thread::available_parallelism().map_or(1, |n| n.get()),
        keyframe_latency: Latency::from_samples(latencies),
        frames_per_s: if wall > 0.0 { n as f64 / wall } else { 0.0 },
        fusions_run: pipeline.state().stats.fusions_run,
        peak_rss_bytes: peak_rss_bytes(),
    };
    let l = &report.keyframe_latency;
    println!(
        "keyframes {} median {:.2} ms p95 {:.2} ms max {:.2} ms ({:.1} frames/s, {} threads)",
        report.keyframes, l.median_ms, l.p95_ms, l.max_ms, report.frames_per_s, report.threads_available
    );
    if let Some(p) = &args.report {
        write_json(&report, p)?;
    }
    Ok(())
}
