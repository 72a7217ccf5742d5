//! `sftrack` command-line interface.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::calib::Calibration;
use crate::error::Error;
use crate::flow::NnFlowConfig;
use crate::kitti_io::{self, LabelRow};
use crate::metrics::{recall_sweep, EvalConfig, MetricsReport, Sequence, SmotaFormula};
use crate::pipeline::{
    detections_from_labels, labels_to_sequence, load_clouds, run_sequence, FlowSource, PipelineConfig, Predictor,
    SequenceInput,
};
use crate::preprocess::Frustum;
use crate::sim::{self, compose_motions, generate, layout, Keep, Scenario};
use crate::tracker::{FlowSourceKind, TrackerFileConfig};

#[derive(Debug, Parser)]
#[command(
    name = "sftrack",
    version,
    about = "LiDAR 3D multi-object tracking with scene-flow motion prediction"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Track one or more sequences and write KITTI-format results.
    Track(TrackArgs),
    /// Score results against ground truth.
    Eval(EvalArgs),
    /// Render a synthetic scenario to a sequence directory.
    Sim(SimArgs),
    /// Copy a sequence directory keeping a subset of its frames.
    Decimate(DecimateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowArg {
    Oracle,
    Nn,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorArg {
    Flow,
    Cv,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmotaArg {
    Ratio,
    IntegratedFn,
}

#[derive(Debug, Args, Serialize)]
pub struct TrackArgs {
    /// Sequence directory as written by `sim` (repeatable; processed in parallel).
    #[arg(long)]
    pub sequence: Vec<PathBuf>,
    /// Scenario file, or `demo` / `high-speed`, tracked without touching disk.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Detection label file.
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Directory of `NNNNNN.bin` scans.
    #[arg(long)]
    pub clouds: Option<PathBuf>,
    #[arg(long)]
    pub calib: Option<PathBuf>,
    /// Per-instance rigid motions for the oracle flow source.
    #[arg(long)]
    pub motions: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub flow_source: Option<FlowArg>,
    /// Directory of `NNNNNN.sfl` flow files.
    #[arg(long)]
    pub flow_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "flow")]
    pub predictor: PredictorArg,
    /// Tracker configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub category: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Disable the camera-frustum crop.
    #[arg(long)]
    pub no_fov: bool,
    #[arg(long, default_value_t = 1242.0)]
    pub image_width: f64,
    #[arg(long, default_value_t = 375.0)]
    pub image_height: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Ground-truth label file, or a directory of `<sequence>.txt` files.
    #[arg(long)]
    pub gt: PathBuf,
    /// Result file, or a directory of `<sequence>.txt` files.
    #[arg(long)]
    pub results: PathBuf,
    /// 3D IoU matching threshold (repeatable).
    #[arg(long = "iou-thres", default_values_t = vec![0.25, 0.7])]
    pub iou_thres: Vec<f64>,
    #[arg(long, default_value = "Car")]
    pub category: String,
    #[arg(long, default_value_t = 40)]
    pub recall_steps: usize,
    #[arg(long, value_enum, default_value = "ratio")]
    pub smota: SmotaArg,
    /// Output directory for the reports.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SimArgs {
    /// Scenario file, or `demo` / `high-speed`.
    #[arg(long, default_value = "demo")]
    pub scenario: String,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keep only some frames of the rendered scenario: even, odd or stride:N.
    #[arg(long)]
    pub keep: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DecimateArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// even, odd or stride:N.
    #[arg(long, default_value = "even")]
    pub keep: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub seed: Option<u64>,
    pub version: String,
    pub timings_ms: BTreeMap<String, f64>,
}

impl RunManifest {
    fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        RunManifest {
            command: command.into(),
            config,
            inputs: Vec::new(),
            seed,
            version: env!("CARGO_PKG_VERSION").into(),
            timings_ms: BTreeMap::new(),
        }
    }

    fn time(&mut self, key: &str, since: Instant) {
        self.timings_ms.insert(key.into(), since.elapsed().as_secs_f64() * 1e3);
    }

    fn write(&self, out: &Path) -> anyhow::Result<()> {
        let path = out.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Track(a) => cmd_track(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Sim(a) => cmd_sim(&a),
        Command::Decimate(a) => cmd_decimate(&a),
    }
}

pub fn resolve_scenario(name: &str) -> anyhow::Result<Scenario> {
    Ok(match name {
        "demo" => Scenario::demo(),
        "high-speed" => Scenario::high_speed(),
        path => Scenario::load(Path::new(path))?,
    })
}

fn create_dir(out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

struct Job {
    name: String,
    input: SequenceInput,
    flow: FlowSource,
    calib: Calibration,
    gt: Option<Vec<LabelRow>>,
}

fn flow_kind(args: &TrackArgs, file_cfg: &TrackerFileConfig) -> FlowSourceKind {
    match args.flow_source {
        Some(FlowArg::Oracle) => FlowSourceKind::Oracle,
        Some(FlowArg::Nn) => FlowSourceKind::Nn,
        Some(FlowArg::File) => FlowSourceKind::File,
        None => file_cfg.flow_source,
    }
}

fn make_flow(
    kind: FlowSourceKind,
    args: &TrackArgs,
    motions: Option<Vec<std::collections::HashMap<u32, crate::flow::RigidMotion>>>,
    clouds: &[crate::cloud::PointCloud],
) -> anyhow::Result<FlowSource> {
    if args.predictor == PredictorArg::Cv {
        return Ok(FlowSource::NearestNeighbor(NnFlowConfig::default()));
    }
    Ok(match kind {
        FlowSourceKind::Oracle => {
            let Some(m) = motions else {
                bail!("the oracle flow source needs per-instance motions (--motions or a sequence directory)");
            };
            if !clouds.iter().any(|c| c.labels().iter().any(|l| l.instance().is_some())) {
                bail!("the oracle flow source needs instance-tagged scans");
            }
            FlowSource::Oracle(m)
        }
        FlowSourceKind::Nn => FlowSource::NearestNeighbor(NnFlowConfig::default()),
        FlowSourceKind::File => {
            let Some(dir) = &args.flow_dir else {
                bail!("--flow-source file needs --flow-dir")
            };
            FlowSource::Files(dir.clone())
        }
    })
}

#[allow(clippy::too_many_arguments)]
fn load_job(
    name: String,
    detections: &Path,
    clouds: Option<&Path>,
    calib: &Path,
    motions: Option<&Path>,
    gt: Option<&Path>,
    args: &TrackArgs,
    file_cfg: &TrackerFileConfig,
    category: &str,
) -> anyhow::Result<Job> {
    let calib = kitti_io::read_calib(calib)?;
    let labels = kitti_io::read_labels(detections)?;
    let clouds = match clouds {
        Some(dir) if args.predictor == PredictorArg::Flow => load_clouds(dir)?,
        _ => Vec::new(),
    };
    let frames = if clouds.is_empty() {
        labels.keys().next_back().map_or(0, |f| f + 1)
    } else {
        clouds.len()
    };
    if args.predictor == PredictorArg::Flow && clouds.is_empty() && frames > 0 {
        bail!("the flow predictor needs scans (--clouds or a sequence directory)");
    }
    let dets = detections_from_labels(&labels, &calib, category, frames)?;
    let motions = match motions {
        Some(p) if p.is_file() => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(sim::parse_motions(&text, frames, p)?)
        }
        _ => None,
    };
    let flow = make_flow(flow_kind(args, file_cfg), args, motions, &clouds)?;
    let gt = match gt {
        Some(p) if p.is_file() => Some(kitti_io::read_labels(p)?.into_values().flatten().collect()),
        _ => None,
    };
    Ok(Job {
        name,
        input: SequenceInput {
            clouds,
            detections: dets,
        },
        flow,
        calib,
        gt,
    })
}

pub fn cmd_track(args: &TrackArgs) -> anyhow::Result<()> {
    let start = Instant::now();
    let file_cfg = match &args.config {
        Some(p) => TrackerFileConfig::load(p)?,
        None => TrackerFileConfig::default(),
    };
    let category = args.category.clone().unwrap_or_else(|| file_cfg.category.clone());
    let mut manifest = RunManifest::new(
        "track",
        serde_json::json!({ "args": args, "tracker": file_cfg.tracker(), "category": category }),
        Some(args.seed),
    );

    let mut jobs = Vec::new();
    if let Some(name) = &args.scenario {
        let scenario = resolve_scenario(name)?;
        let frames = generate(&scenario)?;
        let (mut input, motions) = SequenceInput::from_sim(&frames);
        for d in input.detections.iter_mut() {
            d.retain(|x| x.category == category);
        }
        let calib = Calibration::synthetic();
        let flow = make_flow(flow_kind(args, &file_cfg), args, Some(motions), &input.clouds)?;
        if args.predictor == PredictorArg::Cv {
            input.clouds.clear();
        }
        let stem = Path::new(name)
            .file_stem()
            .map_or("scenario".into(), |s| s.to_string_lossy().into_owned());
        let gt = sim::gt_rows(&frames, &calib);
        jobs.push(Job {
            name: stem,
            input,
            flow,
            calib,
            gt: Some(gt),
        });
        manifest.inputs.push(name.clone());
    }
    for dir in &args.sequence {
        let name = dir
            .file_name()
            .map_or("sequence".into(), |s| s.to_string_lossy().into_owned());
        jobs.push(load_job(
            name,
            &dir.join(layout::DETECTIONS),
            Some(&dir.join(layout::VELODYNE)),
            &dir.join(layout::CALIB),
            Some(args.motions.as_deref().unwrap_or(&dir.join(layout::MOTIONS))),
            Some(&dir.join(layout::GT)),
            args,
            &file_cfg,
            &category,
        )?);
        manifest.inputs.push(dir.display().to_string());
    }
    if let Some(det) = &args.detections {
        let Some(calib) = &args.calib else {
            bail!("--detections needs --calib")
        };
        let name = det
            .file_stem()
            .map_or("results".into(), |s| s.to_string_lossy().into_owned());
        jobs.push(load_job(
            name,
            det,
            args.clouds.as_deref(),
            calib,
            args.motions.as_deref(),
            None,
            args,
            &file_cfg,
            &category,
        )?);
        manifest.inputs.extend(
            [
                Some(det),
                args.clouds.as_ref(),
                Some(calib),
                args.motions.as_ref(),
                args.flow_dir.as_ref(),
            ]
            .into_iter()
            .flatten()
            .map(|p| p.display().to_string()),
        );
    }
    if jobs.is_empty() {
        bail!("nothing to track: give --scenario, --sequence or --detections");
    }
    manifest.time("load", start);

    let run_start = Instant::now();
    let base = PipelineConfig {
        tracker: file_cfg.tracker(),
        predictor: match args.predictor {
            PredictorArg::Flow => Predictor::Flow,
            PredictorArg::Cv => Predictor::ConstantVelocity,
        },
        seed: args.seed,
        ..PipelineConfig::default()
    };
    let results: Vec<(String, crate::error::Result<crate::pipeline::TrackRun>)> = jobs
        .par_iter()
        .map(|job| {
            let cfg = PipelineConfig {
                frustum: (!args.no_fov).then(|| Frustum::new(job.calib.clone(), args.image_width, args.image_height)),
                ..base.clone()
            };
            (job.name.clone(), run_sequence(&job.input, &cfg, &job.flow))
        })
        .collect();
    manifest.time("track", run_start);

    create_dir(&args.out)?;
    for (job, (name, run)) in jobs.iter().zip(results) {
        let run = run.with_context(|| format!("sequence {name}"))?;
        let path = args.out.join(format!("{name}.txt"));
        kitti_io::write_results(&path, &run.frames, &job.calib)?;
        if let Some(gt) = &job.gt {
            let gt_dir = args.out.join("gt");
            create_dir(&gt_dir)?;
            kitti_io::write_labels(&gt_dir.join(format!("{name}.txt")), gt)?;
        }
        if run.flow_starved > 0 {
            info!(
                "{name}: {} tracklet-frames fell back to constant velocity",
                run.flow_starved
            );
        }
        info!("{name}: wrote {}", path.display());
    }
    manifest.time("total", start);
    manifest.write(&args.out)
}

/// `(name, path)` of every sequence under `path`: the file itself, or each
/// `.txt` file of a directory.
fn sequence_files(path: &Path) -> anyhow::Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if path.is_dir() {
        for e in fs::read_dir(path).with_context(|| format!("listing {}", path.display()))? {
            let p = e?.path();
            if p.extension().is_some_and(|x| x == "txt") {
                out.insert(p.file_stem().unwrap().to_string_lossy().into_owned(), p);
            }
        }
    } else {
        out.insert(String::new(), path.to_path_buf());
    }
    Ok(out)
}

pub fn evaluate_paths(gt: &Path, results: &Path, cfgs: &[EvalConfig]) -> anyhow::Result<Vec<MetricsReport>> {
    let gt_files = sequence_files(gt)?;
    let res_files = sequence_files(results)?;
    let pairs: Vec<(PathBuf, PathBuf)> = if gt.is_dir() != results.is_dir() {
        bail!("--gt and --results must both be files or both be directories");
    } else if gt.is_dir() {
        if let Some(extra) = res_files.keys().find(|k| !gt_files.contains_key(*k)) {
            bail!("results for sequence {extra} have no ground truth");
        }
        gt_files
            .iter()
            .map(|(k, g)| (g.clone(), res_files.get(k).cloned().unwrap_or_default()))
            .collect()
    } else {
        vec![(gt.to_path_buf(), results.to_path_buf())]
    };
    let loaded: Vec<_> = pairs
        .par_iter()
        .map(|(g, r)| -> anyhow::Result<_> {
            let g = kitti_io::read_labels(g)?;
            let r = if r.as_os_str().is_empty() {
                Default::default()
            } else {
                kitti_io::read_labels(r)?
            };
            Ok((g, r))
        })
        .collect::<anyhow::Result<_>>()?;
    cfgs.iter()
        .map(|cfg| {
            let seqs: Vec<(Sequence, Sequence)> = loaded
                .iter()
                .map(|(g, r)| -> crate::error::Result<_> {
                    let frames = g.keys().chain(r.keys()).max().map_or(0, |f| f + 1);
                    Ok((
                        labels_to_sequence(g, &cfg.category, frames)?,
                        labels_to_sequence(r, &cfg.category, frames)?,
                    ))
                })
                .collect::<crate::error::Result<_>>()?;
            Ok(recall_sweep(&seqs, cfg)?)
        })
        .collect()
}

pub fn cmd_eval(args: &EvalArgs) -> anyhow::Result<()> {
    let start = Instant::now();
    let mut manifest = RunManifest::new("eval", serde_json::to_value(args)?, None);
    manifest.inputs = vec![args.gt.display().to_string(), args.results.display().to_string()];
    let cfgs: Vec<EvalConfig> = args
        .iou_thres
        .iter()
        .map(|&t| {
            let cfg = EvalConfig {
                iou_thres: t,
                category: args.category.clone(),
                num_recall_steps: args.recall_steps,
                smota: match args.smota {
                    SmotaArg::Ratio => SmotaFormula::Ratio,
                    SmotaArg::IntegratedFn => SmotaFormula::IntegratedFn,
                },
            };
            cfg.validate().map(|_| cfg)
        })
        .collect::<Result<_, Error>>()?;
    let reports = evaluate_paths(&args.gt, &args.results, &cfgs)?;

    create_dir(&args.out)?;
    let mut table = String::new();
    let mut kv = String::new();
    for r in &reports {
        table.push_str(&r.table());
        table.push('\n');
        kv.push_str(&format!("[iou_{:.2}]\n", r.iou_thres));
        kv.push_str(&r.key_values());
        kv.push('\n');
    }
    print!("{table}");
    fs::write(args.out.join("report.txt"), &table)?;
    fs::write(args.out.join("report_kv.txt"), &kv)?;
    fs::write(
        args.out.join("report.json"),
        serde_json::to_string_pretty(&reports)? + "\n",
    )?;
    manifest.time("total", start);
    manifest.write(&args.out)
}

pub fn cmd_sim(args: &SimArgs) -> anyhow::Result<()> {
    let start = Instant::now();
    let mut scenario = resolve_scenario(&args.scenario)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let mut manifest = RunManifest::new("sim", serde_json::to_value(args)?, Some(scenario.seed));
    manifest.inputs.push(args.scenario.clone());
    let mut frames = generate(&scenario)?;
    if let Some(keep) = &args.keep {
        let d = sim::decimate(&frames, keep.parse()?);
        frames = d.frames;
    }
    create_dir(&args.out)?;
    sim::write_sequence(&args.out, &frames, &Calibration::synthetic())?;
    fs::write(args.out.join(layout::SCENARIO), scenario.to_toml())?;
    manifest.time("total", start);
    manifest.write(&args.out)
}

/// Frame count of a sequence directory: its scans, else the labels.
fn dir_frames(input: &Path) -> anyhow::Result<usize> {
    let velo = input.join(layout::VELODYNE);
    if velo.is_dir() {
        return Ok(load_scan_names(&velo)?.len());
    }
    let mut n = 0;
    for name in [layout::GT, layout::DETECTIONS] {
        let p = input.join(name);
        if p.is_file() {
            n = n.max(kitti_io::read_labels(&p)?.keys().next_back().map_or(0, |f| f + 1));
        }
    }
    Ok(n)
}

fn load_scan_names(dir: &Path) -> anyhow::Result<Vec<String>> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".bin"))
        .collect();
    names.sort();
    Ok(names)
}

/// Writes the kept frames of `input` to `out`, renumbered from 0. Returns
/// a warning when nothing was kept.
pub fn decimate_dir(input: &Path, out: &Path, keep: Keep) -> anyhow::Result<Option<String>> {
    let frames = dir_frames(input)?;
    let kept = keep.indices(frames);
    create_dir(out)?;
    for sub in [layout::VELODYNE, layout::INSTANCES] {
        let src = input.join(sub);
        if !src.is_dir() {
            continue;
        }
        let dst = out.join(sub);
        create_dir(&dst)?;
        for (k, &t) in kept.iter().enumerate() {
            let from = src.join(layout::frame_file(t, "bin"));
            if from.is_file() {
                fs::copy(&from, dst.join(layout::frame_file(k, "bin")))
                    .with_context(|| format!("copying {}", from.display()))?;
            }
        }
    }
    let new_index: BTreeMap<usize, usize> = kept.iter().enumerate().map(|(k, &t)| (t, k)).collect();
    for name in [layout::GT, layout::DETECTIONS] {
        let p = input.join(name);
        if !p.is_file() {
            continue;
        }
        let rows: Vec<LabelRow> = kitti_io::read_labels(&p)?
            .into_iter()
            .filter_map(|(f, rows)| new_index.get(&f).map(|&k| (k, rows)))
            .flat_map(|(k, rows)| rows.into_iter().map(move |r| LabelRow { frame: k, ..r }))
            .collect();
        kitti_io::write_labels(&out.join(name), &rows)?;
    }
    let mp = input.join(layout::MOTIONS);
    if mp.is_file() {
        let motions = sim::parse_motions(&fs::read_to_string(&mp)?, frames, &mp)?;
        fs::write(
            out.join(layout::MOTIONS),
            sim::format_motions(&compose_motions(&motions, &kept)),
        )?;
    }
    for name in [layout::CALIB, layout::SCENARIO] {
        let p = input.join(name);
        if p.is_file() {
            fs::copy(&p, out.join(name))?;
        }
    }
    Ok(kept.is_empty().then(|| {
        let msg = format!(
            "{}: decimation with {keep:?} keeps none of {frames} frames",
            input.display()
        );
        warn!("{msg}");
        msg
    }))
}

pub fn cmd_decimate(args: &DecimateArgs) -> anyhow::Result<()> {
    let start = Instant::now();
    let keep: Keep = args.keep.parse()?;
    let mut manifest = RunManifest::new("decimate", serde_json::to_value(args)?, None);
    manifest.inputs.push(args.input.display().to_string());
    if let Some(w) = decimate_dir(&args.input, &args.out, keep)? {
        eprintln!("warning: {w}");
    }
    manifest.time("total", start);
    manifest.write(&args.out)
}
