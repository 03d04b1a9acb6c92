mod error;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use depthgaze::autoencoder::{self, log_csv, predict_sequence, SaliencyNet};
use depthgaze::config::RunConfig;
use depthgaze::dataset::{
    frame_name, load_annotations, load_fixations, load_video, validate_manifest, Annotation,
    DatasetManifest, Split, WORKING_DIMS,
};
use depthgaze::evaluation::{
    evaluate_split, write_map_png, CenterPrior, EvalVideo, MapSource, Metric, PredictionDir, UniformMap,
};
use depthgaze::fixation::{video_quality, FixationSet};
use depthgaze::overlay::overlay;
use depthgaze::saliency::GraphSaliency;
use depthgaze::synth::{generate_scene, SceneSpec};
use depthgaze::transition::{self, read_svm, run_baseline, train_baseline, write_svm};
use depthgaze::Grid;

use crate::error::{io, Error};

type Result<T> = std::result::Result<T, Error>;

#[derive(Parser)]
#[command(name = "depthgaze", version, about = "Depth-aware video saliency")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset and decode every video.
    Ingest {
        #[arg(long)]
        root: PathBuf,
    },
    /// Per-video fixation homogeneity.
    Quality {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value_t = 10)]
        splits: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Train the candidate-transition baseline on the training split.
    TrainBaseline {
        #[command(flatten)]
        common: TrainArgs,
    },
    /// Train the saliency autoencoder on the training split.
    TrainCnn {
        #[command(flatten)]
        common: TrainArgs,
        #[arg(long)]
        epochs: Option<usize>,
        /// Training log, "epoch,lr,loss" (default: <out>.log.csv).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Write per-frame saliency maps of one video as OUT/<video>/%06d.png.
    Predict {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        video: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_depth: bool,
        #[arg(long, value_enum, default_value_t = ModelKind::Cnn)]
        model: ModelKind,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score prediction directories on the test split.
    Evaluate {
        #[arg(long)]
        root: PathBuf,
        /// Prediction directories, comma separated; each holds <video>/%06d.png.
        #[arg(long, value_delimiter = ',')]
        pred: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "auc,chi2")]
        metrics: Vec<String>,
        /// Built-in reference maps to score alongside.
        #[arg(long, value_delimiter = ',', default_value = "center,uniform")]
        builtin: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Blend a video's frames with its predicted maps.
    Overlay {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        video: String,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset from a scene description.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    root: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    no_depth: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Baseline,
    Cnn,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    Ok(cfg.seeded())
}

/// Annotations of a video, empty when the manifest lists none.
fn annotations_of(root: &Path, manifest: &DatasetManifest, id: &str) -> Result<Vec<Annotation>> {
    match manifest.entry(id).and_then(|e| e.annotations.as_deref()) {
        Some(file) => Ok(load_annotations(root, id, file)?),
        None => Ok(Vec::new()),
    }
}

fn ingest(root: &Path) -> Result<()> {
    let manifest = validate_manifest(root)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "video,split,frames,fixations,viewers").ok();
    for entry in &manifest.videos {
        let video = load_video(root, &entry.id)?;
        let fixations = load_fixations(root, &entry.id)?;
        let viewers: std::collections::BTreeSet<&str> = fixations.iter().map(|r| r.viewer_id.as_str()).collect();
        let split = match manifest.split.get(&entry.id) {
            Some(Split::Train) => "train",
            Some(Split::Test) => "test",
            None => "-",
        };
        writeln!(out, "{},{split},{},{},{}", entry.id, video.len(), fixations.len(), viewers.len()).ok();
    }
    Ok(())
}

fn quality(root: &Path, splits: usize, seed: u64) -> Result<()> {
    let manifest = validate_manifest(root)?;
    let cfg = depthgaze::fixation::HomogeneityConfig {
        num_splits: splits,
        rng_seed: seed,
        ..Default::default()
    };
    let mut out = std::io::stdout().lock();
    writeln!(out, "video,quality,scored_frames,skipped_frames").ok();
    for entry in &manifest.videos {
        let records = load_fixations(root, &entry.id)?;
        let frames = FixationSet::per_frame(&records, entry.frames, WORKING_DIMS);
        let q = video_quality(&frames, WORKING_DIMS, &cfg)?;
        writeln!(
            out,
            "{},{:.6},{},{}",
            entry.id,
            q.mean,
            entry.frames - q.skipped,
            q.skipped
        )
        .ok();
    }
    Ok(())
}

struct TrainData {
    videos: Vec<depthgaze::dataset::VideoSequence>,
    fixations: Vec<Vec<depthgaze::dataset::FixationRecord>>,
    annotations: Vec<Vec<Annotation>>,
}

fn training_data(root: &Path) -> Result<TrainData> {
    let manifest = validate_manifest(root)?;
    let mut data = TrainData {
        videos: Vec::new(),
        fixations: Vec::new(),
        annotations: Vec::new(),
    };
    for id in &manifest.ids(Split::Train) {
        data.videos.push(load_video(root, id)?);
        data.fixations.push(load_fixations(root, id)?);
        data.annotations.push(annotations_of(root, &manifest, id)?);
    }
    Ok(data)
}

fn train_baseline_cmd(args: &TrainArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let data = training_data(&args.root)?;
    let videos: Vec<transition::TrainingVideo<'_>> = (0..data.videos.len())
        .map(|i| transition::TrainingVideo {
            video: &data.videos[i],
            fixations: &data.fixations[i],
            annotations: &data.annotations[i],
        })
        .collect();
    let use_depth = !args.no_depth;
    let provider = GraphSaliency {
        use_depth,
        config: cfg.saliency,
    };
    let model = train_baseline(&videos, &provider, &cfg.baseline, use_depth)?;
    write_svm(&args.out, &model).map_err(io(&args.out))?;
    eprintln!("baseline model written to {}", args.out.display());
    Ok(())
}

fn train_cnn_cmd(args: &TrainArgs, epochs: Option<usize>, log: Option<&Path>) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(e) = epochs {
        cfg.cnn.epochs = e;
    }
    let data = training_data(&args.root)?;
    let videos: Vec<autoencoder::TrainingVideo<'_>> = (0..data.videos.len())
        .map(|i| autoencoder::TrainingVideo {
            video: &data.videos[i],
            fixations: &data.fixations[i],
        })
        .collect();
    let (model, entries) = autoencoder::train(&videos, &cfg.cnn, !args.no_depth, |e| {
        if e.epoch == 1 || e.epoch % 50 == 0 {
            eprintln!("epoch {} lr {:.3e} loss {:.6e}", e.epoch, e.lr, e.loss);
        }
    })?;
    model.save(&args.out)?;
    let log_path = log.map(Path::to_path_buf).unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".log.csv");
        PathBuf::from(p)
    });
    std::fs::write(&log_path, log_csv(&entries)).map_err(io(&log_path))?;
    eprintln!("weights written to {}", args.out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn predict_cmd(
    weights: &Path,
    root: &Path,
    video_id: &str,
    out: &Path,
    no_depth: bool,
    model: ModelKind,
    config: Option<&Path>,
) -> Result<()> {
    let cfg = load_config(config)?;
    let manifest = validate_manifest(root)?;
    if manifest.entry(video_id).is_none() {
        return Err(depthgaze::dataset::DatasetError::UnknownVideo(video_id.to_string()).into());
    }
    let video = load_video(root, video_id)?;
    let use_depth = !no_depth;
    let maps: Vec<Grid> = match model {
        ModelKind::Cnn => {
            let net = SaliencyNet::load(weights)?;
            predict_sequence(&net, &video, use_depth, cfg.cnn.interval, &cfg.cnn.flow)?
                .into_iter()
                .map(|m| m.into_grid())
                .collect()
        }
        ModelKind::Baseline => {
            let svm = read_svm(weights)?;
            let annotations = annotations_of(root, &manifest, video_id)?;
            let provider = GraphSaliency {
                use_depth,
                config: cfg.saliency,
            };
            run_baseline(&video, &annotations, &svm, &provider, &cfg.baseline, use_depth)
                .iter()
                .map(|m| m.to_max_normalized_or_zero())
                .collect()
        }
    };
    let dir = out.join(video_id);
    for (frame, map) in video.frames.iter().zip(&maps) {
        write_map_png(&dir.join(frame_name(frame.index)), map)?;
    }
    eprintln!("{} maps written to {}", maps.len(), dir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate_cmd(
    root: &Path,
    preds: &[PathBuf],
    metrics: &[String],
    builtin: &[String],
    seed: Option<u64>,
    out: &Path,
    config: Option<&Path>,
) -> Result<()> {
    let mut cfg = load_config(config)?.evaluation;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let metrics: Vec<Metric> = metrics
        .iter()
        .map(|m| Metric::parse(m).ok_or_else(|| Error::Usage(format!("unknown metric {m:?}"))))
        .collect::<Result<_>>()?;
    let manifest = validate_manifest(root)?;
    let mut videos = Vec::new();
    for id in &manifest.ids(Split::Test) {
        let records = load_fixations(root, id)?;
        let frames = manifest.entry(id).map_or(0, |e| e.frames);
        let fixations = FixationSet::per_frame(&records, frames, WORKING_DIMS);
        videos.push(EvalVideo {
            id: id.to_string(),
            dims: WORKING_DIMS,
            fixations,
        });
    }
    let dirs: Vec<PredictionDir> = preds
        .iter()
        .map(|p| {
            if p.is_dir() {
                Ok(PredictionDir::new(p))
            } else {
                Err(depthgaze::evaluation::EvalError::MissingPredictions(p.display().to_string()).into())
            }
        })
        .collect::<Result<_>>()?;
    let mut methods: Vec<&dyn MapSource> = dirs.iter().map(|d| d as &dyn MapSource).collect();
    for b in builtin {
        match b.as_str() {
            "center" => methods.push(&CenterPrior),
            "uniform" => methods.push(&UniformMap),
            "none" | "" => {}
            other => return Err(Error::Usage(format!("unknown built-in map {other:?}"))),
        }
    }
    let report = evaluate_split(&methods, &videos, &metrics, &cfg)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io(dir))?;
    }
    std::fs::write(out, report.to_csv()).map_err(io(out))?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "method,metric,mean,std").ok();
    for a in report.aggregates() {
        writeln!(stdout, "{},{},{:.4},{:.4}", a.method, a.metric.name(), a.mean, a.std).ok();
    }
    Ok(())
}

fn overlay_cmd(root: &Path, video_id: &str, pred: &Path, out: &Path) -> Result<()> {
    let video = load_video(root, video_id)?;
    let source = PredictionDir::new(pred);
    let mut maps = Vec::with_capacity(video.len());
    for frame in &video.frames {
        match source.map(video_id, frame.index, video.dims) {
            Ok(m) => maps.push(m),
            Err(depthgaze::evaluation::EvalError::MissingPredictions(_)) => break,
            Err(e) => return Err(e.into()),
        }
    }
    let written = overlay(&video.frames, &maps, out)?;
    eprintln!("{} overlays written to {}", written.len(), out.display());
    Ok(())
}

fn synth_cmd(spec_path: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(spec_path).map_err(io(spec_path))?;
    let spec: SceneSpec =
        serde_json::from_str(&text).map_err(|e| Error::Usage(format!("invalid scene {}: {e}", spec_path.display())))?;
    let manifest = generate_scene(&spec, out)?;
    let by_split = manifest.split.values().fold(BTreeMap::new(), |mut m, s| {
        *m.entry(format!("{s:?}").to_lowercase()).or_insert(0usize) += 1;
        m
    });
    eprintln!("{} videos written to {} {by_split:?}", manifest.videos.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Ingest { root } => ingest(&root),
        Command::Quality { root, splits, seed } => quality(&root, splits, seed),
        Command::TrainBaseline { common } => train_baseline_cmd(&common),
        Command::TrainCnn { common, epochs, log } => train_cnn_cmd(&common, epochs, log.as_deref()),
        Command::Predict {
            weights,
            root,
            video,
            out,
            no_depth,
            model,
            config,
        } => predict_cmd(&weights, &root, &video, &out, no_depth, model, config.as_deref()),
        Command::Evaluate {
            root,
            pred,
            metrics,
            builtin,
            seed,
            out,
            config,
        } => evaluate_cmd(&root, &pred, &metrics, &builtin, seed, &out, config.as_deref()),
        Command::Overlay { root, video, pred, out } => overlay_cmd(&root, &video, &pred, &out),
        Command::Synth { spec, out } => synth_cmd(&spec, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
