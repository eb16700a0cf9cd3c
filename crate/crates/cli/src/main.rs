use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use siamscene_cli::commands::{
    cmd_baseline, cmd_evaluate, cmd_evaluate_dataset, cmd_segment, cmd_synth, cmd_train,
    cmd_train_leave_one_out, resolve_videos, ModelSource,
};
use siamscene_cli::config::RunConfig;
use siamscene_cli::output::{json_bytes, OutputSet};
use siamscene_cli::synth::SyntheticSpec;

#[derive(Parser)]
#[command(
    name = "siamscene",
    version,
    about = "Scene detection in edited video with a two-branch embedding network"
)]
struct Cli {
    /// Seed for initialization, batching, codebook, k-means and synthesis.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat `key = value` file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for per-video work.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// Dataset root with one directory per video.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated video ids; all videos under the data root if omitted.
    #[arg(long, value_delimiter = ',')]
    videos: Vec<String>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    fps: Option<f64>,
    /// csv or bin.
    #[arg(long)]
    descriptor_format: Option<String>,
}

#[derive(Args)]
struct ClusterArgs {
    /// `auto` or a fixed scene count.
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    k_max: Option<usize>,
    /// Kernel bandwidth; estimated from the distances when omitted.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    kmeans_restarts: Option<usize>,
    /// csv or pgm.
    #[arg(long)]
    matrix_format: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted scenes.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        videos: usize,
        #[arg(long, default_value_t = 8)]
        scenes: usize,
        #[arg(long, default_value_t = 4)]
        min_shots: usize,
        #[arg(long, default_value_t = 8)]
        max_shots: usize,
        #[arg(long, default_value_t = 50)]
        min_frames: u64,
        #[arg(long, default_value_t = 200)]
        max_frames: u64,
        #[arg(long)]
        fps: Option<f64>,
        #[arg(long, default_value_t = 16)]
        feature_dim: usize,
        #[arg(long, default_value_t = 0.05)]
        noise_ratio: f64,
        #[arg(long, default_value_t = 48)]
        nuisance_dim: usize,
        #[arg(long, default_value_t = 4)]
        nuisance_rank: usize,
        #[arg(long, default_value_t = 3.0)]
        nuisance_scale: f64,
        #[arg(long, default_value_t = 120)]
        vocab_size: usize,
        #[arg(long, default_value_t = 12)]
        topics: usize,
        #[arg(long, default_value_t = 16)]
        embedding_dim: usize,
        #[arg(long, default_value_t = 1.5)]
        words_per_second: f64,
        #[arg(long, default_value_t = 0.05)]
        oov_rate: f64,
        #[arg(long, default_value_t = 4)]
        histogram_bins: usize,
        #[arg(long, default_value_t = 3)]
        palettes: usize,
        #[arg(long, default_value_t = 0.5)]
        histogram_noise: f64,
        /// csv or bin.
        #[arg(long)]
        descriptor_format: Option<String>,
    },
    /// Train a model on videos with ground-truth scenes.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Checkpoint path.
        #[arg(long, required_unless_present = "leave_one_out")]
        out: Option<PathBuf>,
        /// Loss trace CSV; defaults to the checkpoint path with `.loss.csv`.
        #[arg(long)]
        loss_trace: Option<PathBuf>,
        /// Train one model per video on all the other videos.
        #[arg(long, requires = "out_dir", conflicts_with_all = ["out", "loss_trace"])]
        leave_one_out: bool,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr_vis: Option<f64>,
        #[arg(long)]
        lr_rest: Option<f64>,
        #[arg(long)]
        momentum: Option<f64>,
        #[arg(long)]
        weight_decay: Option<f64>,
        #[arg(long)]
        d_vis: Option<usize>,
        #[arg(long)]
        d_words: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        /// Minimum transcript context window, seconds.
        #[arg(long)]
        w_min: Option<f64>,
    },
    /// Detect scenes with a trained model.
    Segment {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        cluster: ClusterArgs,
        #[arg(
            long,
            required_unless_present = "model_dir",
            conflicts_with = "model_dir"
        )]
        model: Option<PathBuf>,
        /// Directory of `<video>.json` checkpoints from leave-one-out training.
        #[arg(long)]
        model_dir: Option<PathBuf>,
        /// Results go to `<out>/<video>/`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect scenes from colour histograms and shot time.
    Baseline {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        cluster: ClusterArgs,
        #[arg(long)]
        time_weight: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score detected scenes against ground truth.
    Evaluate {
        #[arg(long, requires_all = ["detected", "shots"], conflicts_with = "runs")]
        gt: Option<PathBuf>,
        #[arg(long)]
        detected: Option<PathBuf>,
        #[arg(long)]
        shots: Option<PathBuf>,
        #[arg(long, default_value = "25")]
        fps: f64,
        /// Dataset mode: detected scenes under `<runs>/<video>/`.
        #[arg(long, required_unless_present = "gt")]
        runs: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        videos: Vec<String>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

type Overrides = Vec<(&'static str, Option<String>)>;

fn some<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn data_overrides(d: &DataArgs) -> Overrides {
    vec![
        ("data", d.data.as_ref().map(|p| p.display().to_string())),
        (
            "embeddings",
            d.embeddings.as_ref().map(|p| p.display().to_string()),
        ),
        ("fps", some(&d.fps)),
        ("descriptor_format", d.descriptor_format.clone()),
    ]
}

fn cluster_overrides(c: &ClusterArgs) -> Overrides {
    vec![
        ("k", c.k.clone()),
        ("k_max", some(&c.k_max)),
        ("sigma", some(&c.sigma)),
        ("kmeans_restarts", some(&c.kmeans_restarts)),
        ("matrix_format", c.matrix_format.clone()),
    ]
}

fn build_config(cli: &Cli, overrides: Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    for (key, value) in overrides {
        if let Some(value) = value {
            cfg.set(key, &value)?;
        }
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.finish()
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth {
            out,
            videos,
            scenes,
            min_shots,
            max_shots,
            min_frames,
            max_frames,
            fps,
            feature_dim,
            noise_ratio,
            nuisance_dim,
            nuisance_rank,
            nuisance_scale,
            vocab_size,
            topics,
            embedding_dim,
            words_per_second,
            oov_rate,
            histogram_bins,
            palettes,
            histogram_noise,
            descriptor_format,
        } => {
            let cfg = build_config(
                &cli,
                vec![
                    ("fps", some(fps)),
                    ("descriptor_format", descriptor_format.clone()),
                ],
            )?;
            let spec = SyntheticSpec {
                videos: *videos,
                scenes: *scenes,
                shots_per_scene: (*min_shots, *max_shots),
                shot_frames: (*min_frames, *max_frames),
                fps: cfg.fps,
                feature_dim: *feature_dim,
                noise_ratio: *noise_ratio,
                nuisance_dim: *nuisance_dim,
                nuisance_rank: *nuisance_rank,
                nuisance_scale: *nuisance_scale,
                vocab_size: *vocab_size,
                topics: *topics,
                embedding_dim: *embedding_dim,
                words_per_second: *words_per_second,
                oov_rate: *oov_rate,
                histogram_bins: *histogram_bins,
                palettes: *palettes,
                histogram_noise: *histogram_noise,
                descriptor_format: cfg.descriptor_format,
                seed: cfg.seed,
            };
            let ids = cmd_synth(&spec, out)?;
            println!("wrote {} videos to {}", ids.len(), out.display());
        }
        Command::Train {
            data,
            out,
            loss_trace,
            leave_one_out,
            out_dir,
            epochs,
            batch_size,
            lr_vis,
            lr_rest,
            momentum,
            weight_decay,
            d_vis,
            d_words,
            hidden,
            w_min,
        } => {
            let mut overrides = data_overrides(data);
            overrides.extend([
                ("epochs", some(epochs)),
                ("batch_size", some(batch_size)),
                ("lr_vis", some(lr_vis)),
                ("lr_rest", some(lr_rest)),
                ("momentum", some(momentum)),
                ("weight_decay", some(weight_decay)),
                ("d_vis", some(d_vis)),
                ("d_words", some(d_words)),
                ("hidden", some(hidden)),
                ("w_min", some(w_min)),
            ]);
            let cfg = build_config(&cli, overrides)?;
            let videos = resolve_videos(&cfg, &data.videos)?;
            if *leave_one_out {
                let dir = out_dir.as_ref().expect("clap enforces --out-dir");
                cmd_train_leave_one_out(&cfg, &videos, dir, cli.jobs)?;
                println!(
                    "wrote {} leave-one-out models to {}",
                    videos.len(),
                    dir.display()
                );
            } else {
                let out = out.as_ref().expect("clap enforces --out");
                let trained = cmd_train(&cfg, &videos, out, loss_trace.as_deref())?;
                println!(
                    "wrote {} ({} batches)",
                    out.display(),
                    trained.loss_trace.len()
                );
            }
        }
        Command::Segment {
            data,
            cluster,
            model,
            model_dir,
            out,
        } => {
            let mut overrides = data_overrides(data);
            overrides.extend(cluster_overrides(cluster));
            let cfg = build_config(&cli, overrides)?;
            let videos = resolve_videos(&cfg, &data.videos)?;
            let source = match (model, model_dir) {
                (Some(m), None) => ModelSource::File(m.clone()),
                (None, Some(d)) => ModelSource::PerVideo(d.clone()),
                _ => bail!("give exactly one of --model and --model-dir"),
            };
            for m in cmd_segment(&cfg, &videos, &source, out, cli.jobs)? {
                println!(
                    "{}: {} scenes over {} shots (k = {}, sigma = {})",
                    m.video, m.scenes, m.shots, m.k, m.sigma
                );
            }
        }
        Command::Baseline {
            data,
            cluster,
            time_weight,
            out,
        } => {
            let mut overrides = data_overrides(data);
            overrides.extend(cluster_overrides(cluster));
            overrides.push(("time_weight", some(time_weight)));
            let cfg = build_config(&cli, overrides)?;
            let videos = resolve_videos(&cfg, &data.videos)?;
            for m in cmd_baseline(&cfg, &videos, out, cli.jobs)? {
                println!(
                    "{}: {} scenes over {} shots (k = {}, sigma = {})",
                    m.video, m.scenes, m.shots, m.k, m.sigma
                );
            }
        }
        Command::Evaluate {
            gt,
            detected,
            shots,
            fps,
            runs,
            data,
            videos,
            out,
        } => {
            let json = if let Some(gt) = gt {
                let (Some(detected), Some(shots)) = (detected, shots) else {
                    bail!("--gt needs --detected and --shots");
                };
                json_bytes(&cmd_evaluate(gt, detected, shots, *fps)?)
            } else {
                let runs = runs.as_ref().expect("clap enforces --runs");
                let cfg = build_config(
                    &cli,
                    vec![
                        ("data", data.as_ref().map(|p| p.display().to_string())),
                        ("fps", Some(fps.to_string())),
                    ],
                )?;
                json_bytes(&cmd_evaluate_dataset(&cfg, runs, videos)?)
            };
            match out {
                Some(path) => {
                    let mut set = OutputSet::new();
                    set.add(path, json);
                    set.commit()?;
                }
                None => print!("{}", String::from_utf8(json).expect("JSON is UTF-8")),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
