//! The subcommands. Each stages all of its outputs before writing any.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use rayon::prelude::*;
use serde::Serialize;
use siamscene_core::cluster::{
    euclidean_distances, segment, segment_distances, ClusterCount, SegmentOutput,
};
use siamscene_core::features::codebook_from_transcripts;
use siamscene_core::metrics::{average, evaluate, MetricReport};
use siamscene_core::siamese::{train, Checkpoint, Hyper, SiameseModel, TrainingVideo};
use siamscene_core::timeline::{parse_scenes, parse_shots, write_scenes};

use crate::config::{RunConfig, SCENES_FILE};
use crate::dataset::{load_embeddings, load_histograms, Video};
use crate::output::{json_bytes, matrix_bytes, OutputSet};
use crate::synth::{dataset_outputs, generate, SyntheticSpec};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SIMILARITY_STEM: &str = "similarity";

/// Runs `f` over `items` on `jobs` threads, keeping input order. The first
/// error in input order wins.
pub fn map_ordered<T, R, F>(jobs: usize, items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("starting worker pool")?;
    let results: Vec<Result<R>> = pool.install(|| items.par_iter().map(&f).collect());
    results.into_iter().collect()
}

pub fn resolve_videos(cfg: &RunConfig, videos: &[String]) -> Result<Vec<String>> {
    let ids = if videos.is_empty() {
        cfg.discover_videos()?
    } else {
        videos.to_vec()
    };
    if ids.is_empty() {
        bail!("no videos found under {}", cfg.data.display());
    }
    Ok(ids)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Trained {
    pub checkpoint: Checkpoint,
    pub loss_trace: Vec<f64>,
}

/// Codebook from the training transcripts, random initialization, SGD.
pub fn train_model(cfg: &RunConfig, videos: &[String]) -> Result<Trained> {
    if videos.is_empty() {
        bail!("no training videos");
    }
    let table = load_embeddings(cfg)?;
    let loaded = videos
        .iter()
        .map(|id| Video::load(cfg, id, true))
        .collect::<Result<Vec<_>>>()?;
    let d_in = loaded[0].d_in();
    if let Some(v) = loaded.iter().find(|v| v.d_in() != d_in) {
        bail!(
            "video {} has {}-dimensional descriptors, expected {d_in}",
            v.id,
            v.d_in()
        );
    }
    let codebook = codebook_from_transcripts(
        &table,
        loaded.iter().map(|v| v.transcript.as_slice()),
        cfg.d_words,
        cfg.seed,
    )
    .context("building the word codebook")?
    .codebook;
    let corpus = loaded
        .iter()
        .map(|v| {
            Ok(TrainingVideo {
                features: v.features(&table, &codebook, cfg.w_min)?,
                scenes: v.scenes.clone().expect("loaded with scenes"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let hyper = Hyper {
        d_in,
        d_vis: cfg.d_vis,
        d_words: cfg.d_words,
        hidden: cfg.hidden,
    };
    let outcome = train(SiameseModel::random(hyper, cfg.seed), &corpus, &cfg.train)?;
    if let (Some(first), Some(last)) = (outcome.loss_trace.first(), outcome.loss_trace.last()) {
        info!(
            "trained on {} videos: loss {first:.4} -> {last:.4}",
            videos.len()
        );
    }
    Ok(Trained {
        checkpoint: Checkpoint {
            model: outcome.model,
            codebook,
            min_window: cfg.w_min,
        },
        loss_trace: outcome.loss_trace,
    })
}

pub fn loss_trace_csv(trace: &[f64]) -> String {
    let mut out = String::from("batch,loss\n");
    for (i, l) in trace.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    out
}

/// `model.json` -> `model.loss.csv`.
pub fn default_loss_path(model: &Path) -> PathBuf {
    model.with_extension("loss.csv")
}

fn stage_trained(set: &mut OutputSet, trained: &Trained, model: &Path, loss: &Path) {
    set.add(model, trained.checkpoint.to_json());
    set.add(loss, loss_trace_csv(&trained.loss_trace));
}

pub fn cmd_train(
    cfg: &RunConfig,
    videos: &[String],
    out: &Path,
    loss_trace: Option<&Path>,
) -> Result<Trained> {
    let trained = train_model(cfg, videos)?;
    let mut set = OutputSet::new();
    let loss = loss_trace.map_or_else(|| default_loss_path(out), Path::to_path_buf);
    stage_trained(&mut set, &trained, out, &loss);
    set.commit()?;
    Ok(trained)
}

/// One model per video, each trained on all the others and written to
/// `out_dir/<video>.json`.
pub fn cmd_train_leave_one_out(
    cfg: &RunConfig,
    videos: &[String],
    out_dir: &Path,
    jobs: usize,
) -> Result<()> {
    if videos.len() < 2 {
        bail!(
            "leave-one-out needs at least 2 videos, got {}",
            videos.len()
        );
    }
    let folds = map_ordered(jobs, videos, |held| {
        let rest: Vec<String> = videos.iter().filter(|v| *v != held).cloned().collect();
        info!("fold {held}: training on {}", rest.join(","));
        train_model(cfg, &rest).with_context(|| format!("fold holding out {held}"))
    })?;
    let mut set = OutputSet::new();
    for (held, trained) in videos.iter().zip(&folds) {
        let model = out_dir.join(format!("{held}.json"));
        stage_trained(&mut set, trained, &model, &default_loss_path(&model));
    }
    set.commit()
}

// ---------------------------------------------------------------------------
// segment / baseline
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub video: String,
    pub method: String,
    pub shots: usize,
    pub scenes: usize,
    pub boundaries: Vec<usize>,
    pub sigma: f64,
    /// `kde`, `override` or `single-distance`.
    pub sigma_source: String,
    pub k: usize,
    /// `eigengap` or `fixed`.
    pub k_selection: String,
    pub k_max: usize,
    pub kmeans_restarts: usize,
    pub seed: u64,
    pub laplacian: String,
    pub eigenvalues: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_weight: Option<f64>,
}

fn manifest(cfg: &RunConfig, video: &str, method: &str, out: &SegmentOutput) -> Manifest {
    let n = out.segmentation.n_shots();
    let sigma_source = if out.sigma_from_kde {
        "kde"
    } else if cfg.sigma.is_some() {
        "override"
    } else {
        "single-distance"
    };
    Manifest {
        video: video.to_string(),
        method: method.to_string(),
        shots: n,
        scenes: out.segmentation.len(),
        boundaries: out.segmentation.boundaries().to_vec(),
        sigma: out.sigma,
        sigma_source: sigma_source.into(),
        k: out.spectral.k,
        k_selection: match cfg.spectral.k {
            ClusterCount::Auto => "eigengap".into(),
            ClusterCount::Fixed(_) => "fixed".into(),
        },
        k_max: cfg.spectral.k_max_for(n),
        kmeans_restarts: cfg.spectral.kmeans_restarts,
        seed: cfg.spectral.seed,
        laplacian: "symmetric normalized".into(),
        eigenvalues: out.spectral.eigenvalues.clone(),
        time_weight: None,
    }
}

fn stage_segmentation(
    cfg: &RunConfig,
    dir: &Path,
    manifest: &Manifest,
    out: &SegmentOutput,
) -> Result<OutputSet> {
    let mut set = OutputSet::new();
    let mut scenes = Vec::new();
    write_scenes(&mut scenes, &out.segmentation)?;
    set.add(dir.join(SCENES_FILE), scenes);
    set.add(
        dir.join(format!(
            "{SIMILARITY_STEM}.{}",
            cfg.matrix_format.extension()
        )),
        matrix_bytes(&out.similarity, cfg.matrix_format),
    );
    set.add(dir.join(MANIFEST_FILE), json_bytes(manifest));
    Ok(set)
}

/// Where each video's checkpoint comes from.
#[derive(Debug, Clone)]
pub enum ModelSource {
    File(PathBuf),
    /// `<dir>/<video>.json`, as written by leave-one-out training.
    PerVideo(PathBuf),
}

impl ModelSource {
    pub fn path_for(&self, video: &str) -> PathBuf {
        match self {
            ModelSource::File(p) => p.clone(),
            ModelSource::PerVideo(dir) => dir.join(format!("{video}.json")),
        }
    }
}

pub fn segment_video(
    cfg: &RunConfig,
    video: &str,
    checkpoint: &Checkpoint,
) -> Result<(Manifest, SegmentOutput)> {
    let table = load_embeddings(cfg)?;
    let v = Video::load(cfg, video, false)?;
    let hyper = checkpoint.model.hyper();
    if v.d_in() != hyper.d_in {
        bail!(
            "video {video}: descriptors have {} dimensions but the model expects {}",
            v.d_in(),
            hyper.d_in
        );
    }
    if checkpoint
        .codebook
        .centroids
        .first()
        .is_some_and(|c| c.len() != table.dim())
    {
        bail!(
            "model codebook has dimension {} but the embedding table has {}",
            checkpoint.codebook.centroids[0].len(),
            table.dim()
        );
    }
    let features = v.features(&table, &checkpoint.codebook, checkpoint.min_window)?;
    let out = segment(&features, &checkpoint.model, &cfg.spectral, cfg.sigma)
        .with_context(|| format!("segmenting {video}"))?;
    Ok((manifest(cfg, video, "siamese", &out), out))
}

pub fn cmd_segment(
    cfg: &RunConfig,
    videos: &[String],
    model: &ModelSource,
    out_dir: &Path,
    jobs: usize,
) -> Result<Vec<Manifest>> {
    let paths: Vec<PathBuf> = videos.iter().map(|v| model.path_for(v)).collect();
    RunConfig::require_files(&paths)?;
    let results = map_ordered(jobs, videos, |video| {
        let checkpoint = Checkpoint::load(&model.path_for(video))?;
        let (m, out) = segment_video(cfg, video, &checkpoint)?;
        let set = stage_segmentation(cfg, &out_dir.join(video), &m, &out)?;
        Ok((m, set))
    })?;
    commit_all(results)
}

fn commit_all(results: Vec<(Manifest, OutputSet)>) -> Result<Vec<Manifest>> {
    let mut all = OutputSet::new();
    let mut manifests = Vec::new();
    for (m, set) in results {
        all.extend(set);
        manifests.push(m);
    }
    all.commit()?;
    Ok(manifests)
}

/// Histogram plus weighted normalized center time per shot, Euclidean
/// distances, then the same kernel and spectral steps as the network.
pub fn baseline_video(cfg: &RunConfig, video: &str) -> Result<(Manifest, SegmentOutput)> {
    let shots = cfg.video_dir(video).join(crate::config::SHOTS_FILE);
    RunConfig::require_files(std::slice::from_ref(&shots))?;
    let timeline = parse_shots(&shots, cfg.fps)?;
    let hists = load_histograms(cfg, video, timeline.len())?;
    let total = timeline.end_frame() as f64;
    let rows: Vec<Vec<f64>> = hists
        .into_iter()
        .zip(timeline.shots())
        .map(|(mut h, s)| {
            h.push(cfg.time_weight * s.center_frame() as f64 / total);
            h
        })
        .collect();
    if rows.len() < 2 {
        bail!("video {video}: segmentation needs at least 2 shots");
    }
    let out = segment_distances(euclidean_distances(&rows), &cfg.spectral, cfg.sigma)?;
    let mut m = manifest(cfg, video, "histogram-baseline", &out);
    m.time_weight = Some(cfg.time_weight);
    Ok((m, out))
}

pub fn cmd_baseline(
    cfg: &RunConfig,
    videos: &[String],
    out_dir: &Path,
    jobs: usize,
) -> Result<Vec<Manifest>> {
    let results = map_ordered(jobs, videos, |video| {
        let (m, out) = baseline_video(cfg, video)?;
        let set = stage_segmentation(cfg, &out_dir.join(video), &m, &out)?;
        Ok((m, set))
    })?;
    commit_all(results)
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

pub fn cmd_evaluate(gt: &Path, detected: &Path, shots: &Path, fps: f64) -> Result<MetricReport> {
    RunConfig::require_files(&[
        gt.to_path_buf(),
        detected.to_path_buf(),
        shots.to_path_buf(),
    ])?;
    let timeline = parse_shots(shots, fps)?;
    let gt = parse_scenes(gt, &timeline)?;
    let det = parse_scenes(detected, &timeline)?;
    Ok(evaluate(&gt, &det, &timeline)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct VideoReport {
    pub video: String,
    #[serde(flatten)]
    pub report: MetricReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AverageRow {
    pub coverage: f64,
    pub overflow: f64,
    pub f_co: f64,
    pub m_iou: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetReport {
    pub videos: Vec<VideoReport>,
    /// Unweighted mean over videos.
    pub average: AverageRow,
}

pub fn average_row(reports: &[MetricReport]) -> Option<AverageRow> {
    average(reports).map(|(coverage, overflow, f_co, m_iou)| AverageRow {
        coverage,
        overflow,
        f_co,
        m_iou,
    })
}

/// Ground truth from the dataset against `runs/<video>/scenes.csv`.
pub fn cmd_evaluate_dataset(
    cfg: &RunConfig,
    runs: &Path,
    videos: &[String],
) -> Result<DatasetReport> {
    let ids = if videos.is_empty() {
        let mut ids: Vec<String> = fs::read_dir(runs)
            .with_context(|| format!("listing {}", runs.display()))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join(SCENES_FILE).is_file())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        ids.sort();
        ids
    } else {
        videos.to_vec()
    };
    if ids.is_empty() {
        bail!("no detected scenes under {}", runs.display());
    }
    let reports = ids
        .iter()
        .map(|id| {
            let dir = cfg.video_dir(id);
            let report = cmd_evaluate(
                &dir.join(SCENES_FILE),
                &runs.join(id).join(SCENES_FILE),
                &dir.join(crate::config::SHOTS_FILE),
                cfg.fps,
            )
            .with_context(|| format!("evaluating {id}"))?;
            Ok(VideoReport {
                video: id.clone(),
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let plain: Vec<MetricReport> = reports.iter().map(|r| r.report.clone()).collect();
    Ok(DatasetReport {
        videos: reports,
        average: average_row(&plain).expect("at least one video"),
    })
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

pub fn cmd_synth(spec: &SyntheticSpec, out: &Path) -> Result<Vec<String>> {
    let data = generate(spec)?;
    dataset_outputs(spec, &data, out)?.commit()?;
    Ok(data.videos.into_iter().map(|v| v.id).collect())
}
