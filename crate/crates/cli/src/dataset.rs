//! Loading per-video inputs from the dataset layout.

use std::fs::File;
use std::io::BufReader;

use anyhow::{bail, Context, Result};
use log::info;
use siamscene_core::features::{
    build_shot_features, load_visual_descriptors, parse_embeddings, read_descriptor_csv,
    EmbeddingTable, ShotFeatures, WordCodebook,
};
use siamscene_core::timeline::{
    parse_scenes, parse_shots, parse_transcript, SceneSegmentation, ShotTimeline, TranscriptWord,
};

use crate::config::{RunConfig, HISTOGRAMS_FILE, SCENES_FILE, SHOTS_FILE, TRANSCRIPT_FILE};

#[derive(Debug, Clone)]
pub struct Video {
    pub id: String,
    pub timeline: ShotTimeline,
    pub transcript: Vec<TranscriptWord>,
    pub visual: Vec<Vec<f64>>,
    pub scenes: Option<SceneSegmentation>,
}

impl Video {
    /// Reads shots, transcript, visual descriptors and, when `with_scenes`
    /// is set, the ground-truth scenes.
    pub fn load(cfg: &RunConfig, id: &str, with_scenes: bool) -> Result<Video> {
        let dir = cfg.video_dir(id);
        let shots = dir.join(SHOTS_FILE);
        let transcript = dir.join(TRANSCRIPT_FILE);
        let visual = cfg.visual_path(id);
        let scenes = dir.join(SCENES_FILE);
        let mut required = vec![shots.clone(), transcript.clone(), visual.clone()];
        if with_scenes {
            if !scenes.is_file() {
                bail!("video {id}: missing ground truth {}", scenes.display());
            }
            required.push(scenes.clone());
        }
        RunConfig::require_files(&required)?;
        let timeline = parse_shots(&shots, cfg.fps)?;
        let transcript = parse_transcript(&transcript)?;
        let visual = load_visual_descriptors(&visual, &timeline, cfg.descriptor_format)?;
        let scenes = if with_scenes {
            Some(parse_scenes(&scenes, &timeline)?)
        } else {
            None
        };
        Ok(Video {
            id: id.to_string(),
            timeline,
            transcript,
            visual,
            scenes,
        })
    }

    pub fn d_in(&self) -> usize {
        self.visual.first().map_or(0, |r| r.len())
    }

    pub fn features(
        &self,
        table: &EmbeddingTable,
        codebook: &WordCodebook,
        min_window: f64,
    ) -> Result<Vec<ShotFeatures>> {
        let (features, oov) = build_shot_features(
            &self.timeline,
            &self.visual,
            &self.transcript,
            table,
            codebook,
            min_window,
        )?;
        if oov > 0 {
            info!(
                "video {}: {oov} out-of-vocabulary transcript words skipped",
                self.id
            );
        }
        Ok(features)
    }
}

pub fn load_embeddings(cfg: &RunConfig) -> Result<EmbeddingTable> {
    let path = cfg.embeddings_path();
    RunConfig::require_files(std::slice::from_ref(&path))?;
    Ok(parse_embeddings(&path)?)
}

/// Per-shot colour histograms, l1-normalized.
pub fn load_histograms(cfg: &RunConfig, id: &str, n_shots: usize) -> Result<Vec<Vec<f64>>> {
    let path = cfg.video_dir(id).join(HISTOGRAMS_FILE);
    RunConfig::require_files(std::slice::from_ref(&path))?;
    let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let mut rows = read_descriptor_csv(BufReader::new(file), &path)?;
    if rows.len() != n_shots {
        bail!(
            "{}: {} histograms for {n_shots} shots",
            path.display(),
            rows.len()
        );
    }
    for (i, row) in rows.iter_mut().enumerate() {
        if row.iter().any(|&v| v < 0.0) {
            bail!("{}: negative bin in row {i}", path.display());
        }
        let total: f64 = row.iter().sum();
        if total <= 0.0 {
            bail!("{}: empty histogram in row {i}", path.display());
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    Ok(rows)
}
