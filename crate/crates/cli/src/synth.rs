//! Synthetic datasets with planted scene structure.
//!
//! Each scene gets a Gaussian descriptor center, a transcript topic and a
//! colour palette drawn from a small shared pool. Optional nuisance
//! descriptor dimensions vary from shot to shot regardless of scene, the way
//! CNN activations respond to content that does not define a scene.

use std::path::Path;

use anyhow::{bail, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use siamscene_core::features::{
    write_descriptor_bin, write_descriptor_csv, write_embeddings, DescriptorFormat,
};
use siamscene_core::timeline::{
    write_scenes, write_shots, write_transcript, SceneSegmentation, ShotTimeline, TranscriptWord,
};

use crate::config::{
    EMBEDDINGS_FILE, HISTOGRAMS_FILE, SCENES_FILE, SHOTS_FILE, TRANSCRIPT_FILE, VISUAL_STEM,
};
use crate::output::OutputSet;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub videos: usize,
    pub scenes: usize,
    /// Inclusive range of shots per scene.
    pub shots_per_scene: (usize, usize),
    /// Inclusive range of shot lengths in frames.
    pub shot_frames: (u64, u64),
    pub fps: f64,
    /// Descriptor dimensions carrying the scene center.
    pub feature_dim: usize,
    /// Within-scene noise relative to the unit spread of scene centers.
    pub noise_ratio: f64,
    /// Extra descriptor dimensions that vary from shot to shot regardless
    /// of scene.
    pub nuisance_dim: usize,
    /// Latent factors behind the nuisance dimensions, mixed through one
    /// fixed unit-column matrix for the whole dataset.
    pub nuisance_rank: usize,
    /// Standard deviation of each latent nuisance factor.
    pub nuisance_scale: f64,
    pub vocab_size: usize,
    pub topics: usize,
    pub embedding_dim: usize,
    pub words_per_second: f64,
    /// Share of transcript words that are missing from the embedding table.
    pub oov_rate: f64,
    /// Histogram bins per colour channel.
    pub histogram_bins: usize,
    pub palettes: usize,
    pub histogram_noise: f64,
    pub descriptor_format: DescriptorFormat,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            videos: 5,
            scenes: 8,
            shots_per_scene: (4, 8),
            shot_frames: (50, 200),
            fps: 25.0,
            feature_dim: 16,
            noise_ratio: 0.05,
            nuisance_dim: 48,
            nuisance_rank: 4,
            nuisance_scale: 3.0,
            vocab_size: 120,
            topics: 12,
            embedding_dim: 16,
            words_per_second: 1.5,
            oov_rate: 0.05,
            histogram_bins: 4,
            palettes: 3,
            histogram_noise: 0.5,
            descriptor_format: DescriptorFormat::Csv,
            seed: 0,
        }
    }
}

/// Share of in-vocabulary words drawn from the scene topic.
const TOPIC_FIDELITY: f64 = 0.8;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("videos", self.videos),
            ("scenes", self.scenes),
            ("feature_dim", self.feature_dim),
            ("vocab_size", self.vocab_size),
            ("topics", self.topics),
            ("embedding_dim", self.embedding_dim),
            ("histogram_bins", self.histogram_bins),
            ("palettes", self.palettes),
        ];
        for (name, v) in counts {
            if v == 0 {
                bail!("{name} must be positive");
            }
        }
        let (lo, hi) = self.shots_per_scene;
        if lo == 0 || lo > hi {
            bail!("shots per scene range {lo}..={hi} is empty or starts at 0");
        }
        let (lo, hi) = self.shot_frames;
        if lo == 0 || lo > hi {
            bail!("shot length range {lo}..={hi} is empty or starts at 0");
        }
        if !(self.noise_ratio > 0.0 && self.noise_ratio.is_finite()) {
            bail!("noise ratio must be positive, got {}", self.noise_ratio);
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            bail!("fps must be positive");
        }
        if self.nuisance_dim > 0 && self.nuisance_rank == 0 {
            bail!("nuisance dimensions need at least one latent factor");
        }
        if self.topics > self.vocab_size {
            bail!(
                "{} topics need at least as many vocabulary words",
                self.topics
            );
        }
        for (name, v) in [
            ("nuisance_scale", self.nuisance_scale),
            ("words_per_second", self.words_per_second),
            ("histogram_noise", self.histogram_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                bail!("{name} must be non-negative, got {v}");
            }
        }
        if !(0.0..1.0).contains(&self.oov_rate) {
            bail!("oov rate must lie in [0, 1), got {}", self.oov_rate);
        }
        Ok(())
    }

    pub fn video_id(v: usize) -> String {
        format!("video_{v:02}")
    }
}

/// One generated video, kept in memory.
#[derive(Debug, Clone)]
pub struct SyntheticVideo {
    pub id: String,
    pub timeline: ShotTimeline,
    pub scenes: SceneSegmentation,
    pub transcript: Vec<TranscriptWord>,
    pub visual: Vec<Vec<f64>>,
    pub histograms: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub embeddings: Vec<(String, Vec<f64>)>,
    pub videos: Vec<SyntheticVideo>,
}

fn token(i: usize) -> String {
    format!("w{i:03}")
}

fn gaussian(rng: &mut impl Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

fn normalize_l1(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
}

/// Peaked colour distribution: a few dominant bins.
fn palette(rng: &mut impl Rng, bins: usize) -> Vec<f64> {
    let mut p: Vec<f64> = (0..bins).map(|_| rng.random::<f64>().powi(4)).collect();
    p.iter_mut().for_each(|x| *x += 1e-3);
    normalize_l1(&mut p);
    p
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut shared = ChaCha8Rng::seed_from_u64(spec.seed);
    let directions: Vec<Vec<f64>> = (0..spec.topics)
        .map(|_| gaussian(&mut shared, spec.embedding_dim, 1.0))
        .collect();
    let embeddings: Vec<(String, Vec<f64>)> = (0..spec.vocab_size)
        .map(|i| {
            let noise = gaussian(&mut shared, spec.embedding_dim, 0.3);
            let v = directions[i % spec.topics]
                .iter()
                .zip(noise)
                .map(|(d, e)| d + e)
                .collect();
            (token(i), v)
        })
        .collect();
    let bins = spec.histogram_bins.pow(3);
    let palettes: Vec<Vec<f64>> = (0..spec.palettes)
        .map(|_| palette(&mut shared, bins))
        .collect();
    let mut mixing: Vec<Vec<f64>> = (0..spec.nuisance_rank)
        .map(|_| gaussian(&mut shared, spec.nuisance_dim, 1.0))
        .collect();
    for col in &mut mixing {
        let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        col.iter_mut().for_each(|x| *x /= norm);
    }

    let videos = (0..spec.videos)
        .map(|v| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(v as u64 + 1);
            generate_video(
                spec,
                SyntheticSpec::video_id(v),
                &palettes,
                &mixing,
                &mut rng,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticDataset { embeddings, videos })
}

fn generate_video(
    spec: &SyntheticSpec,
    id: String,
    palettes: &[Vec<f64>],
    mixing: &[Vec<f64>],
    rng: &mut ChaCha8Rng,
) -> Result<SyntheticVideo> {
    let mut extents = Vec::new();
    let mut scene_of_shot = Vec::new();
    let mut starts = Vec::new();
    let mut frame = 0;
    for s in 0..spec.scenes {
        starts.push(extents.len());
        for _ in 0..rng.random_range(spec.shots_per_scene.0..=spec.shots_per_scene.1) {
            let len = rng.random_range(spec.shot_frames.0..=spec.shot_frames.1);
            extents.push((frame, frame + len));
            scene_of_shot.push(s);
            frame += len;
        }
    }
    let timeline = ShotTimeline::new(id.clone(), spec.fps, &extents)?;
    let scenes = SceneSegmentation::from_boundaries(extents.len(), &starts[1..])?;

    let mut topics = Vec::with_capacity(spec.scenes);
    for s in 0..spec.scenes {
        let mut t = rng.random_range(0..spec.topics);
        while spec.topics > 1 && s > 0 && t == topics[s - 1] {
            t = rng.random_range(0..spec.topics);
        }
        topics.push(t);
    }
    let scene_palette: Vec<usize> = (0..spec.scenes)
        .map(|_| rng.random_range(0..palettes.len()))
        .collect();
    let centers: Vec<Vec<f64>> = (0..spec.scenes)
        .map(|_| gaussian(rng, spec.feature_dim, 1.0))
        .collect();

    let visual = scene_of_shot
        .iter()
        .map(|&s| {
            let mut row: Vec<f64> = centers[s]
                .iter()
                .map(|c| {
                    let z: f64 = StandardNormal.sample(&mut *rng);
                    c + spec.noise_ratio * z
                })
                .collect();
            let mut nuisance = vec![0.0; spec.nuisance_dim];
            for col in mixing {
                let z: f64 = StandardNormal.sample(&mut *rng);
                nuisance
                    .iter_mut()
                    .zip(col)
                    .for_each(|(n, m)| *n += spec.nuisance_scale * z * m);
            }
            row.extend(nuisance);
            row
        })
        .collect();

    let histograms = scene_of_shot
        .iter()
        .map(|&s| {
            let base = &palettes[scene_palette[s]];
            let mut h: Vec<f64> = base
                .iter()
                .map(|p| p + spec.histogram_noise * rng.random::<f64>() / base.len() as f64)
                .collect();
            normalize_l1(&mut h);
            h
        })
        .collect();

    let mut transcript = Vec::new();
    let duration = timeline.duration_seconds();
    if spec.words_per_second > 0.0 {
        let gap = Exp::new(spec.words_per_second).expect("positive rate");
        let mut t: f64 = gap.sample(rng);
        let mut oov_index = 0;
        while t < duration {
            let time = (t * 1000.0).round() / 1000.0;
            let shot = timeline
                .shots()
                .partition_point(|s| s.frame_end as f64 / spec.fps <= time)
                .min(timeline.len() - 1);
            let word = if rng.random::<f64>() < spec.oov_rate {
                oov_index += 1;
                format!("oov{oov_index:03}")
            } else if rng.random::<f64>() < TOPIC_FIDELITY {
                let topic = topics[scene_of_shot[shot]];
                let per_topic = (spec.vocab_size - topic).div_ceil(spec.topics);
                token(topic + spec.topics * rng.random_range(0..per_topic))
            } else {
                token(rng.random_range(0..spec.vocab_size))
            };
            transcript.push(TranscriptWord { token: word, time });
            t += gap.sample(rng);
        }
    }

    Ok(SyntheticVideo {
        id,
        timeline,
        scenes,
        transcript,
        visual,
        histograms,
    })
}

/// Stages the dataset files under `out`.
pub fn dataset_outputs(
    spec: &SyntheticSpec,
    data: &SyntheticDataset,
    out: &Path,
) -> Result<OutputSet> {
    let mut set = OutputSet::new();
    let mut buf = Vec::new();
    write_embeddings(&mut buf, &data.embeddings)?;
    set.add(out.join(EMBEDDINGS_FILE), buf);
    for video in &data.videos {
        let dir = out.join(&video.id);
        let mut buf = Vec::new();
        write_shots(&mut buf, &video.timeline)?;
        set.add(dir.join(SHOTS_FILE), buf);
        let mut buf = Vec::new();
        write_scenes(&mut buf, &video.scenes)?;
        set.add(dir.join(SCENES_FILE), buf);
        let mut buf = Vec::new();
        write_transcript(&mut buf, &video.transcript)?;
        set.add(dir.join(TRANSCRIPT_FILE), buf);
        let mut buf = Vec::new();
        match spec.descriptor_format {
            DescriptorFormat::Csv => write_descriptor_csv(&mut buf, &video.visual)?,
            DescriptorFormat::Bin => write_descriptor_bin(&mut buf, &video.visual)?,
        }
        set.add(
            dir.join(format!(
                "{VISUAL_STEM}.{}",
                spec.descriptor_format.extension()
            )),
            buf,
        );
        let mut buf = Vec::new();
        write_descriptor_csv(&mut buf, &video.histograms)?;
        set.add(dir.join(HISTOGRAMS_FILE), buf);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            videos: 1,
            scenes: 3,
            shots_per_scene: (4, 4),
            ..Default::default()
        }
    }

    #[test]
    fn counts_follow_the_spec() {
        let data = generate(&small()).unwrap();
        let v = &data.videos[0];
        assert_eq!(v.timeline.len(), 12);
        assert_eq!(v.scenes.boundaries(), &[4, 8]);
        assert_eq!(v.visual.len(), 12);
        assert!(v.visual.iter().all(|r| r.len() == 16 + 48));
        assert!(v
            .histograms
            .iter()
            .all(|h| h.len() == 64 && (h.iter().sum::<f64>() - 1.0).abs() < 1e-12));
        assert!(v.transcript.windows(2).all(|w| w[0].time <= w[1].time));
        assert_eq!(data.embeddings.len(), 120);
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.videos[0].visual, b.videos[0].visual);
        assert_eq!(a.videos[0].transcript, b.videos[0].transcript);
        let c = generate(&SyntheticSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a.videos[0].visual, c.videos[0].visual);
    }

    #[test]
    fn invalid_specs_rejected() {
        for spec in [
            SyntheticSpec {
                noise_ratio: 0.0,
                ..small()
            },
            SyntheticSpec {
                scenes: 0,
                ..small()
            },
            SyntheticSpec {
                shots_per_scene: (5, 4),
                ..small()
            },
            SyntheticSpec {
                topics: 500,
                ..small()
            },
        ] {
            assert!(generate(&spec).is_err());
        }
    }

    #[test]
    fn topic_words_stay_in_their_topic() {
        let spec = SyntheticSpec {
            oov_rate: 0.0,
            ..small()
        };
        let data = generate(&spec).unwrap();
        let v = &data.videos[0];
        let mut on_topic = 0;
        for w in &v.transcript {
            let idx: usize = w.token[1..].parse().unwrap();
            let shot = v
                .timeline
                .shots()
                .partition_point(|s| s.frame_end as f64 / 25.0 <= w.time);
            let scene = v.scenes.scene_of(shot.min(11));
            let others = v.transcript.iter().filter(|x| {
                let s = v
                    .timeline
                    .shots()
                    .partition_point(|s| s.frame_end as f64 / 25.0 <= x.time);
                v.scenes.scene_of(s.min(11)) == scene
            });
            let dominant = others
                .map(|x| x.token[1..].parse::<usize>().unwrap() % spec.topics)
                .fold(vec![0; spec.topics], |mut c, t| {
                    c[t] += 1;
                    c
                });
            let best = (0..spec.topics).max_by_key(|&t| dominant[t]).unwrap();
            if idx % spec.topics == best {
                on_topic += 1;
            }
        }
        assert!(on_topic as f64 > 0.6 * v.transcript.len() as f64);
    }
}
