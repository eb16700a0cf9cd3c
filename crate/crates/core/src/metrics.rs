//! Scene detection measures.
//!
//! Coverage and Overflow are computed per ground-truth scene in shot counts
//! and aggregated with shot-count weights; `f_co` is the harmonic mean of
//! coverage and `1 - overflow`. The intersection-over-union measure instead
//! weights shots by their frame length and is symmetric in its arguments.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeline::{SceneSegmentation, ShotTimeline};

/// Largest shot count [`enumerate_segmentations`] accepts.
pub const MAX_ENUMERATION_SHOTS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDiagnostics {
    pub scene: usize,
    pub coverage: f64,
    pub overflow: f64,
    pub best_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub coverage: f64,
    pub overflow: f64,
    pub f_co: f64,
    pub m_iou: f64,
    pub per_scene: Vec<SceneDiagnostics>,
}

fn overlap(a: &Range<usize>, b: &Range<usize>) -> usize {
    a.end.min(b.end).saturating_sub(a.start.max(b.start))
}

/// Fraction of `gt_scene` covered by its best-overlapping detected scene.
pub fn coverage_of_scene(gt_scene: &Range<usize>, detected: &SceneSegmentation) -> f64 {
    let best = detected
        .scenes()
        .map(|s| overlap(&s, gt_scene))
        .max()
        .unwrap_or(0);
    best as f64 / gt_scene.len() as f64
}

/// Overflow of ground-truth scene `t`: shots of every detected scene touching
/// it that fall outside it, over the length of its two neighbours.
///
/// Missing neighbours count as zero shots. The value is clamped to 1; when
/// both neighbours are missing it is 0 for a spill-free detection and 1
/// otherwise.
pub fn overflow_of_scene(t: usize, gt: &SceneSegmentation, detected: &SceneSegmentation) -> f64 {
    let target = gt.scene(t);
    let spill: usize = detected
        .scenes()
        .filter(|s| overlap(s, &target) > 0)
        .map(|s| s.len() - overlap(&s, &target))
        .sum();
    let prev = if t > 0 { gt.scene(t - 1).len() } else { 0 };
    let next = if t + 1 < gt.len() {
        gt.scene(t + 1).len()
    } else {
        0
    };
    let denom = prev + next;
    if denom == 0 {
        return if spill == 0 { 0.0 } else { 1.0 };
    }
    (spill as f64 / denom as f64).min(1.0)
}

/// Harmonic mean of coverage and `1 - overflow`.
pub fn f_score(coverage: f64, overflow: f64) -> f64 {
    let complement = 1.0 - overflow;
    let denom = coverage + complement;
    if denom <= 0.0 {
        0.0
    } else {
        2.0 * coverage * complement / denom
    }
}

fn check_same_shots(gt: &SceneSegmentation, detected: &SceneSegmentation) -> Result<()> {
    if gt.n_shots() != detected.n_shots() {
        return Err(Error::Segmentation(format!(
            "ground truth covers {} shots but detection covers {}",
            gt.n_shots(),
            detected.n_shots()
        )));
    }
    Ok(())
}

/// Returns `(coverage, overflow, f_co)` for a whole video.
pub fn aggregate_cov_ovf(
    gt: &SceneSegmentation,
    detected: &SceneSegmentation,
) -> Result<(f64, f64, f64)> {
    check_same_shots(gt, detected)?;
    // Divide once at the end so a perfect detection sums to exactly 1.
    let n = gt.n_shots() as f64;
    let mut coverage = 0.0;
    let mut overflow = 0.0;
    for (t, scene) in gt.scenes().enumerate() {
        let weight = scene.len() as f64;
        coverage += coverage_of_scene(&scene, detected) * weight;
        overflow += overflow_of_scene(t, gt, detected) * weight;
    }
    let (coverage, overflow) = (coverage / n, overflow / n);
    Ok((coverage, overflow, f_score(coverage, overflow)))
}

/// Intersection over union of two scenes, measured in frames.
fn frame_iou(timeline: &ShotTimeline, a: &Range<usize>, b: &Range<usize>) -> f64 {
    let (a0, a1) = timeline.frame_span(a);
    let (b0, b1) = timeline.frame_span(b);
    let inter = a1.min(b1).saturating_sub(a0.max(b0));
    let union = (a1 - a0) + (b1 - b0) - inter;
    inter as f64 / union as f64
}

fn best_ious(
    timeline: &ShotTimeline,
    from: &SceneSegmentation,
    against: &SceneSegmentation,
) -> Vec<f64> {
    from.scenes()
        .map(|s| {
            against
                .scenes()
                .map(|o| frame_iou(timeline, &s, &o))
                .fold(0.0, f64::max)
        })
        .collect()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn check_timeline(timeline: &ShotTimeline, seg: &SceneSegmentation) -> Result<()> {
    if seg.n_shots() != timeline.len() {
        return Err(Error::Segmentation(format!(
            "segmentation covers {} shots but timeline `{}` has {}",
            seg.n_shots(),
            timeline.video_id(),
            timeline.len()
        )));
    }
    Ok(())
}

/// Mean of the best per-scene IoU of ground truth against detection and of
/// detection against ground truth.
pub fn m_iou(
    gt: &SceneSegmentation,
    detected: &SceneSegmentation,
    timeline: &ShotTimeline,
) -> Result<f64> {
    check_timeline(timeline, gt)?;
    check_timeline(timeline, detected)?;
    let forward = mean(&best_ious(timeline, gt, detected));
    let backward = mean(&best_ious(timeline, detected, gt));
    Ok(0.5 * (forward + backward))
}

/// All four measures plus per-ground-truth-scene diagnostics.
pub fn evaluate(
    gt: &SceneSegmentation,
    detected: &SceneSegmentation,
    timeline: &ShotTimeline,
) -> Result<MetricReport> {
    check_timeline(timeline, gt)?;
    check_timeline(timeline, detected)?;
    let (coverage, overflow, f_co) = aggregate_cov_ovf(gt, detected)?;
    let gt_best = best_ious(timeline, gt, detected);
    let det_best = best_ious(timeline, detected, gt);
    let per_scene = gt
        .scenes()
        .enumerate()
        .map(|(t, scene)| SceneDiagnostics {
            scene: t,
            coverage: coverage_of_scene(&scene, detected),
            overflow: overflow_of_scene(t, gt, detected),
            best_iou: gt_best[t],
        })
        .collect();
    Ok(MetricReport {
        coverage,
        overflow,
        f_co,
        m_iou: 0.5 * (mean(&gt_best) + mean(&det_best)),
        per_scene,
    })
}

/// Unweighted mean of per-video values.
pub fn average(reports: &[MetricReport]) -> Option<(f64, f64, f64, f64)> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let sum = reports.iter().fold((0.0, 0.0, 0.0, 0.0), |acc, r| {
        (
            acc.0 + r.coverage,
            acc.1 + r.overflow,
            acc.2 + r.f_co,
            acc.3 + r.m_iou,
        )
    });
    Some((sum.0 / n, sum.1 / n, sum.2 / n, sum.3 / n))
}

/// Every contiguous partition of `n_shots` shots, one per subset of the
/// `n_shots - 1` possible boundaries.
pub fn enumerate_segmentations(n_shots: usize) -> Result<impl Iterator<Item = SceneSegmentation>> {
    if n_shots == 0 || n_shots > MAX_ENUMERATION_SHOTS {
        return Err(Error::InvalidArgument(format!(
            "can enumerate segmentations of 1..={MAX_ENUMERATION_SHOTS} shots, got {n_shots}"
        )));
    }
    let count = 1u32 << (n_shots - 1);
    Ok((0..count).map(move |mask| {
        let boundaries: Vec<usize> = (1..n_shots)
            .filter(|b| mask & (1 << (b - 1)) != 0)
            .collect();
        SceneSegmentation::from_boundaries(n_shots, &boundaries).expect("valid by construction")
    }))
}
