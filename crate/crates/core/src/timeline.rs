//! Shots, scenes and transcripts: the index space every other module works in.
//!
//! Frame intervals are half-open `[start, end)` and frames are numbered from 0.
//! A scene is a half-open interval of shot indices.

use std::fs::File;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};

pub const SHOTS_HEADER: [&str; 3] = ["index", "frame_start", "frame_end"];
pub const SCENES_HEADER: [&str; 1] = ["boundary_shot_index"];
pub const TRANSCRIPT_HEADER: [&str; 2] = ["token", "time"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shot {
    pub index: usize,
    pub frame_start: u64,
    pub frame_end: u64,
}

impl Shot {
    pub fn frames(&self) -> u64 {
        self.frame_end - self.frame_start
    }

    /// Middle frame, rounded down.
    pub fn center_frame(&self) -> u64 {
        (self.frame_start + self.frame_end) / 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShotTimeline {
    video_id: String,
    fps: f64,
    shots: Vec<Shot>,
}

impl ShotTimeline {
    /// Builds a timeline from `(frame_start, frame_end)` extents, checking that
    /// shots are non-empty and contiguous.
    pub fn new(video_id: impl Into<String>, fps: f64, extents: &[(u64, u64)]) -> Result<Self> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::Timeline(format!("fps must be positive, got {fps}")));
        }
        if extents.is_empty() {
            return Err(Error::Timeline("timeline has no shots".into()));
        }
        let mut shots = Vec::with_capacity(extents.len());
        for (index, &(frame_start, frame_end)) in extents.iter().enumerate() {
            check_shot(&shots, index, frame_start, frame_end).map_err(Error::Timeline)?;
            shots.push(Shot {
                index,
                frame_start,
                frame_end,
            });
        }
        Ok(ShotTimeline {
            video_id: video_id.into(),
            fps,
            shots,
        })
    }

    /// Timeline of `n` shots that all last `frames` frames.
    pub fn uniform(video_id: impl Into<String>, fps: f64, n: usize, frames: u64) -> Result<Self> {
        let extents: Vec<_> = (0..n as u64)
            .map(|i| (i * frames, (i + 1) * frames))
            .collect();
        Self::new(video_id, fps, &extents)
    }

    pub fn video_id(&self) -> &str {
        &self.video_id
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn shots(&self) -> &[Shot] {
        &self.shots
    }

    pub fn len(&self) -> usize {
        self.shots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shots.is_empty()
    }

    /// One past the last frame of the video.
    pub fn end_frame(&self) -> u64 {
        self.shots.last().map_or(0, |s| s.frame_end)
    }

    pub fn duration_seconds(&self) -> f64 {
        self.end_frame() as f64 / self.fps
    }

    /// Frame extent `[start, end)` covered by a range of shots.
    pub fn frame_span(&self, shots: &Range<usize>) -> (u64, u64) {
        (
            self.shots[shots.start].frame_start,
            self.shots[shots.end - 1].frame_end,
        )
    }
}

fn check_shot(previous: &[Shot], index: usize, start: u64, end: u64) -> Result<(), String> {
    if start >= end {
        return Err(format!("empty shot at index {index}"));
    }
    if let Some(prev) = previous.last() {
        if start > prev.frame_end {
            return Err(format!("gap between shots at index {index}"));
        }
        if start < prev.frame_end {
            return Err(format!("overlap between shots at index {index}"));
        }
    }
    Ok(())
}

/// A partition of `0..n_shots` into contiguous, non-empty scenes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SceneSegmentation {
    n_shots: usize,
    // First shot of every scene; starts[0] == 0.
    starts: Vec<usize>,
}

impl SceneSegmentation {
    pub fn single(n_shots: usize) -> Result<Self> {
        Self::from_boundaries(n_shots, &[])
    }

    /// `boundaries` are the first shots of every scene except the first one.
    /// They may be given in any order but must be distinct and in `1..n_shots`.
    pub fn from_boundaries(n_shots: usize, boundaries: &[usize]) -> Result<Self> {
        if n_shots == 0 {
            return Err(Error::Segmentation("segmentation over zero shots".into()));
        }
        let mut sorted = boundaries.to_vec();
        sorted.sort_unstable();
        for w in sorted.windows(2) {
            if w[0] == w[1] {
                return Err(Error::Segmentation(format!(
                    "duplicate boundary at shot {}",
                    w[0]
                )));
            }
        }
        if let Some(&b) = sorted.iter().find(|&&b| b >= n_shots) {
            return Err(Error::Segmentation(format!(
                "boundary {b} out of range for {n_shots} shots"
            )));
        }
        if sorted.first() == Some(&0) {
            return Err(Error::Segmentation(
                "boundary 0 would open an empty scene".into(),
            ));
        }
        let mut starts = Vec::with_capacity(sorted.len() + 1);
        starts.push(0);
        starts.extend(sorted);
        Ok(SceneSegmentation { n_shots, starts })
    }

    /// Builds a segmentation from explicit intervals, which must tile `0..n`.
    pub fn from_intervals(intervals: &[Range<usize>]) -> Result<Self> {
        let mut expected = 0;
        for r in intervals {
            if r.start != expected {
                return Err(Error::Segmentation(format!(
                    "scene {r:?} does not start at shot {expected}"
                )));
            }
            if r.end <= r.start {
                return Err(Error::Segmentation(format!("empty scene {r:?}")));
            }
            expected = r.end;
        }
        if expected == 0 {
            return Err(Error::Segmentation("no scenes".into()));
        }
        Ok(SceneSegmentation {
            n_shots: expected,
            starts: intervals.iter().map(|r| r.start).collect(),
        })
    }

    pub fn n_shots(&self) -> usize {
        self.n_shots
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.starts[1..]
    }

    pub fn scene(&self, t: usize) -> Range<usize> {
        let end = self.starts.get(t + 1).copied().unwrap_or(self.n_shots);
        self.starts[t]..end
    }

    pub fn scenes(&self) -> impl ExactSizeIterator<Item = Range<usize>> + '_ {
        (0..self.len()).map(move |t| self.scene(t))
    }

    /// Ordinal of the scene containing `shot`.
    pub fn scene_of(&self, shot: usize) -> usize {
        self.starts.partition_point(|&s| s <= shot) - 1
    }
}

/// A new scene starts at every shot whose label differs from its predecessor,
/// so a cluster that reappears later becomes a separate scene.
pub fn labels_to_segmentation(labels: &[usize]) -> Result<SceneSegmentation> {
    if labels.is_empty() {
        return Err(Error::Segmentation("no labels".into()));
    }
    let mut starts = vec![0];
    starts.extend((1..labels.len()).filter(|&i| labels[i] != labels[i - 1]));
    Ok(SceneSegmentation {
        n_shots: labels.len(),
        starts,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptWord {
    pub token: String,
    pub time: f64,
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

/// Reads CSV records after checking the header. Returns (line, record) pairs.
fn read_table<R: Read>(
    reader: R,
    path: &Path,
    header: &[&str],
) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut records = rdr.records();
    let first = match records.next() {
        None => return Err(Error::parse(path, 1, "empty file, expected a header")),
        Some(r) => r.map_err(|e| csv_error(path, e))?,
    };
    let line = first.position().map_or(1, |p| p.line());
    if !first.iter().eq(header.iter().copied()) {
        return Err(Error::parse(
            path,
            line,
            format!("expected header `{}`", header.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(Error::parse(
                path,
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        rows.push((line, rec));
    }
    Ok(rows)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::parse(path, line, e.to_string())
}

fn field<T: std::str::FromStr>(
    path: &Path,
    line: u64,
    rec: &csv::StringRecord,
    i: usize,
    name: &str,
) -> Result<T> {
    rec[i]
        .parse()
        .map_err(|_| Error::parse(path, line, format!("malformed {name} `{}`", &rec[i])))
}

/// Parses a shots file (`index,frame_start,frame_end`). The video id is the
/// name of the containing directory, or the file stem for bare files.
pub fn parse_shots(path: &Path, fps: f64) -> Result<ShotTimeline> {
    let video_id = default_video_id(path);
    read_shots(open(path)?, path, video_id, fps)
}

fn default_video_id(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("video");
    if stem == "shots" {
        if let Some(dir) = path
            .parent()
            .and_then(|p| p.file_name())
            .and_then(|s| s.to_str())
        {
            return dir.to_string();
        }
    }
    stem.to_string()
}

pub fn read_shots<R: Read>(
    reader: R,
    path: &Path,
    video_id: String,
    fps: f64,
) -> Result<ShotTimeline> {
    if !(fps.is_finite() && fps > 0.0) {
        return Err(Error::Timeline(format!("fps must be positive, got {fps}")));
    }
    let rows = read_table(reader, path, &SHOTS_HEADER)?;
    if rows.is_empty() {
        return Err(Error::parse(path, 2, "no shots after the header"));
    }
    let mut shots: Vec<Shot> = Vec::with_capacity(rows.len());
    for (ordinal, (line, rec)) in rows.iter().enumerate() {
        let index: usize = field(path, *line, rec, 0, "index")?;
        let frame_start: u64 = field(path, *line, rec, 1, "frame_start")?;
        let frame_end: u64 = field(path, *line, rec, 2, "frame_end")?;
        if index != ordinal {
            return Err(Error::parse(
                path,
                *line,
                format!("expected shot index {ordinal}, found {index}"),
            ));
        }
        check_shot(&shots, index, frame_start, frame_end)
            .map_err(|m| Error::parse(path, *line, m))?;
        shots.push(Shot {
            index,
            frame_start,
            frame_end,
        });
    }
    Ok(ShotTimeline {
        video_id,
        fps,
        shots,
    })
}

pub fn write_shots<W: Write>(writer: W, timeline: &ShotTimeline) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let res: csv::Result<()> = (|| {
        w.write_record(SHOTS_HEADER)?;
        for s in timeline.shots() {
            w.write_record([
                s.index.to_string(),
                s.frame_start.to_string(),
                s.frame_end.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(|e| Error::io("<shots>", e.into()))
}

/// Parses a scenes file of boundary shot indices against `timeline`.
pub fn parse_scenes(path: &Path, timeline: &ShotTimeline) -> Result<SceneSegmentation> {
    read_scenes(open(path)?, path, timeline.len())
}

pub fn read_scenes<R: Read>(reader: R, path: &Path, n_shots: usize) -> Result<SceneSegmentation> {
    let rows = read_table(reader, path, &SCENES_HEADER)?;
    let mut boundaries = Vec::with_capacity(rows.len());
    for (line, rec) in &rows {
        let b: usize = field(path, *line, rec, 0, "boundary_shot_index")?;
        if b >= n_shots {
            return Err(Error::parse(
                path,
                *line,
                format!("boundary {b} out of range for {n_shots} shots"),
            ));
        }
        boundaries.push(b);
    }
    SceneSegmentation::from_boundaries(n_shots, &boundaries).map_err(|e| {
        let line = rows.first().map_or(1, |r| r.0);
        Error::parse(path, line, e.to_string())
    })
}

pub fn write_scenes<W: Write>(writer: W, seg: &SceneSegmentation) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let res: csv::Result<()> = (|| {
        w.write_record(SCENES_HEADER)?;
        for b in seg.boundaries() {
            w.write_record([b.to_string()])?;
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(|e| Error::io("<scenes>", e.into()))
}

/// Parses a `token,time` transcript. Tokens are lowercased and rows are
/// stably sorted by time.
pub fn parse_transcript(path: &Path) -> Result<Vec<TranscriptWord>> {
    read_transcript(open(path)?, path)
}

pub fn read_transcript<R: Read>(reader: R, path: &Path) -> Result<Vec<TranscriptWord>> {
    let rows = read_table(reader, path, &TRANSCRIPT_HEADER)?;
    let mut words = Vec::with_capacity(rows.len());
    for (line, rec) in &rows {
        let time: f64 = field(path, *line, rec, 1, "time")?;
        if !(time.is_finite() && time >= 0.0) {
            return Err(Error::parse(path, *line, format!("invalid time {time}")));
        }
        words.push(TranscriptWord {
            token: rec[0].to_lowercase(),
            time,
        });
    }
    words.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok(words)
}

/// Shortest round-trip decimal form, padded to at least three decimals.
pub fn format_seconds(t: f64) -> String {
    let s = format!("{t}");
    match s.find('.') {
        Some(dot) => {
            let decimals = s.len() - dot - 1;
            if decimals >= 3 {
                s
            } else {
                format!("{s}{}", "0".repeat(3 - decimals))
            }
        }
        None => format!("{s}.000"),
    }
}

pub fn write_transcript<W: Write>(writer: W, words: &[TranscriptWord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let res: csv::Result<()> = (|| {
        w.write_record(TRANSCRIPT_HEADER)?;
        for word in words {
            w.write_record([word.token.as_str(), &format_seconds(word.time)])?;
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(|e| Error::io("<transcript>", e.into()))
}
