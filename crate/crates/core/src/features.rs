//! Per-shot inputs to the siamese network.
//!
//! Visual descriptors are read from disk as produced by an external image
//! network. Textual vectors are bags of embedded words: transcript words in
//! a context window around each shot are mapped to their nearest codebook
//! centroid (cosine), and the counts are l1-normalized.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeline::{Shot, ShotTimeline, TranscriptWord};

/// Iteration budget for [`spherical_kmeans`].
pub const KMEANS_MAX_ITER: usize = 100;

/// Magic bytes opening a binary descriptor file.
pub const DESCRIPTOR_MAGIC: [u8; 4] = *b"SDSC";

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn l2_normalize(v: &mut [f64]) -> f64 {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Pretrained word vectors, l2-normalized on load.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    tokens: Vec<String>,
    vectors: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(entries: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let dim = entries.first().map_or(0, |e| e.1.len());
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding table is empty".into()));
        }
        let mut table = EmbeddingTable {
            dim,
            tokens: Vec::with_capacity(entries.len()),
            vectors: Vec::with_capacity(entries.len()),
            index: HashMap::with_capacity(entries.len()),
        };
        for (token, mut v) in entries {
            if v.len() != dim {
                return Err(Error::Dimension(format!(
                    "embedding for `{token}` has {} values, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "embedding for `{token}` is not finite"
                )));
            }
            if l2_normalize(&mut v) == 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "embedding for `{token}` is zero"
                )));
            }
            let token = token.to_lowercase();
            if table
                .index
                .insert(token.clone(), table.tokens.len())
                .is_some()
            {
                return Err(Error::InvalidArgument(format!("duplicate token `{token}`")));
            }
            table.tokens.push(token);
            table.vectors.push(v);
        }
        Ok(table)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index.get(token).map(|&i| self.vectors[i].as_slice())
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Reads a `token,v1,...,vE` CSV without header.
pub fn parse_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(BufReader::new(file));
    let mut entries = Vec::new();
    for rec in rdr.records() {
        let rec = rec
            .map_err(|e| Error::parse(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() < 2 {
            return Err(Error::parse(
                path,
                line,
                "expected a token and at least one value",
            ));
        }
        let values = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| Error::parse(path, line, "malformed embedding value"))?;
        if let Some(first) = entries.first().map(|e: &(String, Vec<f64>)| e.1.len()) {
            if values.len() != first {
                return Err(Error::parse(
                    path,
                    line,
                    format!("expected {first} values, found {}", values.len()),
                ));
            }
        }
        entries.push((rec[0].to_string(), values));
    }
    EmbeddingTable::new(entries).map_err(|e| Error::parse(path, 0, e.to_string()))
}

pub fn write_embeddings<W: Write>(writer: W, entries: &[(String, Vec<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let res: csv::Result<()> = (|| {
        for (token, v) in entries {
            let mut row = vec![token.clone()];
            row.extend(v.iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(|e| Error::io("<embeddings>", e.into()))
}

/// Unit-norm word cluster centroids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordCodebook {
    pub centroids: Vec<Vec<f64>>,
}

impl WordCodebook {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Centroid with the highest cosine similarity; lowest index on ties.
    pub fn nearest(&self, v: &[f64]) -> usize {
        let mut best = 0;
        let mut best_sim = f64::NEG_INFINITY;
        for (c, centroid) in self.centroids.iter().enumerate() {
            let s = dot(v, centroid);
            if s > best_sim {
                best_sim = s;
                best = c;
            }
        }
        best
    }
}

#[derive(Debug, Clone)]
pub struct SphericalKMeans {
    pub codebook: WordCodebook,
    pub assignments: Vec<usize>,
    /// Sum of cosine similarities to the assigned centroid, one entry per
    /// assignment step.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

impl SphericalKMeans {
    pub fn objective(&self) -> f64 {
        *self
            .objective_trace
            .last()
            .expect("at least one assignment step")
    }
}

fn distinct_count(points: &[Vec<f64>]) -> usize {
    points
        .iter()
        .map(|p| p.iter().map(|x| x.to_bits()).collect::<Vec<_>>())
        .collect::<HashSet<_>>()
        .len()
}

/// k-means under cosine similarity on unit vectors.
///
/// Seeds with k-means++ weighted by cosine distance, alternates assignment by
/// maximum cosine and normalized-mean updates, and stops when assignments
/// repeat or after [`KMEANS_MAX_ITER`] updates. An empty cluster is re-seeded
/// with the point least similar to its own centroid.
pub fn spherical_kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<SphericalKMeans> {
    if points.is_empty() {
        return Err(Error::InvalidArgument(
            "spherical k-means on empty input".into(),
        ));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Dimension(
            "word vectors have differing lengths".into(),
        ));
    }
    let distinct = distinct_count(points);
    if k > distinct {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the {distinct} distinct vectors"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(points, k, &mut rng);
    let mut assignments = vec![usize::MAX; points.len()];
    let mut objective_trace = Vec::new();
    let mut converged = false;

    for iter in 0..=KMEANS_MAX_ITER {
        let mut changed = false;
        let mut objective = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (best, sim) = best_centroid(p, &centroids);
            objective += sim;
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }
        objective_trace.push(objective);
        if !changed {
            converged = true;
            break;
        }
        if iter == KMEANS_MAX_ITER {
            break;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p).for_each(|(s, x)| *s += x);
        }
        for c in 0..k {
            // A zero sum leaves the centroid where it is: every direction
            // scores the same for that cluster.
            if counts[c] > 0 && l2_normalize(&mut sums[c]) > 0.0 {
                centroids[c] = std::mem::take(&mut sums[c]);
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..points.len())
                    .filter(|&i| counts[assignments[i]] > 1)
                    .min_by(|&a, &b| {
                        let sa = dot(&points[a], &centroids[assignments[a]]);
                        let sb = dot(&points[b], &centroids[assignments[b]]);
                        sa.total_cmp(&sb).then(a.cmp(&b))
                    });
                if let Some(far) = far {
                    centroids[c] = points[far].clone();
                    counts[assignments[far]] -= 1;
                    counts[c] = 1;
                }
            }
        }
    }

    Ok(SphericalKMeans {
        codebook: WordCodebook { centroids },
        assignments,
        objective_trace,
        converged,
    })
}

fn best_centroid(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let s = dot(p, centroid);
        if s > best_sim {
            best_sim = s;
            best = c;
        }
    }
    (best, best_sim)
}

fn seed_centroids(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let first = rng.random_range(0..points.len());
    let mut centroids = vec![points[first].clone()];
    let mut taken: HashSet<Vec<u64>> = HashSet::new();
    taken.insert(bits(&points[first]));
    let mut weight: Vec<f64> = points
        .iter()
        .map(|p| cosine_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        // Candidates are distinct from every chosen centroid, so k distinct
        // centroids always exist when k <= distinct count.
        let candidates: Vec<usize> = (0..points.len())
            .filter(|&i| !taken.contains(&bits(&points[i])))
            .collect();
        let total: f64 = candidates.iter().map(|&i| weight[i]).sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = *candidates.last().expect("k <= distinct count");
            for &i in &candidates {
                if target < weight[i] {
                    pick = i;
                    break;
                }
                target -= weight[i];
            }
            pick
        } else {
            candidates[rng.random_range(0..candidates.len())]
        };
        taken.insert(bits(&points[pick]));
        centroids.push(points[pick].clone());
        let newest = centroids.last().expect("just pushed");
        for (w, p) in weight.iter_mut().zip(points) {
            *w = w.min(cosine_distance(p, newest));
        }
    }
    centroids
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    (1.0 - dot(a, b)).max(0.0)
}

/// Builds the codebook from the distinct in-vocabulary tokens of a set of
/// transcripts, visited in table order.
pub fn codebook_from_transcripts<'a>(
    table: &EmbeddingTable,
    transcripts: impl IntoIterator<Item = &'a [TranscriptWord]>,
    k: usize,
    seed: u64,
) -> Result<SphericalKMeans> {
    let used: HashSet<&str> = transcripts
        .into_iter()
        .flat_map(|t| t.iter().map(|w| w.token.as_str()))
        .collect();
    let points: Vec<Vec<f64>> = table
        .tokens()
        .iter()
        .filter(|t| used.contains(t.as_str()))
        .map(|t| table.get(t).expect("token from table").to_vec())
        .collect();
    spherical_kmeans(&points, k, seed)
}

/// Closed time interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeWindow {
    pub start: f64,
    pub end: f64,
}

impl TimeWindow {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t <= self.end
    }
}

/// Window of length `max(shot duration, min_window)` centered on the shot's
/// center frame, clipped to the video without re-centering.
pub fn context_window(shot: &Shot, timeline: &ShotTimeline, min_window: f64) -> TimeWindow {
    let fps = timeline.fps();
    let center = shot.center_frame() as f64 / fps;
    let duration = (shot.frames() as f64 / fps).max(min_window);
    TimeWindow {
        start: (center - duration / 2.0).max(0.0),
        end: (center + duration / 2.0).min(timeline.duration_seconds()),
    }
}

/// Bag-of-words histogram of the in-vocabulary transcript words inside
/// `window`, l1-normalized. Returns the vector and the number of skipped
/// out-of-vocabulary words. `transcript` must be sorted by time.
pub fn bow_vector(
    window: TimeWindow,
    transcript: &[TranscriptWord],
    table: &EmbeddingTable,
    codebook: &WordCodebook,
) -> (Vec<f64>, usize) {
    let mut counts = vec![0.0; codebook.k()];
    let mut oov = 0;
    let lo = transcript.partition_point(|w| w.time < window.start);
    let mut total = 0.0;
    for word in transcript[lo..].iter().take_while(|w| w.time <= window.end) {
        match table.get(&word.token) {
            Some(v) => {
                counts[codebook.nearest(v)] += 1.0;
                total += 1.0;
            }
            None => oov += 1,
        }
    }
    if total > 0.0 {
        counts.iter_mut().for_each(|c| *c /= total);
    }
    (counts, oov)
}

/// Everything the network sees about one shot.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotFeatures {
    pub visual: Vec<f64>,
    pub words: Vec<f64>,
    pub center_time: f64,
    pub center_index: u64,
    /// Center frame divided by the video's frame count, in `[0, 1)`.
    pub position: f64,
}

/// Assembles per-shot features for a video. Returns the features and the
/// out-of-vocabulary word tally.
pub fn build_shot_features(
    timeline: &ShotTimeline,
    visual: &[Vec<f64>],
    transcript: &[TranscriptWord],
    table: &EmbeddingTable,
    codebook: &WordCodebook,
    min_window: f64,
) -> Result<(Vec<ShotFeatures>, usize)> {
    if min_window.is_nan() || min_window <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "minimum context window must be positive, got {min_window}"
        )));
    }
    if visual.len() != timeline.len() {
        return Err(Error::Dimension(format!(
            "{} visual descriptors for {} shots",
            visual.len(),
            timeline.len()
        )));
    }
    if codebook
        .centroids
        .first()
        .is_some_and(|c| c.len() != table.dim())
    {
        return Err(Error::Dimension(
            "codebook and embedding table dimensions differ".into(),
        ));
    }
    let total_frames = timeline.end_frame() as f64;
    let mut oov_total = 0;
    let features = timeline
        .shots()
        .iter()
        .zip(visual)
        .map(|(shot, v)| {
            let window = context_window(shot, timeline, min_window);
            let (words, oov) = bow_vector(window, transcript, table, codebook);
            oov_total += oov;
            ShotFeatures {
                visual: v.clone(),
                words,
                center_time: shot.center_frame() as f64 / timeline.fps(),
                center_index: shot.center_frame(),
                position: shot.center_frame() as f64 / total_frames,
            }
        })
        .collect();
    Ok((features, oov_total))
}

// ---------------------------------------------------------------------------
// Descriptor files
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptorFormat {
    Csv,
    Bin,
}

impl DescriptorFormat {
    pub fn extension(self) -> &'static str {
        match self {
            DescriptorFormat::Csv => "csv",
            DescriptorFormat::Bin => "bin",
        }
    }
}

fn check_rows(rows: &[Vec<f64>], timeline: &ShotTimeline, path: &Path) -> Result<()> {
    if rows.len() != timeline.len() {
        return Err(Error::Dimension(format!(
            "{}: {} descriptor rows for {} shots",
            path.display(),
            rows.len(),
            timeline.len()
        )));
    }
    Ok(())
}

/// Reads one descriptor row per shot, in shot order. All rows must share a
/// dimensionality and hold finite values.
pub fn load_visual_descriptors(
    path: &Path,
    timeline: &ShotTimeline,
    format: DescriptorFormat,
) -> Result<Vec<Vec<f64>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let rows = match format {
        DescriptorFormat::Csv => read_descriptor_csv(BufReader::new(file), path)?,
        DescriptorFormat::Bin => read_descriptor_bin(BufReader::new(file), path)?,
    };
    check_rows(&rows, timeline, path)?;
    Ok(rows)
}

pub fn read_descriptor_csv<R: Read>(reader: R, path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec
            .map_err(|e| Error::parse(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let row_index = rows.len();
        let mut row = Vec::with_capacity(rec.len());
        for s in rec.iter() {
            let v: f64 = s.parse().map_err(|_| {
                Error::parse(
                    path,
                    line,
                    format!("row {row_index}: malformed value `{s}`"),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::parse(
                    path,
                    line,
                    format!("row {row_index}: non-finite value {v}"),
                ));
            }
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::parse(
                    path,
                    line,
                    format!(
                        "row {row_index}: {} values, expected {}",
                        row.len(),
                        first.len()
                    ),
                ));
            }
        }
        rows.push(row);
    }
    if rows.first().is_some_and(|r| r.is_empty()) {
        return Err(Error::parse(path, 1, "descriptor rows are empty"));
    }
    Ok(rows)
}

pub fn write_descriptor_csv<W: Write>(writer: W, rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let res: csv::Result<()> = (|| {
        for row in rows {
            w.write_record(row.iter().map(|x| x.to_string()))?;
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(|e| Error::io("<descriptors>", e.into()))
}

/// Binary layout: 16-byte header (magic `SDSC`, dim as u32 LE, row count as
/// u64 LE) followed by `count * dim` little-endian f64 values, row-major.
pub fn read_descriptor_bin<R: Read>(mut reader: R, path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut header = [0u8; 16];
    reader
        .read_exact(&mut header)
        .map_err(|_| Error::parse(path, 0, "truncated descriptor header"))?;
    if header[0..4] != DESCRIPTOR_MAGIC {
        return Err(Error::parse(path, 0, "bad descriptor magic"));
    }
    let dim = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes")) as usize;
    let count = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes")) as usize;
    if dim == 0 {
        return Err(Error::parse(path, 0, "descriptor dimension is zero"));
    }
    let mut rows = Vec::with_capacity(count.min(1 << 20));
    let mut buf = vec![0u8; dim * 8];
    for r in 0..count {
        reader
            .read_exact(&mut buf)
            .map_err(|_| Error::parse(path, 0, format!("truncated at row {r}")))?;
        let row: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(path, 0, format!("row {r}: non-finite value")));
        }
        rows.push(row);
    }
    let mut rest = Vec::new();
    reader
        .read_to_end(&mut rest)
        .map_err(|e| Error::io(path, e))?;
    if !rest.is_empty() {
        return Err(Error::parse(
            path,
            0,
            "trailing bytes after descriptor rows",
        ));
    }
    Ok(rows)
}

pub fn write_descriptor_bin<W: Write>(writer: W, rows: &[Vec<f64>]) -> Result<()> {
    let dim = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Dimension("ragged descriptor rows".into()));
    }
    let mut w = BufWriter::new(writer);
    let res: std::io::Result<()> = (|| {
        w.write_all(&DESCRIPTOR_MAGIC)?;
        w.write_all(&(dim as u32).to_le_bytes())?;
        w.write_all(&(rows.len() as u64).to_le_bytes())?;
        for row in rows {
            for v in row {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    })();
    res.map_err(|e| Error::io("<descriptors>", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn word(token: &str, time: f64) -> TranscriptWord {
        TranscriptWord {
            token: token.into(),
            time,
        }
    }

    fn axis_table() -> (EmbeddingTable, WordCodebook) {
        let table = EmbeddingTable::new(vec![
            ("a".into(), vec![1.0, 0.0]),
            ("a2".into(), vec![2.0, 0.1]),
            ("b".into(), vec![0.0, 1.0]),
        ])
        .unwrap();
        let codebook = WordCodebook {
            centroids: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        };
        (table, codebook)
    }

    #[test]
    fn window_examples() {
        // 25 fps: a 30 s shot, then a 4 s shot centered at 100 s.
        let tl = ShotTimeline::new(
            "v",
            25.0,
            &[(0, 750), (750, 2450), (2450, 2550), (2550, 5000)],
        )
        .unwrap();
        let w = context_window(&tl.shots()[0], &tl, 20.0);
        assert_eq!((w.start, w.end), (0.0, 30.0));
        let w = context_window(&tl.shots()[2], &tl, 20.0);
        assert_eq!((w.start, w.end), (90.0, 110.0));
        // Shot centered at 3 s.
        let tl = ShotTimeline::new("v", 25.0, &[(50, 100), (100, 5000)]).unwrap();
        let w = context_window(&tl.shots()[0], &tl, 20.0);
        assert_eq!((w.start, w.end), (0.0, 13.0));
    }

    #[test]
    fn bow_examples() {
        let (table, codebook) = axis_table();
        let window = TimeWindow {
            start: 0.0,
            end: 10.0,
        };
        let (v, _) = bow_vector(window, &[], &table, &codebook);
        assert_eq!(v, vec![0.0, 0.0]);
        let (v, _) = bow_vector(window, &[word("b", 1.0)], &table, &codebook);
        assert_eq!(v, vec![0.0, 1.0]);
        let words = [
            word("a", 1.0),
            word("b", 2.0),
            word("a2", 3.0),
            word("b", 4.0),
        ];
        let (v, _) = bow_vector(window, &words, &table, &codebook);
        assert_eq!(v, vec![0.5, 0.5]);
    }

    #[test]
    fn bow_skips_oov_and_out_of_window() {
        let (table, codebook) = axis_table();
        let words = [word("a", 0.5), word("zzz", 1.0), word("b", 11.0)];
        let (v, oov) = bow_vector(
            TimeWindow {
                start: 0.0,
                end: 10.0,
            },
            &words,
            &table,
            &codebook,
        );
        assert_eq!(v, vec![1.0, 0.0]);
        assert_eq!(oov, 1);
    }

    #[test]
    fn table_normalizes_and_validates() {
        let (table, _) = axis_table();
        let v = table.get("a2").unwrap();
        assert!((dot(v, v) - 1.0).abs() < 1e-15);
        assert!(EmbeddingTable::new(vec![("x".into(), vec![0.0, 0.0])]).is_err());
        assert!(EmbeddingTable::new(vec![("x".into(), vec![f64::NAN])]).is_err());
        assert!(
            EmbeddingTable::new(vec![("x".into(), vec![1.0]), ("y".into(), vec![1.0, 2.0])])
                .is_err()
        );
    }

    #[test]
    fn kmeans_single_direction() {
        let pts = vec![vec![0.6, 0.8]; 5];
        let r = spherical_kmeans(&pts, 1, 9).unwrap();
        assert_eq!(r.codebook.centroids, vec![vec![0.6, 0.8]]);
        assert!(spherical_kmeans(&pts, 2, 9).is_err());
        assert!(spherical_kmeans(&[], 1, 9).is_err());
    }

    #[test]
    fn kmeans_each_point_own_centroid() {
        let pts: Vec<Vec<f64>> = (0..6)
            .map(|i| {
                let a = i as f64 * 0.9;
                vec![a.cos(), a.sin()]
            })
            .collect();
        let r = spherical_kmeans(&pts, 6, 1).unwrap();
        assert!((r.objective() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn descriptor_csv_errors() {
        let p = Path::new("v.csv");
        assert_eq!(
            read_descriptor_csv("1,2\n3,4\n".as_bytes(), p)
                .unwrap()
                .len(),
            2
        );
        let err = read_descriptor_csv("1,2\n3\n".as_bytes(), p).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
        let err = read_descriptor_csv("1,2\n3,NaN\n".as_bytes(), p).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
    }

    #[test]
    fn descriptor_bin_header() {
        let rows = vec![vec![1.0, -2.5], vec![0.25, 8.0]];
        let mut buf = Vec::new();
        write_descriptor_bin(&mut buf, &rows).unwrap();
        assert_eq!(buf.len(), 16 + 4 * 8);
        assert_eq!(&buf[0..4], b"SDSC");
        assert_eq!(
            read_descriptor_bin(buf.as_slice(), Path::new("x.bin")).unwrap(),
            rows
        );
        buf.push(0);
        assert!(read_descriptor_bin(buf.as_slice(), Path::new("x.bin")).is_err());
        let mut nan = Vec::new();
        write_descriptor_bin(&mut nan, &[vec![f64::NAN]]).unwrap();
        assert!(read_descriptor_bin(nan.as_slice(), Path::new("x.bin")).is_err());
    }
}
