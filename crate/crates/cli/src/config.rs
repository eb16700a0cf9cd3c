//! Run configuration: defaults, a flat `key = value` file, then command-line
//! overrides, applied in that order.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use siamscene_core::cluster::{ClusterCount, SpectralConfig};
use siamscene_core::features::DescriptorFormat;
use siamscene_core::siamese::TrainConfig;

pub const SHOTS_FILE: &str = "shots.csv";
pub const SCENES_FILE: &str = "scenes.csv";
pub const TRANSCRIPT_FILE: &str = "transcript.csv";
pub const HISTOGRAMS_FILE: &str = "histograms.csv";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";
pub const VISUAL_STEM: &str = "visual";

/// Matrix artifact written next to the detected scenes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Pgm,
}

impl MatrixFormat {
    pub fn extension(self) -> &'static str {
        match self {
            MatrixFormat::Csv => "csv",
            MatrixFormat::Pgm => "pgm",
        }
    }
}

impl FromStr for MatrixFormat {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(MatrixFormat::Csv),
            "pgm" => Ok(MatrixFormat::Pgm),
            _ => bail!("unknown matrix format `{s}` (expected csv or pgm)"),
        }
    }
}

/// Every setting a command may read. Per-video input files live under
/// `data/<video id>/`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: PathBuf,
    /// Word embedding table; `data/embeddings.csv` when unset.
    pub embeddings: Option<PathBuf>,
    pub fps: f64,
    /// Minimum transcript context window in seconds.
    pub w_min: f64,
    pub seed: u64,
    pub d_vis: usize,
    pub d_words: usize,
    pub hidden: usize,
    pub train: TrainConfig,
    pub spectral: SpectralConfig,
    /// Kernel bandwidth override.
    pub sigma: Option<f64>,
    pub descriptor_format: DescriptorFormat,
    pub matrix_format: MatrixFormat,
    /// Weight of the time coordinate in the histogram baseline.
    pub time_weight: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: PathBuf::from("."),
            embeddings: None,
            fps: 25.0,
            w_min: 20.0,
            seed: 0,
            d_vis: 1183,
            d_words: 200,
            hidden: 200,
            train: TrainConfig::default(),
            spectral: SpectralConfig::default(),
            sigma: None,
            descriptor_format: DescriptorFormat::Csv,
            matrix_format: MatrixFormat::Pgm,
            time_weight: 1.0,
        }
    }
}

/// Keys accepted in config files, with a one-line description each.
pub const KEYS: &[(&str, &str)] = &[
    ("data", "dataset root holding one directory per video"),
    (
        "embeddings",
        "word embedding table (default <data>/embeddings.csv)",
    ),
    ("fps", "frame rate used to convert frames to seconds"),
    ("w_min", "minimum transcript context window, seconds"),
    (
        "seed",
        "seed for initialization, batching, codebook and k-means",
    ),
    ("d_vis", "visual projection width"),
    ("d_words", "number of word clusters"),
    ("hidden", "output width of each branch"),
    ("lr_vis", "learning rate of the visual projection"),
    ("lr_rest", "learning rate of the merge layer"),
    ("momentum", "SGD momentum"),
    ("weight_decay", "L2 penalty on all parameters"),
    ("batch_size", "pairs per batch, half positive"),
    ("epochs", "passes over the minority pair class"),
    ("k", "cluster count: auto or a positive integer"),
    ("k_max", "largest k the eigengap search considers"),
    (
        "kmeans_restarts",
        "k-means restarts on the spectral embedding",
    ),
    ("eig_tol", "relative Jacobi tolerance"),
    (
        "sigma",
        "kernel bandwidth; unset means estimate from distances",
    ),
    (
        "descriptor_format",
        "visual descriptor file format: csv or bin",
    ),
    ("matrix_format", "similarity matrix artifact: csv or pgm"),
    ("time_weight", "baseline weight of normalized shot time"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow::anyhow!("invalid value `{value}` for `{key}`: {e}"))
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data" => self.data = PathBuf::from(value),
            "embeddings" => self.embeddings = Some(PathBuf::from(value)),
            "fps" => self.fps = parse(key, value)?,
            "w_min" => self.w_min = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "d_vis" => self.d_vis = parse(key, value)?,
            "d_words" => self.d_words = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "lr_vis" => self.train.lr_vis = parse(key, value)?,
            "lr_rest" => self.train.lr_rest = parse(key, value)?,
            "momentum" => self.train.momentum = parse(key, value)?,
            "weight_decay" => self.train.weight_decay = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "epochs" => self.train.epochs = parse(key, value)?,
            "k" => {
                self.spectral.k = match value {
                    "auto" => ClusterCount::Auto,
                    _ => ClusterCount::Fixed(parse(key, value)?),
                }
            }
            "k_max" => self.spectral.k_max = Some(parse(key, value)?),
            "kmeans_restarts" => self.spectral.kmeans_restarts = parse(key, value)?,
            "eig_tol" => self.spectral.eig_tol = parse(key, value)?,
            "sigma" => self.sigma = Some(parse(key, value)?),
            "descriptor_format" => {
                self.descriptor_format = match value {
                    "csv" => DescriptorFormat::Csv,
                    "bin" => DescriptorFormat::Bin,
                    _ => bail!("unknown descriptor format `{value}` (expected csv or bin)"),
                }
            }
            "matrix_format" => self.matrix_format = parse(key, value)?,
            "time_weight" => self.time_weight = parse(key, value)?,
            _ => bail!("unknown config key `{key}`"),
        }
        Ok(())
    }

    /// Applies a config file: one `key = value` per line, `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut seen = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("{}:{}: expected `key = value`", path.display(), no + 1);
            };
            let key = key.trim();
            if seen.contains(&key) {
                bail!("{}:{}: duplicate key `{key}`", path.display(), no + 1);
            }
            seen.push(key);
            self.set(key, value.trim())
                .with_context(|| format!("{}:{}", path.display(), no + 1))?;
        }
        Ok(())
    }

    /// Propagates the global seed to training and clustering.
    pub fn finish(mut self) -> Result<Self> {
        self.train.seed = self.seed;
        self.spectral.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w_min > 0.0 && self.w_min.is_finite()) {
            bail!("w_min must be positive, got {}", self.w_min);
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            bail!("fps must be positive, got {}", self.fps);
        }
        if self.d_vis == 0 || self.d_words == 0 || self.hidden == 0 {
            bail!("d_vis, d_words and hidden must be positive");
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                bail!("sigma must be positive, got {s}");
            }
        }
        if let ClusterCount::Fixed(0) = self.spectral.k {
            bail!("k must be positive");
        }
        if self.spectral.k_max == Some(0) {
            bail!("k_max must be positive");
        }
        if self.spectral.kmeans_restarts == 0 {
            bail!("kmeans_restarts must be positive");
        }
        if !(self.time_weight >= 0.0 && self.time_weight.is_finite()) {
            bail!("time_weight must be non-negative, got {}", self.time_weight);
        }
        self.train.validate()?;
        Ok(())
    }

    pub fn embeddings_path(&self) -> PathBuf {
        self.embeddings
            .clone()
            .unwrap_or_else(|| self.data.join(EMBEDDINGS_FILE))
    }

    pub fn video_dir(&self, video: &str) -> PathBuf {
        self.data.join(video)
    }

    pub fn visual_path(&self, video: &str) -> PathBuf {
        self.video_dir(video).join(format!(
            "{VISUAL_STEM}.{}",
            self.descriptor_format.extension()
        ))
    }

    /// Video ids under the data root: every directory holding a shots file,
    /// sorted by name.
    pub fn discover_videos(&self) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        let entries =
            fs::read_dir(&self.data).with_context(|| format!("listing {}", self.data.display()))?;
        for entry in entries {
            let entry = entry?;
            if entry.path().join(SHOTS_FILE).is_file() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Fails unless every listed file exists.
    pub fn require_files(paths: &[PathBuf]) -> Result<()> {
        let missing: Vec<String> = paths
            .iter()
            .filter(|p| !p.is_file())
            .map(|p| p.display().to_string())
            .collect();
        if !missing.is_empty() {
            bail!("missing input file(s): {}", missing.join(", "));
        }
        Ok(())
    }
}
