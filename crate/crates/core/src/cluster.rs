//! From pairwise shot distances to scenes: Gaussian similarities with a
//! rule-of-thumb bandwidth, a normalized graph Laplacian, an eigengap choice
//! of the cluster count and k-means on row-normalized spectral embeddings.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::ShotFeatures;
use crate::kmeans::kmeans;
use crate::linalg::{symmetric_eigh, Matrix};
use crate::siamese::SiameseModel;
use crate::timeline::{labels_to_segmentation, SceneSegmentation};

/// Smallest bandwidth [`kde_bandwidth`] returns.
pub const BANDWIDTH_FLOOR: f64 = 1e-6;

/// Symmetric similarity matrix with unit diagonal and entries in `[0, 1]`.
/// Matrices from [`gaussian_kernel`] are strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    values: Matrix,
}

impl SimilarityMatrix {
    pub fn new(values: Matrix) -> Result<Self> {
        if !values.is_square() {
            return Err(Error::Dimension("similarity matrix must be square".into()));
        }
        let n = values.rows();
        for i in 0..n {
            if values[(i, i)] != 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "similarity diagonal must be 1, found {} at {i}",
                    values[(i, i)]
                )));
            }
            for j in 0..n {
                let v = values[(i, j)];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidArgument(format!(
                        "similarity ({i},{j}) = {v} outside [0, 1]"
                    )));
                }
            }
        }
        if values.asymmetry() > 1e-12 {
            return Err(Error::InvalidArgument(
                "similarity matrix is not symmetric".into(),
            ));
        }
        Ok(SimilarityMatrix { values })
    }

    pub fn n(&self) -> usize {
        self.values.rows()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterCount {
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    pub k: ClusterCount,
    /// Upper bound for the eigengap search; `None` means `ceil(n / 5)`.
    pub k_max: Option<usize>,
    pub kmeans_restarts: usize,
    pub seed: u64,
    pub eig_tol: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            k: ClusterCount::Auto,
            k_max: None,
            kmeans_restarts: 10,
            seed: 0,
            eig_tol: 1e-12,
        }
    }
}

impl SpectralConfig {
    pub fn k_max_for(&self, n: usize) -> usize {
        self.k_max.unwrap_or_else(|| n.div_ceil(5)).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandwidth {
    pub sigma: f64,
    /// The sample had no spread and the floor was returned.
    pub degenerate: bool,
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Silverman's rule of thumb, `1.06 min(std, IQR/1.34) m^(-1/5)`, on a sample
/// of distances. Uses the sample standard deviation and falls back to it
/// alone when the IQR vanishes, then to [`BANDWIDTH_FLOOR`].
pub fn kde_bandwidth(distances: &[f64]) -> Result<Bandwidth> {
    let m = distances.len();
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "bandwidth needs at least 2 distances, got {m}"
        )));
    }
    if distances.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidArgument("non-finite distance".into()));
    }
    let mean = distances.iter().sum::<f64>() / m as f64;
    let var = distances
        .iter()
        .map(|d| (d - mean) * (d - mean))
        .sum::<f64>()
        / (m - 1) as f64;
    let std = var.sqrt();
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { std.min(iqr / 1.34) } else { std };
    let sigma = 1.06 * spread * (m as f64).powf(-0.2);
    if sigma > BANDWIDTH_FLOOR {
        Ok(Bandwidth {
            sigma,
            degenerate: false,
        })
    } else {
        warn!("distance sample has no spread; using bandwidth floor {BANDWIDTH_FLOOR}");
        Ok(Bandwidth {
            sigma: BANDWIDTH_FLOOR,
            degenerate: true,
        })
    }
}

/// Upper-triangle entries of a square matrix, row by row.
pub fn upper_triangle(m: &Matrix) -> Vec<f64> {
    let n = m.rows();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// `W_ij = exp(-d_ij^2 / (2 sigma^2))` with a unit diagonal. Entries that
/// underflow are held at the smallest positive normal.
pub fn gaussian_kernel(distances: &Matrix, sigma: f64) -> Result<SimilarityMatrix> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "bandwidth must be positive, got {sigma}"
        )));
    }
    if !distances.is_square() {
        return Err(Error::Dimension("distance matrix must be square".into()));
    }
    let n = distances.rows();
    for i in 0..n {
        for j in 0..n {
            let d = distances[(i, j)];
            if !(d.is_finite() && d >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "invalid distance {d} at ({i},{j})"
                )));
            }
        }
        if distances[(i, i)] != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "distance diagonal nonzero at {i}"
            )));
        }
    }
    if distances.asymmetry() > 1e-12 * distances.frobenius_norm().max(1.0) {
        return Err(Error::InvalidArgument(
            "distance matrix is not symmetric".into(),
        ));
    }
    let denom = 2.0 * sigma * sigma;
    let mut w = Matrix::identity(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = distances[(i, j)];
            let v = (-(d * d) / denom).exp().max(f64::MIN_POSITIVE);
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    SimilarityMatrix::new(w)
}

/// `L = I - D^{-1/2} W D^{-1/2}`.
pub fn normalized_laplacian(w: &SimilarityMatrix) -> Matrix {
    let n = w.n();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / w.values().row(i).iter().sum::<f64>().sqrt())
        .collect();
    Matrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - inv_sqrt[i] * w.get(i, j) * inv_sqrt[j]
    })
}

/// Eigengap heuristic: the `k` in `1..=k_max` maximizing
/// `lambda_{k+1} - lambda_k` (1-based, ascending), smallest `k` on ties.
pub fn choose_k(eigenvalues: &[f64], k_max: usize) -> usize {
    let upper = k_max.min(eigenvalues.len().saturating_sub(1));
    let mut best_k = 1;
    let mut best_gap = f64::NEG_INFINITY;
    for k in 1..=upper {
        let gap = eigenvalues[k] - eigenvalues[k - 1];
        if gap > best_gap {
            best_gap = gap;
            best_k = k;
        }
    }
    best_k
}

/// Labels from spectral clustering plus the quantities the run manifest reports.
#[derive(Debug, Clone)]
pub struct SpectralResult {
    pub labels: Vec<usize>,
    pub k: usize,
    pub eigenvalues: Vec<f64>,
}

/// Renumbers labels in order of first appearance.
fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

/// Spectral clustering on the symmetric normalized Laplacian with
/// row-normalized embeddings. Labels are numbered by first appearance.
pub fn spectral_cluster(w: &SimilarityMatrix, cfg: &SpectralConfig) -> Result<SpectralResult> {
    let n = w.n();
    let lap = normalized_laplacian(w);
    let eig = symmetric_eigh(&lap, cfg.eig_tol)?;
    let k = match cfg.k {
        ClusterCount::Fixed(k) => {
            if k == 0 || k > n {
                return Err(Error::InvalidArgument(format!("k = {k} for {n} shots")));
            }
            k
        }
        ClusterCount::Auto => choose_k(&eig.values, cfg.k_max_for(n)),
    };
    if k == 1 {
        return Ok(SpectralResult {
            labels: vec![0; n],
            k,
            eigenvalues: eig.values,
        });
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let row: Vec<f64> = (0..k).map(|c| eig.vectors[(i, c)]).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter().map(|v| v / norm).collect()
            } else {
                row
            }
        })
        .collect();
    let result = kmeans(&rows, k, cfg.kmeans_restarts, cfg.seed)?;
    Ok(SpectralResult {
        labels: canonical_labels(&result.labels),
        k,
        eigenvalues: eig.values,
    })
}

/// Everything produced by one segmentation run.
#[derive(Debug, Clone)]
pub struct SegmentOutput {
    pub segmentation: SceneSegmentation,
    pub similarity: SimilarityMatrix,
    pub distances: Matrix,
    pub sigma: f64,
    pub sigma_from_kde: bool,
    pub spectral: SpectralResult,
}

/// Kernel, clustering and boundary placement for a precomputed distance
/// matrix. `sigma` overrides the bandwidth estimate.
pub fn segment_distances(
    distances: Matrix,
    cfg: &SpectralConfig,
    sigma: Option<f64>,
) -> Result<SegmentOutput> {
    let n = distances.rows();
    if n == 0 {
        return Err(Error::InvalidArgument("no shots to segment".into()));
    }
    let (sigma, sigma_from_kde) = match sigma {
        Some(s) => (s, false),
        None if n >= 3 => (kde_bandwidth(&upper_triangle(&distances))?.sigma, true),
        // A single distance has no spread to estimate; use it as the scale.
        None if n == 2 => (distances[(0, 1)].max(BANDWIDTH_FLOOR), false),
        None => (1.0, false),
    };
    let similarity = gaussian_kernel(&distances, sigma)?;
    let spectral = if n == 1 {
        SpectralResult {
            labels: vec![0],
            k: 1,
            eigenvalues: vec![0.0],
        }
    } else {
        spectral_cluster(&similarity, cfg)?
    };
    let segmentation = labels_to_segmentation(&spectral.labels)?;
    Ok(SegmentOutput {
        segmentation,
        similarity,
        distances,
        sigma,
        sigma_from_kde,
        spectral,
    })
}

/// Pairwise Euclidean distances between rows.
pub fn euclidean_distances(rows: &[Vec<f64>]) -> Matrix {
    let n = rows.len();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = rows[i]
                .iter()
                .zip(&rows[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// Full pipeline: learned distances between every pair of shots, then
/// [`segment_distances`].
pub fn segment(
    features: &[ShotFeatures],
    model: &SiameseModel,
    cfg: &SpectralConfig,
    sigma: Option<f64>,
) -> Result<SegmentOutput> {
    if features.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "segmentation needs at least 2 shots, got {}",
            features.len()
        )));
    }
    let embeddings = features
        .iter()
        .map(|f| model.branch_forward(f))
        .collect::<Result<Vec<_>>>()?;
    segment_distances(euclidean_distances(&embeddings), cfg, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block_similarity(sizes: &[usize], cross: f64) -> SimilarityMatrix {
        let owner: Vec<usize> = sizes
            .iter()
            .enumerate()
            .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
            .collect();
        let n = owner.len();
        SimilarityMatrix::new(Matrix::from_fn(n, n, |i, j| {
            if owner[i] == owner[j] {
                1.0
            } else {
                cross
            }
        }))
        .unwrap()
    }

    #[test]
    fn kernel_values() {
        let d = Matrix::from_vec(2, 2, vec![0.0, 0.5, 0.5, 0.0]).unwrap();
        let w = gaussian_kernel(&d, 0.5).unwrap();
        assert_eq!(w.get(0, 0), 1.0);
        assert!((w.get(0, 1) - 0.6065306597126334).abs() < 1e-15);
        let asym = Matrix::from_vec(2, 2, vec![0.0, 0.5, 0.7, 0.0]).unwrap();
        assert!(gaussian_kernel(&asym, 1.0).is_err());
        assert!(gaussian_kernel(&d, 0.0).is_err());
    }

    #[test]
    fn kernel_underflow_stays_positive() {
        let d = Matrix::from_vec(2, 2, vec![0.0, 1e3, 1e3, 0.0]).unwrap();
        let w = gaussian_kernel(&d, 1e-3).unwrap();
        assert!(w.get(0, 1) > 0.0);
    }

    #[test]
    fn laplacian_of_identity_is_zero() {
        let w = SimilarityMatrix::new(Matrix::identity(3)).unwrap();
        assert!(normalized_laplacian(&w)
            .as_slice()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn laplacian_two_by_two() {
        let w = SimilarityMatrix::new(Matrix::from_vec(2, 2, vec![1.0; 4]).unwrap()).unwrap();
        let l = normalized_laplacian(&w);
        let expected = [0.5, -0.5, -0.5, 0.5];
        for (a, b) in l.as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        let e = symmetric_eigh(&l, 1e-14).unwrap();
        assert!(e.values[0].abs() < 1e-12 && (e.values[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn choose_k_examples() {
        assert_eq!(choose_k(&[0.0, 0.01, 0.02, 0.9, 0.95], 4), 3);
        // Gaps 0.5 after k=1 and k=2 tie: smaller wins.
        assert_eq!(choose_k(&[0.0, 0.5, 1.0, 1.0], 3), 1);
        assert_eq!(choose_k(&[0.0, 0.0, 0.5, 1.0, 1.0], 3), 2);
        assert_eq!(choose_k(&[0.0, 1.0], 5), 1);
    }

    #[test]
    fn bandwidth_degenerate() {
        let b = kde_bandwidth(&[0.0; 10]).unwrap();
        assert_eq!(b.sigma, BANDWIDTH_FLOOR);
        assert!(b.degenerate);
        assert!(kde_bandwidth(&[1.0]).is_err());
    }

    #[test]
    fn bandwidth_falls_back_to_std_when_iqr_vanishes() {
        let mut x = vec![1.0; 20];
        x[0] = 5.0;
        let b = kde_bandwidth(&x).unwrap();
        let mean = 24.0 / 20.0;
        let var = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()) / 19.0;
        assert!((b.sigma - 1.06 * var.sqrt() * 20f64.powf(-0.2)).abs() < 1e-12);
    }

    #[test]
    fn spectral_two_blocks() {
        let w = block_similarity(&[3, 4], 1e-9);
        let r = spectral_cluster(&w, &SpectralConfig::default()).unwrap();
        assert_eq!(r.k, 2);
        assert_eq!(r.labels, vec![0, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn spectral_n_equals_k() {
        let w = block_similarity(&[1, 1, 1], 0.2);
        let cfg = SpectralConfig {
            k: ClusterCount::Fixed(3),
            ..Default::default()
        };
        assert_eq!(spectral_cluster(&w, &cfg).unwrap().labels, vec![0, 1, 2]);
    }

    #[test]
    fn constant_similarity_is_one_scene() {
        let d = Matrix::zeros(6, 6);
        let out = segment_distances(d, &SpectralConfig::default(), None).unwrap();
        assert_eq!(out.segmentation.len(), 1);
        assert!(out.sigma_from_kde);
    }

    #[test]
    fn sigma_override_skips_kde() {
        let d = euclidean_distances(&[vec![0.0], vec![0.1], vec![5.0], vec![5.1]]);
        let cfg = SpectralConfig {
            k_max: Some(3),
            ..Default::default()
        };
        let out = segment_distances(d, &cfg, Some(0.5)).unwrap();
        assert_eq!(out.sigma, 0.5);
        assert!(!out.sigma_from_kde);
        assert_eq!(out.segmentation.boundaries(), &[2]);
    }
}
