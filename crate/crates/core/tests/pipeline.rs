//! Shot features through the network, kernel and spectral clustering.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use siamscene_core::cluster::{segment, ClusterCount, SpectralConfig};
use siamscene_core::features::ShotFeatures;
use siamscene_core::metrics::m_iou;
use siamscene_core::siamese::{Hyper, SiameseModel};
use siamscene_core::timeline::{SceneSegmentation, ShotTimeline};

const HYPER: Hyper = Hyper {
    d_in: 10,
    d_vis: 8,
    d_words: 3,
    hidden: 8,
};

fn planted(sizes: &[usize], noise: f64, seed: u64) -> (Vec<ShotFeatures>, SceneSegmentation) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = sizes.iter().sum();
    let mut features = Vec::new();
    let mut starts = Vec::new();
    for &size in sizes {
        starts.push(features.len());
        let center: Vec<f64> = (0..HYPER.d_in)
            .map(|_| rng.random_range(-3.0..3.0))
            .collect();
        let mut words = vec![0.0; HYPER.d_words];
        words[rng.random_range(0..HYPER.d_words)] = 1.0;
        for _ in 0..size {
            let i = features.len();
            features.push(ShotFeatures {
                visual: center
                    .iter()
                    .map(|c| c + noise * rng.random_range(-1.0..1.0))
                    .collect(),
                words: words.clone(),
                center_time: i as f64,
                center_index: i as u64,
                position: i as f64 / n as f64,
            });
        }
    }
    let truth = SceneSegmentation::from_boundaries(n, &starts[1..]).unwrap();
    (features, truth)
}

#[test]
fn planted_scenes_are_recovered() {
    for seed in 0..4 {
        let (features, truth) = planted(&[6, 5, 7], 0.05, seed);
        let model = SiameseModel::random(HYPER, seed + 10);
        let cfg = SpectralConfig {
            k_max: Some(5),
            seed,
            ..Default::default()
        };
        let out = segment(&features, &model, &cfg, None).unwrap();
        let tl = ShotTimeline::uniform("v", 25.0, features.len(), 40).unwrap();
        let score = m_iou(&truth, &out.segmentation, &tl).unwrap();
        assert!(score >= 0.9, "seed {seed}: m_iou {score}");
    }
}

#[test]
fn segmentation_is_deterministic() {
    let (features, _) = planted(&[5, 5, 5, 5], 0.3, 1);
    let model = SiameseModel::random(HYPER, 2);
    let cfg = SpectralConfig::default();
    let a = segment(&features, &model, &cfg, None).unwrap();
    let b = segment(&features, &model, &cfg, None).unwrap();
    assert_eq!(a.segmentation, b.segmentation);
    assert_eq!(a.similarity, b.similarity);
    assert_eq!(a.sigma.to_bits(), b.sigma.to_bits());
}

#[test]
fn identical_shots_form_one_scene() {
    let (mut features, _) = planted(&[8], 0.0, 3);
    for (i, f) in features.iter_mut().enumerate() {
        f.position = 0.0;
        f.center_index = i as u64;
    }
    let out = segment(
        &features,
        &SiameseModel::random(HYPER, 1),
        &SpectralConfig::default(),
        None,
    )
    .unwrap();
    assert_eq!(out.segmentation.len(), 1);
    assert!(out.spectral.eigenvalues[0].abs() < 1e-12);
}

#[test]
fn two_shots_split_iff_labels_differ() {
    let (features, _) = planted(&[1, 1], 0.0, 5);
    let model = SiameseModel::random(HYPER, 4);
    for k in [
        ClusterCount::Auto,
        ClusterCount::Fixed(1),
        ClusterCount::Fixed(2),
    ] {
        let cfg = SpectralConfig {
            k,
            ..Default::default()
        };
        let out = segment(&features, &model, &cfg, None).unwrap();
        let labels = &out.spectral.labels;
        assert_eq!(
            out.segmentation.boundaries().is_empty(),
            labels[0] == labels[1]
        );
    }
    assert!(segment(&features[..1], &model, &SpectralConfig::default(), None).is_err());
}
