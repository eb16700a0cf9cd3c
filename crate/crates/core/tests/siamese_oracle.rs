//! Forward pass and gradients against a naive re-implementation working on
//! the flat parameter vector, with central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use siamscene_core::features::ShotFeatures;
use siamscene_core::siamese::{
    contrastive_loss, gradients, train, Hyper, PairExample, Params, SiameseModel, TrainConfig,
    TrainingVideo,
};
use siamscene_core::timeline::SceneSegmentation;

/// Two affine + ReLU layers written out with explicit flat indexing.
fn naive_branch(h: &Hyper, flat: &[f64], f: &ShotFeatures) -> Vec<f64> {
    let w_vis = &flat[..h.d_vis * h.d_in];
    let b_vis = &flat[h.d_vis * h.d_in..h.d_vis * h.d_in + h.d_vis];
    let off = h.d_vis * h.d_in + h.d_vis;
    let m = h.d_vis + h.d_words + 1;
    let w_merge = &flat[off..off + h.hidden * m];
    let b_merge = &flat[off + h.hidden * m..];
    let mut z = Vec::new();
    for r in 0..h.d_vis {
        let mut acc = b_vis[r];
        for c in 0..h.d_in {
            acc += w_vis[r * h.d_in + c] * f.visual[c];
        }
        z.push(if acc > 0.0 { acc } else { 0.0 });
    }
    z.extend(&f.words);
    z.push(f.position);
    (0..h.hidden)
        .map(|r| {
            let mut acc = b_merge[r];
            for c in 0..m {
                acc += w_merge[r * m + c] * z[c];
            }
            if acc > 0.0 {
                acc
            } else {
                0.0
            }
        })
        .collect()
}

fn naive_loss(
    h: &Hyper,
    flat: &[f64],
    pairs: &[(ShotFeatures, ShotFeatures, bool)],
    lambda: f64,
) -> f64 {
    let mut data = 0.0;
    for (a, b, y) in pairs {
        let oa = naive_branch(h, flat, a);
        let ob = naive_branch(h, flat, b);
        let d2: f64 = oa.iter().zip(&ob).map(|(x, y)| (x - y) * (x - y)).sum();
        data += if *y { d2 } else { (1.0 - d2).max(0.0) };
    }
    let reg: f64 = flat.iter().map(|w| w * w).sum();
    0.5 * lambda * reg + data / (2.0 * pairs.len() as f64)
}

fn random_shot(h: &Hyper, rng: &mut impl Rng) -> ShotFeatures {
    let mut words: Vec<f64> = (0..h.d_words).map(|_| rng.random::<f64>()).collect();
    let s: f64 = words.iter().sum();
    words.iter_mut().for_each(|w| *w /= s);
    ShotFeatures {
        visual: (0..h.d_in).map(|_| rng.random_range(-1.0..1.0)).collect(),
        words,
        center_time: 0.0,
        center_index: 0,
        position: rng.random(),
    }
}

fn random_model(h: &Hyper, rng: &mut impl Rng) -> SiameseModel {
    let flat: Vec<f64> = (0..h.parameter_count())
        .map(|_| rng.random_range(-0.6..0.6))
        .collect();
    SiameseModel::new(*h, Params::from_flat(h, &flat).unwrap()).unwrap()
}

#[test]
fn forward_matches_naive_implementation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let h = Hyper {
            d_in: rng.random_range(1..12),
            d_vis: rng.random_range(1..8),
            d_words: rng.random_range(1..6),
            hidden: rng.random_range(1..8),
        };
        let m = random_model(&h, &mut rng);
        let f = random_shot(&h, &mut rng);
        let got = m.branch_forward(&f).unwrap();
        let want = naive_branch(&h, &m.params().to_flat(), &f);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0));
        }
    }
}

/// Relative error with a floor on the denominator: gradient entries below
/// 1e-6 in magnitude are compared absolutely at that scale.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn max_gradient_error(seed: u64, h: Hyper, lambda: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = random_model(&h, &mut rng);
    let pairs: Vec<(ShotFeatures, ShotFeatures, bool)> = (0..6)
        .map(|k| {
            (
                random_shot(&h, &mut rng),
                random_shot(&h, &mut rng),
                k % 2 == 0,
            )
        })
        .collect();
    let batch: Vec<PairExample<'_>> = pairs
        .iter()
        .map(|(a, b, y)| PairExample { a, b, y: *y })
        .collect();
    let (loss, grads) = gradients(&model, &batch, lambda).unwrap();
    let flat = model.params().to_flat();
    assert!((loss - naive_loss(&h, &flat, &pairs, lambda)).abs() < 1e-12);

    let step = 1e-5;
    let analytic = grads.to_flat();
    let mut worst = 0.0f64;
    for i in 0..flat.len() {
        let mut plus = flat.clone();
        plus[i] += step;
        let mut minus = flat.clone();
        minus[i] -= step;
        let numeric = (naive_loss(&h, &plus, &pairs, lambda)
            - naive_loss(&h, &minus, &pairs, lambda))
            / (2.0 * step);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    let mut seed = 100;
    for d_in in [4, 16] {
        for d_vis in [3, 8] {
            for d_words in [2, 5] {
                for hidden in [4, 7] {
                    let h = Hyper {
                        d_in,
                        d_vis,
                        d_words,
                        hidden,
                    };
                    seed += 1;
                    let lambda = if seed % 2 == 0 { 0.0 } else { 0.01 };
                    let err = max_gradient_error(seed, h, lambda);
                    assert!(err < 1e-5, "{h:?}: relative error {err:e}");
                }
            }
        }
    }
}

#[test]
fn loss_agrees_with_distances() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = Hyper {
        d_in: 5,
        d_vis: 4,
        d_words: 3,
        hidden: 6,
    };
    let m = random_model(&h, &mut rng);
    let a = random_shot(&h, &mut rng);
    let b = random_shot(&h, &mut rng);
    let d = m.pair_distance(&a, &b).unwrap();
    let batch = [PairExample {
        a: &a,
        b: &b,
        y: false,
    }];
    let (loss, _) = gradients(&m, &batch, 0.003).unwrap();
    assert!((loss - contrastive_loss(&[d], &[false], &m, 0.003).unwrap()).abs() < 1e-14);
}

fn tiny_corpus(seed: u64) -> (Hyper, Vec<TrainingVideo>) {
    let h = Hyper {
        d_in: 6,
        d_vis: 4,
        d_words: 2,
        hidden: 4,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scenes = SceneSegmentation::from_boundaries(12, &[4, 8]).unwrap();
    let centers: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..h.d_in).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let features = (0..12)
        .map(|i| {
            let c = &centers[scenes.scene_of(i)];
            ShotFeatures {
                visual: c.iter().map(|v| v + rng.random_range(-0.1..0.1)).collect(),
                words: vec![0.5, 0.5],
                center_time: i as f64,
                center_index: i as u64,
                position: i as f64 / 12.0,
            }
        })
        .collect();
    (h, vec![TrainingVideo { features, scenes }])
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let (h, corpus) = tiny_corpus(1);
    let model = SiameseModel::random(h, 3);
    let cfg = TrainConfig {
        lr_vis: 0.0,
        lr_rest: 0.0,
        batch_size: 8,
        epochs: 5,
        ..Default::default()
    };
    let out = train(model.clone(), &corpus, &cfg).unwrap();
    assert_eq!(out.model, model);
    // 18 positive pairs, four per batch: five batches per epoch.
    assert_eq!(out.loss_trace.len(), 5 * 5);
}

#[test]
fn training_is_deterministic_and_separates_scenes() {
    let (h, corpus) = tiny_corpus(4);
    let cfg = TrainConfig {
        lr_vis: 0.01,
        lr_rest: 0.04,
        batch_size: 8,
        epochs: 150,
        seed: 6,
        ..Default::default()
    };
    let a = train(SiameseModel::random(h, 1), &corpus, &cfg).unwrap();
    let b = train(SiameseModel::random(h, 1), &corpus, &cfg).unwrap();
    let bits = |t: &[f64]| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.loss_trace), bits(&b.loss_trace));

    let f = &corpus[0].features;
    let seg = &corpus[0].scenes;
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for i in 0..12 {
        for j in (i + 1)..12 {
            let d = a.model.pair_distance(&f[i], &f[j]).unwrap();
            if seg.scene_of(i) == seg.scene_of(j) {
                pos.push(d)
            } else {
                neg.push(d)
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(
        mean(&pos) < mean(&neg),
        "pos {} neg {}",
        mean(&pos),
        mean(&neg)
    );
    let first = mean(&a.loss_trace[..3]);
    let last = mean(&a.loss_trace[a.loss_trace.len() - 3..]);
    assert!(last < first, "loss {first} -> {last}");
}

#[test]
fn small_steps_on_a_fixed_batch_do_not_increase_loss() {
    let (h, corpus) = tiny_corpus(2);
    let f = &corpus[0].features;
    let mut model = SiameseModel::random(h, 9);
    let batch: Vec<PairExample<'_>> = [(0, 1, true), (4, 5, true), (0, 5, false), (2, 9, false)]
        .iter()
        .map(|&(i, j, y)| PairExample {
            a: &f[i],
            b: &f[j],
            y,
        })
        .collect();
    let mut prev = f64::INFINITY;
    for _ in 0..10 {
        let (loss, g) = gradients(&model, &batch, 0.0005).unwrap();
        assert!(loss <= prev + 1e-12, "loss rose {prev} -> {loss}");
        prev = loss;
        let flat: Vec<f64> = model
            .params()
            .to_flat()
            .iter()
            .zip(g.to_flat())
            .map(|(w, gi)| w - 1e-3 * gi)
            .collect();
        model = SiameseModel::new(h, Params::from_flat(&h, &flat).unwrap()).unwrap();
    }
}
