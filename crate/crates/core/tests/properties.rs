use std::path::Path;

use proptest::prelude::*;
use siamscene_core::cluster::gaussian_kernel;
use siamscene_core::features::{
    bow_vector, context_window, spherical_kmeans, EmbeddingTable, TimeWindow, WordCodebook,
};
use siamscene_core::linalg::Matrix;
use siamscene_core::timeline::{
    labels_to_segmentation, read_shots, read_transcript, write_shots, write_transcript,
    ShotTimeline, TranscriptWord,
};

fn timeline_from(lengths: &[u64], fps: f64) -> ShotTimeline {
    let mut extents = Vec::new();
    let mut start = 0;
    for &l in lengths {
        extents.push((start, start + l));
        start += l;
    }
    ShotTimeline::new("v", fps, &extents).unwrap()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn small_table() -> (EmbeddingTable, WordCodebook) {
    let entries = vec![
        ("sea".to_string(), vec![1.0, 0.1, 0.0]),
        ("wave".to_string(), vec![0.9, 0.0, 0.2]),
        ("lion".to_string(), vec![0.0, 1.0, 0.1]),
        ("grass".to_string(), vec![0.1, 0.8, 0.0]),
        ("ice".to_string(), vec![0.0, 0.1, 1.0]),
    ];
    let table = EmbeddingTable::new(entries).unwrap();
    let codebook = WordCodebook {
        centroids: vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ],
    };
    (table, codebook)
}

const VOCAB: [&str; 7] = ["sea", "wave", "lion", "grass", "ice", "zzz", "qqq"];

proptest! {
    #[test]
    fn shots_round_trip(lengths in prop::collection::vec(1u64..500, 1..40)) {
        let tl = timeline_from(&lengths, 25.0);
        let mut buf = Vec::new();
        write_shots(&mut buf, &tl).unwrap();
        let back = read_shots(buf.as_slice(), Path::new("shots.csv"), "v".into(), 25.0).unwrap();
        prop_assert_eq!(back, tl);
    }

    #[test]
    fn transcript_round_trip(words in prop::collection::vec((0usize..7, 0.0f64..5000.0), 0..50)) {
        let mut words: Vec<TranscriptWord> = words
            .into_iter()
            .map(|(w, t)| TranscriptWord { token: VOCAB[w].to_string(), time: t })
            .collect();
        words.sort_by(|a, b| a.time.total_cmp(&b.time));
        let mut buf = Vec::new();
        write_transcript(&mut buf, &words).unwrap();
        let back = read_transcript(buf.as_slice(), Path::new("t.csv")).unwrap();
        prop_assert_eq!(back, words);
    }

    #[test]
    fn boundaries_are_label_changes(labels in prop::collection::vec(0usize..4, 1..60)) {
        let seg = labels_to_segmentation(&labels).unwrap();
        let changes: Vec<usize> = (1..labels.len()).filter(|&i| labels[i] != labels[i - 1]).collect();
        prop_assert_eq!(seg.boundaries(), changes.as_slice());
        prop_assert_eq!(seg.n_shots(), labels.len());
    }

    #[test]
    fn window_covers_shot_and_half_the_nominal_length(
        lengths in prop::collection::vec(1u64..2000, 1..20),
        pick in any::<prop::sample::Index>(),
        w_min in 0.5f64..60.0,
    ) {
        let tl = timeline_from(&lengths, 25.0);
        let shot = &tl.shots()[pick.index(tl.len())];
        let w = context_window(shot, &tl, w_min);
        let (s, e) = (shot.frame_start as f64 / 25.0, shot.frame_end as f64 / 25.0);
        let nominal = (shot.frames() as f64 / 25.0).max(w_min);
        let slack = 1e-9 * e.max(1.0);
        prop_assert!(w.start >= 0.0 && w.end <= tl.duration_seconds());
        // The center frame can sit half a frame off the true center.
        prop_assert!(w.start <= s + 0.5 / 25.0 + slack && w.end >= e - 0.5 / 25.0 - slack);
        prop_assert!(w.duration() + slack >= (nominal / 2.0).min(tl.duration_seconds()));
    }

    #[test]
    fn bow_is_a_distribution_and_order_free(
        words in prop::collection::vec((0usize..7, 0u32..100), 0..40),
        start in 0.0f64..60.0,
        len in 0.0f64..60.0,
        shift in any::<usize>(),
    ) {
        let (table, codebook) = small_table();
        let mut words: Vec<TranscriptWord> = words
            .into_iter()
            .map(|(w, t)| TranscriptWord { token: VOCAB[w].to_string(), time: t as f64 })
            .collect();
        words.sort_by(|a, b| a.time.total_cmp(&b.time));
        let window = TimeWindow { start, end: start + len };
        let (v, oov) = bow_vector(window, &words, &table, &codebook);
        let sum: f64 = v.iter().sum();
        prop_assert!(sum == 0.0 || (sum - 1.0).abs() < 1e-12);
        prop_assert!(v.iter().all(|&x| x >= 0.0));
        let in_window = words.iter().filter(|w| window.contains(w.time)).count();
        prop_assert_eq!(sum == 0.0, in_window == oov);

        // Rotate runs of equal timestamps: a different row order with the same times.
        let mut reordered = words.clone();
        let mut i = 0;
        while i < reordered.len() {
            let j = i + reordered[i..].iter().take_while(|w| w.time == reordered[i].time).count();
            let run = j - i;
            reordered[i..j].rotate_left(shift % run);
            i = j;
        }
        let (again, oov2) = bow_vector(window, &reordered, &table, &codebook);
        prop_assert_eq!(again, v);
        prop_assert_eq!(oov2, oov);
    }

    #[test]
    fn spherical_objective_never_decreases(
        pts in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 3..40),
        k in 1usize..4,
        seed in any::<u64>(),
    ) {
        let pts: Vec<Vec<f64>> = pts
            .into_iter()
            .filter(|p| p.iter().map(|x| x * x).sum::<f64>() > 1e-6)
            .map(unit)
            .collect();
        prop_assume!(pts.len() >= k);
        let res = spherical_kmeans(&pts, k, seed).unwrap();
        for w in res.objective_trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9, "objective fell {} -> {}", w[0], w[1]);
        }
        prop_assert!(res.objective_trace.len() <= 101);
        let again = spherical_kmeans(&pts, k, seed).unwrap();
        prop_assert_eq!(again.assignments, res.assignments);
    }

    #[test]
    fn kernel_entries_valid(
        pts in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 2), 2..12),
        sigma in 1e-3f64..100.0,
    ) {
        let n = pts.len();
        let d = Matrix::from_fn(n, n, |i, j| {
            ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt()
        });
        let w = gaussian_kernel(&d, sigma).unwrap();
        for i in 0..n {
            prop_assert_eq!(w.get(i, i), 1.0);
            for j in 0..n {
                prop_assert!(w.get(i, j) > 0.0 && w.get(i, j) <= 1.0);
                prop_assert_eq!(w.get(i, j), w.get(j, i));
            }
        }
    }
}

#[test]
fn two_orthogonal_directions_match_brute_force() {
    let a = vec![1.0, 0.0, 0.0];
    let b = vec![0.0, 0.0, 1.0];
    let pts = vec![a.clone(), b.clone(), a.clone(), a.clone(), b.clone()];
    // Best objective over every 2-labelling with both clusters non-empty.
    let mut best = f64::NEG_INFINITY;
    for mask in 1u32..(1 << pts.len()) - 1 {
        let mut total = 0.0;
        for side in 0..2 {
            let members: Vec<&Vec<f64>> = (0..pts.len())
                .filter(|&i| (mask >> i & 1) == side)
                .map(|i| &pts[i])
                .collect();
            let mut c = [0.0; 3];
            members
                .iter()
                .for_each(|p| c.iter_mut().zip(p.iter()).for_each(|(c, x)| *c += x));
            total += c.iter().map(|x| x * x).sum::<f64>().sqrt();
        }
        best = best.max(total);
    }
    for seed in 0..10 {
        let res = spherical_kmeans(&pts, 2, seed).unwrap();
        assert!((res.objective() - best).abs() < 1e-12);
        let mut cents = res.codebook.centroids.clone();
        cents.sort_by(|x, y| y.partial_cmp(x).unwrap());
        assert_eq!(cents, vec![a.clone(), b.clone()]);
    }
}

#[test]
fn one_centroid_per_distinct_point_is_optimal() {
    let pts: Vec<Vec<f64>> = (0..5)
        .map(|i| unit(vec![1.0, i as f64, (i * i) as f64 * 0.3]))
        .collect();
    let res = spherical_kmeans(&pts, 5, 7).unwrap();
    assert!((res.objective() - 5.0).abs() < 1e-12);
}
