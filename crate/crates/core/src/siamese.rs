//! Twin-branch shot embedding network and its contrastive training.
//!
//! One branch maps a shot to
//! `relu(W_merge [relu(W_vis x + b_vis); words; position] + b_merge)`.
//! Both branches of a pair run through the same [`SiameseModel`], so the
//! weights are shared by construction. Training minimizes
//!
//! ```text
//! L(w) = lambda/2 ||w||^2 + 1/(2N) sum_ij [ y d^2 + (1 - y) max(1 - d^2, 0) ]
//! ```
//!
//! with minibatch SGD with momentum over batches holding equal numbers of
//! same-scene and different-scene pairs.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ShotFeatures, WordCodebook};
use crate::linalg::Matrix;
use crate::timeline::SceneSegmentation;

pub const CHECKPOINT_FORMAT: &str = "siamscene-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hyper {
    /// Visual descriptor length.
    pub d_in: usize,
    pub d_vis: usize,
    pub d_words: usize,
    /// Width of the final layer.
    pub hidden: usize,
}

impl Hyper {
    pub fn merge_inputs(&self) -> usize {
        self.d_vis + self.d_words + 1
    }

    pub fn parameter_count(&self) -> usize {
        self.d_vis * self.d_in + self.d_vis + self.hidden * self.merge_inputs() + self.hidden
    }
}

/// Network parameters; also used for their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub w_vis: Matrix,
    pub b_vis: Vec<f64>,
    pub w_merge: Matrix,
    pub b_merge: Vec<f64>,
}

impl Params {
    pub fn zeros(h: &Hyper) -> Self {
        Params {
            w_vis: Matrix::zeros(h.d_vis, h.d_in),
            b_vis: vec![0.0; h.d_vis],
            w_merge: Matrix::zeros(h.hidden, h.merge_inputs()),
            b_merge: vec![0.0; h.hidden],
        }
    }

    /// Visual-projection parameters, then merge-layer parameters.
    pub fn groups(&self) -> [&[f64]; 4] {
        [
            self.w_vis.as_slice(),
            &self.b_vis,
            self.w_merge.as_slice(),
            &self.b_merge,
        ]
    }

    pub fn groups_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w_vis.as_mut_slice(),
            &mut self.b_vis,
            self.w_merge.as_mut_slice(),
            &mut self.b_merge,
        ]
    }

    pub fn squared_norm(&self) -> f64 {
        self.groups()
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum()
    }

    /// Row-major concatenation in the order of [`Params::groups`].
    pub fn to_flat(&self) -> Vec<f64> {
        self.groups().concat()
    }

    pub fn from_flat(h: &Hyper, flat: &[f64]) -> Result<Self> {
        if flat.len() != h.parameter_count() {
            return Err(Error::Dimension(format!(
                "{} parameters for a model with {}",
                flat.len(),
                h.parameter_count()
            )));
        }
        let mut p = Params::zeros(h);
        let mut rest = flat;
        for g in p.groups_mut() {
            let (head, tail) = rest.split_at(g.len());
            g.copy_from_slice(head);
            rest = tail;
        }
        Ok(p)
    }

    fn is_finite(&self) -> bool {
        self.groups()
            .iter()
            .all(|g| g.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiameseModel {
    hyper: Hyper,
    params: Params,
}

/// Intermediate values of one branch evaluation, kept for backpropagation.
struct BranchTrace {
    input: Vec<f64>,
    vis_pre: Vec<f64>,
    merge_in: Vec<f64>,
    merge_pre: Vec<f64>,
    output: Vec<f64>,
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

impl SiameseModel {
    pub fn new(hyper: Hyper, params: Params) -> Result<Self> {
        let expected = Params::zeros(&hyper);
        let shapes_match = params.w_vis.rows() == expected.w_vis.rows()
            && params.w_vis.cols() == expected.w_vis.cols()
            && params.b_vis.len() == expected.b_vis.len()
            && params.w_merge.rows() == expected.w_merge.rows()
            && params.w_merge.cols() == expected.w_merge.cols()
            && params.b_merge.len() == expected.b_merge.len();
        if !shapes_match {
            return Err(Error::Dimension(format!(
                "parameter shapes do not match {hyper:?}"
            )));
        }
        if !params.is_finite() {
            return Err(Error::InvalidArgument("non-finite model parameter".into()));
        }
        Ok(SiameseModel { hyper, params })
    }

    pub fn zeros(hyper: Hyper) -> Self {
        SiameseModel {
            hyper,
            params: Params::zeros(&hyper),
        }
    }

    /// Weights uniform in `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`,
    /// biases zero.
    pub fn random(hyper: Hyper, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::zeros(&hyper);
        for w in [&mut params.w_vis, &mut params.w_merge] {
            let a = (6.0 / (w.rows() + w.cols()) as f64).sqrt();
            for v in w.as_mut_slice() {
                *v = rng.random_range(-a..=a);
            }
        }
        SiameseModel { hyper, params }
    }

    pub fn hyper(&self) -> &Hyper {
        &self.hyper
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    fn check_input(&self, f: &ShotFeatures) -> Result<()> {
        if f.visual.len() != self.hyper.d_in || f.words.len() != self.hyper.d_words {
            return Err(Error::Dimension(format!(
                "shot features have visual/words lengths {}/{}, model expects {}/{}",
                f.visual.len(),
                f.words.len(),
                self.hyper.d_in,
                self.hyper.d_words
            )));
        }
        Ok(())
    }

    fn trace(&self, f: &ShotFeatures) -> BranchTrace {
        let p = &self.params;
        let vis_pre: Vec<f64> = p
            .w_vis
            .mul_vec(&f.visual)
            .iter()
            .zip(&p.b_vis)
            .map(|(a, b)| a + b)
            .collect();
        let mut merge_in: Vec<f64> = vis_pre.iter().map(|&v| relu(v)).collect();
        merge_in.extend_from_slice(&f.words);
        merge_in.push(f.position);
        let merge_pre: Vec<f64> = p
            .w_merge
            .mul_vec(&merge_in)
            .iter()
            .zip(&p.b_merge)
            .map(|(a, b)| a + b)
            .collect();
        let output = merge_pre.iter().map(|&v| relu(v)).collect();
        BranchTrace {
            input: f.visual.clone(),
            vis_pre,
            merge_in,
            merge_pre,
            output,
        }
    }

    /// Output of one branch, of length `hidden`.
    pub fn branch_forward(&self, f: &ShotFeatures) -> Result<Vec<f64>> {
        self.check_input(f)?;
        Ok(self.trace(f).output)
    }

    /// Euclidean distance between the branch outputs of two shots.
    pub fn pair_distance(&self, a: &ShotFeatures, b: &ShotFeatures) -> Result<f64> {
        let oa = self.branch_forward(a)?;
        let ob = self.branch_forward(b)?;
        Ok(squared_distance(&oa, &ob).sqrt())
    }

    /// Accumulates `d loss / d params` for one branch given `d loss / d output`.
    fn backward(&self, trace: &BranchTrace, grad_out: &[f64], grads: &mut Params) {
        let p = &self.params;
        let n_merge = self.hyper.merge_inputs();
        let mut grad_merge_in = vec![0.0; n_merge];
        for (r, (&g, &pre)) in grad_out.iter().zip(&trace.merge_pre).enumerate() {
            if pre <= 0.0 || g == 0.0 {
                continue;
            }
            grads.b_merge[r] += g;
            let w_row = p.w_merge.row(r);
            for c in 0..n_merge {
                grads.w_merge[(r, c)] += g * trace.merge_in[c];
                grad_merge_in[c] += g * w_row[c];
            }
        }
        for (r, &pre) in trace.vis_pre.iter().enumerate() {
            let g = grad_merge_in[r];
            if pre <= 0.0 || g == 0.0 {
                continue;
            }
            grads.b_vis[r] += g;
            for (c, &x) in trace.input.iter().enumerate() {
                grads.w_vis[(r, c)] += g * x;
            }
        }
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn pair_term(d2: f64, y: bool) -> f64 {
    if y {
        d2
    } else {
        (1.0 - d2).max(0.0)
    }
}

/// Regularized contrastive loss of a batch with distances `distances` and
/// same-scene labels `labels`. The margin is 1 on the squared distance.
pub fn contrastive_loss(
    distances: &[f64],
    labels: &[bool],
    model: &SiameseModel,
    lambda: f64,
) -> Result<f64> {
    if distances.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if distances.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} distances for {} labels",
            distances.len(),
            labels.len()
        )));
    }
    let data: f64 = distances
        .iter()
        .zip(labels)
        .map(|(&d, &y)| pair_term(d * d, y))
        .sum();
    Ok(0.5 * lambda * model.params.squared_norm() + data / (2.0 * distances.len() as f64))
}

/// A labelled pair of shots from one video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ShotPair {
    pub video: usize,
    pub i: usize,
    pub j: usize,
    /// Both shots belong to the same ground-truth scene.
    pub y: bool,
}

/// Borrowed features of a pair plus its label.
#[derive(Debug, Clone, Copy)]
pub struct PairExample<'a> {
    pub a: &'a ShotFeatures,
    pub b: &'a ShotFeatures,
    pub y: bool,
}

/// Loss and exact gradient of [`contrastive_loss`] over a batch. ReLU and
/// hinge subgradients are 0 at their kinks.
pub fn gradients(
    model: &SiameseModel,
    batch: &[PairExample<'_>],
    lambda: f64,
) -> Result<(f64, Params)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let n = batch.len() as f64;
    let mut grads = Params::zeros(&model.hyper);
    let mut data_loss = 0.0;
    for ex in batch {
        model.check_input(ex.a)?;
        model.check_input(ex.b)?;
        let ta = model.trace(ex.a);
        let tb = model.trace(ex.b);
        let d2 = squared_distance(&ta.output, &tb.output);
        data_loss += pair_term(d2, ex.y);
        let dloss_dd2 = if ex.y {
            1.0
        } else if d2 < 1.0 {
            -1.0
        } else {
            0.0
        } / (2.0 * n);
        if dloss_dd2 == 0.0 {
            continue;
        }
        let grad_a: Vec<f64> = ta
            .output
            .iter()
            .zip(&tb.output)
            .map(|(x, y)| 2.0 * dloss_dd2 * (x - y))
            .collect();
        let grad_b: Vec<f64> = grad_a.iter().map(|g| -g).collect();
        model.backward(&ta, &grad_a, &mut grads);
        model.backward(&tb, &grad_b, &mut grads);
    }
    if lambda != 0.0 {
        for (g, w) in grads.groups_mut().into_iter().zip(model.params.groups()) {
            for (gi, wi) in g.iter_mut().zip(w) {
                *gi += lambda * wi;
            }
        }
    }
    let loss = 0.5 * lambda * model.params.squared_norm() + data_loss / (2.0 * n);
    Ok((loss, grads))
}

/// Every within-video shot pair `i < j`, labelled by scene membership.
pub fn all_pairs(scenes: &[&SceneSegmentation]) -> Vec<ShotPair> {
    let mut pairs = Vec::new();
    for (video, seg) in scenes.iter().enumerate() {
        for i in 0..seg.n_shots() {
            for j in (i + 1)..seg.n_shots() {
                pairs.push(ShotPair {
                    video,
                    i,
                    j,
                    y: seg.scene_of(i) == seg.scene_of(j),
                });
            }
        }
    }
    pairs
}

/// Endless source of shuffled items drawn without replacement, reshuffled
/// whenever exhausted.
#[derive(Debug, Clone)]
struct Cycle {
    items: Vec<ShotPair>,
    pos: usize,
}

impl Cycle {
    fn new(items: Vec<ShotPair>) -> Self {
        let pos = items.len();
        Cycle { items, pos }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> ShotPair {
        if self.pos == self.items.len() {
            self.items.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.items[self.pos - 1]
    }
}

/// Batches with `batch_size / 2` positive and `batch_size / 2` negative pairs.
///
/// An epoch visits the minority class once in shuffled order; its last batch
/// is topped up from the next shuffle. The majority class is drawn from a
/// shuffled cycle that restarts when exhausted.
#[derive(Debug, Clone)]
pub struct BalancedBatches {
    half: usize,
    minority_len: usize,
    positives_minority: bool,
    minority: Cycle,
    majority: Cycle,
    rng: ChaCha8Rng,
}

impl BalancedBatches {
    pub fn new(pairs: &[ShotPair], batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || !batch_size.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "batch size must be even and positive, got {batch_size}"
            )));
        }
        let half = batch_size / 2;
        let (pos, neg): (Vec<ShotPair>, Vec<ShotPair>) = pairs.iter().partition(|p| p.y);
        if pos.is_empty() {
            return Err(Error::InvalidArgument(
                "no positive (same-scene) pairs".into(),
            ));
        }
        if neg.is_empty() {
            return Err(Error::InvalidArgument(
                "no negative (cross-scene) pairs".into(),
            ));
        }
        if pos.len() < half || neg.len() < half {
            return Err(Error::InvalidArgument(format!(
                "batch size {batch_size} needs {half} pairs of each class, have {} positive and {} negative",
                pos.len(),
                neg.len()
            )));
        }
        let positives_minority = pos.len() <= neg.len();
        let (minority, majority) = if positives_minority {
            (pos, neg)
        } else {
            (neg, pos)
        };
        Ok(BalancedBatches {
            half,
            minority_len: minority.len(),
            positives_minority,
            minority: Cycle::new(minority),
            majority: Cycle::new(majority),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.minority_len.div_ceil(self.half)
    }

    /// Next epoch's batches; positives first within each batch.
    pub fn next_epoch(&mut self) -> Vec<Vec<ShotPair>> {
        (0..self.batches_per_epoch())
            .map(|_| {
                let minority: Vec<ShotPair> = (0..self.half)
                    .map(|_| self.minority.next(&mut self.rng))
                    .collect();
                let majority: Vec<ShotPair> = (0..self.half)
                    .map(|_| self.majority.next(&mut self.rng))
                    .collect();
                if self.positives_minority {
                    [minority, majority].concat()
                } else {
                    [majority, minority].concat()
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Learning rate of the visual projection.
    pub lr_vis: f64,
    /// Learning rate of the merge layer.
    pub lr_rest: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_vis: 0.001,
            lr_rest: 0.004,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch_size: 128,
            epochs: 30,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rate_ok = |v: f64| v.is_finite() && v >= 0.0;
        if !rate_ok(self.lr_vis) || !rate_ok(self.lr_rest) || !rate_ok(self.weight_decay) {
            return Err(Error::InvalidArgument(
                "learning rates and weight decay must be finite and non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        if self.batch_size == 0 || !self.batch_size.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "batch size must be even and positive, got {}",
                self.batch_size
            )));
        }
        Ok(())
    }
}

/// Training videos: per-shot features with their ground-truth scenes.
#[derive(Debug, Clone)]
pub struct TrainingVideo {
    pub features: Vec<ShotFeatures>,
    pub scenes: SceneSegmentation,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SiameseModel,
    /// Loss of every batch, evaluated before its update.
    pub loss_trace: Vec<f64>,
}

/// Minibatch SGD with momentum: `v <- mu v - lr g`, `w <- w + v`, with the
/// weight decay inside `g`. Aborts when a loss becomes non-finite.
pub fn train(
    model: SiameseModel,
    corpus: &[TrainingVideo],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("no training videos".into()));
    }
    for (v, video) in corpus.iter().enumerate() {
        if video.features.len() != video.scenes.n_shots() {
            return Err(Error::Dimension(format!(
                "training video {v}: {} feature rows for {} shots",
                video.features.len(),
                video.scenes.n_shots()
            )));
        }
        for f in &video.features {
            model.check_input(f)?;
        }
    }
    let scenes: Vec<&SceneSegmentation> = corpus.iter().map(|v| &v.scenes).collect();
    let pairs = all_pairs(&scenes);
    let mut batches = BalancedBatches::new(&pairs, cfg.batch_size, cfg.seed)?;

    let mut model = model;
    let mut velocity = Params::zeros(&model.hyper);
    let mut loss_trace = Vec::with_capacity(cfg.epochs * batches.batches_per_epoch());
    for _ in 0..cfg.epochs {
        for batch in batches.next_epoch() {
            let examples: Vec<PairExample<'_>> = batch
                .iter()
                .map(|p| PairExample {
                    a: &corpus[p.video].features[p.i],
                    b: &corpus[p.video].features[p.j],
                    y: p.y,
                })
                .collect();
            let (loss, grads) = gradients(&model, &examples, cfg.weight_decay)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    step: loss_trace.len(),
                    loss,
                });
            }
            loss_trace.push(loss);
            let rates = [cfg.lr_vis, cfg.lr_vis, cfg.lr_rest, cfg.lr_rest];
            for (((w, v), g), lr) in model
                .params
                .groups_mut()
                .into_iter()
                .zip(velocity.groups_mut())
                .zip(grads.groups())
                .zip(rates)
            {
                for ((wi, vi), gi) in w.iter_mut().zip(v.iter_mut()).zip(g) {
                    *vi = cfg.momentum * *vi - lr * gi;
                    *wi += *vi;
                }
            }
            if !model.params.is_finite() {
                return Err(Error::Diverged {
                    step: loss_trace.len() - 1,
                    loss: f64::NAN,
                });
            }
        }
    }
    Ok(TrainOutcome { model, loss_trace })
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// A trained model with the word codebook its textual features were built
/// with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: SiameseModel,
    pub codebook: WordCodebook,
    pub min_window: f64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    hyper: Hyper,
    min_window: f64,
    w_vis: Vec<f64>,
    b_vis: Vec<f64>,
    w_merge: Vec<f64>,
    b_merge: Vec<f64>,
    codebook: WordCodebook,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let p = &self.model.params;
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            hyper: self.model.hyper,
            min_window: self.min_window,
            w_vis: p.w_vis.as_slice().to_vec(),
            b_vis: p.b_vis.clone(),
            w_merge: p.w_merge.as_slice().to_vec(),
            b_merge: p.b_merge.clone(),
            codebook: self.codebook.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unknown format `{}`",
                file.format
            )));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                file.version
            )));
        }
        let h = file.hyper;
        if file.codebook.k() != h.d_words {
            return Err(Error::Checkpoint(format!(
                "codebook has {} clusters but the model expects {}",
                file.codebook.k(),
                h.d_words
            )));
        }
        let params = Params {
            w_vis: Matrix::from_vec(h.d_vis, h.d_in, file.w_vis)?,
            b_vis: file.b_vis,
            w_merge: Matrix::from_vec(h.hidden, h.merge_inputs(), file.w_merge)?,
            b_merge: file.b_merge,
        };
        Ok(Checkpoint {
            model: SiameseModel::new(h, params)?,
            codebook: file.codebook,
            min_window: file.min_window,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
