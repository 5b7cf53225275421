//! Joint-embedding tagger trained with WARP (weighted approximate-rank
//! pairwise) updates against projected constraint sets.
//!
//! A token with input vector `x` is mapped to `h = Vx`, and tag `t` scores
//! `W_t · h`. Training ranks every permitted tag above the rest; decoding is
//! an independent argmax per token.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{MorphTag, Sentence, TagInventory};
use crate::exec::{self, Execution};
use crate::features::{
    dense_context, sparse_ids, wsabie_sparse_features, ClusterMap, EmbeddingTable, FeatureVector,
    FeatureVocabulary, WindowConfig,
};
use crate::projection::{ConstraintLattice, TagSet};

const FORMAT: &str = "morphproj-wsabie";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WsabieError {
    #[error("input has dimensionality {found}, model expects {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("embeddings have dimensionality {found}, model was trained with {expected}")]
    EmbeddingDim { expected: usize, found: usize },
    #[error("empty set of permitted tags")]
    EmptyAllowed,
    #[error("permitted tag {0} is outside the inventory")]
    TagOutOfRange(usize),
    #[error("no constrained tokens to train on")]
    NoTrainableTokens,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("model file: {0}")]
    Format(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankWeighting {
    /// Weight updates by the harmonic number of the estimated rank.
    Harmonic,
    /// Every update has weight one.
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WsabieConfig {
    pub dim: usize,
    pub learning_rate: f64,
    pub margin: f64,
    pub epochs: usize,
    pub norm_cap: f64,
    pub seed: u64,
    pub weighting: RankWeighting,
    pub window: WindowConfig,
}

impl Default for WsabieConfig {
    fn default() -> Self {
        WsabieConfig {
            dim: 50,
            learning_rate: 0.01,
            margin: 0.1,
            epochs: 25,
            norm_cap: 1.0,
            seed: 0,
            weighting: RankWeighting::Harmonic,
            window: WindowConfig::default(),
        }
    }
}

impl WsabieConfig {
    pub fn validate(&self) -> Result<(), WsabieError> {
        if self.dim == 0 {
            return Err(WsabieError::Config("dimension must be at least 1".into()));
        }
        if !(self.margin >= 0.0) {
            return Err(WsabieError::Config("margin must be non-negative".into()));
        }
        if !(self.norm_cap > 0.0) {
            return Err(WsabieError::Config("norm cap must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(WsabieError::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// `Φ(k) = 1 + 1/2 + ... + 1/k`.
pub fn harmonic(k: usize) -> f64 {
    (1..=k).map(|i| 1.0 / i as f64).sum()
}

/// What a single WARP step did.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub positive: usize,
    /// The violating negative, if one was found.
    pub negative: Option<usize>,
    pub draws: usize,
    /// Update weight; zero when nothing was updated.
    pub weight: f64,
}

/// Embeddings and clusters the feature templates read from. The same inputs
/// must be supplied at training and tagging time.
#[derive(Clone, Copy, Debug)]
pub struct FeatureContext<'a> {
    pub embeddings: &'a EmbeddingTable,
    pub clusters: Option<&'a ClusterMap>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WsabieModel {
    format: String,
    version: u32,
    pub config: WsabieConfig,
    pub inventory: TagInventory,
    pub vocab: FeatureVocabulary,
    /// Dimensionality of the word embeddings the model was trained with.
    pub embedding_dim: usize,
    /// `D x d`, one contiguous column of length `D` per input dimension.
    v: Vec<f64>,
    /// `D x L`, one contiguous column per tag.
    w: Vec<f64>,
}

impl WsabieModel {
    /// A model with all parameters zero.
    pub fn zeros(
        config: WsabieConfig,
        inventory: TagInventory,
        vocab: FeatureVocabulary,
        embedding_dim: usize,
    ) -> Self {
        let d = config.window.dense_len(embedding_dim) + vocab.len();
        let l = inventory.len();
        WsabieModel {
            format: FORMAT.to_string(),
            version: VERSION,
            v: vec![0.0; config.dim * d],
            w: vec![0.0; config.dim * l],
            config,
            inventory,
            vocab,
            embedding_dim,
        }
    }

    fn dense_len(&self) -> usize {
        self.config.window.dense_len(self.embedding_dim)
    }

    /// Input dimensionality `d`.
    pub fn input_dim(&self) -> usize {
        self.dense_len() + self.vocab.len()
    }

    pub fn num_tags(&self) -> usize {
        self.inventory.len()
    }

    pub fn v_column(&self, j: usize) -> &[f64] {
        let d = self.config.dim;
        &self.v[j * d..(j + 1) * d]
    }

    pub fn w_column(&self, t: usize) -> &[f64] {
        let d = self.config.dim;
        &self.w[t * d..(t + 1) * d]
    }

    pub fn v_column_mut(&mut self, j: usize) -> &mut [f64] {
        let d = self.config.dim;
        &mut self.v[j * d..(j + 1) * d]
    }

    pub fn w_column_mut(&mut self, t: usize) -> &mut [f64] {
        let d = self.config.dim;
        &mut self.w[t * d..(t + 1) * d]
    }

    fn check(&self, x: &FeatureVector) -> Result<(), WsabieError> {
        let expected = self.input_dim();
        let bad_sparse = x.sparse.iter().any(|&s| s >= self.vocab.len());
        if x.d != expected || x.dense.len() != self.dense_len() || bad_sparse {
            return Err(WsabieError::Dimension {
                expected,
                found: x.d,
            });
        }
        Ok(())
    }

    /// `Vx`.
    pub fn hidden(&self, x: &FeatureVector) -> Result<Vec<f64>, WsabieError> {
        self.check(x)?;
        let mut h = vec![0.0; self.config.dim];
        for (j, &xj) in x.dense.iter().enumerate() {
            if xj != 0.0 {
                for (hk, vk) in h.iter_mut().zip(self.v_column(j)) {
                    *hk += xj * vk;
                }
            }
        }
        let offset = self.dense_len();
        for &s in &x.sparse {
            for (hk, vk) in h.iter_mut().zip(self.v_column(offset + s)) {
                *hk += vk;
            }
        }
        Ok(h)
    }

    fn scores_from_hidden(&self, h: &[f64]) -> Vec<f64> {
        (0..self.num_tags())
            .map(|t| dot(self.w_column(t), h))
            .collect()
    }

    /// `f_t = W_t · (Vx)` for every tag.
    pub fn score_tags(&self, x: &FeatureVector) -> Result<Vec<f64>, WsabieError> {
        Ok(self.scores_from_hidden(&self.hidden(x)?))
    }

    /// One WARP update for a token whose permitted tags are `allowed`
    /// (sorted, a strict subset of the inventory).
    pub fn warp_step<R: Rng>(
        &mut self,
        x: &FeatureVector,
        allowed: &[usize],
        rng: &mut R,
    ) -> Result<StepReport, WsabieError> {
        if allowed.is_empty() {
            return Err(WsabieError::EmptyAllowed);
        }
        let l = self.num_tags();
        if let Some(&bad) = allowed.iter().find(|&&t| t >= l) {
            return Err(WsabieError::TagOutOfRange(bad));
        }
        let h = self.hidden(x)?;
        let positive = allowed[rng.random_range(0..allowed.len())];
        let negatives: Vec<usize> = (0..l).filter(|t| allowed.binary_search(t).is_err()).collect();
        let mut report = StepReport {
            positive,
            negative: None,
            draws: 0,
            weight: 0.0,
        };
        if negatives.is_empty() {
            return Ok(report);
        }
        let f_y = dot(self.w_column(positive), &h);
        for n in 1..=negatives.len() {
            let neg = negatives[rng.random_range(0..negatives.len())];
            report.draws = n;
            if dot(self.w_column(neg), &h) > f_y - self.config.margin {
                report.negative = Some(neg);
                break;
            }
        }
        let Some(neg) = report.negative else {
            return Ok(report);
        };
        let eta = match self.config.weighting {
            RankWeighting::Harmonic => harmonic(negatives.len() / report.draws),
            RankWeighting::Uniform => 1.0,
        };
        report.weight = eta;
        self.apply_update(x, &h, positive, neg, self.config.learning_rate * eta);
        Ok(report)
    }

    fn apply_update(&mut self, x: &FeatureVector, h: &[f64], pos: usize, neg: usize, step: f64) {
        let diff: Vec<f64> = self
            .w_column(pos)
            .iter()
            .zip(self.w_column(neg))
            .map(|(a, b)| a - b)
            .collect();
        for (w, hk) in self.w_column_mut(pos).iter_mut().zip(h) {
            *w += step * hk;
        }
        for (w, hk) in self.w_column_mut(neg).iter_mut().zip(h) {
            *w -= step * hk;
        }
        let cap = self.config.norm_cap;
        project(self.w_column_mut(pos), cap);
        project(self.w_column_mut(neg), cap);
        for (j, &xj) in x.dense.iter().enumerate() {
            if xj != 0.0 {
                let col = self.v_column_mut(j);
                for (v, g) in col.iter_mut().zip(&diff) {
                    *v += step * xj * g;
                }
                project(col, cap);
            }
        }
        let offset = self.dense_len();
        for &s in &x.sparse {
            let col = self.v_column_mut(offset + s);
            for (v, g) in col.iter_mut().zip(&diff) {
                *v += step * g;
            }
            project(col, cap);
        }
    }

    /// Largest column norm over V and W.
    pub fn max_column_norm(&self) -> f64 {
        self.v
            .chunks(self.config.dim)
            .chain(self.w.chunks(self.config.dim))
            .map(|c| dot(c, c).sqrt())
            .fold(0.0, f64::max)
    }

    fn check_context(&self, ctx: &FeatureContext) -> Result<(), WsabieError> {
        if ctx.embeddings.dim() != self.embedding_dim {
            return Err(WsabieError::EmbeddingDim {
                expected: self.embedding_dim,
                found: ctx.embeddings.dim(),
            });
        }
        Ok(())
    }

    /// Input vector of token `i`. Uses the frozen vocabulary, so unseen
    /// sparse features are dropped.
    pub fn features(&self, words: &[&str], i: usize, ctx: &FeatureContext) -> FeatureVector {
        let mut dense = Vec::with_capacity(self.dense_len());
        dense_context(words, i, ctx.embeddings, &self.config.window, &mut dense);
        let names = wsabie_sparse_features(words, i, ctx.clusters, &self.config.window);
        let mut sparse: Vec<usize> = names.iter().filter_map(|f| self.vocab.get(f)).collect();
        sparse.sort_unstable();
        sparse.dedup();
        FeatureVector {
            d: dense.len() + self.vocab.len(),
            dense,
            sparse,
        }
    }

    /// Best tag index per token; ties go to the lowest index.
    pub fn predict_indices(&self, sentence: &Sentence, ctx: &FeatureContext) -> Result<Vec<usize>, WsabieError> {
        self.check_context(ctx)?;
        let words: Vec<&str> = sentence.words().collect();
        (0..words.len())
            .map(|i| Ok(argmax(&self.score_tags(&self.features(&words, i, ctx))?)))
            .collect()
    }

    pub fn predict(&self, sentence: &Sentence, ctx: &FeatureContext) -> Result<Vec<MorphTag>, WsabieError> {
        Ok(self
            .predict_indices(sentence, ctx)?
            .into_iter()
            .map(|t| self.inventory.tag_at(t).cloned().unwrap_or_else(|| MorphTag::new("X")))
            .collect())
    }

    /// Tag every sentence, writing predictions into `predicted`.
    pub fn tag_corpus(
        &self,
        sentences: &mut [Sentence],
        ctx: &FeatureContext,
        exec: Execution,
    ) -> Result<(), WsabieError> {
        let tags = exec::map(exec, sentences, |s| self.predict(s, ctx));
        for (s, tags) in sentences.iter_mut().zip(tags) {
            for (tok, tag) in s.tokens.iter_mut().zip(tags?) {
                tok.predicted = Some(tag);
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, WsabieError> {
        let model: WsabieModel =
            serde_json::from_str(text).map_err(|e| WsabieError::Format(e.to_string()))?;
        if model.format != FORMAT {
            return Err(WsabieError::Format(format!("not a tagger model: {:?}", model.format)));
        }
        if model.version != VERSION {
            return Err(WsabieError::Format(format!("unsupported version {}", model.version)));
        }
        let dim = model.config.dim;
        if model.v.len() != dim * model.input_dim() || model.w.len() != dim * model.num_tags() {
            return Err(WsabieError::Format("matrix sizes do not match".into()));
        }
        Ok(model)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn project(col: &mut [f64], cap: f64) {
    let norm = dot(col, col).sqrt();
    if norm > cap {
        let s = cap / norm;
        col.iter_mut().for_each(|x| *x *= s);
    }
}

/// Index of the largest score, lowest index on ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Counters from a training run.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainStats {
    pub trainable_tokens: usize,
    pub skipped_tokens: usize,
    pub updates: usize,
}

/// Train a tagger on constraint lattices over `inventory`.
///
/// The feature vocabulary is collected from all lattice tokens and frozen
/// first. Each epoch visits every constrained token in a fresh seeded
/// shuffle; tokens allowed every tag carry no signal and are skipped.
pub fn train(
    lattices: &[ConstraintLattice],
    inventory: &TagInventory,
    ctx: &FeatureContext,
    config: &WsabieConfig,
    exec: Execution,
) -> Result<(WsabieModel, TrainStats), WsabieError> {
    config.validate()?;
    let l = inventory.len();
    let window = config.window;

    let per_sentence: Vec<Vec<Vec<String>>> = exec::map(exec, lattices, |lat| {
        let words: Vec<&str> = lat.sentence.words().collect();
        (0..words.len())
            .map(|i| wsabie_sparse_features(&words, i, ctx.clusters, &window))
            .collect()
    });
    let mut vocab = FeatureVocabulary::new();
    let mut sparse: Vec<Vec<Vec<usize>>> = Vec::with_capacity(lattices.len());
    for sentence in &per_sentence {
        sparse.push(sentence.iter().map(|f| sparse_ids(f, &mut vocab)).collect());
    }
    vocab.freeze();
    drop(per_sentence);

    let mut items: Vec<(usize, usize)> = Vec::new();
    let mut stats = TrainStats::default();
    for (s, lat) in lattices.iter().enumerate() {
        for (i, allowed) in lat.allowed.iter().enumerate() {
            match allowed {
                TagSet::Only(v) if v.len() < l => {
                    if let Some(&bad) = v.iter().find(|&&t| t >= l) {
                        return Err(WsabieError::TagOutOfRange(bad));
                    }
                    items.push((s, i));
                }
                _ => stats.skipped_tokens += 1,
            }
        }
    }
    if items.is_empty() {
        return Err(WsabieError::NoTrainableTokens);
    }
    stats.trainable_tokens = items.len();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = WsabieModel::zeros(config.clone(), inventory.clone(), vocab, ctx.embeddings.dim());
    let scale = 1.0 / (config.dim as f64).sqrt();
    for x in model.v.iter_mut().chain(model.w.iter_mut()) {
        *x = rng.random_range(-scale..=scale);
    }
    let cap = config.norm_cap;
    let dim = config.dim;
    for col in model.v.chunks_mut(dim).chain(model.w.chunks_mut(dim)) {
        project(col, cap);
    }

    let words: Vec<Vec<&str>> = lattices.iter().map(|l| l.sentence.words().collect()).collect();
    let d = model.input_dim();
    let mut dense = Vec::new();
    for epoch in 0..config.epochs {
        items.shuffle(&mut rng);
        let mut updates = 0;
        for &(s, i) in &items {
            dense_context(&words[s], i, ctx.embeddings, &window, &mut dense);
            let x = FeatureVector {
                dense: std::mem::take(&mut dense),
                sparse: sparse[s][i].clone(),
                d,
            };
            let TagSet::Only(allowed) = &lattices[s].allowed[i] else {
                unreachable!("only constrained tokens are queued")
            };
            let report = model.warp_step(&x, allowed, &mut rng)?;
            if report.negative.is_some() {
                updates += 1;
            }
            dense = x.dense;
        }
        log::debug!("epoch {}: {updates} updates over {} tokens", epoch + 1, items.len());
        stats.updates += updates;
    }
    Ok((model, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    fn inventory(n: usize) -> TagInventory {
        let tags: Vec<MorphTag> = (0..n).map(|i| MorphTag::new(format!("T{i}"))).collect();
        TagInventory::from_tags(&tags)
    }

    /// A model with no embeddings and `features` sparse inputs.
    fn small_model(dim: usize, features: usize, tags: usize, config: WsabieConfig) -> WsabieModel {
        let mut vocab = FeatureVocabulary::new();
        for f in 0..features {
            vocab.lookup_or_insert(&format!("f{f}"));
        }
        vocab.freeze();
        WsabieModel::zeros(WsabieConfig { dim, ..config }, inventory(tags), vocab, 0)
    }

    fn sparse_input(model: &WsabieModel, ids: Vec<usize>) -> FeatureVector {
        FeatureVector {
            dense: vec![],
            sparse: ids,
            d: model.input_dim(),
        }
    }

    #[test]
    fn scoring() {
        let mut m = small_model(2, 1, 2, WsabieConfig::default());
        m.v_column_mut(0).copy_from_slice(&[1.0, 0.0]);
        m.w_column_mut(0).copy_from_slice(&[0.5, 0.5]);
        let x = sparse_input(&m, vec![0]);
        assert_eq!(m.score_tags(&x).unwrap(), vec![0.5, 0.0]);
        let empty = sparse_input(&m, vec![]);
        assert_eq!(m.score_tags(&empty).unwrap(), vec![0.0, 0.0]);
        let wrong = FeatureVector { dense: vec![], sparse: vec![], d: 7 };
        assert!(matches!(m.score_tags(&wrong), Err(WsabieError::Dimension { .. })));
    }

    #[test]
    fn harmonic_weight() {
        let oracle = 1.0 + 1.0 / 2.0 + 1.0 / 3.0 + 1.0 / 4.0 + 1.0 / 5.0;
        assert!((harmonic(10 / 2) - oracle).abs() < 1e-12);
        assert!((harmonic(5) - 2.283333).abs() < 1e-6);
        assert_eq!(harmonic(0), 0.0);
    }

    #[test]
    fn warp_rank_estimate_from_draws() {
        // Eleven tags, one permitted. With all-zero parameters every negative
        // violates, so the first draw always succeeds.
        let mut m = small_model(2, 1, 11, WsabieConfig::default());
        let x = sparse_input(&m, vec![0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = m.warp_step(&x, &[3], &mut rng).unwrap();
        assert_eq!(r.draws, 1);
        assert!((r.weight - harmonic(10)).abs() < 1e-12);
        assert!(m.score_tags(&x).unwrap().iter().all(|f| f.is_finite()));

        // Make exactly tags 4..=10 non-violating: with f_y = 1 and margin 0.1
        // they score 0.85, while tags 1 and 2 score 0.95 and 0.
        let mut m = small_model(1, 1, 11, WsabieConfig { norm_cap: 10.0, ..Default::default() });
        m.v_column_mut(0)[0] = 1.0;
        m.w_column_mut(3)[0] = 1.0;
        for t in 4..11 {
            m.w_column_mut(t)[0] = 0.85;
        }
        m.w_column_mut(0)[0] = 0.85;
        m.w_column_mut(1)[0] = 0.95;
        m.w_column_mut(2)[0] = 0.85;
        let x = sparse_input(&m, vec![0]);
        for seed in 0..200 {
            let mut probe = m.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = probe.warp_step(&x, &[3], &mut rng).unwrap();
            match r.negative {
                Some(neg) => {
                    assert_eq!(neg, 1);
                    assert!((r.weight - harmonic(10 / r.draws)).abs() < 1e-12);
                }
                None => {
                    assert_eq!(r.draws, 10);
                    assert_eq!(probe, m);
                }
            }
        }
    }

    #[test]
    fn no_violator_leaves_model_unchanged() {
        let mut m = small_model(1, 1, 3, WsabieConfig::default());
        m.v_column_mut(0)[0] = 1.0;
        m.w_column_mut(0)[0] = 1.0;
        m.w_column_mut(1)[0] = 0.85;
        m.w_column_mut(2)[0] = -1.0;
        let before = m.clone();
        let x = sparse_input(&m, vec![0]);
        let r = m.warp_step(&x, &[0], &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(r.negative, None);
        assert_eq!(r.draws, 2);
        assert_eq!(m, before);
    }

    #[test]
    fn errors() {
        let mut m = small_model(2, 1, 3, WsabieConfig::default());
        let x = sparse_input(&m, vec![0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(m.warp_step(&x, &[], &mut rng), Err(WsabieError::EmptyAllowed)));
        assert!(matches!(m.warp_step(&x, &[5], &mut rng), Err(WsabieError::TagOutOfRange(5))));
        assert!(WsabieConfig { dim: 0, ..Default::default() }.validate().is_err());
        assert!(WsabieConfig { margin: -1.0, ..Default::default() }.validate().is_err());
        assert!(WsabieConfig { norm_cap: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.2, 0.9, 0.1]), 1);
        assert_eq!(argmax(&[0.5, 0.1, 0.5]), 0);
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
    }

    fn random_model(seed: u64, cap: f64) -> (WsabieModel, FeatureVector) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vocab = FeatureVocabulary::new();
        for f in 0..6 {
            vocab.lookup_or_insert(&format!("f{f}"));
        }
        let config = WsabieConfig {
            dim: 4,
            norm_cap: cap,
            learning_rate: 1e-3,
            window: WindowConfig { context: 1, cluster_window: 1 },
            ..Default::default()
        };
        let mut m = WsabieModel::zeros(config, inventory(5), vocab, 2);
        for x in m.v.iter_mut().chain(m.w.iter_mut()) {
            *x = rng.random_range(-0.5..0.5);
        }
        let dense: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut sparse: Vec<usize> = (0..6).filter(|_| rng.random_bool(0.5)).collect();
        sparse.dedup();
        let x = FeatureVector { d: m.input_dim(), dense, sparse };
        (m, x)
    }

    proptest! {
        #[test]
        fn step_respects_norm_cap(seed in 0u64..10_000, pos in 0usize..5) {
            let (mut m, x) = random_model(seed, 0.3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cols: Vec<usize> = (0..m.input_dim()).collect();
            for &j in &cols { project(m.v_column_mut(j), 0.3); }
            for t in 0..5 { project(m.w_column_mut(t), 0.3); }
            for _ in 0..5 {
                m.warp_step(&x, &[pos], &mut rng).unwrap();
                prop_assert!(m.max_column_norm() <= 0.3 + 1e-6);
            }
        }

        #[test]
        fn step_widens_the_updated_gap(seed in 0u64..10_000) {
            let (mut m, x) = random_model(seed, 1e6);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let before = m.clone();
            let r = m.warp_step(&x, &[0, 2], &mut rng).unwrap();
            if let Some(neg) = r.negative {
                let gap = |m: &WsabieModel| {
                    let f = m.score_tags(&x).unwrap();
                    f[r.positive] - f[neg]
                };
                prop_assert!(gap(&m) > gap(&before));
            }
        }

        #[test]
        fn argmax_is_scale_invariant(scores in proptest::collection::vec(-5.0f64..5.0, 1..12), k in 0.01f64..100.0) {
            let scaled: Vec<f64> = scores.iter().map(|s| s * k).collect();
            prop_assert_eq!(argmax(&scores), argmax(&scaled));
        }
    }

    /// Suffix determines the tag; the prefix is noise.
    fn suffix_corpus(n: usize, seed: u64) -> (Vec<ConstraintLattice>, TagInventory) {
        let suffixes = ["an", "or", "ix", "ul", "em", "os"];
        let stems = ["k", "b", "tr", "pl", "st", "gr", "m", "fl"];
        let inv = inventory(suffixes.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lattices = (0..n)
            .map(|_| {
                let len = rng.random_range(2..7);
                let mut words = Vec::new();
                let mut allowed = Vec::new();
                for _ in 0..len {
                    let t = rng.random_range(0..suffixes.len());
                    words.push(format!("{}{}", stems[rng.random_range(0..stems.len())], suffixes[t]));
                    allowed.push(TagSet::single(t));
                }
                ConstraintLattice {
                    sentence: Sentence::from_words(&words.join(" ")),
                    allowed,
                    num_tags: suffixes.len(),
                }
            })
            .collect();
        (lattices, inv)
    }

    #[test]
    fn learns_separable_suffix_tags() {
        let (train_set, inv) = suffix_corpus(300, 1);
        let (test_set, _) = suffix_corpus(100, 2);
        let emb = EmbeddingTable::empty(0);
        let ctx = FeatureContext { embeddings: &emb, clusters: None };
        let config = WsabieConfig { epochs: 5, ..Default::default() };
        let (model, stats) = train(&train_set, &inv, &ctx, &config, Execution::Parallel).unwrap();
        assert!(stats.updates > 0);
        assert!(model.max_column_norm() <= config.norm_cap + 1e-6);
        let (mut correct, mut total) = (0, 0);
        for lat in &test_set {
            let pred = model.predict_indices(&lat.sentence, &ctx).unwrap();
            for (p, a) in pred.iter().zip(&lat.allowed) {
                correct += a.contains(*p) as usize;
                total += 1;
            }
        }
        assert!(correct as f64 / total as f64 >= 0.99, "{correct}/{total}");
    }

    #[test]
    fn training_is_deterministic_and_round_trips() {
        let (lattices, inv) = suffix_corpus(40, 3);
        let emb = crate::features::load_embeddings("kan 0.1 0.2\nbor -0.3 0.4\n").unwrap();
        let ctx = FeatureContext { embeddings: &emb, clusters: None };
        let config = WsabieConfig { epochs: 2, seed: 9, ..Default::default() };
        let (a, _) = train(&lattices, &inv, &ctx, &config, Execution::Sequential).unwrap();
        let (b, _) = train(&lattices, &inv, &ctx, &config, Execution::Parallel).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let back = WsabieModel::from_json(&a.to_json()).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.to_json(), a.to_json());
        let other = EmbeddingTable::empty(3);
        let bad = FeatureContext { embeddings: &other, clusters: None };
        assert!(matches!(
            a.predict(&lattices[0].sentence, &bad),
            Err(WsabieError::EmbeddingDim { expected: 2, found: 3 })
        ));
    }

    #[test]
    fn nothing_to_train_on() {
        let lat = ConstraintLattice {
            sentence: Sentence::from_words("a b"),
            allowed: vec![TagSet::All, TagSet::Only(vec![0, 1])],
            num_tags: 2,
        };
        let emb = EmbeddingTable::empty(0);
        let ctx = FeatureContext { embeddings: &emb, clusters: None };
        assert!(matches!(
            train(&[lat], &inventory(2), &ctx, &WsabieConfig::default(), Execution::Sequential),
            Err(WsabieError::NoTrainableTokens)
        ));
    }

    #[test]
    fn zero_model_predicts_first_tag() {
        let m = small_model(3, 2, 4, WsabieConfig::default());
        let emb = EmbeddingTable::empty(0);
        let ctx = FeatureContext { embeddings: &emb, clusters: None };
        assert_eq!(m.predict_indices(&Sentence::from_words("x y z"), &ctx).unwrap(), vec![0, 0, 0]);
    }
}
