//! First-order HMM whose transition and emission distributions are locally
//! normalised log-linear models, trained on constraint lattices by
//! maximising the marginal likelihood of the permitted tag sequences.

pub mod lbfgs;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Sentence, TagInventory};
use crate::exec::{self, Execution};
use crate::features::{has_digit, is_capitalized, is_punctuation, word_features, ClusterMap, ShapeFlags};
use crate::projection::{ConstraintLattice, TagSet, TypeDictionary};

use lbfgs::{LbfgsConfig, Termination};

const FORMAT: &str = "morphproj-hmm";
const VERSION: u32 = 1;

/// Emission item shared by every word with no better match.
pub const UNK: &str = "<UNK>";

#[derive(Debug, Error)]
pub enum HmmError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("lattice {sentence}, token {token}: no permitted tags")]
    EmptyAllowed { sentence: usize, token: usize },
    #[error("lattice {sentence}: {found} tags, model has {expected}")]
    TagCount { sentence: usize, expected: usize, found: usize },
    #[error("lattice {sentence}, token {token}: tag index {tag} outside the inventory")]
    TagOutOfRange { sentence: usize, token: usize, tag: usize },
    #[error("objective is not finite")]
    NonFinite,
    #[error("no training sentences")]
    NoSentences,
    #[error("model file: {0}")]
    Format(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmmConfig {
    pub l2: f64,
    pub lbfgs_memory: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Training words seen at most this often share signature classes.
    pub rare_threshold: usize,
    /// Add a shared weight per pair of POS values to the transition model.
    pub pos_pair_features: bool,
    pub shape: ShapeFlags,
}

impl Default for HmmConfig {
    fn default() -> Self {
        HmmConfig {
            l2: 1.0,
            lbfgs_memory: 10,
            max_iterations: 100,
            tolerance: 1e-5,
            rare_threshold: 1,
            pos_pair_features: true,
            shape: ShapeFlags::default(),
        }
    }
}

impl HmmConfig {
    pub fn validate(&self) -> Result<(), HmmError> {
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(HmmError::Config("l2 strength must be finite and non-negative".into()));
        }
        if self.lbfgs_memory == 0 {
            return Err(HmmError::Config("L-BFGS memory must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(HmmError::Config("tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Signature class of a rare or unseen word: its last three characters and
/// digit, capitalisation and punctuation flags.
pub fn signature(word: &str) -> String {
    let chars: Vec<char> = word.chars().collect();
    let suffix: String = chars[chars.len().saturating_sub(3)..].iter().collect();
    format!(
        "<UNK|s={suffix}|d={}|c={}|p={}>",
        has_digit(word) as u8,
        is_capitalized(word) as u8,
        is_punctuation(word) as u8
    )
}

/// Closed emission vocabulary: frequent training words, signature classes
/// and the generic unknown item, each with its tag-independent features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "SupportRepr", into = "SupportRepr")]
pub struct EmissionSupport {
    items: Vec<String>,
    index: HashMap<String, usize>,
    item_features: Vec<Vec<usize>>,
    feature_names: Vec<String>,
}

#[derive(Clone, Serialize, Deserialize)]
struct SupportRepr {
    items: Vec<String>,
    item_features: Vec<Vec<usize>>,
    feature_names: Vec<String>,
}

impl From<SupportRepr> for EmissionSupport {
    fn from(r: SupportRepr) -> Self {
        let index = r.items.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        EmissionSupport {
            items: r.items,
            index,
            item_features: r.item_features,
            feature_names: r.feature_names,
        }
    }
}

impl From<EmissionSupport> for SupportRepr {
    fn from(s: EmissionSupport) -> Self {
        SupportRepr {
            items: s.items,
            item_features: s.item_features,
            feature_names: s.feature_names,
        }
    }
}

fn signature_features(word: &str, clusters: bool, shape: ShapeFlags) -> Vec<String> {
    let mut f = word_features(word, None, shape);
    f[0] = format!("w={}", signature(word));
    if clusters {
        f.push("cluster=UNK".into());
    }
    f
}

impl EmissionSupport {
    /// Build from training sentences.
    pub fn build<'a, I>(sentences: I, clusters: Option<&ClusterMap>, rare_threshold: usize, shape: ShapeFlags) -> Self
    where
        I: IntoIterator<Item = &'a Sentence>,
    {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for s in sentences {
            for w in s.words() {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut entries: Vec<(String, Vec<String>)> = Vec::new();
        let mut signatures: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (&w, &n) in &counts {
            if n > rare_threshold {
                entries.push((w.to_string(), word_features(w, clusters, shape)));
            } else {
                signatures
                    .entry(signature(w))
                    .or_insert_with(|| signature_features(w, clusters.is_some(), shape));
            }
        }
        entries.extend(signatures);
        let mut unk = vec![format!("w={UNK}")];
        if clusters.is_some() {
            unk.push("cluster=UNK".into());
        }
        entries.push((UNK.to_string(), unk));

        let mut feature_ids: HashMap<String, usize> = HashMap::new();
        let mut feature_names = Vec::new();
        let mut support = EmissionSupport {
            items: Vec::new(),
            index: HashMap::new(),
            item_features: Vec::new(),
            feature_names: Vec::new(),
        };
        for (item, feats) in entries {
            let mut ids: Vec<usize> = feats
                .into_iter()
                .map(|f| {
                    let next = feature_ids.len();
                    *feature_ids.entry(f.clone()).or_insert_with(|| {
                        feature_names.push(f);
                        next
                    })
                })
                .collect();
            ids.sort_unstable();
            ids.dedup();
            support.index.insert(item.clone(), support.items.len());
            support.items.push(item);
            support.item_features.push(ids);
        }
        support.feature_names = feature_names;
        support
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn item(&self, i: usize) -> &str {
        &self.items[i]
    }

    pub fn features_of(&self, i: usize) -> impl Iterator<Item = &str> {
        self.item_features[i].iter().map(|&f| self.feature_names[f].as_str())
    }

    /// The word itself if frequent, else its signature class, else `<UNK>`.
    pub fn lookup(&self, word: &str) -> usize {
        self.index
            .get(word)
            .or_else(|| self.index.get(&signature(word)))
            .or_else(|| self.index.get(UNK))
            .copied()
            .expect("support always contains the unknown item")
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log-probability tables of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Distributions {
    num_tags: usize,
    support: usize,
    /// `log p(item | tag)`, row per tag.
    log_emit: Vec<f64>,
    /// `log p(tag' | tag)`, row per previous tag; the last row is START.
    log_trans: Vec<f64>,
}

impl Distributions {
    /// Tables from plain probabilities: `emit[t][i]` and `trans[u][t]` with
    /// the START row last.
    pub fn from_probabilities(emit: &[Vec<f64>], trans: &[Vec<f64>]) -> Self {
        let num_tags = emit.len();
        assert_eq!(trans.len(), num_tags + 1, "transition rows include START");
        Distributions {
            num_tags,
            support: emit.first().map_or(0, Vec::len),
            log_emit: emit.iter().flatten().map(|p| p.ln()).collect(),
            log_trans: trans.iter().flatten().map(|p| p.ln()).collect(),
        }
    }

    pub fn num_tags(&self) -> usize {
        self.num_tags
    }

    /// Index of the START row in transition lookups.
    pub fn start(&self) -> usize {
        self.num_tags
    }

    pub fn emit(&self, tag: usize, item: usize) -> f64 {
        self.log_emit[tag * self.support + item]
    }

    pub fn trans(&self, prev: usize, tag: usize) -> f64 {
        self.log_trans[prev * self.num_tags + tag]
    }
}

/// Posterior quantities of one lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticePosterior {
    pub log_marginal: f64,
    /// Per position, `(tag, posterior)` over permitted tags.
    pub states: Vec<Vec<(usize, f64)>>,
    /// `(previous tag or START, tag, expected count)` summed over positions.
    pub transitions: Vec<(usize, usize, f64)>,
}

/// Forward-backward restricted to the permitted tags. Returns `None` when
/// no permitted path has positive probability.
pub fn constrained_log_marginal(d: &Distributions, items: &[usize], allowed: &[&[usize]]) -> Option<LatticePosterior> {
    let n = items.len();
    if n == 0 {
        return Some(LatticePosterior {
            log_marginal: 0.0,
            states: vec![],
            transitions: vec![],
        });
    }
    let mut alpha: Vec<Vec<f64>> = Vec::with_capacity(n);
    alpha.push(allowed[0].iter().map(|&t| d.trans(d.start(), t) + d.emit(t, items[0])).collect());
    for i in 1..n {
        let prev = &alpha[i - 1];
        let row = allowed[i]
            .iter()
            .map(|&t| {
                let inflow = log_sum_exp(allowed[i - 1].iter().zip(prev).map(|(&u, &a)| a + d.trans(u, t)));
                inflow + d.emit(t, items[i])
            })
            .collect();
        alpha.push(row);
    }
    let log_z = log_sum_exp(alpha[n - 1].iter().copied());
    if !log_z.is_finite() {
        return None;
    }
    let mut beta: Vec<Vec<f64>> = vec![Vec::new(); n];
    beta[n - 1] = vec![0.0; allowed[n - 1].len()];
    for i in (0..n - 1).rev() {
        let next = &beta[i + 1];
        beta[i] = allowed[i]
            .iter()
            .map(|&u| {
                log_sum_exp(
                    allowed[i + 1]
                        .iter()
                        .zip(next)
                        .map(|(&t, &b)| d.trans(u, t) + d.emit(t, items[i + 1]) + b),
                )
            })
            .collect();
    }
    let states: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            allowed[i]
                .iter()
                .enumerate()
                .map(|(k, &t)| (t, (alpha[i][k] + beta[i][k] - log_z).exp()))
                .collect()
        })
        .collect();
    let mut trans: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for &(t, p) in &states[0] {
        *trans.entry((d.start(), t)).or_default() += p;
    }
    for i in 1..n {
        for (a, &u) in allowed[i - 1].iter().enumerate() {
            for (b, &t) in allowed[i].iter().enumerate() {
                let lp = alpha[i - 1][a] + d.trans(u, t) + d.emit(t, items[i]) + beta[i][b] - log_z;
                let p = lp.exp();
                if p > 0.0 {
                    *trans.entry((u, t)).or_default() += p;
                }
            }
        }
    }
    Some(LatticePosterior {
        log_marginal: log_z,
        states,
        transitions: trans.into_iter().map(|((u, t), p)| (u, t, p)).collect(),
    })
}

/// Best tag sequence, restricted to `allowed` when given. Among equally good
/// sequences the lexicographically smallest wins.
pub fn viterbi_decode(d: &Distributions, items: &[usize], allowed: Option<&[&[usize]]>) -> Vec<usize> {
    let n = items.len();
    if n == 0 {
        return vec![];
    }
    let all: Vec<usize> = (0..d.num_tags()).collect();
    let tags = |i: usize| -> &[usize] {
        match allowed {
            Some(a) => a[i],
            None => &all,
        }
    };
    // best[i][k]: best log score of positions i+1.. given tag k at i.
    let mut best: Vec<Vec<f64>> = vec![Vec::new(); n];
    best[n - 1] = vec![0.0; tags(n - 1).len()];
    for i in (0..n - 1).rev() {
        let next = &best[i + 1];
        best[i] = tags(i)
            .iter()
            .map(|&u| {
                tags(i + 1)
                    .iter()
                    .zip(next)
                    .map(|(&t, &b)| d.trans(u, t) + d.emit(t, items[i + 1]) + b)
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
    }
    let mut out = Vec::with_capacity(n);
    let mut prev = d.start();
    for i in 0..n {
        let mut choice: Option<(usize, f64)> = None;
        for (k, &t) in tags(i).iter().enumerate() {
            let s = d.trans(prev, t) + d.emit(t, items[i]) + best[i][k];
            if choice.is_none_or(|(_, bs)| s > bs) {
                choice = Some((t, s));
            }
        }
        let t = choice.expect("non-empty tag set").0;
        out.push(t);
        prev = t;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureHmm {
    format: String,
    version: u32,
    pub config: HmmConfig,
    pub inventory: TagInventory,
    pub support: EmissionSupport,
    /// Distinct POS values; `tag_pos[t]` indexes into it.
    pos_values: Vec<String>,
    tag_pos: Vec<usize>,
    /// Emission block (`L x F`), pair block (`(L+1) x L`), then the POS-pair
    /// block (`(P+1) x P`) when enabled.
    theta: Vec<f64>,
}

/// Objective value (to maximise) with its gradient.
#[derive(Clone, Debug)]
pub struct Objective {
    pub value: f64,
    pub log_likelihood: f64,
    pub gradient: Vec<f64>,
    /// Sentences without a permitted path.
    pub skipped: usize,
}

/// A training sentence as emission items and permitted tags.
#[derive(Clone, Debug)]
pub struct EncodedLattice {
    items: Vec<usize>,
    allowed: Vec<TagSet>,
}

#[derive(Default)]
struct Expected {
    log_likelihood: f64,
    skipped: usize,
    emit: HashMap<(usize, usize), f64>,
    trans: HashMap<(usize, usize), f64>,
}

impl FeatureHmm {
    /// All-zero weights: uniform distributions.
    pub fn new(inventory: TagInventory, support: EmissionSupport, config: HmmConfig) -> Self {
        let mut pos_values: Vec<String> = inventory.pos_values().into_iter().collect();
        pos_values.sort();
        let tag_pos = inventory
            .tags()
            .iter()
            .map(|t| pos_values.binary_search_by(|p| p.as_str().cmp(t.pos())).expect("pos present"))
            .collect();
        let mut model = FeatureHmm {
            format: FORMAT.into(),
            version: VERSION,
            config,
            inventory,
            support,
            pos_values,
            tag_pos,
            theta: Vec::new(),
        };
        model.theta = vec![0.0; model.num_params()];
        model
    }

    pub fn num_tags(&self) -> usize {
        self.inventory.len()
    }

    fn emit_len(&self) -> usize {
        self.num_tags() * self.support.num_features()
    }

    fn pair_len(&self) -> usize {
        (self.num_tags() + 1) * self.num_tags()
    }

    fn pos_len(&self) -> usize {
        let p = self.pos_values.len();
        if self.config.pos_pair_features {
            (p + 1) * p
        } else {
            0
        }
    }

    pub fn num_params(&self) -> usize {
        self.emit_len() + self.pair_len() + self.pos_len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.theta
    }

    pub fn set_weights(&mut self, theta: &[f64]) {
        assert_eq!(theta.len(), self.num_params());
        self.theta.copy_from_slice(theta);
    }

    fn pos_of(&self, prev: usize) -> usize {
        if prev == self.num_tags() {
            self.pos_values.len()
        } else {
            self.tag_pos[prev]
        }
    }

    fn pos_index(&self, prev: usize, tag: usize) -> usize {
        self.emit_len() + self.pair_len() + self.pos_of(prev) * self.pos_values.len() + self.tag_pos[tag]
    }

    fn trans_score(&self, prev: usize, tag: usize) -> f64 {
        let l = self.num_tags();
        let mut s = self.theta[self.emit_len() + prev * l + tag];
        if self.config.pos_pair_features {
            s += self.theta[self.pos_index(prev, tag)];
        }
        s
    }

    /// Locally normalised log-probability tables.
    pub fn distributions(&self, exec: Execution) -> Distributions {
        let l = self.num_tags();
        let f = self.support.num_features();
        let s = self.support.len();
        let emit_rows = exec::map_range(exec, l, |t| {
            let w = &self.theta[t * f..(t + 1) * f];
            let scores: Vec<f64> = self.support.item_features.iter().map(|ids| ids.iter().map(|&k| w[k]).sum()).collect();
            let z = log_sum_exp(scores.iter().copied());
            scores.into_iter().map(|x| x - z).collect::<Vec<f64>>()
        });
        let trans_rows = exec::map_range(exec, l + 1, |u| {
            let scores: Vec<f64> = (0..l).map(|t| self.trans_score(u, t)).collect();
            let z = log_sum_exp(scores.iter().copied());
            scores.into_iter().map(|x| x - z).collect::<Vec<f64>>()
        });
        Distributions {
            num_tags: l,
            support: s,
            log_emit: emit_rows.into_iter().flatten().collect(),
            log_trans: trans_rows.into_iter().flatten().collect(),
        }
    }

    /// Map lattices onto this model's emission items.
    pub fn encode(&self, lattices: &[ConstraintLattice]) -> Result<Vec<EncodedLattice>, HmmError> {
        lattices
            .iter()
            .enumerate()
            .map(|(k, lat)| {
                if lat.num_tags != self.num_tags() {
                    return Err(HmmError::TagCount {
                        sentence: k,
                        expected: self.num_tags(),
                        found: lat.num_tags,
                    });
                }
                if let Some(token) = lat.allowed.iter().position(|a| matches!(a, TagSet::Only(v) if v.is_empty())) {
                    return Err(HmmError::EmptyAllowed { sentence: k, token });
                }
                for (token, a) in lat.allowed.iter().enumerate() {
                    if let TagSet::Only(v) = a {
                        if let Some(&tag) = v.iter().find(|&&t| t >= self.num_tags()) {
                            return Err(HmmError::TagOutOfRange { sentence: k, token, tag });
                        }
                    }
                }
                Ok(EncodedLattice {
                    items: lat.sentence.words().map(|w| self.support.lookup(w)).collect(),
                    allowed: lat.allowed.clone(),
                })
            })
            .collect()
    }

    /// Penalised log marginal likelihood of `data` and its gradient.
    pub fn objective_and_gradient(&self, data: &[EncodedLattice], exec: Execution) -> Result<Objective, HmmError> {
        let d = self.distributions(exec);
        let all: Vec<usize> = (0..self.num_tags()).collect();
        let expected = exec::chunked_reduce(
            exec,
            data,
            64,
            Expected::default,
            |acc, lat| {
                let allowed: Vec<&[usize]> = lat
                    .allowed
                    .iter()
                    .map(|a| match a {
                        TagSet::All => all.as_slice(),
                        TagSet::Only(v) => v.as_slice(),
                    })
                    .collect();
                match constrained_log_marginal(&d, &lat.items, &allowed) {
                    None => acc.skipped += 1,
                    Some(post) => {
                        acc.log_likelihood += post.log_marginal;
                        for (states, &item) in post.states.iter().zip(&lat.items) {
                            for &(t, p) in states {
                                *acc.emit.entry((t, item)).or_default() += p;
                            }
                        }
                        for (u, t, p) in post.transitions {
                            *acc.trans.entry((u, t)).or_default() += p;
                        }
                    }
                }
            },
            |total, part| {
                total.log_likelihood += part.log_likelihood;
                total.skipped += part.skipped;
                for (k, v) in part.emit {
                    *total.emit.entry(k).or_default() += v;
                }
                for (k, v) in part.trans {
                    *total.trans.entry(k).or_default() += v;
                }
            },
        );
        if expected.skipped > 0 {
            log::warn!("{} sentences admit no path and were skipped", expected.skipped);
        }

        let l = self.num_tags();
        let f = self.support.num_features();
        let s = self.support.len();
        let mut emit: Vec<((usize, usize), f64)> = expected.emit.into_iter().collect();
        emit.sort_unstable_by_key(|e| e.0);
        let mut by_tag: Vec<Vec<(usize, f64)>> = vec![Vec::new(); l];
        for ((t, i), c) in emit {
            by_tag[t].push((i, c));
        }
        let emit_grad = exec::map_range(exec, l, |t| {
            let mut g = vec![0.0; f];
            let counts = &by_tag[t];
            if counts.is_empty() {
                return g;
            }
            let mut total = 0.0;
            for &(i, c) in counts {
                total += c;
                for &k in &self.support.item_features[i] {
                    g[k] += c;
                }
            }
            for i in 0..s {
                let p = d.emit(t, i).exp();
                for &k in &self.support.item_features[i] {
                    g[k] -= total * p;
                }
            }
            g
        });
        let mut gradient: Vec<f64> = emit_grad.into_iter().flatten().collect();
        gradient.resize(self.num_params(), 0.0);

        let mut trans: Vec<((usize, usize), f64)> = expected.trans.into_iter().collect();
        trans.sort_unstable_by_key(|e| e.0);
        let mut row_totals = vec![0.0; l + 1];
        let mut counts = vec![0.0; (l + 1) * l];
        for ((u, t), c) in trans {
            row_totals[u] += c;
            counts[u * l + t] += c;
        }
        for u in 0..=l {
            if row_totals[u] == 0.0 {
                continue;
            }
            for t in 0..l {
                let net = counts[u * l + t] - row_totals[u] * d.trans(u, t).exp();
                gradient[self.emit_len() + u * l + t] += net;
                if self.config.pos_pair_features {
                    gradient[self.pos_index(u, t)] += net;
                }
            }
        }

        let l2 = self.config.l2;
        let norm: f64 = self.theta.iter().map(|x| x * x).sum();
        for (g, x) in gradient.iter_mut().zip(&self.theta) {
            *g -= l2 * x;
        }
        let value = expected.log_likelihood - 0.5 * l2 * norm;
        if !value.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
            return Err(HmmError::NonFinite);
        }
        Ok(Objective {
            value,
            log_likelihood: expected.log_likelihood,
            gradient,
            skipped: expected.skipped,
        })
    }

    pub fn decoder(&self, exec: Execution) -> Decoder<'_> {
        Decoder {
            model: self,
            dists: self.distributions(exec),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, HmmError> {
        let model: FeatureHmm = serde_json::from_str(text).map_err(|e| HmmError::Format(e.to_string()))?;
        if model.format != FORMAT {
            return Err(HmmError::Format(format!("not an HMM model: {:?}", model.format)));
        }
        if model.version != VERSION {
            return Err(HmmError::Format(format!("unsupported version {}", model.version)));
        }
        if model.theta.len() != model.num_params() || model.tag_pos.len() != model.num_tags() {
            return Err(HmmError::Format("weight vector does not match the model layout".into()));
        }
        Ok(model)
    }
}

/// A model with its probability tables, ready for tagging.
pub struct Decoder<'a> {
    model: &'a FeatureHmm,
    dists: Distributions,
}

impl Decoder<'_> {
    pub fn distributions(&self) -> &Distributions {
        &self.dists
    }

    /// Per-token permitted tags from a dictionary: the entry's tags that the
    /// model knows, or everything when there are none.
    pub fn dictionary_constraints(&self, sentence: &Sentence, dict: &TypeDictionary) -> Vec<TagSet> {
        sentence
            .words()
            .map(|w| {
                let mut tags: Vec<usize> = dict
                    .tags(w)
                    .unwrap_or_default()
                    .into_iter()
                    .filter_map(|t| self.model.inventory.lookup(t))
                    .collect();
                tags.sort_unstable();
                tags.dedup();
                if tags.is_empty() {
                    TagSet::All
                } else {
                    TagSet::Only(tags)
                }
            })
            .collect()
    }

    pub fn viterbi_indices(&self, sentence: &Sentence, constraints: Option<&[TagSet]>) -> Vec<usize> {
        let items: Vec<usize> = sentence.words().map(|w| self.model.support.lookup(w)).collect();
        match constraints {
            None => viterbi_decode(&self.dists, &items, None),
            Some(c) => {
                let all: Vec<usize> = (0..self.model.num_tags()).collect();
                let allowed: Vec<&[usize]> = c
                    .iter()
                    .map(|a| match a {
                        TagSet::Only(v) if !v.is_empty() => v.as_slice(),
                        _ => all.as_slice(),
                    })
                    .collect();
                viterbi_decode(&self.dists, &items, Some(&allowed))
            }
        }
    }

    /// Tag every sentence in place; with a dictionary, decoding is restricted
    /// to its entries.
    pub fn tag_corpus(&self, sentences: &mut [Sentence], dict: Option<&TypeDictionary>, exec: Execution) {
        let predictions = exec::map(exec, sentences, |s| {
            let constraints = dict.map(|d| self.dictionary_constraints(s, d));
            self.viterbi_indices(s, constraints.as_deref())
        });
        for (s, tags) in sentences.iter_mut().zip(predictions) {
            for (tok, t) in s.tokens.iter_mut().zip(tags) {
                tok.predicted = self.model.inventory.tag_at(t).cloned();
            }
        }
    }
}

/// Outcome of optimisation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub iterations: usize,
    pub evaluations: usize,
    /// Objective (to maximise) at the start and after each accepted step.
    pub trace: Vec<f64>,
    pub termination: String,
    pub skipped_sentences: usize,
}

/// Fit an HMM to constraint lattices by L-BFGS, starting from zero weights.
pub fn train_lbfgs(
    lattices: &[ConstraintLattice],
    inventory: &TagInventory,
    clusters: Option<&ClusterMap>,
    config: &HmmConfig,
    exec: Execution,
) -> Result<(FeatureHmm, TrainReport), HmmError> {
    config.validate()?;
    if lattices.is_empty() {
        return Err(HmmError::NoSentences);
    }
    let support = EmissionSupport::build(
        lattices.iter().map(|l| &l.sentence),
        clusters,
        config.rare_threshold,
        config.shape,
    );
    let mut model = FeatureHmm::new(inventory.clone(), support, config.clone());
    let data = model.encode(lattices)?;
    log::info!(
        "HMM: {} tags, {} emission items, {} parameters",
        model.num_tags(),
        model.support.len(),
        model.num_params()
    );
    let lbfgs_config = LbfgsConfig {
        memory: config.lbfgs_memory,
        max_iterations: config.max_iterations,
        tolerance: config.tolerance,
        ..LbfgsConfig::default()
    };
    let mut scratch = model.clone();
    let mut skipped = 0;
    let mut first_error = None;
    let result = lbfgs::minimize(
        |x, g| {
            scratch.set_weights(x);
            match scratch.objective_and_gradient(&data, exec) {
                Ok(obj) => {
                    skipped = obj.skipped;
                    for (gi, oi) in g.iter_mut().zip(&obj.gradient) {
                        *gi = -oi;
                    }
                    -obj.value
                }
                Err(e) => {
                    first_error.get_or_insert(e);
                    g.iter_mut().for_each(|gi| *gi = f64::NAN);
                    f64::INFINITY
                }
            }
        },
        model.theta.clone(),
        &lbfgs_config,
    );
    if !result.value.is_finite() {
        return Err(first_error.unwrap_or(HmmError::NonFinite));
    }
    if result.termination == Termination::LineSearchFailed {
        log::warn!("HMM training stopped early: line search failed");
    }
    model.set_weights(&result.x);
    let report = TrainReport {
        iterations: result.iterations,
        evaluations: result.evaluations,
        trace: result.trace.iter().map(|v| -v).collect(),
        termination: format!("{:?}", result.termination),
        skipped_sentences: skipped,
    };
    Ok((model, report))
}
