//! Feature extraction for both taggers.
//!
//! The ranking tagger sees a dense block of context-word embeddings followed
//! by indicator features (affixes, word clusters, sentence boundaries). The
//! HMM conjoins word-shape features with the emitting tag.

mod cluster;

use std::collections::HashMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::corpus::{MorphTag, Sentence};

pub use cluster::{class_bigram_objective, induce_clusters, ExchangeConfig, ExchangeOutcome};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("line {line}: expected {expected} values, found {found}")]
    Dimension {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("cluster count must be at least 1")]
    NoClusters,
    #[error("cannot induce clusters from an empty corpus")]
    EmptyCorpus,
}

pub const DEFAULT_EMBEDDING_DIM: usize = 64;
pub const DEFAULT_CONTEXT: usize = 5;
pub const DEFAULT_CLUSTER_WINDOW: usize = 1;
pub const MAX_AFFIX: usize = 3;

/// Word vectors. Unknown words map to the zero vector.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    words: Vec<String>,
    data: Vec<f64>,
    zero: Vec<f64>,
    /// Words that appeared more than once in the input (the last one wins).
    pub duplicates: usize,
}

impl EmbeddingTable {
    pub fn empty(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            index: HashMap::new(),
            words: Vec::new(),
            data: Vec::new(),
            zero: vec![0.0; dim],
            duplicates: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn insert(&mut self, word: &str, vector: &[f64]) {
        assert_eq!(vector.len(), self.dim, "embedding dimensionality");
        match self.index.get(word) {
            Some(&i) => {
                self.duplicates += 1;
                self.data[i * self.dim..(i + 1) * self.dim].copy_from_slice(vector);
            }
            None => {
                self.index.insert(word.to_string(), self.words.len());
                self.words.push(word.to_string());
                self.data.extend_from_slice(vector);
            }
        }
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.index
            .get(word)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    /// The vector for `word`, or zeros.
    pub fn lookup(&self, word: &str) -> &[f64] {
        self.get(word).unwrap_or(&self.zero)
    }
}

/// Read whitespace-separated word vectors, with an optional `count dim`
/// header line.
pub fn load_embeddings(text: &str) -> Result<EmbeddingTable, FeatureError> {
    let mut table: Option<EmbeddingTable> = None;
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if table.is_none() && i == 0 && fields.len() == 2 {
            if let (Ok(_), Ok(dim)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                table = Some(EmbeddingTable::empty(dim));
                continue;
            }
        }
        let table = table.get_or_insert_with(|| EmbeddingTable::empty(fields.len() - 1));
        let found = fields.len() - 1;
        if found != table.dim {
            return Err(FeatureError::Dimension {
                line: i + 1,
                expected: table.dim,
                found,
            });
        }
        let vector = fields[1..]
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| FeatureError::Format {
                    line: i + 1,
                    message: format!("bad number {f:?}"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        table.insert(fields[0], &vector);
    }
    Ok(table.unwrap_or_else(|| EmbeddingTable::empty(0)))
}

pub fn write_embeddings(table: &EmbeddingTable) -> String {
    let mut out = format!("{} {}\n", table.len(), table.dim);
    for w in &table.words {
        out.push_str(w);
        for x in table.lookup(w) {
            out.push(' ');
            out.push_str(&x.to_string());
        }
        out.push('\n');
    }
    out
}

/// Word -> cluster id in `0..k`. Words without an assignment map to `k`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClusterMap {
    k: usize,
    assignment: HashMap<String, u32>,
}

impl ClusterMap {
    pub fn new(k: usize) -> Self {
        ClusterMap {
            k,
            assignment: HashMap::new(),
        }
    }

    pub fn assign(&mut self, word: &str, cluster: u32) {
        assert!((cluster as usize) < self.k, "cluster id out of range");
        self.assignment.insert(word.to_string(), cluster);
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Id reserved for unassigned words.
    pub fn unk(&self) -> u32 {
        self.k as u32
    }

    pub fn cluster(&self, word: &str) -> u32 {
        self.assignment.get(word).copied().unwrap_or(self.k as u32)
    }

    pub fn get(&self, word: &str) -> Option<u32> {
        self.assignment.get(word).copied()
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    /// Feature value for `word`: the id, or `UNK`.
    fn label(&self, word: &str) -> String {
        match self.get(word) {
            Some(c) => c.to_string(),
            None => "UNK".to_string(),
        }
    }
}

/// `word<TAB>cluster_id` lines, sorted by word.
pub fn write_clusters(map: &ClusterMap) -> String {
    let mut entries: Vec<(&String, &u32)> = map.assignment.iter().collect();
    entries.sort();
    let mut out = String::new();
    for (w, c) in entries {
        out.push_str(&format!("{w}\t{c}\n"));
    }
    out
}

/// Read a cluster file; `k` is one more than the largest id seen.
pub fn read_clusters(text: &str) -> Result<ClusterMap, FeatureError> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let parsed = line
            .split_once('\t')
            .and_then(|(w, c)| Some((w.to_string(), c.trim().parse::<u32>().ok()?)));
        match parsed {
            Some(p) => pairs.push(p),
            None => {
                return Err(FeatureError::Format {
                    line: i + 1,
                    message: "expected word<TAB>cluster_id".into(),
                })
            }
        }
    }
    let k = pairs.iter().map(|(_, c)| *c as usize + 1).max().unwrap_or(0);
    let mut map = ClusterMap::new(k);
    for (w, c) in pairs {
        map.assign(&w, c);
    }
    Ok(map)
}

/// Sparse feature strings mapped to dense ids. Once frozen, unseen features
/// are dropped instead of being added.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FeatureVocabulary {
    ids: HashMap<String, usize>,
    names: Vec<String>,
    frozen: bool,
}

impl FeatureVocabulary {
    pub fn new() -> Self {
        FeatureVocabulary::default()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn get(&self, feature: &str) -> Option<usize> {
        self.ids.get(feature).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    /// The id of `feature`, adding it unless the vocabulary is frozen.
    pub fn lookup_or_insert(&mut self, feature: &str) -> Option<usize> {
        if let Some(id) = self.get(feature) {
            return Some(id);
        }
        if self.frozen {
            return None;
        }
        let id = self.names.len();
        self.ids.insert(feature.to_string(), id);
        self.names.push(feature.to_string());
        Some(id)
    }
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    frozen: bool,
    features: Vec<String>,
}

impl Serialize for FeatureVocabulary {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        VocabularyRepr {
            frozen: self.frozen,
            features: self.names.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FeatureVocabulary {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = VocabularyRepr::deserialize(deserializer)?;
        let mut vocab = FeatureVocabulary::new();
        for f in &repr.features {
            vocab.lookup_or_insert(f);
        }
        if vocab.len() != repr.features.len() {
            return Err(serde::de::Error::custom("duplicate feature names"));
        }
        vocab.frozen = repr.frozen;
        Ok(vocab)
    }
}

/// Input to the ranking tagger: dense context embeddings plus active sparse
/// feature ids. The full input dimensionality is `dense.len() + vocabulary
/// size`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub dense: Vec<f64>,
    pub sparse: Vec<usize>,
    pub d: usize,
}

/// Context-window settings for the ranking tagger's features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Words on each side whose embeddings are concatenated.
    pub context: usize,
    /// Words on each side whose cluster ids are features.
    pub cluster_window: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            context: DEFAULT_CONTEXT,
            cluster_window: DEFAULT_CLUSTER_WINDOW,
        }
    }
}

impl WindowConfig {
    pub fn dense_len(&self, dim: usize) -> usize {
        (2 * self.context + 1) * dim
    }
}

fn prefixes(word: &str) -> impl Iterator<Item = &str> {
    word.char_indices()
        .skip(1)
        .map(|(i, _)| i)
        .chain(std::iter::once(word.len()))
        .take(MAX_AFFIX)
        .map(move |end| &word[..end])
}

fn suffixes(word: &str) -> impl Iterator<Item = &str> {
    let starts: Vec<usize> = word.char_indices().rev().map(|(i, _)| i).take(MAX_AFFIX).collect();
    starts.into_iter().map(move |s| &word[s..])
}

fn offset_label(offset: isize) -> String {
    if offset > 0 {
        format!("+{offset}")
    } else {
        offset.to_string()
    }
}

/// Indicator features of the ranking tagger for token `i`, as strings.
pub fn wsabie_sparse_features<S: AsRef<str>>(
    words: &[S],
    i: usize,
    clusters: Option<&ClusterMap>,
    window: &WindowConfig,
) -> Vec<String> {
    let word = words[i].as_ref();
    let mut out = Vec::new();
    for (k, p) in prefixes(word).enumerate() {
        out.push(format!("p{}={p}", k + 1));
    }
    for (k, s) in suffixes(word).enumerate() {
        out.push(format!("s{}={s}", k + 1));
    }
    if let Some(clusters) = clusters {
        let w = window.cluster_window as isize;
        for off in -w..=w {
            let j = i as isize + off;
            if j >= 0 && (j as usize) < words.len() {
                let c = clusters.label(words[j as usize].as_ref());
                out.push(format!("c@{}={c}", offset_label(off)));
            }
        }
    }
    if i == 0 {
        out.push("BOS@-1".to_string());
    }
    if i + 1 == words.len() {
        out.push("EOS@+1".to_string());
    }
    out
}

/// Resolve sparse feature strings to sorted, de-duplicated ids.
pub fn sparse_ids(features: &[String], vocab: &mut FeatureVocabulary) -> Vec<usize> {
    let mut ids: Vec<usize> = features.iter().filter_map(|f| vocab.lookup_or_insert(f)).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Write the dense context block for token `i` into `out`.
pub fn dense_context<S: AsRef<str>>(
    words: &[S],
    i: usize,
    embeddings: &EmbeddingTable,
    window: &WindowConfig,
    out: &mut Vec<f64>,
) {
    out.clear();
    let c = window.context as isize;
    for off in -c..=c {
        let j = i as isize + off;
        if j >= 0 && (j as usize) < words.len() {
            out.extend_from_slice(embeddings.lookup(words[j as usize].as_ref()));
        } else {
            out.extend(std::iter::repeat_n(0.0, embeddings.dim()));
        }
    }
}

/// Full feature vector of the ranking tagger for token `i` of `sentence`.
///
/// Out-of-sentence context positions contribute zero blocks. With an
/// unfrozen vocabulary, new sparse features are added.
pub fn wsabie_features(
    sentence: &Sentence,
    i: usize,
    embeddings: &EmbeddingTable,
    clusters: Option<&ClusterMap>,
    vocab: &mut FeatureVocabulary,
    window: &WindowConfig,
) -> FeatureVector {
    let words: Vec<&str> = sentence.words().collect();
    let mut dense = Vec::with_capacity(window.dense_len(embeddings.dim()));
    dense_context(&words, i, embeddings, window, &mut dense);
    let sparse = sparse_ids(&wsabie_sparse_features(&words, i, clusters, window), vocab);
    FeatureVector {
        d: dense.len() + vocab.len(),
        dense,
        sparse,
    }
}

/// Shape flags that go beyond word identity, suffixes, punctuation and
/// clusters. Both can be switched off.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeFlags {
    pub digit: bool,
    pub capital: bool,
}

impl Default for ShapeFlags {
    fn default() -> Self {
        ShapeFlags {
            digit: true,
            capital: true,
        }
    }
}

pub fn is_punctuation(word: &str) -> bool {
    !word.is_empty() && word.chars().all(|c| !c.is_alphanumeric())
}

pub fn has_digit(word: &str) -> bool {
    word.chars().any(|c| c.is_numeric())
}

pub fn is_capitalized(word: &str) -> bool {
    word.chars().next().is_some_and(char::is_uppercase)
}

/// Tag-independent emission features of a word: identity, suffixes up to
/// length 3, punctuation, optional digit/capital flags, and cluster.
pub fn word_features(word: &str, clusters: Option<&ClusterMap>, flags: ShapeFlags) -> Vec<String> {
    let mut out = vec![format!("w={word}")];
    for (k, s) in suffixes(word).enumerate() {
        out.push(format!("s{}={s}", k + 1));
    }
    if is_punctuation(word) {
        out.push("punct".into());
    }
    if flags.digit && has_digit(word) {
        out.push("digit".into());
    }
    if flags.capital && is_capitalized(word) {
        out.push("cap".into());
    }
    if let Some(clusters) = clusters {
        out.push(format!("cluster={}", clusters.label(word)));
    }
    out
}

/// Emission features `f(word, tag)`: each word feature conjoined with the tag.
pub fn hmm_emission_features(
    word: &str,
    tag: &MorphTag,
    clusters: Option<&ClusterMap>,
    flags: ShapeFlags,
) -> Vec<String> {
    word_features(word, clusters, flags)
        .into_iter()
        .map(|f| format!("{tag}~{f}"))
        .collect()
}
