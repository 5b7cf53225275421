//! Turning word-aligned bitext with a tagged source side into per-token
//! permitted-tag sets for the target side.
//!
//! The pipeline is: keep high-confidence links present in both alignment
//! directions, accumulate per-word-type distributions over the tags of the
//! aligned source tokens, threshold them into a type dictionary, and combine
//! dictionary entries with per-token projections into constraint lattices.

mod align;
pub mod io;

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::corpus::{CorpusError, MorphTag, Sentence, TagInventory, Token};
use crate::exec::{self, Execution};

pub use align::{model1_align, BitextPair, DirectionalAlignments, DirectionalLink, Model1};

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("alignment needs at least one EM iteration")]
    ZeroIterations,
    #[error("bitext is empty")]
    EmptyBitext,
    #[error("link {src}-{tgt} is outside a {src_len}x{tgt_len} sentence pair")]
    LinkOutOfRange {
        src: usize,
        tgt: usize,
        src_len: usize,
        tgt_len: usize,
    },
    #[error("sentence pair {pair}: source token {token} is aligned but untagged")]
    UntaggedSource { pair: usize, token: usize },
    #[error("tag {0} is not in the tag inventory")]
    UnknownTag(String),
    #[error("{name} must lie in [0, 1], got {value}")]
    Threshold { name: &'static str, value: f64 },
    #[error("unknown constraint mode {0:?}")]
    UnknownMode(String),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

pub const DEFAULT_ALPHA: f64 = 0.8;
pub const DEFAULT_BETA: f64 = 0.3;
pub const DEFAULT_MAX_TRAIN_TOKENS: usize = 2_000_000;

/// Which constraints feed the training lattices.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ConstraintMode {
    #[default]
    Type,
    TypeAndToken,
    /// Only word types with a single-tag dictionary entry yield examples.
    UnambiguousType,
}

impl fmt::Display for ConstraintMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConstraintMode::Type => "type",
            ConstraintMode::TypeAndToken => "type+token",
            ConstraintMode::UnambiguousType => "unambiguous",
        })
    }
}

impl FromStr for ConstraintMode {
    type Err = ProjectionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "type" => Ok(ConstraintMode::Type),
            "type+token" | "type_and_token" => Ok(ConstraintMode::TypeAndToken),
            "unambiguous" | "unambiguous_type" => Ok(ConstraintMode::UnambiguousType),
            _ => Err(ProjectionError::UnknownMode(s.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionConfig {
    /// Minimum posterior, in both directions, for a link to survive.
    pub alpha: f64,
    /// Minimum tag probability for a tag to enter a dictionary entry.
    pub beta: f64,
    pub max_train_tokens: usize,
    pub constraint_mode: ConstraintMode,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            max_train_tokens: DEFAULT_MAX_TRAIN_TOKENS,
            constraint_mode: ConstraintMode::Type,
        }
    }
}

fn check_unit(name: &'static str, value: f64) -> Result<(), ProjectionError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(ProjectionError::Threshold { name, value })
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<(), ProjectionError> {
        check_unit("alpha", self.alpha)?;
        check_unit("beta", self.beta)
    }
}

/// A link kept after intersecting both directions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignmentLink {
    pub src: usize,
    pub tgt: usize,
    pub p_fwd: f64,
    pub p_rev: f64,
}

impl AlignmentLink {
    fn confidence(&self) -> f64 {
        self.p_fwd.min(self.p_rev)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SentencePair {
    /// Tagged source side. The predicted tag is used when present, else gold.
    pub source: Sentence,
    pub target: Sentence,
    pub links: Vec<AlignmentLink>,
}

fn source_tag(token: &Token) -> Option<&MorphTag> {
    token.predicted.as_ref().or(token.gold.as_ref())
}

/// Keep `(i, j)` iff it appears in both directional sets with both
/// posteriors `>= alpha`.
pub fn intersect_and_filter(
    fwd: &[DirectionalLink],
    rev: &[DirectionalLink],
    alpha: f64,
    src_len: usize,
    tgt_len: usize,
) -> Result<Vec<AlignmentLink>, ProjectionError> {
    for l in fwd.iter().chain(rev) {
        if l.src >= src_len || l.tgt >= tgt_len {
            return Err(ProjectionError::LinkOutOfRange {
                src: l.src,
                tgt: l.tgt,
                src_len,
                tgt_len,
            });
        }
    }
    let mut reverse: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for l in rev {
        reverse.entry((l.src, l.tgt)).or_insert(l.posterior);
    }
    let mut seen = BTreeSet::new();
    Ok(fwd
        .iter()
        .filter_map(|l| {
            let p_rev = *reverse.get(&(l.src, l.tgt))?;
            (seen.insert((l.src, l.tgt)) && l.posterior >= alpha && p_rev >= alpha).then_some(
                AlignmentLink {
                    src: l.src,
                    tgt: l.tgt,
                    p_fwd: l.posterior,
                    p_rev,
                },
            )
        })
        .collect())
}

/// Counts of source tags aligned to one target word type.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TagDistribution {
    counts: BTreeMap<MorphTag, u64>,
    total: u64,
}

impl TagDistribution {
    pub fn add(&mut self, tag: &MorphTag, count: u64) {
        *self.counts.entry(tag.clone()).or_insert(0) += count;
        self.total += count;
    }

    pub fn merge(&mut self, other: TagDistribution) {
        for (t, c) in other.counts {
            *self.counts.entry(t).or_insert(0) += c;
        }
        self.total += other.total;
    }

    pub fn count(&self, tag: &MorphTag) -> u64 {
        self.counts.get(tag).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn counts(&self) -> &BTreeMap<MorphTag, u64> {
        &self.counts
    }

    pub fn probability(&self, tag: &MorphTag) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.count(tag) as f64 / self.total as f64
        }
    }
}

pub type TypeDistributions = BTreeMap<String, TagDistribution>;

/// Count, for each target word type, the tags of the source tokens it is
/// linked to.
pub fn accumulate_type_distributions(
    pairs: &[SentencePair],
    exec: Execution,
) -> Result<TypeDistributions, ProjectionError> {
    let indexed: Vec<(usize, &SentencePair)> = pairs.iter().enumerate().collect();
    exec::chunked_reduce(
        exec,
        &indexed,
        1024,
        || Ok(TypeDistributions::new()),
        |acc: &mut Result<TypeDistributions, ProjectionError>, &(pi, pair)| {
            let Ok(map) = acc else { return };
            for link in &pair.links {
                let Some(tag) = pair.source.tokens.get(link.src).and_then(source_tag) else {
                    *acc = Err(ProjectionError::UntaggedSource {
                        pair: pi,
                        token: link.src,
                    });
                    return;
                };
                let word = &pair.target.tokens[link.tgt].surface;
                map.entry(word.clone()).or_default().add(tag, 1);
            }
        },
        |total, part| match (total.as_mut(), part) {
            (Ok(t), Ok(p)) => {
                for (w, d) in p {
                    t.entry(w).or_default().merge(d);
                }
            }
            (Ok(_), Err(e)) => *total = Err(e),
            (Err(_), _) => {}
        },
    )
}

/// Inventory of every source tag that sits on a kept link, in first
/// occurrence order.
pub fn projected_inventory(pairs: &[SentencePair]) -> TagInventory {
    let mut inv = TagInventory::new();
    for pair in pairs {
        for link in &pair.links {
            if let Some(tag) = pair.source.tokens.get(link.src).and_then(source_tag) {
                inv.insert(tag);
            }
        }
    }
    inv
}

/// Word type -> permitted tags. An entry may be empty when the projected
/// distribution was too flat for any tag to pass the threshold.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TypeDictionary {
    entries: BTreeMap<String, Vec<usize>>,
    inventory: TagInventory,
}

impl TypeDictionary {
    pub fn new(inventory: TagInventory) -> Self {
        TypeDictionary {
            entries: BTreeMap::new(),
            inventory,
        }
    }

    /// Add `tag` to the entry for `word`, extending the inventory if needed.
    pub fn add(&mut self, word: &str, tag: &MorphTag) {
        let idx = self.inventory.insert(tag);
        let entry = self.entries.entry(word.to_string()).or_default();
        if let Err(pos) = entry.binary_search(&idx) {
            entry.insert(pos, idx);
        }
    }

    /// Ensure `word` has an entry, possibly empty.
    pub fn touch(&mut self, word: &str) {
        self.entries.entry(word.to_string()).or_default();
    }

    /// Sorted tag indices for `word`, or `None` when the type has no entry.
    pub fn entry(&self, word: &str) -> Option<&[usize]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    pub fn tags(&self, word: &str) -> Option<Vec<&MorphTag>> {
        self.entry(word).map(|e| {
            e.iter()
                .map(|&i| self.inventory.tag_at(i).expect("entry index in inventory"))
                .collect()
        })
    }

    pub fn inventory(&self) -> &TagInventory {
        &self.inventory
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &[usize])> {
        self.entries.iter().map(|(w, e)| (w.as_str(), e.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Threshold the distributions: `entry(w) = { t : p(t | w) >= beta }`.
pub fn build_type_dictionary(
    distributions: &TypeDistributions,
    beta: f64,
    inventory: &TagInventory,
) -> TypeDictionary {
    let mut dict = TypeDictionary::new(inventory.clone());
    for (word, dist) in distributions {
        dict.touch(word);
        for tag in dist.counts().keys() {
            if dist.probability(tag) >= beta {
                dict.add(word, tag);
            }
        }
    }
    dict
}

/// Keep only the single-tag entries.
pub fn make_unambiguous(dictionary: &TypeDictionary) -> TypeDictionary {
    TypeDictionary {
        entries: dictionary
            .entries
            .iter()
            .filter(|(_, e)| e.len() == 1)
            .map(|(w, e)| (w.clone(), e.clone()))
            .collect(),
        inventory: dictionary.inventory.clone(),
    }
}

/// Every gold tag observed for each surface form of a tagged corpus.
pub fn build_oracle_dictionary(gold: &[Sentence]) -> Result<TypeDictionary, ProjectionError> {
    let inventory = crate::corpus::build_tag_inventory(gold)?;
    let mut dict = TypeDictionary::new(inventory);
    for s in gold {
        for t in &s.tokens {
            if let Some(tag) = &t.gold {
                dict.add(&t.surface, tag);
            }
        }
    }
    Ok(dict)
}

/// The source tag projected onto target token `tgt`, if it is aligned.
///
/// Several surviving links are resolved by the higher `min(p_fwd, p_rev)`,
/// then by the lower source index.
pub fn token_constraint(pair: &SentencePair, tgt: usize) -> Option<&MorphTag> {
    let best = pair
        .links
        .iter()
        .filter(|l| l.tgt == tgt)
        .min_by(|a, b| {
            b.confidence()
                .total_cmp(&a.confidence())
                .then(a.src.cmp(&b.src))
        })?;
    pair.source.tokens.get(best.src).and_then(source_tag)
}

/// Permitted tags for one position.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum TagSet {
    /// Unconstrained: the whole inventory.
    All,
    /// Sorted, non-empty list of tag indices.
    Only(Vec<usize>),
}

impl TagSet {
    pub fn single(tag: usize) -> TagSet {
        TagSet::Only(vec![tag])
    }

    pub fn is_all(&self) -> bool {
        matches!(self, TagSet::All)
    }

    pub fn contains(&self, tag: usize) -> bool {
        match self {
            TagSet::All => true,
            TagSet::Only(v) => v.binary_search(&tag).is_ok(),
        }
    }

    pub fn len(&self, num_tags: usize) -> usize {
        match self {
            TagSet::All => num_tags,
            TagSet::Only(v) => v.len(),
        }
    }

    pub fn to_vec(&self, num_tags: usize) -> Vec<usize> {
        match self {
            TagSet::All => (0..num_tags).collect(),
            TagSet::Only(v) => v.clone(),
        }
    }
}

/// Merge a token constraint with a type-dictionary entry.
///
/// * unaligned: the entry, or everything when the entry is absent or empty;
/// * aligned, no entry: the token tag;
/// * aligned, tag in a non-empty entry: the token tag;
/// * aligned, tag outside a non-empty entry: the entry.
///
/// An empty entry behaves like "all tags".
pub fn combine_constraints(
    token: Option<&MorphTag>,
    entry: Option<&[usize]>,
    inventory: &TagInventory,
) -> Result<TagSet, ProjectionError> {
    let entry = entry.filter(|e| !e.is_empty());
    let Some(tag) = token else {
        return Ok(entry.map_or(TagSet::All, |e| TagSet::Only(e.to_vec())));
    };
    let idx = inventory
        .lookup(tag)
        .ok_or_else(|| ProjectionError::UnknownTag(tag.to_string()))?;
    Ok(match entry {
        Some(e) if !e.contains(&idx) => TagSet::Only(e.to_vec()),
        _ => TagSet::single(idx),
    })
}

/// Per-token permitted tag sets for one target sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintLattice {
    pub sentence: Sentence,
    pub allowed: Vec<TagSet>,
    pub num_tags: usize,
}

impl ConstraintLattice {
    pub fn len(&self) -> usize {
        self.allowed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.allowed.is_empty()
    }

    /// Number of positions whose set is a strict constraint.
    pub fn constrained_tokens(&self) -> usize {
        self.allowed.iter().filter(|a| !a.is_all()).count()
    }
}

/// Whole sentences in order while the running token count stays within
/// `budget`; stops at the first sentence that does not fit.
pub fn within_budget<T, F>(items: &[T], budget: usize, len: F) -> &[T]
where
    F: Fn(&T) -> usize,
{
    let mut used = 0;
    for (i, item) in items.iter().enumerate() {
        used += len(item);
        if used > budget {
            return &items[..i];
        }
    }
    items
}

/// Build training lattices for the target side of `pairs`.
///
/// In `Type` and `UnambiguousType` modes token constraints are ignored; in
/// `UnambiguousType` only single-tag entries constrain, every other token is
/// left unconstrained (and thus carries no per-token training signal).
pub fn build_lattice_corpus(
    pairs: &[SentencePair],
    dictionary: &TypeDictionary,
    config: &ProjectionConfig,
) -> Result<Vec<ConstraintLattice>, ProjectionError> {
    let dict = match config.constraint_mode {
        ConstraintMode::UnambiguousType => Cow::Owned(make_unambiguous(dictionary)),
        _ => Cow::Borrowed(dictionary),
    };
    let inventory = dict.inventory();
    within_budget(pairs, config.max_train_tokens, |p| p.target.len())
        .iter()
        .map(|pair| {
            let allowed = pair
                .target
                .tokens
                .iter()
                .enumerate()
                .map(|(j, tok)| {
                    let token_c = match config.constraint_mode {
                        ConstraintMode::TypeAndToken => token_constraint(pair, j),
                        _ => None,
                    };
                    combine_constraints(token_c, dict.entry(&tok.surface), inventory)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(ConstraintLattice {
                sentence: pair.target.clone(),
                allowed,
                num_tags: inventory.len(),
            })
        })
        .collect()
}

/// Type-constrained lattices for plain sentences (e.g. with an oracle
/// dictionary), under the same whole-sentence token budget.
pub fn type_lattices(
    sentences: &[Sentence],
    dictionary: &TypeDictionary,
    max_tokens: usize,
) -> Vec<ConstraintLattice> {
    let inventory = dictionary.inventory();
    within_budget(sentences, max_tokens, Sentence::len)
        .iter()
        .map(|s| ConstraintLattice {
            sentence: s.clone(),
            allowed: s
                .tokens
                .iter()
                .map(|t| {
                    combine_constraints(None, dictionary.entry(&t.surface), inventory)
                        .expect("type-only combination cannot fail")
                })
                .collect(),
            num_tags: inventory.len(),
        })
        .collect()
}

/// Fully supervised lattices from gold tags.
///
/// With `labeled_tokens`, only the first that many tokens in corpus order keep
/// their gold tag; the rest of their sentence stays in the lattice
/// unconstrained and later sentences are dropped.
pub fn gold_lattices(
    corpus: &[Sentence],
    inventory: &TagInventory,
    labeled_tokens: Option<usize>,
) -> Result<Vec<ConstraintLattice>, ProjectionError> {
    let mut remaining = labeled_tokens.unwrap_or(usize::MAX);
    let mut out = Vec::new();
    for (si, s) in corpus.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        let mut allowed = Vec::with_capacity(s.len());
        for (ti, t) in s.tokens.iter().enumerate() {
            if remaining == 0 {
                allowed.push(TagSet::All);
                continue;
            }
            let tag = t.gold.as_ref().ok_or(CorpusError::Untagged {
                sentence: si,
                token: ti,
            })?;
            let idx = inventory
                .lookup(tag)
                .ok_or_else(|| ProjectionError::UnknownTag(tag.to_string()))?;
            allowed.push(TagSet::single(idx));
            remaining -= 1;
        }
        out.push(ConstraintLattice {
            sentence: s.clone(),
            allowed,
            num_tags: inventory.len(),
        });
    }
    Ok(out)
}

/// Assemble tagged sentence pairs from the bitext, a tagged copy of its
/// source side, and both alignment directions; links are filtered with
/// `alpha`.
pub fn assemble_pairs(
    tagged_sources: &[Sentence],
    targets: &[Sentence],
    forward: &[Vec<DirectionalLink>],
    reverse: &[Vec<DirectionalLink>],
    alpha: f64,
) -> Result<Vec<SentencePair>, ProjectionError> {
    let n = tagged_sources.len();
    if targets.len() != n || forward.len() != n || reverse.len() != n {
        return Err(ProjectionError::Format {
            line: 0,
            message: format!(
                "mismatched inputs: {} tagged sources, {} targets, {} forward and {} reverse alignment lines",
                n,
                targets.len(),
                forward.len(),
                reverse.len()
            ),
        });
    }
    (0..n)
        .map(|i| {
            let links = intersect_and_filter(
                &forward[i],
                &reverse[i],
                alpha,
                tagged_sources[i].len(),
                targets[i].len(),
            )?;
            Ok(SentencePair {
                source: tagged_sources[i].clone(),
                target: targets[i].clone(),
                links,
            })
        })
        .collect()
}
