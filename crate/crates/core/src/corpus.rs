//! Tokens, sentences, composite morphological tags and tag inventories.
//!
//! Annotated corpora use the ten-column, tab-separated layout of Universal
//! Dependencies treebanks. Only FORM, UPOS and FEATS are interpreted; the
//! remaining columns are kept verbatim so that a corpus can be written back
//! with new tags in place.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::exec::{self, Execution};

/// Marker for an empty column.
pub const EMPTY: &str = "_";

/// Default sentence-length cap applied when reading training data.
pub const DEFAULT_MAX_SENTENCE_LEN: usize = 80;

const N_COLUMNS: usize = 10;
const FORM: usize = 1;
const UPOS: usize = 3;
const FEATS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FeatsError {
    #[error("column {column}: feature pair {pair:?} lacks '='")]
    MissingEquals { column: usize, pair: String },
    #[error("column {column}: empty attribute or value in {pair:?}")]
    EmptyPart { column: usize, pair: String },
    #[error("column {column}: duplicate attribute {attribute:?}")]
    DuplicateAttribute { column: usize, attribute: String },
}

impl FeatsError {
    pub fn column(&self) -> usize {
        match self {
            FeatsError::MissingEquals { column, .. }
            | FeatsError::EmptyPart { column, .. }
            | FeatsError::DuplicateAttribute { column, .. } => *column,
        }
    }

    fn shifted(self, by: usize) -> FeatsError {
        match self {
            FeatsError::MissingEquals { column, pair } => FeatsError::MissingEquals {
                column: column + by,
                pair,
            },
            FeatsError::EmptyPart { column, pair } => FeatsError::EmptyPart {
                column: column + by,
                pair,
            },
            FeatsError::DuplicateAttribute { column, attribute } => {
                FeatsError::DuplicateAttribute {
                    column: column + by,
                    attribute,
                }
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {source}")]
    Feats {
        line: usize,
        #[source]
        source: FeatsError,
    },
    #[error("line {line}: expected {N_COLUMNS} tab-separated columns, found {found}")]
    ColumnCount { line: usize, found: usize },
    #[error("line {line}: empty word form")]
    EmptyForm { line: usize },
    #[error("invalid attribute-value pair {0:?}")]
    InvalidPair(String),
    #[error("invalid tag {tag:?}: {reason}")]
    InvalidTag { tag: String, reason: String },
    #[error("sentence {sentence}, token {token} has no gold tag")]
    Untagged { sentence: usize, token: usize },
    #[error("cannot build a tag inventory from an empty corpus")]
    EmptyCorpus,
}

/// One `attribute=value` pair, e.g. `Case=Nom`.
///
/// Ordering is lexicographic on the attribute, then on the value.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AttributeValue {
    pub attribute: String,
    pub value: String,
}

fn valid_part(s: &str) -> bool {
    !s.is_empty() && !s.contains('=') && !s.contains('|')
}

impl AttributeValue {
    pub fn new(attribute: impl Into<String>, value: impl Into<String>) -> Result<Self, CorpusError> {
        let attribute = attribute.into();
        let value = value.into();
        if !valid_part(&attribute) || !valid_part(&value) {
            return Err(CorpusError::InvalidPair(format!("{attribute}={value}")));
        }
        Ok(AttributeValue { attribute, value })
    }
}

impl fmt::Display for AttributeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.attribute, self.value)
    }
}

/// Parse a FEATS field (`_` or `attr=val` pairs joined by `|`).
///
/// Pair order does not matter. Columns in errors are 1-based character
/// offsets into `field`.
pub fn parse_feats(field: &str) -> Result<BTreeSet<AttributeValue>, FeatsError> {
    let mut out = BTreeSet::new();
    if field == EMPTY || field.is_empty() {
        return Ok(out);
    }
    let mut seen = BTreeSet::new();
    let mut offset = 0;
    for pair in field.split('|') {
        let column = field[..offset].chars().count() + 1;
        offset += pair.len() + 1;
        let Some((attribute, value)) = pair.split_once('=') else {
            return Err(FeatsError::MissingEquals {
                column,
                pair: pair.to_string(),
            });
        };
        if !valid_part(attribute) || !valid_part(value) {
            return Err(FeatsError::EmptyPart {
                column,
                pair: pair.to_string(),
            });
        }
        if !seen.insert(attribute) {
            return Err(FeatsError::DuplicateAttribute {
                column,
                attribute: attribute.to_string(),
            });
        }
        out.insert(AttributeValue {
            attribute: attribute.to_string(),
            value: value.to_string(),
        });
    }
    Ok(out)
}

/// A composite morphological tag: a POS plus at most one value per attribute.
///
/// The canonical form is the POS followed by the sorted `attr=value` pairs,
/// all joined with `|`, e.g. `NOUN|Case=Nom|Number=Sing`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MorphTag {
    pos: String,
    features: BTreeMap<String, String>,
}

impl MorphTag {
    /// A tag with no features.
    pub fn new(pos: impl Into<String>) -> Self {
        MorphTag {
            pos: pos.into(),
            features: BTreeMap::new(),
        }
    }

    pub fn from_parts<I>(pos: impl Into<String>, features: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = AttributeValue>,
    {
        let pos = pos.into();
        if pos.is_empty() || pos.contains('|') || pos.contains('=') {
            return Err(CorpusError::InvalidTag {
                tag: pos,
                reason: "bad POS".into(),
            });
        }
        let mut map = BTreeMap::new();
        for av in features {
            if map.insert(av.attribute.clone(), av.value).is_some() {
                return Err(CorpusError::InvalidTag {
                    tag: pos,
                    reason: format!("duplicate attribute {}", av.attribute),
                });
            }
        }
        Ok(MorphTag { pos, features: map })
    }

    pub fn pos(&self) -> &str {
        &self.pos
    }

    pub fn feature(&self, attribute: &str) -> Option<&str> {
        self.features.get(attribute).map(String::as_str)
    }

    /// Feature pairs in canonical order.
    pub fn features(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.features.iter().map(|(a, v)| (a.as_str(), v.as_str()))
    }

    pub fn attribute_values(&self) -> impl Iterator<Item = AttributeValue> + '_ {
        self.features.iter().map(|(a, v)| AttributeValue {
            attribute: a.clone(),
            value: v.clone(),
        })
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    /// Keep only the features whose attribute is in `keep`; the POS is kept.
    pub fn restrict(&self, keep: &BTreeSet<String>) -> MorphTag {
        MorphTag {
            pos: self.pos.clone(),
            features: self
                .features
                .iter()
                .filter(|(a, _)| keep.contains(*a))
                .map(|(a, v)| (a.clone(), v.clone()))
                .collect(),
        }
    }

    /// The FEATS column rendering (`_` when there are no features).
    pub fn feats_field(&self) -> String {
        if self.features.is_empty() {
            EMPTY.to_string()
        } else {
            self.features
                .iter()
                .map(|(a, v)| format!("{a}={v}"))
                .collect::<Vec<_>>()
                .join("|")
        }
    }
}

impl fmt::Display for MorphTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.pos)?;
        for (a, v) in &self.features {
            write!(f, "|{a}={v}")?;
        }
        Ok(())
    }
}

impl FromStr for MorphTag {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (pos, rest) = match s.split_once('|') {
            Some((p, r)) => (p, r),
            None => (s, EMPTY),
        };
        let feats = parse_feats(rest).map_err(|e| CorpusError::InvalidTag {
            tag: s.to_string(),
            reason: e.to_string(),
        })?;
        MorphTag::from_parts(pos, feats)
    }
}

impl Serialize for MorphTag {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MorphTag {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub gold: Option<MorphTag>,
    pub predicted: Option<MorphTag>,
    /// Original columns, kept for write-through.
    pub columns: Option<Vec<String>>,
}

impl Token {
    pub fn new(surface: impl Into<String>) -> Self {
        Token {
            surface: surface.into(),
            gold: None,
            predicted: None,
            columns: None,
        }
    }

    pub fn with_gold(surface: impl Into<String>, gold: MorphTag) -> Self {
        Token {
            gold: Some(gold),
            ..Token::new(surface)
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Sentence {
    pub id: Option<String>,
    pub comments: Vec<String>,
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn new(tokens: Vec<Token>) -> Self {
        Sentence {
            id: None,
            comments: Vec::new(),
            tokens,
        }
    }

    /// Build an untagged sentence from whitespace-separated words.
    pub fn from_words(text: &str) -> Self {
        Sentence::new(text.split_whitespace().map(Token::new).collect())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.surface.as_str())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ReadOptions {
    /// Sentences with more tokens than this are dropped. `None` keeps all.
    pub max_sentence_len: Option<usize>,
}

impl Default for ReadOptions {
    fn default() -> Self {
        ReadOptions {
            max_sentence_len: Some(DEFAULT_MAX_SENTENCE_LEN),
        }
    }
}

impl ReadOptions {
    pub fn unlimited() -> Self {
        ReadOptions {
            max_sentence_len: None,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParsedCorpus {
    pub sentences: Vec<Sentence>,
    /// Sentences dropped by the length cap.
    pub excluded: usize,
}

/// Which tag is written into the UPOS/FEATS columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TagColumn {
    Gold,
    Predicted,
}

fn parse_block(block: &[(usize, &str)]) -> Result<Option<Sentence>, CorpusError> {
    let mut sentence = Sentence::default();
    for &(line_no, line) in block {
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(id) = comment.trim().strip_prefix("sent_id") {
                let id = id.trim_start().trim_start_matches('=').trim();
                sentence.id = Some(id.to_string());
            }
            sentence.comments.push(line.to_string());
            continue;
        }
        let columns: Vec<&str> = line.split('\t').collect();
        if columns.len() != N_COLUMNS {
            return Err(CorpusError::ColumnCount {
                line: line_no,
                found: columns.len(),
            });
        }
        // Multi-word token ranges and empty nodes.
        if columns[0].contains('-') || columns[0].contains('.') {
            continue;
        }
        let surface = columns[FORM].trim();
        if surface.is_empty() {
            return Err(CorpusError::EmptyForm { line: line_no });
        }
        let feats_offset: usize = columns[..FEATS].iter().map(|c| c.chars().count() + 1).sum();
        let feats = parse_feats(columns[FEATS]).map_err(|e| CorpusError::Feats {
            line: line_no,
            source: e.shifted(feats_offset),
        })?;
        let gold = if columns[UPOS] == EMPTY {
            None
        } else {
            Some(MorphTag::from_parts(columns[UPOS], feats)?)
        };
        sentence.tokens.push(Token {
            surface: surface.to_string(),
            gold,
            predicted: None,
            columns: Some(columns.iter().map(|c| c.to_string()).collect()),
        });
    }
    if sentence.tokens.is_empty() {
        Ok(None)
    } else {
        Ok(Some(sentence))
    }
}

fn blocks(text: &str) -> Vec<Vec<(usize, &str)>> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
        } else {
            current.push((i + 1, line));
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

fn apply_cap(sentences: Vec<Sentence>, options: ReadOptions) -> ParsedCorpus {
    let mut parsed = ParsedCorpus::default();
    for s in sentences {
        match options.max_sentence_len {
            Some(max) if s.len() > max => parsed.excluded += 1,
            _ => parsed.sentences.push(s),
        }
    }
    parsed
}

/// Parse an annotated corpus. Sentence order follows the input.
pub fn parse_corpus(
    text: &str,
    options: ReadOptions,
    exec: Execution,
) -> Result<ParsedCorpus, CorpusError> {
    let blocks = blocks(text);
    let parsed = exec::map(exec, &blocks, |b| parse_block(b));
    let mut sentences = Vec::with_capacity(parsed.len());
    for s in parsed {
        if let Some(s) = s? {
            sentences.push(s);
        }
    }
    Ok(apply_cap(sentences, options))
}

/// Parse raw text: one tokenized sentence per line, tokens separated by spaces.
pub fn parse_raw(text: &str, options: ReadOptions) -> ParsedCorpus {
    let sentences = text
        .lines()
        .map(Sentence::from_words)
        .filter(|s| !s.is_empty())
        .collect();
    apply_cap(sentences, options)
}

pub fn write_raw(sentences: &[Sentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&s.words().collect::<Vec<_>>().join(" "));
        out.push('\n');
    }
    out
}

/// Render sentences in the annotated-corpus format.
///
/// Columns other than FORM, UPOS and FEATS are copied from the input when
/// available, and filled with `_` otherwise.
pub fn write_corpus(sentences: &[Sentence], which: TagColumn) -> String {
    let mut out = String::new();
    for s in sentences {
        for c in &s.comments {
            out.push_str(c);
            out.push('\n');
        }
        for (i, token) in s.tokens.iter().enumerate() {
            let mut columns = token.columns.clone().unwrap_or_else(|| {
                let mut c = vec![EMPTY.to_string(); N_COLUMNS];
                c[0] = (i + 1).to_string();
                c
            });
            let tag = match which {
                TagColumn::Gold => token.gold.as_ref(),
                TagColumn::Predicted => token.predicted.as_ref(),
            };
            columns[FORM] = token.surface.clone();
            columns[UPOS] = tag.map_or_else(|| EMPTY.to_string(), |t| t.pos().to_string());
            columns[FEATS] = tag.map_or_else(|| EMPTY.to_string(), MorphTag::feats_field);
            out.push_str(&columns.join("\t"));
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Dense index over distinct composite tags, in first-occurrence order.
#[derive(Clone, Debug, Default)]
pub struct TagInventory {
    tags: Vec<MorphTag>,
    index: HashMap<MorphTag, usize>,
    attribute_types: BTreeSet<String>,
    attribute_values: BTreeSet<AttributeValue>,
}

impl PartialEq for TagInventory {
    fn eq(&self, other: &Self) -> bool {
        self.tags == other.tags
    }
}

impl TagInventory {
    pub fn new() -> Self {
        TagInventory::default()
    }

    pub fn from_tags<'a, I: IntoIterator<Item = &'a MorphTag>>(tags: I) -> Self {
        let mut inv = TagInventory::new();
        for t in tags {
            inv.insert(t);
        }
        inv
    }

    /// Index of `tag`, inserting it if it is new.
    pub fn insert(&mut self, tag: &MorphTag) -> usize {
        if let Some(&i) = self.index.get(tag) {
            return i;
        }
        let i = self.tags.len();
        for av in tag.attribute_values() {
            self.attribute_types.insert(av.attribute.clone());
            self.attribute_values.insert(av);
        }
        self.tags.push(tag.clone());
        self.index.insert(tag.clone(), i);
        i
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn lookup(&self, tag: &MorphTag) -> Option<usize> {
        self.index.get(tag).copied()
    }

    pub fn tag_at(&self, index: usize) -> Option<&MorphTag> {
        self.tags.get(index)
    }

    pub fn tags(&self) -> &[MorphTag] {
        &self.tags
    }

    pub fn attribute_types(&self) -> &BTreeSet<String> {
        &self.attribute_types
    }

    /// Feature pairs occurring in the tags (POS not included).
    pub fn attribute_values(&self) -> &BTreeSet<AttributeValue> {
        &self.attribute_values
    }

    pub fn pos_values(&self) -> BTreeSet<String> {
        self.tags.iter().map(|t| t.pos().to_string()).collect()
    }
}

impl Serialize for TagInventory {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.tags.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TagInventory {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let tags = Vec::<MorphTag>::deserialize(deserializer)?;
        let inv = TagInventory::from_tags(&tags);
        if inv.len() != tags.len() {
            return Err(serde::de::Error::custom("duplicate tags in inventory"));
        }
        Ok(inv)
    }
}

/// Collect the distinct gold tags of `corpus`.
pub fn build_tag_inventory(corpus: &[Sentence]) -> Result<TagInventory, CorpusError> {
    if corpus.iter().all(Sentence::is_empty) {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut inv = TagInventory::new();
    for (si, s) in corpus.iter().enumerate() {
        for (ti, t) in s.tokens.iter().enumerate() {
            let tag = t.gold.as_ref().ok_or(CorpusError::Untagged {
                sentence: si,
                token: ti,
            })?;
            inv.insert(tag);
        }
    }
    Ok(inv)
}

/// Drop gold features whose attribute is not in `keep`. The POS is always kept.
pub fn restrict_to_attribute_types(corpus: &[Sentence], keep: &BTreeSet<String>) -> Vec<Sentence> {
    corpus
        .iter()
        .map(|s| {
            let mut s = s.clone();
            for t in &mut s.tokens {
                if let Some(g) = &t.gold {
                    t.gold = Some(g.restrict(keep));
                }
            }
            s
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tag(s: &str) -> MorphTag {
        s.parse().unwrap()
    }

    fn line(id: usize, form: &str, upos: &str, feats: &str) -> String {
        format!("{id}\t{form}\t_\t{upos}\t_\t{feats}\t0\troot\t_\t_")
    }

    #[test]
    fn feats_examples() {
        let f = parse_feats("Case=Nom|Number=Sing").unwrap();
        let expect: BTreeSet<_> = [
            AttributeValue::new("Case", "Nom").unwrap(),
            AttributeValue::new("Number", "Sing").unwrap(),
        ]
        .into_iter()
        .collect();
        assert_eq!(f, expect);
        assert!(parse_feats("_").unwrap().is_empty());
        let err = parse_feats("Number=Sing|Number=Plur").unwrap_err();
        assert_eq!(
            err,
            FeatsError::DuplicateAttribute {
                column: 13,
                attribute: "Number".into()
            }
        );
        assert!(matches!(parse_feats("Case"), Err(FeatsError::MissingEquals { column: 1, .. })));
    }

    #[test]
    fn feats_error_reports_line_and_column() {
        let text = format!("{}\n{}\n", line(1, "a", "X", "_"), line(2, "b", "X", "Case=Nom|Gen"));
        let err = parse_corpus(&text, ReadOptions::default(), Execution::Sequential).unwrap_err();
        match err {
            CorpusError::Feats { line, source } => {
                assert_eq!(line, 2);
                // "2\tb\t_\tX\t_\t" is 10 chars, then "Case=Nom|" is 9 more.
                assert_eq!(source.column(), 20);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn canonical_rendering() {
        let t = MorphTag::from_parts(
            "NOUN",
            [
                AttributeValue::new("Number", "Sing").unwrap(),
                AttributeValue::new("Case", "Nom").unwrap(),
            ],
        )
        .unwrap();
        assert_eq!(t.to_string(), "NOUN|Case=Nom|Number=Sing");
        assert_eq!(tag("NOUN|Number=Sing|Case=Nom"), t);
        assert_eq!(tag("PUNCT").to_string(), "PUNCT");
        assert!("NOUN|Case=Nom|Case=Gen".parse::<MorphTag>().is_err());
        assert!(AttributeValue::new("Ca|se", "Nom").is_err());
        assert!(AttributeValue::new("Case", "").is_err());
    }

    #[test]
    fn parse_two_tokens() {
        let text = format!(
            "# sent_id = s1\n# text = huis x\n{}\n{}\n\n",
            line(1, "huis", "NOUN", "Number=Sing"),
            line(2, "x", "X", "_")
        );
        let parsed = parse_corpus(&text, ReadOptions::default(), Execution::Parallel).unwrap();
        assert_eq!(parsed.sentences.len(), 1);
        let s = &parsed.sentences[0];
        assert_eq!(s.id.as_deref(), Some("s1"));
        assert_eq!(s.len(), 2);
        assert_eq!(s.tokens[0].gold.as_ref().unwrap().to_string(), "NOUN|Number=Sing");
    }

    #[test]
    fn skips_ranges_and_empty_nodes() {
        let text = format!(
            "1-2\tdel\t_\t_\t_\t_\t_\t_\t_\t_\n{}\n{}\n2.1\tx\t_\tX\t_\t_\t_\t_\t_\t_\n",
            line(1, "de", "ADP", "_"),
            line(2, "el", "DET", "_")
        );
        let parsed = parse_corpus(&text, ReadOptions::default(), Execution::Sequential).unwrap();
        assert_eq!(parsed.sentences[0].len(), 2);
    }

    #[test]
    fn wrong_column_count() {
        let text = "1\ta\tX\n";
        match parse_corpus(text, ReadOptions::default(), Execution::Sequential) {
            Err(CorpusError::ColumnCount { line: 1, found: 3 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn length_cap_excludes_long_sentences() {
        let long: Vec<String> = (1..=81).map(|i| line(i, "w", "X", "_")).collect();
        let short: Vec<String> = (1..=80).map(|i| line(i, "w", "X", "_")).collect();
        let text = format!("{}\n\n{}\n", long.join("\n"), short.join("\n"));
        let parsed = parse_corpus(&text, ReadOptions::default(), Execution::Sequential).unwrap();
        assert_eq!(parsed.excluded, 1);
        assert_eq!(parsed.sentences.len(), 1);
        assert_eq!(parsed.sentences[0].len(), 80);
    }

    #[test]
    fn inventory_first_occurrence() {
        let a = tag("NOUN|Number=Sing");
        let b = tag("VERB");
        let s = Sentence::new(vec![
            Token::with_gold("x", a.clone()),
            Token::with_gold("y", b.clone()),
            Token::with_gold("z", a.clone()),
        ]);
        let inv = build_tag_inventory(&[s]).unwrap();
        assert_eq!(inv.len(), 2);
        assert_eq!(inv.lookup(&a), Some(0));
        assert_eq!(inv.lookup(&b), Some(1));
        assert_eq!(inv.tag_at(1), Some(&b));
        assert_eq!(inv.attribute_types().iter().collect::<Vec<_>>(), vec!["Number"]);
        assert!(matches!(build_tag_inventory(&[]), Err(CorpusError::EmptyCorpus)));
        let untagged = Sentence::from_words("a b");
        assert!(matches!(
            build_tag_inventory(&[untagged]),
            Err(CorpusError::Untagged { sentence: 0, token: 0 })
        ));
    }

    #[test]
    fn restrict_examples() {
        let keep: BTreeSet<String> = ["Number".to_string()].into_iter().collect();
        let s = Sentence::new(vec![
            Token::with_gold("a", tag("NOUN|Case=Nom|Number=Sing")),
            Token::with_gold("b", tag("ADP")),
        ]);
        let r = restrict_to_attribute_types(std::slice::from_ref(&s), &keep);
        assert_eq!(r[0].tokens[0].gold, Some(tag("NOUN|Number=Sing")));
        assert_eq!(r[0].tokens[1].gold, Some(tag("ADP")));
        let all: BTreeSet<String> = ["Case", "Number"].iter().map(|s| s.to_string()).collect();
        assert_eq!(restrict_to_attribute_types(std::slice::from_ref(&s), &all)[0], s);
    }

    #[test]
    fn write_through_keeps_other_columns() {
        let text = "1\tHuis\thuis\tNOUN\tN\tNumber=Sing\t0\troot\t_\tSpaceAfter=No\n\n";
        let mut parsed = parse_corpus(text, ReadOptions::default(), Execution::Sequential).unwrap();
        assert_eq!(write_corpus(&parsed.sentences, TagColumn::Gold), text);
        parsed.sentences[0].tokens[0].predicted = Some(tag("VERB|Tense=Past"));
        assert_eq!(
            write_corpus(&parsed.sentences, TagColumn::Predicted),
            "1\tHuis\thuis\tVERB\tN\tTense=Past\t0\troot\t_\tSpaceAfter=No\n\n"
        );
    }

    #[test]
    fn raw_text() {
        let parsed = parse_raw("a b c\n\nd e\n", ReadOptions::default());
        assert_eq!(parsed.sentences.len(), 2);
        assert_eq!(write_raw(&parsed.sentences), "a b c\nd e\n");
    }

    fn arb_tag() -> impl Strategy<Value = MorphTag> {
        let pos = prop::sample::select(vec!["NOUN", "VERB", "ADJ", "PUNCT"]);
        let feats = prop::collection::btree_map(
            prop::sample::select(vec!["Case", "Number", "Gender", "Tense"]),
            prop::sample::select(vec!["Nom", "Acc", "Sing", "Plur"]),
            0..4,
        );
        (pos, feats).prop_map(|(p, f)| {
            MorphTag::from_parts(p, f.into_iter().map(|(a, v)| AttributeValue::new(a, v).unwrap()))
                .unwrap()
        })
    }

    fn arb_sentences() -> impl Strategy<Value = Vec<Sentence>> {
        let token = ("[a-zA-Z]{1,6}", arb_tag()).prop_map(|(w, t)| Token::with_gold(w, t));
        prop::collection::vec(
            prop::collection::vec(token, 1..6).prop_map(Sentence::new),
            1..5,
        )
    }

    proptest! {
        #[test]
        fn serialize_parse_round_trip(corpus in arb_sentences()) {
            let text = write_corpus(&corpus, TagColumn::Gold);
            let parsed = parse_corpus(&text, ReadOptions::unlimited(), Execution::Sequential).unwrap();
            prop_assert_eq!(parsed.sentences.len(), corpus.len());
            for (a, b) in parsed.sentences.iter().zip(&corpus) {
                let lhs: Vec<_> = a.tokens.iter().map(|t| (&t.surface, &t.gold)).collect();
                let rhs: Vec<_> = b.tokens.iter().map(|t| (&t.surface, &t.gold)).collect();
                prop_assert_eq!(lhs, rhs);
            }
            // And the rendering is a fixed point.
            prop_assert_eq!(write_corpus(&parsed.sentences, TagColumn::Gold), text);
        }

        #[test]
        fn feats_order_insensitive(t in arb_tag(), seed in any::<u64>()) {
            let mut pairs: Vec<String> = t.features().map(|(a, v)| format!("{a}={v}")).collect();
            let n = pairs.len();
            if n > 1 {
                pairs.rotate_left((seed as usize) % n);
            }
            let field = if pairs.is_empty() { "_".to_string() } else { pairs.join("|") };
            let parsed = parse_feats(&field).unwrap();
            prop_assert_eq!(parsed, t.attribute_values().collect::<BTreeSet<_>>());
        }

        #[test]
        fn restrict_idempotent(corpus in arb_sentences(), keep_case in any::<bool>(), keep_num in any::<bool>()) {
            let mut keep = BTreeSet::new();
            if keep_case { keep.insert("Case".to_string()); }
            if keep_num { keep.insert("Number".to_string()); }
            let once = restrict_to_attribute_types(&corpus, &keep);
            let twice = restrict_to_attribute_types(&once, &keep);
            prop_assert_eq!(once, twice);
        }
    }
}
