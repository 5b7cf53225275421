//! Per-attribute precision/recall/F1, macro-F1 and POS accuracy under the
//! Standard, Intersected and POS-only settings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{MorphTag, Sentence};
use crate::exec::{self, Execution};

/// Name under which POS is scored alongside the features.
pub const POS: &str = "POS";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold has {gold} tokens, predictions have {predicted}")]
    TokenCount { gold: usize, predicted: usize },
    #[error("sentence {sentence}, token {token}: missing {which} tag")]
    Untagged {
        sentence: usize,
        token: usize,
        which: &'static str,
    },
    #[error("unknown evaluation mode {0:?}")]
    UnknownMode(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Keep attribute types found in both training corpora; values are
    /// scored as they are.
    Standard,
    /// Keep only attribute-value pairs found in both training corpora.
    Intersected,
    /// POS only.
    Pos,
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Standard => "standard",
            EvalMode::Intersected => "intersected",
            EvalMode::Pos => "pos",
        })
    }
}

impl FromStr for EvalMode {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(EvalMode::Standard),
            "intersected" => Ok(EvalMode::Intersected),
            "pos" => Ok(EvalMode::Pos),
            other => Err(EvalError::UnknownMode(other.to_string())),
        }
    }
}

/// Which attribute types enter the macro average.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MacroScope {
    /// Types present in gold or predictions after filtering.
    #[default]
    Observed,
    /// Every shared training type, scoring zero where never observed.
    Shared,
}

/// What is scored, derived from the two training corpora.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub mode: EvalMode,
    pub scope: MacroScope,
    /// POS values of the target training corpus, for remapping.
    pub target_pos: BTreeSet<String>,
    /// Attribute types in both corpora, `POS` included.
    pub shared_types: BTreeSet<String>,
    /// `(attribute, value)` pairs in both corpora, with POS values under
    /// `POS`.
    pub shared_values: BTreeSet<(String, String)>,
}

fn pairs_of(tag: &MorphTag) -> impl Iterator<Item = (String, String)> + '_ {
    std::iter::once((POS.to_string(), tag.pos().to_string()))
        .chain(tag.features().map(|(a, v)| (a.to_string(), v.to_string())))
}

fn corpus_pairs(corpus: &[Sentence]) -> BTreeSet<(String, String)> {
    corpus
        .iter()
        .flat_map(|s| &s.tokens)
        .filter_map(|t| t.gold.as_ref())
        .flat_map(|t| pairs_of(t).collect::<Vec<_>>())
        .collect()
}

impl EvalConfig {
    /// Derive the shared sets from the gold tags of both training corpora.
    pub fn derive(mode: EvalMode, source_train: &[Sentence], target_train: &[Sentence]) -> Self {
        let src = corpus_pairs(source_train);
        let tgt = corpus_pairs(target_train);
        let types = |s: &BTreeSet<(String, String)>| -> BTreeSet<String> { s.iter().map(|p| p.0.clone()).collect() };
        let mut shared_types: BTreeSet<String> = types(&src).intersection(&types(&tgt)).cloned().collect();
        shared_types.insert(POS.to_string());
        EvalConfig {
            mode,
            scope: MacroScope::default(),
            target_pos: tgt.iter().filter(|p| p.0 == POS).map(|p| p.1.clone()).collect(),
            shared_types,
            shared_values: src.intersection(&tgt).cloned().collect(),
        }
    }
}

fn fallback(pos: &str) -> Option<&'static str> {
    match pos {
        "PROPN" => Some("NOUN"),
        "SYM" | "INTJ" => Some("X"),
        "X" => Some("PUNCT"),
        _ => None,
    }
}

/// Map a predicted POS missing from the target inventory along
/// PROPN→NOUN, SYM/INTJ→X, X→PUNCT until it lands in the inventory. Values
/// that never land are left unchanged.
pub fn standard_remap_pos(pos: &str, target: &BTreeSet<String>) -> String {
    let mut current = pos;
    while !target.contains(current) {
        match fallback(current) {
            Some(next) => current = next,
            None => return pos.to_string(),
        }
    }
    current.to_string()
}

type Pairs = BTreeMap<String, String>;

fn tag_pairs(tag: &MorphTag) -> Pairs {
    pairs_of(tag).collect()
}

/// Keep POS and attributes of the shared types.
pub fn standard_filter(gold: &MorphTag, pred: &MorphTag, shared_types: &BTreeSet<String>) -> (Pairs, Pairs) {
    let keep = |t: &MorphTag| -> Pairs {
        tag_pairs(t)
            .into_iter()
            .filter(|(a, _)| a == POS || shared_types.contains(a))
            .collect()
    };
    (keep(gold), keep(pred))
}

/// Keep only shared attribute-value pairs.
pub fn intersected_filter(
    gold: &MorphTag,
    pred: &MorphTag,
    shared_values: &BTreeSet<(String, String)>,
) -> (Pairs, Pairs) {
    let keep = |t: &MorphTag| -> Pairs {
        tag_pairs(t)
            .into_iter()
            .filter(|p| shared_values.contains(p))
            .collect()
    };
    (keep(gold), keep(pred))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Add one token's contribution. A wrong value is both a false positive and
/// a false negative.
pub fn count_token(gold: &Pairs, pred: &Pairs, counts: &mut BTreeMap<String, Counts>) {
    for (a, v) in gold {
        let c = counts.entry(a.clone()).or_default();
        match pred.get(a) {
            Some(p) if p == v => c.tp += 1,
            _ => c.fn_ += 1,
        }
    }
    for (a, v) in pred {
        if gold.get(a) != Some(v) {
            counts.entry(a.clone()).or_default().fp += 1;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub per_attribute: BTreeMap<String, Counts>,
    pub macro_f1: f64,
    pub pos_accuracy: f64,
    pub token_count: usize,
}

#[derive(Default)]
struct Tally {
    counts: BTreeMap<String, Counts>,
    pos_correct: usize,
    tokens: usize,
}

/// Score predictions against gold, token by token. Predictions are read
/// from `predicted` tags, falling back to the gold column of the predicted
/// corpus.
pub fn score(gold: &[Sentence], pred: &[Sentence], config: &EvalConfig, exec: Execution) -> Result<EvalReport, EvalError> {
    let flatten = |c: &[Sentence], predicted: bool| -> Result<Vec<MorphTag>, EvalError> {
        let mut out = Vec::new();
        for (si, s) in c.iter().enumerate() {
            for (ti, t) in s.tokens.iter().enumerate() {
                let tag = if predicted { t.predicted.as_ref().or(t.gold.as_ref()) } else { t.gold.as_ref() };
                out.push(tag.cloned().ok_or(EvalError::Untagged {
                    sentence: si,
                    token: ti,
                    which: if predicted { "predicted" } else { "gold" },
                })?);
            }
        }
        Ok(out)
    };
    let g = flatten(gold, false)?;
    let p = flatten(pred, true)?;
    if g.len() != p.len() {
        return Err(EvalError::TokenCount {
            gold: g.len(),
            predicted: p.len(),
        });
    }
    let pairs: Vec<(&MorphTag, &MorphTag)> = g.iter().zip(&p).collect();
    let tally = exec::chunked_reduce(
        exec,
        &pairs,
        4096,
        Tally::default,
        |acc, &(gold, pred)| {
            let remapped = MorphTag::from_parts(
                standard_remap_pos(pred.pos(), &config.target_pos),
                pred.attribute_values(),
            )
            .expect("valid tag stays valid");
            acc.tokens += 1;
            acc.pos_correct += (remapped.pos() == gold.pos()) as usize;
            let (gp, pp) = match config.mode {
                EvalMode::Standard => standard_filter(gold, &remapped, &config.shared_types),
                EvalMode::Intersected => intersected_filter(gold, &remapped, &config.shared_values),
                EvalMode::Pos => {
                    let only = |t: &MorphTag| Pairs::from([(POS.to_string(), t.pos().to_string())]);
                    (only(gold), only(&remapped))
                }
            };
            count_token(&gp, &pp, &mut acc.counts);
        },
        |total, part| {
            total.tokens += part.tokens;
            total.pos_correct += part.pos_correct;
            for (a, c) in part.counts {
                let t = total.counts.entry(a).or_default();
                t.tp += c.tp;
                t.fp += c.fp;
                t.fn_ += c.fn_;
            }
        },
    );
    let mut per_attribute = tally.counts;
    if config.scope == MacroScope::Shared && config.mode != EvalMode::Pos {
        for a in &config.shared_types {
            per_attribute.entry(a.clone()).or_default();
        }
    }
    let macro_f1 = if per_attribute.is_empty() {
        0.0
    } else {
        per_attribute.values().map(Counts::f1).sum::<f64>() / per_attribute.len() as f64
    };
    Ok(EvalReport {
        mode: config.mode,
        per_attribute,
        macro_f1,
        pos_accuracy: ratio(tally.pos_correct as u64, tally.tokens as u64),
        token_count: tally.tokens,
    })
}

impl EvalReport {
    /// Attributes in report order: POS first, then by name.
    fn ordered(&self) -> impl Iterator<Item = (&String, &Counts)> {
        let pos = self.per_attribute.iter().filter(|(a, _)| *a == POS);
        pos.chain(self.per_attribute.iter().filter(|(a, _)| *a != POS))
    }

    /// Tab-separated report with fixed precision.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (a, c) in self.ordered() {
            let _ = writeln!(
                out,
                "{a}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}",
                c.tp,
                c.fp,
                c.fn_,
                c.precision(),
                c.recall(),
                c.f1()
            );
        }
        let _ = writeln!(out, "MACRO_F1\t{:.6}", self.macro_f1);
        let _ = writeln!(out, "POS_ACC\t{:.6}", self.pos_accuracy);
        out
    }

    /// Aligned table for people.
    pub fn to_table(&self) -> String {
        let width = self.ordered().map(|(a, _)| a.len()).max().unwrap_or(0).max(9);
        let mut out = format!(
            "{:<width$}  {:>8} {:>8} {:>8} {:>7} {:>7} {:>7}\n",
            "attribute", "tp", "fp", "fn", "P", "R", "F1"
        );
        for (a, c) in self.ordered() {
            let _ = writeln!(
                out,
                "{a:<width$}  {:>8} {:>8} {:>8} {:>7.2} {:>7.2} {:>7.2}",
                c.tp,
                c.fp,
                c.fn_,
                100.0 * c.precision(),
                100.0 * c.recall(),
                100.0 * c.f1()
            );
        }
        let _ = writeln!(out, "\n{} mode, {} tokens", self.mode, self.token_count);
        let _ = writeln!(out, "macro F1      {:.2}", 100.0 * self.macro_f1);
        let _ = writeln!(out, "POS accuracy  {:.2}", 100.0 * self.pos_accuracy);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Token;
    use proptest::prelude::*;

    fn tag(s: &str) -> MorphTag {
        s.parse().unwrap()
    }

    fn corpus(tags: &[&str]) -> Vec<Sentence> {
        vec![Sentence::new(
            tags.iter()
                .enumerate()
                .map(|(i, t)| Token::with_gold(format!("w{i}"), tag(t)))
                .collect(),
        )]
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn remap_chain() {
        let ud = set(&["NOUN", "VERB", "PUNCT", "X"]);
        assert_eq!(standard_remap_pos("PROPN", &ud), "NOUN");
        assert_eq!(standard_remap_pos("SYM", &ud), "X");
        assert_eq!(standard_remap_pos("INTJ", &ud), "X");
        let no_x = set(&["NOUN", "PUNCT"]);
        assert_eq!(standard_remap_pos("X", &no_x), "PUNCT");
        assert_eq!(standard_remap_pos("SYM", &no_x), "PUNCT");
        assert_eq!(standard_remap_pos("PROPN", &set(&["PROPN", "NOUN"])), "PROPN");
        assert_eq!(standard_remap_pos("PROPN", &set(&["VERB"])), "PROPN");
        assert_eq!(standard_remap_pos("SYM", &set(&["VERB"])), "SYM");
    }

    #[test]
    fn filters() {
        let (g, _) = standard_filter(&tag("NOUN|Case=Nom|Gender=Neut"), &tag("NOUN"), &set(&["POS", "Case"]));
        assert_eq!(g, tag_pairs(&tag("NOUN|Case=Nom")));
        let all = set(&["POS", "Case", "Gender"]);
        let t = tag("NOUN|Case=Nom|Gender=Neut");
        assert_eq!(standard_filter(&t, &t, &all).0, tag_pairs(&t));
        let (_, p) = standard_filter(&tag("NOUN"), &tag("NOUN|Case=Ess"), &set(&["POS", "Case"]));
        assert_eq!(p.get("Case").map(String::as_str), Some("Ess"));

        let shared: BTreeSet<(String, String)> =
            [("POS", "NOUN"), ("Case", "Nom")].iter().map(|(a, v)| (a.to_string(), v.to_string())).collect();
        let (g, p) = intersected_filter(&tag("NOUN|Case=Ess"), &tag("NOUN|Case=Nom"), &shared);
        assert_eq!(g, tag_pairs(&tag("NOUN")));
        assert_eq!(p, tag_pairs(&tag("NOUN|Case=Nom")));
    }

    #[test]
    fn hand_computed_macro() {
        // POS always right; Case right once, wrong once.
        let gold = corpus(&["NOUN|Case=Nom", "NOUN|Case=Acc"]);
        let pred = corpus(&["NOUN|Case=Nom", "NOUN|Case=Gen"]);
        let train = corpus(&["NOUN|Case=Nom"]);
        let config = EvalConfig::derive(EvalMode::Standard, &train, &train);
        let r = score(&gold, &pred, &config, Execution::Sequential).unwrap();
        assert_eq!(r.per_attribute["Case"], Counts { tp: 1, fp: 1, fn_: 1 });
        assert_eq!(r.per_attribute["POS"].f1(), 1.0);
        assert!((r.macro_f1 - 0.75).abs() < 1e-12);
        assert_eq!(r.pos_accuracy, 1.0);
        assert_eq!(
            r.to_tsv(),
            "POS\t2\t0\t0\t1.000000\t1.000000\t1.000000\n\
             Case\t1\t1\t1\t0.500000\t0.500000\t0.500000\n\
             MACRO_F1\t0.750000\nPOS_ACC\t1.000000\n"
        );
        assert!(r.to_table().contains("macro F1      75.00"));
    }

    #[test]
    fn identical_corpora_score_perfectly() {
        let c = corpus(&["NOUN|Case=Nom|Number=Sing", "VERB|Tense=Past", "PUNCT"]);
        for mode in [EvalMode::Standard, EvalMode::Intersected, EvalMode::Pos] {
            let r = score(&c, &c, &EvalConfig::derive(mode, &c, &c), Execution::Parallel).unwrap();
            assert_eq!(r.macro_f1, 1.0);
            assert_eq!(r.pos_accuracy, 1.0);
        }
    }

    #[test]
    fn pos_mode_and_remap_in_scoring() {
        let gold = corpus(&["NOUN|Case=Nom", "VERB"]);
        let pred = corpus(&["PROPN|Case=Acc", "NOUN"]);
        let config = EvalConfig::derive(EvalMode::Pos, &gold, &gold);
        let r = score(&gold, &pred, &config, Execution::Sequential).unwrap();
        assert_eq!(r.per_attribute.keys().collect::<Vec<_>>(), ["POS"]);
        assert_eq!(r.pos_accuracy, 0.5);
        assert_eq!(r.macro_f1, 0.5);
    }

    #[test]
    fn shared_scope_counts_unobserved_types() {
        let train = corpus(&["NOUN|Case=Nom|Number=Sing"]);
        let gold = corpus(&["NOUN|Case=Nom"]);
        let mut config = EvalConfig::derive(EvalMode::Standard, &train, &train);
        let observed = score(&gold, &gold, &config, Execution::Sequential).unwrap();
        assert_eq!(observed.macro_f1, 1.0);
        config.scope = MacroScope::Shared;
        let shared = score(&gold, &gold, &config, Execution::Sequential).unwrap();
        assert!((shared.macro_f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let a = corpus(&["NOUN"]);
        let b = corpus(&["NOUN", "VERB"]);
        let config = EvalConfig::derive(EvalMode::Standard, &a, &a);
        assert!(matches!(score(&a, &b, &config, Execution::Sequential), Err(EvalError::TokenCount { .. })));
        let untagged = vec![Sentence::from_words("x")];
        assert!(matches!(score(&untagged, &a, &config, Execution::Sequential), Err(EvalError::Untagged { .. })));
        assert!("bogus".parse::<EvalMode>().is_err());
    }

    fn arb_tag() -> impl Strategy<Value = MorphTag> {
        (
            prop::sample::select(vec!["NOUN", "VERB", "ADJ", "PROPN"]),
            prop::collection::btree_map(
                prop::sample::select(vec!["Case", "Number", "Gender"]),
                prop::sample::select(vec!["A", "B", "C"]),
                0..3,
            ),
        )
            .prop_map(|(pos, feats)| {
                MorphTag::from_parts(
                    pos,
                    feats.into_iter().map(|(a, v)| crate::corpus::AttributeValue::new(a, v).unwrap()),
                )
                .unwrap()
            })
    }

    fn arb_pairs() -> impl Strategy<Value = Vec<(MorphTag, MorphTag)>> {
        prop::collection::vec((arb_tag(), arb_tag()), 1..30)
    }

    fn to_corpora(pairs: &[(MorphTag, MorphTag)]) -> (Vec<Sentence>, Vec<Sentence>) {
        let g = pairs.iter().map(|(g, _)| Token::with_gold("w", g.clone())).collect();
        let p = pairs.iter().map(|(_, p)| Token::with_gold("w", p.clone())).collect();
        (vec![Sentence::new(g)], vec![Sentence::new(p)])
    }

    proptest! {
        #[test]
        fn dropping_unshared_pairs_never_hurts_an_attribute(pairs in arb_pairs(), train in prop::collection::vec(arb_tag(), 1..6)) {
            let (gold, pred) = to_corpora(&pairs);
            let train_corpus = vec![Sentence::new(train.iter().map(|t| Token::with_gold("w", t.clone())).collect())];
            let mut everything = EvalConfig::derive(EvalMode::Intersected, &gold, &gold);
            everything.shared_values = corpus_pairs(&gold).union(&corpus_pairs(&pred)).cloned().collect();
            everything.target_pos = corpus_pairs(&gold).into_iter().filter(|p| p.0 == POS).map(|p| p.1).collect();
            let mut filtered = everything.clone();
            filtered.shared_values = everything.shared_values.intersection(&corpus_pairs(&train_corpus)).cloned().collect();
            let full = score(&gold, &pred, &everything, Execution::Sequential).unwrap();
            let part = score(&gold, &pred, &filtered, Execution::Sequential).unwrap();
            for (a, c) in &part.per_attribute {
                let f = full.per_attribute.get(a).copied().unwrap_or_default();
                prop_assert!(c.fp + c.fn_ <= f.fp + f.fn_);
                prop_assert!(c.tp <= f.tp);
            }
        }

        #[test]
        fn gold_pairs_are_tp_plus_fn(pairs in arb_pairs()) {
            let (gold, pred) = to_corpora(&pairs);
            let config = EvalConfig::derive(EvalMode::Standard, &gold, &pred);
            let r = score(&gold, &pred, &config, Execution::Sequential).unwrap();
            for (a, c) in &r.per_attribute {
                let gold_pairs = pairs
                    .iter()
                    .filter(|(g, _)| a == POS || (config.shared_types.contains(a) && g.feature(a).is_some()))
                    .count() as u64;
                prop_assert_eq!(c.tp + c.fn_, gold_pairs);
            }
        }

        #[test]
        fn renaming_attributes_changes_nothing(pairs in arb_pairs()) {
            let rename = |t: &MorphTag| {
                MorphTag::from_parts(
                    t.pos(),
                    t.features().map(|(a, v)| crate::corpus::AttributeValue::new(format!("Z{a}"), v).unwrap()),
                )
                .unwrap()
            };
            let renamed: Vec<(MorphTag, MorphTag)> = pairs.iter().map(|(g, p)| (rename(g), rename(p))).collect();
            let (g1, p1) = to_corpora(&pairs);
            let (g2, p2) = to_corpora(&renamed);
            for mode in [EvalMode::Standard, EvalMode::Intersected] {
                let a = score(&g1, &p1, &EvalConfig::derive(mode, &g1, &p1), Execution::Sequential).unwrap();
                let b = score(&g2, &p2, &EvalConfig::derive(mode, &g2, &p2), Execution::Sequential).unwrap();
                prop_assert!((a.macro_f1 - b.macro_f1).abs() < 1e-12);
                let mut ca: Vec<Counts> = a.per_attribute.values().copied().collect();
                let mut cb: Vec<Counts> = b.per_attribute.values().copied().collect();
                ca.sort_by_key(|c| (c.tp, c.fp, c.fn_));
                cb.sort_by_key(|c| (c.tp, c.fp, c.fn_));
                prop_assert_eq!(ca, cb);
            }
        }
    }
}
