//! Text formats for bitext, directional alignments, type dictionaries and
//! lattice corpora.

use std::fmt::Write as _;

use crate::corpus::{MorphTag, Sentence, TagInventory};

use super::{
    BitextPair, ConstraintLattice, ConstraintMode, DirectionalLink, ProjectionError, TagSet,
    TypeDictionary,
};

const SEPARATOR: &str = "|||";

fn format_err(line: usize, message: impl Into<String>) -> ProjectionError {
    ProjectionError::Format {
        line,
        message: message.into(),
    }
}

#[derive(Clone, Debug, Default)]
pub struct ReadBitext {
    pub pairs: Vec<BitextPair>,
    /// Pairs with an empty side.
    pub empty: usize,
    /// Pairs with a side longer than the length cap.
    pub too_long: usize,
}

/// Read `source ||| target` lines. Pairs with an empty side, or a side over
/// `max_len` tokens, are dropped and counted.
pub fn read_bitext(text: &str, max_len: Option<usize>) -> Result<ReadBitext, ProjectionError> {
    let mut out = ReadBitext::default();
    for (i, line) in text.lines().enumerate() {
        let Some((src, tgt)) = line.split_once(SEPARATOR) else {
            if line.trim().is_empty() {
                out.empty += 1;
                continue;
            }
            return Err(format_err(i + 1, "missing ' ||| ' separator"));
        };
        let pair = BitextPair::new(src, tgt);
        if pair.source.is_empty() || pair.target.is_empty() {
            out.empty += 1;
        } else if max_len.is_some_and(|m| pair.source.len() > m || pair.target.len() > m) {
            out.too_long += 1;
        } else {
            out.pairs.push(pair);
        }
    }
    Ok(out)
}

pub fn write_bitext(pairs: &[BitextPair]) -> String {
    let mut out = String::new();
    for p in pairs {
        let _ = writeln!(out, "{} {SEPARATOR} {}", p.source.join(" "), p.target.join(" "));
    }
    out
}

/// One line per sentence pair of space-separated `i-j:p` triples.
pub fn read_alignments(text: &str) -> Result<Vec<Vec<DirectionalLink>>, ProjectionError> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            line.split_whitespace()
                .map(|item| {
                    let parse = || -> Option<DirectionalLink> {
                        let (pair, p) = item.split_once(':')?;
                        let (s, t) = pair.split_once('-')?;
                        Some(DirectionalLink {
                            src: s.parse().ok()?,
                            tgt: t.parse().ok()?,
                            posterior: p.parse().ok()?,
                        })
                    };
                    let link = parse().ok_or_else(|| format_err(i + 1, format!("bad link {item:?}")))?;
                    if !(0.0..=1.0).contains(&link.posterior) {
                        return Err(format_err(i + 1, format!("posterior out of [0,1] in {item:?}")));
                    }
                    Ok(link)
                })
                .collect()
        })
        .collect()
}

pub fn write_alignments(links: &[Vec<DirectionalLink>]) -> String {
    let mut out = String::new();
    for sentence in links {
        let items: Vec<String> = sentence
            .iter()
            .map(|l| format!("{}-{}:{:.9}", l.src, l.tgt, l.posterior))
            .collect();
        out.push_str(&items.join(" "));
        out.push('\n');
    }
    out
}

/// `word<TAB>tag1<TAB>tag2...`, one line per type in sorted order; empty
/// entries are written as the bare word.
pub fn write_dictionary(dict: &TypeDictionary) -> String {
    let mut out = String::new();
    for (word, entry) in dict.entries() {
        out.push_str(word);
        for &i in entry {
            out.push('\t');
            out.push_str(&dict.inventory().tag_at(i).expect("index in inventory").to_string());
        }
        out.push('\n');
    }
    out
}

/// Read a dictionary file. Tags missing from `inventory` are appended to it.
pub fn read_dictionary(text: &str, inventory: TagInventory) -> Result<TypeDictionary, ProjectionError> {
    let mut dict = TypeDictionary::new(inventory);
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let word = fields.next().unwrap_or_default();
        if word.is_empty() {
            return Err(format_err(i + 1, "empty word"));
        }
        dict.touch(word);
        for f in fields {
            let tag: MorphTag = f.parse().map_err(|e| format_err(i + 1, format!("{e}")))?;
            dict.add(word, &tag);
        }
    }
    Ok(dict)
}

/// Serialize lattices with their tag inventory.
///
/// ```text
/// #mode<TAB>type
/// #tag<TAB>NOUN|Number=Sing
/// ...
///
/// huis<TAB>NOUN|Number=Sing
/// loopt<TAB>*
/// ```
///
/// `*` marks an unconstrained token; sentences are separated by blank lines.
pub fn write_lattices(
    lattices: &[ConstraintLattice],
    inventory: &TagInventory,
    mode: &str,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "#mode\t{mode}");
    for t in inventory.tags() {
        let _ = writeln!(out, "#tag\t{t}");
    }
    out.push('\n');
    for lattice in lattices {
        for (tok, allowed) in lattice.sentence.tokens.iter().zip(&lattice.allowed) {
            out.push_str(&tok.surface);
            match allowed {
                TagSet::All => out.push_str("\t*"),
                TagSet::Only(v) => {
                    for &i in v {
                        out.push('\t');
                        out.push_str(&inventory.tag_at(i).expect("index in inventory").to_string());
                    }
                }
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug)]
pub struct LatticeFile {
    pub mode: String,
    pub inventory: TagInventory,
    pub lattices: Vec<ConstraintLattice>,
}

impl LatticeFile {
    pub fn constraint_mode(&self) -> Option<ConstraintMode> {
        self.mode.parse().ok()
    }
}

pub fn read_lattices(text: &str) -> Result<LatticeFile, ProjectionError> {
    let mut mode = String::new();
    let mut inventory = TagInventory::new();
    let mut lattices = Vec::new();
    let mut sentence = Sentence::default();
    let mut allowed = Vec::new();
    let mut flush = |sentence: &mut Sentence, allowed: &mut Vec<TagSet>, n: usize| {
        if !sentence.is_empty() {
            lattices.push(ConstraintLattice {
                sentence: std::mem::take(sentence),
                allowed: std::mem::take(allowed),
                num_tags: n,
            });
        }
    };
    for (i, line) in text.lines().enumerate() {
        if let Some(m) = line.strip_prefix("#mode\t") {
            mode = m.to_string();
            continue;
        }
        if let Some(t) = line.strip_prefix("#tag\t") {
            let tag: MorphTag = t.parse().map_err(|e| format_err(i + 1, format!("{e}")))?;
            inventory.insert(&tag);
            continue;
        }
        if line.is_empty() {
            flush(&mut sentence, &mut allowed, inventory.len());
            continue;
        }
        let mut fields = line.split('\t');
        let word = fields.next().unwrap_or_default();
        let rest: Vec<&str> = fields.collect();
        let set = if rest == ["*"] {
            TagSet::All
        } else {
            let mut idx = rest
                .iter()
                .map(|f| {
                    let tag: MorphTag = f.parse().map_err(|e| format_err(i + 1, format!("{e}")))?;
                    inventory
                        .lookup(&tag)
                        .ok_or_else(|| format_err(i + 1, format!("tag {tag} not declared")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            if idx.is_empty() {
                return Err(format_err(i + 1, "token without permitted tags"));
            }
            idx.sort_unstable();
            idx.dedup();
            TagSet::Only(idx)
        };
        sentence.tokens.push(crate::corpus::Token::new(word));
        allowed.push(set);
    }
    flush(&mut sentence, &mut allowed, inventory.len());
    Ok(LatticeFile {
        mode,
        inventory,
        lattices,
    })
}
