//! IBM Model 1 lexical alignment, trained by EM in both directions.
//!
//! This is a small self-contained aligner so that desk-scale runs do not need
//! an external tool. Each direction yields, for every word on the emitted
//! side, its single most probable generator together with the posterior of
//! that link.

use std::collections::HashMap;

use crate::exec::{self, Execution};

use super::ProjectionError;

/// A raw (untagged) sentence pair from the bitext.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitextPair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

impl BitextPair {
    pub fn new(source: &str, target: &str) -> Self {
        BitextPair {
            source: source.split_whitespace().map(String::from).collect(),
            target: target.split_whitespace().map(String::from).collect(),
        }
    }
}

/// One link produced by a single alignment direction. Indices are always
/// (source, target), whatever the direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirectionalLink {
    pub src: usize,
    pub tgt: usize,
    pub posterior: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DirectionalAlignments {
    /// Source-to-target direction: each target word picks a source word.
    pub forward: Vec<Vec<DirectionalLink>>,
    /// Target-to-source direction: each source word picks a target word.
    pub reverse: Vec<Vec<DirectionalLink>>,
}

type Key = (u32, u32);

/// Lexical translation table `t(emitted | generator)` for one direction.
#[derive(Clone, Debug, Default)]
pub struct Model1 {
    gen_vocab: HashMap<String, u32>,
    emit_vocab: HashMap<String, u32>,
    table: HashMap<Key, f64>,
    uniform: f64,
}

struct Encoded {
    gen: Vec<u32>,
    emit: Vec<u32>,
}

fn intern(vocab: &mut HashMap<String, u32>, w: &str) -> u32 {
    let next = vocab.len() as u32;
    *vocab.entry(w.to_string()).or_insert(next)
}

impl Model1 {
    /// Train `t(emitted | generator)` with `iterations` EM passes, starting
    /// from the uniform table.
    pub fn train(
        pairs: &[(&[String], &[String])],
        iterations: usize,
        exec: Execution,
    ) -> Result<Model1, ProjectionError> {
        if iterations == 0 {
            return Err(ProjectionError::ZeroIterations);
        }
        if pairs.is_empty() {
            return Err(ProjectionError::EmptyBitext);
        }
        let mut model = Model1::default();
        let encoded: Vec<Encoded> = pairs
            .iter()
            .map(|(gen, emit)| Encoded {
                gen: gen.iter().map(|w| intern(&mut model.gen_vocab, w)).collect(),
                emit: emit.iter().map(|w| intern(&mut model.emit_vocab, w)).collect(),
            })
            .collect();
        model.uniform = 1.0 / model.emit_vocab.len().max(1) as f64;

        for _ in 0..iterations {
            let counts = exec::chunked_reduce(
                exec,
                &encoded,
                512,
                HashMap::<Key, f64>::new,
                |acc, pair| {
                    for &f in &pair.emit {
                        let z: f64 = pair.gen.iter().map(|&e| model.prob_ids(e, f)).sum();
                        if z <= 0.0 {
                            continue;
                        }
                        for &e in &pair.gen {
                            *acc.entry((e, f)).or_insert(0.0) += model.prob_ids(e, f) / z;
                        }
                    }
                },
                |total, part| {
                    for (k, v) in part {
                        *total.entry(k).or_insert(0.0) += v;
                    }
                },
            );
            // Normalise per generator. Sorting keeps the summation order fixed.
            let mut keys: Vec<Key> = counts.keys().copied().collect();
            keys.sort_unstable();
            let mut totals: HashMap<u32, f64> = HashMap::new();
            for k in &keys {
                *totals.entry(k.0).or_insert(0.0) += counts[k];
            }
            model.table = counts
                .into_iter()
                .map(|(k, c)| (k, c / totals[&k.0]))
                .collect();
        }
        Ok(model)
    }

    fn prob_ids(&self, gen: u32, emit: u32) -> f64 {
        if self.table.is_empty() {
            self.uniform
        } else {
            self.table.get(&(gen, emit)).copied().unwrap_or(0.0)
        }
    }

    /// `t(emitted | generator)`; zero for unseen words.
    pub fn probability(&self, generator: &str, emitted: &str) -> f64 {
        match (self.gen_vocab.get(generator), self.emit_vocab.get(emitted)) {
            (Some(&e), Some(&f)) => self.prob_ids(e, f),
            _ => 0.0,
        }
    }

    /// Posterior `p(a_j = i | gen, emit)` for every emitted position `j`
    /// (outer index) and generator position `i` (inner index).
    pub fn posteriors(&self, gen: &[String], emit: &[String]) -> Vec<Vec<f64>> {
        emit.iter()
            .map(|f| {
                let scores: Vec<f64> = gen.iter().map(|e| self.probability(e, f)).collect();
                let z: f64 = scores.iter().sum();
                if z > 0.0 {
                    scores.iter().map(|s| s / z).collect()
                } else {
                    vec![0.0; gen.len()]
                }
            })
            .collect()
    }

    /// Best generator for each emitted word (ties go to the lower index),
    /// returned as `(emitted index, generator index, posterior)`.
    fn best_links(&self, gen: &[String], emit: &[String]) -> Vec<(usize, usize, f64)> {
        self.posteriors(gen, emit)
            .into_iter()
            .enumerate()
            .filter_map(|(j, row)| {
                let mut best: Option<(usize, f64)> = None;
                for (i, &p) in row.iter().enumerate() {
                    if p > 0.0 && best.is_none_or(|(_, bp)| p > bp) {
                        best = Some((i, p));
                    }
                }
                best.map(|(i, p)| (j, i, p))
            })
            .collect()
    }
}

/// Run Model 1 in both directions and extract each direction's best links.
pub fn model1_align(
    bitext: &[BitextPair],
    iterations: usize,
    exec: Execution,
) -> Result<DirectionalAlignments, ProjectionError> {
    let fwd_pairs: Vec<(&[String], &[String])> = bitext
        .iter()
        .map(|p| (p.source.as_slice(), p.target.as_slice()))
        .collect();
    let rev_pairs: Vec<(&[String], &[String])> =
        fwd_pairs.iter().map(|&(s, t)| (t, s)).collect();
    let fwd = Model1::train(&fwd_pairs, iterations, exec)?;
    let rev = Model1::train(&rev_pairs, iterations, exec)?;

    let forward = exec::map(exec, bitext, |p| {
        fwd.best_links(&p.source, &p.target)
            .into_iter()
            .map(|(j, i, posterior)| DirectionalLink {
                src: i,
                tgt: j,
                posterior,
            })
            .collect()
    });
    let reverse = exec::map(exec, bitext, |p| {
        rev.best_links(&p.target, &p.source)
            .into_iter()
            .map(|(i, j, posterior)| DirectionalLink {
                src: i,
                tgt: j,
                posterior,
            })
            .collect()
    });
    Ok(DirectionalAlignments { forward, reverse })
}
