//! Word clustering with the exchange algorithm under a class-bigram model.
//!
//! Words are moved one at a time to whichever class most increases the
//! corpus log-likelihood. Words outside the clustered vocabulary share a
//! fixed extra class that never moves.

use std::collections::HashMap;

use crate::corpus::Sentence;

use super::{ClusterMap, FeatureError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExchangeConfig {
    pub num_clusters: usize,
    /// Only this many of the most frequent word types are clustered.
    pub max_words: usize,
    /// Full passes over the vocabulary; stops early once no word moves.
    pub max_iterations: usize,
    /// Recompute the objective from scratch after every accepted move.
    pub trace: bool,
}

impl Default for ExchangeConfig {
    fn default() -> Self {
        ExchangeConfig {
            num_clusters: 256,
            max_words: 100_000,
            max_iterations: 20,
            trace: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExchangeOutcome {
    pub clusters: ClusterMap,
    /// Final objective value.
    pub objective: f64,
    /// Initial objective followed by the value after each accepted move, when
    /// tracing is enabled.
    pub trace: Vec<f64>,
    pub passes: usize,
    pub moves: usize,
}

fn xlogx(x: i64) -> f64 {
    if x <= 0 {
        0.0
    } else {
        let x = x as f64;
        x * x.ln()
    }
}

/// Class-bigram log-likelihood of the corpus under an assignment `class_of`
/// (by word string), with unassigned words in class `k`. Bigrams are counted
/// within sentences.
pub fn class_bigram_objective(sentences: &[Vec<String>], class_of: &dyn Fn(&str) -> usize) -> f64 {
    let mut pair: HashMap<(usize, usize), i64> = HashMap::new();
    let mut left: HashMap<usize, i64> = HashMap::new();
    let mut right: HashMap<usize, i64> = HashMap::new();
    let mut word: HashMap<&str, i64> = HashMap::new();
    for s in sentences {
        for w in s.windows(2) {
            let (a, b) = (class_of(&w[0]), class_of(&w[1]));
            *pair.entry((a, b)).or_default() += 1;
            *left.entry(a).or_default() += 1;
            *right.entry(b).or_default() += 1;
            *word.entry(w[1].as_str()).or_default() += 1;
        }
    }
    let mut keys: Vec<_> = pair.keys().copied().collect();
    keys.sort_unstable();
    let mut ll: f64 = keys.iter().map(|k| xlogx(pair[k])).sum();
    let mut lk: Vec<_> = left.into_iter().collect();
    lk.sort_unstable();
    ll -= lk.iter().map(|&(_, n)| xlogx(n)).sum::<f64>();
    let mut rk: Vec<_> = right.into_iter().collect();
    rk.sort_unstable();
    ll -= rk.iter().map(|&(_, n)| xlogx(n)).sum::<f64>();
    let mut wk: Vec<_> = word.into_iter().collect();
    wk.sort_unstable();
    ll += wk.iter().map(|&(_, n)| xlogx(n)).sum::<f64>();
    ll
}

struct Counts {
    k: usize,
    /// `(k+1) x (k+1)` class bigram counts, row = left class.
    pair: Vec<i64>,
    left: Vec<i64>,
    right: Vec<i64>,
    /// Constant emission term.
    word_term: f64,
}

impl Counts {
    fn at(&self, a: usize, b: usize) -> i64 {
        self.pair[a * (self.k + 1) + b]
    }

    fn add(&mut self, a: usize, b: usize, n: i64) {
        self.pair[a * (self.k + 1) + b] += n;
    }

    fn objective(&self) -> f64 {
        let mut ll: f64 = self.pair.iter().map(|&n| xlogx(n)).sum();
        ll -= self.left.iter().map(|&n| xlogx(n)).sum::<f64>();
        ll -= self.right.iter().map(|&n| xlogx(n)).sum::<f64>();
        ll + self.word_term
    }
}

/// Neighbourhood of one clustered word.
#[derive(Default)]
struct WordStats {
    /// `(v, n)`: bigram `v w` occurs `n` times, `v != w`.
    preceded_by: Vec<(usize, i64)>,
    /// `(v, n)`: bigram `w v` occurs `n` times, `v != w`.
    followed_by: Vec<(usize, i64)>,
    self_loops: i64,
    as_left: i64,
    as_right: i64,
}

/// Induce `num_clusters` word classes over the most frequent word types of
/// a raw corpus.
///
/// Word types are ranked by frequency (ties broken alphabetically) and the
/// word of rank `r` starts in class `r mod K`. Each pass visits words in rank
/// order and moves a word only when another class is strictly better.
pub fn induce_clusters(corpus: &[Sentence], config: &ExchangeConfig) -> Result<ExchangeOutcome, FeatureError> {
    let k = config.num_clusters;
    if k == 0 {
        return Err(FeatureError::NoClusters);
    }
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for s in corpus {
        for w in s.words() {
            *freq.entry(w).or_default() += 1;
        }
    }
    if freq.is_empty() {
        return Err(FeatureError::EmptyCorpus);
    }
    let mut ranked: Vec<(&str, u64)> = freq.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.truncate(config.max_words);
    let vocab: HashMap<&str, usize> = ranked.iter().enumerate().map(|(i, (w, _))| (*w, i)).collect();
    let v = ranked.len();
    // Id `v` stands for every unclustered word; its class is `k` for good.
    let id = |w: &str| vocab.get(w).copied().unwrap_or(v);

    let mut bigrams: HashMap<(usize, usize), i64> = HashMap::new();
    let mut right_freq: HashMap<&str, i64> = HashMap::new();
    for s in corpus {
        let words: Vec<&str> = s.words().collect();
        for w in words.windows(2) {
            *bigrams.entry((id(w[0]), id(w[1]))).or_default() += 1;
            *right_freq.entry(w[1]).or_default() += 1;
        }
    }
    let mut rf: Vec<_> = right_freq.into_iter().collect();
    rf.sort_unstable();
    let word_term: f64 = rf.iter().map(|&(_, n)| xlogx(n)).sum();

    let mut stats: Vec<WordStats> = (0..=v).map(|_| WordStats::default()).collect();
    let mut bigram_list: Vec<_> = bigrams.into_iter().collect();
    bigram_list.sort_unstable();
    for &((a, b), n) in &bigram_list {
        stats[a].as_left += n;
        stats[b].as_right += n;
        if a == b {
            stats[a].self_loops += n;
        } else {
            stats[a].followed_by.push((b, n));
            stats[b].preceded_by.push((a, n));
        }
    }

    let mut class: Vec<usize> = (0..v).map(|r| r % k).collect();
    class.push(k);
    let mut counts = Counts {
        k,
        pair: vec![0; (k + 1) * (k + 1)],
        left: vec![0; k + 1],
        right: vec![0; k + 1],
        word_term,
    };
    for &((a, b), n) in &bigram_list {
        counts.add(class[a], class[b], n);
        counts.left[class[a]] += n;
        counts.right[class[b]] += n;
    }

    let total: i64 = bigram_list.iter().map(|&(_, n)| n).sum();
    let epsilon = 1e-10 * (total.max(1) as f64);
    let mut trace = Vec::new();
    if config.trace {
        trace.push(counts.objective());
    }
    let mut from_left = vec![0i64; k + 1];
    let mut from_right = vec![0i64; k + 1];
    let mut touched_left: Vec<usize> = Vec::new();
    let mut touched_right: Vec<usize> = Vec::new();
    let mut passes = 0;
    let mut moves = 0;

    for _ in 0..config.max_iterations {
        passes += 1;
        let mut moved = false;
        for w in 0..v {
            let st = &stats[w];
            let current = class[w];
            for &(u, n) in &st.preceded_by {
                let c = class[u];
                if from_left[c] == 0 {
                    touched_left.push(c);
                }
                from_left[c] += n;
            }
            for &(u, n) in &st.followed_by {
                let c = class[u];
                if from_right[c] == 0 {
                    touched_right.push(c);
                }
                from_right[c] += n;
            }
            // Take w out of its class.
            for &c in &touched_left {
                counts.add(c, current, -from_left[c]);
            }
            for &c in &touched_right {
                counts.add(current, c, -from_right[c]);
            }
            counts.add(current, current, -st.self_loops);
            counts.left[current] -= st.as_left;
            counts.right[current] -= st.as_right;

            let gain = |b: usize, counts: &Counts| -> f64 {
                let mut g = 0.0;
                for &c in &touched_left {
                    if c != b {
                        let n = counts.at(c, b);
                        g += xlogx(n + from_left[c]) - xlogx(n);
                    }
                }
                for &c in &touched_right {
                    if c != b {
                        let n = counts.at(b, c);
                        g += xlogx(n + from_right[c]) - xlogx(n);
                    }
                }
                let n = counts.at(b, b);
                g += xlogx(n + from_left[b] + from_right[b] + st.self_loops) - xlogx(n);
                g -= xlogx(counts.left[b] + st.as_left) - xlogx(counts.left[b]);
                g -= xlogx(counts.right[b] + st.as_right) - xlogx(counts.right[b]);
                g
            };
            let stay = gain(current, &counts);
            let mut best: Option<(usize, f64)> = None;
            for b in (0..k).filter(|&b| b != current) {
                let g = gain(b, &counts);
                if best.is_none_or(|(_, bg)| g > bg) {
                    best = Some((b, g));
                }
            }
            let target = match best {
                Some((b, g)) if g > stay + epsilon => b,
                _ => current,
            };

            for &c in &touched_left {
                counts.add(c, target, from_left[c]);
            }
            for &c in &touched_right {
                counts.add(target, c, from_right[c]);
            }
            counts.add(target, target, st.self_loops);
            counts.left[target] += st.as_left;
            counts.right[target] += st.as_right;
            for &c in &touched_left {
                from_left[c] = 0;
            }
            for &c in &touched_right {
                from_right[c] = 0;
            }
            touched_left.clear();
            touched_right.clear();

            if target != current {
                // Neighbours of w that are w itself are self loops, so the
                // class change does not invalidate the bookkeeping above.
                class[w] = target;
                moved = true;
                moves += 1;
                if config.trace {
                    trace.push(counts.objective());
                }
            }
        }
        if !moved {
            break;
        }
    }

    let mut clusters = ClusterMap::new(k);
    for (i, (w, _)) in ranked.iter().enumerate() {
        clusters.assign(w, class[i] as u32);
    }
    log::debug!("exchange clustering: {passes} passes, {moves} moves");
    Ok(ExchangeOutcome {
        clusters,
        objective: counts.objective(),
        trace,
        passes,
        moves,
    })
}
