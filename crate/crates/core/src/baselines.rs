//! Base rankers and the candidate-list file format.
//!
//! A candidate file is TSV with one row per candidate:
//!
//! ```text
//! user<TAB>item<TAB>score<TAB>rank
//! ```
//!
//! `rank` is 1-based within the user. Scores are written with the shortest
//! representation that parses back to the same `f64`.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::ItemCatalog;
use crate::dataio::InteractionSet;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateEntry {
    pub item: String,
    pub score: f64,
}

impl CandidateEntry {
    pub fn new(item: impl Into<String>, score: f64) -> Self {
        CandidateEntry {
            item: item.into(),
            score,
        }
    }
}

/// Ordering used everywhere a ranked list is materialized:
/// score descending, then item identifier ascending.
pub fn rank_order(a: &CandidateEntry, b: &CandidateEntry) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.item.cmp(&b.item))
}

/// One user's ranked candidates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateList {
    pub user: String,
    pub entries: Vec<CandidateEntry>,
    /// Set when fewer candidates than requested were available.
    #[serde(default)]
    pub truncated: bool,
}

impl CandidateList {
    /// Builds a list and sorts it by [`rank_order`].
    pub fn new(user: impl Into<String>, mut entries: Vec<CandidateEntry>) -> Self {
        entries.sort_by(rank_order);
        CandidateList {
            user: user.into(),
            entries,
            truncated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn items(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.item.as_str())
    }

    /// The first `k` entries as a new list.
    pub fn top(&self, k: usize) -> CandidateList {
        CandidateList {
            user: self.user.clone(),
            entries: self.entries.iter().take(k).cloned().collect(),
            truncated: self.truncated || self.entries.len() < k,
        }
    }
}

fn top_n_unseen(
    user: &str,
    scores: impl Iterator<Item = (usize, f64)>,
    seen: &HashSet<usize>,
    item_ids: &[&str],
    n: usize,
) -> CandidateList {
    let entries = scores
        .filter(|(i, _)| !seen.contains(i))
        .map(|(i, s)| CandidateEntry::new(item_ids[i], s))
        .collect();
    let mut list = CandidateList::new(user, entries);
    list.truncated = list.entries.len() < n;
    list.entries.truncate(n);
    list
}

/// Most-popular ranker: every user gets the top-`n` unseen items by training count,
/// scored as `count / max_count`.
pub fn mostpop_candidates(train: &InteractionSet, n: usize) -> Result<Vec<CandidateList>> {
    if n == 0 {
        return Err(Error::Config("candidate list length must be >= 1".into()));
    }
    let counts = train.item_counts();
    let max = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let item_ids: Vec<&str> = train.items().collect();
    let by_user = train.items_by_user();
    let users: Vec<&str> = train.users().collect();

    Ok(users
        .par_iter()
        .zip(by_user.par_iter())
        .map(|(user, seen)| {
            let seen: HashSet<usize> = seen.iter().copied().collect();
            let scores = counts.iter().enumerate().map(|(i, &c)| (i, c as f64 / max));
            top_n_unseen(user, scores, &seen, &item_ids, n)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MfHyper {
    pub dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub negatives: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for MfHyper {
    fn default() -> Self {
        MfHyper {
            dim: 32,
            learning_rate: 0.05,
            epochs: 30,
            negatives: 1,
            l2: 1e-4,
            seed: 42,
        }
    }
}

const INIT_SCALE: f64 = 0.05;

/// Latent-factor model trained on pairwise ranking of observed over unobserved items.
#[derive(Clone, Debug, PartialEq)]
pub struct MfModel {
    pub hyper: MfHyper,
    users: IndexMap<String, usize>,
    items: IndexMap<String, usize>,
    user_factors: Vec<f64>,
    item_factors: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl MfModel {
    fn init(train: &InteractionSet, hyper: &MfHyper) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
        let mut draw = |len: usize| -> Vec<f64> {
            (0..len)
                .map(|_| rng.random_range(-INIT_SCALE..=INIT_SCALE))
                .collect()
        };
        let user_factors = draw(train.n_users() * hyper.dim);
        let item_factors = draw(train.n_items() * hyper.dim);
        MfModel {
            hyper: hyper.clone(),
            users: train.user_index().clone(),
            items: train.item_index().clone(),
            user_factors,
            item_factors,
        }
    }

    pub fn dim(&self) -> usize {
        self.hyper.dim
    }

    pub fn user_vector(&self, u: usize) -> &[f64] {
        &self.user_factors[u * self.dim()..(u + 1) * self.dim()]
    }

    pub fn item_vector(&self, i: usize) -> &[f64] {
        &self.item_factors[i * self.dim()..(i + 1) * self.dim()]
    }

    /// Inner-product score by dense indices.
    pub fn score_dense(&self, u: usize, i: usize) -> f64 {
        dot(self.user_vector(u), self.item_vector(i))
    }

    pub fn score(&self, user: &str, item: &str) -> Option<f64> {
        Some(self.score_dense(*self.users.get(user)?, *self.items.get(item)?))
    }

    /// Mean `-ln sigmoid(s(u,i) - s(u,j))` over `(user, positive, negative)` dense triples.
    pub fn pairwise_loss(&self, probes: &[(usize, usize, usize)]) -> f64 {
        let total: f64 = probes
            .iter()
            .map(|&(u, i, j)| -sigmoid(self.score_dense(u, i) - self.score_dense(u, j)).ln())
            .sum();
        total / probes.len().max(1) as f64
    }

    fn all_finite(&self) -> bool {
        self.user_factors
            .iter()
            .chain(&self.item_factors)
            .all(|x| x.is_finite())
    }
}

/// Trains the factor model with sequential stochastic pairwise updates.
///
/// Each epoch visits the training pairs in a seeded shuffled order and, per
/// positive, draws `negatives` items uniformly from the user's unseen items.
/// The loss is `-ln sigmoid(s(u,i) - s(u,j))` plus L2 on the touched factors.
pub fn mf_train(train: &InteractionSet, hyper: &MfHyper) -> Result<MfModel> {
    if train.is_empty() {
        return Err(Error::EmptyInput("matrix factorization on an empty set".into()));
    }
    if hyper.dim == 0 || hyper.epochs == 0 {
        return Err(Error::Config("mf needs dim >= 1 and epochs >= 1".into()));
    }
    let mut model = MfModel::init(train, hyper);
    let d = hyper.dim;
    let n_items = train.n_items();
    let mut pairs = train.dense_pairs();
    let seen: Vec<HashSet<usize>> = train
        .items_by_user()
        .into_iter()
        .map(|v| v.into_iter().collect())
        .collect();
    // separate stream from the initializer
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x9E37_79B9_7F4A_7C15);
    let (lr, reg) = (hyper.learning_rate, hyper.l2);
    let mut pu = vec![0.0; d];

    for epoch in 1..=hyper.epochs {
        pairs.shuffle(&mut rng);
        for &(u, i) in &pairs {
            if seen[u].len() >= n_items {
                continue;
            }
            for _ in 0..hyper.negatives {
                let j = loop {
                    let j = rng.random_range(0..n_items);
                    if !seen[u].contains(&j) {
                        break j;
                    }
                };
                let x = model.score_dense(u, i) - model.score_dense(u, j);
                let g = sigmoid(-x);
                pu.copy_from_slice(model.user_vector(u));
                for (f, &p) in pu.iter().enumerate() {
                    let qi = model.item_factors[i * d + f];
                    let qj = model.item_factors[j * d + f];
                    model.user_factors[u * d + f] += lr * (g * (qi - qj) - reg * p);
                    model.item_factors[i * d + f] += lr * (g * p - reg * qi);
                    model.item_factors[j * d + f] += lr * (-g * p - reg * qj);
                }
            }
        }
        if !model.all_finite() {
            return Err(Error::Divergence { epoch });
        }
    }
    Ok(model)
}

/// Top-`n` unseen items per user by inner-product score.
pub fn mf_candidates(model: &MfModel, train: &InteractionSet, n: usize) -> Result<Vec<CandidateList>> {
    if n == 0 {
        return Err(Error::Config("candidate list length must be >= 1".into()));
    }
    if model.users != *train.user_index() || model.items != *train.item_index() {
        return Err(Error::Config(
            "model was trained on a different index space than the given training set".into(),
        ));
    }
    let item_ids: Vec<&str> = train.items().collect();
    let by_user = train.items_by_user();
    let users: Vec<&str> = train.users().collect();
    Ok(users
        .par_iter()
        .enumerate()
        .map(|(u, user)| {
            let seen: HashSet<usize> = by_user[u].iter().copied().collect();
            let scores = (0..item_ids.len()).map(|i| (i, model.score_dense(u, i)));
            top_n_unseen(user, scores, &seen, &item_ids, n)
        })
        .collect())
}

/// Writes candidate lists in the `user, item, score, rank` TSV format.
pub fn write_candidates(path: &Path, lists: &[CandidateList]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for list in lists {
        for (rank, e) in list.entries.iter().enumerate() {
            writeln!(out, "{}\t{}\t{}\t{}", list.user, e.item, e.score, rank + 1)
                .map_err(|err| Error::io(path, err))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Parses a candidate file (an optional `user item score rank` header is
/// skipped). Lists come back in order of each user's first row,
/// re-sorted by [`rank_order`]; the rank column is informational.
pub fn read_candidates(path: &Path) -> Result<Vec<CandidateList>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lists: IndexMap<String, (Vec<CandidateEntry>, HashSet<String>)> = IndexMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let perr = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let cols: Vec<&str> = if line.contains('\t') {
            line.split('\t').collect()
        } else {
            line.split_whitespace().collect()
        };
        if line_no == 1 && cols == ["user", "item", "score", "rank"] {
            continue;
        }
        if cols.len() != 4 {
            return Err(perr(format!(
                "expected 4 columns (user, item, score, rank), found {}",
                cols.len()
            )));
        }
        let score: f64 = cols[2]
            .parse()
            .map_err(|_| perr(format!("score `{}` is not a number", cols[2])))?;
        if !score.is_finite() {
            return Err(Error::NonFiniteScore {
                user: cols[0].into(),
                item: cols[1].into(),
            });
        }
        cols[3]
            .parse::<u64>()
            .map_err(|_| perr(format!("rank `{}` is not a positive integer", cols[3])))?;
        let (entries, seen) = lists.entry(cols[0].to_string()).or_default();
        if !seen.insert(cols[1].to_string()) {
            return Err(Error::DuplicateCandidate {
                user: cols[0].into(),
                item: cols[1].into(),
            });
        }
        entries.push(CandidateEntry::new(cols[1], score));
    }
    Ok(lists
        .into_iter()
        .map(|(user, (entries, _))| CandidateList::new(user, entries))
        .collect())
}

/// Fails with every candidate item the catalog does not know, deduplicated and sorted.
pub fn validate_candidates(lists: &[CandidateList], catalog: &ItemCatalog) -> Result<()> {
    let mut unknown: Vec<String> = lists
        .iter()
        .flat_map(|l| l.items())
        .filter(|item| !catalog.contains(item))
        .map(str::to_string)
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    if unknown.is_empty() {
        Ok(())
    } else {
        unknown.sort();
        Err(Error::UnknownItems(unknown))
    }
}

pub fn load_candidates(path: &Path, catalog: &ItemCatalog) -> Result<Vec<CandidateList>> {
    let lists = read_candidates(path)?;
    validate_candidates(&lists, catalog)?;
    Ok(lists)
}

/// Number of (user, item) candidates that already appear in the user's training history.
pub fn count_seen(lists: &[CandidateList], train: &InteractionSet) -> usize {
    let sets = train.item_sets();
    lists
        .iter()
        .map(|l| match sets.get(l.user.as_str()) {
            Some(seen) => l.items().filter(|i| seen.contains(i)).count(),
            None => 0,
        })
        .sum()
}

/// Candidate lists keyed by user identifier.
pub fn by_user(lists: &[CandidateList]) -> HashMap<&str, &CandidateList> {
    lists.iter().map(|l| (l.user.as_str(), l)).collect()
}
