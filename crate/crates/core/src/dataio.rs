//! Interaction logs: loading, k-core filtering, per-user splits and summary statistics.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Delimited text layout of an interaction file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    /// Tab separated; lines without a tab fall back to whitespace splitting.
    Tsv,
    Csv,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(Format::Tsv),
            "csv" => Ok(Format::Csv),
            other => Err(Error::Config(format!("unknown input format `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    pub rating: f64,
    pub timestamp: Option<i64>,
}

impl Interaction {
    pub fn new(user: impl Into<String>, item: impl Into<String>, rating: f64) -> Self {
        Interaction {
            user: user.into(),
            item: item.into(),
            rating,
            timestamp: None,
        }
    }
}

/// Deduplicated interactions with dense user and item indices.
///
/// Indices are assigned in order of first appearance, so two sets built from
/// the same sequence are identical.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InteractionSet {
    interactions: Vec<Interaction>,
    user_index: IndexMap<String, usize>,
    item_index: IndexMap<String, usize>,
}

impl InteractionSet {
    /// Builds a set from raw interactions. A repeated (user, item) pair keeps
    /// only its last occurrence, at the position of that occurrence.
    pub fn new(raw: Vec<Interaction>) -> Self {
        let mut last: IndexMap<(&str, &str), usize> = IndexMap::with_capacity(raw.len());
        for (pos, it) in raw.iter().enumerate() {
            last.insert((it.user.as_str(), it.item.as_str()), pos);
        }
        let keep: Vec<bool> = {
            let mut keep = vec![false; raw.len()];
            for &pos in last.values() {
                keep[pos] = true;
            }
            keep
        };
        drop(last);

        let interactions: Vec<Interaction> = raw
            .into_iter()
            .zip(keep)
            .filter_map(|(it, k)| k.then_some(it))
            .collect();

        let mut user_index = IndexMap::new();
        let mut item_index = IndexMap::new();
        for it in &interactions {
            let n = user_index.len();
            user_index.entry(it.user.clone()).or_insert(n);
            let n = item_index.len();
            item_index.entry(it.item.clone()).or_insert(n);
        }
        InteractionSet {
            interactions,
            user_index,
            item_index,
        }
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Interaction> {
        self.interactions.iter()
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.user_index.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_index.len()
    }

    pub fn user_index(&self) -> &IndexMap<String, usize> {
        &self.user_index
    }

    pub fn item_index(&self) -> &IndexMap<String, usize> {
        &self.item_index
    }

    /// User identifiers in dense-index order.
    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.user_index.keys().map(String::as_str)
    }

    /// Item identifiers in dense-index order.
    pub fn items(&self) -> impl Iterator<Item = &str> {
        self.item_index.keys().map(String::as_str)
    }

    /// Dense (user, item) index pair for every interaction, in order.
    pub fn dense_pairs(&self) -> Vec<(usize, usize)> {
        self.interactions
            .iter()
            .map(|it| (self.user_index[&it.user], self.item_index[&it.item]))
            .collect()
    }

    /// Interaction count per dense item index.
    pub fn item_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.n_items()];
        for it in &self.interactions {
            counts[self.item_index[&it.item]] += 1;
        }
        counts
    }

    /// Dense item indices each user interacted with, by dense user index.
    pub fn items_by_user(&self) -> Vec<Vec<usize>> {
        let mut by_user = vec![Vec::new(); self.n_users()];
        for (u, i) in self.dense_pairs() {
            by_user[u].push(i);
        }
        by_user
    }

    /// Item identifiers per user identifier.
    pub fn item_sets(&self) -> IndexMap<&str, std::collections::HashSet<&str>> {
        let mut sets: IndexMap<&str, std::collections::HashSet<&str>> = IndexMap::new();
        for it in &self.interactions {
            sets.entry(it.user.as_str())
                .or_default()
                .insert(it.item.as_str());
        }
        sets
    }
}

fn split_row(line: &str, format: Format) -> Vec<&str> {
    match format {
        Format::Csv => line.split(',').map(str::trim).collect(),
        Format::Tsv if line.contains('\t') => line.split('\t').map(str::trim).collect(),
        Format::Tsv => line.split_whitespace().collect(),
    }
}

/// Reads a delimited interaction file with columns `user, item[, rating[, timestamp]]`.
///
/// A first row whose third column is not numeric is treated as a header.
/// With `implicit`, every rating is 1.0 regardless of the file contents.
pub fn load_interactions(path: &Path, format: Format, implicit: bool) -> Result<InteractionSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut raw = Vec::new();
    let mut first_row = true;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let cols = split_row(&line, format);
        let is_first = std::mem::replace(&mut first_row, false);
        if is_first && cols.len() >= 3 && cols[2].parse::<f64>().is_err() {
            continue;
        }
        raw.push(parse_row(&cols, line_no, implicit)?);
    }

    if raw.is_empty() {
        return Err(Error::EmptyInput(format!(
            "{} contains no interactions",
            path.display()
        )));
    }
    Ok(InteractionSet::new(raw))
}

fn parse_row(cols: &[&str], line: u64, implicit: bool) -> Result<Interaction> {
    let err = |message: String| Error::Parse { line, message };
    if cols.len() < 2 {
        return Err(err(format!(
            "expected at least 2 columns (user, item), found {}",
            cols.len()
        )));
    }
    if cols[0].is_empty() || cols[1].is_empty() {
        return Err(err("empty user or item identifier".into()));
    }
    let rating = match cols.get(2) {
        _ if implicit => 1.0,
        Some(raw) => {
            let r: f64 = raw
                .parse()
                .map_err(|_| err(format!("rating `{raw}` is not a number")))?;
            if !r.is_finite() {
                return Err(err(format!("rating `{raw}` is not finite")));
            }
            r
        }
        None => 1.0,
    };
    let timestamp = match cols.get(3) {
        Some(raw) => Some(
            raw.parse::<i64>()
                .map_err(|_| err(format!("timestamp `{raw}` is not an integer")))?,
        ),
        None => None,
    };
    Ok(Interaction {
        user: cols[0].to_string(),
        item: cols[1].to_string(),
        rating,
        timestamp,
    })
}

/// Writes `user<TAB>item<TAB>rating` rows, one per interaction.
pub fn write_interactions(path: &Path, data: &InteractionSet) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for it in data.iter() {
        writeln!(out, "{}\t{}\t{}", it.user, it.item, it.rating).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Maximal subset in which every user and every item has at least `k` interactions.
///
/// Each round removes all violating users and items at once; the loop stops at
/// the fixpoint, which is the unique maximal k-core.
pub fn kcore_filter(data: &InteractionSet, k: usize) -> Result<InteractionSet> {
    if k == 0 {
        return Err(Error::Config("k-core requires k >= 1".into()));
    }
    let pairs = data.dense_pairs();
    let mut alive = vec![true; pairs.len()];

    loop {
        let mut user_deg = vec![0usize; data.n_users()];
        let mut item_deg = vec![0usize; data.n_items()];
        for (&(u, i), _) in pairs.iter().zip(&alive).filter(|(_, a)| **a) {
            user_deg[u] += 1;
            item_deg[i] += 1;
        }
        let mut changed = false;
        for (&(u, i), a) in pairs.iter().zip(alive.iter_mut()) {
            if *a && (user_deg[u] < k || item_deg[i] < k) {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let kept: Vec<Interaction> = data
        .iter()
        .zip(&alive)
        .filter(|(_, a)| **a)
        .map(|(it, _)| it.clone())
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyCore { k });
    }
    Ok(InteractionSet::new(kept))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitData {
    pub train: InteractionSet,
    pub valid: InteractionSet,
    pub test: InteractionSet,
    pub seed: u64,
    pub ratios: [f64; 3],
}

/// Seeds the shuffle for one user from the run seed and the user identifier,
/// so adding or removing other users leaves this user's split unchanged.
fn user_rng(seed: u64, user: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(user.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    ChaCha8Rng::seed_from_u64(u64::from_le_bytes(bytes))
}

fn validate_ratios(ratios: [f64; 3]) -> Result<()> {
    let ok = ratios.iter().all(|r| r.is_finite() && *r >= 0.0)
        && (ratios.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidRatios(ratios))
    }
}

// Guards against 0.29 * 100 = 28.999999999999996 style truncation.
const CUT_EPS: f64 = 1e-9;

/// Per-user random holdout.
///
/// Each user's interactions are shuffled and cut at `floor(r_train * n)` and
/// `floor((r_train + r_valid) * n)`. Every user keeps at least one training
/// interaction. Within each split, interactions keep their input order.
pub fn split(data: &InteractionSet, ratios: [f64; 3], seed: u64) -> Result<SplitData> {
    validate_ratios(ratios)?;
    let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); data.n_users()];
    for (pos, it) in data.iter().enumerate() {
        by_user[data.user_index()[&it.user]].push(pos);
    }

    let mut assignment = vec![0u8; data.len()];
    for (user, positions) in data.users().zip(by_user.iter_mut()) {
        let n = positions.len();
        positions.shuffle(&mut user_rng(seed, user));
        let cut_train = ((ratios[0] * n as f64 + CUT_EPS).floor() as usize).clamp(1, n);
        let cut_valid = (((ratios[0] + ratios[1]) * n as f64 + CUT_EPS).floor() as usize)
            .clamp(cut_train, n);
        for &pos in &positions[cut_train..cut_valid] {
            assignment[pos] = 1;
        }
        for &pos in &positions[cut_valid..] {
            assignment[pos] = 2;
        }
    }

    let mut parts: [Vec<Interaction>; 3] = Default::default();
    for (it, &a) in data.iter().zip(&assignment) {
        parts[a as usize].push(it.clone());
    }
    let [train, valid, test] = parts;
    Ok(SplitData {
        train: InteractionSet::new(train),
        valid: InteractionSet::new(valid),
        test: InteractionSet::new(test),
        seed,
        ratios,
    })
}

/// Writes `train.tsv`, `valid.tsv` and `test.tsv` into `dir`.
pub fn write_splits(dir: &Path, splits: &SplitData) -> Result<()> {
    write_interactions(&dir.join("train.tsv"), &splits.train)?;
    write_interactions(&dir.join("valid.tsv"), &splits.valid)?;
    write_interactions(&dir.join("test.tsv"), &splits.test)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_users: usize,
    pub n_items: usize,
    pub n_ratings: usize,
    pub ratings_per_user: f64,
    pub ratings_per_item: f64,
    pub density: f64,
    pub item_gini: f64,
}

pub fn dataset_stats(data: &InteractionSet) -> Result<DatasetStats> {
    if data.is_empty() {
        return Err(Error::EmptyInput("dataset statistics of an empty set".into()));
    }
    let (users, items, ratings) = (data.n_users(), data.n_items(), data.len());
    Ok(DatasetStats {
        n_users: users,
        n_items: items,
        n_ratings: ratings,
        ratings_per_user: ratings as f64 / users as f64,
        ratings_per_item: ratings as f64 / items as f64,
        density: ratings as f64 / (users as f64 * items as f64),
        item_gini: gini(&data.item_counts())?,
    })
}

/// Gini coefficient `sum_i sum_j |x_i - x_j| / (2 n sum x)`.
///
/// Evaluated in O(n log n) through the sorted-rank identity
/// `sum_i (2i - n - 1) x_(i) / (n sum x)` with ascending 1-based ranks.
pub fn gini(counts: &[u64]) -> Result<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::UndefinedInput(
            "gini needs at least one positive count".into(),
        ));
    }
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as f64;
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| (2.0 * (i as f64 + 1.0) - n - 1.0) * x as f64)
        .sum();
    Ok(weighted / (n * total as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(rows: &[(&str, &str)]) -> InteractionSet {
        InteractionSet::new(
            rows.iter()
                .map(|(u, i)| Interaction::new(*u, *i, 1.0))
                .collect(),
        )
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn pairwise_gini(counts: &[u64]) -> f64 {
        let n = counts.len() as f64;
        let total: u64 = counts.iter().sum();
        let mut acc = 0.0;
        for &a in counts {
            for &b in counts {
                acc += (a as f64 - b as f64).abs();
            }
        }
        acc / (2.0 * n * total as f64)
    }

    #[test]
    fn load_three_rows() {
        let f = write_tmp("u1 i1 5\nu1 i2 3\nu2 i1 4\n");
        let data = load_interactions(f.path(), Format::Tsv, false).unwrap();
        assert_eq!((data.n_users(), data.n_items(), data.len()), (2, 2, 3));
        assert_eq!(data.interactions()[1].rating, 3.0);
    }

    #[test]
    fn duplicate_pair_keeps_last() {
        let f = write_tmp("u1 i1 5\nu1 i1 2\n");
        let data = load_interactions(f.path(), Format::Tsv, false).unwrap();
        assert_eq!(data.len(), 1);
        assert_eq!(data.interactions()[0], Interaction::new("u1", "i1", 2.0));
    }

    #[test]
    fn implicit_forces_unit_ratings() {
        let f = write_tmp("u1,i1,5,100\nu2,i1,3,200\n");
        let data = load_interactions(f.path(), Format::Csv, true).unwrap();
        assert!(data.iter().all(|it| it.rating == 1.0));
        assert_eq!(data.interactions()[1].timestamp, Some(200));
    }

    #[test]
    fn header_row_is_skipped() {
        let f = write_tmp("user\titem\trating\nu1\ti1\t4\n");
        let data = load_interactions(f.path(), Format::Tsv, false).unwrap();
        assert_eq!(data.len(), 1);
    }

    #[test]
    fn malformed_row_names_line() {
        let f = write_tmp("u1 i1 5\nu2\n");
        match load_interactions(f.path(), Format::Tsv, false) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let f = write_tmp("u1 i1 5\nu2 i2 abc\n");
        assert!(matches!(
            load_interactions(f.path(), Format::Tsv, false),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write_tmp("\n\n");
        assert!(matches!(
            load_interactions(f.path(), Format::Tsv, false),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn kcore_cascade_empties_toy_graph() {
        let data = set(&[("u1", "i1"), ("u1", "i2"), ("u2", "i1")]);
        assert!(matches!(
            kcore_filter(&data, 2),
            Err(Error::EmptyCore { k: 2 })
        ));
    }

    #[test]
    fn kcore_fixpoint_identity() {
        let data = set(&[("u1", "i1"), ("u1", "i2"), ("u2", "i1"), ("u2", "i2")]);
        assert_eq!(kcore_filter(&data, 2).unwrap(), data);
        assert_eq!(kcore_filter(&data, 1).unwrap(), data);
    }

    #[test]
    fn split_degenerate_ratio() {
        let data = set(&[("u1", "i1"), ("u1", "i2"), ("u2", "i1")]);
        let s = split(&data, [1.0, 0.0, 0.0], 7).unwrap();
        assert_eq!(s.train, data);
        assert!(s.valid.is_empty() && s.test.is_empty());
    }

    #[test]
    fn split_ten_interactions() {
        let rows: Vec<(String, String)> = (0..10).map(|i| ("u".into(), format!("i{i}"))).collect();
        let data = InteractionSet::new(
            rows.iter()
                .map(|(u, i)| Interaction::new(u.as_str(), i.as_str(), 1.0))
                .collect(),
        );
        let s = split(&data, [0.8, 0.1, 0.1], 1).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (8, 1, 1));
        assert_eq!(split(&data, [0.8, 0.1, 0.1], 1).unwrap(), s);
    }

    #[test]
    fn single_interaction_user_stays_in_train() {
        let data = set(&[("u1", "i1")]);
        let s = split(&data, [0.0, 0.5, 0.5], 3).unwrap();
        assert_eq!(s.train.len(), 1);
    }

    #[test]
    fn bad_ratios_rejected() {
        let data = set(&[("u1", "i1")]);
        assert!(matches!(
            split(&data, [0.8, 0.1, 0.2], 0),
            Err(Error::InvalidRatios(_))
        ));
        assert!(split(&data, [1.1, -0.1, 0.0], 0).is_err());
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[5, 5, 5]).unwrap(), 0.0);
        assert_eq!(pairwise_gini(&[0, 1]), 0.5);
        assert_eq!(pairwise_gini(&[1, 2, 3, 4]), 0.25);
        assert_eq!(pairwise_gini(&[0, 0, 0, 4]), 0.75);
        assert!((gini(&[0, 1]).unwrap() - 0.5).abs() < 1e-15);
        assert!((gini(&[1, 2, 3, 4]).unwrap() - 0.25).abs() < 1e-15);
        assert!((gini(&[0, 0, 0, 4]).unwrap() - 0.75).abs() < 1e-15);
        assert!(matches!(gini(&[0, 0]), Err(Error::UndefinedInput(_))));
    }

    #[test]
    fn stats_uniform_items() {
        let data = set(&[("u1", "i1"), ("u1", "i2"), ("u2", "i1"), ("u2", "i2")]);
        let st = dataset_stats(&data).unwrap();
        assert_eq!(st.item_gini, 0.0);
        assert_eq!(st.density, 1.0);
        assert_eq!(st.ratings_per_user, 2.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_set() -> impl Strategy<Value = InteractionSet> {
            prop::collection::vec((0u8..12, 0u8..15), 1..120).prop_map(|pairs| {
                InteractionSet::new(
                    pairs
                        .into_iter()
                        .map(|(u, i)| Interaction::new(format!("u{u}"), format!("i{i}"), 1.0))
                        .collect(),
                )
            })
        }

        fn pairs(d: &InteractionSet) -> std::collections::HashSet<(String, String)> {
            d.iter().map(|it| (it.user.clone(), it.item.clone())).collect()
        }

        proptest! {
            #[test]
            fn kcore_idempotent_and_monotone(data in arb_set(), k1 in 1usize..4, dk in 0usize..3) {
                let k2 = k1 + dk;
                if let Ok(core1) = kcore_filter(&data, k1) {
                    prop_assert_eq!(kcore_filter(&core1, k1).unwrap(), core1.clone());
                    if let Ok(core2) = kcore_filter(&data, k2) {
                        prop_assert!(pairs(&core2).is_subset(&pairs(&core1)));
                    }
                    let users = core1.items_by_user();
                    prop_assert!(users.iter().all(|v| v.len() >= k1));
                    prop_assert!(core1.item_counts().iter().all(|&c| c as usize >= k1));
                } else {
                    prop_assert!(kcore_filter(&data, k2).is_err());
                }
            }

            #[test]
            fn split_partitions(data in arb_set(), seed in any::<u64>(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                let ratios = [hi, lo, 1.0 - hi - lo];
                prop_assume!(ratios[2] >= 0.0);
                let s = split(&data, ratios, seed).unwrap();
                prop_assert_eq!(s.train.len() + s.valid.len() + s.test.len(), data.len());
                let (tr, va, te) = (pairs(&s.train), pairs(&s.valid), pairs(&s.test));
                prop_assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
                prop_assert_eq!(s.train.n_users(), data.n_users());
                prop_assert_eq!(split(&data, ratios, seed).unwrap(), s);
            }

            #[test]
            fn gini_matches_pairwise_and_scales(counts in prop::collection::vec(0u64..50, 1..40), alpha in 1u64..7) {
                prop_assume!(counts.iter().any(|&c| c > 0));
                let g = gini(&counts).unwrap();
                prop_assert!((g - pairwise_gini(&counts)).abs() < 1e-12);
                prop_assert!((0.0..1.0).contains(&g));
                let scaled: Vec<u64> = counts.iter().map(|c| c * alpha).collect();
                prop_assert!((gini(&scaled).unwrap() - g).abs() < 1e-12);
            }
        }
    }
}
