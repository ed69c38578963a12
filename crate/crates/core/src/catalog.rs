//! Item popularity, novelty, and the short-head / long-tail partition.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataio::InteractionSet;
use crate::error::{Error, Result};

pub const DEFAULT_HEAD_FRACTION: f64 = 0.2;

/// Popularity group of an item.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    /// Short head: the most-interacted items.
    #[serde(rename = "A")]
    A,
    /// Long tail: everything else.
    #[serde(rename = "B")]
    B,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::A => "A",
            Group::B => "B",
        })
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(Group::A),
            "B" => Ok(Group::B),
            other => Err(Error::Domain(format!("unknown group label `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogItem {
    pub item: String,
    pub train_count: u64,
    pub popularity: f64,
    /// `-log2(popularity)`, in bits.
    pub novelty: f64,
    /// Novelty scaled by `log2(n_users_train)`, clamped to `[0, 1]`.
    pub novelty_norm: f64,
    pub group: Group,
}

/// Immutable per-item statistics derived from a training set.
///
/// Items are stored by descending train count, ties by ascending identifier.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemCatalog {
    items: Vec<CatalogItem>,
    index: HashMap<String, usize>,
    head_fraction: f64,
    n_users_train: usize,
}

/// Share of training users who interacted with the item, capped at 1.
pub fn popularity(train_count: u64, n_users_train: usize) -> f64 {
    (train_count as f64 / n_users_train as f64).min(1.0)
}

/// Self-information of an item, `-log2(p)`.
pub fn novelty(p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Domain(format!(
            "novelty needs popularity in (0, 1], got {p}"
        )));
    }
    // -log2(1) is -0.0
    Ok((-p.log2()).max(0.0))
}

fn novelty_norm(novelty: f64, n_users_train: usize) -> f64 {
    let max_bits = (n_users_train as f64).log2();
    if max_bits > 0.0 {
        (novelty / max_bits).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Number of items labelled short-head: `ceil(head_fraction * n_items)`.
pub fn head_size(head_fraction: f64, n_items: usize) -> usize {
    ((head_fraction * n_items as f64 - 1e-9).ceil().max(0.0) as usize).min(n_items)
}

impl ItemCatalog {
    pub fn build(train: &InteractionSet, head_fraction: f64) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyInput("catalog from an empty training set".into()));
        }
        if !(head_fraction > 0.0 && head_fraction < 1.0) {
            return Err(Error::Config(format!(
                "head_fraction must lie in (0, 1), got {head_fraction}"
            )));
        }
        let n_users = train.n_users();
        let mut counted: Vec<(&str, u64)> = train.items().zip(train.item_counts()).collect();
        counted.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let head = head_size(head_fraction, counted.len());

        let items = counted
            .into_iter()
            .enumerate()
            .map(|(rank, (item, count))| {
                let p = popularity(count, n_users);
                let bits = novelty(p)?;
                Ok(CatalogItem {
                    item: item.to_string(),
                    train_count: count,
                    popularity: p,
                    novelty: bits,
                    novelty_norm: novelty_norm(bits, n_users),
                    group: if rank < head { Group::A } else { Group::B },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_parts(items, head_fraction, n_users))
    }

    /// Assembles a catalog from precomputed entries, e.g. for synthetic setups.
    /// Entries are re-sorted by train count (descending) and identifier.
    pub fn from_items(
        mut items: Vec<CatalogItem>,
        head_fraction: f64,
        n_users_train: usize,
    ) -> Result<Self> {
        items.sort_by(|a, b| {
            b.train_count
                .cmp(&a.train_count)
                .then_with(|| a.item.cmp(&b.item))
        });
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = items.iter().find(|it| !seen.insert(it.item.as_str())) {
            return Err(Error::Domain(format!("duplicate catalog item `{}`", dup.item)));
        }
        Ok(Self::from_parts(items, head_fraction, n_users_train))
    }

    fn from_parts(items: Vec<CatalogItem>, head_fraction: f64, n_users_train: usize) -> Self {
        let index = items
            .iter()
            .enumerate()
            .map(|(pos, it)| (it.item.clone(), pos))
            .collect();
        ItemCatalog {
            items,
            index,
            head_fraction,
            n_users_train,
        }
    }

    pub fn get(&self, item: &str) -> Option<&CatalogItem> {
        self.index.get(item).map(|&pos| &self.items[pos])
    }

    pub fn contains(&self, item: &str) -> bool {
        self.index.contains_key(item)
    }

    pub fn items(&self) -> &[CatalogItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn head_fraction(&self) -> f64 {
        self.head_fraction
    }

    pub fn n_users_train(&self) -> usize {
        self.n_users_train
    }

    pub fn group_size(&self, group: Group) -> usize {
        self.items.iter().filter(|it| it.group == group).count()
    }

    /// Writes `item, train_count, popularity, novelty, novelty_norm, group` TSV
    /// with a header row, in catalog order.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "item\ttrain_count\tpopularity\tnovelty\tnovelty_norm\tgroup").map_err(io)?;
        for it in &self.items {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                it.item, it.train_count, it.popularity, it.novelty, it.novelty_norm, it.group
            )
            .map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Interaction;

    fn train_with_counts(counts: &[(&str, usize)], n_users: usize) -> InteractionSet {
        let mut raw = Vec::new();
        for &(item, c) in counts {
            for u in 0..c {
                raw.push(Interaction::new(format!("u{u:03}"), item, 1.0));
            }
        }
        for u in 0..n_users {
            raw.push(Interaction::new(format!("u{u:03}"), "filler", 1.0));
        }
        InteractionSet::new(raw)
    }

    #[test]
    fn popularity_examples() {
        assert_eq!(popularity(250, 1000), 0.25);
        assert_eq!(popularity(1000, 1000), 1.0);
        assert_eq!(popularity(1, 1024), 1.0 / 1024.0);
    }

    #[test]
    fn novelty_examples() {
        assert_eq!(novelty(0.25).unwrap(), 2.0);
        assert_eq!(novelty(1.0).unwrap(), 0.0);
        assert!(novelty(1.0).unwrap().is_sign_positive());
        assert_eq!(novelty(1.0 / 1024.0).unwrap(), 10.0);
        assert!(matches!(novelty(0.0), Err(Error::Domain(_))));
        assert!(novelty(-0.5).is_err());
    }

    #[test]
    fn head_size_is_ceiling() {
        assert_eq!(head_size(0.2, 10), 2);
        assert_eq!(head_size(0.2, 5), 1);
        assert_eq!(head_size(0.2, 11), 3);
        assert_eq!(head_size(0.2, 1), 1);
    }

    #[test]
    fn ten_items_two_in_head() {
        let counts: Vec<(String, usize)> = (0..10).map(|i| (format!("i{i}"), i + 1)).collect();
        let refs: Vec<(&str, usize)> = counts.iter().map(|(s, c)| (s.as_str(), *c)).collect();
        let mut raw = Vec::new();
        for (item, c) in &refs {
            for u in 0..*c {
                raw.push(Interaction::new(format!("u{u}"), *item, 1.0));
            }
        }
        let cat = ItemCatalog::build(&InteractionSet::new(raw), 0.2).unwrap();
        assert_eq!(cat.group_size(Group::A), 2);
        assert_eq!(cat.get("i9").unwrap().group, Group::A);
        assert_eq!(cat.get("i8").unwrap().group, Group::A);
        assert_eq!(cat.get("i7").unwrap().group, Group::B);
    }

    #[test]
    fn tie_at_boundary_prefers_smaller_identifier() {
        let raw = vec![
            Interaction::new("u1", "zeta", 1.0),
            Interaction::new("u1", "alpha", 1.0),
            Interaction::new("u2", "zeta", 1.0),
            Interaction::new("u2", "alpha", 1.0),
            Interaction::new("u1", "c", 1.0),
            Interaction::new("u1", "d", 1.0),
            Interaction::new("u1", "e", 1.0),
        ];
        let cat = ItemCatalog::build(&InteractionSet::new(raw), 0.2).unwrap();
        assert_eq!(cat.get("alpha").unwrap().group, Group::A);
        assert_eq!(cat.get("zeta").unwrap().group, Group::B);
    }

    #[test]
    fn counts_nine_five_five_one_one() {
        let train = train_with_counts(&[("a", 9), ("b", 5), ("c", 5), ("d", 1), ("e", 1)], 0);
        // the filler item is absent here: exactly five items
        let cat = ItemCatalog::build(&train, 0.2).unwrap();
        assert_eq!(cat.len(), 5);
        let head: Vec<&str> = cat
            .items()
            .iter()
            .filter(|it| it.group == Group::A)
            .map(|it| it.item.as_str())
            .collect();
        assert_eq!(head, vec!["a"]);
        assert_eq!(cat.n_users_train(), 9);
        let a = cat.get("a").unwrap();
        assert_eq!((a.popularity, a.novelty, a.novelty_norm), (1.0, 0.0, 0.0));
    }

    #[test]
    fn tsv_export_layout() {
        let train = train_with_counts(&[("a", 7), ("b", 3), ("c", 1)], 16);
        let cat = ItemCatalog::build(&train, 0.2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("catalog.tsv");
        cat.write_tsv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "item\ttrain_count\tpopularity\tnovelty\tnovelty_norm\tgroup");
        assert_eq!(lines[1], "filler\t16\t1\t0\t0\tA");
        assert_eq!(lines[2], "a\t7\t0.4375\t1.1926450779423958\t0.29816126948559896\tB");
        assert_eq!(lines.len(), 5);
    }

    #[test]
    fn rejects_bad_head_fraction() {
        let train = train_with_counts(&[("a", 1)], 1);
        assert!(ItemCatalog::build(&train, 0.0).is_err());
        assert!(ItemCatalog::build(&train, 1.0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn catalog_invariants(
                pairs in prop::collection::vec((0u8..30, 0u8..25), 1..200),
                head in 0.05f64..0.95,
            ) {
                let train = InteractionSet::new(
                    pairs.iter()
                        .map(|(u, i)| Interaction::new(format!("u{u}"), format!("i{i:02}"), 1.0))
                        .collect(),
                );
                let cat = ItemCatalog::build(&train, head).unwrap();
                prop_assert_eq!(cat.len(), train.n_items());
                prop_assert_eq!(cat.group_size(Group::A), head_size(head, cat.len()));
                let min_a = cat.items().iter().filter(|i| i.group == Group::A).map(|i| i.train_count).min();
                let max_b = cat.items().iter().filter(|i| i.group == Group::B).map(|i| i.train_count).max();
                if let (Some(a), Some(b)) = (min_a, max_b) {
                    prop_assert!(a >= b);
                }
                for it in cat.items() {
                    prop_assert!(it.popularity > 0.0 && it.popularity <= 1.0);
                    prop_assert!((0.0..=1.0).contains(&it.novelty_norm));
                    prop_assert_eq!(it.novelty_norm == 0.0, it.popularity == 1.0 || cat.n_users_train() == 1);
                }
            }

            #[test]
            fn novelty_strictly_decreasing(a in 1e-9f64..1.0, b in 1e-9f64..1.0) {
                prop_assume!(a != b);
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                prop_assert!(novelty(lo).unwrap() > novelty(hi).unwrap());
            }
        }
    }
}
