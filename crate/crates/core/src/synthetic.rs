//! Seeded synthetic data: popularity-skewed interaction corpora, noisy
//! popularity rankers, and random re-ranking instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Zipf};
use serde::{Deserialize, Serialize};

use crate::baselines::{CandidateEntry, CandidateList};
use crate::catalog::{novelty, CatalogItem, Group, ItemCatalog};
use crate::dataio::{Interaction, InteractionSet};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_users: usize,
    pub n_items: usize,
    /// Exponent of the Zipf law over item popularity ranks.
    pub zipf_exponent: f64,
    /// Inclusive range of distinct items per user.
    pub min_per_user: usize,
    pub max_per_user: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_users: 2000,
            n_items: 1500,
            zipf_exponent: 1.0,
            min_per_user: 20,
            max_per_user: 60,
            seed: 0,
        }
    }
}

pub fn item_id(rank: usize) -> String {
    format!("i{rank:05}")
}

pub fn user_id(idx: usize) -> String {
    format!("u{idx:05}")
}

/// Implicit-feedback corpus where each user draws distinct items from a
/// Zipf law over item ranks (rank 1 is the most popular item).
pub fn zipf_corpus(cfg: &CorpusConfig) -> Result<InteractionSet> {
    if cfg.n_users == 0 || cfg.n_items == 0 {
        return Err(Error::Config("synthetic corpus needs users and items".into()));
    }
    if cfg.min_per_user == 0 || cfg.min_per_user > cfg.max_per_user || cfg.max_per_user > cfg.n_items
    {
        return Err(Error::Config(format!(
            "per-user range [{}, {}] must be non-empty, positive and at most {} items",
            cfg.min_per_user, cfg.max_per_user, cfg.n_items
        )));
    }
    let zipf = Zipf::new(cfg.n_items as f64, cfg.zipf_exponent)
        .map_err(|e| Error::Config(format!("zipf law: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut raw = Vec::new();
    let mut taken = vec![false; cfg.n_items + 1];
    for u in 0..cfg.n_users {
        let m = rng.random_range(cfg.min_per_user..=cfg.max_per_user);
        let mut picked = Vec::with_capacity(m);
        while picked.len() < m {
            let rank = zipf.sample(&mut rng) as usize;
            if !taken[rank] {
                taken[rank] = true;
                picked.push(rank);
            }
        }
        let user = user_id(u);
        for rank in picked {
            taken[rank] = false;
            raw.push(Interaction::new(user.clone(), item_id(rank), 1.0));
        }
    }
    Ok(InteractionSet::new(raw))
}

/// Most-popular ranker with Gaussian score noise: every unseen item is scored
/// `count / max_count + noise * z`, with `z` drawn per (user, item) from a
/// stream seeded by `seed` and the user's position.
pub fn noisy_popularity_candidates(
    train: &InteractionSet,
    n: usize,
    noise: f64,
    seed: u64,
) -> Result<Vec<CandidateList>> {
    if n == 0 {
        return Err(Error::Config("candidate list length must be >= 1".into()));
    }
    let normal = Normal::new(0.0, noise.max(0.0))
        .map_err(|e| Error::Config(format!("noise level {noise}: {e}")))?;
    let counts = train.item_counts();
    let max = counts.iter().copied().max().unwrap_or(1).max(1) as f64;
    let items: Vec<&str> = train.items().collect();
    let by_user = train.items_by_user();

    Ok(train
        .users()
        .enumerate()
        .map(|(u, user)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x100_0000_01B3) ^ u as u64);
            let mut seen = vec![false; items.len()];
            for &i in &by_user[u] {
                seen[i] = true;
            }
            let entries = counts
                .iter()
                .enumerate()
                .filter(|(i, _)| !seen[*i])
                .map(|(i, &c)| CandidateEntry::new(items[i], c as f64 / max + normal.sample(&mut rng)))
                .collect();
            let mut list = CandidateList::new(user, entries);
            list.truncated = list.len() < n;
            list.entries.truncate(n);
            list
        })
        .collect())
}

/// A random single-user re-ranking problem: `n` candidates with uniform scores,
/// random popularity in `(0, 1]`, and random group labels.
pub fn random_instance<R: Rng>(rng: &mut R, n: usize) -> (CandidateList, ItemCatalog) {
    let mut items = Vec::with_capacity(n);
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("c{i:02}");
        let p: f64 = rng.random_range(1e-3..=1.0);
        let bits = novelty(p).expect("popularity drawn in (0, 1]");
        items.push(CatalogItem {
            item: id.clone(),
            train_count: rng.random_range(1..1000),
            popularity: p,
            novelty: bits,
            novelty_norm: (bits / 10.0).min(1.0),
            group: if rng.random_bool(0.5) { Group::A } else { Group::B },
        });
        entries.push(CandidateEntry::new(id, rng.random_range(-5.0..5.0)));
    }
    let catalog = ItemCatalog::from_items(items, 0.2, 1024).expect("distinct identifiers");
    (CandidateList::new("user", entries), catalog)
}
