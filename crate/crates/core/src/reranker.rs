//! Fairness-aware top-K re-ranking.
//!
//! For one user with N candidates, choose exactly K of them to maximize
//!
//! ```text
//! sum_i s_i * max(N_i, eps)^gamma * x_i  -  lambda * |n_A - K * p_A|
//! ```
//!
//! where `s_i` is the min-max normalized base score, `N_i` the item novelty in
//! bits, `n_A` the number of selected short-head items and `p_A` the target
//! short-head share. For a fixed `n_A` the penalty is constant, so the best
//! selection takes the `n_A` highest-gain short-head items and the `K - n_A`
//! highest-gain long-tail items. Scanning every feasible `n_A` therefore solves
//! the problem exactly in `O(N log N + K^2)`.

use std::cmp::Ordering;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{CandidateEntry, CandidateList};
use crate::catalog::{Group, ItemCatalog};
use crate::error::{Error, Result};

/// Lower end of the normalized score range.
pub const SCORE_FLOOR: f64 = 1e-6;
/// Novelty floor so items with zero novelty stay selectable when `gamma > 0`.
pub const NOVELTY_FLOOR: f64 = 1e-6;
pub const DEFAULT_LAMBDA: f64 = 0.1;
/// Largest number of subsets [`brute_force_rerank`] will enumerate.
pub const ORACLE_LIMIT: u128 = 2_000_000;

/// Named novelty emphasis levels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "tPFR")]
    Tpfr,
    #[serde(rename = "LaPFR")]
    Lapfr,
    #[serde(rename = "MaPFR")]
    Mapfr,
    #[serde(rename = "HaPFR")]
    Hapfr,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Tpfr, Preset::Lapfr, Preset::Mapfr, Preset::Hapfr];

    pub fn gamma(self) -> f64 {
        match self {
            Preset::Tpfr => 0.0,
            Preset::Lapfr => 0.1,
            Preset::Mapfr => 0.33,
            Preset::Hapfr => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Tpfr => "tPFR",
            Preset::Lapfr => "LaPFR",
            Preset::Mapfr => "MaPFR",
            Preset::Hapfr => "HaPFR",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown preset `{s}` (expected tPFR, LaPFR, MaPFR or HaPFR)"
                ))
            })
    }
}

/// Target exposure split between the short-head (A) and long-tail (B) groups.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub p_a: f64,
    pub p_b: f64,
}

impl Target {
    /// Parity between the groups.
    pub const EQUAL: Target = Target { p_a: 0.5, p_b: 0.5 };
    /// Proportional to the 20/80 catalog partition.
    pub const PROPORTIONAL: Target = Target { p_a: 0.2, p_b: 0.8 };

    pub fn new(p_a: f64, p_b: f64) -> Result<Self> {
        let t = Target { p_a, p_b };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |p: f64| (0.0..=1.0).contains(&p);
        if in_unit(self.p_a) && in_unit(self.p_b) && (self.p_a + self.p_b - 1.0).abs() <= 1e-9 {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "target ({}, {}) must be two fractions summing to 1",
                self.p_a, self.p_b
            )))
        }
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eq" => Ok(Target::EQUAL),
            "prop" => Ok(Target::PROPORTIONAL),
            other => {
                let bad = || Error::Config(format!("unknown target `{other}` (expected eq, prop or p_a,p_b)"));
                let (a, b) = other.split_once(',').ok_or_else(bad)?;
                let a: f64 = a.trim().parse().map_err(|_| bad())?;
                let b: f64 = b.trim().parse().map_err(|_| bad())?;
                Target::new(a, b)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RerankConfig {
    pub k: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub target: Target,
    pub preset: Option<Preset>,
}

impl RerankConfig {
    pub fn new(k: usize, lambda: f64, gamma: f64, target: Target) -> Result<Self> {
        let cfg = RerankConfig {
            k,
            lambda,
            gamma,
            target,
            preset: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_preset(preset: Preset, k: usize, lambda: f64, target: Target) -> Result<Self> {
        let cfg = RerankConfig {
            k,
            lambda,
            gamma: preset.gamma(),
            target,
            preset: Some(preset),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("K must be >= 1".into()));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if let Some(p) = self.preset {
            if p.gamma() != self.gamma {
                return Err(Error::Config(format!(
                    "preset {p} implies gamma = {}, got {}",
                    p.gamma(),
                    self.gamma
                )));
            }
        }
        self.target.validate()
    }

    /// Short run label: the preset name, or `l<lambda>_g<gamma>`.
    pub fn label(&self) -> String {
        match self.preset {
            Some(p) => p.name().to_string(),
            None => format!("l{}_g{}", self.lambda, self.gamma),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedItem {
    pub item: String,
    pub gain: f64,
    pub group: Group,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RerankResult {
    pub user: String,
    /// Selected items by descending gain, identifier ascending on ties.
    pub selected: Vec<SelectedItem>,
    pub objective_value: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub gain_sum: f64,
    pub deviation: f64,
}

impl RerankResult {
    /// The selection as a ranked list scored by gain.
    pub fn to_candidate_list(&self) -> CandidateList {
        CandidateList::new(
            self.user.clone(),
            self.selected
                .iter()
                .map(|s| CandidateEntry::new(s.item.clone(), s.gain))
                .collect(),
        )
    }
}

/// Maps scores affinely onto `[SCORE_FLOOR, 1]`, keeping entry order.
/// A constant list maps to all ones.
pub fn normalize_scores(list: &CandidateList) -> Result<CandidateList> {
    if list.is_empty() {
        return Err(Error::EmptyInput(format!(
            "candidate list for user {} is empty",
            list.user
        )));
    }
    if let Some(bad) = list.entries.iter().find(|e| !e.score.is_finite()) {
        return Err(Error::NonFiniteScore {
            user: list.user.clone(),
            item: bad.item.clone(),
        });
    }
    let (lo, hi) = list
        .entries
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
            (lo.min(e.score), hi.max(e.score))
        });
    let range = hi - lo;
    let map = |s: f64| {
        if range == 0.0 || s == hi {
            1.0
        } else if s == lo {
            SCORE_FLOOR
        } else {
            SCORE_FLOOR + (1.0 - SCORE_FLOOR) * (s - lo) / range
        }
    };
    Ok(CandidateList {
        user: list.user.clone(),
        entries: list
            .entries
            .iter()
            .map(|e| CandidateEntry::new(e.item.clone(), map(e.score)))
            .collect(),
        truncated: list.truncated,
    })
}

/// Novelty-weighted gain `s * max(novelty, NOVELTY_FLOOR)^gamma`.
pub fn gain(score: f64, novelty: f64, gamma: f64) -> f64 {
    score * novelty.max(NOVELTY_FLOOR).powf(gamma)
}

/// Distance of the short-head count from its target, `|n_a - K * p_a|`.
pub fn deviation(n_a: usize, k: usize, target: &Target) -> f64 {
    (n_a as f64 - k as f64 * target.p_a).abs()
}

#[derive(Clone, Debug)]
struct Scored<'a> {
    item: &'a str,
    gain: f64,
    group: Group,
}

fn by_gain(a: &Scored<'_>, b: &Scored<'_>) -> Ordering {
    b.gain.total_cmp(&a.gain).then_with(|| a.item.cmp(b.item))
}

/// Sums gains in [`by_gain`] order. Both solvers go through this so the same
/// set always yields the same floating-point total.
fn gain_total(sorted: &[Scored<'_>]) -> f64 {
    sorted.iter().map(|s| s.gain).sum()
}

fn score_candidates<'a>(
    list: &'a CandidateList,
    catalog: &ItemCatalog,
    cfg: &RerankConfig,
) -> Result<Vec<Scored<'a>>> {
    cfg.validate()?;
    if list.len() < cfg.k {
        return Err(Error::ShortList {
            user: list.user.clone(),
            len: list.len(),
            k: cfg.k,
        });
    }
    let normalized = normalize_scores(list)?;
    let mut unknown = Vec::new();
    let mut scored = Vec::with_capacity(list.len());
    for (orig, norm) in list.entries.iter().zip(&normalized.entries) {
        match catalog.get(&orig.item) {
            Some(info) => scored.push(Scored {
                item: orig.item.as_str(),
                gain: gain(norm.score, info.novelty, cfg.gamma),
                group: info.group,
            }),
            None => unknown.push(orig.item.clone()),
        }
    }
    if !unknown.is_empty() {
        unknown.sort();
        unknown.dedup();
        return Err(Error::UnknownItems(unknown));
    }
    Ok(scored)
}

struct Selection<'a> {
    items: Vec<Scored<'a>>,
    n_a: usize,
    gain_sum: f64,
    deviation: f64,
    objective: f64,
}

impl<'a> Selection<'a> {
    fn evaluate(mut items: Vec<Scored<'a>>, cfg: &RerankConfig) -> Self {
        items.sort_by(by_gain);
        let n_a = items.iter().filter(|s| s.group == Group::A).count();
        let gain_sum = gain_total(&items);
        let deviation = deviation(n_a, cfg.k, &cfg.target);
        Selection {
            objective: gain_sum - cfg.lambda * deviation,
            items,
            n_a,
            gain_sum,
            deviation,
        }
    }

    /// Preference order: higher objective, then smaller deviation, then larger
    /// gain sum, then fewer short-head items, then the lexicographically first
    /// gain-sorted sequence.
    fn better_than(&self, other: &Selection<'_>) -> bool {
        let key = self
            .objective
            .total_cmp(&other.objective)
            .then_with(|| other.deviation.total_cmp(&self.deviation))
            .then_with(|| self.gain_sum.total_cmp(&other.gain_sum))
            .then_with(|| other.n_a.cmp(&self.n_a))
            .then_with(|| {
                other
                    .items
                    .iter()
                    .zip(&self.items)
                    .map(|(o, s)| by_gain(o, s))
                    .find(|o| o.is_ne())
                    .unwrap_or(Ordering::Equal)
            });
        key == Ordering::Greater
    }

    fn into_result(self, user: &str, k: usize) -> RerankResult {
        RerankResult {
            user: user.to_string(),
            selected: self
                .items
                .iter()
                .map(|s| SelectedItem {
                    item: s.item.to_string(),
                    gain: s.gain,
                    group: s.group,
                })
                .collect(),
            objective_value: self.objective,
            n_a: self.n_a,
            n_b: k - self.n_a,
            gain_sum: self.gain_sum,
            deviation: self.deviation,
        }
    }
}

/// Exact re-ranking of one user's candidates.
pub fn rerank_user(
    list: &CandidateList,
    catalog: &ItemCatalog,
    cfg: &RerankConfig,
) -> Result<RerankResult> {
    let scored = score_candidates(list, catalog, cfg)?;
    let k = cfg.k;
    let (mut head, mut tail): (Vec<_>, Vec<_>) =
        scored.into_iter().partition(|s| s.group == Group::A);
    head.sort_by(by_gain);
    tail.sort_by(by_gain);

    let lo = k.saturating_sub(tail.len());
    let hi = k.min(head.len());
    let mut best: Option<Selection<'_>> = None;
    for k_a in lo..=hi {
        let chosen = head[..k_a]
            .iter()
            .chain(&tail[..k - k_a])
            .cloned()
            .collect();
        let candidate = Selection::evaluate(chosen, cfg);
        if best.as_ref().is_none_or(|b| candidate.better_than(b)) {
            best = Some(candidate);
        }
    }
    // lo <= hi because |head| + |tail| >= k
    let best = best.expect("at least one feasible short-head count");
    Ok(best.into_result(&list.user, k))
}

fn binomial_capped(n: usize, k: usize, cap: u128) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > cap {
            return acc;
        }
    }
    acc
}

/// Exhaustive search over all K-subsets with the same objective and tie-break
/// as [`rerank_user`]. Refuses instances with more than [`ORACLE_LIMIT`] subsets.
pub fn brute_force_rerank(
    list: &CandidateList,
    catalog: &ItemCatalog,
    cfg: &RerankConfig,
) -> Result<RerankResult> {
    let scored = score_candidates(list, catalog, cfg)?;
    let n = scored.len();
    let subsets = binomial_capped(n, cfg.k, ORACLE_LIMIT);
    if subsets > ORACLE_LIMIT {
        return Err(Error::OracleTooLarge {
            n,
            k: cfg.k,
            subsets,
            limit: ORACLE_LIMIT,
        });
    }
    let mut best: Option<Selection<'_>> = None;
    for combo in (0..n).combinations(cfg.k) {
        let chosen = combo.iter().map(|&i| scored[i].clone()).collect();
        let candidate = Selection::evaluate(chosen, cfg);
        if best.as_ref().is_none_or(|b| candidate.better_than(b)) {
            best = Some(candidate);
        }
    }
    let best = best.expect("k <= n guarantees one subset");
    Ok(best.into_result(&list.user, cfg.k))
}

fn collect_results(
    outcomes: Vec<(String, Result<RerankResult>)>,
) -> Result<Vec<RerankResult>> {
    let mut results = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for (user, outcome) in outcomes {
        match outcome {
            Ok(r) => results.push(r),
            Err(e) => failures.push((user, e)),
        }
    }
    if failures.is_empty() {
        Ok(results)
    } else {
        Err(Error::PerUser(failures))
    }
}

/// Re-ranks every list in parallel; output order follows input order.
pub fn rerank_all(
    lists: &[CandidateList],
    catalog: &ItemCatalog,
    cfg: &RerankConfig,
) -> Result<Vec<RerankResult>> {
    collect_results(
        lists
            .par_iter()
            .map(|l| (l.user.clone(), rerank_user(l, catalog, cfg)))
            .collect(),
    )
}

/// Single-threaded counterpart of [`rerank_all`].
pub fn rerank_all_sequential(
    lists: &[CandidateList],
    catalog: &ItemCatalog,
    cfg: &RerankConfig,
) -> Result<Vec<RerankResult>> {
    collect_results(
        lists
            .iter()
            .map(|l| (l.user.clone(), rerank_user(l, catalog, cfg)))
            .collect(),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserSummary {
    pub user: String,
    pub n_a: usize,
    pub n_b: usize,
    pub deviation: f64,
    pub objective_value: f64,
}

/// Per-run record written next to a re-ranked candidate file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub config: RerankConfig,
    pub users: Vec<UserSummary>,
}

impl Sidecar {
    pub fn new(config: &RerankConfig, results: &[RerankResult]) -> Self {
        Sidecar {
            config: config.clone(),
            users: results
                .iter()
                .map(|r| UserSummary {
                    user: r.user.clone(),
                    n_a: r.n_a,
                    n_b: r.n_b,
                    deviation: r.deviation,
                    objective_value: r.objective_value,
                })
                .collect(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut out, self)?;
        writeln!(out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}
