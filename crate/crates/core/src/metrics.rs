//! Accuracy and fairness metrics for ranked lists.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::CandidateList;
use crate::catalog::{Group, ItemCatalog};
use crate::dataio::InteractionSet;
use crate::error::{Error, Result};
use crate::reranker::Target;

/// Neumaier-compensated running sum, so means do not depend on summation order
/// beyond the last ulp.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
    count: usize,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
        self.count += 1;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.total() / self.count as f64)
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::default();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GfVariant {
    Eq,
    Prop,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub gf_variant: GfVariant,
}

impl Default for MetricWeights {
    fn default() -> Self {
        MetricWeights {
            w1: 1.0 / 3.0,
            w2: 1.0 / 3.0,
            w3: 1.0 / 3.0,
            gf_variant: GfVariant::Eq,
        }
    }
}

impl MetricWeights {
    pub fn new(w1: f64, w2: f64, w3: f64, gf_variant: GfVariant) -> Result<Self> {
        let w = MetricWeights {
            w1,
            w2,
            w3,
            gf_variant,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ws = [self.w1, self.w2, self.w3];
        if ws.iter().all(|w| w.is_finite() && *w >= 0.0) && (ws.iter().sum::<f64>() - 1.0).abs() <= 1e-9
        {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "metric weights {ws:?} must be non-negative and sum to 1"
            )))
        }
    }
}

/// NDCG@k with binary relevance. `None` when the user has no test positives
/// (or `k == 0`); such users are left out of averages.
pub fn ndcg_at_k<S: AsRef<str>>(recommended: &[S], test: &HashSet<&str>, k: usize) -> Option<f64> {
    if test.is_empty() || k == 0 {
        return None;
    }
    let discount = |rank: usize| 1.0 / (rank as f64 + 1.0).log2();
    let dcg: f64 = recommended
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, item)| test.contains(item.as_ref()))
        .map(|(pos, _)| discount(pos + 1))
        .sum();
    let idcg: f64 = (1..=k.min(test.len())).map(discount).sum();
    Some(dcg / idcg)
}

/// Short-head and long-tail counts of one list.
pub fn group_counts(list: &CandidateList, catalog: &ItemCatalog) -> Result<(usize, usize)> {
    let mut unknown = Vec::new();
    let mut counts = (0, 0);
    for item in list.items() {
        match catalog.get(item).map(|c| c.group) {
            Some(Group::A) => counts.0 += 1,
            Some(Group::B) => counts.1 += 1,
            None => unknown.push(item.to_string()),
        }
    }
    if unknown.is_empty() {
        Ok(counts)
    } else {
        unknown.sort();
        unknown.dedup();
        Err(Error::UnknownItems(unknown))
    }
}

/// Normalized group fairness from per-list `(n_a, n_b)` counts.
///
/// Per list, `d = |n_a / len - p_a|`; the score is `1 - mean(d) / max(p_a, 1 - p_a)`,
/// so 1 means every list matches the target split. Empty lists are ignored.
pub fn gf_from_counts(counts: &[(usize, usize)], target: &Target) -> f64 {
    let d_max = target.p_a.max(1.0 - target.p_a);
    let acc: CompensatedSum = counts
        .iter()
        .filter(|(a, b)| a + b > 0)
        .map(|&(a, b)| (a as f64 / (a + b) as f64 - target.p_a).abs())
        .collect();
    match acc.mean() {
        Some(mean) if d_max > 0.0 => 1.0 - mean / d_max,
        _ => 1.0,
    }
}

/// Mean absolute count deviation `|n_a - len * p_a|` (lower is fairer).
pub fn mean_count_deviation(counts: &[(usize, usize)], target: &Target) -> f64 {
    counts
        .iter()
        .map(|&(a, b)| (a as f64 - (a + b) as f64 * target.p_a).abs())
        .collect::<CompensatedSum>()
        .mean()
        .unwrap_or(0.0)
}

pub fn gf_metric(lists: &[CandidateList], catalog: &ItemCatalog, target: &Target) -> Result<f64> {
    let counts = lists
        .iter()
        .map(|l| group_counts(l, catalog))
        .collect::<Result<Vec<_>>>()?;
    Ok(gf_from_counts(&counts, target))
}

/// Novelty breakdown of one recommendation list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserNovelty {
    pub user: String,
    pub mean_novelty_norm: f64,
    pub n_a_items: usize,
    pub n_b_items: usize,
    pub mean_novelty_norm_a: Option<f64>,
    pub mean_novelty_norm_b: Option<f64>,
    pub sgf: f64,
    pub sgf_raw_bits: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgfSummary {
    /// Mean over users of the per-user sub-group novelty average, in `[0, 1]`.
    pub sgf: f64,
    /// Same statistic on raw novelty bits.
    pub sgf_raw_bits: f64,
    /// Mean short-head novelty across users whose list has short-head items.
    pub n_a_bar: Option<f64>,
    pub n_b_bar: Option<f64>,
    pub per_user: Vec<UserNovelty>,
}

fn sub_group_mean(values: &[f64]) -> Option<f64> {
    values.iter().copied().collect::<CompensatedSum>().mean()
}

/// Sub-group cold-item fairness.
///
/// Per user, the mean novelty of the short-head items and of the long-tail
/// items are averaged; a group absent from the list is left out of that
/// average. Users with empty lists are skipped.
pub fn sgf(lists: &[CandidateList], catalog: &ItemCatalog) -> Result<SgfSummary> {
    if lists.is_empty() {
        return Err(Error::EmptyInput("sub-group fairness of zero lists".into()));
    }
    let mut per_user = Vec::with_capacity(lists.len());
    let mut unknown = Vec::new();
    for list in lists.iter().filter(|l| !l.is_empty()) {
        let (mut a_norm, mut b_norm, mut a_bits, mut b_bits) = (vec![], vec![], vec![], vec![]);
        for item in list.items() {
            match catalog.get(item) {
                Some(c) if c.group == Group::A => {
                    a_norm.push(c.novelty_norm);
                    a_bits.push(c.novelty);
                }
                Some(c) => {
                    b_norm.push(c.novelty_norm);
                    b_bits.push(c.novelty);
                }
                None => unknown.push(item.to_string()),
            }
        }
        let avg_defined = |a: Option<f64>, b: Option<f64>| {
            let parts: CompensatedSum = a.into_iter().chain(b).collect();
            parts.mean().unwrap_or(0.0)
        };
        let (ma, mb) = (sub_group_mean(&a_norm), sub_group_mean(&b_norm));
        let all: CompensatedSum = a_norm.iter().chain(&b_norm).copied().collect();
        per_user.push(UserNovelty {
            user: list.user.clone(),
            mean_novelty_norm: all.mean().unwrap_or(0.0),
            n_a_items: a_norm.len(),
            n_b_items: b_norm.len(),
            mean_novelty_norm_a: ma,
            mean_novelty_norm_b: mb,
            sgf: avg_defined(ma, mb),
            sgf_raw_bits: avg_defined(sub_group_mean(&a_bits), sub_group_mean(&b_bits)),
        });
    }
    if !unknown.is_empty() {
        unknown.sort();
        unknown.dedup();
        return Err(Error::UnknownItems(unknown));
    }
    let mean_of = |f: &dyn Fn(&UserNovelty) -> Option<f64>| -> Option<f64> {
        per_user.iter().filter_map(f).collect::<CompensatedSum>().mean()
    };
    Ok(SgfSummary {
        sgf: mean_of(&|u| Some(u.sgf)).unwrap_or(0.0),
        sgf_raw_bits: mean_of(&|u| Some(u.sgf_raw_bits)).unwrap_or(0.0),
        n_a_bar: mean_of(&|u| u.mean_novelty_norm_a),
        n_b_bar: mean_of(&|u| u.mean_novelty_norm_b),
        per_user,
    })
}

/// `w1 * ndcg + w2 * gf + w3 * sgf`.
pub fn all_metric(ndcg: f64, gf: f64, sgf: f64, w: &MetricWeights) -> f64 {
    w.w1 * ndcg + w.w2 * gf + w.w3 * sgf
}

/// Relative change `(new - reference) / reference`.
pub fn delta(all_new: f64, all_ref: f64) -> Result<f64> {
    if all_ref == 0.0 {
        return Err(Error::UndefinedDelta);
    }
    Ok((all_new - all_ref) / all_ref)
}

/// Harm to cold items, `1 - sgf`.
pub fn harm(sgf_norm: f64) -> f64 {
    1.0 - sgf_norm
}

/// Min-max rescales values across compared runs onto `[0, 1]`; a constant
/// input maps to all ones.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 1.0 })
        .collect()
}

/// Harm of each run with sub-group novelty rescaled across the given runs.
pub fn relative_harm(sgf_values: &[f64]) -> Vec<f64> {
    min_max_normalize(sgf_values).into_iter().map(harm).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub dataset: String,
    pub model: String,
    /// `base`, a preset name, or an explicit `l<lambda>_g<gamma>` label.
    pub preset: String,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub k: usize,
}

/// `All` values of the reference runs used for the relative-change columns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct References {
    pub base_all: Option<f64>,
    pub tpfr_all: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub meta: RunMeta,
    pub ndcg: f64,
    /// Users that contributed to the NDCG average.
    pub ndcg_users: usize,
    pub gf_eq: f64,
    pub gf_prop: f64,
    /// Mean `|n_a - K p_a|` under each target.
    pub gf_raw_eq: f64,
    pub gf_raw_prop: f64,
    pub sgf: f64,
    pub sgf_raw_bits: f64,
    pub n_a_bar: Option<f64>,
    pub n_b_bar: Option<f64>,
    pub all_metric: f64,
    pub delta_b: Option<f64>,
    pub delta_t: Option<f64>,
    pub harm: f64,
    #[serde(skip)]
    pub per_user: Vec<UserNovelty>,
}

/// Evaluates the top-`meta.k` prefix of each list.
pub fn evaluate_run(
    recs: &[CandidateList],
    test: &InteractionSet,
    catalog: &ItemCatalog,
    weights: &MetricWeights,
    refs: Option<&References>,
    meta: RunMeta,
) -> Result<EvalReport> {
    weights.validate()?;
    if meta.k == 0 {
        return Err(Error::Config("evaluation cutoff K must be >= 1".into()));
    }
    let lists: Vec<CandidateList> = recs.iter().map(|l| l.top(meta.k)).collect();

    let positives = test.item_sets();
    let ndcg_acc: CompensatedSum = lists
        .iter()
        .filter_map(|l| {
            let held_out = positives.get(l.user.as_str())?;
            let items: Vec<&str> = l.items().collect();
            ndcg_at_k(&items, held_out, meta.k)
        })
        .collect();

    let counts = lists
        .iter()
        .map(|l| group_counts(l, catalog))
        .collect::<Result<Vec<_>>>()?;
    let gf_eq = gf_from_counts(&counts, &Target::EQUAL);
    let gf_prop = gf_from_counts(&counts, &Target::PROPORTIONAL);
    let novelty = sgf(&lists, catalog)?;

    let ndcg = ndcg_acc.mean().unwrap_or(0.0);
    let gf = match weights.gf_variant {
        GfVariant::Eq => gf_eq,
        GfVariant::Prop => gf_prop,
    };
    let all = all_metric(ndcg, gf, novelty.sgf, weights);
    let rel = |r: Option<f64>| r.map(|r| delta(all, r)).transpose();
    let refs = refs.copied().unwrap_or_default();

    Ok(EvalReport {
        meta,
        ndcg,
        ndcg_users: ndcg_acc.count(),
        gf_eq,
        gf_prop,
        gf_raw_eq: mean_count_deviation(&counts, &Target::EQUAL),
        gf_raw_prop: mean_count_deviation(&counts, &Target::PROPORTIONAL),
        sgf: novelty.sgf,
        sgf_raw_bits: novelty.sgf_raw_bits,
        n_a_bar: novelty.n_a_bar,
        n_b_bar: novelty.n_b_bar,
        all_metric: all,
        delta_b: rel(refs.base_all)?,
        delta_t: rel(refs.tpfr_all)?,
        harm: harm(novelty.sgf),
        per_user: novelty.per_user,
    })
}

pub const REPORT_COLUMNS: [&str; 15] = [
    "dataset", "model", "preset", "lambda", "gamma", "K", "ndcg", "gf_eq", "gf_prop", "sgf",
    "sgf_raw_bits", "all", "delta_b", "delta_t", "harm",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One CSV row per report, columns as in [`REPORT_COLUMNS`].
pub fn write_report_csv(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(REPORT_COLUMNS)?;
    for r in reports {
        w.write_record([
            r.meta.dataset.clone(),
            r.meta.model.clone(),
            r.meta.preset.clone(),
            opt(r.meta.lambda),
            opt(r.meta.gamma),
            r.meta.k.to_string(),
            r.ndcg.to_string(),
            r.gf_eq.to_string(),
            r.gf_prop.to_string(),
            r.sgf.to_string(),
            r.sgf_raw_bits.to_string(),
            r.all_metric.to_string(),
            opt(r.delta_b),
            opt(r.delta_t),
            r.harm.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Run-relative view: SGF min-max rescaled across the given reports, and the
/// matching harm. Only meaningful for runs that are compared with each other.
pub fn write_relative_harm_csv(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let sgfs: Vec<f64> = reports.iter().map(|r| r.sgf).collect();
    let rescaled = min_max_normalize(&sgfs);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["dataset", "model", "preset", "sgf", "sgf_relative", "harm_relative"])?;
    for (r, rel) in reports.iter().zip(rescaled) {
        w.write_record([
            r.meta.dataset.clone(),
            r.meta.model.clone(),
            r.meta.preset.clone(),
            r.sgf.to_string(),
            rel.to_string(),
            harm(rel).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-user novelty breakdown, enough to redraw novelty distribution curves.
pub fn write_novelty_csv(path: &Path, per_user: &[UserNovelty]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "user",
        "mean_novelty_norm",
        "n_a_items",
        "n_b_items",
        "mean_novelty_norm_a",
        "mean_novelty_norm_b",
        "sgf",
    ])?;
    for u in per_user {
        w.write_record([
            u.user.clone(),
            u.mean_novelty_norm.to_string(),
            u.n_a_items.to_string(),
            u.n_b_items.to_string(),
            opt(u.mean_novelty_norm_a),
            opt(u.mean_novelty_norm_b),
            u.sgf.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
