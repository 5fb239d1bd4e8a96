//! Voxel-wise Dice, lesion-wise detection scores and category statistics.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::{dbl_encode, msl_encode, DistanceBands, SizeBands, Strategy};
use crate::volume::{label_components, Connectivity, DistanceUnits};
use crate::Mask;

/// Cases whose largest ground-truth lesion is below this volume form the
/// mini-lesion subset.
pub const MINI_LESION_CUTOFF: usize = 1000;

/// How predicted and ground-truth components are paired.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchRule {
    /// A ground-truth lesion is detected if any predicted voxel touches it; a
    /// predicted lesion is false if it touches no ground-truth voxel.
    #[default]
    AnyOverlap,
    /// Maximum one-to-one matching over the overlap graph.
    OneToOne,
}

impl std::str::FromStr for MatchRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "any-overlap" => Ok(MatchRule::AnyOverlap),
            "one-to-one" => Ok(MatchRule::OneToOne),
            other => Err(Error::InvalidParameter(format!("unknown match rule {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LesionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl LesionCounts {
    /// `tp / (tp + fp)`, 1 when nothing was predicted.
    pub fn precision(&self) -> f64 {
        ratio_or_one(self.tp, self.tp + self.fp)
    }

    /// `tp / (tp + fn)`, 1 when there is nothing to find.
    pub fn recall(&self) -> f64 {
        ratio_or_one(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1_score(self.precision(), self.recall())
    }
}

fn ratio_or_one(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

fn f1_score(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Scores for one case.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LesionMetrics {
    pub dice: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl LesionMetrics {
    pub fn new(dice: f64, counts: LesionCounts) -> Self {
        Self {
            dice,
            tp: counts.tp,
            fp: counts.fp,
            fn_: counts.fn_,
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
        }
    }
}

/// `2|A ∩ B| / (|A| + |B|)`; 1 when both masks are empty.
pub fn dice(pred: &Mask, gt: &Mask) -> Result<f64> {
    pred.ensure_same_shape(gt)?;
    let (mut inter, mut sum) = (0usize, 0usize);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let (p, g) = (p != 0, g != 0);
        inter += usize::from(p && g);
        sum += usize::from(p) + usize::from(g);
    }
    Ok(if sum == 0 {
        1.0
    } else {
        2.0 * inter as f64 / sum as f64
    })
}

/// Lesion-wise counts under the default any-overlap rule.
pub fn lesionwise_counts(pred: &Mask, gt: &Mask, conn: Connectivity) -> Result<LesionCounts> {
    lesionwise_counts_with(pred, gt, conn, MatchRule::AnyOverlap)
}

pub fn lesionwise_counts_with(
    pred: &Mask,
    gt: &Mask,
    conn: Connectivity,
    rule: MatchRule,
) -> Result<LesionCounts> {
    pred.ensure_same_shape(gt)?;
    let pl = label_components(pred, conn);
    let gl = label_components(gt, conn);
    let mut edges: BTreeSet<(u32, u32)> = BTreeSet::new();
    for (&p, &g) in pl.labels.data().iter().zip(gl.labels.data()) {
        if p != 0 && g != 0 {
            edges.insert((p, g));
        }
    }
    let (n_pred, n_gt) = (pl.count(), gl.count());
    let counts = match rule {
        MatchRule::AnyOverlap => {
            let hit_gt: HashSet<u32> = edges.iter().map(|&(_, g)| g).collect();
            let hit_pred: HashSet<u32> = edges.iter().map(|&(p, _)| p).collect();
            LesionCounts {
                tp: hit_gt.len(),
                fp: n_pred - hit_pred.len(),
                fn_: n_gt - hit_gt.len(),
            }
        }
        MatchRule::OneToOne => {
            let matched = max_bipartite_matching(n_pred, n_gt, &edges);
            LesionCounts {
                tp: matched,
                fp: n_pred - matched,
                fn_: n_gt - matched,
            }
        }
    };
    Ok(counts)
}

/// Kuhn's augmenting-path matching; ids are 1-based.
fn max_bipartite_matching(n_left: usize, n_right: usize, edges: &BTreeSet<(u32, u32)>) -> usize {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n_left];
    for &(l, r) in edges {
        adj[l as usize - 1].push(r as usize - 1);
    }
    let mut owner: Vec<Option<usize>> = vec![None; n_right];

    fn augment(
        l: usize,
        adj: &[Vec<usize>],
        visited: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for &r in &adj[l] {
            if visited[r] {
                continue;
            }
            visited[r] = true;
            if owner[r].is_none_or(|o| augment(o, adj, visited, owner)) {
                owner[r] = Some(l);
                return true;
            }
        }
        false
    }

    let mut matched = 0;
    for l in 0..n_left {
        let mut visited = vec![false; n_right];
        if augment(l, &adj, &mut visited, &mut owner) {
            matched += 1;
        }
    }
    matched
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub conn: Connectivity,
    pub rule: MatchRule,
    /// Also aggregate the mini-lesion subset.
    pub mini_subset: bool,
    pub mini_cutoff: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            conn: Connectivity::default(),
            rule: MatchRule::default(),
            mini_subset: true,
            mini_cutoff: MINI_LESION_CUTOFF,
        }
    }
}

pub fn evaluate_case(pred: &Mask, gt: &Mask, conn: Connectivity) -> Result<LesionMetrics> {
    evaluate_case_with(pred, gt, conn, MatchRule::AnyOverlap)
}

pub fn evaluate_case_with(
    pred: &Mask,
    gt: &Mask,
    conn: Connectivity,
    rule: MatchRule,
) -> Result<LesionMetrics> {
    let d = dice(pred, gt)?;
    let counts = lesionwise_counts_with(pred, gt, conn, rule)?;
    Ok(LesionMetrics::new(d, counts))
}

/// One aligned prediction / ground-truth pair.
#[derive(Clone, Copy, Debug)]
pub struct EvalCase<'a> {
    pub case_id: &'a str,
    pub pred: &'a Mask,
    pub gt: &'a Mask,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseResult {
    pub case_id: String,
    pub metrics: LesionMetrics,
    pub max_gt_volume: usize,
    pub mini: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    /// Every case.
    All,
    /// Cases whose ground-truth lesions are all below the mini cutoff.
    Mini,
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subset::All => "all",
            Subset::Mini => "mini",
        })
    }
}

/// Unweighted mean of per-case metrics over a subset; counts are summed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AggregateMetrics {
    pub subset: Subset,
    pub cases: usize,
    pub dice: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl AggregateMetrics {
    /// Means in iteration order. `None` for an empty iterator.
    pub fn mean<'a>(subset: Subset, metrics: impl IntoIterator<Item = &'a LesionMetrics>) -> Option<Self> {
        let mut agg = Self {
            subset,
            cases: 0,
            dice: 0.0,
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
            tp: 0,
            fp: 0,
            fn_: 0,
        };
        for m in metrics {
            agg.cases += 1;
            agg.dice += m.dice;
            agg.precision += m.precision;
            agg.recall += m.recall;
            agg.f1 += m.f1;
            agg.tp += m.tp;
            agg.fp += m.fp;
            agg.fn_ += m.fn_;
        }
        if agg.cases == 0 {
            return None;
        }
        let n = agg.cases as f64;
        agg.dice /= n;
        agg.precision /= n;
        agg.recall /= n;
        agg.f1 /= n;
        Some(agg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SetReport {
    /// Sorted by case id.
    pub cases: Vec<CaseResult>,
    /// `All` first, then `Mini` when requested and non-empty.
    pub aggregates: Vec<AggregateMetrics>,
}

impl SetReport {
    pub fn aggregate(&self, subset: Subset) -> Option<&AggregateMetrics> {
        self.aggregates.iter().find(|a| a.subset == subset)
    }
}

/// Largest ground-truth component volume, 0 for an empty mask.
pub fn max_component_volume(mask: &Mask, conn: Connectivity) -> usize {
    label_components(mask, conn).max_volume()
}

/// Evaluates every case and aggregates per subset. Cases are processed in
/// parallel and reported in case-id order.
pub fn evaluate_set(cases: &[EvalCase<'_>], opts: &EvalOptions) -> Result<SetReport> {
    use rayon::prelude::*;

    if cases.is_empty() {
        return Err(Error::EmptyCaseSet);
    }
    let mut order: Vec<usize> = (0..cases.len()).collect();
    order.sort_by(|&a, &b| cases[a].case_id.cmp(cases[b].case_id));
    if let Some(w) = order.windows(2).find(|w| cases[w[0]].case_id == cases[w[1]].case_id) {
        return Err(Error::DuplicateCase(cases[w[0]].case_id.to_string()));
    }
    let results: Vec<CaseResult> = order
        .par_iter()
        .map(|&i| {
            let c = &cases[i];
            let metrics = evaluate_case_with(c.pred, c.gt, opts.conn, opts.rule)?;
            let max_gt_volume = max_component_volume(c.gt, opts.conn);
            Ok(CaseResult {
                case_id: c.case_id.to_string(),
                metrics,
                max_gt_volume,
                mini: max_gt_volume < opts.mini_cutoff,
            })
        })
        .collect::<Result<_>>()?;

    let mut aggregates = vec![AggregateMetrics::mean(Subset::All, results.iter().map(|r| &r.metrics))
        .expect("non-empty case set")];
    if opts.mini_subset {
        if let Some(mini) =
            AggregateMetrics::mean(Subset::Mini, results.iter().filter(|r| r.mini).map(|r| &r.metrics))
        {
            aggregates.push(mini);
        }
    }
    Ok(SetReport {
        cases: results,
        aggregates,
    })
}

/// Band scheme for [`category_stats`].
#[derive(Clone, Debug, PartialEq)]
pub enum BandScheme {
    Size(SizeBands),
    Distance(DistanceBands, DistanceUnits),
}

impl BandScheme {
    pub fn strategy(&self) -> Strategy {
        match self {
            BandScheme::Size(_) => Strategy::Msl,
            BandScheme::Distance(..) => Strategy::Dbl,
        }
    }

    pub fn category_names(&self) -> Vec<String> {
        match self {
            BandScheme::Size(b) => b.category_names(),
            BandScheme::Distance(b, _) => b.category_names(),
        }
    }
}

/// Lesion and voxel distribution over categories for a mask collection.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CategoryStats {
    pub strategy: Strategy,
    pub connectivity: Connectivity,
    pub scans: usize,
    pub category_names: Vec<String>,
    /// Lesions per size category; only meaningful for size bands.
    pub lesion_counts: Option<Vec<usize>>,
    pub voxel_counts: Vec<usize>,
    /// `voxel_counts / scans`, zero for an empty collection.
    pub mean_voxels_per_scan: Vec<f64>,
    pub total_lesions: usize,
    pub total_voxels: usize,
    /// Number of lesions of each exact volume.
    pub lesion_volume_histogram: BTreeMap<usize, usize>,
}

pub fn category_stats<'a>(
    masks: impl IntoIterator<Item = &'a Mask>,
    scheme: &BandScheme,
    conn: Connectivity,
) -> Result<CategoryStats> {
    let names = scheme.category_names();
    let k = names.len();
    let mut lesion_counts = vec![0usize; k];
    let mut voxel_counts = vec![0usize; k];
    let mut histogram = BTreeMap::new();
    let (mut scans, mut total_lesions, mut total_voxels) = (0usize, 0usize, 0usize);
    for mask in masks {
        mask.ensure_binary()?;
        scans += 1;
        let comps = label_components(mask, conn);
        total_lesions += comps.count();
        for &v in &comps.volumes {
            *histogram.entry(v).or_insert(0) += 1;
        }
        let cm = match scheme {
            BandScheme::Size(b) => {
                for &v in &comps.volumes {
                    lesion_counts[b.category(v as u64) as usize - 1] += 1;
                }
                msl_encode(mask, b, conn)?
            }
            BandScheme::Distance(b, units) => dbl_encode(mask, b, *units)?,
        };
        for (acc, c) in voxel_counts.iter_mut().zip(cm.voxel_counts()) {
            *acc += c;
        }
        total_voxels += mask.count_nonzero();
    }
    let mean_voxels_per_scan = voxel_counts
        .iter()
        .map(|&c| if scans == 0 { 0.0 } else { c as f64 / scans as f64 })
        .collect();
    Ok(CategoryStats {
        strategy: scheme.strategy(),
        connectivity: conn,
        scans,
        category_names: names,
        lesion_counts: matches!(scheme, BandScheme::Size(_)).then_some(lesion_counts),
        voxel_counts,
        mean_voxels_per_scan,
        total_lesions,
        total_voxels,
        lesion_volume_histogram: histogram,
    })
}
