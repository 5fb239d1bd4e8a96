//! Size-gated fusion of MSL and DBL foreground maps, removal of
//! low-confidence small components, and the (mixing rate, threshold) sweep.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::binarize;
use crate::metrics::{
    evaluate_case_with, max_component_volume, AggregateMetrics, LesionMetrics, MatchRule, Subset,
    MINI_LESION_CUTOFF,
};
use crate::volume::{label_components, Connectivity};
use crate::{ForegroundProb, Mask, Real};

/// Components below this volume count as tiny or small.
pub const SMALL_LESION_CUTOFF: usize = 1000;
pub const DEFAULT_MIXING_RATE: f64 = 0.8;
pub const DEFAULT_PP_THRESHOLD: f64 = 0.75;
pub const DEFAULT_BINARIZE_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig<F> {
    /// Weight of the MSL map inside small components.
    pub lambda: F,
    pub small_cutoff: usize,
    pub binarize_threshold: F,
    pub conn: Connectivity,
}

impl<F: Real> Default for EnsembleConfig<F> {
    fn default() -> Self {
        Self {
            lambda: F::from_f64_lossy(DEFAULT_MIXING_RATE),
            small_cutoff: SMALL_LESION_CUTOFF,
            binarize_threshold: F::from_f64_lossy(DEFAULT_BINARIZE_THRESHOLD),
            conn: Connectivity::default(),
        }
    }
}

impl<F: Real> EnsembleConfig<F> {
    pub fn validate(&self) -> Result<()> {
        check_unit("lambda", self.lambda)?;
        check_unit("binarize_threshold", self.binarize_threshold)?;
        if self.small_cutoff == 0 {
            return Err(Error::InvalidParameter("small_cutoff must be at least 1".into()));
        }
        Ok(())
    }
}

/// Single-model configurations with their tuned postprocessing thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VanillaScheme {
    MslDiceCe,
    MslDiceFocal,
    DblDiceCe,
    DblDiceFocal,
}

impl VanillaScheme {
    pub fn pp_threshold(self) -> f64 {
        match self {
            VanillaScheme::MslDiceCe => 0.95,
            VanillaScheme::MslDiceFocal => 0.9,
            VanillaScheme::DblDiceCe => 0.7,
            VanillaScheme::DblDiceFocal => 0.8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostprocessConfig<F> {
    /// `p_t`: a small component is dropped if its peak probability is below this.
    pub prob_threshold: F,
    pub small_cutoff: usize,
    pub conn: Connectivity,
}

impl<F: Real> Default for PostprocessConfig<F> {
    fn default() -> Self {
        Self {
            prob_threshold: F::from_f64_lossy(DEFAULT_PP_THRESHOLD),
            small_cutoff: SMALL_LESION_CUTOFF,
            conn: Connectivity::default(),
        }
    }
}

impl<F: Real> PostprocessConfig<F> {
    pub fn for_scheme(scheme: VanillaScheme) -> Self {
        Self {
            prob_threshold: F::from_f64_lossy(scheme.pp_threshold()),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_unit("prob_threshold", self.prob_threshold)?;
        if self.small_cutoff == 0 {
            return Err(Error::InvalidParameter("small_cutoff must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_unit<F: Real>(name: &'static str, v: F) -> Result<()> {
    if v >= F::zero() && v <= F::one() {
        Ok(())
    } else {
        Err(Error::OutOfUnitRange {
            name,
            value: v.to_f64_lossless(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fused<F> {
    pub fused: ForegroundProb<F>,
    pub mask: Mask,
}

/// Interpolates `lambda * p_msl + (1 - lambda) * p_dbl` inside candidate
/// components smaller than the cutoff and keeps `p_dbl` everywhere else.
///
/// Candidates are the components of the union of both binarized maps. The
/// mixed value is clamped into `[min, max]` of the two inputs so rounding
/// cannot push it outside.
pub fn ensemble<F: Real>(
    p_msl: &ForegroundProb<F>,
    p_dbl: &ForegroundProb<F>,
    cfg: &EnsembleConfig<F>,
) -> Result<Fused<F>> {
    cfg.validate()?;
    p_msl.ensure_same_shape(p_dbl)?;
    let t = cfg.binarize_threshold;
    let union = p_msl.with_data(
        p_msl
            .data()
            .iter()
            .zip(p_dbl.data())
            .map(|(&a, &b)| u8::from(a > t || b > t))
            .collect(),
    )?;
    let comps = label_components(&union, cfg.conn);
    let small: Vec<bool> = comps.volumes.iter().map(|&v| v < cfg.small_cutoff).collect();

    let lambda = cfg.lambda;
    let rest = F::one() - lambda;
    let fused: Vec<F> = comps
        .labels
        .data()
        .iter()
        .zip(p_msl.data().iter().zip(p_dbl.data()))
        .map(|(&id, (&m, &d))| {
            if id != 0 && small[id as usize - 1] {
                let mixed = lambda * m + rest * d;
                mixed.max(m.min(d)).min(m.max(d))
            } else {
                d
            }
        })
        .collect();
    let fused = p_dbl.with_data(fused)?;
    let mask = binarize(&fused, t)?;
    Ok(Fused { fused, mask })
}

/// Removes every component of `mask` with volume below the cutoff whose peak
/// probability in `fg` is strictly below `p_t`. Larger components are kept.
pub fn postprocess<F: Real>(mask: &Mask, fg: &ForegroundProb<F>, cfg: &PostprocessConfig<F>) -> Result<Mask> {
    cfg.validate()?;
    mask.ensure_binary()?;
    mask.ensure_same_shape(fg)?;
    let comps = label_components(mask, cfg.conn);
    let mut peak = vec![F::neg_infinity(); comps.count()];
    for (&id, &p) in comps.labels.data().iter().zip(fg.data()) {
        if id != 0 {
            let slot = &mut peak[id as usize - 1];
            *slot = slot.max(p);
        }
    }
    let keep: Vec<bool> = comps
        .volumes
        .iter()
        .zip(&peak)
        .map(|(&v, &p)| v >= cfg.small_cutoff || !(p < cfg.prob_threshold))
        .collect();
    Ok(comps
        .labels
        .map(|&id| u8::from(id != 0 && keep[id as usize - 1])))
}

/// Ensemble followed by postprocessing on the fused map.
pub fn ensemble_postprocess<F: Real>(
    p_msl: &ForegroundProb<F>,
    p_dbl: &ForegroundProb<F>,
    ecfg: &EnsembleConfig<F>,
    pcfg: &PostprocessConfig<F>,
) -> Result<Fused<F>> {
    let Fused { fused, mask } = ensemble(p_msl, p_dbl, ecfg)?;
    let mask = postprocess(&mask, &fused, pcfg)?;
    Ok(Fused { fused, mask })
}

/// One case of a sweep.
#[derive(Clone, Copy, Debug)]
pub struct SweepCase<'a, F> {
    pub case_id: &'a str,
    pub p_msl: &'a ForegroundProb<F>,
    pub p_dbl: &'a ForegroundProb<F>,
    pub gt: &'a Mask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig<F> {
    pub lambdas: Vec<F>,
    pub thresholds: Vec<F>,
    pub small_cutoff: usize,
    pub binarize_threshold: F,
    pub conn: Connectivity,
    pub rule: MatchRule,
    pub mini_cutoff: usize,
}

impl<F: Real> Default for SweepConfig<F> {
    fn default() -> Self {
        Self {
            lambdas: default_lambdas(),
            thresholds: default_thresholds(),
            small_cutoff: SMALL_LESION_CUTOFF,
            binarize_threshold: F::from_f64_lossy(DEFAULT_BINARIZE_THRESHOLD),
            conn: Connectivity::default(),
            rule: MatchRule::default(),
            mini_cutoff: MINI_LESION_CUTOFF,
        }
    }
}

/// 0, 0.1, ..., 1.0.
pub fn default_lambdas<F: Real>() -> Vec<F> {
    (0..=10).map(|i| F::from_f64_lossy(i as f64 / 10.0)).collect()
}

/// 0.5, 0.55, ..., 0.95.
pub fn default_thresholds<F: Real>() -> Vec<F> {
    (0..10).map(|i| F::from_f64_lossy((50 + 5 * i) as f64 / 100.0)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub p_t: f64,
    pub subset: Subset,
    pub dice: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    /// Average rank of this (lambda, p_t) cell over the ranked columns.
    pub rank: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepResult {
    /// Ordered by lambda, then p_t, then subset (`all` before `mini`).
    pub rows: Vec<SweepRow>,
    pub best_lambda: f64,
    pub best_p_t: f64,
    pub best_rank: f64,
    /// Cases in the mini-lesion subset, sorted.
    pub mini_cases: Vec<String>,
}

/// Runs ensemble, postprocessing and evaluation for every (lambda, p_t) pair
/// and ranks the pairs.
///
/// Each subset's Dice and F1 column is ranked separately (1 = best, ties get
/// their average rank); a pair's score is the mean of its column ranks and the
/// best pair is the lowest mean, earliest in grid order on ties.
pub fn sweep<F: Real>(cases: &[SweepCase<'_, F>], cfg: &SweepConfig<F>) -> Result<SweepResult> {
    if cases.is_empty() {
        return Err(Error::EmptyCaseSet);
    }
    if cfg.lambdas.is_empty() || cfg.thresholds.is_empty() {
        return Err(Error::InvalidParameter("sweep grids must be non-empty".into()));
    }
    let mut order: Vec<usize> = (0..cases.len()).collect();
    order.sort_by(|&a, &b| cases[a].case_id.cmp(cases[b].case_id));
    if let Some(w) = order.windows(2).find(|w| cases[w[0]].case_id == cases[w[1]].case_id) {
        return Err(Error::DuplicateCase(cases[w[0]].case_id.to_string()));
    }
    let cases: Vec<&SweepCase<'_, F>> = order.iter().map(|&i| &cases[i]).collect();
    for c in &cases {
        c.p_msl.ensure_same_shape(c.p_dbl)?;
        c.p_msl.ensure_same_shape(c.gt)?;
    }
    let mini: Vec<bool> = cases
        .par_iter()
        .map(|c| max_component_volume(c.gt, cfg.conn) < cfg.mini_cutoff)
        .collect();

    let (nl, nt, nc) = (cfg.lambdas.len(), cfg.thresholds.len(), cases.len());
    // metrics[(l * nt + t) * nc + c]
    let per_lambda_case: Vec<Vec<LesionMetrics>> = (0..nl * nc)
        .into_par_iter()
        .map(|job| {
            let (l, c) = (job / nc, job % nc);
            let case = cases[c];
            let ecfg = EnsembleConfig {
                lambda: cfg.lambdas[l],
                small_cutoff: cfg.small_cutoff,
                binarize_threshold: cfg.binarize_threshold,
                conn: cfg.conn,
            };
            let fused = ensemble(case.p_msl, case.p_dbl, &ecfg)?;
            cfg.thresholds
                .iter()
                .map(|&p_t| {
                    let pcfg = PostprocessConfig {
                        prob_threshold: p_t,
                        small_cutoff: cfg.small_cutoff,
                        conn: cfg.conn,
                    };
                    let pred = postprocess(&fused.mask, &fused.fused, &pcfg)?;
                    evaluate_case_with(&pred, case.gt, cfg.conn, cfg.rule)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut cells: Vec<Vec<AggregateMetrics>> = Vec::with_capacity(nl * nt);
    for l in 0..nl {
        for t in 0..nt {
            let metric = |c: usize| &per_lambda_case[l * nc + c][t];
            let mut aggs = vec![AggregateMetrics::mean(Subset::All, (0..nc).map(metric)).expect("non-empty")];
            if let Some(m) = AggregateMetrics::mean(Subset::Mini, (0..nc).filter(|&c| mini[c]).map(metric)) {
                aggs.push(m);
            }
            cells.push(aggs);
        }
    }

    let mut columns: Vec<Vec<f64>> = Vec::new();
    for s in 0..cells[0].len() {
        columns.push(cells.iter().map(|a| a[s].dice).collect());
        columns.push(cells.iter().map(|a| a[s].f1).collect());
    }
    let ranks: Vec<Vec<f64>> = columns.iter().map(|col| average_ranks_desc(col)).collect();
    let mean_rank: Vec<f64> = (0..cells.len())
        .map(|i| ranks.iter().map(|r| r[i]).sum::<f64>() / ranks.len() as f64)
        .collect();
    let best = (0..cells.len()).fold(0, |b, i| if mean_rank[i] < mean_rank[b] { i } else { b });

    let mut rows = Vec::with_capacity(cells.len() * 2);
    for (i, aggs) in cells.iter().enumerate() {
        let (l, t) = (i / nt, i % nt);
        for a in aggs {
            rows.push(SweepRow {
                lambda: shortest(cfg.lambdas[l]),
                p_t: shortest(cfg.thresholds[t]),
                subset: a.subset,
                dice: a.dice,
                f1: a.f1,
                precision: a.precision,
                recall: a.recall,
                rank: mean_rank[i],
            });
        }
    }
    Ok(SweepResult {
        rows,
        best_lambda: shortest(cfg.lambdas[best / nt]),
        best_p_t: shortest(cfg.thresholds[best % nt]),
        best_rank: mean_rank[best],
        mini_cases: cases
            .iter()
            .zip(&mini)
            .filter(|(_, &m)| m)
            .map(|(c, _)| c.case_id.to_string())
            .collect(),
    })
}

/// The decimal a grid value was written as, so an `f32` 0.1 reports as 0.1.
fn shortest<F: Real>(v: F) -> f64 {
    v.to_string().parse().unwrap_or_else(|_| v.to_f64_lossless())
}

/// 1-based ranks with higher values first; tied values share their mean rank.
pub fn average_ranks_desc(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let r = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

/// Groups sweep rows by cell for lookups in tests and reports.
pub fn rows_by_cell(rows: &[SweepRow]) -> BTreeMap<(u64, u64), Vec<SweepRow>> {
    let mut map: BTreeMap<(u64, u64), Vec<SweepRow>> = BTreeMap::new();
    for r in rows {
        map.entry((r.lambda.to_bits(), r.p_t.to_bits())).or_default().push(*r);
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::VoxelGrid;

    fn grid(dims: [usize; 3], fill: f64, set: &[(usize, f64)]) -> VoxelGrid<f64> {
        let mut g = VoxelGrid::filled(dims, fill).unwrap();
        for &(i, v) in set {
            g.data_mut()[i] = v;
        }
        g
    }

    #[test]
    fn small_component_is_mixed() {
        let msl = grid([4, 1, 1], 0.0, &[(1, 1.0)]);
        let dbl = grid([4, 1, 1], 0.0, &[(1, 0.5)]);
        let out = ensemble(&msl, &dbl, &EnsembleConfig::default()).unwrap();
        assert!((out.fused.data()[1] - 0.9).abs() < 1e-12);
        assert_eq!(out.mask.data(), &[0, 1, 0, 0]);
    }

    #[test]
    fn large_component_keeps_dbl() {
        let dims = [50, 20, 1];
        let msl = grid(dims, 0.9, &[]);
        let dbl = grid(dims, 0.6, &[]);
        let out = ensemble(&msl, &dbl, &EnsembleConfig::default()).unwrap();
        assert_eq!(out.fused, dbl);
    }

    #[test]
    fn degenerate_lambdas() {
        let msl = grid([6, 1, 1], 0.0, &[(0, 0.7), (1, 0.2), (4, 0.3)]);
        let dbl = grid([6, 1, 1], 0.0, &[(0, 0.4), (1, 0.8), (4, 0.1)]);
        let zero = EnsembleConfig { lambda: 0.0, ..Default::default() };
        assert_eq!(ensemble(&msl, &dbl, &zero).unwrap().fused, dbl);
        let one = EnsembleConfig { lambda: 1.0, ..Default::default() };
        let f = ensemble(&msl, &dbl, &one).unwrap().fused;
        assert_eq!(&f.data()[..2], &[0.7, 0.2]);
        // voxel 4 is below threshold in both maps, so it is outside every candidate
        assert_eq!(f.data()[4], 0.1);
    }

    #[test]
    fn ensemble_rejects_bad_input() {
        let a = grid([2, 1, 1], 0.0, &[]);
        let b = grid([1, 2, 1], 0.0, &[]);
        assert!(matches!(ensemble(&a, &b, &EnsembleConfig::default()), Err(Error::ShapeMismatch { .. })));
        let bad = EnsembleConfig { lambda: 1.5, ..Default::default() };
        assert!(ensemble(&a, &a, &bad).is_err());
    }

    #[test]
    fn postprocess_rules() {
        let dims = [40, 40, 1];
        let mut mask = Mask::zeros(dims).unwrap();
        mask.data_mut()[0] = 1;
        for i in 200..1200 {
            mask.data_mut()[i] = 1;
        }
        let mut fg = grid(dims, 0.0, &[(0, 0.6)]);
        for i in 200..1200 {
            fg.data_mut()[i] = 0.1;
        }
        let out = postprocess(&mask, &fg, &PostprocessConfig::default()).unwrap();
        assert_eq!(out.data()[0], 0);
        assert_eq!(out.count_nonzero(), 1000);
        let zero = PostprocessConfig { prob_threshold: 0.0, ..Default::default() };
        assert_eq!(postprocess(&mask, &fg, &zero).unwrap(), mask);
        // at exactly p_t the component stays
        let at = PostprocessConfig { prob_threshold: 0.6, ..Default::default() };
        assert_eq!(postprocess(&mask, &fg, &at).unwrap().data()[0], 1);
    }

    #[test]
    fn vanilla_thresholds() {
        let c: PostprocessConfig<f64> = PostprocessConfig::for_scheme(VanillaScheme::MslDiceCe);
        assert_eq!(c.prob_threshold, 0.95);
        assert_eq!(VanillaScheme::DblDiceFocal.pp_threshold(), 0.8);
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks_desc(&[0.5, 0.9, 0.5, 0.1]), vec![2.5, 1.0, 2.5, 4.0]);
        assert_eq!(average_ranks_desc(&[]), Vec::<f64>::new());
    }

    #[test]
    fn default_grids() {
        let l: Vec<f64> = default_lambdas();
        let t: Vec<f64> = default_thresholds();
        assert_eq!(l.len(), 11);
        assert_eq!(t.len(), 10);
        assert!(l.contains(&0.8) && t.contains(&0.75));
    }
}
