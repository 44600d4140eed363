//! Ranking metrics (AUROC, Recall@k, AUC-Recall@k), subgroup evaluation and
//! aggregation across seeds.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphdata::{Dataset, SceneGraph, Subgroup, TripletId};

pub const DEFAULT_K_MIN: usize = 1;
pub const DEFAULT_K_MAX: usize = 100;

/// Scores with binary labels (`true` = anomalous); higher means more anomalous.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::non_finite(format!("score at position {i}")));
        }
        Ok(ScoredSet { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn n_anomalous(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    /// Positions sorted by descending score; equal scores keep input order.
    fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        idx
    }
}

/// Mann–Whitney AUROC with midranks, so tied (anomalous, normal) pairs count 0.5.
pub fn auroc(set: &ScoredSet) -> Result<f64> {
    let n_pos = set.n_anomalous();
    let n_neg = set.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid(format!(
            "AUROC needs both classes ({n_pos} anomalous, {n_neg} normal)"
        )));
    }
    let mut idx: Vec<usize> = (0..set.len()).collect();
    idx.sort_by(|&a, &b| set.scores[a].total_cmp(&set.scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && set.scores[idx[j + 1]] == set.scores[idx[i]] {
            j += 1;
        }
        // ranks are 1-based; the tie block i..=j shares the mean rank
        let mid = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_block = idx[i..=j].iter().filter(|&&k| set.labels[k]).count();
        rank_sum += mid * pos_in_block as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

fn require_anomalies(set: &ScoredSet) -> Result<usize> {
    match set.n_anomalous() {
        0 => Err(Error::invalid("recall needs at least one anomalous item")),
        n => Ok(n),
    }
}

/// Fraction of anomalies ranked within the top `k`.
pub fn recall_at_k(set: &ScoredSet, k: usize) -> Result<f64> {
    let n = require_anomalies(set)?;
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    let hits = set.ranking().into_iter().take(k).filter(|&i| set.labels[i]).count();
    Ok(hits as f64 / n as f64)
}

/// Mean of Recall@k over every integer `k` in `[k_min, k_max]`. Values of `k`
/// past the set size reuse the full-set recall.
pub fn auc_recall_k(set: &ScoredSet, k_min: usize, k_max: usize) -> Result<f64> {
    let n = require_anomalies(set)?;
    if k_min == 0 || k_min > k_max {
        return Err(Error::invalid(format!("invalid k range [{k_min}, {k_max}]")));
    }
    // cumulative hits along the ranking, computed once
    let ranking = set.ranking();
    let mut hits_at = Vec::with_capacity(ranking.len());
    let mut hits = 0usize;
    for &i in &ranking {
        hits += usize::from(set.labels[i]);
        hits_at.push(hits);
    }
    let total: usize = (k_min..=k_max)
        .map(|k| hits_at[k.min(ranking.len()) - 1])
        .sum();
    Ok(total as f64 / (n * (k_max - k_min + 1)) as f64)
}

/// Where a detector's scores come from: one score per triplet instance, or a
/// separate score table per subgroup (for detectors whose score depends on
/// the pool, such as counting).
#[derive(Clone, Debug)]
pub enum TripletScores {
    Global(HashMap<TripletId, f64>),
    PerSubgroup(Vec<HashMap<TripletId, f64>>),
}

impl TripletScores {
    fn lookup(&self, subgroup: usize, id: &TripletId) -> Result<f64> {
        let table = match self {
            TripletScores::Global(t) => t,
            TripletScores::PerSubgroup(ts) => ts.get(subgroup).ok_or_else(|| {
                Error::Contract(format!("no score table for subgroup {subgroup}"))
            })?,
        };
        table
            .get(id)
            .copied()
            .ok_or_else(|| Error::Contract(format!("triplet {id} was not scored")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgroupEval {
    pub anomalous_image: String,
    pub n_triplets: usize,
    pub auc_recall_k: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedEval {
    pub seed: u64,
    pub auroc: f64,
    pub auc_recall_k: f64,
    pub subgroups: Vec<SubgroupEval>,
}

fn subgroup_pool<'a>(
    group: &'a Subgroup,
    by_id: &HashMap<&str, &'a SceneGraph>,
) -> Result<Vec<(TripletId, bool)>> {
    let mut pool = Vec::new();
    for image in group.members() {
        let g = by_id
            .get(image)
            .ok_or_else(|| Error::Contract(format!("subgroup references unknown image {image}")))?;
        for (index, t) in g.triplets.iter().enumerate() {
            pool.push((
                TripletId {
                    image_id: image.to_owned(),
                    index,
                },
                t.is_anomalous(),
            ));
        }
    }
    Ok(pool)
}

/// AUC-Recall@k inside each subgroup and AUROC over the de-duplicated union of
/// all subgroup triplets. With per-subgroup scores, an instance that appears
/// in several subgroups enters the pooled AUROC with its mean score.
pub fn evaluate(
    seed: u64,
    scores: &TripletScores,
    dataset: &Dataset,
    subgroups: &[Subgroup],
    k_range: (usize, usize),
) -> Result<SeedEval> {
    if subgroups.is_empty() {
        return Err(Error::invalid(format!("scene {}: no subgroups to evaluate", dataset.scene)));
    }
    let by_id: HashMap<&str, &SceneGraph> = dataset.graphs.iter().map(|g| (g.image_id.as_str(), g)).collect();
    let mut per_group = Vec::with_capacity(subgroups.len());
    // instance -> (label, score sum, number of pools it appeared in)
    let mut pooled: BTreeMap<TripletId, (bool, f64, usize)> = BTreeMap::new();
    for (gi, group) in subgroups.iter().enumerate() {
        let pool = subgroup_pool(group, &by_id)?;
        let mut s = Vec::with_capacity(pool.len());
        let mut l = Vec::with_capacity(pool.len());
        for (id, label) in pool {
            let score = scores.lookup(gi, &id)?;
            let e = pooled.entry(id).or_insert((label, 0.0, 0));
            e.1 += score;
            e.2 += 1;
            s.push(score);
            l.push(label);
        }
        let n = s.len();
        let set = ScoredSet::new(s, l)?;
        per_group.push(SubgroupEval {
            anomalous_image: group.anomalous.clone(),
            n_triplets: n,
            auc_recall_k: auc_recall_k(&set, k_range.0, k_range.1)
                .map_err(|e| Error::invalid(format!("subgroup of {}: {e}", group.anomalous)))?,
        });
    }
    let (s, l): (Vec<f64>, Vec<bool>) = pooled
        .into_values()
        .map(|(label, sum, count)| (sum / count as f64, label))
        .unzip();
    let auroc = auroc(&ScoredSet::new(s, l)?)?;
    let auc_r = per_group.iter().map(|g| g.auc_recall_k).sum::<f64>() / per_group.len() as f64;
    Ok(SeedEval {
        seed,
        auroc,
        auc_recall_k: auc_r,
        subgroups: per_group,
    })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    if values.iter().all(|&v| v == values[0]) {
        return (values[0], 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scene: String,
    pub detector: String,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedEval>,
    pub auroc_mean: f64,
    pub auroc_std: f64,
    pub auc_recall_k_mean: f64,
    pub auc_recall_k_std: f64,
}

pub fn aggregate(scene: &str, detector: &str, per_seed: Vec<SeedEval>) -> EvalReport {
    let (auroc_mean, auroc_std) = mean_std(&per_seed.iter().map(|e| e.auroc).collect::<Vec<_>>());
    let (auc_recall_k_mean, auc_recall_k_std) =
        mean_std(&per_seed.iter().map(|e| e.auc_recall_k).collect::<Vec<_>>());
    EvalReport {
        scene: scene.to_owned(),
        detector: detector.to_owned(),
        seeds: per_seed.iter().map(|e| e.seed).collect(),
        per_seed,
        auroc_mean,
        auroc_std,
        auc_recall_k_mean,
        auc_recall_k_std,
    }
}

/// `scene,seed,auroc,auc_recall_k` rows for every seed of every report.
pub fn reports_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("scene,seed,auroc,auc_recall_k\n");
    for r in reports {
        for e in &r.per_seed {
            let _ = writeln!(out, "{},{},{},{}", r.scene, e.seed, e.auroc, e.auc_recall_k);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphdata::{ImageLabel, Triplet};
    use proptest::prelude::*;

    fn set(scores: &[f64], labels: &[u8]) -> ScoredSet {
        ScoredSet::new(scores.to_vec(), labels.iter().map(|&l| l == 1).collect()).unwrap()
    }

    fn pairwise_auroc(s: &[f64], l: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if l[i] && !l[j] {
                    den += 1.0;
                    num += if s[i] > s[j] {
                        1.0
                    } else if s[i] == s[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn four_triplet_case() {
        let s = set(&[0.9, 0.8, 0.3, 0.1], &[1, 0, 1, 0]);
        assert_eq!(auroc(&s).unwrap(), 0.75);
        assert_eq!(recall_at_k(&s, 1).unwrap(), 0.5);
        assert_eq!(recall_at_k(&s, 2).unwrap(), 0.5);
        assert_eq!(recall_at_k(&s, 3).unwrap(), 1.0);
        assert!((auc_recall_k(&s, 1, 3).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn trivial_auroc_cases() {
        assert_eq!(auroc(&set(&[3.0, 2.0, 1.0], &[1, 0, 0])).unwrap(), 1.0);
        assert_eq!(auroc(&set(&[1.0; 5], &[1, 0, 1, 0, 0])).unwrap(), 0.5);
        assert!(auroc(&set(&[1.0, 2.0], &[1, 1])).is_err());
        assert!(ScoredSet::new(vec![f64::NAN], vec![true]).is_err());
        assert!(ScoredSet::new(vec![1.0], vec![]).is_err());
    }

    #[test]
    fn recall_cases() {
        assert_eq!(recall_at_k(&set(&[0.9, 0.1], &[0, 1]), 1).unwrap(), 0.0);
        assert_eq!(recall_at_k(&set(&[0.9, 0.1], &[0, 1]), 5).unwrap(), 1.0);
        assert!(recall_at_k(&set(&[0.9, 0.1], &[0, 0]), 1).is_err());
        assert!(recall_at_k(&set(&[0.9, 0.1], &[0, 1]), 0).is_err());
        // ties keep input order: the earlier normal outranks the later anomaly
        assert_eq!(recall_at_k(&set(&[0.5, 0.5], &[0, 1]), 1).unwrap(), 0.0);
        assert_eq!(recall_at_k(&set(&[0.5, 0.5], &[1, 0]), 1).unwrap(), 1.0);
    }

    #[test]
    fn auc_recall_edges() {
        let perfect = set(&[10.0, 1.0, 1.0, 0.5, 0.4, 0.3, 0.2, 0.1, 0.0, -1.0], &[1, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(auc_recall_k(&perfect, 1, 10).unwrap(), 1.0);
        assert_eq!(auc_recall_k(&perfect, 1, 100).unwrap(), 1.0);
        let s = set(&[0.9, 0.8, 0.3, 0.1], &[1, 0, 1, 0]);
        for k in 1..=6 {
            assert_eq!(auc_recall_k(&s, k, k).unwrap(), recall_at_k(&s, k).unwrap());
        }
        assert!(auc_recall_k(&s, 3, 2).is_err());
        assert!(auc_recall_k(&s, 0, 2).is_err());
        // saturation: ranks beyond the pool keep the full-set value
        let bottom = set(&[3.0, 2.0, 1.0], &[0, 0, 1]);
        assert!((auc_recall_k(&bottom, 1, 5).unwrap() - 3.0 / 5.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn auroc_matches_pairwise_oracle(
            raw in prop::collection::vec((0u8..20, any::<bool>()), 2..200)
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 4.0).collect();
            let mut labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
            labels[0] = true;
            labels[1] = false;
            let s = ScoredSet::new(scores.clone(), labels.clone()).unwrap();
            prop_assert!((auroc(&s).unwrap() - pairwise_auroc(&scores, &labels)).abs() <= 1e-12);
        }

        #[test]
        fn auroc_invariant_under_monotone_maps(
            raw in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..100),
            a in 0.1f64..10.0,
            b in -10.0f64..10.0,
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s).collect();
            let mut labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
            labels[0] = true;
            labels[1] = false;
            let base = auroc(&ScoredSet::new(scores.clone(), labels.clone()).unwrap()).unwrap();
            let affine = scores.iter().map(|s| a * s + b).collect();
            let exp = scores.iter().map(|s| s.exp()).collect();
            prop_assert!((auroc(&ScoredSet::new(affine, labels.clone()).unwrap()).unwrap() - base).abs() < 1e-12);
            prop_assert!((auroc(&ScoredSet::new(exp, labels).unwrap()).unwrap() - base).abs() < 1e-12);
        }

        #[test]
        fn flipping_labels_complements_auroc(
            mut scores in prop::collection::vec(-100.0f64..100.0, 2..80),
            flags in prop::collection::vec(any::<bool>(), 80),
        ) {
            scores.sort_by(f64::total_cmp);
            scores.dedup();
            prop_assume!(scores.len() >= 2);
            let mut labels: Vec<bool> = flags[..scores.len()].to_vec();
            labels[0] = true;
            labels[1] = false;
            let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
            let a = auroc(&ScoredSet::new(scores.clone(), labels).unwrap()).unwrap();
            let b = auroc(&ScoredSet::new(scores, flipped).unwrap()).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }

        #[test]
        fn recall_monotone_and_closed_form(n in 1usize..60, r_seed in any::<u64>()) {
            let r = (r_seed % n as u64) as usize + 1;
            // one anomaly at rank r among n distinct scores
            let scores: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
            let labels: Vec<bool> = (0..n).map(|i| i + 1 == r).collect();
            let s = ScoredSet::new(scores, labels).unwrap();
            let mut prev = 0.0;
            for k in 1..=n {
                let v = recall_at_k(&s, k).unwrap();
                prop_assert!(v >= prev);
                prev = v;
            }
            prop_assert_eq!(prev, 1.0);
            let closed = (n - r + 1) as f64 / n as f64;
            prop_assert!((auc_recall_k(&s, 1, n).unwrap() - closed).abs() < 1e-12);
        }
    }

    fn graph(id: &str, anomalous: bool, labels: &[bool]) -> SceneGraph {
        SceneGraph {
            image_id: id.into(),
            scene: "s".into(),
            triplets: labels
                .iter()
                .map(|&l| {
                    let mut t = Triplet::new("a", "on", "b", 1.0);
                    t.anomaly_label = Some(l);
                    t
                })
                .collect(),
            label: if anomalous { ImageLabel::Anomalous } else { ImageLabel::Normal },
            ground_truth: vec![],
        }
    }

    fn id(image: &str, index: usize) -> TripletId {
        TripletId {
            image_id: image.into(),
            index,
        }
    }

    #[test]
    fn evaluate_single_perfect_subgroup() {
        let d = Dataset::new("s", vec![graph("a0", true, &[false, true]), graph("n0", false, &[false, false])]);
        let groups = vec![Subgroup {
            anomalous: "a0".into(),
            normals: vec!["n0".into()],
        }];
        let scores = TripletScores::Global(
            [(id("a0", 0), 0.1), (id("a0", 1), 5.0), (id("n0", 0), 0.2), (id("n0", 1), 0.3)].into(),
        );
        let e = evaluate(0, &scores, &d, &groups, (1, 100)).unwrap();
        assert_eq!(e.auroc, 1.0);
        assert_eq!(e.auc_recall_k, 1.0);
        assert_eq!(e.subgroups[0].n_triplets, 4);
    }

    #[test]
    fn evaluate_dedups_shared_normals_and_averages_subgroups() {
        let d = Dataset::new(
            "s",
            vec![
                graph("a0", true, &[true]),
                graph("a1", true, &[true]),
                graph("n0", false, &[false]),
                graph("n1", false, &[false]),
            ],
        );
        let groups = vec![
            Subgroup {
                anomalous: "a0".into(),
                normals: vec!["n0".into(), "n1".into()],
            },
            Subgroup {
                anomalous: "a1".into(),
                normals: vec!["n0".into(), "n1".into()],
            },
        ];
        // a0 ranks first in its pool; a1 ranks last in its pool
        let scores = TripletScores::Global(
            [(id("a0", 0), 3.0), (id("a1", 0), 0.5), (id("n0", 0), 1.0), (id("n1", 0), 2.0)].into(),
        );
        let e = evaluate(1, &scores, &d, &groups, (1, 3)).unwrap();
        // pooled set has 4 distinct instances (not 6): pairs won = 2 + 0 of 4
        assert_eq!(e.auroc, 0.5);
        assert!((e.subgroups[0].auc_recall_k - 1.0).abs() < 1e-15);
        assert!((e.subgroups[1].auc_recall_k - 1.0 / 3.0).abs() < 1e-15);
        assert!((e.auc_recall_k - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn per_subgroup_scores_pool_by_mean() {
        let d = Dataset::new("s", vec![graph("a0", true, &[true]), graph("a1", true, &[true]), graph("n0", false, &[false])]);
        let groups = vec![
            Subgroup {
                anomalous: "a0".into(),
                normals: vec!["n0".into()],
            },
            Subgroup {
                anomalous: "a1".into(),
                normals: vec!["n0".into()],
            },
        ];
        // n0 scores 1.0 and 3.0 in its two pools -> pooled 2.0
        let scores = TripletScores::PerSubgroup(vec![
            [(id("a0", 0), 2.5), (id("n0", 0), 1.0)].into(),
            [(id("a1", 0), 1.5), (id("n0", 0), 3.0)].into(),
        ]);
        let e = evaluate(0, &scores, &d, &groups, (1, 2)).unwrap();
        assert_eq!(e.auroc, 0.5);
    }

    #[test]
    fn missing_score_is_an_error() {
        let d = Dataset::new("s", vec![graph("a0", true, &[true]), graph("n0", false, &[false])]);
        let groups = vec![Subgroup {
            anomalous: "a0".into(),
            normals: vec!["n0".into()],
        }];
        let scores = TripletScores::Global([(id("a0", 0), 1.0)].into());
        assert!(matches!(evaluate(0, &scores, &d, &groups, (1, 100)), Err(Error::Contract(_))));
    }

    #[test]
    fn aggregation() {
        let e = |seed, a, r| SeedEval {
            seed,
            auroc: a,
            auc_recall_k: r,
            subgroups: vec![],
        };
        let rep = aggregate("s", "flow", vec![e(1, 0.8, 0.6), e(2, 0.6, 0.6)]);
        assert!((rep.auroc_mean - 0.7).abs() < 1e-15);
        assert!((rep.auroc_std - 0.1).abs() < 1e-15);
        assert_eq!(rep.auc_recall_k_std, 0.0);
        assert_eq!(rep.seeds, [1, 2]);
        let same = aggregate("s", "flow", (0..10).map(|s| e(s, 0.9, 0.5)).collect());
        assert_eq!(same.auroc_std, 0.0);
        assert_eq!(
            reports_csv(&[rep]),
            "scene,seed,auroc,auc_recall_k\ns,1,0.8,0.6\ns,2,0.6,0.6\n"
        );
    }
}
