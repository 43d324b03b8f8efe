//! Pareto front, knee point and top-k rankings over (saliency, selectivity).
//!
//! Both objectives are maximized. Ties are always broken by smaller
//! `p_combined`, then by ascending `(layer, neuron, concept)`, so every
//! ranking is a total order.

use std::cmp::Ordering;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::significance::PairScore;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Saliency,
    Selectivity,
    /// Sum of min-max scaled saliency and selectivity over the scope.
    Combined,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Saliency, Metric::Selectivity, Metric::Combined];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Saliency => "saliency",
            Metric::Selectivity => "selectivity",
            Metric::Combined => "combined",
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "saliency" => Ok(Metric::Saliency),
            "selectivity" => Ok(Metric::Selectivity),
            "combined" => Ok(Metric::Combined),
            other => Err(Error::invalid(format!("unknown metric {other:?}"))),
        }
    }
}

/// `true` if `p` dominates `q`: no worse in both objectives, better in one.
pub fn dominates(p: &PairScore, q: &PairScore) -> bool {
    p.saliency >= q.saliency
        && p.selectivity >= q.selectivity
        && (p.saliency > q.saliency || p.selectivity > q.selectivity)
}

fn tie_break(a: &PairScore, b: &PairScore) -> Ordering {
    a.p_combined
        .total_cmp(&b.p_combined)
        .then_with(|| a.key().cmp(&b.key()))
}

fn front_order(a: &PairScore, b: &PairScore) -> Ordering {
    b.saliency
        .total_cmp(&a.saliency)
        .then_with(|| b.selectivity.total_cmp(&a.selectivity))
        .then_with(|| a.key().cmp(&b.key()))
}

/// Indices of the non-dominated pairs, ordered by descending saliency, then
/// descending selectivity, then ids. Pairs with identical coordinates are
/// all kept.
pub fn pareto_front(pairs: &[PairScore]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| front_order(&pairs[a], &pairs[b]));

    let mut front = Vec::new();
    // best selectivity among strictly higher saliency groups
    let mut best_above = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        let sal = pairs[order[i]].saliency;
        let group_end = order[i..]
            .iter()
            .position(|&idx| pairs[idx].saliency != sal)
            .map_or(order.len(), |n| i + n);
        let group_best = pairs[order[i]].selectivity;
        if group_best > best_above {
            front.extend(
                order[i..group_end]
                    .iter()
                    .copied()
                    .filter(|&idx| pairs[idx].selectivity == group_best),
            );
            best_above = group_best;
        }
        i = group_end;
    }
    front
}

/// `(v - min) / (max - min)`; all zeros when the range is degenerate.
pub fn min_max_scale(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|&v| (v - lo) / range).collect()
}

/// Scaled saliency plus scaled selectivity for every pair, each scaled over
/// the whole slice.
pub fn combined_scores(pairs: &[PairScore]) -> Vec<f64> {
    let sal: Vec<f64> = pairs.iter().map(|p| p.saliency).collect();
    let sel: Vec<f64> = pairs.iter().map(|p| p.selectivity).collect();
    min_max_scale(&sal)
        .into_iter()
        .zip(min_max_scale(&sel))
        .map(|(a, b)| a + b)
        .collect()
}

/// Front member maximizing the combined score, with scaling taken over all
/// of `pairs`. `None` iff `front` is empty.
pub fn knee_point(pairs: &[PairScore], front: &[usize]) -> Option<usize> {
    let combined = combined_scores(pairs);
    front.iter().copied().min_by(|&a, &b| {
        combined[b]
            .total_cmp(&combined[a])
            .then_with(|| tie_break(&pairs[a], &pairs[b]))
    })
}

/// Value of `metric` for every pair; `Combined` is scope-relative.
pub fn metric_values(pairs: &[PairScore], metric: Metric) -> Vec<f64> {
    match metric {
        Metric::Saliency => pairs.iter().map(|p| p.saliency).collect(),
        Metric::Selectivity => pairs.iter().map(|p| p.selectivity).collect(),
        Metric::Combined => combined_scores(pairs),
    }
}

/// Indices of the `k` best pairs by `metric`, best first.
pub fn top_k(pairs: &[PairScore], metric: Metric, k: usize) -> Vec<usize> {
    let values = metric_values(pairs, metric);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let cmp = |&a: &usize, &b: &usize| {
        values[b]
            .total_cmp(&values[a])
            .then_with(|| tie_break(&pairs[a], &pairs[b]))
    };
    if k < order.len() {
        order.select_nth_unstable_by(k, cmp);
        order.truncate(k);
    }
    order.sort_by(cmp);
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(id: usize, sal: f64, sel: f64) -> PairScore {
        PairScore {
            layer: 0,
            neuron: id,
            concept: 0,
            saliency: sal,
            selectivity: sel,
            p_saliency: 0.01,
            p_selectivity: 0.01,
            p_combined: 0.02,
            significant: true,
        }
    }

    #[test]
    fn front_example() {
        let pairs = [pair(0, 0.9, 0.2), pair(1, 0.5, 0.5), pair(2, 0.2, 0.9), pair(3, 0.4, 0.4)];
        assert_eq!(pareto_front(&pairs), vec![0, 1, 2]);
        assert_eq!(pareto_front(&pairs[..1]), vec![0]);
        assert!(pareto_front(&[]).is_empty());
    }

    #[test]
    fn identical_points_all_on_front() {
        let pairs: Vec<_> = (0..4).map(|i| pair(3 - i, 0.3, 0.3)).collect();
        // ordered by ids: neuron 0 is index 3
        assert_eq!(pareto_front(&pairs), vec![3, 2, 1, 0]);
    }

    #[test]
    fn equal_saliency_lower_selectivity_is_dominated() {
        let pairs = [pair(0, 0.5, 0.5), pair(1, 0.5, 0.4), pair(2, 0.4, 0.5)];
        assert_eq!(pareto_front(&pairs), vec![0]);
    }

    #[test]
    fn scaling_examples() {
        let s = min_max_scale(&[0.2, 0.5, 0.9]);
        assert_eq!(s[0], 0.0);
        assert!((s[1] - 3.0 / 7.0).abs() < 1e-12);
        assert_eq!(s[2], 1.0);
        assert_eq!(min_max_scale(&[0.7, 0.7]), vec![0.0, 0.0]);
        assert_eq!(min_max_scale(&[1.0]), vec![0.0]);
    }

    #[test]
    fn knee_examples() {
        let pairs = [pair(0, 0.9, 0.3), pair(1, 0.6, 0.6), pair(2, 0.3, 0.8)];
        let front = pareto_front(&pairs);
        assert_eq!(front.len(), 3);
        assert_eq!(knee_point(&pairs, &front), Some(1));

        assert_eq!(knee_point(&pairs, &[2]), Some(2));
        assert_eq!(knee_point(&pairs, &[]), None);

        let sym = [pair(5, 1.0, 0.0), pair(4, 0.0, 1.0)];
        let front = pareto_front(&sym);
        assert_eq!(knee_point(&sym, &front), Some(1));
    }

    #[test]
    fn knee_prefers_smaller_p_on_ties() {
        let mut sym = [pair(0, 1.0, 0.0), pair(1, 0.0, 1.0)];
        sym[1].p_combined = 0.002;
        assert_eq!(knee_point(&sym, &pareto_front(&sym)), Some(1));
    }

    #[test]
    fn top_k_basics() {
        let pairs = [pair(0, 0.1, 0.9), pair(1, 0.8, 0.2), pair(2, 0.5, 0.5)];
        assert_eq!(top_k(&pairs, Metric::Saliency, 1), vec![1]);
        assert_eq!(top_k(&pairs, Metric::Selectivity, 10), vec![0, 2, 1]);
        assert_eq!(top_k(&pairs, Metric::Saliency, 3), vec![1, 2, 0]);
    }
}
