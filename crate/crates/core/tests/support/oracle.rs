//! Slow reference implementations used as test oracles. Nothing here calls
//! into the scoring kernels of the library under test.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::HashMap;
use std::hash::Hash;

use ct_core::significance::PairScore;

/// Positional equal-frequency bins: sort by (value, sample index), then the
/// element at sorted position k lands in bin floor(k * B / M).
pub fn bins(a: &[f64], bin_count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..a.len()).collect();
    order.sort_by(|&i, &j| a[i].partial_cmp(&a[j]).unwrap().then(i.cmp(&j)));
    let mut out = vec![0; a.len()];
    for (k, &i) in order.iter().enumerate() {
        out[i] = k * bin_count / a.len();
    }
    out
}

fn counts<K: Eq + Hash + Copy>(xs: impl Iterator<Item = K>) -> HashMap<K, usize> {
    let mut m = HashMap::new();
    for x in xs {
        *m.entry(x).or_insert(0) += 1;
    }
    m
}

fn entropy<K>(c: &HashMap<K, usize>, n: f64) -> f64 {
    c.values()
        .map(|&k| {
            let p = k as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Brute-force NMI from a joint histogram: sum p(x,y) ln(p(x,y) / p(x)p(y)).
pub fn nmi(binned: &[usize], labels: &[u8]) -> f64 {
    assert_eq!(binned.len(), labels.len());
    let n = binned.len() as f64;
    let joint = counts(binned.iter().copied().zip(labels.iter().copied()));
    let ca = counts(binned.iter().copied());
    let cb = counts(labels.iter().copied());
    let mut mi = 0.0;
    for (&(x, y), &nxy) in &joint {
        let pxy = nxy as f64 / n;
        let px = ca[&x] as f64 / n;
        let py = cb[&y] as f64 / n;
        mi += pxy * (pxy / (px * py)).ln();
    }
    let denom = entropy(&ca, n).min(entropy(&cb, n));
    if denom <= 0.0 {
        0.0
    } else {
        (mi / denom).clamp(0.0, 1.0)
    }
}

pub fn saliency(a: &[f64], labels: &[u8], bin_count: usize) -> f64 {
    nmi(&bins(a, bin_count), labels)
}

pub fn selectivity_row(saliency_row: &[f64]) -> Vec<f64> {
    let total: f64 = saliency_row.iter().sum();
    if total > 0.0 {
        saliency_row.iter().map(|s| s / total).collect()
    } else {
        vec![0.0; saliency_row.len()]
    }
}

/// Front by exhaustive pairwise dominance checks, as a sorted index list.
pub fn front(pairs: &[PairScore]) -> Vec<usize> {
    let mut out: Vec<usize> = (0..pairs.len())
        .filter(|&i| {
            !pairs.iter().any(|q| {
                let p = &pairs[i];
                q.saliency >= p.saliency
                    && q.selectivity >= p.selectivity
                    && (q.saliency > p.saliency || q.selectivity > p.selectivity)
            })
        })
        .collect();
    out.sort_unstable();
    out
}

fn scale(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        0.0
    }
}

/// Exhaustive knee: best scaled sum over the front (scaling over all pairs);
/// ties go to the smaller p_combined, then to the smaller (layer, neuron, concept).
pub fn knee(pairs: &[PairScore], front: &[usize]) -> Option<usize> {
    let lo_a = pairs.iter().map(|p| p.saliency).fold(f64::INFINITY, f64::min);
    let hi_a = pairs.iter().map(|p| p.saliency).fold(f64::NEG_INFINITY, f64::max);
    let lo_b = pairs.iter().map(|p| p.selectivity).fold(f64::INFINITY, f64::min);
    let hi_b = pairs.iter().map(|p| p.selectivity).fold(f64::NEG_INFINITY, f64::max);
    let score = |p: &PairScore| scale(p.saliency, lo_a, hi_a) + scale(p.selectivity, lo_b, hi_b);
    let mut best: Option<usize> = None;
    for &i in front {
        best = match best {
            None => Some(i),
            Some(b) => {
                let (pi, pb) = (&pairs[i], &pairs[b]);
                let better = match score(pi).partial_cmp(&score(pb)).unwrap() {
                    Ordering::Greater => true,
                    Ordering::Less => false,
                    Ordering::Equal => {
                        pi.p_combined < pb.p_combined
                            || (pi.p_combined == pb.p_combined && pi.key() < pb.key())
                    }
                };
                Some(if better { i } else { b })
            }
        };
    }
    best
}

/// One layer as activation columns, `columns[neuron][sample]`.
pub struct RefLayer {
    pub id: u32,
    pub columns: Vec<Vec<f64>>,
}

pub struct RefPair {
    pub key: (u32, usize, usize),
    pub saliency: f64,
    pub selectivity: f64,
    /// This pair's own statistic under each permutation.
    pub perm_saliency: Vec<f64>,
    pub perm_selectivity: Vec<f64>,
}

pub struct RefRun {
    pub pairs: Vec<RefPair>,
    pub null_saliency: Vec<f64>,
    pub null_selectivity: Vec<f64>,
}

fn score_layer(layer: &RefLayer, concepts: &[Vec<u8>], bin_count: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for col in &layer.columns {
        let sal: Vec<f64> = concepts.iter().map(|c| saliency(col, c, bin_count)).collect();
        let sel = selectivity_row(&sal);
        out.extend(sal.into_iter().zip(sel));
    }
    out
}

/// Sequential global-maxT reference: every permutation rescored from scratch.
/// `perms[k][r]` is the source row for output row `r`.
pub fn reference_run(layers: &[RefLayer], concepts: &[Vec<u8>], perms: &[Vec<usize>], bin_count: usize) -> RefRun {
    let mut pairs = Vec::new();
    for layer in layers {
        let scores = score_layer(layer, concepts, bin_count);
        for (idx, (sal, sel)) in scores.into_iter().enumerate() {
            pairs.push(RefPair {
                key: (layer.id, idx / concepts.len(), idx % concepts.len()),
                saliency: sal,
                selectivity: sel,
                perm_saliency: Vec::new(),
                perm_selectivity: Vec::new(),
            });
        }
    }
    let mut null_saliency = Vec::new();
    let mut null_selectivity = Vec::new();
    for perm in perms {
        let shuffled: Vec<Vec<u8>> = concepts
            .iter()
            .map(|c| perm.iter().map(|&src| c[src]).collect())
            .collect();
        let mut scores = Vec::new();
        for layer in layers {
            scores.extend(score_layer(layer, &shuffled, bin_count));
        }
        let (mut max_a, mut max_b) = (0.0f64, 0.0f64);
        for (pair, (sal, sel)) in pairs.iter_mut().zip(scores) {
            pair.perm_saliency.push(sal);
            pair.perm_selectivity.push(sel);
            max_a = max_a.max(sal);
            max_b = max_b.max(sel);
        }
        null_saliency.push(max_a);
        null_selectivity.push(max_b);
    }
    RefRun {
        pairs,
        null_saliency,
        null_selectivity,
    }
}

/// `(1 + #{x in null : x >= observed}) / (1 + |null|)`.
pub fn perm_pvalue(observed: f64, null: &[f64]) -> f64 {
    (1 + null.iter().filter(|&&x| x >= observed).count()) as f64 / (1 + null.len()) as f64
}
