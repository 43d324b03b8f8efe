//! Permutation testing with single-step maxT family-wise error control.
//!
//! Each permutation shuffles the sample order of the whole concept matrix
//! at once (rows move together, so correlations between concepts are
//! preserved), recomputes saliency and selectivity for every pair, and keeps
//! only the maximum of each metric. A pair's corrected p-value is the
//! add-one fraction of permutation maxima at or above its observed value.
//! The two corrected p-values are then Bonferroni-combined.
//!
//! Permutation `k` is drawn by Fisher-Yates from a ChaCha8 stream seeded
//! with `splitmix64(master_seed + (k + 1) * 0x9E3779B97F4A7C15)`, so every
//! permutation can be generated independently of the others.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ActivationTensor, ConceptMatrix};
use crate::error::{Error, Result};
use crate::metrics::{self, selectivity_matrix, BinnedLayer, LabelSet, PairMatrix};
use crate::progress::{Progress, ProgressEvent, Silent};

/// Permutations are evaluated in blocks of this size between progress events.
const PERMUTATION_BLOCK: usize = 64;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the RNG stream for permutation `k`.
pub fn permutation_seed(master_seed: u64, k: usize) -> u64 {
    splitmix64(master_seed.wrapping_add((k as u64).wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Unbiased integer in `[0, n)` by rejection.
fn uniform_below(rng: &mut impl RngCore, n: u64) -> u64 {
    debug_assert!(n > 0);
    let threshold = n.wrapping_neg() % n;
    loop {
        let x = rng.next_u64();
        if x >= threshold {
            return x % n;
        }
    }
}

/// Which pairs share one maximum in the null distribution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaxTScope {
    /// One family: every pair of every layer.
    #[default]
    Global,
    /// One family per layer.
    PerLayer,
}

impl std::str::FromStr for MaxTScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(MaxTScope::Global),
            "per-layer" | "per_layer" | "layer" => Ok(MaxTScope::PerLayer),
            other => Err(Error::invalid(format!("unknown maxT scope {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationPlan {
    permutation_count: usize,
    master_seed: u64,
    identity: bool,
}

impl PermutationPlan {
    pub fn new(permutation_count: usize, master_seed: u64) -> Result<Self> {
        if permutation_count == 0 {
            return Err(Error::invalid("permutation count must be >= 1"));
        }
        Ok(Self {
            permutation_count,
            master_seed,
            identity: false,
        })
    }

    /// Test hook: every "permutation" is the identity.
    #[doc(hidden)]
    pub fn identity_for_testing(permutation_count: usize) -> Self {
        Self {
            permutation_count: permutation_count.max(1),
            master_seed: 0,
            identity: true,
        }
    }

    pub fn permutation_count(&self) -> usize {
        self.permutation_count
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Permutation `k` of `0..sample_count`: output row `r` takes input row `perm[r]`.
    pub fn permutation(&self, k: usize, sample_count: usize) -> Result<Vec<usize>> {
        if k >= self.permutation_count {
            return Err(Error::invalid(format!(
                "permutation index {k} out of range (P = {})",
                self.permutation_count
            )));
        }
        let mut perm: Vec<usize> = (0..sample_count).collect();
        if self.identity {
            return Ok(perm);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(permutation_seed(self.master_seed, k));
        for i in (1..sample_count).rev() {
            let j = uniform_below(&mut rng, i as u64 + 1) as usize;
            perm.swap(i, j);
        }
        Ok(perm)
    }
}

/// Applies permutation `k` of `plan` to all concept columns at once.
pub fn permute_concepts(b: &ConceptMatrix, plan: &PermutationPlan, k: usize) -> Result<ConceptMatrix> {
    let perm = plan.permutation(k, b.sample_count())?;
    let concepts = b
        .concepts()
        .iter()
        .map(|c| {
            let values = perm.iter().map(|&src| c.values()[src]).collect();
            metrics::ConceptVector::new(c.name(), c.level(), values)
        })
        .collect::<Result<Vec<_>>>()?;
    ConceptMatrix::new(concepts)
}

/// Label sets of the concept matrix after applying `perm`, built without
/// materializing the permuted matrix.
fn permuted_label_sets(b: &ConceptMatrix, perm: &[usize]) -> Vec<LabelSet> {
    let m = b.sample_count();
    let mut ones: Vec<Vec<u32>> = b
        .prevalences()
        .into_iter()
        .map(Vec::with_capacity)
        .collect();
    for (r, &src) in perm.iter().enumerate() {
        for (j, concept) in b.concepts().iter().enumerate() {
            if concept.values()[src] == 1 {
                ones[j].push(r as u32);
            }
        }
    }
    ones.into_iter().map(|o| LabelSet::from_ones(o, m)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NullScope {
    Global,
    Layer(u32),
}

/// Per-permutation maxima of both metrics over one family of pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullDistribution {
    pub scope: NullScope,
    pub max_saliency: Vec<f64>,
    pub max_selectivity: Vec<f64>,
}

impl NullDistribution {
    pub fn permutation_count(&self) -> usize {
        self.max_saliency.len()
    }

    /// Copy with both maxima sorted ascending (the persisted form).
    pub fn sorted(&self) -> Self {
        let sort = |v: &[f64]| {
            let mut v = v.to_vec();
            v.sort_by(f64::total_cmp);
            v
        };
        Self {
            scope: self.scope,
            max_saliency: sort(&self.max_saliency),
            max_selectivity: sort(&self.max_selectivity),
        }
    }
}

/// `(1 + #{k : null_max[k] >= observed}) / (1 + P)`.
pub fn corrected_pvalue(observed: f64, null_max: &[f64]) -> Result<f64> {
    if null_max.is_empty() {
        return Err(Error::invalid("empty null distribution"));
    }
    let exceed = null_max.iter().filter(|&&x| x >= observed).count();
    Ok((1 + exceed) as f64 / (1 + null_max.len()) as f64)
}

/// Same as [`corrected_pvalue`] for maxima sorted ascending, by binary search.
pub fn corrected_pvalue_sorted(observed: f64, sorted_null_max: &[f64]) -> Result<f64> {
    if sorted_null_max.is_empty() {
        return Err(Error::invalid("empty null distribution"));
    }
    let below = sorted_null_max.partition_point(|&x| x < observed);
    let exceed = sorted_null_max.len() - below;
    Ok((1 + exceed) as f64 / (1 + sorted_null_max.len()) as f64)
}

/// Bonferroni combination of the two corrected p-values.
pub fn combine_pvalues(p_saliency: f64, p_selectivity: f64) -> f64 {
    (2.0 * p_saliency.min(p_selectivity)).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub layer: u32,
    pub neuron: usize,
    pub concept: usize,
    pub saliency: f64,
    pub selectivity: f64,
    pub p_saliency: f64,
    pub p_selectivity: f64,
    pub p_combined: f64,
    pub significant: bool,
}

impl PairScore {
    pub fn key(&self) -> (u32, usize, usize) {
        (self.layer, self.neuron, self.concept)
    }
}

/// Observed saliency and selectivity for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerScores {
    pub saliency: PairMatrix,
    pub selectivity: PairMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPairs {
    /// Sorted by (layer order in the tensor, neuron, concept).
    pub pairs: Vec<PairScore>,
    /// One entry for `Global`, one per layer for `PerLayer`.
    pub nulls: Vec<NullDistribution>,
}

fn check_dims(a: &ActivationTensor, b: &ConceptMatrix) -> Result<()> {
    if a.sample_count() != b.sample_count() {
        return Err(Error::ShapeMismatch {
            context: "activations vs concepts".into(),
            expected: format!("{} samples", a.sample_count()),
            found: format!("{} samples", b.sample_count()),
        });
    }
    Ok(())
}

pub(crate) fn bin_layers(a: &ActivationTensor, bin_count: usize, progress: &dyn Progress) -> Result<Vec<BinnedLayer>> {
    a.layers()
        .iter()
        .map(|layer| {
            let binned = BinnedLayer::new(layer, bin_count)?;
            progress.report(ProgressEvent::LayerBinned {
                layer: layer.id(),
                neurons: layer.neuron_count(),
                bins: bin_count,
            });
            Ok(binned)
        })
        .collect()
}

fn layer_scores(binned: &BinnedLayer, labels: &[LabelSet]) -> LayerScores {
    let saliency = binned.saliency(labels);
    let selectivity = selectivity_matrix(&saliency);
    LayerScores {
        saliency,
        selectivity,
    }
}

fn null_from_binned(
    layers: &[BinnedLayer],
    b: &ConceptMatrix,
    plan: &PermutationPlan,
    scope: MaxTScope,
    progress: &dyn Progress,
) -> Result<Vec<NullDistribution>> {
    let total = plan.permutation_count();
    let m = b.sample_count();
    // per permutation: (max saliency, max selectivity) per layer
    let mut per_perm: Vec<Vec<(f64, f64)>> = Vec::with_capacity(total);
    let mut start = 0;
    while start < total {
        let end = (start + PERMUTATION_BLOCK).min(total);
        let block = (start..end)
            .into_par_iter()
            .map(|k| {
                let perm = plan.permutation(k, m)?;
                let labels = permuted_label_sets(b, &perm);
                Ok(layers
                    .iter()
                    .map(|layer| {
                        let scores = layer_scores(layer, &labels);
                        (scores.saliency.max(), scores.selectivity.max())
                    })
                    .collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()?;
        per_perm.extend(block);
        start = end;
        progress.report(ProgressEvent::Permutations { done: end, total });
    }

    Ok(match scope {
        MaxTScope::Global => {
            let fold = |pick: fn(&(f64, f64)) -> f64| -> Vec<f64> {
                per_perm
                    .iter()
                    .map(|maxima| maxima.iter().map(pick).fold(0.0, f64::max))
                    .collect()
            };
            vec![NullDistribution {
                scope: NullScope::Global,
                max_saliency: fold(|m| m.0),
                max_selectivity: fold(|m| m.1),
            }]
        }
        MaxTScope::PerLayer => layers
            .iter()
            .enumerate()
            .map(|(l, layer)| NullDistribution {
                scope: NullScope::Layer(layer.layer_id()),
                max_saliency: per_perm.iter().map(|m| m[l].0).collect(),
                max_selectivity: per_perm.iter().map(|m| m[l].1).collect(),
            })
            .collect(),
    })
}

/// Null distributions of the per-permutation maxima.
pub fn build_null(
    a: &ActivationTensor,
    b: &ConceptMatrix,
    plan: &PermutationPlan,
    bin_count: usize,
    scope: MaxTScope,
) -> Result<Vec<NullDistribution>> {
    check_dims(a, b)?;
    let layers = bin_layers(a, bin_count, &Silent)?;
    null_from_binned(&layers, b, plan, scope, &Silent)
}

/// Observed scores, null maxima and corrected p-values for every pair.
pub fn score_all_pairs(
    a: &ActivationTensor,
    b: &ConceptMatrix,
    plan: &PermutationPlan,
    bin_count: usize,
    alpha: f64,
    scope: MaxTScope,
) -> Result<ScoredPairs> {
    score_all_pairs_with_progress(a, b, plan, bin_count, alpha, scope, &Silent)
}

pub fn score_all_pairs_with_progress(
    a: &ActivationTensor,
    b: &ConceptMatrix,
    plan: &PermutationPlan,
    bin_count: usize,
    alpha: f64,
    scope: MaxTScope,
    progress: &dyn Progress,
) -> Result<ScoredPairs> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must be in (0, 1), got {alpha}")));
    }
    check_dims(a, b)?;
    let layers = bin_layers(a, bin_count, progress)?;
    let labels = metrics::label_sets(b);
    let observed: Vec<LayerScores> = layers.par_iter().map(|l| layer_scores(l, &labels)).collect();
    let pair_count: usize = observed.iter().map(|s| s.saliency.values().len()).sum();
    progress.report(ProgressEvent::ObservedScored { pairs: pair_count });

    let nulls = null_from_binned(&layers, b, plan, scope, progress)?;
    let sorted: Vec<NullDistribution> = nulls.iter().map(NullDistribution::sorted).collect();

    let mut pairs = Vec::with_capacity(pair_count);
    for (l, (layer, scores)) in layers.iter().zip(&observed).enumerate() {
        let null = match scope {
            MaxTScope::Global => &sorted[0],
            MaxTScope::PerLayer => &sorted[l],
        };
        for neuron in 0..layer.neuron_count() {
            for concept in 0..b.len() {
                let saliency = scores.saliency.get(neuron, concept);
                let selectivity = scores.selectivity.get(neuron, concept);
                let p_saliency = corrected_pvalue_sorted(saliency, &null.max_saliency)?;
                let p_selectivity = corrected_pvalue_sorted(selectivity, &null.max_selectivity)?;
                let p_combined = combine_pvalues(p_saliency, p_selectivity);
                pairs.push(PairScore {
                    layer: layer.layer_id(),
                    neuron,
                    concept,
                    saliency,
                    selectivity,
                    p_saliency,
                    p_selectivity,
                    p_combined,
                    significant: p_combined <= alpha,
                });
            }
        }
    }
    Ok(ScoredPairs { pairs, nulls })
}
