//! Discretization, plug-in entropy, normalized mutual information and the
//! two per-pair measures built on it.
//!
//! Saliency of neuron `i` for concept `j` is the normalized mutual
//! information between the neuron's (binned) activations and the concept's
//! binary labels. Selectivity is the share of a neuron's total saliency that
//! falls on one concept.
//!
//! Activations are discretized with equal-frequency binning: values are
//! stably sorted and the element at sorted position `k` of `M` goes to bin
//! `floor(k * B / M)`. Ties may straddle neighbouring bins; the rule is
//! purely positional so the result is bit-reproducible. Entropies are in
//! nats. Mutual information is normalized by `min(H(a), H(b))`, and is
//! defined as 0 when either marginal entropy is 0.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ConceptMatrix, Layer};
use crate::error::{Error, Result};

/// Largest supported bin count (bin indices are stored as `u16`).
pub const MAX_BIN_COUNT: usize = u16::MAX as usize + 1;

/// Real-valued activations of one neuron over `M >= 2` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationVector(Vec<f64>);

impl ActivationVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid(format!(
                "activation vector needs at least 2 samples, got {}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite activation {} at sample {pos}",
                values[pos]
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Hierarchy tag attached to a concept (e.g. ICD chapter / category / code).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConceptLevel {
    High,
    Mid,
    Low,
    #[default]
    Unspecified,
}

impl ConceptLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            ConceptLevel::High => "high",
            ConceptLevel::Mid => "mid",
            ConceptLevel::Low => "low",
            ConceptLevel::Unspecified => "unspecified",
        }
    }
}

impl FromStr for ConceptLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "high" => Ok(ConceptLevel::High),
            "mid" => Ok(ConceptLevel::Mid),
            "low" => Ok(ConceptLevel::Low),
            "unspecified" => Ok(ConceptLevel::Unspecified),
            other => Err(Error::invalid(format!("unknown concept level {other:?}"))),
        }
    }
}

impl std::fmt::Display for ConceptLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Binary labels of one concept over the samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptVector {
    name: String,
    level: ConceptLevel,
    values: Vec<u8>,
}

impl ConceptVector {
    pub fn new(name: impl Into<String>, level: ConceptLevel, values: Vec<u8>) -> Result<Self> {
        let name = name.into();
        if values.is_empty() {
            return Err(Error::invalid(format!("concept {name:?} has no samples")));
        }
        if let Some(pos) = values.iter().position(|&v| v > 1) {
            return Err(Error::NonBinaryValue {
                row: pos,
                column: name,
                value: values[pos].to_string(),
            });
        }
        Ok(Self {
            name,
            level,
            values,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn level(&self) -> ConceptLevel {
        self.level
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of samples labelled 1.
    pub fn prevalence(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }
}

/// Discretized activations: one bin index in `[0, bin_count)` per sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinnedVector {
    bin_indices: Vec<u16>,
    bin_count: usize,
}

impl BinnedVector {
    pub fn new(bin_indices: Vec<u16>, bin_count: usize) -> Result<Self> {
        if bin_count == 0 || bin_count > MAX_BIN_COUNT {
            return Err(Error::invalid(format!("bin count {bin_count} out of range")));
        }
        if let Some(&bad) = bin_indices.iter().find(|&&b| b as usize >= bin_count) {
            return Err(Error::invalid(format!(
                "bin index {bad} not below bin count {bin_count}"
            )));
        }
        Ok(Self {
            bin_indices,
            bin_count,
        })
    }

    pub fn bin_indices(&self) -> &[u16] {
        &self.bin_indices
    }

    pub fn bin_count(&self) -> usize {
        self.bin_count
    }

    pub fn len(&self) -> usize {
        self.bin_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bin_indices.is_empty()
    }

    /// Number of samples per bin (length `bin_count`).
    pub fn occupancy(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.bin_count];
        for &b in &self.bin_indices {
            counts[b as usize] += 1;
        }
        counts
    }
}

/// A discrete variable whose plug-in entropy can be taken.
pub trait Symbols {
    fn sample_count(&self) -> usize;
    fn symbol_counts(&self) -> Vec<usize>;
}

impl Symbols for BinnedVector {
    fn sample_count(&self) -> usize {
        self.len()
    }

    fn symbol_counts(&self) -> Vec<usize> {
        self.occupancy()
    }
}

impl Symbols for ConceptVector {
    fn sample_count(&self) -> usize {
        self.len()
    }

    fn symbol_counts(&self) -> Vec<usize> {
        let ones = self.prevalence();
        vec![self.len() - ones, ones]
    }
}

/// Plug-in (maximum-likelihood) entropy in nats. Empty input has entropy 0.
pub fn entropy<S: Symbols + ?Sized>(x: &S) -> f64 {
    entropy_from_counts(x.symbol_counts(), x.sample_count())
}

#[inline]
fn entropy_term(count: usize, total: f64) -> f64 {
    if count == 0 {
        0.0
    } else {
        let p = count as f64 / total;
        -p * p.ln()
    }
}

pub(crate) fn entropy_from_counts<I>(counts: I, total: usize) -> f64
where
    I: IntoIterator<Item = usize>,
{
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    counts.into_iter().map(|n| entropy_term(n, total)).sum()
}

fn check_bin_count(bin_count: usize) -> Result<()> {
    if bin_count < 2 {
        return Err(Error::invalid(format!("bin count must be >= 2, got {bin_count}")));
    }
    if bin_count > MAX_BIN_COUNT {
        return Err(Error::invalid(format!(
            "bin count must be <= {MAX_BIN_COUNT}, got {bin_count}"
        )));
    }
    Ok(())
}

/// Positional equal-frequency bins for a finite slice. Callers validate.
fn quantile_bins<T: PartialOrd + Copy>(values: &[T], bin_count: usize) -> Vec<u16> {
    let m = values.len();
    let mut order: Vec<usize> = (0..m).collect();
    // stable: equal values keep sample order
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).expect("finite values"));
    let mut bins = vec![0u16; m];
    for (rank, &sample) in order.iter().enumerate() {
        bins[sample] = (rank * bin_count / m) as u16;
    }
    bins
}

/// Equal-frequency binning of one neuron's activations.
pub fn bin_activations(a: &ActivationVector, bin_count: usize) -> Result<BinnedVector> {
    check_bin_count(bin_count)?;
    Ok(BinnedVector {
        bin_indices: quantile_bins(a.values(), bin_count),
        bin_count,
    })
}

/// Binned activations of one neuron with its occupancy and entropy cached,
/// so that it can be scored against many label vectors.
#[derive(Debug, Clone)]
pub(crate) struct BinnedColumn {
    bins: Vec<u16>,
    occupancy: Vec<u32>,
    entropy: f64,
}

impl BinnedColumn {
    fn from_bins(bins: Vec<u16>, bin_count: usize) -> Self {
        let mut occupancy = vec![0u32; bin_count];
        for &b in &bins {
            occupancy[b as usize] += 1;
        }
        let entropy = entropy_from_counts(occupancy.iter().map(|&n| n as usize), bins.len());
        Self {
            bins,
            occupancy,
            entropy,
        }
    }

    fn bin_count(&self) -> usize {
        self.occupancy.len()
    }
}

/// Sample positions labelled 1 for one concept, with the label entropy.
#[derive(Debug, Clone)]
pub(crate) struct LabelSet {
    pub(crate) ones: Vec<u32>,
    pub(crate) entropy: f64,
}

impl LabelSet {
    pub(crate) fn from_ones(ones: Vec<u32>, sample_count: usize) -> Self {
        let n1 = ones.len();
        let entropy = entropy_from_counts([sample_count - n1, n1], sample_count);
        Self { ones, entropy }
    }

    pub(crate) fn from_values(values: &[u8]) -> Self {
        let ones = values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(|(i, _)| i as u32)
            .collect();
        Self::from_ones(ones, values.len())
    }
}

/// Normalized MI between a binned column and a label set. `scratch` must
/// have at least `bin_count` slots. Every saliency in the crate goes
/// through here, so scalar, matrix and permutation results agree exactly.
fn nmi_kernel(column: &BinnedColumn, labels: &LabelSet, scratch: &mut [u32]) -> f64 {
    let denom = column.entropy.min(labels.entropy);
    if denom <= 0.0 {
        return 0.0;
    }
    let bin_count = column.bin_count();
    let ones_per_bin = &mut scratch[..bin_count];
    ones_per_bin.fill(0);
    for &r in &labels.ones {
        ones_per_bin[column.bins[r as usize] as usize] += 1;
    }
    let total = column.bins.len() as f64;
    let joint: f64 = column
        .occupancy
        .iter()
        .zip(ones_per_bin.iter())
        .map(|(&n, &n1)| entropy_term((n - n1) as usize, total) + entropy_term(n1 as usize, total))
        .sum();
    let mi = column.entropy + labels.entropy - joint;
    (mi / denom).clamp(0.0, 1.0)
}

/// Normalized MI between already-binned activations and a concept.
pub fn nmi_binned(a: &BinnedVector, b: &ConceptVector) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} activations vs {} labels",
            a.len(),
            b.len()
        )));
    }
    let column = BinnedColumn::from_bins(a.bin_indices.clone(), a.bin_count);
    let labels = LabelSet::from_values(b.values());
    let mut scratch = vec![0u32; a.bin_count];
    Ok(nmi_kernel(&column, &labels, &mut scratch))
}

/// `I(bin(a); b) / min(H(bin(a)), H(b))`, in `[0, 1]`.
pub fn normalized_mutual_information(
    a: &ActivationVector,
    b: &ConceptVector,
    bin_count: usize,
) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} activations vs {} labels",
            a.len(),
            b.len()
        )));
    }
    let binned = bin_activations(a, bin_count)?;
    nmi_binned(&binned, b)
}

/// Association strength between a neuron and a concept.
pub fn saliency(a: &ActivationVector, b: &ConceptVector, bin_count: usize) -> Result<f64> {
    normalized_mutual_information(a, b, bin_count)
}

/// Dense neurons x concepts score table for one layer, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMatrix {
    layer_id: u32,
    neurons: usize,
    concepts: usize,
    values: Vec<f64>,
}

pub type SaliencyMatrix = PairMatrix;
pub type SelectivityMatrix = PairMatrix;

impl PairMatrix {
    pub fn from_rows(layer_id: u32, neurons: usize, concepts: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != neurons * concepts {
            return Err(Error::invalid(format!(
                "{} values for a {neurons}x{concepts} matrix",
                values.len()
            )));
        }
        Ok(Self {
            layer_id,
            neurons,
            concepts,
            values,
        })
    }

    pub fn layer_id(&self) -> u32 {
        self.layer_id
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn concepts(&self) -> usize {
        self.concepts
    }

    pub fn get(&self, neuron: usize, concept: usize) -> f64 {
        self.values[neuron * self.concepts + concept]
    }

    pub fn row(&self, neuron: usize) -> &[f64] {
        &self.values[neuron * self.concepts..(neuron + 1) * self.concepts]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// A layer with every neuron's activations binned once.
#[derive(Debug, Clone)]
pub struct BinnedLayer {
    layer_id: u32,
    sample_count: usize,
    columns: Vec<BinnedColumn>,
}

impl BinnedLayer {
    pub fn new(layer: &Layer, bin_count: usize) -> Result<Self> {
        check_bin_count(bin_count)?;
        let columns = (0..layer.neuron_count())
            .into_par_iter()
            .map(|i| BinnedColumn::from_bins(quantile_bins(&layer.column(i), bin_count), bin_count))
            .collect();
        Ok(Self {
            layer_id: layer.id(),
            sample_count: layer.sample_count(),
            columns,
        })
    }

    pub fn layer_id(&self) -> u32 {
        self.layer_id
    }

    pub fn neuron_count(&self) -> usize {
        self.columns.len()
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub(crate) fn bin_count(&self) -> usize {
        self.columns.first().map_or(2, BinnedColumn::bin_count)
    }

    /// Saliency matrix against the given label sets (one per concept).
    pub(crate) fn saliency(&self, labels: &[LabelSet]) -> SaliencyMatrix {
        let mut scratch = vec![0u32; self.bin_count()];
        let mut values = Vec::with_capacity(self.columns.len() * labels.len());
        for column in &self.columns {
            for label in labels {
                values.push(nmi_kernel(column, label, &mut scratch));
            }
        }
        PairMatrix {
            layer_id: self.layer_id,
            neurons: self.columns.len(),
            concepts: labels.len(),
            values,
        }
    }
}

pub(crate) fn label_sets(concepts: &ConceptMatrix) -> Vec<LabelSet> {
    concepts
        .concepts()
        .iter()
        .map(|c| LabelSet::from_values(c.values()))
        .collect()
}

/// Saliency of every (neuron, concept) pair of one layer.
pub fn saliency_matrix(
    layer: &Layer,
    concepts: &ConceptMatrix,
    bin_count: usize,
) -> Result<SaliencyMatrix> {
    if layer.sample_count() != concepts.sample_count() {
        return Err(Error::ShapeMismatch {
            context: format!("layer {} vs concepts", layer.id()),
            expected: format!("{} samples", concepts.sample_count()),
            found: format!("{} samples", layer.sample_count()),
        });
    }
    let binned = BinnedLayer::new(layer, bin_count)?;
    Ok(binned.saliency(&label_sets(concepts)))
}

/// Row-normalizes a saliency matrix. Rows summing to zero stay all-zero.
pub fn selectivity_matrix(s: &SaliencyMatrix) -> SelectivityMatrix {
    let mut values = Vec::with_capacity(s.values.len());
    for i in 0..s.neurons {
        let row = s.row(i);
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            values.extend(row.iter().map(|&v| (v / total).clamp(0.0, 1.0)));
        } else {
            values.extend(std::iter::repeat_n(0.0, row.len()));
        }
    }
    PairMatrix {
        layer_id: s.layer_id,
        neurons: s.neurons,
        concepts: s.concepts,
        values,
    }
}
