//! The persisted analysis (`*.ct.json`): configuration, every pair's scores,
//! the sorted null maxima and provenance.
//!
//! Keeping the sorted maxima lets a reader re-threshold at any alpha
//! without re-running permutations. Unknown fields are ignored on load.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::file_digest;
use crate::error::{Error, Result};
use crate::metrics::ConceptLevel;
use crate::pipeline::LayerSelection;
use crate::significance::{
    combine_pvalues, corrected_pvalue_sorted, MaxTScope, NullDistribution, NullScope, PairScore,
};

pub const RESULT_SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultConfig {
    /// Requested bin count.
    pub bin_count: usize,
    /// Bin count actually used after the `max(2, M / 5)` cap.
    pub effective_bin_count: usize,
    pub permutations: usize,
    pub alpha: f64,
    pub seed: u64,
    pub maxt_scope: MaxTScope,
    pub min_prevalence: u64,
    pub layers: LayerSelection,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerInfo {
    pub id: u32,
    pub name: String,
    pub neuron_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptInfo {
    pub name: String,
    pub level: ConceptLevel,
    pub prevalence: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

/// Wall-clock fields; the only part of a result that differs between
/// identical runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timing {
    pub started_at: String,
    pub wall_clock_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    #[serde(default)]
    pub inputs: Vec<InputDigest>,
    #[serde(default)]
    pub dropped_concepts: Vec<String>,
    pub sample_count: usize,
    pub pair_count: usize,
    pub significant_count: usize,
    #[serde(default)]
    pub timing: Option<Timing>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub schema_version: String,
    pub config: ResultConfig,
    pub layers: Vec<LayerInfo>,
    pub concepts: Vec<ConceptInfo>,
    pub pairs: Vec<PairScore>,
    /// Maxima sorted ascending.
    pub nulls: Vec<NullDistribution>,
    pub provenance: Provenance,
}

/// A recorded input whose current content no longer matches its digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DigestWarning {
    pub role: String,
    pub path: String,
    pub message: String,
}

impl AnalysisResult {
    pub fn layer(&self, id: u32) -> Option<&LayerInfo> {
        self.layers.iter().find(|l| l.id == id)
    }

    /// Null distribution that governs pairs of `layer`.
    pub fn null_for(&self, layer: u32) -> Option<&NullDistribution> {
        match self.config.maxt_scope {
            MaxTScope::Global => self.nulls.iter().find(|n| n.scope == NullScope::Global),
            MaxTScope::PerLayer => self.nulls.iter().find(|n| n.scope == NullScope::Layer(layer)),
        }
    }

    /// `(p_saliency, p_selectivity, p_combined)` recomputed from the stored maxima.
    pub fn recompute_pvalues(&self, pair: &PairScore) -> Result<(f64, f64, f64)> {
        let null = self
            .null_for(pair.layer)
            .ok_or_else(|| Error::malformed("result", format!("no null distribution for layer {}", pair.layer)))?;
        let p_sal = corrected_pvalue_sorted(pair.saliency, &null.max_saliency)?;
        let p_sel = corrected_pvalue_sorted(pair.selectivity, &null.max_selectivity)?;
        Ok((p_sal, p_sel, combine_pvalues(p_sal, p_sel)))
    }

    /// Copy of `pair` with p-values recomputed and significance at `alpha`.
    pub fn rescore(&self, pair: &PairScore, alpha: f64) -> Result<PairScore> {
        let (p_saliency, p_selectivity, p_combined) = self.recompute_pvalues(pair)?;
        Ok(PairScore {
            p_saliency,
            p_selectivity,
            p_combined,
            significant: p_combined <= alpha,
            ..pair.clone()
        })
    }

    /// All pairs re-thresholded at `alpha` from the stored null maxima.
    pub fn rethreshold(&self, alpha: f64) -> Result<Vec<PairScore>> {
        self.pairs.iter().map(|p| self.rescore(p, alpha)).collect()
    }

    pub fn significant_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.significant).count()
    }

    /// Checks recorded input digests against the files on disk.
    pub fn verify_digests(&self) -> Vec<DigestWarning> {
        self.provenance
            .inputs
            .iter()
            .filter_map(|input| {
                let message = match file_digest(&input.path) {
                    Ok(d) if d == input.sha256 => return None,
                    Ok(d) => format!("digest changed: recorded {}, now {d}", input.sha256),
                    Err(e) => format!("cannot verify: {e}"),
                };
                Some(DigestWarning {
                    role: input.role.clone(),
                    path: input.path.clone(),
                    message,
                })
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }
}

pub fn save_result(result: &AnalysisResult, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, result.to_json()).map_err(|e| Error::io(path, e))
}

pub fn parse_result(bytes: &[u8]) -> Result<AnalysisResult> {
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| Error::malformed("result file", e))?;
    match value.get("schema_version").and_then(|v| v.as_str()) {
        Some(RESULT_SCHEMA_VERSION) => {}
        Some(other) => {
            return Err(Error::SchemaMismatch {
                expected: RESULT_SCHEMA_VERSION.into(),
                found: other.into(),
            })
        }
        None => return Err(Error::malformed("result file", "missing schema_version")),
    }
    serde_json::from_value(value).map_err(|e| Error::malformed("result file", e))
}

pub fn load_result(path: impl AsRef<Path>) -> Result<AnalysisResult> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_result(&bytes)
}
