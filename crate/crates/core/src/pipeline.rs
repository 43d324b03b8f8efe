//! End-to-end analysis (load, filter, score, correct, persist) and the
//! synthetic data generator with planted neuron-concept associations.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{
    file_digest, filter_by_prevalence, load_activations, load_concepts, manifest_layer_files, ActivationTensor,
    ConceptMatrix, Layer,
};
use crate::error::{Error, Result};
use crate::metrics::{ConceptLevel, ConceptVector};
use crate::progress::{Progress, ProgressEvent};
use crate::result::{
    save_result, AnalysisResult, ConceptInfo, InputDigest, LayerInfo, Provenance, ResultConfig, Timing,
    RESULT_SCHEMA_VERSION,
};
use crate::significance::{score_all_pairs_with_progress, MaxTScope, NullDistribution, PermutationPlan};

pub const DEFAULT_BIN_COUNT: usize = 16;
pub const DEFAULT_PERMUTATIONS: usize = 1000;
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Which layers to analyze. Serialized as `"all"` or a list of ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum LayerSelection {
    #[default]
    All,
    Subset(Vec<u32>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LayerSelectionRepr {
    Keyword(String),
    Ids(Vec<u32>),
}

impl Serialize for LayerSelection {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            LayerSelection::All => LayerSelectionRepr::Keyword("all".into()),
            LayerSelection::Subset(ids) => LayerSelectionRepr::Ids(ids.clone()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LayerSelection {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match LayerSelectionRepr::deserialize(d)? {
            LayerSelectionRepr::Keyword(k) if k == "all" => Ok(LayerSelection::All),
            LayerSelectionRepr::Keyword(k) => Err(serde::de::Error::custom(format!(
                "expected \"all\" or a list of layer ids, got {k:?}"
            ))),
            LayerSelectionRepr::Ids(ids) => Ok(LayerSelection::Subset(ids)),
        }
    }
}

impl std::str::FromStr for LayerSelection {
    type Err = Error;

    /// `all` or a comma-separated id list such as `0,22`.
    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "all" {
            return Ok(LayerSelection::All);
        }
        parse_id_list(s).map(LayerSelection::Subset)
    }
}

pub fn parse_id_list(s: &str) -> Result<Vec<u32>> {
    let ids = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<u32>()
                .map_err(|_| Error::invalid(format!("bad layer id {t:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if ids.is_empty() {
        return Err(Error::invalid("empty layer list"));
    }
    Ok(ids)
}

fn default_bin_count() -> usize {
    DEFAULT_BIN_COUNT
}
fn default_permutations() -> usize {
    DEFAULT_PERMUTATIONS
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

/// Numeric parameters of an analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisParams {
    #[serde(default = "default_bin_count")]
    pub bin_count: usize,
    #[serde(default = "default_permutations")]
    pub permutations: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub seed: u64,
    #[serde(default)]
    pub min_prevalence: u64,
    #[serde(default)]
    pub maxt_scope: MaxTScope,
    #[serde(default)]
    pub layers: LayerSelection,
    /// Worker threads; `None` uses the global rayon pool. Never affects results.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl AnalysisParams {
    pub fn new(seed: u64) -> Self {
        Self {
            bin_count: DEFAULT_BIN_COUNT,
            permutations: DEFAULT_PERMUTATIONS,
            alpha: DEFAULT_ALPHA,
            seed,
            min_prevalence: 0,
            maxt_scope: MaxTScope::Global,
            layers: LayerSelection::All,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        if self.permutations == 0 {
            return Err(Error::invalid("permutations must be >= 1"));
        }
        if self.bin_count < 2 {
            return Err(Error::invalid(format!("bin count must be >= 2, got {}", self.bin_count)));
        }
        if self.threads == Some(0) {
            return Err(Error::invalid("threads must be >= 1"));
        }
        if let LayerSelection::Subset(ids) = &self.layers {
            if ids.is_empty() {
                return Err(Error::invalid("empty layer selection"));
            }
        }
        Ok(())
    }
}

/// File-level analysis configuration (also the JSON config file schema).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub activations: PathBuf,
    pub concepts: PathBuf,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(flatten)]
    pub params: AnalysisParams,
}

impl AnalysisConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::malformed(format!("config {}", path.display()), e))
    }
}

/// Bin count actually used for `sample_count` samples: the request capped
/// at `max(2, M / 5)` so each bin expects at least five samples.
pub fn effective_bin_count(requested: usize, sample_count: usize) -> usize {
    requested.min((sample_count / 5).max(2))
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::invalid(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Runs the full analysis on in-memory data. Input digests are left empty.
pub fn analyze(
    activations: &ActivationTensor,
    concepts: &ConceptMatrix,
    params: &AnalysisParams,
    progress: &dyn Progress,
) -> Result<AnalysisResult> {
    params.validate()?;
    let started = Instant::now();
    let started_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);

    if activations.sample_count() != concepts.sample_count() {
        return Err(Error::RowCountMismatch {
            expected: activations.sample_count(),
            found: concepts.sample_count(),
        });
    }
    let filtered = filter_by_prevalence(concepts, params.min_prevalence)?;
    let tensor = match &params.layers {
        LayerSelection::All => activations.clone(),
        LayerSelection::Subset(ids) => activations.select(ids)?,
    };
    progress.report(ProgressEvent::InputsLoaded {
        layers: tensor.layers().len(),
        samples: tensor.sample_count(),
        concepts: filtered.kept.len(),
        dropped_concepts: filtered.dropped.len(),
    });

    let bins = effective_bin_count(params.bin_count, tensor.sample_count());
    let plan = PermutationPlan::new(params.permutations, params.seed)?;
    let scored = with_pool(params.threads, || {
        score_all_pairs_with_progress(
            &tensor,
            &filtered.kept,
            &plan,
            bins,
            params.alpha,
            params.maxt_scope,
            progress,
        )
    })??;

    let significant_count = scored.pairs.iter().filter(|p| p.significant).count();
    let wall_clock_ms = started.elapsed().as_millis() as u64;
    progress.report(ProgressEvent::Finished {
        pairs: scored.pairs.len(),
        significant: significant_count,
        wall_clock_ms,
    });

    Ok(AnalysisResult {
        schema_version: RESULT_SCHEMA_VERSION.into(),
        config: ResultConfig {
            bin_count: params.bin_count,
            effective_bin_count: bins,
            permutations: params.permutations,
            alpha: params.alpha,
            seed: params.seed,
            maxt_scope: params.maxt_scope,
            min_prevalence: params.min_prevalence,
            layers: params.layers.clone(),
        },
        layers: tensor
            .layers()
            .iter()
            .map(|l| LayerInfo {
                id: l.id(),
                name: l.name().to_string(),
                neuron_count: l.neuron_count(),
            })
            .collect(),
        concepts: filtered
            .kept
            .concepts()
            .iter()
            .map(|c| ConceptInfo {
                name: c.name().to_string(),
                level: c.level(),
                prevalence: c.prevalence(),
            })
            .collect(),
        provenance: Provenance {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            inputs: Vec::new(),
            dropped_concepts: filtered.dropped,
            sample_count: tensor.sample_count(),
            pair_count: scored.pairs.len(),
            significant_count,
            timing: Some(Timing {
                started_at,
                wall_clock_ms,
            }),
        },
        pairs: scored.pairs,
        nulls: scored.nulls.iter().map(NullDistribution::sorted).collect(),
    })
}

fn digest(role: &str, path: &Path) -> Result<InputDigest> {
    Ok(InputDigest {
        role: role.into(),
        path: path.display().to_string(),
        sha256: file_digest(path)?,
    })
}

/// Validated inputs of a file-based analysis with their content digests.
#[derive(Debug, Clone)]
pub struct LoadedInputs {
    pub activations: ActivationTensor,
    pub concepts: ConceptMatrix,
    pub digests: Vec<InputDigest>,
}

/// Loads and validates the configured input files.
pub fn load_inputs(config: &AnalysisConfig) -> Result<LoadedInputs> {
    config.params.validate()?;
    let activations = load_activations(&config.activations)?;
    let concepts = load_concepts(&config.concepts, activations.sample_count())?;

    let mut digests = vec![digest("activations_manifest", &config.activations)?];
    for file in manifest_layer_files(&config.activations)? {
        digests.push(digest("activations_layer", &file)?);
    }
    digests.push(digest("concepts", &config.concepts)?);
    Ok(LoadedInputs {
        activations,
        concepts,
        digests,
    })
}

/// Analyzes loaded inputs; digests are copied into the provenance.
pub fn analyze_inputs(inputs: &LoadedInputs, params: &AnalysisParams, progress: &dyn Progress) -> Result<AnalysisResult> {
    let mut result = analyze(&inputs.activations, &inputs.concepts, params, progress)?;
    result.provenance.inputs = inputs.digests.clone();
    Ok(result)
}

/// Loads the configured inputs, analyzes them and writes the result to
/// `config.out` when set.
pub fn run_analysis(config: &AnalysisConfig, progress: &dyn Progress) -> Result<AnalysisResult> {
    let inputs = load_inputs(config)?;
    let result = analyze_inputs(&inputs, &config.params, progress)?;
    if let Some(out) = &config.out {
        save_result(&result, out)?;
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlantedPair {
    pub layer: u32,
    pub neuron: usize,
    pub concept: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub samples: usize,
    pub neurons: usize,
    pub concepts: usize,
    pub layers: usize,
    pub planted: Vec<PlantedPair>,
    pub noise_sigma: f64,
    pub prevalence: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 || self.neurons == 0 || self.concepts == 0 || self.layers == 0 {
            return Err(Error::invalid("synthetic spec needs samples >= 2 and nonzero neurons, concepts, layers"));
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return Err(Error::invalid(format!("prevalence must be in (0, 1), got {}", self.prevalence)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid(format!("noise_sigma must be finite and >= 0, got {}", self.noise_sigma)));
        }
        for p in &self.planted {
            if p.layer as usize >= self.layers || p.neuron >= self.neurons || p.concept >= self.concepts {
                return Err(Error::invalid(format!("planted pair {p:?} out of range")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub activations: ActivationTensor,
    pub concepts: ConceptMatrix,
    pub planted: Vec<PlantedPair>,
}

/// Independent Bernoulli concepts and standard-normal activations; a planted
/// neuron's activation is its concept's label plus `N(0, noise_sigma^2)`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let m = spec.samples;

    let labels: Vec<Vec<u8>> = (0..spec.concepts)
        .map(|_| (0..m).map(|_| u8::from(rng.random::<f64>() < spec.prevalence)).collect())
        .collect();

    let mut layers = Vec::with_capacity(spec.layers);
    for l in 0..spec.layers {
        let mut data: Vec<f32> = (0..m * spec.neurons)
            .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
            .collect();
        for p in spec.planted.iter().filter(|p| p.layer as usize == l) {
            for r in 0..m {
                let noise: f64 = rng.sample(StandardNormal);
                data[r * spec.neurons + p.neuron] = (labels[p.concept][r] as f64 + spec.noise_sigma * noise) as f32;
            }
        }
        layers.push(Layer::new(l as u32, format!("layer_{l}"), m, spec.neurons, data)?);
    }

    let concepts = labels
        .into_iter()
        .enumerate()
        .map(|(j, v)| ConceptVector::new(format!("C{j:02}"), ConceptLevel::Unspecified, v))
        .collect::<Result<Vec<_>>>()?;

    Ok(SyntheticData {
        activations: ActivationTensor::new(layers)?,
        concepts: ConceptMatrix::new(concepts)?,
        planted: spec.planted.clone(),
    })
}
