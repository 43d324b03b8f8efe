//! Activation tensors, concept matrices and their on-disk formats.
//!
//! Activations: a JSON manifest plus one raw file per layer holding
//! little-endian `f32` values, row-major (`sample_count` rows by
//! `neuron_count` columns). Layer file paths are relative to the manifest.
//!
//! ```json
//! {"schema_version": "1", "sample_count": 4,
//!  "layers": [{"id": 0, "name": "enc.0", "neuron_count": 3,
//!              "file": "layer_0.f32", "byte_length": 48}]}
//! ```
//!
//! Concepts: UTF-8 CSV with a header row, one column per concept and cells
//! that are exactly `0` or `1`. A header may carry a hierarchy prefix
//! (`high:R`, `mid:R57`, `low:R570`).

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::{ConceptLevel, ConceptVector};

pub const MANIFEST_SCHEMA_VERSION: &str = "1";

/// One layer's activations: `sample_count x neuron_count`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    id: u32,
    name: String,
    sample_count: usize,
    neuron_count: usize,
    data: Vec<f32>,
}

impl Layer {
    pub fn new(
        id: u32,
        name: impl Into<String>,
        sample_count: usize,
        neuron_count: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if sample_count < 2 {
            return Err(Error::invalid(format!(
                "layer {id}: need at least 2 samples, got {sample_count}"
            )));
        }
        if neuron_count == 0 {
            return Err(Error::invalid(format!("layer {id}: no neurons")));
        }
        if data.len() != sample_count * neuron_count {
            return Err(Error::ShapeMismatch {
                context: format!("layer {id}"),
                expected: format!("{} values ({sample_count}x{neuron_count})", sample_count * neuron_count),
                found: format!("{} values", data.len()),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                layer: id,
                row: pos / neuron_count,
                col: pos % neuron_count,
            });
        }
        Ok(Self {
            id,
            name: name.into(),
            sample_count,
            neuron_count,
            data,
        })
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn neuron_count(&self) -> usize {
        self.neuron_count
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Activations of one neuron across all samples.
    pub fn column(&self, neuron: usize) -> Vec<f32> {
        self.data
            .iter()
            .skip(neuron)
            .step_by(self.neuron_count)
            .copied()
            .collect()
    }
}

/// Ordered list of layers sharing the same samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTensor {
    sample_count: usize,
    layers: Vec<Layer>,
}

impl ActivationTensor {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::invalid("activation tensor has no layers"))?;
        let sample_count = first.sample_count;
        let mut seen = HashSet::new();
        for layer in &layers {
            if layer.sample_count != sample_count {
                return Err(Error::ShapeMismatch {
                    context: format!("layer {}", layer.id),
                    expected: format!("{sample_count} samples"),
                    found: format!("{} samples", layer.sample_count),
                });
            }
            if !seen.insert(layer.id) {
                return Err(Error::invalid(format!("duplicate layer id {}", layer.id)));
            }
        }
        Ok(Self {
            sample_count,
            layers,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, id: u32) -> Option<&Layer> {
        self.layers.iter().find(|l| l.id == id)
    }

    /// Keeps the listed layers, in the order they appear in the tensor.
    pub fn select(&self, ids: &[u32]) -> Result<Self> {
        if let Some(missing) = ids.iter().find(|id| self.layer(**id).is_none()) {
            return Err(Error::NotFound(format!("layer {missing}")));
        }
        let layers = self
            .layers
            .iter()
            .filter(|l| ids.contains(&l.id))
            .cloned()
            .collect();
        Self::new(layers)
    }
}

/// Binary concept labels, one column per concept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptMatrix {
    sample_count: usize,
    concepts: Vec<ConceptVector>,
}

impl ConceptMatrix {
    pub fn new(concepts: Vec<ConceptVector>) -> Result<Self> {
        let first = concepts
            .first()
            .ok_or_else(|| Error::invalid("concept matrix has no concepts"))?;
        let sample_count = first.len();
        let mut names = HashSet::new();
        for c in &concepts {
            if c.len() != sample_count {
                return Err(Error::RowCountMismatch {
                    expected: sample_count,
                    found: c.len(),
                });
            }
            if !names.insert(c.name()) {
                return Err(Error::DuplicateConcept(c.name().to_string()));
            }
        }
        Ok(Self {
            sample_count,
            concepts,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn concepts(&self) -> &[ConceptVector] {
        &self.concepts
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn prevalences(&self) -> Vec<usize> {
        self.concepts.iter().map(ConceptVector::prevalence).collect()
    }

    /// Row `sample` of the matrix (one label per concept).
    pub fn row(&self, sample: usize) -> Vec<u8> {
        self.concepts.iter().map(|c| c.values()[sample]).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ManifestLayer {
    pub id: u32,
    pub name: String,
    pub neuron_count: usize,
    pub file: PathBuf,
    pub byte_length: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Manifest {
    pub schema_version: String,
    pub sample_count: usize,
    pub layers: Vec<ManifestLayer>,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads a layer manifest and every layer file it names.
pub fn load_activations(manifest_path: impl AsRef<Path>) -> Result<ActivationTensor> {
    let manifest_path = manifest_path.as_ref();
    let bytes = read_file(manifest_path)?;
    let bad_manifest = |message: String| Error::InvalidManifest {
        path: manifest_path.to_path_buf(),
        message,
    };
    let manifest: Manifest =
        serde_json::from_slice(&bytes).map_err(|e| bad_manifest(e.to_string()))?;
    if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(Error::SchemaMismatch {
            expected: MANIFEST_SCHEMA_VERSION.into(),
            found: manifest.schema_version,
        });
    }
    if manifest.layers.is_empty() {
        return Err(bad_manifest("no layers listed".into()));
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let m = manifest.sample_count;

    let mut layers = Vec::with_capacity(manifest.layers.len());
    for entry in &manifest.layers {
        let expected_bytes = (m * entry.neuron_count * 4) as u64;
        if entry.byte_length != expected_bytes {
            return Err(Error::ShapeMismatch {
                context: format!("manifest entry for layer {}", entry.id),
                expected: format!("byte_length {expected_bytes} ({m}x{}x4)", entry.neuron_count),
                found: format!("byte_length {}", entry.byte_length),
            });
        }
        let path = base.join(&entry.file);
        let raw = read_file(&path)?;
        if raw.len() as u64 != entry.byte_length {
            return Err(Error::ShapeMismatch {
                context: format!("layer {} file {}", entry.id, path.display()),
                expected: format!("{} bytes", entry.byte_length),
                found: format!("{} bytes", raw.len()),
            });
        }
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        layers.push(Layer::new(entry.id, entry.name.clone(), m, entry.neuron_count, data)?);
    }
    ActivationTensor::new(layers)
}

/// Paths of the layer files named by a manifest, resolved against its directory.
pub fn manifest_layer_files(manifest_path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let manifest_path = manifest_path.as_ref();
    let bytes = read_file(manifest_path)?;
    let manifest: Manifest = serde_json::from_slice(&bytes).map_err(|e| Error::InvalidManifest {
        path: manifest_path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    Ok(manifest.layers.iter().map(|l| base.join(&l.file)).collect())
}

/// Writes `tensor` as a manifest named `manifest_name` plus one
/// `layer_<id>.f32` file per layer inside `dir`. Returns the manifest path.
pub fn write_activations(dir: impl AsRef<Path>, manifest_name: &str, tensor: &ActivationTensor) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(tensor.layers.len());
    for layer in &tensor.layers {
        let file = PathBuf::from(format!("layer_{}.f32", layer.id));
        let bytes: Vec<u8> = layer.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestLayer {
            id: layer.id,
            name: layer.name.clone(),
            neuron_count: layer.neuron_count,
            file,
            byte_length: bytes.len() as u64,
        });
    }
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION.into(),
        sample_count: tensor.sample_count,
        layers: entries,
    };
    let path = dir.join(manifest_name);
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn parse_header(raw: &str) -> (String, ConceptLevel) {
    if let Some((prefix, rest)) = raw.split_once(':') {
        if let Ok(level) = prefix.parse::<ConceptLevel>() {
            return (rest.to_string(), level);
        }
    }
    (raw.to_string(), ConceptLevel::Unspecified)
}

/// Loads a concept CSV, checking it has exactly `expected_samples` rows.
pub fn load_concepts(csv_path: impl AsRef<Path>, expected_samples: usize) -> Result<ConceptMatrix> {
    let csv_path = csv_path.as_ref();
    let bytes = read_file(csv_path)?;
    let what = format!("concepts file {}", csv_path.display());
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes.as_slice());

    let headers = reader.headers().map_err(|e| Error::malformed(&what, e))?.clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(Error::malformed(&what, "missing header row"));
    }
    let columns: Vec<(String, ConceptLevel)> = headers.iter().map(parse_header).collect();
    if let Some(pos) = columns.iter().position(|(name, _)| name.is_empty()) {
        return Err(Error::malformed(&what, format!("empty concept name in column {pos}")));
    }
    let mut seen = HashSet::new();
    for (name, _) in &columns {
        if !seen.insert(name.as_str()) {
            return Err(Error::DuplicateConcept(name.clone()));
        }
    }

    let mut values: Vec<Vec<u8>> = vec![Vec::with_capacity(expected_samples); columns.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::malformed(&what, e))?;
        for (col, cell) in record.iter().enumerate() {
            let v = match cell {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::NonBinaryValue {
                        row,
                        column: columns[col].0.clone(),
                        value: other.to_string(),
                    })
                }
            };
            values[col].push(v);
        }
    }
    let found = values[0].len();
    if found != expected_samples {
        return Err(Error::RowCountMismatch {
            expected: expected_samples,
            found,
        });
    }
    if found == 0 {
        return Err(Error::malformed(&what, "no data rows"));
    }
    let concepts = columns
        .into_iter()
        .zip(values)
        .map(|((name, level), v)| ConceptVector::new(name, level, v))
        .collect::<Result<Vec<_>>>()?;
    ConceptMatrix::new(concepts)
}

pub fn write_concepts(path: impl AsRef<Path>, concepts: &ConceptMatrix) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::malformed("concepts output", e))?;
    let header: Vec<String> = concepts
        .concepts
        .iter()
        .map(|c| match c.level() {
            ConceptLevel::Unspecified => c.name().to_string(),
            level => format!("{level}:{}", c.name()),
        })
        .collect();
    let io_err = |e: csv::Error| Error::malformed("concepts output", e);
    writer.write_record(&header).map_err(io_err)?;
    for r in 0..concepts.sample_count {
        let row: Vec<&str> = concepts
            .concepts
            .iter()
            .map(|c| if c.values()[r] == 1 { "1" } else { "0" })
            .collect();
        writer.write_record(&row).map_err(io_err)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Concepts kept by a prevalence filter and the names it dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrevalenceFilter {
    pub kept: ConceptMatrix,
    pub dropped: Vec<String>,
}

/// Keeps concepts labelled 1 on at least `min_prevalence` samples.
pub fn filter_by_prevalence(concepts: &ConceptMatrix, min_prevalence: u64) -> Result<PrevalenceFilter> {
    let (kept, dropped): (Vec<_>, Vec<_>) = concepts
        .concepts
        .iter()
        .cloned()
        .partition(|c| c.prevalence() as u64 >= min_prevalence);
    if kept.is_empty() {
        return Err(Error::EmptyConceptSet { min_prevalence });
    }
    Ok(PrevalenceFilter {
        kept: ConceptMatrix::new(kept)?,
        dropped: dropped.into_iter().map(|c| c.name().to_string()).collect(),
    })
}

/// Lowercase hex SHA-256 of a file's contents.
pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
