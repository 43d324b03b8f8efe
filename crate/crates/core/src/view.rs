//! Read-only queries over an [`AnalysisResult`]: the network, layer, neuron
//! and concept views with their Pareto front, knee point, top-k lists and
//! metric histogram.
//!
//! Query parameters travel as flat string pairs (`scope=layers&layers=0,22`)
//! so the same parser serves HTTP query strings and CLI flags.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ConceptLevel;
use crate::pareto::{knee_point, metric_values, pareto_front, top_k, Metric};
use crate::pipeline::parse_id_list;
use crate::result::{AnalysisResult, ConceptInfo, LayerInfo, ResultConfig};
use crate::significance::{NullScope, PairScore};

/// Number of fixed-width histogram bins over `[0, 1]`.
pub const HISTOGRAM_BINS: usize = 32;
pub const DEFAULT_TOP_K: usize = 20;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewScope {
    #[default]
    Network,
    Layers,
    Neuron,
    Concept,
}

impl ViewScope {
    pub fn as_str(self) -> &'static str {
        match self {
            ViewScope::Network => "network",
            ViewScope::Layers => "layers",
            ViewScope::Neuron => "neuron",
            ViewScope::Concept => "concept",
        }
    }
}

impl FromStr for ViewScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "network" => Ok(ViewScope::Network),
            "layers" | "layer" => Ok(ViewScope::Layers),
            "neuron" => Ok(ViewScope::Neuron),
            "concept" => Ok(ViewScope::Concept),
            other => Err(Error::invalid(format!("unknown scope {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewQuery {
    pub scope: ViewScope,
    pub layers: Option<Vec<u32>>,
    pub neuron: Option<usize>,
    pub concept: Option<String>,
    pub level: Option<ConceptLevel>,
    pub metric: Metric,
    pub significant_only: bool,
    pub alpha_override: Option<f64>,
    pub top_k: usize,
}

impl Default for ViewQuery {
    fn default() -> Self {
        Self {
            scope: ViewScope::Network,
            layers: None,
            neuron: None,
            concept: None,
            level: None,
            metric: Metric::Saliency,
            significant_only: true,
            alpha_override: None,
            top_k: DEFAULT_TOP_K,
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::invalid(format!("{key}: expected a boolean, got {other:?}"))),
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::invalid(format!("{key}: cannot parse {v:?}")))
}

impl ViewQuery {
    pub fn network() -> Self {
        Self::default()
    }

    pub fn layers(ids: Vec<u32>) -> Self {
        Self {
            scope: ViewScope::Layers,
            layers: Some(ids),
            ..Self::default()
        }
    }

    pub fn neuron(layer: u32, neuron: usize) -> Self {
        Self {
            scope: ViewScope::Neuron,
            layers: Some(vec![layer]),
            neuron: Some(neuron),
            ..Self::default()
        }
    }

    pub fn concept(query: impl Into<String>) -> Self {
        Self {
            scope: ViewScope::Concept,
            concept: Some(query.into()),
            ..Self::default()
        }
    }

    /// Parses flat key/value parameters. Unknown keys are rejected.
    pub fn from_params<'a, I>(params: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut q = Self::default();
        for (key, value) in params {
            match key {
                "scope" => q.scope = value.parse()?,
                "layers" | "layer" => q.layers = Some(parse_id_list(value)?),
                "neuron" => q.neuron = Some(parse_num(key, value)?),
                "concept" | "q" => q.concept = Some(value.to_string()),
                "level" => q.level = Some(value.parse()?),
                "metric" => q.metric = value.parse()?,
                "significant_only" => q.significant_only = parse_bool(key, value)?,
                "alpha" | "alpha_override" => q.alpha_override = Some(parse_num(key, value)?),
                "top_k" => q.top_k = parse_num(key, value)?,
                other => return Err(Error::invalid(format!("unknown query parameter {other:?}"))),
            }
        }
        q.validate()?;
        Ok(q)
    }

    /// Inverse of [`ViewQuery::from_params`]; omits defaults.
    pub fn to_params(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![("scope", self.scope.as_str().to_string())];
        if let Some(layers) = &self.layers {
            let ids: Vec<String> = layers.iter().map(u32::to_string).collect();
            out.push(("layers", ids.join(",")));
        }
        if let Some(n) = self.neuron {
            out.push(("neuron", n.to_string()));
        }
        if let Some(c) = &self.concept {
            out.push(("concept", c.clone()));
        }
        if let Some(level) = self.level {
            out.push(("level", level.as_str().to_string()));
        }
        if self.metric != Metric::Saliency {
            out.push(("metric", self.metric.as_str().to_string()));
        }
        if !self.significant_only {
            out.push(("significant_only", "false".into()));
        }
        if let Some(a) = self.alpha_override {
            out.push(("alpha_override", a.to_string()));
        }
        if self.top_k != DEFAULT_TOP_K {
            out.push(("top_k", self.top_k.to_string()));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.scope {
            ViewScope::Network => {}
            ViewScope::Layers => {
                if self.layers.as_ref().is_none_or(Vec::is_empty) {
                    return Err(Error::invalid("scope=layers requires layers"));
                }
            }
            ViewScope::Neuron => {
                if self.layers.as_ref().map(Vec::len) != Some(1) || self.neuron.is_none() {
                    return Err(Error::invalid("scope=neuron requires exactly one layer and a neuron"));
                }
            }
            ViewScope::Concept => {
                if self.concept.as_deref().is_none_or(|c| c.trim().is_empty()) {
                    return Err(Error::invalid("scope=concept requires a concept query"));
                }
            }
        }
        if let Some(a) = self.alpha_override {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::invalid(format!("alpha_override must be in (0, 1], got {a}")));
            }
        }
        if self.top_k == 0 {
            return Err(Error::invalid("top_k must be >= 1"));
        }
        Ok(())
    }
}

/// A pair as shown in a view, with its concept's name attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewPair {
    #[serde(flatten)]
    pub score: PairScore,
    pub concept_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopK {
    pub saliency: Vec<usize>,
    pub selectivity: Vec<usize>,
    pub combined: Vec<usize>,
}

impl TopK {
    pub fn get(&self, metric: Metric) -> &[usize] {
        match metric {
            Metric::Saliency => &self.saliency,
            Metric::Selectivity => &self.selectivity,
            Metric::Combined => &self.combined,
        }
    }
}

/// Fixed-width histogram over `[0, 1]`. Combined scores (range `[0, 2]`)
/// are halved before binning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub metric: Metric,
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn of(metric: Metric, values: &[f64]) -> Self {
        let scale = if metric == Metric::Combined { 0.5 } else { 1.0 };
        let mut counts = vec![0u64; HISTOGRAM_BINS];
        for &v in values {
            let x = (v * scale).clamp(0.0, 1.0);
            let bin = ((x * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
            counts[bin] += 1;
        }
        Self {
            metric,
            lo: 0.0,
            hi: 1.0,
            counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoView {
    pub query: ViewQuery,
    /// Significance level applied to this view.
    pub alpha: f64,
    pub pairs: Vec<ViewPair>,
    /// Indices into `pairs`.
    pub front: Vec<usize>,
    pub knee: Option<usize>,
    pub top_k: TopK,
    pub histogram: Histogram,
}

impl ParetoView {
    pub fn scores(&self) -> Vec<PairScore> {
        self.pairs.iter().map(|p| p.score.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairsView {
    pub query: ViewQuery,
    pub alpha: f64,
    pub count: usize,
    pub pairs: Vec<ViewPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionView {
    pub query: ViewQuery,
    pub alpha: f64,
    pub count: usize,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptMatch {
    pub index: usize,
    pub name: String,
    pub level: ConceptLevel,
    pub prevalence: usize,
    /// Significant pairs at the result's configured alpha.
    pub significant_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub layers: usize,
    pub concepts: usize,
    pub pairs: usize,
    pub significant: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaView {
    pub schema_version: String,
    pub config: ResultConfig,
    pub layers: Vec<LayerInfo>,
    pub concepts: Vec<ConceptInfo>,
    pub counts: Counts,
    pub null_scopes: Vec<NullScope>,
    pub dropped_concepts: Vec<String>,
}

pub fn meta(result: &AnalysisResult) -> MetaView {
    MetaView {
        schema_version: result.schema_version.clone(),
        config: result.config.clone(),
        layers: result.layers.clone(),
        concepts: result.concepts.clone(),
        counts: Counts {
            layers: result.layers.len(),
            concepts: result.concepts.len(),
            pairs: result.pairs.len(),
            significant: result.significant_count(),
        },
        null_scopes: result.nulls.iter().map(|n| n.scope).collect(),
        dropped_concepts: result.provenance.dropped_concepts.clone(),
    }
}

/// Concepts whose name contains `query` (case-insensitive), optionally
/// restricted to one level. An empty query matches everything.
pub fn search_concepts(result: &AnalysisResult, query: &str, level: Option<ConceptLevel>) -> Vec<ConceptMatch> {
    let needle = query.trim().to_lowercase();
    let mut significant = vec![0usize; result.concepts.len()];
    for p in result.pairs.iter().filter(|p| p.significant) {
        significant[p.concept] += 1;
    }
    result
        .concepts
        .iter()
        .enumerate()
        .filter(|(_, c)| level.is_none_or(|l| c.level == l))
        .filter(|(_, c)| c.name.to_lowercase().contains(&needle))
        .map(|(index, c)| ConceptMatch {
            index,
            name: c.name.clone(),
            level: c.level,
            prevalence: c.prevalence,
            significant_pairs: significant[index],
        })
        .collect()
}

/// Pairs in the query's scope, re-thresholded and filtered, in stored order.
fn scoped_pairs(result: &AnalysisResult, q: &ViewQuery) -> Result<(f64, Vec<ViewPair>)> {
    q.validate()?;
    let layer_filter: Option<&[u32]> = match q.scope {
        ViewScope::Network => None,
        _ => q.layers.as_deref(),
    };
    if let Some(ids) = layer_filter {
        for id in ids {
            result
                .layer(*id)
                .ok_or_else(|| Error::NotFound(format!("layer {id}")))?;
        }
    }
    let neuron = match q.scope {
        ViewScope::Neuron => {
            let layer_id = q.layers.as_ref().expect("validated")[0];
            let n = q.neuron.expect("validated");
            let layer = result.layer(layer_id).expect("checked above");
            if n >= layer.neuron_count {
                return Err(Error::NotFound(format!("neuron {n} in layer {layer_id}")));
            }
            Some(n)
        }
        _ => None,
    };
    let concepts: Option<Vec<bool>> = match q.scope {
        ViewScope::Concept => {
            let matches = search_concepts(result, q.concept.as_deref().unwrap_or_default(), q.level);
            if matches.is_empty() {
                return Err(Error::NotFound(format!(
                    "concept matching {:?}",
                    q.concept.as_deref().unwrap_or_default()
                )));
            }
            let mut mask = vec![false; result.concepts.len()];
            for m in matches {
                mask[m.index] = true;
            }
            Some(mask)
        }
        _ => q.level.map(|level| result.concepts.iter().map(|c| c.level == level).collect()),
    };

    let alpha = q.alpha_override.unwrap_or(result.config.alpha);
    let mut out = Vec::new();
    for pair in &result.pairs {
        if layer_filter.is_some_and(|ids| !ids.contains(&pair.layer))
            || neuron.is_some_and(|n| n != pair.neuron)
            || concepts.as_ref().is_some_and(|mask| !mask[pair.concept])
        {
            continue;
        }
        let score = match q.alpha_override {
            Some(a) => result.rescore(pair, a)?,
            None => pair.clone(),
        };
        if q.significant_only && !score.significant {
            continue;
        }
        out.push(ViewPair {
            concept_name: result.concepts[score.concept].name.clone(),
            score,
        });
    }
    Ok((alpha, out))
}

pub fn query_pairs(result: &AnalysisResult, q: &ViewQuery) -> Result<PairsView> {
    let (alpha, pairs) = scoped_pairs(result, q)?;
    Ok(PairsView {
        query: q.clone(),
        alpha,
        count: pairs.len(),
        pairs,
    })
}

pub fn query_distribution(result: &AnalysisResult, q: &ViewQuery) -> Result<DistributionView> {
    let (alpha, pairs) = scoped_pairs(result, q)?;
    let scores: Vec<PairScore> = pairs.into_iter().map(|p| p.score).collect();
    Ok(DistributionView {
        query: q.clone(),
        alpha,
        count: scores.len(),
        histogram: Histogram::of(q.metric, &metric_values(&scores, q.metric)),
    })
}

/// Full view: scoped pairs, front, knee, top-k per metric and histogram.
pub fn query_view(result: &AnalysisResult, q: &ViewQuery) -> Result<ParetoView> {
    let (alpha, pairs) = scoped_pairs(result, q)?;
    let scores: Vec<PairScore> = pairs.iter().map(|p| p.score.clone()).collect();
    let front = pareto_front(&scores);
    let knee = knee_point(&scores, &front);
    let top = TopK {
        saliency: top_k(&scores, Metric::Saliency, q.top_k),
        selectivity: top_k(&scores, Metric::Selectivity, q.top_k),
        combined: top_k(&scores, Metric::Combined, q.top_k),
    };
    let histogram = Histogram::of(q.metric, &metric_values(&scores, q.metric));
    Ok(ParetoView {
        query: q.clone(),
        alpha,
        pairs,
        front,
        knee,
        top_k: top,
        histogram,
    })
}

/// Convenience for string maps such as parsed HTTP query strings.
pub fn query_from_map(params: &BTreeMap<String, String>) -> Result<ViewQuery> {
    ViewQuery::from_params(params.iter().map(|(k, v)| (k.as_str(), v.as_str())))
}
