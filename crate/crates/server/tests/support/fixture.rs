#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use ct_core::data::ConceptMatrix;
use ct_core::metrics::{ConceptLevel, ConceptVector};
use ct_core::pipeline::{analyze, generate_synthetic, AnalysisParams, PlantedPair, SyntheticSpec};
use ct_core::progress::Silent;
use ct_core::result::AnalysisResult;
use tokio::net::TcpListener;

pub const NAMES: [(&str, ConceptLevel); 5] = [
    ("R", ConceptLevel::High),
    ("R57 shock", ConceptLevel::Mid),
    ("r57.1 cardiogenic", ConceptLevel::Low),
    ("I10", ConceptLevel::Mid),
    ("E11", ConceptLevel::Mid),
];

/// Three layers of six neurons against five named concepts, with planted
/// pairs in every layer so that each scope has a front.
pub fn result() -> AnalysisResult {
    let planted = [(0, 1, 1), (0, 3, 0), (1, 4, 2), (1, 0, 3), (2, 5, 4), (2, 2, 1)]
        .into_iter()
        .map(|(layer, neuron, concept)| PlantedPair { layer, neuron, concept })
        .collect();
    let spec = SyntheticSpec {
        samples: 400,
        neurons: 6,
        concepts: 5,
        layers: 3,
        planted,
        noise_sigma: 0.6,
        prevalence: 0.3,
        seed: 31,
    };
    let data = generate_synthetic(&spec).unwrap();
    let concepts = ConceptMatrix::new(
        data.concepts
            .concepts()
            .iter()
            .zip(NAMES)
            .map(|(c, (name, level))| ConceptVector::new(name, level, c.values().to_vec()).unwrap())
            .collect(),
    )
    .unwrap();
    let mut params = AnalysisParams::new(7);
    params.permutations = 199;
    analyze(&data.activations, &concepts, &params, &Silent).unwrap()
}

/// Serves `result` on an ephemeral local port and returns the base URL.
pub async fn spawn(result: AnalysisResult, static_dir: Option<PathBuf>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = ct_server::router(Arc::new(result), static_dir);
    tokio::spawn(ct_server::serve(listener, app));
    format!("http://{addr}")
}
