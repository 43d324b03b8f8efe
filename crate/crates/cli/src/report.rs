use std::fmt::Write as _;
use std::path::Path;

use ct_core::pareto::Metric;
use ct_core::view::ParetoView;

pub struct Row {
    pub rank: usize,
    pub layer: u32,
    pub neuron: usize,
    pub concept: String,
    pub saliency: f64,
    pub selectivity: f64,
    pub p_combined: f64,
    pub front: bool,
    pub knee: bool,
}

/// Top-k rows of the view ranked by `metric`.
pub fn rows(view: &ParetoView, metric: Metric) -> Vec<Row> {
    view.top_k
        .get(metric)
        .iter()
        .enumerate()
        .map(|(rank, &i)| {
            let p = &view.pairs[i];
            Row {
                rank: rank + 1,
                layer: p.score.layer,
                neuron: p.score.neuron,
                concept: p.concept_name.clone(),
                saliency: p.score.saliency,
                selectivity: p.score.selectivity,
                p_combined: p.score.p_combined,
                front: view.front.contains(&i),
                knee: view.knee == Some(i),
            }
        })
        .collect()
}

pub fn render_table(view: &ParetoView, rows: &[Row]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# {} pairs in scope, alpha {}, front {}, ranked by {}",
        view.pairs.len(),
        view.alpha,
        view.front.len(),
        view.query.metric.as_str()
    );
    let width = rows.iter().map(|r| r.concept.len()).max().unwrap_or(0).max(7);
    let _ = writeln!(
        out,
        "{:>4} {:>5} {:>6} {:<width$} {:>9} {:>11} {:>10} {:>5} {:>4}",
        "rank", "layer", "neuron", "concept", "saliency", "selectivity", "p_combined", "front", "knee"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:>4} {:>5} {:>6} {:<width$} {:>9.4} {:>11.4} {:>10.4} {:>5} {:>4}",
            r.rank,
            r.layer,
            r.neuron,
            r.concept,
            r.saliency,
            r.selectivity,
            r.p_combined,
            if r.front { "*" } else { "" },
            if r.knee { "*" } else { "" },
        );
    }
    out
}

pub fn write_csv(path: &Path, rows: &[Row]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "rank",
        "layer",
        "neuron",
        "concept",
        "saliency",
        "selectivity",
        "p_combined",
        "front",
        "knee",
    ])?;
    for r in rows {
        w.write_record([
            r.rank.to_string(),
            r.layer.to_string(),
            r.neuron.to_string(),
            r.concept.clone(),
            r.saliency.to_string(),
            r.selectivity.to_string(),
            r.p_combined.to_string(),
            r.front.to_string(),
            r.knee.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
