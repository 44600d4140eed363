use std::collections::BTreeSet;

use super::{SceneGraph, Triplet};
use crate::error::{Error, Result};

/// The `k` most confident triplets in descending confidence; ties keep file order.
pub fn select_top_k(graph: &SceneGraph, k: usize) -> Vec<Triplet> {
    let mut order: Vec<usize> = (0..graph.triplets.len()).collect();
    // sort_by is stable, so equal confidences stay in input order
    order.sort_by(|&a, &b| {
        graph.triplets[b]
            .confidence
            .total_cmp(&graph.triplets[a].confidence)
    });
    order
        .into_iter()
        .take(k)
        .map(|i| graph.triplets[i].clone())
        .collect()
}

/// Drops every triplet whose subject or object is a stoplisted token.
pub fn filter_minor_objects(triplets: &[Triplet], stoplist: &BTreeSet<String>) -> Vec<Triplet> {
    triplets
        .iter()
        .filter(|t| !stoplist.contains(&t.subject) && !stoplist.contains(&t.object))
        .cloned()
        .collect()
}

/// Sets `anomaly_label` from the ground-truth descriptors: exact token match
/// on all three slots.
pub fn label_triplets(graph: &mut SceneGraph) {
    let anomalous = graph.is_anomalous();
    for t in &mut graph.triplets {
        let hit = anomalous && graph.ground_truth.iter().any(|k| t.matches(k));
        t.anomaly_label = Some(hit);
    }
}

/// Makes sure an anomalous graph contains its anomaly. Matching triplets are
/// labelled; if none is present, the first descriptor is appended with
/// confidence 0 and the `injected` flag set.
pub fn inject_ground_truth(graph: &SceneGraph) -> Result<SceneGraph> {
    let mut out = graph.clone();
    label_triplets(&mut out);
    if !out.is_anomalous() {
        return Ok(out);
    }
    let Some(first) = out.ground_truth.first() else {
        return Err(Error::Contract(format!(
            "anomalous image {} has no ground-truth descriptor",
            out.image_id
        )));
    };
    if !out.triplets.iter().any(Triplet::is_anomalous) {
        let mut t = Triplet::new(&first.subject, &first.predicate, &first.object, 0.0);
        t.anomaly_label = Some(true);
        t.injected = true;
        out.triplets.push(t);
    }
    Ok(out)
}
