//! Scored scene graphs as Graphviz DOT.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graphdata::{SceneGraph, TripletId};

/// Number of highest-scoring edges flagged in an export.
pub const TOP_EDGES: usize = 2;

/// Per-graph min-max normalization; an all-equal graph maps to zeros.
pub fn normalize_scores(scores: &[f64]) -> Vec<f64> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; scores.len()];
    }
    scores.iter().map(|s| (s - lo) / (hi - lo)).collect()
}

/// Looks up the score of every triplet of `graph`.
pub fn graph_scores(graph: &SceneGraph, scores: &HashMap<TripletId, f64>) -> Result<Vec<f64>> {
    (0..graph.triplets.len())
        .map(|index| {
            let id = TripletId {
                image_id: graph.image_id.clone(),
                index,
            };
            scores
                .get(&id)
                .copied()
                .ok_or_else(|| Error::Contract(format!("edge {id} has no score")))
        })
        .collect()
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

/// DOT text for `graph` with one edge per triplet, carrying its normalized
/// score; the `TOP_EDGES` highest edges get `top=true`.
pub fn scored_graph_dot(graph: &SceneGraph, scores: &[f64]) -> Result<String> {
    if scores.len() != graph.triplets.len() {
        return Err(Error::Contract(format!(
            "{}: {} edges but {} scores",
            graph.image_id,
            graph.triplets.len(),
            scores.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::non_finite(format!("score of edge {i} in {}", graph.image_id)));
    }
    let norm = normalize_scores(scores);
    let mut order: Vec<usize> = (0..norm.len()).collect();
    order.sort_by(|&a, &b| norm[b].total_cmp(&norm[a]));
    let mut top = vec![false; norm.len()];
    for &i in order.iter().take(TOP_EDGES) {
        top[i] = true;
    }

    let mut out = String::new();
    let _ = writeln!(out, "digraph {} {{", quote(&graph.image_id));
    let _ = writeln!(out, "  label={};", quote(&format!("{} ({:?})", graph.scene, graph.label).to_lowercase()));
    let mut nodes: Vec<&str> = graph
        .triplets
        .iter()
        .flat_map(|t| [t.subject.as_str(), t.object.as_str()])
        .collect();
    nodes.sort_unstable();
    nodes.dedup();
    for n in nodes {
        let _ = writeln!(out, "  {};", quote(n));
    }
    for (i, t) in graph.triplets.iter().enumerate() {
        let style = if top[i] { ", color=\"red\", penwidth=3" } else { "" };
        let _ = writeln!(
            out,
            "  {} -> {} [label={}, score={:.6}, top={}{}];",
            quote(&t.subject),
            quote(&t.object),
            quote(&t.predicate),
            norm[i],
            top[i],
            style
        );
    }
    out.push_str("}\n");
    Ok(out)
}

pub fn export_scored_graph(graph: &SceneGraph, scores: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = scored_graph_dot(graph, scores)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphdata::{ImageLabel, Triplet};

    #[derive(Debug, PartialEq)]
    struct Edge {
        from: String,
        to: String,
        attrs: HashMap<String, String>,
    }

    /// Minimal reader for the subset of DOT emitted above.
    fn parse_dot(text: &str) -> (String, Vec<String>, Vec<Edge>) {
        fn take_quoted(s: &str) -> (String, &str) {
            let s = s.trim_start();
            assert!(s.starts_with('"'), "expected quote in {s:?}");
            let mut out = String::new();
            let mut chars = s[1..].char_indices();
            while let Some((i, c)) = chars.next() {
                match c {
                    '\\' => out.push(chars.next().unwrap().1),
                    '"' => return (out, &s[i + 2..]),
                    c => out.push(c),
                }
            }
            panic!("unterminated string");
        }
        let mut lines = text.lines();
        let head = lines.next().unwrap();
        let (name, rest) = take_quoted(head.strip_prefix("digraph ").unwrap());
        assert_eq!(rest.trim(), "{");
        let (mut nodes, mut edges) = (vec![], vec![]);
        let mut closed = false;
        for line in lines {
            let line = line.trim();
            if line == "}" {
                closed = true;
                continue;
            }
            assert!(line.ends_with(';'), "statement without terminator: {line}");
            if line.starts_with("label=") {
                continue;
            }
            let (a, rest) = take_quoted(line);
            let rest = rest.trim_start();
            if rest == ";" {
                nodes.push(a);
                continue;
            }
            let (b, rest) = take_quoted(rest.strip_prefix("->").unwrap());
            let body = rest.trim().strip_prefix('[').unwrap().strip_suffix("];").unwrap();
            let mut attrs = HashMap::new();
            let mut rest = body;
            while !rest.trim().is_empty() {
                let (k, v) = rest.split_once('=').unwrap();
                let k = k.trim().trim_start_matches(',').trim().to_owned();
                let v_rest = v.trim_start();
                let (val, after) = if v_rest.starts_with('"') {
                    take_quoted(v_rest)
                } else {
                    let end = v_rest.find(',').unwrap_or(v_rest.len());
                    (v_rest[..end].to_owned(), &v_rest[end..])
                };
                attrs.insert(k, val);
                rest = after;
            }
            edges.push(Edge { from: a, to: b, attrs });
        }
        assert!(closed);
        (name, nodes, edges)
    }

    fn graph() -> SceneGraph {
        SceneGraph {
            image_id: "img \"7\"".into(),
            scene: "dining_room".into(),
            triplets: vec![
                Triplet::new("cup", "on", "table", 0.9),
                Triplet::new("plate", "on", "chair", 0.5),
                Triplet::new("chair", "near", "table", 0.8),
                Triplet::new("fork", "next to", "plate", 0.7),
            ],
            label: ImageLabel::Anomalous,
            ground_truth: vec![],
        }
    }

    #[test]
    fn normalization_edges() {
        assert_eq!(normalize_scores(&[3.0, 3.0, 3.0]), [0.0; 3]);
        assert_eq!(normalize_scores(&[1.0, 3.0, 2.0]), [0.0, 1.0, 0.5]);
        assert_eq!(normalize_scores(&[]), Vec::<f64>::new());
    }

    #[test]
    fn round_trip_parse() {
        let g = graph();
        let text = scored_graph_dot(&g, &[2.0, 10.0, -6.0, 4.0]).unwrap();
        let (name, nodes, edges) = parse_dot(&text);
        assert_eq!(name, "img \"7\"");
        assert_eq!(nodes, ["chair", "cup", "fork", "plate", "table"]);
        assert_eq!(edges.len(), 4);
        assert_eq!(edges[3].to, "plate");
        assert_eq!(edges[3].attrs["label"], "next to");
        let score: Vec<f64> = edges.iter().map(|e| e.attrs["score"].parse().unwrap()).collect();
        assert_eq!(score, [0.5, 1.0, 0.0, 0.625]);
        let top: Vec<&str> = edges.iter().map(|e| e.attrs["top"].as_str()).collect();
        assert_eq!(top, ["false", "true", "false", "true"]);
        assert!(score.iter().all(|s| (0.0..=1.0).contains(s)));
    }

    #[test]
    fn equal_scores_and_missing_scores() {
        let g = graph();
        let (_, _, edges) = parse_dot(&scored_graph_dot(&g, &[1.0; 4]).unwrap());
        assert!(edges.iter().all(|e| e.attrs["score"] == "0.000000"));
        // ties: the first two edges are flagged
        assert_eq!(edges.iter().filter(|e| e.attrs["top"] == "true").count(), 2);
        assert!(scored_graph_dot(&g, &[1.0; 3]).is_err());
        let mut partial = HashMap::new();
        partial.insert(
            TripletId {
                image_id: g.image_id.clone(),
                index: 0,
            },
            1.0,
        );
        assert!(matches!(graph_scores(&g, &partial), Err(Error::Contract(_))));
    }

    #[test]
    fn writes_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.dot");
        export_scored_graph(&graph(), &[0.0, 1.0, 2.0, 3.0], &p).unwrap();
        assert!(std::fs::read_to_string(p).unwrap().starts_with("digraph"));
    }
}
