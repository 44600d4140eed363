use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::perturb::SynonymMap;
use super::prep::label_triplets;
use super::{Dataset, ImageLabel, SceneGraph, Triplet, TripletKey};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct RawFile {
    scene: String,
    images: Vec<RawImage>,
}

#[derive(Serialize, Deserialize)]
struct RawImage {
    id: String,
    label: String,
    #[serde(default)]
    triplets: Vec<RawTriplet>,
    #[serde(default)]
    ground_truth: Vec<TripletKey>,
}

#[derive(Serialize, Deserialize)]
struct RawTriplet {
    subject: String,
    predicate: String,
    object: String,
    confidence: f64,
}

fn record_err(record: &str, field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Record {
        record: record.to_owned(),
        field: field.into(),
        reason: reason.into(),
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let raw: RawFile = serde_json::from_str(text)?;
    let mut seen = BTreeSet::new();
    let mut graphs = Vec::with_capacity(raw.images.len());
    for img in raw.images {
        if img.id.is_empty() {
            return Err(record_err("<unnamed>", "id", "empty image id"));
        }
        if !seen.insert(img.id.clone()) {
            return Err(record_err(&img.id, "id", "duplicate image id"));
        }
        let label = match img.label.as_str() {
            "normal" => ImageLabel::Normal,
            "anomalous" => ImageLabel::Anomalous,
            other => {
                return Err(record_err(
                    &img.id,
                    "label",
                    format!("expected \"normal\" or \"anomalous\", got {other:?}"),
                ))
            }
        };
        let mut triplets = Vec::with_capacity(img.triplets.len());
        for (i, t) in img.triplets.into_iter().enumerate() {
            let t = Triplet::new(&t.subject, &t.predicate, &t.object, t.confidence);
            t.validate()
                .map_err(|(field, reason)| record_err(&img.id, format!("triplets[{i}].{field}"), reason))?;
            triplets.push(t);
        }
        for (i, gt) in img.ground_truth.iter().enumerate() {
            if [&gt.subject, &gt.predicate, &gt.object].iter().any(|s| s.trim().is_empty()) {
                return Err(record_err(&img.id, format!("ground_truth[{i}]"), "empty token"));
            }
        }
        match label {
            ImageLabel::Anomalous if img.ground_truth.is_empty() => {
                return Err(record_err(&img.id, "ground_truth", "anomalous image without ground truth"))
            }
            ImageLabel::Normal if !img.ground_truth.is_empty() => {
                return Err(record_err(&img.id, "ground_truth", "normal image with ground truth"))
            }
            _ => {}
        }
        let mut graph = SceneGraph {
            image_id: img.id,
            scene: raw.scene.clone(),
            triplets,
            label,
            ground_truth: img.ground_truth,
        };
        label_triplets(&mut graph);
        graphs.push(graph);
    }
    Ok(Dataset::new(raw.scene, graphs))
}

pub fn dataset_to_json(dataset: &Dataset) -> Result<String> {
    let raw = RawFile {
        scene: dataset.scene.clone(),
        images: dataset
            .graphs
            .iter()
            .map(|g| RawImage {
                id: g.image_id.clone(),
                label: match g.label {
                    ImageLabel::Normal => "normal".into(),
                    ImageLabel::Anomalous => "anomalous".into(),
                },
                triplets: g
                    .triplets
                    .iter()
                    .map(|t| RawTriplet {
                        subject: t.subject.clone(),
                        predicate: t.predicate.clone(),
                        object: t.object.clone(),
                        confidence: t.confidence,
                    })
                    .collect(),
                ground_truth: g.ground_truth.clone(),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&raw)?)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, dataset_to_json(dataset)?).map_err(|e| Error::io(path, e))
}

/// One token per line; blank lines and `#` comments are skipped.
pub fn load_stoplist(path: impl AsRef<Path>) -> Result<BTreeSet<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_stoplist(&text))
}

pub fn parse_stoplist(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}

/// `original<TAB>replacement` per line.
pub fn load_synonym_map(path: impl AsRef<Path>) -> Result<SynonymMap> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_synonym_map(&text, &path.display().to_string())
}

pub fn parse_synonym_map(text: &str, source: &str) -> Result<SynonymMap> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((from, to)) = line.split_once('\t') else {
            return Err(Error::Line {
                path: source.to_owned(),
                line: n + 1,
                reason: "expected original<TAB>replacement".into(),
            });
        };
        pairs.push((from.trim().to_owned(), to.trim().to_owned()));
    }
    SynonymMap::new(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_EACH: &str = r#"{
      "scene": "dining_room",
      "images": [
        { "id": "n1", "label": "normal",
          "triplets": [ { "subject": "cup", "predicate": "on", "object": "table", "confidence": 0.9 } ],
          "ground_truth": [] },
        { "id": "a1", "label": "anomalous",
          "triplets": [ { "subject": "plate", "predicate": "on", "object": "chair", "confidence": 0.4 },
                        { "subject": "cup", "predicate": "on", "object": "table", "confidence": 0.8 } ],
          "ground_truth": [ { "subject": "plate", "predicate": "on", "object": "chair" } ] }
      ]
    }"#;

    #[test]
    fn empty_image_list() {
        let d = parse_dataset(r#"{"scene": "office", "images": []}"#).unwrap();
        assert!(d.is_empty());
        assert_eq!(d.scene, "office");
    }

    #[test]
    fn one_normal_one_anomalous() {
        let d = parse_dataset(ONE_EACH).unwrap();
        assert_eq!(d.len(), 2);
        let gt: usize = d.graphs.iter().map(|g| g.ground_truth.len()).sum();
        assert_eq!(gt, 1);
        assert_eq!(d.graphs[0].triplets[0].anomaly_label, Some(false));
        assert_eq!(d.graphs[1].triplets[0].anomaly_label, Some(true));
        assert_eq!(d.graphs[1].triplets[1].anomaly_label, Some(false));
    }

    #[test]
    fn confidence_out_of_range_names_triplet() {
        let text = ONE_EACH.replace("0.9", "1.2");
        let err = parse_dataset(&text).unwrap_err();
        match &err {
            Error::Record { record, field, .. } => {
                assert_eq!(record, "n1");
                assert_eq!(field, "triplets[0].confidence");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("cup-on-table"));
    }

    #[test]
    fn anomalous_without_ground_truth_rejected() {
        let text = r#"{"scene": "s", "images": [{"id": "a", "label": "anomalous", "triplets": [], "ground_truth": []}]}"#;
        assert!(matches!(parse_dataset(text), Err(Error::Record { .. })));
    }

    #[test]
    fn bad_label_rejected() {
        let text = r#"{"scene": "s", "images": [{"id": "x", "label": "weird", "triplets": []}]}"#;
        let err = parse_dataset(text).unwrap_err();
        assert!(err.to_string().contains("label"));
    }

    #[test]
    fn json_round_trip() {
        let d = parse_dataset(ONE_EACH).unwrap();
        let again = parse_dataset(&dataset_to_json(&d).unwrap()).unwrap();
        assert_eq!(d, again);
    }

    #[test]
    fn stoplist_skips_blanks_and_comments() {
        let s = parse_stoplist("handle\n\n# minor parts\nleg \n");
        assert_eq!(s.into_iter().collect::<Vec<_>>(), vec!["handle", "leg"]);
    }

    #[test]
    fn synonym_file_parses_and_reports_bad_lines() {
        let m = parse_synonym_map("table\tsurface\nchair\tstool\n", "syn.tsv").unwrap();
        assert_eq!(m.get("table"), Some("surface"));
        let err = parse_synonym_map("table surface\n", "syn.tsv").unwrap_err();
        assert!(matches!(err, Error::Line { line: 1, .. }));
    }
}
