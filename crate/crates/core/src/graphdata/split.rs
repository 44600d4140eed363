use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::{Error, Result};

/// One anomalous image plus its normal companions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subgroup {
    pub anomalous: String,
    pub normals: Vec<String>,
}

impl Subgroup {
    pub fn size(&self) -> usize {
        1 + self.normals.len()
    }

    pub fn members(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.anomalous.as_str()).chain(self.normals.iter().map(String::as_str))
    }
}

/// Assigns `floor(fraction · n_normal)` normal images to train (at most
/// `n_normal - 1`); all other images, anomalous ones included, go to test.
pub fn split_dataset(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<Dataset> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let mut normals: Vec<usize> = dataset
        .graphs
        .iter()
        .enumerate()
        .filter(|(_, g)| !g.is_anomalous())
        .map(|(i, _)| i)
        .collect();
    if normals.is_empty() {
        return Err(Error::invalid(format!(
            "scene {}: no normal images to split",
            dataset.scene
        )));
    }
    let n_train = ((train_fraction * normals.len() as f64).floor() as usize).min(normals.len() - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    normals.shuffle(&mut rng);
    let mut splits = vec![Split::Test; dataset.len()];
    for &i in &normals[..n_train] {
        splits[i] = Split::Train;
    }
    Ok(Dataset {
        splits: Some(splits),
        ..dataset.clone()
    })
}

/// One subgroup per anomalous image, each with `size - 1` distinct normal
/// images drawn uniformly from the test split. Normals may recur across
/// subgroups.
pub fn build_subgroups(dataset: &Dataset, size: usize, seed: u64) -> Result<Vec<Subgroup>> {
    if size < 2 {
        return Err(Error::invalid(format!("subgroup size must be >= 2, got {size}")));
    }
    let test = dataset.test_graphs()?;
    let normals: Vec<&str> = test
        .iter()
        .filter(|g| !g.is_anomalous())
        .map(|g| g.image_id.as_str())
        .collect();
    if normals.len() < size - 1 {
        return Err(Error::invalid(format!(
            "scene {}: subgroup size {size} needs {} normal test images, only {} available",
            dataset.scene,
            size - 1,
            normals.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(test
        .iter()
        .filter(|g| g.is_anomalous())
        .map(|g| {
            let mut picked = index::sample(&mut rng, normals.len(), size - 1).into_vec();
            picked.sort_unstable();
            Subgroup {
                anomalous: g.image_id.clone(),
                normals: picked.into_iter().map(|i| normals[i].to_owned()).collect(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphdata::{ImageLabel, SceneGraph, TripletKey};
    use std::collections::BTreeSet;

    fn dataset(n_normal: usize, n_anom: usize) -> Dataset {
        let mut graphs = Vec::new();
        for i in 0..n_normal {
            graphs.push(SceneGraph {
                image_id: format!("n{i}"),
                scene: "s".into(),
                triplets: vec![],
                label: ImageLabel::Normal,
                ground_truth: vec![],
            });
        }
        for i in 0..n_anom {
            graphs.push(SceneGraph {
                image_id: format!("a{i}"),
                scene: "s".into(),
                triplets: vec![],
                label: ImageLabel::Anomalous,
                ground_truth: vec![TripletKey::new("x", "on", "y")],
            });
        }
        Dataset::new("s", graphs)
    }

    fn count(d: &Dataset, s: Split) -> usize {
        d.splits.as_ref().unwrap().iter().filter(|&&x| x == s).count()
    }

    #[test]
    fn eighty_twenty_of_sixty() {
        let d = split_dataset(&dataset(60, 54), 0.8, 1).unwrap();
        assert_eq!(count(&d, Split::Train), 48);
        assert_eq!(d.test_graphs().unwrap().iter().filter(|g| !g.is_anomalous()).count(), 12);
        assert!(d.train_graphs().unwrap().iter().all(|g| !g.is_anomalous()));
    }

    #[test]
    fn high_fraction_keeps_one_test_image() {
        let d = split_dataset(&dataset(10, 0), 0.999, 1).unwrap();
        assert_eq!(count(&d, Split::Train), 9);
        assert_eq!(count(&d, Split::Test), 1);
        let d = split_dataset(&dataset(3, 0), 0.9999, 1).unwrap();
        assert_eq!(count(&d, Split::Test), 1);
    }

    #[test]
    fn split_is_seeded() {
        let base = dataset(30, 5);
        assert_eq!(split_dataset(&base, 0.8, 9).unwrap(), split_dataset(&base, 0.8, 9).unwrap());
        assert_ne!(split_dataset(&base, 0.8, 9).unwrap(), split_dataset(&base, 0.8, 10).unwrap());
    }

    #[test]
    fn split_errors() {
        assert!(split_dataset(&dataset(0, 3), 0.8, 1).is_err());
        assert!(split_dataset(&dataset(5, 0), 1.0, 1).is_err());
        assert!(split_dataset(&dataset(5, 0), 0.0, 1).is_err());
    }

    #[test]
    fn subgroups_of_eleven() {
        let d = split_dataset(&dataset(60, 5), 0.8, 3).unwrap();
        let groups = build_subgroups(&d, 11, 4).unwrap();
        assert_eq!(groups.len(), 5);
        let test_normals: BTreeSet<_> = d
            .test_graphs()
            .unwrap()
            .iter()
            .filter(|g| !g.is_anomalous())
            .map(|g| g.image_id.clone())
            .collect();
        for g in &groups {
            assert_eq!(g.size(), 11);
            let uniq: BTreeSet<_> = g.normals.iter().cloned().collect();
            assert_eq!(uniq.len(), 10);
            assert!(uniq.is_subset(&test_normals));
            assert!(g.anomalous.starts_with('a'));
        }
    }

    #[test]
    fn minimal_subgroups_and_seed_dependence() {
        let d = split_dataset(&dataset(60, 5), 0.8, 3).unwrap();
        let g2 = build_subgroups(&d, 2, 4).unwrap();
        assert!(g2.iter().all(|g| g.normals.len() == 1));
        let a = build_subgroups(&d, 11, 4).unwrap();
        let b = build_subgroups(&d, 11, 5).unwrap();
        assert_eq!(a.len(), b.len());
        assert_ne!(a, b);
        assert_eq!(a, build_subgroups(&d, 11, 4).unwrap());
    }

    #[test]
    fn too_few_normals() {
        let d = split_dataset(&dataset(20, 2), 0.8, 3).unwrap();
        assert!(build_subgroups(&d, 11, 0).is_err());
    }
}
