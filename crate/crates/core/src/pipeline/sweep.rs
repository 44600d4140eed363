use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{run_with, Detectors, Metric, Perturbation, Resources, RunRecord};
use crate::embed::Aggregation;
use crate::error::{Error, Result};

/// One point of a sweep: the swept value and the run it produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub x: f64,
    pub record: RunRecord,
}

impl SweepPoint {
    pub fn summary(&self, baseline: bool, metric: Metric) -> Option<(f64, f64)> {
        self.record.summary(baseline, metric)
    }
}

fn check_rates(rates: &[f64]) -> Result<()> {
    if rates.is_empty() {
        return Err(Error::Config("synonym sweep needs a non-empty rate grid".into()));
    }
    if let Some(r) = rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::invalid(format!("synonym rate {r} outside [0, 1]")));
    }
    Ok(())
}

/// Flow and counting baseline at each synonym rate. Splits and subgroups do
/// not depend on the rate, so every point is a paired comparison.
pub fn run_synonym_sweep(config: &ExperimentConfig, rates: &[f64]) -> Result<Vec<SweepPoint>> {
    check_rates(rates)?;
    let resources = Resources::load(config)?;
    run_synonym_sweep_with(config, &resources, rates)
}

pub fn run_synonym_sweep_with(config: &ExperimentConfig, resources: &Resources, rates: &[f64]) -> Result<Vec<SweepPoint>> {
    check_rates(rates)?;
    rates
        .iter()
        .map(|&rate| {
            let p = Perturbation {
                synonym_rate: rate,
                noise_sigma: config.noise.sigma,
            };
            let record = run_with(config, resources, p, Detectors::BOTH, &format!("synonym rate {rate}"))?;
            Ok(SweepPoint { x: rate, record })
        })
        .collect()
}

/// Gaussian noise on triplet vectors (training and scoring) at each sigma.
pub fn run_noise_sweep(config: &ExperimentConfig, sigmas: &[f64]) -> Result<Vec<SweepPoint>> {
    if sigmas.is_empty() {
        return Err(Error::Config("noise sweep needs a non-empty sigma grid".into()));
    }
    if let Some(s) = sigmas.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(Error::invalid(format!("noise sigma {s} must be >= 0")));
    }
    let resources = Resources::load(config)?;
    sigmas
        .iter()
        .map(|&sigma| {
            let p = Perturbation {
                synonym_rate: config.synonyms.rate,
                noise_sigma: sigma,
            };
            let record = run_with(config, &resources, p, Detectors::BOTH, &format!("noise sigma {sigma}"))?;
            Ok(SweepPoint { x: sigma, record })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    FeatureSum,
    FeatureMult,
    NodeOnly,
    NoAe,
    LatentSweep,
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationVariant::FeatureSum => "feature_sum",
            AblationVariant::FeatureMult => "feature_mult",
            AblationVariant::NodeOnly => "node_only",
            AblationVariant::NoAe => "no_ae",
            AblationVariant::LatentSweep => "latent_sweep",
        })
    }
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feature_sum" => Ok(AblationVariant::FeatureSum),
            "feature_mult" => Ok(AblationVariant::FeatureMult),
            "node_only" => Ok(AblationVariant::NodeOnly),
            "no_ae" => Ok(AblationVariant::NoAe),
            "latent_sweep" => Ok(AblationVariant::LatentSweep),
            other => Err(Error::invalid(format!("unknown ablation variant {other:?}"))),
        }
    }
}

/// Config rewritten for a variant. The latent sweep yields one config per grid value.
pub fn ablation_configs(config: &ExperimentConfig, variant: AblationVariant) -> Result<Vec<(f64, ExperimentConfig)>> {
    let with = |aggregation: Aggregation, latent_dim: usize, use_autoencoder: bool| {
        let mut c = config.clone();
        c.aggregation = aggregation;
        c.latent_dim = latent_dim;
        c.use_autoencoder = use_autoencoder;
        c
    };
    let a = &config.ablation;
    Ok(match variant {
        AblationVariant::FeatureSum => vec![(a.reduced_dim as f64, with(Aggregation::Sum, a.reduced_dim, true))],
        AblationVariant::FeatureMult => vec![(a.reduced_dim as f64, with(Aggregation::Mult, a.reduced_dim, true))],
        AblationVariant::NodeOnly => vec![(a.node_only_dim as f64, with(Aggregation::NodeOnly, a.node_only_dim, true))],
        // latent_dim is unused without the autoencoder; it records the raw width
        AblationVariant::NoAe => vec![(f64::NAN, with(config.aggregation, config.latent_dim, false))],
        AblationVariant::LatentSweep => {
            if a.latent_grid.is_empty() {
                return Err(Error::Config("latent sweep needs a non-empty latent_grid".into()));
            }
            a.latent_grid
                .iter()
                .map(|&d| (d as f64, with(config.aggregation, d, true)))
                .collect()
        }
    })
}

/// Runs a design-study variant; one point per latent size for the sweep.
pub fn run_ablation(config: &ExperimentConfig, variant: AblationVariant) -> Result<Vec<SweepPoint>> {
    let resources = Resources::load(config)?;
    let width_of = |c: &ExperimentConfig| c.aggregation.output_dim(resources.embeddings.dim());
    ablation_configs(config, variant)?
        .into_iter()
        .map(|(x, c)| {
            let x = if x.is_nan() { width_of(&c) as f64 } else { x };
            if c.use_autoencoder && c.latent_dim >= width_of(&c) {
                return Err(Error::Config(format!(
                    "{variant}: latent dimension {} must be below the {}-dim {:?} vectors",
                    c.latent_dim,
                    width_of(&c),
                    c.aggregation
                )));
            }
            let record = run_with(&c, &resources, Perturbation::from_config(&c), Detectors::BOTH, &variant.to_string())?;
            Ok(SweepPoint { x, record })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> ExperimentConfig {
        ExperimentConfig::from_toml("datasets = [\"d\"]\nembeddings = \"e\"\nlatent_dim = 512", ".").unwrap()
    }

    #[test]
    fn variant_rewrites() {
        let c = config();
        let (_, fs) = ablation_configs(&c, AblationVariant::FeatureSum).unwrap().remove(0);
        assert_eq!((fs.aggregation, fs.latent_dim), (Aggregation::Sum, 128));
        let (_, fm) = ablation_configs(&c, AblationVariant::FeatureMult).unwrap().remove(0);
        assert_eq!((fm.aggregation, fm.latent_dim), (Aggregation::Mult, 128));
        let (_, no) = ablation_configs(&c, AblationVariant::NodeOnly).unwrap().remove(0);
        assert_eq!((no.aggregation, no.latent_dim), (Aggregation::NodeOnly, 512));
        assert_eq!(no.aggregation.output_dim(300), 600);
        let (_, raw) = ablation_configs(&c, AblationVariant::NoAe).unwrap().remove(0);
        assert!(!raw.use_autoencoder);
        assert_eq!(raw.aggregation.output_dim(300), 900);
        let grid: Vec<f64> = ablation_configs(&c, AblationVariant::LatentSweep)
            .unwrap()
            .into_iter()
            .map(|(x, _)| x)
            .collect();
        assert_eq!(grid, [64.0, 128.0, 256.0, 512.0, 768.0]);
    }

    #[test]
    fn variant_names() {
        for v in ["feature_sum", "feature_mult", "node_only", "no_ae", "latent_sweep"] {
            assert_eq!(v.parse::<AblationVariant>().unwrap().to_string(), v);
        }
        assert!("glow".parse::<AblationVariant>().is_err());
    }

    #[test]
    fn bad_grids_rejected() {
        assert!(check_rates(&[]).is_err());
        assert!(check_rates(&[0.0, 1.2]).is_err());
        assert!(check_rates(&[0.0, 0.25, 1.0]).is_ok());
    }
}
