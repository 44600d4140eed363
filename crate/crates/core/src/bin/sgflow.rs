use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use sgflow::graphdata::{gen_synthetic, save_dataset, SynthConfig};
use sgflow::pipeline::{
    graph_scores, run_ablation, run_baseline, run_experiment, run_noise_sweep, run_seed, run_synonym_sweep,
    scored_graph_dot, write_run, write_sweep, AblationVariant, Detectors, ExperimentConfig, Perturbation, Resources,
    RunRecord, SweepPoint,
};
use sgflow::Error;

#[derive(Parser)]
#[command(name = "sgflow", version, about = "Scene-graph triplet anomaly detection with a normalizing flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); relative paths inside resolve against its directory.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `output_dir` from the config, then `out/`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated master seeds, overriding the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate the flow detector and the counting baseline.
    Run(Common),
    /// Design-study variant: feature_sum, feature_mult, node_only, no_ae or latent_sweep.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        variant: AblationVariant,
    },
    /// Synonym-rate robustness sweep.
    Synonyms {
        #[command(flatten)]
        common: Common,
        /// Rates to sweep; defaults to `synonyms.rates` from the config.
        #[arg(long, value_delimiter = ',')]
        rates: Option<Vec<f64>>,
    },
    /// Embedding-noise robustness sweep.
    Noise {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
    },
    /// Counting baseline only.
    Baseline(Common),
    /// Generate a synthetic dataset from a generator config and write it as JSON.
    SynthGen {
        /// Generator config (TOML).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Generator seed; only the first value is used.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
    },
    /// Train once and write per-image DOT graphs with normalized edge scores.
    ExportGraph {
        #[command(flatten)]
        common: Common,
        /// Restrict the export to these image ids.
        #[arg(long, value_delimiter = ',')]
        images: Option<Vec<String>>,
    },
}

impl Common {
    fn load(&self) -> sgflow::Result<(ExperimentConfig, PathBuf)> {
        let mut config = ExperimentConfig::load(&self.config)?;
        if let Some(seeds) = &self.seeds {
            config.seeds = seeds.clone();
        }
        config.validate()?;
        let out = self
            .out
            .clone()
            .or_else(|| config.output_dir())
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok((config, out))
    }
}

/// Failure classes mapped to exit codes 1 (validation) and 2 (runtime).
enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

fn check_record(record: &RunRecord) -> Result<(), Failure> {
    let Some(first) = record.failures.first() else {
        return Ok(());
    };
    let msg = anyhow::anyhow!(
        "{}: {} of the seeds failed; first: seed {} in {}: {}",
        record.label,
        record.failures.len(),
        first.seed,
        first.stage,
        first.message
    );
    Err(if record.failures.iter().all(|f| f.validation) {
        Failure::Validation(msg)
    } else {
        Failure::Runtime(msg)
    })
}

fn finish_sweep(points: &[SweepPoint], name: &str, out: &Path) -> Result<(), Failure> {
    write_sweep(points, name, out)?;
    points.iter().try_for_each(|p| check_record(&p.record))
}

fn export_graphs(common: &Common, images: Option<&[String]>) -> Result<(), Failure> {
    let (config, out) = common.load()?;
    let resources = Resources::load(&config)?;
    let seed = config.seeds[0];
    let outcome = run_seed(&config, &resources, seed, Perturbation::from_config(&config), Detectors { flow: true, baseline: false })
        .map_err(|e| Failure::from(e.error))?;
    std::fs::create_dir_all(&out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(Failure::Runtime)?;
    let mut written = 0;
    for scene in &outcome.scenes {
        let scores = scene.flow_scores.as_ref().expect("flow detector was enabled");
        for g in scene.dataset.test_graphs()? {
            if images.is_some_and(|ids| !ids.contains(&g.image_id)) {
                continue;
            }
            let dot = scored_graph_dot(g, &graph_scores(g, scores)?)?;
            let name: String = g
                .image_id
                .chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
                .collect();
            let path = out.join(format!("{name}.dot"));
            std::fs::write(&path, dot)
                .with_context(|| format!("writing {}", path.display()))
                .map_err(Failure::Runtime)?;
            written += 1;
        }
    }
    if written == 0 {
        return Err(Failure::Validation(anyhow::anyhow!("no matching test image to export")));
    }
    log::info!("wrote {written} graphs to {}", out.display());
    Ok(())
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run(c) => {
            let (config, out) = c.load()?;
            let record = run_experiment(&config)?;
            write_run(&record, &out)?;
            check_record(&record)
        }
        Command::Baseline(c) => {
            let (config, out) = c.load()?;
            let record = run_baseline(&config)?;
            write_run(&record, &out)?;
            check_record(&record)
        }
        Command::Ablate { common, variant } => {
            let (config, out) = common.load()?;
            let points = run_ablation(&config, variant)?;
            finish_sweep(&points, &variant.to_string(), &out)
        }
        Command::Synonyms { common, rates } => {
            let (config, out) = common.load()?;
            let rates = rates.unwrap_or_else(|| config.synonyms.rates.clone());
            finish_sweep(&run_synonym_sweep(&config, &rates)?, "synonym_rate", &out)
        }
        Command::Noise { common, sigmas } => {
            let (config, out) = common.load()?;
            let sigmas = sigmas.unwrap_or_else(|| config.noise.sigmas.clone());
            finish_sweep(&run_noise_sweep(&config, &sigmas)?, "noise_sigma", &out)
        }
        Command::SynthGen { config, out, seeds } => {
            let synth = SynthConfig::load(&config)?;
            let dataset = gen_synthetic(&synth, seeds[0])?;
            save_dataset(&dataset, &out)?;
            Ok(())
        }
        Command::ExportGraph { common, images } => export_graphs(&common, images.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            log::error!("{e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            log::error!("{e:#}");
            ExitCode::from(2)
        }
    }
}
