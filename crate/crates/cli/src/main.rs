use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use fedgraph_core::conformal::{QuantileMethod, ScoreKind};
use fedgraph_core::harness::{emit_outputs, run_experiment, ExperimentConfig, Pipeline};
use fedgraph_core::models::Architecture;
use fedgraph_core::{graph, partition, synth, verify};

#[derive(Parser)]
#[command(name = "fedgraph-cp", version, about = "Federated conformal prediction on partitioned graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write summary.csv plus plot-data files.
    Run(RunArgs),
    /// Run the built-in property and acceptance checks.
    Verify {
        /// Include the end-to-end set-size trend check (minutes of CPU).
        #[arg(long)]
        full: bool,
        /// Dataset directory for the data-dependent checks; defaults to the
        /// built-in Cora-sized synthetic graph.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Partition a dataset and write `node-id<TAB>client-id` lines.
    Partition {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        clients: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = partition::DEFAULT_IMBALANCE)]
        imbalance: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the built-in synthetic graph in the data-dir file format.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Flat TOML experiment file; every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run only this pipeline.
    #[arg(long, value_parser = parse::<Pipeline>)]
    pipeline: Option<Pipeline>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory with features.tsv, edges.txt and labels.tsv.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    clients: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    #[arg(long)]
    imbalance: Option<f64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    local_epochs: Option<usize>,
    #[arg(long, value_parser = parse::<Architecture>)]
    model: Option<Architecture>,
    #[arg(long)]
    dp_epsilon: Option<f64>,
    #[arg(long)]
    dp_delta: Option<f64>,
    #[arg(long)]
    dp_clip: Option<f64>,
    #[arg(long, value_delimiter = ',', value_parser = parse::<ScoreKind>)]
    score: Option<Vec<ScoreKind>>,
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', value_parser = parse::<QuantileMethod>)]
    quantile: Option<Vec<QuantileMethod>>,
    /// Add the generation pipeline to the configured ones.
    #[arg(long)]
    gen: bool,
    #[arg(long)]
    proto_per_client: Option<usize>,
    #[arg(long)]
    edge_top_p: Option<f64>,
    #[arg(long)]
    vgae_rounds: Option<usize>,
    /// Run clients one after another instead of on the thread pool.
    #[arg(long)]
    serial: bool,
    /// Write wall_ms = 0 so reruns produce identical files.
    #[arg(long)]
    no_wall_time: bool,
}

fn parse<T: std::str::FromStr<Err = fedgraph_core::Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: fedgraph_core::Error| e.to_string())
}

impl RunArgs {
    fn config(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $target:ident),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { cfg.$target = v; })*
            };
        }
        set!(
            clients => clients, seed => seeds, imbalance => imbalance, rounds => rounds,
            local_epochs => local_epochs, model => model, dp_delta => dp_delta, dp_clip => dp_clip,
            score => scores, alpha => alphas, quantile => quantiles, proto_per_client => protos_per_client,
            edge_top_p => edge_top_p, vgae_rounds => vgae_rounds, out => out,
        );
        if let Some(d) = &self.data_dir {
            cfg.dataset = d.to_string_lossy().into_owned();
        }
        if let Some(eps) = self.dp_epsilon {
            cfg.dp_epsilon = Some(eps);
            cfg.dp_noise_multiplier = None;
        }
        if let Some(p) = self.pipeline {
            cfg.pipelines = vec![p];
        }
        if self.gen && !cfg.pipelines.contains(&Pipeline::Gen) {
            cfg.pipelines.push(Pipeline::Gen);
        }
        cfg.concurrent &= !self.serial;
        cfg.omit_wall_time |= self.no_wall_time;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.config()?;
            let records = run_experiment(&cfg)?;
            let files = emit_outputs(&records, &cfg.out)
                .with_context(|| format!("writing results to {}", cfg.out.display()))?;
            for f in files {
                println!("{}", f.display());
            }
        }
        Command::Verify { full, data_dir } => {
            let checks = verify::run_all(&verify::VerifyOptions { full, data_dir });
            let mut failed = 0;
            for c in &checks {
                println!("{c}");
                failed += usize::from(!c.passed);
            }
            if failed > 0 {
                println!("{failed} of {} checks failed", checks.len());
                return Ok(ExitCode::FAILURE);
            }
            println!("all {} checks passed", checks.len());
        }
        Command::Partition {
            data_dir,
            clients,
            seed,
            imbalance,
            out,
        } => {
            let g = graph::load_graph(&data_dir)?;
            let p = partition::partition_graph(&g, clients, seed, imbalance)?;
            p.write_assignment(&g, &out)?;
            let rep = partition::missing_edge_report(&p);
            println!(
                "K={clients}: {} of {} edges cut ({:.2}%), client sizes {:?}",
                rep.count,
                p.num_edges,
                100.0 * rep.fraction,
                p.client_sizes()
            );
        }
        Command::Synth { out, seed } => {
            if out.exists() && out.read_dir()?.next().is_some() {
                bail!("{} exists and is not empty", out.display());
            }
            std::fs::create_dir_all(&out)?;
            let g = synth::cora_like(seed)?;
            graph::write_graph(&g, &out)?;
            println!("wrote n={} |E|={} d={} to {}", g.n(), g.edges().len(), g.feature_dim(), out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}
