use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gbe_core::config::RunConfig;
use gbe_core::harness::{self, GradcheckOptions, Protocol};
use gbe_core::synth::{self, BenchmarkSpec};
use gbe_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "gbe",
    about = "Grouped bi-enhancement zero-shot tagging: data generation, training, evaluation, ablation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonRunArgs {
    /// Run config JSON (RunConfig fields).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CommonRunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::from_json_file(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.display().to_string();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic zero-shot benchmark directory.
    GenData {
        /// Benchmark spec JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write the run directory.
    Train {
        #[command(flatten)]
        run: CommonRunArgs,
    },
    /// Evaluate a checkpoint on the test split.
    Evaluate {
        #[command(flatten)]
        run: CommonRunArgs,
        /// Checkpoint blob; defaults to <output_dir>/checkpoint.gbet.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Protocol: zsl, gzsl or both.
        #[arg(long, default_value = "both")]
        protocol: String,
        /// Comma-separated top-K cutoffs; defaults to the config's eval_ks.
        #[arg(long, value_delimiter = ',')]
        ks: Vec<usize>,
    },
    /// Finite-difference check of the end-to-end gradients.
    Gradcheck {
        /// Run the f64 shadow path (tolerance 1e-4) instead of f32 (1e-2).
        #[arg(long)]
        shadow64: bool,
        /// Coordinates sampled per parameter tensor.
        #[arg(long, default_value_t = 3)]
        coords: usize,
        #[arg(long, default_value_t = 17)]
        seed: u64,
    },
    /// Train/evaluate a grid over group count and lambda.
    Sweep {
        #[command(flatten)]
        run: CommonRunArgs,
        /// Comma-separated group counts.
        #[arg(long, value_delimiter = ',', required = true)]
        n_grid: Vec<usize>,
        /// Comma-separated lambda values.
        #[arg(long, value_delimiter = ',', required = true)]
        lambda_grid: Vec<f64>,
    },
    /// Train/evaluate the module ablation lattice (rows a-f plus full).
    Ablate {
        #[command(flatten)]
        run: CommonRunArgs,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, seed, out } => {
            let mut spec = match config {
                Some(path) => {
                    let raw = std::fs::read_to_string(&path)?;
                    serde_json_from(&raw, &path)?
                }
                None => BenchmarkSpec::default(),
            };
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let ds = synth::gen_dataset(&spec)?;
            synth::write_dataset(&ds, &out)?;
            println!(
                "wrote {} train + {} test images over {} classes to {}",
                spec.train_images,
                spec.test_images,
                spec.num_classes(),
                out.display()
            );
            println!("content checksum {}", ds.content_checksum());
        }
        Command::Train { run } => {
            let cfg = run.load()?;
            let (_, outcome) = harness::train(&cfg)?;
            let last = outcome.epoch_losses.last();
            let last_map = outcome.val_maps.last();
            println!("run directory: {}", outcome.run_dir.display());
            match (last, last_map) {
                (Some(l), Some(v)) => println!("final epoch loss {l}, validation mAP {v}"),
                _ => println!("no epochs trained; checkpoint equals initialization"),
            }
        }
        Command::Evaluate {
            run,
            checkpoint,
            protocol,
            ks,
        } => {
            let mut cfg = run.load()?;
            if !ks.is_empty() {
                cfg.eval_ks = ks;
                cfg.validate()?;
            }
            let out_dir = PathBuf::from(&cfg.output_dir);
            let blob = checkpoint.unwrap_or_else(|| out_dir.join("checkpoint.gbet"));
            let index = blob.with_extension("index.json");
            let protocols: Vec<Protocol> = match protocol.as_str() {
                "zsl" => vec![Protocol::Zsl],
                "gzsl" => vec![Protocol::Gzsl],
                "both" => vec![Protocol::Zsl, Protocol::Gzsl],
                other => {
                    return Err(Error::Usage(format!(
                        "unknown protocol `{other}` (expected zsl, gzsl or both)"
                    )))
                }
            };
            let ds = synth::read_dataset(Path::new(&cfg.dataset_dir))?;
            let model = harness::load_model(&cfg, &blob, &index)?;
            let rows = harness::evaluate_to_dir(&model, &cfg, &ds, &protocols, &out_dir)?;
            println!("protocol,k,precision,recall,f1,map");
            for r in &rows {
                println!(
                    "{},{},{},{},{},{}",
                    r.protocol, r.k, r.precision, r.recall, r.f1, r.map
                );
            }
        }
        Command::Gradcheck {
            shadow64,
            coords,
            seed,
        } => {
            let report = harness::gradcheck(&GradcheckOptions {
                shadow64,
                coords_per_param: coords,
                seed,
                corrupt_param: None,
            })?;
            print!("{}", report.render());
            if !report.pass {
                return Err(Error::Usage("gradient check failed".into()));
            }
        }
        Command::Sweep {
            run,
            n_grid,
            lambda_grid,
        } => {
            let cfg = run.load()?;
            let ds = synth::read_dataset(Path::new(&cfg.dataset_dir))?;
            let rows = harness::sweep(&cfg, &ds, &n_grid, &lambda_grid)?;
            println!("n_groups,lambda,unseen_map");
            for r in &rows {
                println!("{},{},{}", r.n_groups, r.lambda, r.unseen_map);
            }
        }
        Command::Ablate { run } => {
            let cfg = run.load()?;
            let ds = synth::read_dataset(Path::new(&cfg.dataset_dir))?;
            let rows = harness::ablate(&cfg, &ds)?;
            println!("row,mlfef,lid,gem,gla,zsl_map,gzsl_map");
            for r in &rows {
                println!(
                    "{},{},{},{},{},{},{}",
                    r.name, r.mlfef as u8, r.lid as u8, r.gem as u8, r.gla as u8, r.zsl_map, r.gzsl_map
                );
            }
        }
    }
    Ok(())
}

fn serde_json_from(raw: &str, path: &Path) -> Result<BenchmarkSpec> {
    serde_json::from_str(raw).map_err(|source| Error::Json {
        path: path.display().to_string(),
        source,
    })
}

// re-exported through gbe-core so the CLI carries no direct serde dependency
use gbe_core::serde_json;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
