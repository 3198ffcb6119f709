use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use invdesign_cli::service::{router, ServiceState};
use invdesign_core::workflow::{
    read_manifest, render_comparison, render_validation, PipelineConfig, RunManifest, Workspace, REPORT_TEXT_FILE,
};

#[derive(Parser)]
#[command(name = "invdesign", version, about = "Generative inverse design for a premixed combustor model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
struct Common {
    /// Master seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Pipeline configuration JSON. Defaults to the run manifest in `--out`, if any.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the oracle over the design space.
    Datagen(Common),
    /// Train the three label surrogates.
    TrainSurrogates(Common),
    /// Add surrogate-labeled samples to the training rows.
    Augment(Common),
    /// Hyperband search over INN hyperparameters.
    Tune(Common),
    /// Train the invertible network on the augmented data.
    TrainInn(Common),
    /// Generate, filter and select designs for every grid target.
    Generate(Common),
    /// Label the selected designs with the oracle.
    Validate(Common),
    /// GP plus Nelder-Mead inverse design and comparison.
    Baseline(Common),
    /// Write the combined report.
    Report(Common),
    /// Run datagen through report.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Take the configuration from an existing manifest.
        #[arg(long, conflicts_with = "config")]
        from_manifest: Option<PathBuf>,
        #[arg(long)]
        skip_baseline: bool,
        /// Run the tuning stage first and train with the best configuration.
        #[arg(long)]
        tune: bool,
    },
    /// Print the default configuration.
    PrintConfig,
    /// Serve the JSON API over a trained run directory.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

fn resolve_config(common: &Common, manifest: Option<&Path>) -> Result<PipelineConfig> {
    let mut config = if let Some(path) = &common.config {
        PipelineConfig::from_json_file(path).with_context(|| format!("reading config {}", path.display()))?
    } else if let Some(path) = manifest {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_str::<RunManifest>(&text)?.config
    } else {
        read_manifest(&common.out).map(|m| m.config).unwrap_or_default()
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn workspace(common: &Common) -> Result<Workspace> {
    Ok(Workspace::new(&common.out, resolve_config(common, None)?)?)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Datagen(c) => {
            let d = workspace(&c)?.datagen()?;
            println!("wrote {} oracle rows", d.len());
        }
        Command::TrainSurrogates(c) => {
            let (_, report) = workspace(&c)?.train_surrogates()?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Augment(c) => {
            let d = workspace(&c)?.augment()?;
            println!("wrote {} rows", d.len());
        }
        Command::Tune(c) => {
            let out = workspace(&c)?.tune()?;
            println!(
                "best objective {:.4e} after {} epochs\n{}",
                out.best_objective,
                out.epochs_consumed,
                serde_json::to_string_pretty(&out.best)?
            );
        }
        Command::TrainInn(c) => {
            workspace(&c)?.train_inn()?;
        }
        Command::Generate(c) => {
            let outcomes = workspace(&c)?.generate()?;
            for o in &outcomes {
                println!(
                    "{:?}: {} of {} valid, {} selected",
                    o.target,
                    o.valid,
                    o.generated,
                    o.selection.designs.len()
                );
            }
        }
        Command::Validate(c) => {
            print!("{}", render_validation(&workspace(&c)?.validate_selected()?));
        }
        Command::Baseline(c) => {
            let art = workspace(&c)?.baseline()?;
            print!("{}", render_validation(&art.validation));
            print!("\n{}", render_comparison(&art.comparison));
        }
        Command::Report(c) => {
            let (_, text) = workspace(&c)?.report()?;
            print!("{text}");
        }
        Command::Pipeline {
            common,
            from_manifest,
            skip_baseline,
            tune,
        } => {
            let config = resolve_config(&common, from_manifest.as_deref())?;
            let mut ws = Workspace::new(&common.out, config)?;
            if tune {
                ws.datagen()?;
                ws.train_surrogates()?;
                let best = ws.tune()?.best;
                let tuned = ws.config().with_hyperparams(&best);
                ws = Workspace::new(&common.out, tuned)?;
            }
            ws.run_all(!skip_baseline)?;
            print!("{}", std::fs::read_to_string(ws.path(REPORT_TEXT_FILE))?);
        }
        Command::PrintConfig => {
            println!("{}", serde_json::to_string_pretty(&PipelineConfig::default())?);
        }
        Command::Serve { common, addr } => {
            if common.config.is_some() {
                bail!("serve reads its configuration from the run manifest");
            }
            let seed = common.seed.unwrap_or(0);
            let state = ServiceState::load(&common.out, seed)
                .with_context(|| format!("loading models from {}", common.out.display()))?;
            serve(Arc::new(state), addr)?;
        }
    }
    Ok(())
}

#[tokio::main(flavor = "current_thread")]
async fn serve(state: Arc<ServiceState>, addr: SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
