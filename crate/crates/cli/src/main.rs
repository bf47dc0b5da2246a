mod config;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use cogmap::experiment::{
    alpha_sweep, analyze_cell, cell_dir, dream_cell, grid_cells, run_cells, train_cell,
    write_report, AnalyzeOptions, CellSpec, DreamOptions, GridPlan, Schedule,
};
use cogmap::mazeworld::{self, MazeConfig, MazeDataset};
use cogmap::nets::{load_checkpoint, TrainConfig, Variant};
use config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "cogmap",
    version,
    about = "Predictive VAE and VAE/GAN cognitive-map experiments"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    experiment: Option<String>,
    /// Grid cells processed at once.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the maze walk to a dataset file.
    GenDataset {
        /// Dataset file to write (default: maze.bin under the output root).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one network configuration, resuming from its latest checkpoint.
    Train(CellArgs),
    /// Latent-map metrics and images for a trained cell.
    Analyze {
        #[command(flatten)]
        cell: CellArgs,
        /// Samples per frame for the variability probe (0 disables).
        #[arg(long)]
        probe: Option<usize>,
        /// Write bifurcation panels.
        #[arg(long)]
        bifurcation: Option<bool>,
        /// Side of the PCA image lattice (0 disables).
        #[arg(long)]
        pca_grid: Option<usize>,
    },
    /// Closed-loop runs from every `step`-th frame of a trained cell.
    Dream {
        #[command(flatten)]
        cell: CellArgs,
        #[arg(long)]
        step: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Train and analyse VAE/GAN networks over a list of GAN weights.
    SweepAlpha {
        #[command(flatten)]
        cell: CellArgs,
        /// Comma-separated GAN weights.
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f32>>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Run the configured grid end to end and assemble the report.
    Report {
        /// Output root (overrides COGMAP_OUT and the config file).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone, Default)]
struct CellArgs {
    /// Output root (overrides COGMAP_OUT and the config file).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// vae, vaegan or vaegan_layer.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    zdim: Option<usize>,
    #[arg(long)]
    alpha: Option<f32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    checkpoint_interval: Option<u64>,
}

fn resolve(common: &Common, out: Option<&Path>) -> Result<ExperimentConfig> {
    let mut c = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(env) = std::env::var_os("COGMAP_OUT") {
        c.out = PathBuf::from(env);
    }
    if let Some(o) = out {
        c.out = o.to_path_buf();
    }
    if let Some(e) = &common.experiment {
        c.experiment = e.clone();
    }
    if let Some(j) = common.jobs {
        c.jobs = j;
    }
    c.validate()?;
    Ok(c)
}

fn parse_variant(s: &str) -> Result<Variant> {
    Variant::parse(s)
        .with_context(|| format!("unknown variant {s:?} (expected vae, vaegan or vaegan_layer)"))
}

fn schedule(c: &ExperimentConfig, a: &CellArgs) -> Schedule {
    let t = &c.training;
    Schedule {
        width: a.width.unwrap_or(t.width),
        train: TrainConfig {
            batch_size: a.batch.unwrap_or(t.batch),
            iterations: a.iters.unwrap_or(t.iters),
            checkpoint_interval: a.checkpoint_interval.unwrap_or(t.checkpoint_interval),
            ..TrainConfig::default()
        },
    }
}

fn cell_spec(c: &ExperimentConfig, a: &CellArgs) -> Result<CellSpec> {
    let g = &c.grid;
    let variant = match &a.variant {
        Some(v) => parse_variant(v)?,
        None => parse_variant(g.variants.first().map(String::as_str).unwrap_or("vae"))?,
    };
    if variant == Variant::Vae && a.alpha.is_some() {
        log::warn!("--alpha has no effect on the plain VAE and is ignored");
    }
    let alpha = match variant {
        Variant::Vae => 0.0,
        _ => a.alpha.unwrap_or(g.alpha),
    };
    Ok(CellSpec {
        variant,
        tau: a.tau.unwrap_or(g.tau[0]),
        d_z: a.zdim.unwrap_or(g.zdim[0]),
        alpha,
        seed: a.seed.unwrap_or(g.seeds[0]),
    })
}

fn load_dataset(c: &ExperimentConfig, a: &CellArgs) -> Result<MazeDataset> {
    let path = a.dataset.clone().unwrap_or_else(|| c.dataset_path());
    mazeworld::load(&path).with_context(|| format!("loading dataset {}", path.display()))
}

fn experiment_root(c: &ExperimentConfig) -> PathBuf {
    c.out.join(&c.experiment)
}

fn analysis_options(c: &ExperimentConfig) -> AnalyzeOptions {
    let a = &c.analysis;
    AnalyzeOptions {
        probe: (a.probe > 0).then_some(a.probe),
        probe_seed: a.probe_seed,
        junction_window: a.junction_window,
        bifurcation: a.bifurcation,
        pca_grid: (a.pca_grid > 0).then_some(a.pca_grid),
    }
}

fn dream_options(c: &ExperimentConfig) -> DreamOptions {
    let a = &c.analysis;
    DreamOptions {
        step: a.dream_step,
        iterations: a.dream_iterations,
        rollout_starts: a.rollout_starts.clone(),
        ..DreamOptions::default()
    }
}

fn plan(c: &ExperimentConfig, s: Schedule) -> GridPlan {
    GridPlan {
        root: c.out.clone(),
        experiment: c.experiment.clone(),
        schedule: s,
        analysis: Some(analysis_options(c)),
        dream: c.analysis.dream.then(|| dream_options(c)),
        jobs: c.jobs,
    }
}

fn gen_dataset(
    c: &ExperimentConfig,
    file: Option<PathBuf>,
    frames: Option<usize>,
    size: Option<usize>,
    seed: Option<u64>,
) -> Result<PathBuf> {
    let d = &c.dataset;
    let cfg = MazeConfig {
        size: size.unwrap_or(d.size),
        frames: frames.unwrap_or(d.frames),
        seed: seed.unwrap_or(d.seed),
        ..MazeConfig::default()
    };
    let ds = mazeworld::generate(&cfg)?;
    let path = file.unwrap_or_else(|| c.dataset_path());
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    mazeworld::save(&ds, &path).with_context(|| format!("writing {}", path.display()))?;
    println!(
        "{}: {} frames of {}x{}",
        path.display(),
        ds.len(),
        ds.width,
        ds.height
    );
    Ok(path)
}

fn print_metrics(tag: &str, m: &cogmap::experiment::CellMetrics) {
    println!(
        "{tag}: r_input {:.4} r_target {:.4} s_pca {:.4} d_lr {:.4}",
        m.r_input, m.r_target, m.s_pca, m.d_lr
    );
}

fn latest_bundle(dir: &Path) -> Result<cogmap::nets::ModelBundle> {
    let ckpts = cogmap::experiment::list_checkpoints(dir)?;
    let (_, path) = ckpts
        .last()
        .with_context(|| format!("{} has no checkpoints; run train first", dir.display()))?;
    Ok(load_checkpoint(path)?.bundle)
}

fn run(cli: Cli) -> Result<()> {
    let root = match &cli.command {
        Command::Train(a)
        | Command::Analyze { cell: a, .. }
        | Command::Dream { cell: a, .. }
        | Command::SweepAlpha { cell: a, .. } => a.out.as_deref(),
        Command::Report { out } => out.as_deref(),
        Command::GenDataset { .. } => None,
    };
    let c = resolve(&cli.common, root)?;
    match cli.command {
        Command::GenDataset {
            out: file,
            frames,
            size,
            seed,
        } => {
            gen_dataset(&c, file, frames, size, seed)?;
        }
        Command::Train(a) => {
            let spec = cell_spec(&c, &a)?;
            let ds = load_dataset(&c, &a)?;
            let dir = cell_dir(&c.out, &c.experiment, &spec);
            let (t, outcome) = train_cell(&ds, &spec, &schedule(&c, &a), &dir)?;
            println!(
                "{}: {:?}, iteration {}",
                dir.display(),
                outcome,
                t.bundle.iteration
            );
        }
        Command::Analyze {
            cell,
            probe,
            bifurcation,
            pca_grid,
        } => {
            let spec = cell_spec(&c, &cell)?;
            let ds = load_dataset(&c, &cell)?;
            let dir = cell_dir(&c.out, &c.experiment, &spec);
            let mut opts = analysis_options(&c);
            if let Some(k) = probe {
                opts.probe = (k > 0).then_some(k);
            }
            if let Some(b) = bifurcation {
                opts.bifurcation = b;
            }
            if let Some(n) = pca_grid {
                opts.pca_grid = (n > 0).then_some(n);
            }
            let m = analyze_cell(&ds, &dir, &schedule(&c, &cell), &opts)?;
            print_metrics(&spec.tag(), &m);
        }
        Command::Dream {
            cell,
            step,
            iterations,
        } => {
            let spec = cell_spec(&c, &cell)?;
            let ds = load_dataset(&c, &cell)?;
            let dir = cell_dir(&c.out, &c.experiment, &spec);
            let bundle = latest_bundle(&dir)?;
            let d = dream_options(&c);
            let report = dream_cell(
                &ds,
                &dir,
                &bundle,
                &d.classifier,
                step.unwrap_or(d.step),
                iterations.unwrap_or(d.iterations),
                &d.rollout_starts,
            )?;
            let parts: Vec<String> = cogmap::dreamer::DynamicsLabel::ALL
                .iter()
                .map(|l| format!("{} {}", l.name(), report.counts[*l as usize]))
                .collect();
            println!("{}: {}", spec.tag(), parts.join(", "));
        }
        Command::SweepAlpha {
            cell,
            alphas,
            seeds,
        } => {
            let ds = load_dataset(&c, &cell)?;
            let alphas = alphas.unwrap_or_else(|| c.analysis.alphas.clone());
            let seeds = seeds.unwrap_or_else(|| c.grid.seeds.clone());
            if alphas.is_empty() || seeds.is_empty() {
                bail!("the sweep needs at least one alpha and one seed");
            }
            let tau = cell.tau.unwrap_or(c.analysis.sweep_tau);
            let d_z = cell.zdim.unwrap_or(c.grid.zdim[0]);
            let rows = alpha_sweep(
                &ds,
                &plan(&c, schedule(&c, &cell)),
                &alphas,
                tau,
                d_z,
                &seeds,
            )?;
            for r in &rows {
                print_metrics(&format!("alpha {} seed {}", r.alpha, r.seed), &r.metrics);
            }
        }
        Command::Report { .. } => {
            let path = c.dataset_path();
            if !path.exists() {
                gen_dataset(&c, Some(path.clone()), None, None, None)?;
            }
            let ds = mazeworld::load(&path)?;
            let variants: Vec<Variant> = c
                .grid
                .variants
                .iter()
                .map(|v| parse_variant(v))
                .collect::<Result<_>>()?;
            let cells = grid_cells(
                &variants,
                &c.grid.tau,
                &c.grid.zdim,
                &c.grid.seeds,
                c.grid.alpha,
            );
            let p = plan(&c, schedule(&c, &CellArgs::default()));
            let results = run_cells(&ds, &p, &cells)?;
            let report_dir = experiment_root(&c).join("report");
            let written = write_report(&results, &report_dir)?;
            if c.analysis.sweep {
                alpha_sweep(
                    &ds,
                    &p,
                    &c.analysis.alphas,
                    c.analysis.sweep_tau,
                    c.grid.zdim[0],
                    &c.grid.seeds,
                )?;
                std::fs::copy(
                    experiment_root(&c).join("alpha_sweep.csv"),
                    report_dir.join("alpha_sweep.csv"),
                )?;
            }
            println!(
                "{}: {} files",
                report_dir.display(),
                written.len() + usize::from(c.analysis.sweep)
            );
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    run(Cli::parse())
}
