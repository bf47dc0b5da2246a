//! Training cells on disk: one directory per (variant, tau, d_z, seed) with
//! checkpoints, a loss log and analysis tables.

mod analysis;
mod pipeline;

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::atlas::AtlasError;
use crate::dreamer::DreamError;
use crate::imageio::ImageError;
use crate::mazeworld::{MazeDataset, MazeError};
use crate::nets::{
    frames_tensor, load_checkpoint, save_checkpoint, Arch, LossRecord, ModelBundle, NetError,
    TrainConfig, Trainer, Variant,
};

pub use analysis::{
    analyze_cell, dream_cell, mean_metrics, read_metrics, AnalyzeOptions, CellMetrics, DREAM_HEADER,
};
pub use pipeline::{
    alpha_sweep, grid_cells, run_cells, sweep_csv, write_report, CellResult, DreamOptions,
    GridPlan, SweepRow, SWEEP_HEADER,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Maze(#[from] MazeError),
    #[error(transparent)]
    Atlas(#[from] AtlasError),
    #[error(transparent)]
    Dream(#[from] DreamError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}: {reason}")]
    Cell { path: PathBuf, reason: String },
    #[error("invalid setting: {0}")]
    Config(String),
}

/// One trained network configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellSpec {
    pub variant: Variant,
    pub tau: usize,
    pub d_z: usize,
    pub alpha: f32,
    pub seed: u64,
}

impl CellSpec {
    pub fn tag(&self) -> String {
        format!(
            "{}_tau{}_z{}_seed{}",
            self.variant.name(),
            self.tau,
            self.d_z,
            self.seed
        )
    }
}

/// Network width and optimisation schedule shared by every cell of a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub width: usize,
    pub train: TrainConfig,
}

impl Schedule {
    /// First iteration whose checkpoint enters the analysis average: the
    /// final fifth of training.
    pub fn window_start(&self) -> u64 {
        self.train.iterations - self.train.iterations / 5
    }
}

pub fn cell_dir(root: &Path, experiment: &str, spec: &CellSpec) -> PathBuf {
    root.join(experiment).join(spec.tag())
}

pub fn checkpoint_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join(format!("ckpt_{iteration:06}.bin"))
}

const MANIFEST: &str = "cell.txt";
const LOSS_FILE: &str = "loss.csv";

/// FNV-1a over the dataset contents.
pub fn dataset_fingerprint(ds: &MazeDataset) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |b: u8| {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    };
    for &l in &ds.labels {
        eat(l as u8);
    }
    for &p in &ds.pixels {
        eat(p);
    }
    h
}

fn manifest(ds: &MazeDataset, spec: &CellSpec, schedule: &Schedule) -> String {
    let t = &schedule.train;
    let mut s = String::new();
    let _ = writeln!(s, "variant = {}", spec.variant.name());
    let _ = writeln!(s, "tau = {}", spec.tau);
    let _ = writeln!(s, "d_z = {}", spec.d_z);
    let _ = writeln!(s, "alpha = {}", spec.alpha);
    let _ = writeln!(s, "seed = {}", spec.seed);
    let _ = writeln!(s, "width = {}", schedule.width);
    let _ = writeln!(s, "batch_size = {}", t.batch_size);
    let _ = writeln!(s, "critic_steps = {}", t.critic_steps);
    let _ = writeln!(s, "checkpoint_interval = {}", t.checkpoint_interval);
    let _ = writeln!(
        s,
        "adam = {} {} {} {}",
        t.adam.lr, t.adam.beta1, t.adam.beta2, t.adam.eps
    );
    let _ = writeln!(s, "penalty_point = {:?}", t.penalty_point);
    let _ = writeln!(
        s,
        "dataset = {}x{} {} frames {:016x}",
        ds.width,
        ds.height,
        ds.len(),
        dataset_fingerprint(ds)
    );
    s
}

/// Checkpoints present in `dir`, sorted by iteration.
pub fn list_checkpoints(dir: &Path) -> Result<Vec<(u64, PathBuf)>, ExperimentError> {
    let mut out = Vec::new();
    if !dir.exists() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(it) = name
            .strip_prefix("ckpt_")
            .and_then(|r| r.strip_suffix(".bin"))
            .and_then(|r| r.parse::<u64>().ok())
        {
            out.push((it, path));
        }
    }
    out.sort();
    Ok(out)
}

/// Keeps the first `rows` data rows of the loss log.
fn truncate_loss(path: &Path, rows: u64) -> Result<(), ExperimentError> {
    let mut kept = String::new();
    if path.exists() {
        let reader = BufReader::new(fs::File::open(path)?);
        for (i, line) in reader.lines().enumerate() {
            if i as u64 > rows {
                break;
            }
            kept.push_str(&line?);
            kept.push('\n');
        }
    }
    if kept.is_empty() {
        kept = format!("{}\n", LossRecord::CSV_HEADER);
    }
    fs::write(path, kept)?;
    Ok(())
}

/// How a call to [`train_cell`] obtained its result.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainOutcome {
    Cached,
    Resumed(u64),
    Fresh,
}

/// Trains one cell into `dir`, reusing finished work. A directory whose
/// manifest differs from the requested settings is an error rather than
/// being silently overwritten. Zero iterations store the initial weights.
pub fn train_cell(
    ds: &MazeDataset,
    spec: &CellSpec,
    schedule: &Schedule,
    dir: &Path,
) -> Result<(Trainer, TrainOutcome), ExperimentError> {
    let t = &schedule.train;
    if t.iterations > 0 {
        t.validate()?;
    }
    let wanted = manifest(ds, spec, schedule);
    let manifest_path = dir.join(MANIFEST);
    if manifest_path.exists() {
        let found = fs::read_to_string(&manifest_path)?;
        if found != wanted {
            return Err(ExperimentError::Cell {
                path: dir.to_path_buf(),
                reason: "existing cell was trained with different settings".into(),
            });
        }
    } else {
        fs::create_dir_all(dir)?;
        fs::write(&manifest_path, &wanted)?;
    }

    let existing = list_checkpoints(dir)?;
    let (mut trainer, outcome) = match existing.last() {
        Some((it, path)) => {
            let mut trainer = load_checkpoint(path)?;
            for opt in [
                &mut trainer.opt_enc,
                &mut trainer.opt_gen,
                &mut trainer.opt_dis,
            ] {
                opt.config = t.adam;
            }
            if *it >= t.iterations {
                return Ok((trainer, TrainOutcome::Cached));
            }
            (trainer, TrainOutcome::Resumed(*it))
        }
        None => {
            let arch = Arch::new(ds.width, schedule.width, spec.d_z)?;
            let bundle = ModelBundle::new(arch, spec.variant, spec.tau, spec.alpha, spec.seed);
            (Trainer::new(bundle, t.adam), TrainOutcome::Fresh)
        }
    };
    let loss_path = dir.join(LOSS_FILE);
    truncate_loss(&loss_path, trainer.bundle.iteration)?;
    if t.iterations == 0 {
        // An untrained snapshot, so analyses can run on initial weights.
        save_checkpoint(&trainer, checkpoint_path(dir, 0))?;
        return Ok((trainer, outcome));
    }
    let mut log = BufWriter::new(fs::OpenOptions::new().append(true).open(&loss_path)?);
    let frames = frames_tensor(ds);
    let window = schedule.window_start();
    let mut previous = existing.last().map(|(it, _)| *it);
    let mut io_error = None;
    trainer.run(
        &frames,
        t,
        |rec| {
            if io_error.is_none() {
                if let Err(e) = writeln!(log, "{}", rec.csv_row()) {
                    io_error = Some(e);
                }
            }
        },
        |tr| {
            let it = tr.bundle.iteration;
            save_checkpoint(tr, checkpoint_path(dir, it))?;
            if let Some(p) = previous.filter(|&p| p < window && p != it) {
                fs::remove_file(checkpoint_path(dir, p))?;
            }
            previous = Some(it);
            log::info!("{}: iteration {it}", spec.tag());
            Ok(())
        },
    )?;
    if let Some(e) = io_error {
        return Err(e.into());
    }
    log.flush()?;
    Ok((trainer, outcome))
}

/// Loss rows recorded in a cell directory.
pub fn loss_rows(dir: &Path) -> Result<usize, ExperimentError> {
    let text = fs::read_to_string(dir.join(LOSS_FILE))?;
    Ok(text.lines().count().saturating_sub(1))
}

/// Checkpoints from the averaging window, loaded.
pub fn window_bundles(
    dir: &Path,
    schedule: &Schedule,
) -> Result<Vec<ModelBundle>, ExperimentError> {
    let start = schedule.window_start();
    let mut out = Vec::new();
    for (it, path) in list_checkpoints(dir)? {
        if it >= start && it <= schedule.train.iterations {
            out.push(load_checkpoint(path)?.bundle);
        }
    }
    if out.is_empty() {
        return Err(ExperimentError::Cell {
            path: dir.to_path_buf(),
            reason: format!("no checkpoint at or after iteration {start}"),
        });
    }
    Ok(out)
}
