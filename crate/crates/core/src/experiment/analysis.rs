use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{window_bundles, ExperimentError, Schedule};
use crate::atlas::{
    bifurcation_dump, latent_metrics, pca_grid_dump, variability_probe, window_maxima, AtlasError,
    LatentMetrics, METRICS_HEADER,
};
use crate::dreamer::{
    aggregate, classify, closed_loop_batch, default_starts, rollout_dump, ClassifierConfig,
    DynamicsLabel, DynamicsReport,
};
use crate::mazeworld::{MazeDataset, MazeError};
use crate::nets::{frames_tensor, ModelBundle};

/// Latent-map metrics averaged over the checkpoints of one cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellMetrics {
    pub r_input: f64,
    pub r_target: f64,
    pub s_pca: f64,
    pub d_lr: f64,
}

impl CellMetrics {
    fn from(m: &LatentMetrics) -> Self {
        Self {
            r_input: m.r_input,
            r_target: m.r_target,
            s_pca: m.s_pca,
            d_lr: m.d_lr,
        }
    }
}

pub fn mean_metrics(items: &[CellMetrics]) -> CellMetrics {
    let n = items.len().max(1) as f64;
    let avg = |f: fn(&CellMetrics) -> f64| items.iter().map(f).sum::<f64>() / n;
    CellMetrics {
        r_input: avg(|m| m.r_input),
        r_target: avg(|m| m.r_target),
        s_pca: avg(|m| m.s_pca),
        d_lr: avg(|m| m.d_lr),
    }
}

/// Optional outputs of [`analyze_cell`].
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyzeOptions {
    /// Samples per frame for the variability probe; `None` skips it.
    pub probe: Option<usize>,
    pub probe_seed: u64,
    /// Junction window for the probe maxima and the bifurcation panels.
    pub junction_window: usize,
    pub bifurcation: bool,
    /// Side of the generated PCA lattice; `None` skips it.
    pub pca_grid: Option<usize>,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self {
            probe: None,
            probe_seed: 0,
            junction_window: 10,
            bifurcation: false,
            pca_grid: Some(10),
        }
    }
}

/// Reads `metrics.csv` back; the last row holds the average.
pub fn read_metrics(dir: &Path) -> Result<Vec<(String, CellMetrics)>, ExperimentError> {
    let path = dir.join("metrics.csv");
    let text = fs::read_to_string(&path)?;
    let bad = |reason: String| ExperimentError::Cell {
        path: path.clone(),
        reason,
    };
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(format!("expected 5 fields in {line:?}")));
        }
        let v: Result<Vec<f64>, _> = f[1..].iter().map(|s| s.parse::<f64>()).collect();
        let v = v.map_err(|e| bad(e.to_string()))?;
        out.push((
            f[0].to_string(),
            CellMetrics {
                r_input: v[0],
                r_target: v[1],
                s_pca: v[2],
                d_lr: v[3],
            },
        ));
    }
    Ok(out)
}

fn fmt_row(label: &str, m: &CellMetrics) -> String {
    format!(
        "{label},{},{},{},{}\n",
        m.r_input, m.r_target, m.s_pca, m.d_lr
    )
}

/// Computes latent-map metrics for every checkpoint of the averaging
/// window and writes the tables and images of the final one.
pub fn analyze_cell(
    ds: &MazeDataset,
    dir: &Path,
    schedule: &Schedule,
    options: &AnalyzeOptions,
) -> Result<CellMetrics, ExperimentError> {
    let bundles = window_bundles(dir, schedule)?;
    analyze_bundles(ds, dir, &bundles, options)
}

pub(crate) fn analyze_bundles(
    ds: &MazeDataset,
    dir: &Path,
    bundles: &[ModelBundle],
    options: &AnalyzeOptions,
) -> Result<CellMetrics, ExperimentError> {
    fs::create_dir_all(dir)?;
    let mut table = format!("iteration,{METRICS_HEADER}\n");
    let mut per = Vec::new();
    let mut last = None;
    for b in bundles {
        let m = latent_metrics(b, ds)?;
        let c = CellMetrics::from(&m);
        table.push_str(&fmt_row(&b.iteration.to_string(), &c));
        per.push(c);
        last = Some(m);
    }
    let mean = mean_metrics(&per);
    table.push_str(&fmt_row("mean", &mean));
    fs::write(dir.join("metrics.csv"), table)?;

    let (Some(m), Some(bundle)) = (last, bundles.last()) else {
        return Ok(mean);
    };
    let mut cum = String::from("component,cumulative\n");
    for (k, c) in m.cumulative.iter().enumerate() {
        let _ = writeln!(cum, "{},{c}", k + 1);
    }
    fs::write(dir.join("pca_cumulative.csv"), cum)?;

    let mut proj = String::from("frame,pc1,pc2,x,y,heading,path\n");
    for (t, p) in m.projection.iter().enumerate() {
        let pose = ds.poses[t];
        let _ = writeln!(
            proj,
            "{t},{},{},{},{},{},{}",
            p[0],
            p[1],
            pose.x,
            pose.y,
            pose.heading,
            ds.labels[t].name()
        );
    }
    fs::write(dir.join("projection.csv"), proj)?;

    if let Some(n) = options.pca_grid {
        pca_grid_dump(bundle, &m.pca, &m.projection, n, &dir.join("pca_grid.png"))?;
    }
    if let Some(k) = options.probe {
        let values = variability_probe(bundle, &frames_tensor(ds), k, options.probe_seed)?;
        let mut csv = String::from("frame,variability\n");
        for (t, v) in values.iter().enumerate() {
            let _ = writeln!(csv, "{t},{v}");
        }
        fs::write(dir.join("variability.csv"), csv)?;
        let mut peaks = String::from("junction,frame,value,ratio_to_median\n");
        for w in window_maxima(&values, &ds.junction_indices(), options.junction_window) {
            let _ = writeln!(
                peaks,
                "{},{},{},{}",
                w.junction, w.frame, w.value, w.ratio_to_median
            );
        }
        fs::write(dir.join("variability_peaks.csv"), peaks)?;
    }
    if options.bifurcation {
        match bifurcation_dump(
            bundle,
            ds,
            options.junction_window,
            &dir.join("bifurcation"),
        ) {
            Err(AtlasError::Maze(MazeError::MissingTraversal(side))) => {
                log::warn!(
                    "{}: no {} traversal, bifurcation panels skipped",
                    dir.display(),
                    side.name()
                );
            }
            r => {
                r?;
            }
        }
    }
    Ok(mean)
}

pub const DREAM_HEADER: &str = "variant,tau,d_z,seed,start_index,label,lyapunov";

/// Closed loops from every `step`-th frame of the final checkpoint, with
/// per-run labels in `dynamics.csv`, label fractions in
/// `dynamics_fractions.csv` and image rollouts for `rollout_starts`.
pub fn dream_cell(
    ds: &MazeDataset,
    dir: &Path,
    bundle: &ModelBundle,
    classifier: &ClassifierConfig,
    step: usize,
    iterations: usize,
    rollout_starts: &[usize],
) -> Result<DynamicsReport, ExperimentError> {
    if iterations < classifier.min_iterations() {
        return Err(ExperimentError::Config(format!(
            "closed loops need at least {} iterations, got {iterations}",
            classifier.min_iterations()
        )));
    }
    let starts = default_starts(ds.len(), step);
    let keep_from = iterations.saturating_sub(20);
    let runs = closed_loop_batch(
        bundle,
        &frames_tensor(ds),
        &starts,
        iterations,
        keep_from..=iterations,
    )?;
    fs::create_dir_all(dir)?;
    let mut csv = format!("{DREAM_HEADER}\n");
    let mut labels = Vec::with_capacity(runs.len());
    for run in &runs {
        let c = classify(&run.z, classifier)?;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            bundle.variant.name(),
            bundle.tau,
            bundle.arch.d_z,
            bundle.seed,
            run.start,
            c.label.name(),
            c.lyapunov.map_or(String::new(), |l| l.to_string())
        );
        labels.push(c.label);
        if rollout_starts.contains(&run.start) {
            rollout_dump(run, keep_from..=iterations, &dir.join("rollouts"))?;
        }
    }
    fs::write(dir.join("dynamics.csv"), csv)?;
    let report = aggregate(&labels);
    let mut frac = String::from("label,count,fraction\n");
    for l in DynamicsLabel::ALL {
        let _ = writeln!(
            frac,
            "{},{},{}",
            l.name(),
            report.counts[l as usize],
            report.fraction(l)
        );
    }
    fs::write(dir.join("dynamics_fractions.csv"), frac)?;
    Ok(report)
}
