use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::analysis::{analyze_bundles, read_metrics};
use super::{
    cell_dir, train_cell, window_bundles, AnalyzeOptions, CellMetrics, CellSpec, ExperimentError,
    Schedule,
};
use crate::atlas::{tukey_hsd, TUKEY_DRAWS};
use crate::dreamer::{fraction_summary, ClassifierConfig, DynamicsLabel, DynamicsReport};
use crate::imageio::{grid, RgbImage};
use crate::mazeworld::MazeDataset;
use crate::nets::Variant;

/// Closed-loop settings for [`run_cells`].
#[derive(Clone, Debug, PartialEq)]
pub struct DreamOptions {
    pub step: usize,
    pub iterations: usize,
    pub classifier: ClassifierConfig,
    pub rollout_starts: Vec<usize>,
}

impl Default for DreamOptions {
    fn default() -> Self {
        Self {
            step: 5,
            iterations: 200,
            classifier: ClassifierConfig::default(),
            rollout_starts: vec![0],
        }
    }
}

/// Everything a grid run needs besides the cells themselves.
#[derive(Clone, Debug)]
pub struct GridPlan {
    pub root: PathBuf,
    pub experiment: String,
    pub schedule: Schedule,
    pub analysis: Option<AnalyzeOptions>,
    pub dream: Option<DreamOptions>,
    /// Cells trained at once; each cell stays single-threaded.
    pub jobs: usize,
}

/// Outcome of one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub spec: CellSpec,
    pub dir: PathBuf,
    pub metrics: Option<CellMetrics>,
    pub dynamics: Option<DynamicsReport>,
}

/// Cartesian product of the grid axes in a fixed order.
pub fn grid_cells(
    variants: &[Variant],
    taus: &[usize],
    zdims: &[usize],
    seeds: &[u64],
    alpha: f32,
) -> Vec<CellSpec> {
    let mut out = Vec::new();
    for &variant in variants {
        for &tau in taus {
            for &d_z in zdims {
                for &seed in seeds {
                    let alpha = if variant == Variant::Vae { 0.0 } else { alpha };
                    out.push(CellSpec {
                        variant,
                        tau,
                        d_z,
                        alpha,
                        seed,
                    });
                }
            }
        }
    }
    out
}

fn run_one(
    ds: &MazeDataset,
    plan: &GridPlan,
    spec: &CellSpec,
) -> Result<CellResult, ExperimentError> {
    let dir = cell_dir(&plan.root, &plan.experiment, spec);
    let (trainer, outcome) = train_cell(ds, spec, &plan.schedule, &dir)?;
    log::info!("{}: training {:?}", spec.tag(), outcome);
    let metrics = match &plan.analysis {
        Some(opts) => {
            let bundles = window_bundles(&dir, &plan.schedule)?;
            Some(analyze_bundles(ds, &dir, &bundles, opts)?)
        }
        None => None,
    };
    let dynamics = match &plan.dream {
        Some(d) => Some(super::dream_cell(
            ds,
            &dir,
            &trainer.bundle,
            &d.classifier,
            d.step,
            d.iterations,
            &d.rollout_starts,
        )?),
        None => None,
    };
    Ok(CellResult {
        spec: *spec,
        dir,
        metrics,
        dynamics,
    })
}

/// Trains, analyses and dreams every cell. Results come back in the order
/// of `cells` whatever the number of jobs.
pub fn run_cells(
    ds: &MazeDataset,
    plan: &GridPlan,
    cells: &[CellSpec],
) -> Result<Vec<CellResult>, ExperimentError> {
    let jobs = plan.jobs.clamp(1, cells.len().max(1));
    if jobs == 1 {
        return cells.iter().map(|c| run_one(ds, plan, c)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<CellResult, ExperimentError>>>> =
        Mutex::new((0..cells.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= cells.len() {
                    break;
                }
                let r = run_one(ds, plan, &cells[i]);
                slots.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect()
}

/// Rows of the α-sweep table, one per (α, seed).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub alpha: f32,
    pub seed: u64,
    pub metrics: CellMetrics,
}

pub const SWEEP_HEADER: &str = "alpha,seed,r_input,r_target,s_pca,d_lr";

/// Trains and analyses one pixel-loss VAE/GAN per (α, seed) under
/// `<experiment>/alpha<α>/` and writes `<experiment>/alpha_sweep.csv`.
pub fn alpha_sweep(
    ds: &MazeDataset,
    plan: &GridPlan,
    alphas: &[f32],
    tau: usize,
    d_z: usize,
    seeds: &[u64],
) -> Result<Vec<SweepRow>, ExperimentError> {
    let analysis = plan.analysis.clone().unwrap_or_default();
    let mut rows = Vec::new();
    for &alpha in alphas {
        let sub = GridPlan {
            experiment: format!("{}/alpha{alpha}", plan.experiment),
            analysis: Some(analysis.clone()),
            dream: None,
            ..plan.clone()
        };
        let cells: Vec<CellSpec> = seeds
            .iter()
            .map(|&seed| CellSpec {
                variant: Variant::VaeGanPixel,
                tau,
                d_z,
                alpha,
                seed,
            })
            .collect();
        for r in run_cells(ds, &sub, &cells)? {
            rows.push(SweepRow {
                alpha,
                seed: r.spec.seed,
                metrics: r.metrics.expect("analysis requested"),
            });
        }
    }
    let dir = plan.root.join(&plan.experiment);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("alpha_sweep.csv"), sweep_csv(&rows))?;
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.alpha, r.seed, m.r_input, m.r_target, m.s_pca, m.d_lr
        );
    }
    s
}

fn cell_prefix(spec: &CellSpec) -> String {
    format!(
        "{},{},{},{},{}",
        spec.variant.name(),
        spec.tau,
        spec.d_z,
        spec.alpha,
        spec.seed
    )
}

const CELL_HEADER: &str = "variant,tau,d_z,alpha,seed";

/// Copies rows of a per-cell CSV into a combined table, prefixing the cell
/// identity.
fn gather_csv(results: &[CellResult], file: &str) -> Result<Option<String>, ExperimentError> {
    let mut out: Option<String> = None;
    for r in results {
        let path = r.dir.join(file);
        if !path.exists() {
            continue;
        }
        let text = fs::read_to_string(&path)?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("");
        let s = out.get_or_insert_with(|| format!("{CELL_HEADER},{header}\n"));
        for line in lines {
            let _ = writeln!(s, "{},{line}", cell_prefix(&r.spec));
        }
    }
    Ok(out)
}

/// Tukey HSD across variants (seeds as replicates) for each (τ, d_z).
fn tukey_table(results: &[CellResult]) -> Result<String, ExperimentError> {
    let mut groups: BTreeMap<(usize, usize), BTreeMap<(Variant, u32), Vec<CellMetrics>>> =
        BTreeMap::new();
    for r in results {
        if let Some(m) = r.metrics {
            groups
                .entry((r.spec.tau, r.spec.d_z))
                .or_default()
                .entry((r.spec.variant, r.spec.alpha.to_bits()))
                .or_default()
                .push(m);
        }
    }
    let mut s = String::from("metric,tau,d_z,group_a,group_b,diff,q,p\n");
    let metrics: [(&str, fn(&CellMetrics) -> f64); 4] = [
        ("r_input", |m| m.r_input),
        ("r_target", |m| m.r_target),
        ("s_pca", |m| m.s_pca),
        ("d_lr", |m| m.d_lr),
    ];
    for ((tau, d_z), by_variant) in &groups {
        let names: Vec<String> = by_variant
            .keys()
            .map(|(v, a)| format!("{}(alpha={})", v.name(), f32::from_bits(*a)))
            .collect();
        for (mi, (metric, get)) in metrics.iter().enumerate() {
            let samples: Vec<Vec<f64>> = by_variant
                .values()
                .map(|ms| ms.iter().map(get).collect())
                .collect();
            // Groups too small or identical yield no test; skip them.
            let Ok(tests) = tukey_hsd(&samples, TUKEY_DRAWS, 0x7c4e + mi as u64) else {
                continue;
            };
            for t in tests {
                let _ = writeln!(
                    s,
                    "{metric},{tau},{d_z},{},{},{},{},{}",
                    names[t.i], names[t.j], t.diff, t.q, t.p
                );
            }
        }
    }
    Ok(s)
}

fn fractions_table(results: &[CellResult]) -> String {
    let mut by: BTreeMap<(Variant, usize, usize, u32), Vec<DynamicsReport>> = BTreeMap::new();
    for r in results {
        if let Some(d) = &r.dynamics {
            by.entry((
                r.spec.variant,
                r.spec.tau,
                r.spec.d_z,
                r.spec.alpha.to_bits(),
            ))
            .or_default()
            .push(d.clone());
        }
    }
    let mut s = String::from("variant,tau,d_z,alpha,label,mean,std,seeds\n");
    for ((v, tau, d_z, a), reps) in &by {
        let summary = fraction_summary(reps);
        for l in DynamicsLabel::ALL {
            let (mean, std) = summary[l as usize];
            let _ = writeln!(
                s,
                "{},{tau},{d_z},{},{},{mean},{std},{}",
                v.name(),
                f32::from_bits(*a),
                l.name(),
                reps.len()
            );
        }
    }
    s
}

/// Assembles `<dir>` from finished cells: one CSV per metric and one PNG
/// grid per image figure.
pub fn write_report(results: &[CellResult], dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<(), ExperimentError> {
        let p = dir.join(name);
        fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };

    let mut metrics = BTreeMap::<&str, String>::new();
    for (name, header) in [
        ("distance_correlation.csv", "r_input,r_target"),
        ("smoothness.csv", "s_pca"),
        ("lr_dissimilarity.csv", "d_lr"),
    ] {
        metrics.insert(name, format!("{CELL_HEADER},{header}\n"));
    }
    for r in results {
        if r.metrics.is_none() {
            continue;
        }
        let Some((_, m)) = read_metrics(&r.dir)?.into_iter().find(|(k, _)| k == "mean") else {
            continue;
        };
        let p = cell_prefix(&r.spec);
        let _ = writeln!(
            metrics.get_mut("distance_correlation.csv").unwrap(),
            "{p},{},{}",
            m.r_input,
            m.r_target
        );
        let _ = writeln!(
            metrics.get_mut("smoothness.csv").unwrap(),
            "{p},{}",
            m.s_pca
        );
        let _ = writeln!(
            metrics.get_mut("lr_dissimilarity.csv").unwrap(),
            "{p},{}",
            m.d_lr
        );
    }
    if results.iter().any(|r| r.metrics.is_some()) {
        for (name, body) in metrics {
            put(name, body)?;
        }
        put("tukey_hsd.csv", tukey_table(results)?)?;
    }
    for (src, dst) in [
        ("metrics.csv", "metrics_by_checkpoint.csv"),
        ("pca_cumulative.csv", "pca_cumulative.csv"),
        ("projection.csv", "projection.csv"),
        ("variability.csv", "variability.csv"),
        ("variability_peaks.csv", "variability_peaks.csv"),
        ("dynamics.csv", "dynamics.csv"),
    ] {
        if let Some(body) = gather_csv(results, src)? {
            put(dst, body)?;
        }
    }
    if results.iter().any(|r| r.dynamics.is_some()) {
        put("dynamics_fractions.csv", fractions_table(results))?;
    }

    for r in results {
        let tag = r.spec.tag();
        let alpha_tag = if r.spec.variant == Variant::Vae {
            String::new()
        } else {
            format!("_alpha{}", r.spec.alpha)
        };
        let pca = r.dir.join("pca_grid.png");
        if pca.exists() {
            let p = dir.join(format!("pca_grid_{tag}{alpha_tag}.png"));
            fs::copy(&pca, &p)?;
            written.push(p);
        }
        let bif = r.dir.join("bifurcation");
        if bif.exists() {
            let mut panels: Vec<PathBuf> = fs::read_dir(&bif)?
                .map(|e| e.map(|e| e.path()))
                .collect::<Result<_, _>>()?;
            panels.sort();
            if let Some(first) = panels.first() {
                let p = dir.join(format!("bifurcation_{tag}{alpha_tag}.png"));
                fs::copy(first, &p)?;
                written.push(p);
            }
        }
        let roll = r.dir.join("rollouts");
        if roll.exists() {
            let mut frames: Vec<PathBuf> = fs::read_dir(&roll)?
                .map(|e| e.map(|e| e.path()))
                .collect::<Result<_, _>>()?;
            frames.sort();
            let images: Vec<RgbImage> = frames
                .iter()
                .map(RgbImage::load)
                .collect::<Result<_, _>>()?;
            if !images.is_empty() {
                let starts: std::collections::BTreeSet<String> = frames
                    .iter()
                    .filter_map(|f| {
                        f.file_name()?
                            .to_str()?
                            .split('_')
                            .next()
                            .map(str::to_string)
                    })
                    .collect();
                let rows = starts.len().max(1);
                let p = dir.join(format!("rollout_{tag}{alpha_tag}.png"));
                grid(&images, rows, images.len().div_ceil(rows))?.save(&p)?;
                written.push(p);
            }
        }
    }
    Ok(written)
}
