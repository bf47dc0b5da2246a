use super::{ClassifierConfig, DreamError};

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean log separation of nearest-neighbour pairs after `i` steps, for
/// `i` in `0..=config.curve_len`. Only pairs that stay inside the sequence
/// for the whole curve take part, so every entry averages the same pairs.
/// Entries with no usable pair are NaN.
pub fn divergence_curve(z: &[Vec<f64>], config: &ClassifierConfig) -> Result<Vec<f64>, DreamError> {
    let m = z.len();
    if m < 50 {
        return Err(DreamError::TooShort { needed: 50, got: m });
    }
    // Nearest distinct state outside the temporal exclusion window.
    let neighbours: Vec<Option<usize>> = (0..m)
        .map(|j| {
            let mut best: Option<(usize, f64)> = None;
            for k in 0..m {
                if j.abs_diff(k) <= config.exclusion {
                    continue;
                }
                let d = dist(&z[j], &z[k]);
                if d > 0.0 && best.is_none_or(|(_, b)| d < b) {
                    best = Some((k, d));
                }
            }
            best.map(|(k, _)| k)
        })
        .collect();
    let mut curve = Vec::with_capacity(config.curve_len + 1);
    for i in 0..=config.curve_len {
        let (mut sum, mut count) = (0.0, 0usize);
        for (j, k) in neighbours.iter().enumerate() {
            let Some(k) = *k else { continue };
            if j.max(k) + config.curve_len >= m {
                continue;
            }
            let d = dist(&z[j + i], &z[k + i]);
            if d > 0.0 {
                sum += d.ln();
                count += 1;
            }
        }
        curve.push(if count > 0 {
            sum / count as f64
        } else {
            f64::NAN
        });
    }
    Ok(curve)
}

/// Largest Lyapunov exponent per step: least-squares slope of the
/// divergence curve over the configured fit range.
pub fn lyapunov_rosenstein(z: &[Vec<f64>], config: &ClassifierConfig) -> Result<f64, DreamError> {
    let curve = divergence_curve(z, config)?;
    let (lo, hi) = config.fit;
    let pts: Vec<(f64, f64)> = (lo..=hi.min(config.curve_len))
        .filter(|&i| curve[i].is_finite())
        .map(|i| (i as f64, curve[i]))
        .collect();
    if pts.len() < 2 {
        return Err(DreamError::NoNeighbours);
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}
