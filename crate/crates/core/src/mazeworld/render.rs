//! Per-column raycaster with textured walls and a cast floor.

use super::geometry::{walls, Pose, Wall};

const FOV: f64 = std::f64::consts::FRAC_PI_2;
const EYE_HEIGHT: f64 = 0.5;
const WALL_HEIGHT: f64 = 1.0;
const CHECK: f64 = 0.5;
const FOG: f64 = 0.12;
const CEILING: [f64; 3] = [0.16, 0.18, 0.24];

/// Renders a `size`×`size` RGB frame (row-major, 3 bytes per pixel).
pub fn render(pose: &Pose, size: usize) -> Vec<u8> {
    let walls = walls();
    let mut out = vec![0u8; size * size * 3];
    let half = size as f64 / 2.0;
    let focal = half / (FOV / 2.0).tan();
    let (px, py, th) = (pose.x as f64, pose.y as f64, pose.heading as f64);
    for col in 0..size {
        let off = ((half - col as f64 - 0.5) / focal).atan();
        let (dx, dy) = ((th + off).cos(), (th + off).sin());
        let cos_off = off.cos();
        let hit = cast(&walls, px, py, dx, dy);
        let (perp, hx, hy, along) = match hit {
            Some((t, hx, hy, along)) => (t * cos_off, hx, hy, along),
            None => (f64::INFINITY, 0.0, 0.0, 0.0),
        };
        let top = half - focal * (WALL_HEIGHT - EYE_HEIGHT) / perp;
        let bottom = half + focal * EYE_HEIGHT / perp;
        for row in 0..size {
            let yc = row as f64 + 0.5;
            let rgb = if yc >= top && yc < bottom {
                let v = EYE_HEIGHT + (half - yc) * perp / focal;
                wall_colour(hx, hy, along, v, perp)
            } else if yc >= bottom {
                let d = focal * EYE_HEIGHT / (yc - half);
                let t = d / cos_off;
                floor_colour(px + t * dx, py + t * dy, d)
            } else {
                let shade = 1.0 - 0.4 * (yc / half);
                [CEILING[0] * shade, CEILING[1] * shade, CEILING[2] * shade]
            };
            let idx = (row * size + col) * 3;
            for c in 0..3 {
                out[idx + c] = (rgb[c].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    out
}

/// Nearest intersection along the ray: distance, hit point and the
/// coordinate along the wall.
fn cast(walls: &[Wall], px: f64, py: f64, dx: f64, dy: f64) -> Option<(f64, f64, f64, f64)> {
    let mut best: Option<(f64, f64, f64, f64)> = None;
    for w in walls {
        let (ex, ey) = (w.b.0 - w.a.0, w.b.1 - w.a.1);
        let denom = dx * ey - dy * ex;
        if denom.abs() < 1e-12 {
            continue;
        }
        let (qx, qy) = (w.a.0 - px, w.a.1 - py);
        let t = (qx * ey - qy * ex) / denom;
        let u = (qx * dy - qy * dx) / denom;
        if t <= 1e-9 || !(0.0..=1.0).contains(&u) {
            continue;
        }
        if best.is_none_or(|b| t < b.0) {
            let (hx, hy) = (px + t * dx, py + t * dy);
            let along = if ex.abs() > ey.abs() { hx } else { hy };
            best = Some((t, hx, hy, along));
        }
    }
    best
}

fn wall_colour(hx: f64, hy: f64, along: f64, v: f64, dist: f64) -> [f64; 3] {
    let hue = (0.55 + 0.08 * hx + 0.05 * hy).rem_euclid(1.0);
    let dark = ((along / CHECK).floor() + (v / CHECK).floor()) as i64 & 1 == 1;
    let value = if dark { 0.45 } else { 0.92 };
    fogged(hsv(hue, 0.65, value), dist)
}

fn floor_colour(fx: f64, fy: f64, dist: f64) -> [f64; 3] {
    let hue = (0.1 + 0.04 * fx - 0.03 * fy).rem_euclid(1.0);
    let dark = ((fx / CHECK).floor() + (fy / CHECK).floor()) as i64 & 1 == 1;
    let value = if dark { 0.3 } else { 0.62 };
    fogged(hsv(hue, 0.35, value), dist)
}

fn fogged(rgb: [f64; 3], dist: f64) -> [f64; 3] {
    let k = 1.0 / (1.0 + FOG * dist);
    [rgb[0] * k, rgb[1] * k, rgb[2] * k]
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as i64 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}
