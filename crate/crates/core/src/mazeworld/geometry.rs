//! Maze layout and the centreline the camera follows.
//!
//! The maze is an outer rectangle holding two rectangular pillars, one on
//! each side of a central stem at `x = 0`. Every lap starts at the bottom of
//! the stem heading north, walks the stem, chooses a side at the top and
//! returns to the stem bottom around that side's pillar.

use std::f64::consts::{FRAC_PI_2, PI};

/// Distance travelled per frame.
pub const SPEED: f64 = 0.1;
/// Radius of the rounded corners on the centreline.
pub const CORNER_RADIUS: f64 = 0.5;
/// Half-width of every corridor.
pub const HALF_WIDTH: f64 = 0.5;
/// Centreline length of the stem's straight part.
pub const STEM_LENGTH: f64 = 8.0;
/// Centreline length of one side loop, from the junction back to the stem.
pub const ARM_LENGTH: f64 = 16.0;

/// Height of the centreline rectangle (stem straight plus two corner radii).
pub fn loop_height() -> f64 {
    STEM_LENGTH + 2.0 * CORNER_RADIUS
}

/// Width of each centreline loop, solved from the arm length: four quarter
/// arcs, two horizontal straights and one vertical straight.
pub fn loop_width() -> f64 {
    let r = CORNER_RADIUS;
    (ARM_LENGTH - 2.0 * PI * r - (loop_height() - 2.0 * r)) / 2.0 + 2.0 * r
}

pub fn stem_frames() -> usize {
    (STEM_LENGTH / SPEED).round() as usize
}

pub fn arm_frames() -> usize {
    (ARM_LENGTH / SPEED).round() as usize
}

pub fn lap_frames() -> usize {
    stem_frames() + arm_frames()
}

/// Which part of the route a frame belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PathLabel {
    Stem = 0,
    Left = 1,
    Right = 2,
}

impl PathLabel {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::Stem),
            1 => Some(Self::Left),
            2 => Some(Self::Right),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Stem => "stem",
            Self::Left => "left",
            Self::Right => "right",
        }
    }
}

/// Camera position and heading (radians, counter-clockwise from +x).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub x: f32,
    pub y: f32,
    pub heading: f32,
}

/// An axis-aligned wall segment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wall {
    pub a: (f64, f64),
    pub b: (f64, f64),
}

/// The twelve walls: outer boundary and both pillars.
pub fn walls() -> Vec<Wall> {
    let h = HALF_WIDTH;
    let w = loop_width();
    let s = loop_height();
    let mut out = rectangle(-w - h, -h, w + h, s + h);
    out.extend(rectangle(-w + h, h, -h, s - h));
    out.extend(rectangle(h, h, w - h, s - h));
    out
}

fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Wall> {
    vec![
        Wall {
            a: (x0, y0),
            b: (x1, y0),
        },
        Wall {
            a: (x1, y0),
            b: (x1, y1),
        },
        Wall {
            a: (x1, y1),
            b: (x0, y1),
        },
        Wall {
            a: (x0, y1),
            b: (x0, y0),
        },
    ]
}

#[derive(Clone, Copy, Debug)]
enum Piece {
    Line(f64),
    /// Quarter turn; +1 turns left, -1 turns right.
    Turn(f64),
}

impl Piece {
    fn length(self) -> f64 {
        match self {
            Piece::Line(l) => l,
            Piece::Turn(_) => FRAC_PI_2 * CORNER_RADIUS,
        }
    }
}

fn lap_pieces(side: PathLabel) -> Vec<Piece> {
    let turn = if side == PathLabel::Right { -1.0 } else { 1.0 };
    let r = CORNER_RADIUS;
    let across = loop_width() - 2.0 * r;
    vec![
        Piece::Line(STEM_LENGTH),
        Piece::Turn(turn),
        Piece::Line(across),
        Piece::Turn(turn),
        Piece::Line(loop_height() - 2.0 * r),
        Piece::Turn(turn),
        Piece::Line(across),
        Piece::Turn(turn),
    ]
}

/// Pose at arc length `s` into a lap that turns towards `side`.
pub fn lap_pose(side: PathLabel, s: f64) -> Pose {
    let (mut x, mut y, mut th) = (0.0_f64, CORNER_RADIUS, FRAC_PI_2);
    let mut left = s;
    for piece in lap_pieces(side) {
        let len = piece.length();
        let u = left.min(len);
        match piece {
            Piece::Line(_) => {
                x += u * th.cos();
                y += u * th.sin();
            }
            Piece::Turn(dir) => {
                let r = CORNER_RADIUS;
                let (cx, cy) = (x - dir * r * th.sin(), y + dir * r * th.cos());
                let phi = dir * u / r;
                let (dx, dy) = (x - cx, y - cy);
                x = cx + dx * phi.cos() - dy * phi.sin();
                y = cy + dx * phi.sin() + dy * phi.cos();
                th += phi;
            }
        }
        left -= u;
        if left <= 0.0 {
            break;
        }
    }
    Pose {
        x: x as f32,
        y: y as f32,
        heading: th.rem_euclid(2.0 * PI) as f32,
    }
}

/// Poses and labels for `frames` frames given the side chosen on each lap.
pub fn route(frames: usize, sides: &[PathLabel]) -> (Vec<Pose>, Vec<PathLabel>) {
    let lap = lap_frames();
    let stem = stem_frames();
    (0..frames)
        .map(|i| {
            let side = sides[i / lap];
            let j = i % lap;
            let label = if j < stem { PathLabel::Stem } else { side };
            (lap_pose(side, j as f64 * SPEED), label)
        })
        .unzip()
}
