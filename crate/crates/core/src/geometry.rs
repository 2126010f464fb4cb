//! Representative segment, random sequential adsorption of cavities, and the
//! distances/angles between cavities and the y-periodic mirrors of the
//! segment.
//!
//! Coordinates: the segment spans `x in [0, T]` and `y in (-H/2, H/2]`, with
//! the origin at the middle of the left boundary. Copy `q` of the segment is
//! shifted by `q * H` along `y`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::error::GeometryError;
use crate::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

/// The `H x T` rectangle holding `N` cavities of radius `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    /// `T`, extent along the propagation direction (m).
    pub length: f64,
    /// `H`, extent along y and the mirror period (m).
    pub height: f64,
    /// `a` (m).
    pub radius: f64,
    /// `N`.
    pub count: usize,
}

impl Default for SegmentSpec {
    fn default() -> Self {
        SegmentSpec {
            length: 0.04,
            height: 0.02,
            radius: 0.0006,
            count: 50,
        }
    }
}

impl SegmentSpec {
    pub fn validate(&self) -> Result<(), GeometryError> {
        for (name, v) in [
            ("length", self.length),
            ("height", self.height),
            ("radius", self.radius),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(GeometryError::InvalidSegment(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        let area = self.count as f64 * PI * self.radius * self.radius;
        if area >= self.height * self.length {
            return Err(GeometryError::InvalidSegment(format!(
                "{} cavities of radius {} cannot fit in a {} x {} segment",
                self.count, self.radius, self.height, self.length
            )));
        }
        Ok(())
    }

    /// Area fraction `N pi a^2 / (H T)`.
    pub fn porosity(&self) -> f64 {
        self.count as f64 * PI * self.radius * self.radius / (self.height * self.length)
    }
}

/// Knobs for [`rsa_place`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RsaOptions {
    /// Extra clearance between disk surfaces (m). Zero allows tangency.
    pub gap: f64,
    /// Minimum distance of a center from `x = 0` and `x = T`. `None` means
    /// the cavity radius, i.e. disks stay inside the x-range.
    pub margin: Option<f64>,
    /// Consecutive rejected draws tolerated for a single cavity.
    pub max_attempts: usize,
}

impl Default for RsaOptions {
    fn default() -> Self {
        RsaOptions {
            gap: 0.0,
            margin: None,
            max_attempts: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CavityLayout {
    pub spec: SegmentSpec,
    pub centers: Vec<Point>,
    pub seed: u64,
}

/// Signed y-offset reduced to the nearest periodic image, in `[-H/2, H/2]`.
#[inline]
pub fn wrap_periodic(dy: f64, period: f64) -> f64 {
    dy - period * (dy / period).round()
}

/// Derive the seed of layout `index` from a master seed (SplitMix64 finalizer
/// applied to `master + (index + 1) * golden_gamma`). Independent of the order
/// in which layouts are generated.
pub fn layout_seed(master_seed: u64, index: usize) -> u64 {
    let mut z = master_seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random sequential adsorption: draw centers uniformly over the admissible
/// rectangle, reject any draw overlapping an accepted disk (y-periodic), stop
/// once `N` are placed.
pub fn rsa_place(
    spec: &SegmentSpec,
    options: &RsaOptions,
    seed: u64,
) -> Result<CavityLayout, GeometryError> {
    spec.validate()?;
    if !(options.gap.is_finite() && options.gap >= 0.0) {
        return Err(GeometryError::InvalidSegment(format!(
            "gap must be non-negative, got {}",
            options.gap
        )));
    }
    let margin = options.margin.unwrap_or(spec.radius);
    if !(margin >= 0.0 && 2.0 * margin < spec.length) {
        return Err(GeometryError::InvalidSegment(format!(
            "margin {margin} leaves no room in length {}",
            spec.length
        )));
    }
    if spec.count > 0 && options.max_attempts == 0 {
        return Err(GeometryError::InvalidSegment(
            "max_attempts must be positive".into(),
        ));
    }

    let min_dist = 2.0 * spec.radius + options.gap;
    let min_dist_sq = min_dist * min_dist;
    let half_h = 0.5 * spec.height;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Point> = Vec::with_capacity(spec.count);

    while centers.len() < spec.count {
        let mut placed = false;
        for _ in 0..options.max_attempts {
            let x = margin + rng.random::<f64>() * (spec.length - 2.0 * margin);
            // maps [0, 1) onto (-H/2, H/2]
            let y = half_h - rng.random::<f64>() * spec.height;
            let clear = centers.iter().all(|c| {
                let dx = x - c.x;
                let dy = wrap_periodic(y - c.y, spec.height);
                dx * dx + dy * dy >= min_dist_sq
            });
            if clear {
                centers.push(Point::new(x, y));
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(GeometryError::Saturation {
                placed: centers.len(),
                requested: spec.count,
                seed,
            });
        }
    }

    Ok(CavityLayout {
        spec: *spec,
        centers,
        seed,
    })
}

/// Distance and direction from cavity `j` to copy `q` of cavity `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MirrorGeometry {
    pub distance: f64,
    /// Signed angle in `(-pi, pi]` of the vector from `j` to the mirror of `p`.
    pub angle: f64,
}

pub fn mirror_geometry(
    layout: &CavityLayout,
    p: usize,
    j: usize,
    q: i32,
) -> Result<MirrorGeometry, GeometryError> {
    let count = layout.centers.len();
    for index in [p, j] {
        if index >= count {
            return Err(GeometryError::IndexOutOfRange { index, count });
        }
    }
    if p == j && q == 0 {
        return Err(GeometryError::SelfDistance { index: p });
    }
    let cp = layout.centers[p];
    let cj = layout.centers[j];
    let dx = cp.x - cj.x;
    let dy = cp.y - cj.y + q as f64 * layout.spec.height;
    Ok(MirrorGeometry {
        distance: dx.hypot(dy),
        angle: dy.atan2(dx),
    })
}

impl CavityLayout {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn porosity(&self) -> f64 {
        self.spec.porosity()
    }

    /// Smallest center distance over all pairs, y-periodic images included.
    pub fn min_pair_distance(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for (i, a) in self.centers.iter().enumerate() {
            for b in &self.centers[i + 1..] {
                let dx = a.x - b.x;
                let dy = wrap_periodic(a.y - b.y, self.spec.height);
                let d = dx.hypot(dy);
                best = Some(best.map_or(d, |m: f64| m.min(d)));
            }
        }
        best
    }

    /// CSV with header `index,x_m,y_m,radius_m`; `comments` become leading
    /// `# ` lines.
    pub fn to_csv(&self, comments: &[String]) -> String {
        let mut out = String::new();
        for c in comments {
            let _ = writeln!(out, "# {c}");
        }
        out.push_str("index,x_m,y_m,radius_m\n");
        for (i, c) in self.centers.iter().enumerate() {
            let _ = writeln!(
                out,
                "{i},{},{},{}",
                fmt_f64(c.x),
                fmt_f64(c.y),
                fmt_f64(self.spec.radius)
            );
        }
        out
    }

    /// Read centers back from [`CavityLayout::to_csv`] output. The radius
    /// column must agree with `spec`.
    pub fn from_csv(text: &str, spec: SegmentSpec, seed: u64) -> Result<Self, GeometryError> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some("index,x_m,y_m,radius_m") => {}
            other => return Err(GeometryError::Parse(format!("unexpected header {other:?}"))),
        }
        let mut centers = Vec::new();
        for (row, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(GeometryError::Parse(format!(
                    "row {row}: expected 4 fields"
                )));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| GeometryError::Parse(format!("row {row}: {e}")))
            };
            let index: usize = fields[0]
                .parse()
                .map_err(|e| GeometryError::Parse(format!("row {row}: {e}")))?;
            if index != row {
                return Err(GeometryError::Parse(format!(
                    "row {row} carries index {index}"
                )));
            }
            let radius = num(fields[3])?;
            if radius != spec.radius {
                return Err(GeometryError::Parse(format!(
                    "row {row}: radius {radius} differs from segment radius {}",
                    spec.radius
                )));
            }
            centers.push(Point::new(num(fields[1])?, num(fields[2])?));
        }
        if centers.len() != spec.count {
            return Err(GeometryError::Parse(format!(
                "{} rows for a segment of {} cavities",
                centers.len(),
                spec.count
            )));
        }
        Ok(CavityLayout {
            spec,
            centers,
            seed,
        })
    }
}
