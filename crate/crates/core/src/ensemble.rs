//! Grid evaluation, sectional (y) averages and Monte-Carlo ensemble means.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::ops::Range;

use crate::error::{EnsembleError, ScatterError};
use crate::fmt_f64;
use crate::geometry::{layout_seed, rsa_place, CavityLayout, Point, RsaOptions, SegmentSpec};
use crate::scatter::{solve_problem, FieldEvaluator, Material, ProblemSpec, ScatterSolution};

/// Sampling grid over one segment: `x_g = g dx` for `g = 1..=nx` and
/// `y_l = (l + offset) dy` for `l = 1..=ny`, wrapped into `(-H/2, H/2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    /// Shift of the y-points in units of `dy`.
    pub y_offset: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            nx: 400,
            ny: 100,
            y_offset: 0.0,
        }
    }
}

impl GridSpec {
    pub fn xs(&self, segment: &SegmentSpec) -> Vec<f64> {
        let dx = segment.length / self.nx as f64;
        (1..=self.nx).map(|g| g as f64 * dx).collect()
    }

    pub fn ys(&self, segment: &SegmentSpec) -> Vec<f64> {
        let h = segment.height;
        let dy = h / self.ny as f64;
        (1..=self.ny)
            .map(|l| {
                let y = (l as f64 + self.y_offset) * dy;
                y - h * ((y - 0.5 * h) / h).ceil()
            })
            .collect()
    }
}

/// How interior (in-cavity) grid points enter the y-average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AverageMode {
    /// Interior points count as zero and the divisor stays `ny`.
    #[default]
    ZeroFill,
    /// Interior points are dropped from both sum and divisor.
    ExcludeInterior,
}

impl AverageMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AverageMode::ZeroFill => "zero_fill",
            AverageMode::ExcludeInterior => "exclude_interior",
        }
    }
}

/// Complex field on a grid, `x`-major (`index = g * ny + l`).
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub values: Vec<Complex64>,
    pub interior: Vec<bool>,
}

impl GridField {
    pub fn at(&self, g: usize, l: usize) -> (Complex64, bool) {
        let i = g * self.y.len() + l;
        (self.values[i], self.interior[i])
    }

    pub fn interior_count(&self) -> usize {
        self.interior.iter().filter(|&&b| b).count()
    }
}

/// Total field at every grid point; points inside a cavity (or mirror) are
/// flagged and hold zero.
pub fn evaluate_grid(
    solution: &ScatterSolution,
    spec: &ProblemSpec,
    grid: &GridSpec,
) -> Result<GridField, ScatterError> {
    let ev = FieldEvaluator::accelerated(spec, solution)?;
    let x = grid.xs(&spec.layout.spec);
    let y = grid.ys(&spec.layout.spec);
    let columns: Vec<Vec<(Complex64, bool)>> = x
        .par_iter()
        .map_init(
            || ev.scratch(),
            |scratch, &xg| {
                y.iter()
                    .map(|&yl| {
                        let p = Point::new(xg, yl);
                        if ev.interior_cavity(p).is_some() {
                            (Complex64::new(0.0, 0.0), true)
                        } else {
                            (ev.value_with(p, scratch), false)
                        }
                    })
                    .collect()
            },
        )
        .collect();
    let (values, interior) = columns.into_iter().flatten().unzip();
    Ok(GridField {
        x,
        y,
        values,
        interior,
    })
}

/// y-averaged field along x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionalCurve {
    pub x: Vec<f64>,
    pub w_re: Vec<f64>,
    pub w_im: Vec<f64>,
    pub amplitude: Vec<f64>,
}

impl SectionalCurve {
    pub fn new(x: Vec<f64>, w_re: Vec<f64>, w_im: Vec<f64>) -> Result<Self, EnsembleError> {
        if w_re.len() != x.len() || w_im.len() != x.len() {
            return Err(EnsembleError::ShapeMismatch(format!(
                "x has {} entries, re {} and im {}",
                x.len(),
                w_re.len(),
                w_im.len()
            )));
        }
        let amplitude = w_re
            .iter()
            .zip(&w_im)
            .map(|(r, i)| (r * r + i * i).sqrt())
            .collect();
        Ok(SectionalCurve {
            x,
            w_re,
            w_im,
            amplitude,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// CSV `x_m,w_re,w_im,amplitude`.
    pub fn to_csv(&self, comments: &[String]) -> String {
        let mut out = String::new();
        for c in comments {
            let _ = writeln!(out, "# {c}");
        }
        out.push_str("x_m,w_re,w_im,amplitude\n");
        for g in 0..self.len() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                fmt_f64(self.x[g]),
                fmt_f64(self.w_re[g]),
                fmt_f64(self.w_im[g]),
                fmt_f64(self.amplitude[g])
            );
        }
        out
    }

    /// Parse the CSV written by [`SectionalCurve::to_csv`]. The amplitude is
    /// recomputed and must agree with the stored column.
    pub fn from_csv(text: &str) -> Result<Self, EnsembleError> {
        let bad =
            |line: usize, msg: &str| EnsembleError::ShapeMismatch(format!("line {line}: {msg}"));
        let mut rows = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
        match rows.next() {
            Some((_, h)) if h.trim() == "x_m,w_re,w_im,amplitude" => {}
            Some((i, _)) => return Err(bad(i + 1, "unexpected header")),
            None => return Err(bad(0, "empty curve file")),
        }
        let (mut x, mut re, mut im, mut amp) = (vec![], vec![], vec![], vec![]);
        for (i, line) in rows {
            let vals: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| bad(i + 1, &e.to_string()))?;
            if vals.len() != 4 {
                return Err(bad(i + 1, "expected 4 fields"));
            }
            x.push(vals[0]);
            re.push(vals[1]);
            im.push(vals[2]);
            amp.push(vals[3]);
        }
        let curve = SectionalCurve::new(x, re, im)?;
        if curve.amplitude != amp {
            return Err(bad(0, "amplitude column inconsistent with w_re, w_im"));
        }
        Ok(curve)
    }
}

pub fn sectional_average(field: &GridField, mode: AverageMode) -> SectionalCurve {
    let ny = field.y.len();
    let mut re = Vec::with_capacity(field.x.len());
    let mut im = Vec::with_capacity(field.x.len());
    for g in 0..field.x.len() {
        let vals = &field.values[g * ny..(g + 1) * ny];
        let mask = &field.interior[g * ny..(g + 1) * ny];
        let mut sum = Complex64::new(0.0, 0.0);
        let mut count = 0usize;
        for (v, &inside) in vals.iter().zip(mask) {
            if !inside {
                sum += v;
                count += 1;
            }
        }
        let divisor = match mode {
            AverageMode::ZeroFill => ny,
            AverageMode::ExcludeInterior => count,
        };
        let mean = if divisor == 0 {
            Complex64::new(0.0, 0.0)
        } else {
            sum / divisor as f64
        };
        re.push(mean.re);
        im.push(mean.im);
    }
    SectionalCurve::new(field.x.clone(), re, im).expect("lengths agree by construction")
}

/// Mean over layouts of the sectional curves, and the amplitude of that mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleCurve {
    pub curves: Vec<SectionalCurve>,
    pub x: Vec<f64>,
    pub mean_re: Vec<f64>,
    pub mean_im: Vec<f64>,
    pub mean_amplitude: Vec<f64>,
    pub master_seed: u64,
}

impl EnsembleCurve {
    pub fn layouts(&self) -> usize {
        self.curves.len()
    }

    pub fn mean_curve(&self) -> SectionalCurve {
        SectionalCurve {
            x: self.x.clone(),
            w_re: self.mean_re.clone(),
            w_im: self.mean_im.clone(),
            amplitude: self.mean_amplitude.clone(),
        }
    }

    pub fn to_csv(&self, comments: &[String]) -> String {
        let mut all = comments.to_vec();
        all.push(format!(
            "L={} master_seed={}",
            self.layouts(),
            self.master_seed
        ));
        self.mean_curve().to_csv(&all)
    }
}

pub fn ensemble_average(
    curves: Vec<SectionalCurve>,
    master_seed: u64,
) -> Result<EnsembleCurve, EnsembleError> {
    let first = curves.first().ok_or(EnsembleError::Empty)?;
    let x = first.x.clone();
    for (i, c) in curves.iter().enumerate() {
        if c.x != x {
            return Err(EnsembleError::ShapeMismatch(format!(
                "curve {i} is sampled at different x positions"
            )));
        }
    }
    let l = curves.len() as f64;
    let mut mean_re = vec![0.0; x.len()];
    let mut mean_im = vec![0.0; x.len()];
    for c in &curves {
        for g in 0..x.len() {
            mean_re[g] += c.w_re[g];
            mean_im[g] += c.w_im[g];
        }
    }
    mean_re.iter_mut().for_each(|v| *v /= l);
    mean_im.iter_mut().for_each(|v| *v /= l);
    let mean_amplitude = mean_re
        .iter()
        .zip(&mean_im)
        .map(|(r, i)| (r * r + i * i).sqrt())
        .collect();
    Ok(EnsembleCurve {
        curves,
        x,
        mean_re,
        mean_im,
        mean_amplitude,
        master_seed,
    })
}

/// What to do when a layout cannot be generated or solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    #[default]
    Abort,
    /// Draw a replacement layout from a derived seed (up to
    /// [`MAX_RESAMPLES`] times).
    Resample,
}

impl FailurePolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            FailurePolicy::Abort => "abort",
            FailurePolicy::Resample => "resample",
        }
    }
}

pub const MAX_RESAMPLES: u32 = 8;

/// Everything needed to run the ensemble at one wavenumber.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloSpec {
    pub segment: SegmentSpec,
    pub rsa: RsaOptions,
    pub material: Material,
    pub wavenumber: f64,
    pub truncation: usize,
    pub mirrors: usize,
    pub memory_cap: u64,
    pub grid: GridSpec,
    pub average_mode: AverageMode,
    pub layouts: usize,
    pub master_seed: u64,
    pub failure_policy: FailurePolicy,
}

impl MonteCarloSpec {
    /// Seed of layout `index` after `attempt` resamples.
    pub fn seed_for(&self, index: usize, attempt: u32) -> u64 {
        let base = layout_seed(self.master_seed, index);
        if attempt == 0 {
            base
        } else {
            layout_seed(base, attempt as usize)
        }
    }

    pub fn problem(&self, layout: CavityLayout) -> ProblemSpec {
        ProblemSpec {
            layout,
            material: self.material,
            wavenumber: self.wavenumber,
            truncation: self.truncation,
            mirrors: self.mirrors,
            memory_cap: self.memory_cap,
        }
    }
}

/// Diagnostics of one solved layout.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutOutcome {
    pub index: usize,
    pub seed: u64,
    pub resamples: u32,
    pub curve: SectionalCurve,
    /// `None` when the curve came from a checkpoint.
    pub diagnostics: Option<SolveDiagnostics>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveDiagnostics {
    pub residual_norm: f64,
    pub condition_estimate: f64,
    pub mirror_tail: f64,
    pub interior_points: usize,
}

/// Generate, solve and y-average a single layout from an explicit seed.
pub fn run_single_layout(
    mc: &MonteCarloSpec,
    seed: u64,
) -> Result<(SectionalCurve, SolveDiagnostics), String> {
    let layout = rsa_place(&mc.segment, &mc.rsa, seed).map_err(|e| e.to_string())?;
    let spec = mc.problem(layout);
    let solution = solve_problem(&spec).map_err(|e| e.to_string())?;
    let field = evaluate_grid(&solution, &spec, &mc.grid).map_err(|e| e.to_string())?;
    let curve = sectional_average(&field, mc.average_mode);
    Ok((
        curve,
        SolveDiagnostics {
            residual_norm: solution.residual_norm,
            condition_estimate: solution.condition_estimate,
            mirror_tail: solution.mirror_tail,
            interior_points: field.interior_count(),
        },
    ))
}

/// Solve layouts `indices` in parallel; results come back ordered by index.
/// `cached(index, seed)` may supply a previously computed curve.
pub fn solve_layouts<F>(
    mc: &MonteCarloSpec,
    indices: Range<usize>,
    cached: F,
) -> Result<Vec<LayoutOutcome>, EnsembleError>
where
    F: Fn(usize, u64) -> Option<SectionalCurve> + Sync,
{
    indices
        .into_par_iter()
        .map(|index| {
            let mut attempt = 0;
            loop {
                let seed = mc.seed_for(index, attempt);
                if let Some(curve) = cached(index, seed) {
                    return Ok(LayoutOutcome {
                        index,
                        seed,
                        resamples: attempt,
                        curve,
                        diagnostics: None,
                    });
                }
                match run_single_layout(mc, seed) {
                    Ok((curve, diag)) => {
                        return Ok(LayoutOutcome {
                            index,
                            seed,
                            resamples: attempt,
                            curve,
                            diagnostics: Some(diag),
                        })
                    }
                    Err(message) => {
                        if mc.failure_policy == FailurePolicy::Abort || attempt >= MAX_RESAMPLES {
                            return Err(EnsembleError::Layout {
                                index,
                                seed,
                                message,
                            });
                        }
                        attempt += 1;
                    }
                }
            }
        })
        .collect()
}

pub fn run_monte_carlo(mc: &MonteCarloSpec) -> Result<EnsembleCurve, EnsembleError> {
    if mc.layouts == 0 {
        return Err(EnsembleError::Empty);
    }
    let outcomes = solve_layouts(mc, 0..mc.layouts, |_, _| None)?;
    ensemble_average(
        outcomes.into_iter().map(|o| o.curve).collect(),
        mc.master_seed,
    )
}
