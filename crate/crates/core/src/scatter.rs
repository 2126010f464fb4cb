//! Quasi-periodic multiple-scattering system for traction-free cavities.
//!
//! Total field outside the cavities (time factor `exp(-i w t)` suppressed):
//!
//! ```text
//! w(r) = exp(i k x) + sum_j sum_q sum_m A_jm H_m(k |r - r_jq|) exp(i m arg(r - r_jq))
//! ```
//!
//! where `r_jq` is copy `q` of cavity `j` (shifted by `q H` along y) and every
//! copy shares the coefficients of its original. `A_jm = i B_m C_jm` with
//! `i B_m = -J_m'(ka) / H_m'(ka)` and `C_jn` the coefficients of the field
//! exciting cavity `j`:
//!
//! ```text
//! C_jn = i^n exp(i k x_j) + i sum_{(p,q) != (j,0)} sum_m B_m C_pm S_{m-n}(p, q -> j)
//! ```
//!
//! The translation kernel `S_d = H_d(k R) exp(i d phi)` uses the vector from
//! the source copy to the receiving center, `r_j - r_pq`. That orientation is
//! what makes the truncated Graf series reproduce `H_n(k R_p) exp(i n th_p)`;
//! see [`graf_series`].

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::error::ScatterError;
use crate::fmt_f64;
use crate::geometry::{CavityLayout, Point};
use crate::linalg::{solve_dense, ComplexMatrix};
use crate::specfun::{parity, CylFunTable};

const I: Complex64 = Complex64::new(0.0, 1.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// `i^n`, exact for every integer `n`.
pub fn i_pow(n: i32) -> Complex64 {
    match n.rem_euclid(4) {
        0 => ONE,
        1 => I,
        2 => -ONE,
        _ => -I,
    }
}

/// Matrix material. Defaults: `mu = 26.92 GPa`, `rho = 2700 kg/m^3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub shear_modulus: f64,
    pub density: f64,
}

impl Default for Material {
    fn default() -> Self {
        Material {
            shear_modulus: 26.92e9,
            density: 2700.0,
        }
    }
}

impl Material {
    pub fn shear_speed(&self) -> f64 {
        (self.shear_modulus / self.density).sqrt()
    }
}

pub const DEFAULT_TRUNCATION: usize = 10;
pub const DEFAULT_MIRRORS: usize = 300;
pub const DEFAULT_MEMORY_CAP: u64 = 2 << 30;

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub layout: CavityLayout,
    pub material: Material,
    /// Incident wavenumber `k` (1/m).
    pub wavenumber: f64,
    /// `M`: orders `-M..=M` are kept.
    pub truncation: usize,
    /// `Q`: copies `-Q..=Q` of the segment are stacked along y.
    pub mirrors: usize,
    /// Upper bound on the dense system size in bytes.
    pub memory_cap: u64,
}

impl ProblemSpec {
    pub fn new(layout: CavityLayout, wavenumber: f64) -> Self {
        ProblemSpec {
            layout,
            material: Material::default(),
            wavenumber,
            truncation: DEFAULT_TRUNCATION,
            mirrors: DEFAULT_MIRRORS,
            memory_cap: DEFAULT_MEMORY_CAP,
        }
    }

    pub fn validate(&self) -> Result<(), ScatterError> {
        if !(self.wavenumber.is_finite() && self.wavenumber > 0.0) {
            return Err(ScatterError::InvalidProblem(format!(
                "wavenumber must be positive, got {}",
                self.wavenumber
            )));
        }
        if !(self.material.shear_modulus > 0.0 && self.material.density > 0.0) {
            return Err(ScatterError::InvalidProblem(
                "shear modulus and density must be positive".into(),
            ));
        }
        self.layout
            .spec
            .validate()
            .map_err(|e| ScatterError::InvalidProblem(e.to_string()))?;
        if self.layout.centers.len() != self.layout.spec.count {
            return Err(ScatterError::InvalidProblem(format!(
                "layout has {} centers for a segment of {}",
                self.layout.centers.len(),
                self.layout.spec.count
            )));
        }
        Ok(())
    }

    pub fn ka(&self) -> f64 {
        self.wavenumber * self.layout.spec.radius
    }

    pub fn orders(&self) -> usize {
        2 * self.truncation + 1
    }

    pub fn unknowns(&self) -> usize {
        self.layout.len() * self.orders()
    }

    pub fn angular_frequency(&self) -> f64 {
        self.wavenumber * self.material.shear_speed()
    }

    fn copy_center(&self, j: usize, q: i32) -> Point {
        let c = self.layout.centers[j];
        Point::new(c.x, c.y + q as f64 * self.layout.spec.height)
    }
}

/// `B_n` with `i B_n = -J_n'(ka) / H_n'(ka)` for a traction-free cavity.
pub fn neumann_coefficient(n: i32, ka: f64) -> Result<Complex64, ScatterError> {
    let table = CylFunTable::new(n.unsigned_abs() as usize, ka)?;
    let hp = table.h1_deriv(n);
    if !(hp.norm() > 0.0 && hp.norm().is_finite()) {
        return Err(ScatterError::InvalidProblem(format!(
            "H'_{n}({ka}) = {hp} cannot be inverted"
        )));
    }
    Ok(I * table.j_deriv(n) / hp)
}

/// Truncated Graf series: re-expands `H_n(k |u + v|) exp(i n arg(u + v))` as
/// `sum_{m=-half..=half} H_{n-m}(k|u|) exp(i(n-m) arg u) J_m(k|v|) exp(i m arg v)`,
/// valid for `|v| < |u|`. `u` runs from the source to the new center and `v`
/// from the new center to the field point.
pub fn graf_series(
    n: i32,
    k: f64,
    u: Point,
    v: Point,
    half_terms: usize,
) -> Result<Complex64, ScatterError> {
    let ru = u.x.hypot(u.y);
    let rv = v.x.hypot(v.y);
    let au = u.y.atan2(u.x);
    let av = v.y.atan2(v.x);
    let top = half_terms + n.unsigned_abs() as usize;
    let hu = CylFunTable::new(top, k * ru)?;
    let jv = CylFunTable::new(half_terms, k * rv)?;
    let mut sum = ZERO;
    for m in -(half_terms as i32)..=half_terms as i32 {
        let phase = Complex64::from_polar(1.0, (n - m) as f64 * au + m as f64 * av);
        sum += hu.h1(n - m) * jv.j(m) * phase;
    }
    Ok(sum)
}

/// Translation sums `S_d` for `d in 0..=dmax` over a set of source copies,
/// in both angular senses, plus the part contributed by the outermost tenth
/// of the copies.
#[derive(Debug, Clone)]
struct KernelSums {
    plus: Vec<Complex64>,
    minus: Vec<Complex64>,
    tail: f64,
}

impl KernelSums {
    /// `S_d` for any `|d| <= dmax`.
    #[inline]
    fn get(&self, d: i32) -> Complex64 {
        if d >= 0 {
            self.plus[d as usize]
        } else {
            parity(d) * self.minus[(-d) as usize]
        }
    }
}

/// Sum `H_d(k|v_q|) exp(+-i d arg v_q)` with `v_q = (dx, dy - q H)` over the
/// given copies.
#[allow(clippy::too_many_arguments)]
fn kernel_sums(
    k: f64,
    dx: f64,
    dy: f64,
    height: f64,
    copies: impl Iterator<Item = i32>,
    dmax: usize,
    tail_from: i32,
    table: &mut CylFunTable,
) -> Result<KernelSums, ScatterError> {
    let mut plus = vec![ZERO; dmax + 1];
    let mut minus = vec![ZERO; dmax + 1];
    let mut tail_plus = vec![ZERO; dmax + 1];
    for q in copies {
        let vy = dy - q as f64 * height;
        let r = dx.hypot(vy);
        let e = Complex64::new(dx / r, vy / r);
        table.recompute(k * r)?;
        let mut pw = ONE;
        let in_tail = q.abs() >= tail_from;
        for d in 0..=dmax {
            let h = table.h1(d as i32);
            let tp = h * pw;
            plus[d] += tp;
            minus[d] += h * pw.conj();
            if in_tail {
                tail_plus[d] += tp;
            }
            pw *= e;
        }
    }
    let tail = tail_plus.iter().map(|v| v.norm()).fold(0.0, f64::max);
    Ok(KernelSums { plus, minus, tail })
}

#[derive(Debug, Clone)]
pub struct AssembledSystem {
    /// `(I - T)` with unknown `(j, n)` at index `j (2M+1) + n + M`.
    pub matrix: ComplexMatrix,
    /// `E_jn = i^n exp(i k x_j)`.
    pub rhs: Vec<Complex64>,
    /// `B_n` for `n in -M..=M`.
    pub neumann: Vec<Complex64>,
    /// Largest magnitude of the translation sums contributed by the last
    /// tenth of the mirror copies (`|q| > 0.9 Q`).
    pub mirror_tail: f64,
    pub truncation: usize,
}

impl AssembledSystem {
    /// CSV dump `row,col,re,im` of the nonzero entries; `None` when the
    /// matrix has more than `max_entries` entries.
    pub fn matrix_csv(&self, max_entries: usize) -> Option<String> {
        let n = self.matrix.rows();
        if n * n > max_entries {
            return None;
        }
        let mut out = String::from("row,col,re,im\n");
        for i in 0..n {
            for (j, v) in self.matrix.row(i).iter().enumerate() {
                if *v != ZERO {
                    let _ = writeln!(out, "{i},{j},{},{}", fmt_f64(v.re), fmt_f64(v.im));
                }
            }
        }
        Some(out)
    }
}

fn pair_index(source: usize, center: usize) -> usize {
    debug_assert!(source < center);
    center * (center - 1) / 2 + source
}

pub fn assemble_system(spec: &ProblemSpec) -> Result<AssembledSystem, ScatterError> {
    spec.validate()?;
    let n_cav = spec.layout.len();
    let m_max = spec.truncation as i32;
    let orders = spec.orders();
    let unknowns = spec.unknowns();
    let bytes = (unknowns as u64).pow(2) * std::mem::size_of::<Complex64>() as u64;
    if bytes > spec.memory_cap {
        return Err(ScatterError::SystemTooLarge {
            bytes,
            cap: spec.memory_cap,
        });
    }

    let k = spec.wavenumber;
    let ka = spec.ka();
    let neumann = (-m_max..=m_max)
        .map(|n| neumann_coefficient(n, ka))
        .collect::<Result<Vec<_>, _>>()?;

    let q_max = spec.mirrors as i32;
    let height = spec.layout.spec.height;
    let dmax = 2 * spec.truncation;
    let tail_from = if q_max == 0 {
        i32::MAX
    } else {
        q_max - (q_max / 10).max(1) + 1
    };

    // Unordered pairs a < b, oriented source a -> center b.
    let pairs: Vec<(usize, usize)> = (1..n_cav)
        .flat_map(|b| (0..b).map(move |a| (a, b)))
        .collect();
    let centers = &spec.layout.centers;
    let pair_sums: Vec<KernelSums> = pairs
        .par_iter()
        .map_init(
            || CylFunTable::new(dmax, 1.0).expect("unit argument"),
            |table, &(a, b)| {
                let dx = centers[b].x - centers[a].x;
                let dy = centers[b].y - centers[a].y;
                kernel_sums(k, dx, dy, height, -q_max..=q_max, dmax, tail_from, table)
            },
        )
        .collect::<Result<_, _>>()?;

    let self_sums = {
        let mut table = CylFunTable::new(dmax, 1.0)?;
        kernel_sums(
            k,
            0.0,
            0.0,
            height,
            (-q_max..=q_max).filter(|&q| q != 0),
            dmax,
            tail_from,
            &mut table,
        )?
    };
    let mirror_tail = pair_sums
        .iter()
        .map(|s| s.tail)
        .fold(self_sums.tail, f64::max);

    let mut matrix = ComplexMatrix::zeros(unknowns, unknowns);
    if unknowns > 0 {
        matrix
            .row_blocks_mut(orders)
            .enumerate()
            .collect::<Vec<_>>()
            .into_par_iter()
            .for_each(|(j, block)| {
                for (n_idx, row) in block.chunks_mut(unknowns).enumerate() {
                    let n = n_idx as i32 - m_max;
                    for p in 0..n_cav {
                        let (sums, flip) = match p.cmp(&j) {
                            std::cmp::Ordering::Equal => (&self_sums, false),
                            std::cmp::Ordering::Less => (&pair_sums[pair_index(p, j)], false),
                            std::cmp::Ordering::Greater => (&pair_sums[pair_index(j, p)], true),
                        };
                        let cols = &mut row[p * orders..(p + 1) * orders];
                        for (m_idx, entry) in cols.iter_mut().enumerate() {
                            let m = m_idx as i32 - m_max;
                            let d = m - n;
                            let mut s = sums.get(d);
                            if flip {
                                s *= parity(d);
                            }
                            *entry = -I * neumann[m_idx] * s;
                        }
                    }
                    row[j * orders + n_idx] += ONE;
                }
            });
    }

    let rhs = (0..n_cav)
        .flat_map(|j| {
            let phase = Complex64::from_polar(1.0, k * centers[j].x);
            (-m_max..=m_max).map(move |n| i_pow(n) * phase)
        })
        .collect();

    Ok(AssembledSystem {
        matrix,
        rhs,
        neumann,
        mirror_tail,
        truncation: spec.truncation,
    })
}

/// Solved exciting-field coefficients `C_jn` for one layout and wavenumber.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterSolution {
    pub truncation: usize,
    pub cavity_count: usize,
    /// `C_jn` at index `j (2M+1) + n + M`.
    pub coefficients: Vec<Complex64>,
    /// `B_n` for `n in -M..=M`.
    pub neumann: Vec<Complex64>,
    /// Relative residual of the balanced linear system actually solved.
    pub residual_norm: f64,
    pub condition_estimate: f64,
    pub mirror_tail: f64,
}

impl ScatterSolution {
    fn idx(&self, j: usize, n: i32) -> usize {
        let m = self.truncation as i32;
        assert!(n.abs() <= m, "order {n} outside truncation {m}");
        j * (2 * self.truncation + 1) + (n + m) as usize
    }

    pub fn c(&self, j: usize, n: i32) -> Complex64 {
        self.coefficients[self.idx(j, n)]
    }

    pub fn b(&self, n: i32) -> Complex64 {
        self.neumann[(n + self.truncation as i32) as usize]
    }

    /// Scattering amplitude `A_jn = i B_n C_jn`.
    pub fn a(&self, j: usize, n: i32) -> Complex64 {
        I * self.b(n) * self.c(j, n)
    }

    /// CSV `j,n,Re(C),Im(C)`.
    pub fn to_csv(&self, comments: &[String]) -> String {
        let mut out = String::new();
        for c in comments {
            let _ = writeln!(out, "# {c}");
        }
        out.push_str("j,n,Re(C),Im(C)\n");
        let m = self.truncation as i32;
        for j in 0..self.cavity_count {
            for n in -m..=m {
                let c = self.c(j, n);
                let _ = writeln!(out, "{j},{n},{},{}", fmt_f64(c.re), fmt_f64(c.im));
            }
        }
        out
    }
}

pub fn solve_coefficients(system: &AssembledSystem) -> Result<ScatterSolution, ScatterError> {
    let orders = 2 * system.truncation + 1;
    if system.rhs.is_empty() {
        return Ok(ScatterSolution {
            truncation: system.truncation,
            cavity_count: 0,
            coefficients: Vec::new(),
            neumann: system.neumann.clone(),
            residual_norm: 0.0,
            condition_estimate: 1.0,
            mirror_tail: system.mirror_tail,
        });
    }
    // Solve the balanced system D (I - T) D^-1 (D C) = D E with
    // D = diag(sqrt|B_n|); otherwise high orders of the exciting field of
    // close neighbors swamp the pivots.
    let scale: Vec<f64> = (0..system.rhs.len())
        .map(|i| system.neumann[i % orders].norm().sqrt().max(1e-150))
        .collect();
    let mut balanced = system.matrix.clone();
    for (r, &sr) in scale.iter().enumerate() {
        for (v, &sc) in balanced.row_mut(r).iter_mut().zip(&scale) {
            *v *= sr / sc;
        }
    }
    let rhs: Vec<Complex64> = system.rhs.iter().zip(&scale).map(|(e, s)| e * s).collect();
    let sol = solve_dense(&balanced, &rhs)?;
    drop(balanced);
    let coefficients = sol.x.iter().zip(&scale).map(|(x, s)| x / s).collect();
    Ok(ScatterSolution {
        truncation: system.truncation,
        cavity_count: system.rhs.len() / orders,
        coefficients,
        neumann: system.neumann.clone(),
        residual_norm: sol.relative_residual,
        condition_estimate: sol.condition_estimate,
        mirror_tail: system.mirror_tail,
    })
}

/// Assemble and solve in one go.
pub fn solve_problem(spec: &ProblemSpec) -> Result<ScatterSolution, ScatterError> {
    let system = assemble_system(spec)?;
    solve_coefficients(&system)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub point: Point,
    pub displacement: Complex64,
}

/// Regular expansion of all mirror copies with `|q| >= first_copy`, centered
/// in the middle of the segment.
#[derive(Debug, Clone)]
struct LocalExpansion {
    center: Point,
    radius: f64,
    order: usize,
    /// `L_n` for `n in -order..=order`.
    coeffs: Vec<Complex64>,
    first_copy: i32,
}

/// Largest ratio `(source extent + evaluation extent) / distance` accepted
/// for the far-copy expansion.
const FAR_RATIO: f64 = 0.6;

/// Scratch tables reused across point evaluations.
#[derive(Debug, Clone)]
pub struct EvalScratch {
    table: CylFunTable,
    waves: Vec<Complex64>,
    far_table: Option<CylFunTable>,
    far_waves: Vec<Complex64>,
}

/// Evaluates the total field (and its gradient) for a solved problem.
///
/// The direct evaluator sums every copy explicitly. The accelerated one sums
/// the nearest copies explicitly and folds the rest into a single regular
/// expansion around the segment center, which is exact up to the expansion
/// order (about 1e-13 relative).
#[derive(Debug, Clone)]
pub struct FieldEvaluator<'a> {
    spec: &'a ProblemSpec,
    /// `A_jm` at index `j (2M+1) + m + M`.
    amplitudes: Vec<Complex64>,
    near_copies: i32,
    far: Option<LocalExpansion>,
}

impl<'a> FieldEvaluator<'a> {
    pub fn direct(spec: &'a ProblemSpec, solution: &ScatterSolution) -> Result<Self, ScatterError> {
        check_solution(spec, solution)?;
        Ok(FieldEvaluator {
            spec,
            amplitudes: amplitudes(solution),
            near_copies: spec.mirrors as i32,
            far: None,
        })
    }

    pub fn accelerated(
        spec: &'a ProblemSpec,
        solution: &ScatterSolution,
    ) -> Result<Self, ScatterError> {
        let mut ev = Self::direct(spec, solution)?;
        if let Some(far) = ev.build_far_expansion()? {
            ev.near_copies = far.first_copy - 1;
            ev.far = Some(far);
        }
        Ok(ev)
    }

    /// Number of copies on each side summed explicitly.
    pub fn near_copies(&self) -> i32 {
        self.near_copies
    }

    pub fn far_expansion_order(&self) -> Option<usize> {
        self.far.as_ref().map(|f| f.order)
    }

    pub fn scratch(&self) -> EvalScratch {
        EvalScratch {
            table: CylFunTable::new(self.spec.truncation + 1, 1.0).expect("unit argument"),
            waves: vec![ZERO; 2 * self.spec.truncation + 5],
            far_table: self
                .far
                .as_ref()
                .map(|f| CylFunTable::new(f.order + 1, 1.0).expect("unit argument")),
            far_waves: self
                .far
                .as_ref()
                .map_or_else(Vec::new, |f| vec![ZERO; 2 * f.order + 5]),
        }
    }

    fn build_far_expansion(&self) -> Result<Option<LocalExpansion>, ScatterError> {
        let spec = self.spec;
        let seg = &spec.layout.spec;
        if spec.layout.is_empty() {
            return Ok(None);
        }
        let center = Point::new(0.5 * seg.length, 0.0);
        let radius = (0.5 * seg.length + seg.radius).hypot(0.5 * seg.height + seg.radius);
        let first_copy = (2.0 * radius / (FAR_RATIO * seg.height)).ceil() as i32;
        if first_copy > spec.mirrors as i32 {
            return Ok(None);
        }
        let k = spec.wavenumber;
        let ratio = 2.0 * radius / (first_copy as f64 * seg.height);
        let order = (k * radius).ceil() as usize + (-37.0 / ratio.ln()).ceil() as usize + 4;
        let m_max = spec.truncation as i32;
        let p = order as i32;

        // Outgoing expansion of one segment about its center: D_l.
        let span = order + spec.truncation;
        let mut outgoing = vec![ZERO; 2 * order + 1];
        let mut table = CylFunTable::new(span, 1.0)?;
        let mut waves = vec![ZERO; 2 * span + 1];
        for (j, c) in spec.layout.centers.iter().enumerate() {
            let vx = center.x - c.x;
            let vy = center.y - c.y;
            regular_waves(k, vx, vy, span, &mut table, &mut waves)?;
            let amps = &self.amplitudes[j * spec.orders()..(j + 1) * spec.orders()];
            for l in -p..=p {
                let mut acc = ZERO;
                for (m_idx, a) in amps.iter().enumerate() {
                    let s = m_idx as i32 - m_max - l;
                    acc += a * waves[(s + span as i32) as usize];
                }
                outgoing[(l + p) as usize] += acc;
            }
        }

        // Copies q0..=Q on both sides: G_d = 2 cos(d pi / 2) sum_q H_|d|(k q H).
        let dmax = 2 * order;
        let mut hsum = vec![ZERO; dmax + 1];
        let mut htab = CylFunTable::new(dmax, 1.0)?;
        for q in first_copy..=spec.mirrors as i32 {
            htab.recompute(k * q as f64 * seg.height)?;
            for (d, h) in hsum.iter_mut().enumerate().step_by(2) {
                *h += htab.h1(d as i32);
            }
        }
        if hsum.iter().any(|h| !(h.re.is_finite() && h.im.is_finite())) {
            return Ok(None);
        }
        let kernel = |d: i32| -> Complex64 {
            if d % 2 != 0 {
                ZERO
            } else {
                let sign = if (d / 2) % 2 == 0 { 2.0 } else { -2.0 };
                sign * hsum[d.unsigned_abs() as usize]
            }
        };

        let mut coeffs = vec![ZERO; 2 * order + 1];
        for n in -p..=p {
            let mut acc = ZERO;
            for l in -p..=p {
                acc += outgoing[(l + p) as usize] * kernel(l - n);
            }
            coeffs[(n + p) as usize] = acc;
        }
        if coeffs
            .iter()
            .any(|c| !(c.re.is_finite() && c.im.is_finite()))
        {
            return Ok(None);
        }
        Ok(Some(LocalExpansion {
            center,
            radius,
            order,
            coeffs,
            first_copy,
        }))
    }

    /// Cavity (and copy) containing `point`, if any. Points exactly on a
    /// cavity wall count as outside.
    pub fn interior_cavity(&self, point: Point) -> Option<(usize, i32)> {
        interior_cavity(self.spec, point)
    }

    pub fn value(&self, point: Point) -> Complex64 {
        self.value_with(point, &mut self.scratch())
    }

    pub fn value_with(&self, point: Point, scratch: &mut EvalScratch) -> Complex64 {
        self.evaluate(point, scratch, false).0
    }

    /// Field value and `(dw/dx, dw/dy)`.
    pub fn value_and_gradient(
        &self,
        point: Point,
        scratch: &mut EvalScratch,
    ) -> (Complex64, [Complex64; 2]) {
        self.evaluate(point, scratch, true)
    }

    fn evaluate(
        &self,
        point: Point,
        scratch: &mut EvalScratch,
        gradient: bool,
    ) -> (Complex64, [Complex64; 2]) {
        let spec = self.spec;
        let k = spec.wavenumber;
        let incident = Complex64::from_polar(1.0, k * point.x);
        let mut value = incident;
        let mut grad = [I * k * incident, ZERO];
        let orders = spec.orders();
        let m_max = spec.truncation;

        let far = self
            .far
            .as_ref()
            .filter(|f| (point.x - f.center.x).hypot(point.y - f.center.y) <= f.radius);
        let near = if far.is_some() {
            self.near_copies
        } else {
            spec.mirrors as i32
        };

        let lmax = if gradient { m_max + 1 } else { m_max };
        for j in 0..spec.layout.len() {
            let amps = &self.amplitudes[j * orders..(j + 1) * orders];
            for q in -near..=near {
                let src = spec.copy_center(j, q);
                let dx = point.x - src.x;
                let dy = point.y - src.y;
                if dx == 0.0 && dy == 0.0 {
                    continue;
                }
                outgoing_waves(k, dx, dy, lmax, &mut scratch.table, &mut scratch.waves)
                    .expect("nonzero distance");
                accumulate(
                    amps,
                    &scratch.waves,
                    lmax,
                    m_max,
                    k,
                    gradient,
                    &mut value,
                    &mut grad,
                );
            }
        }

        if let (Some(f), Some(table)) = (far, scratch.far_table.as_mut()) {
            let lmax = if gradient { f.order + 1 } else { f.order };
            regular_waves(
                k,
                point.x - f.center.x,
                point.y - f.center.y,
                lmax,
                table,
                &mut scratch.far_waves,
            )
            .expect("finite point");
            accumulate(
                &f.coeffs,
                &scratch.far_waves,
                lmax,
                f.order,
                k,
                gradient,
                &mut value,
                &mut grad,
            );
        }
        (value, grad)
    }
}

fn check_solution(spec: &ProblemSpec, solution: &ScatterSolution) -> Result<(), ScatterError> {
    if solution.truncation != spec.truncation || solution.cavity_count != spec.layout.len() {
        return Err(ScatterError::InvalidProblem(format!(
            "solution (N={}, M={}) does not match problem (N={}, M={})",
            solution.cavity_count,
            solution.truncation,
            spec.layout.len(),
            spec.truncation
        )));
    }
    Ok(())
}

fn amplitudes(solution: &ScatterSolution) -> Vec<Complex64> {
    let orders = 2 * solution.truncation + 1;
    solution
        .coefficients
        .iter()
        .enumerate()
        .map(|(i, c)| I * solution.neumann[i % orders] * c)
        .collect()
}

/// `waves[l + lmax] = H_l(k r) exp(i l theta)` for `l in -lmax..=lmax`.
fn outgoing_waves(
    k: f64,
    dx: f64,
    dy: f64,
    lmax: usize,
    table: &mut CylFunTable,
    waves: &mut [Complex64],
) -> Result<(), ScatterError> {
    let r = dx.hypot(dy);
    let e = Complex64::new(dx / r, dy / r);
    table.recompute(k * r)?;
    let mut pw = ONE;
    for l in 0..=lmax {
        let h = table.h1(l as i32);
        waves[lmax + l] = h * pw;
        waves[lmax - l] = parity(l as i32) * h * pw.conj();
        pw *= e;
    }
    Ok(())
}

/// `waves[l + lmax] = J_l(k r) exp(i l theta)` for `l in -lmax..=lmax`.
fn regular_waves(
    k: f64,
    dx: f64,
    dy: f64,
    lmax: usize,
    table: &mut CylFunTable,
    waves: &mut [Complex64],
) -> Result<(), ScatterError> {
    let r = dx.hypot(dy);
    if r == 0.0 {
        waves[..2 * lmax + 1].fill(ZERO);
        waves[lmax] = ONE;
        return Ok(());
    }
    let e = Complex64::new(dx / r, dy / r);
    table.recompute(k * r)?;
    let mut pw = ONE;
    for l in 0..=lmax {
        let j = table.j(l as i32);
        waves[lmax + l] = j * pw;
        waves[lmax - l] = parity(l as i32) * j * pw.conj();
        pw *= e;
    }
    Ok(())
}

/// Adds `sum_m c_m Z_m e^{i m th}` and, if requested, its gradient via
/// `(d/dx, d/dy) Z_m e^{i m th} = k/2 (Z_{m-1} e^{..} - Z_{m+1} e^{..}, i (Z_{m-1} e^{..} + Z_{m+1} e^{..}))`.
#[allow(clippy::too_many_arguments)]
#[inline]
fn accumulate(
    coeffs: &[Complex64],
    waves: &[Complex64],
    lmax: usize,
    m_max: usize,
    k: f64,
    gradient: bool,
    value: &mut Complex64,
    grad: &mut [Complex64; 2],
) {
    let offset = lmax - m_max;
    let mut v = ZERO;
    for (c, w) in coeffs.iter().zip(&waves[offset..offset + coeffs.len()]) {
        v += c * w;
    }
    *value += v;
    if gradient {
        let mut gx = ZERO;
        let mut gy = ZERO;
        for (idx, c) in coeffs.iter().enumerate() {
            let below = waves[offset + idx - 1];
            let above = waves[offset + idx + 1];
            gx += c * (below - above);
            gy += c * (below + above);
        }
        grad[0] += 0.5 * k * gx;
        grad[1] += 0.5 * k * I * gy;
    }
}

fn interior_cavity(spec: &ProblemSpec, point: Point) -> Option<(usize, i32)> {
    let a = spec.layout.spec.radius;
    let h = spec.layout.spec.height;
    let q_max = spec.mirrors as i32;
    for (j, c) in spec.layout.centers.iter().enumerate() {
        let dx = point.x - c.x;
        if dx.abs() >= a {
            continue;
        }
        let nearest = ((point.y - c.y) / h).round() as i32;
        for q in (nearest - 1)..=(nearest + 1) {
            if q.abs() > q_max {
                continue;
            }
            let dy = point.y - (c.y + q as f64 * h);
            if dx * dx + dy * dy < a * a {
                return Some((j, q));
            }
        }
    }
    None
}

/// Total displacement at one point, summing every mirror copy explicitly.
pub fn field_at(
    point: Point,
    solution: &ScatterSolution,
    spec: &ProblemSpec,
) -> Result<FieldSample, ScatterError> {
    if let Some((cavity, mirror)) = interior_cavity(spec, point) {
        return Err(ScatterError::InteriorPoint {
            x: point.x,
            y: point.y,
            cavity,
            mirror,
        });
    }
    let ev = FieldEvaluator::direct(spec, solution)?;
    Ok(FieldSample {
        point,
        displacement: ev.value(point),
    })
}

/// Largest `|dw/dr|` on the cavity walls, each cavity normalized by
/// `k max|w|` over its own wall.
pub fn boundary_residual(
    solution: &ScatterSolution,
    spec: &ProblemSpec,
    samples_per_cavity: usize,
) -> Result<f64, ScatterError> {
    let ev = FieldEvaluator::accelerated(spec, solution)?;
    boundary_residual_with(&ev, spec, samples_per_cavity)
}

pub fn boundary_residual_with(
    ev: &FieldEvaluator<'_>,
    spec: &ProblemSpec,
    samples_per_cavity: usize,
) -> Result<f64, ScatterError> {
    if samples_per_cavity == 0 {
        return Err(ScatterError::InvalidProblem(
            "need at least one sample per cavity".into(),
        ));
    }
    let a = spec.layout.spec.radius;
    let k = spec.wavenumber;
    let worst = spec
        .layout
        .centers
        .par_iter()
        .map_init(
            || ev.scratch(),
            |scratch, c| {
                let mut max_dr = 0.0_f64;
                let mut max_w = 0.0_f64;
                for s in 0..samples_per_cavity {
                    let th = 2.0 * PI * s as f64 / samples_per_cavity as f64;
                    let (cos, sin) = (th.cos(), th.sin());
                    let p = Point::new(c.x + a * cos, c.y + a * sin);
                    let (w, g) = ev.value_and_gradient(p, scratch);
                    max_dr = max_dr.max((g[0] * cos + g[1] * sin).norm());
                    max_w = max_w.max(w.norm());
                }
                max_dr / (k * max_w)
            },
        )
        .collect::<Vec<_>>();
    Ok(worst.into_iter().fold(0.0, f64::max))
}
