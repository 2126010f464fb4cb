//! Effective-medium quantities extracted from ensemble curves: wavelength
//! and wavenumber from peak spacing, attenuation fits, structural damping,
//! effective moduli, and the self-consistent static shear modulus.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::ensemble::{EnsembleCurve, SectionalCurve};
use crate::error::HomogenizeError;
use crate::scatter::Material;

type Result<T> = std::result::Result<T, HomogenizeError>;

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(HomogenizeError::Domain(format!(
            "{name} must be positive, got {v}"
        )))
    }
}

/// Local maxima of `y(x)` on a uniform grid, refined by a parabola through
/// the three samples around each maximum. A maximum must dominate every
/// sample within `min_separation` of it.
pub fn find_peaks(x: &[f64], y: &[f64], min_separation: f64) -> Vec<f64> {
    let mut found: Vec<(f64, f64)> = Vec::new();
    for i in 1..y.len().saturating_sub(1) {
        if !(y[i] > y[i - 1] && y[i] >= y[i + 1]) {
            continue;
        }
        let dominated = (0..y.len())
            .filter(|&j| (x[j] - x[i]).abs() <= min_separation)
            .any(|j| y[j] > y[i]);
        if dominated {
            continue;
        }
        let (ym, y0, yp) = (y[i - 1], y[i], y[i + 1]);
        let denom = ym - 2.0 * y0 + yp;
        let shift = if denom < 0.0 {
            0.5 * (ym - yp) / denom
        } else {
            0.0
        };
        let h = 0.5 * (x[i + 1] - x[i - 1]);
        let xp = x[i] + shift * h;
        let yp_val = y0 - 0.25 * (ym - yp) * shift;
        found.push((xp, yp_val));
    }
    let mut kept: Vec<(f64, f64)> = Vec::new();
    for p in found {
        match kept.last_mut() {
            Some(last) if p.0 - last.0 < min_separation => {
                if p.1 > last.1 {
                    *last = p;
                }
            }
            _ => kept.push(p),
        }
    }
    kept.into_iter().map(|p| p.0).collect()
}

/// Peak values (refined height) in the same order as [`find_peaks`].
pub fn peak_values(x: &[f64], y: &[f64], min_separation: f64) -> Vec<f64> {
    let positions = find_peaks(x, y, min_separation);
    positions
        .iter()
        .map(|&xp| {
            let i = x.partition_point(|&v| v < xp).clamp(1, x.len() - 2);
            let i = if (x[i - 1] - xp).abs() < (x[i] - xp).abs() {
                i - 1
            } else {
                i
            };
            let i = i.clamp(1, x.len() - 2);
            let (ym, y0, yp) = (y[i - 1], y[i], y[i + 1]);
            let h = 0.5 * (x[i + 1] - x[i - 1]);
            let t = (xp - x[i]) / h;
            y0 + 0.5 * t * (yp - ym) + 0.5 * t * t * (yp - 2.0 * y0 + ym)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WavelengthMeasurement {
    pub lambda_eff: f64,
    pub peaks: Vec<f64>,
}

/// Mean peak-to-peak distance of the real-component curve.
pub fn measure_effective_wavelength(
    curve: &SectionalCurve,
    min_separation: f64,
) -> Result<WavelengthMeasurement> {
    let peaks = find_peaks(&curve.x, &curve.w_re, min_separation);
    if peaks.len() < 2 {
        return Err(HomogenizeError::InsufficientData(format!(
            "need two peaks to measure a wavelength, found {}",
            peaks.len()
        )));
    }
    let gaps: Vec<f64> = peaks.windows(2).map(|w| w[1] - w[0]).collect();
    let lambda_eff = gaps.iter().sum::<f64>() / gaps.len() as f64;
    Ok(WavelengthMeasurement { lambda_eff, peaks })
}

pub fn effective_wavenumber(lambda_eff: f64) -> Result<f64> {
    positive("effective wavelength", lambda_eff)?;
    Ok(2.0 * PI / lambda_eff)
}

pub fn effective_speed(omega: f64, k_eff: f64) -> Result<f64> {
    positive("effective wavenumber", k_eff)?;
    Ok(omega / k_eff)
}

/// Ordinary least squares line with standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_std_err: f64,
    pub intercept_std_err: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    let n = xs.len();
    if n != ys.len() || n < 2 {
        return Err(HomogenizeError::InsufficientData(format!(
            "line fit needs at least two (x, y) pairs, got {n}"
        )));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if !(sxx > 0.0) {
        return Err(HomogenizeError::InsufficientData(
            "all x values coincide; slope undefined".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let sst: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let s2 = if n > 2 { ssr / (nf - 2.0) } else { 0.0 };
    Ok(LineFit {
        slope,
        intercept,
        slope_std_err: (s2 / sxx).sqrt(),
        intercept_std_err: (s2 * (1.0 / nf + mx * mx / sxx)).sqrt(),
        r_squared: if sst > 0.0 { 1.0 - ssr / sst } else { 1.0 },
        n_points: n,
    })
}

/// Fit of `amplitude = alpha exp(-A2 x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub alpha: f64,
    pub a2: f64,
    pub alpha_std_err: f64,
    pub a2_std_err: f64,
    /// In log space.
    pub r_squared: f64,
    pub n_points: usize,
    pub alpha_fixed: bool,
}

/// Least squares on `ln(amplitude)` over points with `x >= window_start`.
/// With `fix_alpha` the line is forced through `ln 1 = 0`.
pub fn fit_attenuation(
    x: &[f64],
    amplitude: &[f64],
    window_start: f64,
    fix_alpha: bool,
) -> Result<FitReport> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(amplitude)
        .filter(|(xv, _)| **xv >= window_start)
        .map(|(&xv, &a)| (xv, a))
        .unzip();
    if xs.len() < 3 {
        return Err(HomogenizeError::InsufficientData(format!(
            "attenuation fit window holds {} points, need 3",
            xs.len()
        )));
    }
    if let Some(a) = ys.iter().find(|a| !(**a > 0.0)) {
        return Err(HomogenizeError::Domain(format!(
            "amplitude {a} in the fit window is not positive"
        )));
    }
    let ln: Vec<f64> = ys.iter().map(|a| a.ln()).collect();
    if !fix_alpha {
        let line = linear_fit(&xs, &ln)?;
        let alpha = line.intercept.exp();
        return Ok(FitReport {
            alpha,
            a2: -line.slope,
            alpha_std_err: alpha * line.intercept_std_err,
            a2_std_err: line.slope_std_err,
            r_squared: line.r_squared,
            n_points: line.n_points,
            alpha_fixed: false,
        });
    }
    let n = xs.len() as f64;
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ln).map(|(x, y)| x * y).sum();
    let slope = sxy / sxx;
    let my = ln.iter().sum::<f64>() / n;
    let ssr: f64 = xs
        .iter()
        .zip(&ln)
        .map(|(x, y)| (y - slope * x).powi(2))
        .sum();
    let sst: f64 = ln.iter().map(|y| (y - my).powi(2)).sum();
    Ok(FitReport {
        alpha: 1.0,
        a2: -slope,
        alpha_std_err: 0.0,
        a2_std_err: (ssr / (n - 1.0) / sxx).sqrt(),
        r_squared: if sst > 0.0 { 1.0 - ssr / sst } else { 1.0 },
        n_points: xs.len(),
        alpha_fixed: true,
    })
}

/// Line through `(ka, A2)` pairs with a free intercept.
pub fn fit_attenuation_slope(pairs: &[(f64, f64)]) -> Result<LineFit> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    linear_fit(&xs, &ys)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Damping {
    pub b1: f64,
    pub b2: f64,
    pub s: Complex64,
}

/// `s = 2 B1 B2 + (B1^2 + 1 - B2^2) i`.
pub fn damping_from_coefficients(b1: f64, b2: f64) -> Damping {
    Damping {
        b1,
        b2,
        s: Complex64::new(2.0 * b1 * b2, b1 * b1 + 1.0 - b2 * b2),
    }
}

/// `B1 = A2 / k_eff` (decay), `B2 = A1 / k_eff` (propagation).
pub fn structural_damping(a1: f64, a2: f64, k_eff: f64) -> Result<Damping> {
    positive("effective wavenumber", k_eff)?;
    Ok(damping_from_coefficients(a2 / k_eff, a1 / k_eff))
}

/// Area fraction `N pi a^2 / (H T)`.
pub fn porosity(count: usize, radius: f64, height: f64, length: f64) -> Result<f64> {
    positive("radius", radius)?;
    positive("height", height)?;
    positive("length", length)?;
    let eta = count as f64 * PI * radius * radius / (height * length);
    if eta >= 1.0 {
        return Err(HomogenizeError::Infeasible(format!(
            "cavities cover {eta} of the segment"
        )));
    }
    Ok(eta)
}

pub fn effective_density(rho: f64, eta: f64) -> Result<f64> {
    positive("density", rho)?;
    if !(0.0..=1.0).contains(&eta) {
        return Err(HomogenizeError::Domain(format!(
            "porosity {eta} outside [0, 1]"
        )));
    }
    Ok(rho * (1.0 - eta))
}

/// `mu_eff = c_eff^2 rho_eff`.
pub fn effective_shear_modulus_dynamic(c_eff: f64, rho_eff: f64) -> Result<f64> {
    positive("effective speed", c_eff)?;
    if !(rho_eff >= 0.0) {
        return Err(HomogenizeError::Domain(format!(
            "effective density {rho_eff} negative"
        )));
    }
    Ok(c_eff * c_eff * rho_eff)
}

/// `E = 2 (1 + nu) mu`.
pub fn effective_young_modulus(mu_eff: f64, nu: f64) -> Result<f64> {
    if !(nu > -1.0 && nu < 0.5) {
        return Err(HomogenizeError::Domain(format!(
            "Poisson ratio {nu} outside (-1, 0.5)"
        )));
    }
    Ok(2.0 * (1.0 + nu) * mu_eff)
}

/// Adaptive Simpson quadrature.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn step<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(&f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Shear compliance of a unit cell with one central void, in units of the
/// intact cell's: `2 (1/2 - r) + int_0^pi r sin t / (1 - 2 r sin t) dt`
/// with `r = a / l`.
pub fn scm_compliance_ratio(a_over_l: f64) -> Result<f64> {
    if !(a_over_l >= 0.0) {
        return Err(HomogenizeError::Domain(format!(
            "a/l = {a_over_l} must be nonnegative"
        )));
    }
    if a_over_l >= 0.5 {
        return Err(HomogenizeError::Infeasible(format!(
            "a/l = {a_over_l}: the void does not fit in the cell"
        )));
    }
    let r = a_over_l;
    let tail = integrate(|t| r * t.sin() / (1.0 - 2.0 * r * t.sin()), 0.0, PI, 1e-14);
    Ok(2.0 * (0.5 - r) + tail)
}

pub fn scm_shear_modulus(mu: f64, a_over_l: f64) -> Result<f64> {
    positive("shear modulus", mu)?;
    Ok(mu / scm_compliance_ratio(a_over_l)?)
}

/// `alpha exp(-A2 x) exp(i A1 x)`.
pub fn homogenized_field_predict(x: f64, alpha: f64, a1: f64, a2: f64) -> Complex64 {
    alpha * (-a2 * x).exp() * Complex64::from_polar(1.0, a1 * x)
}

/// `1 - SS_res / SS_tot`.
pub fn r_squared(observed: &[f64], predicted: &[f64]) -> Result<f64> {
    if observed.len() != predicted.len() || observed.is_empty() {
        return Err(HomogenizeError::InsufficientData(format!(
            "curves of length {} and {}",
            observed.len(),
            predicted.len()
        )));
    }
    let mean = observed.iter().sum::<f64>() / observed.len() as f64;
    let ss_res: f64 = observed
        .iter()
        .zip(predicted)
        .map(|(o, p)| (o - p).powi(2))
        .sum();
    let ss_tot: f64 = observed.iter().map(|o| (o - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(HomogenizeError::InsufficientData(
            "observed curve is constant".into(),
        ));
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Small-`k b1` boundary force `mu k w_in b2 b3 / 4`.
pub fn equivalent_boundary_force(mu: f64, k: f64, w_in: f64, b2: f64, b3: f64) -> f64 {
    0.25 * mu * k * w_in * b2 * b3
}

/// Boundary force without the small-`k b1` expansion:
/// `(mu w_in / b1) (cos k b1 - 1 + sin k b1) b2 b3 / 4`.
pub fn equivalent_boundary_force_exact(
    mu: f64,
    k: f64,
    w_in: f64,
    b1: f64,
    b2: f64,
    b3: f64,
) -> Result<f64> {
    positive("element length", b1)?;
    let kb = k * b1;
    Ok(0.25 * mu * w_in / b1 * ((kb).cos() - 1.0 + kb.sin()) * b2 * b3)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NondimensionalGroups {
    pub ka: f64,
    pub eta: f64,
    pub w_in_over_a: f64,
    pub nu: f64,
}

pub fn nondimensional_groups(
    a: f64,
    eta: f64,
    w_in: f64,
    nu: f64,
    k: f64,
) -> Result<NondimensionalGroups> {
    positive("radius", a)?;
    positive("wavenumber", k)?;
    if !(0.0..1.0).contains(&eta) {
        return Err(HomogenizeError::Domain(format!(
            "porosity {eta} outside [0, 1)"
        )));
    }
    Ok(NondimensionalGroups {
        ka: k * a,
        eta,
        w_in_over_a: w_in / a,
        nu,
    })
}

/// Porosity of a square cell of side `l` holding one void of radius `a`.
pub fn porosity_from_spacing(a_over_l: f64) -> f64 {
    PI * a_over_l * a_over_l
}

/// Inverse of [`porosity_from_spacing`].
pub fn spacing_from_porosity(eta: f64) -> f64 {
    (eta / PI).sqrt()
}

/// Settings of the end-to-end homogenization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomogenizeParams {
    pub material: Material,
    pub nu: f64,
    pub count: usize,
    pub radius: f64,
    pub height: f64,
    pub length: f64,
    pub fit_window_start: f64,
    pub fix_alpha: bool,
}

/// Results at one wavenumber.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyResult {
    pub wavenumber: f64,
    pub ka: f64,
    pub lambda_eff: f64,
    pub k_eff: f64,
    pub peaks: Vec<f64>,
    pub fit: FitReport,
    /// R^2 of the homogenized prediction against the ensemble real part.
    pub prediction_r_squared: f64,
    pub layouts: usize,
    pub master_seed: u64,
}

impl FrequencyResult {
    pub fn ratio(&self) -> f64 {
        self.k_eff / self.wavenumber
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogenizedModel {
    pub frequencies: Vec<FrequencyResult>,
    /// Mean of `k_eff / k` over the sweep.
    pub mean_ratio: f64,
    /// `c / mean_ratio`.
    pub c_eff: f64,
    pub attenuation_slope: LineFit,
    pub b1: f64,
    pub b2: f64,
    pub s: Complex64,
    pub eta: f64,
    pub rho_eff: f64,
    pub mu_eff_dynamic: f64,
    pub mu_eff_scm: f64,
    pub e_eff: f64,
    pub nu: f64,
}

impl HomogenizedModel {
    /// Field of the homogenized medium at wavenumber index `i`: the fitted
    /// `alpha` of that wavenumber, `A1 = mean_ratio k`, `A2 = B1 A1`.
    pub fn predict(&self, i: usize, x: f64) -> Complex64 {
        let f = &self.frequencies[i];
        let a1 = self.mean_ratio * f.wavenumber;
        homogenized_field_predict(x, f.fit.alpha, a1, self.b1 * a1)
    }

    pub fn report(&self, provenance: &[String]) -> String {
        let mut out = String::new();
        for p in provenance {
            let _ = writeln!(out, "# {p}");
        }
        let g = crate::fmt_f64;
        let _ = writeln!(out, "[per_wavenumber]");
        let _ = writeln!(
            out,
            "k_per_m,ka,lambda_eff_m,k_eff_per_m,k_eff_over_k,alpha,alpha_std_err,A2_per_m,A2_std_err,fit_r_squared,prediction_r_squared,peaks"
        );
        for f in &self.frequencies {
            let peaks: Vec<String> = f.peaks.iter().map(|&p| g(p)).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                g(f.wavenumber),
                g(f.ka),
                g(f.lambda_eff),
                g(f.k_eff),
                g(f.ratio()),
                g(f.fit.alpha),
                g(f.fit.alpha_std_err),
                g(f.fit.a2),
                g(f.fit.a2_std_err),
                g(f.fit.r_squared),
                g(f.prediction_r_squared),
                peaks.join(";")
            );
        }
        let _ = writeln!(out, "\n[model]");
        let rows = [
            ("mean_k_eff_over_k", self.mean_ratio),
            ("c_eff_m_per_s", self.c_eff),
            ("A2_vs_ka_slope_per_m", self.attenuation_slope.slope),
            (
                "A2_vs_ka_slope_std_err",
                self.attenuation_slope.slope_std_err,
            ),
            ("A2_vs_ka_intercept_per_m", self.attenuation_slope.intercept),
            ("A2_vs_ka_r_squared", self.attenuation_slope.r_squared),
            ("B1", self.b1),
            ("B2", self.b2),
            ("s_re", self.s.re),
            ("s_im", self.s.im),
            ("structural_damping", self.s.re),
            ("porosity", self.eta),
            ("rho_eff_kg_m3", self.rho_eff),
            ("mu_eff_dynamic_pa", self.mu_eff_dynamic),
            ("mu_eff_scm_pa", self.mu_eff_scm),
            ("E_eff_pa", self.e_eff),
            ("nu", self.nu),
        ];
        for (k, v) in rows {
            let _ = writeln!(out, "{k} = {}", g(v));
        }
        out
    }
}

/// Fit every ensemble curve of a sweep and assemble the homogenized model.
/// `curves` holds `(k, ensemble)` pairs.
pub fn homogenize(
    curves: &[(f64, &EnsembleCurve)],
    params: &HomogenizeParams,
) -> Result<HomogenizedModel> {
    if curves.len() < 2 {
        return Err(HomogenizeError::InsufficientData(format!(
            "need at least two wavenumbers, got {}",
            curves.len()
        )));
    }
    let mut frequencies = Vec::with_capacity(curves.len());
    for &(k, ens) in curves {
        positive("wavenumber", k)?;
        let mean = ens.mean_curve();
        // Peaks of the real part closer than a quarter incident wavelength
        // are ripple, not wave crests.
        let wl = measure_effective_wavelength(&mean, 0.5 * PI / k)?;
        let k_eff = effective_wavenumber(wl.lambda_eff)?;
        let fit = fit_attenuation(
            &mean.x,
            &mean.amplitude,
            params.fit_window_start,
            params.fix_alpha,
        )?;
        frequencies.push(FrequencyResult {
            wavenumber: k,
            ka: k * params.radius,
            lambda_eff: wl.lambda_eff,
            k_eff,
            peaks: wl.peaks,
            fit,
            prediction_r_squared: f64::NAN,
            layouts: ens.layouts(),
            master_seed: ens.master_seed,
        });
    }
    let mean_ratio = frequencies.iter().map(|f| f.ratio()).sum::<f64>() / frequencies.len() as f64;
    let c = params.material.shear_speed();
    let c_eff = c / mean_ratio;
    let pairs: Vec<(f64, f64)> = frequencies.iter().map(|f| (f.ka, f.fit.a2)).collect();
    let attenuation_slope = fit_attenuation_slope(&pairs)?;
    // A2 grows like slope * ka = (slope a) k; per unit effective wavenumber
    // that is slope a / mean_ratio.
    let b1 = attenuation_slope.slope * params.radius / mean_ratio;
    let damping = damping_from_coefficients(b1, 1.0);
    let eta = porosity(params.count, params.radius, params.height, params.length)?;
    let rho_eff = effective_density(params.material.density, eta)?;
    let mu_eff_dynamic = effective_shear_modulus_dynamic(c_eff, rho_eff)?;
    let mu_eff_scm = scm_shear_modulus(params.material.shear_modulus, spacing_from_porosity(eta))?;
    let e_eff = effective_young_modulus(mu_eff_dynamic, params.nu)?;
    let mut model = HomogenizedModel {
        frequencies,
        mean_ratio,
        c_eff,
        attenuation_slope,
        b1: damping.b1,
        b2: damping.b2,
        s: damping.s,
        eta,
        rho_eff,
        mu_eff_dynamic,
        mu_eff_scm,
        e_eff,
        nu: params.nu,
    };
    for (i, &(_, ens)) in curves.iter().enumerate() {
        let predicted: Vec<f64> = ens.x.iter().map(|&x| model.predict(i, x).re).collect();
        model.frequencies[i].prediction_r_squared = r_squared(&ens.mean_re, &predicted)?;
    }
    Ok(model)
}

#[cfg(test)]
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;
    use crate::ensemble::ensemble_average;
    use proptest::prelude::*;

    fn grid(n: usize, dx: f64) -> Vec<f64> {
        (1..=n).map(|g| g as f64 * dx).collect()
    }

    #[test]
    fn wavelength_of_synthetic_cosine() {
        let x = grid(400, 1e-4);
        let re: Vec<f64> = x.iter().map(|v| (2000.0 * v).cos()).collect();
        let im = vec![0.0; 400];
        let c = SectionalCurve::new(x, re, im).unwrap();
        let m = measure_effective_wavelength(&c, 0.0).unwrap();
        assert!(
            (m.lambda_eff - 2.0 * PI / 2000.0).abs() < 1e-6,
            "{}",
            m.lambda_eff
        );
        assert_eq!(m.peaks.len(), 12);
    }

    #[test]
    fn too_few_peaks() {
        let x = grid(400, 1e-4);
        let re: Vec<f64> = x.iter().map(|v| (100.0 * v).cos()).collect();
        let c = SectionalCurve::new(x, re, vec![0.0; 400]).unwrap();
        assert!(matches!(
            measure_effective_wavelength(&c, 0.0),
            Err(HomogenizeError::InsufficientData(_))
        ));
    }

    #[test]
    fn ripple_peaks_are_merged() {
        let x = grid(400, 1e-4);
        let re: Vec<f64> = x
            .iter()
            .map(|v| (1000.0 * v).cos() + 0.02 * (40000.0 * v).cos())
            .collect();
        let peaks = find_peaks(&x, &re, 0.5 * PI / 1000.0);
        for w in peaks.windows(2) {
            assert!((w[1] - w[0] - 2.0 * PI / 1000.0).abs() < 3e-4);
        }
        let vals = peak_values(&x, &re, 0.5 * PI / 1000.0);
        assert!(vals.iter().all(|v| (v - 1.0).abs() < 0.05));
    }

    #[test]
    fn wavenumber_and_speed() {
        assert!((effective_wavenumber(2.0 * PI).unwrap() - 1.0).abs() < 1e-15);
        assert!((effective_wavenumber(0.0031).unwrap() - 2026.8).abs() < 0.1);
        assert!((effective_wavenumber(0.0076).unwrap() - 826.7).abs() < 0.1);
        assert!(effective_wavenumber(0.0).is_err());
        assert!(effective_speed(10.0, -1.0).is_err());
        let l = 0.0123;
        assert!((effective_wavenumber(l).unwrap() * l - 2.0 * PI).abs() < 1e-15);
    }

    #[test]
    fn attenuation_fits() {
        let x = grid(400, 1e-4);
        let a: Vec<f64> = x.iter().map(|v| (-10.0 * v).exp()).collect();
        let f = fit_attenuation(&x, &a, 0.0, false).unwrap();
        assert!((f.alpha - 1.0).abs() < 1e-12 && (f.a2 - 10.0).abs() < 1e-10);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        let b: Vec<f64> = x.iter().map(|v| 0.9 * (-25.0 * v).exp()).collect();
        let f = fit_attenuation(&x, &b, 0.0, false).unwrap();
        assert!((f.alpha - 0.9).abs() < 1e-12 && (f.a2 - 25.0).abs() < 1e-10);
        let f = fit_attenuation(&x, &a, 0.0, true).unwrap();
        assert!(f.alpha_fixed && f.alpha == 1.0 && (f.a2 - 10.0).abs() < 1e-10);
        let mut c = a.clone();
        c[10] = 0.0;
        assert!(matches!(
            fit_attenuation(&x, &c, 0.0, false),
            Err(HomogenizeError::Domain(_))
        ));
        assert!(matches!(
            fit_attenuation(&x, &a, 0.03995, false),
            Err(HomogenizeError::InsufficientData(_))
        ));
        let f = fit_attenuation(&x, &a, 0.02, false).unwrap();
        assert_eq!(f.n_points, 201);
    }

    #[test]
    fn slope_fit() {
        let pairs: Vec<(f64, f64)> = [0.24, 0.48, 0.72, 0.96, 1.2]
            .iter()
            .map(|&ka| (ka, 34.56 * ka + 2.0))
            .collect();
        let f = fit_attenuation_slope(&pairs).unwrap();
        assert!((f.slope - 34.56).abs() < 1e-10);
        assert!((f.intercept - 2.0).abs() < 1e-10);
        assert!(fit_attenuation_slope(&[(1.0, 2.0)]).is_err());
        assert!(fit_attenuation_slope(&[(1.0, 2.0), (1.0, 3.0)]).is_err());
    }

    #[test]
    fn damping_values() {
        let d = damping_from_coefficients(0.0207, 1.0);
        assert!((d.s.re - 0.0414).abs() < 1e-12);
        assert!((d.s.im - 0.0207f64.powi(2)).abs() < 1e-15);
        let d = damping_from_coefficients(0.0, 1.0);
        assert_eq!(d.s, Complex64::new(0.0, 0.0));
        let d = damping_from_coefficients(0.1, 1.0);
        assert!((d.s - Complex64::new(0.2, 0.01)).norm() < 1e-15);
        let d = structural_damping(2000.0, 41.4, 2000.0).unwrap();
        assert!((d.b1 - 0.0207).abs() < 1e-15 && d.b2 == 1.0);
        assert!(structural_damping(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn porosity_and_moduli() {
        let eta = porosity(50, 0.0006, 0.02, 0.04).unwrap();
        assert!((eta - 0.0707).abs() < 1e-4);
        let rho = effective_density(2700.0, eta).unwrap();
        assert!((rho - 2509.1).abs() < 0.1);
        assert_eq!(porosity(0, 0.0006, 0.02, 0.04).unwrap(), 0.0);
        assert_eq!(effective_density(2700.0, 1.0).unwrap(), 0.0);
        assert!(porosity(10000, 0.006, 0.02, 0.04).is_err());
        let m = Material::default();
        let mu = effective_shear_modulus_dynamic(m.shear_speed(), m.density).unwrap();
        assert!((mu - m.shear_modulus).abs() < 1e-3);
        let mu = effective_shear_modulus_dynamic(m.shear_speed() / 1.02, rho).unwrap();
        assert!((mu - m.shear_modulus / 1.0404 * (1.0 - eta)).abs() < 1.0);
        assert!((effective_young_modulus(24.05e9, 0.3).unwrap() - 62.53e9).abs() < 1e6);
        assert!(effective_young_modulus(1.0, 0.5).is_err());
    }

    #[test]
    fn scm_reference_values() {
        assert_eq!(scm_shear_modulus(26.92e9, 0.0).unwrap(), 26.92e9);
        // mpmath quadrature at a/l = 0.15
        let r = scm_compliance_ratio(0.15).unwrap();
        assert!((r - 1.095250333).abs() < 1e-8, "{r}");
        assert!(matches!(
            scm_compliance_ratio(0.5),
            Err(HomogenizeError::Infeasible(_))
        ));
        assert!(scm_compliance_ratio(-0.1).is_err());
    }

    #[test]
    fn scm_matches_trapezoid_oracle() {
        let r = 0.05;
        let n = 1_000_000;
        let h = PI / n as f64;
        let g = |t: f64| r * t.sin() / (1.0 - 2.0 * r * t.sin());
        let mut trap = 0.5 * (g(0.0) + g(PI));
        for i in 1..n {
            trap += g(i as f64 * h);
        }
        let oracle = 2.0 * (0.5 - r) + trap * h;
        let got = scm_compliance_ratio(r).unwrap();
        assert!(((got - oracle) / oracle).abs() < 1e-10, "{got} vs {oracle}");
    }

    #[test]
    fn prediction_and_r_squared() {
        assert_eq!(
            homogenized_field_predict(0.0, 0.8, 100.0, 5.0),
            Complex64::new(0.8, 0.0)
        );
        assert!((homogenized_field_predict(0.37, 0.8, 100.0, 0.0).norm() - 0.8).abs() < 1e-15);
        let obs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(r_squared(&obs, &obs).unwrap(), 1.0);
        assert_eq!(r_squared(&obs, &[2.5; 4]).unwrap(), 0.0);
        assert!(r_squared(&obs, &[1.0]).is_err());
    }

    #[test]
    fn boundary_force() {
        assert_eq!(equivalent_boundary_force(1.0, 1.0, 1.0, 1.0, 1.0), 0.25);
        assert_eq!(equivalent_boundary_force(1.0, 0.0, 1.0, 1.0, 1.0), 0.0);
        let (mu, k, b) = (26.92e9, 400.0, 1e-4);
        let approx = equivalent_boundary_force(mu, k, 1.0, b, b);
        assert!((approx - 26.92e9 * 400.0 * 1e-8 / 4.0).abs() < 1e-6);
        let exact = equivalent_boundary_force_exact(mu, k, 1.0, 0.04 / k, b, b).unwrap();
        let rel = (approx - exact) / exact;
        assert!((rel - 0.02).abs() < 0.002, "{rel}");
    }

    #[test]
    fn groups() {
        let g = nondimensional_groups(0.0006, 0.0707, 1.0, 0.3, 2000.0).unwrap();
        assert!((g.ka - 1.2).abs() < 1e-12);
        let h = nondimensional_groups(0.0012, 0.0707, 1.0, 0.3, 1000.0).unwrap();
        assert_eq!(g.ka, h.ka);
        let eta = porosity(1, 0.15, 1.0, 1.0).unwrap();
        assert!((porosity_from_spacing(0.15) - eta).abs() < 1e-15);
        assert!((spacing_from_porosity(eta) - 0.15).abs() < 1e-15);
    }

    fn synthetic_ensemble(k: f64, ratio: f64, a2: f64) -> EnsembleCurve {
        let x = grid(400, 1e-4);
        let re = x
            .iter()
            .map(|v| (-a2 * v).exp() * (ratio * k * v).cos())
            .collect();
        let im = x
            .iter()
            .map(|v| (-a2 * v).exp() * (ratio * k * v).sin())
            .collect();
        ensemble_average(vec![SectionalCurve::new(x, re, im).unwrap()], 1).unwrap()
    }

    #[test]
    fn end_to_end_on_synthetic_sweep() {
        let ks = [400.0, 800.0, 1200.0, 1600.0, 2000.0];
        let ens: Vec<EnsembleCurve> = ks
            .iter()
            .map(|&k| synthetic_ensemble(k, 1.02, 34.56 * k * 0.0006))
            .collect();
        let pairs: Vec<(f64, &EnsembleCurve)> = ks.iter().copied().zip(ens.iter()).collect();
        let params = HomogenizeParams {
            material: Material::default(),
            nu: 0.3,
            count: 50,
            radius: 0.0006,
            height: 0.02,
            length: 0.04,
            fit_window_start: 0.0,
            fix_alpha: false,
        };
        let m = homogenize(&pairs, &params).unwrap();
        assert!((m.mean_ratio - 1.02).abs() < 2e-3);
        assert!((m.attenuation_slope.slope - 34.56).abs() < 1e-6);
        assert!((m.mu_eff_dynamic - 24.04e9).abs() < 0.1e9);
        assert!((m.e_eff - 62.5e9).abs() < 0.3e9);
        assert!(m.frequencies.iter().all(|f| f.prediction_r_squared > 0.95));
        let text = m.report(&["porowave".into()]);
        assert!(text.contains("structural_damping = "));
        // Re(s) is unchanged when lengths scale by c and wavenumbers by 1/c.
        let scaled: Vec<EnsembleCurve> = ks
            .iter()
            .map(|&k| {
                let mut e = synthetic_ensemble(k, 1.02, 34.56 * k * 0.0006);
                let x: Vec<f64> = e.x.iter().map(|v| v * 2.0).collect();
                e.x = x;
                e
            })
            .collect();
        let pairs2: Vec<(f64, &EnsembleCurve)> =
            ks.iter().map(|k| k / 2.0).zip(scaled.iter()).collect();
        let params2 = HomogenizeParams {
            radius: 0.0012,
            height: 0.04,
            length: 0.08,
            ..params
        };
        let m2 = homogenize(&pairs2, &params2).unwrap();
        assert!((m2.s.re - m.s.re).abs() < 1e-9 * m.s.re.abs().max(1.0));
    }

    proptest! {
        #[test]
        fn scm_decreases_with_void_size(r1 in 0.0f64..0.49, r2 in 0.0f64..0.49) {
            prop_assume!((r1 - r2).abs() > 1e-6);
            let (lo, hi) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
            prop_assert!(scm_shear_modulus(1.0, hi).unwrap() < scm_shear_modulus(1.0, lo).unwrap());
        }

        #[test]
        fn wavelength_round_trip(l in 1e-4f64..10.0) {
            let k = effective_wavenumber(l).unwrap();
            prop_assert!((k * l - 2.0 * PI).abs() < 1e-12);
        }
    }
}
