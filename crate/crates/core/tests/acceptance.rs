//! Acceptance suite. Prints one `[PASS]`/`[FAIL]` line per criterion. Failed
//! criteria are listed at the end; the process exits nonzero on failure only
//! when `POROWAVE_ACCEPTANCE_STRICT` is set.
//!
//! Criteria 7-10, 12 and 13 run the full default configuration (N = 50,
//! Q = 300, M = 10, L = 20, 400 x 100 grid, five wavenumbers); expect about
//! fifteen minutes on one core with the optimized test profile.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::process::Command;
use std::time::Instant;

use porowave::config::RunConfig;
use porowave::ensemble::{run_monte_carlo, run_single_layout, EnsembleCurve};
use porowave::geometry::{layout_seed, rsa_place, CavityLayout, Point, SegmentSpec};
use porowave::homogenize::{homogenize, peak_values, scm_shear_modulus, HomogenizedModel};
use porowave::pipeline::graf_worst_error;
use porowave::scatter::{
    boundary_residual, field_at, i_pow, neumann_coefficient, solve_problem, ProblemSpec,
};
use porowave::specfun::{bessel_j, bessel_y, cyl_deriv, hankel1, wronskian_value, CylKind};

struct Outcome {
    failures: Vec<u32>,
}

impl Outcome {
    fn record(&mut self, n: u32, pass: bool, detail: String) {
        println!(
            "[{}] criterion {n}: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            self.failures.push(n);
        }
    }
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect()
}

fn special_functions(out: &mut Outcome) {
    let mut wr: f64 = 0.0;
    for x in log_grid(0.1, 1e4, 200) {
        let w = wronskian_value(x);
        for n in 0..=30 {
            let lhs = bessel_j(n + 1, x).unwrap() * bessel_y(n, x).unwrap()
                - bessel_j(n, x).unwrap() * bessel_y(n + 1, x).unwrap();
            wr = wr.max(((lhs - w) / w).abs());
        }
    }
    let mut dr: f64 = 0.0;
    for x in log_grid(0.5, 200.0, 60) {
        for n in 0..=30 {
            // Step well inside the local length scale, min(x / n, 1).
            let h = 1e-3 * (x / (n as f64 + 1.0)).min(1.0);
            for kind in [CylKind::J, CylKind::H1] {
                let f = |t: f64| match kind {
                    CylKind::J => Complex64::new(bessel_j(n, t).unwrap(), 0.0),
                    CylKind::H1 => hankel1(n, t).unwrap(),
                };
                let fd = (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h))
                    / (12.0 * h);
                let exact = cyl_deriv(kind, n, x).unwrap();
                let scale = exact.norm().max(f(x).norm());
                dr = dr.max((fd - exact).norm() / scale);
            }
        }
    }
    let mut un: f64 = 0.0;
    for ka in log_grid(1e-4, 50.0, 400) {
        for n in 0..=20 {
            let b = neumann_coefficient(n, ka).unwrap();
            un = un.max(((Complex64::new(1.0, 0.0) + 2.0 * Complex64::i() * b).norm() - 1.0).abs());
        }
    }
    out.record(
        1,
        wr <= 1e-12 && dr <= 1e-8 && un <= 1e-12,
        format!("wronskian {wr:.2e} (<= 1e-12), derivative vs FD {dr:.2e} (<= 1e-8), unitarity {un:.2e} (<= 1e-12)"),
    );
}

fn graf(out: &mut Outcome) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let worst = graf_worst_error(&mut rng, 100).unwrap();
    out.record(
        2,
        worst <= 1e-10,
        format!("Graf series, 40 terms, 100 random geometries: worst relative error {worst:.2e} (<= 1e-10)"),
    );
}

fn single_cavity(out: &mut Outcome) {
    let a = 0.0006;
    let k = 2000.0;
    let center = Point::new(0.013, -0.002);
    let layout = CavityLayout {
        spec: SegmentSpec {
            count: 1,
            ..SegmentSpec::default()
        },
        centers: vec![center],
        seed: 0,
    };
    let spec = ProblemSpec {
        mirrors: 0,
        ..ProblemSpec::new(layout, k)
    };
    let sol = solve_problem(&spec).unwrap();
    let m = spec.truncation as i32;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let r = a * rng.random_range(1.0..30.0);
        let th = rng.random_range(-PI..PI);
        let p = Point::new(center.x + r * th.cos(), center.y + r * th.sin());
        let got = field_at(p, &sol, &spec).unwrap().displacement;
        let mut want = Complex64::from_polar(1.0, k * p.x);
        for n in -m..=m {
            let c = i_pow(n) * Complex64::from_polar(1.0, k * center.x);
            want += Complex64::i()
                * neumann_coefficient(n, k * a).unwrap()
                * c
                * hankel1(n, k * r).unwrap()
                * Complex64::from_polar(1.0, n as f64 * th);
        }
        worst = worst.max((got - want).norm());
    }
    out.record(
        3,
        worst <= 1e-10,
        format!(
            "single cavity vs closed form over 1000 exterior points: worst {worst:.2e} (<= 1e-10)"
        ),
    );
}

fn residual_sweep(out: &mut Outcome) {
    let cfg = RunConfig::default();
    let seed = layout_seed(cfg.master_seed, 0);
    let layout = rsa_place(&cfg.segment, &cfg.rsa_options(), seed).unwrap();
    let k = 2000.0;
    let mut values = Vec::new();
    for m in [6, 10, 14] {
        let spec = ProblemSpec {
            truncation: m,
            ..cfg.monte_carlo(k).problem(layout.clone())
        };
        let sol = solve_problem(&spec).unwrap();
        values.push(boundary_residual(&sol, &spec, 64).unwrap());
    }
    let decreasing = values[0] > values[1] && values[1] > values[2];
    let closest = layout.min_pair_distance().unwrap_or(f64::INFINITY);
    out.record(
        4,
        values[1] <= 1e-4 && decreasing,
        format!(
            "boundary residual N=50 Q=300 ka=1.20 (layout seed {seed}, closest centers {:.4} mm): M=6 {:.3e}, M=10 {:.3e} (<= 1e-4), M=14 {:.3e}; strictly decreasing: {decreasing}",
            closest * 1e3,
            values[0],
            values[1],
            values[2]
        ),
    );
}

fn zero_porosity(out: &mut Outcome) {
    let mut cfg = RunConfig::default();
    cfg.segment.radius = 1e-6;
    let mut worst: f64 = 0.0;
    for &k in &cfg.wavenumbers {
        let mc = cfg.monte_carlo(k);
        let (curve, _) = run_single_layout(&mc, mc.seed_for(0, 0)).unwrap();
        for a in &curve.amplitude {
            worst = worst.max((a - 1.0).abs());
        }
    }
    out.record(
        5,
        worst <= 1e-4,
        format!("a = 1e-6 m, all five wavenumbers: max |amplitude - 1| = {worst:.2e} (<= 1e-4)"),
    );
}

fn determinism(out: &mut Outcome) {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(
        &cfg_path,
        "segment.N = 12\ntruncation.M = 5\ntruncation.Q = 30\nensemble.L = 6\n\
         sweep.wavenumbers_per_m = [800.0, 2000.0]\ngrid.nx = 80\ngrid.ny = 20\n",
    )
    .unwrap();
    let run = |jobs: &str, sub: &str| {
        let target = dir.path().join(sub);
        let output = Command::new(env!("CARGO_BIN_EXE_porowave"))
            .args(["ensemble", "--quiet", "--config"])
            .arg(&cfg_path)
            .args(["--jobs", jobs, "--out"])
            .arg(&target)
            .output()
            .unwrap();
        assert!(output.status.success());
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&target)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().to_string_lossy().into_owned(),
                    std::fs::read(e.path()).unwrap(),
                )
            })
            .collect();
        files.sort();
        files
    };
    let one = run("1", "jobs1");
    let four = run("4", "jobs4");
    let identical = one == four && !one.is_empty();
    out.record(
        6,
        identical,
        format!(
            "`ensemble` with --jobs 1 and --jobs 4: {} files each, byte-identical: {identical}",
            one.len()
        ),
    );
}

fn scm(out: &mut Outcome) {
    let mu = 26.92e9;
    let got = scm_shear_modulus(mu, 0.15).unwrap();
    let target = mu / 1.10;
    let rel = (got - target).abs() / target;
    out.record(
        11,
        rel <= 0.005,
        format!(
            "SCM shear modulus at a/l = 0.15: {:.4} GPa vs mu/1.10 = {:.4} GPa, relative difference {:.3}% (<= 0.5%)",
            got / 1e9,
            target / 1e9,
            rel * 100.0
        ),
    );
}

struct FullRun {
    ensembles: Vec<(f64, EnsembleCurve)>,
    model: HomogenizedModel,
}

fn full_run() -> FullRun {
    let cfg = RunConfig::default();
    let mut ensembles = Vec::new();
    for &k in &cfg.wavenumbers {
        let t = Instant::now();
        let e = run_monte_carlo(&cfg.monte_carlo(k)).unwrap();
        println!(
            "  ensemble ka={:.2} L={} done in {:.0} s",
            k * cfg.segment.radius,
            e.layouts(),
            t.elapsed().as_secs_f64()
        );
        ensembles.push((k, e));
    }
    let pairs: Vec<(f64, &EnsembleCurve)> = ensembles.iter().map(|(k, e)| (*k, e)).collect();
    let model = homogenize(&pairs, &cfg.homogenize_params()).unwrap();
    FullRun { ensembles, model }
}

fn full_scale(out: &mut Outcome) {
    let run = full_run();
    let m = &run.model;

    let table1 = [1.04, 1.03, 1.03, 1.01, 1.01];
    let ratios: Vec<f64> = m.frequencies.iter().map(|f| f.ratio()).collect();
    let ok = ratios
        .iter()
        .zip(&table1)
        .all(|(r, t)| (r - t).abs() <= 0.03);
    out.record(
        7,
        ok,
        format!(
            "k_eff/k = {} vs {:?} (+-0.03)",
            fmt_list(&ratios, 3),
            table1
        ),
    );

    let endpoints = [0.95, 0.70, 0.34, 0.27, 0.16];
    let last: Vec<f64> = run
        .ensembles
        .iter()
        .map(|(_, e)| *e.mean_amplitude.last().unwrap())
        .collect();
    let ok = last
        .iter()
        .zip(&endpoints)
        .all(|(v, t)| (v - t).abs() <= 0.08);
    out.record(
        8,
        ok,
        format!(
            "mean amplitude at x = 40 mm = {} vs {:?} (+-0.08)",
            fmt_list(&last, 3),
            endpoints
        ),
    );

    let slope = m.attenuation_slope.slope;
    let a2: Vec<f64> = m.frequencies.iter().map(|f| f.fit.a2).collect();
    let kas: Vec<f64> = m.frequencies.iter().map(|f| f.ka).collect();
    let origin = kas.iter().zip(&a2).map(|(x, y)| x * y).sum::<f64>()
        / kas.iter().map(|x| x * x).sum::<f64>();
    out.record(
        9,
        ((slope - 34.56) / 34.56).abs() <= 0.15,
        format!(
            "A2 = {} /m; slope of A2 vs ka = {slope:.2} /m vs 34.56 (+-15%), intercept {:.2} /m (zero-intercept slope {origin:.2} /m)",
            fmt_list(&a2, 2),
            m.attenuation_slope.intercept
        ),
    );

    let s_ok = ((m.s.re - 0.041) / 0.041).abs() <= 0.20;
    let eta_formula = 50.0 * PI * 0.0006f64.powi(2) / (0.02 * 0.04);
    let eta_ok = (m.eta - eta_formula).abs() < 1e-12 && (m.eta - 0.071).abs() < 5e-4;
    let rho_ok =
        (m.rho_eff - 2700.0 * (1.0 - eta_formula)).abs() < 1e-9 && (m.rho_eff - 2.5e3).abs() < 50.0;
    let mu_ok = ((m.mu_eff_dynamic - 24.05e9) / 24.05e9).abs() <= 0.05;
    let e_ok = ((m.e_eff - 62.52e9) / 62.52e9).abs() <= 0.05;
    out.record(
        10,
        s_ok && eta_ok && rho_ok && mu_ok && e_ok,
        format!(
            "Re(s) = {:.4} (0.041 +-20%), eta = {:.4}, rho_eff = {:.1} kg/m3, mu_eff = {:.3} GPa (24.05 +-5%), E_eff = {:.3} GPa (62.52 +-5%)",
            m.s.re,
            m.eta,
            m.rho_eff,
            m.mu_eff_dynamic / 1e9,
            m.e_eff / 1e9
        ),
    );

    let r2: Vec<f64> = m
        .frequencies
        .iter()
        .map(|f| f.prediction_r_squared)
        .collect();
    out.record(
        12,
        r2.iter().all(|&v| v >= 0.85),
        format!(
            "R^2 of homogenized prediction vs ensemble real part = {} (each >= 0.85)",
            fmt_list(&r2, 3)
        ),
    );

    let spread = |e: &EnsembleCurve, k: f64| -> f64 {
        let firsts: Vec<f64> = e.curves[..5]
            .iter()
            .map(|c| peak_values(&c.x, &c.w_re, 0.5 * PI / k)[0])
            .collect();
        let max = firsts.iter().cloned().fold(f64::MIN, f64::max);
        let min = firsts.iter().cloned().fold(f64::MAX, f64::min);
        max / min
    };
    let (k_lo, e_lo) = &run.ensembles[0];
    let (k_hi, e_hi) = run.ensembles.last().unwrap();
    let lo = spread(e_lo, *k_lo);
    let hi = spread(e_hi, *k_hi);
    out.record(
        13,
        (lo - 1.44).abs() <= 0.5 && (hi - 1.90).abs() <= 0.5 && hi > lo,
        format!("first-peak max/min over 5 layouts: ka=0.24 {lo:.3} (1.44 +-0.5), ka=1.20 {hi:.3} (1.90 +-0.5), growing: {}", hi > lo),
    );
}

fn fmt_list(v: &[f64], digits: usize) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.digits$}")).collect();
    format!("[{}]", items.join(", "))
}

fn main() {
    let start = Instant::now();
    let mut out = Outcome {
        failures: Vec::new(),
    };
    special_functions(&mut out);
    graf(&mut out);
    single_cavity(&mut out);
    determinism(&mut out);
    scm(&mut out);
    residual_sweep(&mut out);
    zero_porosity(&mut out);
    full_scale(&mut out);
    println!(
        "acceptance: {} of 13 criteria passed in {:.0} s",
        13 - out.failures.len(),
        start.elapsed().as_secs_f64()
    );
    if !out.failures.is_empty() {
        println!("failed criteria: {:?}", out.failures);
        if std::env::var_os("POROWAVE_ACCEPTANCE_STRICT").is_some() {
            std::process::exit(1);
        }
    }
}
