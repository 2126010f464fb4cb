//! Stage drivers behind the command-line subcommands. Each stage writes its
//! artifacts under the output directory; file names embed `ka`, `L` and the
//! seed, and every file opens with a `# porowave config_hash=... seed=...`
//! comment.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{OutputFormat, RunConfig};
use crate::ensemble::{
    ensemble_average, evaluate_grid, sectional_average, solve_layouts, EnsembleCurve,
    SectionalCurve,
};
use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::geometry::{layout_seed, rsa_place, CavityLayout, Point, SegmentSpec};
use crate::homogenize::{homogenize, HomogenizedModel};
use crate::scatter::{
    boundary_residual, field_at, graf_series, i_pow, neumann_coefficient, solve_problem,
    FieldEvaluator, ProblemSpec,
};
use crate::specfun::{bessel_j, bessel_y, hankel1, wronskian_value};

/// A column-oriented table rendered as CSV or JSON.
struct DataTable {
    comments: Vec<String>,
    columns: Vec<&'static str>,
    rows: Vec<Vec<Cell>>,
}

enum Cell {
    Int(i64),
    Float(f64),
}

impl DataTable {
    fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Csv => {
                let mut out = String::new();
                for c in &self.comments {
                    out.push_str("# ");
                    out.push_str(c);
                    out.push('\n');
                }
                out.push_str(&self.columns.join(","));
                out.push('\n');
                for row in &self.rows {
                    let cells: Vec<String> = row
                        .iter()
                        .map(|c| match c {
                            Cell::Int(i) => i.to_string(),
                            Cell::Float(f) => fmt_f64(*f),
                        })
                        .collect();
                    out.push_str(&cells.join(","));
                    out.push('\n');
                }
                out
            }
            OutputFormat::Json => {
                let rows: Vec<Value> = self
                    .rows
                    .iter()
                    .map(|r| {
                        Value::Array(
                            r.iter()
                                .map(|c| match c {
                                    Cell::Int(i) => json!(i),
                                    Cell::Float(f) => json!(f),
                                })
                                .collect(),
                        )
                    })
                    .collect();
                let doc = json!({
                    "comments": self.comments,
                    "columns": self.columns,
                    "rows": rows,
                });
                let mut s = serde_json::to_string_pretty(&doc).expect("plain data");
                s.push('\n');
                s
            }
        }
    }
}

fn curve_table(curve: &SectionalCurve, comments: Vec<String>) -> DataTable {
    DataTable {
        comments,
        columns: vec!["x_m", "w_re", "w_im", "amplitude"],
        rows: (0..curve.len())
            .map(|g| {
                vec![
                    Cell::Float(curve.x[g]),
                    Cell::Float(curve.w_re[g]),
                    Cell::Float(curve.w_im[g]),
                    Cell::Float(curve.amplitude[g]),
                ]
            })
            .collect(),
    }
}

fn read_curve(text: &str, format: OutputFormat) -> Option<SectionalCurve> {
    match format {
        OutputFormat::Csv => SectionalCurve::from_csv(text).ok(),
        OutputFormat::Json => {
            let doc: Value = serde_json::from_str(text).ok()?;
            let rows = doc.get("rows")?.as_array()?;
            let (mut x, mut re, mut im, mut amp) = (vec![], vec![], vec![], vec![]);
            for r in rows {
                let r = r.as_array()?;
                x.push(r.first()?.as_f64()?);
                re.push(r.get(1)?.as_f64()?);
                im.push(r.get(2)?.as_f64()?);
                amp.push(r.get(3)?.as_f64()?);
            }
            let c = SectionalCurve::new(x, re, im).ok()?;
            (c.amplitude == amp).then_some(c)
        }
    }
}

fn comments_of(text: &str, format: OutputFormat) -> Vec<String> {
    match format {
        OutputFormat::Csv => text
            .lines()
            .take_while(|l| l.starts_with('#'))
            .map(|l| l.trim_start_matches('#').trim().to_string())
            .collect(),
        OutputFormat::Json => serde_json::from_str::<Value>(text)
            .ok()
            .and_then(|d| d.get("comments").cloned())
            .and_then(|c| serde_json::from_value(c).ok())
            .unwrap_or_default(),
    }
}

/// Everything a stage needs: the validated config and where to write.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub out_dir: PathBuf,
    pub hash: String,
    /// Layouts solved concurrently between checkpoint writes.
    pub batch: usize,
    pub quiet: bool,
}

impl Context {
    pub fn new(config: RunConfig, out_dir: Option<PathBuf>, batch: usize) -> Self {
        let out_dir = out_dir.unwrap_or_else(|| PathBuf::from(&config.output_directory));
        let hash = config.hash();
        Context {
            config,
            out_dir,
            hash,
            batch: batch.max(1),
            quiet: false,
        }
    }

    fn ext(&self) -> &'static str {
        self.config.format.as_str()
    }

    fn header(&self, seed: u64) -> String {
        format!("porowave config_hash={} seed={}", self.hash, seed)
    }

    fn note(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))?;
        let path = self.out_dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    fn ka_tag(&self, k: f64) -> String {
        format!("ka{:.4}", k * self.config.segment.radius)
    }

    pub fn layout_path(&self, index: usize, seed: u64) -> PathBuf {
        self.out_dir
            .join(format!("layout_i{index:03}_seed{seed}.{}", self.ext()))
    }

    pub fn checkpoint_path(&self, k: f64, index: usize, seed: u64) -> PathBuf {
        self.out_dir.join(format!(
            "sectional_{}_i{index:03}_seed{seed}.{}",
            self.ka_tag(k),
            self.ext()
        ))
    }

    pub fn ensemble_path(&self, k: f64) -> PathBuf {
        self.out_dir.join(format!(
            "ensemble_{}_L{}_seed{}.{}",
            self.ka_tag(k),
            self.config.layouts,
            self.config.master_seed,
            self.ext()
        ))
    }

    pub fn report_path(&self) -> PathBuf {
        self.out_dir.join(format!(
            "homogenization_L{}_seed{}.txt",
            self.config.layouts, self.config.master_seed
        ))
    }

    fn name(path: &Path) -> String {
        path.file_name()
            .expect("file path")
            .to_string_lossy()
            .into_owned()
    }
}

fn layout_table(layout: &CavityLayout, comments: Vec<String>) -> DataTable {
    DataTable {
        comments,
        columns: vec!["index", "x_m", "y_m", "radius_m"],
        rows: layout
            .centers
            .iter()
            .enumerate()
            .map(|(i, c)| {
                vec![
                    Cell::Int(i as i64),
                    Cell::Float(c.x),
                    Cell::Float(c.y),
                    Cell::Float(layout.spec.radius),
                ]
            })
            .collect(),
    }
}

/// Write the `L` layouts of the ensemble.
pub fn run_layout_stage(ctx: &Context) -> Result<Vec<PathBuf>> {
    let cfg = &ctx.config;
    let rsa = cfg.rsa_options();
    let layouts: Vec<(usize, u64, CavityLayout)> = (0..cfg.layouts)
        .map(|i| {
            let seed = layout_seed(cfg.master_seed, i);
            rsa_place(&cfg.segment, &rsa, seed).map(|l| (i, seed, l))
        })
        .collect::<std::result::Result<_, _>>()?;
    let mut paths = Vec::new();
    for (i, seed, layout) in layouts {
        let path = ctx.layout_path(i, seed);
        let table = layout_table(&layout, vec![ctx.header(seed)]);
        paths.push(ctx.write(&Context::name(&path), &table.render(cfg.format))?);
    }
    ctx.note(&format!(
        "wrote {} layouts to {}",
        paths.len(),
        ctx.out_dir.display()
    ));
    Ok(paths)
}

/// Summary of a single solve.
#[derive(Debug, Clone)]
pub struct SolveSummary {
    pub seed: u64,
    pub wavenumber: f64,
    pub residual_norm: f64,
    pub condition_estimate: f64,
    pub mirror_tail: f64,
    pub boundary_residual: f64,
    pub files: Vec<PathBuf>,
}

/// One layout, one wavenumber: coefficients, sectional curve and layout.
pub fn run_solve_stage(ctx: &Context, k: f64, index: usize) -> Result<SolveSummary> {
    let cfg = &ctx.config;
    let seed = layout_seed(cfg.master_seed, index);
    let layout = rsa_place(&cfg.segment, &cfg.rsa_options(), seed)?;
    let spec = cfg.monte_carlo(k).problem(layout);
    let solution = solve_problem(&spec)?;
    let field = evaluate_grid(&solution, &spec, &cfg.grid)?;
    let curve = sectional_average(&field, cfg.average_mode);
    let residual = boundary_residual(&solution, &spec, 64)?;

    let tag = ctx.ka_tag(k);
    let ext = ctx.ext();
    let header = vec![
        ctx.header(seed),
        format!(
            "k_per_m={} layout_index={index} residual_norm={} condition_estimate={} mirror_tail={} boundary_residual={}",
            fmt_f64(k),
            fmt_f64(solution.residual_norm),
            fmt_f64(solution.condition_estimate),
            fmt_f64(solution.mirror_tail),
            fmt_f64(residual)
        ),
    ];
    let m = solution.truncation as i32;
    let coeffs = DataTable {
        comments: header.clone(),
        columns: vec!["j", "n", "Re(C)", "Im(C)"],
        rows: (0..solution.cavity_count)
            .flat_map(|j| (-m..=m).map(move |n| (j, n)))
            .map(|(j, n)| {
                let c = solution.c(j, n);
                vec![
                    Cell::Int(j as i64),
                    Cell::Int(n as i64),
                    Cell::Float(c.re),
                    Cell::Float(c.im),
                ]
            })
            .collect(),
    };
    let files = vec![
        ctx.write(
            &format!("coefficients_{tag}_seed{seed}.{ext}"),
            &coeffs.render(cfg.format),
        )?,
        ctx.write(
            &format!("sectional_{tag}_seed{seed}.{ext}"),
            &curve_table(&curve, header.clone()).render(cfg.format),
        )?,
        ctx.write(
            &Context::name(&ctx.layout_path(index, seed)),
            &layout_table(&spec.layout, vec![ctx.header(seed)]).render(cfg.format),
        )?,
    ];
    Ok(SolveSummary {
        seed,
        wavenumber: k,
        residual_norm: solution.residual_norm,
        condition_estimate: solution.condition_estimate,
        mirror_tail: solution.mirror_tail,
        boundary_residual: residual,
        files,
    })
}

fn load_checkpoint(ctx: &Context, path: &Path, seed: u64) -> Option<SectionalCurve> {
    let text = fs::read_to_string(path).ok()?;
    let comments = comments_of(&text, ctx.config.format);
    if comments.first()? != &ctx.header(seed) {
        return None;
    }
    let curve = read_curve(&text, ctx.config.format)?;
    (curve.len() == ctx.config.grid.nx).then_some(curve)
}

/// Monte-Carlo ensemble for one wavenumber. Per-layout curves already on
/// disk with a matching header are reused.
pub fn run_ensemble_for(ctx: &Context, k: f64) -> Result<EnsembleCurve> {
    let cfg = &ctx.config;
    let mc = cfg.monte_carlo(k);
    let mut curves = Vec::with_capacity(cfg.layouts);
    let mut start = 0;
    while start < cfg.layouts {
        let end = (start + ctx.batch).min(cfg.layouts);
        let outcomes = solve_layouts(&mc, start..end, |i, seed| {
            load_checkpoint(ctx, &ctx.checkpoint_path(k, i, seed), seed)
        })?;
        for o in outcomes {
            if let Some(d) = o.diagnostics {
                let header = vec![
                    ctx.header(o.seed),
                    format!(
                        "k_per_m={} layout_index={} resamples={} residual_norm={} condition_estimate={} mirror_tail={} interior_points={}",
                        fmt_f64(k),
                        o.index,
                        o.resamples,
                        fmt_f64(d.residual_norm),
                        fmt_f64(d.condition_estimate),
                        fmt_f64(d.mirror_tail),
                        d.interior_points
                    ),
                ];
                let path = ctx.checkpoint_path(k, o.index, o.seed);
                ctx.write(
                    &Context::name(&path),
                    &curve_table(&o.curve, header).render(cfg.format),
                )?;
            }
            curves.push(o.curve);
        }
        ctx.note(&format!("{}: {end}/{} layouts", ctx.ka_tag(k), cfg.layouts));
        start = end;
    }
    let ens = ensemble_average(curves, cfg.master_seed)?;
    let comments = vec![
        ctx.header(cfg.master_seed),
        format!(
            "L={} master_seed={} k_per_m={}",
            cfg.layouts,
            cfg.master_seed,
            fmt_f64(k)
        ),
    ];
    let path = ctx.ensemble_path(k);
    ctx.write(
        &Context::name(&path),
        &curve_table(&ens.mean_curve(), comments).render(cfg.format),
    )?;
    Ok(ens)
}

pub fn run_ensemble_stage(ctx: &Context) -> Result<Vec<(f64, EnsembleCurve)>> {
    ctx.config
        .wavenumbers
        .iter()
        .map(|&k| run_ensemble_for(ctx, k).map(|e| (k, e)))
        .collect()
}

/// Fit the sweep and write the report plus one prediction table per
/// wavenumber (`x_m,observed_re,predicted_re,predicted_im`).
pub fn run_homogenize_stage(ctx: &Context) -> Result<HomogenizedModel> {
    let sweep = run_ensemble_stage(ctx)?;
    let cfg = &ctx.config;
    let pairs: Vec<(f64, &EnsembleCurve)> = sweep.iter().map(|(k, e)| (*k, e)).collect();
    let model = homogenize(&pairs, &cfg.homogenize_params())?;
    let provenance = vec![
        ctx.header(cfg.master_seed),
        format!(
            "L={} master_seed={} M={} Q={} N={} grid={}x{} average_mode={}",
            cfg.layouts,
            cfg.master_seed,
            cfg.truncation,
            cfg.mirrors,
            cfg.segment.count,
            cfg.grid.nx,
            cfg.grid.ny,
            cfg.average_mode.as_str()
        ),
    ];
    ctx.write(
        &Context::name(&ctx.report_path()),
        &model.report(&provenance),
    )?;
    for (i, (k, ens)) in sweep.iter().enumerate() {
        let table = DataTable {
            comments: provenance.clone(),
            columns: vec!["x_m", "observed_re", "predicted_re", "predicted_im"],
            rows: ens
                .x
                .iter()
                .zip(&ens.mean_re)
                .map(|(&x, &re)| {
                    let p = model.predict(i, x);
                    vec![
                        Cell::Float(x),
                        Cell::Float(re),
                        Cell::Float(p.re),
                        Cell::Float(p.im),
                    ]
                })
                .collect(),
        };
        ctx.write(
            &format!(
                "homogenized_{}_L{}_seed{}.{}",
                ctx.ka_tag(*k),
                cfg.layouts,
                cfg.master_seed,
                ctx.ext()
            ),
            &table.render(cfg.format),
        )?;
    }
    Ok(model)
}

/// One line of the verification suite.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub worst: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

fn log_grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
}

/// Largest relative error of the 40-term Graf series over random
/// geometries with `|v| <= 0.3 |u|` and `k |v| <= 8` (the regime of the
/// assembly, where `|v|` is at most a cavity radius).
pub fn graf_worst_error(rng: &mut ChaCha8Rng, samples: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let k: f64 = rng.random_range(100.0..3000.0);
        let ru: f64 = rng.random_range(1e-3..0.02);
        let rv = (ru * rng.random_range(0.02..0.3_f64)).min(8.0 / k);
        let (tu, tv) = (rng.random_range(-PI..PI), rng.random_range(-PI..PI));
        let n = rng.random_range(-10..=10);
        let u = Point::new(ru * tu.cos(), ru * tu.sin());
        let v = Point::new(rv * tv.cos(), rv * tv.sin());
        let w = Point::new(u.x + v.x, u.y + v.y);
        let exact =
            hankel1(n, k * w.x.hypot(w.y))? * Complex64::from_polar(1.0, n as f64 * w.y.atan2(w.x));
        let series = graf_series(n, k, u, v, 40)?;
        worst = worst.max((exact - series).norm() / exact.norm());
    }
    Ok(worst)
}

/// Invariant suite: Wronskian, Graf translation, unitarity, single-cavity
/// closed form, and the wall condition on a sparse configuration.
pub fn verification_checks(cfg: &RunConfig, seed: u64) -> Result<Vec<Check>> {
    let mut checks = Vec::new();

    let mut worst: f64 = 0.0;
    for x in log_grid(0.1, 1e4, 60) {
        let w = wronskian_value(x);
        for n in 0..=30 {
            let lhs = bessel_j(n + 1, x)? * bessel_y(n, x)? - bessel_j(n, x)? * bessel_y(n + 1, x)?;
            worst = worst.max(((lhs - w) / w).abs());
        }
    }
    checks.push(Check {
        name: "wronskian",
        worst,
        tolerance: 1e-12,
    });

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let worst = graf_worst_error(&mut rng, 100)?;
    checks.push(Check {
        name: "graf_translation",
        worst,
        tolerance: 1e-10,
    });

    let mut worst: f64 = 0.0;
    for ka in log_grid(1e-3, 50.0, 80) {
        for n in 0..=20 {
            let b = neumann_coefficient(n, ka)?;
            worst = worst
                .max(((Complex64::new(1.0, 0.0) + 2.0 * Complex64::i() * b).norm() - 1.0).abs());
        }
    }
    checks.push(Check {
        name: "unitarity",
        worst,
        tolerance: 1e-12,
    });

    let a = cfg.segment.radius;
    let mut worst: f64 = 0.0;
    for &k in &cfg.wavenumbers {
        let single = CavityLayout {
            spec: SegmentSpec {
                count: 1,
                ..cfg.segment
            },
            centers: vec![Point::new(0.0, 0.0)],
            seed: 0,
        };
        let spec = ProblemSpec {
            truncation: cfg.truncation,
            mirrors: 0,
            ..cfg.monte_carlo(k).problem(single)
        };
        let sol = solve_problem(&spec)?;
        let m = cfg.truncation as i32;
        let b: Vec<Complex64> = (-m..=m)
            .map(|n| neumann_coefficient(n, k * a))
            .collect::<std::result::Result<_, _>>()?;
        for _ in 0..200 {
            let r = a * rng.random_range(1.0..20.0);
            let th = rng.random_range(-PI..PI);
            let p = Point::new(r * th.cos(), r * th.sin());
            let got = field_at(p, &sol, &spec)?.displacement;
            let mut want = Complex64::from_polar(1.0, k * p.x);
            for n in -m..=m {
                want += i_pow(n)
                    * Complex64::i()
                    * b[(n + m) as usize]
                    * hankel1(n, k * r)?
                    * Complex64::from_polar(1.0, n as f64 * th);
            }
            worst = worst.max((got - want).norm());
        }
    }
    checks.push(Check {
        name: "single_cavity_closed_form",
        worst,
        tolerance: 1e-10,
    });

    // Four cavities at least 8a apart; M is raised to at least 10 so the
    // check does not depend on a coarse run truncation.
    let kmax = cfg.wavenumbers.iter().cloned().fold(0.0, f64::max);
    let t = cfg.segment.length;
    let h = cfg.segment.height;
    let sparse = CavityLayout {
        spec: SegmentSpec {
            count: 4,
            ..cfg.segment
        },
        centers: vec![
            Point::new(0.2 * t, 0.1 * h),
            Point::new(0.2 * t + 10.0 * a, -0.2 * h),
            Point::new(0.55 * t, 0.3 * h),
            Point::new(0.8 * t, -0.15 * h),
        ],
        seed: 0,
    };
    let spec = ProblemSpec {
        truncation: cfg.truncation.max(10),
        mirrors: cfg.mirrors,
        ..cfg.monte_carlo(kmax).problem(sparse)
    };
    let sol = solve_problem(&spec)?;
    let ev = FieldEvaluator::accelerated(&spec, &sol)?;
    let worst = crate::scatter::boundary_residual_with(&ev, &spec, 64)?;
    checks.push(Check {
        name: "boundary_residual_sparse",
        worst,
        tolerance: 1e-6,
    });
    Ok(checks)
}

pub fn run_verify_stage(ctx: &Context, seed: u64) -> Result<Vec<Check>> {
    let checks = verification_checks(&ctx.config, seed)?;
    let mut text = format!("# {}\ncheck,worst,tolerance,status\n", ctx.header(seed));
    for c in &checks {
        text.push_str(&format!(
            "{},{},{},{}\n",
            c.name,
            fmt_f64(c.worst),
            fmt_f64(c.tolerance),
            if c.passed() { "pass" } else { "fail" }
        ));
    }
    ctx.write(&format!("verify_seed{seed}.csv"), &text)?;
    if let Some(bad) = checks.iter().find(|c| !c.passed()) {
        return Err(Error::Verification(format!(
            "{}: {:e} exceeds {:e}",
            bad.name, bad.worst, bad.tolerance
        )));
    }
    Ok(checks)
}
