use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use porowave::config::{parse_config, RunConfig};
use porowave::error::Error;
use porowave::pipeline::{
    run_ensemble_stage, run_homogenize_stage, run_layout_stage, run_solve_stage, run_verify_stage,
    Context,
};

#[derive(Parser)]
#[command(
    name = "porowave",
    version,
    about = "SH-wave multiple scattering in porous solids"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads.
    #[arg(long, global = true, env = "POROWAVE_JOBS")]
    jobs: Option<usize>,

    /// Overrides ensemble.master_seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides outputs.directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides outputs.format (csv or json).
    #[arg(long, global = true)]
    format: Option<String>,

    /// Suppress progress messages.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write the cavity layouts of the ensemble.
    Layout,
    /// Solve one layout at one wavenumber.
    Solve {
        /// Wavenumber (1/m); defaults to the first of the sweep.
        #[arg(long)]
        k: Option<f64>,
        /// Which ensemble layout to solve.
        #[arg(long, default_value_t = 0)]
        layout_index: usize,
    },
    /// Monte-Carlo ensemble for every wavenumber of the sweep.
    Ensemble,
    /// Fit the ensembles and write the homogenization report.
    Homogenize,
    /// Run the numerical invariant suite.
    Verify,
}

fn load(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_config(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    if let Some(f) = &cli.format {
        cfg.format = porowave::config::OutputFormat::parse(f).ok_or_else(|| {
            Error::Config(porowave::error::ConfigError::Constraint {
                key: "outputs.format".into(),
                line: None,
                message: format!("expected csv or json, got {f}"),
            })
        })?;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = load(cli)?;
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("thread pool");
    let mut ctx = Context::new(cfg, cli.out.clone(), jobs);
    ctx.quiet = cli.quiet;
    pool.install(|| match &cli.command {
        Command::Layout => run_layout_stage(&ctx).map(|_| ()),
        Command::Solve { k, layout_index } => {
            let k = k.unwrap_or(ctx.config.wavenumbers[0]);
            let s = run_solve_stage(&ctx, k, *layout_index)?;
            println!(
                "k={} seed={} residual_norm={:e} condition_estimate={:e} mirror_tail={:e} boundary_residual={:e}",
                s.wavenumber, s.seed, s.residual_norm, s.condition_estimate, s.mirror_tail, s.boundary_residual
            );
            Ok(())
        }
        Command::Ensemble => {
            for (k, e) in run_ensemble_stage(&ctx)? {
                let last = e.mean_amplitude.last().copied().unwrap_or(f64::NAN);
                println!("k={k} L={} final_amplitude={last}", e.layouts());
            }
            Ok(())
        }
        Command::Homogenize => {
            let m = run_homogenize_stage(&ctx)?;
            println!(
                "structural_damping={} mu_eff_dynamic={} E_eff={} report={}",
                m.s.re,
                m.mu_eff_dynamic,
                m.e_eff,
                ctx.report_path().display()
            );
            Ok(())
        }
        Command::Verify => {
            let checks = run_verify_stage(&ctx, ctx.config.master_seed)?;
            for c in checks {
                println!("pass {} worst={:e} tolerance={:e}", c.name, c.worst, c.tolerance);
            }
            Ok(())
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
