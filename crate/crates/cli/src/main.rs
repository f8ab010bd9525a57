//! `pointeit`: synthetic data, forward solves, gradient checks and shape
//! reconstruction from a TOML experiment config.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use pointeit::config::Config;
use pointeit::experiment;
use pointeit::forward::MeasurementSet;
use pointeit::inversion::write_history_csv;
use pointeit::levelset::{write_grid, write_vtk};

#[derive(Parser)]
#[command(name = "pointeit", version, about = "Inclusion reconstruction from point measurements of the potential")]
struct Cli {
    /// Worker threads for the parallel loops (0 = rayon default).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `noise.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic measurements for the configured scenario.
    MakeData(Common),
    /// Reconstruct the inclusion from a measurement file.
    Invert {
        #[command(flatten)]
        common: Common,
        /// Measurement CSV written by `make-data`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Compare finite differences of J with the distributed shape derivative.
    CheckGradient {
        #[command(flatten)]
        common: Common,
        /// Measurement CSV; generated from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Solve the state problems of the scenario phantom.
    Forward(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    #[cfg(feature = "parallel")]
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("thread pool")?;
    }
    #[cfg(not(feature = "parallel"))]
    if cli.threads > 1 {
        log::warn!("built without the parallel feature; --threads is ignored");
    }
    match cli.command {
        Command::MakeData(c) => make_data(&c),
        Command::Invert { common, data } => invert(&common, &data),
        Command::CheckGradient { common, data } => check_gradient(&common, data.as_deref()),
        Command::Forward(c) => forward(&c),
    }
}

fn load_config(c: &Common) -> Result<Config> {
    let mut cfg = Config::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.noise.seed = seed;
    }
    fs::create_dir_all(&c.out_dir).with_context(|| format!("creating {}", c.out_dir.display()))?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn read_data(path: &Path) -> Result<MeasurementSet> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    MeasurementSet::read_csv(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn make_data(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let data = experiment::make_data(&cfg)?;
    let path = c.out_dir.join("measurements.csv");
    data.write_csv(create(&path)?)?;
    println!(
        "wrote {} K={} I={} delta={} noise_level={:.6}",
        path.display(),
        data.point_count(),
        data.current_count(),
        data.noise.delta,
        data.noise.level
    );
    Ok(())
}

fn invert(c: &Common, data_path: &Path) -> Result<()> {
    let cfg = load_config(c)?;
    let data = read_data(data_path)?;
    let start = Instant::now();
    let (mesh, result) = experiment::invert(&cfg, &data)?;
    let elapsed = start.elapsed();

    write_history_csv(&result.history, create(&c.out_dir.join("history.csv"))?)?;
    write_grid(&result.levelset.values, &mesh, create(&c.out_dir.join("levelset_final.txt"))?)?;
    for (it, phi) in &result.snapshots {
        write_grid(&phi.values, &mesh, create(&c.out_dir.join(format!("levelset_{it:04}.txt")))?)?;
    }
    if cfg.output.vtk {
        write_vtk("phi", &result.levelset.values, &mesh, create(&c.out_dir.join("levelset_final.vtk"))?)?;
    }
    let last = result.final_record();
    println!(
        "J={:e} E={:.6} iterations={} status={} time={:.2}s",
        last.objective,
        last.error,
        last.iteration,
        result.status.as_str(),
        elapsed.as_secs_f64()
    );
    Ok(())
}

fn check_gradient(c: &Common, data_path: Option<&Path>) -> Result<()> {
    let cfg = load_config(c)?;
    let data = match data_path {
        Some(p) => read_data(p)?,
        None => experiment::make_data(&cfg)?,
    };
    let rows = experiment::check_gradient(&cfg, &data, &[1e-2, 1e-3, 1e-4])?;
    println!("{:>10} {:>16} {:>16} {:>12}", "t", "fd", "distributed", "mismatch");
    for (k, r) in rows.iter().enumerate() {
        let label = if k == 0 { "V=0" } else { "" };
        println!(
            "{:>10.0e} {:>16.8e} {:>16.8e} {:>12.4e} {label}",
            r.t, r.finite_difference, r.distributed, r.mismatch
        );
    }
    Ok(())
}

fn forward(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let (mesh, states, sampled) = experiment::forward(&cfg)?;
    for (i, u) in states.iter().enumerate() {
        write_grid(u, &mesh, create(&c.out_dir.join(format!("state_{}.txt", i + 1)))?)?;
        if cfg.output.vtk {
            write_vtk("u", u, &mesh, create(&c.out_dir.join(format!("state_{}.vtk", i + 1)))?)?;
        }
    }
    let path = c.out_dir.join("sampled.csv");
    sampled.write_csv(create(&path)?)?;
    println!(
        "wrote {} state grids and {} K={} I={}",
        states.len(),
        path.display(),
        sampled.point_count(),
        sampled.current_count()
    );
    Ok(())
}
