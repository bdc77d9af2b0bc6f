use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use forge_core::camera::build_condition_rig;
use forge_core::flowmatch::{euler_sample, train_toy, AffineModel, Coupling, GaussianPair, TanhMlp, Trainable, TrainConfig};
use forge_core::pipeline::{process_asset, run_batch, validate_record, PipelineConfig};
use forge_core::sampler::QueryComposition;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "forge", version, about = "Turn raw meshes into watertight SDF, surface-sample and render records")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Process one mesh into a record directory.
    Process {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: ConfigArgs,
    },
    /// Process every mesh listed in a manifest file.
    Batch {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[command(flatten)]
        opts: ConfigArgs,
    },
    /// Print a condition camera rig.
    Cameras {
        #[arg(long, default_value_t = 150)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_parser = parse_res, default_value = "512x512")]
        res: (u32, u32),
        #[arg(long)]
        canonical_fov: Option<f64>,
        #[arg(long)]
        json: bool,
    },
    /// Re-check a record directory.
    Validate {
        record: PathBuf,
        /// Compare counts against this config instead of the stored one.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Train the 2D Gaussian flow-matching toy and write the loss trace.
    FlowDemo {
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 256)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = ModelKind::Affine)]
        model: ModelKind,
        #[arg(long, default_value_t = 32)]
        hidden: usize,
        #[arg(long, value_enum, default_value_t = CouplingArg::Transport)]
        coupling: CouplingArg,
        #[arg(long)]
        out: PathBuf,
        /// Also write Euler samples of the trained model as CSV.
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        n_samples: usize,
        #[arg(long, default_value_t = 100)]
        euler_steps: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Affine,
    Mlp,
}

#[derive(Clone, Copy, ValueEnum)]
enum CouplingArg {
    Transport,
    Independent,
}

#[derive(Clone, Copy, ValueEnum)]
enum CompositionArg {
    NearUniform,
    NearSurface,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON file mirroring the pipeline config; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    views: Option<usize>,
    #[arg(long, value_parser = parse_res)]
    res: Option<(u32, u32)>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    canonical_fov: Option<f64>,
    #[arg(long, value_enum)]
    composition: Option<CompositionArg>,
    #[arg(long)]
    no_render: bool,
}

/// Bad flags or config; exits with status 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn parse_res(s: &str) -> std::result::Result<(u32, u32), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got '{s}'"))?;
    let w: u32 = w.trim().parse().map_err(|_| format!("bad width in '{s}'"))?;
    let h: u32 = h.trim().parse().map_err(|_| format!("bad height in '{s}'"))?;
    if w == 0 || h == 0 {
        return Err("resolution must be non-zero".into());
    }
    Ok((w, h))
}

fn load_config(opts: &ConfigArgs) -> Result<PipelineConfig> {
    let mut config = match &opts.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("bad config {}: {e}", path.display())))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(g) = opts.grid {
        config.grid_resolution = g;
    }
    if let Some(v) = opts.views {
        config.views = v;
    }
    if let Some((w, h)) = opts.res {
        config.render_size = [w, h];
    }
    if let Some(s) = opts.seed {
        config.seed = s;
    }
    if opts.canonical_fov.is_some() {
        config.canonical_fov = opts.canonical_fov;
    }
    if let Some(c) = opts.composition {
        config.composition = match c {
            CompositionArg::NearUniform => QueryComposition::NearUniform,
            CompositionArg::NearSurface => QueryComposition::NearSurface,
        };
    }
    if opts.no_render {
        config.stages.render = false;
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("FORGE_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| usage(format!("FORGE_THREADS must be a positive integer, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")?;
    }
    Ok(())
}

fn flow_demo<M: Trainable>(
    mut model: M,
    data: &GaussianPair,
    train: &TrainConfig,
    out: &Path,
    samples: Option<&Path>,
    n_samples: usize,
    euler_steps: usize,
) -> Result<()> {
    let trace = train_toy(&mut model, data, train).context("training diverged")?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in trace.iter().enumerate() {
        csv.push_str(&format!("{i},{l}\n"));
    }
    fs::write(out, csv).with_context(|| format!("writing {}", out.display()))?;
    let (first, last) = (trace[0], trace[trace.len() - 1]);
    println!("loss {first:.6} -> {last:.6} (ratio {:.4})", last / first);

    let mut rng = ChaCha8Rng::seed_from_u64(train.seed ^ 0x5eed);
    let noise = data.sample_noise(n_samples, &mut rng);
    let x = euler_sample(&model, &noise, &DMatrix::zeros(n_samples, model.cond_dim()), euler_steps)?;
    let mean = x.row_mean();
    println!("sample mean {:?} (target {:?})", mean.iter().collect::<Vec<_>>(), data.mean1);
    if let Some(path) = samples {
        let mut csv = String::new();
        let header: Vec<String> = (0..x.ncols()).map(|j| format!("x{j}")).collect();
        csv.push_str(&header.join(","));
        csv.push('\n');
        for row in x.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            csv.push_str(&cells.join(","));
            csv.push('\n');
        }
        fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Process { input, out, opts } => {
            let config = load_config(&opts)?;
            configure_threads()?;
            match process_asset(&input, &out, &config) {
                Ok(record) => {
                    println!(
                        "{}: {} query, {} surface, {} views -> {}",
                        record.asset_id,
                        record.counts.query_near + record.counts.query_second,
                        record.counts.surface_uniform + record.counts.surface_sharp,
                        record.counts.views,
                        out.display()
                    );
                    Ok(ExitCode::SUCCESS)
                }
                Err(e) => {
                    eprintln!("error: {}: {e}", input.display());
                    Ok(ExitCode::from(1))
                }
            }
        }
        Command::Batch {
            manifest,
            out,
            workers,
            opts,
        } => {
            let config = load_config(&opts)?;
            if workers == 0 {
                return Err(usage("--workers must be at least 1"));
            }
            configure_threads()?;
            let summary = run_batch(&manifest, &out, &config, workers).map_err(|e| match e {
                forge_core::Error::InvalidArgument(m) => usage(m),
                other => anyhow::Error::from(other),
            })?;
            for a in summary.assets.iter().filter(|a| !a.ok) {
                eprintln!(
                    "failed: {} at {}: {}",
                    a.id,
                    a.failed_stage.map(|s| s.as_str()).unwrap_or("?"),
                    a.error.as_deref().unwrap_or("")
                );
            }
            println!("ok {} failed {} in {:.1}s", summary.ok, summary.failed, summary.seconds);
            Ok(if summary.failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Cameras {
            n,
            seed,
            res,
            canonical_fov,
            json,
        } => {
            if n == 0 {
                return Err(usage("--n must be at least 1"));
            }
            let rig = build_condition_rig(n, seed, res, canonical_fov);
            let mut stdout = std::io::stdout().lock();
            if json {
                serde_json::to_writer_pretty(&mut stdout, &rig)?;
                writeln!(stdout)?;
            } else {
                writeln!(stdout, "offset {:.6} {:.6}", rig.offset[0], rig.offset[1])?;
                for (i, c) in rig.cameras.iter().enumerate() {
                    writeln!(
                        stdout,
                        "{i:3} pos {:9.4} {:9.4} {:9.4} fov {:6.2} r {:.4}",
                        c.position.x, c.position.y, c.position.z, c.fov_deg, c.radius
                    )?;
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { record, config, json } => {
            let expected = match config {
                Some(path) => {
                    let text = fs::read_to_string(&path)
                        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
                    Some(PipelineConfig::from_json(&text).map_err(|e| usage(format!("bad config: {e}")))?)
                }
                None => None,
            };
            let report = validate_record(&record, expected.as_ref())
                .with_context(|| format!("reading record {}", record.display()))?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                for issue in &report.issues {
                    println!("issue: {}", serde_json::to_string(issue)?);
                }
                println!(
                    "{}: {} files, {} issues",
                    report.asset_id,
                    report.files_checked,
                    report.issues.len()
                );
            }
            Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::FlowDemo {
            steps,
            lr,
            batch,
            seed,
            model,
            hidden,
            coupling,
            out,
            samples,
            n_samples,
            euler_steps,
        } => {
            if batch == 0 || n_samples == 0 || euler_steps == 0 || !(lr >= 0.0) {
                return Err(usage("batch, n-samples and euler-steps must be positive and lr non-negative"));
            }
            configure_threads()?;
            let data = GaussianPair {
                mean0: vec![0.0, 0.0],
                mean1: vec![3.0, 0.0],
                coupling: match coupling {
                    CouplingArg::Transport => Coupling::Transport,
                    CouplingArg::Independent => Coupling::Independent,
                },
            };
            let train = TrainConfig { lr, steps, batch, seed };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples = samples.as_deref();
            match model {
                ModelKind::Affine => flow_demo(
                    AffineModel::random(2, 0, 0.1, &mut rng),
                    &data,
                    &train,
                    &out,
                    samples,
                    n_samples,
                    euler_steps,
                )?,
                ModelKind::Mlp => flow_demo(
                    TanhMlp::random(2, 0, hidden, &mut rng),
                    &data,
                    &train,
                    &out,
                    samples,
                    n_samples,
                    euler_steps,
                )?,
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
