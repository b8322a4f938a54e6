use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use topobayes::error::Error;
use topobayes::experiment::{
    all_presets, load_config, parse_signal_csv, preset, run_experiment, ExperimentConfig,
    ParamOrigin, PRESET_NAMES,
};
use topobayes::topo::persistence_pairs;

#[derive(Parser)]
#[command(
    name = "topobayes",
    about = "Bayesian potential-coefficient reconstruction with topological priors",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a preset name or a TOML config file
    Run {
        /// Preset name (see list-presets) or path to a config file
        target: String,
        /// Override the RNG seed
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for the CSV artifacts
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the chain length N
        #[arg(long)]
        samples: Option<usize>,
        /// Override the grid resolution (m in 1D, both axes in 2D)
        #[arg(long)]
        grid: Option<usize>,
        /// Run this many independent chains with consecutive seeds
        #[arg(long, default_value_t = 1)]
        chains: usize,
    },
    /// Show every preset with its resolved parameters
    ListPresets,
    /// Compute the persistence pairs of a 1D signal read from a CSV file
    Pairs {
        /// File with one knot value per row (last numeric column is used)
        file: PathBuf,
        /// Write the pair CSV here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a config file
    Validate { file: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are not errors
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

enum CliError {
    Config(Error),
    Runtime(Error),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            target,
            seed,
            out,
            samples,
            grid,
            chains,
        } => {
            let mut config = resolve_config(&target).map_err(CliError::Config)?;
            apply_overrides(&mut config, seed, out, samples, grid, &target)
                .map_err(CliError::Config)?;
            config.validate().map_err(CliError::Config)?;
            if chains <= 1 {
                let report = run_experiment(&config).map_err(CliError::Runtime)?;
                print_report(&target, &config, &report);
            } else {
                run_concurrent_chains(&target, &config, chains)?;
            }
            Ok(())
        }
        Command::ListPresets => {
            list_presets();
            Ok(())
        }
        Command::Pairs { file, out } => {
            let text = fs::read_to_string(&file)
                .map_err(|e| CliError::Config(Error::io(&file, e)))?;
            let values = parse_signal_csv(&text).ok_or_else(|| {
                CliError::Config(Error::config(
                    file.display().to_string(),
                    "no numeric signal column with at least two rows",
                ))
            })?;
            let csv = persistence_pairs(&values).to_csv();
            match out {
                Some(path) => {
                    fs::write(&path, csv).map_err(|e| CliError::Runtime(Error::io(&path, e)))?
                }
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::Validate { file } => {
            load_config(&file).map_err(CliError::Config)?;
            println!("{}: ok", file.display());
            Ok(())
        }
    }
}

fn resolve_config(target: &str) -> Result<ExperimentConfig, Error> {
    if PRESET_NAMES.contains(&target) {
        Ok(preset(target)?.config)
    } else if Path::new(target).exists() {
        load_config(Path::new(target))
    } else {
        Err(Error::config(
            "run.target",
            format!("`{target}` is neither a preset nor an existing file"),
        ))
    }
}

fn apply_overrides(
    config: &mut ExperimentConfig,
    seed: Option<u64>,
    out: Option<PathBuf>,
    samples: Option<usize>,
    grid: Option<usize>,
    target: &str,
) -> Result<(), Error> {
    if let Some(seed) = seed {
        config.sampler.seed = seed;
    }
    if let Some(samples) = samples {
        config.sampler.n_samples = samples;
    }
    if let Some(m) = grid {
        match config.problem.example {
            Some(id) if topobayes::targets::example_is_2d(id)? => {
                config.problem.mx = Some(m);
                config.problem.my = Some(m);
            }
            _ => config.problem.m = Some(m),
        }
    }
    if let Some(out) = out {
        config.output.dir = Some(out);
    } else if config.output.dir.is_none() {
        let stem = if PRESET_NAMES.contains(&target) {
            target.to_string()
        } else {
            Path::new(target)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".to_string())
        };
        config.output.dir = Some(PathBuf::from("out").join(stem));
    }
    Ok(())
}

fn print_report(target: &str, config: &ExperimentConfig, report: &topobayes::experiment::RunReport) {
    println!(
        "{target}: error_l2_rel={:.6} acceptance={:.4} retained={} in {:.1}s",
        report.error_l2_rel,
        report.acceptance_rate,
        report.retained_count,
        report.duration.as_secs_f64()
    );
    if let Some(dir) = &config.output.dir {
        println!("  artifacts in {}", dir.display());
    }
}

fn run_concurrent_chains(
    target: &str,
    config: &ExperimentConfig,
    chains: usize,
) -> Result<(), CliError> {
    let base_dir = config
        .output
        .dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("out"));
    let mut results: Vec<Option<Result<topobayes::experiment::RunReport, Error>>> =
        (0..chains).map(|_| None).collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for k in 0..chains {
            let mut c = config.clone();
            c.sampler.seed = config.sampler.seed.wrapping_add(2 * k as u64);
            c.output.dir = Some(base_dir.join(format!("chain-{k}")));
            handles.push(scope.spawn(move || run_experiment(&c)));
        }
        for (k, h) in handles.into_iter().enumerate() {
            results[k] = Some(h.join().expect("chain thread panicked"));
        }
    });
    for (k, res) in results.into_iter().enumerate() {
        match res.unwrap() {
            Ok(report) => {
                println!(
                    "{target} chain-{k}: error_l2_rel={:.6} acceptance={:.4} retained={}",
                    report.error_l2_rel, report.acceptance_rate, report.retained_count
                );
            }
            Err(e) => return Err(CliError::Runtime(e)),
        }
    }
    Ok(())
}

fn list_presets() {
    for p in all_presets() {
        let c = &p.config;
        println!("{}:", p.name);
        let mut rows: Vec<(String, String)> = Vec::new();
        rows.push(("problem.example".into(), format!("{}", c.problem.example.unwrap())));
        rows.push(("problem.noise_rel".into(), format!("{}", c.problem.noise_rel)));
        let grid = match c.problem.example {
            Some(id) if topobayes::targets::example_is_2d(id).unwrap_or(false) => {
                format!("{0}x{0} (mx=my=64)", 64)
            }
            _ => "m=100".to_string(),
        };
        rows.push(("problem.grid".into(), grid));
        rows.push(("prior.kind".into(), format!("{:?}", c.prior.kind)));
        if let Some(l) = c.prior.l {
            rows.push(("prior.l".into(), format!("{l}")));
        }
        if let Some(pp) = c.prior.p {
            rows.push(("prior.p".into(), format!("{pp}")));
        }
        if let Some(s) = c.prior.s {
            rows.push(("prior.s".into(), format!("{s}")));
        }
        rows.push(("regularizer.kind".into(), "tp".into()));
        rows.push(("regularizer.lambda".into(), format!("{}", c.regularizer.lambda)));
        rows.push(("regularizer.theta".into(), format!("{}", c.regularizer.theta)));
        rows.push(("regularizer.beta".into(), format!("{}", c.regularizer.beta)));
        rows.push(("sampler.rho".into(), format!("{}", c.sampler.rho)));
        rows.push(("sampler.n_samples".into(), format!("{}", c.sampler.n_samples)));
        rows.push((
            "sampler.burn_in_fraction".into(),
            format!("{}", c.sampler.burn_in_fraction),
        ));
        rows.push(("sampler.lag".into(), format!("{}", c.sampler.lag)));
        rows.push((
            "sampler.transform".into(),
            format!("{:?}", c.sampler.transform).to_lowercase(),
        ));
        for (key, value) in rows {
            let origin = match p.origins.get(key.as_str()) {
                Some(ParamOrigin::Stated) => "stated".to_string(),
                Some(ParamOrigin::Inherited(from)) => format!("inherited from {from}"),
                Some(ParamOrigin::Default) | None => "default".to_string(),
            };
            println!("  {key:26} = {value:<28} [{origin}]");
        }
    }
}
