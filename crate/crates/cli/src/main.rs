//! `conboost` command-line front-end.

mod config;
mod table;

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use conboost::boost::{boost, cvrisk, BoostModel, PredictType};
use conboost::infer::{bootstrap_ci, effect, simultaneous_band, BootstrapConfig, ConfidenceBand};
use conboost::persist;
use conboost::simulate::{simulate, Scenario, SimConfig};
use conboost::{Dataset, Error};

use config::ModelConfig;

#[derive(Parser)]
#[command(name = "conboost", version, about = "Constrained componentwise boosting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model from a CSV file and a TOML configuration.
    Fit {
        data: PathBuf,
        config: PathBuf,
        /// Output model file.
        out: PathBuf,
    },
    /// Predict from a fitted model; writes CSV to stdout.
    Predict {
        model: PathBuf,
        data: PathBuf,
        #[arg(long = "type", value_enum, default_value_t = PredictKind::Link)]
        kind: PredictKind,
    },
    /// Export a learner's centered effect, optionally with bootstrap bands.
    Effects {
        model: PathBuf,
        /// Learner index, name or label.
        #[arg(long)]
        learner: String,
        #[arg(long, default_value_t = 100)]
        grid: usize,
        /// Add bootstrap confidence bands; needs the training data.
        #[arg(long, requires = "data")]
        ci: bool,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        boot: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.95])]
        levels: Vec<f64>,
        #[arg(long, value_enum, default_value_t = BandChoice::Pointwise)]
        band: BandChoice,
        #[arg(long, default_value_t = 5)]
        inner_folds: usize,
        #[arg(long, default_value_t = 200)]
        inner_m_max: usize,
        /// Bootstrap seed; defaults to the model's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a simulation study; writes per-replication metrics as CSV.
    Simulate {
        #[arg(value_parser = parse_scenario)]
        scenario: Scenario,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PredictKind {
    Link,
    Response,
}

#[derive(Clone, Copy, ValueEnum)]
enum BandChoice {
    Pointwise,
    Simultaneous,
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// A failure with its exit status.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn user(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: if e.is_numerical() { 3 } else { 2 },
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::user(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn read_data(path: &PathBuf) -> Result<Dataset, Failure> {
    let file = fs::File::open(path).map_err(|e| Failure::user(format!("{}: {e}", path.display())))?;
    table::read_dataset(file).map_err(|e| Failure::user(format!("{}: {e}", path.display())))
}

fn cmd_fit(data: &PathBuf, config: &PathBuf, out: &PathBuf) -> CmdResult {
    let text = fs::read_to_string(config).map_err(|e| Failure::user(format!("{}: {e}", config.display())))?;
    let cfg = ModelConfig::parse(&text).map_err(|e| Failure::user(format!("{}: {e}", config.display())))?;
    let data = read_data(data)?;
    let m_stop = match &cfg.cv {
        Some(cv) => {
            let res = cvrisk(
                &data,
                &cfg.response,
                &cfg.learners,
                cfg.loss,
                &cfg.boost_config(Some(0)),
                cv.resampling(),
                cv.m_max,
            )?;
            log::info!("cross-validated stopping iteration {}", res.m_stop);
            Some(res.m_stop)
        }
        None => None,
    };
    let model = boost(&data, &cfg.response, &cfg.learners, cfg.loss, &cfg.boost_config(m_stop))?;
    persist::save(&model, out)?;
    print_summary(&model)?;
    Ok(())
}

fn print_summary(model: &BoostModel) -> io::Result<()> {
    let mut out = io::stdout().lock();
    let counts = model.selection_counts();
    let total = model.trace.len().max(1) as f64;
    writeln!(out, "m_stop: {}", model.config.m_stop)?;
    writeln!(out, "learner\tselected\tfrequency")?;
    for (spec, c) in model.specs.iter().zip(counts) {
        writeln!(out, "{}\t{c}\t{:.3}", spec.label(), c as f64 / total)?;
    }
    if let Some(r) = model.risk.last() {
        writeln!(out, "final risk: {r}")?;
    }
    Ok(())
}

fn cmd_predict(model: &PathBuf, data: &PathBuf, kind: PredictKind) -> CmdResult {
    let model = persist::load(model)?;
    let data = read_data(data)?;
    if data.nrows() == 0 {
        return Ok(());
    }
    let kind = match kind {
        PredictKind::Link => PredictType::Link,
        PredictKind::Response => PredictType::Response,
    };
    let pred = model.predict(&data, kind)?;
    let rows: Vec<Vec<f64>> = pred.iter().map(|&v| vec![v]).collect();
    table::write_table(io::stdout().lock(), &["prediction".to_string()], &rows)?;
    Ok(())
}

fn find_learner(model: &BoostModel, id: &str) -> Result<usize, Failure> {
    if let Ok(i) = id.parse::<usize>() {
        if i < model.n_learners() {
            return Ok(i);
        }
    } else if let Some(i) = model
        .specs
        .iter()
        .position(|s| s.name.as_deref() == Some(id) || s.label() == id)
    {
        return Ok(i);
    }
    let known: Vec<String> = model.specs.iter().map(|s| s.label()).collect();
    Err(Failure::user(format!(
        "unknown learner `{id}`; the model has {} learners: {}",
        known.len(),
        known.join(", ")
    )))
}

fn level_tag(level: f64) -> String {
    format!("{}", (level * 1000.0).round() / 10.0)
}

struct EffectsArgs<'a> {
    model: &'a PathBuf,
    learner: &'a str,
    grid: usize,
    ci: bool,
    data: Option<&'a PathBuf>,
    boot: BootstrapConfig,
    band: BandChoice,
    seed: Option<u64>,
}

fn cmd_effects(a: EffectsArgs) -> CmdResult {
    let model = persist::load(a.model)?;
    let l = find_learner(&model, a.learner)?;
    if a.grid < 2 {
        return Err(Failure::user("--grid must be at least 2"));
    }
    let eff = effect(&model, l, a.grid)?;
    let mut header: Vec<String> = eff.coords.iter().map(|c| c.0.clone()).collect();
    header.push("effect".into());
    let mut rows: Vec<Vec<f64>> = (0..eff.values.len())
        .map(|i| {
            let mut r: Vec<f64> = eff.coords.iter().map(|c| c.1[i]).collect();
            r.push(eff.values[i]);
            r
        })
        .collect();
    if a.ci {
        let data = read_data(a.data.expect("clap enforces --data"))?;
        let mut config = model.config.clone();
        config.seed = a.seed.unwrap_or(config.seed);
        let boot = BootstrapConfig { grid: a.grid, ..a.boot };
        let res = bootstrap_ci(&data, &model.response, &model.specs, model.loss, &config, &boot)?;
        let band: ConfidenceBand = match a.band {
            BandChoice::Pointwise => res.pointwise[l].clone(),
            BandChoice::Simultaneous => {
                let mut levels = Vec::new();
                let mut last = None;
                for &lv in &boot.levels {
                    let b = simultaneous_band(&res.curves[l], &res.pointwise[l], lv)?;
                    levels.extend(b.levels.iter().cloned());
                    last = Some(b);
                }
                let mut b = last.expect("at least one level");
                b.levels = levels;
                b
            }
        };
        for lv in &band.levels {
            let tag = level_tag(lv.level);
            header.push(format!("lower{tag}"));
            header.push(format!("upper{tag}"));
            for (i, r) in rows.iter_mut().enumerate() {
                r.push(lv.lower[i]);
                r.push(lv.upper[i]);
            }
        }
        if res.failures > 0 {
            log::warn!("{} bootstrap resamples failed and were skipped", res.failures);
        }
    }
    table::write_table(io::stdout().lock(), &header, &rows)?;
    Ok(())
}

fn cmd_simulate(scenario: Scenario, reps: usize, seed: u64) -> CmdResult {
    let t = simulate(scenario, &SimConfig::for_scenario(scenario, reps, seed))?;
    let header: Vec<String> = t.columns.iter().map(|c| c.to_string()).collect();
    table::write_table(io::stdout().lock(), &header, &t.rows)?;
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Fit { data, config, out } => cmd_fit(&data, &config, &out),
        Command::Predict { model, data, kind } => cmd_predict(&model, &data, kind),
        Command::Effects {
            model,
            learner,
            grid,
            ci,
            data,
            boot,
            levels,
            band,
            inner_folds,
            inner_m_max,
            seed,
        } => cmd_effects(EffectsArgs {
            model: &model,
            learner: &learner,
            grid,
            ci,
            data: data.as_ref(),
            boot: BootstrapConfig {
                n_boot: boot,
                levels,
                inner_folds,
                inner_m_max,
                ..BootstrapConfig::default()
            },
            band,
            seed,
        }),
        Command::Simulate { scenario, reps, seed } => cmd_simulate(scenario, reps, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
