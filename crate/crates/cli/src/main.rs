use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use twotier::harness::output::{write_assignments, write_metrics, write_traces};
use twotier::harness::{run_experiment, run_repeats, run_sweep, sweep_values, ExperimentConfig, Sweep};

/// Two-tier over-the-air federated learning experiments.
///
/// Options are read from `--config` first and then overridden by flags; a
/// repeated flag keeps its last value.
#[derive(Parser, Debug)]
#[command(name = "twotier", version, args_override_self = true)]
struct Cli {
    /// File of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    devices: Option<String>,
    #[arg(long)]
    clusters: Option<String>,
    #[arg(long)]
    rounds: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    lipschitz: Option<String>,
    /// Per-device power budget in watts.
    #[arg(long = "power-w")]
    power_w: Option<String>,
    #[arg(long = "noise-dbm", allow_hyphen_values = true)]
    noise_dbm: Option<String>,
    /// iid, noniid or synthetic.
    #[arg(long)]
    data: Option<String>,
    /// proposed, static, similarity, maxpower, direct or mse.
    #[arg(long)]
    scheme: Option<String>,
    /// softmax, hidden[:width] or quadratic.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Directory holding MNIST-style IDX files instead of synthetic data.
    #[arg(long = "idx-dir")]
    idx_dir: Option<String>,
    /// Any other option as `key=value`; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Vary the cluster count or the power budget.
    #[arg(long)]
    sweep: Option<String>,
    /// Seeds per configuration when summarizing.
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Metrics CSV for a single run, JSON for sweeps and repeats.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "assignments-out")]
    assignments_out: Option<PathBuf>,
    #[arg(long = "trace-out")]
    trace_out: Option<PathBuf>,
    /// JSON summary of a single run.
    #[arg(long = "summary-out")]
    summary_out: Option<PathBuf>,
}

impl Cli {
    fn config(&self) -> twotier::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(&std::fs::read_to_string(path)?)?;
        }
        let flags = [
            ("devices", &self.devices),
            ("clusters", &self.clusters),
            ("rounds", &self.rounds),
            ("batch", &self.batch),
            ("lr", &self.lr),
            ("lipschitz", &self.lipschitz),
            ("power_w", &self.power_w),
            ("noise_dbm", &self.noise_dbm),
            ("data", &self.data),
            ("scheme", &self.scheme),
            ("model", &self.model),
            ("seed", &self.seed),
            ("idx_dir", &self.idx_dir),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| twotier::Error::Config(format!("expected key=value, got '{kv}'")))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn sink(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json<T: serde::Serialize>(path: Option<&Path>, value: &T) -> twotier::Result<()> {
    let mut w = sink(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(io::Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn run(cli: &Cli) -> twotier::Result<()> {
    let cfg = cli.config()?;
    if let Some(s) = &cli.sweep {
        let sweep: Sweep = s.parse()?;
        let points = run_sweep(&cfg, sweep, &sweep_values(sweep), cli.repeats)?;
        return write_json(cli.out.as_deref(), &points);
    }
    if cli.repeats > 1 {
        return write_json(cli.out.as_deref(), &run_repeats(&cfg, cli.repeats)?);
    }
    let report = run_experiment(&cfg)?;
    let mut out = sink(cli.out.as_deref())?;
    write_metrics(&mut out, &report.rows())?;
    out.flush()?;
    if let Some(p) = &cli.assignments_out {
        write_assignments(File::create(p)?, &report.assignments)?;
    }
    if let Some(p) = &cli.trace_out {
        write_traces(File::create(p)?, &report.traces)?;
    }
    if let Some(p) = &cli.summary_out {
        write_json(Some(p), &report.summary())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
