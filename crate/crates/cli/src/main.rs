use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use corast::client::write_client;
use corast::data::{synth, write_csv};
use corast::orchestrator::{
    parse_config, participant_rng, prepare_data, ConfigOverrides, ExperimentConfig, RowRange, RunReport, Runner, Task,
};
use corast::report::{entropy_from_source, entropy_verdict, CurveLog, ResultsTable};
use corast::server::{pretrain, write_encoder, Encoder};

#[derive(Parser)]
#[command(name = "corast", version, about = "Simulate edge forecasters sharing a server-side representation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more experiments and write metrics, curves, timings and checkpoints.
    Run {
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
        /// Replaces the configured seed list; repeat for several seeds.
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        /// Row range `start:end` of the data to use.
        #[arg(long)]
        rows: Option<RowRange>,
        /// Data file, overriding the configured one.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Skip writing model checkpoints.
        #[arg(long)]
        no_checkpoints: bool,
    },
    /// Tabulate test errors from metrics files.
    Report {
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
        /// Long-format CSV instead of the aligned grid.
        #[arg(long)]
        csv: bool,
    },
    /// Plug-in entropies of two discretized columns over the train split.
    Entropy {
        /// Weather CSV; the synthetic generator is used when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Two column names separated by a comma.
        #[arg(long, value_delimiter = ',', required = true)]
        vars: Vec<String>,
        #[arg(long, default_value_t = 8)]
        bins: usize,
        /// Rows to generate when no data file is given.
        #[arg(long, default_value_t = synth::DEFAULT_ROWS)]
        synthetic_rows: usize,
    },
    /// Pretrain the server encoder of an experiment and save it.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        rows: Option<RowRange>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "encoder.ckpt")]
        out: PathBuf,
    },
    /// Write a synthetic weather table as CSV.
    Synth {
        #[arg(long, default_value_t = synth::DEFAULT_ROWS)]
        rows: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run { configs, seeds, rows, data, out, no_checkpoints } => {
            let overrides = ConfigOverrides { seeds: (!seeds.is_empty()).then_some(seeds), rows, data };
            cmd_run(&configs, &overrides, &out, !no_checkpoints)
        }
        Command::Report { metrics, csv } => cmd_report(&metrics, csv),
        Command::Entropy { data, vars, bins, synthetic_rows } => {
            if vars.len() != 2 {
                bail!("--vars takes exactly two column names, got {}", vars.len());
            }
            let e = entropy_from_source(data.as_deref(), synthetic_rows, &vars[0], &vars[1], bins)?;
            println!("H({})   = {:.6} bits", vars[0], e.hx);
            println!("H({})   = {:.6} bits", vars[1], e.hy);
            println!("H({},{}) = {:.6} bits", vars[0], vars[1], e.hxy);
            println!("I       = {:.6} bits", e.mutual_information());
            println!("{}", entropy_verdict(&e));
            Ok(())
        }
        Command::Pretrain { config, seed, rows, data, out } => {
            let overrides = ConfigOverrides { seeds: Some(vec![seed]), rows, data };
            cmd_pretrain(&config, &overrides, seed, &out)
        }
        Command::Synth { rows, seed, out } => {
            let table = synth::generate_weather(rows, seed)?;
            write_csv(&table, &out)?;
            log::info!("wrote {rows} rows to {}", out.display());
            Ok(())
        }
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_run(configs: &[PathBuf], overrides: &ConfigOverrides, out: &Path, checkpoints: bool) -> Result<()> {
    let parsed: Vec<ExperimentConfig> = configs
        .iter()
        .map(|p| parse_config(p, overrides).with_context(|| format!("config {}", p.display())))
        .collect::<Result<_>>()?;
    let mut runner = Runner::new();
    let mut reports = Vec::new();
    for cfg in &parsed {
        let dir = out.join(cfg.run_id());
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let curves = CurveLog::open(&dir.join("curves.csv"))?;
        log::info!("run {} seeds {:?}", cfg.run_id(), cfg.seeds);
        let output = runner.run(cfg, &|e| {
            if let Err(err) = curves.record(&e) {
                log::error!("curve log: {err}");
            }
        })?;
        write_json(&dir.join("metrics.json"), &output.report)?;
        write_json(&dir.join("timing.json"), &output.timings)?;
        if checkpoints {
            let ckpt = dir.join("checkpoints");
            fs::create_dir_all(&ckpt)?;
            let columns = cfg.server_columns().unwrap_or_default();
            for (seed, enc) in cfg.seeds.iter().zip(&output.encoders) {
                let f = File::create(ckpt.join(format!("encoder-seed{seed}.ckpt")))?;
                write_encoder(enc, BufWriter::new(f), &columns)?;
            }
            for (seed, models) in cfg.seeds.iter().zip(&output.clients) {
                for m in models {
                    let f = File::create(ckpt.join(format!("client-{}-seed{seed}.ckpt", m.id())))?;
                    write_client(m, BufWriter::new(f))?;
                }
            }
        }
        log::info!("wrote {}", dir.display());
        reports.push(output.report);
    }
    for task in [Task::H2coForecast, Task::LocalForecast] {
        let group: Vec<RunReport> = reports.iter().filter(|r| r.task == task).cloned().collect();
        if !group.is_empty() {
            print!("{}", ResultsTable::build(&group)?.render_text());
        }
    }
    Ok(())
}

fn cmd_report(paths: &[PathBuf], csv: bool) -> Result<()> {
    let reports: Vec<RunReport> = paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        })
        .collect::<Result<_>>()?;
    let table = ResultsTable::build(&reports)?;
    if csv {
        print!("{}", table.render_csv());
    } else {
        print!("{}", table.render_text());
    }
    Ok(())
}

fn cmd_pretrain(config: &Path, overrides: &ConfigOverrides, seed: u64, out: &Path) -> Result<()> {
    let cfg = parse_config(config, overrides)?;
    let Some(columns) = cfg.server_columns() else {
        bail!("variant {} has no server encoder", cfg.variant.as_str());
    };
    let data = prepare_data(&cfg)?;
    let series = data.table.matrix(&columns)?;
    let train = &series[..data.splits.train.end * columns.len()];
    let mut rng = participant_rng(seed, "server");
    let mut encoder = Encoder::new(columns.len(), cfg.encoder.clone(), &mut rng)?;
    let every = (cfg.encoder.iterations / 10).max(1);
    let report = pretrain(&mut encoder, train, &mut rng, |it, loss, lr| {
        if (it + 1) % every == 0 {
            log::info!("iteration {:>5}  loss {loss:.5}  lr {lr:.2e}", it + 1);
        }
    })?;
    let (head, tail) = report.head_tail_means(10);
    log::info!("loss {head:.4} -> {tail:.4} over {} iterations", report.losses.len());
    write_encoder(&encoder, BufWriter::new(File::create(out)?), &columns)?;
    log::info!("wrote {}", out.display());
    Ok(())
}
