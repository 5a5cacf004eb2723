//! Argument parsing and subcommand dispatch.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{Checkpoint, Task};
use crate::config::{EncoderChoice, PeftMode, RunConfig};
use crate::data::{load_csv, save_csv, save_table};
use crate::error::{CliError, CliResult};
use crate::pipeline::{self, Split};
use crate::report::to_json;

pub const THREADS_VAR: &str = "SSFM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "softsense", version, about = "Soft-sensing foundation model toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic process dataset as CSV.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 23_000)]
        samples: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Stage 1: align a backbone to the process data (LoRA + autoregressive loss).
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        shape: ShapeFlags,
    },
    /// Stage 2: train a task model on top of a stage-1 checkpoint.
    Adapt {
        #[arg(long, value_enum)]
        task: Task,
        #[arg(long)]
        ssfm: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Fraction of training windows to keep (few-shot runs).
        #[arg(long)]
        train_fraction: Option<f64>,
        #[command(flatten)]
        shape: ShapeFlags,
        /// Train a fresh model end to end instead of adapting the SSFM.
        #[arg(long)]
        no_pretrain: bool,
        #[arg(long, value_enum)]
        peft_mode: Option<PeftMode>,
        /// Insert adapters into a fresh backbone that skipped stage 1.
        #[arg(long)]
        skip_stage1: bool,
    },
    /// Print evaluation metrics as JSON.
    Eval {
        #[arg(long, value_enum)]
        task: Task,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Write `timestamp,y_pred` for every window of the data.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        split: Split,
    },
    /// Write per-variable anomaly flags for every row.
    Detect {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Threshold quantile of the clean calibration errors.
        #[arg(long)]
        quantile: Option<f64>,
        #[arg(long, value_enum, default_value = "all")]
        split: Split,
    },
    /// Mask values at random, fill them and print metrics on the masked entries.
    Impute {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        mask_ratio: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        split: Split,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write one head's attention weights for one sample as an n×n CSV.
    DumpAttention {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        sample: usize,
        #[arg(long)]
        layer: usize,
        #[arg(long)]
        head: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        split: Split,
    },
}

/// Window length and encoder overrides shared by the training commands.
#[derive(Debug, Args)]
pub struct ShapeFlags {
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long, value_enum)]
    pub encoder: Option<EncoderChoice>,
}

impl ShapeFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(w) = self.window {
            cfg.window = w;
        }
        if let Some(e) = self.encoder {
            cfg.encoder = e;
        }
    }
}

/// Worker count from `SSFM_THREADS` (default 1). Execution is single-threaded;
/// the value is only validated.
pub fn threads() -> CliResult<usize> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::usage(format!("{THREADS_VAR} must be a positive integer, got `{v}`"))),
        },
    }
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match threads().and_then(|_| execute(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn print(text: &str) -> CliResult<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}")?;
    Ok(())
}

fn load_split(path: &Path, which: Split) -> CliResult<softsense_core::datagen::Dataset> {
    pipeline::select(&load_csv(path)?, which)
}

pub fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::GenData { out, samples, seed } => {
            let data = pipeline::generate(samples, seed)?;
            save_csv(&data, &out)
        }
        Command::Pretrain { data, config, out, shape } => {
            let mut cfg = RunConfig::load_or_default(config.as_deref())?;
            shape.apply(&mut cfg);
            let trained = pipeline::pretrain(&load_csv(&data)?, &cfg)?;
            log_training(&trained.report);
            trained.checkpoint.save(&out)
        }
        Command::Adapt { task, ssfm, data, config, out, train_fraction, shape, no_pretrain, peft_mode, skip_stage1 } => {
            let mut cfg = RunConfig::load_or_default(config.as_deref())?;
            shape.apply(&mut cfg);
            if let Some(f) = train_fraction {
                cfg.train_fraction = f;
            }
            if let Some(mode) = peft_mode {
                cfg.peft_mode = mode;
            }
            cfg.no_pretrain |= no_pretrain;
            cfg.skip_stage1 |= skip_stage1;
            let ssfm = ssfm.as_deref().map(Checkpoint::load).transpose()?;
            let trained = pipeline::adapt(task, ssfm.as_ref(), &load_csv(&data)?, &cfg)?;
            log_training(&trained.report);
            trained.checkpoint.save(&out)
        }
        Command::Eval { task, ckpt, data, split } => {
            let ck = Checkpoint::load(&ckpt)?;
            let report = pipeline::evaluate(&ck, task, &load_csv(&data)?, split)?;
            print(&to_json(&report))
        }
        Command::Predict { ckpt, data, out, split } => {
            let ck = Checkpoint::load(&ckpt)?;
            let (times, pred) = pipeline::predictions(&ck, &load_split(&data, split)?, 1)?;
            let rows: Vec<Vec<f64>> = times.iter().zip(&pred).map(|(&t, &y)| vec![t, y]).collect();
            save_table(&out, &["timestamp".into(), "y_pred".into()], &rows)
        }
        Command::Detect { ckpt, data, out, quantile, split } => {
            let ck = Checkpoint::load(&ckpt)?;
            let raw = load_split(&data, split)?;
            let flags = pipeline::detect(&ck, &raw, quantile)?;
            let m = raw.series.vars;
            let mut header = vec!["timestamp".to_string()];
            header.extend((1..=m).map(|i| format!("v{i}")));
            let rows: Vec<Vec<f64>> = (0..raw.len())
                .map(|t| {
                    let mut row = vec![raw.timestamps[t]];
                    row.extend(flags[t * m..(t + 1) * m].iter().map(|&f| f64::from(u8::from(f))));
                    row
                })
                .collect();
            let flagged = flags.iter().filter(|&&f| f).count();
            eprintln!("flagged {flagged} of {} points", flags.len());
            save_table(&out, &header, &rows)
        }
        Command::Impute { ckpt, data, mask_ratio, out, split, seed } => {
            let ck = Checkpoint::load(&ckpt)?;
            let raw = load_split(&data, split)?;
            let (values, mask) = pipeline::impute_dataset(&ck, &raw, mask_ratio, seed.unwrap_or(ck.seed))?;
            let m = raw.series.vars;
            let mut header = vec!["timestamp".to_string()];
            header.extend((1..=m).map(|i| format!("v{i}")));
            header.extend((1..=m).map(|i| format!("masked_v{i}")));
            let rows: Vec<Vec<f64>> = (0..raw.len())
                .map(|t| {
                    let mut row = vec![raw.timestamps[t]];
                    row.extend_from_slice(&values[t * m..(t + 1) * m]);
                    row.extend(mask[t * m..(t + 1) * m].iter().map(|&f| f64::from(u8::from(f))));
                    row
                })
                .collect();
            let truth: Vec<f64> = raw.series.values.iter().zip(&mask).filter(|(_, &k)| k).map(|(&v, _)| v).collect();
            let filled: Vec<f64> = values.iter().zip(&mask).filter(|(_, &k)| k).map(|(&v, _)| v).collect();
            save_table(&out, &header, &rows)?;
            let metrics = softsense_core::metrics::compute_metrics(&truth, &filled)?;
            print(&to_json(&crate::report::MetricsRecord::from(&metrics)))
        }
        Command::DumpAttention { ckpt, data, sample, layer, head, out, split } => {
            let ck = Checkpoint::load(&ckpt)?;
            let (n, probs) = pipeline::attention_map(&ck, &load_split(&data, split)?, sample, layer, head)?;
            let rows: Vec<Vec<f64>> = probs.chunks(n).map(<[f64]>::to_vec).collect();
            save_table(&out, &[], &rows)
        }
    }
}

fn log_training(report: &softsense_core::tasks::TrainReport) {
    for e in &report.epochs {
        match e.val_loss {
            Some(v) => eprintln!("epoch {}: train {:.6} val {:.6}", e.epoch, e.train_loss, v),
            None => eprintln!("epoch {}: train {:.6}", e.epoch, e.train_loss),
        }
    }
    eprintln!("kept epoch {}", report.best_epoch);
}
