//! Command-line front end.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::eval::{EvalTarget, ProbeEntities, PROBE_SET_SIZE};

use commands::GridAxes;
use config::RunConfig;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "topodistill", version, about = "Topology distillation for BPR matrix factorization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a teacher model.
    TrainTeacher {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train a student, optionally distilling from a teacher checkpoint.
    TrainStudent {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        student: StudentArgs,
        /// Teacher checkpoint.
        #[arg(long)]
        teacher: PathBuf,
    },
    /// Full-ranking evaluation of a checkpoint on a saved split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split directory (train.txt, val.txt, test.txt).
        #[arg(long)]
        data: PathBuf,
        /// Directory for metrics.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = TargetArg::Test)]
        target: TargetArg,
    },
    /// KL divergence between teacher and student similarity distributions.
    Probe {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        student: PathBuf,
        #[arg(long, value_enum, default_value_t = EntitiesArg::Items)]
        entities: EntitiesArg,
        #[arg(long, default_value_t = PROBE_SET_SIZE)]
        neighbors: usize,
        #[arg(long, default_value_t = PROBE_SET_SIZE)]
        random: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for probe.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep learning rate, L2, lambda_td and K; students when --teacher is set.
    Grid {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        student: StudentArgs,
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        lr_grid: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        l2_grid: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        lambda_grid: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        groups_grid: Option<Vec<usize>>,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Raw `user item` file, or a split directory.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `key = value` config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Teacher embedding dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub min_user: Option<usize>,
    #[arg(long)]
    pub min_item: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StudentArgs {
    /// none, fitnet, de, ftd or htd.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub phi: Option<f64>,
    #[arg(long)]
    pub lambda_td: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// proto_entity or proto_proto.
    #[arg(long)]
    pub group_topology: Option<String>,
    /// learned or kmeans.
    #[arg(long)]
    pub assigner: Option<String>,
    /// cosine or neg_euclidean.
    #[arg(long)]
    pub similarity: Option<String>,
    #[arg(long)]
    pub raw_sums: bool,
    #[arg(long)]
    pub log_alpha: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TargetArg {
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EntitiesArg {
    Users,
    Items,
    Both,
}

fn push<T: ToString>(out: &mut Vec<(&'static str, String)>, key: &'static str, value: &Option<T>) {
    if let Some(v) = value {
        out.push((key, v.to_string()));
    }
}

impl CommonArgs {
    fn overrides(&self, out: &mut Vec<(&'static str, String)>) {
        push(out, "seed", &self.seed);
    }
}

impl TrainArgs {
    fn overrides(&self, out: &mut Vec<(&'static str, String)>) {
        push(out, "learning_rate", &self.lr);
        push(out, "l2_reg", &self.l2);
        push(out, "max_epochs", &self.max_epochs);
        push(out, "patience", &self.patience);
        push(out, "batch_size", &self.batch_size);
        push(out, "teacher_dim", &self.dim);
        push(out, "min_user", &self.min_user);
        push(out, "min_item", &self.min_item);
    }
}

impl StudentArgs {
    fn overrides(&self, out: &mut Vec<(&'static str, String)>) {
        push(out, "method", &self.method);
        push(out, "phi", &self.phi);
        push(out, "lambda_td", &self.lambda_td);
        push(out, "gamma", &self.gamma);
        push(out, "num_groups", &self.groups);
        push(out, "tau", &self.tau);
        push(out, "group_topology", &self.group_topology);
        push(out, "assigner", &self.assigner);
        push(out, "similarity", &self.similarity);
        if self.raw_sums {
            out.push(("raw_sums", "true".into()));
        }
        if self.log_alpha {
            out.push(("log_alpha", "true".into()));
        }
    }
}

/// Defaults, then the config file, then flags.
pub fn resolve_config(common: &CommonArgs, train: &TrainArgs, student: Option<&StudentArgs>) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    let mut overrides = Vec::new();
    common.overrides(&mut overrides);
    train.overrides(&mut overrides);
    if let Some(s) = student {
        s.overrides(&mut overrides);
    }
    for (key, value) in overrides {
        cfg.set(key, &value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::Data(_) | Error::Parse { .. } | Error::NegativeSampling { .. } | Error::Checkpoint(_) | Error::Io(_) => {
            EXIT_DATA
        }
        Error::Shape(_) | Error::Index(_) | Error::NonFinite(_) => EXIT_FAILURE,
    }
}

fn print_lines(lines: impl IntoIterator<Item = String>) {
    for l in lines {
        println!("{l}");
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::TrainTeacher { common, train } => {
            let cfg = resolve_config(&common, &train, None)?;
            let s = commands::train_teacher(&cfg, &common.data, &common.out)?;
            println!("checkpoint={} checksum={:016x}", s.checkpoint.display(), s.checksum);
            println!("epochs={} best_epoch={}", s.history.epochs.len(), s.history.best_epoch);
            print_lines(s.test.metric_lines());
        }
        Command::TrainStudent { common, train, student, teacher } => {
            let cfg = resolve_config(&common, &train, Some(&student))?;
            let s = commands::train_student(&cfg, &common.data, &teacher, &common.out)?;
            println!("checkpoint={} checksum={:016x}", s.checkpoint.display(), s.checksum);
            println!("epochs={} best_epoch={}", s.history.epochs.len(), s.history.best_epoch);
            print_lines(s.test.metric_lines());
        }
        Command::Evaluate { checkpoint, data, out, target } => {
            let target = match target {
                TargetArg::Validation => EvalTarget::Validation,
                TargetArg::Test => EvalTarget::Test,
            };
            let r = commands::evaluate(&checkpoint, &data, target, out.as_deref())?;
            print_lines(r.metric_lines());
        }
        Command::Probe { teacher, student, entities, neighbors, random, seed, out } => {
            let which = match entities {
                EntitiesArg::Users => ProbeEntities::Users,
                EntitiesArg::Items => ProbeEntities::Items,
                EntitiesArg::Both => ProbeEntities::Both,
            };
            let r = commands::probe(&teacher, &student, which, neighbors, random, seed, out.as_deref())?;
            print_lines(commands::probe_report_lines(&r));
        }
        Command::Grid { common, train, student, teacher, lr_grid, l2_grid, lambda_grid, groups_grid } => {
            let cfg = resolve_config(&common, &train, Some(&student))?;
            let defaults = GridAxes::default();
            let axes = GridAxes {
                learning_rates: lr_grid.unwrap_or(defaults.learning_rates),
                l2_regs: l2_grid.unwrap_or(defaults.l2_regs),
                lambdas: lambda_grid.unwrap_or(defaults.lambdas),
                groups: groups_grid.unwrap_or(defaults.groups),
            };
            let rows = commands::grid(&cfg, &axes, &common.data, teacher.as_deref(), &common.out)?;
            if let Some(best) = rows.first() {
                println!(
                    "best learning_rate={} l2_reg={} lambda_td={} num_groups={} validation_recall@50={:.4}",
                    best.config.train.learning_rate,
                    best.config.train.l2_reg,
                    best.config.distill.lambda_td,
                    best.config.distill.num_groups,
                    best.best_validation
                );
            }
        }
    }
    Ok(())
}
