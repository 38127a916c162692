use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use log::info;

use crate::data::{filter_min_interactions, leave_one_out_split, load_interactions_file, SplitDataset};
use crate::distill::{build_distiller, Method};
use crate::error::{Error, Result};
use crate::eval::{
    full_ranking_eval, kl_topology_probe, probe_entities, EvalTarget, KlProbeReport, ProbeEntities, RankingResult,
    DEFAULT_CUTOFFS,
};
use crate::model::{train, DistillHook, EmbeddingModel, TrainHistory};
use crate::seed::{substream, STREAM_INIT, STREAM_PROBE, STREAM_SPLIT};

use super::config::RunConfig;

pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const PROBE_FILE: &str = "probe.csv";
pub const GRID_FILE: &str = "grid.csv";
pub const SPLIT_DIR: &str = "split";
const LOCK_FILE: &str = ".lock";

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "{} is in use by another run (remove {} if stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Reads a saved split directory, or builds one from a raw interaction file
/// and saves it under `out/split`.
pub fn prepare_split(data: &Path, cfg: &RunConfig, out: &Path) -> Result<SplitDataset> {
    if data.is_dir() {
        return SplitDataset::load(data);
    }
    let raw = load_interactions_file(data)?;
    let log = filter_min_interactions(&raw, cfg.min_user, cfg.min_item)?;
    if log.is_empty() {
        return Err(Error::Data(format!(
            "no interactions left after filtering with min_user={} min_item={}",
            cfg.min_user, cfg.min_item
        )));
    }
    let split = leave_one_out_split(&log, &mut substream(cfg.train.seed, STREAM_SPLIT));
    split.save(&out.join(SPLIT_DIR))?;
    info!(
        "{} users, {} items, {} train interactions (raw: {} interactions)",
        split.num_users(),
        split.num_items(),
        split.train.len(),
        raw.len()
    );
    Ok(split)
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub checkpoint: PathBuf,
    pub checksum: u64,
    pub history: TrainHistory,
    pub test: RankingResult,
}

pub fn history_csv(history: &TrainHistory) -> String {
    let mut out = String::from("epoch,base_loss,distill_loss,validation_recall@50\n");
    for e in &history.epochs {
        writeln!(out, "{},{},{},{}", e.epoch, e.base_loss, e.distill_loss, e.validation).unwrap();
    }
    out
}

fn finish_run(out: &Path, model: &EmbeddingModel, history: TrainHistory, split: &SplitDataset) -> Result<RunSummary> {
    let checkpoint = out.join(CHECKPOINT_FILE);
    let checksum = model.save_checkpoint(&checkpoint)?;
    fs::write(out.join(HISTORY_FILE), history_csv(&history))?;
    let test = full_ranking_eval(model, split, &DEFAULT_CUTOFFS, EvalTarget::Test)?;
    fs::write(out.join(METRICS_FILE), test.to_csv())?;
    Ok(RunSummary { checkpoint, checksum, history, test })
}

fn begin(cfg: &RunConfig, out: &Path) -> Result<OutputLock> {
    cfg.validate()?;
    let lock = OutputLock::acquire(out)?;
    fs::write(out.join(CONFIG_FILE), cfg.to_text())?;
    Ok(lock)
}

pub fn train_teacher(cfg: &RunConfig, data: &Path, out: &Path) -> Result<RunSummary> {
    let _lock = begin(cfg, out)?;
    let split = prepare_split(data, cfg, out)?;
    let model = EmbeddingModel::init(
        split.num_users(),
        split.num_items(),
        cfg.teacher_dim,
        &mut substream(cfg.train.seed, STREAM_INIT),
    )?;
    let (model, history) = train(model, &split, &cfg.train, None)?;
    finish_run(out, &model, history, &split)
}

pub fn train_student(cfg: &RunConfig, data: &Path, teacher_path: &Path, out: &Path) -> Result<RunSummary> {
    let _lock = begin(cfg, out)?;
    let split = prepare_split(data, cfg, out)?;
    let teacher = EmbeddingModel::load_checkpoint(teacher_path)?;
    if teacher.num_users() != split.num_users() || teacher.num_items() != split.num_items() {
        return Err(Error::Config(format!(
            "teacher covers {}x{} entities but the data has {}x{}",
            teacher.num_users(),
            teacher.num_items(),
            split.num_users(),
            split.num_items()
        )));
    }
    if teacher.dim() != cfg.teacher_dim {
        return Err(Error::Config(format!(
            "teacher checkpoint has dimension {} but teacher_dim = {}",
            teacher.dim(),
            cfg.teacher_dim
        )));
    }
    let student_dim = cfg.train.student_dim(teacher.dim());
    info!("student dimension {student_dim} (phi {} of {})", cfg.train.phi, teacher.dim());
    let mut distiller = build_distiller(&cfg.distill, teacher, student_dim, cfg.train.seed)?;
    let model = EmbeddingModel::init(
        split.num_users(),
        split.num_items(),
        student_dim,
        &mut substream(cfg.train.seed, STREAM_INIT),
    )?;
    let hook = distiller.as_mut().map(|d| d as &mut dyn DistillHook);
    let (model, history) = train(model, &split, &cfg.train, hook)?;
    finish_run(out, &model, history, &split)
}

pub fn evaluate(checkpoint: &Path, split_dir: &Path, target: EvalTarget, out: Option<&Path>) -> Result<RankingResult> {
    let model = EmbeddingModel::load_checkpoint(checkpoint)?;
    let split = SplitDataset::load(split_dir)?;
    let result = full_ranking_eval(&model, &split, &DEFAULT_CUTOFFS, target)?;
    if let Some(out) = out {
        let _lock = OutputLock::acquire(out)?;
        fs::write(out.join(METRICS_FILE), result.to_csv())?;
    }
    Ok(result)
}

pub fn probe_report_lines(report: &KlProbeReport) -> Vec<String> {
    vec![
        format!("metric=kl_most_similar value={:.6}", report.most_similar),
        format!("metric=kl_random value={:.6}", report.random),
    ]
}

pub fn probe(
    teacher_path: &Path,
    student_path: &Path,
    which: ProbeEntities,
    num_neighbors: usize,
    num_random: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<KlProbeReport> {
    let teacher = EmbeddingModel::load_checkpoint(teacher_path)?;
    let student = EmbeddingModel::load_checkpoint(student_path)?;
    if teacher.num_users() != student.num_users() || teacher.num_items() != student.num_items() {
        return Err(Error::Data(format!(
            "teacher covers {}x{} entities, student {}x{}",
            teacher.num_users(),
            teacher.num_items(),
            student.num_users(),
            student.num_items()
        )));
    }
    let report = kl_topology_probe(
        &probe_entities(&teacher, which),
        &probe_entities(&student, which),
        num_neighbors,
        num_random,
        &mut substream(seed, STREAM_PROBE),
    )?;
    if let Some(out) = out {
        let _lock = OutputLock::acquire(out)?;
        let csv = format!("metric,value\nkl_most_similar,{}\nkl_random,{}\n", report.most_similar, report.random);
        fs::write(out.join(PROBE_FILE), csv)?;
    }
    Ok(report)
}

/// Value ranges swept by the grid command.
#[derive(Debug, Clone, PartialEq)]
pub struct GridAxes {
    pub learning_rates: Vec<f64>,
    pub l2_regs: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub groups: Vec<usize>,
}

impl Default for GridAxes {
    fn default() -> Self {
        Self {
            learning_rates: vec![1e-2, 1e-3, 1e-4],
            l2_regs: vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
            lambdas: vec![1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5],
            groups: vec![5, 10, 20, 30, 40, 50],
        }
    }
}

impl GridAxes {
    /// Every configuration of the sweep. Distillation axes apply only to the
    /// methods that use them.
    pub fn expand(&self, base: &RunConfig) -> Vec<RunConfig> {
        let method = base.distill.method;
        let lambdas = if method == Method::None { vec![base.distill.lambda_td] } else { self.lambdas.clone() };
        let groups = if matches!(method, Method::De | Method::Htd) { self.groups.clone() } else { vec![base.distill.num_groups] };
        let mut out = Vec::new();
        for &lr in &self.learning_rates {
            for &l2 in &self.l2_regs {
                for &lambda in &lambdas {
                    for &k in &groups {
                        let mut c = base.clone();
                        c.train.learning_rate = lr;
                        c.train.l2_reg = l2;
                        c.distill.lambda_td = lambda;
                        c.distill.num_groups = k;
                        out.push(c);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub config: RunConfig,
    pub best_validation: f64,
    pub best_epoch: usize,
}

/// Trains every grid point (students when `teacher` is given, teachers
/// otherwise) into `out/runNNN` and writes `out/grid.csv`, best first.
pub fn grid(base: &RunConfig, axes: &GridAxes, data: &Path, teacher: Option<&Path>, out: &Path) -> Result<Vec<GridRow>> {
    base.validate()?;
    let _lock = OutputLock::acquire(out)?;
    let runs = axes.expand(base);
    info!("grid: {} configurations", runs.len());
    let mut rows = Vec::with_capacity(runs.len());
    for (n, cfg) in runs.into_iter().enumerate() {
        let dir = out.join(format!("run{n:03}"));
        let summary = match teacher {
            Some(t) => train_student(&cfg, data, t, &dir)?,
            None => train_teacher(&cfg, data, &dir)?,
        };
        info!("run{n:03}: best validation recall@50 {:.4}", summary.history.best_validation);
        rows.push(GridRow {
            config: cfg,
            best_validation: summary.history.best_validation,
            best_epoch: summary.history.best_epoch,
        });
    }
    rows.sort_by(|a, b| b.best_validation.total_cmp(&a.best_validation));
    let mut csv = String::from("learning_rate,l2_reg,lambda_td,num_groups,best_epoch,validation_recall@50\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.config.train.learning_rate,
            r.config.train.l2_reg,
            r.config.distill.lambda_td,
            r.config.distill.num_groups,
            r.best_epoch,
            r.best_validation
        )
        .unwrap();
    }
    fs::write(out.join(GRID_FILE), csv)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let first = OutputLock::acquire(dir.path()).unwrap();
        assert!(matches!(OutputLock::acquire(dir.path()), Err(Error::Config(_))));
        drop(first);
        assert!(OutputLock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn grid_sizes() {
        let axes = GridAxes::default();
        let mut base = RunConfig::default();
        assert_eq!(axes.expand(&base).len(), 15);
        base.distill.method = Method::FitNet;
        assert_eq!(axes.expand(&base).len(), 90);
        base.distill.method = Method::Htd;
        assert_eq!(axes.expand(&base).len(), 540);
    }
}
