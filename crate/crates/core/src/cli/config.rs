//! Run configuration: built-in defaults, then a `key = value` file, then
//! command-line flags.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::distill::DistillConfig;
use crate::error::{Error, Result};
use crate::model::{TrainConfig, TEACHER_DIM};

pub const DEFAULT_MIN_USER: usize = 5;
pub const DEFAULT_MIN_ITEM: usize = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub distill: DistillConfig,
    /// Embedding width of a teacher trained by this run.
    pub teacher_dim: usize,
    pub min_user: usize,
    pub min_item: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            distill: DistillConfig::default(),
            teacher_dim: TEACHER_DIM,
            min_user: DEFAULT_MIN_USER,
            min_item: DEFAULT_MIN_ITEM,
        }
    }
}

/// Every accepted key, in the order the effective config is written.
pub const KEYS: [&str; 21] = [
    "seed",
    "learning_rate",
    "l2_reg",
    "max_epochs",
    "patience",
    "batch_size",
    "phi",
    "teacher_dim",
    "min_user",
    "min_item",
    "method",
    "lambda_td",
    "gamma",
    "num_groups",
    "tau",
    "group_topology",
    "assigner",
    "similarity",
    "raw_sums",
    "log_alpha",
    "kmeans_iterations",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| Error::Config(format!("{key} = {value:?}: {e}")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (t, d) = (&mut self.train, &mut self.distill);
        match key {
            "seed" => t.seed = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "l2_reg" => t.l2_reg = parse(key, value)?,
            "max_epochs" => t.max_epochs = parse(key, value)?,
            "patience" => t.patience = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "phi" => t.phi = parse(key, value)?,
            "teacher_dim" => self.teacher_dim = parse(key, value)?,
            "min_user" => self.min_user = parse(key, value)?,
            "min_item" => self.min_item = parse(key, value)?,
            "method" => d.method = value.parse()?,
            "lambda_td" => d.lambda_td = parse(key, value)?,
            "gamma" => d.gamma = parse(key, value)?,
            "num_groups" => d.num_groups = parse(key, value)?,
            "tau" => d.tau = parse(key, value)?,
            "group_topology" => d.group_topology = value.parse()?,
            "assigner" => d.assigner = value.parse()?,
            "similarity" => d.similarity = value.parse()?,
            "raw_sums" => d.raw_sums = parse(key, value)?,
            "log_alpha" => d.log_alpha = parse(key, value)?,
            "kmeans_iterations" => d.kmeans_iterations = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let (t, d) = (&self.train, &self.distill);
        Some(match key {
            "seed" => t.seed.to_string(),
            "learning_rate" => t.learning_rate.to_string(),
            "l2_reg" => t.l2_reg.to_string(),
            "max_epochs" => t.max_epochs.to_string(),
            "patience" => t.patience.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "phi" => t.phi.to_string(),
            "teacher_dim" => self.teacher_dim.to_string(),
            "min_user" => self.min_user.to_string(),
            "min_item" => self.min_item.to_string(),
            "method" => d.method.to_string(),
            "lambda_td" => d.lambda_td.to_string(),
            "gamma" => d.gamma.to_string(),
            "num_groups" => d.num_groups.to_string(),
            "tau" => d.tau.to_string(),
            "group_topology" => d.group_topology.to_string(),
            "assigner" => d.assigner.to_string(),
            "similarity" => d.similarity.to_string(),
            "raw_sums" => d.raw_sums.to_string(),
            "log_alpha" => d.log_alpha.to_string(),
            "kmeans_iterations" => d.kmeans_iterations.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected `key = value`, got {raw:?}", n + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("config line {}: {}", n + 1, strip_prefix(&e))))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.distill.validate()?;
        if self.teacher_dim == 0 {
            return Err(Error::Config("teacher_dim must be at least 1".into()));
        }
        Ok(())
    }

    /// The effective configuration, one `key = value` line per key.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            writeln!(out, "{key} = {}", self.get(key).expect("listed key")).unwrap();
        }
        out
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(msg) => msg.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::{Method, GroupTopology};

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.apply_text("method = htd\ngamma = 0.25 # inline comment\n\n# full comment\ngroup_topology = proto_proto\n")
            .unwrap();
        assert_eq!(c.distill.method, Method::Htd);
        assert_eq!(c.distill.gamma, 0.25);
        assert_eq!(c.distill.group_topology, GroupTopology::ProtoProto);
        let mut back = RunConfig::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_and_malformed_rejected() {
        let mut c = RunConfig::default();
        let err = c.apply_text("learning_rte = 0.1").unwrap_err();
        assert!(err.to_string().contains("line 1"));
        assert!(c.apply_text("gamma").is_err());
        assert!(c.apply_text("max_epochs = -3").is_err());
        assert!(c.apply_text("method = rrd").is_err());
    }

    #[test]
    fn every_key_is_readable_and_writable() {
        let mut c = RunConfig::default();
        for key in KEYS {
            let v = c.get(key).unwrap();
            c.set(key, &v).unwrap();
        }
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.to_text().lines().count(), KEYS.len());
    }

    #[test]
    fn validation_covers_both_halves() {
        let mut c = RunConfig::default();
        c.set("tau", "0").unwrap();
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.set("phi", "1.5").unwrap();
        assert!(c.validate().is_err());
    }
}
