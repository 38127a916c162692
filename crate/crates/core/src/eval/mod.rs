//! Full-ranking top-N evaluation and the similarity-distribution KL probe.

mod probe;
mod ranking;

pub use probe::{kl_topology_probe, probe_entities, KlProbeReport, ProbeEntities, PROBE_SET_SIZE};
pub use ranking::{full_ranking_eval, ndcg_at, recall_at, EvalTarget, RankingResult, DEFAULT_CUTOFFS};
