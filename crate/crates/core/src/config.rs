//! Experiment configuration: a sectioned TOML file with typed keys.
//!
//! Unknown keys are errors. The message names the offending key and, when
//! one is close, suggests the intended spelling.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::TaskSpec;
use crate::nbsp::{MaskScope, MergeRule};
use crate::sac::{SacConfig, SampleMode};
use crate::skill::RankingScope;
use crate::{Error, Result};

/// Training variants compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Goal-oriented masks on actor and critics plus interval replay.
    Nbsp,
    /// Plain SAC: no masks, no prior buffer.
    Base,
    MaskOnly,
    ReplayOnly,
    /// Masks built from uniformly random neurons, plus replay.
    RandomSelection,
    /// Masks on the actor only, plus replay.
    ActorOnly,
    /// Masks on the critics only, plus replay.
    CriticOnly,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Nbsp,
        Method::Base,
        Method::MaskOnly,
        Method::ReplayOnly,
        Method::RandomSelection,
        Method::ActorOnly,
        Method::CriticOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Nbsp => "nbsp",
            Method::Base => "base",
            Method::MaskOnly => "mask_only",
            Method::ReplayOnly => "replay_only",
            Method::RandomSelection => "random_selection",
            Method::ActorOnly => "actor_only",
            Method::CriticOnly => "critic_only",
        }
    }

    pub fn uses_masks(self) -> bool {
        !matches!(self, Method::Base | Method::ReplayOnly)
    }

    pub fn uses_replay(self) -> bool {
        !matches!(self, Method::Base | Method::MaskOnly)
    }

    pub fn random_selection(self) -> bool {
        self == Method::RandomSelection
    }

    pub fn mask_scope(self) -> MaskScope {
        match self {
            Method::ActorOnly => MaskScope::ActorOnly,
            Method::CriticOnly => MaskScope::CriticOnly,
            _ => MaskScope::Both,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.as_str()).collect();
                Error::Config(format!(
                    "unknown method {s:?}{}; accepted values: {}",
                    suggest(&norm, &names).map(|m| format!(" (did you mean {m:?}?)")).unwrap_or_default(),
                    names.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmupScope {
    /// Uniform-random actions for the first `init_steps` of every segment.
    #[default]
    PerTask,
    /// Only for the first `init_steps` of the whole run.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    /// `family:variant` identifiers, in order.
    pub tasks: Vec<String>,
    pub cycles: usize,
    pub method: Method,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            name: "nbsp-pointmass-2task".into(),
            tasks: vec!["pointmass:goal-east".into(), "pointmass:goal-west".into()],
            cycles: 2,
            method: Method::Nbsp,
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    /// Environment steps per segment (upper bound; early stopping may end sooner).
    pub segment_budget: usize,
    pub init_steps: usize,
    pub warmup: WarmupScope,
    /// Gradient steps per environment step.
    pub replay_ratio: usize,
    pub buffer_capacity: usize,
    /// Keep the current-task buffer across segments instead of starting fresh.
    pub persistent_buffer: bool,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub early_stop_threshold: f64,
    /// Number of most recent evaluations averaged for early stopping; 0 disables it.
    pub early_stop_window: usize,
    /// Reset the SAC temperature at the start of every segment.
    pub reset_temperature: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            segment_budget: 60_000,
            init_steps: 1000,
            warmup: WarmupScope::PerTask,
            replay_ratio: 2,
            buffer_capacity: 100_000,
            persistent_buffer: false,
            eval_interval: 2000,
            eval_episodes: 20,
            early_stop_threshold: 0.9,
            early_stop_window: 10,
            reset_temperature: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NbspSection {
    pub proportion: f64,
    pub alpha_mask: f64,
    pub replay_interval: u64,
    pub store_size: usize,
    /// Prior buffer capacity; 0 means `store_size × segments`.
    pub prior_capacity: usize,
    pub merge_rule: MergeRule,
    pub ranking_scope: RankingScope,
    pub trace_steps: usize,
    pub trace_mode: SampleMode,
}

impl Default for NbspSection {
    fn default() -> Self {
        Self {
            proportion: 0.2,
            alpha_mask: 0.2,
            replay_interval: 10,
            store_size: 10_000,
            prior_capacity: 0,
            merge_rule: MergeRule::Min,
            ranking_scope: RankingScope::PerNetwork,
            trace_steps: 5000,
            trace_mode: SampleMode::Stochastic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub checkpoints: bool,
    /// Log one row to `updates.csv` every this many gradient steps; 0 disables it.
    pub update_log_interval: usize,
    /// Write identification traces for every segment.
    pub export_traces: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            checkpoints: true,
            update_log_interval: 100,
            export_traces: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub training: TrainingSection,
    pub sac: SacConfig,
    pub nbsp: NbspSection,
    pub output: OutputSection,
}

/// Closest candidate within a small edit distance.
pub fn suggest<'a>(key: &str, candidates: &[&'a str]) -> Option<&'a str> {
    candidates
        .iter()
        .map(|c| (strsim::normalized_damerau_levenshtein(key, c), *c))
        .filter(|(score, _)| *score >= 0.6)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| c)
}

fn check_keys(value: &toml::Value, reference: &toml::Value, path: &str) -> Result<()> {
    let (Some(table), Some(known)) = (value.as_table(), reference.as_table()) else {
        return Ok(());
    };
    for (k, v) in table {
        let full = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
        match known.get(k) {
            Some(r) => check_keys(v, r, &full)?,
            None => {
                let names: Vec<&str> = known.keys().map(String::as_str).collect();
                let hint = suggest(k, &names).map(|s| format!(" (did you mean {s:?}?)")).unwrap_or_default();
                let scope = if path.is_empty() { "top level".to_owned() } else { format!("[{path}]") };
                return Err(Error::Config(format!(
                    "unknown key {full:?}{hint}; accepted keys in {scope}: {}",
                    names.join(", ")
                )));
            }
        }
    }
    Ok(())
}

pub const PRESETS: [&str; 5] = [
    "nbsp-pointmass-2task",
    "base-pointmass-2task",
    "nbsp-gridworld-2task",
    "base-gridworld-2task",
    "sac-pointmass-single",
];

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let value: toml::Value = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("config is not valid TOML: {}", e.message())))?;
        let reference = toml::Value::try_from(ExperimentConfig::default())
            .map_err(|e| Error::Config(format!("internal config schema: {e}")))?;
        check_keys(&value, &reference, "")?;
        let cfg: ExperimentConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_owned()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// Effective configuration as TOML; re-parses to an identical value.
    pub fn snapshot(&self) -> String {
        toml::to_string(self).expect("config always serialises")
    }

    /// SHA-256 of the snapshot text, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.snapshot().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn preset(name: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let gridworld = || vec!["gridworld:goal-east".to_owned(), "gridworld:goal-west".to_owned()];
        match name {
            "nbsp-pointmass-2task" => {}
            "base-pointmass-2task" => cfg.experiment.method = Method::Base,
            "nbsp-gridworld-2task" | "base-gridworld-2task" => {
                cfg.experiment.tasks = gridworld();
                cfg.training.segment_budget = 30_000;
                if name.starts_with("base") {
                    cfg.experiment.method = Method::Base;
                }
            }
            "sac-pointmass-single" => {
                cfg.experiment.tasks = vec!["pointmass:goal-east".into()];
                cfg.experiment.cycles = 1;
                cfg.experiment.method = Method::Base;
                cfg.training.early_stop_window = 0;
            }
            _ => {
                return Err(Error::Config(format!(
                    "unknown preset {name:?}{}; available presets: {}",
                    suggest(name, &PRESETS).map(|s| format!(" (did you mean {s:?}?)")).unwrap_or_default(),
                    PRESETS.join(", ")
                )))
            }
        }
        cfg.experiment.name = name.to_owned();
        Ok(cfg)
    }

    pub fn task_specs(&self) -> Result<Vec<TaskSpec>> {
        self.experiment.tasks.iter().map(|t| TaskSpec::parse(t)).collect()
    }

    /// `cycles × |tasks|`.
    pub fn segments(&self) -> usize {
        self.experiment.cycles * self.experiment.tasks.len()
    }

    pub fn prior_capacity(&self) -> usize {
        if self.nbsp.prior_capacity > 0 {
            self.nbsp.prior_capacity
        } else {
            (self.nbsp.store_size * self.segments()).max(1)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let e = &self.experiment;
        if e.tasks.is_empty() {
            return bad("experiment.tasks must name at least one task".into());
        }
        let specs = self.task_specs()?;
        if specs.iter().any(|s| s.family != specs[0].family) {
            return bad("experiment.tasks must all come from one family".into());
        }
        if e.cycles == 0 {
            return bad("experiment.cycles must be at least 1".into());
        }
        if e.seeds.is_empty() {
            return bad("experiment.seeds must not be empty".into());
        }
        let t = &self.training;
        if t.segment_budget == 0 {
            return bad("training.segment_budget must be positive".into());
        }
        if t.replay_ratio == 0 {
            return bad("training.replay_ratio must be at least 1".into());
        }
        if t.buffer_capacity < self.sac.batch_size {
            return bad("training.buffer_capacity must hold at least one batch".into());
        }
        if t.eval_interval == 0 || t.eval_episodes == 0 {
            return bad("training.eval_interval and training.eval_episodes must be positive".into());
        }
        if !(0.0..=1.0).contains(&t.early_stop_threshold) {
            return bad("training.early_stop_threshold must lie in [0, 1]".into());
        }
        self.sac.validate()?;
        let n = &self.nbsp;
        // 0 switches identification off, which with store_size 0 reduces
        // NBSP to plain SAC.
        if !(0.0..=1.0).contains(&n.proportion) {
            return bad(format!("nbsp.proportion {} must lie in [0, 1]", n.proportion));
        }
        if !(0.0..=1.0).contains(&n.alpha_mask) {
            return bad(format!("nbsp.alpha_mask {} must lie in [0, 1]", n.alpha_mask));
        }
        if n.replay_interval == 0 {
            return bad("nbsp.replay_interval must be at least 1".into());
        }
        if n.trace_steps == 0 {
            return bad("nbsp.trace_steps must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trips() {
        for p in PRESETS {
            let cfg = ExperimentConfig::preset(p).unwrap();
            let back = ExperimentConfig::from_toml_str(&cfg.snapshot()).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.hash(), cfg.hash());
        }
    }

    #[test]
    fn unknown_key_suggests_spelling() {
        let err = ExperimentConfig::from_toml_str("[nbsp]\nreplayinterval = 5\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("replayinterval") && msg.contains("\"replay_interval\""), "{msg}");
        let err = ExperimentConfig::from_toml_str("[nbps]\n").unwrap_err().to_string();
        assert!(err.contains("\"nbsp\""), "{err}");
    }

    #[test]
    fn partial_files_take_defaults() {
        let cfg = ExperimentConfig::from_toml_str("[experiment]\nmethod = \"replay_only\"\n").unwrap();
        assert_eq!(cfg.experiment.method, Method::ReplayOnly);
        assert_eq!(cfg.nbsp.replay_interval, 10);
        assert_eq!(cfg.sac.gamma, 0.99);
        assert_eq!(cfg.segments(), 4);
        assert_eq!(cfg.prior_capacity(), 40_000);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(ExperimentConfig::from_toml_str("[nbsp]\nproportion = -0.1\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[nbsp]\nproportion = 1.5\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[nbsp]\nproportion = 0.0\n").is_ok());
        assert!(ExperimentConfig::from_toml_str("[experiment]\ncycles = 0\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[experiment]\nmethod = \"nbps\"\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[experiment]\ntasks = [\"pointmass:goal-east\", \"gridworld:goal-west\"]\n").is_err());
    }

    #[test]
    fn method_parsing() {
        assert_eq!("mask-only".parse::<Method>().unwrap(), Method::MaskOnly);
        let err = "replay_onyl".parse::<Method>().unwrap_err().to_string();
        assert!(err.contains("replay_only"));
        assert!(Method::Base.uses_masks() == false && Method::Base.uses_replay() == false);
        assert!(!Method::MaskOnly.uses_replay() && !Method::ReplayOnly.uses_masks());
    }

    #[test]
    fn unknown_preset_lists_options() {
        let err = ExperimentConfig::preset("nbsp-pointmas-2task").unwrap_err().to_string();
        assert!(err.contains("did you mean \"nbsp-pointmass-2task\""), "{err}");
    }
}
