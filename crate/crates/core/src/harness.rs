//! Cycling-task experiments.
//!
//! A run trains one agent on `cycles × tasks` segments in order. After each
//! segment the method decides whether to identify skill neurons and update
//! the mask, and whether to store experience in the prior buffer; then the
//! agent is evaluated on the tasks of every segment so far, filling one row
//! of the sr matrix.
//!
//! Run directory layout:
//!
//! ```text
//! config.snapshot        effective configuration (TOML)
//! sr_matrix.csv          i,j,value (1-based segments)
//! curves.csv             segment,env_step,eval_value (env_step 0 = before training)
//! updates.csv            sampled per-update scalars
//! masks/segment_<i>.tsv  network,layer,index,score,mask after segment i
//! prior/segment_<i>.json prior buffer size and composition after segment i
//! checkpoints/segment_<i>.ckpt
//! traces/segment_<i>_{activations,gpm}.csv   (when enabled)
//! metrics.json           summary, per-segment reports, status
//! FAILED                 present only when a segment aborted
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Method, WarmupScope};
use crate::envs::{self, GpmKind, TaskSpec};
use crate::metrics::{mean_std, MetricSummary, ReturnNorm, SrMatrix};
use crate::nbsp::{nbsp_gradient_step, store_prior, NbspState};
use crate::rng;
use crate::sac::{ReplayBuffer, SacAgent, SampleMode, Transition};
use crate::skill::{self, NetworkKind, TraceOptions};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// 1-based.
    pub segment: usize,
    pub env_step: usize,
    pub eval_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    /// 1-based.
    pub segment: usize,
    pub task: String,
    pub env_steps: usize,
    pub grad_steps: u64,
    pub early_stopped: bool,
    /// Evaluation before any training on this segment.
    pub pre_eval: f64,
    pub final_eval: f64,
    pub skill_neurons: usize,
    pub protected_neurons: BTreeMap<NetworkKind, usize>,
    pub prior_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed { segment: usize, reason: String },
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub run_id: String,
    pub seed: u64,
    pub method: Method,
    pub config_hash: String,
    pub sr: SrMatrix,
    pub curves: Vec<CurvePoint>,
    pub segments: Vec<SegmentReport>,
    pub summary: Option<MetricSummary>,
    pub status: RunStatus,
    pub grad_steps: u64,
    pub prior_steps: u64,
    pub fallbacks: u64,
    pub dir: Option<PathBuf>,
}

impl RunArtifacts {
    pub fn succeeded(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    run_id: &'a str,
    seed: u64,
    method: Method,
    config_hash: &'a str,
    #[serde(flatten)]
    status: &'a RunStatus,
    summary: &'a Option<MetricSummary>,
    grad_steps: u64,
    prior_steps: u64,
    fallbacks: u64,
    segments: &'a [SegmentReport],
}

/// Mean GPM of `episodes` deterministic-policy episodes.
pub fn evaluate(agent: &SacAgent, task: &TaskSpec, episodes: usize, seed: u64, norm: Option<&ReturnNorm>) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::InvalidInput("evaluation needs at least one episode".into()));
    }
    // Deterministic mode never draws from this stream.
    let mut unused = rng::stream(seed, "eval-unused", 0);
    let mut total = 0.0;
    for e in 0..episodes {
        let ep_seed = rng::derive_seed(seed, "eval-episode", e as u64);
        let rec = envs::run_episode(task, ep_seed, |s| {
            Ok(agent.sample_action(&s.observation(), SampleMode::Deterministic, &mut unused)?.0)
        })?;
        total += envs::gpm(&rec, task, norm)?;
    }
    Ok(total / episodes as f64)
}

/// Return anchors for every normalised-return task in `tasks`.
pub fn task_norms(tasks: &[TaskSpec]) -> Result<BTreeMap<String, ReturnNorm>> {
    let mut out = BTreeMap::new();
    for t in tasks {
        if t.gpm_kind == GpmKind::NormalizedReturn && !out.contains_key(&t.id()) {
            out.insert(t.id(), envs::return_anchors(t)?);
        }
    }
    Ok(out)
}

struct Outputs {
    dir: PathBuf,
    updates: Option<BufWriter<fs::File>>,
}

impl Outputs {
    fn create(dir: &Path, cfg: &ExperimentConfig) -> Result<Self> {
        fs::create_dir_all(dir.join("masks"))?;
        fs::create_dir_all(dir.join("prior"))?;
        if cfg.output.checkpoints {
            fs::create_dir_all(dir.join("checkpoints"))?;
        }
        if cfg.output.export_traces {
            fs::create_dir_all(dir.join("traces"))?;
        }
        let _ = fs::remove_file(dir.join("FAILED"));
        fs::write(dir.join("config.snapshot"), cfg.snapshot())?;
        let updates = if cfg.output.update_log_interval > 0 {
            let mut w = BufWriter::new(fs::File::create(dir.join("updates.csv"))?);
            writeln!(w, "segment,grad_step,env_step,source,critic_loss,actor_loss,alpha,entropy,q_mean")?;
            Some(w)
        } else {
            None
        };
        Ok(Self {
            dir: dir.to_owned(),
            updates,
        })
    }
}

/// Result of training one segment.
#[derive(Debug, Clone)]
pub struct SegmentOutcome {
    pub curve: Vec<CurvePoint>,
    pub env_steps: usize,
    pub grad_steps: u64,
    pub early_stopped: bool,
}

/// Everything that persists across the segments of one run.
pub struct Trainer<'a> {
    pub cfg: &'a ExperimentConfig,
    pub seed: u64,
    pub agent: SacAgent,
    pub state: NbspState,
    pub buffer: ReplayBuffer,
    norms: BTreeMap<String, ReturnNorm>,
    explore_rng: rng::Rng,
    update_rng: rng::Rng,
    store_rng: rng::Rng,
    select_rng: rng::Rng,
    env_steps_total: u64,
    episodes_total: u64,
    outputs: Option<Outputs>,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a ExperimentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let tasks = cfg.task_specs()?;
        let first = &tasks[0];
        let agent = SacAgent::new(
            first.obs_dim(),
            first.action_space(),
            cfg.sac.clone(),
            &mut rng::stream(seed, "agent-init", 0),
        )?;
        let mut state = NbspState::new(&agent, cfg.nbsp.replay_interval, cfg.nbsp.alpha_mask, cfg.prior_capacity())?;
        state.merge_rule = cfg.nbsp.merge_rule;
        Ok(Self {
            cfg,
            seed,
            state,
            buffer: ReplayBuffer::new(cfg.training.buffer_capacity)?,
            norms: task_norms(&tasks)?,
            explore_rng: rng::stream(seed, "explore", 0),
            update_rng: rng::stream(seed, "update", 0),
            store_rng: rng::stream(seed, "store", 0),
            select_rng: rng::stream(seed, "select", 0),
            env_steps_total: 0,
            episodes_total: 0,
            outputs: None,
            agent,
        })
    }

    fn norm(&self, task: &TaskSpec) -> Option<&ReturnNorm> {
        self.norms.get(&task.id())
    }

    pub fn evaluate(&self, task: &TaskSpec) -> Result<f64> {
        evaluate(&self.agent, task, self.cfg.training.eval_episodes, self.seed, self.norm(task))
    }

    /// Trains on `task` for at most the segment budget, evaluating every
    /// `eval_interval` environment steps and stopping early once the mean of
    /// the last `early_stop_window` evaluations reaches the threshold
    /// (binary-success tasks only). `segment` is 1-based.
    pub fn train_segment(&mut self, segment: usize, task: &TaskSpec) -> Result<SegmentOutcome> {
        let t = &self.cfg.training;
        if !t.persistent_buffer {
            self.buffer.clear();
        }
        if t.reset_temperature {
            self.agent.log_alpha = self.cfg.sac.init_alpha.ln();
        }
        let mut curve = vec![CurvePoint {
            segment,
            env_step: 0,
            eval_value: self.evaluate(task)?,
        }];
        let binary = task.gpm_kind == GpmKind::BinarySuccess;
        let space = task.action_space();
        let mut evals: Vec<f64> = Vec::new();
        let mut grad_steps = 0u64;
        let mut early_stopped = false;
        let mut env_steps = 0usize;
        let mut state = envs::reset(task, rng::derive_seed(self.seed, "train-episode", self.episodes_total))?;

        while env_steps < t.segment_budget {
            let warming = match t.warmup {
                WarmupScope::PerTask => env_steps < t.init_steps,
                WarmupScope::Global => (self.env_steps_total as usize) < t.init_steps,
            };
            let obs = state.observation();
            let action = if warming {
                space.sample_uniform(&mut self.explore_rng)
            } else {
                self.agent.sample_action(&obs, SampleMode::Stochastic, &mut self.explore_rng)?.0
            };
            let out = envs::step(task, &state, &action)?;
            self.buffer.push(Transition {
                id: self.env_steps_total,
                s: obs,
                a: action.to_vec(),
                r: out.reward,
                s2: out.state.observation(),
                d: out.success,
            });
            env_steps += 1;
            self.env_steps_total += 1;
            state = if out.done {
                self.episodes_total += 1;
                envs::reset(task, rng::derive_seed(self.seed, "train-episode", self.episodes_total))?
            } else {
                out.state
            };

            if !warming && self.buffer.len() >= self.agent.config.batch_size {
                for _ in 0..t.replay_ratio {
                    let rep = nbsp_gradient_step(&mut self.agent, &mut self.state, &self.buffer, &mut self.update_rng)?;
                    grad_steps += 1;
                    let every = self.cfg.output.update_log_interval as u64;
                    if let Some(w) = self.outputs.as_mut().and_then(|o| o.updates.as_mut()) {
                        if every > 0 && self.state.grad_steps % every == 0 {
                            let s = rep.stats;
                            writeln!(
                                w,
                                "{segment},{},{env_steps},{},{:?},{:?},{:?},{:?},{:?}",
                                self.state.grad_steps,
                                if rep.used_prior { "prior" } else { "current" },
                                s.critic_loss,
                                s.actor_loss,
                                s.alpha,
                                s.entropy,
                                s.q_mean
                            )?;
                        }
                    }
                }
            }

            if env_steps % t.eval_interval == 0 {
                let v = self.evaluate(task)?;
                curve.push(CurvePoint {
                    segment,
                    env_step: env_steps,
                    eval_value: v,
                });
                evals.push(v);
                let w = t.early_stop_window;
                if binary && w > 0 && evals.len() >= w {
                    let recent = evals[evals.len() - w..].iter().sum::<f64>() / w as f64;
                    if recent >= t.early_stop_threshold {
                        early_stopped = true;
                        break;
                    }
                }
            }
        }
        Ok(SegmentOutcome {
            curve,
            env_steps,
            grad_steps,
            early_stopped,
        })
    }

    /// Identification, mask update and prior storage as the method requires.
    /// Returns the number of neurons selected this segment.
    pub fn after_segment(&mut self, segment: usize, task: &TaskSpec) -> Result<usize> {
        let method = self.cfg.experiment.method;
        let n = &self.cfg.nbsp;
        let mut selected = 0;
        let mut scores = BTreeMap::new();
        if method.uses_masks() && n.proportion > 0.0 {
            let opts = TraceOptions {
                steps: n.trace_steps,
                mode: n.trace_mode,
                seed: rng::derive_seed(self.seed, "trace", segment as u64),
            };
            let trace = skill::collect_trace(&self.agent, task, &opts, self.norm(task))?;
            if let (Some(o), true) = (&self.outputs, self.cfg.output.export_traces) {
                let dir = o.dir.join("traces");
                trace.write_activations_csv(BufWriter::new(fs::File::create(
                    dir.join(format!("segment_{segment}_activations.csv")),
                )?))?;
                trace.write_gpm_csv(BufWriter::new(fs::File::create(dir.join(format!("segment_{segment}_gpm.csv")))?))?;
            }
            let scored = skill::score_trace(&trace)?;
            scores = scored.iter().copied().collect();
            let set = if method.random_selection() {
                skill::select_random_neurons(&scored, n.proportion, n.ranking_scope, &task.id(), &mut self.select_rng)?
            } else {
                skill::select_skill_neurons(&scored, n.proportion, n.ranking_scope, &task.id())?
            };
            selected = set.len();
            self.state.absorb(set, &self.agent, method.mask_scope())?;
        }
        if method.uses_replay() {
            store_prior(
                &self.buffer,
                &mut self.state.prior,
                n.store_size,
                segment,
                &task.id(),
                &mut self.store_rng,
            );
        }
        if let Some(o) = &self.outputs {
            let f = fs::File::create(o.dir.join("masks").join(format!("segment_{segment}.tsv")))?;
            self.state.mask.write_tsv(&scores, BufWriter::new(f))?;
            let stats = serde_json::to_string_pretty(&self.state.prior.stats())
                .map_err(|e| Error::format("prior stats", e.to_string()))?;
            fs::write(o.dir.join("prior").join(format!("segment_{segment}.json")), stats + "\n")?;
            if self.cfg.output.checkpoints {
                self.agent
                    .to_checkpoint()
                    .save(&o.dir.join("checkpoints").join(format!("segment_{segment}.ckpt")))?;
            }
        }
        Ok(selected)
    }
}

fn write_run_files(dir: &Path, art: &RunArtifacts) -> Result<()> {
    fs::write(dir.join("sr_matrix.csv"), art.sr.to_csv())?;
    let mut curves = String::from("segment,env_step,eval_value\n");
    for p in &art.curves {
        curves.push_str(&format!("{},{},{}\n", p.segment, p.env_step, p.eval_value));
    }
    fs::write(dir.join("curves.csv"), curves)?;
    let file = MetricsFile {
        run_id: &art.run_id,
        seed: art.seed,
        method: art.method,
        config_hash: &art.config_hash,
        status: &art.status,
        summary: &art.summary,
        grad_steps: art.grad_steps,
        prior_steps: art.prior_steps,
        fallbacks: art.fallbacks,
        segments: &art.segments,
    };
    let json = serde_json::to_string_pretty(&file).map_err(|e| Error::format("metrics.json", e.to_string()))?;
    fs::write(dir.join("metrics.json"), json + "\n")?;
    if let RunStatus::Failed { segment, reason } = &art.status {
        fs::write(dir.join("FAILED"), format!("segment {segment}: {reason}\n"))?;
    }
    Ok(())
}

pub fn run_id(cfg: &ExperimentConfig, seed: u64) -> String {
    format!("{}-{}-seed{seed}", cfg.experiment.name, cfg.experiment.method)
}

/// Runs every segment of `cfg` for one seed, writing the run directory to
/// `dir` when given. A failing segment ends the run early with a
/// [`RunStatus::Failed`] marker; only errors outside training (I/O, invalid
/// configuration) are returned as `Err`.
pub fn run_cycling_experiment(cfg: &ExperimentConfig, seed: u64, dir: Option<&Path>) -> Result<RunArtifacts> {
    let tasks = cfg.task_specs()?;
    let mut trainer = Trainer::new(cfg, seed)?;
    if let Some(d) = dir {
        trainer.outputs = Some(Outputs::create(d, cfg)?);
    }
    let k = cfg.segments();
    let mut art = RunArtifacts {
        run_id: run_id(cfg, seed),
        seed,
        method: cfg.experiment.method,
        config_hash: cfg.hash(),
        sr: SrMatrix::new(k),
        curves: Vec::new(),
        segments: Vec::new(),
        summary: None,
        status: RunStatus::Completed,
        grad_steps: 0,
        prior_steps: 0,
        fallbacks: 0,
        dir: dir.map(Path::to_owned),
    };

    for i in 0..k {
        let segment = i + 1;
        let task = &tasks[i % tasks.len()];
        let attempt = (|| -> Result<SegmentReport> {
            let out = trainer.train_segment(segment, task)?;
            art.curves.extend(&out.curve);
            let selected = trainer.after_segment(segment, task)?;
            let mut row_cache: BTreeMap<String, f64> = BTreeMap::new();
            for j in 0..=i {
                let tj = &tasks[j % tasks.len()];
                let v = match row_cache.get(&tj.id()) {
                    Some(v) => *v,
                    None => {
                        let v = trainer.evaluate(tj)?;
                        row_cache.insert(tj.id(), v);
                        v
                    }
                };
                art.sr.set(i, j, v)?;
            }
            Ok(SegmentReport {
                segment,
                task: task.id(),
                env_steps: out.env_steps,
                grad_steps: out.grad_steps,
                early_stopped: out.early_stopped,
                pre_eval: out.curve[0].eval_value,
                final_eval: art.sr.get(i, i).expect("just written"),
                skill_neurons: selected,
                protected_neurons: trainer.state.mask.protected_counts(),
                prior_size: trainer.state.prior.len(),
            })
        })();
        match attempt {
            Ok(rep) => art.segments.push(rep),
            Err(e @ (Error::Io(_) | Error::Config(_))) => return Err(e),
            Err(e) => {
                art.status = RunStatus::Failed {
                    segment,
                    reason: e.to_string(),
                };
                break;
            }
        }
        if let Some(o) = trainer.outputs.as_mut() {
            if let Some(w) = o.updates.as_mut() {
                w.flush()?;
            }
            write_run_files(&o.dir, &art)?;
        }
    }

    art.grad_steps = trainer.state.grad_steps;
    art.prior_steps = trainer.state.prior_steps;
    art.fallbacks = trainer.state.fallbacks;
    if art.sr.is_complete() {
        let normalized = tasks.iter().any(|t| t.gpm_kind == GpmKind::NormalizedReturn);
        art.summary = Some(MetricSummary::compute(&art.sr, seed, normalized)?);
    }
    if let Some(o) = trainer.outputs.as_mut() {
        if let Some(w) = o.updates.as_mut() {
            w.flush()?;
        }
        write_run_files(&o.dir, &art)?;
    }
    Ok(art)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub proportion: f64,
    pub seed: u64,
    pub asr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub proportion: f64,
    pub mean_asr: f64,
    pub std_asr: f64,
    pub runs: usize,
}

/// Runs the configured experiment for every proportion and seed. Run
/// directories go to `<root>/p<proportion>/seed_<seed>` when `root` is given.
pub fn proportion_sweep(cfg: &ExperimentConfig, proportions: &[f64], root: Option<&Path>) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &p in proportions {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Config(format!("sweep proportion {p} outside (0, 1]")));
        }
        let mut c = cfg.clone();
        c.nbsp.proportion = p;
        for &seed in &cfg.experiment.seeds {
            let dir = root.map(|r| r.join(format!("p{p}")).join(format!("seed_{seed}")));
            let art = run_cycling_experiment(&c, seed, dir.as_deref())?;
            let summary = art.summary.as_ref().ok_or_else(|| {
                Error::Invariant(format!("run {} did not complete: {:?}", art.run_id, art.status))
            })?;
            rows.push(SweepRow {
                proportion: p,
                seed,
                asr: summary.asr,
            });
        }
    }
    Ok(rows)
}

/// Mean and sample standard deviation of ASR per proportion, in request order.
pub fn summarize_sweep(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut order: Vec<f64> = Vec::new();
    for r in rows {
        if !order.contains(&r.proportion) {
            order.push(r.proportion);
        }
    }
    order
        .into_iter()
        .map(|p| {
            let v: Vec<f64> = rows.iter().filter(|r| r.proportion == p).map(|r| r.asr).collect();
            let (mean_asr, std_asr) = mean_std(&v);
            SweepSummary {
                proportion: p,
                mean_asr,
                std_asr,
                runs: v.len(),
            }
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("proportion,seed,asr\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.proportion, r.seed, r.asr));
    }
    s
}

/// Parses [`sweep_csv`] output.
pub fn read_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    if lines.next().map(str::trim) != Some("proportion,seed,asr") {
        return Err(Error::format("sweep.csv", "expected header proportion,seed,asr"));
    }
    lines
        .enumerate()
        .map(|(n, l)| {
            let f: Vec<&str> = l.split(',').map(str::trim).collect();
            let bad = || Error::format("sweep.csv", format!("line {}: {l:?}", n + 2));
            if f.len() != 3 {
                return Err(bad());
            }
            Ok(SweepRow {
                proportion: f[0].parse().map_err(|_| bad())?,
                seed: f[1].parse().map_err(|_| bad())?,
                asr: f[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(method: Method) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::preset("nbsp-gridworld-2task").unwrap();
        cfg.experiment.method = method;
        cfg.experiment.seeds = vec![0];
        cfg.training.segment_budget = 300;
        cfg.training.init_steps = 100;
        cfg.training.eval_interval = 100;
        cfg.training.eval_episodes = 2;
        cfg.sac.hidden = vec![8];
        cfg.sac.batch_size = 16;
        cfg.nbsp.trace_steps = 200;
        cfg.nbsp.store_size = 50;
        cfg
    }

    #[test]
    fn scripted_expert_scores_one_and_random_scores_low() {
        let east = TaskSpec::parse("pointmass:goal-east").unwrap();
        let mut total = 0.0;
        for e in 0..20 {
            let rec = envs::run_episode(&east, e, |s| Ok(envs::expert_action(s))).unwrap();
            total += envs::gpm(&rec, &east, None).unwrap();
        }
        assert_eq!(total / 20.0, 1.0);

        let mut r = rng::stream(0, "random-eval", 0);
        let space = east.action_space();
        let mut hits = 0.0;
        for e in 0..20 {
            let rec = envs::run_episode(&east, e, |_| Ok(space.sample_uniform(&mut r))).unwrap();
            hits += envs::gpm(&rec, &east, None).unwrap();
        }
        assert!(hits / 20.0 < 0.2);
    }

    #[test]
    fn two_task_two_cycle_run_fills_triangle() {
        let cfg = tiny(Method::Nbsp);
        let dir = tempfile::tempdir().unwrap();
        let art = run_cycling_experiment(&cfg, 0, Some(dir.path())).unwrap();
        assert!(art.succeeded(), "{:?}", art.status);
        assert_eq!(art.sr.entries().len(), 10);
        assert!(art.summary.is_some());
        for f in ["config.snapshot", "sr_matrix.csv", "curves.csv", "metrics.json", "updates.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        for i in 1..=4 {
            assert!(dir.path().join(format!("masks/segment_{i}.tsv")).exists());
            assert!(dir.path().join(format!("checkpoints/segment_{i}.ckpt")).exists());
        }
        let snap = fs::read_to_string(dir.path().join("config.snapshot")).unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&snap).unwrap(), cfg);
        // segments i and i + 2 share a task
        assert_eq!(art.segments[0].task, art.segments[2].task);
        // segment accounting
        for s in &art.segments {
            assert!(s.env_steps <= cfg.training.segment_budget);
            assert_eq!(s.grad_steps as usize, 2 * (s.env_steps - 100));
        }
    }

    #[test]
    fn reruns_are_identical() {
        let cfg = tiny(Method::Nbsp);
        let a = run_cycling_experiment(&cfg, 3, None).unwrap();
        let b = run_cycling_experiment(&cfg, 3, None).unwrap();
        assert_eq!(a.sr.to_csv(), b.sr.to_csv());
        assert_eq!(a.curves, b.curves);
    }

    #[test]
    fn base_never_masks_or_replays() {
        let cfg = tiny(Method::Base);
        let art = run_cycling_experiment(&cfg, 1, None).unwrap();
        assert_eq!(art.prior_steps, 0);
        assert!(art.segments.iter().all(|s| s.skill_neurons == 0 && s.prior_size == 0));
        assert!(art
            .segments
            .iter()
            .all(|s| s.protected_neurons.values().all(|&n| n == 0)));
    }

    #[test]
    fn ablations_isolate_components() {
        let mask_only = run_cycling_experiment(&tiny(Method::MaskOnly), 2, None).unwrap();
        assert_eq!(mask_only.prior_steps, 0);
        assert!(mask_only.segments.iter().all(|s| s.prior_size == 0));

        let replay_only = run_cycling_experiment(&tiny(Method::ReplayOnly), 2, None).unwrap();
        assert!(replay_only.prior_steps > 0);
        assert!(replay_only
            .segments
            .iter()
            .all(|s| s.protected_neurons.values().all(|&n| n == 0)));

        let actor_only = run_cycling_experiment(&tiny(Method::ActorOnly), 2, None).unwrap();
        let last = actor_only.segments.last().unwrap();
        assert!(last.protected_neurons[&NetworkKind::Actor] > 0);
        assert_eq!(last.protected_neurons[&NetworkKind::Critic1], 0);
        assert_eq!(last.protected_neurons[&NetworkKind::Critic2], 0);

        let critic_only = run_cycling_experiment(&tiny(Method::CriticOnly), 2, None).unwrap();
        let last = critic_only.segments.last().unwrap();
        assert_eq!(last.protected_neurons[&NetworkKind::Actor], 0);
        assert!(last.protected_neurons[&NetworkKind::Critic1] > 0);
    }

    #[test]
    fn sweep_rows_echo_proportions() {
        let mut cfg = tiny(Method::Nbsp);
        cfg.experiment.cycles = 1;
        cfg.experiment.tasks.truncate(1);
        let rows = proportion_sweep(&cfg, &[0.05, 0.2, 0.5], None).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows.iter().map(|r| r.proportion).collect::<Vec<_>>(), vec![0.05, 0.2, 0.5]);
        let back = read_sweep_csv(&sweep_csv(&rows)).unwrap();
        assert_eq!(back, rows);
        assert_eq!(summarize_sweep(&rows).len(), 3);
    }
}
