//! Goal-oriented skill neuron identification.
//!
//! A trace records, for every step of some evaluation rollouts, the
//! activation of every eligible neuron (all hidden layers of the actor and
//! both critics) and the goal proximity metric of the episode the step
//! belongs to. Identification then runs two passes over the trace:
//!
//! 1. standards: mean activation `ā` per neuron and mean GPM `q̄`;
//! 2. accuracy: the fraction of steps on which `a > ā` agrees with `q > q̄`.
//!
//! A neuron's score is `max(acc, 1 - acc)`, so strongly anti-correlated
//! neurons count as much as correlated ones. The top-scoring fraction of
//! neurons become skill neurons.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{self, Action, ActionSpace, TaskSpec};
use crate::metrics::ReturnNorm;
use crate::nn::DenseNet;
use crate::rng;
use crate::sac::{SacAgent, SampleMode};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    Actor,
    Critic1,
    Critic2,
}

impl NetworkKind {
    pub const ALL: [NetworkKind; 3] = [NetworkKind::Actor, NetworkKind::Critic1, NetworkKind::Critic2];

    pub fn as_str(self) -> &'static str {
        match self {
            NetworkKind::Actor => "actor",
            NetworkKind::Critic1 => "critic1",
            NetworkKind::Critic2 => "critic2",
        }
    }

    pub fn is_critic(self) -> bool {
        self != NetworkKind::Actor
    }

    pub fn net(self, agent: &SacAgent) -> &DenseNet {
        match self {
            NetworkKind::Actor => &agent.actor,
            NetworkKind::Critic1 => &agent.q1,
            NetworkKind::Critic2 => &agent.q2,
        }
    }
}

impl fmt::Display for NetworkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NetworkKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "actor" => Ok(NetworkKind::Actor),
            "critic1" | "q1" => Ok(NetworkKind::Critic1),
            "critic2" | "q2" => Ok(NetworkKind::Critic2),
            _ => Err(Error::InvalidInput(format!(
                "unknown network {s:?} (expected actor, critic1 or critic2)"
            ))),
        }
    }
}

/// A hidden neuron. Ordering is `(network, layer, index)`, which is also the
/// tie-break order for equal scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NeuronId {
    pub network: NetworkKind,
    pub layer: usize,
    pub index: usize,
}

impl NeuronId {
    pub fn new(network: NetworkKind, layer: usize, index: usize) -> Self {
        Self { network, layer, index }
    }
}

impl fmt::Display for NeuronId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.network, self.layer, self.index)
    }
}

impl FromStr for NeuronId {
    type Err = Error;

    /// `network/layer/index`, e.g. `actor/0/12`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('/').collect();
        let bad = || Error::InvalidInput(format!("neuron id {s:?} must look like actor/0/12"));
        if parts.len() != 3 {
            return Err(bad());
        }
        Ok(Self {
            network: parts[0].parse()?,
            layer: parts[1].parse().map_err(|_| bad())?,
            index: parts[2].parse().map_err(|_| bad())?,
        })
    }
}

/// Every neuron outside the final layer of `net`, in layer/index order.
pub fn eligible_neurons(kind: NetworkKind, net: &DenseNet) -> Vec<NeuronId> {
    let sizes = net.layer_sizes();
    sizes[..sizes.len() - 1]
        .iter()
        .enumerate()
        .flat_map(|(l, &n)| (0..n).map(move |i| NeuronId::new(kind, l, i)))
        .collect()
}

pub fn agent_neurons(agent: &SacAgent) -> Vec<NeuronId> {
    NetworkKind::ALL
        .iter()
        .flat_map(|&k| eligible_neurons(k, k.net(agent)))
        .collect()
}

/// Per-step activations (row-major `steps × neurons`) plus per-step GPM.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub neurons: Vec<NeuronId>,
    pub activations: Vec<f64>,
    pub gpm: Vec<f64>,
    pub episode: Vec<usize>,
}

impl Trace {
    pub fn new(neurons: Vec<NeuronId>) -> Self {
        Self {
            neurons,
            activations: Vec::new(),
            gpm: Vec::new(),
            episode: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.gpm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gpm.is_empty()
    }

    pub fn width(&self) -> usize {
        self.neurons.len()
    }

    pub fn push(&mut self, activations: &[f64], gpm: f64, episode: usize) -> Result<()> {
        if activations.len() != self.neurons.len() {
            return Err(Error::shape("trace row", self.neurons.len(), activations.len()));
        }
        self.activations.extend_from_slice(activations);
        self.gpm.push(gpm);
        self.episode.push(episode);
        Ok(())
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let n = self.neurons.len();
        &self.activations[t * n..(t + 1) * n]
    }

    pub fn column(&self, neuron: &NeuronId) -> Option<Vec<f64>> {
        let c = self.neurons.iter().position(|n| n == neuron)?;
        Some((0..self.len()).map(|t| self.activations[t * self.width() + c]).collect())
    }

    /// Long-format activations: `step,episode,network,layer,index,activation`.
    pub fn write_activations_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,episode,network,layer,index,activation")?;
        for t in 0..self.len() {
            for (n, a) in self.neurons.iter().zip(self.row(t)) {
                writeln!(w, "{t},{},{},{},{},{a:?}", self.episode[t], n.network, n.layer, n.index)?;
            }
        }
        Ok(())
    }

    /// `step,gpm`.
    pub fn write_gpm_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,gpm")?;
        for (t, q) in self.gpm.iter().enumerate() {
            writeln!(w, "{t},{q:?}")?;
        }
        Ok(())
    }

    /// Reads the two files written by [`Trace::write_activations_csv`] and
    /// [`Trace::write_gpm_csv`].
    pub fn read_csv<A: BufRead, G: BufRead>(activations: A, gpm: G) -> Result<Self> {
        let fmt_err = |line: usize, what: &str| Error::format("trace csv", format!("line {line}: {what}"));
        let mut gpm_values = Vec::new();
        for (i, line) in gpm.lines().enumerate().skip(1) {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (_, v) = line.split_once(',').ok_or_else(|| fmt_err(i + 1, "expected step,gpm"))?;
            gpm_values.push(v.trim().parse::<f64>().map_err(|_| fmt_err(i + 1, "bad gpm"))?);
        }
        let mut neurons: Vec<NeuronId> = Vec::new();
        let mut index: BTreeMap<NeuronId, usize> = BTreeMap::new();
        let mut rows: Vec<(usize, usize, usize, f64)> = Vec::new();
        for (i, line) in activations.lines().enumerate().skip(1) {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(fmt_err(i + 1, "expected 6 columns"));
            }
            let num = |s: &str| s.trim().parse::<usize>().map_err(|_| fmt_err(i + 1, "bad integer"));
            let id = NeuronId::new(f[2].trim().parse()?, num(f[3])?, num(f[4])?);
            let col = *index.entry(id).or_insert_with(|| {
                neurons.push(id);
                neurons.len() - 1
            });
            let a = f[5].trim().parse::<f64>().map_err(|_| fmt_err(i + 1, "bad activation"))?;
            rows.push((num(f[0])?, num(f[1])?, col, a));
        }
        let steps = gpm_values.len();
        let width = neurons.len();
        let mut trace = Trace::new(neurons);
        trace.activations = vec![f64::NAN; steps * width];
        trace.episode = vec![0; steps];
        for (t, ep, col, a) in rows {
            if t >= steps {
                return Err(Error::format("trace csv", format!("step {t} has no gpm entry")));
            }
            trace.activations[t * width + col] = a;
            trace.episode[t] = ep;
        }
        if trace.activations.iter().any(|v| v.is_nan()) {
            return Err(Error::format("trace csv", "missing activation entries"));
        }
        trace.gpm = gpm_values;
        Ok(trace)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankingScope {
    /// Each network selects its own top fraction.
    PerNetwork,
    /// One ranking over all networks together.
    Pooled,
}

/// Rollout settings for [`collect_trace`].
#[derive(Debug, Clone)]
pub struct TraceOptions {
    pub steps: usize,
    pub mode: SampleMode,
    pub seed: u64,
}

/// Rolls out the agent and records activations of every eligible neuron.
///
/// Actor neurons see the state; critic neurons see the state and the executed
/// action. Each step carries its episode's GPM. Only whole episodes finished
/// within `steps` are kept.
pub fn collect_trace(
    agent: &SacAgent,
    task: &TaskSpec,
    opts: &TraceOptions,
    norm: Option<&ReturnNorm>,
) -> Result<Trace> {
    if opts.steps == 0 {
        return Err(Error::InvalidInput("trace needs at least one step".into()));
    }
    let mut trace = Trace::new(agent_neurons(agent));
    let mut act_rng = rng::stream(opts.seed, "trace-action", 0);
    let mut episode = 0usize;
    let mut pending: Vec<f64> = Vec::new();
    loop {
        pending.clear();
        let ep_seed = rng::derive_seed(opts.seed, "trace-episode", episode as u64);
        let rec = envs::run_episode(task, ep_seed, |state| {
            let obs = state.observation();
            let (out, actor_rec) = agent.actor.forward(&obs, true)?;
            let (action, _) = agent.action_from_output(&out, opts.mode, &mut act_rng)?;
            let critic_in = match agent.action_space() {
                ActionSpace::Continuous { .. } => {
                    let mut v = obs.clone();
                    v.extend(action.to_vec());
                    v
                }
                ActionSpace::Discrete { .. } => obs,
            };
            let (_, q1_rec) = agent.q1.forward(&critic_in, true)?;
            let (_, q2_rec) = agent.q2.forward(&critic_in, true)?;
            for rec in [actor_rec, q1_rec, q2_rec] {
                let layers = rec.expect("recorded").layers;
                for l in &layers[..layers.len() - 1] {
                    pending.extend_from_slice(l);
                }
            }
            Ok::<Action, Error>(action)
        })?;
        let n = rec.steps.len();
        if trace.len() + n > opts.steps {
            break;
        }
        let q = envs::gpm(&rec, task, norm)?;
        let width = trace.width();
        for t in 0..n {
            trace.push(&pending[t * width..(t + 1) * width], q, episode)?;
        }
        episode += 1;
        if trace.len() == opts.steps {
            break;
        }
    }
    if trace.is_empty() {
        return Err(Error::Trace(format!(
            "no episode of {} finished within {} steps",
            task.id(),
            opts.steps
        )));
    }
    Ok(trace)
}

/// Mean activation per neuron and mean GPM.
#[derive(Debug, Clone, PartialEq)]
pub struct Standards {
    pub a_bar: Vec<f64>,
    pub q_bar: f64,
}

pub fn compute_standards(trace: &Trace) -> Result<Standards> {
    if trace.is_empty() {
        return Err(Error::Trace("empty trace".into()));
    }
    let t = trace.len() as f64;
    let mut a_bar = vec![0.0; trace.width()];
    for s in 0..trace.len() {
        for (acc, a) in a_bar.iter_mut().zip(trace.row(s)) {
            *acc += a;
        }
    }
    a_bar.iter_mut().for_each(|v| *v /= t);
    let q_bar = trace.gpm.iter().sum::<f64>() / t;
    Ok(Standards { a_bar, q_bar })
}

/// Fraction of steps on which `a > ā` agrees with `q > q̄`, per neuron.
pub fn positive_accuracy(trace: &Trace, standards: &Standards) -> Result<Vec<f64>> {
    if standards.a_bar.len() != trace.width() {
        return Err(Error::shape("standards", trace.width(), standards.a_bar.len()));
    }
    if trace.is_empty() {
        return Err(Error::Trace("empty trace".into()));
    }
    let mut matches = vec![0usize; trace.width()];
    for s in 0..trace.len() {
        let q_ind = trace.gpm[s] > standards.q_bar;
        for ((m, a), abar) in matches.iter_mut().zip(trace.row(s)).zip(&standards.a_bar) {
            if (*a > *abar) == q_ind {
                *m += 1;
            }
        }
    }
    let t = trace.len() as f64;
    Ok(matches.into_iter().map(|m| m as f64 / t).collect())
}

/// `max(acc, 1 - acc)`.
pub fn score(acc: f64) -> f64 {
    acc.max(1.0 - acc)
}

/// Both identification passes; returns `(neuron, score)` in trace order.
pub fn score_trace(trace: &Trace) -> Result<Vec<(NeuronId, f64)>> {
    let standards = compute_standards(trace)?;
    let acc = positive_accuracy(trace, &standards)?;
    Ok(trace.neurons.iter().copied().zip(acc.into_iter().map(score)).collect())
}

/// Selected skill neurons with their scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillNeuronSet {
    pub entries: BTreeMap<NeuronId, f64>,
    pub proportion: f64,
    pub source_task: String,
}

impl SkillNeuronSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, n: &NeuronId) -> bool {
        self.entries.contains_key(n)
    }
}

fn groups(scores: &[(NeuronId, f64)], scope: RankingScope) -> Vec<Vec<(NeuronId, f64)>> {
    match scope {
        RankingScope::Pooled => vec![scores.to_vec()],
        RankingScope::PerNetwork => NetworkKind::ALL
            .iter()
            .map(|k| scores.iter().copied().filter(|(n, _)| n.network == *k).collect::<Vec<_>>())
            .filter(|g| !g.is_empty())
            .collect(),
    }
}

fn quota(proportion: f64, eligible: usize) -> usize {
    ((proportion * eligible as f64).round() as usize).min(eligible)
}

fn check_selection_args(scores: &[(NeuronId, f64)], proportion: f64) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("no neuron scores to rank".into()));
    }
    if !(proportion > 0.0 && proportion <= 1.0) {
        return Err(Error::InvalidInput(format!("proportion {proportion} outside (0, 1]")));
    }
    Ok(())
}

/// Top `round(proportion × eligible)` neurons by score, descending; equal
/// scores resolve to the smaller `(network, layer, index)`.
pub fn select_skill_neurons(
    scores: &[(NeuronId, f64)],
    proportion: f64,
    scope: RankingScope,
    source_task: &str,
) -> Result<SkillNeuronSet> {
    check_selection_args(scores, proportion)?;
    let mut entries = BTreeMap::new();
    for mut g in groups(scores, scope) {
        let k = quota(proportion, g.len());
        g.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        entries.extend(g.into_iter().take(k));
    }
    Ok(SkillNeuronSet {
        entries,
        proportion,
        source_task: source_task.to_owned(),
    })
}

/// Same cardinality per group as [`select_skill_neurons`], but neurons drawn
/// uniformly at random. Each keeps its own goal-oriented score.
pub fn select_random_neurons<R: Rng + ?Sized>(
    scores: &[(NeuronId, f64)],
    proportion: f64,
    scope: RankingScope,
    source_task: &str,
    rng: &mut R,
) -> Result<SkillNeuronSet> {
    check_selection_args(scores, proportion)?;
    let mut entries = BTreeMap::new();
    for g in groups(scores, scope) {
        let k = quota(proportion, g.len());
        for i in sample(rng, g.len(), k) {
            entries.insert(g[i].0, g[i].1);
        }
    }
    Ok(SkillNeuronSet {
        entries,
        proportion,
        source_task: source_task.to_owned(),
    })
}
