//! Neuron-level masking and interval replay on top of SAC.
//!
//! After each task segment the identified skill neurons get a gradient mask
//! `alpha_mask * (1 - score)` (every other neuron keeps 1), merged into the
//! running mask, and a sample of the segment's replay buffer is appended to a
//! prior-experience buffer. During training every `k`-th gradient step draws
//! its batch from that prior buffer instead of the current one.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::NetMask;
use crate::sac::{Batch, ReplayBuffer, SacAgent, Transition, UpdateMasks, UpdateStats};
use crate::skill::{NetworkKind, SkillNeuronSet};
use crate::{Error, Result};

/// One [`NetMask`] per trainable network.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMask {
    pub actor: NetMask,
    pub q1: NetMask,
    pub q2: NetMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeRule {
    /// Element-wise minimum: the most restrictive mask wins.
    #[default]
    Min,
    /// The incoming mask replaces the current one.
    Latest,
}

/// Which networks a mask may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskScope {
    #[default]
    Both,
    ActorOnly,
    CriticOnly,
}

impl GradientMask {
    pub fn ones(agent: &SacAgent) -> Self {
        Self {
            actor: NetMask::ones(&agent.actor),
            q1: NetMask::ones(&agent.q1),
            q2: NetMask::ones(&agent.q2),
        }
    }

    pub fn net(&self, kind: NetworkKind) -> &NetMask {
        match kind {
            NetworkKind::Actor => &self.actor,
            NetworkKind::Critic1 => &self.q1,
            NetworkKind::Critic2 => &self.q2,
        }
    }

    pub fn net_mut(&mut self, kind: NetworkKind) -> &mut NetMask {
        match kind {
            NetworkKind::Actor => &mut self.actor,
            NetworkKind::Critic1 => &mut self.q1,
            NetworkKind::Critic2 => &mut self.q2,
        }
    }

    pub fn is_all_ones(&self) -> bool {
        NetworkKind::ALL.iter().all(|&k| self.net(k).is_all_ones())
    }

    pub fn get(&self, kind: NetworkKind, layer: usize, index: usize) -> Option<f64> {
        self.net(kind).layers.get(layer)?.get(index).copied()
    }

    /// Resets the networks outside `scope` to all-ones.
    pub fn restricted(&self, scope: MaskScope) -> Self {
        let mut out = self.clone();
        let keep = |k: NetworkKind| match scope {
            MaskScope::Both => true,
            MaskScope::ActorOnly => !k.is_critic(),
            MaskScope::CriticOnly => k.is_critic(),
        };
        for k in NetworkKind::ALL {
            if !keep(k) {
                let m = out.net_mut(k);
                m.layers.iter_mut().flatten().for_each(|v| *v = 1.0);
            }
        }
        out
    }

    /// Borrowed view for [`SacAgent::update`].
    pub fn as_update_masks(&self) -> UpdateMasks<'_> {
        UpdateMasks {
            actor: Some(&self.actor),
            q1: Some(&self.q1),
            q2: Some(&self.q2),
        }
    }

    /// Number of neurons with a mask below 1, per network.
    pub fn protected_counts(&self) -> BTreeMap<NetworkKind, usize> {
        NetworkKind::ALL
            .iter()
            .map(|&k| (k, self.net(k).layers.iter().flatten().filter(|&&v| v < 1.0).count()))
            .collect()
    }

    /// `network\tlayer\tindex\tscore\tmask` for every hidden neuron; `score`
    /// is empty for neurons outside `scores`.
    pub fn write_tsv<W: Write>(&self, scores: &BTreeMap<crate::skill::NeuronId, f64>, mut w: W) -> Result<()> {
        writeln!(w, "network\tlayer\tindex\tscore\tmask")?;
        for k in NetworkKind::ALL {
            let layers = &self.net(k).layers;
            for (l, row) in layers[..layers.len() - 1].iter().enumerate() {
                for (i, m) in row.iter().enumerate() {
                    let id = crate::skill::NeuronId::new(k, l, i);
                    let s = scores.get(&id).map(|s| format!("{s:?}")).unwrap_or_default();
                    writeln!(w, "{k}\t{l}\t{i}\t{s}\t{m:?}")?;
                }
            }
        }
        Ok(())
    }
}

/// Mask `alpha * (1 - score)` on every selected neuron, 1 elsewhere.
pub fn build_mask(skill_set: &SkillNeuronSet, alpha: f64, agent: &SacAgent) -> Result<GradientMask> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!("mask alpha {alpha} outside [0, 1]")));
    }
    let mut mask = GradientMask::ones(agent);
    for (id, &s) in &skill_set.entries {
        if !(0.5..=1.0).contains(&s) {
            return Err(Error::InvalidInput(format!("score {s} of {id} outside [0.5, 1]")));
        }
        let m = mask.net_mut(id.network);
        let last = m.layers.len() - 1;
        if id.layer >= last {
            return Err(Error::Invariant(format!("{id} lies in a final layer and cannot be a skill neuron")));
        }
        let slot = m.layers[id.layer]
            .get_mut(id.index)
            .ok_or_else(|| Error::Invariant(format!("{id} does not exist in this agent")))?;
        *slot = alpha * (1.0 - s);
    }
    Ok(mask)
}

pub fn merge_masks(current: &GradientMask, incoming: &GradientMask, rule: MergeRule) -> Result<GradientMask> {
    let mut out = current.clone();
    for k in NetworkKind::ALL {
        let (a, b) = (current.net(k), incoming.net(k));
        a.check_shape(b.layers.iter().map(Vec::len))?;
        let o = out.net_mut(k);
        for (ol, bl) in o.layers.iter_mut().zip(&b.layers) {
            for (ov, bv) in ol.iter_mut().zip(bl) {
                *ov = match rule {
                    MergeRule::Min => ov.min(*bv),
                    MergeRule::Latest => *bv,
                };
            }
        }
    }
    Ok(out)
}

/// True iff the prior buffer has data and `step` is a positive multiple of `k`.
pub fn replay_gate(step: u64, k: u64, prior_nonempty: bool) -> bool {
    prior_nonempty && k > 0 && step > 0 && step % k == 0
}

/// A stored transition together with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorEntry {
    pub segment: usize,
    pub task: String,
    pub transition: Transition,
}

/// Unified FIFO buffer of transitions from completed segments.
#[derive(Debug, Clone)]
pub struct PriorBuffer {
    items: Vec<PriorEntry>,
    capacity: usize,
    next: usize,
}

impl PriorBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            items: Vec::new(),
            capacity,
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> &[PriorEntry] {
        &self.items
    }

    fn push(&mut self, e: PriorEntry) {
        if self.capacity == 0 {
            return;
        }
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.next] = e;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Uniform with replacement; `NotReady` when smaller than the batch.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch> {
        if batch_size == 0 || self.items.len() < batch_size {
            return Err(Error::NotReady {
                len: self.items.len(),
                needed: batch_size.max(1),
            });
        }
        let picks: Vec<&Transition> = (0..batch_size)
            .map(|_| &self.items[rng.gen_range(0..self.items.len())].transition)
            .collect();
        Batch::from_transitions(&picks)
    }

    /// Stored transitions per task identifier.
    pub fn composition(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for e in &self.items {
            *out.entry(e.task.clone()).or_insert(0) += 1;
        }
        out
    }

    pub fn stats(&self) -> PriorStats {
        PriorStats {
            size: self.len(),
            capacity: self.capacity,
            composition: self.composition(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorStats {
    pub size: usize,
    pub capacity: usize,
    pub composition: BTreeMap<String, usize>,
}

/// Appends a uniform sample (without replacement) of `min(store_size, |D|)`
/// transitions of `current` to `prior`.
pub fn store_prior<R: Rng + ?Sized>(
    current: &ReplayBuffer,
    prior: &mut PriorBuffer,
    store_size: usize,
    segment: usize,
    task: &str,
    rng: &mut R,
) -> usize {
    let n = store_size.min(current.len());
    if n == 0 {
        return 0;
    }
    let mut idx = sample(rng, current.len(), n).into_vec();
    idx.sort_unstable();
    for i in idx {
        prior.push(PriorEntry {
            segment,
            task: task.to_owned(),
            transition: current.get(i).expect("index in range").clone(),
        });
    }
    n
}

/// Mutable NBSP state owned by one training run.
#[derive(Debug, Clone)]
pub struct NbspState {
    pub mask: GradientMask,
    pub prior: PriorBuffer,
    pub replay_interval: u64,
    pub alpha_mask: f64,
    pub merge_rule: MergeRule,
    pub skill_sets: Vec<SkillNeuronSet>,
    /// Gradient steps taken so far; the gate sees this count after increment.
    pub grad_steps: u64,
    pub prior_steps: u64,
    /// Gated steps that fell back to the current buffer because the prior
    /// buffer could not fill a batch.
    pub fallbacks: u64,
}

impl NbspState {
    pub fn new(agent: &SacAgent, replay_interval: u64, alpha_mask: f64, prior_capacity: usize) -> Result<Self> {
        if replay_interval == 0 {
            return Err(Error::Config("replay_interval must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&alpha_mask) {
            return Err(Error::Config(format!("alpha_mask {alpha_mask} outside [0, 1]")));
        }
        Ok(Self {
            mask: GradientMask::ones(agent),
            prior: PriorBuffer::new(prior_capacity),
            replay_interval,
            alpha_mask,
            merge_rule: MergeRule::Min,
            skill_sets: Vec::new(),
            grad_steps: 0,
            prior_steps: 0,
            fallbacks: 0,
        })
    }

    /// Builds the mask for `set`, merges it in and records the set.
    pub fn absorb(&mut self, set: SkillNeuronSet, agent: &SacAgent, scope: MaskScope) -> Result<()> {
        let incoming = build_mask(&set, self.alpha_mask, agent)?.restricted(scope);
        self.mask = merge_masks(&self.mask, &incoming, self.merge_rule)?;
        self.skill_sets.push(set);
        Ok(())
    }
}

/// What a single [`nbsp_gradient_step`] did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub used_prior: bool,
    pub fell_back: bool,
    pub stats: UpdateStats,
}

/// One masked SAC update whose batch comes from the prior buffer on gated
/// steps and from `current` otherwise.
pub fn nbsp_gradient_step<R: Rng + ?Sized>(
    agent: &mut SacAgent,
    state: &mut NbspState,
    current: &ReplayBuffer,
    rng: &mut R,
) -> Result<StepReport> {
    state.grad_steps += 1;
    let batch_size = agent.config.batch_size;
    let gated = replay_gate(state.grad_steps, state.replay_interval, !state.prior.is_empty());
    let (batch, used_prior, fell_back) = if gated {
        match state.prior.sample(batch_size, rng) {
            Ok(b) => (b, true, false),
            Err(Error::NotReady { .. }) => (current.sample(batch_size, rng)?, false, true),
            Err(e) => return Err(e),
        }
    } else {
        (current.sample(batch_size, rng)?, false, false)
    };
    if used_prior {
        state.prior_steps += 1;
    }
    if fell_back {
        state.fallbacks += 1;
    }
    let stats = agent.update(&batch, state.mask.as_update_masks(), rng)?;
    Ok(StepReport {
        used_prior,
        fell_back,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::ActionSpace;
    use crate::rng;
    use crate::sac::SacConfig;
    use crate::skill::NeuronId;

    fn agent() -> SacAgent {
        let cfg = SacConfig {
            hidden: vec![8, 8],
            batch_size: 4,
            ..SacConfig::default()
        };
        SacAgent::new(6, ActionSpace::Continuous { dim: 2 }, cfg, &mut rng::stream(0, "a", 0)).unwrap()
    }

    fn set(entries: &[(NeuronId, f64)]) -> SkillNeuronSet {
        SkillNeuronSet {
            entries: entries.iter().copied().collect(),
            proportion: 0.2,
            source_task: "t".into(),
        }
    }

    fn tr(id: u64) -> Transition {
        Transition {
            id,
            s: vec![0.1 * id as f64; 6],
            a: vec![0.0, 0.5],
            r: 1.0,
            s2: vec![0.0; 6],
            d: false,
        }
    }

    #[test]
    fn mask_values_follow_scores() {
        let a = agent();
        let n0 = NeuronId::new(NetworkKind::Actor, 0, 1);
        let n1 = NeuronId::new(NetworkKind::Critic2, 1, 3);
        let m = build_mask(&set(&[(n0, 1.0), (n1, 0.5)]), 0.2, &a).unwrap();
        assert_eq!(m.get(NetworkKind::Actor, 0, 1), Some(0.0));
        assert_eq!(m.get(NetworkKind::Critic2, 1, 3), Some(0.1));
        assert_eq!(m.get(NetworkKind::Actor, 0, 0), Some(1.0));
        assert!(m.actor.layers[2].iter().all(|&v| v == 1.0));

        let bad = NeuronId::new(NetworkKind::Actor, 2, 0);
        assert!(matches!(build_mask(&set(&[(bad, 0.9)]), 0.2, &a), Err(Error::Invariant(_))));
    }

    #[test]
    fn min_merge_examples() {
        let a = agent();
        let n = NeuronId::new(NetworkKind::Critic1, 0, 0);
        let ones = GradientMask::ones(&a);
        let m01 = build_mask(&set(&[(n, 0.5)]), 0.2, &a).unwrap();
        let m005 = build_mask(&set(&[(n, 0.75)]), 0.2, &a).unwrap();
        let merged = merge_masks(&ones, &m01, MergeRule::Min).unwrap();
        assert_eq!(merged.get(NetworkKind::Critic1, 0, 0), Some(0.1));
        let merged = merge_masks(&m005, &m01, MergeRule::Min).unwrap();
        assert!((merged.get(NetworkKind::Critic1, 0, 0).unwrap() - 0.05).abs() < 1e-15);
        assert_eq!(merge_masks(&m01, &ones, MergeRule::Min).unwrap(), m01);
        assert_eq!(merge_masks(&m01, &ones, MergeRule::Latest).unwrap(), ones);
    }

    #[test]
    fn restriction_scopes() {
        let a = agent();
        let s = set(&[
            (NeuronId::new(NetworkKind::Actor, 0, 0), 0.9),
            (NeuronId::new(NetworkKind::Critic1, 0, 0), 0.9),
        ]);
        let m = build_mask(&s, 0.2, &a).unwrap();
        let actor_only = m.restricted(MaskScope::ActorOnly);
        assert!(actor_only.q1.is_all_ones() && !actor_only.actor.is_all_ones());
        let critic_only = m.restricted(MaskScope::CriticOnly);
        assert!(critic_only.actor.is_all_ones() && !critic_only.q1.is_all_ones());
    }

    #[test]
    fn gate_examples() {
        assert!(replay_gate(10, 10, true));
        assert!(!replay_gate(5, 10, true));
        assert!(!replay_gate(10, 10, false));
        assert!(!replay_gate(0, 10, true));
        let hits = (1..=1000).filter(|&t| replay_gate(t, 10, true)).count();
        assert_eq!(hits, 100);
    }

    #[test]
    fn store_prior_examples() {
        let mut d = ReplayBuffer::new(1000).unwrap();
        for i in 0..100 {
            d.push(tr(i));
        }
        let mut r = rng::stream(0, "p", 0);
        let mut p = PriorBuffer::new(10_000);
        assert_eq!(store_prior(&d, &mut p, 0, 0, "t", &mut r), 0);
        assert!(p.is_empty());
        assert_eq!(store_prior(&d, &mut p, 1000, 0, "t", &mut r), 100);
        assert_eq!(p.len(), 100);

        let mut p = PriorBuffer::new(10_000);
        store_prior(&d, &mut p, 30, 1, "u", &mut r);
        let ids: std::collections::BTreeSet<u64> = p.entries().iter().map(|e| e.transition.id).collect();
        assert_eq!(ids.len(), 30, "sampled without replacement");
        assert!(ids.iter().all(|i| *i < 100));
        assert_eq!(p.composition().get("u"), Some(&30));
    }

    #[test]
    fn prior_buffer_evicts_fifo() {
        let mut d = ReplayBuffer::new(10).unwrap();
        for i in 0..10 {
            d.push(tr(i));
        }
        let mut r = rng::stream(1, "p", 0);
        let mut p = PriorBuffer::new(12);
        store_prior(&d, &mut p, 10, 0, "a", &mut r);
        store_prior(&d, &mut p, 10, 1, "b", &mut r);
        assert_eq!(p.len(), 12);
        let comp = p.composition();
        assert_eq!(comp.get("a"), Some(&2));
        assert_eq!(comp.get("b"), Some(&10));
    }

    #[test]
    fn gated_steps_use_prior_exactly_every_k() {
        let mut a = agent();
        let mut st = NbspState::new(&a, 10, 0.2, 100).unwrap();
        let mut d = ReplayBuffer::new(100).unwrap();
        for i in 0..20 {
            d.push(tr(i));
        }
        let mut r = rng::stream(2, "g", 0);
        store_prior(&d, &mut st.prior, 20, 0, "t", &mut r);
        for _ in 0..200 {
            nbsp_gradient_step(&mut a, &mut st, &d, &mut r).unwrap();
        }
        assert_eq!(st.prior_steps, 20);
        assert_eq!(st.fallbacks, 0);
    }

    #[test]
    fn unready_prior_falls_back() {
        let mut a = agent();
        let mut st = NbspState::new(&a, 1, 0.2, 100).unwrap();
        let mut d = ReplayBuffer::new(100).unwrap();
        for i in 0..20 {
            d.push(tr(i));
        }
        let mut r = rng::stream(3, "g", 0);
        store_prior(&d, &mut st.prior, 2, 0, "t", &mut r);
        let rep = nbsp_gradient_step(&mut a, &mut st, &d, &mut r).unwrap();
        assert!(rep.fell_back && !rep.used_prior);
        assert_eq!(st.fallbacks, 1);
    }

    #[test]
    fn mask_tsv_lists_hidden_neurons() {
        let a = agent();
        let n = NeuronId::new(NetworkKind::Actor, 1, 2);
        let s = set(&[(n, 0.75)]);
        let m = build_mask(&s, 0.2, &a).unwrap();
        let mut out = Vec::new();
        m.write_tsv(&s.entries, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * 16);
        assert!(text.contains("actor\t1\t2\t0.75\t0.05"));
    }
}
