//! Deterministic desk-scale task families.
//!
//! * `pointmass`: a 2-D point mass with bounded velocity that must reach a
//!   goal; continuous actions, binary success as goal proximity metric.
//! * `gridworld`: a 5×5 grid with a goal cell on an edge midpoint; five
//!   discrete actions, normalised episode return as goal proximity metric.
//!
//! Each family has four variants named after the goal direction. Opposite
//! variants (`goal-east`/`goal-west`) play the role of open/close task pairs.

mod gridworld;
mod pointmass;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use gridworld::{GridAction, GridworldState, GRID_SIZE};
pub use pointmass::{PointmassState, DT, SUCCESS_BONUS, SUCCESS_RADIUS, V_MAX};

use crate::metrics::{normalized_return, ReturnNorm};
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Pointmass,
    Gridworld,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Pointmass => "pointmass",
            Family::Gridworld => "gridworld",
        }
    }

    pub fn obs_dim(self) -> usize {
        match self {
            Family::Pointmass => 6,
            Family::Gridworld => 4,
        }
    }

    pub fn action_space(self) -> ActionSpace {
        match self {
            Family::Pointmass => ActionSpace::Continuous { dim: 2 },
            Family::Gridworld => ActionSpace::Discrete { n: 5 },
        }
    }

    pub fn default_episode_limit(self) -> usize {
        match self {
            Family::Pointmass => 200,
            Family::Gridworld => 50,
        }
    }

    pub fn default_gpm(self) -> GpmKind {
        match self {
            Family::Pointmass => GpmKind::BinarySuccess,
            Family::Gridworld => GpmKind::NormalizedReturn,
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pointmass" => Ok(Family::Pointmass),
            "gridworld" => Ok(Family::Gridworld),
            other => Err(Error::Config(format!(
                "unknown task family {other:?}; expected one of: pointmass, gridworld"
            ))),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "goal-east")]
    GoalEast,
    #[serde(rename = "goal-west")]
    GoalWest,
    #[serde(rename = "goal-north")]
    GoalNorth,
    #[serde(rename = "goal-south")]
    GoalSouth,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::GoalEast, Variant::GoalWest, Variant::GoalNorth, Variant::GoalSouth];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::GoalEast => "goal-east",
            Variant::GoalWest => "goal-west",
            Variant::GoalNorth => "goal-north",
            Variant::GoalSouth => "goal-south",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown task variant {s:?}; expected one of: goal-east, goal-west, goal-north, goal-south"
                ))
            })
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GpmKind {
    BinarySuccess,
    NormalizedReturn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSpace {
    Continuous { dim: usize },
    Discrete { n: usize },
}

impl ActionSpace {
    /// Width of the action as stored in transitions (one slot for discrete).
    pub fn width(self) -> usize {
        match self {
            ActionSpace::Continuous { dim } => dim,
            ActionSpace::Discrete { .. } => 1,
        }
    }

    pub fn sample_uniform<R: Rng + ?Sized>(self, rng: &mut R) -> Action {
        match self {
            ActionSpace::Continuous { dim } => Action::Continuous((0..dim).map(|_| rng.gen_range(-1.0..=1.0)).collect()),
            ActionSpace::Discrete { n } => Action::Discrete(rng.gen_range(0..n)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Continuous(Vec<f64>),
    Discrete(usize),
}

impl Action {
    /// Flat encoding used for critic inputs and transition storage.
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            Action::Continuous(a) => a.clone(),
            Action::Discrete(i) => vec![*i as f64],
        }
    }
}

/// One task of a family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub family: Family,
    pub variant: Variant,
    pub episode_limit: usize,
    pub gpm_kind: GpmKind,
    /// Mixed into every reset so different task instances can be decorrelated.
    pub seed: u64,
}

impl TaskSpec {
    pub fn new(family: Family, variant: Variant) -> Self {
        Self {
            family,
            variant,
            episode_limit: family.default_episode_limit(),
            gpm_kind: family.default_gpm(),
            seed: 0,
        }
    }

    /// Parses `family:variant`, e.g. `pointmass:goal-east`.
    pub fn parse(s: &str) -> Result<Self> {
        let (f, v) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("task {s:?} must be written as family:variant")))?;
        Ok(Self::new(f.parse()?, v.parse()?))
    }

    pub fn validate(&self) -> Result<()> {
        if self.episode_limit == 0 {
            return Err(Error::Config("episode_limit must be at least 1".into()));
        }
        Ok(())
    }

    pub fn id(&self) -> String {
        format!("{}:{}", self.family, self.variant)
    }

    pub fn obs_dim(&self) -> usize {
        self.family.obs_dim()
    }

    pub fn action_space(&self) -> ActionSpace {
        self.family.action_space()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvState {
    Pointmass(PointmassState),
    Gridworld(GridworldState),
}

impl EnvState {
    /// Steps taken in the current episode.
    pub fn elapsed(&self) -> usize {
        match self {
            EnvState::Pointmass(s) => s.t,
            EnvState::Gridworld(s) => s.t,
        }
    }

    pub fn observation(&self) -> Vec<f64> {
        match self {
            EnvState::Pointmass(s) => s.observation(),
            EnvState::Gridworld(s) => s.observation(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub reward: f64,
    /// Episode over (goal reached or step limit).
    pub done: bool,
    /// Goal reached; the only true termination.
    pub success: bool,
}

/// Initial state of an episode; fully determined by `(task, episode_seed)`.
pub fn reset(task: &TaskSpec, episode_seed: u64) -> Result<EnvState> {
    task.validate()?;
    let mut r = rng::stream(task.seed, "reset", episode_seed);
    Ok(match task.family {
        Family::Pointmass => EnvState::Pointmass(PointmassState::reset(task.variant, &mut r)),
        Family::Gridworld => EnvState::Gridworld(GridworldState::reset(task.variant)),
    })
}

pub fn step(task: &TaskSpec, state: &EnvState, action: &Action) -> Result<StepOutcome> {
    match (state, action) {
        (EnvState::Pointmass(s), Action::Continuous(a)) => s.step(task, a),
        (EnvState::Gridworld(s), Action::Discrete(i)) => s.step(task, GridAction::from_index(*i)?),
        (EnvState::Pointmass(_), Action::Discrete(_)) => {
            Err(Error::InvalidInput("pointmass takes a continuous action".into()))
        }
        (EnvState::Gridworld(_), Action::Continuous(_)) => {
            Err(Error::InvalidInput("gridworld takes a discrete action".into()))
        }
    }
}

/// Scripted expert: proportional controller for pointmass, greedy shortest
/// path for gridworld.
pub fn expert_action(state: &EnvState) -> Action {
    match state {
        EnvState::Pointmass(s) => Action::Continuous(s.proportional_action().to_vec()),
        EnvState::Gridworld(s) => Action::Discrete(s.shortest_path_action() as usize),
    }
}

/// One stored step of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStep {
    pub obs: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub success: bool,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub steps: Vec<EpisodeStep>,
    /// Only defined for binary-success tasks.
    pub success: Option<bool>,
    /// Undiscounted sum of rewards.
    pub ret: f64,
}

/// Runs one episode with `policy` choosing actions from the current state.
pub fn run_episode<F>(task: &TaskSpec, episode_seed: u64, mut policy: F) -> Result<EpisodeRecord>
where
    F: FnMut(&EnvState) -> Result<Action>,
{
    let mut state = reset(task, episode_seed)?;
    let mut steps = Vec::new();
    let mut ret = 0.0;
    let mut reached = false;
    loop {
        let action = policy(&state)?;
        let out = step(task, &state, &action)?;
        ret += out.reward;
        reached |= out.success;
        steps.push(EpisodeStep {
            obs: state.observation(),
            action,
            reward: out.reward,
            next_obs: out.state.observation(),
            success: out.success,
            done: out.done,
        });
        state = out.state;
        if out.done {
            break;
        }
    }
    Ok(EpisodeRecord {
        steps,
        success: (task.gpm_kind == GpmKind::BinarySuccess).then_some(reached),
        ret,
    })
}

/// Goal proximity metric of a finished episode.
pub fn gpm(episode: &EpisodeRecord, task: &TaskSpec, norm: Option<&ReturnNorm>) -> Result<f64> {
    match task.gpm_kind {
        GpmKind::BinarySuccess => {
            let s = episode
                .success
                .ok_or_else(|| Error::InvalidInput("episode has no success flag".into()))?;
            Ok(if s { 1.0 } else { 0.0 })
        }
        GpmKind::NormalizedReturn => {
            let norm = norm.ok_or_else(|| {
                Error::Config(format!("task {} needs return normalisation anchors", task.id()))
            })?;
            normalized_return(episode.ret, norm)
        }
    }
}

pub const ANCHOR_RANDOM_EPISODES: usize = 1000;
pub const ANCHOR_EXPERT_EPISODES: usize = 100;

/// Empirical return anchors: mean return of uniform-random episodes and of
/// the scripted expert. Deterministic for a given task.
pub fn return_anchors(task: &TaskSpec) -> Result<ReturnNorm> {
    let space = task.action_space();
    let mut r = rng::stream(task.seed, "anchor-random", 0);
    let mut random_total = 0.0;
    for e in 0..ANCHOR_RANDOM_EPISODES {
        let ep = run_episode(task, rng::derive_seed(task.seed, "anchor-random-episode", e as u64), |_| {
            Ok(space.sample_uniform(&mut r))
        })?;
        random_total += ep.ret;
    }
    let mut expert_total = 0.0;
    for e in 0..ANCHOR_EXPERT_EPISODES {
        let ep = run_episode(task, rng::derive_seed(task.seed, "anchor-expert-episode", e as u64), |s| {
            Ok(expert_action(s))
        })?;
        expert_total += ep.ret;
    }
    ReturnNorm::new(
        random_total / ANCHOR_RANDOM_EPISODES as f64,
        expert_total / ANCHOR_EXPERT_EPISODES as f64,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_tasks() {
        let t = TaskSpec::parse("gridworld:goal-north").unwrap();
        assert_eq!(t.family, Family::Gridworld);
        assert_eq!(t.variant, Variant::GoalNorth);
        assert_eq!(t.episode_limit, 50);
        assert!(matches!(TaskSpec::parse("pointmass:goal-up"), Err(Error::Config(_))));
        assert!(TaskSpec::parse("pointmass").is_err());
    }

    #[test]
    fn mismatched_action_kind_rejected() {
        let t = TaskSpec::parse("gridworld:goal-east").unwrap();
        let s = reset(&t, 0).unwrap();
        assert!(step(&t, &s, &Action::Continuous(vec![0.0, 0.0])).is_err());
        assert!(step(&t, &s, &Action::Discrete(5)).is_err());
    }

    #[test]
    fn binary_gpm() {
        let t = TaskSpec::parse("pointmass:goal-east").unwrap();
        let ep = run_episode(&t, 3, |s| Ok(expert_action(s))).unwrap();
        assert_eq!(ep.success, Some(true));
        assert_eq!(gpm(&ep, &t, None).unwrap(), 1.0);
    }

    #[test]
    fn normalized_gpm_needs_anchors() {
        let t = TaskSpec::parse("gridworld:goal-east").unwrap();
        let ep = run_episode(&t, 0, |_| Ok(Action::Discrete(4))).unwrap();
        assert!(ep.success.is_none());
        assert!(matches!(gpm(&ep, &t, None), Err(Error::Config(_))));
        let norm = ReturnNorm::new(ep.ret, 0.98).unwrap();
        assert_eq!(gpm(&ep, &t, Some(&norm)).unwrap(), 0.0);
    }
}
