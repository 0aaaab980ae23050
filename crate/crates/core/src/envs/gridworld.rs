use super::{EnvState, StepOutcome, TaskSpec, Variant};
use crate::{Error, Result};

pub const GRID_SIZE: usize = 5;
const STEP_COST: f64 = 0.01;
const GOAL_REWARD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridAction {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
    Stay = 4,
}

impl GridAction {
    pub fn from_index(i: usize) -> Result<Self> {
        Ok(match i {
            0 => GridAction::Up,
            1 => GridAction::Down,
            2 => GridAction::Left,
            3 => GridAction::Right,
            4 => GridAction::Stay,
            _ => return Err(Error::InvalidInput(format!("gridworld action {i} outside 0..5"))),
        })
    }
}

/// Agent and goal cells as `(row, col)`; row 0 is north.
#[derive(Debug, Clone, PartialEq)]
pub struct GridworldState {
    pub agent: (usize, usize),
    pub goal: (usize, usize),
    pub t: usize,
}

pub(crate) fn goal_of(variant: Variant) -> (usize, usize) {
    let mid = GRID_SIZE / 2;
    match variant {
        Variant::GoalNorth => (0, mid),
        Variant::GoalSouth => (GRID_SIZE - 1, mid),
        Variant::GoalWest => (mid, 0),
        Variant::GoalEast => (mid, GRID_SIZE - 1),
    }
}

fn coord(c: usize) -> f64 {
    let half = (GRID_SIZE / 2) as f64;
    (c as f64 - half) / half
}

impl GridworldState {
    pub(crate) fn reset(variant: Variant) -> Self {
        Self {
            agent: (GRID_SIZE / 2, GRID_SIZE / 2),
            goal: goal_of(variant),
            t: 0,
        }
    }

    /// Agent and goal cells scaled to `[-1, 1]`.
    pub fn observation(&self) -> Vec<f64> {
        vec![coord(self.agent.0), coord(self.agent.1), coord(self.goal.0), coord(self.goal.1)]
    }

    pub(crate) fn step(&self, task: &TaskSpec, action: GridAction) -> Result<StepOutcome> {
        let (r, c) = self.agent;
        let agent = match action {
            GridAction::Up => (r.saturating_sub(1), c),
            GridAction::Down => ((r + 1).min(GRID_SIZE - 1), c),
            GridAction::Left => (r, c.saturating_sub(1)),
            GridAction::Right => (r, (c + 1).min(GRID_SIZE - 1)),
            GridAction::Stay => (r, c),
        };
        let next = GridworldState {
            agent,
            goal: self.goal,
            t: self.t + 1,
        };
        let success = next.agent == next.goal;
        let reward = -STEP_COST + if success { GOAL_REWARD } else { 0.0 };
        let done = success || next.t >= task.episode_limit;
        Ok(StepOutcome {
            state: EnvState::Gridworld(next),
            reward,
            done,
            success,
        })
    }

    /// Greedy move that closes the row gap first, then the column gap.
    pub fn shortest_path_action(&self) -> GridAction {
        let (r, c) = self.agent;
        let (gr, gc) = self.goal;
        if r > gr {
            GridAction::Up
        } else if r < gr {
            GridAction::Down
        } else if c > gc {
            GridAction::Left
        } else if c < gc {
            GridAction::Right
        } else {
            GridAction::Stay
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{expert_action, reset, run_episode, step, Action, EnvState, TaskSpec};
    use super::*;

    fn grid(s: &EnvState) -> &GridworldState {
        match s {
            EnvState::Gridworld(g) => g,
            _ => unreachable!(),
        }
    }

    #[test]
    fn reset_places_agent_at_center() {
        let t = TaskSpec::parse("gridworld:goal-north").unwrap();
        let s = reset(&t, 123).unwrap();
        assert_eq!(grid(&s).goal, (0, 2));
        assert_eq!(grid(&s).agent, (2, 2));
    }

    #[test]
    fn walls_block_moves() {
        let t = TaskSpec::parse("gridworld:goal-east").unwrap();
        let s = EnvState::Gridworld(GridworldState {
            agent: (0, 2),
            goal: (2, 4),
            t: 0,
        });
        let out = step(&t, &s, &Action::Discrete(GridAction::Up as usize)).unwrap();
        assert_eq!(grid(&out.state).agent, (0, 2));
        assert_eq!(out.reward, -0.01);
        assert!(!out.done);
    }

    #[test]
    fn shortest_path_solves_every_variant_quickly() {
        for v in super::super::Variant::ALL {
            let mut t = TaskSpec::new(super::super::Family::Gridworld, v);
            t.episode_limit = 50;
            let ep = run_episode(&t, 0, |s| Ok(expert_action(s))).unwrap();
            assert!(ep.steps.len() <= 4, "{v}: {} steps", ep.steps.len());
            assert!(ep.steps.last().unwrap().success);
            // -0.01 on the first move, +0.99 on arrival
            assert!((ep.ret - 0.98).abs() < 1e-12);
        }
    }

    #[test]
    fn rewards_within_bounds() {
        let t = TaskSpec::parse("gridworld:goal-south").unwrap();
        let mut i = 0;
        let ep = run_episode(&t, 0, |_| {
            i += 1;
            Ok(Action::Discrete(i % 5))
        })
        .unwrap();
        for s in &ep.steps {
            assert!((-0.01..=0.99).contains(&s.reward));
        }
    }
}
