use rand::Rng;

use super::{EnvState, StepOutcome, TaskSpec, Variant};
use crate::{Error, Result};

pub const DT: f64 = 0.1;
pub const V_MAX: f64 = 1.0;
pub const SUCCESS_RADIUS: f64 = 0.1;
pub const SUCCESS_BONUS: f64 = 5.0;
const DISTANCE_COST: f64 = 0.1;
const START_HALF_WIDTH: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct PointmassState {
    /// In `[-1, 1]²`.
    pub position: [f64; 2],
    /// In `[-V_MAX, V_MAX]²`.
    pub velocity: [f64; 2],
    pub goal: [f64; 2],
    pub t: usize,
}

pub(crate) fn goal_of(variant: Variant) -> [f64; 2] {
    match variant {
        Variant::GoalEast => [0.8, 0.0],
        Variant::GoalWest => [-0.8, 0.0],
        Variant::GoalNorth => [0.0, 0.8],
        Variant::GoalSouth => [0.0, -0.8],
    }
}

impl PointmassState {
    pub(crate) fn reset<R: Rng + ?Sized>(variant: Variant, rng: &mut R) -> Self {
        let position = [
            rng.gen_range(-START_HALF_WIDTH..=START_HALF_WIDTH),
            rng.gen_range(-START_HALF_WIDTH..=START_HALF_WIDTH),
        ];
        Self {
            position,
            velocity: [0.0, 0.0],
            goal: goal_of(variant),
            t: 0,
        }
    }

    /// `[px, py, vx, vy, gx, gy]`.
    pub fn observation(&self) -> Vec<f64> {
        vec![
            self.position[0],
            self.position[1],
            self.velocity[0],
            self.velocity[1],
            self.goal[0],
            self.goal[1],
        ]
    }

    pub fn distance_to_goal(&self) -> f64 {
        let dx = self.position[0] - self.goal[0];
        let dy = self.position[1] - self.goal[1];
        (dx * dx + dy * dy).sqrt()
    }

    pub(crate) fn step(&self, task: &TaskSpec, action: &[f64]) -> Result<StepOutcome> {
        if action.len() != 2 {
            return Err(Error::shape("pointmass action", 2, action.len()));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("pointmass action"));
        }
        let mut next = self.clone();
        for d in 0..2 {
            let a = action[d].clamp(-1.0, 1.0);
            next.velocity[d] = (self.velocity[d] + a * DT).clamp(-V_MAX, V_MAX);
            next.position[d] = (self.position[d] + next.velocity[d] * DT).clamp(-1.0, 1.0);
        }
        next.t = self.t + 1;
        let dist = next.distance_to_goal();
        let success = dist < SUCCESS_RADIUS;
        let reward = -DISTANCE_COST * dist + if success { SUCCESS_BONUS } else { 0.0 };
        let done = success || next.t >= task.episode_limit;
        Ok(StepOutcome {
            state: EnvState::Pointmass(next),
            reward,
            done,
            success,
        })
    }

    /// `clamp(2 (goal - p) - v, -1, 1)` per axis.
    pub fn proportional_action(&self) -> [f64; 2] {
        let mut a = [0.0; 2];
        for d in 0..2 {
            a[d] = (2.0 * (self.goal[d] - self.position[d]) - self.velocity[d]).clamp(-1.0, 1.0);
        }
        a
    }
}

#[cfg(test)]
mod tests {
    use super::super::{reset, run_episode, step, Action, EnvState, TaskSpec};
    use super::*;

    fn east() -> TaskSpec {
        TaskSpec::parse("pointmass:goal-east").unwrap()
    }

    fn pm(s: &EnvState) -> &PointmassState {
        match s {
            EnvState::Pointmass(p) => p,
            _ => unreachable!(),
        }
    }

    #[test]
    fn reset_fixes_goal_and_zero_velocity() {
        for seed in 0..20 {
            let s = reset(&east(), seed).unwrap();
            let p = pm(&s);
            assert_eq!(p.goal, [0.8, 0.0]);
            assert_eq!(p.velocity, [0.0, 0.0]);
            assert!(p.position.iter().all(|x| x.abs() <= 0.5));
        }
        assert_eq!(reset(&east(), 9).unwrap(), reset(&east(), 9).unwrap());
        assert_ne!(reset(&east(), 9).unwrap(), reset(&east(), 10).unwrap());
    }

    #[test]
    fn hand_evaluated_dynamics() {
        let s = EnvState::Pointmass(PointmassState {
            position: [0.0, 0.0],
            velocity: [0.0, 0.0],
            goal: [0.8, 0.0],
            t: 0,
        });
        let out = step(&east(), &s, &Action::Continuous(vec![1.0, 0.0])).unwrap();
        let p = pm(&out.state);
        assert!((p.velocity[0] - 0.1).abs() < 1e-15 && p.velocity[1] == 0.0);
        assert!((p.position[0] - 0.01).abs() < 1e-15 && p.position[1] == 0.0);
        assert!(!out.done);
        assert!((out.reward + 0.1 * 0.79).abs() < 1e-12);
    }

    #[test]
    fn reaching_goal_pays_bonus_and_ends() {
        let s = EnvState::Pointmass(PointmassState {
            position: [0.75, 0.0],
            velocity: [0.0, 0.0],
            goal: [0.8, 0.0],
            t: 0,
        });
        // v' = 0, p' = p: distance 0.05.
        let out = step(&east(), &s, &Action::Continuous(vec![0.0, 0.0])).unwrap();
        assert!(out.done && out.success);
        assert!((out.reward - (5.0 - 0.005)).abs() < 1e-12);
    }

    #[test]
    fn actions_and_state_are_clamped() {
        let s = EnvState::Pointmass(PointmassState {
            position: [0.99, 0.0],
            velocity: [1.0, 0.0],
            goal: [-0.8, 0.0],
            t: 0,
        });
        let out = step(&east(), &s, &Action::Continuous(vec![50.0, -50.0])).unwrap();
        let p = pm(&out.state);
        assert_eq!(p.velocity[0], 1.0);
        assert_eq!(p.position[0], 1.0);
        assert!((p.velocity[1] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn episode_limit_ends_episode() {
        let mut t = east();
        t.episode_limit = 3;
        let ep = run_episode(&t, 0, |_| Ok(Action::Continuous(vec![0.0, 0.0]))).unwrap();
        assert_eq!(ep.steps.len(), 3);
        assert_eq!(ep.success, Some(false));
    }
}
