//! Offline scoring math over logged trajectories: discounted returns, TD
//! errors, GAE advantages, the clipped PPO actor surrogate, and the critic
//! squared-error loss. No parameters are updated here; the engine consumes
//! log-probabilities and value estimates recorded by providers and exports
//! trainer-ready scores.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::Trajectory;

#[derive(Debug, Error)]
pub enum RlError {
    #[error("length mismatch: {left} vs {right}")]
    Shape { left: usize, right: usize },
    #[error("non-finite ratio at step {step} (log-prob difference {diff})")]
    NonFiniteRatio { step: usize, diff: f64 },
}

/// Scoring hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RlConfig {
    /// Discount factor.
    pub gamma: f64,
    /// GAE decay.
    pub lam: f64,
    /// PPO clip radius.
    pub epsilon: f64,
    pub critic_target: CriticTarget,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lam: 0.95,
            epsilon: 0.2,
            critic_target: CriticTarget::default(),
        }
    }
}

/// What the critic regresses against: the discounted reward-to-go (default)
/// or the immediate per-step shared reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CriticTarget {
    #[default]
    RewardToGo,
    Immediate,
}

/// Per-trajectory score vectors, filled by [`score_steps`].
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrajectoryScores {
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub action_log_probs: Vec<f64>,
    pub ref_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// One line of the score export.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreLine {
    pub episode_id: String,
    pub scorable: bool,
    pub advantages: Option<Vec<f64>>,
    pub returns: Option<Vec<f64>>,
    pub actor_objective: Option<f64>,
    pub critic_loss: Option<f64>,
    pub total_loss: Option<f64>,
}

/// `sum_t gamma^t r_t`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, &r| r + gamma * acc)
}

/// Reward-to-go at each step: `G_t = r_t + gamma * G_{t+1}`.
pub fn returns_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// TD errors `delta_t = r_t + gamma * V(s_{t+1}) - V(s_t)` with a zero
/// bootstrap past the terminal step.
pub fn td_errors(rewards: &[f64], values: &[f64], gamma: f64) -> Result<Vec<f64>, RlError> {
    if rewards.len() != values.len() {
        return Err(RlError::Shape {
            left: rewards.len(),
            right: values.len(),
        });
    }
    Ok((0..rewards.len())
        .map(|t| {
            let next = if t + 1 < values.len() {
                values[t + 1]
            } else {
                0.0
            };
            rewards[t] + gamma * next - values[t]
        })
        .collect())
}

/// GAE by backward recursion: `A_t = delta_t + gamma * lam * A_{t+1}`,
/// equal to the direct double sum `sum_l (gamma*lam)^l delta_{t+l}`.
pub fn gae(deltas: &[f64], gamma: f64, lam: f64) -> Vec<f64> {
    let mut out = vec![0.0; deltas.len()];
    let mut acc = 0.0;
    for t in (0..deltas.len()).rev() {
        acc = deltas[t] + gamma * lam * acc;
        out[t] = acc;
    }
    out
}

/// One clipped surrogate term: `min(r*A, clip(r, 1-eps, 1+eps)*A)`.
pub fn clipped_term(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// Mean clipped surrogate over the steps. The ratio is
/// `exp(action_lp - ref_lp)` per step; the reported training loss is the
/// negation of this objective.
pub fn ppo_actor_objective(
    action_log_probs: &[f64],
    ref_log_probs: &[f64],
    advantages: &[f64],
    epsilon: f64,
) -> Result<f64, RlError> {
    if action_log_probs.len() != ref_log_probs.len() {
        return Err(RlError::Shape {
            left: action_log_probs.len(),
            right: ref_log_probs.len(),
        });
    }
    if action_log_probs.len() != advantages.len() {
        return Err(RlError::Shape {
            left: action_log_probs.len(),
            right: advantages.len(),
        });
    }
    if advantages.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (step, ((&alp, &rlp), &adv)) in action_log_probs
        .iter()
        .zip(ref_log_probs)
        .zip(advantages)
        .enumerate()
    {
        let diff = alp - rlp;
        let ratio = diff.exp();
        if !ratio.is_finite() {
            return Err(RlError::NonFiniteRatio { step, diff });
        }
        total += clipped_term(ratio, adv, epsilon);
    }
    Ok(total / advantages.len() as f64)
}

/// `sum_t (V(s_t) - target_t)^2`.
pub fn critic_loss(values: &[f64], targets: &[f64]) -> Result<f64, RlError> {
    if values.len() != targets.len() {
        return Err(RlError::Shape {
            left: values.len(),
            right: targets.len(),
        });
    }
    Ok(values
        .iter()
        .zip(targets)
        .map(|(v, t)| (v - t) * (v - t))
        .sum())
}

/// `(-actor_objective) + critic_loss`: the actor term is maximized, so the
/// combined loss negates it.
pub fn total_loss(actor_objective: f64, critic: f64) -> f64 {
    -actor_objective + critic
}

/// Score one trajectory's step vectors.
pub fn score_steps(
    episode_id: &str,
    rewards: &[f64],
    values: &[f64],
    action_log_probs: &[f64],
    ref_log_probs: &[f64],
    cfg: &RlConfig,
) -> Result<(TrajectoryScores, ScoreLine), RlError> {
    let deltas = td_errors(rewards, values, cfg.gamma)?;
    let advantages = gae(&deltas, cfg.gamma, cfg.lam);
    let returns = returns_to_go(rewards, cfg.gamma);
    let targets: &[f64] = match cfg.critic_target {
        CriticTarget::RewardToGo => &returns,
        CriticTarget::Immediate => rewards,
    };
    let actor = ppo_actor_objective(action_log_probs, ref_log_probs, &advantages, cfg.epsilon)?;
    let critic = critic_loss(values, targets)?;
    let line = ScoreLine {
        episode_id: episode_id.to_string(),
        scorable: true,
        advantages: Some(advantages.clone()),
        returns: Some(returns.clone()),
        actor_objective: Some(actor),
        critic_loss: Some(critic),
        total_loss: Some(total_loss(actor, critic)),
    };
    let scores = TrajectoryScores {
        rewards: rewards.to_vec(),
        values: values.to_vec(),
        action_log_probs: action_log_probs.to_vec(),
        ref_log_probs: ref_log_probs.to_vec(),
        advantages,
        returns,
    };
    Ok((scores, line))
}

/// Score a logged trajectory, using the hyperparameters frozen in its
/// config snapshot unless `override_cfg` is given. Trajectories missing
/// log-probs or value estimates on any step are marked non-scorable.
pub fn score_trajectory(
    traj: &Trajectory,
    override_cfg: Option<&RlConfig>,
) -> Result<ScoreLine, RlError> {
    let cfg = override_cfg.copied().unwrap_or(RlConfig {
        gamma: traj.config.gamma,
        lam: traj.config.lam,
        epsilon: traj.config.epsilon,
        critic_target: traj.config.critic_target,
    });
    let mut rewards = Vec::with_capacity(traj.steps.len());
    let mut values = Vec::with_capacity(traj.steps.len());
    let mut alps = Vec::with_capacity(traj.steps.len());
    let mut rlps = Vec::with_capacity(traj.steps.len());
    for step in &traj.steps {
        match (step.action_log_prob, step.ref_log_prob, step.value_estimate) {
            (Some(a), Some(r), Some(v)) => {
                rewards.push(step.reward.r_all_norm);
                values.push(v);
                alps.push(a);
                rlps.push(r);
            }
            _ => {
                return Ok(ScoreLine {
                    episode_id: traj.episode_id.clone(),
                    scorable: false,
                    advantages: None,
                    returns: None,
                    actor_objective: None,
                    critic_loss: None,
                    total_loss: None,
                })
            }
        }
    }
    if rewards.is_empty() {
        return Ok(ScoreLine {
            episode_id: traj.episode_id.clone(),
            scorable: false,
            advantages: None,
            returns: None,
            actor_objective: None,
            critic_loss: None,
            total_loss: None,
        });
    }
    score_steps(&traj.episode_id, &rewards, &values, &alps, &rlps, &cfg).map(|(_, line)| line)
}
