//! Group-relative policy optimization: group-normalized advantages, the
//! token-level clipped surrogate, objective assembly with KL regularization,
//! and reward routing between the verifier and rubric paths.
//!
//! All functions are pure over immutable batches and deterministic given
//! their inputs; sums are index-ascending left folds.

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, EndpointHandle};
use crate::error::{Error, Result};
use crate::prompts::PromptSet;
use crate::rubric::{self, Rubric};
use crate::synthesis::{Domain, Question, Rollout, SynthesizedReference};
use crate::verify;

/// Where the KL penalty lands. The default shapes rewards before the
/// advantage computation (with the penalty treated as a constant); the
/// alternative puts the estimator into the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlPlacement {
    RewardLevel,
    LossLevel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub group_size: usize,
    /// Clip range for the importance ratio. 0.2 is the usual PPO default,
    /// not a sourced constant.
    pub clip_epsilon: f64,
    pub kl_coeff: f64,
    pub learning_rate: f64,
    pub max_steps: usize,
    /// Below this group std the advantages collapse to zero.
    pub std_floor: f64,
    pub kl_placement: KlPlacement,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 8,
            clip_epsilon: 0.2,
            kl_coeff: 1e-3,
            learning_rate: 5e-7,
            max_steps: 1000,
            std_floor: 1e-8,
            kl_placement: KlPlacement::RewardLevel,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum RewardComponent {
    Verifier { matched: bool },
    Rubric { yes: usize, total: usize, anomalies: usize },
    LengthPenalty,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardRecord {
    pub question_id: String,
    pub per_rollout_rewards: Vec<f64>,
    pub components: Vec<RewardComponent>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdvantageSet {
    pub per_rollout_advantage: Vec<f64>,
    pub group_mean: f64,
    pub group_std: f64,
}

/// Aligned per-token log-probabilities for one rollout under the current,
/// behavior, and reference policies.
#[derive(Debug, Clone, Default)]
pub struct TokenTrack {
    pub logp_new: Vec<f64>,
    pub logp_old: Vec<f64>,
    pub logp_ref: Vec<f64>,
}

impl TokenTrack {
    pub fn len(&self) -> usize {
        self.logp_new.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logp_new.is_empty()
    }

    fn check(&self, index: usize) -> Result<()> {
        if self.logp_new.len() != self.logp_old.len() || self.logp_new.len() != self.logp_ref.len() {
            return Err(Error::MisalignedBatch(format!(
                "rollout {index}: lengths new={} old={} ref={}",
                self.logp_new.len(),
                self.logp_old.len(),
                self.logp_ref.len()
            )));
        }
        if self.logp_new.is_empty() {
            return Err(Error::MisalignedBatch(format!("rollout {index} has zero tokens")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct TokenBatch {
    pub rollouts: Vec<TokenTrack>,
}

impl TokenBatch {
    fn check(&self, advantages: &AdvantageSet) -> Result<()> {
        if self.rollouts.len() != advantages.per_rollout_advantage.len() {
            return Err(Error::MisalignedBatch(format!(
                "{} rollouts vs {} advantages",
                self.rollouts.len(),
                advantages.per_rollout_advantage.len()
            )));
        }
        for (i, track) in self.rollouts.iter().enumerate() {
            track.check(i)?;
        }
        Ok(())
    }
}

/// Dispatch by domain: verifiable questions go through the answer check,
/// everything else through the rubric reward. A rubric supplied for a
/// verifiable question is ignored.
#[allow(clippy::too_many_arguments)]
pub fn route_reward(
    backend: &dyn Backend,
    judge: &EndpointHandle,
    prompts: &PromptSet,
    q: &Question,
    rollout: &Rollout,
    reference: &SynthesizedReference,
    rubric: Option<&Rubric>,
    length_limit: Option<usize>,
) -> Result<(f64, RewardComponent)> {
    match q.domain {
        Domain::Verifiable => {
            let r = verify::reward_verifiable(rollout, reference)?;
            Ok((r, RewardComponent::Verifier { matched: r > 0.5 }))
        }
        Domain::NonVerifiable => {
            let rubric = rubric.ok_or(Error::EmptyRubric)?;
            let score = rubric::reward_rubric(backend, judge, prompts, rollout, rubric, length_limit)?;
            let component = if score.length_penalty_applied {
                RewardComponent::LengthPenalty
            } else {
                RewardComponent::Rubric {
                    yes: score
                        .verdicts
                        .iter()
                        .filter(|v| v.decision == rubric::Decision::Yes)
                        .count(),
                    total: rubric.len(),
                    anomalies: score.anomalies,
                }
            };
            Ok((score.reward, component))
        }
    }
}

/// Group-normalized advantages with population std; an all-equal group
/// (std at or below the floor) carries no signal, so all advantages are 0.
pub fn advantages(rewards: &[f64], std_floor: f64) -> Result<AdvantageSet> {
    if rewards.len() < 2 {
        return Err(Error::GroupTooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let per_rollout_advantage = if std <= std_floor {
        vec![0.0; rewards.len()]
    } else {
        rewards.iter().map(|r| (r - mean) / std).collect()
    };
    Ok(AdvantageSet { per_rollout_advantage, group_mean: mean, group_std: std })
}

/// min(ratio·A, clip(ratio, 1−ε, 1+ε)·A).
pub fn clipped_term(ratio: f64, advantage: f64, epsilon: f64) -> Result<f64> {
    if ratio <= 0.0 {
        return Err(Error::NonPositiveRatio(ratio));
    }
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    Ok((ratio * advantage).min(clipped * advantage))
}

/// Per-token k3 KL estimate of KL(π_θ ‖ π_ref): r − 1 − log r with
/// r = π_ref/π_θ. Non-negative by construction.
pub fn k3_estimate(logp_new: f64, logp_ref: f64) -> f64 {
    let log_r = logp_ref - logp_new;
    log_r.exp() - 1.0 - log_r
}

/// Reward-level KL placement: subtract β times the rollout's mean per-token
/// k3 (behavior policy vs reference) from each reward. The penalty is a
/// constant with respect to the parameters being optimized.
pub fn kl_shaped_rewards(rewards: &[f64], batch: &TokenBatch, beta: f64) -> Result<Vec<f64>> {
    if rewards.len() != batch.rollouts.len() {
        return Err(Error::MisalignedBatch(format!(
            "{} rewards vs {} rollouts",
            rewards.len(),
            batch.rollouts.len()
        )));
    }
    rewards
        .iter()
        .zip(batch.rollouts.iter())
        .enumerate()
        .map(|(i, (r, track))| {
            track.check(i)?;
            let kl = track
                .logp_old
                .iter()
                .zip(track.logp_ref.iter())
                .map(|(&o, &rf)| k3_estimate(o, rf))
                .sum::<f64>()
                / track.len() as f64;
            Ok(r - beta * kl)
        })
        .collect()
}

/// The full objective: (1/G) Σ_i (1/|o_i|) Σ_t L_t, minus β·KL̂ when the KL
/// lives in the loss. Returns the per-token surrogate terms for gradient
/// checking.
pub fn grpo_objective(
    batch: &TokenBatch,
    advantages: &AdvantageSet,
    config: &GrpoConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    batch.check(advantages)?;
    let g = batch.rollouts.len() as f64;
    let mut objective = 0.0;
    let mut per_token = Vec::with_capacity(batch.rollouts.len());
    for (i, track) in batch.rollouts.iter().enumerate() {
        let adv = advantages.per_rollout_advantage[i];
        let len = track.len() as f64;
        let mut terms = Vec::with_capacity(track.len());
        for t in 0..track.len() {
            let ratio = (track.logp_new[t] - track.logp_old[t]).exp();
            let surrogate = clipped_term(ratio, adv, config.clip_epsilon)?;
            let term = match config.kl_placement {
                KlPlacement::LossLevel => {
                    surrogate - config.kl_coeff * k3_estimate(track.logp_new[t], track.logp_ref[t])
                }
                KlPlacement::RewardLevel => surrogate,
            };
            objective += term / (g * len);
            terms.push(surrogate);
        }
        per_token.push(terms);
    }
    Ok((objective, per_token))
}

/// ∂objective/∂logπ_θ(o_{i,t}), per token, consistent with the branch the
/// min in the surrogate actually selects.
pub fn grpo_grad_logp_new(
    batch: &TokenBatch,
    advantages: &AdvantageSet,
    config: &GrpoConfig,
) -> Result<Vec<Vec<f64>>> {
    batch.check(advantages)?;
    let g = batch.rollouts.len() as f64;
    let mut grads = Vec::with_capacity(batch.rollouts.len());
    for (i, track) in batch.rollouts.iter().enumerate() {
        let adv = advantages.per_rollout_advantage[i];
        let len = track.len() as f64;
        let mut row = Vec::with_capacity(track.len());
        for t in 0..track.len() {
            let ratio = (track.logp_new[t] - track.logp_old[t]).exp();
            let unclipped = ratio * adv;
            let clipped = ratio.clamp(1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon) * adv;
            // d(ratio·A)/dlogp = A·ratio on the unclipped branch; the clipped
            // branch is flat outside the band.
            let mut d = if unclipped <= clipped { adv * ratio } else { 0.0 };
            if config.kl_placement == KlPlacement::LossLevel {
                let r = (track.logp_ref[t] - track.logp_new[t]).exp();
                d -= config.kl_coeff * (1.0 - r);
            }
            row.push(d / (g * len));
        }
        grads.push(row);
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn uniform_track(n: usize, logp: f64) -> TokenTrack {
        TokenTrack {
            logp_new: vec![logp; n],
            logp_old: vec![logp; n],
            logp_ref: vec![logp; n],
        }
    }

    #[test]
    fn advantages_binary_reward_fixture() {
        let set = advantages(&[1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0], 1e-8).unwrap();
        assert!((set.group_mean - 0.75).abs() < 1e-12);
        assert!((set.group_std - 0.433013).abs() < 1e-6);
        for (r, a) in [1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0]
            .iter()
            .zip(&set.per_rollout_advantage)
        {
            let expected = if *r > 0.5 { 0.577350 } else { -1.732051 };
            assert!((a - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn advantages_degenerate_and_two_point() {
        let set = advantages(&[0.5, 0.5, 0.5, 0.5], 1e-8).unwrap();
        assert!(set.per_rollout_advantage.iter().all(|&a| a == 0.0));

        let set = advantages(&[1.0, 0.0], 1e-8).unwrap();
        assert!((set.per_rollout_advantage[0] - 1.0).abs() < 1e-12);
        assert!((set.per_rollout_advantage[1] + 1.0).abs() < 1e-12);

        assert!(matches!(advantages(&[1.0], 1e-8), Err(Error::GroupTooSmall(1))));
    }

    #[test]
    fn clipped_term_fixtures() {
        assert!((clipped_term(1.5, 1.0, 0.2).unwrap() - 1.2).abs() < 1e-15);
        assert!((clipped_term(0.5, -1.0, 0.2).unwrap() - -0.8).abs() < 1e-15);
        assert_eq!(clipped_term(1.0, 3.25, 0.2).unwrap(), 3.25);
        assert!(matches!(clipped_term(0.0, 1.0, 0.2), Err(Error::NonPositiveRatio(_))));
    }

    #[test]
    fn objective_on_policy_equal_lengths_is_zero() {
        // all ratios 1 and β=0: objective = mean advantage = 0
        let batch = TokenBatch {
            rollouts: (0..4).map(|_| uniform_track(3, -1.0)).collect(),
        };
        let adv = advantages(&[1.0, 0.0, 1.0, 0.0], 1e-8).unwrap();
        let config = GrpoConfig { kl_coeff: 0.0, ..GrpoConfig::default() };
        let (obj, _) = grpo_objective(&batch, &adv, &config).unwrap();
        assert!(obj.abs() < 1e-12);
    }

    #[test]
    fn objective_reduces_to_clipped_term_for_single_token() {
        // one rollout, one token, ratio 1.5, A = 1 by forcing the advantage
        let batch = TokenBatch {
            rollouts: vec![
                TokenTrack { logp_new: vec![-0.5 + 1.5f64.ln()], logp_old: vec![-0.5], logp_ref: vec![-0.5] },
                TokenTrack { logp_new: vec![-0.5], logp_old: vec![-0.5], logp_ref: vec![-0.5] },
            ],
        };
        let adv = AdvantageSet {
            per_rollout_advantage: vec![1.0, 0.0],
            group_mean: 0.0,
            group_std: 1.0,
        };
        let config = GrpoConfig { kl_coeff: 0.0, ..GrpoConfig::default() };
        let (obj, terms) = grpo_objective(&batch, &adv, &config).unwrap();
        assert!((terms[0][0] - 1.2).abs() < 1e-12);
        assert!((obj - 0.6).abs() < 1e-12); // 1.2 averaged over G=2
    }

    #[test]
    fn kl_term_zero_when_new_equals_ref() {
        let batch = TokenBatch {
            rollouts: (0..2).map(|_| uniform_track(4, -2.0)).collect(),
        };
        let adv = advantages(&[1.0, 0.0], 1e-8).unwrap();
        let with_kl = GrpoConfig {
            kl_coeff: 1e-3,
            kl_placement: KlPlacement::LossLevel,
            ..GrpoConfig::default()
        };
        let without = GrpoConfig { kl_coeff: 0.0, ..GrpoConfig::default() };
        let (a, _) = grpo_objective(&batch, &adv, &with_kl).unwrap();
        let (b, _) = grpo_objective(&batch, &adv, &without).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn misaligned_batch_rejected() {
        let batch = TokenBatch {
            rollouts: vec![TokenTrack {
                logp_new: vec![-1.0, -1.0],
                logp_old: vec![-1.0],
                logp_ref: vec![-1.0, -1.0],
            }],
        };
        let adv = AdvantageSet { per_rollout_advantage: vec![0.0], group_mean: 0.0, group_std: 0.0 };
        assert!(matches!(
            grpo_objective(&batch, &adv, &GrpoConfig::default()),
            Err(Error::MisalignedBatch(_))
        ));
    }

    #[test]
    fn reward_level_shaping_subtracts_mean_k3() {
        let mut track = uniform_track(2, -1.0);
        track.logp_ref = vec![-1.5, -1.5]; // behavior differs from reference
        let batch = TokenBatch { rollouts: vec![track, uniform_track(2, -1.0)] };
        let shaped = kl_shaped_rewards(&[1.0, 1.0], &batch, 0.1).unwrap();
        let kl = k3_estimate(-1.0, -1.5);
        assert!((shaped[0] - (1.0 - 0.1 * kl)).abs() < 1e-12);
        assert!((shaped[1] - 1.0).abs() < 1e-12);
        assert!(kl > 0.0);
    }

    proptest! {
        #[test]
        fn advantages_are_normalized(rewards in proptest::collection::vec(0.0f64..1.0, 2..16)) {
            let set = advantages(&rewards, 1e-8).unwrap();
            if set.group_std > 1e-8 {
                let n = rewards.len() as f64;
                let mean: f64 = set.per_rollout_advantage.iter().sum::<f64>() / n;
                let var: f64 = set.per_rollout_advantage.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!((var.sqrt() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn advantages_scale_invariant(
            rewards in proptest::collection::vec(0.0f64..1.0, 2..10),
            scale in 0.1f64..10.0,
            shift in -5.0f64..5.0,
        ) {
            let base = advantages(&rewards, 0.0).unwrap();
            let transformed: Vec<f64> = rewards.iter().map(|r| scale * r + shift).collect();
            let other = advantages(&transformed, 0.0).unwrap();
            for (a, b) in base.per_rollout_advantage.iter().zip(&other.per_rollout_advantage) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn clipped_term_never_exceeds_unclipped(ratio in 0.01f64..5.0, adv in -3.0f64..3.0) {
            let term = clipped_term(ratio, adv, 0.2).unwrap();
            prop_assert!(term <= ratio * adv + 1e-15);
            if (0.8..=1.2).contains(&ratio) {
                prop_assert!((term - ratio * adv).abs() < 1e-12);
            }
        }

        #[test]
        fn k3_is_non_negative(logp_new in -6.0f64..0.0, logp_ref in -6.0f64..0.0) {
            prop_assert!(k3_estimate(logp_new, logp_ref) >= 0.0);
        }
    }
}
