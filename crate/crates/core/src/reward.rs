//! Fused trajectory reward and group-relative advantages.
//!
//! The reward blends a discrete ranking term (single-target NDCG@k of the
//! target's full-catalog rank) with a continuous term (the target's softmax
//! probability over the full catalog):
//! `R = beta * R_c + (1 - beta) * R_d`.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{score_items, ItemEmbeddingTable};
use crate::scalar::Scalar;

pub const GRPO_STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_discrete: f64,
    pub r_continuous: f64,
    pub fused: f64,
    pub rank: usize,
    pub cutoff: usize,
}

/// 1-based rank under descending score; ties go to the lower item id.
pub fn rank_of_target<F: Scalar>(scores: ArrayView1<F>, target: usize) -> usize {
    let t = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(v, &s)| s > t || (s == t && v < target))
        .count()
}

/// Single-relevant-item NDCG: `1 / log2(rank + 1)` inside the cutoff.
pub fn ndcg_reward(rank: usize, k: usize) -> f64 {
    if rank == 0 || rank > k {
        0.0
    } else {
        1.0 / ((rank + 1) as f64).log2()
    }
}

/// Softmax probability of `target` among `scores / tau`, max-stabilized.
pub fn softmax_at<F: Scalar>(scores: ArrayView1<F>, target: usize, tau: f64) -> f64 {
    let max = scores.iter().fold(f64::NEG_INFINITY, |m, s| m.max(s.f64()));
    let total: f64 = scores.iter().map(|s| ((s.f64() - max) / tau).exp()).sum();
    ((scores[target].f64() - max) / tau).exp() / total
}

/// Probability of recommending `target` under a softmax over the whole
/// catalog of `<h_T, h_v> / tau`.
pub fn similarity_reward<F: Scalar>(
    h: ArrayView1<F>,
    table: &ItemEmbeddingTable<F>,
    target: usize,
    tau: f64,
) -> Result<f64> {
    check_target(target, table.len())?;
    let scores = score_items(h, table)?;
    Ok(softmax_at(scores.view(), target, tau))
}

pub fn fuse(r_d: f64, r_c: f64, beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::config("train.beta", format!("{beta} is outside [0, 1]")));
    }
    Ok(beta * r_c + (1.0 - beta) * r_d)
}

fn check_target(target: usize, len: usize) -> Result<()> {
    if target >= len {
        return Err(Error::InvalidArgument(format!(
            "target {target} outside catalog of {len} items"
        )));
    }
    Ok(())
}

/// Scores the catalog once and returns the full reward breakdown.
pub fn trajectory_reward<F: Scalar>(
    h: ArrayView1<F>,
    table: &ItemEmbeddingTable<F>,
    target: usize,
    cutoff: usize,
    beta: f64,
    tau: f64,
) -> Result<RewardBreakdown> {
    check_target(target, table.len())?;
    let scores = score_items(h, table)?;
    let rank = rank_of_target(scores.view(), target);
    let r_discrete = ndcg_reward(rank, cutoff);
    let r_continuous = softmax_at(scores.view(), target, tau);
    Ok(RewardBreakdown {
        r_discrete,
        r_continuous,
        fused: fuse(r_discrete, r_continuous, beta)?,
        rank,
        cutoff,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    #[default]
    Grpo,
    Rloo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageGroup {
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub estimator: Estimator,
    /// Index of the largest advantage, lowest index on ties.
    pub i_star: usize,
}

fn argmax_first(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(0, |best, (i, &x)| if x > v[best] { i } else { best })
}

fn check_group(rewards: &[f64]) -> Result<()> {
    if rewards.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "advantage estimation needs a group of at least 2, got {}",
            rewards.len()
        )));
    }
    Ok(())
}

fn all_equal(rewards: &[f64]) -> bool {
    rewards.iter().all(|&r| r == rewards[0])
}

fn zero_group(rewards: &[f64], estimator: Estimator) -> AdvantageGroup {
    AdvantageGroup {
        rewards: rewards.to_vec(),
        advantages: vec![0.0; rewards.len()],
        estimator,
        i_star: 0,
    }
}

/// `A_i = R_i - mean_{j != i} R_j`.
pub fn rloo_advantages(rewards: &[f64]) -> Result<AdvantageGroup> {
    check_group(rewards)?;
    // Summation rounding would otherwise leave tiny nonzero advantages.
    if all_equal(rewards) {
        return Ok(zero_group(rewards, Estimator::Rloo));
    }
    let others = (rewards.len() - 1) as f64;
    let advantages: Vec<f64> = rewards
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let rest: f64 = rewards
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &x)| x)
                .sum();
            r - rest / others
        })
        .collect();
    Ok(AdvantageGroup {
        i_star: argmax_first(&advantages),
        rewards: rewards.to_vec(),
        advantages,
        estimator: Estimator::Rloo,
    })
}

/// `A_i = (R_i - mean) / max(std, 1e-8)` with the population std.
pub fn grpo_advantages(rewards: &[f64]) -> Result<AdvantageGroup> {
    check_group(rewards)?;
    if all_equal(rewards) {
        return Ok(zero_group(rewards, Estimator::Grpo));
    }
    let g = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / g;
    let std = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g).sqrt();
    let denom = std.max(GRPO_STD_FLOOR);
    let advantages: Vec<f64> = rewards.iter().map(|r| (r - mean) / denom).collect();
    Ok(AdvantageGroup {
        i_star: argmax_first(&advantages),
        rewards: rewards.to_vec(),
        advantages,
        estimator: Estimator::Grpo,
    })
}

pub fn advantages(rewards: &[f64], estimator: Estimator) -> Result<AdvantageGroup> {
    match estimator {
        Estimator::Grpo => grpo_advantages(rewards),
        Estimator::Rloo => rloo_advantages(rewards),
    }
}
