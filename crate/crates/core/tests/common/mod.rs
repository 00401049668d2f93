#![allow(dead_code)]

use rand::Rng as _;
use recpo::corpus::TokenSequence;
use recpo::model::{ModelConfig, PolicyParams};
use recpo::recpo::{BatchItems, BatchTree, UserGroup};
use recpo::reward::{advantages, Estimator};
use recpo::rng;
use recpo::sampler::{sample_group, SamplerConfig};
use recpo::model::Pooling;

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        layers: 2,
        heads: 2,
        width: 16,
        ff_width: 32,
        max_context: 48,
        ..ModelConfig::default()
    }
}

pub fn tiny_params(seed: u64) -> PolicyParams<f64> {
    // A larger init scale keeps the toy policy far from uniform.
    let cfg = ModelConfig {
        init_std: 0.3,
        ..tiny_config()
    };
    PolicyParams::<f64>::init(&cfg, seed).unwrap()
}

pub fn random_tokens(rng: &mut rng::Rng, len: usize) -> TokenSequence {
    TokenSequence((0..len).map(|_| rng.random_range(5..100u32)).collect())
}

/// A toy batch: `users` prompts sharing a 3-token header, `items` catalog
/// prompts sharing a 2-token header, groups of `g` trajectories with at most
/// `budget` reasoning tokens, random rewards, and old log-probabilities
/// shifted away from the current policy by `shift` (0 gives ratio 1).
pub struct ToyBatch {
    pub groups: Vec<UserGroup<f64>>,
    pub items: BatchItems,
    pub user_header: TokenSequence,
}

pub fn toy_batch(
    params: &PolicyParams<f64>,
    seed: u64,
    users: usize,
    g: usize,
    budget: usize,
    shift: f64,
    estimator: Estimator,
    tau: f64,
) -> ToyBatch {
    let mut rng = rng::stream(seed, &[77]);
    let user_header = random_tokens(&mut rng, 3);
    let item_header = random_tokens(&mut rng, 2);
    let catalog: Vec<TokenSequence> = (0..6)
        .map(|_| {
            let n = rng.random_range(2..4);
            let mut t = item_header.0.clone();
            t.extend(random_tokens(&mut rng, n).0);
            TokenSequence(t)
        })
        .collect();
    let targets: Vec<usize> = (0..users).map(|_| rng.random_range(0..catalog.len())).collect();
    let items = BatchItems::from_targets(&targets, &catalog, item_header).unwrap();
    let sampler = SamplerConfig {
        temperature: 1.3,
        top_k: 8,
        group_size: g,
        reasoning_budget: budget,
    };
    let mut groups = Vec::new();
    for (u, &target) in targets.iter().enumerate() {
        let n = rng.random_range(2..5);
        let mut prompt = user_header.0.clone();
        prompt.extend(random_tokens(&mut rng, n).0);
        let prompt = TokenSequence(prompt);
        let trajectories = sample_group(params, &prompt, &sampler, seed * 31 + u as u64).unwrap();
        let rewards: Vec<f64> = (0..g).map(|_| rng.random::<f64>()).collect();
        groups.push(UserGroup {
            target,
            advantages: advantages(&rewards, estimator).unwrap(),
            old_rec_logps: vec![0.0; g],
            trajectories,
        });
    }
    let prompts: Vec<&TokenSequence> = groups.iter().map(|g| g.prompt()).collect();
    let mut tree = BatchTree::build(params, &prompts, &user_header, &items, Pooling::Mean).unwrap();
    tree.attach(&groups).unwrap();
    let fresh = tree.log_probs(&groups, &items, tau).unwrap();
    for (grp, lps) in groups.iter_mut().zip(fresh) {
        for (i, lp) in lps.into_iter().enumerate() {
            let tr = &mut grp.trajectories[i];
            tr.old_logps = lp
                .tokens
                .iter()
                .enumerate()
                .map(|(t, x)| x + shift * alternating(i + t))
                .collect();
            grp.old_rec_logps[i] = lp.rec + shift * alternating(i + 1);
        }
    }
    ToyBatch {
        groups,
        items,
        user_header,
    }
}

/// +1, -1, +0.5, -0.5, ... so shifted ratios land on both sides of 1.
fn alternating(k: usize) -> f64 {
    let sign = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
    sign * if (k / 2).is_multiple_of(2) { 1.0 } else { 0.5 }
}

/// Brute-force `log softmax(scores / tau)[target]` straight from the
/// definition, without max subtraction.
pub fn oracle_log_softmax(scores: &[f64], target: usize, tau: f64) -> f64 {
    let total: f64 = scores.iter().map(|s| (s / tau).exp()).sum();
    ((scores[target] / tau).exp() / total).ln()
}

pub fn oracle_clipped(r: f64, a: f64, eps: f64) -> f64 {
    let clipped = if r < 1.0 - eps {
        1.0 - eps
    } else if r > 1.0 + eps {
        1.0 + eps
    } else {
        r
    };
    if r * a < clipped * a {
        r * a
    } else {
        clipped * a
    }
}

/// Indices to probe in a finite-difference check: every coordinate with a
/// gradient above `min_abs`, thinned to `max` by a fixed stride, plus a few
/// arbitrary ones.
pub fn probe_indices(grad: &[f64], max: usize, min_abs: f64) -> Vec<usize> {
    let big: Vec<usize> = (0..grad.len()).filter(|&i| grad[i].abs() > min_abs).collect();
    let stride = (big.len() / max).max(1);
    let mut out: Vec<usize> = big.into_iter().step_by(stride).collect();
    out.extend((0..grad.len()).step_by((grad.len() / 20).max(1)));
    out.sort_unstable();
    out.dedup();
    out
}
