//! Full-catalog inference and evaluation: greedy reasoning, one-shot
//! scoring, HR@K / NDCG@K, and the latency benchmark.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Catalog, PromptBank, TokenSequence, UserHistory};
use crate::error::{Error, Result};
use crate::model::{encode_items, score_items, DecodeState, ItemEmbeddingTable, Pooling, PolicyParams};
use crate::reward::{fuse, ndcg_reward, rank_of_target, softmax_at};
use crate::rng::{self, label};
use crate::sampler::{sample_from_state, LengthStats, SamplerConfig, StopReason, Trajectory};
use crate::scalar::Scalar;

/// Re-encodes every catalog item under `params`. The generation counter
/// continues from `previous` when given.
pub fn refresh_item_embeddings<F: Scalar>(
    params: &PolicyParams<F>,
    bank: &PromptBank,
    strategy: Pooling,
    previous: Option<&ItemEmbeddingTable<F>>,
) -> Result<ItemEmbeddingTable<F>> {
    let embeddings = encode_items(params, &bank.item_header, &bank.item_prompts, strategy)?;
    let mut table = ItemEmbeddingTable::new(embeddings, strategy);
    table.generation = previous.map_or(0, |t| t.generation) + 1;
    table.params_version = params.version;
    Ok(table)
}

/// Fails when the table was last fully refreshed under other parameters.
pub fn check_fresh<F: Scalar>(params: &PolicyParams<F>, table: &ItemEmbeddingTable<F>) -> Result<()> {
    if table.params_version != params.version {
        return Err(Error::StaleTable {
            table: table.params_version,
            params: params.version,
        });
    }
    Ok(())
}

/// The top-`k` item ids by descending score, ties to the lower id.
pub fn top_k_items<F: Scalar>(scores: &Array1<F>, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    let cmp = |a: &usize, b: &usize| {
        scores[*b]
            .partial_cmp(&scores[*a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(b))
    };
    let k = k.min(order.len());
    if k < order.len() && k > 0 {
        order.select_nth_unstable_by(k - 1, cmp);
        order.truncate(k);
    }
    order.sort_unstable_by(cmp);
    order.truncate(k);
    order
}

/// Decodes prompts that share a header, forwarding the header once.
pub struct PromptRunner<'p, F: Scalar> {
    params: &'p PolicyParams<F>,
    header: TokenSequence,
    header_state: Option<DecodeState<F>>,
}

impl<'p, F: Scalar> PromptRunner<'p, F> {
    pub fn new(params: &'p PolicyParams<F>, header: &TokenSequence) -> Result<Self> {
        let header_state = if header.is_empty() {
            None
        } else {
            Some(DecodeState::prefill(params, header.as_slice(), None)?)
        };
        Ok(PromptRunner {
            params,
            header: header.clone(),
            header_state,
        })
    }

    /// Decoding state after the whole prompt.
    pub fn state(&self, prompt: &TokenSequence) -> Result<DecodeState<F>> {
        match &self.header_state {
            Some(h) if prompt.len() > self.header.len() && prompt.starts_with(&self.header) => {
                DecodeState::prefill(self.params, &prompt.as_slice()[self.header.len()..], Some(&h.kv))
            }
            _ => DecodeState::prefill(self.params, prompt.as_slice(), None),
        }
    }

    /// Argmax reasoning of at most `budget` tokens; `budget = 0` returns the
    /// prompt's final hidden state.
    pub fn greedy(&self, prompt: &TokenSequence, budget: usize) -> Result<Trajectory<F>> {
        let state = self.state(prompt)?;
        if budget == 0 {
            return Ok(Trajectory {
                prompt: prompt.clone(),
                reasoning: TokenSequence::default(),
                old_logps: Vec::new(),
                supports: None,
                temperature: 0.0,
                final_hidden: state.last_hidden,
                target: None,
                reward: None,
                advantage: None,
                stop_reason: StopReason::Budget,
            });
        }
        let mut rng = rng::stream(0, &[]);
        sample_from_state(self.params, prompt, state, &SamplerConfig::greedy(budget), &mut rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recommendation<F = f32> {
    pub items: Vec<usize>,
    pub trajectory: Trajectory<F>,
}

/// Greedy reasoning, then the top-`k` catalog items by inner product.
pub fn recommend<F: Scalar>(
    params: &PolicyParams<F>,
    table: &ItemEmbeddingTable<F>,
    x_u: &TokenSequence,
    k: usize,
    reasoning_budget: usize,
) -> Result<Recommendation<F>> {
    let trajectory = PromptRunner::new(params, &TokenSequence::default())?.greedy(x_u, reasoning_budget)?;
    let scores = score_items(trajectory.final_hidden.view(), table)?;
    Ok(Recommendation {
        items: top_k_items(&scores, k),
        trajectory,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    /// Greedy reasoning budget at inference; `0` scores the prompt directly.
    pub reasoning_budget: usize,
    /// Evaluate only the first this-many users of the split; `0` means all.
    pub max_users: usize,
    pub split: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: vec![5, 10, 20],
            reasoning_budget: 64,
            max_users: 0,
            split: "test".into(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::config("eval.ks", "must be a non-empty list of positive cutoffs"));
        }
        if !["train", "val", "test"].contains(&self.split.as_str()) {
            return Err(Error::config("eval.split", "must be one of train, val, test"));
        }
        Ok(())
    }
}

/// Reward settings used to report the mean fused reward during evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardSettings {
    pub ndcg_cutoff: usize,
    pub beta: f64,
    pub tau_sim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub catalog_size: usize,
    pub users: usize,
    pub hit_rate: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub mean_fused_reward: f64,
    pub reasoning_length: LengthStats,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time_s: Option<f64>,
}

impl EvalReport {
    /// A fixed-width plain-text table.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "split={} users={} catalog={}\n{:>6} {:>8} {:>8}\n",
            self.split, self.users, self.catalog_size, "K", "HR@K", "NDCG@K"
        );
        for (k, hr) in &self.hit_rate {
            s.push_str(&format!("{k:>6} {hr:>8.4} {:>8.4}\n", self.ndcg[k]));
        }
        s.push_str(&format!(
            "mean fused reward {:.6}\nreasoning length mean {:.2} p50 {:.0} p90 {:.0} max {:.0}\n",
            self.mean_fused_reward,
            self.reasoning_length.mean,
            self.reasoning_length.p50,
            self.reasoning_length.p90,
            self.reasoning_length.max
        ));
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,hit_rate,ndcg\n");
        for (k, hr) in &self.hit_rate {
            s.push_str(&format!("{k},{hr},{}\n", self.ndcg[k]));
        }
        s
    }
}

/// HR@K and NDCG@K of 1-based target ranks.
pub fn metrics_from_ranks(ranks: &[usize], ks: &[usize]) -> (BTreeMap<usize, f64>, BTreeMap<usize, f64>) {
    let n = ranks.len().max(1) as f64;
    let mut hr = BTreeMap::new();
    let mut ndcg = BTreeMap::new();
    for &k in ks {
        hr.insert(k, ranks.iter().filter(|&&r| r <= k).count() as f64 / n);
        ndcg.insert(k, ranks.iter().map(|&r| ndcg_reward(r, k)).sum::<f64>() / n);
    }
    (hr, ndcg)
}

/// Per-user outcome of an evaluation pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserOutcome {
    pub user_id: usize,
    pub rank: usize,
    pub fused_reward: f64,
    pub reasoning_length: usize,
}

/// Ranks every user's target over the full catalog.
pub fn score_users<F: Scalar>(
    params: &PolicyParams<F>,
    table: &ItemEmbeddingTable<F>,
    bank: &PromptBank,
    catalog: &Catalog,
    users: &[UserHistory],
    reasoning_budget: usize,
    reward: RewardSettings,
) -> Result<Vec<UserOutcome>> {
    let runner = PromptRunner::new(params, &bank.user_header)?;
    users
        .iter()
        .map(|u| {
            let prompt = bank.user_prompt(u, &catalog.items)?;
            let tr = runner.greedy(&prompt, reasoning_budget)?;
            let scores = score_items(tr.final_hidden.view(), table)?;
            let rank = rank_of_target(scores.view(), u.target);
            let r_c = softmax_at(scores.view(), u.target, reward.tau_sim);
            Ok(UserOutcome {
                user_id: u.user_id,
                rank,
                fused_reward: fuse(ndcg_reward(rank, reward.ndcg_cutoff), r_c, reward.beta)?,
                reasoning_length: tr.len(),
            })
        })
        .collect()
}

pub fn report_from_outcomes(split: &str, catalog_size: usize, outcomes: &[UserOutcome], ks: &[usize]) -> EvalReport {
    let ranks: Vec<usize> = outcomes.iter().map(|o| o.rank).collect();
    let (hit_rate, ndcg) = metrics_from_ranks(&ranks, ks);
    let lengths: Vec<usize> = outcomes.iter().map(|o| o.reasoning_length).collect();
    EvalReport {
        split: split.to_string(),
        catalog_size,
        users: outcomes.len(),
        hit_rate,
        ndcg,
        mean_fused_reward: outcomes.iter().map(|o| o.fused_reward).sum::<f64>() / outcomes.len().max(1) as f64,
        reasoning_length: LengthStats::from_lengths(&lengths),
        wall_time_s: None,
    }
}

/// Evaluates a split against a table refreshed under `params`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<F: Scalar>(
    params: &PolicyParams<F>,
    table: &ItemEmbeddingTable<F>,
    bank: &PromptBank,
    catalog: &Catalog,
    users: &[UserHistory],
    cfg: &EvalConfig,
    reward: RewardSettings,
    strict: bool,
) -> Result<EvalReport> {
    if users.is_empty() {
        return Err(Error::InvalidArgument(format!("split `{}` is empty", cfg.split)));
    }
    if strict {
        check_fresh(params, table)?;
    }
    let start = Instant::now();
    let users = if cfg.max_users > 0 && cfg.max_users < users.len() {
        &users[..cfg.max_users]
    } else {
        users
    };
    let outcomes = score_users(params, table, bank, catalog, users, cfg.reasoning_budget, reward)?;
    let mut report = report_from_outcomes(&cfg.split, table.len(), &outcomes, &cfg.ks);
    if !strict {
        report.wall_time_s = Some(start.elapsed().as_secs_f64());
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatencyConfig {
    pub catalog_sizes: Vec<usize>,
    pub repetitions: usize,
    pub warmup: usize,
    /// Identifier tokens decoded by the autoregressive arm.
    pub decode_tokens: usize,
    /// Items returned by the scoring arm.
    pub top_k: usize,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        LatencyConfig {
            catalog_sizes: vec![1000, 10000],
            repetitions: 5,
            warmup: 2,
            decode_tokens: 16,
            top_k: 20,
        }
    }
}

impl LatencyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 3 {
            return Err(Error::config("latency.repetitions", "must be >= 3"));
        }
        if self.catalog_sizes.is_empty() || self.catalog_sizes.contains(&0) {
            return Err(Error::config("latency.catalog_sizes", "must be a non-empty list of positive sizes"));
        }
        if self.decode_tokens == 0 {
            return Err(Error::config("latency.decode_tokens", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub samples_ms: Vec<f64>,
    pub mean_ms: f64,
    pub median_ms: f64,
}

impl PhaseTiming {
    pub fn from_samples(samples_ms: Vec<f64>) -> Self {
        let mut sorted = samples_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median_ms = if n == 0 {
            0.0
        } else if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        PhaseTiming {
            mean_ms: samples_ms.iter().sum::<f64>() / n.max(1) as f64,
            median_ms,
            samples_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub catalog_size: usize,
    pub reasoning: PhaseTiming,
    pub scoring: PhaseTiming,
    pub autoregressive: PhaseTiming,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub repetitions: usize,
    pub reasoning_budget: usize,
    pub decode_tokens: usize,
    pub rows: Vec<LatencyRow>,
}

impl LatencyReport {
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:>8} {:>14} {:>14} {:>14}   (median ms, reps={}, AR tokens={})\n",
            "|V|", "reasoning", "scoring", "autoregressive", self.repetitions, self.decode_tokens
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{:>8} {:>14.4} {:>14.4} {:>14.4}\n",
                r.catalog_size, r.reasoning.median_ms, r.scoring.median_ms, r.autoregressive.median_ms
            ));
        }
        s
    }
}

fn time_ms<T>(f: impl FnOnce() -> Result<T>) -> Result<(f64, T)> {
    let start = Instant::now();
    let out = f()?;
    Ok((start.elapsed().as_secs_f64() * 1e3, out))
}

/// Times, at batch size 1 and per catalog size: greedy reasoning from the
/// prompt, full-catalog scoring with top-K selection over a synthetic table,
/// and greedy decoding of `decode_tokens` identifier tokens.
pub fn latency_bench<F: Scalar>(
    params: &PolicyParams<F>,
    prompt: &TokenSequence,
    reasoning_budget: usize,
    cfg: &LatencyConfig,
    seed: u64,
) -> Result<LatencyReport> {
    cfg.validate()?;
    let d = params.config.width;
    let greedy = SamplerConfig::greedy(reasoning_budget);
    let mut rows = Vec::new();
    for (s, &size) in cfg.catalog_sizes.iter().enumerate() {
        let mut rng = rng::stream(seed, &[label::BENCH, s as u64]);
        let table = ItemEmbeddingTable::new(
            Array2::from_shape_simple_fn((size, d), || {
                let z: f64 = StandardNormal.sample(&mut rng);
                F::of(z)
            }),
            Pooling::Last,
        );
        let mut reasoning = Vec::new();
        let mut scoring = Vec::new();
        let mut autoregressive = Vec::new();
        for rep in 0..cfg.warmup + cfg.repetitions {
            let (t_reason, tr) = time_ms(|| {
                let state = DecodeState::prefill(params, prompt.as_slice(), None)?;
                sample_from_state(params, prompt, state, &greedy, &mut rng::stream(0, &[]))
            })?;
            let (t_score, _) = time_ms(|| {
                let scores = score_items(tr.final_hidden.view(), &table)?;
                Ok(top_k_items(&scores, cfg.top_k))
            })?;
            let mut state = DecodeState::prefill(params, prompt.as_slice(), None)?;
            let (t_ar, _) = time_ms(|| {
                for _ in 0..cfg.decode_tokens {
                    let next = crate::sampler::top_k_ids(state.last_logits.view(), 1)[0];
                    state.push(params, next)?;
                }
                Ok(())
            })?;
            if rep >= cfg.warmup {
                reasoning.push(t_reason);
                scoring.push(t_score);
                autoregressive.push(t_ar);
            }
        }
        rows.push(LatencyRow {
            catalog_size: size,
            reasoning: PhaseTiming::from_samples(reasoning),
            scoring: PhaseTiming::from_samples(scoring),
            autoregressive: PhaseTiming::from_samples(autoregressive),
        });
    }
    Ok(LatencyReport {
        repetitions: cfg.repetitions,
        reasoning_budget,
        decode_tokens: cfg.decode_tokens,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn top_k_breaks_ties_by_id() {
        let s = array![0.5f32, 0.9, 0.5, 0.1, 0.9];
        assert_eq!(top_k_items(&s, 3), vec![1, 4, 0]);
        assert_eq!(top_k_items(&s, 5), vec![1, 4, 0, 2, 3]);
        assert_eq!(top_k_items(&s, 9).len(), 5);
        assert_eq!(top_k_items(&s, 1), vec![1]);
    }

    #[test]
    fn metrics_examples() {
        let (hr, ndcg) = metrics_from_ranks(&[1, 1, 1], &[5, 10, 20]);
        assert!(hr.values().all(|&v| v == 1.0) && ndcg.values().all(|&v| v == 1.0));
        let (hr, ndcg) = metrics_from_ranks(&[3], &[10]);
        assert_eq!(hr[&10], 1.0);
        assert!((ndcg[&10] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn timing_summary() {
        let t = PhaseTiming::from_samples(vec![3.0, 1.0, 2.0]);
        assert_eq!(t.median_ms, 2.0);
        assert_eq!(t.mean_ms, 2.0);
        assert_eq!(t.samples_ms.len(), 3);
    }
}
