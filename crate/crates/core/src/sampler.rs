//! Reasoning trajectories drawn from the policy: stochastic top-K /
//! temperature sampling for training groups, argmax for inference.
//!
//! Log-probabilities are always taken from the restricted, renormalized
//! distribution the token was drawn from, so that old and new policies are
//! compared over the same support.

use ndarray::{Array1, ArrayView1};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenSequence, ANSWER_OPEN};
use crate::error::{Error, Result};
use crate::model::{DecodeState, HiddenState, PolicyParams};
use crate::reward::RewardBreakdown;
use crate::rng::{self, Rng};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Softmax temperature; `0` means argmax decoding.
    pub temperature: f64,
    pub top_k: usize,
    /// Trajectories per user, G.
    pub group_size: usize,
    /// Maximum number of reasoning tokens.
    pub reasoning_budget: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            temperature: 1.5,
            top_k: 20,
            group_size: 4,
            reasoning_budget: 64,
        }
    }
}

impl SamplerConfig {
    pub fn greedy(reasoning_budget: usize) -> Self {
        SamplerConfig {
            temperature: 1.0,
            top_k: 1,
            group_size: 1,
            reasoning_budget,
        }
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(Error::config("sampler.temperature", "must be finite and >= 0"));
        }
        if self.top_k == 0 || self.top_k > vocab_size {
            return Err(Error::config(
                "sampler.top_k",
                format!("must be in 1..={vocab_size}"),
            ));
        }
        if self.group_size == 0 {
            return Err(Error::config("sampler.group_size", "must be >= 1"));
        }
        if self.reasoning_budget == 0 {
            return Err(Error::config("sampler.reasoning_budget", "must be >= 1"));
        }
        Ok(())
    }

    fn is_greedy(&self) -> bool {
        self.top_k == 1 || self.temperature == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    AnswerToken,
    Budget,
}

/// One reasoning-then-recommend trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<F = f32> {
    pub prompt: TokenSequence,
    pub reasoning: TokenSequence,
    /// Log-probability of each reasoning token under the sampling policy.
    pub old_logps: Vec<f64>,
    /// Token ids each reasoning token was drawn from; `None` when the whole
    /// vocabulary was eligible.
    pub supports: Option<Vec<Vec<u32>>>,
    pub temperature: f64,
    /// Hidden state at the last position (h_T).
    pub final_hidden: HiddenState<F>,
    pub target: Option<usize>,
    pub reward: Option<RewardBreakdown>,
    pub advantage: Option<f64>,
    pub stop_reason: StopReason,
}

impl<F: Scalar> Trajectory<F> {
    pub fn len(&self) -> usize {
        self.reasoning.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reasoning.is_empty()
    }

    pub fn support(&self, t: usize) -> Option<&[u32]> {
        self.supports.as_ref().map(|s| s[t].as_slice())
    }
}

/// The restricted distribution at one decoding step: eligible ids in
/// ascending order with their log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Restricted {
    pub ids: Vec<u32>,
    pub logps: Vec<f64>,
}

/// Top-K ids by descending logit, ties to the lower id.
pub fn top_k_ids<F: Scalar>(logits: ArrayView1<F>, k: usize) -> Vec<u32> {
    let mut order: Vec<u32> = (0..logits.len() as u32).collect();
    let key = |i: &u32| logits[*i as usize];
    if k < order.len() {
        order.select_nth_unstable_by(k, |a, b| {
            key(b).partial_cmp(&key(a)).expect("finite logits").then(a.cmp(b))
        });
        order.truncate(k);
    }
    order.sort_unstable();
    order
}

/// `log softmax(z / temperature)` over `ids` (all ids when `None`),
/// evaluated at `token`. Greedy decoding (temperature 0) is the degenerate
/// distribution with log-probability 0.
pub fn restricted_logp<F: Scalar>(
    logits: ArrayView1<F>,
    token: u32,
    ids: Option<&[u32]>,
    temperature: f64,
) -> f64 {
    if temperature == 0.0 || ids.is_some_and(|s| s.len() == 1) {
        return 0.0;
    }
    let z = |i: u32| logits[i as usize].f64() / temperature;
    let lse = |it: &mut dyn Iterator<Item = u32>| {
        let v: Vec<f64> = it.map(z).collect();
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
    };
    let norm = match ids {
        Some(s) => lse(&mut s.iter().copied()),
        None => lse(&mut (0..logits.len() as u32)),
    };
    z(token) - norm
}

/// Gradient of [`restricted_logp`] with respect to the logits row:
/// `(onehot(token) - p) / temperature`, with `p` zero outside the support.
pub fn restricted_logp_grad<F: Scalar>(
    logits: ArrayView1<F>,
    token: u32,
    ids: Option<&[u32]>,
    temperature: f64,
) -> Array1<F> {
    let mut g = Array1::zeros(logits.len());
    if temperature == 0.0 || ids.is_some_and(|s| s.len() == 1) {
        return g;
    }
    let all: Vec<u32>;
    let ids = match ids {
        Some(s) => s,
        None => {
            all = (0..logits.len() as u32).collect();
            &all
        }
    };
    let z: Vec<f64> = ids.iter().map(|&i| logits[i as usize].f64() / temperature).collect();
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = z.iter().map(|x| (x - max).exp()).sum();
    for (&i, zi) in ids.iter().zip(&z) {
        g[i as usize] = F::of(-((zi - max).exp() / total) / temperature);
    }
    g[token as usize] += F::of(1.0 / temperature);
    g
}

pub fn restricted_distribution<F: Scalar>(
    logits: ArrayView1<F>,
    temperature: f64,
    top_k: usize,
) -> Restricted {
    if temperature == 0.0 || top_k == 1 {
        let ids = top_k_ids(logits, 1);
        return Restricted {
            ids,
            logps: vec![0.0],
        };
    }
    let ids = top_k_ids(logits, top_k);
    let z: Vec<f64> = ids.iter().map(|&i| logits[i as usize].f64() / temperature).collect();
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    Restricted {
        logps: z.iter().map(|x| x - lse).collect(),
        ids,
    }
}

fn draw(dist: &Restricted, rng: &mut Rng) -> (u32, f64) {
    if dist.ids.len() == 1 {
        return (dist.ids[0], dist.logps[0]);
    }
    let mut u: f64 = rng.random();
    for (&id, &lp) in dist.ids.iter().zip(&dist.logps) {
        let p = lp.exp();
        if u < p {
            return (id, lp);
        }
        u -= p;
    }
    // Rounding left a sliver of mass; fall back to the most likely id.
    let best = dist
        .logps
        .iter()
        .enumerate()
        .fold(0, |b, (i, lp)| if *lp > dist.logps[b] { i } else { b });
    (dist.ids[best], dist.logps[best])
}

fn check_fits<F: Scalar>(params: &PolicyParams<F>, prompt_len: usize, budget: usize) -> Result<()> {
    if prompt_len == 0 {
        return Err(Error::EmptyPrompt);
    }
    if prompt_len + budget > params.config.max_context {
        return Err(Error::ContextOverflow {
            len: prompt_len + budget,
            max: params.config.max_context,
        });
    }
    Ok(())
}

thread_local! {
    static INVOCATIONS: std::cell::Cell<u64> = const { std::cell::Cell::new(0) };
}

/// Number of trajectories decoded on the calling thread so far.
pub fn invocations() -> u64 {
    INVOCATIONS.with(|c| c.get())
}

/// Continues decoding from an already prefilled prompt state.
pub fn sample_from_state<F: Scalar>(
    params: &PolicyParams<F>,
    prompt: &TokenSequence,
    mut state: DecodeState<F>,
    cfg: &SamplerConfig,
    rng: &mut Rng,
) -> Result<Trajectory<F>> {
    check_fits(params, prompt.len(), cfg.reasoning_budget)?;
    INVOCATIONS.with(|c| c.set(c.get() + 1));
    let keep_support = !cfg.is_greedy() && cfg.top_k < params.config.vocab_size;
    let mut reasoning = Vec::new();
    let mut old_logps = Vec::new();
    let mut supports = Vec::new();
    let mut stop_reason = StopReason::Budget;
    for _ in 0..cfg.reasoning_budget {
        let dist = restricted_distribution(state.last_logits.view(), cfg.temperature, cfg.top_k);
        let (token, logp) = draw(&dist, rng);
        if token == ANSWER_OPEN {
            stop_reason = StopReason::AnswerToken;
            break;
        }
        state.push(params, token)?;
        reasoning.push(token);
        old_logps.push(logp);
        if keep_support {
            supports.push(dist.ids);
        }
    }
    Ok(Trajectory {
        prompt: prompt.clone(),
        reasoning: TokenSequence(reasoning),
        old_logps,
        supports: keep_support.then_some(supports),
        temperature: if cfg.is_greedy() { 0.0 } else { cfg.temperature },
        final_hidden: state.last_hidden,
        target: None,
        reward: None,
        advantage: None,
        stop_reason,
    })
}

/// Samples one trajectory for prompt `x_u`.
pub fn sample_trajectory<F: Scalar>(
    old_params: &PolicyParams<F>,
    x_u: &TokenSequence,
    cfg: &SamplerConfig,
    rng: &mut Rng,
) -> Result<Trajectory<F>> {
    check_fits(old_params, x_u.len(), cfg.reasoning_budget)?;
    let state = DecodeState::prefill(old_params, x_u.as_slice(), None)?;
    sample_from_state(old_params, x_u, state, cfg, rng)
}

/// `cfg.group_size` trajectories; trajectory `i` consumes stream `[i]`
/// derived from `seed`, so the result does not depend on execution order.
pub fn sample_group<F: Scalar>(
    old_params: &PolicyParams<F>,
    x_u: &TokenSequence,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<Vec<Trajectory<F>>> {
    check_fits(old_params, x_u.len(), cfg.reasoning_budget)?;
    let state = DecodeState::prefill(old_params, x_u.as_slice(), None)?;
    sample_group_from_state(old_params, x_u, &state, cfg, seed)
}

pub fn sample_group_from_state<F: Scalar>(
    old_params: &PolicyParams<F>,
    x_u: &TokenSequence,
    state: &DecodeState<F>,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<Vec<Trajectory<F>>> {
    (0..cfg.group_size)
        .map(|i| {
            let mut rng = rng::stream(seed, &[i as u64]);
            sample_from_state(old_params, x_u, state.clone(), cfg, &mut rng)
        })
        .collect()
}

/// Argmax decoding with the same stop rule; deterministic.
pub fn greedy_reasoning<F: Scalar>(
    params: &PolicyParams<F>,
    x_u: &TokenSequence,
    budget: usize,
) -> Result<Trajectory<F>> {
    let mut rng = rng::stream(0, &[]);
    sample_trajectory(params, x_u, &SamplerConfig::greedy(budget), &mut rng)
}

/// Mean and percentiles of reasoning lengths.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub max: f64,
}

impl LengthStats {
    pub fn from_lengths(lengths: &[usize]) -> Self {
        if lengths.is_empty() {
            return Self::default();
        }
        let mut v: Vec<usize> = lengths.to_vec();
        v.sort_unstable();
        let pct = |q: f64| v[((q * (v.len() - 1) as f64).round() as usize).min(v.len() - 1)] as f64;
        LengthStats {
            mean: v.iter().sum::<usize>() as f64 / v.len() as f64,
            p50: pct(0.5),
            p90: pct(0.9),
            max: *v.last().unwrap() as f64,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, ModelConfig};
    use ndarray::array;

    fn tiny(std: f64) -> PolicyParams<f64> {
        let cfg = ModelConfig {
            layers: 1,
            heads: 2,
            width: 8,
            ff_width: 16,
            max_context: 40,
            init_std: std,
            ..ModelConfig::default()
        };
        PolicyParams::init(&cfg, 3).unwrap()
    }

    fn prompt() -> TokenSequence {
        TokenSequence(vec![10, 20, 30, 40])
    }

    #[test]
    fn top_k_prefers_lower_id_on_ties() {
        let z = array![1.0, 3.0, 3.0, 0.5, 3.0];
        assert_eq!(top_k_ids(z.view(), 2), vec![1, 2]);
        assert_eq!(top_k_ids(z.view(), 1), vec![1]);
        assert_eq!(top_k_ids(z.view(), 5), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn restricted_distribution_normalized() {
        let z = array![0.3, -1.0, 2.0, 0.1, 0.7, -0.2];
        for k in 1..=6 {
            for t in [0.5, 1.0, 1.5] {
                let d = restricted_distribution(z.view(), t, k);
                let total: f64 = d.logps.iter().map(|l| l.exp()).sum();
                assert!((total - 1.0).abs() < 1e-12);
                assert_eq!(d.ids.len(), k);
                for (&id, &lp) in d.ids.iter().zip(&d.logps) {
                    let direct = restricted_logp(z.view(), id, Some(&d.ids), if k == 1 { 0.0 } else { t });
                    assert!((direct - lp).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn restricted_gradient_matches_differences() {
        let z = array![0.3, -1.0, 2.0, 0.1, 0.7, -0.2];
        let ids = [0u32, 2, 4, 5];
        let g = restricted_logp_grad(z.view(), 4, Some(&ids), 1.3);
        for j in 0..z.len() {
            let mut up = z.clone();
            up[j] += 1e-6;
            let mut dn = z.clone();
            dn[j] -= 1e-6;
            let fd = (restricted_logp(up.view(), 4, Some(&ids), 1.3)
                - restricted_logp(dn.view(), 4, Some(&ids), 1.3))
                / 2e-6;
            assert!((fd - g[j]).abs() < 1e-8, "{j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn top_one_equals_greedy() {
        let p = tiny(0.5);
        let g = greedy_reasoning(&p, &prompt(), 6).unwrap();
        for t in [0.3, 1.0, 2.5] {
            let cfg = SamplerConfig {
                temperature: t,
                top_k: 1,
                group_size: 1,
                reasoning_budget: 6,
            };
            let mut rng = rng::stream(99, &[]);
            let s = sample_trajectory(&p, &prompt(), &cfg, &mut rng).unwrap();
            assert_eq!(s.reasoning, g.reasoning);
            assert_eq!(s.final_hidden, g.final_hidden);
        }
        assert_eq!(greedy_reasoning(&p, &prompt(), 6).unwrap(), g);
    }

    #[test]
    fn same_stream_same_trajectory() {
        let p = tiny(0.5);
        let cfg = SamplerConfig {
            top_k: 30,
            reasoning_budget: 8,
            ..SamplerConfig::default()
        };
        let a = sample_trajectory(&p, &prompt(), &cfg, &mut rng::stream(4, &[1])).unwrap();
        let b = sample_trajectory(&p, &prompt(), &cfg, &mut rng::stream(4, &[1])).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.old_logps.len(), a.reasoning.len());
        assert!(a.old_logps.iter().all(|&l| l <= 0.0));
    }

    #[test]
    fn group_of_one_matches_stream_zero() {
        let p = tiny(0.5);
        let cfg = SamplerConfig {
            group_size: 1,
            reasoning_budget: 8,
            ..SamplerConfig::default()
        };
        let g = sample_group(&p, &prompt(), &cfg, 17).unwrap();
        let s = sample_trajectory(&p, &prompt(), &cfg, &mut rng::stream(17, &[0])).unwrap();
        assert_eq!(g, vec![s]);
    }

    #[test]
    fn zero_temperature_collapses_group() {
        let p = tiny(0.5);
        let cfg = SamplerConfig {
            temperature: 0.0,
            top_k: 20,
            group_size: 4,
            reasoning_budget: 8,
        };
        let g = sample_group(&p, &prompt(), &cfg, 5).unwrap();
        assert!(g.windows(2).all(|w| w[0].reasoning == w[1].reasoning));
    }

    #[test]
    fn old_logps_match_full_recomputation() {
        let p = tiny(0.5);
        let cfg = SamplerConfig {
            top_k: 25,
            reasoning_budget: 10,
            ..SamplerConfig::default()
        };
        let t = sample_trajectory(&p, &prompt(), &cfg, &mut rng::stream(8, &[])).unwrap();
        let mut seq = prompt().0;
        seq.extend(&t.reasoning.0);
        let (hidden, logits) = forward(&p, &seq).unwrap();
        let n = prompt().len();
        for (i, (&tok, &old)) in t.reasoning.0.iter().zip(&t.old_logps).enumerate() {
            let lp = restricted_logp(logits.row(n + i - 1), tok, t.support(i), t.temperature);
            assert!((lp - old).abs() < 1e-6);
        }
        let last = hidden.row(seq.len() - 1);
        assert!(last.iter().zip(&t.final_hidden).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn budget_stop_when_answer_never_sampled() {
        let mut p = tiny(0.5);
        // Make ANSWER_OPEN impossible under argmax.
        p.lm_head.column_mut(ANSWER_OPEN as usize).fill(-100.0);
        p.lnf_bias.fill(0.0);
        let t = greedy_reasoning(&p, &prompt(), 5).unwrap();
        assert_eq!(t.stop_reason, StopReason::Budget);
        assert_eq!(t.len(), 5);
    }

    #[test]
    fn answer_token_stops_and_is_excluded() {
        let mut p = tiny(0.5);
        p.lm_head.fill(0.0);
        p.lm_head.column_mut(ANSWER_OPEN as usize).fill(0.0);
        p.lnf_gain.fill(0.0);
        p.lnf_bias.fill(1.0);
        p.lm_head.column_mut(ANSWER_OPEN as usize).fill(5.0);
        let t = greedy_reasoning(&p, &prompt(), 5).unwrap();
        assert_eq!(t.stop_reason, StopReason::AnswerToken);
        assert!(t.is_empty());
        assert!(t.old_logps.is_empty());
    }

    #[test]
    fn overflow_rejected() {
        let p = tiny(0.5);
        let cfg = SamplerConfig {
            reasoning_budget: 37,
            ..SamplerConfig::default()
        };
        assert!(matches!(
            sample_trajectory(&p, &prompt(), &cfg, &mut rng::stream(0, &[])),
            Err(Error::ContextOverflow { .. })
        ));
    }

    #[test]
    fn length_stats() {
        let s = LengthStats::from_lengths(&[4, 1, 3, 2, 10]);
        assert_eq!(s.mean, 4.0);
        assert_eq!(s.p50, 3.0);
        assert_eq!(s.max, 10.0);
    }
}
