//! The optimizer loop: per step, refresh the item table on schedule, sample
//! a batch, live-encode its targets, sample trajectory groups from the
//! current (old) policy, reward and normalize them, then ascend the clipped
//! objective for `inner_epochs` passes.

use std::time::Instant;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::config::{Ablation, TrainConfig};
use super::objective::{BatchItems, BatchTree, GradPaths, ObjectiveConfig, ObjectiveValue, UserGroup};
use super::optim::AdamW;
use crate::corpus::{Catalog, PromptBank, Splits, TokenSequence, UserHistory};
use crate::error::{Error, Result};
use crate::eval::{evaluate, refresh_item_embeddings, EvalConfig, EvalReport, RewardSettings};
use crate::model::{ItemEmbeddingTable, ModelConfig, PolicyParams};
use crate::reward::{advantages, trajectory_reward};
use crate::rng::{self, label};
use crate::sampler::{sample_group_from_state, SamplerConfig};
use crate::scalar::Scalar;

/// One line of the metrics log, appended after every optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub mean_train_reward: f64,
    pub mean_reasoning_length: f64,
    /// Minimized quantity: the negated objective, or the contrastive loss.
    pub loss: f64,
    pub grad_norm: f64,
    pub learning_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time_s: Option<f64>,
}

/// A validation pass, taken before the step with the same index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValRecord {
    pub step: usize,
    pub mean_fused_reward: f64,
    pub ndcg_at_5: f64,
    pub hit_rate_at_5: f64,
    pub mean_reasoning_length: f64,
}

impl ValRecord {
    fn from_report(step: usize, r: &EvalReport) -> Self {
        ValRecord {
            step,
            mean_fused_reward: r.mean_fused_reward,
            ndcg_at_5: r.ndcg.get(&5).copied().unwrap_or(f64::NAN),
            hit_rate_at_5: r.hit_rate.get(&5).copied().unwrap_or(f64::NAN),
            mean_reasoning_length: r.reasoning_length.mean,
        }
    }
}

/// Receives everything the loop produces. All methods default to no-ops.
pub trait TrainObserver<F: Scalar> {
    fn on_step(&mut self, _record: &StepRecord) -> Result<()> {
        Ok(())
    }
    fn on_validation(&mut self, _record: &ValRecord) -> Result<()> {
        Ok(())
    }
    /// `step` counts optimizer updates applied to `params`.
    fn on_checkpoint(&mut self, _step: usize, _params: &PolicyParams<F>, _cfg: &TrainConfig) -> Result<()> {
        Ok(())
    }
}

/// Discards everything.
pub struct NullObserver;

impl<F: Scalar> TrainObserver<F> for NullObserver {}

/// The full outcome of one optimizer step, for inspection in tests.
#[derive(Debug, Clone)]
pub struct StepOutcome<F: Scalar> {
    pub record: StepRecord,
    pub users: Vec<usize>,
    pub items: BatchItems,
    pub groups: Vec<UserGroup<F>>,
    /// The objective of each inner epoch; empty for contrastive training.
    pub epochs: Vec<ObjectiveValue>,
}

pub struct Trainer<F: Scalar = f32> {
    pub config: TrainConfig,
    pub sampler: SamplerConfig,
    pub params: PolicyParams<F>,
    pub table: ItemEmbeddingTable<F>,
    pub bank: PromptBank,
    pub catalog: Catalog,
    pub train_users: Vec<UserHistory>,
    pub val_users: Vec<UserHistory>,
    /// Validation reasoning budget (greedy).
    pub eval_budget: usize,
    /// Drops wall-clock fields from every record.
    pub strict: bool,
    train_prompts: Vec<TokenSequence>,
    optimizer: AdamW<F>,
    step: usize,
}

fn check_finite(step: usize, what: &str, value: f64, grad_norm: f64) -> Result<()> {
    if value.is_finite() && grad_norm.is_finite() {
        return Ok(());
    }
    let dump = serde_json::json!({
        "step": step,
        "quantity": what,
        "value": value.to_string(),
        "grad_norm": grad_norm.to_string(),
    });
    Err(Error::NonFinite(dump.to_string()))
}

impl<F: Scalar> Trainer<F> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: &ModelConfig,
        config: TrainConfig,
        sampler: SamplerConfig,
        catalog: &Catalog,
        splits: &Splits,
        category: &str,
        eval_budget: usize,
        strict: bool,
    ) -> Result<Self> {
        model.validate()?;
        config.validate()?;
        sampler.validate(model.vocab_size)?;
        if config.ablation != Ablation::NoReasoning && sampler.group_size < 2 {
            return Err(Error::config("sampler.group_size", "group-relative advantages need >= 2"));
        }
        if splits.train.is_empty() {
            return Err(Error::InvalidArgument("training split is empty".into()));
        }
        let params = PolicyParams::<f32>::init(model, rng::derive_seed(config.seed, &[label::INIT]))?.cast::<F>();
        let bank = PromptBank::new(&catalog.items, category)?;
        let train_prompts = splits
            .train
            .iter()
            .map(|u| bank.user_prompt(u, &catalog.items))
            .collect::<Result<Vec<_>>>()?;
        let budget = if config.ablation == Ablation::NoReasoning { 0 } else { sampler.reasoning_budget };
        if let Some(p) = train_prompts.iter().find(|p| p.len() + budget > model.max_context) {
            return Err(Error::ContextOverflow {
                len: p.len() + budget,
                max: model.max_context,
            });
        }
        let table = refresh_item_embeddings(&params, &bank, config.pooling, None)?;
        Ok(Trainer {
            optimizer: AdamW::new(&params, &config),
            config,
            sampler,
            params,
            table,
            bank,
            catalog: catalog.clone(),
            train_users: splits.train.clone(),
            val_users: splits.val.clone(),
            eval_budget,
            strict,
            train_prompts,
            step: 0,
        })
    }

    /// Optimizer steps taken so far.
    pub fn step_index(&self) -> usize {
        self.step
    }

    fn reward_settings(&self) -> RewardSettings {
        RewardSettings {
            ndcg_cutoff: self.config.ndcg_cutoff,
            beta: self.config.effective_beta(),
            tau_sim: self.config.tau_sim,
        }
    }

    fn objective_config(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            clip_epsilon: self.config.clip_epsilon,
            tau_sim: self.config.tau_sim,
            normalize_by_length: self.config.normalize_by_length,
        }
    }

    fn sample_batch(&self) -> Vec<usize> {
        let mut rng = rng::stream(self.config.seed, &[label::BATCH, self.step as u64]);
        let n = self.train_users.len();
        let mut users = index::sample(&mut rng, n, self.config.batch_size.min(n)).into_vec();
        users.sort_unstable();
        users
    }

    /// Validation over the configured subset, against a freshly refreshed
    /// table (the training table is left untouched).
    pub fn validate(&self) -> Result<EvalReport> {
        let table = refresh_item_embeddings(&self.params, &self.bank, self.config.pooling, None)?;
        let users = &self.val_users;
        let cfg = EvalConfig {
            ks: vec![5, 10, 20],
            reasoning_budget: if self.config.ablation == Ablation::NoReasoning { 0 } else { self.eval_budget },
            max_users: self.config.val_users,
            split: "val".into(),
        };
        evaluate(&self.params, &table, &self.bank, &self.catalog, users, &cfg, self.reward_settings(), true)
    }

    /// Applies `grads` (of a quantity to minimize) and returns the norm
    /// before clipping.
    fn apply(&mut self, mut grads: PolicyParams<F>) -> f64 {
        let norm = grads.l2_norm().f64();
        if let Some(max) = self.config.max_grad_norm {
            if norm > max {
                let scale = F::of(max / norm);
                for t in grads.tensors_mut() {
                    t.iter_mut().for_each(|x| *x *= scale);
                }
            }
        }
        self.optimizer.step(&mut self.params, &grads);
        norm
    }

    /// One optimizer step of Algorithm-style RecPO (or of the contrastive
    /// baseline under the `no_reasoning` ablation).
    pub fn step(&mut self) -> Result<StepOutcome<F>> {
        let start = Instant::now();
        if self.step.is_multiple_of(self.config.refresh_period) {
            self.table = refresh_item_embeddings(&self.params, &self.bank, self.config.pooling, Some(&self.table))?;
        }
        let users = self.sample_batch();
        let targets: Vec<usize> = users.iter().map(|&u| self.train_users[u].target).collect();
        let items = BatchItems::from_targets(&targets, &self.bank.item_prompts, self.bank.item_header.clone())?;
        let owned: Vec<TokenSequence> = users.iter().map(|&u| self.train_prompts[u].clone()).collect();
        let prompts: Vec<&TokenSequence> = owned.iter().collect();
        let lr = self.optimizer.current_lr();
        let tau = self.config.tau_sim;

        let mut tree = BatchTree::build(&self.params, &prompts, &self.bank.user_header, &items, self.config.pooling)?;
        for (j, &v) in items.ids.iter().enumerate() {
            self.table.set_row(v, tree.item_embeddings().row(j));
        }

        if self.config.ablation == Ablation::NoReasoning {
            let loss = tree.contrastive_loss_with_grad(&targets, &items, tau)?;
            let mut grads = self.params.zeros_like();
            tree.backward(&mut grads);
            let norm = grads.l2_norm().f64();
            check_finite(self.step, "contrastive_loss", loss, norm)?;
            self.apply(grads);
            return Ok(self.finish(start, users, items, Vec::new(), Vec::new(), loss, norm, lr, 0.0, 0.0));
        }

        let beta = self.config.effective_beta();
        let mut groups = Vec::with_capacity(users.len());
        for (b, &target) in targets.iter().enumerate() {
            let state = tree.decode_state(b);
            let seed = rng::derive_seed(self.config.seed, &[label::SAMPLE, self.step as u64, b as u64]);
            let mut trajectories = sample_group_from_state(&self.params, prompts[b], &state, &self.sampler, seed)?;
            let mut rewards = Vec::with_capacity(trajectories.len());
            for tr in &mut trajectories {
                let r = trajectory_reward(tr.final_hidden.view(), &self.table, target, self.config.ndcg_cutoff, beta, tau)?;
                rewards.push(r.fused);
                tr.target = Some(target);
                tr.reward = Some(r);
            }
            let adv = advantages(&rewards, self.config.estimator)?;
            for (tr, &a) in trajectories.iter_mut().zip(&adv.advantages) {
                tr.advantage = Some(a);
            }
            groups.push(UserGroup {
                target,
                old_rec_logps: vec![0.0; trajectories.len()],
                trajectories,
                advantages: adv,
            });
        }
        tree.attach(&groups)?;
        // The first epoch runs under the sampling parameters, so the old
        // log-probabilities are read off the same forward pass.
        let fresh = tree.log_probs(&groups, &items, tau)?;
        for (g, lps) in groups.iter_mut().zip(fresh) {
            for ((tr, old_rec), lp) in g.trajectories.iter_mut().zip(g.old_rec_logps.iter_mut()).zip(lps) {
                tr.old_logps = lp.tokens;
                *old_rec = lp.rec;
            }
        }

        let cfg = self.objective_config();
        let mut epochs = Vec::with_capacity(self.config.inner_epochs);
        let (value, grads) = ascent_direction(tree, &groups, &items, &cfg, self.params.zeros_like())?;
        let loss = -value.value;
        let first_norm = grads.l2_norm().f64();
        check_finite(self.step, "recpo_objective", value.value, first_norm)?;
        epochs.push(value);
        self.apply(grads);
        for _ in 1..self.config.inner_epochs {
            let mut t = BatchTree::build(&self.params, &prompts, &self.bank.user_header, &items, self.config.pooling)?;
            t.attach(&groups)?;
            let (value, grads) = ascent_direction(t, &groups, &items, &cfg, self.params.zeros_like())?;
            check_finite(self.step, "recpo_objective", value.value, grads.l2_norm().f64())?;
            epochs.push(value);
            self.apply(grads);
        }
        let n_traj: usize = groups.iter().map(|g| g.trajectories.len()).sum();
        let mean_reward = groups
            .iter()
            .flat_map(|g| g.advantages.rewards.iter())
            .sum::<f64>()
            / n_traj as f64;
        let mean_len = groups
            .iter()
            .flat_map(|g| g.trajectories.iter().map(|t| t.len()))
            .sum::<usize>() as f64
            / n_traj as f64;
        Ok(self.finish(start, users, items, groups, epochs, loss, first_norm, lr, mean_reward, mean_len))
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &mut self,
        start: Instant,
        users: Vec<usize>,
        items: BatchItems,
        groups: Vec<UserGroup<F>>,
        epochs: Vec<ObjectiveValue>,
        loss: f64,
        grad_norm: f64,
        learning_rate: f64,
        mean_train_reward: f64,
        mean_reasoning_length: f64,
    ) -> StepOutcome<F> {
        let record = StepRecord {
            step: self.step,
            mean_train_reward,
            mean_reasoning_length,
            loss,
            grad_norm,
            learning_rate,
            wall_time_s: (!self.strict).then(|| start.elapsed().as_secs_f64()),
        };
        self.step += 1;
        StepOutcome {
            record,
            users,
            items,
            groups,
            epochs,
        }
    }

    /// Runs the remaining steps up to `total_steps`, validating and
    /// checkpointing on schedule (including before the first and after the
    /// last step).
    pub fn run(&mut self, observer: &mut dyn TrainObserver<F>) -> Result<()> {
        let total = self.config.total_steps;
        let has_val = !self.val_users.is_empty();
        if self.step == 0 {
            observer.on_checkpoint(0, &self.params, &self.config)?;
            if has_val && self.config.val_every > 0 {
                observer.on_validation(&ValRecord::from_report(0, &self.validate()?))?;
            }
        }
        while self.step < total {
            let outcome = self.step()?;
            observer.on_step(&outcome.record)?;
            let done = self.step;
            let last = done == total;
            if has_val && self.config.val_every > 0 && (done.is_multiple_of(self.config.val_every) || last) {
                observer.on_validation(&ValRecord::from_report(done, &self.validate()?))?;
            }
            if last || (self.config.checkpoint_every > 0 && done.is_multiple_of(self.config.checkpoint_every)) {
                observer.on_checkpoint(done, &self.params, &self.config)?;
            }
        }
        Ok(())
    }
}

/// Objective value and the descent direction of its negation.
fn ascent_direction<F: Scalar>(
    mut tree: BatchTree<'_, F>,
    groups: &[UserGroup<F>],
    items: &BatchItems,
    cfg: &ObjectiveConfig,
    mut grads: PolicyParams<F>,
) -> Result<(ObjectiveValue, PolicyParams<F>)> {
    let value = tree.objective_with_grad(groups, items, cfg, GradPaths::FULL)?;
    tree.backward(&mut grads);
    for g in grads.tensors_mut() {
        g.iter_mut().for_each(|x| *x = -*x);
    }
    Ok((value, grads))
}

/// Builds a trainer and runs it to completion.
#[allow(clippy::too_many_arguments)]
pub fn train<F: Scalar>(
    model: &ModelConfig,
    config: &TrainConfig,
    sampler: &SamplerConfig,
    catalog: &Catalog,
    splits: &Splits,
    category: &str,
    eval_budget: usize,
    strict: bool,
    observer: &mut dyn TrainObserver<F>,
) -> Result<Trainer<F>> {
    let mut trainer = Trainer::new(model, config.clone(), sampler.clone(), catalog, splits, category, eval_budget, strict)?;
    trainer.run(observer)?;
    Ok(trainer)
}
