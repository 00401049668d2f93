//! The clipped joint reasoning-and-recommendation objective, the in-batch
//! contrastive loss, and their analytic gradients.
//!
//! Everything is evaluated on one [`BatchTree`]: user prompts, reasoning
//! continuations and the batch's ground-truth item prompts are forwarded as
//! prefix-sharing segments, so the gradient reaches the parameters both
//! through the final hidden state `h_T` and through the live item encodings.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::corpus::TokenSequence;
use crate::error::{Error, Result};
use crate::model::{DecodeState, NodeId, Pooling, PolicyParams, SegmentTree};
use crate::reward::AdvantageGroup;
use crate::sampler::{restricted_logp, restricted_logp_grad, Trajectory};
use crate::scalar::Scalar;

/// `min(r A, clip(r, 1 - eps, 1 + eps) A)`.
pub fn clipped_term(r: f64, a: f64, eps: f64) -> f64 {
    (r * a).min(r.clamp(1.0 - eps, 1.0 + eps) * a)
}

/// Derivative of [`clipped_term`] with respect to `r`: `A` where the
/// unclipped branch is selected, `0` where the clipped constant is.
pub fn clipped_term_slope(r: f64, a: f64, eps: f64) -> f64 {
    if r * a <= r.clamp(1.0 - eps, 1.0 + eps) * a {
        a
    } else {
        0.0
    }
}

/// Log-softmax of `scores / tau` at index `target`, max-stabilized, and the
/// softmax probabilities.
fn log_softmax_at(scores: &[f64], target: usize, tau: f64) -> (f64, Vec<f64>) {
    let z: Vec<f64> = scores.iter().map(|s| s / tau).collect();
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = z.iter().map(|x| (x - max).exp()).sum();
    let probs = z.iter().map(|x| (x - max).exp() / total).collect();
    (z[target] - max - total.ln(), probs)
}

/// `log softmax_B(<h, e_v> / tau)` at row `target` of `batch_embeddings`.
pub fn in_batch_log_prob<F: Scalar>(
    h: ArrayView1<F>,
    batch_embeddings: ArrayView2<F>,
    target: usize,
    tau: f64,
) -> Result<f64> {
    if h.len() != batch_embeddings.ncols() {
        return Err(Error::DimensionMismatch {
            expected: batch_embeddings.ncols(),
            actual: h.len(),
        });
    }
    if target >= batch_embeddings.nrows() {
        return Err(Error::TargetNotInBatch(target));
    }
    let scores: Vec<f64> = batch_embeddings.rows().into_iter().map(|e| e.dot(&h).f64()).collect();
    Ok(log_softmax_at(&scores, target, tau).0)
}

/// The deduplicated ground-truth items of one batch (the in-batch set B),
/// in first-appearance order, with their prompts.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchItems {
    pub ids: Vec<usize>,
    pub prompts: Vec<TokenSequence>,
    /// Prefix shared by the item prompts; forwarded once per tree.
    pub header: TokenSequence,
}

impl BatchItems {
    /// `item_prompts` is indexed by catalog item id.
    pub fn from_targets(
        targets: &[usize],
        item_prompts: &[TokenSequence],
        header: TokenSequence,
    ) -> Result<Self> {
        let mut ids = Vec::new();
        for &t in targets {
            if t >= item_prompts.len() {
                return Err(Error::InvalidArgument(format!(
                    "target {t} outside catalog of {} items",
                    item_prompts.len()
                )));
            }
            if !ids.contains(&t) {
                ids.push(t);
            }
        }
        let prompts = ids.iter().map(|&t| item_prompts[t].clone()).collect();
        Ok(BatchItems { ids, prompts, header })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn position(&self, item: usize) -> Result<usize> {
        self.ids
            .iter()
            .position(|&v| v == item)
            .ok_or(Error::TargetNotInBatch(item))
    }
}

/// One user's sampled group with everything the objective needs.
#[derive(Debug, Clone, PartialEq)]
pub struct UserGroup<F = f32> {
    pub target: usize,
    pub trajectories: Vec<Trajectory<F>>,
    pub advantages: AdvantageGroup,
    /// In-batch recommendation log-probability of the target under the
    /// sampling policy and its item encodings, per trajectory.
    pub old_rec_logps: Vec<f64>,
}

impl<F: Scalar> UserGroup<F> {
    pub fn prompt(&self) -> &TokenSequence {
        &self.trajectories[0].prompt
    }

    fn check(&self) -> Result<()> {
        let g = self.trajectories.len();
        if g == 0 {
            return Err(Error::InvalidArgument("empty trajectory group".into()));
        }
        if self.advantages.advantages.len() != g || self.old_rec_logps.len() != g {
            return Err(Error::InvalidArgument(format!(
                "group of {g} trajectories has {} advantages and {} old recommendation log-probabilities",
                self.advantages.advantages.len(),
                self.old_rec_logps.len()
            )));
        }
        for tr in &self.trajectories {
            check_old_logps(tr)?;
            if tr.prompt != *self.prompt() {
                return Err(Error::InvalidArgument("trajectories of a group must share the prompt".into()));
            }
        }
        Ok(())
    }
}

fn check_old_logps<F: Scalar>(tr: &Trajectory<F>) -> Result<()> {
    if tr.old_logps.len() != tr.reasoning.len() {
        return Err(Error::InvalidArgument(format!(
            "trajectory has {} reasoning tokens but {} old log-probabilities",
            tr.reasoning.len(),
            tr.old_logps.len()
        )));
    }
    if let Some(s) = &tr.supports {
        if s.len() != tr.reasoning.len() {
            return Err(Error::InvalidArgument("support list length differs from reasoning length".into()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub clip_epsilon: f64,
    pub tau_sim: f64,
    pub normalize_by_length: bool,
}

/// Which gradient paths to propagate. The total gradient is the sum of the
/// policy path (token terms and the recommendation term through `h_T`) and
/// the item path (the recommendation term through live item encodings).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradPaths {
    pub policy: bool,
    pub items: bool,
}

impl GradPaths {
    pub const FULL: GradPaths = GradPaths {
        policy: true,
        items: true,
    };
    pub const POLICY: GradPaths = GradPaths {
        policy: true,
        items: false,
    };
    pub const ITEMS: GradPaths = GradPaths {
        policy: false,
        items: true,
    };
}

/// The value of a batch objective together with the ratios it evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue {
    pub value: f64,
    /// Every ratio fed to a clipped term: token ratios, then the
    /// recommendation ratio, per trajectory.
    pub ratios: Vec<f64>,
    /// Number of clipped terms whose clipped branch was selected.
    pub clipped: usize,
    /// Number of recommendation terms evaluated.
    pub rec_terms: usize,
}

/// Log-probabilities of a trajectory under the policy a tree was built with.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLogProbs {
    pub tokens: Vec<f64>,
    pub rec: f64,
}

/// How the surrogate treats each log-probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Form {
    /// Clipped ratio terms.
    Clipped,
    /// `A * log pi`, the plain advantage-weighted policy gradient.
    LogProb,
}

/// User prompts, their trajectories and the batch items as one forest.
pub struct BatchTree<'p, F: Scalar> {
    tree: SegmentTree<'p, F>,
    pooling: Pooling,
    user_nodes: Vec<NodeId>,
    item_nodes: Vec<NodeId>,
    item_embeddings: Array2<F>,
    traj_nodes: Vec<Vec<Option<NodeId>>>,
}

struct Prefixed<'a> {
    header: &'a [u32],
    node: Option<NodeId>,
}

impl<'a> Prefixed<'a> {
    fn new(header: &'a [u32]) -> Self {
        Prefixed { header, node: None }
    }

    fn push<F: Scalar>(&mut self, tree: &mut SegmentTree<'_, F>, tokens: &[u32]) -> Result<NodeId> {
        if tokens.is_empty() {
            return Err(Error::EmptyPrompt);
        }
        if !self.header.is_empty() && tokens.len() > self.header.len() && tokens.starts_with(self.header) {
            let h = match self.node {
                Some(h) => h,
                None => {
                    let h = tree.push(None, self.header)?;
                    self.node = Some(h);
                    h
                }
            };
            tree.push(Some(h), &tokens[self.header.len()..])
        } else {
            tree.push(None, tokens)
        }
    }
}

impl<'p, F: Scalar> BatchTree<'p, F> {
    /// Forwards every user prompt (sharing `user_header`) and every batch
    /// item prompt (sharing `items.header`), and pools the item encodings.
    pub fn build(
        params: &'p PolicyParams<F>,
        prompts: &[&TokenSequence],
        user_header: &TokenSequence,
        items: &BatchItems,
        pooling: Pooling,
    ) -> Result<Self> {
        let mut tree = SegmentTree::new(params);
        let mut users = Prefixed::new(user_header.as_slice());
        let user_nodes = prompts
            .iter()
            .map(|p| users.push(&mut tree, p.as_slice()))
            .collect::<Result<Vec<_>>>()?;
        let mut item_prefix = Prefixed::new(items.header.as_slice());
        let item_nodes = items
            .prompts
            .iter()
            .map(|p| item_prefix.push(&mut tree, p.as_slice()))
            .collect::<Result<Vec<_>>>()?;
        let mut item_embeddings = Array2::zeros((items.len(), params.config.width));
        for (j, &n) in item_nodes.iter().enumerate() {
            item_embeddings.row_mut(j).assign(&tree.pooled(n, pooling));
        }
        Ok(BatchTree {
            tree,
            pooling,
            traj_nodes: vec![Vec::new(); user_nodes.len()],
            user_nodes,
            item_nodes,
            item_embeddings,
        })
    }

    /// Live encodings of the batch items, one row per item of B.
    pub fn item_embeddings(&self) -> ArrayView2<'_, F> {
        self.item_embeddings.view()
    }

    /// Decoding state positioned after user `u`'s prompt.
    pub fn decode_state(&self, u: usize) -> DecodeState<F> {
        self.tree
            .decode_state(self.user_nodes[u])
            .expect("user prompts are non-empty")
    }

    /// Hidden state at the last prompt position of user `u`.
    pub fn user_hidden(&self, u: usize) -> Array1<F> {
        let (n, r) = self.tree.last_position(self.user_nodes[u]).expect("non-empty prompt");
        self.tree.hidden_row(n, r).to_owned()
    }

    /// Forwards every trajectory of every group as a continuation of its
    /// user's prompt node.
    pub fn attach(&mut self, groups: &[UserGroup<F>]) -> Result<()> {
        if groups.len() != self.user_nodes.len() {
            return Err(Error::InvalidArgument(format!(
                "{} groups for {} user prompts",
                groups.len(),
                self.user_nodes.len()
            )));
        }
        for (u, g) in groups.iter().enumerate() {
            let nodes = g
                .trajectories
                .iter()
                .map(|tr| {
                    if tr.reasoning.is_empty() {
                        Ok(None)
                    } else {
                        self.tree
                            .push(Some(self.user_nodes[u]), tr.reasoning.as_slice())
                            .map(Some)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            self.traj_nodes[u] = nodes;
        }
        Ok(())
    }

    /// Node and row whose logits predict reasoning token `t` of trajectory
    /// `(u, i)`.
    fn predictor(&self, u: usize, i: usize, t: usize) -> (NodeId, usize) {
        if t == 0 {
            self.tree.last_position(self.user_nodes[u]).expect("non-empty prompt")
        } else {
            (self.traj_nodes[u][i].expect("non-empty reasoning"), t - 1)
        }
    }

    /// Node and row of the final hidden state `h_T` of trajectory `(u, i)`.
    fn final_position(&self, u: usize, i: usize) -> (NodeId, usize) {
        let end = self.traj_nodes[u][i].unwrap_or(self.user_nodes[u]);
        self.tree.last_position(end).expect("non-empty prompt")
    }

    fn rec_scores(&self, h: ArrayView1<F>) -> Vec<f64> {
        self.item_embeddings.rows().into_iter().map(|e| e.dot(&h).f64()).collect()
    }

    /// Token and recommendation log-probabilities of every attached
    /// trajectory under the tree's parameters.
    pub fn log_probs(&self, groups: &[UserGroup<F>], items: &BatchItems, tau: f64) -> Result<Vec<Vec<TrajectoryLogProbs>>> {
        self.check_attached(groups)?;
        groups
            .iter()
            .enumerate()
            .map(|(u, g)| {
                let target = items.position(g.target)?;
                Ok(g.trajectories
                    .iter()
                    .enumerate()
                    .map(|(i, tr)| {
                        let tokens = (0..tr.len())
                            .map(|t| {
                                let (n, r) = self.predictor(u, i, t);
                                restricted_logp(self.tree.logits_row(n, r), tr.reasoning.0[t], tr.support(t), tr.temperature)
                            })
                            .collect();
                        let (n, r) = self.final_position(u, i);
                        let scores = self.rec_scores(self.tree.hidden_row(n, r));
                        TrajectoryLogProbs {
                            tokens,
                            rec: log_softmax_at(&scores, target, tau).0,
                        }
                    })
                    .collect())
            })
            .collect()
    }

    fn check_attached(&self, groups: &[UserGroup<F>]) -> Result<()> {
        let ok = groups.len() == self.traj_nodes.len()
            && groups
                .iter()
                .zip(&self.traj_nodes)
                .all(|(g, n)| g.trajectories.len() == n.len());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("trajectories are not attached to the batch tree".into()))
        }
    }

    fn surrogate(
        &mut self,
        groups: &[UserGroup<F>],
        items: &BatchItems,
        cfg: &ObjectiveConfig,
        form: Form,
        paths: Option<GradPaths>,
    ) -> Result<ObjectiveValue> {
        self.check_attached(groups)?;
        for g in groups {
            g.check()?;
        }
        let eps = cfg.clip_epsilon;
        let users = groups.len() as f64;
        let d = self.item_embeddings.ncols();
        let mut d_items = Array2::<f64>::zeros(self.item_embeddings.dim());
        let mut out = ObjectiveValue {
            value: 0.0,
            ratios: Vec::new(),
            clipped: 0,
            rec_terms: 0,
        };
        // Value and slope of one term, as a function of (new - old) log-prob.
        let term = |delta: f64, lp: f64, a: f64, out: &mut ObjectiveValue| -> (f64, f64) {
            match form {
                Form::Clipped => {
                    let r = delta.exp();
                    out.ratios.push(r);
                    let slope = clipped_term_slope(r, a, eps);
                    if slope == 0.0 && a != 0.0 {
                        out.clipped += 1;
                    }
                    (clipped_term(r, a, eps), slope * r)
                }
                Form::LogProb => (a * lp, a),
            }
        };
        for (u, g) in groups.iter().enumerate() {
            let target = items.position(g.target)?;
            let group = g.trajectories.len() as f64;
            let i_star = g.advantages.i_star;
            for (i, tr) in g.trajectories.iter().enumerate() {
                let a = g.advantages.advantages[i];
                let w = 1.0 / (group * users);
                let token_w = if cfg.normalize_by_length && !tr.is_empty() {
                    w / tr.len() as f64
                } else {
                    w
                };
                for t in 0..tr.len() {
                    let (n, r) = self.predictor(u, i, t);
                    let logits = self.tree.logits_row(n, r);
                    let token = tr.reasoning.0[t];
                    let lp = restricted_logp(logits, token, tr.support(t), tr.temperature);
                    let (v, slope) = term(lp - tr.old_logps[t], lp, a, &mut out);
                    out.value += token_w * v;
                    if paths.is_some_and(|p| p.policy) && slope != 0.0 {
                        let grad = restricted_logp_grad(logits, token, tr.support(t), tr.temperature);
                        let scaled = grad.mapv(|x| x * F::of(token_w * slope));
                        self.tree.add_d_logits(n, r, scaled.view());
                    }
                }
                if i != i_star {
                    continue;
                }
                out.rec_terms += 1;
                let (n, r) = self.final_position(u, i);
                let h = self.tree.hidden_row(n, r).to_owned();
                let scores = self.rec_scores(h.view());
                let (lp, probs) = log_softmax_at(&scores, target, cfg.tau_sim);
                let (v, slope) = term(lp - g.old_rec_logps[i], lp, a, &mut out);
                out.value += w * v;
                let Some(paths) = paths else { continue };
                let c = w * slope / cfg.tau_sim;
                if c == 0.0 {
                    continue;
                }
                if paths.policy {
                    // d log pi / d h = (e_target - sum_v p_v e_v) / tau
                    let mut dh = Array1::<F>::zeros(d);
                    for (j, e) in self.item_embeddings.rows().into_iter().enumerate() {
                        let coef = if j == target { 1.0 - probs[j] } else { -probs[j] };
                        dh.scaled_add(F::of(c * coef), &e);
                    }
                    self.tree.add_d_hidden(n, r, dh.view());
                }
                if paths.items {
                    let hf = h.mapv(|x| x.f64());
                    for j in 0..probs.len() {
                        let coef = if j == target { 1.0 - probs[j] } else { -probs[j] };
                        d_items.row_mut(j).scaled_add(c * coef, &hf);
                    }
                }
            }
        }
        if paths.is_some_and(|p| p.items) {
            self.push_item_grads(&d_items);
        }
        Ok(out)
    }

    fn push_item_grads(&mut self, d_items: &Array2<f64>) {
        for (j, &n) in self.item_nodes.iter().enumerate() {
            let row = d_items.row(j);
            if row.iter().any(|&x| x != 0.0) {
                let g = row.mapv(F::of);
                self.tree.add_d_pooled(n, self.pooling, g.view());
            }
        }
    }

    /// Mean over users of the clipped joint objective (to be maximized).
    pub fn objective(&mut self, groups: &[UserGroup<F>], items: &BatchItems, cfg: &ObjectiveConfig) -> Result<ObjectiveValue> {
        self.surrogate(groups, items, cfg, Form::Clipped, None)
    }

    /// Like [`BatchTree::objective`], recording upstream gradients along
    /// `paths`; call [`BatchTree::backward`] to obtain parameter gradients.
    pub fn objective_with_grad(
        &mut self,
        groups: &[UserGroup<F>],
        items: &BatchItems,
        cfg: &ObjectiveConfig,
        paths: GradPaths,
    ) -> Result<ObjectiveValue> {
        self.surrogate(groups, items, cfg, Form::Clipped, Some(paths))
    }

    /// The same batch average with every clipped term replaced by
    /// `A * log pi`, whose gradient is the advantage-weighted policy gradient.
    pub fn log_prob_surrogate_with_grad(
        &mut self,
        groups: &[UserGroup<F>],
        items: &BatchItems,
        cfg: &ObjectiveConfig,
    ) -> Result<ObjectiveValue> {
        self.surrogate(groups, items, cfg, Form::LogProb, Some(GradPaths::FULL))
    }

    /// Mean in-batch contrastive loss of the users' prompt-final hidden
    /// states against the batch items (to be minimized).
    fn contrastive(&mut self, targets: &[usize], items: &BatchItems, tau: f64, grad: bool) -> Result<f64> {
        if targets.len() != self.user_nodes.len() {
            return Err(Error::InvalidArgument(format!(
                "{} targets for {} user prompts",
                targets.len(),
                self.user_nodes.len()
            )));
        }
        let users = targets.len() as f64;
        let d = self.item_embeddings.ncols();
        let mut d_items = Array2::<f64>::zeros(self.item_embeddings.dim());
        let mut loss = 0.0;
        for (u, &item) in targets.iter().enumerate() {
            let target = items.position(item)?;
            let (n, r) = self.tree.last_position(self.user_nodes[u]).expect("non-empty prompt");
            let h = self.tree.hidden_row(n, r).to_owned();
            let (lp, probs) = log_softmax_at(&self.rec_scores(h.view()), target, tau);
            loss -= lp / users;
            if !grad {
                continue;
            }
            let c = -1.0 / (users * tau);
            let hf = h.mapv(|x| x.f64());
            let mut dh = Array1::<F>::zeros(d);
            for (j, e) in self.item_embeddings.rows().into_iter().enumerate() {
                let coef = if j == target { 1.0 - probs[j] } else { -probs[j] };
                dh.scaled_add(F::of(c * coef), &e);
                d_items.row_mut(j).scaled_add(c * coef, &hf);
            }
            self.tree.add_d_hidden(n, r, dh.view());
        }
        if grad {
            self.push_item_grads(&d_items);
        }
        Ok(loss)
    }

    pub fn contrastive_loss(&mut self, targets: &[usize], items: &BatchItems, tau: f64) -> Result<f64> {
        self.contrastive(targets, items, tau, false)
    }

    pub fn contrastive_loss_with_grad(&mut self, targets: &[usize], items: &BatchItems, tau: f64) -> Result<f64> {
        self.contrastive(targets, items, tau, true)
    }

    /// Accumulates the parameter gradients of everything recorded so far.
    pub fn backward(self, grads: &mut PolicyParams<F>) {
        self.tree.backward(grads)
    }
}

/// Per-token ratios `exp(new_logp - old_logp)` of a trajectory's reasoning
/// tokens under `params`, over the distribution each token was drawn from.
pub fn token_ratios<F: Scalar>(params: &PolicyParams<F>, trajectory: &Trajectory<F>) -> Result<Vec<f64>> {
    check_old_logps(trajectory)?;
    if trajectory.is_empty() {
        return Ok(Vec::new());
    }
    let mut tokens = trajectory.prompt.0.clone();
    tokens.extend_from_slice(trajectory.reasoning.as_slice());
    let (_, logits) = crate::model::forward(params, &tokens)?;
    let p = trajectory.prompt.len();
    Ok((0..trajectory.len())
        .map(|t| {
            let lp = restricted_logp(
                logits.row(p + t - 1),
                trajectory.reasoning.0[t],
                trajectory.support(t),
                trajectory.temperature,
            );
            (lp - trajectory.old_logps[t]).exp()
        })
        .collect())
}

/// `log pi(target | h)` under the in-batch softmax, with the batch items
/// encoded live under `params`.
pub fn rec_log_prob<F: Scalar>(
    params: &PolicyParams<F>,
    h: ArrayView1<F>,
    items: &BatchItems,
    target: usize,
    tau: f64,
    pooling: Pooling,
) -> Result<f64> {
    let pos = items.position(target)?;
    let tree = BatchTree::build(params, &[], &TokenSequence::default(), items, pooling)?;
    in_batch_log_prob(h, tree.item_embeddings(), pos, tau)
}

fn prompts_of<F: Scalar>(groups: &[UserGroup<F>]) -> Result<Vec<&TokenSequence>> {
    groups
        .iter()
        .map(|g| {
            g.trajectories
                .first()
                .map(|t| &t.prompt)
                .ok_or_else(|| Error::InvalidArgument("empty trajectory group".into()))
        })
        .collect()
}

/// The clipped joint objective averaged over the batch's users.
pub fn recpo_objective<F: Scalar>(
    params: &PolicyParams<F>,
    groups: &[UserGroup<F>],
    items: &BatchItems,
    user_header: &TokenSequence,
    cfg: &ObjectiveConfig,
    pooling: Pooling,
) -> Result<ObjectiveValue> {
    let prompts = prompts_of(groups)?;
    let mut tree = BatchTree::build(params, &prompts, user_header, items, pooling)?;
    tree.attach(groups)?;
    tree.objective(groups, items, cfg)
}

/// [`recpo_objective`] and its gradient along `paths`.
pub fn recpo_objective_grad<F: Scalar>(
    params: &PolicyParams<F>,
    groups: &[UserGroup<F>],
    items: &BatchItems,
    user_header: &TokenSequence,
    cfg: &ObjectiveConfig,
    pooling: Pooling,
    paths: GradPaths,
) -> Result<(ObjectiveValue, PolicyParams<F>)> {
    let prompts = prompts_of(groups)?;
    let mut tree = BatchTree::build(params, &prompts, user_header, items, pooling)?;
    tree.attach(groups)?;
    let value = tree.objective_with_grad(groups, items, cfg, paths)?;
    let mut grads = params.zeros_like();
    tree.backward(&mut grads);
    Ok((value, grads))
}

/// Mean in-batch contrastive loss of `(prompt, target)` pairs.
pub fn contrastive_loss<F: Scalar>(
    params: &PolicyParams<F>,
    prompts: &[&TokenSequence],
    targets: &[usize],
    items: &BatchItems,
    user_header: &TokenSequence,
    tau: f64,
    pooling: Pooling,
) -> Result<f64> {
    let mut tree = BatchTree::build(params, prompts, user_header, items, pooling)?;
    tree.contrastive_loss(targets, items, tau)
}

/// [`contrastive_loss`] and its gradient.
pub fn contrastive_loss_grad<F: Scalar>(
    params: &PolicyParams<F>,
    prompts: &[&TokenSequence],
    targets: &[usize],
    items: &BatchItems,
    user_header: &TokenSequence,
    tau: f64,
    pooling: Pooling,
) -> Result<(f64, PolicyParams<F>)> {
    let mut tree = BatchTree::build(params, prompts, user_header, items, pooling)?;
    let loss = tree.contrastive_loss_with_grad(targets, items, tau)?;
    let mut grads = params.zeros_like();
    tree.backward(&mut grads);
    Ok((loss, grads))
}
