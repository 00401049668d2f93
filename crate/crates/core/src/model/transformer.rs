//! Pre-norm decoder-only transformer with a hand-derived backward pass.
//!
//! The unit of computation is a *segment*: a run of tokens that continues a
//! context whose keys and values are already known. A whole prompt is one
//! segment with an empty context; a reasoning continuation is a segment whose
//! context is the prompt. The backward pass of a segment returns the gradient
//! with respect to its context keys/values so that shared prefixes receive
//! the summed gradient of every continuation.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, Zip};

use super::params::PolicyParams;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const LN_EPS: f64 = 1e-5;

/// Per-layer keys and values, one row per position.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCache<F> {
    pub layers: Vec<(Array2<F>, Array2<F>)>,
}

impl<F: Scalar> KvCache<F> {
    pub fn empty(layers: usize, width: usize) -> Self {
        KvCache {
            layers: (0..layers)
                .map(|_| (Array2::zeros((0, width)), Array2::zeros((0, width))))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, |(k, _)| k.nrows())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn zeros_like(&self) -> Self {
        KvCache {
            layers: self
                .layers
                .iter()
                .map(|(k, v)| (Array2::zeros(k.raw_dim()), Array2::zeros(v.raw_dim())))
                .collect(),
        }
    }

    fn add_assign(&mut self, other: &Self) {
        for ((k, v), (ok, ov)) in self.layers.iter_mut().zip(&other.layers) {
            *k += ok;
            *v += ov;
        }
    }
}

/// Gradient with respect to a [`KvCache`].
pub type KvGrad<F> = KvCache<F>;

#[derive(Debug, Clone)]
struct LnCache<F> {
    xhat: Array2<F>,
    rstd: Array1<F>,
}

#[derive(Debug, Clone)]
struct LayerCache<F> {
    ln1: LnCache<F>,
    a: Array2<F>,
    q: Array2<F>,
    probs: Vec<Array2<F>>,
    y: Array2<F>,
    ln2: LnCache<F>,
    m: Array2<F>,
    pre: Array2<F>,
    act: Array2<F>,
}

/// Everything one segment's forward pass needs to keep for its backward.
#[derive(Debug, Clone)]
pub struct SegmentCache<F> {
    pub tokens: Vec<u32>,
    /// Context length, i.e. the absolute position of the first token.
    pub start: usize,
    layers: Vec<LayerCache<F>>,
    lnf: LnCache<F>,
    /// Final (post-norm) hidden states, one row per token.
    pub hidden: Array2<F>,
    /// Language-model logits; row `t` scores the token at position `t + 1`.
    pub logits: Array2<F>,
    /// Context plus this segment's own keys and values.
    pub kv: KvCache<F>,
}

impl<F: Scalar> SegmentCache<F> {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn layernorm<F: Scalar>(x: &Array2<F>, gain: &Array1<F>, bias: &Array1<F>) -> (Array2<F>, LnCache<F>) {
    let d = F::of(x.ncols() as f64);
    let eps = F::of(LN_EPS);
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| *v * *v).sum::<F>() / d;
        *r = F::one() / (var + eps).sqrt();
        let rr = *r;
        row.mapv_inplace(|v| v * rr);
    }
    let out = &xhat * gain + bias;
    (out, LnCache { xhat, rstd })
}

fn layernorm_backward<F: Scalar>(
    dy: &Array2<F>,
    cache: &LnCache<F>,
    gain: &Array1<F>,
    dgain: &mut Array1<F>,
    dbias: &mut Array1<F>,
) -> Array2<F> {
    *dgain += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbias += &dy.sum_axis(Axis(0));
    let d = F::of(dy.ncols() as f64);
    let mut dx = dy * gain;
    for ((mut row, xh), r) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(&cache.rstd) {
        let mean_g = row.sum() / d;
        let mean_gx = row.iter().zip(xh).map(|(g, x)| *g * *x).sum::<F>() / d;
        Zip::from(&mut row)
            .and(&xh)
            .for_each(|g, &x| *g = (*g - mean_g - x * mean_gx) * *r);
    }
    dx
}

fn gelu_parts<F: Scalar>(x: F) -> (F, F) {
    let c = F::of((2.0 / std::f64::consts::PI).sqrt());
    let k = F::of(0.044715);
    let half = F::of(0.5);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let value = half * x * (F::one() + t);
    let deriv = half * (F::one() + t)
        + half * x * (F::one() - t * t) * c * (F::one() + F::of(3.0) * k * x * x);
    (value, deriv)
}

/// Causal multi-head attention of `q` (own rows) against `k`/`v` whose first
/// `ctx` rows are context. Own row `i` may attend columns `0..=ctx + i`.
fn attention<F: Scalar>(
    q: &Array2<F>,
    k: ArrayView2<F>,
    v: ArrayView2<F>,
    ctx: usize,
    heads: usize,
) -> (Array2<F>, Vec<Array2<F>>) {
    let (n, d) = q.dim();
    let dh = d / heads;
    let scale = F::one() / F::of(dh as f64).sqrt();
    let mut y = Array2::zeros((n, d));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut p = q.slice(cols).dot(&k.slice(cols).t());
        for (i, mut row) in p.rows_mut().into_iter().enumerate() {
            let limit = ctx + i + 1;
            let max = row
                .iter()
                .take(limit)
                .fold(F::neg_infinity(), |m, &x| m.max(x));
            let mut total = F::zero();
            for (j, x) in row.iter_mut().enumerate() {
                if j < limit {
                    *x = ((*x - max) * scale).exp();
                    total += *x;
                } else {
                    *x = F::zero();
                }
            }
            row.mapv_inplace(|x| x / total);
        }
        y.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
        probs.push(p);
    }
    (y, probs)
}

fn attention_backward<F: Scalar>(
    dy: &Array2<F>,
    q: &Array2<F>,
    k: &Array2<F>,
    v: &Array2<F>,
    probs: &[Array2<F>],
    heads: usize,
) -> (Array2<F>, Array2<F>, Array2<F>) {
    let d = q.ncols();
    let dh = d / heads;
    let scale = F::one() / F::of(dh as f64).sqrt();
    let mut dq = Array2::zeros(q.raw_dim());
    let mut dk = Array2::zeros(k.raw_dim());
    let mut dv = Array2::zeros(v.raw_dim());
    for (h, p) in probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let dyh = dy.slice(cols);
        let mut ds = dyh.dot(&v.slice(cols).t());
        dv.slice_mut(cols).assign(&p.t().dot(&dyh));
        for (mut drow, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
            let inner = drow.iter().zip(prow).map(|(g, p)| *g * *p).sum::<F>();
            Zip::from(&mut drow)
                .and(&prow)
                .for_each(|g, &p| *g = p * (*g - inner) * scale);
        }
        dq.slice_mut(cols).assign(&ds.dot(&k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&q.slice(cols)));
    }
    (dq, dk, dv)
}

fn check_tokens<F: Scalar>(p: &PolicyParams<F>, tokens: &[u32]) -> Result<()> {
    let size = p.config.vocab_size;
    match tokens.iter().find(|&&t| t as usize >= size) {
        Some(&id) => Err(Error::UnknownToken { id, size }),
        None => Ok(()),
    }
}

/// Runs `tokens` on top of `ctx` (or from position 0 when `None`).
pub fn forward_segment<F: Scalar>(
    p: &PolicyParams<F>,
    tokens: &[u32],
    ctx: Option<&KvCache<F>>,
) -> Result<SegmentCache<F>> {
    let cfg = &p.config;
    let d = cfg.width;
    let start = ctx.map_or(0, KvCache::len);
    let n = tokens.len();
    if start + n > cfg.max_context {
        return Err(Error::ContextOverflow {
            len: start + n,
            max: cfg.max_context,
        });
    }
    check_tokens(p, tokens)?;

    let mut x = Array2::zeros((n, d));
    for (i, &t) in tokens.iter().enumerate() {
        let mut row = x.row_mut(i);
        row.assign(&p.tok_emb.row(t as usize));
        row += &p.pos_emb.row(start + i);
    }

    let mut layers = Vec::with_capacity(cfg.layers);
    let mut kv = Vec::with_capacity(cfg.layers);
    for (l, lp) in p.layers.iter().enumerate() {
        let (a, ln1) = layernorm(&x, &lp.ln1_gain, &lp.ln1_bias);
        let qkv = a.dot(&lp.w_qkv) + &lp.b_qkv;
        let q = qkv.slice(s![.., 0..d]).to_owned();
        let (kfull, vfull) = match ctx {
            Some(c) => (
                concatenate![Axis(0), c.layers[l].0, qkv.slice(s![.., d..2 * d])],
                concatenate![Axis(0), c.layers[l].1, qkv.slice(s![.., 2 * d..])],
            ),
            None => (
                qkv.slice(s![.., d..2 * d]).to_owned(),
                qkv.slice(s![.., 2 * d..]).to_owned(),
            ),
        };
        let (y, probs) = attention(&q, kfull.view(), vfull.view(), start, cfg.heads);
        x += &(y.dot(&lp.w_out) + &lp.b_out);
        let (m, ln2) = layernorm(&x, &lp.ln2_gain, &lp.ln2_bias);
        let pre = m.dot(&lp.w_in) + &lp.b_in;
        let act = pre.mapv(|v| gelu_parts(v).0);
        x += &(act.dot(&lp.w_proj) + &lp.b_proj);
        layers.push(LayerCache {
            ln1,
            a,
            q,
            probs,
            y,
            ln2,
            m,
            pre,
            act,
        });
        kv.push((kfull, vfull));
    }
    let (hidden, lnf) = layernorm(&x, &p.lnf_gain, &p.lnf_bias);
    let logits = hidden.dot(&p.lm_head);
    Ok(SegmentCache {
        tokens: tokens.to_vec(),
        start,
        layers,
        lnf,
        hidden,
        logits,
        kv: KvCache { layers: kv },
    })
}

/// Accumulates parameter gradients for one segment into `grads`.
///
/// `d_hidden` and `d_logits` are upstream gradients per own row;
/// `d_kv` is the gradient already collected for the segment's full key/value
/// rows (context plus own) from its continuations. Returns the gradient for
/// the context rows.
pub fn backward_segment<F: Scalar>(
    p: &PolicyParams<F>,
    cache: &SegmentCache<F>,
    d_hidden: Option<&Array2<F>>,
    d_logits: Option<&Array2<F>>,
    d_kv: Option<&KvGrad<F>>,
    grads: &mut PolicyParams<F>,
) -> KvGrad<F> {
    let cfg = &p.config;
    let d = cfg.width;
    let n = cache.len();
    let m = cache.start;

    let mut dh = match d_hidden {
        Some(g) => g.clone(),
        None => Array2::zeros((n, d)),
    };
    if let Some(dl) = d_logits {
        grads.lm_head += &cache.hidden.t().dot(dl);
        dh += &dl.dot(&p.lm_head.t());
    }
    let mut dx = layernorm_backward(
        &dh,
        &cache.lnf,
        &p.lnf_gain,
        &mut grads.lnf_gain,
        &mut grads.lnf_bias,
    );

    let mut ctx_grad = Vec::with_capacity(cfg.layers);
    for l in (0..cfg.layers).rev() {
        let lp = &p.layers[l];
        let lc = &cache.layers[l];
        let g = &mut grads.layers[l];

        g.w_proj += &lc.act.t().dot(&dx);
        g.b_proj += &dx.sum_axis(Axis(0));
        let mut dpre = dx.dot(&lp.w_proj.t());
        Zip::from(&mut dpre)
            .and(&lc.pre)
            .for_each(|g, &x| *g *= gelu_parts(x).1);
        g.w_in += &lc.m.t().dot(&dpre);
        g.b_in += &dpre.sum_axis(Axis(0));
        let dm = dpre.dot(&lp.w_in.t());
        dx += &layernorm_backward(&dm, &lc.ln2, &lp.ln2_gain, &mut g.ln2_gain, &mut g.ln2_bias);

        g.w_out += &lc.y.t().dot(&dx);
        g.b_out += &dx.sum_axis(Axis(0));
        let dy = dx.dot(&lp.w_out.t());
        let (kfull, vfull) = &cache.kv.layers[l];
        let (dq, mut dk, mut dv) = attention_backward(&dy, &lc.q, kfull, vfull, &lc.probs, cfg.heads);
        if let Some(ext) = d_kv {
            dk += &ext.layers[l].0;
            dv += &ext.layers[l].1;
        }
        let dqkv = concatenate![Axis(1), dq, dk.slice(s![m.., ..]), dv.slice(s![m.., ..])];
        g.w_qkv += &lc.a.t().dot(&dqkv);
        g.b_qkv += &dqkv.sum_axis(Axis(0));
        let da = dqkv.dot(&lp.w_qkv.t());
        dx += &layernorm_backward(&da, &lc.ln1, &lp.ln1_gain, &mut g.ln1_gain, &mut g.ln1_bias);
        ctx_grad.push((dk.slice(s![..m, ..]).to_owned(), dv.slice(s![..m, ..]).to_owned()));
    }
    ctx_grad.reverse();

    for (i, &t) in cache.tokens.iter().enumerate() {
        let row = dx.row(i);
        let mut te = grads.tok_emb.row_mut(t as usize);
        te += &row;
        let mut pe = grads.pos_emb.row_mut(m + i);
        pe += &row;
    }
    KvCache { layers: ctx_grad }
}

/// Full-sequence forward from position 0: hidden states and logits per
/// position.
pub fn forward<F: Scalar>(p: &PolicyParams<F>, tokens: &[u32]) -> Result<(Array2<F>, Array2<F>)> {
    let c = forward_segment(p, tokens, None)?;
    Ok((c.hidden, c.logits))
}

/// Incremental decoding state: the key/value cache plus the outputs at the
/// last position fed so far.
#[derive(Debug, Clone)]
pub struct DecodeState<F> {
    pub kv: KvCache<F>,
    pub last_hidden: Array1<F>,
    pub last_logits: Array1<F>,
}

impl<F: Scalar> DecodeState<F> {
    /// Runs a non-empty prefix, optionally on top of an existing cache.
    pub fn prefill(p: &PolicyParams<F>, tokens: &[u32], ctx: Option<&KvCache<F>>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyPrompt);
        }
        let seg = forward_segment(p, tokens, ctx)?;
        Ok(Self::from_segment(seg))
    }

    pub fn from_segment(seg: SegmentCache<F>) -> Self {
        let last = seg.len() - 1;
        DecodeState {
            last_hidden: seg.hidden.row(last).to_owned(),
            last_logits: seg.logits.row(last).to_owned(),
            kv: seg.kv,
        }
    }

    pub fn len(&self) -> usize {
        self.kv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kv.is_empty()
    }

    /// Appends one token, updating the cache in place.
    pub fn push(&mut self, p: &PolicyParams<F>, token: u32) -> Result<()> {
        let cfg = &p.config;
        let d = cfg.width;
        let pos = self.kv.len();
        if pos + 1 > cfg.max_context {
            return Err(Error::ContextOverflow {
                len: pos + 1,
                max: cfg.max_context,
            });
        }
        check_tokens(p, &[token])?;
        let mut x = (&p.tok_emb.row(token as usize) + &p.pos_emb.row(pos)).insert_axis(Axis(0));
        for (l, lp) in p.layers.iter().enumerate() {
            let (a, _) = layernorm(&x, &lp.ln1_gain, &lp.ln1_bias);
            let qkv = a.dot(&lp.w_qkv) + &lp.b_qkv;
            let (k, v) = &mut self.kv.layers[l];
            k.push_row(qkv.slice(s![0, d..2 * d])).expect("row width matches");
            v.push_row(qkv.slice(s![0, 2 * d..])).expect("row width matches");
            let q = qkv.slice(s![.., 0..d]).to_owned();
            let (y, _) = attention(&q, k.view(), v.view(), pos, cfg.heads);
            x += &(y.dot(&lp.w_out) + &lp.b_out);
            let (m, _) = layernorm(&x, &lp.ln2_gain, &lp.ln2_bias);
            let act = (m.dot(&lp.w_in) + &lp.b_in).mapv(|v| gelu_parts(v).0);
            x += &(act.dot(&lp.w_proj) + &lp.b_proj);
        }
        let (h, _) = layernorm(&x, &p.lnf_gain, &p.lnf_bias);
        self.last_logits = h.dot(&p.lm_head).row(0).to_owned();
        self.last_hidden = h.row(0).to_owned();
        Ok(())
    }
}

pub(crate) fn kv_zeros_like<F: Scalar>(kv: &KvCache<F>) -> KvGrad<F> {
    kv.zeros_like()
}

pub(crate) fn kv_add<F: Scalar>(dst: &mut KvGrad<F>, src: &KvGrad<F>) {
    dst.add_assign(src)
}
