//! Trainable parameters of the dual-head policy.
//!
//! Tensor order (also the checkpoint block order):
//! `tok_emb [V,d]`, `pos_emb [C,d]`, then per layer `ln1.gain [d]`,
//! `ln1.bias [d]`, `attn.w_qkv [d,3d]`, `attn.b_qkv [3d]`, `attn.w_out [d,d]`,
//! `attn.b_out [d]`, `ln2.gain [d]`, `ln2.bias [d]`, `mlp.w_in [d,f]`,
//! `mlp.b_in [f]`, `mlp.w_out [f,d]`, `mlp.b_out [d]`, then `ln_f.gain [d]`,
//! `ln_f.bias [d]`, `lm_head [d,V]`.

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::error::Result;
use crate::rng::{self, label};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F> {
    pub ln1_gain: Array1<F>,
    pub ln1_bias: Array1<F>,
    pub w_qkv: Array2<F>,
    pub b_qkv: Array1<F>,
    pub w_out: Array2<F>,
    pub b_out: Array1<F>,
    pub ln2_gain: Array1<F>,
    pub ln2_bias: Array1<F>,
    pub w_in: Array2<F>,
    pub b_in: Array1<F>,
    pub w_proj: Array2<F>,
    pub b_proj: Array1<F>,
}

/// All parameters plus a version counter bumped by every optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams<F = f32> {
    pub config: ModelConfig,
    pub version: u64,
    pub tok_emb: Array2<F>,
    pub pos_emb: Array2<F>,
    pub layers: Vec<LayerParams<F>>,
    pub lnf_gain: Array1<F>,
    pub lnf_bias: Array1<F>,
    pub lm_head: Array2<F>,
}

impl<F: Scalar> PolicyParams<F> {
    pub fn zeros(config: &ModelConfig) -> Self {
        let (d, f, v, c) = (config.width, config.ff_width, config.vocab_size, config.max_context);
        let layer = LayerParams {
            ln1_gain: Array1::ones(d),
            ln1_bias: Array1::zeros(d),
            w_qkv: Array2::zeros((d, 3 * d)),
            b_qkv: Array1::zeros(3 * d),
            w_out: Array2::zeros((d, d)),
            b_out: Array1::zeros(d),
            ln2_gain: Array1::ones(d),
            ln2_bias: Array1::zeros(d),
            w_in: Array2::zeros((d, f)),
            b_in: Array1::zeros(f),
            w_proj: Array2::zeros((f, d)),
            b_proj: Array1::zeros(d),
        };
        PolicyParams {
            config: config.clone(),
            version: 0,
            tok_emb: Array2::zeros((v, d)),
            pos_emb: Array2::zeros((c, d)),
            layers: vec![layer; config.layers],
            lnf_gain: Array1::ones(d),
            lnf_bias: Array1::zeros(d),
            lm_head: Array2::zeros((d, v)),
        }
    }

    /// Gaussian init; residual output projections are scaled by
    /// `1/sqrt(2 * layers)`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut p = Self::zeros(config);
        let mut rng = rng::stream(seed, &[label::INIT]);
        let normal = Normal::new(0.0, config.init_std).expect("positive std");
        let resid = Normal::new(0.0, config.init_std / (2.0 * config.layers as f64).sqrt())
            .expect("positive std");
        let mut fill = |a: &mut [F], dist: &Normal<f64>| {
            for x in a {
                *x = F::of(dist.sample(&mut rng));
            }
        };
        fill(p.tok_emb.as_slice_mut().unwrap(), &normal);
        fill(p.pos_emb.as_slice_mut().unwrap(), &normal);
        for l in &mut p.layers {
            fill(l.w_qkv.as_slice_mut().unwrap(), &normal);
            fill(l.w_out.as_slice_mut().unwrap(), &resid);
            fill(l.w_in.as_slice_mut().unwrap(), &normal);
            fill(l.w_proj.as_slice_mut().unwrap(), &resid);
        }
        fill(p.lm_head.as_slice_mut().unwrap(), &normal);
        Ok(p)
    }

    /// Zero tensors with the same shapes, used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(F::zero());
        }
        z.version = 0;
        z
    }

    /// Names and shapes in checkpoint order.
    pub fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let (d, f, v, c) = (config.width, config.ff_width, config.vocab_size, config.max_context);
        let mut out = vec![
            ("tok_emb".to_string(), vec![v, d]),
            ("pos_emb".to_string(), vec![c, d]),
        ];
        for i in 0..config.layers {
            for (name, shape) in [
                ("ln1.gain", vec![d]),
                ("ln1.bias", vec![d]),
                ("attn.w_qkv", vec![d, 3 * d]),
                ("attn.b_qkv", vec![3 * d]),
                ("attn.w_out", vec![d, d]),
                ("attn.b_out", vec![d]),
                ("ln2.gain", vec![d]),
                ("ln2.bias", vec![d]),
                ("mlp.w_in", vec![d, f]),
                ("mlp.b_in", vec![f]),
                ("mlp.w_out", vec![f, d]),
                ("mlp.b_out", vec![d]),
            ] {
                out.push((format!("layers.{i}.{name}"), shape));
            }
        }
        out.push(("ln_f.gain".to_string(), vec![d]));
        out.push(("ln_f.bias".to_string(), vec![d]));
        out.push(("lm_head".to_string(), vec![d, v]));
        out
    }

    pub fn tensors(&self) -> Vec<&[F]> {
        let mut out: Vec<&[F]> = vec![
            self.tok_emb.as_slice().unwrap(),
            self.pos_emb.as_slice().unwrap(),
        ];
        for l in &self.layers {
            out.extend([
                l.ln1_gain.as_slice().unwrap(),
                l.ln1_bias.as_slice().unwrap(),
                l.w_qkv.as_slice().unwrap(),
                l.b_qkv.as_slice().unwrap(),
                l.w_out.as_slice().unwrap(),
                l.b_out.as_slice().unwrap(),
                l.ln2_gain.as_slice().unwrap(),
                l.ln2_bias.as_slice().unwrap(),
                l.w_in.as_slice().unwrap(),
                l.b_in.as_slice().unwrap(),
                l.w_proj.as_slice().unwrap(),
                l.b_proj.as_slice().unwrap(),
            ]);
        }
        out.extend([
            self.lnf_gain.as_slice().unwrap(),
            self.lnf_bias.as_slice().unwrap(),
            self.lm_head.as_slice().unwrap(),
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = vec![
            self.tok_emb.as_slice_mut().unwrap(),
            self.pos_emb.as_slice_mut().unwrap(),
        ];
        for l in &mut self.layers {
            out.extend([
                l.ln1_gain.as_slice_mut().unwrap(),
                l.ln1_bias.as_slice_mut().unwrap(),
                l.w_qkv.as_slice_mut().unwrap(),
                l.b_qkv.as_slice_mut().unwrap(),
                l.w_out.as_slice_mut().unwrap(),
                l.b_out.as_slice_mut().unwrap(),
                l.ln2_gain.as_slice_mut().unwrap(),
                l.ln2_bias.as_slice_mut().unwrap(),
                l.w_in.as_slice_mut().unwrap(),
                l.b_in.as_slice_mut().unwrap(),
                l.w_proj.as_slice_mut().unwrap(),
                l.b_proj.as_slice_mut().unwrap(),
            ]);
        }
        out.extend([
            self.lnf_gain.as_slice_mut().unwrap(),
            self.lnf_bias.as_slice_mut().unwrap(),
            self.lm_head.as_slice_mut().unwrap(),
        ]);
        out
    }

    /// Whether each tensor (in `tensors()` order) is a weight matrix, i.e.
    /// subject to weight decay.
    pub fn matrix_mask(&self) -> Vec<bool> {
        Self::layout(&self.config)
            .into_iter()
            .map(|(_, shape)| shape.len() == 2)
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Flattened copy of every parameter in checkpoint order.
    pub fn flat(&self) -> Vec<F> {
        self.tensors().into_iter().flatten().copied().collect()
    }

    pub fn set_flat(&mut self, values: &[F]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&values[offset..offset + t.len()]);
            offset += t.len();
        }
        assert_eq!(offset, values.len(), "flat parameter length mismatch");
    }

    pub fn cast<G: Scalar>(&self) -> PolicyParams<G> {
        let mut out = PolicyParams::<G>::zeros(&self.config);
        out.version = self.version;
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = G::of(s.f64());
            }
        }
        out
    }

    /// Deep immutable copy used as the frozen old policy.
    pub fn snapshot(&self) -> Self {
        self.clone()
    }

    /// Overwrites every parameter (and the version) from a snapshot.
    pub fn restore(&mut self, snapshot: &Self) {
        self.clone_from(snapshot);
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// `self += scale * other`.
    pub fn axpy(&mut self, scale: F, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * *y;
            }
        }
    }

    pub fn dot(&self, other: &Self) -> F {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| *x * *y).sum::<F>())
            .sum()
    }

    pub fn l2_norm(&self) -> F {
        self.dot(self).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            layers: 2,
            heads: 2,
            width: 8,
            ff_width: 16,
            max_context: 32,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn layout_matches_tensors() {
        let p = PolicyParams::<f32>::init(&tiny(), 1).unwrap();
        let layout = PolicyParams::<f32>::layout(&p.config);
        let tensors = p.tensors();
        assert_eq!(layout.len(), tensors.len());
        for ((_, shape), t) in layout.iter().zip(&tensors) {
            assert_eq!(shape.iter().product::<usize>(), t.len());
        }
    }

    #[test]
    fn snapshot_is_isolated() {
        let mut p = PolicyParams::<f64>::init(&tiny(), 1).unwrap();
        let snap = p.snapshot();
        assert_eq!(snap.snapshot(), snap);
        p.lm_head[[0, 0]] += 1.0;
        p.version += 1;
        assert_ne!(p, snap);
        p.restore(&snap);
        assert_eq!(p, snap);
    }

    #[test]
    fn flat_round_trip_and_cast() {
        let p = PolicyParams::<f32>::init(&tiny(), 3).unwrap();
        let mut q = p.zeros_like();
        q.set_flat(&p.flat());
        q.version = p.version;
        assert_eq!(p, q);
        let back: PolicyParams<f32> = p.cast::<f64>().cast();
        assert_eq!(p, back);
    }
}
