//! A forest of segments sharing prefixes.
//!
//! Nodes are forwarded on insertion (parents always precede children) and
//! back-propagated in reverse insertion order, so each shared prefix is
//! computed once and receives the summed gradient of all its continuations.

use ndarray::{Array1, Array2, ArrayView1};

use super::item::Pooling;
use super::params::PolicyParams;
use super::transformer::{
    backward_segment, forward_segment, kv_add, kv_zeros_like, DecodeState, KvGrad, SegmentCache,
};
use crate::error::Result;
use crate::scalar::Scalar;

pub type NodeId = usize;

struct Node<F> {
    parent: Option<NodeId>,
    seg: SegmentCache<F>,
    d_hidden: Option<Array2<F>>,
    d_logits: Option<Array2<F>>,
    d_kv: Option<KvGrad<F>>,
}

pub struct SegmentTree<'p, F: Scalar> {
    params: &'p PolicyParams<F>,
    nodes: Vec<Node<F>>,
}

impl<'p, F: Scalar> SegmentTree<'p, F> {
    pub fn new(params: &'p PolicyParams<F>) -> Self {
        SegmentTree {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p PolicyParams<F> {
        self.params
    }

    /// Forwards `tokens` as a continuation of `parent` (or of nothing).
    pub fn push(&mut self, parent: Option<NodeId>, tokens: &[u32]) -> Result<NodeId> {
        let ctx = parent.map(|p| &self.nodes[p].seg.kv);
        let seg = forward_segment(self.params, tokens, ctx)?;
        self.nodes.push(Node {
            parent,
            seg,
            d_hidden: None,
            d_logits: None,
            d_kv: None,
        });
        Ok(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn segment(&self, id: NodeId) -> &SegmentCache<F> {
        &self.nodes[id].seg
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id].parent
    }

    /// Total sequence length from the root through `id`.
    pub fn total_len(&self, id: NodeId) -> usize {
        let s = &self.nodes[id].seg;
        s.start + s.len()
    }

    /// Nodes from the root down to `id`.
    pub fn chain(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            out.push(p);
            cur = p;
        }
        out.reverse();
        out
    }

    /// The node and row holding the last position of the sequence ending at
    /// `id`, skipping empty segments.
    pub fn last_position(&self, id: NodeId) -> Option<(NodeId, usize)> {
        let mut cur = Some(id);
        while let Some(c) = cur {
            let n = self.nodes[c].seg.len();
            if n > 0 {
                return Some((c, n - 1));
            }
            cur = self.nodes[c].parent;
        }
        None
    }

    pub fn hidden_row(&self, id: NodeId, row: usize) -> ArrayView1<'_, F> {
        self.nodes[id].seg.hidden.row(row)
    }

    pub fn logits_row(&self, id: NodeId, row: usize) -> ArrayView1<'_, F> {
        self.nodes[id].seg.logits.row(row)
    }

    pub fn add_d_hidden(&mut self, id: NodeId, row: usize, grad: ArrayView1<F>) {
        let node = &mut self.nodes[id];
        let (n, d) = node.seg.hidden.dim();
        let acc = node.d_hidden.get_or_insert_with(|| Array2::zeros((n, d)));
        let mut r = acc.row_mut(row);
        r += &grad;
    }

    pub fn add_d_logits(&mut self, id: NodeId, row: usize, grad: ArrayView1<F>) {
        let node = &mut self.nodes[id];
        let (n, v) = node.seg.logits.dim();
        let acc = node.d_logits.get_or_insert_with(|| Array2::zeros((n, v)));
        let mut r = acc.row_mut(row);
        r += &grad;
    }

    /// Every `(node, row)` of the sequence ending at `id`, in position order.
    pub fn positions(&self, id: NodeId) -> Vec<(NodeId, usize)> {
        self.chain(id)
            .into_iter()
            .flat_map(|n| (0..self.nodes[n].seg.len()).map(move |r| (n, r)))
            .collect()
    }

    /// Pools the hidden states of the whole sequence ending at `id`.
    pub fn pooled(&self, id: NodeId, strategy: Pooling) -> Array1<F> {
        let rows: Vec<ArrayView1<F>> = self
            .positions(id)
            .into_iter()
            .map(|(n, r)| self.hidden_row(n, r))
            .collect();
        strategy.pool(&rows)
    }

    /// Back-propagates `grad` (with respect to `pooled(id, strategy)`).
    pub fn add_d_pooled(&mut self, id: NodeId, strategy: Pooling, grad: ArrayView1<F>) {
        let positions = self.positions(id);
        let rows: Vec<ArrayView1<F>> = positions
            .iter()
            .map(|&(n, r)| self.nodes[n].seg.hidden.row(r))
            .collect();
        let per_row = strategy.pool_backward(&rows, grad);
        for ((n, r), g) in positions.into_iter().zip(per_row) {
            if let Some(g) = g {
                self.add_d_hidden(n, r, g.view());
            }
        }
    }

    /// A decoding state continuing the sequence that ends at `id`.
    pub fn decode_state(&self, id: NodeId) -> Option<DecodeState<F>> {
        let (n, r) = self.last_position(id)?;
        Some(DecodeState {
            kv: self.nodes[id].seg.kv.clone(),
            last_hidden: self.hidden_row(n, r).to_owned(),
            last_logits: self.logits_row(n, r).to_owned(),
        })
    }

    /// Drops every node inserted at or after `id`.
    pub fn truncate(&mut self, id: NodeId) {
        self.nodes.truncate(id);
    }

    /// Accumulates parameter gradients of every recorded upstream gradient.
    pub fn backward(mut self, grads: &mut PolicyParams<F>) {
        for id in (0..self.nodes.len()).rev() {
            let (parent, d_hidden, d_logits, d_kv) = {
                let node = &mut self.nodes[id];
                (node.parent, node.d_hidden.take(), node.d_logits.take(), node.d_kv.take())
            };
            if d_hidden.is_none() && d_logits.is_none() && d_kv.is_none() {
                continue;
            }
            let seg = &self.nodes[id].seg;
            let dctx = backward_segment(
                self.params,
                seg,
                d_hidden.as_ref(),
                d_logits.as_ref(),
                d_kv.as_ref(),
                grads,
            );
            if let Some(p) = parent {
                let pnode = &mut self.nodes[p];
                let acc = pnode.d_kv.get_or_insert_with(|| kv_zeros_like(&pnode.seg.kv));
                kv_add(acc, &dctx);
            }
        }
    }
}
