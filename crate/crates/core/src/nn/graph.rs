//! Parameter storage and a define-by-run tape with reverse-mode gradients.

use crate::scalar::Scalar;

use super::conv::{conv2d_backward, conv2d_forward, ConvGeom};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<F> {
    pub name: String,
    /// Subsystem the parameter belongs to (e.g. `encoder`, `det_head`).
    pub group: String,
    pub value: Tensor<F>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<F> {
    entries: Vec<ParamEntry<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
        }
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        group: impl Into<String>,
        value: Tensor<F>,
    ) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            group: group.into(),
            value,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &ParamEntry<F> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamEntry<F> {
        &mut self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry<F>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<F>] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count.
    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads<F> {
        Grads {
            tensors: self
                .entries
                .iter()
                .map(|e| Tensor::zeros(e.value.shape))
                .collect(),
        }
    }
}

/// One gradient tensor per parameter, in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<F> {
    pub tensors: Vec<Tensor<F>>,
}

impl<F: Scalar> Grads<F> {
    pub fn global_norm(&self) -> F {
        self.tensors.iter().map(|t| t.sum_sq()).sum::<F>().sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: F) -> F {
        let norm = self.global_norm();
        if norm > max_norm && norm > F::zero() {
            let k = max_norm / norm;
            for t in &mut self.tensors {
                t.data.iter_mut().for_each(|v| *v *= k);
            }
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Conv {
        x: NodeId,
        w: ParamId,
        b: ParamId,
        geom: ConvGeom,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    Affine {
        x: NodeId,
        scale: f64,
    },
    Concat(Vec<NodeId>),
    Upsample {
        x: NodeId,
        factor: usize,
    },
    Slice {
        x: NodeId,
        start: usize,
    },
    StopGrad,
}

#[derive(Debug)]
struct Node<F> {
    value: Tensor<F>,
    op: Op,
    needs_grad: bool,
    label: String,
}

/// A forward pass recorded for backpropagation.
pub struct Graph<'p, F> {
    params: &'p ParamStore<F>,
    nodes: Vec<Node<F>>,
}

impl<'p, F: Scalar> Graph<'p, F> {
    pub fn new(params: &'p ParamStore<F>) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<F>, op: Op, needs_grad: bool, label: &str) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            label: label.to_string(),
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    pub fn label(&self, id: NodeId) -> &str {
        &self.nodes[id.0].label
    }

    pub fn input(&mut self, t: Tensor<F>, label: &str) -> NodeId {
        self.push(t, Op::Input, false, label)
    }

    pub fn conv(
        &mut self,
        x: NodeId,
        w: ParamId,
        b: ParamId,
        stride: usize,
        label: &str,
    ) -> NodeId {
        let wt = &self.params.get(w).value;
        let [c_out, c_in, k, _] = wt.shape;
        let geom = ConvGeom {
            c_in,
            c_out,
            k,
            stride,
            pad: k / 2,
        };
        let out = conv2d_forward(
            self.value(x),
            &wt.data,
            &self.params.get(b).value.data,
            &geom,
        );
        self.push(out, Op::Conv { x, w, b, geom }, true, label)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let mut v = self.value(x).clone();
        // `max` would silently map NaN to zero and hide the faulty layer.
        v.data.iter_mut().for_each(|a| {
            if *a < F::zero() {
                *a = F::zero()
            }
        });
        let label = self.label(x).to_string() + ".relu";
        let ng = self.needs(x);
        self.push(v, Op::Relu(x), ng, &label)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let mut v = self.value(x).clone();
        v.data
            .iter_mut()
            .for_each(|a| *a = F::one() / (F::one() + (-*a).exp()));
        let label = self.label(x).to_string() + ".sigmoid";
        let ng = self.needs(x);
        self.push(v, Op::Sigmoid(x), ng, &label)
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> NodeId {
        let (s, b) = (F::lit(scale), F::lit(shift));
        let mut v = self.value(x).clone();
        v.data.iter_mut().for_each(|a| *a = *a * s + b);
        let label = self.label(x).to_string() + ".affine";
        let ng = self.needs(x);
        self.push(v, Op::Affine { x, scale }, ng, &label)
    }

    /// Channel concatenation.
    pub fn concat(&mut self, xs: &[NodeId], label: &str) -> NodeId {
        let first = self.value(xs[0]).shape;
        let (n, h, w) = (first[0], first[2], first[3]);
        let c_total: usize = xs.iter().map(|&x| self.value(x).c()).sum();
        let mut out = Tensor::zeros([n, c_total, h, w]);
        for i in 0..n {
            let mut off = 0;
            let dst = out.item_mut(i);
            for &x in xs {
                let t = &self.nodes[x.0].value;
                assert_eq!(
                    (t.n(), t.h(), t.w()),
                    (n, h, w),
                    "concat: spatial mismatch at {label}"
                );
                let src = t.item(i);
                dst[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let ng = xs.iter().any(|&x| self.needs(x));
        self.push(out, Op::Concat(xs.to_vec()), ng, label)
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample(&mut self, x: NodeId, factor: usize) -> NodeId {
        let src = self.value(x);
        let [n, c, h, w] = src.shape;
        let (oh, ow) = (h * factor, w * factor);
        let mut out = Tensor::zeros([n, c, oh, ow]);
        for i in 0..n {
            for ch in 0..c {
                let s = src.plane(i, ch);
                let d = out.plane_mut(i, ch);
                for y in 0..oh {
                    let row = &s[(y / factor) * w..(y / factor + 1) * w];
                    for (xx, v) in d[y * ow..(y + 1) * ow].iter_mut().enumerate() {
                        *v = row[xx / factor];
                    }
                }
            }
        }
        let label = self.label(x).to_string() + ".up";
        let ng = self.needs(x);
        self.push(out, Op::Upsample { x, factor }, ng, &label)
    }

    /// Channels `start..start + len`.
    pub fn slice(&mut self, x: NodeId, start: usize, len: usize, label: &str) -> NodeId {
        let src = self.value(x);
        let [n, c, h, w] = src.shape;
        assert!(start + len <= c, "slice out of range");
        let p = h * w;
        let mut out = Tensor::zeros([n, len, h, w]);
        for i in 0..n {
            out.item_mut(i)
                .copy_from_slice(&src.item(i)[start * p..(start + len) * p]);
        }
        let ng = self.needs(x);
        self.push(out, Op::Slice { x, start }, ng, label)
    }

    /// Identity whose gradient is discarded.
    pub fn stop_grad(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).clone();
        let label = self.label(x).to_string() + ".stop";
        self.push(v, Op::StopGrad, false, &label)
    }

    /// First node (in evaluation order) holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.nodes
            .iter()
            .find(|n| !n.value.is_finite())
            .map(|n| n.label.as_str())
    }

    /// Backpropagates the given output gradients; returns parameter gradients.
    pub fn backward(&self, seeds: Vec<(NodeId, Tensor<F>)>) -> Grads<F> {
        let mut pgrads = self.params.zero_grads();
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (id, g) in seeds {
            assert_eq!(
                g.shape, self.nodes[id.0].value.shape,
                "seed gradient shape mismatch"
            );
            accumulate(&mut grads[id.0], g);
        }
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input | Op::StopGrad => {}
                Op::Conv { x, w, b, geom } => {
                    let need_dx = self.needs(*x);
                    let (wt, rest) = split_two(&mut pgrads.tensors, w.0, b.0);
                    let dx = conv2d_backward(
                        self.value(*x),
                        &self.params.get(*w).value.data,
                        &g,
                        geom,
                        &mut wt.data,
                        &mut rest.data,
                        need_dx,
                    );
                    if let Some(dx) = dx {
                        accumulate(&mut grads[x.0], dx);
                    }
                }
                Op::Relu(x) => {
                    let mut g = g;
                    for (gv, &y) in g.data.iter_mut().zip(&node.value.data) {
                        if y <= F::zero() {
                            *gv = F::zero();
                        }
                    }
                    accumulate(&mut grads[x.0], g);
                }
                Op::Sigmoid(x) => {
                    let mut g = g;
                    for (gv, &y) in g.data.iter_mut().zip(&node.value.data) {
                        *gv *= y * (F::one() - y);
                    }
                    accumulate(&mut grads[x.0], g);
                }
                Op::Affine { x, scale } => {
                    let s = F::lit(*scale);
                    let mut g = g;
                    g.data.iter_mut().for_each(|v| *v *= s);
                    accumulate(&mut grads[x.0], g);
                }
                Op::Concat(xs) => {
                    let n = g.n();
                    let mut off = 0;
                    for &x in xs {
                        let shape = self.value(x).shape;
                        let len = shape[1] * shape[2] * shape[3];
                        if self.needs(x) {
                            let mut part = Tensor::zeros(shape);
                            for s in 0..n {
                                part.item_mut(s).copy_from_slice(&g.item(s)[off..off + len]);
                            }
                            accumulate(&mut grads[x.0], part);
                        }
                        off += len;
                    }
                }
                Op::Upsample { x, factor } => {
                    let shape = self.value(*x).shape;
                    let [n, c, _, w] = shape;
                    let ow = w * factor;
                    let mut dx = Tensor::zeros(shape);
                    for s in 0..n {
                        for ch in 0..c {
                            let src = g.plane(s, ch);
                            let dst = dx.plane_mut(s, ch);
                            for (y, row) in src.chunks(ow).enumerate() {
                                let drow = &mut dst[(y / factor) * w..(y / factor + 1) * w];
                                for (xx, &v) in row.iter().enumerate() {
                                    drow[xx / factor] += v;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::Slice { x, start } => {
                    let shape = self.value(*x).shape;
                    let p = shape[2] * shape[3];
                    let mut dx = Tensor::zeros(shape);
                    for s in 0..shape[0] {
                        let src = g.item(s);
                        dx.item_mut(s)[start * p..start * p + src.len()].copy_from_slice(src);
                    }
                    accumulate(&mut grads[x.0], dx);
                }
            }
        }
        pgrads
    }
}

fn accumulate<F: Scalar>(slot: &mut Option<Tensor<F>>, g: Tensor<F>) {
    match slot {
        Some(t) => t.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn split_two<T>(v: &mut [T], a: usize, b: usize) -> (&mut T, &mut T) {
    assert_ne!(a, b);
    if a < b {
        let (l, r) = v.split_at_mut(b);
        (&mut l[a], &mut r[0])
    } else {
        let (l, r) = v.split_at_mut(a);
        (&mut r[0], &mut l[b])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo(n: usize, seed: f64) -> Vec<f64> {
        (0..n)
            .map(|i| ((i as f64 + seed) * 0.917).sin() * 0.5)
            .collect()
    }

    /// Small network touching every op; loss = Σ out * r.
    fn run(store: &ParamStore<f64>, x: &Tensor<f64>, r: &[f64]) -> (f64, Grads<f64>) {
        let ids: Vec<ParamId> = (0..store.len()).map(ParamId).collect();
        let mut g = Graph::new(store);
        let inp = g.input(x.clone(), "x");
        let a = g.conv(inp, ids[0], ids[1], 2, "c1");
        let a = g.relu(a);
        let up = g.upsample(a, 2);
        let cat = g.concat(&[up, inp], "cat");
        let b = g.conv(cat, ids[2], ids[3], 1, "c2");
        let s = g.slice(b, 1, 2, "sl");
        let s = g.sigmoid(s);
        let out = g.affine(s, 3.0, -1.0);
        let loss = g.value(out).data.iter().zip(r).map(|(a, b)| a * b).sum();
        let seed = Tensor::from_vec(g.value(out).shape, r.to_vec());
        (loss, g.backward(vec![(out, seed)]))
    }

    #[test]
    fn graph_gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        store.add("c1.w", "a", Tensor::from_vec([3, 2, 3, 3], pseudo(54, 0.1)));
        store.add("c1.b", "a", Tensor::from_vec([3, 1, 1, 1], pseudo(3, 0.2)));
        store.add("c2.w", "b", Tensor::from_vec([4, 5, 1, 1], pseudo(20, 0.3)));
        store.add("c2.b", "b", Tensor::from_vec([4, 1, 1, 1], pseudo(4, 0.4)));
        let x = Tensor::from_vec([2, 2, 4, 4], pseudo(64, 0.5));
        let r = pseudo(2 * 2 * 16, 0.6);
        let (_, grads) = run(&store, &x, &r);
        let h = 1e-6;
        for p in 0..store.len() {
            for i in 0..store.entries()[p].value.len() {
                let mut plus = store.clone();
                plus.entries_mut()[p].value.data[i] += h;
                let mut minus = store.clone();
                minus.entries_mut()[p].value.data[i] -= h;
                let fd = (run(&plus, &x, &r).0 - run(&minus, &x, &r).0) / (2.0 * h);
                let an = grads.tensors[p].data[i];
                assert!(
                    (fd - an).abs() < 1e-6 * (1.0 + fd.abs()),
                    "param {p}[{i}]: fd {fd} vs {an}"
                );
            }
        }
    }

    #[test]
    fn stop_grad_blocks_flow() {
        let mut store = ParamStore::new();
        let w = store.add("w", "a", Tensor::from_vec([1, 1, 1, 1], vec![2.0]));
        let b = store.add("b", "a", Tensor::from_vec([1, 1, 1, 1], vec![0.0]));
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::from_vec([1, 1, 1, 1], vec![1.5]), "x");
        let y = g.conv(x, w, b, 1, "c");
        let y = g.stop_grad(y);
        let grads = g.backward(vec![(y, Tensor::from_vec([1, 1, 1, 1], vec![1.0]))]);
        assert_eq!(grads.global_norm(), 0.0);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut grads = Grads {
            tensors: vec![Tensor::from_vec([1, 1, 1, 2], vec![3.0f64, 4.0])],
        };
        let before = grads.clip_global_norm(1.0);
        assert_eq!(before, 5.0);
        assert!((grads.global_norm() - 1.0).abs() < 1e-12);
    }
}
