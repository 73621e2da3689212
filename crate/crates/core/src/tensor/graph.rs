use std::collections::HashMap;

use super::kernels;
use super::{ConvSpec, PoolSpec, Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Learning-rate group of a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Backbone,
    NewLayer,
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

/// Owns every trainable tensor of a model together with its gradient
/// accumulator. Graphs read parameter values from here and `backward_into`
/// adds gradients back into it.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor<T>) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name: name.into(),
            group,
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.shape().len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    group: p.group,
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                })
                .collect(),
        }
    }
}

enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    Relu(Var),
    MaxPool {
        x: Var,
        arg: Vec<u32>,
    },
    Resize(Var),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Crop {
        x: Var,
        top: usize,
        left: usize,
    },
    Softmax(Var),
    Add(Var, Var),
    Mul(Var, Var),
    MulMap {
        x: Var,
        map: Var,
    },
    Sum(Var),
    Scale(Var, T),
    WeightedCe {
        pred: Var,
        grad: Tensor<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

/// A single forward pass recorded for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so walking them backwards is a
/// valid topological order. Parameters are materialised once per graph; every
/// use of the same [`ParamId`] refers to the same node, so gradients from all
/// uses are summed.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

fn mismatch(op: &'static str, dim: &'static str, expected: usize, actual: usize) -> Error {
    Error::ShapeMismatch {
        op,
        dim,
        expected,
        actual,
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Hash of every piecewise branch taken in the forward pass: ReLU input
    /// signs and max-pool winners. Two evaluations with equal signatures lie
    /// on the same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for v in self.value(*x).data() {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool { arg, .. } => arg.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, tracked: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node { value, op, tracked });
        Ok(Var(self.nodes.len() - 1))
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    /// Untracked input.
    pub fn input(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push("input", value, Op::Leaf, false)
    }

    /// Leaf that participates in differentiation (its gradient is reported by
    /// [`Gradients::get`]).
    pub fn leaf(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push("leaf", value, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.params.get(&id) {
            return Ok(v);
        }
        let v = self.push("param", store.get(id).value.clone(), Op::Leaf, true)?;
        self.params.insert(id, v);
        Ok(v)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        spec.validate()?;
        let xs = self.shape(x);
        let ws = self.shape(w);
        if ws.c != xs.c {
            return Err(mismatch("conv2d", "input channels", ws.c, xs.c));
        }
        if let Some(b) = b {
            let bs = self.shape(b);
            if bs.len() != ws.n {
                return Err(mismatch("conv2d", "bias length", ws.n, bs.len()));
            }
        }
        let oh = spec
            .output_len(xs.h, ws.h)
            .ok_or_else(|| mismatch("conv2d", "height (dilated kernel exceeds padded input)", ws.h, xs.h))?;
        let ow = spec
            .output_len(xs.w, ws.w)
            .ok_or_else(|| mismatch("conv2d", "width (dilated kernel exceeds padded input)", ws.w, xs.w))?;
        let out_shape = Shape::new(xs.n, ws.n, oh, ow);
        let value = kernels::conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            spec,
            out_shape,
        );
        let mut deps = vec![x, w];
        deps.extend(b);
        let tracked = self.tracked(&deps);
        self.push("conv2d", value, Op::Conv { x, w, b, spec }, tracked)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v.max(T::zero()));
        let tracked = self.tracked(&[x]);
        self.push("relu", value, Op::Relu(x), tracked)
    }

    pub fn max_pool2d(&mut self, x: Var, spec: PoolSpec) -> Result<Var> {
        let xs = self.shape(x);
        let oh = spec
            .output_len(xs.h)
            .ok_or_else(|| mismatch("max_pool2d", "height (kernel larger than input)", spec.kernel, xs.h))?;
        let ow = spec
            .output_len(xs.w)
            .ok_or_else(|| mismatch("max_pool2d", "width (kernel larger than input)", spec.kernel, xs.w))?;
        let (value, arg) = kernels::max_pool_forward(self.value(x), spec, Shape::new(xs.n, xs.c, oh, ow));
        let tracked = self.tracked(&[x]);
        self.push("max_pool2d", value, Op::MaxPool { x, arg }, tracked)
    }

    /// Bilinear resize with half-pixel centers (align_corners = false).
    pub fn resize(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        if h == 0 || w == 0 {
            return Err(Error::invalid("bilinear_resize", "target dimensions must be >= 1"));
        }
        let value = kernels::resize_forward(self.value(x), h, w);
        let tracked = self.tracked(&[x]);
        self.push("bilinear_resize", value, Op::Resize(x), tracked)
    }

    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self.shape(*xs.first().ok_or_else(|| Error::invalid("concat_channels", "no inputs"))?);
        let mut c = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.n != first.n {
                return Err(mismatch("concat_channels", "batch", first.n, s.n));
            }
            if s.h != first.h {
                return Err(mismatch("concat_channels", "height", first.h, s.h));
            }
            if s.w != first.w {
                return Err(mismatch("concat_channels", "width", first.w, s.w));
            }
            c += s.c;
        }
        let shape = Shape::new(first.n, c, first.h, first.w);
        let mut value = Tensor::zeros(shape);
        for n in 0..shape.n {
            let mut off = 0;
            for &v in xs {
                let t = self.value(v);
                for ch in 0..t.shape().c {
                    value.plane_mut(n, off + ch).copy_from_slice(t.plane(n, ch));
                }
                off += t.shape().c;
            }
        }
        let tracked = self.tracked(xs);
        self.push("concat_channels", value, Op::Concat(xs.to_vec()), tracked)
    }

    /// Channels `start..start+len`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if len == 0 || start + len > s.c {
            return Err(mismatch("slice_channels", "channels", s.c, start + len));
        }
        let mut value = Tensor::zeros(Shape::new(s.n, len, s.h, s.w));
        for n in 0..s.n {
            for c in 0..len {
                value.plane_mut(n, c).copy_from_slice(self.value(x).plane(n, start + c));
            }
        }
        let tracked = self.tracked(&[x]);
        self.push("slice_channels", value, Op::Slice { x, start }, tracked)
    }

    /// Spatial crop to `h×w` starting at `(top, left)`.
    pub fn crop(&mut self, x: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        let s = self.shape(x);
        if top + h > s.h {
            return Err(mismatch("crop", "height", s.h, top + h));
        }
        if left + w > s.w {
            return Err(mismatch("crop", "width", s.w, left + w));
        }
        let mut value = Tensor::zeros(Shape::new(s.n, s.c, h, w));
        for n in 0..s.n {
            for c in 0..s.c {
                let src = self.value(x).plane(n, c);
                let dst = value.plane_mut(n, c);
                for y in 0..h {
                    dst[y * w..(y + 1) * w].copy_from_slice(&src[(top + y) * s.w + left..(top + y) * s.w + left + w]);
                }
            }
        }
        let tracked = self.tracked(&[x]);
        self.push("crop", value, Op::Crop { x, top, left }, tracked)
    }

    /// Per-pixel softmax over the channel axis.
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).c == 0 {
            return Err(Error::invalid("softmax_channels", "needs at least one channel"));
        }
        let value = kernels::softmax_forward(self.value(x));
        let tracked = self.tracked(&[x]);
        self.push("softmax_channels", value, Op::Softmax(x), tracked)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::invalid(op, format!("shape {sa} does not match {sb}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let tracked = self.tracked(&[a, b]);
        self.push("add", value, Op::Add(a, b), tracked)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let mut value = self.value(a).clone();
        for (x, &y) in value.data_mut().iter_mut().zip(self.value(b).data()) {
            *x = *x * y;
        }
        let tracked = self.tracked(&[a, b]);
        self.push("mul", value, Op::Mul(a, b), tracked)
    }

    /// Multiplies every channel of `x` by the single-channel `map`.
    pub fn mul_map(&mut self, x: Var, map: Var) -> Result<Var> {
        let (xs, ms) = (self.shape(x), self.shape(map));
        if ms.c != 1 || (xs.n, xs.h, xs.w) != (ms.n, ms.h, ms.w) {
            return Err(Error::invalid("mul_map", format!("map {ms} cannot scale {xs}")));
        }
        let mut value = self.value(x).clone();
        for n in 0..xs.n {
            let m = self.value(map).plane(n, 0).to_vec();
            for c in 0..xs.c {
                for (v, &w) in value.plane_mut(n, c).iter_mut().zip(&m) {
                    *v = *v * w;
                }
            }
        }
        let tracked = self.tracked(&[x, map]);
        self.push("mul_map", value, Op::MulMap { x, map }, tracked)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum());
        let tracked = self.tracked(&[x]);
        self.push("sum", value, Op::Sum(x), tracked)
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let value = self.value(x).map(|v| v * factor);
        let tracked = self.tracked(&[x]);
        self.push("scale", value, Op::Scale(x, factor), tracked)
    }

    /// `−Σ [w⁺·t·log p + (1−t)·log(1−p)] / N` with `p` clamped to `[ε, 1−ε]`.
    pub fn weighted_cross_entropy(&mut self, pred: Var, target: &Tensor<T>, positive_weight: T) -> Result<Var> {
        let ps = self.shape(pred);
        if ps != target.shape() {
            return Err(Error::invalid(
                "weighted_cross_entropy",
                format!("prediction {ps} does not match target {}", target.shape()),
            ));
        }
        let (loss, grad) = kernels::weighted_ce(self.value(pred), target, positive_weight, T::of(crate::CE_EPS));
        let tracked = self.tracked(&[pred]);
        self.push(
            "weighted_cross_entropy",
            Tensor::scalar(loss),
            Op::WeightedCe { pred, grad },
            tracked,
        )
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if !root.tracked {
            return Err(Error::Untracked);
        }
        if root.value.shape().len() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be a scalar, got {}", root.value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(root.value.shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Reverse pass that also adds parameter gradients into `store`.
    /// Calling it repeatedly keeps accumulating.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let grads = self.backward(loss)?;
        for (&id, &v) in &self.params {
            if let Some(g) = grads.get(v) {
                store.get_mut(id).grad.add_assign(g);
            }
        }
        Ok(grads)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].tracked {
            return;
        }
        match grads[v.0].as_mut() {
            Some(acc) => acc.add_assign(&g),
            None => grads[v.0] = Some(g),
        }
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, spec } => {
                let (dx, dw, db) = kernels::conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    *spec,
                    g,
                    self.requires_grad(*x),
                    self.requires_grad(*w),
                    b.is_some_and(|b| self.requires_grad(b)),
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, *w, dw);
                }
                if let (Some(b), Some(db)) = (b, db) {
                    let shape = self.shape(*b);
                    self.accumulate(grads, *b, db.reshape(shape).expect("bias length checked in forward"));
                }
            }
            Op::Relu(x) => {
                let mut d = g.clone();
                for (dv, &y) in d.data_mut().iter_mut().zip(node.value.data()) {
                    if y <= T::zero() {
                        *dv = T::zero();
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::MaxPool { x, arg } => {
                let d = kernels::max_pool_backward(self.shape(*x), arg, g);
                self.accumulate(grads, *x, d);
            }
            Op::Resize(x) => {
                let d = kernels::resize_backward(self.shape(*x), g);
                self.accumulate(grads, *x, d);
            }
            Op::Concat(xs) => {
                let mut off = 0;
                for &v in xs {
                    let s = self.shape(v);
                    if self.requires_grad(v) {
                        let mut d = Tensor::zeros(s);
                        for n in 0..s.n {
                            for c in 0..s.c {
                                d.plane_mut(n, c).copy_from_slice(g.plane(n, off + c));
                            }
                        }
                        self.accumulate(grads, v, d);
                    }
                    off += s.c;
                }
            }
            Op::Slice { x, start } => {
                let s = self.shape(*x);
                let mut d = Tensor::zeros(s);
                for n in 0..s.n {
                    for c in 0..g.shape().c {
                        d.plane_mut(n, start + c).copy_from_slice(g.plane(n, c));
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::Crop { x, top, left } => {
                let s = self.shape(*x);
                let gs = g.shape();
                let mut d = Tensor::zeros(s);
                for n in 0..s.n {
                    for c in 0..s.c {
                        let src = g.plane(n, c);
                        let dst = d.plane_mut(n, c);
                        for y in 0..gs.h {
                            let o = (top + y) * s.w + left;
                            dst[o..o + gs.w].copy_from_slice(&src[y * gs.w..(y + 1) * gs.w]);
                        }
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::Softmax(x) => {
                let d = kernels::softmax_backward(&node.value, g);
                self.accumulate(grads, *x, d);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    let mut d = g.clone();
                    for (dv, &y) in d.data_mut().iter_mut().zip(self.value(*b).data()) {
                        *dv = *dv * y;
                    }
                    self.accumulate(grads, *a, d);
                }
                if self.requires_grad(*b) {
                    let mut d = g.clone();
                    for (dv, &y) in d.data_mut().iter_mut().zip(self.value(*a).data()) {
                        *dv = *dv * y;
                    }
                    self.accumulate(grads, *b, d);
                }
            }
            Op::MulMap { x, map } => {
                let xs = self.shape(*x);
                if self.requires_grad(*x) {
                    let mut d = g.clone();
                    for n in 0..xs.n {
                        let m = self.value(*map).plane(n, 0);
                        for c in 0..xs.c {
                            for (dv, &w) in d.plane_mut(n, c).iter_mut().zip(m) {
                                *dv = *dv * w;
                            }
                        }
                    }
                    self.accumulate(grads, *x, d);
                }
                if self.requires_grad(*map) {
                    let mut d = Tensor::zeros(self.shape(*map));
                    for n in 0..xs.n {
                        for c in 0..xs.c {
                            let xv = self.value(*x).plane(n, c);
                            let gv = g.plane(n, c);
                            for ((dv, &a), &b) in d.plane_mut(n, 0).iter_mut().zip(xv).zip(gv) {
                                *dv = *dv + a * b;
                            }
                        }
                    }
                    self.accumulate(grads, *map, d);
                }
            }
            Op::Sum(x) => {
                let d = Tensor::full(self.shape(*x), g.item());
                self.accumulate(grads, *x, d);
            }
            Op::Scale(x, f) => {
                let f = *f;
                self.accumulate(grads, *x, g.map(|v| v * f));
            }
            Op::WeightedCe { pred, grad } => {
                let s = g.item();
                self.accumulate(grads, *pred, grad.map(|v| v * s));
            }
        }
    }
}
