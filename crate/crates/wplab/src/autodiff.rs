//! Recorded-operation reverse-mode differentiation.
//!
//! A [`Tape`] owns an arena of value nodes. Every operation computes its
//! output eagerly, validates finiteness, and records enough structure to
//! replay the chain rule in reverse. [`Tape::backward`] walks the nodes in
//! reverse construction order (a valid reverse topological order, since an
//! op's inputs always precede it) and produces [`Gradients`] for every node
//! reachable from a `requires_grad` leaf.
//!
//! The same tape code runs at `f32` (production) and `f64` (the
//! finite-difference oracle in [`finite_diff_check`]).

use crate::error::{Error, Result};
use crate::tensor::{self, Real};

/// Handle to a node on a [`Tape`]. Only valid for the tape that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    /// out[t,:] = table[ids[t],:]
    Embed { table: NodeId, ids: Vec<usize> },
    /// out = a[m,k] · b[k,n]
    Matmul { a: NodeId, b: NodeId },
    /// out = a[m,k] · b[n,k]ᵀ
    MatmulNt { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    MulElem { a: NodeId, b: NodeId },
    Scale { a: NodeId, c: f64 },
    SliceCols { a: NodeId, start: usize, len: usize },
    SliceRows { a: NodeId, start: usize, len: usize },
    Row { a: NodeId, idx: usize },
    RmsNorm { x: NodeId, gain: NodeId },
    Rope { x: NodeId, head_dim: usize },
    SoftmaxMasked { x: NodeId, mask: Vec<T> },
    Silu { x: NodeId },
    Dot { a: NodeId, b: NodeId },
    Cosine { a: NodeId, b: NodeId },
    Sum { a: NodeId },
    /// Mean negative log-likelihood over masked positions.
    CrossEntropyMasked { logits: NodeId, targets: Vec<usize>, mask: Vec<bool> },
}

#[derive(Debug, Clone)]
struct Node<T> {
    data: Vec<T>,
    rows: usize,
    cols: usize,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients keyed by node identity. Nodes that do not participate in the
/// differentiated computation are absent (treated as zero).
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Vec<T>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

/// Ordered record of primitive ops with their values.
#[derive(Debug, Default)]
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[T] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        (self.nodes[id.0].rows, self.nodes[id.0].cols)
    }

    /// Scalar value of a 1-element node.
    pub fn scalar(&self, id: NodeId) -> T {
        debug_assert_eq!(self.nodes[id.0].data.len(), 1);
        self.nodes[id.0].data[0]
    }

    fn push(&mut self, data: Vec<T>, rows: usize, cols: usize, op: Op<T>, op_name: &'static str) -> Result<NodeId> {
        debug_assert_eq!(data.len(), rows * cols);
        tensor::check_finite(&data, op_name)?;
        let needs_grad = match &op {
            Op::Leaf => false,
            op => self.op_inputs(op).iter().any(|id| self.nodes[id.0].needs_grad),
        };
        self.nodes.push(Node { data, rows, cols, op, needs_grad });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn op_inputs(&self, op: &Op<T>) -> Vec<NodeId> {
        match op {
            Op::Leaf => vec![],
            Op::Embed { table, .. } => vec![*table],
            Op::Matmul { a, b } | Op::MatmulNt { a, b } | Op::Add { a, b } | Op::MulElem { a, b } => vec![*a, *b],
            Op::Scale { a, .. } | Op::SliceCols { a, .. } | Op::SliceRows { a, .. } | Op::Row { a, .. } => vec![*a],
            Op::RmsNorm { x, gain } => vec![*x, *gain],
            Op::Rope { x, .. } | Op::Silu { x } | Op::SoftmaxMasked { x, .. } => vec![*x],
            Op::Dot { a, b } | Op::Cosine { a, b } => vec![*a, *b],
            Op::Sum { a } => vec![*a],
            Op::CrossEntropyMasked { logits, .. } => vec![*logits],
        }
    }

    /// Register a leaf value. `requires_grad` marks it as a differentiation
    /// target; gradients flow only through nodes reachable from such leaves.
    pub fn leaf(&mut self, data: Vec<T>, rows: usize, cols: usize, requires_grad: bool) -> Result<NodeId> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "leaf",
                detail: format!("{}x{} vs {} values", rows, cols, data.len()),
            });
        }
        let id = self.push(data, rows, cols, Op::Leaf, "leaf")?;
        self.nodes[id.0].needs_grad = requires_grad;
        Ok(id)
    }

    pub fn embed(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (vocab, d) = self.shape(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &t in ids {
            if t >= vocab {
                return Err(Error::TokenOutOfRange { token: t, vocab });
            }
            out.extend_from_slice(&self.nodes[table.0].data[t * d..(t + 1) * d]);
        }
        self.push(out, ids.len(), d, Op::Embed { table, ids: ids.to_vec() }, "embed")
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, ka) = self.shape(a);
        let (kb, n) = self.shape(b);
        if ka != kb {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                detail: format!("{}x{} · {}x{}", m, ka, kb, n),
            });
        }
        let out = tensor::matmul(self.value(a), self.value(b), m, ka, n);
        self.push(out, m, n, Op::Matmul { a, b }, "matmul")
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, ka) = self.shape(a);
        let (n, kb) = self.shape(b);
        if ka != kb {
            return Err(Error::ShapeMismatch {
                op: "matmul_nt",
                detail: format!("{}x{} · ({}x{})ᵀ", m, ka, n, kb),
            });
        }
        let out = tensor::matmul_nt(self.value(a), self.value(b), m, ka, n);
        self.push(out, m, n, Op::MatmulNt { a, b }, "matmul_nt")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let (r, c) = self.shape(a);
        let out: Vec<T> = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        self.push(out, r, c, Op::Add { a, b }, "add")
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul_elem")?;
        let (r, c) = self.shape(a);
        let out: Vec<T> = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        self.push(out, r, c, Op::MulElem { a, b }, "mul_elem")
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let (r, cols) = self.shape(a);
        let out: Vec<T> = self.value(a).iter().map(|&x| T::of_f64(x.as_f64() * c)).collect();
        self.push(out, r, cols, Op::Scale { a, c }, "scale")
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        if start + len > c {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                detail: format!("cols {}..{} of {}x{}", start, start + len, r, c),
            });
        }
        let src = self.value(a);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        self.push(out, r, len, Op::SliceCols { a, start, len }, "slice_cols")
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        if start + len > r {
            return Err(Error::ShapeMismatch {
                op: "slice_rows",
                detail: format!("rows {}..{} of {}x{}", start, start + len, r, c),
            });
        }
        let out = self.value(a)[start * c..(start + len) * c].to_vec();
        self.push(out, len, c, Op::SliceRows { a, start, len }, "slice_rows")
    }

    /// Extract one row as a `1 x cols` node.
    pub fn row(&mut self, a: NodeId, idx: usize) -> Result<NodeId> {
        let (r, c) = self.shape(a);
        if idx >= r {
            return Err(Error::ShapeMismatch {
                op: "row",
                detail: format!("row {} of {}x{}", idx, r, c),
            });
        }
        let out = self.value(a)[idx * c..(idx + 1) * c].to_vec();
        self.push(out, 1, c, Op::Row { a, idx }, "row")
    }

    pub fn rmsnorm(&mut self, x: NodeId, gain: NodeId) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        let (gr, gc) = self.shape(gain);
        if gr * gc != c {
            return Err(Error::ShapeMismatch {
                op: "rmsnorm",
                detail: format!("gain len {} vs cols {}", gr * gc, c),
            });
        }
        let out = tensor::rmsnorm_rows(self.value(x), self.value(gain), r, c);
        self.push(out, r, c, Op::RmsNorm { x, gain }, "rmsnorm")
    }

    pub fn rope(&mut self, x: NodeId, head_dim: usize) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        let out = tensor::rope_rows(self.value(x), r, c, head_dim)?;
        self.push(out, r, c, Op::Rope { x, head_dim }, "rope")
    }

    /// Row-wise softmax with an additive mask (entries 0 or -inf).
    pub fn softmax_masked(&mut self, x: NodeId, mask: Vec<T>) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        if mask.len() != r * c {
            return Err(Error::ShapeMismatch {
                op: "softmax_masked",
                detail: format!("mask len {} vs {}x{}", mask.len(), r, c),
            });
        }
        let out = tensor::softmax_rows(self.value(x), &mask, r, c)?;
        self.push(out, r, c, Op::SoftmaxMasked { x, mask }, "softmax_masked")
    }

    pub fn silu(&mut self, x: NodeId) -> Result<NodeId> {
        let (r, c) = self.shape(x);
        let out = tensor::silu(self.value(x));
        self.push(out, r, c, Op::Silu { x }, "silu")
    }

    /// Flat inner product of two same-length nodes; scalar output.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_len(a, b, "dot")?;
        let out = vec![T::of_f64(tensor::dot(self.value(a), self.value(b)))];
        self.push(out, 1, 1, Op::Dot { a, b }, "dot")
    }

    /// Cosine similarity of two same-length nodes; scalar output.
    pub fn cosine(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_len(a, b, "cosine")?;
        let out = vec![T::of_f64(tensor::cosine(self.value(a), self.value(b), "cosine")?)];
        self.push(out, 1, 1, Op::Cosine { a, b }, "cosine")
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let out = vec![T::of_f64(self.value(a).iter().map(|v| v.as_f64()).sum())];
        self.push(out, 1, 1, Op::Sum { a }, "sum")
    }

    /// Mean cross-entropy of `logits[t,:]` against `targets[t]` over positions
    /// where `mask[t]` is true.
    pub fn cross_entropy_masked(&mut self, logits: NodeId, targets: &[usize], mask: &[bool]) -> Result<NodeId> {
        let (r, c) = self.shape(logits);
        if targets.len() != r || mask.len() != r {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy_masked",
                detail: format!("{} rows vs {} targets / {} mask", r, targets.len(), mask.len()),
            });
        }
        let n_active = mask.iter().filter(|&&m| m).count();
        if n_active == 0 {
            return Err(Error::EmptyInput("cross_entropy_masked: no active positions"));
        }
        let data = self.value(logits);
        let mut loss = 0.0f64;
        for t in 0..r {
            if !mask[t] {
                continue;
            }
            if targets[t] >= c {
                return Err(Error::TokenOutOfRange { token: targets[t], vocab: c });
            }
            let row = &data[t * c..(t + 1) * c];
            let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let lse: f64 = row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln() + max;
            loss += lse - row[targets[t]].as_f64();
        }
        let out = vec![T::of_f64(loss / n_active as f64)];
        self.push(
            out,
            1,
            1,
            Op::CrossEntropyMasked { logits, targets: targets.to_vec(), mask: mask.to_vec() },
            "cross_entropy_masked",
        )
    }

    fn same_shape(&self, a: NodeId, b: NodeId, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: "elementwise",
                detail: format!("{op}: {:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        Ok(())
    }

    fn same_len(&self, a: NodeId, b: NodeId, op: &'static str) -> Result<()> {
        if self.value(a).len() != self.value(b).len() {
            return Err(Error::ShapeMismatch {
                op: "reduction",
                detail: format!("{op}: {} vs {} values", self.value(a).len(), self.value(b).len()),
            });
        }
        Ok(())
    }

    /// Reverse pass from a scalar output. Pure: replaying twice on the same
    /// tape yields bit-identical gradients.
    pub fn backward(&self, out: NodeId) -> Result<Gradients<T>> {
        if self.nodes[out.0].data.len() != 1 {
            return Err(Error::NonScalarOutput { len: self.nodes[out.0].data.len() });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(vec![T::one()]);

        for idx in (0..=out.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            if self.nodes[idx].needs_grad || idx == out.0 {
                self.backprop_op(idx, &dy, &mut grads);
            }
            grads[idx] = Some(dy);
        }

        // Drop gradients of nodes that do not require them; they never
        // participated.
        for (i, g) in grads.iter_mut().enumerate() {
            if !self.nodes[i].needs_grad && i != out.0 {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], id: NodeId, delta: &[T]) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi = *gi + *di;
                }
            }
            None => grads[id.0] = Some(delta.to_vec()),
        }
    }

    fn backprop_op(&self, idx: usize, dy: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Embed { table, ids } => {
                let (vocab, d) = self.shape(*table);
                let mut dt = vec![T::default(); vocab * d];
                for (t, &tok) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[tok * d + j] = dt[tok * d + j] + dy[t * d + j];
                    }
                }
                self.accumulate(grads, *table, &dt);
            }
            Op::Matmul { a, b } => {
                let (m, k) = self.shape(*a);
                let (_, n) = self.shape(*b);
                let da = tensor::matmul_nt(dy, self.value(*b), m, n, k);
                self.accumulate(grads, *a, &da);
                let db = tensor::matmul_tn(self.value(*a), dy, m, k, n);
                self.accumulate(grads, *b, &db);
            }
            Op::MatmulNt { a, b } => {
                let (m, k) = self.shape(*a);
                let (n, _) = self.shape(*b);
                let da = tensor::matmul(dy, self.value(*b), m, n, k);
                self.accumulate(grads, *a, &da);
                let db = tensor::matmul_tn(dy, self.value(*a), m, n, k);
                self.accumulate(grads, *b, &db);
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, dy);
                self.accumulate(grads, *b, dy);
            }
            Op::MulElem { a, b } => {
                let da: Vec<T> = dy.iter().zip(self.value(*b)).map(|(&d, &v)| d * v).collect();
                self.accumulate(grads, *a, &da);
                let db: Vec<T> = dy.iter().zip(self.value(*a)).map(|(&d, &v)| d * v).collect();
                self.accumulate(grads, *b, &db);
            }
            Op::Scale { a, c } => {
                let da: Vec<T> = dy.iter().map(|&d| T::of_f64(d.as_f64() * c)).collect();
                self.accumulate(grads, *a, &da);
            }
            Op::SliceCols { a, start, len } => {
                let (r, c) = self.shape(*a);
                let mut da = vec![T::default(); r * c];
                for i in 0..r {
                    for j in 0..*len {
                        da[i * c + start + j] = dy[i * len + j];
                    }
                }
                self.accumulate(grads, *a, &da);
            }
            Op::SliceRows { a, start, len } => {
                let (r, c) = self.shape(*a);
                let mut da = vec![T::default(); r * c];
                da[start * c..(start + len) * c].copy_from_slice(dy);
                self.accumulate(grads, *a, &da);
            }
            Op::Row { a, idx: row } => {
                let (r, c) = self.shape(*a);
                let mut da = vec![T::default(); r * c];
                da[row * c..(row + 1) * c].copy_from_slice(dy);
                self.accumulate(grads, *a, &da);
            }
            Op::RmsNorm { x, gain } => {
                let (r, c) = self.shape(*x);
                let xv = self.value(*x);
                let gv = self.value(*gain);
                let mut dx = vec![T::default(); r * c];
                let mut dg = vec![0.0f64; c];
                for i in 0..r {
                    let row = &xv[i * c..(i + 1) * c];
                    let ms: f64 = row.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>() / c as f64;
                    let inv = 1.0 / (ms + tensor::RMS_EPS).sqrt();
                    // s = sum_j dy_j * gain_j * x_j
                    let mut s = 0.0f64;
                    for j in 0..c {
                        let d = dy[i * c + j].as_f64();
                        s += d * gv[j].as_f64() * row[j].as_f64();
                        dg[j] += d * row[j].as_f64() * inv;
                    }
                    for j in 0..c {
                        let d = dy[i * c + j].as_f64();
                        let v = inv * d * gv[j].as_f64() - inv.powi(3) * row[j].as_f64() * s / c as f64;
                        dx[i * c + j] = T::of_f64(v);
                    }
                }
                self.accumulate(grads, *x, &dx);
                let dg: Vec<T> = dg.into_iter().map(T::of_f64).collect();
                self.accumulate(grads, *gain, &dg);
            }
            Op::Rope { x, head_dim } => {
                // Inverse rotation: transpose of a rotation rotates by -theta.
                let (r, c) = self.shape(*x);
                let mut dx = vec![T::default(); r * c];
                for pos in 0..r {
                    for block in 0..c / head_dim {
                        let base = pos * c + block * head_dim;
                        for pair in 0..head_dim / 2 {
                            let theta =
                                pos as f64 / tensor::ROPE_BASE.powf(2.0 * pair as f64 / *head_dim as f64);
                            let (sin, cos) = theta.sin_cos();
                            let d0 = dy[base + 2 * pair].as_f64();
                            let d1 = dy[base + 2 * pair + 1].as_f64();
                            dx[base + 2 * pair] = T::of_f64(d0 * cos + d1 * sin);
                            dx[base + 2 * pair + 1] = T::of_f64(-d0 * sin + d1 * cos);
                        }
                    }
                }
                self.accumulate(grads, *x, &dx);
            }
            Op::SoftmaxMasked { x, mask } => {
                let (r, c) = self.shape(*x);
                let p = &node.data;
                let mut dx = vec![T::default(); r * c];
                for i in 0..r {
                    let mut s = 0.0f64;
                    for j in 0..c {
                        s += dy[i * c + j].as_f64() * p[i * c + j].as_f64();
                    }
                    for j in 0..c {
                        if mask[i * c + j].as_f64().is_finite() {
                            let v = p[i * c + j].as_f64() * (dy[i * c + j].as_f64() - s);
                            dx[i * c + j] = T::of_f64(v);
                        }
                    }
                }
                self.accumulate(grads, *x, &dx);
            }
            Op::Silu { x } => {
                let dx: Vec<T> = dy
                    .iter()
                    .zip(self.value(*x))
                    .map(|(&d, &v)| {
                        let s = tensor::sigmoid_scalar(v.as_f64());
                        T::of_f64(d.as_f64() * (s + v.as_f64() * s * (1.0 - s)))
                    })
                    .collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::Dot { a, b } => {
                let s = dy[0].as_f64();
                let da: Vec<T> = self.value(*b).iter().map(|&v| T::of_f64(s * v.as_f64())).collect();
                self.accumulate(grads, *a, &da);
                let db: Vec<T> = self.value(*a).iter().map(|&v| T::of_f64(s * v.as_f64())).collect();
                self.accumulate(grads, *b, &db);
            }
            Op::Cosine { a, b } => {
                let s = dy[0].as_f64();
                let av = self.value(*a);
                let bv = self.value(*b);
                let na = tensor::norm2(av);
                let nb = tensor::norm2(bv);
                let cos = node.data[0].as_f64();
                let da: Vec<T> = av
                    .iter()
                    .zip(bv)
                    .map(|(&x, &y)| T::of_f64(s * (y.as_f64() / (na * nb) - cos * x.as_f64() / (na * na))))
                    .collect();
                self.accumulate(grads, *a, &da);
                let db: Vec<T> = av
                    .iter()
                    .zip(bv)
                    .map(|(&x, &y)| T::of_f64(s * (x.as_f64() / (na * nb) - cos * y.as_f64() / (nb * nb))))
                    .collect();
                self.accumulate(grads, *b, &db);
            }
            Op::Sum { a } => {
                let s = dy[0];
                let da = vec![s; self.value(*a).len()];
                self.accumulate(grads, *a, &da);
            }
            Op::CrossEntropyMasked { logits, targets, mask } => {
                let (r, c) = self.shape(*logits);
                let lv = self.value(*logits);
                let n_active = mask.iter().filter(|&&m| m).count() as f64;
                let s = dy[0].as_f64() / n_active;
                let mut dl = vec![T::default(); r * c];
                for t in 0..r {
                    if !mask[t] {
                        continue;
                    }
                    let row = &lv[t * c..(t + 1) * c];
                    let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    for j in 0..c {
                        let p = exps[j] / sum;
                        let delta = if j == targets[t] { 1.0 } else { 0.0 };
                        dl[t * c + j] = T::of_f64(s * (p - delta));
                    }
                }
                self.accumulate(grads, *logits, &dl);
            }
        }
    }
}

/// Relative-error comparison of analytic gradients against central finite
/// differences of `f`, evaluated in the caller's precision (use `f64` for
/// acceptance checks).
///
/// The error is `max_i |fd_i - ad_i|` normalized by the largest gradient
/// magnitude across all parameters, so near-zero entries do not blow up the
/// ratio. Errors if `f` returns a non-finite value.
pub fn finite_diff_check<F>(
    mut f: F,
    params: &[Vec<f64>],
    analytic: &[Vec<f64>],
    step: f64,
) -> Result<f64>
where
    F: FnMut(&[Vec<f64>]) -> Result<f64>,
{
    assert_eq!(params.len(), analytic.len(), "one gradient buffer per parameter tensor");
    let mut work: Vec<Vec<f64>> = params.to_vec();
    let mut max_abs_diff = 0.0f64;
    let mut scale = 0.0f64;
    for g in analytic {
        for &v in g {
            scale = scale.max(v.abs());
        }
    }
    for ti in 0..params.len() {
        assert_eq!(params[ti].len(), analytic[ti].len());
        for i in 0..params[ti].len() {
            let orig = work[ti][i];
            work[ti][i] = orig + step;
            let f_plus = f(&work)?;
            work[ti][i] = orig - step;
            let f_minus = f(&work)?;
            work[ti][i] = orig;
            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(Error::NonFinite { op: "finite_diff_check" });
            }
            let fd = (f_plus - f_minus) / (2.0 * step);
            scale = scale.max(fd.abs());
            max_abs_diff = max_abs_diff.max((fd - analytic[ti][i]).abs());
        }
    }
    Ok(max_abs_diff / scale.max(1e-12))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape: Tape<f32> = Tape::new();
        let x = tape.leaf(vec![1.0, -2.0, 3.0], 1, 3, true).unwrap();
        let s = tape.sum(x).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_dot_xx() {
        // f = <x,x> at x=[1,2] has gradient [2,4].
        let mut tape: Tape<f32> = Tape::new();
        let x = tape.leaf(vec![1.0, 2.0], 1, 2, true).unwrap();
        let s = tape.dot(x, x).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape: Tape<f32> = Tape::new();
        let x = tape.leaf(vec![1.0, 2.0], 1, 2, true).unwrap();
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn non_participating_leaf_has_no_gradient() {
        let mut tape: Tape<f32> = Tape::new();
        let x = tape.leaf(vec![1.0, 2.0], 1, 2, true).unwrap();
        let unused = tape.leaf(vec![5.0], 1, 1, true).unwrap();
        let frozen = tape.leaf(vec![3.0, 4.0], 1, 2, false).unwrap();
        let y = tape.mul_elem(x, frozen).unwrap();
        let s = tape.sum(y).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[3.0, 4.0]);
        assert!(grads.get(unused).is_none());
        assert!(grads.get(frozen).is_none());
    }

    #[test]
    fn replaying_backward_is_bit_identical() {
        let mut tape: Tape<f32> = Tape::new();
        let x = tape.leaf(vec![0.3, -0.7, 1.1, 0.2], 2, 2, true).unwrap();
        let g = tape.leaf(vec![1.0, 1.0], 1, 2, true).unwrap();
        let n = tape.rmsnorm(x, g).unwrap();
        let s = tape.silu(n).unwrap();
        let out = tape.sum(s).unwrap();
        let g1 = tape.backward(out).unwrap();
        let g2 = tape.backward(out).unwrap();
        assert_eq!(g1.get(x).unwrap(), g2.get(x).unwrap());
        assert_eq!(g1.get(g).unwrap(), g2.get(g).unwrap());
    }

    /// Finite-difference check for every primitive on random-ish inputs.
    #[test]
    fn primitives_match_finite_differences() {
        // Build a computation exercising each op, in f64, and compare
        // backward() against central differences at 1e-4 relative.
        let seed_vals: Vec<f64> = (0..24).map(|i| ((i * 37 + 11) % 17) as f64 / 17.0 - 0.45).collect();
        let gain_vals: Vec<f64> = (0..4).map(|i| 1.0 + 0.1 * i as f64).collect();
        let table_vals: Vec<f64> = (0..20).map(|i| ((i * 13 + 5) % 23) as f64 / 23.0 - 0.5).collect();

        let build = |params: &[Vec<f64>]| -> crate::error::Result<(Tape<f64>, NodeId, Vec<NodeId>)> {
            let mut tape: Tape<f64> = Tape::new();
            let x = tape.leaf(params[0].clone(), 6, 4, true)?;
            let gain = tape.leaf(params[1].clone(), 1, 4, true)?;
            let table = tape.leaf(params[2].clone(), 5, 4, true)?;
            let emb = tape.embed(table, &[0, 2, 4, 1, 3, 2])?;
            let xe = tape.add(x, emb)?;
            let n = tape.rmsnorm(xe, gain)?;
            let r = tape.rope(n, 4)?;
            let q = tape.slice_cols(r, 0, 2)?;
            let k = tape.slice_cols(r, 2, 2)?;
            let scores = tape.matmul_nt(q, k)?;
            let scaled = tape.scale(scores, 0.7)?;
            let p = tape.softmax_masked(scaled, tensor::causal_mask(6, 6))?;
            let v = tape.slice_rows(xe, 0, 6)?;
            let o = tape.matmul(p, v)?;
            let sil = tape.silu(o)?;
            let m = tape.mul_elem(sil, xe)?;
            let row = tape.row(m, 5)?;
            let target = tape.leaf(vec![0.5, -0.5, 0.25, 1.0], 1, 4, false)?;
            let c = tape.cosine(row, target)?;
            let d = tape.dot(row, target)?;
            let combined = tape.add(c, d)?;
            let out = tape.sum(combined)?;
            Ok((tape, out, vec![x, gain, table]))
        };

        let params = vec![seed_vals, gain_vals, table_vals];
        let (tape, out, ids) = build(&params).unwrap();
        let grads = tape.backward(out).unwrap();
        let analytic: Vec<Vec<f64>> = ids.iter().map(|&id| grads.get(id).unwrap().to_vec()).collect();

        let err = finite_diff_check(
            |p| {
                let (tape, out, _) = build(p)?;
                Ok(tape.scalar(out))
            },
            &params,
            &analytic,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn cross_entropy_matches_finite_differences() {
        let logits: Vec<f64> = (0..15).map(|i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.5).collect();
        let targets = [2usize, 0, 4];
        let mask = [true, false, true];
        let build = |params: &[Vec<f64>]| -> crate::error::Result<(Tape<f64>, NodeId, NodeId)> {
            let mut tape: Tape<f64> = Tape::new();
            let l = tape.leaf(params[0].clone(), 3, 5, true)?;
            let loss = tape.cross_entropy_masked(l, &targets, &mask)?;
            Ok((tape, loss, l))
        };
        let params = vec![logits];
        let (tape, loss, l) = build(&params).unwrap();
        let grads = tape.backward(loss).unwrap();
        let analytic = vec![grads.get(l).unwrap().to_vec()];
        let err = finite_diff_check(
            |p| {
                let (tape, loss, _) = build(p)?;
                Ok(tape.scalar(loss))
            },
            &params,
            &analytic,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "cross entropy gradient error {err}");
    }

    #[test]
    fn finite_diff_quadratic_is_nearly_exact() {
        // f(x) = sum(x^2): central differences are exact for quadratics.
        let params = vec![vec![0.3f64, -1.2, 2.5]];
        let analytic = vec![params[0].iter().map(|v| 2.0 * v).collect::<Vec<_>>()];
        let err = finite_diff_check(
            |p| Ok(p[0].iter().map(|v| v * v).sum()),
            &params,
            &analytic,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-6, "quadratic error {err}");
    }

    #[test]
    fn finite_diff_constant_function_is_zero() {
        let params = vec![vec![1.0f64, 2.0]];
        let analytic = vec![vec![0.0, 0.0]];
        let err = finite_diff_check(|_| Ok(42.0), &params, &analytic, 1e-3).unwrap();
        assert_eq!(err, 0.0);
    }
}
