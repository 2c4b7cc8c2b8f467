use rand::Rng;

use super::tensor::{log_sum_exp, matvec, softmax, Tensor};

/// Index of a value in the tape arena.
pub type ValueId = usize;

/// One recorded operation. The output id is stored alongside in the op list.
#[derive(Debug, Clone)]
enum Op {
    /// out = W @ x, W: [m, n], x: [n]
    MatVec { w: ValueId, x: ValueId },
    /// out = a + b (elementwise, same shape)
    Add { a: ValueId, b: ValueId },
    /// out = a * b (elementwise, same shape)
    Mul { a: ValueId, b: ValueId },
    /// out = sum of inputs (same shape)
    AddN { inputs: Vec<ValueId> },
    /// out = a ++ b (vector concat)
    Concat { a: ValueId, b: ValueId },
    Tanh { x: ValueId },
    Sigmoid { x: ValueId },
    Relu { x: ValueId },
    /// out = softmax(x), stable
    Softmax { x: ValueId },
    /// out = ln(x) elementwise
    Log { x: ValueId },
    /// out = c * x, constant c
    Scale { x: ValueId, c: f64 },
    /// out = a . b (scalar)
    Dot { a: ValueId, b: ValueId },
    /// out[j] = x . ys[j]
    DotEach { x: ValueId, ys: Vec<ValueId> },
    /// out = sum_j weights[j] * xs[j]
    WeightedSum { weights: ValueId, xs: Vec<ValueId> },
    /// out = table[row, :]
    EmbedRow { table: ValueId, row: usize },
    /// out = x * mask; mask entries are 0 or 1/(1-rate) (inverted dropout)
    Dropout { x: ValueId, mask: Vec<f64> },
    /// out = log_sum_exp(scores) - scores[target]  (= -log softmax(scores)[target])
    LogSoftmaxNll { scores: ValueId, target: usize },
}

/// Reverse-mode gradient tape.
///
/// Values are immutable once recorded; `backward` replays the op list in
/// reverse and accumulates gradients per value. Values that are not on any
/// path to the seeded output never get a gradient entry, so their gradient
/// reads back as exactly zero.
pub struct Tape {
    values: Vec<Tensor>,
    ops: Vec<(Op, ValueId)>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            ops: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn num_values(&self) -> usize {
        self.values.len()
    }

    pub fn num_ops(&self) -> usize {
        self.ops.len()
    }

    /// Register a leaf value (parameter snapshot or constant input).
    pub fn leaf(&mut self, t: Tensor) -> ValueId {
        self.push_value(t)
    }

    pub fn zeros(&mut self, shape: Vec<usize>) -> ValueId {
        self.push_value(Tensor::zeros(shape))
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.values[id]
    }

    fn push_value(&mut self, t: Tensor) -> ValueId {
        let id = self.values.len();
        self.values.push(t);
        self.grads.push(None);
        id
    }

    fn record(&mut self, op: Op, out: Tensor) -> ValueId {
        let id = self.push_value(out);
        self.ops.push((op, id));
        id
    }

    // ── Forward builders ─────────────────────────────────────────────

    pub fn matvec(&mut self, w: ValueId, x: ValueId) -> ValueId {
        let out = matvec(&self.values[w], self.values[x].data());
        self.record(Op::MatVec { w, x }, Tensor::vector(out))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (va, vb) = (&self.values[a], &self.values[b]);
        assert_eq!(va.shape(), vb.shape(), "add: shape mismatch");
        let out: Vec<f64> = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let shape = va.shape().to_vec();
        self.record(Op::Add { a, b }, Tensor::new(shape, out))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (va, vb) = (&self.values[a], &self.values[b]);
        assert_eq!(va.shape(), vb.shape(), "mul: shape mismatch");
        let out: Vec<f64> = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let shape = va.shape().to_vec();
        self.record(Op::Mul { a, b }, Tensor::new(shape, out))
    }

    pub fn add_n(&mut self, inputs: &[ValueId]) -> ValueId {
        assert!(!inputs.is_empty(), "add_n: empty input list");
        let shape = self.values[inputs[0]].shape().to_vec();
        let mut out = vec![0.0; self.values[inputs[0]].len()];
        for &id in inputs {
            assert_eq!(self.values[id].shape(), &shape[..], "add_n: shape mismatch");
            for (o, v) in out.iter_mut().zip(self.values[id].data()) {
                *o += v;
            }
        }
        self.record(
            Op::AddN {
                inputs: inputs.to_vec(),
            },
            Tensor::new(shape, out),
        )
    }

    pub fn concat(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let mut out = self.values[a].data().to_vec();
        out.extend_from_slice(self.values[b].data());
        self.record(Op::Concat { a, b }, Tensor::vector(out))
    }

    pub fn tanh(&mut self, x: ValueId) -> ValueId {
        let out: Vec<f64> = self.values[x].data().iter().map(|v| v.tanh()).collect();
        let shape = self.values[x].shape().to_vec();
        self.record(Op::Tanh { x }, Tensor::new(shape, out))
    }

    pub fn sigmoid(&mut self, x: ValueId) -> ValueId {
        let out: Vec<f64> = self.values[x]
            .data()
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let shape = self.values[x].shape().to_vec();
        self.record(Op::Sigmoid { x }, Tensor::new(shape, out))
    }

    pub fn relu(&mut self, x: ValueId) -> ValueId {
        let out: Vec<f64> = self.values[x].data().iter().map(|v| v.max(0.0)).collect();
        let shape = self.values[x].shape().to_vec();
        self.record(Op::Relu { x }, Tensor::new(shape, out))
    }

    pub fn softmax(&mut self, x: ValueId) -> ValueId {
        let out = softmax(self.values[x].data()).expect("softmax: empty score vector");
        self.record(Op::Softmax { x }, Tensor::vector(out))
    }

    pub fn log(&mut self, x: ValueId) -> ValueId {
        assert!(
            self.values[x].data().iter().all(|v| *v > 0.0),
            "log: non-positive input"
        );
        let out: Vec<f64> = self.values[x].data().iter().map(|v| v.ln()).collect();
        let shape = self.values[x].shape().to_vec();
        self.record(Op::Log { x }, Tensor::new(shape, out))
    }

    pub fn scale(&mut self, x: ValueId, c: f64) -> ValueId {
        let out: Vec<f64> = self.values[x].data().iter().map(|v| c * v).collect();
        let shape = self.values[x].shape().to_vec();
        self.record(Op::Scale { x, c }, Tensor::new(shape, out))
    }

    pub fn dot(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (va, vb) = (&self.values[a], &self.values[b]);
        assert_eq!(va.len(), vb.len(), "dot: length mismatch");
        let s: f64 = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).sum();
        self.record(Op::Dot { a, b }, Tensor::scalar(s))
    }

    pub fn dot_each(&mut self, x: ValueId, ys: &[ValueId]) -> ValueId {
        let xd = self.values[x].data();
        let mut out = Vec::with_capacity(ys.len());
        for &y in ys {
            let yd = self.values[y].data();
            assert_eq!(xd.len(), yd.len(), "dot_each: length mismatch");
            out.push(xd.iter().zip(yd).map(|(a, b)| a * b).sum());
        }
        self.record(
            Op::DotEach {
                x,
                ys: ys.to_vec(),
            },
            Tensor::vector(out),
        )
    }

    pub fn weighted_sum(&mut self, weights: ValueId, xs: &[ValueId]) -> ValueId {
        let w = self.values[weights].data().to_vec();
        assert_eq!(w.len(), xs.len(), "weighted_sum: weight/vector count mismatch");
        assert!(!xs.is_empty(), "weighted_sum: empty vector list");
        let dim = self.values[xs[0]].len();
        let mut out = vec![0.0; dim];
        for (j, &x) in xs.iter().enumerate() {
            let xd = self.values[x].data();
            assert_eq!(xd.len(), dim, "weighted_sum: dim mismatch");
            for (o, v) in out.iter_mut().zip(xd) {
                *o += w[j] * v;
            }
        }
        self.record(
            Op::WeightedSum {
                weights,
                xs: xs.to_vec(),
            },
            Tensor::vector(out),
        )
    }

    pub fn embed_row(&mut self, table: ValueId, row: usize) -> ValueId {
        let t = &self.values[table];
        assert!(row < t.rows(), "embed_row: row {} out of range {}", row, t.rows());
        let out = t.row(row).to_vec();
        self.record(Op::EmbedRow { table, row }, Tensor::vector(out))
    }

    /// Inverted dropout. With `rate == 0` or outside train mode this is the
    /// identity and consumes no randomness.
    pub fn dropout(&mut self, x: ValueId, rate: f64, train: bool, rng: &mut impl Rng) -> ValueId {
        assert!((0.0..1.0).contains(&rate), "dropout: rate {rate} outside [0,1)");
        if !train || rate == 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let n = self.values[x].len();
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        self.dropout_with_mask(x, mask)
    }

    /// Dropout with a caller-supplied mask (entries 0 or 1/keep).
    pub fn dropout_with_mask(&mut self, x: ValueId, mask: Vec<f64>) -> ValueId {
        let xd = self.values[x].data();
        assert_eq!(xd.len(), mask.len(), "dropout: mask length mismatch");
        let out: Vec<f64> = xd.iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = self.values[x].shape().to_vec();
        self.record(Op::Dropout { x, mask }, Tensor::new(shape, out))
    }

    /// Fused `-log softmax(scores)[target]`, numerically stable.
    pub fn log_softmax_nll(&mut self, scores: ValueId, target: usize) -> ValueId {
        let sd = self.values[scores].data();
        assert!(
            target < sd.len(),
            "log_softmax_nll: target {} out of range {}",
            target,
            sd.len()
        );
        let loss = log_sum_exp(sd) - sd[target];
        self.record(Op::LogSoftmaxNll { scores, target }, Tensor::scalar(loss))
    }

    // ── Backward ─────────────────────────────────────────────────────

    fn accumulate(grads: &mut [Option<Vec<f64>>], id: ValueId, add: &[f64]) {
        match &mut grads[id] {
            Some(g) => {
                for (gi, ai) in g.iter_mut().zip(add) {
                    *gi += ai;
                }
            }
            None => grads[id] = Some(add.to_vec()),
        }
    }

    /// Reverse pass from a scalar output, seeding its gradient with 1.
    pub fn backward(&mut self, output: ValueId) {
        assert_eq!(
            self.values[output].len(),
            1,
            "backward: output must be scalar"
        );
        self.grads[output] = Some(vec![1.0]);

        for idx in (0..self.ops.len()).rev() {
            let (op, out) = &self.ops[idx];
            let g = match &self.grads[*out] {
                Some(g) => g.clone(),
                None => continue,
            };
            let values = &self.values;
            let grads = &mut self.grads;
            match op {
                Op::MatVec { w, x } => {
                    let wt = &values[*w];
                    let (m, n) = (wt.rows(), wt.cols());
                    let xd = values[*x].data();
                    let wd = wt.data();
                    let mut dw = vec![0.0; m * n];
                    let mut dx = vec![0.0; n];
                    for i in 0..m {
                        let gi = g[i];
                        for j in 0..n {
                            dw[i * n + j] = gi * xd[j];
                            dx[j] += wd[i * n + j] * gi;
                        }
                    }
                    Self::accumulate(grads, *w, &dw);
                    Self::accumulate(grads, *x, &dx);
                }
                Op::Add { a, b } => {
                    Self::accumulate(grads, *a, &g);
                    Self::accumulate(grads, *b, &g);
                }
                Op::Mul { a, b } => {
                    let da: Vec<f64> =
                        g.iter().zip(values[*b].data()).map(|(gi, bi)| gi * bi).collect();
                    let db: Vec<f64> =
                        g.iter().zip(values[*a].data()).map(|(gi, ai)| gi * ai).collect();
                    Self::accumulate(grads, *a, &da);
                    Self::accumulate(grads, *b, &db);
                }
                Op::AddN { inputs } => {
                    for &id in inputs {
                        Self::accumulate(grads, id, &g);
                    }
                }
                Op::Concat { a, b } => {
                    let la = values[*a].len();
                    Self::accumulate(grads, *a, &g[..la]);
                    Self::accumulate(grads, *b, &g[la..]);
                }
                Op::Tanh { x } => {
                    let y = values[*out].data();
                    let dx: Vec<f64> =
                        g.iter().zip(y).map(|(gi, yi)| gi * (1.0 - yi * yi)).collect();
                    Self::accumulate(grads, *x, &dx);
                }
                Op::Sigmoid { x } => {
                    let y = values[*out].data();
                    let dx: Vec<f64> =
                        g.iter().zip(y).map(|(gi, yi)| gi * yi * (1.0 - yi)).collect();
                    Self::accumulate(grads, *x, &dx);
                }
                Op::Relu { x } => {
                    let xd = values[*x].data();
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(xd)
                        .map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 })
                        .collect();
                    Self::accumulate(grads, *x, &dx);
                }
                Op::Softmax { x } => {
                    let y = values[*out].data();
                    let inner: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                    let dx: Vec<f64> =
                        g.iter().zip(y).map(|(gi, yi)| yi * (gi - inner)).collect();
                    Self::accumulate(grads, *x, &dx);
                }
                Op::Log { x } => {
                    let xd = values[*x].data();
                    let dx: Vec<f64> = g.iter().zip(xd).map(|(gi, xi)| gi / xi).collect();
                    Self::accumulate(grads, *x, &dx);
                }
                Op::Scale { x, c } => {
                    let dx: Vec<f64> = g.iter().map(|gi| gi * c).collect();
                    Self::accumulate(grads, *x, &dx);
                }
                Op::Dot { a, b } => {
                    let g0 = g[0];
                    let da: Vec<f64> = values[*b].data().iter().map(|bi| g0 * bi).collect();
                    let db: Vec<f64> = values[*a].data().iter().map(|ai| g0 * ai).collect();
                    Self::accumulate(grads, *a, &da);
                    Self::accumulate(grads, *b, &db);
                }
                Op::DotEach { x, ys } => {
                    let dim = values[*x].len();
                    let mut dx = vec![0.0; dim];
                    for (j, &y) in ys.iter().enumerate() {
                        let yd = values[y].data();
                        let gj = g[j];
                        for (d, v) in dx.iter_mut().zip(yd) {
                            *d += gj * v;
                        }
                        let dy: Vec<f64> =
                            values[*x].data().iter().map(|xi| gj * xi).collect();
                        Self::accumulate(grads, y, &dy);
                    }
                    Self::accumulate(grads, *x, &dx);
                }
                Op::WeightedSum { weights, xs } => {
                    let w = values[*weights].data().to_vec();
                    let mut dw = vec![0.0; w.len()];
                    for (j, &x) in xs.iter().enumerate() {
                        let xd = values[x].data();
                        dw[j] = g.iter().zip(xd).map(|(gi, xi)| gi * xi).sum();
                        let dx: Vec<f64> = g.iter().map(|gi| w[j] * gi).collect();
                        Self::accumulate(grads, x, &dx);
                    }
                    Self::accumulate(grads, *weights, &dw);
                }
                Op::EmbedRow { table, row } => {
                    let t = &values[*table];
                    let c = t.cols();
                    let mut dt = vec![0.0; t.len()];
                    dt[row * c..(row + 1) * c].copy_from_slice(&g);
                    Self::accumulate(grads, *table, &dt);
                }
                Op::Dropout { x, mask } => {
                    let dx: Vec<f64> = g.iter().zip(mask).map(|(gi, mi)| gi * mi).collect();
                    Self::accumulate(grads, *x, &dx);
                }
                Op::LogSoftmaxNll { scores, target } => {
                    let sd = values[*scores].data();
                    let p = softmax(sd).expect("log_softmax_nll backward");
                    let g0 = g[0];
                    let mut ds: Vec<f64> = p.iter().map(|pi| g0 * pi).collect();
                    ds[*target] -= g0;
                    Self::accumulate(grads, *scores, &ds);
                }
            }
        }
    }

    /// Gradient of a value, or `None` if nothing flowed to it.
    pub fn grad(&self, id: ValueId) -> Option<&[f64]> {
        self.grads[id].as_deref()
    }

    /// Gradient as a tensor shaped like the value; zeros when off-path.
    pub fn grad_or_zeros(&self, id: ValueId) -> Tensor {
        let shape = self.values[id].shape().to_vec();
        match &self.grads[id] {
            Some(g) => Tensor::new(shape, g.clone()),
            None => Tensor::zeros(shape),
        }
    }
}
