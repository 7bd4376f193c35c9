//! Minimal dense building blocks with hand-written backward passes:
//! row-major tensors, an LSTM, the bidirectional subword encoder and Adam.
//!
//! Everything is `f64` and single-threaded so training is bit-reproducible.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor shape mismatch");
        Tensor { rows, cols, data }
    }

    pub fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-scale..=scale))
            .collect();
        Tensor { rows, cols, data }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.rows, self.cols)
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out += self · x`
    #[inline]
    pub fn matvec_add(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += dot(row, x);
        }
    }

    /// `out += selfᵀ · g`
    #[inline]
    pub fn matvec_t_add(&self, g: &[f64], out: &mut [f64]) {
        debug_assert_eq!(g.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (&gi, row) in g.iter().zip(self.data.chunks_exact(self.cols)) {
            if gi != 0.0 {
                axpy(gi, row, out);
            }
        }
    }

    /// `self += g · xᵀ`
    #[inline]
    pub fn outer_add(&mut self, g: &[f64], x: &[f64]) {
        debug_assert_eq!(g.len(), self.rows);
        debug_assert_eq!(x.len(), self.cols);
        for (&gi, row) in g.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            if gi != 0.0 {
                axpy(gi, x, row);
            }
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        axpy(1.0, &other.data, &mut self.data);
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|x| x - lse).collect()
}

/// Uniform access to a model's parameter tensors, in a fixed order.
pub trait Params: Clone {
    fn tensors(&self) -> Vec<(&'static str, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn zeroed(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        z
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.data.len()).sum()
    }

    fn grad_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|(_, t)| t.sum_sq())
            .sum::<f64>()
            .sqrt()
    }

    fn accumulate(&mut self, other: &Self) {
        for (a, (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    fn scale_all(&mut self, s: f64) {
        self.tensors_mut().into_iter().for_each(|t| t.scale(s));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    /// Gate order along rows: input, forget, cell, output.
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
struct LstmStep {
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    steps: Vec<LstmStep>,
    pub hs: Vec<Vec<f64>>,
}

impl Lstm {
    pub fn new(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (hidden as f64).sqrt();
        let mut bias = Tensor::zeros(1, 4 * hidden);
        bias.data[hidden..2 * hidden]
            .iter_mut()
            .for_each(|b| *b = 1.0);
        Lstm {
            w_ih: Tensor::uniform(4 * hidden, input, scale, rng),
            w_hh: Tensor::uniform(4 * hidden, hidden, scale, rng),
            bias,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.cols
    }

    /// Run over `inputs` in the given order.
    pub fn forward(&self, inputs: &[&[f64]]) -> LstmCache {
        let h = self.hidden();
        let mut steps = Vec::with_capacity(inputs.len());
        let mut hs = Vec::with_capacity(inputs.len());
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        for x in inputs {
            let mut z = self.bias.data.clone();
            self.w_ih.matvec_add(x, &mut z);
            self.w_hh.matvec_add(&h_prev, &mut z);
            for k in 0..h {
                z[k] = sigmoid(z[k]);
                z[h + k] = sigmoid(z[h + k]);
                z[2 * h + k] = z[2 * h + k].tanh();
                z[3 * h + k] = sigmoid(z[3 * h + k]);
            }
            let mut c = vec![0.0; h];
            let mut tanh_c = vec![0.0; h];
            let mut h_new = vec![0.0; h];
            for k in 0..h {
                c[k] = z[h + k] * c_prev[k] + z[k] * z[2 * h + k];
                tanh_c[k] = c[k].tanh();
                h_new[k] = z[3 * h + k] * tanh_c[k];
            }
            c_prev.clone_from(&c);
            h_prev.clone_from(&h_new);
            steps.push(LstmStep {
                gates: z,
                c,
                tanh_c,
            });
            hs.push(h_new);
        }
        LstmCache { steps, hs }
    }

    /// Backpropagate `d_hs` (same order as the forward inputs); accumulates
    /// parameter gradients into `grad` and returns input gradients.
    pub fn backward(
        &self,
        inputs: &[&[f64]],
        cache: &LstmCache,
        d_hs: &[Vec<f64>],
        grad: &mut Lstm,
    ) -> Vec<Vec<f64>> {
        let h = self.hidden();
        let n = inputs.len();
        let mut d_inputs = vec![vec![0.0; self.w_ih.cols]; n];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let zeros = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];
        for t in (0..n).rev() {
            let step = &cache.steps[t];
            let g = &step.gates;
            let c_prev = if t > 0 { &cache.steps[t - 1].c } else { &zeros };
            let h_prev = if t > 0 { &cache.hs[t - 1] } else { &zeros };
            for k in 0..h {
                let dh = d_hs[t][k] + dh_next[k];
                let (i, f, gg, o) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
                let tc = step.tanh_c[k];
                let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
                dz[k] = dc * gg * i * (1.0 - i);
                dz[h + k] = dc * c_prev[k] * f * (1.0 - f);
                dz[2 * h + k] = dc * i * (1.0 - gg * gg);
                dz[3 * h + k] = dh * tc * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            grad.w_ih.outer_add(&dz, inputs[t]);
            grad.w_hh.outer_add(&dz, h_prev);
            axpy(1.0, &dz, &mut grad.bias.data);
            self.w_ih.matvec_t_add(&dz, &mut d_inputs[t]);
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            self.w_hh.matvec_t_add(&dz, &mut dh_next);
        }
        d_inputs
    }
}

/// Subword embedding table followed by one bidirectional LSTM layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub embedding: Tensor,
    pub fwd: Lstm,
    pub bwd: Lstm,
}

pub struct EncoderCache {
    pub inputs: Vec<Vec<f64>>,
    fwd: LstmCache,
    bwd: LstmCache,
    /// Per position: forward state then backward state (2h values).
    pub out: Vec<Vec<f64>>,
}

impl Encoder {
    pub fn new(vocab_size: usize, dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let emb_scale = (3.0 / dim as f64).sqrt();
        Encoder {
            embedding: Tensor::uniform(vocab_size, dim, emb_scale, rng),
            fwd: Lstm::new(dim, hidden, rng),
            bwd: Lstm::new(dim, hidden, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.embedding.cols
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden()
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows
    }

    pub fn embed(&self, ids: &[u32]) -> Vec<Vec<f64>> {
        ids.iter()
            .map(|&id| self.embedding.row(id as usize).to_vec())
            .collect()
    }

    pub fn forward(&self, ids: &[u32]) -> EncoderCache {
        self.forward_inputs(self.embed(ids))
    }

    pub fn forward_inputs(&self, inputs: Vec<Vec<f64>>) -> EncoderCache {
        let fwd_in: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
        let bwd_in: Vec<&[f64]> = inputs.iter().rev().map(Vec::as_slice).collect();
        let fwd = self.fwd.forward(&fwd_in);
        let bwd = self.bwd.forward(&bwd_in);
        let n = inputs.len();
        let out = (0..n)
            .map(|t| {
                let mut v = fwd.hs[t].clone();
                v.extend_from_slice(&bwd.hs[n - 1 - t]);
                v
            })
            .collect();
        EncoderCache {
            inputs,
            fwd,
            bwd,
            out,
        }
    }

    /// Backpropagate output gradients. Returns gradients with respect to the
    /// input vectors; when `ids` is given they are also scattered into the
    /// embedding gradient.
    pub fn backward(
        &self,
        cache: &EncoderCache,
        d_out: &[Vec<f64>],
        grad: &mut Encoder,
        ids: Option<&[u32]>,
    ) -> Vec<Vec<f64>> {
        let h = self.hidden();
        let n = cache.inputs.len();
        let d_fwd: Vec<Vec<f64>> = d_out.iter().map(|d| d[..h].to_vec()).collect();
        let d_bwd: Vec<Vec<f64>> = d_out.iter().rev().map(|d| d[h..].to_vec()).collect();
        let fwd_in: Vec<&[f64]> = cache.inputs.iter().map(Vec::as_slice).collect();
        let bwd_in: Vec<&[f64]> = cache.inputs.iter().rev().map(Vec::as_slice).collect();
        let mut d_in = self
            .fwd
            .backward(&fwd_in, &cache.fwd, &d_fwd, &mut grad.fwd);
        let d_in_b = self
            .bwd
            .backward(&bwd_in, &cache.bwd, &d_bwd, &mut grad.bwd);
        for t in 0..n {
            axpy(1.0, &d_in_b[n - 1 - t], &mut d_in[t]);
        }
        if let Some(ids) = ids {
            for (&id, d) in ids.iter().zip(&d_in) {
                axpy(1.0, d, grad.embedding.row_mut(id as usize));
            }
        }
        d_in
    }
}

impl Params for Encoder {
    fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("embedding", &self.embedding),
            ("fwd.w_ih", &self.fwd.w_ih),
            ("fwd.w_hh", &self.fwd.w_hh),
            ("fwd.bias", &self.fwd.bias),
            ("bwd.w_ih", &self.bwd.w_ih),
            ("bwd.w_hh", &self.bwd.w_hh),
            ("bwd.bias", &self.bwd.bias),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.embedding,
            &mut self.fwd.w_ih,
            &mut self.fwd.w_hh,
            &mut self.fwd.bias,
            &mut self.bwd.w_ih,
            &mut self.bwd.w_hh,
            &mut self.bwd.bias,
        ]
    }
}

/// Adaptive moment estimation with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step<P: Params>(&mut self, params: &mut P, grads: &P) {
        let grads = grads.tensors();
        let mut params = params.tensors_mut();
        if self.m.is_empty() {
            self.m = grads.iter().map(|(_, g)| g.zeros_like()).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let step_size = self.lr / bc1;
        for (k, p) in params.iter_mut().enumerate() {
            let g = &grads[k].1.data;
            let m = &mut self.m[k].data;
            let v = &mut self.v[k].data;
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p.data[i] -= step_size * m[i] / ((v[i] / bc2).sqrt() + self.eps);
            }
        }
    }
}

/// Rescale gradients so their global norm does not exceed `max_norm`.
pub fn clip_grad_norm<P: Params>(grads: &mut P, max_norm: f64) {
    let norm = grads.grad_norm();
    if norm > max_norm && norm.is_finite() {
        grads.scale_all(max_norm / norm);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn loss(enc: &Encoder, inputs: &[Vec<f64>], w: &[Vec<f64>]) -> f64 {
        let cache = enc.forward_inputs(inputs.to_vec());
        cache.out.iter().zip(w).map(|(o, w)| dot(o, w)).sum()
    }

    #[test]
    fn encoder_input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = Encoder::new(6, 3, 2, &mut rng);
        let inputs: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let w: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let cache = enc.forward_inputs(inputs.clone());
        let mut grad = enc.zeroed();
        let d_in = enc.backward(&cache, &w, &mut grad, None);
        let eps = 1e-5;
        for t in 0..4 {
            for k in 0..3 {
                let mut plus = inputs.clone();
                plus[t][k] += eps;
                let mut minus = inputs.clone();
                minus[t][k] -= eps;
                let fd = (loss(&enc, &plus, &w) - loss(&enc, &minus, &w)) / (2.0 * eps);
                assert!((fd - d_in[t][k]).abs() < 1e-8, "{fd} vs {}", d_in[t][k]);
            }
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        #[derive(Clone)]
        struct P(Tensor);
        impl Params for P {
            fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
                vec![("p", &self.0)]
            }
            fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
                vec![&mut self.0]
            }
        }
        let mut p = P(Tensor::from_vec(1, 2, vec![1.0, -1.0]));
        let g = P(Tensor::from_vec(1, 2, vec![0.5, -3.0]));
        let mut adam = Adam::new(0.1);
        adam.step(&mut p, &g);
        assert!((p.0.data[0] - 0.9).abs() < 1e-6);
        assert!((p.0.data[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
    }
}
