//! Dense feed-forward network (ReLU hidden layers, linear head) with
//! batched backpropagation, Adam and plain SGD.

use alloc::vec::Vec;

use rand::Rng;

/// Fully connected layer; `weights` is row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: alloc::vec![0.0; inputs * outputs], bias: alloc::vec![0.0; outputs] }
    }

    /// Uniform `±1/√fan_in` for weights and bias.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / libm::sqrt(inputs as f64);
        let mut sample = || rng.random_range(-bound..bound);
        let weights = (0..inputs * outputs).map(|_| sample()).collect();
        let bias = (0..outputs).map(|_| sample()).collect();
        Self { inputs, outputs, weights, bias }
    }

    fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }

    fn forward_into(&self, x: &[f64], batch: usize, out: &mut Vec<f64>, relu: bool) {
        out.clear();
        out.reserve(batch * self.outputs);
        for b in 0..batch {
            let xb = &x[b * self.inputs..(b + 1) * self.inputs];
            for o in 0..self.outputs {
                let z = self.bias[o] + dot(self.row(o), xb);
                out.push(if relu && z < 0.0 { 0.0 } else { z });
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Gradient buffers shaped like an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self { layers: net.layers.iter().map(|l| Dense::zeros(l.inputs, l.outputs)).collect() }
    }

    pub fn clear(&mut self) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for l in &self.layers {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(&l.bias).all(|x| x.is_finite()))
    }
}

/// Activations kept from a batched forward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    batch: usize,
    /// `activations[k]` is the input to layer `k`; the last entry is the output.
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `dims = [input, hidden…, output]`.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        Self { layers: dims.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect() }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Self {
        assert!(!layers.is_empty());
        for w in layers.windows(2) {
            assert_eq!(w[0].outputs, w[1].inputs, "layer dims must chain");
        }
        Self { layers }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = alloc::vec![self.layers[0].inputs];
        d.extend(self.layers.iter().map(|l| l.outputs));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Multiply-adds plus bias adds for one forward pass.
    pub fn inference_flops(&self) -> u64 {
        self.layers.iter().map(|l| (2 * l.inputs * l.outputs + l.outputs) as u64).sum()
    }

    /// Parameters in layer order: weights (row-major) then bias.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn set_params_flat(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count());
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[k..k + nw]);
            k += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[k..k + nb]);
            k += nb;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(&l.bias).all(|x| x.is_finite()))
    }

    /// Euclidean distance between two same-shaped parameter vectors.
    pub fn param_distance(&self, other: &Mlp) -> f64 {
        let d: f64 = self
            .params_flat()
            .iter()
            .zip(other.params_flat())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        libm::sqrt(d)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_batch(x, 1)
    }

    pub fn forward_batch(&self, x: &[f64], batch: usize) -> Vec<f64> {
        assert_eq!(x.len(), batch * self.input_dim());
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.forward_into(&cur, batch, &mut next, k != last);
            core::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    pub fn forward_cached(&self, x: &[f64], batch: usize) -> ForwardCache {
        assert_eq!(x.len(), batch * self.input_dim());
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::new();
            layer.forward_into(&activations[k], batch, &mut out, k != last);
            activations.push(out);
        }
        ForwardCache { batch, activations }
    }

    /// Accumulate `∂L/∂θ` into `grads` given `∂L/∂output` for a cached pass.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &[f64], grads: &mut Gradients) {
        let batch = cache.batch;
        let mut delta = grad_output.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &cache.activations[k];
            let g = &mut grads.layers[k];
            for b in 0..batch {
                let xb = &input[b * layer.inputs..(b + 1) * layer.inputs];
                for o in 0..layer.outputs {
                    let d = delta[b * layer.outputs + o];
                    if d != 0.0 {
                        axpy(&mut g.weights[o * layer.inputs..(o + 1) * layer.inputs], d, xb);
                        g.bias[o] += d;
                    }
                }
            }
            if k == 0 {
                break;
            }
            let mut prev = alloc::vec![0.0; batch * layer.inputs];
            for b in 0..batch {
                let pb = &mut prev[b * layer.inputs..(b + 1) * layer.inputs];
                for o in 0..layer.outputs {
                    let d = delta[b * layer.outputs + o];
                    if d != 0.0 {
                        axpy(pb, d, layer.row(o));
                    }
                }
                // ReLU derivative of the layer below.
                let act = &input[b * layer.inputs..(b + 1) * layer.inputs];
                for (p, &a) in pb.iter_mut().zip(act) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev;
        }
    }
}

/// Huber loss with threshold `delta`.
pub fn huber(x: f64, delta: f64) -> f64 {
    let a = x.abs();
    if a <= delta {
        0.5 * x * x
    } else {
        delta * (a - 0.5 * delta)
    }
}

pub fn huber_grad(x: f64, delta: f64) -> f64 {
    x.clamp(-delta, delta)
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        let n = net.param_count();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: alloc::vec![0.0; n], v: alloc::vec![0.0; n] }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) {
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - libm::pow(self.beta1, t);
        let c2 = 1.0 - libm::pow(self.beta2, t);
        let mut k = 0;
        for (layer, g) in net.layers.iter_mut().zip(&grads.layers) {
            for (p, &gi) in layer.weights.iter_mut().chain(layer.bias.iter_mut()).zip(g.weights.iter().chain(&g.bias)) {
                let m = &mut self.m[k];
                let v = &mut self.v[k];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gi;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gi * gi;
                *p -= self.lr * (*m / c1) / (libm::sqrt(*v / c2) + self.eps);
                k += 1;
            }
        }
    }
}

pub fn sgd_step(net: &mut Mlp, grads: &Gradients, lr: f64) {
    for (layer, g) in net.layers.iter_mut().zip(&grads.layers) {
        for (p, &gi) in layer.weights.iter_mut().chain(layer.bias.iter_mut()).zip(g.weights.iter().chain(&g.bias)) {
            *p -= lr * gi;
        }
    }
}

/// Index of the largest value among `allowed`; ties to the lowest index.
pub fn masked_argmax(values: &[f64], allowed: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (&v, &ok)) in values.iter().zip(allowed).enumerate() {
        if ok && best.map_or(true, |(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loss(net: &Mlp, x: &[f64], batch: usize, target: &[f64]) -> f64 {
        net.forward_batch(x, batch).iter().zip(target).map(|(o, t)| huber(o - t, 1.0)).sum::<f64>() / batch as f64
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[5, 7, 6, 3], &mut rng);
        let batch = 4;
        let x: Vec<f64> = (0..batch * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target: Vec<f64> = (0..batch * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let cache = net.forward_cached(&x, batch);
        let grad_out: Vec<f64> =
            cache.output().iter().zip(&target).map(|(o, t)| huber_grad(o - t, 1.0) / batch as f64).collect();
        let mut grads = Gradients::zeros_like(&net);
        net.backward(&cache, &grad_out, &mut grads);
        let analytic = grads.flat();
        let base = net.params_flat();
        let h = 1e-6;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            let mut plus = net.clone();
            plus.set_params_flat(&p);
            p[i] -= 2.0 * h;
            let mut minus = net.clone();
            minus.set_params_flat(&p);
            let fd = (loss(&plus, &x, batch, &target) - loss(&minus, &x, batch, &target)) / (2.0 * h);
            let scale = fd.abs().max(analytic[i].abs()).max(1e-6);
            assert!((fd - analytic[i]).abs() / scale < 1e-4, "param {i}: fd {fd} vs {}", analytic[i]);
        }
    }

    #[test]
    fn flat_params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(&[3, 4, 2], &mut rng);
        let mut other = Mlp::new(&[3, 4, 2], &mut rng);
        assert_ne!(net, other);
        other.set_params_flat(&net.params_flat());
        assert_eq!(net, other);
        assert_eq!(net.param_count(), 3 * 4 + 4 + 4 * 2 + 2);
        assert_eq!(net.dims(), alloc::vec![3, 4, 2]);
    }

    #[test]
    fn adam_reduces_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Mlp::new(&[2, 16, 1], &mut rng);
        let x: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target: Vec<f64> = x.chunks(2).map(|c| c[0] * 0.5 - c[1]).collect();
        let mut adam = Adam::new(&net, 1e-2);
        let before = loss(&net, &x, 32, &target);
        for _ in 0..300 {
            let cache = net.forward_cached(&x, 32);
            let g: Vec<f64> = cache.output().iter().zip(&target).map(|(o, t)| huber_grad(o - t, 1.0) / 32.0).collect();
            let mut grads = Gradients::zeros_like(&net);
            net.backward(&cache, &g, &mut grads);
            adam.step(&mut net, &grads);
        }
        assert!(loss(&net, &x, 32, &target) < 0.1 * before);
    }

    #[test]
    fn masked_argmax_respects_mask() {
        assert_eq!(masked_argmax(&[1.0, 5.0, 3.0], &[true, false, true]), Some(2));
        assert_eq!(masked_argmax(&[1.0, 1.0], &[true, true]), Some(0));
        assert_eq!(masked_argmax(&[1.0], &[false]), None);
    }

    #[test]
    fn huber_pieces() {
        assert_eq!(huber(0.5, 1.0), 0.125);
        assert_eq!(huber(-3.0, 1.0), 2.5);
        assert_eq!(huber_grad(-3.0, 1.0), -1.0);
    }
}
