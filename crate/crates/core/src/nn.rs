//! Dense multilayer perceptrons with hand-written backpropagation and Adam.
//!
//! Hidden layers use a rectifier, the output layer is linear. Weights are
//! stored row-major as `n_out x n_in`. Batched passes take inputs as one
//! contiguous `batch x n_in` slice.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weight: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations recorded by a batched forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    pub batch: usize,
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("tape has an input")
    }

    pub fn input(&self) -> &[f64] {
        &self.acts[0]
    }
}

/// Partial derivatives, shaped like the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Dense::zeros(l.n_in, l.n_out))
                .collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|x| *x *= k);
            l.bias.iter_mut().for_each(|x| *x *= k);
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.iter_mut().zip(&b.weight).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|x| x.is_finite()))
    }
}

fn flatten(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(&l.weight);
        out.extend_from_slice(&l.bias);
    }
    out
}

/// Strided matrix view: element `(i, j)` lives at `data[i * rs + j * cs]`.
#[derive(Clone, Copy)]
struct View<'a> {
    data: &'a [f64],
    rs: usize,
    cs: usize,
}

/// `c (m x n, row-major) = beta * c + a (m x k) * b (k x n)`.
fn gemm(m: usize, k: usize, n: usize, a: View<'_>, b: View<'_>, beta: f64, c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n, "gemm output too small");
    if k == 0 {
        c[..m * n].iter_mut().for_each(|x| *x *= beta);
        return;
    }
    assert!(a.data.len() > (m - 1) * a.rs + (k - 1) * a.cs, "gemm lhs out of bounds");
    assert!(b.data.len() > (k - 1) * b.rs + (n - 1) * b.cs, "gemm rhs out of bounds");
    // SAFETY: the assertions above keep every strided access in bounds and
    // `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Mlp {
    /// Network with every parameter zero.
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        Self {
            layers: sizes
                .windows(2)
                .map(|w| Dense::zeros(w[0], w[1]))
                .collect(),
        }
    }

    /// Fan-in uniform initialization `U(-1/sqrt(n_in), 1/sqrt(n_in))`, with
    /// the last layer additionally multiplied by `output_scale`.
    pub fn new(sizes: &[usize], output_scale: f64, rng: &mut Rng) -> Self {
        let mut net = Self::zeros(sizes);
        let last = net.layers.len() - 1;
        for (i, layer) in net.layers.iter_mut().enumerate() {
            let bound = 1.0 / (layer.n_in as f64).sqrt();
            let scale = if i == last { output_scale } else { 1.0 };
            for w in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                *w = scale * rng.random_range(-bound..bound);
            }
        }
        net
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].n_in];
        s.extend(self.layers.iter().map(|l| l.n_out));
        s
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameters flattened layer by layer, weights (row-major) then biases.
    pub fn params_flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Shape {
                network: "mlp".into(),
                message: format!("expected {} parameters, got {}", self.n_params(), flat.len()),
            });
        }
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&flat[k..k + nw]);
            k += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[k..k + nb]);
            k += nb;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|x| x.is_finite()))
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(input, 1)?.acts.pop().unwrap_or_default())
    }

    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<Tape> {
        if inputs.len() != batch * self.n_inputs() {
            return Err(Error::Contract(format!(
                "forward: expected {} inputs ({} x {}), got {}",
                batch * self.n_inputs(),
                batch,
                self.n_inputs(),
                inputs.len()
            )));
        }
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(inputs.to_vec());
        for (li, layer) in self.layers.iter().enumerate() {
            let (n_in, n_out) = (layer.n_in, layer.n_out);
            let mut y = vec![0.0; batch * n_out];
            for row in y.chunks_exact_mut(n_out) {
                row.copy_from_slice(&layer.bias);
            }
            // y = x W^T + b
            gemm(
                batch,
                n_in,
                n_out,
                View { data: &acts[li], rs: n_in, cs: 1 },
                View { data: &layer.weight, rs: 1, cs: n_in },
                1.0,
                &mut y,
            );
            // Checked before the rectifier, which would map NaN to zero.
            if !y.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("output of layer {li}")));
            }
            if li < last {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(y);
        }
        Ok(Tape { batch, acts })
    }

    /// Gradients of `sum_b output_b . upstream_b` for a single input.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<Gradients> {
        let tape = self.forward_batch(input, 1)?;
        Ok(self.backward_batch(&tape, upstream)?.0)
    }

    /// Parameter gradients and input gradients of `sum_b output_b . upstream_b`.
    pub fn backward_batch(&self, tape: &Tape, upstream: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        let mut grads = Gradients::zeros_like(self);
        let dx = self.backprop(tape, upstream, Some(&mut grads))?;
        Ok((grads, dx))
    }

    /// Input gradients only; skips the parameter accumulation.
    pub fn input_gradient(&self, tape: &Tape, upstream: &[f64]) -> Result<Vec<f64>> {
        self.backprop(tape, upstream, None)
    }

    fn backprop(&self, tape: &Tape, upstream: &[f64], mut grads: Option<&mut Gradients>) -> Result<Vec<f64>> {
        let batch = tape.batch;
        if upstream.len() != batch * self.n_outputs() {
            return Err(Error::Contract(format!(
                "backward: expected {} upstream values, got {}",
                batch * self.n_outputs(),
                upstream.len()
            )));
        }
        let last = self.layers.len() - 1;
        let mut g = upstream.to_vec();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            if li < last {
                // Rectifier derivative from the recorded post-activation.
                for (gi, &a) in g.iter_mut().zip(&tape.acts[li + 1]) {
                    if a <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            let (n_in, n_out) = (layer.n_in, layer.n_out);
            if let Some(gr) = grads.as_deref_mut() {
                let gl = &mut gr.layers[li];
                // dW += g^T x
                gemm(
                    n_out,
                    batch,
                    n_in,
                    View { data: &g, rs: 1, cs: n_out },
                    View { data: &tape.acts[li], rs: n_in, cs: 1 },
                    1.0,
                    &mut gl.weight,
                );
                for row in g.chunks_exact(n_out) {
                    gl.bias.iter_mut().zip(row).for_each(|(b, x)| *b += x);
                }
                if !gl.weight.iter().chain(&gl.bias).all(|v| v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of layer {li}")));
                }
            }
            let mut dx = vec![0.0; batch * n_in];
            // dx = g W
            gemm(
                batch,
                n_out,
                n_in,
                View { data: &g, rs: n_out, cs: 1 },
                View { data: &layer.weight, rs: n_in, cs: 1 },
                0.0,
                &mut dx,
            );
            if !dx.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of layer {li}")));
            }
            g = dx;
        }
        Ok(g)
    }

    /// `self <- tau * online + (1 - tau) * self`, parameter-wise.
    pub fn soft_update_from(&mut self, online: &Mlp, tau: f64) {
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            for (a, &b) in t.weight.iter_mut().zip(&o.weight) {
                *a = tau * b + (1.0 - tau) * *a;
            }
            for (a, &b) in t.bias.iter_mut().zip(&o.bias) {
                *a = tau * b + (1.0 - tau) * *a;
            }
        }
    }
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::Contract(format!(
            "mse: {} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let r = p - t;
            loss += r * r;
            2.0 * r / n
        })
        .collect();
    Ok((loss / n, grad))
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step_count: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn for_net(net: &Mlp, learning_rate: f64) -> Self {
        Self::new(net.n_params(), learning_rate)
    }

    /// One bias-corrected update of `params` in place. Rejects non-finite
    /// gradients without touching parameters or moments.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "adam: state for {} parameters, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if !grads.iter().all(|g| g.is_finite()) {
            return Err(Error::NonFinite("adam gradient".into()));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }

    /// Applies [`AdamState::step`] to a network's parameters.
    pub fn step_net(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("adam gradient".into()));
        }
        let mut k = 0;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (l, gl) in net.layers.iter_mut().zip(&grads.layers) {
            for (p, &g) in l
                .weight
                .iter_mut()
                .zip(&gl.weight)
                .chain(l.bias.iter_mut().zip(&gl.bias))
            {
                let m = &mut self.m[k];
                let v = &mut self.v[k];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= self.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
                k += 1;
            }
        }
        debug_assert_eq!(k, self.m.len());
        Ok(())
    }
}
